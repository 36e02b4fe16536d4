//! Adam and the reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::ops::NetError;

/// Adam moment hyperparameters; the conventional defaults. The learning
/// rate is deliberately not here — it is owned by the schedule and passed
/// to every step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second-moment state for one parameter buffer.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

/// One bias-corrected Adam update, in place. `learning_rate` is passed
/// separately from the config so the plateau scheduler can drive it.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &AdamConfig,
    learning_rate: f64,
) -> Result<(), NetError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(NetError::BadParamLength {
            expected: params.len(),
            got: grads.len().min(state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

/// Reduce-on-plateau settings: divide the rate by `factor` after
/// `patience` consecutive epochs without improvement of the monitored
/// (validation) loss, never below `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    pub patience: usize,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { patience: 10, factor: 10.0, min_lr: 1e-7 }
    }
}

/// Stateful scheduler used by the training loop: feed it one validation
/// loss per epoch, read back the rate to use next.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    config: PlateauConfig,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, config: PlateauConfig) -> Self {
        PlateauScheduler { config, lr: initial_lr, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Record one epoch's monitored loss; returns the (possibly reduced)
    /// rate. Improvement means strictly smaller than the best seen; the
    /// best persists across reductions, and a reduction resets the
    /// bad-epoch counter.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.config.patience {
                self.lr = (self.lr / self.config.factor).max(self.config.min_lr);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Pure replay form of the same rule: given the full loss history and the
/// rate currently in force, return the rate for the next epoch. Agrees
/// with feeding [`PlateauScheduler`] the same history (the property tests
/// hold the two against each other).
///
/// The stateless form recovers the counter by replaying: each epoch
/// either improves on the running best (counter resets), or increments
/// the counter; hitting `patience` fires a reduction and resets the
/// counter. Only a reduction fired by the final entry changes `current_lr`,
/// since earlier reductions are already reflected in it.
pub fn lr_schedule(
    history: &[f64],
    current_lr: f64,
    patience: usize,
    factor: f64,
    min_lr: f64,
) -> f64 {
    let mut best = f64::INFINITY;
    let mut bad = 0usize;
    let mut fired_at_end = false;
    for (i, &loss) in history.iter().enumerate() {
        if loss < best {
            best = loss;
            bad = 0;
        } else {
            bad += 1;
            if bad >= patience {
                bad = 0;
                fired_at_end = i + 1 == history.len();
            }
        }
    }
    if fired_at_end {
        (current_lr / factor).max(min_lr)
    } else {
        current_lr
    }
}
