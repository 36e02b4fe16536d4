//! Locating cases on disk. The canonical layout is one directory per
//! case (`case_00000/imaging.nii.gz` + `case_00000/segmentation.nii.gz`),
//! but label-only trees may also store flat files named after the case.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

/// One discovered case: the directory name is the case id.
#[derive(Debug, Clone)]
pub struct Case {
    pub id: String,
    pub image: PathBuf,
    pub label: Option<PathBuf>,
}

/// Scan `root` for case directories containing `image_name`, sorted by
/// case id. A missing label file leaves `label` as `None` — whether that
/// is an error is the caller's call.
pub fn case_dirs(root: &Path, image_name: &str, label_name: &str) -> Result<Vec<Case>> {
    let entries = std::fs::read_dir(root)
        .with_context(|| format!("cannot read case directory {}", root.display()))?;
    let mut cases = Vec::new();
    for entry in entries {
        let entry = entry.with_context(|| format!("cannot scan {}", root.display()))?;
        let dir = entry.path();
        if !dir.is_dir() {
            continue;
        }
        let image = dir.join(image_name);
        if !image.is_file() {
            continue;
        }
        let label = dir.join(label_name);
        cases.push(Case {
            id: entry.file_name().to_string_lossy().into_owned(),
            image,
            label: label.is_file().then_some(label),
        });
    }
    cases.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(cases)
}

fn strip_nifti_suffix(name: &str) -> Option<&str> {
    name.strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
}

/// Map case id -> label file under `root`, accepting both flat files
/// (`case_00000.nii[.gz]`) and per-case directories containing
/// `label_name`. Sorted by id via the map ordering.
pub fn label_files(root: &Path, label_name: &str) -> Result<BTreeMap<String, PathBuf>> {
    let entries = std::fs::read_dir(root)
        .with_context(|| format!("cannot read label directory {}", root.display()))?;
    let mut found = BTreeMap::new();
    for entry in entries {
        let entry = entry.with_context(|| format!("cannot scan {}", root.display()))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if path.is_dir() {
            let nested = path.join(label_name);
            if nested.is_file() {
                found.insert(name, nested);
            }
        } else if let Some(id) = strip_nifti_suffix(&name) {
            found.insert(id.to_string(), path);
        }
    }
    Ok(found)
}
