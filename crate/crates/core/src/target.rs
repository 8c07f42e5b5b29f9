use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};

/// Class the attack wants the detector to report.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetClass {
    pub id: usize,
    pub name: String,
    /// Number of appearances in the reference dataset; drives the
    /// class imbalance of the synthetic detector corpus.
    pub dataset_frequency: u64,
}

/// The four driving-scene classes with their reference dataset counts.
pub fn toy_classes() -> Vec<TargetClass> {
    [
        ("person", 66_808),
        ("car", 12_786),
        ("traffic light", 4_330),
        ("stop sign", 1_803),
    ]
    .into_iter()
    .enumerate()
    .map(|(id, (name, dataset_frequency))| TargetClass {
        id,
        name: name.to_string(),
        dataset_frequency,
    })
    .collect()
}

/// Looks a class up by name (case-insensitive, `_` and `-` match spaces).
pub fn class_by_name(classes: &[TargetClass], name: &str) -> Result<TargetClass> {
    let norm = |s: &str| s.to_lowercase().replace(['_', '-'], " ");
    let wanted = norm(name);
    classes
        .iter()
        .find(|c| norm(&c.name) == wanted)
        .cloned()
        .ok_or_else(|| Error::Input(format!("unknown target class {name:?}")))
}

/// Attack ground truth: the box the patch occupies, objectness 1 and the
/// target label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub bbox: BBox,
    pub target_class: usize,
}

impl GroundTruth {
    /// Objectness the detector should report for the patch.
    pub const OBJECTNESS_TARGET: f64 = 1.0;

    pub fn new(bbox: BBox, target_class: usize, num_classes: usize) -> Result<Self> {
        if target_class >= num_classes {
            return Err(Error::Contract(format!(
                "class {target_class} outside detector class list of {num_classes}"
            )));
        }
        Ok(Self { bbox, target_class })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_class_names_unique_and_counts_positive() {
        let classes = toy_classes();
        let mut names: Vec<_> = classes.iter().map(|c| &c.name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 4);
        assert!(classes.iter().all(|c| c.dataset_frequency > 0));
    }

    #[test]
    fn lookup_normalizes_separators() {
        let classes = toy_classes();
        assert_eq!(class_by_name(&classes, "stop_sign").unwrap().id, 3);
        assert!(class_by_name(&classes, "zebra").is_err());
    }

    #[test]
    fn ground_truth_checks_class_range() {
        assert!(GroundTruth::new(BBox::new(0.5, 0.5, 0.1, 0.1), 4, 4).is_err());
    }
}
