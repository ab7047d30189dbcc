//! Labeled dataset manifests. Serialized as CSV with the fixed header
//! `path,label,split,augmented,sigma`; the seed travels in run metadata, not
//! in the CSV.

use crate::error::{DataError, Result};
use dflab_core::{ImageTensor, LabelClass};
use std::collections::HashSet;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub label: LabelClass,
    pub split: Split,
    pub augmented: bool,
    /// Blur sigma in pixels, present only on augmented records.
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn new(records: Vec<ManifestRecord>, seed: u64) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.path.clone()) {
                return Err(DataError::DuplicatePath(r.path.clone()));
            }
        }
        Ok(DatasetManifest { records, seed })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn subset(&self, split: Split, label: LabelClass) -> Vec<&ManifestRecord> {
        self.records
            .iter()
            .filter(|r| r.split == split && r.label == label)
            .collect()
    }

    pub fn count(&self, split: Split, label: LabelClass) -> usize {
        self.subset(split, label).len()
    }

    /// Check that every referenced file exists.
    pub fn verify_files(&self) -> Result<()> {
        for r in &self.records {
            if !r.path.is_file() {
                return Err(DataError::Ingestion {
                    path: r.path.clone(),
                    reason: "file missing at materialization time".into(),
                });
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| DataError::ManifestFormat(e.to_string()))?;
        w.write_record(["path", "label", "split", "augmented", "sigma"])
            .map_err(|e| DataError::ManifestFormat(e.to_string()))?;
        for r in &self.records {
            w.write_record([
                r.path.to_string_lossy().as_ref(),
                r.label.as_str(),
                r.split.as_str(),
                if r.augmented { "true" } else { "false" },
                &r.sigma.map(|s| format!("{s}")).unwrap_or_default(),
            ])
            .map_err(|e| DataError::ManifestFormat(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// The seed is not part of the CSV; the caller supplies it from run
    /// metadata.
    pub fn read_csv(path: &Path, seed: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_path(path)
            .map_err(|e| DataError::ManifestFormat(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row.map_err(|e| DataError::ManifestFormat(e.to_string()))?;
            if row.len() != 5 {
                return Err(DataError::ManifestFormat(format!(
                    "expected 5 columns, got {}",
                    row.len()
                )));
            }
            let label: LabelClass = row[1]
                .parse()
                .map_err(|_| DataError::ManifestFormat(format!("bad label {:?}", &row[1])))?;
            let split = match &row[2] {
                "train" => Split::Train,
                "test" => Split::Test,
                other => {
                    return Err(DataError::ManifestFormat(format!("bad split {other:?}")))
                }
            };
            let augmented = match &row[3] {
                "true" => true,
                "false" => false,
                other => {
                    return Err(DataError::ManifestFormat(format!(
                        "bad augmented flag {other:?}"
                    )))
                }
            };
            let sigma = if row[4].is_empty() {
                None
            } else {
                Some(row[4].parse::<f64>().map_err(|e| {
                    DataError::ManifestFormat(format!("bad sigma {:?}: {e}", &row[4]))
                })?)
            };
            records.push(ManifestRecord {
                path: PathBuf::from(&row[0]),
                label,
                split,
                augmented,
                sigma,
            });
        }
        DatasetManifest::new(records, seed)
    }
}

/// Load one manifest image, surfacing decode failures as ingestion errors.
pub fn load_record_image(record: &ManifestRecord) -> Result<ImageTensor> {
    ImageTensor::load_png(&record.path).map_err(|e| DataError::Ingestion {
        path: record.path.clone(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(name: &str, label: LabelClass, split: Split) -> ManifestRecord {
        ManifestRecord {
            path: PathBuf::from(name),
            label,
            split,
            augmented: false,
            sigma: None,
        }
    }

    #[test]
    fn duplicate_paths_rejected() {
        let records = vec![
            rec("a.png", LabelClass::Real, Split::Train),
            rec("a.png", LabelClass::Fake, Split::Test),
        ];
        assert!(matches!(
            DatasetManifest::new(records, 0),
            Err(DataError::DuplicatePath(_))
        ));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        let m = DatasetManifest::new(
            vec![
                rec("real/r0.png", LabelClass::Real, Split::Train),
                ManifestRecord {
                    path: PathBuf::from("fake/f0.png"),
                    label: LabelClass::Fake,
                    split: Split::Train,
                    augmented: true,
                    sigma: Some(3.75),
                },
                rec("fake/f1.png", LabelClass::Fake, Split::Test),
            ],
            42,
        )
        .unwrap();
        m.write_csv(&p).unwrap();
        let back = DatasetManifest::read_csv(&p, 42).unwrap();
        assert_eq!(m, back);
    }
}
