//! Dataset assembly: directory ingestion, synthetic fake materialization,
//! stratified train/test splitting, and blur augmentation of the train split.

use crate::blur::gaussian_blur;
use crate::error::{DataError, Result};
use crate::manifest::{DatasetManifest, ManifestRecord, Split};
use crate::synth::{generate_portrait, generate_synthetic_fake, SyntheticFakeConfig};
use dflab_core::{seeds, ImageTensor, LabelClass};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};

pub enum FakeSource<'a> {
    /// Pre-existing fake images under `<dir>/*.png`.
    Directory(&'a Path),
    /// Materialize `count` warp-blend fakes from pairs of real images into
    /// `out_dir`.
    Synthetic {
        config: &'a SyntheticFakeConfig,
        count: usize,
        out_dir: &'a Path,
    },
}

#[derive(Clone, Debug)]
pub struct AugmentationConfig {
    pub blur_fraction: f64,
    pub sigma_range: [f64; 2],
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            blur_fraction: 0.4,
            sigma_range: [3.0, 5.0],
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.blur_fraction) {
            return Err(DataError::InvalidParameter(format!(
                "blur_fraction {} outside [0,1]",
                self.blur_fraction
            )));
        }
        let [lo, hi] = self.sigma_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(DataError::InvalidParameter(format!(
                "sigma_range [{lo}, {hi}] must be positive and non-degenerate"
            )));
        }
        Ok(())
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| DataError::Ingestion {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })? {
        let p = entry?.path();
        if p.extension().map(|e| e == "png").unwrap_or(false) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn validate_decodable(paths: &[PathBuf]) -> Result<()> {
    let bad = paths
        .par_iter()
        .filter_map(|p| ImageTensor::load_png(p).err().map(|e| (p.clone(), e)))
        .find_any(|_| true);
    match bad {
        Some((path, e)) => Err(DataError::Ingestion {
            path,
            reason: e.to_string(),
        }),
        None => Ok(()),
    }
}

/// Stratified split: per class, `round(ratio * n)` records go to TRAIN after
/// a seeded shuffle.
fn split_class(
    paths: Vec<PathBuf>,
    label: LabelClass,
    ratio: f64,
    seed: u64,
) -> Vec<ManifestRecord> {
    let mut paths = paths;
    let mut rng = seeds::rng(seed, "split", label.index() as u64);
    paths.shuffle(&mut rng);
    let n_train = (ratio * paths.len() as f64).round() as usize;
    paths
        .into_iter()
        .enumerate()
        .map(|(i, path)| ManifestRecord {
            path,
            label,
            split: if i < n_train { Split::Train } else { Split::Test },
            augmented: false,
            sigma: None,
        })
        .collect()
}

pub fn build_dataset(
    real_source: &Path,
    fake_source: FakeSource,
    split_ratio: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if !(split_ratio > 0.0 && split_ratio < 1.0) {
        return Err(DataError::InvalidParameter(format!(
            "split_ratio {split_ratio} outside (0,1)"
        )));
    }
    let reals = list_pngs(real_source)?;
    if reals.len() < 2 {
        return Err(DataError::EmptyDataset(format!(
            "real source {} yields {} images, need at least 2",
            real_source.display(),
            reals.len()
        )));
    }
    validate_decodable(&reals)?;

    let fakes = match fake_source {
        FakeSource::Directory(dir) => {
            let fakes = list_pngs(dir)?;
            if fakes.len() < 2 {
                return Err(DataError::EmptyDataset(format!(
                    "fake source {} yields {} images, need at least 2",
                    dir.display(),
                    fakes.len()
                )));
            }
            validate_decodable(&fakes)?;
            fakes
        }
        FakeSource::Synthetic {
            config,
            count,
            out_dir,
        } => {
            if count < 2 {
                return Err(DataError::EmptyDataset(format!(
                    "synthetic fake count {count}, need at least 2"
                )));
            }
            config.validate()?;
            std::fs::create_dir_all(out_dir)?;
            let pairs: Vec<(usize, usize, u64)> = {
                let mut rng = seeds::rng(seed, "fake-pairs", 0);
                (0..count)
                    .map(|i| {
                        let s = rng.gen_range(0..reals.len());
                        let mut t = rng.gen_range(0..reals.len() - 1);
                        if t >= s {
                            t += 1;
                        }
                        (s, t, seeds::derive_seed(seed, "fake-image", i as u64))
                    })
                    .collect()
            };
            let results: Vec<Result<PathBuf>> = pairs
                .par_iter()
                .enumerate()
                .map(|(i, &(s, t, fseed))| {
                    let src = ImageTensor::load_png(&reals[s]).map_err(|e| {
                        DataError::Ingestion {
                            path: reals[s].clone(),
                            reason: e.to_string(),
                        }
                    })?;
                    let tgt = ImageTensor::load_png(&reals[t]).map_err(|e| {
                        DataError::Ingestion {
                            path: reals[t].clone(),
                            reason: e.to_string(),
                        }
                    })?;
                    let fake = generate_synthetic_fake(&src, &tgt, config, fseed)?;
                    let path = out_dir.join(format!("fake_{i:05}.png"));
                    fake.save_png(&path)?;
                    Ok(path)
                })
                .collect();
            results.into_iter().collect::<Result<Vec<_>>>()?
        }
    };

    let mut records = split_class(reals, LabelClass::Real, split_ratio, seed);
    records.extend(split_class(fakes, LabelClass::Fake, split_ratio, seed));
    DatasetManifest::new(records, seed)
}

/// Materialize a procedural portrait corpus under `dir` as `real_#####.png`.
pub fn materialize_portraits(
    dir: &Path,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let img = generate_portrait(
                height,
                width,
                seeds::derive_seed(seed, "portrait-corpus", i as u64),
            );
            let path = dir.join(format!("real_{i:05}.png"));
            img.save_png(&path)?;
            Ok(path)
        })
        .collect()
}

/// Blur a seeded fraction of the TRAIN records in place (the blurred copy is
/// materialized next to the manifest under `out_dir` and the record path is
/// redirected to it). TEST records are never touched.
pub fn augment_training_set(
    manifest: &DatasetManifest,
    config: &AugmentationConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    config.validate()?;
    let train_idx: Vec<usize> = manifest
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if train_idx.is_empty() {
        return Err(DataError::EmptyDataset("manifest has no TRAIN split".into()));
    }
    let n_blur = (config.blur_fraction * train_idx.len() as f64).round() as usize;
    if n_blur == 0 {
        return Ok(manifest.clone());
    }
    std::fs::create_dir_all(out_dir)?;

    let mut rng = seeds::rng(config.seed, "augment-pick", 0);
    let mut picked = train_idx;
    picked.shuffle(&mut rng);
    picked.truncate(n_blur);

    let mut sigma_rng = seeds::rng(config.seed, "augment-sigma", 0);
    let jobs: Vec<(usize, f64)> = picked
        .iter()
        .map(|&i| {
            (
                i,
                sigma_rng.gen_range(config.sigma_range[0]..config.sigma_range[1]),
            )
        })
        .collect();

    let blurred: Vec<Result<(usize, PathBuf, f64)>> = jobs
        .par_iter()
        .map(|&(i, sigma)| {
            let rec = &manifest.records[i];
            let img = crate::manifest::load_record_image(rec)?;
            let out = gaussian_blur(&img, sigma)?;
            let name = rec
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().to_string())
                .unwrap_or_else(|| format!("rec{i}"));
            let path = out_dir.join(format!("{name}_blur.png"));
            out.save_png(&path)?;
            Ok((i, path, sigma))
        })
        .collect();

    let mut records = manifest.records.clone();
    for item in blurred {
        let (i, path, sigma) = item?;
        records[i].path = path;
        records[i].augmented = true;
        records[i].sigma = Some(sigma);
    }
    DatasetManifest::new(records, manifest.seed)
}
