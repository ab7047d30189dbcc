//! Quick end-to-end sanity run: synthesize the desk dataset, train both
//! architectures, print accuracies and timings.

use dflab_core::{ArchitectureId, LabelClass};
use dflab_data::{build_dataset, FakeSource, Split, SyntheticFakeConfig};
use dflab_train::{train_detector, RegularizationConfig, TrainConfig};
use rayon::prelude::*;
use std::time::Instant;

fn main() {
    let tmp = std::env::temp_dir().join("dflab_desk_check");
    let _ = std::fs::remove_dir_all(&tmp);
    let n = 600usize;
    let t0 = Instant::now();
    let reals = tmp.join("real");
    dflab_data::materialize_portraits(&reals, n, 64, 64, 42).unwrap();
    let manifest = build_dataset(
        &reals,
        FakeSource::Synthetic {
            config: &SyntheticFakeConfig::default(),
            count: n,
            out_dir: &tmp.join("fake"),
        },
        0.75,
        42,
    )
    .unwrap();
    println!("dataset: {:?} ({} records)", t0.elapsed(), manifest.records.len());

    for arch in [ArchitectureId::ConvNetA, ArchitectureId::ConvNetB] {
        let t1 = Instant::now();
        let cfg = TrainConfig {
            seed: 7,
            ..Default::default()
        };
        let out = train_detector(
            arch.clone(),
            [3, 64, 64],
            &manifest,
            &cfg,
            &RegularizationConfig::off([3, 64, 64]),
            None,
        )
        .unwrap();
        let train_time = t1.elapsed();
        let model = &out.model;

        let eval = |split: Split| -> (f64, usize) {
            let recs: Vec<_> = manifest.split(split).collect();
            let correct: usize = recs
                .par_iter()
                .map(|r| {
                    let img = dflab_data::load_record_image(r).unwrap();
                    (model.classify(&img, 0.5).unwrap() == r.label) as usize
                })
                .sum();
            (correct as f64 / recs.len() as f64, recs.len())
        };
        let (train_acc, _) = eval(Split::Train);
        let (test_acc, n_test) = eval(Split::Test);
        println!(
            "{}: train {:.4}s   curve {:?}",
            arch.name(),
            train_time.as_secs_f64(),
            out.curve
                .iter()
                .map(|s| (s.mean_loss * 1000.0).round() / 1000.0)
                .collect::<Vec<_>>()
        );
        println!(
            "    train_acc {:.3}  test_acc {:.3} (n={})",
            train_acc, test_acc, n_test
        );
    }
    println!("total {:?}", t0.elapsed());
}
