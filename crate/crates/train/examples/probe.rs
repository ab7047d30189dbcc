use dflab_core::{ArchitectureId};
use dflab_data::{build_dataset, FakeSource, SyntheticFakeConfig};
use dflab_train::{train_detector, RegularizationConfig, TrainConfig};

fn main() {
    let tmp = std::env::temp_dir().join("dflab_probe");
    let _ = std::fs::remove_dir_all(&tmp);
    let n = 300usize;
    let reals = tmp.join("real");
    dflab_data::materialize_portraits(&reals, n, 64, 64, 42).unwrap();
    let manifest = build_dataset(
        &reals,
        FakeSource::Synthetic { config: &SyntheticFakeConfig::default(), count: n, out_dir: &tmp.join("fake") },
        0.75, 42,
    ).unwrap();
    for lr in [1e-3, 3e-3] {
        let cfg = TrainConfig { seed: 7, epochs: 20, learning_rate: lr, ..Default::default() };
        match train_detector(ArchitectureId::ConvNetA, [3,64,64], &manifest, &cfg, &RegularizationConfig::off([3,64,64]), None) {
            Ok(out) => {
                let accs: Vec<f64> = out.curve.iter().map(|s| (s.train_accuracy*100.0).round()/100.0).collect();
                println!("lr {lr}: acc curve {:?}", accs);
            }
            Err(e) => println!("lr {lr}: {e}"),
        }
    }
}
