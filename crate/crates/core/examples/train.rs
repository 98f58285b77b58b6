//! Train the segmenter on a small phantom set with censored labels.

use fnlab::censor::{plan_for, CensorMode};
use fnlab::losses::LossSpec;
use fnlab::phantom::{generate_dataset, PhantomSpec};
use fnlab::segnet::{self, EvalConfig, LayerSpec, ModelConfig, TrainConfig};

fn main() -> fnlab::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 16],
        lesions_per_case: (3, 8),
        radius_mm: (1.5, 4.0),
        seed: 3,
        ..PhantomSpec::default()
    };
    let ds = generate_dataset(&spec, 6, 2, 2)?;
    let plan = plan_for(&ds, CensorMode::Stochastic, 0.5, 3)?;
    let model = ModelConfig {
        context_slices: 3,
        channels_per_slice: spec.channels,
        layers: vec![LayerSpec { filters: 8, kernel: 3 }, LayerSpec { filters: 2, kernel: 1 }],
    };
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };

    for loss in [LossSpec::class_weighted(3.0), LossSpec::lopsided(3.0, 0.1)] {
        let out = segnet::train::<f32>(&ds, &plan, &loss, &model, &cfg, &EvalConfig::default())?;
        println!("{}: first batch loss {:.4}", loss.label(), out.initial_loss);
        for h in &out.history {
            println!("  epoch {} lr {:.4} train {:.4} val {:.4}", h.epoch, h.lr, h.train_loss, h.val_metric);
        }
        println!("  selected epoch {}", out.selected_epoch);
    }
    Ok(())
}
