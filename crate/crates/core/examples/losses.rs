//! Loss values and gradients for a single voxel across the loss family.

use fnlab::gradcore::{Graph, Tensor};
use fnlab::losses::{self, LossSpec};

fn main() -> fnlab::Result<()> {
    let specs = [
        LossSpec::ce(),
        LossSpec::class_weighted(3.0),
        LossSpec::bootstrap(0.5),
        LossSpec::lopsided(3.0, 0.1),
        LossSpec::lopsided(3.0, 1.0),
    ];
    println!("{:<24} {:>5} {:>4} {:>9} {:>12}", "loss", "p", "y", "value", "d/d logit1");
    for spec in &specs {
        for (p, y) in [(0.2, 1u8), (0.2, 0), (0.9, 0)] {
            // logits giving lesion probability p
            let z = (p / (1.0 - p) as f64).ln();
            let mut g = Graph::<f64>::new();
            let x = g.param(Tensor::new(vec![1, 2, 1, 1], vec![0.0, z])?);
            let probs = g.softmax_channels(x)?;
            let l = losses::loss(&mut g, probs, &[y], spec)?;
            let value = g.value(l).item();
            g.backward(l)?;
            let grad = g.grad(x).expect("param").data()[1];
            println!("{:<24} {p:>5.2} {y:>4} {value:>9.5} {grad:>12.5}", spec.label());
        }
    }
    Ok(())
}
