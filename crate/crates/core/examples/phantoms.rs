//! Generate a small phantom dataset and write it to disk.
//!
//! cargo run --release --example phantoms -- [out_dir]

use fnlab::detect::{connected_components_3d, Connectivity};
use fnlab::phantom::{generate_dataset, rasterize_mask, write_dataset, PhantomSpec};

fn main() -> fnlab::Result<()> {
    let spec = PhantomSpec {
        dims: [32, 32, 16],
        lesions_per_case: (3, 8),
        radius_mm: (1.5, 4.0),
        test_bands: vec![(2, 4), (5, 8)],
        seed: 42,
        ..PhantomSpec::default()
    };
    let ds = generate_dataset(&spec, 4, 1, 2)?;

    for case in &ds.cases {
        let mask = rasterize_mask(case.lesions.iter(), case.dims(), case.spacing());
        let comps = connected_components_3d(&mask, Connectivity::Corners);
        let diam: Vec<String> = case
            .lesions
            .iter()
            .map(|l| format!("{:.1}", l.equivalent_diameter_mm()))
            .collect();
        println!(
            "case {:>2}: {:>2} lesions, {:>2} components, diameters (mm) [{}]",
            case.id,
            case.lesions.len(),
            comps.len(),
            diam.join(", ")
        );
    }

    if let Some(dir) = std::env::args().nth(1) {
        write_dataset(dir.as_ref(), &ds)?;
        println!("written to {dir}");
    }
    Ok(())
}
