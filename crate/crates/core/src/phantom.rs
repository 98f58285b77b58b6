//! Synthetic multi-channel lesion phantoms with exact ground truth.
//!
//! A case is a smooth random background (one independent field per channel)
//! plus additive Gaussian noise, with non-overlapping axis-aligned ellipsoidal
//! lesions whose voxels carry a per-channel intensity offset.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use log::warn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster_io;
use crate::seeds::{self, tag};
use crate::volume::{
    centroid_mm, linear_index, voxel_count, voxel_volume_mm3, Dims, Spacing, Volume3, Volume4,
    Voxel,
};

/// Empty voxels required between two lesions (Chebyshev distance, exclusive).
pub const LESION_GAP: usize = 2;
const PLACEMENT_ATTEMPTS: usize = 100;
const TEXTURE_WAVES: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub spacing: Spacing,
    pub channels: usize,
    /// Inclusive lesion-count range for training and validation cases.
    pub lesions_per_case: (usize, usize),
    /// Log-uniform range of the base lesion radius in millimetres.
    pub radius_mm: (f64, f64),
    /// Uniform range of the per-channel lesion intensity offset.
    pub lesion_contrast: (f64, f64),
    pub background_texture: f64,
    pub noise_sigma: f64,
    /// Inclusive lesion-count bands used to stratify the test split.
    pub test_bands: Vec<(usize, usize)>,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: [64, 64, 48],
            spacing: [1.0, 1.0, 1.0],
            channels: 4,
            lesions_per_case: (1, 12),
            radius_mm: (1.5, 12.0),
            lesion_contrast: (0.6, 1.4),
            background_texture: 0.4,
            noise_sigma: 0.25,
            test_bands: vec![(1, 3), (4, 10), (11, 20)],
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dims.iter().any(|&d| d == 0) {
            return bad(format!("phantom dims must be positive, got {:?}", self.dims));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad(format!("spacing must be positive, got {:?}", self.spacing));
        }
        if self.channels == 0 {
            return bad("phantom needs at least one channel".into());
        }
        let (lo, hi) = self.radius_mm;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return bad(format!("radius range {:?} must be positive and ordered", self.radius_mm));
        }
        if self.lesions_per_case.0 > self.lesions_per_case.1 {
            return bad(format!("lesions_per_case {:?} is not ordered", self.lesions_per_case));
        }
        if self.lesion_contrast.0 > self.lesion_contrast.1 {
            return bad(format!("lesion_contrast {:?} is not ordered", self.lesion_contrast));
        }
        if self.noise_sigma < 0.0 || self.background_texture < 0.0 {
            return bad("noise and texture amplitudes must be >= 0".into());
        }
        if self.test_bands.iter().any(|b| b.0 > b.1) {
            return bad(format!("test bands {:?} must be ordered ranges", self.test_bands));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub id: u32,
    /// Sorted by linear voxel index.
    pub voxels: Vec<Voxel>,
    pub volume_mm3: f64,
    pub centroid_mm: [f64; 3],
}

impl Lesion {
    pub fn from_voxels(id: u32, mut voxels: Vec<Voxel>, dims: Dims, spacing: Spacing) -> Self {
        voxels.sort_by_key(|v| linear_index(dims, *v));
        voxels.dedup();
        Self {
            id,
            volume_mm3: voxels.len() as f64 * voxel_volume_mm3(spacing),
            centroid_mm: centroid_mm(&voxels, spacing),
            voxels,
        }
    }

    /// Diameter of the sphere with the same volume.
    pub fn equivalent_diameter_mm(&self) -> f64 {
        equivalent_diameter_mm(self.volume_mm3)
    }
}

pub fn equivalent_diameter_mm(volume_mm3: f64) -> f64 {
    2.0 * (3.0 * volume_mm3 / (4.0 * PI)).cbrt()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LesionSet {
    pub lesions: Vec<Lesion>,
}

impl LesionSet {
    pub fn len(&self) -> usize {
        self.lesions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lesions.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Lesion> {
        self.lesions.iter()
    }

    pub fn get(&self, id: u32) -> Option<&Lesion> {
        self.lesions.iter().find(|l| l.id == id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: usize,
    pub seed: u64,
    pub volume: Volume4,
    pub lesions: LesionSet,
}

impl Case {
    pub fn dims(&self) -> Dims {
        self.volume.dims()
    }

    pub fn spacing(&self) -> Spacing {
        self.volume.spacing()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: PhantomSpec,
    pub cases: Vec<Case>,
    pub split: Split,
}

impl Dataset {
    pub fn case(&self, id: usize) -> &Case {
        &self.cases[id]
    }

    pub fn train(&self) -> impl Iterator<Item = &Case> {
        self.split.train.iter().map(|&i| &self.cases[i])
    }

    pub fn validation(&self) -> impl Iterator<Item = &Case> {
        self.split.validation.iter().map(|&i| &self.cases[i])
    }

    pub fn test(&self) -> impl Iterator<Item = &Case> {
        self.split.test.iter().map(|&i| &self.cases[i])
    }
}

/// Generates a case with a lesion count drawn from `spec.lesions_per_case`.
///
/// The output depends only on `(spec, case_seed)`.
pub fn generate_case(spec: &PhantomSpec, case_seed: u64) -> Result<Case> {
    spec.validate()?;
    let mut rng = seeds::stream(spec.seed, &[tag::PHANTOM, case_seed]);
    let (lo, hi) = spec.lesions_per_case;
    let n = rng.gen_range(lo..=hi);
    build_case(spec, case_seed, n, &mut rng)
}

/// Generates a case with exactly `n_lesions` requested lesions (fewer if
/// placement fails).
pub fn generate_case_with_count(spec: &PhantomSpec, case_seed: u64, n_lesions: usize) -> Result<Case> {
    spec.validate()?;
    let mut rng = seeds::stream(spec.seed, &[tag::PHANTOM, case_seed]);
    let _ = rng.gen::<u64>();
    build_case(spec, case_seed, n_lesions, &mut rng)
}

fn build_case(spec: &PhantomSpec, case_seed: u64, n_lesions: usize, rng: &mut ChaCha8Rng) -> Result<Case> {
    let dims = spec.dims;
    let extent = [0, 1, 2].map(|a| (dims[a] - 1) as f64 * spec.spacing[a]);
    if n_lesions > 0 && extent.iter().any(|&e| e < 2.0 * spec.radius_mm.0) {
        return Err(Error::Phantom(format!(
            "volume extent {extent:?} mm cannot hold a lesion of radius {} mm",
            spec.radius_mm.0
        )));
    }

    let mut volume = Volume4::zeros(spec.channels, dims, spec.spacing);
    for c in 0..spec.channels {
        add_texture(volume.channel_mut(c), dims, spec.spacing, spec.background_texture, rng);
    }

    let mut blocked = vec![false; voxel_count(dims)];
    let mut lesions = Vec::with_capacity(n_lesions);
    for _ in 0..n_lesions {
        let placed = (0..PLACEMENT_ATTEMPTS).find_map(|_| try_place(spec, extent, &blocked, rng));
        let Some(voxels) = placed else {
            warn!(
                "case seed {case_seed}: dropped a lesion after {PLACEMENT_ATTEMPTS} placement attempts"
            );
            continue;
        };
        block_around(&mut blocked, dims, &voxels);
        let id = lesions.len() as u32;
        lesions.push(Lesion::from_voxels(id, voxels, dims, spec.spacing));
    }

    for lesion in &lesions {
        for c in 0..spec.channels {
            let offset = rng.gen_range(spec.lesion_contrast.0..=spec.lesion_contrast.1) as f32;
            let ch = volume.channel_mut(c);
            for v in &lesion.voxels {
                ch[linear_index(dims, *v)] += offset;
            }
        }
    }

    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("sigma validated");
        for c in 0..spec.channels {
            for v in volume.channel_mut(c) {
                *v += noise.sample(rng) as f32;
            }
        }
    }

    Ok(Case {
        id: case_seed as usize,
        seed: case_seed,
        volume,
        lesions: LesionSet { lesions },
    })
}

fn add_texture(ch: &mut [f32], dims: Dims, spacing: Spacing, amplitude: f64, rng: &mut ChaCha8Rng) {
    let waves: Vec<([f64; 3], f64)> = (0..TEXTURE_WAVES)
        .map(|_| {
            let u: f64 = rng.gen_range(-1.0..1.0);
            let phi = rng.gen_range(0.0..2.0 * PI);
            let s = (1.0 - u * u).sqrt();
            let wavelength = rng.gen_range(12.0..40.0);
            let k = 2.0 * PI / wavelength;
            ([k * s * phi.cos(), k * s * phi.sin(), k * u], rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    if amplitude == 0.0 {
        return;
    }
    let a = amplitude * (2.0 / TEXTURE_WAVES as f64).sqrt();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64 * spacing[0], y as f64 * spacing[1], z as f64 * spacing[2]];
                let v: f64 = waves
                    .iter()
                    .map(|(k, ph)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).cos())
                    .sum();
                ch[linear_index(dims, [x, y, z])] += (a * v) as f32;
            }
        }
    }
}

fn try_place(spec: &PhantomSpec, extent: [f64; 3], blocked: &[bool], rng: &mut ChaCha8Rng) -> Option<Vec<Voxel>> {
    let (lo, hi) = spec.radius_mm;
    let r = (rng.gen_range(lo.ln()..=hi.ln())).exp();
    let mut semi = [0.0; 3];
    let mut center = [0.0; 3];
    for a in 0..3 {
        semi[a] = (r * rng.gen_range(-0.2f64..=0.2).exp()).clamp(lo, hi);
        let (c0, c1) = (semi[a], extent[a] - semi[a]);
        if c1 < c0 {
            return None;
        }
        center[a] = rng.gen_range(c0..=c1);
    }
    let dims = spec.dims;
    let mut voxels = Vec::new();
    let range = |a: usize| {
        let s = spec.spacing[a];
        let i0 = ((center[a] - semi[a]) / s).floor().max(0.0) as usize;
        let i1 = (((center[a] + semi[a]) / s).ceil() as usize).min(dims[a] - 1);
        i0..=i1
    };
    for z in range(2) {
        for y in range(1) {
            for x in range(0) {
                let p = [x, y, z];
                let q: f64 = (0..3)
                    .map(|a| {
                        let d = (p[a] as f64 * spec.spacing[a] - center[a]) / semi[a];
                        d * d
                    })
                    .sum();
                if q <= 1.0 {
                    if blocked[linear_index(dims, p)] {
                        return None;
                    }
                    voxels.push(p);
                }
            }
        }
    }
    (!voxels.is_empty()).then_some(voxels)
}

fn block_around(blocked: &mut [bool], dims: Dims, voxels: &[Voxel]) {
    let g = LESION_GAP as isize;
    for v in voxels {
        for dz in -g..=g {
            for dy in -g..=g {
                for dx in -g..=g {
                    let p = [v[0] as isize + dx, v[1] as isize + dy, v[2] as isize + dz];
                    if (0..3).all(|a| p[a] >= 0 && (p[a] as usize) < dims[a]) {
                        let q = [p[0] as usize, p[1] as usize, p[2] as usize];
                        blocked[linear_index(dims, q)] = true;
                    }
                }
            }
        }
    }
}

/// Builds a dataset whose case `i` uses case seed `i`.
///
/// Cases `0..n_train` are training, the next `n_val` validation, the rest
/// test. Test case `j` draws its lesion count uniformly from band
/// `j * bands / n_test` of `spec.test_bands`, so each band receives an equal
/// share of the test split (within one case).
pub fn generate_dataset(spec: &PhantomSpec, n_train: usize, n_val: usize, n_test: usize) -> Result<Dataset> {
    spec.validate()?;
    let mut cases = Vec::with_capacity(n_train + n_val + n_test);
    for i in 0..n_train + n_val {
        cases.push(generate_case(spec, i as u64)?);
    }
    for j in 0..n_test {
        let seed = (n_train + n_val + j) as u64;
        if spec.test_bands.is_empty() {
            cases.push(generate_case(spec, seed)?);
            continue;
        }
        let band = spec.test_bands[j * spec.test_bands.len() / n_test];
        let mut rng = seeds::stream(spec.seed, &[tag::PHANTOM, seed, u64::MAX]);
        let n = rng.gen_range(band.0..=band.1);
        cases.push(generate_case_with_count(spec, seed, n)?);
    }
    let split = Split {
        train: (0..n_train).collect(),
        validation: (n_train..n_train + n_val).collect(),
        test: (n_train + n_val..n_train + n_val + n_test).collect(),
    };
    Ok(Dataset {
        spec: spec.clone(),
        cases,
        split,
    })
}

/// Binary mask with 1 on every voxel of every lesion in `lesions`.
pub fn rasterize_mask<'a>(lesions: impl IntoIterator<Item = &'a Lesion>, dims: Dims, spacing: Spacing) -> Volume3<u8> {
    let mut mask = Volume3::filled(dims, spacing, 0u8);
    for lesion in lesions {
        for v in &lesion.voxels {
            mask.set(*v, 1);
        }
    }
    mask
}

#[derive(Serialize, Deserialize)]
struct CaseRecord {
    id: usize,
    seed: u64,
    lesions: LesionSet,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    spec: PhantomSpec,
    split: Split,
    cases: Vec<CaseRecord>,
}

fn case_stem(dir: &Path, id: usize, what: &str) -> std::path::PathBuf {
    dir.join(format!("case_{id:04}_{what}"))
}

/// Writes `dataset.json` plus an image raster and a ground-truth mask raster per case.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for case in &ds.cases {
        raster_io::write_volume(&case_stem(dir, case.id, "image"), &case.volume, case.seed)?;
        let mask = rasterize_mask(case.lesions.iter(), case.dims(), case.spacing());
        raster_io::write_mask(&case_stem(dir, case.id, "mask"), &mask, case.seed)?;
    }
    let manifest = DatasetManifest {
        spec: ds.spec.clone(),
        split: ds.split.clone(),
        cases: ds
            .cases
            .iter()
            .map(|c| CaseRecord {
                id: c.id,
                seed: c.seed,
                lesions: c.lesions.clone(),
            })
            .collect(),
    };
    raster_io::write_json(&dir.join("dataset.json"), &manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = raster_io::read_json(&dir.join("dataset.json"))?;
    let mut cases = Vec::with_capacity(manifest.cases.len());
    for rec in manifest.cases {
        let (volume, _) = raster_io::read_volume(&case_stem(dir, rec.id, "image"))?;
        cases.push(Case {
            id: rec.id,
            seed: rec.seed,
            volume,
            lesions: rec.lesions,
        });
    }
    Ok(Dataset {
        spec: manifest.spec,
        cases,
        split: manifest.split,
    })
}
