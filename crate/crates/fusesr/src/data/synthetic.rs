//! Procedural paired-scene generator.
//!
//! Each scene is a Voronoi partition of the frame: the thermal image gets one
//! base temperature per region plus additive Gaussian hot blobs, the RGB guide
//! gets one color per region plus fine per-pixel texture. Region boundaries
//! are therefore shared between the modalities, so the guide carries genuine
//! edge information about the thermal target, while blobs (thermal-only) and
//! texture (RGB-only) keep the two images from being trivially related.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{downsample_x8, DataError, DatasetManifest, ImageTensor, SamplePair, SceneEntry, Split, SCALE_FACTOR};

/// In-memory dataset: manifest plus the generated pairs, in manifest order.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub manifest: DatasetManifest,
    pub pairs: Vec<SamplePair>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-scene RNG stream, a pure function of `(seed, scene index)`.
fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)))
}

/// Deterministically generate `count` registered scene pairs.
///
/// Scenes are split 80/20 into train/val in index order. The generation of
/// each scene depends only on `(seed, index)`, so the function is pure and
/// scenes can be produced in parallel.
pub fn generate_synthetic_dataset(
    seed: u64,
    count: usize,
    height: usize,
    width: usize,
) -> Result<SyntheticDataset, DataError> {
    if height % SCALE_FACTOR != 0 || width % SCALE_FACTOR != 0 {
        return Err(DataError::InvalidDimensions(format!(
            "({height}, {width}) not divisible by {SCALE_FACTOR}"
        )));
    }
    if height < SCALE_FACTOR * 2 || width < SCALE_FACTOR * 2 {
        return Err(DataError::InvalidDimensions(format!(
            "({height}, {width}) too small for x{SCALE_FACTOR} pairs"
        )));
    }
    if count == 0 {
        return Err(DataError::InvalidDimensions("count must be >= 1".into()));
    }

    let train_count = (count * 4 + 2) / 5;
    let scenes: Vec<SceneEntry> = (0..count)
        .map(|i| SceneEntry {
            id: format!("scene_{i:04}"),
            split: if i < train_count { Split::Train } else { Split::Val },
        })
        .collect();

    let pairs: Vec<SamplePair> = (0..count)
        .into_par_iter()
        .map(|i| generate_scene(seed, i as u64, &scenes[i].id, height, width))
        .collect::<Result<_, _>>()?;

    Ok(SyntheticDataset {
        manifest: DatasetManifest {
            root: Default::default(),
            seed,
            height,
            width,
            scenes,
        },
        pairs,
    })
}

fn generate_scene(
    seed: u64,
    index: u64,
    scene_id: &str,
    height: usize,
    width: usize,
) -> Result<SamplePair, DataError> {
    let mut rng = scene_rng(seed, index);
    let (h, w) = (height, width);

    // Voronoi sites define the piecewise regions shared by both modalities.
    let n_regions = rng.random_range(3..=6);
    let sites: Vec<(f64, f64)> = (0..n_regions)
        .map(|_| (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64)))
        .collect();

    // Evenly spaced temperatures, randomly assigned, so neighbouring regions
    // always differ by a visible step.
    let mut temps: Vec<f64> = (0..n_regions)
        .map(|j| 0.25 + 0.5 * j as f64 / (n_regions - 1).max(1) as f64)
        .collect();
    shuffle(&mut temps, &mut rng);

    let colors: Vec<[f64; 3]> = (0..n_regions)
        .map(|_| {
            [
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
                rng.random_range(0.1..0.9),
            ]
        })
        .collect();

    // Thermal-only hot blobs.
    let n_blobs = rng.random_range(1..=4);
    let min_side = h.min(w) as f64;
    let blobs: Vec<(f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(min_side / 16.0..min_side / 6.0),
                rng.random_range(0.15..0.4),
            )
        })
        .collect();

    let mut thermal = vec![0.0; h * w];
    let mut rgb = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let region = nearest_site(&sites, y as f64, x as f64);
            let mut t = temps[region];
            for &(cy, cx, sigma, amp) in &blobs {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                t += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            thermal[y * w + x] = t.clamp(0.0, 1.0);
            let base = colors[region];
            for ch in 0..3 {
                // Fine texture on the guide only.
                let noise = rng.random_range(-0.03..0.03);
                rgb[(ch * h + y) * w + x] = (base[ch] + noise).clamp(0.0, 1.0);
            }
        }
    }

    let hr_thermal = ImageTensor::new(1, h, w, thermal)?;
    let hr_rgb = ImageTensor::new(3, h, w, rgb)?;
    let lr_thermal = downsample_x8(&hr_thermal)?;
    SamplePair::new(scene_id.to_string(), hr_rgb, lr_thermal, hr_thermal)
}

fn nearest_site(sites: &[(f64, f64)], y: f64, x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &(sy, sx)) in sites.iter().enumerate() {
        let d = (y - sy).powi(2) + (x - sx).powi(2);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Fisher-Yates on f64 slices; `rand::seq` is avoided to keep the draw count
/// explicit and the stream layout obvious.
fn shuffle(values: &mut [f64], rng: &mut ChaCha8Rng) {
    for i in (1..values.len()).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
}
