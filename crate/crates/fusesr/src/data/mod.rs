//! Image data model: tensors, paired samples, degradation, normalization,
//! flip augmentation and the on-disk dataset format.

mod io;
mod synthetic;

pub use io::{load_component, load_manifest, load_pair, save_manifest, save_pair, PairComponent};
pub use synthetic::{generate_synthetic_dataset, SyntheticDataset};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

use crate::kernels;

pub const SCALE_FACTOR: usize = 8;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("value buffer has {got} elements, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scene `{0}` not found in manifest")]
    MissingScene(String),
    #[error("missing file {path}: {source}")]
    MissingFile {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed image {path}: {reason}")]
    MalformedImage { path: PathBuf, reason: String },
    #[error("dimension mismatch for {path}: manifest says {expected}, file is {got}")]
    DimensionMismatch {
        path: PathBuf,
        expected: String,
        got: String,
    },
    #[error("malformed manifest {path}: {reason}")]
    MalformedManifest { path: PathBuf, reason: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Dense rank-3 array in row-major `(channel, row, column)` order.
///
/// The universal carrier for images and feature maps. Values are finite by
/// construction; constructors reject NaN and infinities.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, DataError> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(DataError::InvalidDimensions(format!(
                "({channels}, {height}, {width}) has a zero extent"
            )));
        }
        if data.len() != channels * height * width {
            return Err(DataError::LengthMismatch {
                expected: channels * height * width,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite(i));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    pub fn constant(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Mean over every element.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn flipped(&self, flip_h: bool, flip_v: bool) -> Self {
        let (c, h, w) = self.dims();
        let mut out = vec![0.0; self.data.len()];
        for ch in 0..c {
            for y in 0..h {
                let sy = if flip_v { h - 1 - y } else { y };
                for x in 0..w {
                    let sx = if flip_h { w - 1 - x } else { x };
                    out[(ch * h + y) * w + x] = self.data[(ch * h + sy) * w + sx];
                }
            }
        }
        Self { channels: c, height: h, width: w, data: out }
    }
}

/// One training triplet: HR RGB guide, LR thermal input, HR thermal target.
///
/// Invariants: the HR images share `(h, w)` with `h` and `w` divisible by 8,
/// and the LR thermal is exactly `(h/8, w/8)`.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub scene_id: String,
    pub hr_rgb: ImageTensor,
    pub lr_thermal: ImageTensor,
    pub hr_thermal: ImageTensor,
}

impl SamplePair {
    pub fn new(
        scene_id: String,
        hr_rgb: ImageTensor,
        lr_thermal: ImageTensor,
        hr_thermal: ImageTensor,
    ) -> Result<Self, DataError> {
        let (_, h, w) = hr_rgb.dims();
        if h % SCALE_FACTOR != 0 || w % SCALE_FACTOR != 0 {
            return Err(DataError::InvalidDimensions(format!(
                "HR dims ({h}, {w}) must be divisible by {SCALE_FACTOR}"
            )));
        }
        if hr_thermal.dims() != (1, h, w) {
            return Err(DataError::InvalidDimensions(format!(
                "hr_thermal dims {:?} do not match guide ({h}, {w})",
                hr_thermal.dims()
            )));
        }
        if lr_thermal.dims() != (1, h / SCALE_FACTOR, w / SCALE_FACTOR) {
            return Err(DataError::InvalidDimensions(format!(
                "lr_thermal dims {:?}, expected (1, {}, {})",
                lr_thermal.dims(),
                h / SCALE_FACTOR,
                w / SCALE_FACTOR
            )));
        }
        Ok(Self { scene_id, hr_rgb, lr_thermal, hr_thermal })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneEntry {
    pub id: String,
    pub split: Split,
}

/// Dataset description stored as `manifest.json` at the dataset root.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip, default)]
    pub root: PathBuf,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub scenes: Vec<SceneEntry>,
}

impl DatasetManifest {
    pub fn scene_ids(&self, split: Split) -> Vec<&str> {
        self.scenes
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id.as_str())
            .collect()
    }

    pub fn contains(&self, scene_id: &str) -> bool {
        self.scenes.iter().any(|s| s.id == scene_id)
    }
}

/// Area-average pooling with 8x8 non-overlapping windows.
pub fn downsample_x8(img: &ImageTensor) -> Result<ImageTensor, DataError> {
    let (c, h, w) = img.dims();
    if h % SCALE_FACTOR != 0 || w % SCALE_FACTOR != 0 {
        return Err(DataError::InvalidDimensions(format!(
            "({h}, {w}) not divisible by {SCALE_FACTOR}"
        )));
    }
    let data = kernels::area_downsample(img.data(), c, h, w, SCALE_FACTOR);
    Ok(ImageTensor {
        channels: c,
        height: h / SCALE_FACTOR,
        width: w / SCALE_FACTOR,
        data,
    })
}

/// Bilinear interpolation to `(out_h, out_w)` with the align-corners
/// sampling convention (endpoints map to endpoints exactly).
pub fn upsample_bilinear(
    img: &ImageTensor,
    out_h: usize,
    out_w: usize,
) -> Result<ImageTensor, DataError> {
    let (c, h, w) = img.dims();
    if out_h == 0 || out_w == 0 {
        return Err(DataError::InvalidDimensions("zero-sized target".into()));
    }
    if out_h < h || out_w < w {
        return Err(DataError::InvalidDimensions(format!(
            "target ({out_h}, {out_w}) smaller than source ({h}, {w})"
        )));
    }
    let data = kernels::bilinear_resize(img.data(), c, h, w, out_h, out_w);
    Ok(ImageTensor { channels: c, height: out_h, width: out_w, data })
}

/// Affine map `[0,1] -> [-1,1]`, `x -> 2x - 1`. No clamping.
pub fn normalize(img: &ImageTensor) -> ImageTensor {
    img.map(|v| 2.0 * v - 1.0)
}

/// Affine map `[-1,1] -> [0,1]`, `x -> (x + 1) / 2`. Exact inverse of
/// [`normalize`]. No clamping.
pub fn denormalize(img: &ImageTensor) -> ImageTensor {
    img.map(|v| (v + 1.0) / 2.0)
}

/// Apply the same horizontal/vertical flip to all three images of a pair,
/// preserving registration.
pub fn augment_flip(pair: &SamplePair, flip_h: bool, flip_v: bool) -> SamplePair {
    if !flip_h && !flip_v {
        return pair.clone();
    }
    SamplePair {
        scene_id: pair.scene_id.clone(),
        hr_rgb: pair.hr_rgb.flipped(flip_h, flip_v),
        lr_thermal: pair.lr_thermal.flipped(flip_h, flip_v),
        hr_thermal: pair.hr_thermal.flipped(flip_h, flip_v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor {
        let data = (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        ImageTensor::new(c, h, w, data).unwrap()
    }

    #[test]
    fn tensor_rejects_nan_and_bad_lengths() {
        assert!(matches!(
            ImageTensor::new(1, 2, 2, vec![0.0, 1.0, f64::NAN, 0.5]),
            Err(DataError::NonFinite(2))
        ));
        assert!(matches!(
            ImageTensor::new(1, 2, 2, vec![0.0; 3]),
            Err(DataError::LengthMismatch { expected: 4, got: 3 })
        ));
        assert!(ImageTensor::new(0, 2, 2, vec![]).is_err());
    }

    #[test]
    fn downsample_constant_image() {
        let img = ImageTensor::constant(1, 16, 16, 0.5);
        let out = downsample_x8(&img).unwrap();
        assert_eq!(out.dims(), (1, 2, 2));
        for &v in out.data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn downsample_8x8_ramp_is_the_hand_summed_mean() {
        // values {0..63}/63; their sum is 63*64/2 = 2016, mean 2016/(64*63) = 0.5
        let data: Vec<f64> = (0..64).map(|v| v as f64 / 63.0).collect();
        let img = ImageTensor::new(1, 8, 8, data).unwrap();
        let out = downsample_x8(&img).unwrap();
        assert_eq!(out.dims(), (1, 1, 1));
        assert!((out.data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let img = ImageTensor::zeros(1, 12, 16);
        assert!(matches!(downsample_x8(&img), Err(DataError::InvalidDimensions(_))));
    }

    #[test]
    fn downsample_preserves_global_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 2, 16, 24);
        let out = downsample_x8(&img).unwrap();
        assert!((img.mean() - out.mean()).abs() < 1e-12);
    }

    #[test]
    fn bilinear_row_matches_hand_evaluated_positions() {
        // align-corners: output x samples input at x * (2-1)/(5-1) = x/4
        let img = ImageTensor::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let out = upsample_bilinear(&img, 1, 5).unwrap();
        let expected = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (got, want) in out.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
    }

    #[test]
    fn bilinear_constant_and_identity() {
        let img = ImageTensor::constant(2, 3, 3, 0.7);
        let up = upsample_bilinear(&img, 9, 11).unwrap();
        for &v in up.data() {
            assert!((v - 0.7).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = random_image(&mut rng, 1, 4, 6);
        let same = upsample_bilinear(&img, 4, 6).unwrap();
        assert_eq!(img.data(), same.data());
    }

    #[test]
    fn bilinear_rejects_zero_target() {
        let img = ImageTensor::zeros(1, 2, 2);
        assert!(upsample_bilinear(&img, 0, 4).is_err());
    }

    #[test]
    fn bilinear_is_linear_in_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_image(&mut rng, 1, 3, 5);
        let y = random_image(&mut rng, 1, 3, 5);
        let (a, b) = (0.3, -1.7);
        let combined = ImageTensor::new(
            1,
            3,
            5,
            x.data().iter().zip(y.data()).map(|(xv, yv)| a * xv + b * yv).collect(),
        )
        .unwrap();
        let up_comb = upsample_bilinear(&combined, 7, 9).unwrap();
        let up_x = upsample_bilinear(&x, 7, 9).unwrap();
        let up_y = upsample_bilinear(&y, 7, 9).unwrap();
        for i in 0..up_comb.data().len() {
            let want = a * up_x.data()[i] + b * up_y.data()[i];
            assert!((up_comb.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_endpoints_and_inverse() {
        let img = ImageTensor::new(1, 1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let n = normalize(&img);
        assert_eq!(n.data(), &[-1.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_image(&mut rng, 1, 4, 4);
        let round = denormalize(&normalize(&x));
        for (a, b) in x.data().iter().zip(round.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    fn random_pair(rng: &mut ChaCha8Rng) -> SamplePair {
        let hr_t = random_image(rng, 1, 16, 16);
        let lr_t = downsample_x8(&hr_t).unwrap();
        SamplePair::new("s".into(), random_image(rng, 3, 16, 16), lr_t, hr_t).unwrap()
    }

    #[test]
    fn flip_is_an_involution_and_identity_at_rest() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pair = random_pair(&mut rng);
        let twice = augment_flip(&augment_flip(&pair, true, false), true, false);
        assert_eq!(pair.hr_rgb.data(), twice.hr_rgb.data());
        assert_eq!(pair.hr_thermal.data(), twice.hr_thermal.data());
        assert_eq!(pair.lr_thermal.data(), twice.lr_thermal.data());
        let id = augment_flip(&pair, false, false);
        assert_eq!(pair.hr_thermal.data(), id.hr_thermal.data());
    }

    #[test]
    fn flip_commutes_with_downsample() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..8 {
            let img = random_image(&mut rng, 1, 16, 16);
            let a = downsample_x8(&img.flipped(true, true)).unwrap();
            let b = downsample_x8(&img).unwrap().flipped(true, true);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x, y);
            }
        }
    }

    #[test]
    fn flip_preserves_value_multiset() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let img = random_image(&mut rng, 2, 8, 8);
        let mut original: Vec<u64> = img.data().iter().map(|v| v.to_bits()).collect();
        let mut flipped: Vec<u64> = img.flipped(true, false).data().iter().map(|v| v.to_bits()).collect();
        original.sort_unstable();
        flipped.sort_unstable();
        assert_eq!(original, flipped);
    }

    #[test]
    fn sample_pair_validates_dims() {
        let hr_rgb = ImageTensor::zeros(3, 16, 16);
        let hr_t = ImageTensor::zeros(1, 16, 16);
        let bad_lr = ImageTensor::zeros(1, 3, 2);
        assert!(SamplePair::new("x".into(), hr_rgb, bad_lr, hr_t).is_err());
    }
}
