//! On-disk dataset format.
//!
//! Layout: `<root>/manifest.json` plus one directory per scene holding
//! `rgb.png` (8-bit RGB), `lr_thermal.png` and `hr_thermal.png` (16-bit
//! grayscale). PNG values span the full integer range of their bit depth.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};

use super::{DataError, DatasetManifest, ImageTensor, SamplePair, SCALE_FACTOR};
use crate::data::synthetic::SyntheticDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairComponent {
    HrRgb,
    LrThermal,
    HrThermal,
}

impl PairComponent {
    fn file_name(self) -> &'static str {
        match self {
            PairComponent::HrRgb => "rgb.png",
            PairComponent::LrThermal => "lr_thermal.png",
            PairComponent::HrThermal => "hr_thermal.png",
        }
    }
}

pub fn save_manifest(manifest: &DatasetManifest, root: &Path) -> Result<(), DataError> {
    fs::create_dir_all(root).map_err(|e| DataError::Io { path: root.into(), source: e })?;
    let path = root.join("manifest.json");
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| DataError::Io { path, source: e })
}

pub fn load_manifest(root: &Path) -> Result<DatasetManifest, DataError> {
    let path = root.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| map_read_err(&path, e))?;
    let mut manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DataError::MalformedManifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    manifest.root = root.to_path_buf();
    Ok(manifest)
}

fn map_read_err(path: &Path, e: std::io::Error) -> DataError {
    if e.kind() == std::io::ErrorKind::NotFound {
        DataError::MissingFile { path: path.into(), source: e }
    } else {
        DataError::Io { path: path.into(), source: e }
    }
}

/// Write one scene's three PNGs under `<root>/<scene_id>/`.
pub fn save_pair(pair: &SamplePair, root: &Path) -> Result<(), DataError> {
    let dir = root.join(&pair.scene_id);
    fs::create_dir_all(&dir).map_err(|e| DataError::Io { path: dir.clone(), source: e })?;
    save_rgb8(&pair.hr_rgb, &dir.join(PairComponent::HrRgb.file_name()))?;
    save_gray16(&pair.lr_thermal, &dir.join(PairComponent::LrThermal.file_name()))?;
    save_gray16(&pair.hr_thermal, &dir.join(PairComponent::HrThermal.file_name()))
}

/// Load a single component of a pair. Only the requested file is opened,
/// which is what keeps missing-modality evaluation independent of files it
/// does not use.
pub fn load_component(
    manifest: &DatasetManifest,
    scene_id: &str,
    component: PairComponent,
) -> Result<ImageTensor, DataError> {
    if !manifest.contains(scene_id) {
        return Err(DataError::MissingScene(scene_id.into()));
    }
    let path = manifest.root.join(scene_id).join(component.file_name());
    let (h, w) = (manifest.height, manifest.width);
    let (expect_c, expect_h, expect_w) = match component {
        PairComponent::HrRgb => (3, h, w),
        PairComponent::HrThermal => (1, h, w),
        PairComponent::LrThermal => (1, h / SCALE_FACTOR, w / SCALE_FACTOR),
    };
    let img = match component {
        PairComponent::HrRgb => load_rgb8(&path)?,
        _ => load_gray16(&path)?,
    };
    if img.dims() != (expect_c, expect_h, expect_w) {
        return Err(DataError::DimensionMismatch {
            path,
            expected: format!("({expect_c}, {expect_h}, {expect_w})"),
            got: format!("{:?}", img.dims()),
        });
    }
    Ok(img)
}

pub fn load_pair(manifest: &DatasetManifest, scene_id: &str) -> Result<SamplePair, DataError> {
    let hr_rgb = load_component(manifest, scene_id, PairComponent::HrRgb)?;
    let lr_thermal = load_component(manifest, scene_id, PairComponent::LrThermal)?;
    let hr_thermal = load_component(manifest, scene_id, PairComponent::HrThermal)?;
    SamplePair::new(scene_id.to_string(), hr_rgb, lr_thermal, hr_thermal)
}

impl SyntheticDataset {
    /// Write the manifest and every scene under `root`; returns a manifest
    /// whose `root` points there.
    pub fn write_to(&self, root: &Path) -> Result<DatasetManifest, DataError> {
        save_manifest(&self.manifest, root)?;
        for pair in &self.pairs {
            save_pair(pair, root)?;
        }
        let mut manifest = self.manifest.clone();
        manifest.root = root.to_path_buf();
        Ok(manifest)
    }
}

fn save_rgb8(img: &ImageTensor, path: &PathBuf) -> Result<(), DataError> {
    let (c, h, w) = img.dims();
    debug_assert_eq!(c, 3);
    let mut buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let mut rgb = [0u8; 3];
        for (ch, out) in rgb.iter_mut().enumerate() {
            let v = img.get(ch, y as usize, x as usize).clamp(0.0, 1.0);
            *out = (v * 255.0).round() as u8;
        }
        *px = Rgb(rgb);
    }
    buf.save(path).map_err(|e| DataError::MalformedImage { path: path.clone(), reason: e.to_string() })
}

fn save_gray16(img: &ImageTensor, path: &PathBuf) -> Result<(), DataError> {
    let (c, h, w) = img.dims();
    debug_assert_eq!(c, 1);
    let mut buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let v = img.get(0, y as usize, x as usize).clamp(0.0, 1.0);
        *px = Luma([(v * 65535.0).round() as u16]);
    }
    buf.save(path).map_err(|e| DataError::MalformedImage { path: path.clone(), reason: e.to_string() })
}

fn open_image(path: &Path) -> Result<image::DynamicImage, DataError> {
    // Check existence first so a missing scene reports as such rather than
    // as a generic decode failure.
    if !path.exists() {
        return Err(DataError::MissingFile {
            path: path.into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        });
    }
    image::open(path).map_err(|e| DataError::MalformedImage {
        path: path.into(),
        reason: e.to_string(),
    })
}

fn load_rgb8(path: &Path) -> Result<ImageTensor, DataError> {
    let img = open_image(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch * h + y as usize) * w + x as usize] = px.0[ch] as f64 / 255.0;
        }
    }
    ImageTensor::new(3, h, w, data)
}

fn load_gray16(path: &Path) -> Result<ImageTensor, DataError> {
    let img = open_image(path)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; h * w];
    for (x, y, px) in img.enumerate_pixels() {
        data[y as usize * w + x as usize] = px.0[0] as f64 / 65535.0;
    }
    ImageTensor::new(1, h, w, data)
}
