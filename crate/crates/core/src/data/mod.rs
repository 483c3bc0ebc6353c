//! Corpus ingestion, training-pair synthesis and evaluation-set
//! construction.
//!
//! The scale profile fixes the crop arithmetic: a random `hr_crop`² crop
//! is degraded to `lr_size`² (4× magnification), the LR is bicubically
//! upsampled back, and center crops of `model_crop`² form the aligned
//! training pair.

pub mod textures;

use crate::degrade::{self, DegradeConfig};
use crate::error::{Error, Result};
use crate::io::{load_image, read_tensor, write_tensor};
use crate::prng::Prng;
use crate::tensor::ImageTensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

pub const MAGNIFICATION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleProfile {
    pub hr_crop: usize,
    pub lr_size: usize,
    pub model_crop: usize,
}

impl ScaleProfile {
    /// Desk-scale default; preserves the crop > model_crop > lr ratio
    /// structure at workstation-friendly sizes.
    pub fn desk() -> Self {
        Self {
            hr_crop: 96,
            lr_size: 24,
            model_crop: 64,
        }
    }

    /// The full-size profile (400/100/256) for larger machines.
    pub fn paper() -> Self {
        Self {
            hr_crop: 400,
            lr_size: 100,
            model_crop: 256,
        }
    }

    /// A minimal profile for quick experiments and tests.
    pub fn tiny() -> Self {
        Self {
            hr_crop: 48,
            lr_size: 12,
            model_crop: 32,
        }
    }

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "paper" => Some(Self::paper()),
            "tiny" => Some(Self::tiny()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hr_crop != MAGNIFICATION * self.lr_size {
            return Err(Error::invalid(format!(
                "hr_crop {} must equal {MAGNIFICATION}×lr_size {}",
                self.hr_crop, self.lr_size
            )));
        }
        if self.model_crop > self.hr_crop {
            return Err(Error::invalid("model_crop must not exceed hr_crop"));
        }
        if self.hr_crop % 4 != 0 || self.model_crop % 4 != 0 {
            return Err(Error::invalid("profile dims must be divisible by 4"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub content_hash: String,
    pub height: usize,
    pub width: usize,
    /// Present for paired LR/HR corpora.
    pub lr_path: Option<PathBuf>,
    pub lr_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub scale_profile: ScaleProfile,
    /// Images skipped for being smaller than hr_crop.
    pub skipped_undersized: usize,
    /// Files that failed to load, with the error text.
    pub file_errors: Vec<(PathBuf, String)>,
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut files: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ppm") | Some("pgm")
            )
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Scans a directory of PNG/PPM images into a manifest. Unreadable files
/// are recorded and skipped; images smaller than the profile's hr_crop are
/// counted out. An empty result is an error.
pub fn ingest(dir: &Path, split: Split, profile: ScaleProfile) -> Result<DatasetManifest> {
    profile.validate()?;
    let mut manifest = DatasetManifest {
        entries: Vec::new(),
        split,
        scale_profile: profile,
        skipped_undersized: 0,
        file_errors: Vec::new(),
    };
    let min_dim = match split {
        Split::Train => profile.hr_crop,
        Split::Eval => profile.model_crop,
    };
    for path in image_files(dir)? {
        match load_image(&path) {
            Ok(img) => {
                if img.height() < min_dim || img.width() < min_dim {
                    manifest.skipped_undersized += 1;
                    continue;
                }
                manifest.entries.push(ManifestEntry {
                    content_hash: hash_file(&path)?,
                    height: img.height(),
                    width: img.width(),
                    lr_path: None,
                    lr_hash: None,
                    path,
                });
            }
            Err(e) => manifest.file_errors.push((path, e.to_string())),
        }
    }
    if manifest.entries.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{}: no usable images (skipped {} undersized, {} unreadable)",
            dir.display(),
            manifest.skipped_undersized,
            manifest.file_errors.len()
        )));
    }
    Ok(manifest)
}

pub fn write_manifest(path: &Path, m: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(m).expect("manifest serializes");
    fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Decodes every manifest entry into memory.
pub fn load_corpus(manifest: &DatasetManifest) -> Result<Vec<ImageTensor>> {
    manifest.entries.iter().map(|e| load_image(&e.path)).collect()
}

/// One aligned training pair: HR target x and the bicubically upsampled,
/// degraded conditioning c, both model_crop².
pub fn make_training_pair(
    hr_image: &ImageTensor,
    prng: &mut Prng,
    profile: &ScaleProfile,
    degrade_cfg: Option<&DegradeConfig>,
) -> Result<(ImageTensor, ImageTensor)> {
    profile.validate()?;
    let (h, w, _) = hr_image.shape();
    if h < profile.hr_crop || w < profile.hr_crop {
        return Err(Error::invalid(format!(
            "image {h}x{w} smaller than hr_crop {}",
            profile.hr_crop
        )));
    }
    let y0 = prng.uniform_usize(h - profile.hr_crop + 1);
    let x0 = prng.uniform_usize(w - profile.hr_crop + 1);
    let crop = hr_image.crop(y0, x0, profile.hr_crop, profile.hr_crop)?;
    let lr = match degrade_cfg {
        Some(cfg) => degrade::degrade(&crop, prng, cfg)?.0,
        None => degrade::resize_to(
            &crop,
            profile.lr_size,
            profile.lr_size,
            degrade::ResizeMode::Bicubic,
        )?,
    };
    let c_up = degrade::resize_to(
        &lr,
        profile.hr_crop,
        profile.hr_crop,
        degrade::ResizeMode::Bicubic,
    )?;
    let margin = (profile.hr_crop - profile.model_crop) / 2;
    let x = crop.crop(margin, margin, profile.model_crop, profile.model_crop)?;
    let c = c_up.crop(margin, margin, profile.model_crop, profile.model_crop)?;
    Ok((x, c))
}

/// An aligned evaluation pair; lr dims are hr dims ÷ 4 with corresponding
/// crop origins.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub lr: ImageTensor,
    pub hr: ImageTensor,
    pub source_id: String,
    pub crop_origin: (usize, usize),
}

/// Builds the evaluation set: `n_crops_per_image` aligned crops per
/// manifest entry. HR-only corpora get their LR synthesized through the
/// degradation pipeline with per-pair seeds; paired corpora are cropped at
/// corresponding coordinates.
pub fn build_eval_set(
    manifest: &DatasetManifest,
    prng: &Prng,
    n_crops_per_image: usize,
    degrade_cfg: Option<&DegradeConfig>,
) -> Result<Vec<EvalPair>> {
    if manifest.split != Split::Eval {
        return Err(Error::invalid("build_eval_set needs an eval-split manifest"));
    }
    if manifest.entries.is_empty() {
        return Err(Error::EmptyCorpus("eval manifest has no entries".to_string()));
    }
    let profile = manifest.scale_profile;
    profile.validate()?;
    let crop = profile.model_crop;
    let mut pairs = Vec::with_capacity(manifest.entries.len() * n_crops_per_image);
    for (i, entry) in manifest.entries.iter().enumerate() {
        let hr_img = load_image(&entry.path)?;
        let lr_img = entry.lr_path.as_deref().map(load_image).transpose()?;
        for k in 0..n_crops_per_image {
            let mut p = prng.split((i * n_crops_per_image + k) as u64);
            let (h, w, _) = hr_img.shape();
            if h < crop || w < crop {
                return Err(Error::invalid(format!(
                    "{}: smaller than eval crop {crop}",
                    entry.path.display()
                )));
            }
            // Crop origins land on the ×4 grid so LR coordinates align.
            let y0 = 4 * p.uniform_usize((h - crop) / 4 + 1);
            let x0 = 4 * p.uniform_usize((w - crop) / 4 + 1);
            let hr = hr_img.crop(y0, x0, crop, crop)?;
            let lr = match &lr_img {
                Some(lr_full) => lr_full.crop(y0 / 4, x0 / 4, crop / 4, crop / 4)?,
                None => {
                    let cfg = degrade_cfg.copied().unwrap_or_default();
                    degrade::degrade(&hr, &mut p, &cfg)?.0
                }
            };
            pairs.push(EvalPair {
                lr,
                hr,
                source_id: format!(
                    "{}#{k}",
                    entry.path.file_stem().and_then(|s| s.to_str()).unwrap_or("img")
                ),
                crop_origin: (y0, x0),
            });
        }
    }
    Ok(pairs)
}

#[derive(Debug, Serialize, Deserialize)]
struct EvalIndexEntry {
    source_id: String,
    crop_origin: (usize, usize),
    lr_file: String,
    hr_file: String,
}

/// Writes an eval set as TensorFile pairs plus an index JSON.
pub fn save_eval_set(dir: &Path, pairs: &[EvalPair]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut index = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let lr_file = format!("lr_{i:05}.tf");
        let hr_file = format!("hr_{i:05}.tf");
        write_tensor(&dir.join(&lr_file), &pair.lr)?;
        write_tensor(&dir.join(&hr_file), &pair.hr)?;
        index.push(EvalIndexEntry {
            source_id: pair.source_id.clone(),
            crop_origin: pair.crop_origin,
            lr_file,
            hr_file,
        });
    }
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(dir.join("index.json"), json)
        .map_err(|e| Error::io(dir.display().to_string(), e))
}

pub fn load_eval_set(dir: &Path) -> Result<Vec<EvalPair>> {
    let index_path = dir.join("index.json");
    let bytes =
        fs::read(&index_path).map_err(|e| Error::io(index_path.display().to_string(), e))?;
    let index: Vec<EvalIndexEntry> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Parse(format!("{}: {e}", index_path.display())))?;
    index
        .into_iter()
        .map(|e| {
            Ok(EvalPair {
                lr: read_tensor(&dir.join(&e.lr_file))?,
                hr: read_tensor(&dir.join(&e.hr_file))?,
                source_id: e.source_id,
                crop_origin: e.crop_origin,
            })
        })
        .collect()
}
