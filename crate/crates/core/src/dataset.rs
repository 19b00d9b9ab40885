//! Deterministic blurred-dataset generation, label normalization and manifests.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blur::{blur_uniform, NoiseConfig};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel::{make_kernel, BlurParams, MAX_LENGTH};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "manifest.csv";

/// Largest representable blur length for a network trained up to patch size `n_max`.
///
/// Diagonal blurs admissible at `n_max` reach `n_max * sqrt(2)`.
pub fn r_max(n_max: usize) -> f64 {
    (n_max as f64 * std::f64::consts::SQRT_2).min(MAX_LENGTH)
}

/// Normalized regression targets, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub length: f64,
    pub angle: f64,
}

impl Labels {
    pub fn new(length: f64, angle: f64) -> Self {
        Labels { length, angle }
    }
}

fn check_n_max(n_max: usize) -> Result<()> {
    if n_max == 0 {
        return Err(Error::InvalidParams("N_max must be positive".into()));
    }
    Ok(())
}

/// `l_r = (r - 1) / (r_max - 1)`, `l_phi = (phi + 90) / 180`.
pub fn normalize_labels(params: &BlurParams, n_max: usize) -> Result<Labels> {
    check_n_max(n_max)?;
    let top = r_max(n_max);
    if !(params.r >= 1.0 && params.r <= top) {
        return Err(Error::InvalidParams(format!(
            "length {} outside [1, {top}] for N_max = {n_max}",
            params.r
        )));
    }
    if !(params.phi >= -90.0 && params.phi < 90.0) {
        return Err(Error::InvalidParams(format!("angle {} outside [-90, 90)", params.phi)));
    }
    Ok(Labels {
        length: (params.r - 1.0) / (top - 1.0),
        angle: (params.phi + 90.0) / 180.0,
    })
}

/// Inverse of [`normalize_labels`].
pub fn denormalize_labels(labels: &Labels, n_max: usize) -> Result<BlurParams> {
    check_n_max(n_max)?;
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if !in_unit(labels.length) || !in_unit(labels.angle) {
        return Err(Error::InvalidParams(format!(
            "labels ({}, {}) outside [0, 1]",
            labels.length, labels.angle
        )));
    }
    let top = r_max(n_max);
    BlurParams::new(1.0 + labels.length * (top - 1.0), labels.angle * 180.0 - 90.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// How blur parameters are assigned to each source image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Sampling {
    /// `per_image` independent uniform draws from the parameter set.
    Random { per_image: usize },
    /// Every parameter pair applied to every image.
    EnumerateAll,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::Random { per_image: 1 }
    }
}

/// Generator settings, persisted verbatim in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub n_max: usize,
    pub seed: u64,
    /// Train/val/test fractions; must sum to 1.
    pub split_ratios: [f64; 3],
    pub sampling: Sampling,
    pub noise: NoiseConfig,
    /// Length grid the parameter set was enumerated from, if any.
    #[serde(default)]
    pub lengths: Vec<f64>,
    /// Angle step the parameter set was enumerated with, if any.
    #[serde(default)]
    pub angle_step: Option<f64>,
}

impl DatasetConfig {
    pub fn new(n_max: usize, seed: u64) -> Self {
        DatasetConfig {
            n_max,
            seed,
            split_ratios: [0.8, 0.1, 0.1],
            sampling: Sampling::default(),
            noise: NoiseConfig::None,
            lengths: Vec::new(),
            angle_step: None,
        }
    }

    fn validate(&self) -> Result<()> {
        check_n_max(self.n_max)?;
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split ratios {:?} must be non-negative and sum to 1",
                self.split_ratios
            )));
        }
        if let Sampling::Random { per_image: 0 } = self.sampling {
            return Err(Error::InvalidConfig("per-image sample count must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub source_id: String,
    pub params: BlurParams,
    pub labels: Labels,
    /// Path of the blurred PNG, relative to the manifest's directory.
    pub blurred_path: String,
    pub split: Split,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub n_max: usize,
    pub r_max: f64,
    pub settings: DatasetConfig,
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format_version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported manifest version {}", manifest.format_version),
            });
        }
        manifest.check().map_err(|reason| Error::Format {
            path: path.to_path_buf(),
            reason,
        })?;
        Ok(manifest)
    }

    fn check(&self) -> std::result::Result<(), String> {
        let top = r_max(self.n_max);
        let mut split_of = std::collections::HashMap::new();
        for rec in &self.records {
            if rec.params.r > top {
                return Err(format!("record {} has r = {} > r_max = {top}", rec.source_id, rec.params.r));
            }
            if let Some(prev) = split_of.insert(rec.source_id.as_str(), rec.split) {
                if prev != rec.split {
                    return Err(format!("source {} appears in two splits", rec.source_id));
                }
            }
        }
        Ok(())
    }

    /// Writes `manifest.json` and `manifest.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let json_path = dir.join(MANIFEST_FILE);
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

        let csv_path = dir.join(INDEX_FILE);
        let csv_err = |e: csv::Error| Error::Format {
            path: csv_path.clone(),
            reason: e.to_string(),
        };
        let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err)?;
        w.write_record(["source_id", "r", "phi", "l_r", "l_phi", "split", "seed", "blurred_path"])
            .map_err(csv_err)?;
        for rec in &self.records {
            w.write_record([
                rec.source_id.clone(),
                rec.params.r.to_string(),
                rec.params.phi.to_string(),
                rec.labels.length.to_string(),
                rec.labels.angle.to_string(),
                rec.split.name().to_string(),
                rec.seed.to_string(),
                rec.blurred_path.clone(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// FNV-1a followed by a splitmix64 finalizer: stable across platforms and runs.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        // separator so ("ab", "c") and ("a", "bc") differ
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(h)
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-image seed derived from the global seed and the source id.
pub fn image_seed(seed: u64, source_id: &str) -> u64 {
    stable_hash(&[&seed.to_le_bytes(), source_id.as_bytes()])
}

/// Split assignment by hashing the source id against the cumulative ratios.
pub fn assign_split(source_id: &str, ratios: &[f64; 3]) -> Split {
    let u = (stable_hash(&[b"split", source_id.as_bytes()]) >> 11) as f64 / (1u64 << 53) as f64;
    if u < ratios[0] {
        Split::Train
    } else if u < ratios[0] + ratios[1] {
        Split::Val
    } else {
        Split::Test
    }
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Image files directly inside `dir`, sorted by source id (the file stem).
pub fn list_corpus(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_image || !path.is_file() {
            continue;
        }
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("non-UTF-8 file name {}", path.display())))?
            .to_string();
        found.push((id, path));
    }
    found.sort();
    if let Some(w) = found.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidInput(format!("duplicate source id '{}' in corpus", w[0].0)));
    }
    if found.is_empty() {
        return Err(Error::InvalidInput(format!("no images found in {}", dir.display())));
    }
    Ok(found)
}

/// Blurs every corpus image with parameters drawn from `params_set`, writes the
/// blurred PNGs under `out_dir/images/`, and saves the manifest (JSON + CSV).
///
/// Output depends only on the corpus, the parameter set and `config`; images
/// are processed in parallel with per-image seeds, and records are emitted in
/// source-id order.
pub fn generate_dataset(
    corpus_dir: &Path,
    params_set: &[BlurParams],
    config: &DatasetConfig,
    out_dir: &Path,
) -> Result<Manifest> {
    config.validate()?;
    if params_set.is_empty() {
        return Err(Error::InvalidConfig("parameter set is empty".into()));
    }
    let top = r_max(config.n_max);
    let params_set: Vec<BlurParams> = params_set
        .iter()
        .map(|p| {
            let p = BlurParams::new(p.r, p.phi)?;
            if p.r > top {
                return Err(Error::InvalidConfig(format!(
                    "{p} exceeds r_max = {top} for N_max = {}",
                    config.n_max
                )));
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;

    let corpus = list_corpus(corpus_dir)?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let per_image: Vec<Vec<SampleRecord>> = corpus
        .par_iter()
        .map(|(id, path)| blur_source(id, path, &params_set, config, out_dir))
        .collect::<Result<_>>()?;

    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        n_max: config.n_max,
        r_max: top,
        settings: config.clone(),
        records: per_image.into_iter().flatten().collect(),
    };
    manifest.save(out_dir)?;
    Ok(manifest)
}

fn blur_source(
    id: &str,
    path: &Path,
    params_set: &[BlurParams],
    config: &DatasetConfig,
    out_dir: &Path,
) -> Result<Vec<SampleRecord>> {
    let image = Image::load(path)?;
    let seed = image_seed(config.seed, id);
    let split = assign_split(id, &config.split_ratios);
    let chosen: Vec<BlurParams> = match config.sampling {
        Sampling::Random { per_image } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..per_image)
                .map(|_| params_set[rng.random_range(0..params_set.len())])
                .collect()
        }
        Sampling::EnumerateAll => params_set.to_vec(),
    };

    let mut records = Vec::with_capacity(chosen.len());
    for (k, params) in chosen.into_iter().enumerate() {
        let sample_seed = splitmix64(seed ^ k as u64);
        let kernel = make_kernel(&params)?;
        let blurred = blur_uniform(&image, &kernel, &config.noise.reseeded(sample_seed))?;
        let rel = format!("images/{id}_{k:03}.png");
        blurred.save_png(&out_dir.join(&rel))?;
        records.push(SampleRecord {
            source_id: id.to_string(),
            params,
            labels: normalize_labels(&params, config.n_max)?,
            blurred_path: rel,
            split,
            seed: sample_seed,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_endpoints() {
        let l = normalize_labels(&BlurParams::new(1.0, -90.0).unwrap(), 31).unwrap();
        assert_eq!((l.length, l.angle), (0.0, 0.0));
        let top = r_max(31);
        let l = normalize_labels(&BlurParams::new(top, 0.0).unwrap(), 31).unwrap();
        assert_eq!((l.length, l.angle), (1.0, 0.5));
        let p = denormalize_labels(&Labels::new(0.0, 0.0), 31).unwrap();
        assert_eq!((p.r, p.phi), (1.0, -90.0));
        let p = denormalize_labels(&Labels::new(1.0, 0.5), 31).unwrap();
        assert_eq!((p.r, p.phi), (top, 0.0));
    }

    #[test]
    fn label_example_n33() {
        let top = 33.0 * std::f64::consts::SQRT_2;
        assert!((r_max(33) - top).abs() < 1e-12);
        assert!((top - 46.669).abs() < 1e-3);
        let l = normalize_labels(&BlurParams::new(17.0, 45.0).unwrap(), 33).unwrap();
        assert!((l.length - 16.0 / (top - 1.0)).abs() < 1e-15);
        assert!((l.length - 0.3504).abs() < 1e-4);
        assert_eq!(l.angle, 0.75);
    }

    #[test]
    fn r_max_caps_at_100() {
        assert_eq!(r_max(224), 100.0);
        assert!((r_max(64) - 90.50966799187809).abs() < 1e-12);
    }

    #[test]
    fn label_range_errors() {
        assert!(normalize_labels(&BlurParams::new(50.0, 0.0).unwrap(), 31).is_err());
        assert!(normalize_labels(&BlurParams { r: 2.0, phi: 90.0 }, 31).is_err());
        assert!(normalize_labels(&BlurParams::IDENTITY, 0).is_err());
        assert!(denormalize_labels(&Labels::new(1.01, 0.5), 31).is_err());
        assert!(denormalize_labels(&Labels::new(0.5, -0.01), 31).is_err());
    }

    #[test]
    fn round_trip_random_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let l = Labels::new(rng.random::<f64>(), rng.random::<f64>());
            let n = rng.random_range(16..=224usize);
            let back = normalize_labels(&denormalize_labels(&l, n).unwrap(), n).unwrap();
            assert!((back.length - l.length).abs() <= 1e-12);
            assert!((back.angle - l.angle).abs() <= 1e-12);
        }
    }

    #[test]
    fn split_sizes_follow_ratios() {
        let ratios = [0.8, 0.1, 0.1];
        let mut counts = [0usize; 3];
        for i in 0..1000 {
            let s = assign_split(&format!("img_{i:05}"), &ratios);
            counts[s as usize] += 1;
        }
        assert!((750..=850).contains(&counts[0]), "{counts:?}");
        assert!((50..=150).contains(&counts[1]), "{counts:?}");
        assert!((50..=150).contains(&counts[2]), "{counts:?}");
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(image_seed(0, "a"), image_seed(0, "a"));
        assert_ne!(image_seed(0, "a"), image_seed(1, "a"));
        assert_ne!(stable_hash(&[b"ab", b"c"]), stable_hash(&[b"a", b"bc"]));
    }

    #[test]
    fn config_validation() {
        let mut cfg = DatasetConfig::new(31, 0);
        cfg.split_ratios = [0.5, 0.5, 0.5];
        assert!(cfg.validate().is_err());
        let mut cfg = DatasetConfig::new(31, 0);
        cfg.sampling = Sampling::Random { per_image: 0 };
        assert!(cfg.validate().is_err());
        assert!(DatasetConfig::new(0, 0).validate().is_err());
    }
}
