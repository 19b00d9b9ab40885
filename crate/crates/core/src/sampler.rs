//! Patch batches with blur-length admissibility filtering and a circular
//! per-epoch patch-size schedule.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{denormalize_labels, normalize_labels, Labels, Manifest, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel::BlurParams;

/// Consecutive rejected draws after which a batch request gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 10_000;

// Relative slack on the length bound so that lengths sitting exactly on it
// (e.g. 32 * sqrt(2) at 45 degrees) survive rounding in tan/cot.
const BOUND_RTOL: f64 = 1e-9;

/// Whether a blur of length `r` at angle `phi` (degrees) fits in an `n x n` patch.
///
/// The bound is `n * sqrt(1 + tan^2 |phi|)` for `|phi| <= 45` and
/// `n * sqrt(1 + cot^2 |phi|)` otherwise, i.e. `r * max(|cos|, |sin|) <= n`.
pub fn admissible(r: f64, phi: f64, n: usize) -> bool {
    debug_assert!(r >= 1.0 && (-90.0..90.0).contains(&phi) && n >= 1);
    let a = phi.abs();
    let t = a.to_radians();
    let ratio = if a <= 45.0 { t.tan() } else { 1.0 / t.tan() };
    let bound = n as f64 * (1.0 + ratio * ratio).sqrt();
    r <= bound * (1.0 + BOUND_RTOL)
}

pub fn admissible_params(params: &BlurParams, n: usize) -> bool {
    admissible(params.r, params.phi, n)
}

/// Patch sizes cycled through one per epoch. Repeated sizes are allowed and
/// weight that size more heavily.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSchedule {
    sizes: Vec<usize>,
}

impl PatchSchedule {
    pub fn new(sizes: Vec<usize>, min_size: usize) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidConfig("patch schedule is empty".into()));
        }
        if let Some(s) = sizes.iter().find(|s| **s < min_size) {
            return Err(Error::InvalidConfig(format!(
                "patch size {s} below the architecture minimum {min_size}"
            )));
        }
        Ok(PatchSchedule { sizes })
    }

    /// Parses a comma-separated list such as `29,30,31,32,33`.
    pub fn parse(text: &str, min_size: usize) -> Result<Self> {
        let sizes = text
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::InvalidConfig(format!("bad patch size '{s}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes, min_size)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Largest scheduled size, which fixes the label range.
    pub fn n_max(&self) -> usize {
        *self.sizes.iter().max().expect("schedule is non-empty")
    }

    pub fn patch_size_for_epoch(&self, epoch: usize) -> usize {
        self.sizes[epoch % self.sizes.len()]
    }
}

impl std::fmt::Display for PatchSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.sizes.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// A dataset record with its blurred image resident in memory.
#[derive(Debug, Clone)]
pub struct LoadedRecord {
    pub source_id: String,
    pub params: BlurParams,
    pub labels: Labels,
    pub image: Arc<Image>,
}

/// In-memory records drawn from by [`next_batch`]. Labels are normalized
/// against `n_max`.
#[derive(Debug, Clone)]
pub struct PatchSource {
    n_max: usize,
    records: Vec<LoadedRecord>,
}

impl PatchSource {
    pub fn new(n_max: usize, records: Vec<LoadedRecord>) -> Self {
        PatchSource { n_max, records }
    }

    /// Loads every record of `split`; image paths resolve against `base_dir`.
    /// Grayscale images are replicated to three channels.
    pub fn from_manifest(manifest: &Manifest, base_dir: &Path, split: Split) -> Result<Self> {
        let records = manifest
            .split(split)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|rec| {
                let image = Image::load(&base_dir.join(&rec.blurred_path))?.to_rgb();
                Ok(LoadedRecord {
                    source_id: rec.source_id.clone(),
                    params: rec.params,
                    labels: rec.labels,
                    image: Arc::new(image),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PatchSource {
            n_max: manifest.n_max,
            records,
        })
    }

    /// Re-expresses every label against a different `n_max`. Records whose
    /// length no longer fits the label range are dropped; they are inadmissible
    /// at every patch size up to `n_max` anyway.
    pub fn renormalized(&self, n_max: usize) -> Result<Self> {
        let mut records = Vec::with_capacity(self.records.len());
        for rec in &self.records {
            if let Ok(labels) = normalize_labels(&rec.params, n_max) {
                records.push(LoadedRecord {
                    labels,
                    ..rec.clone()
                });
            }
        }
        Ok(PatchSource { n_max, records })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn records(&self) -> &[LoadedRecord] {
        &self.records
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Whether `rec` can yield an `n x n` training patch.
    pub fn usable(&self, rec: &LoadedRecord, n: usize) -> bool {
        if rec.image.height() < n || rec.image.width() < n {
            return false;
        }
        match denormalize_labels(&rec.labels, self.n_max) {
            Ok(p) => admissible(p.r, p.phi, n),
            Err(_) => false,
        }
    }

    pub fn admissible_count(&self, n: usize) -> usize {
        self.records.iter().filter(|r| self.usable(r, n)).count()
    }

    /// `ceil(admissible records / batch_size)`.
    pub fn batches_per_epoch(&self, n: usize, batch_size: usize) -> usize {
        self.admissible_count(n).div_ceil(batch_size.max(1))
    }
}

/// Patches of one common size with their normalized labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub patch_size: usize,
    pub patches: Vec<Image>,
    pub labels: Vec<Labels>,
    /// `(source id, crop row, crop column)` per patch.
    pub provenance: Vec<(String, usize, usize)>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Fills a batch by drawing records uniformly with replacement, keeping only
/// those whose denormalized parameters are admissible at `n`, and cropping a
/// uniformly placed `n x n` patch from each kept record.
///
/// Fails with [`Error::Exhausted`] instead of spinning when no record can
/// qualify, or after [`MAX_CONSECUTIVE_REJECTIONS`] rejected draws in a row.
pub fn next_batch(source: &PatchSource, n: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be >= 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("patch size must be >= 1".into()));
    }
    if !source.records.iter().any(|r| source.usable(r, n)) {
        return Err(Error::Exhausted {
            patch_size: n,
            attempts: 0,
        });
    }

    let mut batch = Batch {
        patch_size: n,
        patches: Vec::with_capacity(batch_size),
        labels: Vec::with_capacity(batch_size),
        provenance: Vec::with_capacity(batch_size),
    };
    let mut rejections = 0;
    while batch.patches.len() < batch_size {
        let rec = &source.records[rng.random_range(0..source.records.len())];
        if !source.usable(rec, n) {
            rejections += 1;
            if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                return Err(Error::Exhausted {
                    patch_size: n,
                    attempts: rejections,
                });
            }
            continue;
        }
        rejections = 0;
        let y0 = rng.random_range(0..=rec.image.height() - n);
        let x0 = rng.random_range(0..=rec.image.width() - n);
        batch.patches.push(rec.image.crop(y0, x0, n, n)?);
        batch.labels.push(rec.labels);
        batch.provenance.push((rec.source_id.clone(), y0, x0));
    }
    Ok(batch)
}
