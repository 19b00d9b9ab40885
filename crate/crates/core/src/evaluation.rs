//! Coefficient of determination and the patch-size robustness matrix.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::stable_hash;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::Predictor;
use crate::sampler::{admissible_params, PatchSource};

/// Patches per forward pass during evaluation.
pub const PREDICT_CHUNK: usize = 64;

/// `1 - SS_res / SS_tot`.
pub fn r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidInput(format!(
            "r2 length mismatch: {} truths, {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::InvalidInput("r2 needs at least 2 samples".into()));
    }
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let ss_tot: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::InvalidInput("r2 undefined: truths have zero variance".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Average ranks (1-based) with ties sharing their mean rank.
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidInput("spearman needs two equal-length series of >= 2 values".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("spearman inputs must be finite".into()));
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        return Err(Error::InvalidInput("spearman undefined for a constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Scores at one tested patch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub patch_size: usize,
    pub count: usize,
    pub r2_length: f64,
    pub r2_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Training configuration, e.g. `29,30,31,32,33`.
    pub label: String,
    pub cells: Vec<EvalCell>,
}

impl EvalRow {
    pub fn cell(&self, patch_size: usize) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.patch_size == patch_size)
    }
}

/// Rows of training configurations against columns of tested patch sizes.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub rows: Vec<EvalRow>,
}

impl EvalMatrix {
    /// Sorted union of tested sizes across rows.
    pub fn patch_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self.rows.iter().flat_map(|r| r.cells.iter().map(|c| c.patch_size)).collect();
        sizes.sort_unstable();
        sizes.dedup();
        sizes
    }

    /// Long format: `config,patch_size,count,r2_length,r2_angle`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv encoding failed: {e}"));
        w.write_record(["config", "patch_size", "count", "r2_length", "r2_angle"])
            .map_err(csv_err)?;
        for row in &self.rows {
            for c in &row.cells {
                w.write_record([
                    row.label.clone(),
                    c.patch_size.to_string(),
                    c.count.to_string(),
                    format!("{:.6}", c.r2_length),
                    format!("{:.6}", c.r2_angle),
                ])
                .map_err(csv_err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    /// Two blocks (length, then angle), one line per configuration, `-` for
    /// untested sizes.
    pub fn to_table(&self) -> String {
        let sizes = self.patch_sizes();
        let label_w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(16);
        let mut out = String::new();
        for (title, pick) in [("Length r", 0), ("Angle phi", 1)] {
            let _ = writeln!(out, "{title}");
            let _ = write!(out, "{:<label_w$}", "Training config");
            for s in &sizes {
                let _ = write!(out, " {s:>8}");
            }
            out.push('\n');
            for row in &self.rows {
                let _ = write!(out, "{:<label_w$}", row.label);
                for s in &sizes {
                    match row.cell(*s) {
                        Some(c) => {
                            let v = if pick == 0 { c.r2_length } else { c.r2_angle };
                            let _ = write!(out, " {v:>8.3}");
                        }
                        None => {
                            let _ = write!(out, " {:>8}", "-");
                        }
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

/// Crops that enter one cell: `(record index, crop)` for every record whose
/// true parameters are admissible at `n`, one uniformly placed crop each.
pub fn cell_crops(source: &PatchSource, n: usize, seed: u64) -> Result<Vec<(usize, Image)>> {
    source
        .records()
        .iter()
        .enumerate()
        .filter(|(_, rec)| rec.image.height() >= n && rec.image.width() >= n && admissible_params(&rec.params, n))
        .map(|(i, rec)| {
            let s = stable_hash(&[&seed.to_le_bytes(), &(n as u64).to_le_bytes(), &(i as u64).to_le_bytes()]);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let y0 = rng.random_range(0..=rec.image.height() - n);
            let x0 = rng.random_range(0..=rec.image.width() - n);
            Ok((i, rec.image.crop(y0, x0, n, n)?))
        })
        .collect()
}

/// Scores `predictor` on one admissible crop per test record at each size.
/// R² is computed on denormalized `(r, phi)`.
pub fn eval_row(
    label: &str,
    predictor: &dyn Predictor,
    test: &PatchSource,
    patch_sizes: &[usize],
    seed: u64,
) -> Result<EvalRow> {
    if patch_sizes.is_empty() {
        return Err(Error::InvalidConfig("no patch sizes to evaluate".into()));
    }
    let mut cells = Vec::with_capacity(patch_sizes.len());
    for &n in patch_sizes {
        if n < predictor.min_patch() {
            return Err(Error::InvalidConfig(format!(
                "patch size {n} below the architecture minimum {}",
                predictor.min_patch()
            )));
        }
        let crops = cell_crops(test, n, seed)?;
        if crops.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "patch size {n}: {} admissible test records, need >= 2",
                crops.len()
            )));
        }
        let images: Vec<Image> = crops.iter().map(|(_, c)| c.clone()).collect();
        let preds = images
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| predictor.predict_params(chunk))
            .collect::<Result<Vec<_>>>()?
            .concat();
        let truth: Vec<_> = crops.iter().map(|(i, _)| test.records()[*i].params).collect();
        let col = |f: fn(&crate::kernel::BlurParams) -> f64, v: &[crate::kernel::BlurParams]| v.iter().map(f).collect::<Vec<f64>>();
        cells.push(EvalCell {
            patch_size: n,
            count: crops.len(),
            r2_length: r2(&col(|p| p.r, &truth), &col(|p| p.r, &preds))?,
            r2_angle: r2(&col(|p| p.phi, &truth), &col(|p| p.phi, &preds))?,
        });
    }
    Ok(EvalRow {
        label: label.to_string(),
        cells,
    })
}

/// Single-row matrix for one predictor.
pub fn eval_matrix(
    label: &str,
    predictor: &dyn Predictor,
    test: &PatchSource,
    patch_sizes: &[usize],
    seed: u64,
) -> Result<EvalMatrix> {
    Ok(EvalMatrix {
        rows: vec![eval_row(label, predictor, test, patch_sizes, seed)?],
    })
}
