//! Sliding-window blur-field prediction, overlap sweeps across a blur
//! discontinuity, and perpendicular aggregation of prediction grids.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blur::{Pattern, Quantity, SplitAxis};
use crate::error::{Error, Result};
use crate::evaluation::PREDICT_CHUNK;
use crate::image::Image;
use crate::kernel::BlurParams;
use crate::model::Predictor;

/// Per-window predictions; cell `(i, j)` covers rows `i * stride ..` and
/// columns `j * stride ..` of the image and is registered at the window center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionGrid {
    pub patch_size: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
    pub r: Vec<f64>,
    pub phi: Vec<f64>,
    pub predictor_id: String,
}

/// Number of window positions along an axis of length `extent`.
pub fn grid_extent(extent: usize, n: usize, stride: usize) -> usize {
    (extent - n) / stride + 1
}

impl PredictionGrid {
    pub fn get(&self, row: usize, col: usize) -> BlurParams {
        let i = row * self.cols + col;
        BlurParams {
            r: self.r[i],
            phi: self.phi[i],
        }
    }

    pub fn values(&self, q: Quantity) -> &[f64] {
        match q {
            Quantity::Length => &self.r,
            Quantity::Angle => &self.phi,
        }
    }

    /// Image coordinates `(y, x)` of the window center for a cell.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let half = (self.patch_size as f64 - 1.0) / 2.0;
        ((row * self.stride) as f64 + half, (col * self.stride) as f64 + half)
    }

    /// One CSV line per grid row.
    pub fn to_csv(&self, q: Quantity) -> String {
        let mut out = String::new();
        for row in self.values(q).chunks_exact(self.cols) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, q: Quantity, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv(q)).map_err(|e| Error::io(path, e))
    }

    /// Color-mapped heatmap, one pixel per cell, values mapped linearly from
    /// `[lo, hi]` (clamped).
    pub fn heatmap(&self, q: Quantity, lo: f64, hi: f64) -> Result<Image> {
        if !(hi > lo) {
            return Err(Error::InvalidInput(format!("empty heatmap range [{lo}, {hi}]")));
        }
        let vals = self.values(q);
        Image::from_fn(self.rows, self.cols, 3, |c, y, x| {
            let t = ((vals[y * self.cols + x] - lo) / (hi - lo)).clamp(0.0, 1.0);
            colormap(t)[c]
        })
    }
}

// Perceptually ordered dark-blue to yellow ramp.
const RAMP: [[f32; 3]; 5] = [
    [0.267, 0.005, 0.329],
    [0.229, 0.322, 0.546],
    [0.128, 0.567, 0.551],
    [0.369, 0.789, 0.383],
    [0.993, 0.906, 0.144],
];

fn colormap(t: f64) -> [f32; 3] {
    let pos = t * (RAMP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(RAMP.len() - 2);
    let f = (pos - i as f64) as f32;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])]
}

fn check_window(predictor: &dyn Predictor, image: &Image, n: usize, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(Error::InvalidConfig("stride must be >= 1".into()));
    }
    if n < predictor.min_patch() {
        return Err(Error::InvalidConfig(format!(
            "patch size {n} below the architecture minimum {}",
            predictor.min_patch()
        )));
    }
    if image.height() < n || image.width() < n {
        return Err(Error::InvalidInput(format!(
            "image {}x{} smaller than patch size {n}",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Predicts every `n x n` window at the given origins, in order.
fn predict_windows(predictor: &dyn Predictor, image: &Image, n: usize, origins: &[(usize, usize)]) -> Result<Vec<BlurParams>> {
    let rgb = image.to_rgb();
    Ok(origins
        .par_chunks(PREDICT_CHUNK)
        .map(|chunk| {
            let patches = chunk
                .iter()
                .map(|&(y, x)| rgb.crop(y, x, n, n))
                .collect::<Result<Vec<_>>>()?;
            predictor.predict_params(&patches)
        })
        .collect::<Result<Vec<_>>>()?
        .concat())
}

/// Predicts every window that fits inside `image`, row-major.
pub fn sliding_predict(predictor: &dyn Predictor, image: &Image, n: usize, stride: usize) -> Result<PredictionGrid> {
    check_window(predictor, image, n, stride)?;
    let rows = grid_extent(image.height(), n, stride);
    let cols = grid_extent(image.width(), n, stride);
    let origins: Vec<(usize, usize)> = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i * stride, j * stride)))
        .collect();
    let preds = predict_windows(predictor, image, n, &origins)?;
    Ok(PredictionGrid {
        patch_size: n,
        stride,
        rows,
        cols,
        r: preds.iter().map(|p| p.r).collect(),
        phi: preds.iter().map(|p| p.phi).collect(),
        predictor_id: predictor.id(),
    })
}

/// Which region holds the majority of a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Left or top region.
    First,
    /// Right or bottom region.
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapPoint {
    pub side: Side,
    /// Minority-region rows or columns in the window.
    pub minority: usize,
    /// `minority / n`.
    pub overlap: f64,
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Linear interpolation between the two region values.
    pub reference: f64,
}

/// Curve points ordered left to right: first-region side with overlap
/// rising from 0, then second-region side with overlap falling back to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapCurve {
    pub pattern: Pattern,
    pub quantity: Quantity,
    pub patch_size: usize,
    pub first_value: f64,
    pub second_value: f64,
    pub images: usize,
    pub points: Vec<OverlapPoint>,
}

impl OverlapCurve {
    pub fn means(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.mean).collect()
    }

    pub fn max_overlap(&self) -> f64 {
        self.points.iter().map(|p| p.overlap).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("side,minority,overlap,count,mean,std,reference\n");
        for p in &self.points {
            let side = match p.side {
                Side::First => "first",
                Side::Second => "second",
            };
            let _ = writeln!(
                out,
                "{side},{},{:.6},{},{:.6},{:.6},{:.6}",
                p.minority, p.overlap, p.count, p.mean, p.std, p.reference
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Line plot: mean with a one-std band and the dashed reference line.
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (640.0, 400.0, 50.0);
        let n = self.points.len().max(2);
        let lo = self.points.iter().map(|p| (p.mean - p.std).min(p.reference)).fold(f64::INFINITY, f64::min);
        let hi = self.points.iter().map(|p| (p.mean + p.std).max(p.reference)).fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        let sx = |i: usize| m + (w - 2.0 * m) * i as f64 / (n - 1) as f64;
        let sy = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / (hi - lo);
        let path = |f: &dyn Fn(&OverlapPoint) -> f64| {
            self.points
                .iter()
                .enumerate()
                .map(|(i, p)| format!("{:.1},{:.1}", sx(i), sy(f(p))))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut band: Vec<String> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| format!("{:.1},{:.1}", sx(i), sy(p.mean + p.std)))
            .collect();
        band.extend(
            self.points
                .iter()
                .enumerate()
                .rev()
                .map(|(i, p)| format!("{:.1},{:.1}", sx(i), sy(p.mean - p.std))),
        );
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{} ({:?}), N = {}</text>"#,
            w / 2.0,
            self.pattern.kind,
            self.quantity,
            self.patch_size
        );
        let _ = writeln!(s, r#"<line x1="{m}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, h - m, w - m, h - m);
        let _ = writeln!(s, r#"<line x1="{m}" y1="{m}" x2="{m}" y2="{}" stroke="black"/>"#, h - m);
        for (v, anchor) in [(lo, "end"), (hi, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{v:.1}</text>"#,
                m - 4.0,
                sy(v) + 4.0
            );
        }
        for (i, p) in self.points.iter().enumerate() {
            if i % 5 == 0 || i + 1 == self.points.len() {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{:.0}%</text>"#,
                    sx(i),
                    h - m + 16.0,
                    p.overlap * 100.0
                );
            }
        }
        let _ = writeln!(s, r#"<polygon points="{}" fill="steelblue" fill-opacity="0.25" stroke="none"/>"#, band.join(" "));
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="gray" stroke-dasharray="6,4"/>"#,
            path(&|p| p.reference)
        );
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path(&|p| p.mean));
        s.push_str("</svg>\n");
        s
    }

    pub fn write_svg(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_svg()).map_err(|e| Error::io(path, e))
    }
}

/// Window classification relative to a split at `split` along an axis:
/// `(majority side, minority count)`; `None` for a window whose halves are
/// equal (only possible for even `n`).
fn classify(start: usize, n: usize, split: usize) -> Option<(Side, usize)> {
    let second = (start + n).saturating_sub(split).min(n);
    let first = n - second;
    match first.cmp(&second) {
        std::cmp::Ordering::Greater => Some((Side::First, second)),
        std::cmp::Ordering::Less => Some((Side::Second, first)),
        std::cmp::Ordering::Equal => None,
    }
}

/// Mean and population standard deviation (two-pass).
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Slides `n x n` windows across each pattern-blurred image in 1-pixel steps
/// along both axes, bins windows by majority side and minority overlap
/// `k / n` (`k = 0..=n/2`), and summarizes the varied quantity per bin over
/// all windows of all images.
pub fn overlap_sweep(predictor: &dyn Predictor, images: &[Image], pattern: &Pattern, n: usize) -> Result<OverlapCurve> {
    if n.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("sweep patch size must be odd, got {n}")));
    }
    if images.is_empty() {
        return Err(Error::InvalidInput("no images to sweep".into()));
    }
    let half = n / 2;
    let q = pattern.kind.quantity();
    let mut bins: [Vec<Vec<f64>>; 2] = [vec![Vec::new(); half + 1], vec![Vec::new(); half + 1]];
    for image in images {
        check_window(predictor, image, n, 1)?;
        let split = pattern.split_for(image.height(), image.width());
        let (along, across) = match pattern.kind.axis() {
            SplitAxis::Horizontal => (image.width(), image.height()),
            SplitAxis::Vertical => (image.height(), image.width()),
        };
        if split < n || along < split + n {
            return Err(Error::InvalidInput(format!(
                "image {}x{} too small for pure {n}-pixel windows on both sides of split {split}",
                image.height(),
                image.width()
            )));
        }
        let mut origins = Vec::new();
        let mut tags = Vec::new();
        for s in 0..=along - n {
            let Some(tag) = classify(s, n, split) else { continue };
            for t in 0..=across - n {
                origins.push(match pattern.kind.axis() {
                    SplitAxis::Horizontal => (t, s),
                    SplitAxis::Vertical => (s, t),
                });
                tags.push(tag);
            }
        }
        let preds = predict_windows(predictor, image, n, &origins)?;
        for ((side, k), p) in tags.into_iter().zip(preds) {
            bins[side as usize][k].push(q.of(&p));
        }
    }

    let (v1, v2) = (q.of(&pattern.first), q.of(&pattern.second));
    let mut points = Vec::with_capacity(2 * (half + 1));
    let order = (0..=half)
        .map(|k| (Side::First, k))
        .chain((0..=half).rev().map(|k| (Side::Second, k)));
    for (side, k) in order {
        let vals = &bins[side as usize][k];
        if vals.is_empty() {
            return Err(Error::InvalidInput(format!("no windows at overlap {k}/{n}")));
        }
        let (mean, std) = mean_std(vals);
        let frac = k as f64 / n as f64;
        let reference = match side {
            Side::First => v1 + frac * (v2 - v1),
            Side::Second => v2 - frac * (v2 - v1),
        };
        points.push(OverlapPoint {
            side,
            minority: k,
            overlap: frac,
            count: vals.len(),
            mean,
            std,
            reference,
        });
    }
    Ok(OverlapCurve {
        pattern: *pattern,
        quantity: q,
        patch_size: n,
        first_value: v1,
        second_value: v2,
        images: images.len(),
        points,
    })
}

/// `(mean, population std)` per position across the split: for a horizontal
/// split (left/right regions) each column is aggregated over rows, for a
/// vertical split each row over columns.
pub fn profile(values: &[f64], rows: usize, cols: usize, axis: SplitAxis) -> Result<Vec<(f64, f64)>> {
    if rows == 0 || cols == 0 || values.len() != rows * cols {
        return Err(Error::InvalidInput(format!(
            "grid of {} values does not match {rows}x{cols}",
            values.len()
        )));
    }
    Ok(match axis {
        SplitAxis::Horizontal => (0..cols)
            .map(|j| mean_std(&(0..rows).map(|i| values[i * cols + j]).collect::<Vec<_>>()))
            .collect(),
        SplitAxis::Vertical => values.chunks_exact(cols).map(mean_std).collect(),
    })
}

pub fn perpendicular_profile(grid: &PredictionGrid, q: Quantity, axis: SplitAxis) -> Result<Vec<(f64, f64)>> {
    profile(grid.values(q), grid.rows, grid.cols, axis)
}
