//! Linear motion blur kernels parametrized by length and angle.
//!
//! A blur of length `r` spans `r` pixel centers, so the underlying segment has
//! geometric length `r - 1` and `r = 1` is exactly the identity. The segment is
//! centered on the kernel's central pixel and oriented counterclockwise from the
//! horizontal axis (image rows grow downward, so positive angles point up-right).
//!
//! Weights are anti-aliased by distance: every pixel center at distance `d < 1`
//! from the segment receives `1 - d`, and the grid is then normalized. The
//! weight of a pixel depends only on `|t|` and `|d|` (its along-segment and
//! perpendicular coordinates), which makes every kernel exactly centro-symmetric.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest blur length the generators accept.
pub const MAX_LENGTH: f64 = 100.0;

/// Default equivalence tolerance used when deduplicating kernels.
pub const DEFAULT_UNIQUE_TOLERANCE: f64 = 1e-9;

// Weights below this are treated as exact zeros; they only arise from
// rounding noise when a pixel sits at distance ~1 from the segment.
const WEIGHT_FLOOR: f64 = 1e-12;
// Slack applied before `ceil` when sizing the grid, so an extent of
// 2.0000000000000004 does not add an all-zero border.
const EXTENT_SLACK: f64 = 1e-9;

/// Reduce an angle in degrees into `[-90, 90)`; `90` maps to `-90`.
pub fn canonicalize_angle(phi: f64) -> Result<f64> {
    if !phi.is_finite() {
        return Err(Error::InvalidParams(format!("angle must be finite, got {phi}")));
    }
    let reduced = (phi + 90.0).rem_euclid(180.0) - 90.0;
    // rem_euclid can round up to the modulus itself for tiny negative inputs
    Ok(if reduced >= 90.0 { -90.0 } else { reduced })
}

/// Length/angle pair describing a linear motion blur.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlurParams {
    /// Blur length in pixels, `>= 1`.
    pub r: f64,
    /// Blur angle in degrees, in `[-90, 90)`.
    pub phi: f64,
}

impl BlurParams {
    /// The no-blur identity `(1, 0)`.
    pub const IDENTITY: BlurParams = BlurParams { r: 1.0, phi: 0.0 };

    /// Validates `r` and canonicalizes `phi` into `[-90, 90)`.
    pub fn new(r: f64, phi: f64) -> Result<Self> {
        if !r.is_finite() {
            return Err(Error::InvalidParams(format!("length must be finite, got {r}")));
        }
        if r < 1.0 {
            return Err(Error::InvalidParams(format!("length must be >= 1, got {r}")));
        }
        Ok(BlurParams {
            r,
            phi: canonicalize_angle(phi)?,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.r == 1.0
    }

    /// Bit-exact key, usable in hash maps.
    pub fn key(&self) -> (u64, u64) {
        (self.r.to_bits(), self.phi.to_bits())
    }
}

impl std::fmt::Display for BlurParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(r={}, phi={})", self.r, self.phi)
    }
}

/// Cosine and sine of an angle in degrees, exact at multiples of 45.
pub(crate) fn cos_sin_deg(phi: f64) -> (f64, f64) {
    use std::f64::consts::FRAC_1_SQRT_2;
    match phi {
        0.0 => (1.0, 0.0),
        90.0 => (0.0, 1.0),
        -90.0 => (0.0, -1.0),
        45.0 => (FRAC_1_SQRT_2, FRAC_1_SQRT_2),
        -45.0 => (FRAC_1_SQRT_2, -FRAC_1_SQRT_2),
        p => {
            let (s, c) = p.to_radians().sin_cos();
            (c, s)
        }
    }
}

/// Odd-sized, normalized, centro-symmetric point-spread function.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Builds a kernel from raw row-major weights, checking the invariants.
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) || weights.len() != size * size {
            return Err(Error::InvalidInput(format!(
                "kernel must be odd-sized and square, got side {size} with {} weights",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("kernel weights must be finite and >= 0".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("kernel weights sum to {sum}, expected 1")));
        }
        Ok(Kernel { size, weights })
    }

    pub fn identity() -> Self {
        Kernel {
            size: 1,
            weights: vec![1.0],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Half-width: the kernel spans `-radius..=radius` around its center.
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    /// Nonzero taps as `(row offset, column offset, weight)` relative to the center,
    /// in row-major order.
    pub fn taps(&self) -> Vec<(isize, isize, f64)> {
        let c = self.radius() as isize;
        let mut taps = Vec::new();
        for i in 0..self.size {
            for j in 0..self.size {
                let w = self.at(i, j);
                if w != 0.0 {
                    taps.push((i as isize - c, j as isize - c, w));
                }
            }
        }
        taps
    }

    pub fn transpose(&self) -> Kernel {
        let n = self.size;
        let mut weights = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                weights[j * n + i] = self.weights[i * n + j];
            }
        }
        Kernel { size: n, weights }
    }

    /// Largest elementwise difference, or `None` when the sizes differ.
    pub fn max_abs_diff(&self, other: &Kernel) -> Option<f64> {
        if self.size != other.size {
            return None;
        }
        Some(
            self.weights
                .iter()
                .zip(&other.weights)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Plain-text grid: one row per line, space-separated decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.weights.chunks(self.size) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// 16-bit grayscale PNG scaled so the largest weight is white.
    pub fn write_png(&self, path: &Path) -> Result<()> {
        let max = self.weights.iter().copied().fold(0.0, f64::max);
        let pixels: Vec<u16> = self
            .weights
            .iter()
            .map(|w| ((w / max) * f64::from(u16::MAX)).round() as u16)
            .collect();
        let buf = ::image::ImageBuffer::<::image::Luma<u16>, _>::from_raw(
            self.size as u32,
            self.size as u32,
            pixels,
        )
        .expect("buffer length matches dimensions");
        buf.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Side of the square grid the segment is rasterized into; the returned kernel
/// is this size or smaller after empty outer rings are trimmed.
pub fn kernel_size(params: &BlurParams) -> usize {
    let half = (params.r - 1.0) / 2.0;
    let (c, s) = cos_sin_deg(params.phi);
    let extent = (half * c.abs()).max(half * s.abs());
    let k = (extent - EXTENT_SLACK).ceil().max(0.0) as usize;
    2 * k + 1
}

/// Rasterizes the linear motion blur kernel for `params`.
pub fn make_kernel(params: &BlurParams) -> Result<Kernel> {
    // Re-validate: the fields are public.
    let params = BlurParams::new(params.r, params.phi)?;
    if params.is_identity() {
        return Ok(Kernel::identity());
    }
    let size = kernel_size(&params);
    let half = (params.r - 1.0) / 2.0;
    let (c, s) = cos_sin_deg(params.phi);
    let center = (size / 2) as f64;

    let mut weights = vec![0.0; size * size];
    for (i, row) in weights.chunks_mut(size).enumerate() {
        let dy = i as f64 - center;
        for (j, w) in row.iter_mut().enumerate() {
            let dx = j as f64 - center;
            // along-segment and perpendicular coordinates (y axis points down)
            let along = dx * c - dy * s;
            let perp = dx * s + dy * c;
            let overshoot = (along.abs() - half).max(0.0);
            let dist = overshoot.hypot(perp.abs());
            let v = 1.0 - dist;
            *w = if v > WEIGHT_FLOOR { v } else { 0.0 };
        }
    }
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(trim_zero_rings(Kernel { size, weights }))
}

/// Drops outer rings that carry no weight. The grid bound from `kernel_size` can
/// overshoot when the segment's endpoint lies more than one pixel from the
/// corner pixels of the outermost ring.
fn trim_zero_rings(mut kernel: Kernel) -> Kernel {
    while kernel.size > 1 {
        let n = kernel.size;
        let ring_empty = (0..n).all(|t| {
            kernel.at(0, t) == 0.0
                && kernel.at(n - 1, t) == 0.0
                && kernel.at(t, 0) == 0.0
                && kernel.at(t, n - 1) == 0.0
        });
        if !ring_empty {
            break;
        }
        let inner = n - 2;
        let mut weights = Vec::with_capacity(inner * inner);
        for i in 1..n - 1 {
            weights.extend_from_slice(&kernel.weights[i * n + 1..i * n + n - 1]);
        }
        kernel = Kernel { size: inner, weights };
    }
    kernel
}

/// Enumerates `lengths x {-90, -90 + step, ...} ∩ [-90, 90)` and keeps one
/// representative per group of kernels that share a size and differ by at most
/// `tolerance` elementwise.
///
/// The first parameter pair in enumeration order (lengths in the given order,
/// angles ascending) represents each group, except that the identity group is
/// always represented by exactly `(1, 0)` and listed first.
pub fn unique_params(lengths: &[f64], angle_step: f64, tolerance: f64) -> Result<Vec<BlurParams>> {
    if lengths.is_empty() {
        return Err(Error::InvalidParams("length set is empty".into()));
    }
    if !(angle_step.is_finite() && angle_step > 0.0) {
        return Err(Error::InvalidParams(format!("angle step must be > 0, got {angle_step}")));
    }
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Error::InvalidParams(format!("tolerance must be >= 0, got {tolerance}")));
    }
    if let Some(r) = lengths.iter().find(|r| !(1.0..=MAX_LENGTH).contains(*r)) {
        return Err(Error::InvalidParams(format!(
            "length {r} outside [1, {MAX_LENGTH}]"
        )));
    }

    let angles: Vec<f64> = (0..)
        .map(|k| -90.0 + k as f64 * angle_step)
        .take_while(|phi| *phi < 90.0)
        .collect();

    let mut has_identity = false;
    // representatives bucketed by kernel size
    let mut buckets: std::collections::BTreeMap<usize, Vec<Kernel>> = Default::default();
    let mut reps = Vec::new();
    for &r in lengths {
        for &phi in &angles {
            let params = BlurParams::new(r, phi)?;
            let kernel = make_kernel(&params)?;
            if kernel.size() == 1 {
                has_identity = true;
                continue;
            }
            let bucket = buckets.entry(kernel.size()).or_default();
            let duplicate = bucket
                .iter()
                .any(|k| k.max_abs_diff(&kernel).is_some_and(|d| d <= tolerance));
            if !duplicate {
                bucket.push(kernel);
                reps.push(params);
            }
        }
    }
    if has_identity {
        reps.insert(0, BlurParams::IDENTITY);
    }
    Ok(reps)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force reference: distance from a pixel center to the segment,
    /// approximated by the nearest of 10^4 samples per unit length.
    fn sampled_kernel(r: f64, phi: f64, size: usize) -> Vec<f64> {
        let len = r - 1.0;
        let samples = ((len * 1e4).ceil() as usize).max(1);
        let theta = phi.to_radians();
        let (dx, dy) = (theta.cos(), -theta.sin());
        let pts: Vec<(f64, f64)> = (0..=samples)
            .map(|i| {
                let t = -len / 2.0 + len * i as f64 / samples as f64;
                (t * dx, t * dy)
            })
            .collect();
        let c = (size / 2) as f64;
        let mut w = vec![0.0; size * size];
        for i in 0..size {
            for j in 0..size {
                let (x, y) = (j as f64 - c, i as f64 - c);
                let d = pts
                    .iter()
                    .map(|(px, py)| (x - px).hypot(y - py))
                    .fold(f64::INFINITY, f64::min);
                w[i * size + j] = (1.0 - d).max(0.0);
            }
        }
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    #[test]
    fn identity_kernel() {
        let k = make_kernel(&BlurParams::IDENTITY).unwrap();
        assert_eq!(k.size(), 1);
        assert_eq!(k.weights(), &[1.0]);
        assert_eq!(k.to_text(), "1.0\n");
    }

    #[test]
    fn horizontal_three() {
        let k = make_kernel(&BlurParams::new(3.0, 0.0).unwrap()).unwrap();
        assert_eq!(k.size(), 3);
        let oracle = sampled_kernel(3.0, 0.0, 3);
        for (a, b) in k.weights().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        for j in 0..3 {
            assert!((k.at(1, j) - 1.0 / 3.0).abs() < 1e-12);
            assert_eq!(k.at(0, j), 0.0);
            assert_eq!(k.at(2, j), 0.0);
        }
    }

    #[test]
    fn vertical_is_transpose_of_horizontal() {
        let h = make_kernel(&BlurParams::new(3.0, 0.0).unwrap()).unwrap();
        let v = make_kernel(&BlurParams::new(3.0, -90.0).unwrap()).unwrap();
        assert_eq!(v, h.transpose());
        let oracle = sampled_kernel(3.0, -90.0, 3);
        for (a, b) in v.weights().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn matches_sampled_oracle_on_oblique_angles() {
        for &(r, phi) in &[(5.0, 30.0), (7.0, -60.0), (4.5, 17.0), (9.0, 45.0)] {
            let p = BlurParams::new(r, phi).unwrap();
            let k = make_kernel(&p).unwrap();
            let oracle = sampled_kernel(r, phi, k.size());
            let diff = k
                .weights()
                .iter()
                .zip(&oracle)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-4, "{p}: max diff {diff}");
        }
    }

    #[test]
    fn size_formula() {
        for &(r, phi, size) in &[
            (1.0, 37.0, 1),
            (3.0, 0.0, 3),
            (3.0, 45.0, 3),
            (2.0, 0.0, 3),
            (15.0, 0.0, 15),
            (15.0, 45.0, 11),
            (33.0, -90.0, 33),
        ] {
            let p = BlurParams::new(r, phi).unwrap();
            assert_eq!(make_kernel(&p).unwrap().size(), size, "{p}");
        }
    }

    #[test]
    fn canonicalize() {
        assert_eq!(canonicalize_angle(90.0).unwrap(), -90.0);
        assert_eq!(canonicalize_angle(45.0).unwrap(), 45.0);
        assert_eq!(canonicalize_angle(225.0).unwrap(), 45.0);
        assert_eq!(canonicalize_angle(-90.0).unwrap(), -90.0);
        assert_eq!(canonicalize_angle(-270.0).unwrap(), -90.0);
        assert!(canonicalize_angle(f64::NAN).is_err());
        assert!(canonicalize_angle(f64::INFINITY).is_err());
    }

    #[test]
    fn rejects_bad_params() {
        assert!(BlurParams::new(0.5, 0.0).is_err());
        assert!(BlurParams::new(f64::NAN, 0.0).is_err());
        assert!(make_kernel(&BlurParams { r: 0.0, phi: 0.0 }).is_err());
    }

    #[test]
    fn unique_identity_only() {
        let u = unique_params(&[1.0], 1.0, DEFAULT_UNIQUE_TOLERANCE).unwrap();
        assert_eq!(u, vec![BlurParams::IDENTITY]);
        let u = unique_params(&[1.0], 7.5, DEFAULT_UNIQUE_TOLERANCE).unwrap();
        assert_eq!(u, vec![BlurParams::IDENTITY]);
    }

    #[test]
    fn unique_three_keeps_axes_and_diagonals() {
        let u = unique_params(&[3.0], 1.0, DEFAULT_UNIQUE_TOLERANCE).unwrap();
        for phi in [0.0, -90.0, 45.0, -45.0] {
            assert!(u.iter().any(|p| p.r == 3.0 && p.phi == phi), "missing phi {phi}");
        }
        // every survivor is genuinely distinct from every other
        let kernels: Vec<Kernel> = u.iter().map(|p| make_kernel(p).unwrap()).collect();
        for a in 0..kernels.len() {
            for b in a + 1..kernels.len() {
                if let Some(d) = kernels[a].max_abs_diff(&kernels[b]) {
                    assert!(d > DEFAULT_UNIQUE_TOLERANCE);
                }
            }
        }
    }

    #[test]
    fn unique_collapses_exact_duplicates() {
        let u = unique_params(&[5.0, 5.0], 30.0, 0.0).unwrap();
        assert_eq!(u.len(), 6);
    }

    #[test]
    fn unique_rejects_bad_input() {
        assert!(unique_params(&[], 1.0, 0.0).is_err());
        assert!(unique_params(&[101.0], 1.0, 0.0).is_err());
        assert!(unique_params(&[3.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn from_weights_checks_invariants() {
        assert!(Kernel::from_weights(2, vec![0.25; 4]).is_err());
        assert!(Kernel::from_weights(1, vec![0.5]).is_err());
        assert!(Kernel::from_weights(1, vec![1.0]).is_ok());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_symmetric_bounded(r in 1.0f64..40.0, phi in -90.0f64..90.0) {
                let p = BlurParams::new(r, phi).unwrap();
                let k = make_kernel(&p).unwrap();
                let n = k.size();
                let sum: f64 = k.weights().iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-9);
                prop_assert!(k.weights().iter().all(|w| *w >= 0.0));
                for i in 0..n {
                    for j in 0..n {
                        prop_assert_eq!(k.at(i, j), k.at(n - 1 - i, n - 1 - j));
                    }
                }
                // the outer ring carries weight unless the kernel is the identity
                if n > 1 {
                    let ring: f64 = (0..n)
                        .map(|t| k.at(0, t) + k.at(n - 1, t) + k.at(t, 0) + k.at(t, n - 1))
                        .sum();
                    prop_assert!(ring > 0.0);
                }
            }

            #[test]
            fn support_within_projected_extent(r in 1.0f64..40.0, phi in -90.0f64..90.0) {
                let p = BlurParams::new(r, phi).unwrap();
                let k = make_kernel(&p).unwrap();
                let (c, s) = cos_sin_deg(p.phi);
                let half = (r - 1.0) / 2.0;
                let taps = k.taps();
                let max_dx = taps.iter().map(|t| t.1.unsigned_abs()).max().unwrap();
                let max_dy = taps.iter().map(|t| t.0.unsigned_abs()).max().unwrap();
                // a pixel carries weight only within distance 1 of the segment
                prop_assert!((max_dx as f64) < half * c.abs() + 1.0);
                prop_assert!((max_dy as f64) < half * s.abs() + 1.0);
            }

            #[test]
            fn angle_equivalence(r in 1u32..40, phi in -90i32..90) {
                let a = BlurParams::new(f64::from(r), f64::from(phi)).unwrap();
                let b = BlurParams::new(f64::from(r), f64::from(phi) + 180.0).unwrap();
                prop_assert_eq!(make_kernel(&a).unwrap(), make_kernel(&b).unwrap());
            }
        }
    }
}
