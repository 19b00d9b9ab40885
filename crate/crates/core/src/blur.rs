//! Uniform and spatially varying blur synthesis.
//!
//! Output pixel `(m, n)` is the correlation of the reflect-padded sharp image
//! with the kernel assigned to `(m, n)`:
//!
//! ```text
//! out[m, n] = sum_{s,t} K_{m,n}[s, t] * in[m + s, n + t]
//! ```
//!
//! Kernels are centro-symmetric, so this coincides with convolution. Both the
//! uniform and the non-uniform paths evaluate every pixel with the same routine
//! and tap order, so a constant field reproduces the uniform result bit for bit.

use std::collections::HashMap;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{clamp_unit, Image};
use crate::kernel::{make_kernel, BlurParams, Kernel};

/// Additive noise applied after blurring.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseConfig {
    #[default]
    None,
    AdditiveGaussian { sigma: f64, seed: u64 },
}

impl NoiseConfig {
    pub fn gaussian(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise sigma must be >= 0, got {sigma}")));
        }
        Ok(if sigma == 0.0 {
            NoiseConfig::None
        } else {
            NoiseConfig::AdditiveGaussian { sigma, seed }
        })
    }

    /// Same noise kind with a different seed; used for per-image streams.
    pub fn reseeded(self, seed: u64) -> Self {
        match self {
            NoiseConfig::None => NoiseConfig::None,
            NoiseConfig::AdditiveGaussian { sigma, .. } => NoiseConfig::AdditiveGaussian { sigma, seed },
        }
    }

    fn apply(&self, data: &mut [f32]) -> Result<()> {
        if let NoiseConfig::AdditiveGaussian { sigma, seed } = *self {
            let normal = Normal::new(0.0, sigma)
                .map_err(|e| Error::InvalidConfig(format!("noise sigma {sigma}: {e}")))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for v in data.iter_mut() {
                *v += normal.sample(&mut rng) as f32;
            }
        }
        clamp_unit(data);
        Ok(())
    }
}

/// Symmetric (edge-inclusive) reflection of an index into `0..n`.
pub fn reflect_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn check_kernel_fits(kernel: &Kernel, image: &Image) -> Result<()> {
    let limit = 2 * image.height().min(image.width());
    if kernel.size() > limit {
        return Err(Error::InvalidInput(format!(
            "kernel of side {} too large for {}x{} image (limit {limit})",
            kernel.size(),
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// One channel padded by `pad` on every side with symmetric reflection.
struct Padded {
    pad: usize,
    stride: usize,
    data: Vec<f32>,
}

impl Padded {
    fn new(plane: &[f32], height: usize, width: usize, pad: usize) -> Self {
        let stride = width + 2 * pad;
        let mut data = Vec::with_capacity(stride * (height + 2 * pad));
        for y in 0..height + 2 * pad {
            let sy = reflect_index(y as isize - pad as isize, height);
            for x in 0..stride {
                let sx = reflect_index(x as isize - pad as isize, width);
                data.push(plane[sy * width + sx]);
            }
        }
        Padded { pad, stride, data }
    }

    #[inline]
    fn correlate(&self, taps: &[(isize, isize, f64)], m: usize, n: usize) -> f32 {
        let base = ((m + self.pad) * self.stride + n + self.pad) as isize;
        let mut acc = 0.0f64;
        for &(dy, dx, w) in taps {
            let idx = base + dy * self.stride as isize + dx;
            acc += w * f64::from(self.data[idx as usize]);
        }
        acc as f32
    }
}

/// Blurs every channel with `kernel`, adds noise, clamps to `[0, 1]`.
pub fn blur_uniform(image: &Image, kernel: &Kernel, noise: &NoiseConfig) -> Result<Image> {
    check_kernel_fits(kernel, image)?;
    render(image, std::slice::from_ref(kernel), None, noise)
}

/// Blurs `image` with a per-pixel kernel assignment.
pub fn blur_nonuniform(image: &Image, field: &KernelField, noise: &NoiseConfig) -> Result<Image> {
    field.validate()?;
    let (h, w) = (image.height(), image.width());
    if (field.height(), field.width()) != (h, w) {
        return Err(Error::InvalidInput(format!(
            "field is {}x{} but image is {h}x{w}",
            field.height(),
            field.width(),
        )));
    }
    let distinct = field.distinct_params();
    let kernels = distinct
        .iter()
        .map(make_kernel)
        .collect::<Result<Vec<_>>>()?;
    for k in &kernels {
        check_kernel_fits(k, image)?;
    }
    let index: HashMap<(u64, u64), usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, p)| (p.key(), i))
        .collect();

    // kernel index per pixel
    let assignment: Vec<usize> = match field {
        KernelField::Regions { regions, .. } => {
            let mut a = vec![0; h * w];
            for region in regions {
                let id = index[&region.params.key()];
                for y in region.y0..region.y0 + region.height {
                    a[y * w + region.x0..y * w + region.x0 + region.width].fill(id);
                }
            }
            a
        }
        KernelField::Dense { params, .. } => params.iter().map(|p| index[&p.key()]).collect(),
    };
    render(image, &kernels, Some(&assignment), noise)
}

fn render(
    image: &Image,
    kernels: &[Kernel],
    assignment: Option<&[usize]>,
    noise: &NoiseConfig,
) -> Result<Image> {
    let (h, w) = (image.height(), image.width());
    let pad = kernels.iter().map(Kernel::radius).max().unwrap_or(0);
    let taps: Vec<Vec<(isize, isize, f64)>> = kernels.iter().map(Kernel::taps).collect();

    let mut out = Image::new(h, w, image.channels())?;
    for c in 0..image.channels() {
        let padded = Padded::new(image.plane(c), h, w, pad);
        out.plane_mut(c)
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(m, row)| {
                for (n, v) in row.iter_mut().enumerate() {
                    let k = assignment.map_or(0, |a| a[m * w + n]);
                    *v = padded.correlate(&taps[k], m, n);
                }
            });
    }
    noise.apply(out.data_mut())?;
    Ok(out)
}

/// Axis-aligned rectangle carrying one set of blur parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub y0: usize,
    pub x0: usize,
    pub height: usize,
    pub width: usize,
    pub params: BlurParams,
}

impl Region {
    pub fn contains(&self, m: usize, n: usize) -> bool {
        m >= self.y0 && m < self.y0 + self.height && n >= self.x0 && n < self.x0 + self.width
    }
}

/// Total assignment of blur parameters to the pixels of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelField {
    /// Piecewise-constant field; the rectangles must tile the image exactly.
    Regions {
        height: usize,
        width: usize,
        regions: Vec<Region>,
    },
    /// One parameter pair per pixel, row-major.
    Dense {
        height: usize,
        width: usize,
        params: Vec<BlurParams>,
    },
}

impl KernelField {
    pub fn constant(height: usize, width: usize, params: BlurParams) -> Self {
        KernelField::Regions {
            height,
            width,
            regions: vec![Region {
                y0: 0,
                x0: 0,
                height,
                width,
                params,
            }],
        }
    }

    pub fn height(&self) -> usize {
        match self {
            KernelField::Regions { height, .. } | KernelField::Dense { height, .. } => *height,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            KernelField::Regions { width, .. } | KernelField::Dense { width, .. } => *width,
        }
    }

    /// Checks coverage: every pixel maps to exactly one parameter pair.
    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput("field has zero extent".into()));
        }
        match self {
            KernelField::Regions { regions, .. } => {
                let mut hits = vec![0u32; h * w];
                for r in regions {
                    if r.y0 + r.height > h || r.x0 + r.width > w {
                        return Err(Error::InvalidInput(format!(
                            "region {}x{} at ({}, {}) exceeds {h}x{w} field",
                            r.height, r.width, r.y0, r.x0
                        )));
                    }
                    BlurParams::new(r.params.r, r.params.phi)?;
                    for y in r.y0..r.y0 + r.height {
                        for x in r.x0..r.x0 + r.width {
                            hits[y * w + x] += 1;
                        }
                    }
                }
                if let Some(i) = hits.iter().position(|&c| c != 1) {
                    return Err(Error::InvalidInput(format!(
                        "pixel ({}, {}) covered by {} regions",
                        i / w,
                        i % w,
                        hits[i]
                    )));
                }
            }
            KernelField::Dense { params, .. } => {
                if params.len() != h * w {
                    return Err(Error::InvalidInput(format!(
                        "dense field holds {} entries for {h}x{w} pixels",
                        params.len()
                    )));
                }
                for p in params {
                    BlurParams::new(p.r, p.phi)?;
                }
            }
        }
        Ok(())
    }

    pub fn params_at(&self, m: usize, n: usize) -> Option<BlurParams> {
        if m >= self.height() || n >= self.width() {
            return None;
        }
        match self {
            KernelField::Regions { regions, .. } => {
                regions.iter().find(|r| r.contains(m, n)).map(|r| r.params)
            }
            KernelField::Dense { width, params, .. } => Some(params[m * width + n]),
        }
    }

    /// Distinct parameter pairs in first-appearance order.
    pub fn distinct_params(&self) -> Vec<BlurParams> {
        let mut seen = std::collections::HashSet::new();
        let all: Box<dyn Iterator<Item = &BlurParams>> = match self {
            KernelField::Regions { regions, .. } => Box::new(regions.iter().map(|r| &r.params)),
            KernelField::Dense { params, .. } => Box::new(params.iter()),
        };
        all.filter(|p| seen.insert(p.key())).copied().collect()
    }

    pub fn to_dense(&self) -> KernelField {
        let (h, w) = (self.height(), self.width());
        let params = (0..h * w)
            .map(|i| self.params_at(i / w, i % w).expect("in range"))
            .collect();
        KernelField::Dense {
            height: h,
            width: w,
            params,
        }
    }
}

/// The four two-region test patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    LengthHorizontal,
    LengthVertical,
    AngleHorizontal,
    AngleVertical,
}

/// Direction in which the two regions are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitAxis {
    /// Left/right regions separated by a vertical line.
    Horizontal,
    /// Top/bottom regions separated by a horizontal line.
    Vertical,
}

/// Which blur parameter differs between the two regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    Length,
    Angle,
}

impl Quantity {
    pub fn of(&self, p: &BlurParams) -> f64 {
        match self {
            Quantity::Length => p.r,
            Quantity::Angle => p.phi,
        }
    }
}

impl PatternKind {
    pub const ALL: [PatternKind; 4] = [
        PatternKind::LengthHorizontal,
        PatternKind::LengthVertical,
        PatternKind::AngleHorizontal,
        PatternKind::AngleVertical,
    ];

    pub fn axis(&self) -> SplitAxis {
        match self {
            PatternKind::LengthHorizontal | PatternKind::AngleHorizontal => SplitAxis::Horizontal,
            PatternKind::LengthVertical | PatternKind::AngleVertical => SplitAxis::Vertical,
        }
    }

    pub fn quantity(&self) -> Quantity {
        match self {
            PatternKind::LengthHorizontal | PatternKind::LengthVertical => Quantity::Length,
            PatternKind::AngleHorizontal | PatternKind::AngleVertical => Quantity::Angle,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PatternKind::LengthHorizontal => "length-horizontal",
            PatternKind::LengthVertical => "length-vertical",
            PatternKind::AngleHorizontal => "angle-horizontal",
            PatternKind::AngleVertical => "angle-vertical",
        }
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PatternKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown pattern '{s}'")))
    }
}

impl std::fmt::Display for PatternKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A two-region pattern: `first` covers the left (or top) side, `second` the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    pub kind: PatternKind,
    pub first: BlurParams,
    pub second: BlurParams,
    /// First row/column of the second region; `None` means the midline.
    pub split: Option<usize>,
}

impl Pattern {
    /// The standard parameter values: lengths 5/15 at a fixed angle, or
    /// angles -45/45 at length 15.
    pub fn standard(kind: PatternKind) -> Pattern {
        let p = |r, phi| BlurParams::new(r, phi).expect("constant parameters are valid");
        let (first, second) = match kind {
            PatternKind::LengthHorizontal => (p(5.0, 0.0), p(15.0, 0.0)),
            // 90 degrees canonicalizes to -90 (same line)
            PatternKind::LengthVertical => (p(5.0, 90.0), p(15.0, 90.0)),
            PatternKind::AngleHorizontal | PatternKind::AngleVertical => (p(15.0, -45.0), p(15.0, 45.0)),
        };
        Pattern {
            kind,
            first,
            second,
            split: None,
        }
    }

    /// Index of the first row/column belonging to the second region.
    pub fn split_for(&self, height: usize, width: usize) -> usize {
        let extent = match self.kind.axis() {
            SplitAxis::Horizontal => width,
            SplitAxis::Vertical => height,
        };
        self.split.unwrap_or(extent / 2)
    }
}

/// Builds the piecewise-constant field of `pattern` for an image of the given size.
///
/// With the default midline split, odd extents assign the middle row/column to
/// the second (right/bottom) region.
pub fn make_pattern(pattern: &Pattern, height: usize, width: usize) -> Result<KernelField> {
    if height < 2 || width < 2 {
        return Err(Error::InvalidInput(format!(
            "pattern needs at least 2x2 pixels, got {height}x{width}"
        )));
    }
    if pattern.first == pattern.second {
        return Err(Error::InvalidConfig("pattern regions must differ".into()));
    }
    let first = BlurParams::new(pattern.first.r, pattern.first.phi)?;
    let second = BlurParams::new(pattern.second.r, pattern.second.phi)?;
    let split = pattern.split_for(height, width);
    let extent = match pattern.kind.axis() {
        SplitAxis::Horizontal => width,
        SplitAxis::Vertical => height,
    };
    if split == 0 || split >= extent {
        return Err(Error::InvalidConfig(format!(
            "split {split} not strictly inside extent {extent}"
        )));
    }
    let regions = match pattern.kind.axis() {
        SplitAxis::Horizontal => vec![
            Region { y0: 0, x0: 0, height, width: split, params: first },
            Region { y0: 0, x0: split, height, width: width - split, params: second },
        ],
        SplitAxis::Vertical => vec![
            Region { y0: 0, x0: 0, height: split, width, params: first },
            Region { y0: split, x0: 0, height: height - split, width, params: second },
        ],
    };
    Ok(KernelField::Regions {
        height,
        width,
        regions,
    })
}
