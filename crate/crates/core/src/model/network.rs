//! VGG-style regression network with hand-written forward and backward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::arch::{ArchitectureConfig, InputNorm, LayerShape, OUTPUT_WIDTH, STD_FLOOR};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layer {
    /// 3x3 convolution, zero padding 1, stride 1. `w`/`b` index `params`.
    Conv { cin: usize, cout: usize, w: usize, b: usize },
    Relu,
    MaxPool,
    Gap,
    Dense { nin: usize, nout: usize, w: usize, b: usize },
    Sigmoid,
    /// Stage boundary; records the current shape under this name.
    Mark(&'static str),
}

enum Cache<T> {
    Conv { col: Vec<T>, dims: (usize, usize, usize, usize) },
    Relu { out: Vec<T> },
    Pool { argmax: Vec<usize>, dims: (usize, usize, usize, usize) },
    Gap { dims: (usize, usize, usize, usize) },
    Dense { input: Vec<T>, batch: usize },
    Sigmoid { out: Vec<T> },
    Nothing,
}

const BLOCK_NAMES: [&str; 5] = ["block1", "block2", "block3", "block4", "block5"];

/// Network parameters plus the layer plan they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    arch: ArchitectureConfig,
    layers: Vec<Layer>,
    params: Vec<Vec<T>>,
}

impl<T: Scalar> Network<T> {
    /// Builds the layer plan and draws weights: He-normal for every rectified
    /// layer, Glorot-normal for the sigmoid output, zero biases.
    pub fn new(arch: ArchitectureConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut net = Network {
            arch,
            layers: Vec::new(),
            params: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        for (i, widths) in arch.conv_widths().iter().enumerate() {
            for &cout in widths {
                let w = net.push_param(cout * cin * 9, (2.0 / (cin * 9) as f64).sqrt(), &mut rng);
                let b = net.push_param(cout, 0.0, &mut rng);
                net.layers.push(Layer::Conv { cin, cout, w, b });
                net.layers.push(Layer::Relu);
                cin = cout;
            }
            net.layers.push(Layer::MaxPool);
            net.layers.push(Layer::Mark(BLOCK_NAMES[i]));
        }
        net.layers.push(Layer::Gap);
        net.layers.push(Layer::Mark("gap"));
        let fc = arch.fc_width();
        let mut nin = cin;
        for name in ["fc1", "fc2"] {
            let w = net.push_param(fc * nin, (2.0 / nin as f64).sqrt(), &mut rng);
            let b = net.push_param(fc, 0.0, &mut rng);
            net.layers.push(Layer::Dense { nin, nout: fc, w, b });
            net.layers.push(Layer::Relu);
            net.layers.push(Layer::Mark(name));
            nin = fc;
        }
        let std = (2.0 / (nin + OUTPUT_WIDTH) as f64).sqrt();
        let w = net.push_param(OUTPUT_WIDTH * nin, std, &mut rng);
        let b = net.push_param(OUTPUT_WIDTH, 0.0, &mut rng);
        net.layers.push(Layer::Dense {
            nin,
            nout: OUTPUT_WIDTH,
            w,
            b,
        });
        net.layers.push(Layer::Sigmoid);
        net.layers.push(Layer::Mark("output"));
        Ok(net)
    }

    fn push_param(&mut self, len: usize, std: f64, rng: &mut ChaCha8Rng) -> usize {
        let values = if std > 0.0 {
            let normal = Normal::new(0.0, std).expect("std is positive and finite");
            (0..len).map(|_| T::lit(normal.sample(rng))).collect()
        } else {
            vec![T::zero(); len]
        };
        self.params.push(values);
        self.params.len() - 1
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn params(&self) -> &[Vec<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    /// Expected length of every parameter tensor, in storage order.
    pub fn param_lengths(&self) -> Vec<usize> {
        self.params.iter().map(Vec::len).collect()
    }

    /// Replaces all parameters; lengths must match [`Network::param_lengths`].
    pub fn set_params(&mut self, params: Vec<Vec<T>>) -> Result<()> {
        let want = self.param_lengths();
        let got: Vec<usize> = params.iter().map(Vec::len).collect();
        if want != got {
            return Err(Error::InvalidInput(format!(
                "parameter layout mismatch: expected {} tensors, got {}",
                want.len(),
                got.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// Packs same-size three-channel patches into a network input.
    pub fn input_tensor(&self, patches: &[Image]) -> Result<Tensor<T>> {
        let first = patches
            .first()
            .ok_or_else(|| Error::InvalidInput("no patches given".into()))?;
        let (h, w) = (first.height(), first.width());
        if h < self.arch.min_input() || w < self.arch.min_input() {
            return Err(Error::InvalidInput(format!(
                "patch {h}x{w} below the architecture minimum {}",
                self.arch.min_input()
            )));
        }
        let batch = patches.len();
        let mut t = Tensor::zeros(3, batch, h, w);
        let plane = h * w;
        for (b, p) in patches.iter().enumerate() {
            if p.channels() != 3 {
                return Err(Error::InvalidInput(format!("expected 3 channels, got {}", p.channels())));
            }
            if (p.height(), p.width()) != (h, w) {
                return Err(Error::InvalidInput("patches in one call must share a size".into()));
            }
            let (means, scale) = match self.arch.input_norm {
                InputNorm::None => ([0.0; 3], 1.0),
                InputNorm::Standardize => standardization(p),
            };
            for c in 0..3 {
                let dst = &mut t.data[(c * batch + b) * plane..(c * batch + b + 1) * plane];
                for (d, &s) in dst.iter_mut().zip(p.plane(c)) {
                    *d = T::lit((f64::from(s) - means[c]) * scale);
                }
            }
        }
        Ok(t)
    }

    /// Sigmoid outputs as an `OUTPUT_WIDTH x batch` tensor.
    pub fn forward(&self, x: Tensor<T>) -> Tensor<T> {
        self.run(x, false, self.layers.len()).0
    }

    /// Pre-sigmoid outputs; callers that need values strictly inside (0, 1)
    /// apply the sigmoid in f64.
    pub fn logits(&self, x: Tensor<T>) -> Tensor<T> {
        let end = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Sigmoid))
            .expect("plan ends with a sigmoid");
        self.run(x, false, end).0
    }

    /// Shapes realized by a forward pass on an `n x n` input.
    pub fn trace_shapes(&self, n: usize) -> Result<Vec<LayerShape>> {
        if n < self.arch.min_input() {
            return Err(Error::InvalidInput(format!("patch size {n} below the minimum {}", self.arch.min_input())));
        }
        let x = Tensor::zeros(3, 1, n, n);
        let mut shapes = vec![shape_of("input", &x)];
        shapes.extend(self.run(x, false, self.layers.len()).2);
        Ok(shapes)
    }

    /// Mean squared error `sum((y - t)^2) / (2 * batch)` over both outputs and
    /// its gradient with respect to every parameter. `targets` is batch-major
    /// `(length, angle)` pairs.
    pub fn loss_and_grad(&self, x: Tensor<T>, targets: &[[T; 2]]) -> (T, Vec<Vec<T>>) {
        let batch = x.batch;
        assert_eq!(targets.len(), batch);
        let (y, caches, _) = self.run(x, true, self.layers.len());
        let loss = mse(&y, targets);
        let scale = T::one() / T::from_usize(batch).expect("batch fits");
        let mut dy = y.clone();
        for j in 0..OUTPUT_WIDTH {
            for b in 0..batch {
                dy.data[j * batch + b] = (y.data[j * batch + b] - targets[b][j]) * scale;
            }
        }
        let grads = self.backward(dy, caches);
        (loss, grads)
    }

    /// Loss only, for validation and finite differences.
    pub fn loss(&self, x: Tensor<T>, targets: &[[T; 2]]) -> T {
        mse(&self.forward(x), targets)
    }

    fn run(&self, mut x: Tensor<T>, keep: bool, end: usize) -> (Tensor<T>, Vec<Cache<T>>, Vec<LayerShape>) {
        let mut caches = Vec::with_capacity(if keep { end } else { 0 });
        let mut shapes = Vec::new();
        for layer in &self.layers[..end] {
            let (next, cache) = match *layer {
                Layer::Conv { cin, cout, w, b } => {
                    let (y, col) = conv_forward(&x, cin, cout, &self.params[w], &self.params[b]);
                    let dims = (x.channels, x.batch, x.height, x.width);
                    (y, Cache::Conv { col, dims })
                }
                Layer::Relu => {
                    for v in &mut x.data {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    let cache = if keep {
                        Cache::Relu { out: x.data.clone() }
                    } else {
                        Cache::Nothing
                    };
                    (x, cache)
                }
                Layer::MaxPool => {
                    let dims = (x.channels, x.batch, x.height, x.width);
                    let (y, argmax) = maxpool_forward(&x);
                    (y, Cache::Pool { argmax, dims })
                }
                Layer::Gap => {
                    let dims = (x.channels, x.batch, x.height, x.width);
                    (gap_forward(&x), Cache::Gap { dims })
                }
                Layer::Dense { nin, nout, w, b } => {
                    let batch = x.batch;
                    let mut y = Tensor::zeros(nout, batch, 1, 1);
                    T::gemm(nout, nin, batch, &self.params[w], false, &x.data, false, &mut y.data, false);
                    add_bias(&mut y.data, &self.params[b], batch);
                    (y, Cache::Dense { input: x.data, batch })
                }
                Layer::Sigmoid => {
                    for v in &mut x.data {
                        *v = T::one() / (T::one() + (-*v).exp());
                    }
                    let cache = if keep {
                        Cache::Sigmoid { out: x.data.clone() }
                    } else {
                        Cache::Nothing
                    };
                    (x, cache)
                }
                Layer::Mark(name) => {
                    shapes.push(shape_of(name, &x));
                    (x, Cache::Nothing)
                }
            };
            x = next;
            if keep {
                caches.push(cache);
            }
        }
        (x, caches, shapes)
    }

    fn backward(&self, mut dy: Tensor<T>, mut caches: Vec<Cache<T>>) -> Vec<Vec<T>> {
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|p| vec![T::zero(); p.len()]).collect();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let cache = caches.pop().expect("one cache per layer");
            dy = match (*layer, cache) {
                (Layer::Conv { cin, cout, w, b }, Cache::Conv { col, dims }) => {
                    let need_input = i > 0;
                    let (gw, rest) = split_two(&mut grads, w, b);
                    conv_backward(&dy, &col, dims, cin, cout, &self.params[w], gw, rest, need_input)
                }
                (Layer::Relu, Cache::Relu { out }) => {
                    for (d, o) in dy.data.iter_mut().zip(&out) {
                        if *o <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    dy
                }
                (Layer::MaxPool, Cache::Pool { argmax, dims }) => {
                    let (c, b, h, w) = dims;
                    let mut dx = Tensor::zeros(c, b, h, w);
                    for (g, &idx) in dy.data.iter().zip(&argmax) {
                        dx.data[idx] += *g;
                    }
                    dx
                }
                (Layer::Gap, Cache::Gap { dims }) => {
                    let (c, b, h, w) = dims;
                    let mut dx = Tensor::zeros(c, b, h, w);
                    let inv = T::one() / T::from_usize(h * w).expect("plane fits");
                    for (plane, g) in dx.data.chunks_exact_mut(h * w).zip(&dy.data) {
                        plane.fill(*g * inv);
                    }
                    dx
                }
                (Layer::Dense { nin, nout, w, b }, Cache::Dense { input, batch }) => {
                    T::gemm(nout, batch, nin, &dy.data, false, &input, true, &mut grads[w], true);
                    for (o, row) in dy.data.chunks_exact(batch).enumerate() {
                        grads[b][o] += row.iter().fold(T::zero(), |a, v| a + *v);
                    }
                    let mut dx = Tensor::zeros(nin, batch, 1, 1);
                    T::gemm(nin, nout, batch, &self.params[w], true, &dy.data, false, &mut dx.data, false);
                    dx
                }
                (Layer::Sigmoid, Cache::Sigmoid { out }) => {
                    for (d, y) in dy.data.iter_mut().zip(&out) {
                        *d *= *y * (T::one() - *y);
                    }
                    dy
                }
                (Layer::Mark(_), Cache::Nothing) => dy,
                _ => unreachable!("cache kind follows the layer kind"),
            };
        }
        grads
    }
}

fn shape_of<T: Scalar>(name: &str, x: &Tensor<T>) -> LayerShape {
    let spatial = !matches!(name, "gap" | "fc1" | "fc2" | "output");
    LayerShape {
        name: name.to_string(),
        height: x.height,
        width: x.width,
        channels: x.channels,
        spatial,
    }
}

fn standardization(p: &Image) -> ([f64; 3], f64) {
    let n = (p.height() * p.width()) as f64;
    let mut means = [0.0; 3];
    let mut var = 0.0;
    for (c, m) in means.iter_mut().enumerate() {
        *m = p.plane(c).iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        var += p.plane(c).iter().map(|&v| (f64::from(v) - *m).powi(2)).sum::<f64>();
    }
    let std = (var / (3.0 * n)).sqrt();
    (means, 1.0 / std.max(STD_FLOOR))
}

fn mse<T: Scalar>(y: &Tensor<T>, targets: &[[T; 2]]) -> T {
    let batch = y.batch;
    let mut sum = T::zero();
    for j in 0..OUTPUT_WIDTH {
        for (b, t) in targets.iter().enumerate() {
            let d = y.data[j * batch + b] - t[j];
            sum += d * d;
        }
    }
    sum / T::from_usize(2 * batch).expect("batch fits")
}

fn add_bias<T: Scalar>(data: &mut [T], bias: &[T], cols: usize) {
    for (row, &bv) in data.chunks_exact_mut(cols).zip(bias) {
        for v in row {
            *v += bv;
        }
    }
}

fn split_two<T>(grads: &mut [Vec<T>], w: usize, b: usize) -> (&mut Vec<T>, &mut Vec<T>) {
    debug_assert!(w < b);
    let (lo, hi) = grads.split_at_mut(b);
    (&mut lo[w], &mut hi[0])
}

/// Unrolls 3x3 neighborhoods (zero padded) into a `(cin * 9) x (batch * h * w)` matrix.
fn im2col<T: Scalar>(x: &Tensor<T>) -> Vec<T> {
    let (cin, batch, h, w) = (x.channels, x.batch, x.height, x.width);
    let cols = batch * h * w;
    let mut col = vec![T::zero(); cin * 9 * cols];
    for ci in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((ci * 9) + ky * 3 + kx) * cols..][..cols];
                let (x_lo, x_hi) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                for b in 0..batch {
                    let src = &x.data[(ci * batch + b) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y + ky;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        let dst = &mut row[(b * h + y) * w..][..w];
                        // Output column x reads source column x + kx - 1.
                        let s0 = sy * w + x_lo + kx - 1;
                        dst[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }
    col
}

fn col2im<T: Scalar>(dcol: &[T], dims: (usize, usize, usize, usize)) -> Tensor<T> {
    let (cin, batch, h, w) = dims;
    let cols = batch * h * w;
    let mut dx = Tensor::zeros(cin, batch, h, w);
    for ci in 0..cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcol[((ci * 9) + ky * 3 + kx) * cols..][..cols];
                let (x_lo, x_hi) = (usize::from(kx == 0), if kx == 2 { w - 1 } else { w });
                for b in 0..batch {
                    let dst = &mut dx.data[(ci * batch + b) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y + ky;
                        if sy == 0 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        let src = &row[(b * h + y) * w..][..w];
                        let s0 = sy * w + x_lo + kx - 1;
                        for (d, s) in dst[s0..s0 + (x_hi - x_lo)].iter_mut().zip(&src[x_lo..x_hi]) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv_forward<T: Scalar>(x: &Tensor<T>, cin: usize, cout: usize, w: &[T], b: &[T]) -> (Tensor<T>, Vec<T>) {
    debug_assert_eq!(x.channels, cin);
    let col = im2col(x);
    let cols = x.columns();
    let mut y = Tensor::zeros(cout, x.batch, x.height, x.width);
    T::gemm(cout, cin * 9, cols, w, false, &col, false, &mut y.data, false);
    add_bias(&mut y.data, b, cols);
    (y, col)
}

#[allow(clippy::too_many_arguments)]
fn conv_backward<T: Scalar>(
    dy: &Tensor<T>,
    col: &[T],
    dims: (usize, usize, usize, usize),
    cin: usize,
    cout: usize,
    w: &[T],
    gw: &mut [T],
    gb: &mut [T],
    need_input: bool,
) -> Tensor<T> {
    let cols = dy.columns();
    T::gemm(cout, cols, cin * 9, &dy.data, false, col, true, gw, true);
    for (o, row) in dy.data.chunks_exact(cols).enumerate() {
        gb[o] += row.iter().fold(T::zero(), |a, v| a + *v);
    }
    if !need_input {
        return Tensor::zeros(0, 0, 0, 0);
    }
    let mut dcol = vec![T::zero(); cin * 9 * cols];
    T::gemm(cin * 9, cout, cols, w, true, &dy.data, false, &mut dcol, false);
    col2im(&dcol, dims)
}

/// 2x2 max pooling, stride 2, trailing odd row/column dropped. Returns flat
/// input indices of each maximum (first maximum on ties).
fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let (oh, ow) = (x.height / 2, x.width / 2);
    let mut y = Tensor::zeros(x.channels, x.batch, oh, ow);
    let mut argmax = Vec::with_capacity(y.data.len());
    let plane = x.height * x.width;
    for p in 0..x.channels * x.batch {
        let base = p * plane;
        for oy in 0..oh {
            for ox in 0..ow {
                let i0 = base + 2 * oy * x.width + 2 * ox;
                let mut best = i0;
                for idx in [i0 + 1, i0 + x.width, i0 + x.width + 1] {
                    if x.data[idx] > x.data[best] {
                        best = idx;
                    }
                }
                y.data[(p * oh + oy) * ow + ox] = x.data[best];
                argmax.push(best);
            }
        }
    }
    (y, argmax)
}

fn gap_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let plane = x.height * x.width;
    let inv = T::one() / T::from_usize(plane).expect("plane fits");
    let mut y = Tensor::zeros(x.channels, x.batch, 1, 1);
    for (out, chunk) in y.data.iter_mut().zip(x.data.chunks_exact(plane)) {
        *out = chunk.iter().fold(T::zero(), |a, v| a + *v) * inv;
    }
    y
}
