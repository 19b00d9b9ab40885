//! Feature-major activation tensors and the scalar abstraction the network is
//! generic over (f32 for training and inference, f64 for gradient checks).

use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    /// `c = a' * b' (+ c)` for row-major `a'` (m x k) and `b'` (k x n), where
    /// `a'` is `a` or its transpose as stored, likewise `b'`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, c: &mut [Self], accumulate: bool);

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal is representable")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // Logical (rows x cols); stored as (cols x rows) when transposed.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $f:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                c: &mut [Self],
                accumulate: bool,
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: the assertion above bounds every index the strides reach.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Activations laid out as `[channel][batch][row][col]`, so a convolution's
/// GEMM output is directly the next layer's input. Vectors use `h = w = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Tensor {
            channels,
            batch,
            height,
            width,
            data: vec![T::zero(); channels * batch * height * width],
        }
    }

    /// Per-channel plane size times batch: the GEMM column count.
    pub fn columns(&self) -> usize {
        self.batch * self.height * self.width
    }

    pub fn at(&self, c: usize, b: usize, y: usize, x: usize) -> T {
        self.data[((c * self.batch + b) * self.height + y) * self.width + x]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool) -> Vec<f64> {
        let ga = |i: usize, j: usize| if a_t { a[j * m + i] } else { a[i * k + j] };
        let gb = |i: usize, j: usize| if b_t { b[j * k + i] } else { b[i * n + j] };
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| ga(i, p) * gb(p, j)).sum();
            }
        }
        c
    }

    #[test]
    fn gemm_transpose_variants() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.61).cos()).collect();
        for a_t in [false, true] {
            for b_t in [false, true] {
                let want = naive(m, k, n, &a, a_t, &b, b_t);
                let mut c = vec![1.0; m * n];
                f64::gemm(m, k, n, &a, a_t, &b, b_t, &mut c, false);
                assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
                f64::gemm(m, k, n, &a, a_t, &b, b_t, &mut c, true);
                assert!(c.iter().zip(&want).all(|(x, y)| (x - 2.0 * y).abs() < 1e-12));
            }
        }
    }
}
