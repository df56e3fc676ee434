//! Scalar abstraction so the numeric core runs in `f32` for training and in
//! `f64` for finite-difference gradient oracles.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

pub trait Real: Float + FromPrimitive + ToPrimitive + NumAssign + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a(m x k) * b(k x n) + beta * c`, all row-major, with
    /// explicit strides so transposed operands cost nothing.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    #[inline]
    fn to_f32_lossy(self) -> f32 {
        self.to_f32().unwrap()
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            #[inline]
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                // Bounds the raw-pointer kernel below: every operand must
                // cover its last addressed element.
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    if rows == 0 || cols == 0 {
                        0
                    } else {
                        (rows as isize - 1) * rs + (cols as isize - 1) * cs
                    }
                };
                assert!(k == 0 || (last(m, k, rsa, csa) as usize) < a.len());
                assert!(k == 0 || (last(k, n, rsb, csb) as usize) < b.len());
                assert!((last(m, n, rsc, csc) as usize) < c.len());
                // SAFETY: strides are non-negative and the asserts above keep
                // every access inside the provided slices.
                unsafe {
                    $gemm(
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
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Round half away from zero, the single rounding convention used for
/// endpoint quantization and grid quantization.
#[inline]
pub fn round_half_away<R: Real>(x: R) -> R {
    // `Float::round` already rounds half away from zero.
    x.round()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_away(0.5f32), 1.0);
        assert_eq!(round_half_away(-0.5f32), -1.0);
        assert_eq!(round_half_away(127.5f64), 128.0);
        assert_eq!(round_half_away(2.4999f64), 2.0);
    }

    #[test]
    fn gemm_matches_naive_product() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0f64, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut c = [0.0f64; 4];
        f64::gemm(2, 3, 2, &a, 3, 1, &b, 2, 1, 0.0, &mut c, 2, 1);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // a^T (3x2) * c-shaped 2x2 via strides
        let mut d = [0.0f64; 6];
        f64::gemm(3, 2, 2, &a, 1, 3, &[1.0, 0.0, 0.0, 1.0], 2, 1, 0.0, &mut d, 2, 1);
        assert_eq!(d, [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }
}
