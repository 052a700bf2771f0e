use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Element type of a [`Tensor`](super::Tensor).
///
/// Training runs in `f32`; `f64` exists so finite-difference checks have
/// enough headroom to resolve gradient errors below 1e-5.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// Stable name used in file headers and checkpoints.
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn erf(self) -> Self;

    /// `C = alpha * op(A) * op(B) + beta * C` over strided row/column layouts.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
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
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn erf(self) -> Self {
        libm::erff(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
        rsc: isize,
        csc: isize,
    ) {
        // SAFETY: callers in `kernels::gemm` check every buffer against its
        // extents and strides before dispatching here.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
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
            )
        }
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn erf(self) -> Self {
        libm::erf(self)
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
        rsc: isize,
        csc: isize,
    ) {
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
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
            )
        }
    }
}

pub(crate) mod kernels {
    use super::Scalar;

    /// Row-major `c (m×n) = op(a) · op(b) + beta·c`.
    ///
    /// `a` is stored `m×k`, or `k×m` when `trans_a`; `b` is stored `k×n`,
    /// or `n×k` when `trans_b`.
    #[allow(clippy::too_many_arguments)]
    pub fn gemm<F: Scalar>(
        m: usize,
        k: usize,
        n: usize,
        a: &[F],
        trans_a: bool,
        b: &[F],
        trans_b: bool,
        c: &mut [F],
        beta: F,
    ) {
        assert_eq!(a.len(), m * k, "gemm: lhs buffer");
        assert_eq!(b.len(), k * n, "gemm: rhs buffer");
        assert_eq!(c.len(), m * n, "gemm: out buffer");
        if m == 0 || n == 0 {
            return;
        }
        if k == 0 {
            for v in c.iter_mut() {
                *v = *v * beta;
            }
            return;
        }
        let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
        let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
        F::gemm(
            m,
            k,
            n,
            F::one(),
            a,
            rsa,
            csa,
            b,
            rsb,
            csb,
            beta,
            c,
            n as isize,
            1,
        );
    }
}
