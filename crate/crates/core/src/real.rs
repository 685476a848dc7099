//! Floating-point abstraction for the dense network code.
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::Float;

pub trait Real: Float + Debug + Default + Send + Sync + Sum + 'static {
    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `C = alpha * A B + beta * C` with explicit strides.
    ///
    /// # Safety
    /// The strides and dimensions must describe memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major matrix products used by the dense layers.
pub(crate) mod mat {
    use super::Real;

    /// `c (m x n) = a (m x k) * b (k x n)`, overwriting `c`.
    pub fn mul<S: Real>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
        assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        if m == 0 || n == 0 {
            return;
        }
        unsafe {
            S::gemm_raw(
                m,
                k,
                n,
                S::one(),
                a.as_ptr(),
                k as isize,
                1,
                b.as_ptr(),
                n as isize,
                1,
                S::zero(),
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }

    /// `c (k x n) += a^T * b` where `a` is `m x k` and `b` is `m x n`.
    pub fn mul_at_b_acc<S: Real>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
        assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
        if k == 0 || n == 0 {
            return;
        }
        unsafe {
            S::gemm_raw(
                k,
                m,
                n,
                S::one(),
                a.as_ptr(),
                1,
                k as isize,
                b.as_ptr(),
                n as isize,
                1,
                S::one(),
                c.as_mut_ptr(),
                n as isize,
                1,
            )
        }
    }

    /// `c (m x k) = a (m x n) * b^T` where `b` is `k x n`, overwriting `c`.
    pub fn mul_a_bt<S: Real>(a: &[S], b: &[S], c: &mut [S], m: usize, n: usize, k: usize) {
        assert!(a.len() >= m * n && b.len() >= k * n && c.len() >= m * k);
        if m == 0 || k == 0 {
            return;
        }
        unsafe {
            S::gemm_raw(
                m,
                n,
                k,
                S::one(),
                a.as_ptr(),
                n as isize,
                1,
                b.as_ptr(),
                1,
                n as isize,
                S::zero(),
                c.as_mut_ptr(),
                k as isize,
                1,
            )
        }
    }

}
