//! L1 quadrature of the Caputo derivative and its discrete adjoint.
//!
//! The weight table `b[n][k]`, `1 <= k <= n <= nt`, only depends on `n - k`,
//! so the kernel keeps one generator row `w[d] = b[n][n - d]` and the
//! first differences `c[0] = w[0]`, `c[d] = w[d] - w[d - 1]` that appear as
//! coefficients of the forward and backward operators:
//!
//! ```text
//! forward:  D P_n   = sum_{k=1..n} c[n-k] P_k - w[n-1] P_0
//! backward: D^* F_n = sum_{k=n..nt} c[k-n] F_k
//! ```
//!
//! For `alpha = 1` the weights collapse to backward Euler.

use crate::error::{check_len, Error, Result};
use crate::scalar::{axpy, gamma, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct FractionalKernel<T> {
    alpha: T,
    dt: T,
    nt: usize,
    weights: Vec<T>,
    coeffs: Vec<T>,
    /// Number of leading nonzero entries of `coeffs`.
    support: usize,
}

impl<T: Real> FractionalKernel<T> {
    pub fn new(alpha: T, dt: T, nt: usize) -> Result<Self> {
        if !(alpha > T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidAlpha(alpha.as_f64()));
        }
        if !(dt > T::zero() && dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("time step must be positive, got {dt}")));
        }
        if nt == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }

        let mut weights = vec![T::zero(); nt];
        if alpha == T::one() {
            weights[0] = dt.recip();
        } else {
            let beta = T::one() - alpha;
            let scale = dt.powf(-alpha) / gamma(T::one() + beta);
            weights[0] = scale;
            for (d, w) in weights.iter_mut().enumerate().skip(1) {
                // (d+1)^beta - d^beta without cancellation
                let df = T::count(d);
                *w = scale * df.powf(beta) * (beta * df.recip().ln_1p()).exp_m1();
            }
        }

        let mut coeffs = Vec::with_capacity(nt);
        coeffs.push(weights[0]);
        coeffs.extend(weights.windows(2).map(|p| p[1] - p[0]));
        let support = coeffs
            .iter()
            .rposition(|c| *c != T::zero())
            .map_or(0, |p| p + 1);

        Ok(Self {
            alpha,
            dt,
            nt,
            weights,
            coeffs,
            support,
        })
    }

    #[inline]
    pub fn alpha(&self) -> T {
        self.alpha
    }
    #[inline]
    pub fn dt(&self) -> T {
        self.dt
    }
    #[inline]
    pub fn nt(&self) -> usize {
        self.nt
    }

    /// `b[n][k]` for `1 <= k <= n <= nt`.
    #[inline]
    pub fn weight(&self, n: usize, k: usize) -> T {
        debug_assert!(1 <= k && k <= n && n <= self.nt);
        self.weights[n - k]
    }

    /// Generator row `w[d] = b[n][n - d]`, `d = 0..nt`.
    pub fn generator(&self) -> &[T] {
        &self.weights
    }

    /// Convolution coefficients `c[d]` shared by the forward and backward operators.
    pub fn coefficients(&self) -> &[T] {
        &self.coeffs
    }

    /// Coefficients `dt * b[n][1]`, `n = 1..=nt`, of the quadrature of the
    /// Riemann-Liouville tail integral over `[0, T]`.
    pub fn rl_tail_weights(&self) -> Vec<T> {
        self.weights.iter().map(|&w| self.dt * w).collect()
    }

    /// Forward L1 derivative of one timeline `rho_0..=rho_nt`; returns levels `1..=nt`.
    pub fn caputo_forward(&self, timeline: &[T]) -> Result<Vec<T>> {
        check_len("forward timeline", self.nt + 1, timeline.len())?;
        let mut out = vec![T::zero(); self.nt];
        self.forward_blocks(timeline, 1, &mut out);
        Ok(out)
    }

    /// Backward (adjoint) operator applied to `phi_1..=phi_nt`.
    pub fn caputo_backward(&self, timeline: &[T]) -> Result<Vec<T>> {
        check_len("backward timeline", self.nt, timeline.len())?;
        let mut out = vec![T::zero(); self.nt];
        self.backward_blocks(timeline, 1, &mut out);
        Ok(out)
    }

    /// Forward operator on a time-major array of `nt + 1` blocks of length
    /// `block`; writes `nt` blocks.
    pub fn forward_blocks(&self, data: &[T], block: usize, out: &mut [T]) {
        assert_eq!(data.len(), (self.nt + 1) * block);
        assert_eq!(out.len(), self.nt * block);
        let initial = &data[..block];
        for (idx, dst) in out.chunks_exact_mut(block).enumerate() {
            let n = idx + 1;
            dst.fill(T::zero());
            let w = self.weights[n - 1];
            if w != T::zero() {
                axpy(-w, initial, dst);
            }
            for d in 0..n.min(self.support) {
                let k = n - d;
                axpy(self.coeffs[d], &data[k * block..(k + 1) * block], dst);
            }
        }
    }

    /// Backward operator on `nt` time-major blocks.
    pub fn backward_blocks(&self, data: &[T], block: usize, out: &mut [T]) {
        assert_eq!(data.len(), self.nt * block);
        assert_eq!(out.len(), self.nt * block);
        for (idx, dst) in out.chunks_exact_mut(block).enumerate() {
            dst.fill(T::zero());
            for d in 0..(self.nt - idx).min(self.support) {
                let k = idx + d;
                axpy(self.coeffs[d], &data[k * block..(k + 1) * block], dst);
            }
        }
    }

    /// `out[s] = sum_n b[n][1] data[n][s]`: the weight the level-0 density
    /// receives in the adjoint.
    pub fn tail_blocks(&self, data: &[T], block: usize, out: &mut [T]) {
        assert_eq!(data.len(), self.nt * block);
        assert_eq!(out.len(), block);
        out.fill(T::zero());
        for (w, src) in self.weights.iter().zip(data.chunks_exact(block)) {
            if *w != T::zero() {
                axpy(*w, src, out);
            }
        }
    }
}
