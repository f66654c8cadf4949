//! Preconditioned conjugate gradients for symmetric positive definite operators.

use serde::{Deserialize, Serialize};

use crate::scalar::{axpy, dot, Real};

pub trait LinearOperator<T> {
    fn apply(&mut self, x: &[T], y: &mut [T]);
}

/// Approximate inverse `z = M^{-1} r`.
pub trait Preconditioner<T> {
    fn apply(&mut self, r: &[T], z: &mut [T]);
}

/// No preconditioning.
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl<T: Real> Preconditioner<T> for Identity {
    fn apply(&mut self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
    }
}

impl<T, F: FnMut(&[T], &mut [T])> LinearOperator<T> for F {
    fn apply(&mut self, x: &[T], y: &mut [T]) {
        self(x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgOutcome {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` at exit (zero when `b = 0`).
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` starting from the contents of `x`.
///
/// The residual is recomputed from scratch before returning, so
/// `relative_residual` is the true residual, not the recurrence estimate.
/// If the true residual disagrees with the recurrence the iteration restarts
/// from the current iterate until `max_iters` is spent.
pub fn conjugate_gradient<T, A, M>(
    a: &mut A,
    m: &mut M,
    b: &[T],
    x: &mut [T],
    tol: T,
    max_iters: usize,
) -> CgOutcome
where
    T: Real,
    A: LinearOperator<T> + ?Sized,
    M: Preconditioner<T> + ?Sized,
{
    let n = b.len();
    assert_eq!(x.len(), n);
    let b_norm = dot(b, b).sqrt();
    if b_norm == T::zero() {
        x.fill(T::zero());
        return CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let target = tol * b_norm;

    let mut r = vec![T::zero(); n];
    let mut z = vec![T::zero(); n];
    let mut p = vec![T::zero(); n];
    let mut ap = vec![T::zero(); n];

    let true_residual = |a: &mut A, x: &[T], r: &mut [T], ap: &mut [T]| -> T {
        a.apply(x, ap);
        for ((ri, &bi), &ai) in r.iter_mut().zip(b).zip(ap.iter()) {
            *ri = bi - ai;
        }
        dot(r, r).sqrt()
    };

    let mut iterations = 0;
    let mut res = if x.iter().all(|v| *v == T::zero()) {
        r.copy_from_slice(b);
        b_norm
    } else {
        true_residual(a, x, &mut r, &mut ap)
    };

    'outer: while res > target && iterations < max_iters {
        m.apply(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        while iterations < max_iters {
            a.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > T::zero()) {
                break 'outer;
            }
            let step = rz / pap;
            axpy(step, &p, x);
            axpy(-step, &ap, &mut r);
            iterations += 1;
            if dot(&r, &r).sqrt() <= target {
                res = true_residual(a, x, &mut r, &mut ap);
                continue 'outer;
            }
            m.apply(&r, &mut z);
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for (pi, &zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        res = true_residual(a, x, &mut r, &mut ap);
    }

    let relative = (res / b_norm).as_f64();
    CgOutcome {
        iterations,
        relative_residual: relative,
        converged: res <= target,
    }
}
