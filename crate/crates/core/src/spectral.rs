//! Direct solver for `K K^T` via its Kronecker sum structure.
//!
//! `K K^T = (A A^T) (x) I_s + I_t (x) L_s`, where `A` is the temporal L1
//! block and `L_s` the Neumann Laplacian of the staggered differences. `L_s`
//! is diagonalised by the cosine basis in each direction and `A A^T` by a
//! dense symmetric eigendecomposition, so one solve costs two spatial and two
//! temporal basis changes plus a diagonal scaling.

use std::f64::consts::PI;

use crate::fracops::FractionalKernel;
use crate::grid::GridSpec;
use crate::krylov::Preconditioner;
use crate::scalar::{axpy, Real};

/// Cyclic Jacobi eigensolver for a dense symmetric matrix stored row-major.
///
/// Returns `(eigenvalues, eigenvectors)`; eigenvector `k` is column `k` of the
/// row-major `n x n` output.
pub fn symmetric_eigen<T: Real>(mut a: Vec<T>, n: usize) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), n * n);
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += a[i * n + i] * a[i * n + i];
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off <= eps * eps * diag {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = (t * t + T::one()).sqrt().recip();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eig = (0..n).map(|i| a[i * n + i]).collect();
    (eig, v)
}

/// Eigenpairs of the 1-D Neumann Laplacian `C C^T` with `n` cells of width `h`.
fn neumann_basis<T: Real>(n: usize, h: T) -> (Vec<T>, Vec<T>) {
    let nf = n as f64;
    let mut vals = Vec::with_capacity(n);
    let mut vecs = vec![T::zero(); n * n];
    for k in 0..n {
        let s = (PI * k as f64 / (2.0 * nf)).sin();
        vals.push(T::lit(4.0 * s * s) / (h * h));
        let c = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
        for i in 0..n {
            vecs[i * n + k] = T::lit(c * (PI * k as f64 * (i as f64 + 0.5) / nf).cos());
        }
    }
    (vals, vecs)
}

/// Dense `A A^T` (size `nt x nt`) for the L1 block `A` of the kernel.
pub fn temporal_gram<T: Real>(kernel: &FractionalKernel<T>) -> Vec<T> {
    let nt = kernel.nt();
    let w = kernel.generator();
    let c = kernel.coefficients();
    // row n (1-based) of A: column 0 -> -w[n-1], column k (1..=n) -> c[n-k]
    let entry = |n: usize, col: usize| -> T {
        if col == 0 {
            -w[n - 1]
        } else if col <= n {
            c[n - col]
        } else {
            T::zero()
        }
    };
    let mut g = vec![T::zero(); nt * nt];
    for a in 1..=nt {
        for b in a..=nt {
            let s: T = (0..=a).map(|col| entry(a, col) * entry(b, col)).sum();
            g[(a - 1) * nt + (b - 1)] = s;
            g[(b - 1) * nt + (a - 1)] = s;
        }
    }
    g
}

/// Exact inverse of `K K^T` for one grid and kernel.
#[derive(Clone, Debug)]
pub struct SpectralNormalSolver<T> {
    nx: usize,
    ny: usize,
    nt: usize,
    time_vals: Vec<T>,
    time_vecs: Vec<T>,
    x_vals: Vec<T>,
    x_vecs: Vec<T>,
    y_vals: Vec<T>,
    y_vecs: Vec<T>,
    work: Vec<T>,
    line: Vec<T>,
}

impl<T: Real> SpectralNormalSolver<T> {
    pub fn new(grid: &GridSpec<T>, kernel: &FractionalKernel<T>) -> Self {
        let nt = kernel.nt();
        let (time_vals, time_vecs) = symmetric_eigen(temporal_gram(kernel), nt);
        let (x_vals, x_vecs) = neumann_basis(grid.nx(), grid.dx());
        let (y_vals, y_vecs) = neumann_basis(grid.ny(), grid.dy());
        Self {
            nx: grid.nx(),
            ny: grid.ny(),
            nt,
            time_vals,
            time_vecs,
            x_vals,
            x_vecs,
            y_vals,
            y_vecs,
            work: vec![T::zero(); grid.sites() * nt],
            line: vec![T::zero(); grid.nx().max(grid.ny())],
        }
    }

    /// Smallest eigenvalue of `K K^T`.
    pub fn min_eigenvalue(&self) -> T {
        let t = self.time_vals.iter().copied().fold(T::infinity(), T::min);
        let x = self.x_vals.iter().copied().fold(T::infinity(), T::min);
        let y = self.y_vals.iter().copied().fold(T::infinity(), T::min);
        t + x + y
    }

    /// Applies the spatial basis (`forward`) or its transpose to one level in place.
    fn spatial(&mut self, level: &mut [T], forward: bool) {
        let (nx, ny) = (self.nx, self.ny);
        if nx > 1 {
            for j in 0..ny {
                let row = &mut level[j * nx..(j + 1) * nx];
                let line = &mut self.line[..nx];
                for (k, out) in line.iter_mut().enumerate() {
                    *out = if forward {
                        (0..nx).map(|i| self.x_vecs[i * nx + k] * row[i]).sum()
                    } else {
                        (0..nx).map(|i| self.x_vecs[k * nx + i] * row[i]).sum()
                    };
                }
                row.copy_from_slice(line);
            }
        }
        if ny > 1 {
            for i in 0..nx {
                let line = &mut self.line[..ny];
                for (l, out) in line.iter_mut().enumerate() {
                    *out = if forward {
                        (0..ny).map(|j| self.y_vecs[j * ny + l] * level[j * nx + i]).sum()
                    } else {
                        (0..ny).map(|j| self.y_vecs[l * ny + j] * level[j * nx + i]).sum()
                    };
                }
                for (j, v) in line.iter().enumerate() {
                    level[j * nx + i] = *v;
                }
            }
        }
    }

    /// `z = (K K^T)^{-1} r`.
    pub fn solve(&mut self, r: &[T], z: &mut [T]) {
        let sites = self.nx * self.ny;
        let nt = self.nt;
        assert_eq!(r.len(), sites * nt);
        assert_eq!(z.len(), sites * nt);

        z.copy_from_slice(r);
        for n in 0..nt {
            let mut level = std::mem::take(&mut self.work);
            level[..sites].copy_from_slice(&z[n * sites..(n + 1) * sites]);
            self.spatial(&mut level[..sites], true);
            z[n * sites..(n + 1) * sites].copy_from_slice(&level[..sites]);
            self.work = level;
        }

        // temporal basis change: work_m = sum_n V[n][m] z_n
        self.work.fill(T::zero());
        for n in 0..nt {
            let src = &z[n * sites..(n + 1) * sites];
            for m in 0..nt {
                let v = self.time_vecs[n * nt + m];
                axpy(v, src, &mut self.work[m * sites..(m + 1) * sites]);
            }
        }
        for m in 0..nt {
            let mu = self.time_vals[m];
            let block = &mut self.work[m * sites..(m + 1) * sites];
            for j in 0..self.ny {
                for i in 0..self.nx {
                    block[j * self.nx + i] /= mu + self.x_vals[i] + self.y_vals[j];
                }
            }
        }
        z.fill(T::zero());
        for n in 0..nt {
            let dst = &mut z[n * sites..(n + 1) * sites];
            for m in 0..nt {
                let v = self.time_vecs[n * nt + m];
                axpy(v, &self.work[m * sites..(m + 1) * sites], dst);
            }
        }

        for n in 0..nt {
            let mut level = std::mem::take(&mut self.work);
            level[..sites].copy_from_slice(&z[n * sites..(n + 1) * sites]);
            self.spatial(&mut level[..sites], false);
            z[n * sites..(n + 1) * sites].copy_from_slice(&level[..sites]);
            self.work = level;
        }
    }
}

impl<T: Real> Preconditioner<T> for SpectralNormalSolver<T> {
    fn apply(&mut self, r: &[T], z: &mut [T]) {
        self.solve(r, z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn jacobi_reconstructs_matrix() {
        let n = 5;
        let mut a = vec![0.0_f64; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = 1.0 / (1.0 + i as f64 + j as f64) + if i == j { 2.0 } else { 0.0 };
            }
        }
        let (vals, vecs) = symmetric_eigen(a.clone(), n);
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n).map(|k| vecs[i * n + k] * vals[k] * vecs[j * n + k]).sum();
                assert_relative_eq!(s, a[i * n + j], epsilon = 1e-13);
                let o: f64 = (0..n).map(|k| vecs[k * n + i] * vecs[k * n + j]).sum();
                assert_relative_eq!(o, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn neumann_basis_diagonalises_laplacian() {
        let n = 6;
        let h = 0.25;
        let (vals, vecs) = neumann_basis::<f64>(n, h);
        for k in 0..n {
            for i in 0..n {
                let left = if i > 0 { vecs[(i - 1) * n + k] } else { vecs[i * n + k] };
                let right = if i + 1 < n { vecs[(i + 1) * n + k] } else { vecs[i * n + k] };
                let lap = (2.0 * vecs[i * n + k] - left - right) / (h * h);
                assert_relative_eq!(lap, vals[k] * vecs[i * n + k], epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn euler_gram_is_tridiagonal() {
        let k = FractionalKernel::new(1.0_f64, 0.5, 3).unwrap();
        let g = temporal_gram(&k);
        let expected = [8.0, -4.0, 0.0, -4.0, 8.0, -4.0, 0.0, -4.0, 8.0];
        for (a, b) in g.iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-13);
        }
    }
}
