//! Staggered differences and the matrix-free constraint operator.
//!
//! `K U = D_t P + div M` maps the primal unknowns `U = (P, Mx, My)` to the
//! transport residual on the multiplier grid. `K` is never assembled: the
//! temporal part is the L1 convolution of [`FractionalKernel`], the spatial
//! part two-point stencils with zero boundary fluxes.

use crate::error::{check_len, Result};
use crate::fracops::FractionalKernel;
use crate::grid::{FieldKind, GridSpec};
use crate::scalar::Real;

/// Adds the staggered divergence of one time level to `out`.
pub fn divergence_add<T: Real>(grid: &GridSpec<T>, mx: &[T], my: &[T], out: &mut [T]) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let inv_dx = grid.dx().recip();
    let inv_dy = grid.dy().recip();
    if nx > 1 {
        for j in 0..ny {
            let faces = &mx[j * (nx - 1)..(j + 1) * (nx - 1)];
            let row = &mut out[j * nx..(j + 1) * nx];
            for (f, &m) in faces.iter().enumerate() {
                let v = m * inv_dx;
                row[f] += v;
                row[f + 1] -= v;
            }
        }
    }
    for g in 0..ny.saturating_sub(1) {
        let faces = &my[g * nx..(g + 1) * nx];
        let (lower, upper) = out.split_at_mut((g + 1) * nx);
        let lower = &mut lower[g * nx..];
        for i in 0..nx {
            let v = faces[i] * inv_dy;
            lower[i] += v;
            upper[i] -= v;
        }
    }
}

/// Staggered divergence of one time level, zero flux on the boundary.
pub fn divergence<T: Real>(grid: &GridSpec<T>, mx: &[T], my: &[T]) -> Result<Vec<T>> {
    check_len("x-flux level", grid.block_len(FieldKind::FluxX), mx.len())?;
    check_len("y-flux level", grid.block_len(FieldKind::FluxY), my.len())?;
    let mut out = vec![T::zero(); grid.sites()];
    divergence_add(grid, mx, my, &mut out);
    Ok(out)
}

/// Forward differences of a cell field onto interior faces, written into
/// `gx` (x-faces) and `gy` (y-faces).
pub fn gradient_into<T: Real>(grid: &GridSpec<T>, phi: &[T], gx: &mut [T], gy: &mut [T]) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let inv_dx = grid.dx().recip();
    let inv_dy = grid.dy().recip();
    if nx > 1 {
        for j in 0..ny {
            let row = &phi[j * nx..(j + 1) * nx];
            let dst = &mut gx[j * (nx - 1)..(j + 1) * (nx - 1)];
            for (f, d) in dst.iter_mut().enumerate() {
                *d = (row[f + 1] - row[f]) * inv_dx;
            }
        }
    }
    for g in 0..ny.saturating_sub(1) {
        let lo = &phi[g * nx..(g + 1) * nx];
        let hi = &phi[(g + 1) * nx..(g + 2) * nx];
        let dst = &mut gy[g * nx..(g + 1) * nx];
        for i in 0..nx {
            dst[i] = (hi[i] - lo[i]) * inv_dy;
        }
    }
}

/// Face gradient of one multiplier level; the negative adjoint of [`divergence`].
pub fn gradient_adjoint<T: Real>(grid: &GridSpec<T>, phi: &[T]) -> Result<(Vec<T>, Vec<T>)> {
    check_len("cell level", grid.sites(), phi.len())?;
    let mut gx = vec![T::zero(); grid.block_len(FieldKind::FluxX)];
    let mut gy = vec![T::zero(); grid.block_len(FieldKind::FluxY)];
    gradient_into(grid, phi, &mut gx, &mut gy);
    Ok((gx, gy))
}

/// The constraint operator `K` for one grid and fractional order.
#[derive(Clone, Debug)]
pub struct ConstraintOperator<T> {
    grid: GridSpec<T>,
    kernel: FractionalKernel<T>,
}

impl<T: Real> ConstraintOperator<T> {
    pub fn new(grid: GridSpec<T>, alpha: T) -> Result<Self> {
        let kernel = FractionalKernel::new(alpha, grid.dt(), grid.nt())?;
        Ok(Self { grid, kernel })
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec<T> {
        &self.grid
    }
    #[inline]
    pub fn kernel(&self) -> &FractionalKernel<T> {
        &self.kernel
    }

    /// Length of the residual / multiplier vector, `nx * ny * nt`.
    pub fn range_len(&self) -> usize {
        self.grid.field_len(FieldKind::Multiplier)
    }

    fn check_primal(&self, p: &[T], mx: &[T], my: &[T]) -> Result<()> {
        let g = &self.grid;
        check_len("density", g.field_len(FieldKind::Density), p.len())?;
        check_len("x-flux", g.field_len(FieldKind::FluxX), mx.len())?;
        check_len("y-flux", g.field_len(FieldKind::FluxY), my.len())
    }

    /// `out = K (p, mx, my)`.
    pub fn apply_k(&self, p: &[T], mx: &[T], my: &[T], out: &mut [T]) -> Result<()> {
        self.check_primal(p, mx, my)?;
        check_len("residual", self.range_len(), out.len())?;
        self.apply_k_unchecked(p, mx, my, out);
        Ok(())
    }

    pub(crate) fn apply_k_unchecked(&self, p: &[T], mx: &[T], my: &[T], out: &mut [T]) {
        let g = &self.grid;
        let sites = g.sites();
        let bx = g.block_len(FieldKind::FluxX);
        let by = g.block_len(FieldKind::FluxY);
        self.kernel.forward_blocks(p, sites, out);
        for (n, dst) in out.chunks_exact_mut(sites).enumerate() {
            divergence_add(
                g,
                &mx[n * bx..(n + 1) * bx],
                &my[n * by..(n + 1) * by],
                dst,
            );
        }
    }

    /// `(p, mx, my) = K^T r`.
    pub fn apply_kt(&self, r: &[T], p: &mut [T], mx: &mut [T], my: &mut [T]) -> Result<()> {
        check_len("residual", self.range_len(), r.len())?;
        self.check_primal(p, mx, my)?;
        self.apply_kt_unchecked(r, p, mx, my);
        Ok(())
    }

    pub(crate) fn apply_kt_unchecked(&self, r: &[T], p: &mut [T], mx: &mut [T], my: &mut [T]) {
        let g = &self.grid;
        let sites = g.sites();
        let bx = g.block_len(FieldKind::FluxX);
        let by = g.block_len(FieldKind::FluxY);
        let (p0, rest) = p.split_at_mut(sites);
        self.kernel.tail_blocks(r, sites, p0);
        for v in p0.iter_mut() {
            *v = -*v;
        }
        self.kernel.backward_blocks(r, sites, rest);
        for (n, level) in r.chunks_exact(sites).enumerate() {
            let gx = &mut mx[n * bx..(n + 1) * bx];
            let gy = &mut my[n * by..(n + 1) * by];
            gradient_into(g, level, gx, gy);
            gx.iter_mut().for_each(|v| *v = -*v);
            gy.iter_mut().for_each(|v| *v = -*v);
        }
    }

    /// Allocating convenience wrapper around [`Self::apply_kt`].
    pub fn kt(&self, r: &[T]) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
        let g = &self.grid;
        let mut p = vec![T::zero(); g.field_len(FieldKind::Density)];
        let mut mx = vec![T::zero(); g.field_len(FieldKind::FluxX)];
        let mut my = vec![T::zero(); g.field_len(FieldKind::FluxY)];
        self.apply_kt(r, &mut p, &mut mx, &mut my)?;
        Ok((p, mx, my))
    }

    /// Allocating convenience wrapper around [`Self::apply_k`].
    pub fn k(&self, p: &[T], mx: &[T], my: &[T]) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.range_len()];
        self.apply_k(p, mx, my, &mut out)?;
        Ok(out)
    }

    /// `K K^T r`, allocating its own scratch.
    pub fn apply_kkt(&self, r: &[T]) -> Result<Vec<T>> {
        let mut op = NormalOperator::new(self);
        check_len("multiplier", self.range_len(), r.len())?;
        let mut out = vec![T::zero(); r.len()];
        op.apply(r, &mut out);
        Ok(out)
    }
}

/// `K K^T` with reusable scratch space, for repeated use inside Krylov solves.
#[derive(Debug)]
pub struct NormalOperator<'a, T> {
    op: &'a ConstraintOperator<T>,
    p: Vec<T>,
    mx: Vec<T>,
    my: Vec<T>,
}

impl<'a, T: Real> NormalOperator<'a, T> {
    pub fn new(op: &'a ConstraintOperator<T>) -> Self {
        let g = op.grid();
        Self {
            op,
            p: vec![T::zero(); g.field_len(FieldKind::Density)],
            mx: vec![T::zero(); g.field_len(FieldKind::FluxX)],
            my: vec![T::zero(); g.field_len(FieldKind::FluxY)],
        }
    }

    pub fn apply(&mut self, x: &[T], y: &mut [T]) {
        self.op
            .apply_kt_unchecked(x, &mut self.p, &mut self.mx, &mut self.my);
        self.op.apply_k_unchecked(&self.p, &self.mx, &self.my, y);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::dot;
    use approx::assert_relative_eq;

    #[test]
    fn divergence_examples() {
        let g = GridSpec::<f64>::one_d(3, 1, 0.0, 1.0, 1.0).unwrap();
        let d = divergence(&g, &[1.0, 1.0], &[]).unwrap();
        assert_relative_eq!(d[0], 3.0, max_relative = 1e-14);
        assert_relative_eq!(d[1], 0.0);
        assert_relative_eq!(d[2], -3.0, max_relative = 1e-14);
        assert!(divergence(&g, &[1.0], &[]).is_err());

        let g = GridSpec::<f64>::unit(3, 2, 1).unwrap();
        let zero = divergence(&g, &[0.0; 4], &[0.0; 3]).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_examples() {
        let g = GridSpec::<f64>::one_d(3, 1, 0.0, 1.0, 1.0).unwrap();
        let phi: Vec<f64> = (0..3).map(|i| g.x_center(i)).collect();
        let (gx, gy) = gradient_adjoint(&g, &phi).unwrap();
        assert!(gy.is_empty());
        for v in gx {
            assert_relative_eq!(v, 1.0, max_relative = 1e-13);
        }
        let g = GridSpec::<f64>::unit(3, 3, 1).unwrap();
        let (gx, gy) = gradient_adjoint(&g, &[2.5; 9]).unwrap();
        assert!(gx.iter().chain(&gy).all(|&v| v == 0.0));
    }

    #[test]
    fn constants_in_time_are_feasible() {
        let g = GridSpec::<f64>::unit(3, 2, 4).unwrap();
        let op = ConstraintOperator::new(g.clone(), 0.6).unwrap();
        let p: Vec<f64> = (0..g.field_len(FieldKind::Density))
            .map(|k| 1.0 + (k % g.sites()) as f64)
            .collect();
        let mx = vec![0.0; g.field_len(FieldKind::FluxX)];
        let my = vec![0.0; g.field_len(FieldKind::FluxY)];
        let r = op.k(&p, &mx, &my).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn transpose_pairing_small() {
        let g = GridSpec::<f64>::unit(3, 2, 3).unwrap();
        let op = ConstraintOperator::new(g.clone(), 0.4).unwrap();
        let wave = |k: usize, s: f64| ((k as f64) * s).sin();
        let p: Vec<f64> = (0..g.field_len(FieldKind::Density)).map(|k| wave(k, 0.7)).collect();
        let mx: Vec<f64> = (0..g.field_len(FieldKind::FluxX)).map(|k| wave(k, 1.3)).collect();
        let my: Vec<f64> = (0..g.field_len(FieldKind::FluxY)).map(|k| wave(k, 2.1)).collect();
        let r: Vec<f64> = (0..op.range_len()).map(|k| wave(k, 0.37)).collect();
        let ku = op.k(&p, &mx, &my).unwrap();
        let (tp, tx, ty) = op.kt(&r).unwrap();
        let lhs = dot(&ku, &r);
        let rhs = dot(&p, &tp) + dot(&mx, &tx) + dot(&my, &ty);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);

        let zero = op.kt(&vec![0.0; op.range_len()]).unwrap();
        assert!(zero.0.iter().chain(&zero.1).chain(&zero.2).all(|&v| v == 0.0));
        assert!(op.apply_kkt(&[1.0]).is_err());
    }
}
