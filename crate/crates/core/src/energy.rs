//! Discrete cost functionals, the Lagrangian and optimality residuals.
//!
//! All sums are weighted by the space-time cell volume `dV = dx * dy * dt`.
//! Kinetic and `H` terms that touch a boundary face vanish because the flux
//! there is identically zero.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fracops::FractionalKernel;
use crate::grid::{FieldKind, FieldSet, GridSpec};
use crate::scalar::Real;
use crate::spaceops::{divergence_add, gradient_into};

/// Smallest density the solver keeps; every `P`-denominator is guarded by it.
pub const DENSITY_FLOOR: f64 = 1e-8;

/// Regularizer `R` in `F(p) = lambda_r R(p) + lambda_q Q p`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularizer {
    #[default]
    None,
    /// `R(p) = p^2 / 2`.
    Quadratic,
}

/// Interaction cost `F`. An empty `preference` means `Q = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteractionSpec<T> {
    pub lambda_r: T,
    pub lambda_q: T,
    pub regularizer: Regularizer,
    /// Cell-centred preference field `Q`, one value per spatial site.
    pub preference: Vec<T>,
}

impl<T: Real> Default for InteractionSpec<T> {
    fn default() -> Self {
        Self::none()
    }
}

impl<T: Real> InteractionSpec<T> {
    /// Pure transport: `F = 0`.
    pub fn none() -> Self {
        Self {
            lambda_r: T::zero(),
            lambda_q: T::zero(),
            regularizer: Regularizer::None,
            preference: Vec::new(),
        }
    }

    pub fn validate(&self, grid: &GridSpec<T>) -> Result<()> {
        if !(self.lambda_r >= T::zero() && self.lambda_r.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "lambda_r must be nonnegative, got {}",
                self.lambda_r
            )));
        }
        if !(self.lambda_q >= T::zero() && self.lambda_q.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "lambda_q must be nonnegative, got {}",
                self.lambda_q
            )));
        }
        if !self.preference.is_empty() {
            check_len("preference field", grid.sites(), self.preference.len())?;
        }
        Ok(())
    }

    /// True when `F` vanishes identically.
    pub fn is_trivial(&self) -> bool {
        let reg = self.regularizer == Regularizer::None || self.lambda_r == T::zero();
        let pref = self.preference.is_empty() || self.lambda_q == T::zero();
        reg && pref
    }

    #[inline]
    fn q(&self, site: usize) -> T {
        self.preference.get(site).copied().unwrap_or_else(T::zero)
    }

    /// `F(p)` at one spatial site.
    #[inline]
    pub fn value(&self, site: usize, p: T) -> T {
        let reg = match self.regularizer {
            Regularizer::None => T::zero(),
            Regularizer::Quadratic => T::lit(0.5) * p * p,
        };
        self.lambda_r * reg + self.lambda_q * self.q(site) * p
    }

    /// `dF/dp` at one spatial site.
    #[inline]
    pub fn derivative(&self, site: usize, p: T) -> T {
        let reg = match self.regularizer {
            Regularizer::None => T::zero(),
            Regularizer::Quadratic => p,
        };
        self.lambda_r * reg + self.lambda_q * self.q(site)
    }

    /// `d^2F/dp^2` (constant for the supported regularizers).
    #[inline]
    pub fn curvature(&self) -> T {
        match self.regularizer {
            Regularizer::None => T::zero(),
            Regularizer::Quadratic => self.lambda_r,
        }
    }
}

fn check_fields<T: Real>(grid: &GridSpec<T>, p: &[T], mx: &[T], my: &[T]) -> Result<()> {
    check_len("density", grid.field_len(FieldKind::Density), p.len())?;
    check_len("x-flux", grid.field_len(FieldKind::FluxX), mx.len())?;
    check_len("y-flux", grid.field_len(FieldKind::FluxY), my.len())
}

fn check_level<T: Real>(grid: &GridSpec<T>, i: usize, j: usize, n: usize) -> Result<()> {
    if i >= grid.nx() || j >= grid.ny() || n == 0 || n > grid.nt() {
        return Err(Error::IndexOutOfRange {
            kind: "cell",
            i,
            j,
            n,
        });
    }
    Ok(())
}

#[inline]
fn guarded_sum<T: Real>(a: T, b: T, i: usize, j: usize, n: usize) -> Result<T> {
    let s = a + b;
    if s > T::zero() {
        Ok(s)
    } else {
        Err(Error::DensityGuard {
            i,
            j,
            n,
            value: s.as_f64(),
        })
    }
}

/// Kinetic contribution of cell `(i, j)` at level `n >= 1`: its right x-face
/// and upper y-face, each `M^2 / (P + P_neighbour)`.
pub fn kinetic_term<T: Real>(
    grid: &GridSpec<T>,
    p: &[T],
    mx: &[T],
    my: &[T],
    i: usize,
    j: usize,
    n: usize,
) -> Result<T> {
    check_fields(grid, p, mx, my)?;
    check_level(grid, i, j, n)?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let pl = &p[n * nx * ny..(n + 1) * nx * ny];
    let mut total = T::zero();
    if i + 1 < nx {
        let m = mx[(n - 1) * (nx - 1) * ny + j * (nx - 1) + i];
        let s = guarded_sum(pl[j * nx + i], pl[j * nx + i + 1], i, j, n)?;
        total += m * m / s;
    }
    if j + 1 < ny {
        let m = my[(n - 1) * nx * (ny - 1) + j * nx + i];
        let s = guarded_sum(pl[j * nx + i], pl[(j + 1) * nx + i], i, j, n)?;
        total += m * m / s;
    }
    Ok(total)
}

/// `H` at cell `(i, j)`, level `n >= 1`: sum over its (up to four) interior
/// faces of `(M / (P + P_neighbour))^2`.
pub fn h_term<T: Real>(
    grid: &GridSpec<T>,
    p: &[T],
    mx: &[T],
    my: &[T],
    i: usize,
    j: usize,
    n: usize,
) -> Result<T> {
    check_fields(grid, p, mx, my)?;
    check_level(grid, i, j, n)?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let pl = &p[n * nx * ny..(n + 1) * nx * ny];
    let fx = &mx[(n - 1) * (nx - 1) * ny..n * (nx - 1) * ny];
    let fy = &my[(n - 1) * nx * (ny - 1)..n * nx * (ny - 1)];
    let c = j * nx + i;
    let mut h = T::zero();
    let mut face = |m: T, a: T, b: T| -> Result<()> {
        let s = guarded_sum(a, b, i, j, n)?;
        let q = m / s;
        h += q * q;
        Ok(())
    };
    if i + 1 < nx {
        face(fx[j * (nx - 1) + i], pl[c], pl[c + 1])?;
    }
    if i > 0 {
        face(fx[j * (nx - 1) + i - 1], pl[c - 1], pl[c])?;
    }
    if j + 1 < ny {
        face(fy[j * nx + i], pl[c], pl[c + nx])?;
    }
    if j > 0 {
        face(fy[(j - 1) * nx + i], pl[c - nx], pl[c])?;
    }
    Ok(h)
}

/// `H` for every site of one level. `pl` is the density level, `fx`/`fy` the
/// matching flux levels. Denominators are not checked.
pub(crate) fn h_level<T: Real>(grid: &GridSpec<T>, pl: &[T], fx: &[T], fy: &[T], out: &mut [T]) {
    let (nx, ny) = (grid.nx(), grid.ny());
    out.fill(T::zero());
    if nx > 1 {
        for j in 0..ny {
            let row = &pl[j * nx..(j + 1) * nx];
            let faces = &fx[j * (nx - 1)..(j + 1) * (nx - 1)];
            let dst = &mut out[j * nx..(j + 1) * nx];
            for (f, &m) in faces.iter().enumerate() {
                let q = m / (row[f] + row[f + 1]);
                let q2 = q * q;
                dst[f] += q2;
                dst[f + 1] += q2;
            }
        }
    }
    for g in 0..ny.saturating_sub(1) {
        for i in 0..nx {
            let m = fy[g * nx + i];
            let q = m / (pl[g * nx + i] + pl[(g + 1) * nx + i]);
            let q2 = q * q;
            out[g * nx + i] += q2;
            out[(g + 1) * nx + i] += q2;
        }
    }
}

/// `H` on all levels `1..=nt`, time-major, with guards.
pub fn h_field<T: Real>(grid: &GridSpec<T>, p: &[T], mx: &[T], my: &[T]) -> Result<Vec<T>> {
    check_fields(grid, p, mx, my)?;
    check_floor(grid, p, 1, grid.nt(), T::zero())?;
    let sites = grid.sites();
    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);
    let mut out = vec![T::zero(); sites * grid.nt()];
    for n in 1..=grid.nt() {
        h_level(
            grid,
            &p[n * sites..(n + 1) * sites],
            &mx[(n - 1) * bx..n * bx],
            &my[(n - 1) * by..n * by],
            &mut out[(n - 1) * sites..n * sites],
        );
    }
    Ok(out)
}

/// Fails with a guard error if any density on levels `first..=last` is not
/// above `bound`.
pub(crate) fn check_floor<T: Real>(
    grid: &GridSpec<T>,
    p: &[T],
    first: usize,
    last: usize,
    bound: T,
) -> Result<()> {
    let sites = grid.sites();
    for n in first..=last {
        for (s, &v) in p[n * sites..(n + 1) * sites].iter().enumerate() {
            if !(v > bound) {
                return Err(Error::DensityGuard {
                    i: s % grid.nx(),
                    j: s / grid.nx(),
                    n,
                    value: v.as_f64(),
                });
            }
        }
    }
    Ok(())
}

fn kinetic_sum<T: Real>(grid: &GridSpec<T>, p: &[T], mx: &[T], my: &[T]) -> Result<T> {
    check_floor(grid, p, 1, grid.nt(), T::zero())?;
    let (nx, ny) = (grid.nx(), grid.ny());
    let sites = grid.sites();
    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);
    let mut total = T::zero();
    for n in 1..=grid.nt() {
        let pl = &p[n * sites..(n + 1) * sites];
        let fx = &mx[(n - 1) * bx..n * bx];
        let fy = &my[(n - 1) * by..n * by];
        if nx > 1 {
            for j in 0..ny {
                for f in 0..nx - 1 {
                    let m = fx[j * (nx - 1) + f];
                    total += m * m / (pl[j * nx + f] + pl[j * nx + f + 1]);
                }
            }
        }
        for g in 0..ny.saturating_sub(1) {
            for i in 0..nx {
                let m = fy[g * nx + i];
                total += m * m / (pl[g * nx + i] + pl[(g + 1) * nx + i]);
            }
        }
    }
    Ok(total)
}

fn interaction_sum<T: Real>(grid: &GridSpec<T>, interaction: &InteractionSpec<T>, p: &[T]) -> T {
    if interaction.is_trivial() {
        return T::zero();
    }
    let sites = grid.sites();
    (1..=grid.nt())
        .flat_map(|n| (0..sites).map(move |s| (n, s)))
        .map(|(n, s)| interaction.value(s, p[n * sites + s]))
        .sum()
}

/// The discrete transport objective `dV * sum L` over levels `1..=nt`.
pub fn kinetic_energy<T: Real>(grid: &GridSpec<T>, p: &[T], mx: &[T], my: &[T]) -> Result<T> {
    check_fields(grid, p, mx, my)?;
    Ok(grid.cell_volume() * kinetic_sum(grid, p, mx, my)?)
}

/// Discrete Lagrangian `dV * sum_n sum_ij [L + F(P) + Phi (K U)]`.
pub fn lagrangian<T: Real>(
    grid: &GridSpec<T>,
    kernel: &FractionalKernel<T>,
    interaction: &InteractionSpec<T>,
    fields: &FieldSet<T>,
) -> Result<T> {
    fields.check_shape(grid)?;
    let FieldSet { p, mx, my, phi } = fields;
    let kinetic = kinetic_sum(grid, p, mx, my)?;
    let sites = grid.sites();
    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);
    let mut r = vec![T::zero(); sites * grid.nt()];
    kernel.forward_blocks(p, sites, &mut r);
    for (n, dst) in r.chunks_exact_mut(sites).enumerate() {
        divergence_add(grid, &mx[n * bx..(n + 1) * bx], &my[n * by..(n + 1) * by], dst);
    }
    let coupling: T = r.iter().zip(phi).map(|(a, b)| *a * *b).sum();
    Ok(grid.cell_volume() * (kinetic + interaction_sum(grid, interaction, p) + coupling))
}

/// The same Lagrangian after summation by parts: the multiplier acts through
/// the backward operator, the initial-density tail and the face gradients.
pub fn lagrangian_adjoint_form<T: Real>(
    grid: &GridSpec<T>,
    kernel: &FractionalKernel<T>,
    interaction: &InteractionSpec<T>,
    fields: &FieldSet<T>,
) -> Result<T> {
    fields.check_shape(grid)?;
    let FieldSet { p, mx, my, phi } = fields;
    let kinetic = kinetic_sum(grid, p, mx, my)?;
    let sites = grid.sites();
    let nt = grid.nt();
    let mut back = vec![T::zero(); sites * nt];
    kernel.backward_blocks(phi, sites, &mut back);
    let mut tail = vec![T::zero(); sites];
    kernel.tail_blocks(phi, sites, &mut tail);
    let mut coupling: T = back.iter().zip(&p[sites..]).map(|(a, b)| *a * *b).sum();
    coupling -= tail.iter().zip(&p[..sites]).map(|(a, b)| *a * *b).sum::<T>();

    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);
    let mut gx = vec![T::zero(); bx];
    let mut gy = vec![T::zero(); by];
    for n in 0..nt {
        gradient_into(grid, &phi[n * sites..(n + 1) * sites], &mut gx, &mut gy);
        coupling -= gx.iter().zip(&mx[n * bx..(n + 1) * bx]).map(|(a, b)| *a * *b).sum::<T>();
        coupling -= gy.iter().zip(&my[n * by..(n + 1) * by]).map(|(a, b)| *a * *b).sum::<T>();
    }
    Ok(grid.cell_volume() * (kinetic + interaction_sum(grid, interaction, p) + coupling))
}

/// Closed-form partial derivatives of the Lagrangian.
#[derive(Clone, Debug, PartialEq)]
pub struct LagrangianGradient<T> {
    /// `dV (-H + F'(P) + backward(Phi))` on levels `1..=nt`.
    pub p: Vec<T>,
    /// `dV (2 M / (P + P') - grad Phi)` on interior faces.
    pub mx: Vec<T>,
    pub my: Vec<T>,
}

pub fn lagrangian_gradient<T: Real>(
    grid: &GridSpec<T>,
    kernel: &FractionalKernel<T>,
    interaction: &InteractionSpec<T>,
    fields: &FieldSet<T>,
) -> Result<LagrangianGradient<T>> {
    fields.check_shape(grid)?;
    let FieldSet { p, mx, my, phi } = fields;
    let h = h_field(grid, p, mx, my)?;
    let sites = grid.sites();
    let nt = grid.nt();
    let dv = grid.cell_volume();
    let mut gp = vec![T::zero(); sites * nt];
    kernel.backward_blocks(phi, sites, &mut gp);
    for (idx, v) in gp.iter_mut().enumerate() {
        let s = idx % sites;
        let pv = p[sites + idx];
        *v = dv * (*v - h[idx] + interaction.derivative(s, pv));
    }
    let (gmx, gmy) = flux_relation(grid, p, mx, my, phi);
    Ok(LagrangianGradient {
        p: gp,
        mx: gmx.into_iter().map(|v| dv * v).collect(),
        my: gmy.into_iter().map(|v| dv * v).collect(),
    })
}

/// `2 M / (P + P') - grad Phi` on every interior face and level.
fn flux_relation<T: Real>(
    grid: &GridSpec<T>,
    p: &[T],
    mx: &[T],
    my: &[T],
    phi: &[T],
) -> (Vec<T>, Vec<T>) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let sites = grid.sites();
    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);
    let two = T::lit(2.0);
    let mut rx = vec![T::zero(); mx.len()];
    let mut ry = vec![T::zero(); my.len()];
    for n in 1..=grid.nt() {
        let pl = &p[n * sites..(n + 1) * sites];
        let gx = &mut rx[(n - 1) * bx..n * bx];
        let gy = &mut ry[(n - 1) * by..n * by];
        gradient_into(grid, &phi[(n - 1) * sites..n * sites], gx, gy);
        for j in 0..ny {
            for f in 0..nx.saturating_sub(1) {
                let k = j * (nx - 1) + f;
                let s = pl[j * nx + f] + pl[j * nx + f + 1];
                gx[k] = two * mx[(n - 1) * bx + k] / s - gx[k];
            }
        }
        for g in 0..ny.saturating_sub(1) {
            for i in 0..nx {
                let k = g * nx + i;
                let s = pl[g * nx + i] + pl[(g + 1) * nx + i];
                gy[k] = two * my[(n - 1) * by + k] / s - gy[k];
            }
        }
    }
    (rx, ry)
}

/// Norms of the four blocks of the discrete optimality system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Transport equation `D_t P + div M`.
    pub transport: f64,
    /// Backward Hamilton-Jacobi equation `backward(Phi) + F'(P) - H` on the
    /// free levels `1..nt-1`, projected where the density sits on the floor.
    pub hamilton_jacobi: f64,
    pub flux_x: f64,
    pub flux_y: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.transport
            .max(self.hamilton_jacobi)
            .max(self.flux_x)
            .max(self.flux_y)
    }
}

/// Discrete optimality residuals in the `dV`-weighted L2 norm.
///
/// `floor` is the density bound used by the solver: at sites where
/// `P <= floor` only the part of the Hamilton-Jacobi residual that would push
/// the density further down counts as violation.
pub fn kkt_residuals<T: Real>(
    grid: &GridSpec<T>,
    kernel: &FractionalKernel<T>,
    interaction: &InteractionSpec<T>,
    fields: &FieldSet<T>,
    floor: T,
) -> Result<KktResiduals> {
    fields.check_shape(grid)?;
    let FieldSet { p, mx, my, phi } = fields;
    let sites = grid.sites();
    let nt = grid.nt();
    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);

    let mut r = vec![T::zero(); sites * nt];
    kernel.forward_blocks(p, sites, &mut r);
    for (n, dst) in r.chunks_exact_mut(sites).enumerate() {
        divergence_add(grid, &mx[n * bx..(n + 1) * bx], &my[n * by..(n + 1) * by], dst);
    }
    let transport = discrete_l2(grid, &r);

    let h = h_field(grid, p, mx, my)?;
    let mut back = vec![T::zero(); sites * nt];
    kernel.backward_blocks(phi, sites, &mut back);
    let mut hj = Vec::with_capacity(sites * nt.saturating_sub(1));
    for idx in 0..sites * nt.saturating_sub(1) {
        let pv = p[sites + idx];
        let v = back[idx] + interaction.derivative(idx % sites, pv) - h[idx];
        hj.push(if pv <= floor { v.min(T::zero()) } else { v });
    }
    let hamilton_jacobi = discrete_l2(grid, &hj);

    let (rx, ry) = flux_relation(grid, p, mx, my, phi);
    Ok(KktResiduals {
        transport,
        hamilton_jacobi,
        flux_x: discrete_l2(grid, &rx),
        flux_y: discrete_l2(grid, &ry),
    })
}

/// `sqrt(dV * sum v^2)`.
pub fn discrete_l2<T: Real>(grid: &GridSpec<T>, values: &[T]) -> f64 {
    let s: T = values.iter().map(|v| *v * *v).sum();
    (grid.cell_volume() * s).sqrt().as_f64()
}

/// `sum_ij P_ij dx dy` at level `n`.
pub fn total_mass<T: Real>(grid: &GridSpec<T>, p: &[T], n: usize) -> Result<T> {
    check_len("density", grid.field_len(FieldKind::Density), p.len())?;
    if n > grid.nt() {
        return Err(Error::IndexOutOfRange {
            kind: "time level",
            i: 0,
            j: 0,
            n,
        });
    }
    let sites = grid.sites();
    Ok(cell_mass(grid, &p[n * sites..(n + 1) * sites]))
}

/// Mass of one cell-centred level.
pub fn cell_mass<T: Real>(grid: &GridSpec<T>, level: &[T]) -> T {
    level.iter().copied().sum::<T>() * grid.cell_area()
}
