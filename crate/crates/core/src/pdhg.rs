//! Preconditioned primal-dual hybrid gradient iteration.
//!
//! One step updates the fluxes by their closed-form proximal map, takes a
//! projected gradient step in the density, and moves the multiplier along
//! `(K K^T)^{-1} K U` followed by the usual extrapolation. The endpoint
//! density levels never change.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::energy::{h_level, kkt_residuals, InteractionSpec, KktResiduals, DENSITY_FLOOR};
use crate::error::{check_len, Error, Result};
use crate::fracops::FractionalKernel;
use crate::grid::{FieldKind, FieldSet, GridSpec};
use crate::krylov::{conjugate_gradient, CgOutcome, Identity, LinearOperator};
use crate::problems::ProblemSpec;
use crate::scalar::{dot, Real};
use crate::spaceops::{divergence_add, gradient_into, ConstraintOperator, NormalOperator};
use crate::spectral::SpectralNormalSolver;

/// How the density step treats the kinetic term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityStep {
    /// Explicit gradient step with `H` evaluated at the current density.
    #[default]
    Linearized,
    /// Each cell solves its own update with its new density inside `H`
    /// (neighbours held at their current values). Same fixed points as the
    /// linearized step; stays bounded where a near-empty cell meets a large
    /// flux.
    SemiImplicit,
}

/// Initial value of the fluxes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxInit {
    #[default]
    Ones,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub sigma_m: f64,
    pub sigma_phi: f64,
    pub max_iters: usize,
    /// Threshold on `|U_new - U_old| / |U_new|`.
    pub tol_change: f64,
    /// Threshold on the weighted L2 norm of `K U`.
    pub tol_constraint: f64,
    /// Relative residual required from each `K K^T` solve.
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    pub density_floor: f64,
    /// Evaluate `H` in the density step with the previous fluxes instead of
    /// the freshly updated ones.
    pub lagged_h: bool,
    pub density_step: DensityStep,
    pub flux_init: FluxInit,
    /// Start each `K K^T` solve from the exact Kronecker solve. Without it
    /// plain CG is warm-started from the previous step's solution.
    pub spectral_solve: bool,
    /// Record the Lagrangian every this many iterations (0 disables it).
    pub history_stride: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            sigma_m: 0.1,
            sigma_phi: 0.05,
            max_iters: 100_000,
            tol_change: 1e-6,
            tol_constraint: 1e-6,
            cg_tol: 1e-10,
            cg_max_iters: 500,
            density_floor: DENSITY_FLOOR,
            lagged_h: false,
            density_step: DensityStep::Linearized,
            flux_init: FluxInit::Ones,
            spectral_solve: true,
            history_stride: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sigma_m > 0.0 && self.sigma_phi > 0.0) {
            return bad(format!(
                "step sizes must be positive, got sigma_m = {}, sigma_phi = {}",
                self.sigma_m, self.sigma_phi
            ));
        }
        if !(self.sigma_m * self.sigma_phi < 1.0) {
            return bad(format!(
                "need sigma_m * sigma_phi < 1, got {}",
                self.sigma_m * self.sigma_phi
            ));
        }
        for (name, v) in [("tol_change", self.tol_change), ("tol_constraint", self.tol_constraint)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("cg_tol", self.cg_tol),
            ("density_floor", self.density_floor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.max_iters == 0 || self.cg_max_iters == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
}

/// Inner solve statistics accumulated over a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CgStats {
    pub solves: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    /// Worst `|K K^T z - K U| / |K U|` seen.
    pub worst_relative_residual: f64,
    /// Solves that missed `cg_tol` within the cap.
    pub failures: usize,
}

impl CgStats {
    fn record(&mut self, out: &CgOutcome) {
        self.solves += 1;
        self.total_iterations += out.iterations;
        self.max_iterations = self.max_iterations.max(out.iterations);
        self.worst_relative_residual = self.worst_relative_residual.max(out.relative_residual);
        if !out.converged {
            self.failures += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// `(iteration, value)` pairs, sampled every `history_stride` iterations.
    pub lagrangian_history: Vec<(usize, f64)>,
    /// Weighted L2 norm of `K U` after every iteration.
    pub constraint_residual_history: Vec<f64>,
    pub final_relative_change: f64,
    pub kkt_residuals: KktResiduals,
    pub cg_stats: CgStats,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.stop_reason == StopReason::Converged
    }

    pub fn final_constraint_residual(&self) -> f64 {
        self.constraint_residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

/// Stopping rule: both the relative change and the constraint residual must
/// be strictly below their thresholds; otherwise stop at the cap.
pub fn stop_check(
    config: &SolverConfig,
    iterations: usize,
    relative_change: f64,
    constraint_residual: f64,
) -> Option<StopReason> {
    if relative_change < config.tol_change && constraint_residual < config.tol_constraint {
        Some(StopReason::Converged)
    } else if iterations >= config.max_iters {
        Some(StopReason::MaxIters)
    } else {
        None
    }
}

/// Proximal flux update on every interior face, in place:
/// `M <- (M + sigma_m grad(phi_bar)) / (2 sigma_m / (P + P') + 1)`.
///
/// `p` is the full density (levels `0..=nt`) from the previous iterate.
pub fn update_fluxes<T: Real>(
    grid: &GridSpec<T>,
    p: &[T],
    mx: &mut [T],
    my: &mut [T],
    phi_bar: &[T],
    sigma_m: T,
) -> Result<()> {
    check_len("density", grid.field_len(FieldKind::Density), p.len())?;
    check_len("x-flux", grid.field_len(FieldKind::FluxX), mx.len())?;
    check_len("y-flux", grid.field_len(FieldKind::FluxY), my.len())?;
    check_len("multiplier", grid.field_len(FieldKind::Multiplier), phi_bar.len())?;
    crate::energy::check_floor(grid, p, 1, grid.nt(), T::zero())?;
    let mut gx = vec![T::zero(); grid.block_len(FieldKind::FluxX)];
    let mut gy = vec![T::zero(); grid.block_len(FieldKind::FluxY)];
    fluxes_unchecked(grid, p, mx, my, phi_bar, sigma_m, &mut gx, &mut gy);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn fluxes_unchecked<T: Real>(
    grid: &GridSpec<T>,
    p: &[T],
    mx: &mut [T],
    my: &mut [T],
    phi_bar: &[T],
    sigma_m: T,
    gx: &mut [T],
    gy: &mut [T],
) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let sites = grid.sites();
    let bx = gx.len();
    let by = gy.len();
    let two_sigma = T::lit(2.0) * sigma_m;
    for n in 1..=grid.nt() {
        let pl = &p[n * sites..(n + 1) * sites];
        gradient_into(grid, &phi_bar[(n - 1) * sites..n * sites], gx, gy);
        let fx = &mut mx[(n - 1) * bx..n * bx];
        for j in 0..ny {
            for f in 0..nx.saturating_sub(1) {
                let k = j * (nx - 1) + f;
                let s = pl[j * nx + f] + pl[j * nx + f + 1];
                fx[k] = (fx[k] + sigma_m * gx[k]) / (two_sigma / s + T::one());
            }
        }
        let fy = &mut my[(n - 1) * by..n * by];
        for g in 0..ny.saturating_sub(1) {
            for i in 0..nx {
                let k = g * nx + i;
                let s = pl[g * nx + i] + pl[(g + 1) * nx + i];
                fy[k] = (fy[k] + sigma_m * gy[k]) / (two_sigma / s + T::one());
            }
        }
    }
}

/// Projected gradient step on the free density levels `1..nt-1`, in place:
/// `P <- max(floor, P + sigma_m (H - F'(P) - backward(phi_bar)))`.
///
/// `H` is built from `p` as passed in and the fluxes `h_mx`, `h_my`.
#[allow(clippy::too_many_arguments)]
pub fn update_density<T: Real>(
    grid: &GridSpec<T>,
    kernel: &FractionalKernel<T>,
    interaction: &InteractionSpec<T>,
    p: &mut [T],
    h_mx: &[T],
    h_my: &[T],
    phi_bar: &[T],
    sigma_m: T,
    floor: T,
    step: DensityStep,
) -> Result<()> {
    check_len("density", grid.field_len(FieldKind::Density), p.len())?;
    check_len("x-flux", grid.field_len(FieldKind::FluxX), h_mx.len())?;
    check_len("y-flux", grid.field_len(FieldKind::FluxY), h_my.len())?;
    check_len("multiplier", grid.field_len(FieldKind::Multiplier), phi_bar.len())?;
    crate::energy::check_floor(grid, p, 1, grid.nt(), T::zero())?;
    let mut back = vec![T::zero(); phi_bar.len()];
    let mut h = vec![T::zero(); grid.sites()];
    density_unchecked(
        grid, kernel, interaction, p, h_mx, h_my, phi_bar, sigma_m, floor, step, &mut back, &mut h,
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn density_unchecked<T: Real>(
    grid: &GridSpec<T>,
    kernel: &FractionalKernel<T>,
    interaction: &InteractionSpec<T>,
    p: &mut [T],
    h_mx: &[T],
    h_my: &[T],
    phi_bar: &[T],
    sigma_m: T,
    floor: T,
    step: DensityStep,
    back: &mut [T],
    h: &mut [T],
) {
    let sites = grid.sites();
    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);
    kernel.backward_blocks(phi_bar, sites, back);
    if step == DensityStep::SemiImplicit {
        for n in 1..grid.nt() {
            semi_implicit_level(
                grid,
                interaction,
                &mut p[n * sites..(n + 1) * sites],
                &h_mx[(n - 1) * bx..n * bx],
                &h_my[(n - 1) * by..n * by],
                &back[(n - 1) * sites..n * sites],
                sigma_m,
                floor,
                h,
            );
        }
        return;
    }
    let trivial = interaction.is_trivial();
    for n in 1..grid.nt() {
        let level = &mut p[n * sites..(n + 1) * sites];
        h_level(
            grid,
            level,
            &h_mx[(n - 1) * bx..n * bx],
            &h_my[(n - 1) * by..n * by],
            h,
        );
        let b = &back[(n - 1) * sites..n * sites];
        for s in 0..sites {
            let pv = level[s];
            let mut g = h[s] - b[s];
            if !trivial {
                g -= interaction.derivative(s, pv);
            }
            level[s] = (pv + sigma_m * g).max(floor);
        }
    }
}

/// Per cell, the root `x >= floor` of
/// `x - p - sigma (sum_f m_f^2 / (x + q_f)^2 - b - F'(x)) = 0`, where the sum
/// runs over the cell's interior faces with flux `m_f` and neighbour density
/// `q_f`; `floor` if the left side is already non-negative there.
#[allow(clippy::too_many_arguments)]
fn semi_implicit_level<T: Real>(
    grid: &GridSpec<T>,
    interaction: &InteractionSpec<T>,
    level: &mut [T],
    fx: &[T],
    fy: &[T],
    back: &[T],
    sigma_m: T,
    floor: T,
    out: &mut [T],
) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let curvature = interaction.curvature();
    let mut faces: [(T, T); 4] = [(T::zero(), T::zero()); 4];
    for j in 0..ny {
        for i in 0..nx {
            let s = j * nx + i;
            let mut count = 0;
            let mut push = |m: T, q: T| {
                if m != T::zero() {
                    faces[count] = (m * m, q);
                    count += 1;
                }
            };
            if i > 0 {
                push(fx[j * (nx - 1) + i - 1], level[s - 1]);
            }
            if i + 1 < nx {
                push(fx[j * (nx - 1) + i], level[s + 1]);
            }
            if j > 0 {
                push(fy[(j - 1) * nx + i], level[s - nx]);
            }
            if j + 1 < ny {
                push(fy[j * nx + i], level[s + nx]);
            }
            let faces = &faces[..count];
            let pv = level[s];
            let b = back[s];
            let g = |x: T| -> (T, T) {
                let mut h = T::zero();
                let mut dh = T::zero();
                for &(m2, q) in faces {
                    let r = (x + q).recip();
                    h += m2 * r * r;
                    dh += m2 * r * r * r;
                }
                let val = x - pv - sigma_m * (h - b - interaction.derivative(s, x));
                let slope = T::one() + sigma_m * (T::lit(2.0) * dh + curvature);
                (val, slope)
            };
            out[s] = newton_root(g, floor, pv.max(floor));
        }
    }
    level.copy_from_slice(out);
}

/// Root of an increasing concave `g` on `[floor, inf)`, or `floor` when
/// `g(floor) >= 0`. Newton from the left increases monotonically to the
/// root; a start right of the root is bracketed and bisected geometrically
/// when a step leaves the bracket.
fn newton_root<T: Real>(g: impl Fn(T) -> (T, T), floor: T, start: T) -> T {
    let (g_floor, _) = g(floor);
    if g_floor >= T::zero() {
        return floor;
    }
    let (mut lo, mut hi) = (floor, T::infinity());
    let mut x = start;
    for _ in 0..200 {
        let (v, d) = g(x);
        if v == T::zero() {
            return x;
        }
        if v < T::zero() {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x - v / d;
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { (lo * hi).sqrt() } else { x + x };
        }
        if (next - x).abs() <= T::lit(4.0) * T::epsilon() * x {
            return next;
        }
        x = next;
    }
    x
}

/// `z` approximately solving `K K^T z = rhs`, with its outcome.
///
/// With a spectral solver the exact Kronecker solve is used as starting
/// point and CG only polishes it; otherwise `z` on entry is the warm start.
pub fn solve_normal<T: Real>(
    op: &ConstraintOperator<T>,
    spectral: Option<&mut SpectralNormalSolver<T>>,
    rhs: &[T],
    z: &mut [T],
    tol: T,
    max_iters: usize,
) -> CgOutcome {
    let mut normal = NormalOperator::new(op);
    let mut apply = |x: &[T], y: &mut [T]| normal.apply(x, y);
    match spectral {
        Some(s) => {
            s.solve(rhs, z);
            conjugate_gradient(&mut apply as &mut dyn LinearOperator<T>, s, rhs, z, tol, max_iters)
        }
        None => conjugate_gradient(&mut apply, &mut Identity, rhs, z, tol, max_iters),
    }
}

/// Multiplier ascent and extrapolation, in place:
/// `phi_new = phi + sigma_phi (K K^T)^{-1} r`, `phi_bar = 2 phi_new - phi`.
///
/// `r` is `K U` at the new primal iterate and `z` the solve buffer (warm start
/// for the plain CG path).
#[allow(clippy::too_many_arguments)]
pub fn update_multiplier<T: Real>(
    op: &ConstraintOperator<T>,
    spectral: Option<&mut SpectralNormalSolver<T>>,
    r: &[T],
    phi: &mut [T],
    phi_bar: &mut [T],
    z: &mut [T],
    sigma_phi: T,
    cg_tol: T,
    cg_max_iters: usize,
) -> Result<CgOutcome> {
    let len = op.range_len();
    check_len("residual", len, r.len())?;
    check_len("multiplier", len, phi.len())?;
    check_len("extrapolated multiplier", len, phi_bar.len())?;
    check_len("solve buffer", len, z.len())?;
    let out = solve_normal(op, spectral, r, z, cg_tol, cg_max_iters);
    for ((ph, pb), &zi) in phi.iter_mut().zip(phi_bar.iter_mut()).zip(z.iter()) {
        let step = sigma_phi * zi;
        *pb = *ph + step + step;
        *ph += step;
    }
    Ok(out)
}

/// Iteration state for one problem.
pub struct Solver<T: Real> {
    op: ConstraintOperator<T>,
    interaction: InteractionSpec<T>,
    config: SolverConfig,
    spectral: Option<SpectralNormalSolver<T>>,
    fields: FieldSet<T>,
    phi_bar: Vec<T>,
    iterations: usize,
    // scratch
    p_old: Vec<T>,
    mx_old: Vec<T>,
    my_old: Vec<T>,
    residual: Vec<T>,
    z: Vec<T>,
    back: Vec<T>,
    h: Vec<T>,
    gx: Vec<T>,
    gy: Vec<T>,
    cg_stats: CgStats,
    lagrangian_history: Vec<(usize, f64)>,
    residual_history: Vec<f64>,
    last_change: f64,
}

/// What one call to [`Solver::step`] observed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub relative_change: f64,
    pub constraint_residual: f64,
    pub cg: CgOutcome,
}

impl<T: Real> Solver<T> {
    pub fn new(problem: &ProblemSpec<T>, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        problem.validate()?;
        let grid = problem.grid.clone();
        let op = ConstraintOperator::new(grid.clone(), problem.alpha)?;
        let spectral = config
            .spectral_solve
            .then(|| SpectralNormalSolver::new(&grid, op.kernel()));

        let sites = grid.sites();
        let nt = grid.nt();
        let mut fields = FieldSet::zeros(&grid);
        fields.p.fill(T::one());
        fields.p[..sites].copy_from_slice(&problem.rho0);
        fields.p[nt * sites..].copy_from_slice(&problem.rho1);
        if config.flux_init == FluxInit::Ones {
            fields.mx.fill(T::one());
            fields.my.fill(T::one());
        }
        let phi_len = fields.phi.len();
        Ok(Self {
            interaction: problem.interaction.clone(),
            spectral,
            phi_bar: vec![T::zero(); phi_len],
            iterations: 0,
            p_old: fields.p.clone(),
            mx_old: fields.mx.clone(),
            my_old: fields.my.clone(),
            residual: vec![T::zero(); phi_len],
            z: vec![T::zero(); phi_len],
            back: vec![T::zero(); phi_len],
            h: vec![T::zero(); sites],
            gx: vec![T::zero(); grid.block_len(FieldKind::FluxX)],
            gy: vec![T::zero(); grid.block_len(FieldKind::FluxY)],
            cg_stats: CgStats::default(),
            lagrangian_history: Vec::new(),
            residual_history: Vec::new(),
            last_change: f64::INFINITY,
            fields,
            config,
            op,
        })
    }

    pub fn grid(&self) -> &GridSpec<T> {
        self.op.grid()
    }
    pub fn operator(&self) -> &ConstraintOperator<T> {
        &self.op
    }
    pub fn fields(&self) -> &FieldSet<T> {
        &self.fields
    }
    pub fn phi_bar(&self) -> &[T] {
        &self.phi_bar
    }
    pub fn iterations(&self) -> usize {
        self.iterations
    }
    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// One full PDHG iteration.
    pub fn step(&mut self) -> StepInfo {
        let grid = self.op.grid().clone();
        let sigma_m = T::lit(self.config.sigma_m);
        let floor = T::lit(self.config.density_floor);

        self.p_old.copy_from_slice(&self.fields.p);
        self.mx_old.copy_from_slice(&self.fields.mx);
        self.my_old.copy_from_slice(&self.fields.my);

        fluxes_unchecked(
            &grid,
            &self.p_old,
            &mut self.fields.mx,
            &mut self.fields.my,
            &self.phi_bar,
            sigma_m,
            &mut self.gx,
            &mut self.gy,
        );
        let (h_mx, h_my) = if self.config.lagged_h {
            (&self.mx_old, &self.my_old)
        } else {
            (&self.fields.mx, &self.fields.my)
        };
        density_unchecked(
            &grid,
            self.op.kernel(),
            &self.interaction,
            &mut self.fields.p,
            h_mx,
            h_my,
            &self.phi_bar,
            sigma_m,
            floor,
            self.config.density_step,
            &mut self.back,
            &mut self.h,
        );

        self.op
            .apply_k_unchecked(&self.fields.p, &self.fields.mx, &self.fields.my, &mut self.residual);
        let constraint_residual = crate::energy::discrete_l2(&grid, &self.residual);

        if self.config.spectral_solve {
            self.z.fill(T::zero());
        }
        let cg = update_multiplier(
            &self.op,
            self.spectral.as_mut(),
            &self.residual,
            &mut self.fields.phi,
            &mut self.phi_bar,
            &mut self.z,
            T::lit(self.config.sigma_phi),
            T::lit(self.config.cg_tol),
            self.config.cg_max_iters,
        )
        .expect("solver buffers match the grid");
        if !cg.converged {
            warn!(
                "K K^T solve missed tolerance at iteration {}: relative residual {:.3e}",
                self.iterations + 1,
                cg.relative_residual
            );
        }
        self.cg_stats.record(&cg);

        let relative_change = relative_change(
            &self.fields.p,
            &self.p_old,
            &[(&self.fields.mx, &self.mx_old), (&self.fields.my, &self.my_old)],
        );
        self.iterations += 1;
        self.last_change = relative_change;
        self.residual_history.push(constraint_residual);
        let stride = self.config.history_stride;
        if stride > 0 && (self.iterations.is_multiple_of(stride) || self.iterations == 1) {
            let value = self.lagrangian_from_residual(&grid);
            self.lagrangian_history.push((self.iterations, value));
        }
        StepInfo {
            relative_change,
            constraint_residual,
            cg,
        }
    }

    /// Lagrangian at the current iterate, reusing the residual `K U` of the
    /// last step.
    fn lagrangian_from_residual(&self, grid: &GridSpec<T>) -> f64 {
        let sites = grid.sites();
        let nt = grid.nt();
        let bx = grid.block_len(FieldKind::FluxX);
        let by = grid.block_len(FieldKind::FluxY);
        let mut total = T::zero();
        let p = &self.fields.p;
        for n in 1..=nt {
            let pl = &p[n * sites..(n + 1) * sites];
            let fx = &self.fields.mx[(n - 1) * bx..n * bx];
            let fy = &self.fields.my[(n - 1) * by..n * by];
            total += kinetic_level(grid, pl, fx, fy);
            if !self.interaction.is_trivial() {
                for (s, &pv) in pl.iter().enumerate() {
                    total += self.interaction.value(s, pv);
                }
            }
        }
        total += dot(&self.residual, &self.fields.phi);
        (grid.cell_volume() * total).as_f64()
    }

    /// Runs until [`stop_check`] fires and returns the report.
    pub fn run(&mut self) -> Result<SolveReport> {
        loop {
            let info = self.step();
            if !info.constraint_residual.is_finite() {
                return Err(Error::Diverged(self.iterations));
            }
            if self.iterations.is_multiple_of(1000) {
                debug!(
                    "iter {} change {:.3e} residual {:.3e}",
                    self.iterations, info.relative_change, info.constraint_residual
                );
            }
            if let Some(reason) = stop_check(
                &self.config,
                self.iterations,
                info.relative_change,
                info.constraint_residual,
            ) {
                return self.report(reason);
            }
        }
    }

    fn report(&self, stop_reason: StopReason) -> Result<SolveReport> {
        let kkt = kkt_residuals(
            self.op.grid(),
            self.op.kernel(),
            &self.interaction,
            &self.fields,
            T::lit(self.config.density_floor),
        )?;
        Ok(SolveReport {
            iterations: self.iterations,
            stop_reason,
            lagrangian_history: self.lagrangian_history.clone(),
            constraint_residual_history: self.residual_history.clone(),
            final_relative_change: self.last_change,
            kkt_residuals: kkt,
            cg_stats: self.cg_stats,
        })
    }

    pub fn into_fields(self) -> FieldSet<T> {
        self.fields
    }
}

fn kinetic_level<T: Real>(grid: &GridSpec<T>, pl: &[T], fx: &[T], fy: &[T]) -> T {
    let (nx, ny) = (grid.nx(), grid.ny());
    let mut total = T::zero();
    for j in 0..ny {
        for f in 0..nx.saturating_sub(1) {
            let m = fx[j * (nx - 1) + f];
            total += m * m / (pl[j * nx + f] + pl[j * nx + f + 1]);
        }
    }
    for g in 0..ny.saturating_sub(1) {
        for i in 0..nx {
            let m = fy[g * nx + i];
            total += m * m / (pl[g * nx + i] + pl[(g + 1) * nx + i]);
        }
    }
    total
}

fn relative_change<T: Real>(p: &[T], p_old: &[T], fluxes: &[(&[T], &[T]); 2]) -> f64 {
    let mut diff = T::zero();
    let mut norm = T::zero();
    for (a, b) in std::iter::once((p, p_old)).chain(fluxes.iter().copied()) {
        for (&x, &y) in a.iter().zip(b) {
            let d = x - y;
            diff += d * d;
            norm += x * x;
        }
    }
    if norm == T::zero() {
        return if diff == T::zero() { 0.0 } else { f64::INFINITY };
    }
    (diff / norm).sqrt().as_f64()
}

/// Runs the iteration from the standard initial state.
pub fn solve<T: Real>(
    problem: &ProblemSpec<T>,
    config: &SolverConfig,
) -> Result<(FieldSet<T>, SolveReport)> {
    let mut solver = Solver::new(problem, config.clone())?;
    let report = solver.run()?;
    Ok((solver.into_fields(), report))
}

/// `K U` for a field set, with the divergence of each level added to the
/// temporal part.
pub fn constraint_residual<T: Real>(
    grid: &GridSpec<T>,
    kernel: &FractionalKernel<T>,
    fields: &FieldSet<T>,
) -> Result<Vec<T>> {
    fields.check_shape(grid)?;
    let sites = grid.sites();
    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);
    let mut r = vec![T::zero(); sites * grid.nt()];
    kernel.forward_blocks(&fields.p, sites, &mut r);
    for (n, dst) in r.chunks_exact_mut(sites).enumerate() {
        divergence_add(
            grid,
            &fields.mx[n * bx..(n + 1) * bx],
            &fields.my[n * by..(n + 1) * by],
            dst,
        );
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{lagrangian, Regularizer};
    use crate::problems::{affine_density, uniform_density};
    use approx::assert_relative_eq;

    fn wavy(len: usize, seed: f64) -> Vec<f64> {
        (0..len).map(|k| (seed * (k as f64 + 1.0)).sin()).collect()
    }

    fn affine_problem(n: usize, alpha: f64) -> ProblemSpec<f64> {
        let g = GridSpec::one_d(n, n, 0.0, 1.0, 1.0).unwrap();
        let (a, b) = (affine_density(&g), uniform_density(&g));
        ProblemSpec::balanced(g, alpha, a, b, InteractionSpec::none()).unwrap()
    }

    #[test]
    fn step_size_guard() {
        let mut c = SolverConfig {
            sigma_m: 2.0,
            sigma_phi: 0.5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.sigma_phi = 0.499;
        assert!(c.validate().is_ok());
        c.tol_constraint = 0.0;
        assert!(c.validate().is_ok());
        c.tol_change = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn stop_rule() {
        let c = SolverConfig::default();
        assert_eq!(stop_check(&c, 5, 0.0, 0.0), Some(StopReason::Converged));
        assert_eq!(stop_check(&c, 5, 1e-6, 0.0), None);
        let capped = SolverConfig { max_iters: 1, ..c.clone() };
        assert_eq!(stop_check(&capped, 1, 1.0, 1.0), Some(StopReason::MaxIters));
        let never = SolverConfig {
            tol_constraint: 0.0,
            max_iters: 3,
            ..c
        };
        assert_eq!(stop_check(&never, 2, 0.0, 0.0), None);
        assert_eq!(stop_check(&never, 3, 0.0, 0.0), Some(StopReason::MaxIters));
    }

    #[test]
    fn stationary_problem_stops_at_once() {
        let g = GridSpec::unit(3, 2, 3).unwrap();
        let u = uniform_density(&g);
        let problem = ProblemSpec::new(g, 0.7, u.clone(), u, InteractionSpec::none()).unwrap();
        let config = SolverConfig {
            flux_init: FluxInit::Zero,
            ..Default::default()
        };
        let (fields, report) = solve(&problem, &config).unwrap();
        assert_eq!(report.stop_reason, StopReason::Converged);
        assert_eq!(report.iterations, 1);
        assert!(fields.mx.iter().all(|&v| v == 0.0));
        assert_relative_eq!(report.lagrangian_history[0].1, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn uniform_problem_converges_from_unit_fluxes() {
        let g = GridSpec::one_d(6, 6, 0.0, 1.0, 1.0).unwrap();
        let u = uniform_density(&g);
        let problem = ProblemSpec::new(g, 1.0, u.clone(), u, InteractionSpec::none()).unwrap();
        let (fields, report) = solve(&problem, &SolverConfig::default()).unwrap();
        assert!(report.converged(), "{report:?}");
        assert!(fields.mx.iter().all(|v: &f64| v.abs() < 1e-4));
        assert!(fields.p.iter().all(|v: &f64| (v - 1.0).abs() < 1e-4));
        assert!(report.lagrangian_history.last().unwrap().1.abs() < 1e-6);
    }

    #[test]
    fn flux_fixed_point() {
        let g = GridSpec::unit(4, 3, 2).unwrap();
        let p: Vec<f64> = wavy(g.field_len(FieldKind::Density), 0.7)
            .iter()
            .map(|v| 1.5 + v)
            .collect();
        let phi = wavy(g.field_len(FieldKind::Multiplier), 1.3);
        let sites = g.sites();
        let (bx, by) = (g.block_len(FieldKind::FluxX), g.block_len(FieldKind::FluxY));
        let mut mx = vec![0.0; g.field_len(FieldKind::FluxX)];
        let mut my = vec![0.0; g.field_len(FieldKind::FluxY)];
        let (mut gx, mut gy) = (vec![0.0; bx], vec![0.0; by]);
        for n in 1..=2 {
            let pl = &p[n * sites..(n + 1) * sites];
            gradient_into(&g, &phi[(n - 1) * sites..n * sites], &mut gx, &mut gy);
            for j in 0..3 {
                for f in 0..3 {
                    let k = j * 3 + f;
                    mx[(n - 1) * bx + k] = 0.5 * (pl[j * 4 + f] + pl[j * 4 + f + 1]) * gx[k];
                }
            }
            for gg in 0..2 {
                for i in 0..4 {
                    let k = gg * 4 + i;
                    my[(n - 1) * by + k] = 0.5 * (pl[gg * 4 + i] + pl[(gg + 1) * 4 + i]) * gy[k];
                }
            }
        }
        let (mx0, my0) = (mx.clone(), my.clone());
        update_fluxes(&g, &p, &mut mx, &mut my, &phi, 0.1).unwrap();
        for (a, b) in mx.iter().zip(&mx0).chain(my.iter().zip(&my0)) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }

    fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if f(c) < f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn flux_step_minimizes_face_objective() {
        let g = GridSpec::one_d(3, 1, 0.0, 1.0, 1.0).unwrap();
        let p = vec![1.0, 1.0, 1.0, 0.4, 2.0, 0.05];
        let phi = vec![0.3, -1.1, 0.8];
        let m_old = vec![0.7, -2.0];
        let sigma = 0.1;
        let mut mx = m_old.clone();
        update_fluxes(&g, &p, &mut mx, &mut [], &phi, sigma).unwrap();
        for f in 0..2 {
            let s = p[3 + f] + p[4 + f];
            let grad = (phi[f + 1] - phi[f]) / g.dx();
            let obj = |m: f64| m * m / s + (m - m_old[f] - sigma * grad).powi(2) / (2.0 * sigma);
            let best = golden_min(obj, -50.0, 50.0);
            assert_relative_eq!(mx[f], best, epsilon = 1e-7);
        }
    }

    #[test]
    fn constant_multiplier_shrinks_fluxes() {
        let g = GridSpec::unit(3, 3, 2).unwrap();
        let p = vec![1.0; g.field_len(FieldKind::Density)];
        let mut mx = vec![1.0; g.field_len(FieldKind::FluxX)];
        let mut my = vec![-1.0; g.field_len(FieldKind::FluxY)];
        let phi = vec![4.0; g.field_len(FieldKind::Multiplier)];
        update_fluxes(&g, &p, &mut mx, &mut my, &phi, 0.1).unwrap();
        for v in &mx {
            assert_relative_eq!(*v, 1.0 / 1.1, max_relative = 1e-15);
        }
        for v in &my {
            assert_relative_eq!(*v, -1.0 / 1.1, max_relative = 1e-15);
        }
    }

    #[test]
    fn density_step_examples() {
        let g = GridSpec::unit(2, 2, 3).unwrap();
        let k = FractionalKernel::new(0.5, g.dt(), 3).unwrap();
        let p0: Vec<f64> = (0..g.field_len(FieldKind::Density)).map(|v| 1.0 + v as f64).collect();
        let mx = vec![0.0; g.field_len(FieldKind::FluxX)];
        let my = vec![0.0; g.field_len(FieldKind::FluxY)];
        let phi = vec![0.0; g.field_len(FieldKind::Multiplier)];
        for step in [DensityStep::Linearized, DensityStep::SemiImplicit] {
            let mut p = p0.clone();
            update_density(&g, &k, &InteractionSpec::none(), &mut p, &mx, &my, &phi, 0.1, 1e-8, step)
                .unwrap();
            assert_eq!(p, p0);

            let quad = InteractionSpec {
                lambda_r: 2.0,
                lambda_q: 0.0,
                regularizer: Regularizer::Quadratic,
                preference: vec![0.0; 4],
            };
            let mut p = p0.clone();
            update_density(&g, &k, &quad, &mut p, &mx, &my, &phi, 0.1, 1e-8, step).unwrap();
            for s in 4..12 {
                let want = match step {
                    DensityStep::Linearized => p0[s] * (1.0 - 0.2),
                    DensityStep::SemiImplicit => p0[s] / (1.0 + 0.2),
                };
                assert_relative_eq!(p[s], want, max_relative = 1e-14);
            }
            assert_eq!(p[..4], p0[..4]);
            assert_eq!(p[12..], p0[12..]);
        }
    }

    #[test]
    fn density_step_clamps_to_floor() {
        let g = GridSpec::unit(2, 1, 2).unwrap();
        let k = FractionalKernel::new(1.0, g.dt(), 2).unwrap();
        let heavy = InteractionSpec {
            lambda_r: 0.0,
            lambda_q: 1e6,
            regularizer: Regularizer::None,
            preference: vec![1.0, 0.0],
        };
        for step in [DensityStep::Linearized, DensityStep::SemiImplicit] {
            let mut p = vec![1.0; 6];
            update_density(&g, &k, &heavy, &mut p, &[0.0, 0.0], &[], &[0.0; 4], 0.1, 1e-8, step).unwrap();
            assert_eq!(p[2], 1e-8);
            assert_eq!(p[3], 1.0);
        }
    }

    #[test]
    fn linearized_step_is_scaled_lagrangian_descent() {
        let g = GridSpec::unit(3, 2, 3).unwrap();
        let k = FractionalKernel::new(0.6, g.dt(), 3).unwrap();
        let inter = InteractionSpec {
            lambda_r: 0.4,
            lambda_q: 1.5,
            regularizer: Regularizer::Quadratic,
            preference: wavy(6, 2.1).iter().map(|v| v.abs()).collect(),
        };
        let mut fields = FieldSet::zeros(&g);
        fields.p = wavy(fields.p.len(), 0.9).iter().map(|v| 2.0 + v).collect();
        fields.mx = wavy(fields.mx.len(), 1.7);
        fields.my = wavy(fields.my.len(), 2.3);
        fields.phi = wavy(fields.phi.len(), 0.4);
        let sigma = 0.05;
        let mut stepped = fields.p.clone();
        update_density(
            &g, &k, &inter, &mut stepped, &fields.mx, &fields.my, &fields.phi, sigma, 1e-8,
            DensityStep::Linearized,
        )
        .unwrap();
        let dv = g.cell_volume();
        let sites = g.sites();
        for idx in sites..3 * sites {
            let h = 1e-5;
            let mut up = fields.clone();
            up.p[idx] += h;
            let mut down = fields.clone();
            down.p[idx] -= h;
            let fd = (lagrangian(&g, &k, &inter, &up).unwrap() - lagrangian(&g, &k, &inter, &down).unwrap())
                / (2.0 * h);
            let want = fields.p[idx] - sigma / dv * fd;
            assert_relative_eq!(stepped[idx], want, max_relative = 1e-8);
        }
    }

    #[test]
    fn semi_implicit_root_solves_cell_equation() {
        let g = GridSpec::one_d(3, 2, 0.0, 1.0, 1.0).unwrap();
        let k = FractionalKernel::new(1.0, g.dt(), 2).unwrap();
        let p0 = vec![1.0, 1.0, 1.0, 0.02, 1e-8, 3.0, 1.0, 1.0, 1.0];
        let mx = vec![4.0, -0.5, 0.0, 0.0];
        let phi = vec![0.1, -0.2, 0.3, 0.0, 0.0, 0.0];
        let mut p = p0.clone();
        let sigma = 0.1;
        update_density(&g, &k, &InteractionSpec::none(), &mut p, &mx, &[], &phi, sigma, 1e-8, DensityStep::SemiImplicit)
            .unwrap();
        let mut back = vec![0.0; 6];
        k.backward_blocks(&phi, 3, &mut back);
        let faces: [&[(f64, f64)]; 3] = [&[(4.0, p0[4])], &[(4.0, p0[3]), (-0.5, p0[5])], &[(-0.5, p0[4])]];
        for s in 0..3 {
            let x = p[3 + s];
            let h: f64 = faces[s].iter().map(|(m, q)| m * m / ((x + q) * (x + q))).sum();
            let lhs = x - p0[3 + s] - sigma * (h - back[s]);
            assert!(lhs.abs() < 1e-12 * (1.0 + x), "cell {s}: {lhs}");
        }
    }

    #[test]
    fn newton_root_cases() {
        // x - 2 - 1/x^2 has its root near 2.2056
        let g = |x: f64| (x - 2.0 - 1.0 / (x * x), 1.0 + 2.0 / (x * x * x));
        let r = newton_root(g, 1e-8, 10.0);
        assert!(g(r).0.abs() < 1e-14);
        assert_eq!(newton_root(g, 1e-8, 2.2056), r);
        assert_eq!(newton_root(|x| (x + 1.0, 1.0), 1e-8, 5.0), 1e-8);
    }

    #[test]
    fn feasible_state_leaves_multiplier_unchanged() {
        let op = ConstraintOperator::new(GridSpec::unit(3, 2, 3).unwrap(), 0.6).unwrap();
        let mut phi = wavy(op.range_len(), 0.3);
        let before = phi.clone();
        let mut phi_bar = vec![0.0; phi.len()];
        let mut z = vec![0.0; phi.len()];
        let r = vec![0.0; phi.len()];
        let out = update_multiplier(&op, None, &r, &mut phi, &mut phi_bar, &mut z, 0.05, 1e-10, 50).unwrap();
        assert!(out.converged);
        assert_eq!(phi, before);
        assert_eq!(phi_bar, before);
    }

    fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, n: usize) -> Vec<f64> {
        for c in 0..n {
            let piv = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
            for k in 0..n {
                a.swap(c * n + k, piv * n + k);
            }
            b.swap(c, piv);
            for r in c + 1..n {
                let f = a[r * n + c] / a[c * n + c];
                for k in c..n {
                    a[r * n + k] -= f * a[c * n + k];
                }
                b[r] -= f * b[c];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|k| a[r * n + k] * x[k]).sum();
            x[r] = (b[r] - s) / a[r * n + r];
        }
        x
    }

    #[test]
    fn single_cell_solve_matches_dense() {
        for alpha in [0.3, 0.8, 1.0] {
            let nt = 6;
            let op = ConstraintOperator::new(GridSpec::unit(1, 1, nt).unwrap(), alpha).unwrap();
            let mut a = vec![0.0; nt * nt];
            for c in 0..nt {
                let mut e = vec![0.0; nt];
                e[c] = 1.0;
                for (r, v) in op.apply_kkt(&e).unwrap().into_iter().enumerate() {
                    a[r * nt + c] = v;
                }
            }
            let rhs = wavy(nt, 0.8);
            let want = dense_solve(a, rhs.clone(), nt);
            for spectral in [false, true] {
                let mut sp = spectral.then(|| SpectralNormalSolver::new(op.grid(), op.kernel()));
                let mut z = vec![0.0; nt];
                let out = solve_normal(&op, sp.as_mut(), &rhs, &mut z, 1e-12, 100);
                assert!(out.converged);
                for (x, y) in z.iter().zip(&want) {
                    assert_relative_eq!(x, y, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn integer_order_cg_within_dimension() {
        let op = ConstraintOperator::new(GridSpec::unit(3, 2, 4).unwrap(), 1.0).unwrap();
        let rhs = wavy(op.range_len(), 1.1);
        let mut z = vec![0.0; rhs.len()];
        let out = solve_normal(&op, None, &rhs, &mut z, 1e-10, 500);
        assert!(out.converged);
        assert!(out.iterations <= rhs.len(), "{}", out.iterations);
        let back = op.apply_kkt(&z).unwrap();
        let err: f64 = back.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-10 * crate::scalar::norm2(&rhs));
    }

    #[test]
    fn endpoints_floor_and_determinism() {
        let problem = affine_problem(8, 0.7);
        let config = SolverConfig {
            max_iters: 300,
            ..Default::default()
        };
        let mut solver = Solver::new(&problem, config.clone()).unwrap();
        let sites = problem.grid.sites();
        for _ in 0..300 {
            solver.step();
            let p = &solver.fields().p;
            assert_eq!(p[..sites], problem.rho0[..]);
            assert_eq!(p[8 * sites..], problem.rho1[..]);
            assert!(p.iter().all(|&v| v >= config.density_floor));
        }
        let (a, ra) = solve(&problem, &config).unwrap();
        let (b, rb) = solve(&problem, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.stop_reason, StopReason::MaxIters);
    }

    #[test]
    fn every_step_solves_normal_equations_tightly() {
        let problem = affine_problem(6, 0.6);
        for spectral_solve in [true, false] {
            let config = SolverConfig {
                max_iters: 200,
                spectral_solve,
                ..Default::default()
            };
            let (_, report) = solve(&problem, &config).unwrap();
            assert_eq!(report.cg_stats.failures, 0);
            assert!(report.cg_stats.worst_relative_residual <= 1e-10);
        }
    }
}
