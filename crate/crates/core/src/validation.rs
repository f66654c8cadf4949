//! Randomized self-checks of the discrete operators, runnable from a
//! release binary: adjoint identities, L1 exactness, `K K^T` symmetry and
//! positivity, Lagrangian gradients against finite differences, and mass
//! conservation of exactly feasible states.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::Serialize;

use crate::energy::{cell_mass, lagrangian, lagrangian_gradient, InteractionSpec, Regularizer};
use crate::error::Result;
use crate::fracops::FractionalKernel;
use crate::grid::{FieldKind, FieldSet, GridSpec};
use crate::scalar::gamma;
use crate::spaceops::{divergence_add, ConstraintOperator};

/// Deliberate defects for checking that the checks can fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Corruption {
    #[default]
    None,
    /// Flip the sign of the x-gradient stencil in the transpose.
    FluxSign,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl PropertyCheck {
    fn new(name: &'static str, cases: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            name,
            cases,
            worst,
            tolerance,
            passed: worst <= tolerance,
        }
    }
}

pub const SWEEP_SIZES: [usize; 4] = [1, 2, 3, 5];
pub const SWEEP_STEPS: [usize; 3] = [1, 2, 4];
pub const SWEEP_ORDERS: [f64; 4] = [0.3, 0.6, 0.9, 1.0];

fn random_vec(rng: &mut StdRng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel(lhs: f64, rhs: f64, scale: f64) -> f64 {
    (lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE)
}

/// `<K U, Phi> = <U, K^T Phi>` for `pairs` random pairs on every grid of
/// the sweep. The relative error is taken against the sum of absolute
/// products so that cancellation cannot hide a defect.
pub fn adjoint_identity(rng: &mut StdRng, pairs: usize, corruption: Corruption) -> Result<PropertyCheck> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &nx in &SWEEP_SIZES {
        for &ny in &SWEEP_SIZES {
            for &nt in &SWEEP_STEPS {
                for &alpha in &SWEEP_ORDERS {
                    let op = ConstraintOperator::new(GridSpec::unit(nx, ny, nt)?, alpha)?;
                    let g = op.grid().clone();
                    for _ in 0..pairs {
                        let p = random_vec(rng, g.field_len(FieldKind::Density));
                        let mx = random_vec(rng, g.field_len(FieldKind::FluxX));
                        let my = random_vec(rng, g.field_len(FieldKind::FluxY));
                        let phi = random_vec(rng, op.range_len());
                        let ku = op.k(&p, &mx, &my)?;
                        let (tp, mut tx, ty) = op.kt(&phi)?;
                        if corruption == Corruption::FluxSign {
                            tx.iter_mut().for_each(|v| *v = -*v);
                        }
                        let lhs = dot(&ku, &phi);
                        let rhs = dot(&p, &tp) + dot(&mx, &tx) + dot(&my, &ty);
                        let scale: f64 = ku.iter().zip(&phi).map(|(a, b)| (a * b).abs()).sum();
                        worst = worst.max(rel(lhs, rhs, scale));
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(PropertyCheck::new("adjoint identity", cases, worst, 1e-12))
}

/// Constants are annihilated (absolute error against `|c| b[n][n]`) and
/// linear timelines differentiated exactly, for `alpha = 0.1, ..., 1.0`.
pub fn l1_exactness(rng: &mut StdRng) -> Result<[PropertyCheck; 2]> {
    let (mut consts_worst, mut linear_worst) = (0.0f64, 0.0f64);
    let mut cases = 0;
    for a10 in 1..=10 {
        let alpha = f64::from(a10) / 10.0;
        for &nt in &[1usize, 3, 8, 25] {
            let dt = 1.0 / nt as f64;
            let kernel = FractionalKernel::new(alpha, dt, nt)?;
            let c: f64 = rng.gen_range(-2.0..2.0);
            let consts = kernel.caputo_forward(&vec![c; nt + 1])?;
            for (n, v) in consts.iter().enumerate() {
                consts_worst = consts_worst.max(rel(*v, 0.0, c.abs() * kernel.weight(n + 1, n + 1)));
            }
            let (a, slope) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.5..2.0));
            let line: Vec<f64> = (0..=nt).map(|n| a + slope * n as f64 * dt).collect();
            let got = kernel.caputo_forward(&line)?;
            for (n, v) in got.iter().enumerate() {
                let t = (n + 1) as f64 * dt;
                let want = slope * t.powf(1.0 - alpha) / gamma(2.0 - alpha);
                linear_worst = linear_worst.max(rel(*v, want, want.abs()));
            }
            cases += 1;
        }
    }
    Ok([
        PropertyCheck::new("L1 annihilates constants", cases, consts_worst, 1e-13),
        PropertyCheck::new("L1 exact on linears", cases, linear_worst, 1e-12),
    ])
}

/// `<K K^T x, y> = <x, K K^T y>` and `<K K^T x, x> > 0`.
pub fn normal_operator_spd(rng: &mut StdRng, pairs: usize) -> Result<PropertyCheck> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &(nx, ny, nt) in &[(1, 1, 4), (3, 2, 3), (5, 5, 4), (8, 1, 6)] {
        for &alpha in &SWEEP_ORDERS {
            let op = ConstraintOperator::new(GridSpec::unit(nx, ny, nt)?, alpha)?;
            for _ in 0..pairs {
                let x = random_vec(rng, op.range_len());
                let y = random_vec(rng, op.range_len());
                let ax = op.apply_kkt(&x)?;
                let ay = op.apply_kkt(&y)?;
                let (l, r) = (dot(&ax, &y), dot(&x, &ay));
                let scale: f64 = ax.iter().zip(&y).map(|(a, b)| (a * b).abs()).sum();
                worst = worst.max(rel(l, r, scale));
                if dot(&ax, &x) <= 0.0 {
                    worst = f64::INFINITY;
                }
                cases += 1;
            }
        }
    }
    Ok(PropertyCheck::new("K K^T symmetric positive", cases, worst, 1e-12))
}

/// Closed-form Lagrangian gradient against central differences at random
/// coordinates of a `4 x 4 x 4` grid.
pub fn gradient_consistency(rng: &mut StdRng, points: usize) -> Result<PropertyCheck> {
    let grid = GridSpec::unit(4, 4, 4)?;
    let kernel = FractionalKernel::new(0.7, grid.dt(), grid.nt())?;
    let interaction = InteractionSpec {
        lambda_r: 0.3,
        lambda_q: 0.8,
        regularizer: Regularizer::Quadratic,
        preference: (0..grid.sites()).map(|_| rng.gen_range(0.0..1.0)).collect(),
    };
    let mut fields = FieldSet::zeros(&grid);
    fields.p.iter_mut().for_each(|v| *v = rng.gen_range(0.5..1.5));
    fields.mx.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    fields.my.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    fields.phi.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let grad = lagrangian_gradient(&grid, &kernel, &interaction, &fields)?;
    let sites = grid.sites();
    let floor = grid.cell_volume() * 1e-3;
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let which = rng.gen_range(0..3);
        let (len, offset) = match which {
            0 => (grad.p.len(), sites),
            1 => (grad.mx.len(), 0),
            _ => (grad.my.len(), 0),
        };
        let k = rng.gen_range(0..len);
        let analytic = match which {
            0 => grad.p[k],
            1 => grad.mx[k],
            _ => grad.my[k],
        };
        let h = 1e-5;
        let probe = |delta: f64| -> Result<f64> {
            let mut f = fields.clone();
            match which {
                0 => f.p[offset + k] += delta,
                1 => f.mx[k] += delta,
                _ => f.my[k] += delta,
            }
            lagrangian(&grid, &kernel, &interaction, &f)
        };
        let fd = (probe(h)? - probe(-h)?) / (2.0 * h);
        worst = worst.max(rel(fd, analytic, analytic.abs().max(floor)));
    }
    Ok(PropertyCheck::new("Lagrangian gradient", points, worst, 1e-6))
}

/// Builds a state with `K U = 0` by marching the L1 recursion for the
/// density under random fluxes, then compares per-level masses.
pub fn mass_conservation(rng: &mut StdRng, trials: usize) -> Result<PropertyCheck> {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &(nx, ny, nt) in &[(3, 1, 4), (2, 3, 3), (4, 4, 5)] {
        for &alpha in &SWEEP_ORDERS {
            let grid = GridSpec::unit(nx, ny, nt)?;
            let kernel = FractionalKernel::new(alpha, grid.dt(), nt)?;
            for _ in 0..trials {
                let (p, _, _) = feasible_state(rng, &grid, &kernel);
                let m0 = cell_mass(&grid, &p[..grid.sites()]);
                for n in 1..=nt {
                    let s = grid.sites();
                    let mn = cell_mass(&grid, &p[n * s..(n + 1) * s]);
                    worst = worst.max(rel(mn, m0, m0.abs()));
                }
                cases += 1;
            }
        }
    }
    Ok(PropertyCheck::new("mass conservation", cases, worst, 1e-12))
}

/// Random `(P, Mx, My)` with `K U = 0` up to roundoff.
pub fn feasible_state(
    rng: &mut StdRng,
    grid: &GridSpec<f64>,
    kernel: &FractionalKernel<f64>,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let sites = grid.sites();
    let nt = grid.nt();
    let bx = grid.block_len(FieldKind::FluxX);
    let by = grid.block_len(FieldKind::FluxY);
    let mx = random_vec(rng, grid.field_len(FieldKind::FluxX));
    let my = random_vec(rng, grid.field_len(FieldKind::FluxY));
    let mut p = vec![0.0; sites * (nt + 1)];
    p[..sites].iter_mut().for_each(|v| *v = rng.gen_range(1.0..2.0));
    let c = kernel.coefficients();
    let w = kernel.generator();
    let mut rhs = vec![0.0; sites];
    for n in 1..=nt {
        rhs.fill(0.0);
        divergence_add(grid, &mx[(n - 1) * bx..n * bx], &my[(n - 1) * by..n * by], &mut rhs);
        for s in 0..sites {
            let mut acc = -rhs[s] + w[n - 1] * p[s];
            for d in 1..n.min(c.len()) {
                acc -= c[d] * p[(n - d) * sites + s];
            }
            p[n * sites + s] = acc / c[0];
        }
    }
    (p, mx, my)
}

/// Every check, with `seed` driving the random inputs.
pub fn run_all(seed: u64, corruption: Corruption) -> Result<Vec<PropertyCheck>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = vec![adjoint_identity(&mut rng, 100, corruption)?];
    out.extend(l1_exactness(&mut rng)?);
    out.push(normal_operator_spd(&mut rng, 10)?);
    out.push(gradient_consistency(&mut rng, 50)?);
    out.push(mass_conservation(&mut rng, 5)?);
    Ok(out)
}
