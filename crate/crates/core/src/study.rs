//! Grid-refinement studies on the 1-D affine-to-uniform transport problem.
//!
//! For `alpha = 1` errors are measured against the closed-form solution; for
//! fractional orders against a fine-grid solve, interpolated bilinearly in
//! `(t, x)` onto the coarse nodes.

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};

use crate::energy::InteractionSpec;
use crate::error::{Error, Result};
use crate::grid::{FieldSet, GridSpec};
use crate::pdhg::{solve, SolveReport, SolverConfig};
use crate::problems::{affine_density, exact_integer_ot, uniform_density, ProblemSpec};

/// Affine-to-uniform problem on `[0, 1]` with `n` cells and `n` time steps.
pub fn convergence_problem(n: usize, alpha: f64) -> Result<ProblemSpec<f64>> {
    let grid = GridSpec::one_d(n, n, 0.0, 1.0, 1.0)?;
    let rho0 = affine_density(&grid);
    let rho1 = uniform_density(&grid);
    ProblemSpec::balanced(grid, alpha, rho0, rho1, InteractionSpec::none())
}

/// Weighted L2 errors `(density, flux)` against the closed-form
/// integer-order solution. The density error covers levels `0..=nt`, the flux
/// error every face (boundary faces included, where both sides vanish) on
/// levels `1..=nt`.
pub fn exact_errors(grid: &GridSpec<f64>, fields: &FieldSet<f64>) -> Result<(f64, f64)> {
    require_1d(grid)?;
    fields.check_shape(grid)?;
    let (nx, nt) = (grid.nx(), grid.nt());
    let dv = grid.cell_volume();
    let mut ep = 0.0;
    for n in 0..=nt {
        let t = grid.time(n);
        for i in 0..nx {
            let d = fields.p[n * nx + i] - exact_integer_ot(grid.x_center(i), t).0;
            ep += d * d;
        }
    }
    let mut em = 0.0;
    for n in 1..=nt {
        let t = grid.time(n);
        for f in 0..=nx {
            let num = if f == 0 || f == nx {
                0.0
            } else {
                fields.mx[(n - 1) * (nx - 1) + f - 1]
            };
            let d = num - exact_integer_ot(grid.x_edge(f), t).1;
            em += d * d;
        }
    }
    Ok(((dv * ep).sqrt(), (dv * em).sqrt()))
}

fn require_1d(grid: &GridSpec<f64>) -> Result<()> {
    if grid.is_1d() {
        Ok(())
    } else {
        Err(Error::InvalidGrid("refinement studies need a 1-D grid".into()))
    }
}

/// Bracketing index and weight for linear interpolation on a uniform node
/// set `x0 + k h`, `k = 0..count`; extrapolates linearly past the ends.
fn bracket(x: f64, x0: f64, h: f64, count: usize) -> (usize, f64) {
    if count == 1 {
        return (0, 0.0);
    }
    let s = (x - x0) / h;
    let k = (s.floor().max(0.0) as usize).min(count - 2);
    (k, s - k as f64)
}

/// Bilinear interpolation of a time-major table `values[k * width + c]`
/// with time nodes `t0 + k ht` and space nodes `x0 + c hx`.
struct Table<'a> {
    values: &'a [f64],
    width: usize,
    rows: usize,
    t0: f64,
    ht: f64,
    x0: f64,
    hx: f64,
}

impl Table<'_> {
    fn at(&self, t: f64, x: f64) -> f64 {
        let (k, a) = bracket(t, self.t0, self.ht, self.rows);
        let (c, b) = bracket(x, self.x0, self.hx, self.width);
        let v = |k: usize, c: usize| self.values[k * self.width + c];
        let c1 = (c + 1).min(self.width - 1);
        let k1 = (k + 1).min(self.rows - 1);
        let lo = v(k, c) * (1.0 - b) + v(k, c1) * b;
        let hi = v(k1, c) * (1.0 - b) + v(k1, c1) * b;
        lo * (1.0 - a) + hi * a
    }
}

/// Errors of a coarse solve against a fine 1-D reference on the same domain.
pub fn reference_errors(
    grid: &GridSpec<f64>,
    fields: &FieldSet<f64>,
    reference_grid: &GridSpec<f64>,
    reference: &FieldSet<f64>,
) -> Result<(f64, f64)> {
    require_1d(grid)?;
    require_1d(reference_grid)?;
    fields.check_shape(grid)?;
    reference.check_shape(reference_grid)?;
    let (nx, nt) = (grid.nx(), grid.nt());
    let (fx, ft) = (reference_grid.nx(), reference_grid.nt());

    let density = Table {
        values: &reference.p,
        width: fx,
        rows: ft + 1,
        t0: 0.0,
        ht: reference_grid.dt(),
        x0: reference_grid.x_center(0),
        hx: reference_grid.dx(),
    };
    // fluxes padded with the zero boundary faces
    let mut padded = vec![0.0; ft * (fx + 1)];
    for n in 0..ft {
        padded[n * (fx + 1) + 1..n * (fx + 1) + fx]
            .copy_from_slice(&reference.mx[n * (fx - 1)..(n + 1) * (fx - 1)]);
    }
    let flux = Table {
        values: &padded,
        width: fx + 1,
        rows: ft,
        t0: reference_grid.time(1),
        ht: reference_grid.dt(),
        x0: reference_grid.x_edge(0),
        hx: reference_grid.dx(),
    };

    let dv = grid.cell_volume();
    let mut ep = 0.0;
    for n in 0..=nt {
        for i in 0..nx {
            let d = fields.p[n * nx + i] - density.at(grid.time(n), grid.x_center(i));
            ep += d * d;
        }
    }
    let mut em = 0.0;
    for n in 1..=nt {
        for f in 1..nx {
            let d = fields.mx[(n - 1) * (nx - 1) + f - 1] - flux.at(grid.time(n), grid.x_edge(f));
            em += d * d;
        }
    }
    Ok(((dv * ep).sqrt(), (dv * em).sqrt()))
}

/// `log(e_prev / e) / log(n / n_prev)` for consecutive entries.
pub fn observed_orders(sizes: &[usize], errors: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; errors.len()];
    for k in 1..errors.len().min(sizes.len()) {
        let ratio = sizes[k] as f64 / sizes[k - 1] as f64;
        out[k] = Some((errors[k - 1] / errors[k]).ln() / ratio.ln());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub n: usize,
    pub rho_error: f64,
    pub rho_order: Option<f64>,
    pub m_error: f64,
    pub m_order: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub alpha: f64,
    /// Size of the reference grid, `None` for the closed-form comparison.
    pub reference_n: Option<usize>,
    pub rows: Vec<StudyRow>,
}

impl StudyResult {
    fn fill_orders(&mut self) {
        let sizes: Vec<usize> = self.rows.iter().map(|r| r.n).collect();
        let rho: Vec<f64> = self.rows.iter().map(|r| r.rho_error).collect();
        let m: Vec<f64> = self.rows.iter().map(|r| r.m_error).collect();
        for ((row, a), b) in self
            .rows
            .iter_mut()
            .zip(observed_orders(&sizes, &rho))
            .zip(observed_orders(&sizes, &m))
        {
            row.rho_order = a;
            row.m_order = b;
        }
    }

    /// CSV with a header line; orders are empty on the first row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,n,rho_error,rho_order,m_error,m_order,iterations,converged\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.alpha,
                r.n,
                r.rho_error,
                opt(r.rho_order),
                r.m_error,
                opt(r.m_order),
                r.iterations,
                r.converged
            ));
        }
        s
    }
}

/// A solved problem as stored in the reference cache.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CachedSolve {
    pub alpha: f64,
    pub n: usize,
    pub config: SolverConfig,
    pub iterations: usize,
    pub converged: bool,
    pub fields: FieldSet<f64>,
}

fn cache_path(dir: &Path, alpha: f64, n: usize) -> PathBuf {
    dir.join(format!("reference_a{alpha}_n{n}.json"))
}

/// Solves the convergence problem at size `n`, reusing a cached result in
/// `cache` when one exists for the same order, size and configuration.
pub fn reference_solve(
    n: usize,
    alpha: f64,
    config: &SolverConfig,
    cache: Option<&Path>,
) -> Result<CachedSolve> {
    if let Some(dir) = cache {
        let path = cache_path(dir, alpha, n);
        if let Ok(text) = std::fs::read_to_string(&path) {
            match serde_json::from_str::<CachedSolve>(&text) {
                Ok(c) if c.alpha == alpha && c.n == n && c.config == *config => {
                    info!("using cached reference {}", path.display());
                    return Ok(c);
                }
                _ => info!("ignoring stale cache entry {}", path.display()),
            }
        }
    }
    let problem = convergence_problem(n, alpha)?;
    let (fields, report) = solve(&problem, config)?;
    let cached = CachedSolve {
        alpha,
        n,
        config: config.clone(),
        iterations: report.iterations,
        converged: report.converged(),
        fields,
    };
    if let Some(dir) = cache {
        std::fs::create_dir_all(dir)?;
        let text = serde_json::to_string(&cached)?;
        std::fs::write(cache_path(dir, alpha, n), text)?;
    }
    Ok(cached)
}

fn row(n: usize, errors: (f64, f64), report: &SolveReport) -> StudyRow {
    StudyRow {
        n,
        rho_error: errors.0,
        rho_order: None,
        m_error: errors.1,
        m_order: None,
        iterations: report.iterations,
        converged: report.converged(),
    }
}

/// Integer-order study against the closed-form solution.
pub fn exact_study(sizes: &[usize], config: &SolverConfig) -> Result<StudyResult> {
    let mut result = StudyResult {
        alpha: 1.0,
        reference_n: None,
        rows: Vec::with_capacity(sizes.len()),
    };
    for &n in sizes {
        let problem = convergence_problem(n, 1.0)?;
        let (fields, report) = solve(&problem, config)?;
        let errors = exact_errors(&problem.grid, &fields)?;
        info!("n = {n}: errors {errors:?} after {} iterations", report.iterations);
        result.rows.push(row(n, errors, &report));
    }
    result.fill_orders();
    Ok(result)
}

/// Study against a fine-grid reference of size `reference_n`.
pub fn reference_study(
    alpha: f64,
    sizes: &[usize],
    reference_n: usize,
    config: &SolverConfig,
    cache: Option<&Path>,
) -> Result<StudyResult> {
    let reference = reference_solve(reference_n, alpha, config, cache)?;
    let reference_grid = GridSpec::one_d(reference_n, reference_n, 0.0, 1.0, 1.0)?;
    let mut result = StudyResult {
        alpha,
        reference_n: Some(reference_n),
        rows: Vec::with_capacity(sizes.len()),
    };
    for &n in sizes {
        let problem = convergence_problem(n, alpha)?;
        let (fields, report) = solve(&problem, config)?;
        let errors = reference_errors(&problem.grid, &fields, &reference_grid, &reference.fields)?;
        info!("alpha = {alpha}, n = {n}: errors {errors:?} after {} iterations", report.iterations);
        result.rows.push(row(n, errors, &report));
    }
    result.fill_orders();
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn orders_from_ratios() {
        let o = observed_orders(&[10, 20, 40], &[4.0, 2.0, 0.5]);
        assert_eq!(o[0], None);
        assert_relative_eq!(o[1].unwrap(), 1.0);
        assert_relative_eq!(o[2].unwrap(), 2.0);
        assert_eq!(observed_orders(&[8], &[1.0]), vec![None]);
    }

    #[test]
    fn interpolation_reproduces_bilinear_data() {
        let fine = GridSpec::one_d(12, 12, 0.0, 1.0, 1.0).unwrap();
        let coarse = GridSpec::one_d(5, 5, 0.0, 1.0, 1.0).unwrap();
        let f = |t: f64, x: f64| 1.0 + 2.0 * t + 3.0 * x + 0.5 * t * x;
        let fill = |g: &GridSpec<f64>| {
            let mut s = FieldSet::zeros(g);
            for n in 0..=g.nt() {
                for i in 0..g.nx() {
                    s.p[n * g.nx() + i] = f(g.time(n), g.x_center(i));
                }
            }
            for n in 1..=g.nt() {
                for k in 1..g.nx() {
                    s.mx[(n - 1) * (g.nx() - 1) + k - 1] = g.x_edge(k) * (1.0 - g.x_edge(k)) * g.time(n);
                }
            }
            s
        };
        let (ep, _) = reference_errors(&coarse, &fill(&coarse), &fine, &fill(&fine)).unwrap();
        assert!(ep < 1e-13, "{ep}");
    }

    #[test]
    fn exact_error_of_exact_samples_is_zero() {
        let g = GridSpec::one_d(6, 6, 0.0, 1.0, 1.0).unwrap();
        let mut s = FieldSet::zeros(&g);
        for n in 0..=6 {
            for i in 0..6 {
                s.p[n * 6 + i] = exact_integer_ot(g.x_center(i), g.time(n)).0;
            }
        }
        for n in 1..=6 {
            for k in 1..6 {
                s.mx[(n - 1) * 5 + k - 1] = exact_integer_ot(g.x_edge(k), g.time(n)).1;
            }
        }
        let (ep, em) = exact_errors(&g, &s).unwrap();
        assert_eq!(ep, 0.0);
        assert!(em < 1e-13);
    }

    #[test]
    fn csv_layout() {
        let mut r = StudyResult {
            alpha: 1.0,
            reference_n: None,
            rows: vec![
                StudyRow {
                    n: 8,
                    rho_error: 2.0,
                    rho_order: None,
                    m_error: 1.0,
                    m_order: None,
                    iterations: 3,
                    converged: true,
                },
                StudyRow {
                    n: 16,
                    rho_error: 1.0,
                    rho_order: None,
                    m_error: 0.25,
                    m_order: None,
                    iterations: 4,
                    converged: false,
                },
            ],
        };
        r.fill_orders();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[1], "1,8,2,,1,,3,true");
        assert_eq!(lines[2], "1,16,1,1,0.25,2,4,false");
    }
}
