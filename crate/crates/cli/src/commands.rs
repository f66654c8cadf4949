use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fracot::energy::total_mass;
use fracot::presets::Scenario;
use fracot::study::{exact_study, reference_study, StudyResult};
use fracot::validation::{run_all, Corruption};
use fracot::{solve, SolveReport, SolverConfig};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::write_all;

/// Command-line overrides shared by `solve` and `convergence`.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub heatmaps: bool,
}

fn out_dir(cfg: &RunConfig, o: &Overrides) -> PathBuf {
    o.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Serialize)]
struct RunRecord {
    alpha: f64,
    converged: bool,
    final_constraint_residual: f64,
    max_relative_mass_drift: f64,
    snapshot_dir: Option<PathBuf>,
    #[serde(flatten)]
    report: SolveReport,
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    scenario: &'a Scenario,
    solver: &'a SolverConfig,
    runs: Vec<RunRecord>,
}

pub fn alpha_dir(out: &Path, alpha: f64) -> PathBuf {
    out.join(format!("alpha_{alpha}"))
}

fn run_one(scenario: &Scenario, solver: &SolverConfig, alpha: f64, out: &Path, snapshots: bool, heatmaps: bool) -> Result<RunRecord> {
    let problem = scenario.build(alpha).with_context(|| format!("building {} at order {alpha}", scenario.name))?;
    info!("{} at order {alpha}: {} unknowns", scenario.name, problem.grid.unknown_count());
    let (fields, report) = solve(&problem, solver)?;
    let grid = &problem.grid;
    let m0 = total_mass(grid, &fields.p, 0)?;
    let mut drift = 0.0f64;
    for n in 1..=grid.nt() {
        drift = drift.max((total_mass(grid, &fields.p, n)? - m0).abs() / m0);
    }
    if !report.converged() {
        warn!(
            "order {alpha}: no convergence after {} iterations (constraint residual {:.3e})",
            report.iterations,
            report.final_constraint_residual()
        );
    }
    let snapshot_dir = if snapshots {
        let dir = alpha_dir(out, alpha);
        let count = write_all(&dir, grid, &fields, heatmaps)?;
        info!("wrote {count} snapshots to {}", dir.display());
        Some(dir)
    } else {
        None
    };
    Ok(RunRecord {
        alpha,
        converged: report.converged(),
        final_constraint_residual: report.final_constraint_residual(),
        max_relative_mass_drift: drift,
        snapshot_dir,
        report,
    })
}

/// Solves the configured scenario once per order. Orders run on separate
/// threads. Returns the report path, if one was written.
pub fn cmd_solve(config: &Path, o: &Overrides) -> Result<Option<PathBuf>> {
    let (cfg, scenario) = RunConfig::load(config)?;
    let out = out_dir(&cfg, o);
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let heatmaps = o.heatmaps || cfg.output.heatmaps;

    let runs: Vec<Result<RunRecord>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .alphas
            .iter()
            .map(|&a| {
                let (scenario, cfg, out) = (&scenario, &cfg, &out);
                s.spawn(move || run_one(scenario, &cfg.solver, a, out, cfg.output.snapshots, heatmaps))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    for r in &runs {
        println!(
            "alpha={} iterations={} converged={} residual={:.3e} mass_drift={:.3e}",
            r.alpha, r.report.iterations, r.converged, r.final_constraint_residual, r.max_relative_mass_drift
        );
    }
    if !cfg.output.report {
        return Ok(None);
    }
    let path = out.join("report.json");
    let text = serde_json::to_string_pretty(&SolveOutput {
        scenario: &scenario,
        solver: &cfg.solver,
        runs,
    })?;
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(Some(path))
}

#[derive(Serialize)]
struct StudyOutput<'a> {
    solver: &'a SolverConfig,
    sizes: &'a [usize],
    reference_n: usize,
    studies: &'a [StudyResult],
}

/// Error tables on the convergence problem: against the closed form for
/// order 1, against a cached fine-grid solve otherwise.
pub fn cmd_convergence(config: &Path, o: &Overrides) -> Result<Vec<StudyResult>> {
    let (cfg, scenario) = RunConfig::load(config)?;
    if scenario.name != "convergence" {
        bail!("convergence studies run on the convergence preset, not {:?}", scenario.name);
    }
    let study = &cfg.study;
    if study.sizes.is_empty() {
        bail!("study.sizes: at least one grid size is required");
    }
    let out = out_dir(&cfg, o);
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create {}", out.display()))?;
    let cache = study.cache_dir.clone().unwrap_or_else(|| out.join("reference_cache"));

    let mut results = Vec::new();
    for &alpha in &cfg.alphas {
        let r = if alpha == 1.0 {
            exact_study(&study.sizes, &cfg.solver)?
        } else {
            reference_study(alpha, &study.sizes, study.reference_n, &cfg.solver, Some(&cache))?
        };
        results.push(r);
    }

    let mut csv = String::new();
    for (k, r) in results.iter().enumerate() {
        let table = r.to_csv();
        // one header for the whole file
        csv.push_str(if k == 0 { &table } else { table.split_once('\n').map_or("", |t| t.1) });
    }
    print!("{csv}");
    let path = out.join("errors.csv");
    std::fs::write(&path, csv).with_context(|| format!("cannot write {}", path.display()))?;
    if cfg.output.report {
        let text = serde_json::to_string_pretty(&StudyOutput {
            solver: &cfg.solver,
            sizes: &study.sizes,
            reference_n: study.reference_n,
            studies: &results,
        })?;
        std::fs::write(out.join("report.json"), text)?;
    }
    Ok(results)
}

/// Runs the randomized property checks; fails if any property fails.
pub fn cmd_validate(seed: u64, corruption: Corruption) -> Result<()> {
    let checks = run_all(seed, corruption)?;
    let mut failed = 0;
    for c in &checks {
        println!(
            "{:<28} {} cases={} worst={:.3e} tolerance={:.0e}",
            c.name,
            if c.passed { "PASS" } else { "FAIL" },
            c.cases,
            c.worst,
            c.tolerance
        );
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        bail!("{failed} of {} properties failed", checks.len());
    }
    Ok(())
}
