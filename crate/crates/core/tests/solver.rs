use fracot::presets::preset;
use fracot::study::convergence_problem;
use fracot::{solve, FieldKind, Solver, SolverConfig, StopReason, DENSITY_FLOOR};

const TABLE_SIZES: [usize; 4] = [8, 10, 20, 25];

/// Means of consecutive 200-iteration windows, skipping the first window.
fn window_means(history: &[f64]) -> Vec<f64> {
    history[200.min(history.len())..]
        .chunks_exact(200)
        .map(|w| w.iter().sum::<f64>() / 200.0)
        .collect()
}

#[test]
fn windowed_residual_is_non_increasing_on_convergence_problems() {
    let mut failures = Vec::new();
    for n in TABLE_SIZES {
        for alpha in [1.0, 0.8] {
            let problem = convergence_problem(n, alpha).unwrap();
            let (_, report) = solve(&problem, &SolverConfig::default()).unwrap();
            let means = window_means(&report.constraint_residual_history);
            for (k, w) in means.windows(2).enumerate() {
                if w[1] > w[0] {
                    failures.push(format!(
                        "n={n} alpha={alpha}: window {} mean {:.4e} > previous {:.4e}",
                        k + 2,
                        w[1],
                        w[0]
                    ));
                }
            }
        }
    }
    assert!(failures.is_empty(), "{} increases, first: {:?}", failures.len(), &failures[..failures.len().min(5)]);
}

#[test]
fn converged_solve_is_feasible_and_optimal() {
    let problem = convergence_problem(10, 0.8).unwrap();
    let config = SolverConfig {
        sigma_m: 1.9,
        sigma_phi: 0.5,
        ..SolverConfig::default()
    };
    let (fields, report) = solve(&problem, &config).unwrap();
    assert_eq!(report.stop_reason, StopReason::Converged);
    assert!(report.final_constraint_residual() < config.tol_constraint);
    assert_eq!(report.constraint_residual_history.len(), report.iterations);
    let kkt = report.kkt_residuals;
    assert!(kkt.transport < 1e-6, "{kkt:?}");
    assert!(kkt.flux_x < 1e-4, "{kkt:?}");
    assert!(kkt.hamilton_jacobi < 1e-4, "{kkt:?}");
    assert_eq!(kkt.flux_y, 0.0);

    let sites = problem.grid.sites();
    assert_eq!(&fields.p[..sites], &problem.rho0[..]);
    assert_eq!(&fields.p[problem.grid.nt() * sites..], &problem.rho1[..]);
}

#[test]
fn endpoints_floor_and_determinism_on_a_planar_problem() {
    let mut scenario = preset("ot_2d").unwrap();
    scenario.nx = 8;
    scenario.ny = 8;
    scenario.nt = 6;
    let problem = scenario.build(0.7).unwrap();
    let config = SolverConfig {
        max_iters: 300,
        ..SolverConfig::default()
    };
    let mut solver = Solver::new(&problem, config.clone()).unwrap();
    let grid = problem.grid.clone();
    let last = grid.nt();
    for _ in 0..300 {
        solver.step();
        let f = solver.fields();
        assert_eq!(f.level(&grid, FieldKind::Density, 0), &problem.rho0[..]);
        assert_eq!(f.level(&grid, FieldKind::Density, last), &problem.rho1[..]);
    }
    let first = solver.into_fields();
    assert!(first.p.iter().all(|&v| v >= DENSITY_FLOOR));

    let (again, report) = solve(&problem, &config).unwrap();
    assert_eq!(report.stop_reason, StopReason::MaxIters);
    assert_eq!(again, first);
}
