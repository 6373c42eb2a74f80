//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Reference values are computed here from closed forms or from local
//! finite differences, not from the library's own check routines.

use std::process::ExitCode;
use std::time::Instant;

use weakctl_core::config::ExperimentConfig;
use weakctl_core::dataset::{Dataset, Provenance, RngSeed};
use weakctl_core::pipeline::{self, Mode};
use weakctl_core::sga::{GalerkinSolver, SolverConfig, StopReason};
use weakctl_core::verify;
use weakctl_core::{BasisKind, ControlCoefficients, ControlProblem, ModelFamily, ModelOracle, ProblemData, TimeGrid};

type Check = Result<(bool, String), String>;

struct Criterion {
    id: u32,
    title: &'static str,
    limit_secs: Option<f64>,
    run: fn() -> Check,
}

const LINEAR_TASK: &str = r#"{
    "seed": 42,
    "data": {
        "source": {"synthetic": {"generator": "linear", "dim": 2, "rows": 200, "noise": 0.1, "seed": 1}},
        "m1": 100, "m2": 100, "replacement": true, "split": "independent", "noise_level": 0.05
    },
    "model": {"family": "linear_features", "degree": 1, "bias": false, "theta0": "zeros"},
    "control": {"epsilon": 0.1, "horizon": 2.0, "steps": 200, "basis": "legendre_shifted", "n_basis": 4, "u_max": 5.0},
    "solver": {"gamma0": 1.0, "tol": 1e-6, "max_iters": 200, "line_search": "backtracking", "init": "zeros"}
}"#;

fn e<T: std::fmt::Display>(err: T) -> String {
    err.to_string()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn normwise(a: &[f64], b: &[f64]) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    num / max_abs(b)
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// `J₀ = ½‖θ − a‖²`, `Φ = ½‖θ − b‖²`, `Z̃⁽¹⁾` dithered at level `c`.
fn bowl_problem(
    a: &[f64],
    b: &[f64],
    c: f64,
    theta0: Vec<f64>,
    eps: f64,
    horizon: f64,
    steps: usize,
) -> ControlProblem {
    let train = Dataset::quadratic_bowl(a, Provenance::Train).unwrap();
    let dithered = weakctl_core::dataset::dither(&train, c, RngSeed(17)).unwrap();
    let validation = Dataset::quadratic_bowl(b, Provenance::Validation).unwrap();
    ControlProblem::new(
        ModelOracle::linear(a.len()),
        ProblemData { train, dithered, validation },
        theta0,
        eps,
        TimeGrid::new(horizon, steps).unwrap(),
    )
    .unwrap()
}

fn closed_form_final_errors(steps: usize) -> (f64, f64) {
    let problem = bowl_problem(&[0.0], &[0.0], 0.0, vec![1.0], 0.1, 1.0, steps);
    let solver = GalerkinSolver::new(problem, SolverConfig::default()).unwrap();
    let sweep = solver.sweep(&solver.zero_control()).unwrap();
    let theta_t = sweep.trajectory.final_state()[0];
    let p0 = sweep.adjoint.initial()[0];
    ((theta_t - (-1.0f64).exp()).abs(), (p0 + (-2.0f64).exp()).abs())
}

fn c1_closed_form() -> Check {
    let (ef, ea) = closed_form_final_errors(100);
    Ok((
        ef <= 1e-9 && ea <= 1e-8,
        format!("|theta(T) - e^-1| = {ef:.2e} (<= 1e-9), |p(0) + e^-2| = {ea:.2e} (<= 1e-8)"),
    ))
}

fn c2_rk4_order() -> Check {
    let levels = [25usize, 50, 100, 200];
    let mut lh = Vec::new();
    let mut lf = Vec::new();
    let mut la = Vec::new();
    for m in levels {
        let (ef, ea) = closed_form_final_errors(m);
        lh.push((1.0 / m as f64).ln());
        lf.push(ef.ln());
        la.push(ea.ln());
    }
    let (sf, sa) = (slope(&lh, &lf), slope(&lh, &la));
    let lib = verify::check_rk4_order(&[1.0], 1.0, &levels).map_err(e)?;
    let ok = |s: f64| (3.7..=4.3).contains(&s);
    Ok((
        ok(sf) && ok(sa) && lib.iter().all(|r| r.passed),
        format!("forward slope {sf:.3}, adjoint slope {sa:.3} (4.0 +- 0.3)"),
    ))
}

fn toy_rows(dim: usize, rows: usize) -> Vec<(Vec<f64>, f64)> {
    (0..rows)
        .map(|i| {
            let x: Vec<f64> = (0..dim).map(|k| ((i * 7 + k * 3) as f64 * 0.37).sin()).collect();
            let y = (1.3 * x.iter().sum::<f64>()).sin() + 0.2 * ((i as f64) * 1.1).cos();
            (x, y)
        })
        .collect()
}

fn toy_problem(family: ModelFamily, dim: usize, steps: usize) -> ControlProblem {
    let rows = toy_rows(dim, 60);
    let train = Dataset::from_rows(&rows[..30], Provenance::Train).unwrap();
    let validation = Dataset::from_rows(&rows[30..], Provenance::Validation).unwrap();
    let dithered = weakctl_core::dataset::dither(&train, 0.1, RngSeed(5)).unwrap();
    let oracle = ModelOracle::new(family, dim).unwrap();
    let n = oracle.n_params();
    let theta0: Vec<f64> = (0..n).map(|i| 0.5 * ((i as f64) * 0.9 + 0.3).sin()).collect();
    ControlProblem::new(
        oracle,
        ProblemData { train, dithered, validation },
        theta0,
        0.5,
        TimeGrid::new(1.0, steps).unwrap(),
    )
    .unwrap()
}

/// Worst normwise error of `−G` against central differences of `J^ε` over
/// a few admissible controls.
fn coefficient_gradient_error(problem: ControlProblem, step: f64) -> Result<f64, String> {
    let config = SolverConfig { n_basis: 4, u_max: 2.0, ..SolverConfig::default() };
    let solver = GalerkinSolver::new(problem, config).map_err(e)?;
    let n = solver.problem.n_params() * 4;
    let mut worst = 0.0f64;
    for probe in 0..3 {
        let values: Vec<f64> = (0..n).map(|k| 0.4 * ((k * 13 + probe * 7) as f64 * 0.61).sin()).collect();
        let c = solver.project(&solver.control_from_flat(values).map_err(e)?);
        let g = solver.sweep(&c).map_err(e)?.gradient;
        let neg_g: Vec<f64> = g.as_slice().iter().map(|v| -v).collect();
        let mut fd = Vec::with_capacity(n);
        for k in 0..n {
            let mut plus = c.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[k] += step;
            minus[k] -= step;
            let jp = solver.cost(&c.with_values(plus)).map_err(e)?;
            let jm = solver.cost(&c.with_values(minus)).map_err(e)?;
            fd.push((jp - jm) / (2.0 * step));
        }
        worst = worst.max(normwise(&neg_g, &fd));
    }
    Ok(worst)
}

fn c3_gradient_identity() -> Check {
    let lin = toy_problem(ModelFamily::LinearFeatures { degree: 2, bias: true }, 2, 400);
    assert_eq!(lin.n_params(), 5);
    let err_lin = coefficient_gradient_error(lin, 1e-5)?;
    let mlp = toy_problem(ModelFamily::MlpTanh { width: 4 }, 1, 400);
    let err_mlp = coefficient_gradient_error(mlp, 1e-5)?;
    Ok((
        err_lin <= 1e-5 && err_mlp <= 1e-3,
        format!("linear p=5 N=4 M=400: {err_lin:.2e} (<= 1e-5), mlp_tanh width 4: {err_mlp:.2e} (<= 1e-3)"),
    ))
}

fn linear_task() -> Result<(GalerkinSolver, weakctl_core::SolverReport), String> {
    let config = ExperimentConfig::from_json(LINEAR_TASK).map_err(e)?;
    let exp = pipeline::prepare(&config).map_err(e)?;
    let solver = exp.galerkin().map_err(e)?;
    let report = solver.solve().map_err(e)?;
    Ok((solver, report))
}

fn c4_descent() -> Check {
    let (_, report) = linear_task()?;
    let costs: Vec<f64> = report.iterations.iter().map(|r| r.cost).collect();
    let monotone = costs.windows(2).all(|w| w[1] <= w[0]);
    let g0 = report.iterations[0].grad_norm;
    let (j0, jf) = (costs[0], *costs.last().unwrap());
    let strict_needed = g0 > 1e-6;
    let ok = monotone && jf <= j0 && (!strict_needed || jf < j0);
    Ok((
        ok,
        format!(
            "{} iterates, non-increasing: {monotone}, J(0) = {j0:.8e}, J(u*) = {jf:.8e}, |G0| = {g0:.2e}, stop: {:?}",
            costs.len(),
            report.stop_reason
        ),
    ))
}

fn c5_epsilon_scaling() -> Check {
    let problem = toy_problem(ModelFamily::LinearFeatures { degree: 1, bias: true }, 2, 200);
    let basis = weakctl_core::BasisSpec::new(BasisKind::LegendreShifted, 4, 1.0).map_err(e)?;
    let rows: Vec<Vec<f64>> = (0..problem.n_params()).map(|i| vec![1.0, -0.5 * i as f64, 0.3, 0.2]).collect();
    let c = ControlCoefficients::from_rows(&rows, basis, 5.0).map_err(e)?;
    if !c.is_admissible(200) {
        return Err("fixed control is not admissible".into());
    }
    let base = problem.with_epsilon(0.0).integrate_forward(&c).map_err(e)?;
    let epsilons = [1e-1, 1e-2, 1e-3, 1e-4];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for eps in epsilons {
        let t = problem.with_epsilon(eps).integrate_forward(&c).map_err(e)?;
        let d: f64 = t.final_state().iter().zip(base.final_state()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        xs.push(eps.ln());
        ys.push(d.ln());
    }
    let s = slope(&xs, &ys);
    Ok(((s - 1.0).abs() <= 0.1, format!("slope {s:.4} (1.0 +- 0.1)")))
}

/// Re-optimised value function at `θ₀ ± δ` against `−p(0)` at the optimum.
fn dp_error(u_max: f64) -> Result<(f64, String), String> {
    let delta = 1e-3;
    let config = SolverConfig { n_basis: 1, u_max, tol: 1e-8, ..SolverConfig::default() };
    let solve = |theta0: f64| -> Result<(f64, StopReason, f64), String> {
        let problem = bowl_problem(&[0.0], &[2.0], 0.05, vec![theta0], 0.1, 1.0, 200);
        let solver = GalerkinSolver::new(problem, config.clone()).map_err(e)?;
        let report = solver.solve().map_err(e)?;
        let sweep = solver.sweep(&report.control()).map_err(e)?;
        Ok((report.final_cost(), report.stop_reason, -sweep.adjoint.initial()[0]))
    };
    let (_, stop, minus_p0) = solve(1.0)?;
    let (vp, sp, _) = solve(1.0 + delta)?;
    let (vm, sm, _) = solve(1.0 - delta)?;
    let accepted = |s: StopReason| matches!(s, StopReason::Tolerance | StopReason::ProjectedStationary);
    if !(accepted(stop) && accepted(sp) && accepted(sm)) {
        return Err(format!("solver stops {stop:?} / {sp:?} / {sm:?}"));
    }
    let fd = (vp - vm) / (2.0 * delta);
    let err = (fd - minus_p0).abs() / minus_p0.abs();
    Ok((err, format!("-p(0) = {minus_p0:.8}, dV/dtheta0 = {fd:.8}, rel {err:.2e}")))
}

fn c6_dp_identity() -> Check {
    let (err, detail) = dp_error(5.0)?;
    let (err0, detail0) = dp_error(0.0)?;
    let problem = bowl_problem(&[0.0], &[2.0], 0.05, vec![1.0], 0.1, 1.0, 200);
    let lib = verify::check_dp_identity(
        &GalerkinSolver::new(problem, SolverConfig { n_basis: 1, tol: 1e-8, ..SolverConfig::default() }).map_err(e)?,
        1e-3,
        verify::TOL_DP,
    )
    .map_err(e)?;
    Ok((
        err <= 0.05 && err0 <= 1e-4 && lib.passed,
        format!("u_max=5: {detail} (<= 5e-2); u_max=0: {detail0} (<= 1e-4)"),
    ))
}

fn c7_pmp_dominance() -> Check {
    let (solver, report) = linear_task()?;
    let c = report.control();
    let sweep = solver.sweep(&c).map_err(e)?;
    let grid = solver.problem.grid;
    let tol = solver.config.tol;
    let zero = vec![0.0; solver.problem.n_params()];
    let mut good = 0;
    for k in 0..=grid.steps {
        let t = grid.node(k);
        let (theta, p) = (&sweep.trajectory.nodes[k], &sweep.adjoint.nodes[k]);
        let u = c.eval(t).map_err(e)?;
        let h_u = solver.problem.hamiltonian(theta, p, &u).map_err(e)?;
        let h_0 = solver.problem.hamiltonian(theta, p, &zero).map_err(e)?;
        if h_u >= h_0 - tol {
            good += 1;
        }
    }
    let frac = good as f64 / (grid.steps + 1) as f64;
    Ok((
        frac >= 0.9,
        format!(
            "{good}/{} nodes ({:.1}%, >= 90%), final iterate stop: {:?}",
            grid.steps + 1,
            100.0 * frac,
            report.stop_reason
        ),
    ))
}

fn c8_determinism() -> Check {
    let config = ExperimentConfig::from_json(LINEAR_TASK).map_err(e)?;
    let tmp = tempfile::tempdir().map_err(e)?;
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline::run(&config, &a, Mode::Run).map_err(e)?;
    pipeline::run(&config, &b, Mode::Run).map_err(e)?;
    let mut same = true;
    for f in ["metrics.json", "coeffs.csv"] {
        same &= std::fs::read(a.join(f)).map_err(e)? == std::fs::read(b.join(f)).map_err(e)?;
    }
    Ok((same, "metrics.json and coeffs.csv byte-identical across two runs".into()))
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, title: "closed-form flow and costate", limit_secs: Some(1.0), run: c1_closed_form },
        Criterion { id: 2, title: "RK4 order", limit_secs: Some(5.0), run: c2_rk4_order },
        Criterion { id: 3, title: "coefficient gradient identity", limit_secs: Some(30.0), run: c3_gradient_identity },
        Criterion { id: 4, title: "monotone descent, baseline dominance", limit_secs: Some(60.0), run: c4_descent },
        Criterion { id: 5, title: "epsilon-perturbation scaling", limit_secs: Some(10.0), run: c5_epsilon_scaling },
        Criterion { id: 6, title: "value-function gradient at t = 0", limit_secs: Some(120.0), run: c6_dp_identity },
        Criterion { id: 7, title: "Hamiltonian dominance diagnostic", limit_secs: None, run: c7_pmp_dominance },
        Criterion { id: 8, title: "determinism", limit_secs: None, run: c8_determinism },
    ];
    let mut failures = 0;
    for c in criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let secs = start.elapsed().as_secs_f64();
        let in_time = c.limit_secs.is_none_or(|l| secs < l);
        let (passed, detail) = match outcome {
            Ok((ok, d)) => (ok && in_time, d),
            Err(msg) => (false, format!("error: {msg}")),
        };
        let limit = c.limit_secs.map_or(String::new(), |l| format!(" / {l:.0} s"));
        println!("{} [{}] {}: {detail} [{secs:.2} s{limit}]", if passed { "PASS" } else { "FAIL" }, c.id, c.title);
        if !passed {
            failures += 1;
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
