//! Browser bindings for a two-parameter quadratic instance.
//!
//! Inputs and outputs are JSON strings so the page needs no generated
//! TypeScript types. Every function is plain Rust and also runs natively.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;
use weakctl_core::dataset::{dither, Dataset, Provenance, RngSeed};
use weakctl_core::sga::{GalerkinSolver, SolverConfig};
use weakctl_core::{BasisKind, BasisSpec, ControlCoefficients, ControlProblem, ModelOracle, ProblemData, TimeGrid};

/// Parameters shared by [`simulate`] and [`optimize`].
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoParams {
    pub train_center: [f64; 2],
    pub validation_center: [f64; 2],
    pub theta0: [f64; 2],
    pub epsilon: f64,
    pub horizon: f64,
    pub steps: usize,
    pub basis: BasisKind,
    pub n_basis: usize,
    pub u_max: f64,
    pub noise_level: f64,
    pub seed: u64,
    pub max_iters: usize,
    /// Control coefficients for [`simulate`], 2 rows of `n_basis`.
    pub coefficients: Option<Vec<Vec<f64>>>,
}

impl Default for DemoParams {
    fn default() -> Self {
        DemoParams {
            train_center: [0.0, 0.0],
            validation_center: [1.5, -0.5],
            theta0: [1.0, 1.0],
            epsilon: 0.1,
            horizon: 1.0,
            steps: 200,
            basis: BasisKind::LegendreShifted,
            n_basis: 4,
            u_max: 5.0,
            noise_level: 0.05,
            seed: 1,
            max_iters: 100,
            coefficients: None,
        }
    }
}

#[derive(Debug, Serialize)]
struct Curves {
    t: Vec<f64>,
    psi: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize)]
struct Flow {
    t: Vec<f64>,
    theta: Vec<[f64; 2]>,
    control: Vec<[f64; 2]>,
    cost: f64,
}

#[derive(Debug, Serialize)]
struct Optimized {
    costs: Vec<f64>,
    stop_reason: String,
    coefficients: Vec<Vec<f64>>,
    controlled: Flow,
    baseline: Flow,
}

fn parse(json: &str) -> Result<DemoParams, String> {
    if json.trim().is_empty() {
        return Ok(DemoParams::default());
    }
    serde_json::from_str(json).map_err(|e| e.to_string())
}

fn problem(p: &DemoParams) -> Result<ControlProblem, String> {
    let train = Dataset::quadratic_bowl(&p.train_center, Provenance::Train).map_err(|e| e.to_string())?;
    let dithered = dither(&train, p.noise_level, RngSeed(p.seed)).map_err(|e| e.to_string())?;
    let validation =
        Dataset::quadratic_bowl(&p.validation_center, Provenance::Validation).map_err(|e| e.to_string())?;
    let grid = TimeGrid::new(p.horizon, p.steps).map_err(|e| e.to_string())?;
    ControlProblem::new(
        ModelOracle::linear(2),
        ProblemData { train, dithered, validation },
        p.theta0.to_vec(),
        p.epsilon,
        grid,
    )
    .map_err(|e| e.to_string())
}

fn solver(p: &DemoParams) -> Result<GalerkinSolver, String> {
    let config = SolverConfig {
        basis: p.basis,
        n_basis: p.n_basis,
        u_max: p.u_max,
        max_iters: p.max_iters,
        ..SolverConfig::default()
    };
    GalerkinSolver::new(problem(p)?, config).map_err(|e| e.to_string())
}

fn flow(solver: &GalerkinSolver, c: &ControlCoefficients) -> Result<Flow, String> {
    let traj = solver.problem.integrate_forward(c).map_err(|e| e.to_string())?;
    let grid = traj.grid;
    let mut t = Vec::with_capacity(grid.steps + 1);
    let mut theta = Vec::with_capacity(grid.steps + 1);
    let mut control = Vec::with_capacity(grid.steps + 1);
    for (k, s) in traj.nodes.iter().enumerate() {
        let tk = grid.node(k);
        let u = c.eval(tk).map_err(|e| e.to_string())?;
        t.push(tk);
        theta.push([s[0], s[1]]);
        control.push([u[0], u[1]]);
    }
    let cost = solver
        .problem
        .oracle
        .phi_value(traj.final_state(), &solver.problem.data.validation)
        .map_err(|e| e.to_string())?;
    Ok(Flow { t, theta, control, cost })
}

/// Samples of every basis function on `samples` evenly spaced times.
#[wasm_bindgen]
pub fn basis_curves(kind: &str, n: usize, horizon: f64, samples: usize) -> Result<String, String> {
    let kind: BasisKind = serde_json::from_value(serde_json::Value::String(kind.into())).map_err(|e| e.to_string())?;
    let spec = BasisSpec::new(kind, n, horizon).map_err(|e| e.to_string())?;
    let samples = samples.max(2);
    let t: Vec<f64> = (0..samples).map(|i| horizon * i as f64 / (samples - 1) as f64).collect();
    let mut psi = vec![Vec::with_capacity(samples); n];
    for &ti in &t {
        for (row, v) in psi.iter_mut().zip(spec.eval(ti).map_err(|e| e.to_string())?) {
            row.push(v);
        }
    }
    serde_json::to_string(&Curves { t, psi }).map_err(|e| e.to_string())
}

/// Forward flow under the given coefficients (zero control if none).
#[wasm_bindgen]
pub fn simulate(params: &str) -> Result<String, String> {
    let p = parse(params)?;
    let s = solver(&p)?;
    let c = match &p.coefficients {
        Some(rows) => s.project(&ControlCoefficients::from_rows(rows, s.basis(), p.u_max).map_err(|e| e.to_string())?),
        None => s.zero_control(),
    };
    serde_json::to_string(&flow(&s, &c)?).map_err(|e| e.to_string())
}

/// Runs the control iteration and returns both flows and the cost history.
#[wasm_bindgen]
pub fn optimize(params: &str) -> Result<String, String> {
    let p = parse(params)?;
    let s = solver(&p)?;
    let report = s.solve().map_err(|e| e.to_string())?;
    let c = report.control();
    let out = Optimized {
        costs: report.iterations.iter().map(|r| r.cost).collect(),
        stop_reason: format!("{:?}", report.stop_reason),
        coefficients: report.coefficients.clone(),
        controlled: flow(&s, &c)?,
        baseline: flow(&s, &s.zero_control())?,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_curves_start_at_known_values() {
        let v: serde_json::Value =
            serde_json::from_str(&basis_curves("legendre_shifted", 3, 1.0, 11).unwrap()).unwrap();
        assert_eq!(v["t"].as_array().unwrap().len(), 11);
        assert!((v["psi"][0][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
        assert!((v["psi"][1][0].as_f64().unwrap() + 3f64.sqrt()).abs() < 1e-12);
        assert!(v["psi"][1][5].as_f64().unwrap().abs() < 1e-12);
        assert!((v["psi"][2][5].as_f64().unwrap() + 5f64.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn unknown_basis_is_an_error() {
        assert!(basis_curves("chebyshev", 3, 1.0, 10).is_err());
    }

    #[test]
    fn zero_control_flow_decays_to_train_center() {
        let v: serde_json::Value = serde_json::from_str(&simulate(r#"{"horizon": 1.0}"#).unwrap()).unwrap();
        let last = &v["theta"][200];
        let want = (-1.0f64).exp();
        assert!((last[0].as_f64().unwrap() - want).abs() < 1e-9);
        assert!((last[1].as_f64().unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn optimize_does_not_increase_cost() {
        let v: serde_json::Value = serde_json::from_str(&optimize(r#"{"max_iters": 20}"#).unwrap()).unwrap();
        let costs: Vec<f64> = serde_json::from_value(v["costs"].clone()).unwrap();
        assert!(costs.windows(2).all(|w| w[1] <= w[0]));
        assert!(v["controlled"]["cost"].as_f64().unwrap() <= v["baseline"]["cost"].as_f64().unwrap());
    }

    #[test]
    fn bad_params_rejected() {
        assert!(simulate(r#"{"horizon": -1}"#).is_err());
        assert!(simulate(r#"{"bogus": 1}"#).is_err());
    }
}
