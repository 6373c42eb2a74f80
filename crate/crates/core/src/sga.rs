//! Successive Galerkin approximation of the optimal control.
//!
//! Each iteration solves the state equation forward and the costate equation
//! backward for the current control `u = C·Ψ`, forms the Hamiltonian gradient
//!
//! ```text
//! G_ij = ∫₀ᵀ ∂H/∂u_i · ψ_j dt = ε ∫₀ᵀ p_i(t) D_ii(θ(t)) ψ_j(t) dt
//! ```
//!
//! by fourth-order quadrature on the grid nodes, and moves `C ← proj(C + γG)`.
//! With `p(T) = −∇Φ`, `−G` is the gradient of the cost `J^ε[u] = Φ(θ(T))`
//! with respect to `C`, so ascent on `H` is descent on `J`.

use serde::{Deserialize, Serialize};

use crate::basis::{BasisKind, BasisSpec, ControlCoefficients};
use crate::dynamics::{AdjointTrajectory, ControlProblem, ControlSamples, Trajectory};
use crate::error::{Error, Result};
use crate::linalg;

/// Sufficient-decrease constant of the backtracking search.
pub const ARMIJO_C: f64 = 1e-4;
/// Halvings tried before the line search gives up.
pub const MAX_HALVINGS: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearch {
    None,
    Backtracking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Given(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub basis: BasisKind,
    pub n_basis: usize,
    pub u_max: f64,
    pub gamma0: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub line_search: LineSearch,
    pub init: Init,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            basis: BasisKind::LegendreShifted,
            n_basis: 4,
            u_max: 5.0,
            gamma0: 1.0,
            tol: 1e-6,
            max_iters: 200,
            line_search: LineSearch::Backtracking,
            init: Init::Zeros,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_basis == 0 {
            return Err(Error::Config("n_basis must be at least 1".into()));
        }
        if !(self.u_max >= 0.0 && self.u_max.is_finite()) {
            return Err(Error::Config(format!("u_max must be finite and >= 0, got {}", self.u_max)));
        }
        if !(self.gamma0 > 0.0 && self.gamma0 <= 1.0) {
            return Err(Error::Config(format!("gamma0 must lie in (0, 1], got {}", self.gamma0)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// `‖G‖_F ≤ tol`.
    Tolerance,
    /// The projected step `‖proj(C + γ₀G) − C‖_F / γ₀` fell below `tol`:
    /// the control sits on the admissible boundary with `G` pointing outward.
    ProjectedStationary,
    MaxIters,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    /// `J^ε[u^k]`.
    pub cost: f64,
    /// `‖G^k‖_F`.
    pub grad_norm: f64,
    /// Step accepted at this iteration (0 when no step was taken).
    pub step: f64,
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub iterations: Vec<IterationRecord>,
    pub coefficients: Vec<Vec<f64>>,
    pub basis: BasisSpec,
    pub u_max: f64,
    pub theta_star: Vec<f64>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

impl SolverReport {
    pub fn final_cost(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.cost)
    }

    pub fn initial_cost(&self) -> f64 {
        self.iterations.first().map_or(f64::NAN, |r| r.cost)
    }

    pub fn control(&self) -> ControlCoefficients {
        ControlCoefficients::from_rows(&self.coefficients, self.basis, self.u_max).expect("report rows match basis")
    }
}

/// One forward/backward sweep for a fixed control.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub trajectory: Trajectory,
    pub adjoint: AdjointTrajectory,
    pub cost: f64,
    pub gradient: ControlCoefficients,
}

/// Galerkin control solver bound to one problem instance.
#[derive(Debug, Clone)]
pub struct GalerkinSolver {
    pub problem: ControlProblem,
    pub config: SolverConfig,
    basis: BasisSpec,
}

impl GalerkinSolver {
    pub fn new(problem: ControlProblem, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let basis = BasisSpec::new(config.basis, config.n_basis, problem.grid.horizon)?;
        Ok(GalerkinSolver { problem, config, basis })
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    pub fn zero_control(&self) -> ControlCoefficients {
        ControlCoefficients::zeros(self.problem.n_params(), self.basis, self.config.u_max)
    }

    pub fn control_from_flat(&self, values: Vec<f64>) -> Result<ControlCoefficients> {
        ControlCoefficients::from_flat(self.problem.n_params(), values, self.basis, self.config.u_max)
    }

    pub fn initial_control(&self) -> Result<ControlCoefficients> {
        let c = match &self.config.init {
            Init::Zeros => self.zero_control(),
            Init::Given(rows) => {
                if rows.len() != self.problem.n_params() {
                    return Err(Error::DimensionMismatch {
                        what: "initial coefficient rows",
                        expected: self.problem.n_params(),
                        got: rows.len(),
                    });
                }
                ControlCoefficients::from_rows(rows, self.basis, self.config.u_max)?
            }
        };
        Ok(self.project(&c))
    }

    pub fn project(&self, c: &ControlCoefficients) -> ControlCoefficients {
        c.project_admissible(self.problem.grid.steps)
    }

    /// `J^ε[u] = Φ(θ(T), Z⁽²⁾)`.
    pub fn cost(&self, c: &ControlCoefficients) -> Result<f64> {
        let traj = self.problem.integrate_forward(c)?;
        self.problem.oracle.phi_value(traj.final_state(), &self.problem.data.validation)
    }

    /// `G_ij = ε ∫ p_i D_ii ψ_j dt`, integrated with the grid's node
    /// quadrature ([`TimeGrid::quadrature_weights`](crate::dynamics::TimeGrid::quadrature_weights)).
    pub fn coefficient_gradient(
        &self,
        traj: &Trajectory,
        adj: &AdjointTrajectory,
        c: &ControlCoefficients,
    ) -> Result<ControlCoefficients> {
        let grid = self.problem.grid;
        if traj.grid != grid || adj.grid != grid || traj.nodes.len() != adj.nodes.len() {
            return Err(Error::GridMismatch("state and costate grids differ".into()));
        }
        let (p, n) = (self.problem.n_params(), c.cols());
        let mut g = vec![0.0; p * n];
        if self.problem.epsilon != 0.0 {
            let weights = grid.quadrature_weights();
            let mut psi = vec![0.0; n];
            for (k, t) in grid.nodes().enumerate() {
                let w = weights[k];
                c.basis.eval_into(t, &mut psi)?;
                let d = self.problem.oracle.d_matrix(&traj.nodes[k], &self.problem.data.dithered)?;
                for i in 0..p {
                    let a = w * self.problem.epsilon * adj.nodes[k][i] * d.diag()[i];
                    for j in 0..n {
                        g[i * n + j] += a * psi[j];
                    }
                }
            }
        }
        Ok(c.with_values(g))
    }

    pub fn sweep(&self, c: &ControlCoefficients) -> Result<Sweep> {
        let samples = ControlSamples::new(c, &self.problem.grid)?;
        let trajectory = self.problem.integrate_forward_sampled(&samples)?;
        let cost = self.problem.oracle.phi_value(trajectory.final_state(), &self.problem.data.validation)?;
        let adjoint = self.problem.integrate_adjoint_sampled(&trajectory, &samples)?;
        let gradient = self.coefficient_gradient(&trajectory, &adjoint, c)?;
        Ok(Sweep { trajectory, adjoint, cost, gradient })
    }

    fn trial(&self, c: &ControlCoefficients, g: &ControlCoefficients, gamma: f64) -> (ControlCoefficients, bool) {
        let raw = c.with_values(linalg::add_scaled(c.as_slice(), gamma, g.as_slice()));
        let projected = self.project(&raw);
        let moved = projected != raw;
        (projected, moved)
    }

    /// One coefficient update from `c` given its sweep.
    ///
    /// Returns `None` when backtracking finds no acceptable step. A step is
    /// accepted when `J(C⁺) ≤ J(C) − c₁/γ·‖C⁺ − C‖²`, which is the usual
    /// `c₁γ‖G‖²` test whenever the projection is inactive.
    pub fn step(&self, c: &ControlCoefficients, sweep: &Sweep) -> Result<Option<(ControlCoefficients, f64, bool)>> {
        let gamma0 = self.config.gamma0;
        match self.config.line_search {
            LineSearch::None => {
                let (next, projected) = self.trial(c, &sweep.gradient, gamma0);
                Ok(Some((next, gamma0, projected)))
            }
            LineSearch::Backtracking => {
                for q in 0..=MAX_HALVINGS {
                    let gamma = gamma0 * 0.5f64.powi(q as i32);
                    let (next, projected) = self.trial(c, &sweep.gradient, gamma);
                    let moved = linalg::add_scaled(next.as_slice(), -1.0, c.as_slice());
                    let decrease = ARMIJO_C / gamma * linalg::dot(&moved, &moved);
                    match self.cost(&next) {
                        Ok(j) if j <= sweep.cost - decrease => return Ok(Some((next, gamma, projected))),
                        Ok(_) | Err(Error::Divergence { .. }) | Err(Error::NonFinite { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
                Ok(None)
            }
        }
    }

    /// Iterates sweeps and updates until a stopping rule fires.
    pub fn solve(&self) -> Result<SolverReport> {
        let mut c = self.initial_control()?;
        let mut iterations = Vec::new();
        let mut k = 0;
        let (stop_reason, last) = loop {
            let sweep = self.sweep(&c)?;
            let grad_norm = linalg::norm(sweep.gradient.as_slice());
            let mut record = IterationRecord { k, cost: sweep.cost, grad_norm, step: 0.0, projected: false };
            if grad_norm <= self.config.tol {
                iterations.push(record);
                break (StopReason::Tolerance, sweep);
            }
            if k >= self.config.max_iters {
                iterations.push(record);
                break (StopReason::MaxIters, sweep);
            }
            let (full, _) = self.trial(&c, &sweep.gradient, self.config.gamma0);
            let full_move = linalg::add_scaled(full.as_slice(), -1.0, c.as_slice());
            if linalg::norm(&full_move) / self.config.gamma0 <= self.config.tol {
                iterations.push(record);
                break (StopReason::ProjectedStationary, sweep);
            }
            match self.step(&c, &sweep)? {
                Some((next, gamma, projected)) => {
                    record.step = gamma;
                    record.projected = projected;
                    iterations.push(record);
                    log::debug!("iter {k}: J = {:.6e}, |G| = {grad_norm:.3e}, step = {gamma}", sweep.cost);
                    c = next;
                }
                None => {
                    iterations.push(record);
                    break (StopReason::LineSearchFailure, sweep);
                }
            }
            k += 1;
        };
        Ok(SolverReport {
            iterations,
            coefficients: c.to_rows(),
            basis: self.basis,
            u_max: self.config.u_max,
            theta_star: last.trajectory.final_state().to_vec(),
            converged: stop_reason == StopReason::Tolerance,
            stop_reason,
        })
    }

    /// Box maximiser of the Hamiltonian: `u_i = u_max·sign(ε D_ii p_i)`.
    pub fn pointwise_max_control(&self, theta: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        let d = self.problem.oracle.d_matrix(theta, &self.problem.data.dithered)?;
        Ok(pointwise_max_control(d.diag(), p, self.problem.epsilon, self.config.u_max))
    }

    /// Fraction of grid nodes where `H(θ, p, u) ≥ H(θ, p, 0) − tol` along a sweep.
    pub fn pmp_dominance(&self, c: &ControlCoefficients, sweep: &Sweep, tol: f64) -> Result<f64> {
        let grid = self.problem.grid;
        let mut hits = 0;
        for (k, t) in grid.nodes().enumerate() {
            let theta = &sweep.trajectory.nodes[k];
            let p = &sweep.adjoint.nodes[k];
            let u = c.eval(t)?;
            let h_u = self.problem.hamiltonian(theta, p, &u)?;
            let h_0 = self.problem.hamiltonian(theta, p, &vec![0.0; u.len()])?;
            if h_u >= h_0 - tol {
                hits += 1;
            }
        }
        Ok(hits as f64 / (grid.steps + 1) as f64)
    }
}

/// `u_i = u_max·sign(ε d_i p_i)`, zero where the coefficient vanishes.
pub fn pointwise_max_control(d: &[f64], p: &[f64], epsilon: f64, u_max: f64) -> Vec<f64> {
    d.iter()
        .zip(p)
        .map(|(di, pi)| {
            let a = epsilon * di * pi;
            if a > 0.0 {
                u_max
            } else if a < 0.0 {
                -u_max
            } else {
                0.0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Provenance};
    use crate::dynamics::{ProblemData, TimeGrid};
    use crate::model::ModelOracle;

    fn bowl(center: &[f64], tag: Provenance) -> Dataset {
        Dataset::quadratic_bowl(center, tag).unwrap()
    }

    /// J₀ = ½θ² on train, J̃₀ = ½(θ − 0.3)², Φ = ½(θ − 0.5)²; p = 1.
    fn scalar_problem(epsilon: f64, steps: usize) -> ControlProblem {
        let data = ProblemData {
            train: bowl(&[0.0], Provenance::Train),
            dithered: bowl(&[0.3], Provenance::Dithered),
            validation: bowl(&[0.5], Provenance::Validation),
        };
        ControlProblem::new(ModelOracle::linear(1), data, vec![1.0], epsilon, TimeGrid::new(1.0, steps).unwrap())
            .unwrap()
    }

    fn solver(problem: ControlProblem, n: usize, u_max: f64) -> GalerkinSolver {
        GalerkinSolver::new(problem, SolverConfig { n_basis: n, u_max, max_iters: 50, ..SolverConfig::default() })
            .unwrap()
    }

    #[test]
    fn zero_control_cost_closed_form() {
        let data = ProblemData {
            train: bowl(&[0.0], Provenance::Train),
            dithered: bowl(&[0.0], Provenance::Dithered),
            validation: bowl(&[0.0], Provenance::Validation),
        };
        let pr = ControlProblem::new(ModelOracle::linear(1), data, vec![1.0], 0.1, TimeGrid::new(1.0, 200).unwrap())
            .unwrap();
        let s = solver(pr, 4, 5.0);
        let j = s.cost(&s.zero_control()).unwrap();
        assert!((j - 0.5 * (-2.0f64).exp()).abs() < 1e-8, "{j}");
        let s2 = solver(s.problem.clone(), 4, 0.5);
        assert_eq!(s2.cost(&s2.zero_control()).unwrap(), j);
    }

    #[test]
    fn fixed_point_cost_is_zero() {
        let data = ProblemData {
            train: bowl(&[0.7], Provenance::Train),
            dithered: bowl(&[0.7], Provenance::Dithered),
            validation: bowl(&[0.7], Provenance::Validation),
        };
        let pr =
            ControlProblem::new(ModelOracle::linear(1), data, vec![0.7], 0.1, TimeGrid::new(1.0, 20).unwrap()).unwrap();
        let s = solver(pr, 2, 1.0);
        let sweep = s.sweep(&s.zero_control()).unwrap();
        assert_eq!(sweep.cost, 0.0);
        assert!(sweep.trajectory.nodes.iter().all(|th| th[0] == 0.7));
        assert!(sweep.gradient.is_zero());
        let report = s.solve().unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations.len(), 1);
        assert_eq!(report.stop_reason, StopReason::Tolerance);
    }

    #[test]
    fn gradient_scales_linearly_in_epsilon() {
        let s1 = solver(scalar_problem(1e-2, 40), 3, 5.0);
        let s2 = solver(scalar_problem(1e-5, 40), 3, 5.0);
        // with C = 0 the trajectory and costate do not depend on ε
        let g1 = s1.sweep(&s1.zero_control()).unwrap().gradient;
        let g2 = s2.sweep(&s2.zero_control()).unwrap().gradient;
        for (a, b) in g1.as_slice().iter().zip(g2.as_slice()) {
            assert!((a * 1e-3 - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = solver(scalar_problem(0.1, 400), 2, 5.0);
        let c = s.control_from_flat(vec![0.4, -0.3]).unwrap();
        let g = s.sweep(&c).unwrap().gradient;
        let step = 1e-5;
        for j in 0..2 {
            let mut plus = c.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[j] += step;
            minus[j] -= step;
            let fd = (s.cost(&c.with_values(plus)).unwrap() - s.cost(&c.with_values(minus)).unwrap()) / (2.0 * step);
            let rel = (-g.as_slice()[j] - fd).abs() / fd.abs();
            assert!(rel < 1e-5, "coefficient {j}: {} vs {fd} (rel {rel:e})", -g.as_slice()[j]);
        }
    }

    #[test]
    fn zero_gradient_step_is_fixed_point() {
        let s = solver(scalar_problem(0.1, 20), 2, 5.0);
        let c = s.control_from_flat(vec![0.2, 0.1]).unwrap();
        let mut sweep = s.sweep(&c).unwrap();
        sweep.gradient = c.with_values(vec![0.0, 0.0]);
        let cfg = SolverConfig { line_search: LineSearch::None, ..s.config.clone() };
        let s_none = GalerkinSolver::new(s.problem.clone(), cfg).unwrap();
        let (next, _, projected) = s_none.step(&c, &sweep).unwrap().unwrap();
        assert_eq!(next, c);
        assert!(!projected);
    }

    #[test]
    fn backtracking_never_increases_cost() {
        for (eps, n) in [(0.1, 2), (0.5, 3), (1.0, 4)] {
            let s = solver(scalar_problem(eps, 60), n, 3.0);
            let report = s.solve().unwrap();
            for w in report.iterations.windows(2) {
                assert!(w[1].cost <= w[0].cost, "{:?}", report.iterations);
            }
            assert!(report.final_cost() < report.initial_cost());
        }
    }

    #[test]
    fn projection_flag_only_when_bound_exceeded() {
        let s = solver(scalar_problem(1.0, 40), 2, 1e-3);
        let report = s.solve().unwrap();
        assert!(report.iterations.iter().any(|r| r.projected));
        let wide = solver(scalar_problem(0.1, 40), 2, 1e6);
        let c = wide.zero_control();
        let sweep = wide.sweep(&c).unwrap();
        let (_, _, projected) = wide.step(&c, &sweep).unwrap().unwrap();
        assert!(!projected);
    }

    #[test]
    fn solve_is_deterministic() {
        let s = solver(scalar_problem(0.3, 50), 3, 2.0);
        assert_eq!(s.solve().unwrap(), s.solve().unwrap());
    }

    #[test]
    fn sign_rule_for_box_maximiser() {
        assert_eq!(pointwise_max_control(&[1.0, 4.0], &[1.0, -1.0], 0.1, 2.0), vec![2.0, -2.0]);
        assert_eq!(pointwise_max_control(&[1.0, 4.0], &[0.0, 0.0], 0.1, 2.0), vec![0.0, 0.0]);
        assert_eq!(pointwise_max_control(&[0.0, 4.0], &[1.0, 1.0], 0.1, 2.0), vec![0.0, 2.0]);
    }

    #[test]
    fn box_maximiser_dominates_corners() {
        let s = solver(scalar_problem(0.4, 10), 2, 1.5);
        let pr = &s.problem;
        for (theta, p) in [(0.8, 0.3), (-0.4, -1.2), (1.7, 0.05)] {
            let u = s.pointwise_max_control(&[theta], &[p]).unwrap();
            let best = pr.hamiltonian(&[theta], &[p], &u).unwrap();
            for corner in [-1.5, 0.0, 1.5] {
                assert!(best >= pr.hamiltonian(&[theta], &[p], &[corner]).unwrap() - 1e-12);
            }
        }
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig { gamma0: 1.5, ..SolverConfig::default() };
        assert!(GalerkinSolver::new(scalar_problem(0.1, 10), bad).is_err());
        let bad = SolverConfig { tol: 0.0, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
    }
}
