//! State and costate dynamics of the weakly-controlled gradient flow
//!
//! ```text
//! θ̇ = f(θ, u) = −∇J₀(θ, Z⁽¹⁾) + ε·D(θ, Z̃⁽¹⁾)·u,      θ(0) = θ₀
//! ṗ = −(∂f/∂θ)ᵀ p,                                   p(T) = −∇Φ(θ(T), Z⁽²⁾)
//! ```
//!
//! with `(∂f/∂θ)_{ik} = −H_{ik} + 2ε u_i g̃_i H̃_{ik}`, where `H`, `H̃` are the
//! loss Hessians on the training and dithered sets and `g̃ = ∇J₀(θ, Z̃⁽¹⁾)`.
//! Both equations are integrated by classical RK4 on a shared uniform grid.

use serde::Serialize;

use crate::basis::ControlCoefficients;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ModelOracle;

pub const DEFAULT_DIVERGENCE_BOUND: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeGrid {
    pub horizon: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon T must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("number of steps M must be positive".into()));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_k = k·T/M`, with `t_M = T` exactly.
    pub fn node(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn midpoint(&self, k: usize) -> f64 {
        self.horizon * (k as f64 + 0.5) / self.steps as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(|k| self.node(k))
    }

    /// Node weights of a fourth-order composite rule: Simpson for even `M`,
    /// Simpson plus a closing 3/8 panel for odd `M ≥ 3`, trapezoid for `M = 1`.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let m = self.steps;
        let h = self.step();
        let mut w = vec![0.0; m + 1];
        if m == 1 {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
            return w;
        }
        let simpson_end = if m.is_multiple_of(2) { m } else { m - 3 };
        for k in (0..simpson_end).step_by(2) {
            w[k] += h / 3.0;
            w[k + 1] += 4.0 * h / 3.0;
            w[k + 2] += h / 3.0;
        }
        if simpson_end < m {
            let k = simpson_end;
            w[k] += 3.0 * h / 8.0;
            w[k + 1] += 9.0 * h / 8.0;
            w[k + 2] += 9.0 * h / 8.0;
            w[k + 3] += 3.0 * h / 8.0;
        }
        w
    }
}

/// The three datasets that drive one control problem.
#[derive(Debug, Clone)]
pub struct ProblemData {
    /// `Z⁽¹⁾`, drives the gradient flow.
    pub train: Dataset,
    /// `Z̃⁽¹⁾`, enters through `D`.
    pub dithered: Dataset,
    /// `Z⁽²⁾`, defines the terminal cost `Φ`.
    pub validation: Dataset,
}

/// Forward solution: states at every node and every half-step midpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    /// `θ(t_k)`, `k = 0..=M`.
    pub nodes: Vec<Vec<f64>>,
    /// `θ(t_k + h/2)`, `k = 0..M`, from the cubic Hermite interpolant of each step.
    pub midpoints: Vec<Vec<f64>>,
    /// `f(θ(t_k), u(t_k))` at every node.
    pub rhs: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn final_state(&self) -> &[f64] {
        self.nodes.last().expect("trajectory has at least two nodes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    pub grid: TimeGrid,
    /// `p(t_k)`, `k = 0..=M`.
    pub nodes: Vec<Vec<f64>>,
}

impl AdjointTrajectory {
    pub fn initial(&self) -> &[f64] {
        &self.nodes[0]
    }
}

/// Control values sampled at the grid nodes and midpoints.
#[derive(Debug, Clone)]
pub struct ControlSamples {
    pub nodes: Vec<Vec<f64>>,
    pub midpoints: Vec<Vec<f64>>,
}

impl ControlSamples {
    pub fn new(coeffs: &ControlCoefficients, grid: &TimeGrid) -> Result<Self> {
        Ok(ControlSamples {
            nodes: grid.nodes().map(|t| coeffs.eval(t)).collect::<Result<_>>()?,
            midpoints: (0..grid.steps).map(|k| coeffs.eval(grid.midpoint(k))).collect::<Result<_>>()?,
        })
    }
}

/// One instance of the optimal control problem: model, data, `ε`, `θ₀` and grid.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub oracle: ModelOracle,
    pub data: ProblemData,
    pub theta0: Vec<f64>,
    pub epsilon: f64,
    pub grid: TimeGrid,
    pub divergence_bound: f64,
    /// Negates the adjoint right-hand side. Only used to check that the
    /// verification suite catches a corrupted costate.
    #[doc(hidden)]
    pub corrupt_adjoint: bool,
}

impl ControlProblem {
    pub fn new(oracle: ModelOracle, data: ProblemData, theta0: Vec<f64>, epsilon: f64, grid: TimeGrid) -> Result<Self> {
        for (name, d) in [("train", &data.train), ("dithered", &data.dithered), ("validation", &data.validation)] {
            if d.dim() != oracle.input_dim() {
                return Err(Error::InvalidArgument(format!(
                    "{name} dataset has {} features, model expects {}",
                    d.dim(),
                    oracle.input_dim()
                )));
            }
        }
        if theta0.len() != oracle.n_params() {
            return Err(Error::DimensionMismatch {
                what: "initial parameters",
                expected: oracle.n_params(),
                got: theta0.len(),
            });
        }
        if !linalg::all_finite(&theta0) {
            return Err(Error::InvalidArgument("initial parameters must be finite".into()));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
        }
        Ok(ControlProblem {
            oracle,
            data,
            theta0,
            epsilon,
            grid,
            divergence_bound: DEFAULT_DIVERGENCE_BOUND,
            corrupt_adjoint: false,
        })
    }

    pub fn n_params(&self) -> usize {
        self.oracle.n_params()
    }

    pub fn with_theta0(&self, theta0: Vec<f64>) -> Self {
        ControlProblem { theta0, ..self.clone() }
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        ControlProblem { epsilon, ..self.clone() }
    }

    pub fn with_grid(&self, grid: TimeGrid) -> Self {
        ControlProblem { grid, ..self.clone() }
    }

    fn check_vec(&self, what: &'static str, v: &[f64]) -> Result<()> {
        if v.len() != self.n_params() {
            return Err(Error::DimensionMismatch { what, expected: self.n_params(), got: v.len() });
        }
        Ok(())
    }

    fn check_coeffs(&self, coeffs: &ControlCoefficients) -> Result<()> {
        if coeffs.rows() != self.n_params() {
            return Err(Error::DimensionMismatch {
                what: "control coefficient rows",
                expected: self.n_params(),
                got: coeffs.rows(),
            });
        }
        if coeffs.basis.horizon != self.grid.horizon {
            return Err(Error::GridMismatch(format!(
                "basis horizon {} differs from grid horizon {}",
                coeffs.basis.horizon, self.grid.horizon
            )));
        }
        Ok(())
    }

    fn control_active(&self, u: &[f64]) -> bool {
        self.epsilon != 0.0 && u.iter().any(|v| *v != 0.0)
    }

    /// `f(θ, u) = −∇J₀(θ, Z⁽¹⁾) + ε·D(θ, Z̃⁽¹⁾)·u`.
    pub fn forward_rhs(&self, theta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_vec("control", u)?;
        let mut f = self.oracle.loss_gradient(theta, &self.data.train)?;
        linalg::scale(-1.0, &mut f);
        if self.control_active(u) {
            let d = self.oracle.d_matrix(theta, &self.data.dithered)?;
            for ((fi, di), ui) in f.iter_mut().zip(d.diag()).zip(u) {
                *fi += self.epsilon * di * ui;
            }
        }
        Ok(f)
    }

    /// `ṗ = −(∂f/∂θ)ᵀ p = H p − 2ε H̃ (g̃ ⊙ u ⊙ p)`.
    pub fn adjoint_rhs(&self, theta: &[f64], p: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_vec("costate", p)?;
        self.check_vec("control", u)?;
        let mut out = self.oracle.loss_hvp(theta, &self.data.train, p)?;
        if self.control_active(u) {
            let g = self.oracle.loss_gradient(theta, &self.data.dithered)?;
            let w: Vec<f64> = g.iter().zip(u).zip(p).map(|((gi, ui), pi)| gi * ui * pi).collect();
            let hw = self.oracle.loss_hvp(theta, &self.data.dithered, &w)?;
            linalg::axpy(-2.0 * self.epsilon, &hw, &mut out);
        }
        if self.corrupt_adjoint {
            linalg::scale(-1.0, &mut out);
        }
        Ok(out)
    }

    /// `H^ε(θ, p, u) = ⟨p, f(θ, u)⟩`.
    pub fn hamiltonian(&self, theta: &[f64], p: &[f64], u: &[f64]) -> Result<f64> {
        self.check_vec("costate", p)?;
        Ok(linalg::dot(p, &self.forward_rhs(theta, u)?))
    }

    pub fn integrate_forward(&self, coeffs: &ControlCoefficients) -> Result<Trajectory> {
        self.check_coeffs(coeffs)?;
        let controls = ControlSamples::new(coeffs, &self.grid)?;
        self.integrate_forward_sampled(&controls)
    }

    /// RK4 with the control evaluated exactly at the stage times.
    pub fn integrate_forward_sampled(&self, u: &ControlSamples) -> Result<Trajectory> {
        let grid = self.grid;
        let h = grid.step();
        let m = grid.steps;
        let mut nodes = Vec::with_capacity(m + 1);
        let mut midpoints = Vec::with_capacity(m);
        let mut rhs = Vec::with_capacity(m + 1);

        let mut theta = self.theta0.clone();
        let mut k1 = self.finite_rhs(&theta, &u.nodes[0], 0.0)?;
        for k in 0..m {
            let t = grid.node(k);
            let k2 = self.finite_rhs(&linalg::add_scaled(&theta, 0.5 * h, &k1), &u.midpoints[k], t + 0.5 * h)?;
            let k3 = self.finite_rhs(&linalg::add_scaled(&theta, 0.5 * h, &k2), &u.midpoints[k], t + 0.5 * h)?;
            let k4 = self.finite_rhs(&linalg::add_scaled(&theta, h, &k3), &u.nodes[k + 1], t + h)?;
            let next: Vec<f64> =
                (0..theta.len()).map(|i| theta[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
            let t_next = grid.node(k + 1);
            let norm = linalg::norm(&next);
            if !norm.is_finite() || norm > self.divergence_bound {
                return Err(Error::Divergence { t: t_next, norm, bound: self.divergence_bound });
            }
            let f_next = self.finite_rhs(&next, &u.nodes[k + 1], t_next)?;
            // cubic Hermite interpolant at the half step
            let mid = (0..theta.len()).map(|i| 0.5 * (theta[i] + next[i]) + h / 8.0 * (k1[i] - f_next[i])).collect();
            nodes.push(std::mem::replace(&mut theta, next));
            rhs.push(std::mem::replace(&mut k1, f_next));
            midpoints.push(mid);
        }
        nodes.push(theta);
        rhs.push(k1);
        Ok(Trajectory { grid, nodes, midpoints, rhs })
    }

    fn finite_rhs(&self, theta: &[f64], u: &[f64], t: f64) -> Result<Vec<f64>> {
        let f = self.forward_rhs(theta, u)?;
        if !linalg::all_finite(&f) {
            return Err(Error::NonFinite { what: "forward right-hand side", t });
        }
        Ok(f)
    }

    /// Backward RK4 from `p(T) = −∇Φ(θ(T), Z⁽²⁾)`, reading the state at stage
    /// times from the stored nodes and midpoints.
    pub fn integrate_adjoint(&self, traj: &Trajectory, coeffs: &ControlCoefficients) -> Result<AdjointTrajectory> {
        self.check_coeffs(coeffs)?;
        let controls = ControlSamples::new(coeffs, &self.grid)?;
        self.integrate_adjoint_sampled(traj, &controls)
    }

    pub fn integrate_adjoint_sampled(&self, traj: &Trajectory, u: &ControlSamples) -> Result<AdjointTrajectory> {
        let grid = self.grid;
        if traj.grid != grid || traj.nodes.len() != grid.steps + 1 || traj.midpoints.len() != grid.steps {
            return Err(Error::GridMismatch("trajectory does not match the problem grid".into()));
        }
        let h = grid.step();
        let m = grid.steps;
        let mut p = self.oracle.phi_gradient(traj.final_state(), &self.data.validation)?;
        linalg::scale(-1.0, &mut p);
        if !linalg::all_finite(&p) {
            return Err(Error::NonFinite { what: "terminal costate", t: grid.horizon });
        }
        let mut nodes = vec![Vec::new(); m + 1];
        for k in (0..m).rev() {
            let t = grid.node(k);
            let (th_hi, th_mid, th_lo) = (&traj.nodes[k + 1], &traj.midpoints[k], &traj.nodes[k]);
            let k1 = self.adjoint_rhs(th_hi, &p, &u.nodes[k + 1])?;
            let k2 = self.adjoint_rhs(th_mid, &linalg::add_scaled(&p, -0.5 * h, &k1), &u.midpoints[k])?;
            let k3 = self.adjoint_rhs(th_mid, &linalg::add_scaled(&p, -0.5 * h, &k2), &u.midpoints[k])?;
            let k4 = self.adjoint_rhs(th_lo, &linalg::add_scaled(&p, -h, &k3), &u.nodes[k])?;
            let prev: Vec<f64> =
                (0..p.len()).map(|i| p[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect();
            if !linalg::all_finite(&prev) {
                return Err(Error::NonFinite { what: "costate", t });
            }
            nodes[k + 1] = std::mem::replace(&mut p, prev);
        }
        nodes[0] = p;
        Ok(AdjointTrajectory { grid, nodes })
    }
}
