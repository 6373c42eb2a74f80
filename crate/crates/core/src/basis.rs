//! Time basis `Ψ(t)` and the Galerkin control `u(t) = C·Ψ(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack allowed when a time lands marginally outside `[0, T]`
/// through rounding; such times are clamped.
const TIME_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// Orthonormal shifted Legendre polynomials on `[0, T]`.
    LegendreShifted,
    /// `{1, sin(2πkt/T), cos(2πkt/T), …}`, orthonormal on `[0, T]`.
    Fourier,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub n: usize,
    pub horizon: f64,
}

impl BasisSpec {
    pub fn new(kind: BasisKind, n: usize, horizon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("basis size N must be at least 1".into()));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon T must be positive, got {horizon}")));
        }
        Ok(BasisSpec { kind, n, horizon })
    }

    fn clamp_time(&self, t: f64) -> Result<f64> {
        let slack = TIME_SLACK * self.horizon;
        if !(t >= -slack && t <= self.horizon + slack) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        Ok(t.clamp(0.0, self.horizon))
    }

    /// `Ψ(t) = [ψ₁(t), …, ψ_N(t)]`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let t = self.clamp_time(t)?;
        let big_t = self.horizon;
        match self.kind {
            BasisKind::LegendreShifted => {
                let s = 2.0 * t / big_t - 1.0;
                // Bonnet recurrence: (j+1) P_{j+1} = (2j+1) s P_j − j P_{j−1}
                let (mut prev, mut cur) = (0.0, 1.0);
                for (j, o) in out.iter_mut().enumerate() {
                    *o = ((2 * j + 1) as f64 / big_t).sqrt() * cur;
                    let jf = j as f64;
                    let next = ((2.0 * jf + 1.0) * s * cur - jf * prev) / (jf + 1.0);
                    prev = cur;
                    cur = next;
                }
            }
            BasisKind::Fourier => {
                let c0 = (1.0 / big_t).sqrt();
                let c = (2.0 / big_t).sqrt();
                for (j, o) in out.iter_mut().enumerate() {
                    *o = if j == 0 {
                        c0
                    } else {
                        let k = j.div_ceil(2) as f64;
                        let arg = 2.0 * std::f64::consts::PI * k * t / big_t;
                        if j % 2 == 1 {
                            c * arg.sin()
                        } else {
                            c * arg.cos()
                        }
                    };
                }
            }
        }
        Ok(())
    }
}

/// Coefficient matrix `C` (p × N, row-major) with its basis and box bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlCoefficients {
    rows: usize,
    coeffs: Vec<f64>,
    pub basis: BasisSpec,
    pub u_max: f64,
}

impl ControlCoefficients {
    pub fn zeros(rows: usize, basis: BasisSpec, u_max: f64) -> Self {
        ControlCoefficients { rows, coeffs: vec![0.0; rows * basis.n], basis, u_max }
    }

    pub fn from_rows(rows: &[Vec<f64>], basis: BasisSpec, u_max: f64) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(rows.len() * basis.n);
        for r in rows {
            if r.len() != basis.n {
                return Err(Error::DimensionMismatch { what: "coefficient row", expected: basis.n, got: r.len() });
            }
            coeffs.extend_from_slice(r);
        }
        Ok(ControlCoefficients { rows: rows.len(), coeffs, basis, u_max })
    }

    pub fn from_flat(rows: usize, coeffs: Vec<f64>, basis: BasisSpec, u_max: f64) -> Result<Self> {
        if coeffs.len() != rows * basis.n {
            return Err(Error::DimensionMismatch {
                what: "coefficient matrix",
                expected: rows * basis.n,
                got: coeffs.len(),
            });
        }
        Ok(ControlCoefficients { rows, coeffs, basis, u_max })
    }

    /// Number of controlled components `p`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.basis.n
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coeffs[i * self.basis.n..(i + 1) * self.basis.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.coeffs[i * self.basis.n + j]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.coeffs.chunks(self.basis.n).map(<[f64]>::to_vec).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    /// Same basis and bound with new coefficient values.
    pub fn with_values(&self, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), self.coeffs.len());
        ControlCoefficients { coeffs, ..self.clone() }
    }

    /// `u(t) = C·Ψ(t)`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let psi = self.basis.eval(t)?;
        Ok(self.apply(&psi))
    }

    /// `C·ψ` for a precomputed basis vector.
    pub fn apply(&self, psi: &[f64]) -> Vec<f64> {
        self.coeffs.chunks(self.basis.n).map(|row| row.iter().zip(psi).map(|(c, s)| c * s).sum()).collect()
    }

    /// Uniform grid of `10·(steps + 1)` times used for admissibility checks.
    pub fn check_grid(&self, steps: usize) -> impl Iterator<Item = f64> {
        let n = 10 * (steps + 1);
        let big_t = self.basis.horizon;
        (0..n).map(move |k| if k + 1 == n { big_t } else { big_t * k as f64 / (n - 1) as f64 })
    }

    /// Per-row `max_t |u_i(t)|` over [`check_grid`](Self::check_grid).
    pub fn grid_max(&self, steps: usize) -> Vec<f64> {
        let mut psi = vec![0.0; self.basis.n];
        let mut g = vec![0.0f64; self.rows];
        for t in self.check_grid(steps) {
            self.basis.eval_into(t, &mut psi).expect("grid lies in [0, T]");
            for (gi, ui) in g.iter_mut().zip(self.apply(&psi)) {
                *gi = gi.max(ui.abs());
            }
        }
        g
    }

    pub fn is_admissible(&self, steps: usize) -> bool {
        self.grid_max(steps).iter().all(|g| *g <= self.u_max * (1.0 + 1e-12))
    }

    /// Rescales every row whose grid maximum exceeds `u_max` back onto the box.
    pub fn project_admissible(&self, steps: usize) -> ControlCoefficients {
        let mut out = self.clone();
        for (i, g) in self.grid_max(steps).into_iter().enumerate() {
            if g > self.u_max * (1.0 + 1e-12) {
                let s = self.u_max / g;
                for c in &mut out.coeffs[i * self.basis.n..(i + 1) * self.basis.n] {
                    *c *= s;
                }
            }
        }
        out
    }
}
