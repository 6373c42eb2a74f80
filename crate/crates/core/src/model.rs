//! Loss oracles for the two built-in hypothesis families.
//!
//! Every family uses the squared loss `ℓ(a, b) = (a − b)²`, so the training
//! loss is `J₀(θ, Z) = (1/m) Σ (h_θ(x_i) − y_i)²`. The validation cost `Φ` is
//! the same functional evaluated on the validation set.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::linalg::{self, pairwise_sum, pairwise_sum_into};

pub const MAX_MLP_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelFamily {
    /// `h_θ(x) = θ·φ(x)` with `φ(x) = [1?, x, x², …, x^degree]` (per coordinate, no cross terms).
    LinearFeatures { degree: usize, bias: bool },
    /// `h_θ(x) = Σ_j a_j tanh(w_j·x + b_j) + c`.
    MlpTanh { width: usize },
}

/// Pure evaluator of `J₀`, its gradient and Hessian-vector products.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelOracle {
    family: ModelFamily,
    input_dim: usize,
}

/// `D(θ, Z̃) = diag{(∂J₀/∂θ_i)²}`, stored as its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagMatrix(pub Vec<f64>);

impl DiagMatrix {
    pub fn diag(&self) -> &[f64] {
        &self.0
    }
}

impl ModelOracle {
    pub fn new(family: ModelFamily, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be at least 1".into()));
        }
        match family {
            ModelFamily::LinearFeatures { degree: 0, .. } => {
                return Err(Error::InvalidArgument("feature degree must be at least 1".into()))
            }
            ModelFamily::MlpTanh { width } if width == 0 || width > MAX_MLP_WIDTH => {
                return Err(Error::InvalidArgument(format!("mlp width must be in 1..={MAX_MLP_WIDTH}, got {width}")))
            }
            _ => {}
        }
        Ok(ModelOracle { family, input_dim })
    }

    pub fn linear(input_dim: usize) -> Self {
        ModelOracle::new(ModelFamily::LinearFeatures { degree: 1, bias: false }, input_dim).unwrap()
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Number of parameters `p`.
    pub fn n_params(&self) -> usize {
        match self.family {
            ModelFamily::LinearFeatures { degree, bias } => self.input_dim * degree + usize::from(bias),
            ModelFamily::MlpTanh { width } => width * (self.input_dim + 2) + 1,
        }
    }

    fn check(&self, theta: &[f64], data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "dataset features",
                expected: self.input_dim,
                got: data.dim(),
            });
        }
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        Ok(())
    }

    fn features(&self, x: &[f64], degree: usize, bias: bool, out: &mut Vec<f64>) {
        out.clear();
        if bias {
            out.push(1.0);
        }
        for q in 1..=degree {
            out.extend(x.iter().map(|v| v.powi(q as i32)));
        }
    }

    /// `h_θ(x)`.
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> f64 {
        match self.family {
            ModelFamily::LinearFeatures { degree, bias } => {
                let mut k = 0;
                let mut h = 0.0;
                if bias {
                    h += theta[0];
                    k = 1;
                }
                for q in 1..=degree {
                    for v in x {
                        h += theta[k] * v.powi(q as i32);
                        k += 1;
                    }
                }
                h
            }
            ModelFamily::MlpTanh { width } => {
                let d = self.input_dim;
                let (w, rest) = theta.split_at(width * d);
                let (b, rest) = rest.split_at(width);
                let (a, c) = rest.split_at(width);
                let mut h = c[0];
                for j in 0..width {
                    let z = linalg::dot(&w[j * d..(j + 1) * d], x) + b[j];
                    h += a[j] * z.tanh();
                }
                h
            }
        }
    }

    /// Adds `scale · ∇_θ h_θ(x)` into `out`.
    fn add_prediction_gradient(&self, theta: &[f64], x: &[f64], scale: f64, out: &mut [f64]) {
        match self.family {
            ModelFamily::LinearFeatures { degree, bias } => {
                let mut k = 0;
                if bias {
                    out[0] += scale;
                    k = 1;
                }
                for q in 1..=degree {
                    for v in x {
                        out[k] += scale * v.powi(q as i32);
                        k += 1;
                    }
                }
            }
            ModelFamily::MlpTanh { width } => {
                let d = self.input_dim;
                let (w, rest) = theta.split_at(width * d);
                let (b, rest) = rest.split_at(width);
                let a = &rest[..width];
                let (gw, grest) = out.split_at_mut(width * d);
                let (gb, grest) = grest.split_at_mut(width);
                let (ga, gc) = grest.split_at_mut(width);
                for j in 0..width {
                    let t = (linalg::dot(&w[j * d..(j + 1) * d], x) + b[j]).tanh();
                    let s = scale * a[j] * (1.0 - t * t);
                    linalg::axpy(s, x, &mut gw[j * d..(j + 1) * d]);
                    gb[j] += s;
                    ga[j] += scale * t;
                }
                gc[0] += scale;
            }
        }
    }

    /// `J₀(θ, Z) = (1/m) Σ (h_θ(x_i) − y_i)²`.
    pub fn loss_value(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        self.check(theta, data)?;
        let total = pairwise_sum(data.len(), |i| {
            let r = self.predict(theta, data.x(i)) - data.y(i);
            r * r
        });
        Ok(total / data.len() as f64)
    }

    /// `∇_θ J₀(θ, Z)`.
    pub fn loss_gradient(&self, theta: &[f64], data: &Dataset) -> Result<Vec<f64>> {
        self.check(theta, data)?;
        let m = data.len() as f64;
        Ok(pairwise_sum_into(data.len(), theta.len(), &mut |i, acc: &mut [f64]| {
            let x = data.x(i);
            let r = self.predict(theta, x) - data.y(i);
            self.add_prediction_gradient(theta, x, 2.0 * r / m, acc);
        }))
    }

    /// `∇²_θ J₀(θ, Z) · v`.
    ///
    /// Exact for the linear family. For the MLP family this is a central
    /// difference of [`loss_gradient`](Self::loss_gradient) along `v` with
    /// step `√eps·(1 + ‖θ‖)/‖v‖`.
    pub fn loss_hvp(&self, theta: &[f64], data: &Dataset, v: &[f64]) -> Result<Vec<f64>> {
        self.check(theta, data)?;
        if v.len() != theta.len() {
            return Err(Error::DimensionMismatch { what: "hvp direction", expected: theta.len(), got: v.len() });
        }
        let vnorm = linalg::norm(v);
        if vnorm == 0.0 {
            return Ok(vec![0.0; v.len()]);
        }
        match self.family {
            ModelFamily::LinearFeatures { degree, bias } => {
                let m = data.len() as f64;
                let mut phi = Vec::with_capacity(theta.len());
                Ok(pairwise_sum_into(data.len(), theta.len(), &mut |i, acc: &mut [f64]| {
                    self.features(data.x(i), degree, bias, &mut phi);
                    linalg::axpy(2.0 * linalg::dot(&phi, v) / m, &phi, acc);
                }))
            }
            ModelFamily::MlpTanh { .. } => {
                let h = f64::EPSILON.sqrt() * (1.0 + linalg::norm(theta)) / vnorm;
                let gp = self.loss_gradient(&linalg::add_scaled(theta, h, v), data)?;
                let gm = self.loss_gradient(&linalg::add_scaled(theta, -h, v), data)?;
                Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
            }
        }
    }

    /// Diagonal of `D(θ, Z̃)`: the squared components of `∇J₀(θ, Z̃)`.
    pub fn d_matrix(&self, theta: &[f64], dithered: &Dataset) -> Result<DiagMatrix> {
        if dithered.tag() != Provenance::Dithered {
            log::warn!("d_matrix evaluated on a {:?} dataset", dithered.tag());
        }
        let g = self.loss_gradient(theta, dithered)?;
        Ok(DiagMatrix(g.iter().map(|v| v * v).collect()))
    }

    /// Validation cost `Φ(θ, Z⁽²⁾)`.
    pub fn phi_value(&self, theta: &[f64], validation: &Dataset) -> Result<f64> {
        self.loss_value(theta, validation)
    }

    pub fn phi_gradient(&self, theta: &[f64], validation: &Dataset) -> Result<Vec<f64>> {
        self.loss_gradient(theta, validation)
    }
}
