//! JSON experiment configuration.
//!
//! Unknown keys are rejected everywhere. A missing required key surfaces as
//! a serde error that names the key; range checks happen in
//! [`ExperimentConfig::validate`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::BasisKind;
use crate::error::{io_err, Error, Result};
use crate::model::{ModelFamily, MAX_MLP_WIDTH};
use crate::sga::{Init, LineSearch, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every sampling step draws from a stream derived from it.
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub control: ControlSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    /// Size of the training set `Z⁽¹⁾`.
    pub m1: usize,
    /// Size of the validation set `Z⁽²⁾`.
    pub m2: usize,
    pub replacement: bool,
    #[serde(default)]
    pub split: SplitMode,
    /// Dithering level `c`; the noise standard deviation is `c · max|y|`.
    pub noise_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Path to a CSV file; relative paths resolve against the config file.
    Csv(PathBuf),
    Synthetic(SynthSpec),
    /// Exact quadratic bowls `J₀ = ½‖θ − a‖²` and `Φ = ½‖θ − b‖²` for the
    /// bias-free linear model. `m1`, `m2` and `split` are ignored.
    Quadratic {
        train_center: Vec<f64>,
        validation_center: Vec<f64>,
    },
}

/// How `Z⁽¹⁾` and `Z⁽²⁾` are drawn from the original set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Two independent bootstraps; the sets may overlap.
    #[default]
    Independent,
    /// One permutation cut into two disjoint parts (`replacement` must be false).
    Disjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// `y = θ_true·x + noise·z`, `x ~ N(0, I)`, `θ_true ~ N(0, I)`.
    Linear,
    /// `y = Σ_k sin(π x_k) + noise·z`, `x ~ U(−1, 1)^d`.
    Sinusoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub generator: Generator,
    pub dim: usize,
    pub rows: usize,
    pub noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    LinearFeatures,
    MlpTanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: FamilyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    pub theta0: Theta0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Theta0 {
    Zeros,
    /// Uniform on `[−scale, scale]^p`.
    Random {
        scale: f64,
    },
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub epsilon: f64,
    #[serde(default = "default_epsilon_max")]
    pub epsilon_max: f64,
    /// Final time `T`.
    pub horizon: f64,
    /// Number of RK4 steps `M`.
    pub steps: usize,
    pub basis: BasisKind,
    pub n_basis: usize,
    pub u_max: f64,
}

fn default_epsilon_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub gamma0: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub line_search: LineSearch,
    #[serde(default = "default_init")]
    pub init: Init,
}

fn default_init() -> Init {
    Init::Zeros
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Also write `adjoint.csv`.
    #[serde(default = "yes")]
    pub adjoint: bool,
    /// Also write `control.csv`.
    #[serde(default = "yes")]
    pub control: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, adjoint: true, control: true }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        if let DataSource::Csv(p) = &mut cfg.data.source {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Range checks that serde cannot express.
    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.m1 == 0 {
            return Err(invalid("data.m1 must be positive"));
        }
        if d.m2 == 0 {
            return Err(invalid("data.m2 must be positive"));
        }
        if !(d.noise_level >= 0.0 && d.noise_level.is_finite()) {
            return Err(invalid(format!("data.noise_level must be >= 0, got {}", d.noise_level)));
        }
        if d.split == SplitMode::Disjoint && d.replacement {
            return Err(invalid("data.split = disjoint requires data.replacement = false"));
        }
        match &d.source {
            DataSource::Synthetic(s) => s.validate()?,
            DataSource::Quadratic { train_center, validation_center } => {
                if train_center.is_empty() || train_center.len() != validation_center.len() {
                    return Err(invalid("data.source.quadratic centers must be non-empty and of equal length"));
                }
                if self.model.family != FamilyName::LinearFeatures
                    || self.model.degree.unwrap_or(1) != 1
                    || self.model.bias.unwrap_or(false)
                {
                    return Err(invalid("data.source.quadratic requires linear_features with degree 1 and no bias"));
                }
            }
            DataSource::Csv(_) => {}
        }

        self.model_family()?;
        if let Theta0::Random { scale } = self.model.theta0 {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(invalid("model.theta0.random.scale must be finite and >= 0"));
            }
        }

        let c = &self.control;
        if !(c.epsilon_max > 0.0 && c.epsilon_max.is_finite()) {
            return Err(invalid(format!("control.epsilon_max must be positive, got {}", c.epsilon_max)));
        }
        if !(c.epsilon > 0.0 && c.epsilon <= c.epsilon_max) {
            return Err(invalid(format!("control.epsilon must lie in (0, {}], got {}", c.epsilon_max, c.epsilon)));
        }
        if !(c.horizon > 0.0 && c.horizon.is_finite()) {
            return Err(invalid(format!("control.horizon must be positive, got {}", c.horizon)));
        }
        if c.steps == 0 {
            return Err(invalid("control.steps must be positive"));
        }
        if c.n_basis == 0 {
            return Err(invalid("control.n_basis must be positive"));
        }
        if !(c.u_max > 0.0 && c.u_max.is_finite()) {
            return Err(invalid(format!("control.u_max must be positive and finite, got {}", c.u_max)));
        }

        let s = &self.solver;
        if !(s.gamma0 > 0.0 && s.gamma0 <= 1.0) {
            return Err(invalid(format!("solver.gamma0 must lie in (0, 1], got {}", s.gamma0)));
        }
        if !(s.tol > 0.0) {
            return Err(invalid(format!("solver.tol must be positive, got {}", s.tol)));
        }
        Ok(())
    }

    pub fn model_family(&self) -> Result<ModelFamily> {
        let m = &self.model;
        match m.family {
            FamilyName::LinearFeatures => {
                if m.width.is_some() {
                    return Err(invalid("model.width only applies to mlp_tanh"));
                }
                let degree = m.degree.unwrap_or(1);
                if degree == 0 {
                    return Err(invalid("model.degree must be at least 1"));
                }
                Ok(ModelFamily::LinearFeatures { degree, bias: m.bias.unwrap_or(false) })
            }
            FamilyName::MlpTanh => {
                if m.degree.is_some() || m.bias.is_some() {
                    return Err(invalid("model.degree and model.bias only apply to linear_features"));
                }
                let width = m.width.ok_or_else(|| invalid("missing field `width` for model.family = mlp_tanh"))?;
                if width == 0 || width > MAX_MLP_WIDTH {
                    return Err(invalid(format!("model.width must be in 1..={MAX_MLP_WIDTH}, got {width}")));
                }
                Ok(ModelFamily::MlpTanh { width })
            }
        }
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            basis: self.control.basis,
            n_basis: self.control.n_basis,
            u_max: self.control.u_max,
            gamma0: self.solver.gamma0,
            tol: self.solver.tol,
            max_iters: self.solver.max_iters,
            line_search: self.solver.line_search,
            init: self.solver.init.clone(),
        }
    }
}

impl SynthSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 {
            return Err(invalid("synthetic rows must be positive"));
        }
        if self.dim == 0 {
            return Err(invalid("synthetic dim must be positive"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid(format!("synthetic noise must be >= 0, got {}", self.noise)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"{
        "seed": 7,
        "data": {
            "source": {"synthetic": {"generator": "linear", "dim": 2, "rows": 200, "noise": 0.1, "seed": 3}},
            "m1": 100, "m2": 100, "replacement": false, "split": "disjoint", "noise_level": 0.05
        },
        "model": {"family": "linear_features", "degree": 1, "bias": false, "theta0": "zeros"},
        "control": {"epsilon": 0.1, "horizon": 1.0, "steps": 200, "basis": "legendre_shifted", "n_basis": 4, "u_max": 5.0},
        "solver": {"gamma0": 1.0, "tol": 1e-6, "max_iters": 100, "line_search": "backtracking"}
    }"#;

    #[test]
    fn parses_and_validates_example() {
        let cfg = ExperimentConfig::from_json(EXAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.control.epsilon_max, 1.0);
        assert_eq!(cfg.solver.init, Init::Zeros);
        assert_eq!(cfg.model_family().unwrap(), ModelFamily::LinearFeatures { degree: 1, bias: false });
    }

    #[test]
    fn missing_field_is_named() {
        let text = EXAMPLE.replace(r#", "u_max": 5.0"#, "");
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("missing field `u_max`"), "{err}");
    }

    #[test]
    fn unknown_field_is_named() {
        let text = EXAMPLE.replace(r#""u_max": 5.0"#, r#""u_max": 5.0, "umax": 1"#);
        let err = ExperimentConfig::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("umax"), "{err}");
    }

    #[test]
    fn range_checks() {
        let base = ExperimentConfig::from_json(EXAMPLE).unwrap();
        let mut c = base.clone();
        c.control.u_max = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("u_max"));
        let mut c = base.clone();
        c.control.epsilon = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("epsilon"));
        let mut c = base.clone();
        c.control.horizon = -1.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.data.replacement = true;
        assert!(c.validate().unwrap_err().to_string().contains("disjoint"));
        let mut c = base;
        c.model.width = Some(4);
        assert!(c.validate().is_err());
    }

    #[test]
    fn mlp_needs_width() {
        let text =
            EXAMPLE.replace(r#""family": "linear_features", "degree": 1, "bias": false"#, r#""family": "mlp_tanh""#);
        let cfg = ExperimentConfig::from_json(&text).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("width"));
    }
}
