//! Experiment driver: data pipeline, solver invocation and artifact files.
//!
//! Every command writes into one output directory and finishes with
//! `manifest.json`, which records the effective config, its SHA-256, all
//! derived seeds and the SHA-256 of every artifact written.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::ControlCoefficients;
use crate::config::{DataSource, ExperimentConfig, Generator, SplitMode, SynthSpec, Theta0};
use crate::dataset::{self, Dataset, Provenance, RngSeed};
use crate::dynamics::{ControlProblem, ProblemData, TimeGrid};
use crate::error::{io_err, Error, Result};
use crate::linalg;
use crate::model::ModelOracle;
use crate::sga::{GalerkinSolver, Init, SolverConfig, SolverReport, StopReason};
use crate::verify::{self, CheckReport};

/// Central-difference step for the value-function probes.
pub const DEFAULT_DP_DELTA: f64 = 1e-3;

const RNG_NOTE: &str = "ChaCha8 (rand_chacha 0.9.0); normals by ziggurat (rand_distr 0.5.1)";

/// Streams derived from the master seed, one per sampling step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: RngSeed,
    pub train: RngSeed,
    pub validation: RngSeed,
    pub dither: RngSeed,
    pub theta0: RngSeed,
    pub probes: RngSeed,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        let m = RngSeed(master);
        Seeds {
            master: m,
            train: m.derive(0),
            validation: m.derive(1),
            dither: m.derive(2),
            theta0: m.derive(3),
            probes: m.derive(4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Run,
    Baseline,
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: Mode,
    /// `J^ε[0]`: validation loss after the uncontrolled flow.
    pub j_eps_zero: f64,
    /// `J^ε[u*]`: validation loss under the returned control.
    pub j_eps_star: f64,
    /// `J^ε[0] − J^ε[u*]`.
    pub phi_gap: f64,
    /// Training loss `J₀(θ(T), Z⁽¹⁾)` under the returned control.
    pub train_loss_final: f64,
    /// Number of accepted control updates.
    pub iterations: usize,
    pub converged: bool,
    /// `None` for baseline runs, which have no solver loop.
    pub stop_reason: Option<StopReason>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: Metrics,
    pub report: SolverReport,
}

/// A fully assembled control problem together with the solver settings.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub problem: ControlProblem,
    pub solver: SolverConfig,
    pub seeds: Seeds,
}

impl Experiment {
    pub fn galerkin(&self) -> Result<GalerkinSolver> {
        GalerkinSolver::new(self.problem.clone(), self.solver.clone())
    }
}

/// Draws a synthetic `Z⁽⁰⁾`. Returns `θ_true` for the linear generator.
pub fn synthesize(spec: &SynthSpec) -> Result<(Dataset, Option<Vec<f64>>)> {
    spec.validate()?;
    let mut rng = RngSeed(spec.seed).rng();
    let d = spec.dim;
    let mut xs = Vec::with_capacity(spec.rows * d);
    let mut ys = Vec::with_capacity(spec.rows);
    let truth = match spec.generator {
        Generator::Linear => {
            let theta: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            for _ in 0..spec.rows {
                let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let z: f64 = rng.sample(StandardNormal);
                let y = linalg::dot(&theta, &x);
                ys.push(if spec.noise == 0.0 { y } else { y + spec.noise * z });
                xs.extend(x);
            }
            Some(theta)
        }
        Generator::Sinusoid => {
            for _ in 0..spec.rows {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let z: f64 = rng.sample(StandardNormal);
                let y: f64 = x.iter().map(|v| (std::f64::consts::PI * v).sin()).sum();
                ys.push(y + spec.noise * z);
                xs.extend(x);
            }
            None
        }
    };
    Ok((Dataset::new(d, xs, ys, Provenance::Original)?, truth))
}

/// `Z⁽⁰⁾ → Z⁽¹⁾, Z⁽²⁾ → Z̃⁽¹⁾`.
pub fn build_data(config: &ExperimentConfig, seeds: &Seeds) -> Result<ProblemData> {
    let d = &config.data;
    let (train, validation) = match &d.source {
        DataSource::Quadratic { train_center, validation_center } => (
            Dataset::quadratic_bowl(train_center, Provenance::Train)?,
            Dataset::quadratic_bowl(validation_center, Provenance::Validation)?,
        ),
        source => {
            let original = match source {
                DataSource::Csv(path) => Dataset::load_csv(path)?,
                DataSource::Synthetic(spec) => synthesize(spec)?.0,
                DataSource::Quadratic { .. } => unreachable!(),
            };
            match d.split {
                SplitMode::Independent => (
                    dataset::bootstrap(&original, d.m1, d.replacement, seeds.train)?,
                    dataset::bootstrap(&original, d.m2, d.replacement, seeds.validation)?
                        .with_tag(Provenance::Validation),
                ),
                SplitMode::Disjoint => dataset::disjoint_split(&original, d.m1, d.m2, seeds.train)?,
            }
        }
    };
    let dithered = dataset::dither(&train, d.noise_level, seeds.dither)?;
    Ok(ProblemData { train, dithered, validation })
}

fn initial_parameters(config: &ExperimentConfig, n: usize, seed: RngSeed) -> Result<Vec<f64>> {
    match &config.model.theta0 {
        Theta0::Zeros => Ok(vec![0.0; n]),
        Theta0::Random { scale } => {
            let mut rng = seed.rng();
            Ok((0..n).map(|_| scale * rng.random_range(-1.0..=1.0)).collect())
        }
        Theta0::Values(v) => {
            if v.len() != n {
                return Err(Error::Config(format!("model.theta0 has {} values, model has {n} parameters", v.len())));
            }
            Ok(v.clone())
        }
    }
}

/// Validates the config and assembles the control problem.
pub fn prepare(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let seeds = Seeds::from_master(config.seed);
    let data = build_data(config, &seeds).map_err(|e| e.in_stage("data"))?;
    let family = config.model_family()?;
    let oracle = ModelOracle::new(family, data.train.dim()).map_err(|e| e.in_stage("model"))?;
    let theta0 = initial_parameters(config, oracle.n_params(), seeds.theta0).map_err(|e| e.in_stage("model"))?;
    let grid = TimeGrid::new(config.control.horizon, config.control.steps).map_err(|e| e.in_stage("config"))?;
    let problem =
        ControlProblem::new(oracle, data, theta0, config.control.epsilon, grid).map_err(|e| e.in_stage("model"))?;
    let solver = config.solver_config();
    solver.validate().map_err(|e| e.in_stage("config"))?;
    Ok(Experiment { problem, solver, seeds })
}

/// `run` solves for the control; `baseline` evaluates `u ≡ 0` only.
pub fn run(config: &ExperimentConfig, out: &Path, mode: Mode) -> Result<RunOutcome> {
    let mut exp = prepare(config)?;
    if mode == Mode::Baseline {
        exp.solver.max_iters = 0;
        exp.solver.init = Init::Zeros;
    }
    let solver = exp.galerkin().map_err(|e| e.in_stage("solve"))?;
    let report = solver.solve().map_err(|e| e.in_stage("solve"))?;
    let control = report.control();
    let j_eps_zero = if exp.solver.init == Init::Zeros {
        report.initial_cost()
    } else {
        solver.cost(&solver.zero_control()).map_err(|e| e.in_stage("solve"))?
    };
    let sweep = solver.sweep(&control).map_err(|e| e.in_stage("solve"))?;
    let j_eps_star = report.final_cost();
    let train_loss_final =
        exp.problem.oracle.loss_value(&report.theta_star, &exp.problem.data.train).map_err(|e| e.in_stage("solve"))?;
    let metrics = Metrics {
        mode,
        j_eps_zero,
        j_eps_star,
        phi_gap: j_eps_zero - j_eps_star,
        train_loss_final,
        iterations: report.iterations.len() - 1,
        converged: mode == Mode::Run && report.converged,
        stop_reason: (mode == Mode::Run).then_some(report.stop_reason),
    };
    log::info!(
        "J(0) = {:.6e}, J(u*) = {:.6e}, {} iterations",
        metrics.j_eps_zero,
        metrics.j_eps_star,
        metrics.iterations
    );

    let mut w = ArtifactWriter::new(out).map_err(|e| e.in_stage("write"))?;
    let written: Result<()> = (|| {
        w.json("report.json", &report)?;
        w.json("metrics.json", &metrics)?;
        w.csv("coeffs.csv", &coeff_header(&control), control.to_rows())?;
        let grid = &sweep.trajectory.grid;
        w.csv("trajectory.csv", &series_header("theta", exp.problem.n_params()), timed(grid, &sweep.trajectory.nodes))?;
        if config.output.adjoint {
            w.csv("adjoint.csv", &series_header("p", exp.problem.n_params()), timed(grid, &sweep.adjoint.nodes))?;
        }
        if config.output.control {
            let u = grid.nodes().map(|t| control.eval(t)).collect::<Result<Vec<_>>>()?;
            w.csv("control.csv", &series_header("u", control.rows()), timed(grid, &u))?;
        }
        w.manifest(mode_name(mode), Some(config), Some(&exp.seeds))
    })();
    written.map_err(|e| e.in_stage("write"))?;
    Ok(RunOutcome { metrics, report })
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Run => "run",
        Mode::Baseline => "baseline",
    }
}

/// Runs every derivative check; writes `gradcheck.json`.
pub fn gradcheck(config: &ExperimentConfig, out: &Path, corrupt_adjoint: bool) -> Result<Vec<CheckReport>> {
    let mut exp = prepare(config)?;
    exp.problem.corrupt_adjoint = corrupt_adjoint;
    let solver = exp.galerkin().map_err(|e| e.in_stage("gradcheck"))?;
    let reports = verify::gradcheck_suite(&solver, exp.seeds.probes).map_err(|e| e.in_stage("gradcheck"))?;
    write_checks(out, "gradcheck", config, &exp.seeds, &reports)?;
    Ok(reports)
}

/// Value-function check at `t = 0`, once as configured and once with
/// `u_max = 0`; writes `dpcheck.json`.
pub fn dpcheck(config: &ExperimentConfig, out: &Path, delta: f64, corrupt_adjoint: bool) -> Result<Vec<CheckReport>> {
    let mut exp = prepare(config)?;
    exp.problem.corrupt_adjoint = corrupt_adjoint;
    let solver = exp.galerkin().map_err(|e| e.in_stage("dpcheck"))?;
    let controlled = verify::check_dp_identity(&solver, delta, verify::TOL_DP).map_err(|e| e.in_stage("dpcheck"))?;
    let off = SolverConfig { u_max: 0.0, ..exp.solver.clone() };
    let solver = GalerkinSolver::new(exp.problem.clone(), off).map_err(|e| e.in_stage("dpcheck"))?;
    let mut uncontrolled =
        verify::check_dp_identity(&solver, delta, verify::TOL_DP_UNCONTROLLED).map_err(|e| e.in_stage("dpcheck"))?;
    uncontrolled.name = "dp_identity_uncontrolled".into();
    let reports = vec![controlled, uncontrolled];
    write_checks(out, "dpcheck", config, &exp.seeds, &reports)?;
    Ok(reports)
}

fn write_checks(
    out: &Path,
    command: &str,
    config: &ExperimentConfig,
    seeds: &Seeds,
    reports: &[CheckReport],
) -> Result<()> {
    let written: Result<()> = (|| {
        let mut w = ArtifactWriter::new(out)?;
        w.json(&format!("{command}.json"), &reports)?;
        w.manifest(command, Some(config), Some(seeds))
    })();
    written.map_err(|e| e.in_stage("write"))
}

/// Writes `data.csv`, `truth.json` (linear generator) and the manifest.
pub fn synth(spec: &SynthSpec, out: &Path) -> Result<PathBuf> {
    let (data, truth) = synthesize(spec)?;
    let written: Result<PathBuf> = (|| {
        let mut w = ArtifactWriter::new(out)?;
        let path = out.join("data.csv");
        data.write_csv(&path)?;
        w.record("data.csv")?;
        if let Some(theta) = truth {
            w.json("truth.json", &serde_json::json!({ "theta_true": theta }))?;
        }
        w.manifest_with("synth", serde_json::to_value(spec)?, None)?;
        Ok(path)
    })();
    written.map_err(|e| e.in_stage("write"))
}

fn coeff_header(c: &ControlCoefficients) -> Vec<String> {
    (1..=c.cols()).map(|j| format!("c{j}")).collect()
}

fn series_header(name: &str, n: usize) -> Vec<String> {
    std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("{name}_{i}"))).collect()
}

fn timed(grid: &TimeGrid, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    grid.nodes().zip(rows).map(|(t, r)| std::iter::once(t).chain(r.iter().copied()).collect()).collect()
}

/// Reads a `coeffs.csv` back into rows of `C`.
pub fn read_coeffs_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| dataset::csv_io(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| dataset::csv_io(path, e))?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: i as u64 + 2,
                    message: format!("{f:?}: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Tracks written files so the manifest can hash them.
struct ArtifactWriter {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        self.files.push((name.to_string(), sha256_hex(&bytes)));
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    fn csv(&mut self, name: &str, header: &[String], rows: Vec<Vec<f64>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let path = self.dir.join(name);
        w.write_record(header).map_err(|e| dataset::csv_io(&path, e))?;
        for row in rows {
            w.write_record(row.iter().map(|v| format!("{v:?}"))).map_err(|e| dataset::csv_io(&path, e))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io { path: path.clone(), source: std::io::Error::other(e.to_string()) })?;
        self.write(name, &bytes)
    }

    fn manifest(&mut self, command: &str, config: Option<&ExperimentConfig>, seeds: Option<&Seeds>) -> Result<()> {
        let value = match config {
            Some(c) => serde_json::to_value(c)?,
            None => serde_json::Value::Null,
        };
        self.manifest_with(command, value, seeds)
    }

    fn manifest_with(&mut self, command: &str, config: serde_json::Value, seeds: Option<&Seeds>) -> Result<()> {
        let config_bytes = serde_json::to_vec(&config)?;
        let artifacts: serde_json::Map<String, serde_json::Value> =
            self.files.iter().map(|(n, h)| (n.clone(), h.clone().into())).collect();
        let manifest = serde_json::json!({
            "tool": "weakctl",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config_sha256": sha256_hex(&config_bytes),
            "config": config,
            "seeds": seeds,
            "rng": RNG_NOTE,
            "artifacts": artifacts,
        });
        self.json("manifest.json", &manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(rows: usize, noise: f64) -> SynthSpec {
        SynthSpec { generator: Generator::Linear, dim: 2, rows, noise, seed: 11 }
    }

    #[test]
    fn noiseless_linear_targets_are_exact() {
        let (data, truth) = synthesize(&spec(100, 0.0)).unwrap();
        let theta = truth.unwrap();
        for (x, y) in data.iter() {
            assert_eq!(y, linalg::dot(&theta, x));
        }
    }

    #[test]
    fn synth_rejects_zero_rows() {
        assert!(synthesize(&spec(0, 0.1)).is_err());
    }

    #[test]
    fn sinusoid_inputs_in_box() {
        let s = SynthSpec { generator: Generator::Sinusoid, dim: 3, rows: 50, noise: 0.0, seed: 2 };
        let (data, truth) = synthesize(&s).unwrap();
        assert!(truth.is_none());
        for (x, y) in data.iter() {
            assert!(x.iter().all(|v| v.abs() <= 1.0));
            let want: f64 = x.iter().map(|v| (std::f64::consts::PI * v).sin()).sum();
            assert_eq!(y, want);
        }
    }

    #[test]
    fn seeds_are_distinct() {
        let s = Seeds::from_master(5);
        let all = [s.master, s.train, s.validation, s.dither, s.theta0, s.probes];
        for i in 0..all.len() {
            for j in 0..i {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
