//! Config-driven experiment runs and their on-disk artifacts.
//!
//! A run directory holds:
//!
//! | file | contents |
//! |---|---|
//! | `config.toml` | the fully resolved config |
//! | `loss.csv` | `epoch,mse_b,mse_p,total`, one row per epoch |
//! | `params.json` | final parameter vector and named feature parameters |
//! | `prediction.csv` | `<mu...>,<coords...>,<fields...>` on the evaluation grid |
//! | `error.csv` | same layout, absolute error per field, when a reference exists |
//! | `timing.csv` | `epoch,wall_ms`, cumulative wall-clock per epoch |
//! | `summary.json` | termination, epoch count, final loss, total wall-clock |
//!
//! Everything except `timing.csv` and `summary.json` is byte-identical
//! across reruns.

pub mod config;
pub mod report;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Exec;
use crate::network::NetworkSpec;
use crate::piarch::{problem_relations, ComposedModel, PiArchError, RelationXi};
use crate::problems::Problem;
use crate::reference::{oracle, ReferenceError, ORACLE_NODES};
use crate::training::{
    train_with, CompiledLoss, LossRecord, LossSpec, Termination, TrainOptions, TrainRun,
    TrainingError,
};

pub use config::{Architecture, ConfigError, Experiment, RelationMode};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Config { path: String, source: ConfigError },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Model(#[from] PiArchError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error("{path}: {message}")]
    Artifact { path: String, message: String },
    #[error("{0}")]
    Report(String),
    #[error("config has no full-scale run (set training.full_epochs)")]
    NoFullRun,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn artifact_err(path: &Path, e: impl ToString) -> ExperimentError {
    ExperimentError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Reads and resolves a config file.
pub fn load_config(path: &Path) -> Result<Experiment, ExperimentError> {
    let src = fs::read_to_string(path).map_err(io_err(path))?;
    Experiment::from_toml(&src).map_err(|source| ExperimentError::Config {
        path: path.display().to_string(),
        source,
    })
}

/// The untrained model a config describes.
pub fn build_model(exp: &Experiment) -> Result<ComposedModel, ExperimentError> {
    let problem = exp.problem();
    let features = exp.feature_set();
    let inputs = problem.input_names();
    let net = &exp.network;
    let spec = |outputs: usize| NetworkSpec {
        inputs: inputs.len() + features.len(),
        hidden: net.hidden.clone(),
        outputs,
        activation: net.activation,
        seed: net.seed,
    };
    let model = match exp.architecture {
        Architecture::Flat => ComposedModel::flat(
            spec(problem.fields.len()),
            &problem.fields,
            &inputs,
            features,
        )?,
        Architecture::PiArch => {
            let mut relations = problem_relations(&problem)?;
            if exp.pi_arch_mode == RelationMode::Learned {
                relations = relations
                    .into_iter()
                    .enumerate()
                    .map(|(k, r)| {
                        RelationXi::learned(
                            &r.output,
                            r.inputs,
                            net.relation_hidden.clone(),
                            net.activation,
                            net.seed.wrapping_add(1 + k as u64),
                        )
                    })
                    .collect();
            }
            ComposedModel::compose(
                spec(problem.pi_arch_base.len()),
                &problem.pi_arch_base,
                relations,
                &problem.fields,
                &inputs,
                features,
            )?
        }
    };
    Ok(model)
}

/// Node grid over the spatial/temporal box, `n` points per axis, first axis
/// slowest. Row-major `n^dim x dim`.
pub fn evaluation_grid(problem: &Problem, n: usize) -> Vec<f64> {
    let axes = problem.domain.axes();
    let coord = |a: usize, i: usize| {
        let ax = &axes[a];
        if i + 1 == n {
            ax.high
        } else {
            ax.low + i as f64 * (ax.high - ax.low) / (n - 1) as f64
        }
    };
    let dim = axes.len();
    let total = n.pow(dim as u32);
    let mut out = Vec::with_capacity(total * dim);
    for k in 0..total {
        let mut rest = k;
        let mut idx = vec![0; dim];
        for a in (0..dim).rev() {
            idx[a] = rest % n;
            rest /= n;
        }
        out.extend(idx.iter().enumerate().map(|(a, &i)| coord(a, i)));
    }
    out
}

/// Reference field values at `points` (row-major coords) for one `mu`, by
/// field name. Closed forms win over the grid oracle.
pub fn reference_values(
    problem: &Problem,
    mu: &[f64],
    points: &[f64],
) -> Result<Option<(Vec<String>, Vec<f64>)>, ExperimentError> {
    let dim = problem.domain.dim();
    if problem.exact.is_some() {
        let names = problem.fields.iter().map(|s| s.to_string()).collect();
        let mut vals = Vec::new();
        for x in points.chunks(dim) {
            vals.extend(
                problem
                    .exact_solution(x, mu)
                    .expect("problem has a closed form"),
            );
        }
        return Ok(Some((names, vals)));
    }
    let sol = match oracle(problem.name, mu, ORACLE_NODES) {
        Ok(s) => s,
        Err(ReferenceError::Unsupported(_)) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mut vals = Vec::new();
    for x in points.chunks(dim) {
        vals.extend(sol.interpolate(x)?);
    }
    Ok(Some((sol.names.clone(), vals)))
}

/// Model predictions, and errors against a reference, at every evaluation
/// parameter.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub coords: Vec<String>,
    pub mu_names: Vec<String>,
    pub fields: Vec<String>,
    pub points: Vec<f64>,
    pub mu: Vec<Vec<f64>>,
    /// Per `mu`: row-major `n_points x fields`.
    pub predictions: Vec<Vec<f64>>,
    pub error_fields: Vec<String>,
    /// Per `mu`: row-major `n_points x error_fields`; empty when there is
    /// no reference.
    pub errors: Vec<Vec<f64>>,
}

impl Evaluation {
    pub fn n_points(&self) -> usize {
        self.points.len() / self.coords.len()
    }

    pub fn has_reference(&self) -> bool {
        !self.errors.is_empty()
    }

    pub fn max_error(&self) -> Option<f64> {
        self.has_reference()
            .then(|| self.errors.iter().flatten().fold(0.0_f64, |m, e| m.max(*e)))
    }

    pub fn mean_error(&self) -> Option<f64> {
        let n: usize = self.errors.iter().map(|e| e.len()).sum();
        (n > 0).then(|| self.errors.iter().flatten().sum::<f64>() / n as f64)
    }

    /// Max error of one field at one evaluation parameter.
    pub fn field_max_error(&self, mu_index: usize, field: &str) -> Option<f64> {
        let k = self.error_fields.iter().position(|f| f == field)?;
        let w = self.error_fields.len();
        let errs = self.errors.get(mu_index)?;
        Some(
            errs.iter()
                .skip(k)
                .step_by(w)
                .fold(0.0_f64, |m, e| m.max(*e)),
        )
    }

    fn write_table(
        &self,
        path: &Path,
        names: &[String],
        rows: &[Vec<f64>],
    ) -> Result<(), ExperimentError> {
        let file = fs::File::create(path).map_err(io_err(path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let header: Vec<&str> = self
            .mu_names
            .iter()
            .chain(&self.coords)
            .chain(names)
            .map(|s| s.as_str())
            .collect();
        w.write_record(&header).map_err(|e| artifact_err(path, e))?;
        let dim = self.coords.len();
        let width = names.len();
        for (mu, vals) in self.mu.iter().zip(rows) {
            for (x, v) in self.points.chunks(dim).zip(vals.chunks(width)) {
                let rec: Vec<String> = mu.iter().chain(x).chain(v).map(|f| f.to_string()).collect();
                w.write_record(&rec).map_err(|e| artifact_err(path, e))?;
            }
        }
        w.flush().map_err(io_err(path))
    }

    pub fn write_prediction_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        self.write_table(path, &self.fields, &self.predictions)
    }

    pub fn write_error_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        self.write_table(path, &self.error_fields, &self.errors)
    }
}

/// Raw model inputs for every grid point at one `mu`.
pub fn model_inputs(points: &[f64], dim: usize, mu: &[f64]) -> Vec<f64> {
    points
        .chunks(dim)
        .flat_map(|x| x.iter().chain(mu).copied())
        .collect()
}

pub fn evaluate(
    exp: &Experiment,
    model: &ComposedModel,
    exec: Exec,
) -> Result<Evaluation, ExperimentError> {
    let problem = exp.problem();
    let dim = problem.domain.dim();
    let points = evaluation_grid(&problem, exp.evaluation.grid);
    let fields: Vec<String> = problem.fields.iter().map(|s| s.to_string()).collect();
    let mut predictions = Vec::new();
    let mut errors = Vec::new();
    let mut error_fields = Vec::new();
    for mu in &exp.evaluation.mu {
        let pred = model.predict(&model_inputs(&points, dim, mu), exec)?;
        if let Some((names, reference)) = reference_values(&problem, mu, &points)? {
            let cols: Vec<usize> = names
                .iter()
                .map(|n| {
                    fields
                        .iter()
                        .position(|f| f == n)
                        .expect("reference fields are model fields")
                })
                .collect();
            let w = fields.len();
            let err: Vec<f64> = pred
                .chunks(w)
                .zip(reference.chunks(names.len()))
                .flat_map(|(p, r)| {
                    cols.iter()
                        .zip(r)
                        .map(|(&c, r)| (p[c] - r).abs())
                        .collect::<Vec<_>>()
                })
                .collect();
            errors.push(err);
            error_fields = names;
        }
        predictions.push(pred);
    }
    Ok(Evaluation {
        coords: problem
            .coord_names()
            .iter()
            .map(|s| s.to_string())
            .collect(),
        mu_names: problem.mu_names().iter().map(|s| s.to_string()).collect(),
        fields,
        points,
        mu: exp.evaluation.mu.clone(),
        predictions,
        error_fields,
        errors,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// Use `training.full_epochs` instead of `training.max_epochs`.
    pub full: bool,
    pub exec: Exec,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            full: false,
            exec: Exec::default(),
        }
    }
}

pub struct RunOutcome {
    pub experiment: Experiment,
    pub model: ComposedModel,
    pub run: TrainRun,
    pub evaluation: Evaluation,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.run.termination == Termination::Diverged
    }
}

/// Samples, trains and evaluates in memory, calling `on_epoch` per epoch.
pub fn run_with(
    exp: &Experiment,
    opts: RunOptions,
    on_epoch: impl FnMut(&LossRecord),
) -> Result<RunOutcome, ExperimentError> {
    let problem = exp.problem();
    let max_epochs = if opts.full {
        exp.training.full_epochs.ok_or(ExperimentError::NoFullRun)?
    } else {
        exp.training.max_epochs
    };
    let mut model = build_model(exp)?;
    let spec = LossSpec::sample(&problem, &exp.sampling_plan())?;
    let mut loss = CompiledLoss::new(&problem, &model, &spec)?;
    loss.exec = opts.exec;
    let train_opts = TrainOptions {
        lr: exp.training.lr,
        max_epochs,
        loss_tol: exp.training.loss_tol,
    };
    let run = train_with(&mut model, &loss, &train_opts, on_epoch);
    let evaluation = evaluate(exp, &model, opts.exec)?;
    Ok(RunOutcome {
        experiment: exp.clone(),
        model,
        run,
        evaluation,
    })
}

pub fn run(exp: &Experiment, opts: RunOptions) -> Result<RunOutcome, ExperimentError> {
    run_with(exp, opts, |_| {})
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ParamsFile {
    pub params: Vec<f64>,
    pub feature_params: Vec<(String, f64)>,
}

#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct Summary {
    pub problem: String,
    pub termination: Termination,
    pub epochs: usize,
    pub final_loss: LossRecord,
    pub n_params: usize,
    pub wall_ms: f64,
}

pub const CONFIG_FILE: &str = "config.toml";
pub const LOSS_FILE: &str = "loss.csv";
pub const PARAMS_FILE: &str = "params.json";
pub const PREDICTION_FILE: &str = "prediction.csv";
pub const ERROR_FILE: &str = "error.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Writes every artifact of `outcome` into `dir`, creating it if needed.
pub fn write_run(dir: &Path, outcome: &RunOutcome) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let at = |name: &str| -> PathBuf { dir.join(name) };

    let p = at(CONFIG_FILE);
    fs::write(&p, outcome.experiment.to_toml()).map_err(io_err(&p))?;

    let p = at(LOSS_FILE);
    let file = fs::File::create(&p).map_err(io_err(&p))?;
    outcome
        .run
        .write_loss_csv(BufWriter::new(file))
        .map_err(|e| artifact_err(&p, e))?;

    let p = at(TIMING_FILE);
    let file = fs::File::create(&p).map_err(io_err(&p))?;
    outcome
        .run
        .write_timing_csv(BufWriter::new(file))
        .map_err(|e| artifact_err(&p, e))?;

    let p = at(PARAMS_FILE);
    let feats = outcome.model.features();
    let params = ParamsFile {
        params: outcome.run.params.clone(),
        feature_params: feats
            .param_names()
            .into_iter()
            .zip(feats.values().iter().copied())
            .collect(),
    };
    let text = serde_json::to_string_pretty(&params).map_err(|e| artifact_err(&p, e))?;
    fs::write(&p, text).map_err(io_err(&p))?;

    outcome
        .evaluation
        .write_prediction_csv(&at(PREDICTION_FILE))?;
    if outcome.evaluation.has_reference() {
        outcome.evaluation.write_error_csv(&at(ERROR_FILE))?;
    }

    let p = at(SUMMARY_FILE);
    let summary = Summary {
        problem: outcome.experiment.problem.clone(),
        termination: outcome.run.termination,
        epochs: outcome.run.epochs(),
        final_loss: outcome.run.final_loss,
        n_params: outcome.run.params.len(),
        wall_ms: outcome.run.wall_ms.last().copied().unwrap_or(0.0),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| artifact_err(&p, e))?;
    fs::write(&p, text).map_err(io_err(&p))?;
    Ok(())
}

/// Rebuilds the trained model stored in a run directory.
pub fn load_model(dir: &Path) -> Result<(Experiment, ComposedModel), ExperimentError> {
    let exp = load_config(&dir.join(CONFIG_FILE))?;
    let mut model = build_model(&exp)?;
    let p = dir.join(PARAMS_FILE);
    let text = fs::read_to_string(&p).map_err(io_err(&p))?;
    let stored: ParamsFile = serde_json::from_str(&text).map_err(|e| artifact_err(&p, e))?;
    model.set_params(&stored.params)?;
    Ok((exp, model))
}

#[cfg(test)]
mod tests;
