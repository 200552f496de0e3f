//! Comparison tables over finished run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    artifact_err, evaluation_grid, io_err, load_model, model_inputs, ExperimentError, Summary,
    ERROR_FILE, LOSS_FILE, SUMMARY_FILE,
};
use crate::autodiff::Exec;
use crate::piarch::relation_violation;
use crate::reference::{solve_ocp_poisson_fd, ORACLE_NODES};
use crate::training::{LossRecord, Termination};

/// Loss threshold for "epochs to tolerance" when neither the caller nor the
/// run config gives one.
pub const DEFAULT_TOL: f64 = 1e-3;

pub const OCP_MU1: [f64; 3] = [1.0, 2.0, 3.0];
pub const OCP_MU2: [f64; 3] = [1.0, 0.1, 0.01];

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub run: String,
    pub architecture: String,
    pub termination: Termination,
    pub epochs: usize,
    pub final_loss: f64,
    pub tol: f64,
    pub epochs_to_tol: Option<usize>,
    pub max_error: Option<f64>,
    pub mean_error: Option<f64>,
    pub relation_violation: Option<f64>,
}

/// Control-problem values at the origin against the grid oracle.
#[derive(Clone, Debug, PartialEq)]
pub struct OriginRow {
    pub run: String,
    pub mu1: f64,
    pub mu2: f64,
    pub y_model: f64,
    pub y_oracle: f64,
    pub u_model: f64,
    pub u_oracle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub problem: String,
    pub rows: Vec<ReportRow>,
    pub origin: Vec<OriginRow>,
}

fn read_history(path: &Path) -> Result<Vec<LossRecord>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| artifact_err(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<LossRecord>, _>>()
        .map_err(|e| artifact_err(path, e))
}

/// Max and mean of every error column in an error CSV; the first `skip`
/// columns are coordinates.
fn error_stats(path: &Path, skip: usize) -> Result<(f64, f64), ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| artifact_err(path, e))?;
    let (mut max, mut sum, mut n) = (0.0_f64, 0.0, 0usize);
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact_err(path, e))?;
        for cell in rec.iter().skip(skip) {
            let v: f64 = cell.parse().map_err(|e| artifact_err(path, e))?;
            max = max.max(v);
            sum += v;
            n += 1;
        }
    }
    Ok((max, if n == 0 { 0.0 } else { sum / n as f64 }))
}

/// Oracle values of `(y, u)` at the origin for every tabulated parameter.
pub fn ocp_origin_targets() -> Result<Vec<(f64, f64, f64, f64)>, ExperimentError> {
    let mut out = Vec::new();
    for m1 in OCP_MU1 {
        for m2 in OCP_MU2 {
            let sol = solve_ocp_poisson_fd(m1, m2, ORACLE_NODES)?;
            let v = sol.interpolate(&[0.0, 0.0])?;
            out.push((m1, m2, v[0], v[1]));
        }
    }
    Ok(out)
}

/// Builds the report for `dirs`, which must all hold runs of one problem.
/// `tol` overrides each run's own loss tolerance.
pub fn report(dirs: &[PathBuf], tol: Option<f64>) -> Result<Report, ExperimentError> {
    if dirs.is_empty() {
        return Err(ExperimentError::Report("no run directories given".into()));
    }
    let mut problem_name: Option<String> = None;
    let mut rows = Vec::new();
    let mut origin = Vec::new();
    let mut targets = None;
    for dir in dirs {
        let (exp, model) = load_model(dir)?;
        match &problem_name {
            None => problem_name = Some(exp.problem.clone()),
            Some(p) if *p != exp.problem => {
                return Err(ExperimentError::Report(format!(
                    "runs mix problems '{p}' and '{}'",
                    exp.problem
                )))
            }
            Some(_) => {}
        }
        let problem = exp.problem();
        let run = dir.display().to_string();

        let p = dir.join(SUMMARY_FILE);
        let text = fs::read_to_string(&p).map_err(io_err(&p))?;
        let summary: Summary = serde_json::from_str(&text).map_err(|e| artifact_err(&p, e))?;
        let history = read_history(&dir.join(LOSS_FILE))?;
        let tol = tol.or(exp.training.loss_tol).unwrap_or(DEFAULT_TOL);
        let epochs_to_tol = history.iter().find(|r| r.total <= tol).map(|r| r.epoch);

        let err_path = dir.join(ERROR_FILE);
        let (max_error, mean_error) = if err_path.exists() {
            let skip = problem.mu_names().len() + problem.domain.dim();
            let (m, a) = error_stats(&err_path, skip)?;
            (Some(m), Some(a))
        } else {
            (None, None)
        };

        let relation_violation = if problem.relations.is_empty() {
            None
        } else {
            let dim = problem.domain.dim();
            let grid = evaluation_grid(&problem, exp.evaluation.grid);
            let points: Vec<f64> = exp
                .evaluation
                .mu
                .iter()
                .flat_map(|mu| model_inputs(&grid, dim, mu))
                .collect();
            Some(relation_violation(&model, &problem, &points)?)
        };

        if problem.name == "ocp_poisson" {
            if targets.is_none() {
                targets = Some(ocp_origin_targets()?);
            }
            for &(mu1, mu2, y_oracle, u_oracle) in targets.as_ref().expect("filled above") {
                let v = model.predict(&[0.0, 0.0, mu1, mu2], Exec::default())?;
                let field = |name: &str| v[problem.field_index(name).expect("ocp fields")];
                origin.push(OriginRow {
                    run: run.clone(),
                    mu1,
                    mu2,
                    y_model: field("y"),
                    y_oracle,
                    u_model: field("u"),
                    u_oracle,
                });
            }
        }

        rows.push(ReportRow {
            run,
            architecture: format!("{:?}", exp.architecture).to_lowercase(),
            termination: summary.termination,
            epochs: summary.epochs,
            final_loss: summary.final_loss.total,
            tol,
            epochs_to_tol,
            max_error,
            mean_error,
            relation_violation,
        });
    }
    Ok(Report {
        problem: problem_name.expect("at least one run"),
        rows,
        origin,
    })
}

fn opt_e(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"))
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "problem: {}", self.problem);
        let _ = writeln!(
            s,
            "{:<32} {:>8} {:>8} {:>11} {:>14} {:>10} {:>10} {:>10}",
            "run",
            "arch",
            "epochs",
            "final_loss",
            "epochs_to_tol",
            "max_err",
            "mean_err",
            "relation"
        );
        for r in &self.rows {
            let reached = match r.epochs_to_tol {
                Some(e) => e.to_string(),
                None => "not reached".to_string(),
            };
            let _ = writeln!(
                s,
                "{:<32} {:>8} {:>8} {:>11.3e} {:>14} {:>10} {:>10} {:>10}",
                r.run,
                r.architecture,
                r.epochs,
                r.final_loss,
                reached,
                opt_e(r.max_error),
                opt_e(r.mean_error),
                opt_e(r.relation_violation)
            );
        }
        if !self.origin.is_empty() {
            let _ = writeln!(s, "\nvalues at (0, 0):");
            let _ = writeln!(
                s,
                "{:<32} {:>5} {:>5} {:>11} {:>11} {:>11} {:>11}",
                "run", "mu1", "mu2", "y", "y_oracle", "u", "u_oracle"
            );
            for o in &self.origin {
                let _ = writeln!(
                    s,
                    "{:<32} {:>5} {:>5} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e}",
                    o.run, o.mu1, o.mu2, o.y_model, o.y_oracle, o.u_model, o.u_oracle
                );
            }
        }
        s
    }

    /// Writes the run table to `path`, and the origin table (if any) next to
    /// it with an `_origin` suffix.
    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| artifact_err(path, e))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        w.write_record([
            "run",
            "architecture",
            "termination",
            "epochs",
            "final_loss",
            "tol",
            "epochs_to_tol",
            "max_error",
            "mean_error",
            "relation_violation",
        ])
        .map_err(|e| artifact_err(path, e))?;
        for r in &self.rows {
            w.write_record([
                r.run.clone(),
                r.architecture.clone(),
                format!("{:?}", r.termination),
                r.epochs.to_string(),
                r.final_loss.to_string(),
                r.tol.to_string(),
                r.epochs_to_tol.map_or(String::new(), |e| e.to_string()),
                opt(r.max_error),
                opt(r.mean_error),
                opt(r.relation_violation),
            ])
            .map_err(|e| artifact_err(path, e))?;
        }
        w.flush().map_err(io_err(path))?;
        if self.origin.is_empty() {
            return Ok(());
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("report");
        let op = path.with_file_name(format!("{stem}_origin.csv"));
        let mut w = csv::Writer::from_path(&op).map_err(|e| artifact_err(&op, e))?;
        w.write_record(["run", "mu1", "mu2", "y", "y_oracle", "u", "u_oracle"])
            .map_err(|e| artifact_err(&op, e))?;
        for o in &self.origin {
            w.write_record([
                o.run.clone(),
                o.mu1.to_string(),
                o.mu2.to_string(),
                o.y_model.to_string(),
                o.y_oracle.to_string(),
                o.u_model.to_string(),
                o.u_oracle.to_string(),
            ])
            .map_err(|e| artifact_err(&op, e))?;
        }
        w.flush().map_err(io_err(&op))
    }
}
