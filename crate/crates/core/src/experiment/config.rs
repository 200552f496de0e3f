//! Experiment configuration files.
//!
//! Every key except `problem` is optional and falls back to the problem's
//! catalog defaults; [`ExperimentConfig::resolve`] fills them in and checks
//! every referenced name.

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::features::{Feature, FeatureSet};
use crate::network::Activation;
use crate::problems::Problem;
use crate::sampling::{BoundaryMode, SamplerKind};
use crate::training::{MuPairing, SamplingPlan};

/// Config error with the 1-based line it points at, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    Flat,
    PiArch,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationMode {
    #[default]
    Closed,
    Learned,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<Activation>,
    pub seed: Option<u64>,
    pub relation_hidden: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSection {
    #[serde(rename = "use")]
    pub presets: Option<Vec<Spanned<String>>>,
    #[serde(default)]
    pub expr: Vec<Spanned<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub interior: Option<SamplerKind>,
    pub n_interior: Option<Spanned<usize>>,
    pub boundary: Option<BoundaryMode>,
    pub n_boundary: Option<Spanned<usize>>,
    pub mu: Option<SamplerKind>,
    pub n_mu: Option<Spanned<usize>>,
    pub mu_shape: Option<Spanned<Vec<usize>>>,
    pub mu_pairing: Option<MuPairing>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub lr: Option<Spanned<f64>>,
    pub max_epochs: Option<usize>,
    pub loss_tol: Option<f64>,
    pub full_epochs: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    pub grid: Option<Spanned<usize>>,
    pub mu: Option<Spanned<Vec<Vec<f64>>>>,
}

/// A config file as written.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: Spanned<String>,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub pi_arch_mode: RelationMode,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub features: FeatureSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

/// A config with every default filled in. Serializes back to a config
/// file that parses to itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub problem: String,
    pub architecture: Architecture,
    pub pi_arch_mode: RelationMode,
    pub output_dir: PathBuf,
    pub network: ResolvedNetwork,
    pub features: ResolvedFeatures,
    pub sampling: ResolvedSampling,
    pub training: ResolvedTraining,
    pub evaluation: ResolvedEvaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedNetwork {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    pub relation_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedFeatures {
    #[serde(rename = "use")]
    pub presets: Vec<String>,
    pub expr: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedSampling {
    pub interior: SamplerKind,
    pub n_interior: usize,
    pub boundary: BoundaryMode,
    pub n_boundary: usize,
    pub mu: SamplerKind,
    pub n_mu: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_shape: Option<Vec<usize>>,
    pub mu_pairing: MuPairing,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedTraining {
    pub lr: f64,
    pub max_epochs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_epochs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedEvaluation {
    pub grid: usize,
    pub mu: Vec<Vec<f64>>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].matches('\n').count() + 1
}

/// Evaluation parameter points used when a config gives none.
pub fn default_eval_mu(problem: &Problem) -> Vec<Vec<f64>> {
    match problem.name {
        "poisson_param" => vec![vec![-0.8, -0.8], vec![0.8, 0.8]],
        "ocp_poisson" => {
            let mut out = Vec::new();
            for m1 in [1.0, 2.0, 3.0] {
                for m2 in [1.0, 0.1, 0.01] {
                    out.push(vec![m1, m2]);
                }
            }
            out
        }
        "ocp_stokes" => vec![vec![0.5], vec![1.0], vec![1.5]],
        _ => vec![vec![]],
    }
}

impl ExperimentConfig {
    pub fn parse(src: &str) -> Result<Self, ConfigError> {
        toml::from_str(src).map_err(|e| ConfigError {
            line: e.span().map(|s| line_of(src, s.start)),
            message: e.message().to_string(),
        })
    }

    /// Fills defaults from the problem catalog and validates names and
    /// counts. `src` is the text the config was parsed from, for line numbers.
    pub fn resolve(&self, src: &str) -> Result<Experiment, ConfigError> {
        let err = |span: std::ops::Range<usize>, message: String| ConfigError {
            line: Some(line_of(src, span.start)),
            message,
        };
        let problem = Problem::by_name(self.problem.get_ref())
            .map_err(|e| err(self.problem.span(), e.to_string()))?;
        let d = &problem.defaults;

        let presets: Vec<String> = match &self.features.presets {
            Some(list) => {
                for p in list {
                    Feature::preset(p.get_ref()).map_err(|e| err(p.span(), e.to_string()))?;
                }
                list.iter().map(|p| p.get_ref().clone()).collect()
            }
            None => d.features.iter().map(|s| s.to_string()).collect(),
        };
        for e in &self.features.expr {
            Feature::parse(e.get_ref()).map_err(|x| err(e.span(), x.to_string()))?;
        }

        let positive = |v: &Option<Spanned<usize>>, default: usize, what: &str| match v {
            Some(s) if *s.get_ref() == 0 => Err(err(s.span(), format!("{what} must be positive"))),
            Some(s) => Ok(*s.get_ref()),
            None => Ok(default),
        };
        let n_interior = positive(&self.sampling.n_interior, d.n_interior, "n_interior")?;
        let n_boundary = positive(&self.sampling.n_boundary, d.n_boundary, "n_boundary")?;
        let n_mu = positive(&self.sampling.n_mu, d.n_mu, "n_mu")?;
        let mu_sampler = self.sampling.mu.unwrap_or(d.mu_sampler);
        let mu_shape = match &self.sampling.mu_shape {
            Some(s) => {
                let shape = s.get_ref();
                if !matches!(mu_sampler, SamplerKind::Grid | SamplerKind::InteriorGrid) {
                    return Err(err(s.span(), "mu_shape needs a grid mu sampler".into()));
                }
                if shape.len() != problem.params.dim() || shape.contains(&0) {
                    return Err(err(
                        s.span(),
                        format!("mu_shape needs {} positive counts", problem.params.dim()),
                    ));
                }
                let product: usize = shape.iter().product();
                if self.sampling.n_mu.is_some() && product != n_mu {
                    return Err(err(
                        s.span(),
                        format!("mu_shape has {product} points but n_mu is {n_mu}"),
                    ));
                }
                Some(shape.clone())
            }
            None => None,
        };
        let n_mu = mu_shape.as_ref().map_or(n_mu, |s| s.iter().product());
        let grid = positive(&self.evaluation.grid, 50, "evaluation grid")?;
        if grid < 2 {
            let span = self
                .evaluation
                .grid
                .as_ref()
                .map(|g| g.span())
                .unwrap_or(0..0);
            return Err(err(
                span,
                "evaluation grid needs at least 2 points per axis".into(),
            ));
        }

        let lr = match &self.training.lr {
            Some(v) if !(v.get_ref().is_finite() && *v.get_ref() > 0.0) => {
                return Err(err(v.span(), "lr must be positive".into()))
            }
            Some(v) => *v.get_ref(),
            None => d.lr,
        };

        let mu = match &self.evaluation.mu {
            Some(list) => {
                let want = problem.mu_names().len();
                for m in list.get_ref() {
                    if m.len() != want {
                        return Err(err(
                            list.span(),
                            format!("each evaluation mu needs {want} values, got {}", m.len()),
                        ));
                    }
                    if want > 0 && !problem.params.contains(m) {
                        return Err(err(
                            list.span(),
                            format!("evaluation mu {m:?} is outside the parameter box"),
                        ));
                    }
                }
                if list.get_ref().is_empty() {
                    return Err(err(list.span(), "evaluation mu list is empty".into()));
                }
                list.get_ref().clone()
            }
            None => default_eval_mu(&problem),
        };

        if self.architecture == Architecture::PiArch && problem.relations.is_empty() {
            return Err(err(
                self.problem.span(),
                format!(
                    "problem '{}' declares no relation for pi_arch",
                    problem.name
                ),
            ));
        }

        let seed = self.network.seed.unwrap_or(1);
        Ok(Experiment {
            problem: problem.name.to_string(),
            architecture: self.architecture,
            pi_arch_mode: self.pi_arch_mode,
            output_dir: self
                .output_dir
                .clone()
                .unwrap_or_else(|| PathBuf::from("runs").join(problem.name)),
            network: ResolvedNetwork {
                hidden: self
                    .network
                    .hidden
                    .clone()
                    .unwrap_or_else(|| d.hidden.clone()),
                activation: self.network.activation.unwrap_or(d.activation),
                seed,
                relation_hidden: self
                    .network
                    .relation_hidden
                    .clone()
                    .unwrap_or_else(|| vec![10]),
            },
            features: ResolvedFeatures {
                presets,
                expr: self
                    .features
                    .expr
                    .iter()
                    .map(|e| e.get_ref().clone())
                    .collect(),
            },
            sampling: ResolvedSampling {
                interior: self.sampling.interior.unwrap_or(d.interior_sampler),
                n_interior,
                boundary: self.sampling.boundary.unwrap_or(d.boundary_mode),
                n_boundary,
                mu: mu_sampler,
                n_mu: if problem.is_parametric() { n_mu } else { 1 },
                mu_shape,
                mu_pairing: self.sampling.mu_pairing.unwrap_or_default(),
                seed: self.sampling.seed.unwrap_or(seed),
            },
            training: ResolvedTraining {
                lr,
                max_epochs: self.training.max_epochs.unwrap_or(d.max_epochs),
                loss_tol: self.training.loss_tol,
                full_epochs: self.training.full_epochs,
            },
            evaluation: ResolvedEvaluation { grid, mu },
        })
    }
}

impl Experiment {
    /// Parses and resolves config text.
    pub fn from_toml(src: &str) -> Result<Self, ConfigError> {
        ExperimentConfig::parse(src)?.resolve(src)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("resolved configs always serialize")
    }

    pub fn problem(&self) -> Problem {
        Problem::by_name(&self.problem).expect("resolved configs name catalog problems")
    }

    pub fn feature_set(&self) -> FeatureSet {
        let features = self
            .features
            .presets
            .iter()
            .map(|p| Feature::preset(p))
            .chain(self.features.expr.iter().map(|e| Feature::parse(e)))
            .collect::<Result<Vec<_>, _>>()
            .expect("resolved feature names are valid");
        FeatureSet::new(features).expect("resolved features are distinct")
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        let s = &self.sampling;
        SamplingPlan {
            interior: s.interior,
            n_interior: s.n_interior,
            boundary: s.boundary,
            n_boundary: s.n_boundary,
            mu: s.mu,
            n_mu: s.n_mu,
            mu_shape: s.mu_shape.clone(),
            pairing: s.mu_pairing,
            seed: s.seed,
        }
    }
}

/// Shipped presets, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("poisson1", include_str!("../../presets/poisson1.toml")),
    (
        "poisson1_feature",
        include_str!("../../presets/poisson1_feature.toml"),
    ),
    (
        "poisson1_learnable",
        include_str!("../../presets/poisson1_learnable.toml"),
    ),
    ("poisson2", include_str!("../../presets/poisson2.toml")),
    (
        "poisson2_nofeature",
        include_str!("../../presets/poisson2_nofeature.toml"),
    ),
    ("burgers", include_str!("../../presets/burgers.toml")),
    (
        "burgers_nofeature",
        include_str!("../../presets/burgers_nofeature.toml"),
    ),
    (
        "poisson_param",
        include_str!("../../presets/poisson_param.toml"),
    ),
    (
        "ocp_poisson",
        include_str!("../../presets/ocp_poisson.toml"),
    ),
    (
        "ocp_poisson_flat",
        include_str!("../../presets/ocp_poisson_flat.toml"),
    ),
    ("ocp_stokes", include_str!("../../presets/ocp_stokes.toml")),
    (
        "ocp_stokes_flat",
        include_str!("../../presets/ocp_stokes_flat.toml"),
    ),
];

pub fn preset(name: &str) -> Option<Experiment> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, src)| Experiment::from_toml(src).expect("shipped presets are valid"))
}
