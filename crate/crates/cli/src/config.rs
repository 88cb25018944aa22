//! The experiment-file schema (JSON) and its mapping onto engine types.
//!
//! One file describes one experiment:
//!
//! ```json
//! {
//!   "model": { "name": "ginzburg-landau", "params": { "alpha": 1.0, "c": 0.5 } },
//!   "N": 64,
//!   "n": 256,
//!   "T": 1.0,
//!   "scheme": "milstein",
//!   "seed": 1,
//!   "initial": { "kind": "constant", "params": { "value": [1.0] } },
//!   "output": { "path": "trajectory.csv", "stride": 1 }
//! }
//! ```
//!
//! plus, for convergence studies, the extras `levels`, `n_ref` and
//! `repetitions`. Validation is total: unknown keys are rejected at every
//! nesting depth, parameters belonging to a different model or initial kind
//! are rejected by name, and nothing runs until the whole file has been
//! accepted. Parse errors carry the line and column of the offending token.
//!
//! Defaults: `taming` is on, `output.stride` is 1, and `n_fine` falls back to
//! the reference level for studies (`converge`) and to `64 n` for single runs
//! (`simulate`, `moments`) — fine enough that the sub-grid iterated-integral
//! estimator never dominates the strong error at desk scales. `chaos` runs at
//! `n_fine = n` by default: it compares terminal laws across population
//! sizes at a fixed lattice, where sub-grid refinement multiplies the
//! dominant `O(N^2 q)` cost without moving the compared statistics.
//! Parameters omitted from `model.params` take the model's canonical values.

use serde::Deserialize;
use thiserror::Error;

use mvsde::analysis::{ChaosConfig, ErrorMetric, StudyConfig};
use mvsde::model::{BuiltinModel, MisreportedLinearMeanField};
use mvsde::{GinzburgLandau, InitialLaw, LinearMeanField, Scheme, SimConfig};

/// A syntactically rejected experiment file, with the token position.
#[derive(Debug, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// A schema-valid experiment file whose contents are inconsistent.
#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error(
        "model.name `{0}` is not built in (expected `ginzburg-landau`, \
         `linear-mean-field`, or `misreported-linear-mean-field`)"
    )]
    UnknownModel(String),
    #[error("model.params.{key} is not a {model} parameter")]
    ForeignModelParam { key: &'static str, model: &'static str },
    #[error("initial.params.{key} is not a `{kind}` parameter")]
    ForeignInitialParam { key: &'static str, kind: &'static str },
    #[error("initial.params.{key} is required for kind `{kind}`")]
    MissingInitialParam { key: &'static str, kind: &'static str },
    #[error("`{0}` is required by this subcommand")]
    MissingKey(&'static str),
    #[error("{0}")]
    Invalid(&'static str),
}

/// Parses an experiment file, reporting the offending token position on
/// schema violations (unknown keys, wrong types, missing required keys).
pub fn parse(text: &str) -> Result<ExperimentConfig, ParseError> {
    serde_json::from_str(text).map_err(|err| {
        // serde_json appends its own " at line L column C"; the position is
        // reported structurally instead.
        let mut message = err.to_string();
        if let Some(pos) = message.rfind(" at line ") {
            message.truncate(pos);
        }
        ParseError {
            line: err.line(),
            column: err.column(),
            message,
        }
    })
}

/// One experiment: a model, a particle count, a time grid, a scheme, a seed,
/// an initial law, and (optionally) where to put the artifact. Study keys
/// (`levels`, `n_ref`, `repetitions`) are only consulted by `converge`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    /// Particle count.
    #[serde(rename = "N")]
    pub particles: usize,
    /// Coarse step count (also the taming level). Required by `simulate`,
    /// `moments`, and `chaos`; ignored by `converge`, which sweeps `levels`.
    pub n: Option<usize>,
    /// Fine lattice resolution; see the module docs for the defaults.
    pub n_fine: Option<usize>,
    /// Time horizon.
    #[serde(rename = "T")]
    pub horizon: f64,
    pub scheme: SchemeName,
    /// Drift taming switch (default on; switching it off makes super-linear
    /// drifts explode, which is exactly what the divergence demo does).
    #[serde(default = "default_taming")]
    pub taming: bool,
    pub seed: u64,
    pub initial: InitialSpec,
    pub output: Option<OutputSpec>,
    /// Converge only: coarse step counts, strictly increasing, each dividing
    /// `n_ref`.
    pub levels: Option<Vec<usize>>,
    /// Converge only: reference level (at least 16x the finest study level).
    pub n_ref: Option<usize>,
    /// Converge only: independent repetitions of the coupled comparison.
    pub repetitions: Option<usize>,
}

fn default_taming() -> bool {
    true
}

/// Model selector: a registry name plus parameter overrides.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: ModelParams,
}

/// The union of all built-in model parameters; each model accepts its own
/// subset and rejects the rest by name.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    pub a: Option<f64>,
    pub abar: Option<f64>,
    pub bcoef: Option<f64>,
    pub bbar: Option<f64>,
}

impl ModelParams {
    fn reject(
        entries: &[(&'static str, bool)],
        model: &'static str,
    ) -> Result<(), ConfigError> {
        for &(key, present) in entries {
            if present {
                return Err(ConfigError::ForeignModelParam { key, model });
            }
        }
        Ok(())
    }

    fn linear(&self) -> LinearMeanField {
        LinearMeanField {
            a: self.a.unwrap_or(-1.0),
            abar: self.abar.unwrap_or(0.5),
            bcoef: self.bcoef.unwrap_or(0.2),
            bbar: self.bbar.unwrap_or(0.1),
        }
    }
}

/// Builds a built-in model from its registry name. Omitted parameters take
/// the canonical values (`ginzburg-landau`: alpha=1, c=0.5;
/// `linear-mean-field`: a=-1, abar=0.5, bcoef=0.2, bbar=0.1); parameters of
/// the *other* model are rejected so typos cannot silently revert to
/// defaults. The `misreported-*` variant exists for the validator demo: its
/// measure derivative is deliberately off by 2x.
pub fn builtin_model(name: &str, params: &ModelParams) -> Result<BuiltinModel, ConfigError> {
    let linear_keys = [
        ("a", params.a.is_some()),
        ("abar", params.abar.is_some()),
        ("bcoef", params.bcoef.is_some()),
        ("bbar", params.bbar.is_some()),
    ];
    let ginzburg_keys = [
        ("alpha", params.alpha.is_some()),
        ("c", params.c.is_some()),
    ];
    match name {
        "ginzburg-landau" => {
            ModelParams::reject(&linear_keys, "ginzburg-landau")?;
            Ok(BuiltinModel::GinzburgLandau(GinzburgLandau {
                alpha: params.alpha.unwrap_or(1.0),
                c: params.c.unwrap_or(0.5),
            }))
        }
        "linear-mean-field" => {
            ModelParams::reject(&ginzburg_keys, "linear-mean-field")?;
            Ok(BuiltinModel::LinearMeanField(params.linear()))
        }
        "misreported-linear-mean-field" => {
            ModelParams::reject(&ginzburg_keys, "misreported-linear-mean-field")?;
            Ok(BuiltinModel::MisreportedLinearMeanField(
                MisreportedLinearMeanField(params.linear()),
            ))
        }
        other => Err(ConfigError::UnknownModel(other.to_string())),
    }
}

/// Time-stepping scheme selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeName {
    Euler,
    Milstein,
}

impl From<SchemeName> for Scheme {
    fn from(name: SchemeName) -> Scheme {
        match name {
            SchemeName::Euler => Scheme::Euler,
            SchemeName::Milstein => Scheme::Milstein,
        }
    }
}

/// Initial-law selector: a kind plus that kind's parameters.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    #[serde(default)]
    pub params: InitialParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    /// Every particle starts at `params.value`.
    Constant,
    /// I.i.d. Gaussian coordinates around `params.mean` with
    /// deviation `params.std`.
    Gaussian,
}

/// The union of initial-law parameters; each kind accepts its own subset.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialParams {
    pub value: Option<Vec<f64>>,
    pub mean: Option<Vec<f64>>,
    pub std: Option<f64>,
}

impl InitialSpec {
    fn law(&self) -> Result<InitialLaw, ConfigError> {
        let reject = |key: &'static str, present: bool, kind: &'static str| {
            if present {
                Err(ConfigError::ForeignInitialParam { key, kind })
            } else {
                Ok(())
            }
        };
        match self.kind {
            InitialKind::Constant => {
                reject("mean", self.params.mean.is_some(), "constant")?;
                reject("std", self.params.std.is_some(), "constant")?;
                let value = self.params.value.clone().ok_or(
                    ConfigError::MissingInitialParam {
                        key: "value",
                        kind: "constant",
                    },
                )?;
                Ok(InitialLaw::Constant(value))
            }
            InitialKind::Gaussian => {
                reject("value", self.params.value.is_some(), "gaussian")?;
                let mean = self.params.mean.clone().ok_or(
                    ConfigError::MissingInitialParam {
                        key: "mean",
                        kind: "gaussian",
                    },
                )?;
                let std = self.params.std.ok_or(ConfigError::MissingInitialParam {
                    key: "std",
                    kind: "gaussian",
                })?;
                Ok(InitialLaw::Gaussian { mean, std })
            }
        }
    }
}

/// Artifact destination; without it (and without `--out`) artifacts go to
/// stdout.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: Option<String>,
    /// Snapshot every `stride` steps (trajectory/moment artifacts).
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

impl ExperimentConfig {
    pub fn model(&self) -> Result<BuiltinModel, ConfigError> {
        builtin_model(&self.model.name, &self.model.params)
    }

    pub fn output_path(&self) -> Option<&str> {
        self.output.as_ref().and_then(|out| out.path.as_deref())
    }

    fn stride(&self) -> usize {
        self.output.as_ref().map_or(1, |out| out.stride)
    }

    fn base_checks(&self) -> Result<(), ConfigError> {
        if self.particles == 0 {
            return Err(ConfigError::Invalid("N must be at least 1"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ConfigError::Invalid("T must be positive and finite"));
        }
        Ok(())
    }

    /// The single-run view (`simulate`, `moments`): requires `n`, defaults
    /// the lattice to `64 n`.
    pub fn sim_config(&self, seed: Option<u64>) -> Result<SimConfig, ConfigError> {
        self.base_checks()?;
        let n = self.n.ok_or(ConfigError::MissingKey("n"))?;
        Ok(SimConfig {
            particles: self.particles,
            level: n,
            n_fine: self.n_fine.unwrap_or(n.saturating_mul(64)),
            horizon: self.horizon,
            scheme: self.scheme.into(),
            tamed: self.taming,
            lambda2: true,
            seed: seed.unwrap_or(self.seed),
            initial: self.initial.law()?,
            stride: self.stride(),
        })
    }

    /// The convergence-study view (`converge`): requires `levels`, `n_ref`
    /// and `repetitions`; `n_fine` stays optional (the study defaults it to
    /// `n_ref`).
    pub fn study_config(
        &self,
        seed: Option<u64>,
        lambda2: bool,
        metric: ErrorMetric,
    ) -> Result<StudyConfig, ConfigError> {
        self.base_checks()?;
        Ok(StudyConfig {
            particles: self.particles,
            horizon: self.horizon,
            levels: self.levels.clone().ok_or(ConfigError::MissingKey("levels"))?,
            n_ref: self.n_ref.ok_or(ConfigError::MissingKey("n_ref"))?,
            n_fine: self.n_fine,
            repetitions: self
                .repetitions
                .ok_or(ConfigError::MissingKey("repetitions"))?,
            seed: seed.unwrap_or(self.seed),
            initial: self.initial.law()?,
            scheme: self.scheme.into(),
            tamed: self.taming,
            lambda2,
            metric,
        })
    }

    /// The particle-count-study view (`chaos`): `n` is the shared level, the
    /// sizes come from the command line.
    pub fn chaos_config(
        &self,
        sizes: Vec<usize>,
        seed: Option<u64>,
    ) -> Result<ChaosConfig, ConfigError> {
        self.base_checks()?;
        let n = self.n.ok_or(ConfigError::MissingKey("n"))?;
        Ok(ChaosConfig {
            sizes,
            level: n,
            n_fine: self.n_fine.unwrap_or(n),
            horizon: self.horizon,
            scheme: self.scheme.into(),
            seed: seed.unwrap_or(self.seed),
            initial: self.initial.law()?,
        })
    }
}
