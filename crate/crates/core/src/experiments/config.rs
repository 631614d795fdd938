use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ModelConfig, ModelKind, SamplerConfig};
use crate::error::{Error, Result};
use crate::loss::RegKind;
use crate::trainer::{InitKind, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    /// Margin distributions of models trained at two temperatures.
    #[serde(rename = "E1_temp_margin")]
    TempMargin,
    /// Contrastive training versus the square-loss Bayes encoder.
    #[serde(rename = "E2_clip_vs_square")]
    ClipVsSquare,
    /// Margin with and without the positive-pair regularizer.
    #[serde(rename = "E3_regularization")]
    Regularization,
    /// Empirical-versus-population loss gap against pool size.
    #[serde(rename = "E4_concentration")]
    Concentration,
    /// Zero-shot error under shifted prompt distributions.
    #[serde(rename = "E5_shifted_prompts")]
    ShiftedPrompts,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::TempMargin,
        ExperimentId::ClipVsSquare,
        ExperimentId::Regularization,
        ExperimentId::Concentration,
        ExperimentId::ShiftedPrompts,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::TempMargin => "E1_temp_margin",
            ExperimentId::ClipVsSquare => "E2_clip_vs_square",
            ExperimentId::Regularization => "E3_regularization",
            ExperimentId::Concentration => "E4_concentration",
            ExperimentId::ShiftedPrompts => "E5_shifted_prompts",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentId::TempMargin => "within-batch margin histograms for models trained at tau = 0.07 and 0.01",
            ExperimentId::ClipVsSquare => "zero-shot error of contrastive training vs the square-loss Bayes encoder",
            ExperimentId::Regularization => "margin-of-correct fractions with and without the positive-pair regularizer",
            ExperimentId::Concentration => "|empirical - population| contrastive loss against pool size",
            ExperimentId::ShiftedPrompts => "zero-shot error as the prompt-side feature distribution shifts",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == name)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_trials() -> usize {
    10_000
}
fn default_top_r() -> Vec<usize> {
    vec![1, 2, 3]
}
fn default_margin_batches() -> usize {
    64
}
fn default_bins() -> usize {
    60
}
fn default_alpha_pairs() -> usize {
    20_000
}
fn default_variance_samples() -> usize {
    2_000
}
fn default_variance_inner() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_top_r")]
    pub top_r: Vec<usize>,
    /// Batches pooled for the within-batch margin histogram.
    #[serde(default = "default_margin_batches")]
    pub margin_batches: usize,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default = "default_alpha_pairs")]
    pub alpha_pairs: usize,
    /// Thresholds for the margin-violation curves; 41 points on `[0, 1.2]`
    /// when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_grid: Option<Vec<f64>>,
    #[serde(default = "default_variance_samples")]
    pub variance_samples: usize,
    #[serde(default = "default_variance_inner")]
    pub variance_inner: usize,
    /// Margin thresholds for the correct-with-margin curve; 21 points on
    /// `[0, γ]` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<f64>>,
    #[serde(default)]
    pub fixed_prompts: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_trials: default_trials(),
            top_r: default_top_r(),
            margin_batches: default_margin_batches(),
            histogram_bins: default_bins(),
            alpha_pairs: default_alpha_pairs(),
            gamma_grid: None,
            variance_samples: default_variance_samples(),
            variance_inner: default_variance_inner(),
            thresholds: None,
            fixed_prompts: false,
        }
    }
}

fn default_taus() -> Vec<f64> {
    vec![0.07, 0.01]
}
fn default_e2_trials() -> usize {
    100_000
}
fn default_pool_sizes() -> Vec<usize> {
    vec![64, 256, 1024]
}
fn default_e4_seeds() -> usize {
    200
}
fn default_population_batches() -> usize {
    400_000
}
fn default_shift_scales() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0, 16.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E1Options {
    /// Training temperatures; the learning rate follows each `τ²`.
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
}

impl Default for E1Options {
    fn default() -> Self {
        Self { taus: default_taus() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E2Options {
    #[serde(default = "default_e2_trials")]
    pub n_trials: usize,
}

impl Default for E2Options {
    fn default() -> Self {
        Self {
            n_trials: default_e2_trials(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E3Options {
    /// Off-diagonal coefficient of the negative-pair ablation;
    /// `0.1 / (B² − B)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E4Options {
    #[serde(default = "default_pool_sizes")]
    pub pool_sizes: Vec<usize>,
    /// Independent pools per size.
    #[serde(default = "default_e4_seeds")]
    pub seeds: usize,
    /// Batches used for the reference population loss.
    #[serde(default = "default_population_batches")]
    pub population_batches: usize,
}

impl Default for E4Options {
    fn default() -> Self {
        Self {
            pool_sizes: default_pool_sizes(),
            seeds: default_e4_seeds(),
            population_batches: default_population_batches(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct E5Options {
    /// Multipliers applied to the prompt-side ball radius.
    #[serde(default = "default_shift_scales")]
    pub shift_scales: Vec<f64>,
}

impl Default for E5Options {
    fn default() -> Self {
        Self {
            shift_scales: default_shift_scales(),
        }
    }
}

/// One experiment run. `model` and `train` fall back to per-experiment
/// defaults when omitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default, skip_serializing_if = "is_default")]
    pub e1: E1Options,
    #[serde(default, skip_serializing_if = "is_default")]
    pub e2: E2Options,
    #[serde(default, skip_serializing_if = "is_default")]
    pub e3: E3Options,
    #[serde(default, skip_serializing_if = "is_default")]
    pub e4: E4Options,
    #[serde(default, skip_serializing_if = "is_default")]
    pub e5: E5Options,
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// Default generative model of each experiment.
pub fn default_model(id: ExperimentId) -> ModelConfig {
    match id {
        ExperimentId::ClipVsSquare => ModelConfig::square_loss_failure(4, 0.2),
        ExperimentId::Regularization => ModelConfig {
            kind: ModelKind::CaseStudy,
            k: 8,
            k1: Some(9),
            k2: 0,
            k3: 0,
            gamma: 0.5,
            probs: None,
            radius: 0.0,
            d1: None,
            d2: None,
            mixing: false,
            seed: 0,
            xi: SamplerConfig::default(),
            zeta: SamplerConfig::default(),
        },
        _ => ModelConfig::default(),
    }
}

/// Default training setup of each experiment.
pub fn default_train(id: ExperimentId) -> TrainConfig {
    let base = TrainConfig {
        eta_scale: 100.0,
        iterations: 1000,
        ..TrainConfig::default()
    };
    match id {
        ExperimentId::TempMargin => TrainConfig {
            init: InitKind::SeededRandom { scale: 0.01 },
            early_stop_window: 0,
            ..base
        },
        ExperimentId::Regularization => TrainConfig {
            eta: Some(0.1),
            tau: 0.005,
            init: InitKind::LowMargin,
            lambda: 0.1,
            reg_kind: RegKind::Positive,
            early_stop_window: 0,
            ..base
        },
        _ => base,
    }
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentId, seed: u64) -> Self {
        Self {
            experiment,
            seed: Some(seed),
            output_dir: None,
            model: None,
            train: None,
            eval: EvalConfig::default(),
            e1: E1Options::default(),
            e2: E2Options::default(),
            e3: E3Options::default(),
            e4: E4Options::default(),
            e5: E5Options::default(),
        }
    }

    pub fn model(&self) -> ModelConfig {
        self.model.clone().unwrap_or_else(|| default_model(self.experiment))
    }

    pub fn train(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| default_train(self.experiment))
    }

    /// The same configuration with every default spelled out.
    pub fn resolved(&self) -> Self {
        Self {
            model: Some(self.model()),
            train: Some(self.train()),
            ..self.clone()
        }
    }

    /// Every constraint violation, each naming its field path.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.seed.is_none() {
            out.push("seed: required field is missing".to_string());
        }
        let model = self.model();
        if self.experiment == ExperimentId::ClipVsSquare && model.kind != ModelKind::SquareLossFailure {
            out.push(
                "model.kind: E2_clip_vs_square runs on the square-loss failure construction; set kind = \"square_loss_failure\""
                    .to_string(),
            );
        }
        out.extend(model.violations("model."));
        let train = self.train();
        out.extend(train.violations("train."));
        let k = model.k;
        let e = &self.eval;
        if e.n_trials == 0 {
            out.push("eval.n_trials: must be at least 1".into());
        }
        if e.top_r.is_empty() || e.top_r.iter().any(|&r| r == 0 || r > k) {
            out.push(format!("eval.top_r: every entry must lie in [1, K = {k}]"));
        }
        if e.margin_batches == 0 {
            out.push("eval.margin_batches: must be at least 1".into());
        }
        if train.batch_size < 2 {
            out.push("train.batch_size: margins need at least 2".into());
        }
        if e.histogram_bins == 0 {
            out.push("eval.histogram_bins: must be at least 1".into());
        }
        if e.alpha_pairs < 100 {
            out.push(format!("eval.alpha_pairs: need at least 100, got {}", e.alpha_pairs));
        }
        if let Some(g) = &e.gamma_grid {
            if g.is_empty() || g.iter().any(|v| !v.is_finite()) {
                out.push("eval.gamma_grid: must be a nonempty list of finite numbers".into());
            }
        }
        if let Some(t) = &e.thresholds {
            if t.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                out.push("eval.thresholds: entries must be finite and nonnegative".into());
            }
        }
        if e.variance_samples == 0 || e.variance_inner < 2 {
            out.push("eval.variance_samples: need at least 1 outer and 2 inner draws".into());
        }
        match self.experiment {
            ExperimentId::TempMargin => {
                if self.e1.taus.is_empty() || self.e1.taus.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
                    out.push("e1.taus: must be a nonempty list of positive temperatures".into());
                }
            }
            ExperimentId::ClipVsSquare => {
                if self.e2.n_trials == 0 {
                    out.push("e2.n_trials: must be at least 1".into());
                }
            }
            ExperimentId::Regularization => {
                if let Some(l) = self.e3.negative_lambda {
                    if !(l >= 0.0 && l.is_finite()) {
                        out.push(format!("e3.negative_lambda: must be nonnegative, got {l}"));
                    }
                }
            }
            ExperimentId::Concentration => {
                if self.e4.pool_sizes.is_empty() || self.e4.pool_sizes.contains(&0) {
                    out.push("e4.pool_sizes: must be a nonempty list of positive sizes".into());
                }
                if self.e4.seeds < 2 {
                    out.push("e4.seeds: need at least 2".into());
                }
                if self.e4.population_batches < 2 {
                    out.push("e4.population_batches: need at least 2".into());
                }
            }
            ExperimentId::ShiftedPrompts => {
                if model.zeta.kind != crate::data::SamplerKind::Ball {
                    out.push("model.zeta.kind: prompt shifts rescale a ball sampler; set kind = \"ball\"".into());
                }
                if self.e5.shift_scales.is_empty()
                    || self.e5.shift_scales.iter().any(|s| !(*s >= 0.0 && s.is_finite()))
                {
                    out.push("e5.shift_scales: must be a nonempty list of nonnegative factors".into());
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    pub fn seed_or_err(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config(vec!["seed: required field is missing".into()]))
    }

    /// TOML form. Option tables of other experiments are omitted when they
    /// hold defaults; the experiment's own table is always written.
    pub fn to_toml(&self) -> Result<String> {
        let err = |e: &dyn fmt::Display| Error::Config(vec![e.to_string()]);
        let mut table = toml::Table::try_from(self).map_err(|e| err(&e))?;
        let own = match self.experiment {
            ExperimentId::TempMargin => ("e1", toml::Value::try_from(&self.e1)),
            ExperimentId::ClipVsSquare => ("e2", toml::Value::try_from(&self.e2)),
            ExperimentId::Regularization => ("e3", toml::Value::try_from(&self.e3)),
            ExperimentId::Concentration => ("e4", toml::Value::try_from(&self.e4)),
            ExperimentId::ShiftedPrompts => ("e5", toml::Value::try_from(&self.e5)),
        };
        let value = own.1.map_err(|e| err(&e))?;
        table.entry(own.0).or_insert(value);
        toml::to_string(&table).map_err(|e| err(&e))
    }

    /// Parses TOML, reporting syntax and schema errors with line numbers.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().trim().to_string();
            Error::Config(vec![match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            }])
        })
    }

    /// SHA-256 of the canonical JSON form of the resolved configuration.
    /// Object keys are sorted, so the hash does not depend on key order in
    /// the source file.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self.resolved()).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Reads, parses and validates a configuration file, reporting every
/// violation at once.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config = ExperimentConfig::from_toml(&text)?;
    config.validate()?;
    Ok(config)
}
