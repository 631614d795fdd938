//! Full-batch gradient descent on the regularized contrastive objective.

mod gradient;

pub use gradient::{clip_gradient, finite_diff_gradient, gradient_from_matrices, score_gradient, ClipGradient};

use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::GenerativeModel;
use crate::error::{Error, Result};
use crate::loss::RegKind;
use crate::par;
use crate::rng::stream;
use crate::score::{completeness_weights, LinearScoreModel};

/// Starting point for `W`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitKind {
    #[default]
    Zero,
    /// `c · W*`.
    ScaledWstar { c: f64 },
    /// I.i.d. `N(0, scale²)` entries.
    SeededRandom { scale: f64 },
    /// `c·(τ/γ)·W*` with `c` from [`low_margin_constant`].
    LowMargin,
}

fn default_eta_scale() -> f64 {
    0.1
}
fn default_pool() -> usize {
    256
}
fn default_tol() -> f64 {
    1e-9
}
fn default_window() -> usize {
    50
}
fn default_batch() -> usize {
    16
}
fn default_tau() -> f64 {
    0.07
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Learning rate; when absent it is `eta_scale · τ² / (‖G‖²‖H‖²(1+R)⁴)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default = "default_eta_scale")]
    pub eta_scale: f64,
    pub iterations: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub trainable_tau: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    /// Step size for `log τ`; defaults to `eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_lr: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub reg_kind: RegKind,
    #[serde(default)]
    pub init: InitKind,
    /// Number of batches in the fixed training pool.
    #[serde(default = "default_pool")]
    pub pool_size: usize,
    /// Draw a new pool every iteration instead of reusing one.
    #[serde(default)]
    pub fresh_sampling: bool,
    #[serde(default = "default_tol")]
    pub early_stop_tol: f64,
    /// Set to 0 to disable early stopping.
    #[serde(default = "default_window")]
    pub early_stop_window: usize,
    /// Fill the `wall_ms` trajectory column. Off by default so trajectories
    /// are byte-reproducible.
    #[serde(default)]
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: None,
            eta_scale: default_eta_scale(),
            iterations: 500,
            batch_size: default_batch(),
            tau: default_tau(),
            trainable_tau: false,
            tau_min: None,
            tau_max: None,
            tau_lr: None,
            lambda: 0.0,
            reg_kind: RegKind::None,
            init: InitKind::Zero,
            pool_size: default_pool(),
            fresh_sampling: false,
            early_stop_tol: default_tol(),
            early_stop_window: default_window(),
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: String| out.push(format!("{prefix}{field}: {msg}"));
        if let Some(eta) = self.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                bad("eta", format!("must be positive, got {eta}"));
            }
        }
        if !(self.eta_scale > 0.0 && self.eta_scale.is_finite()) {
            bad("eta_scale", format!("must be positive, got {}", self.eta_scale));
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            bad("tau", format!("must be positive, got {}", self.tau));
        }
        if self.trainable_tau {
            let lo = self.tau_min.unwrap_or(self.tau);
            let hi = self.tau_max.unwrap_or(self.tau);
            if !(lo > 0.0 && lo <= self.tau && self.tau <= hi) {
                bad(
                    "tau",
                    format!("trainable tau needs 0 < tau_min <= tau <= tau_max, got {lo} <= {} <= {hi}", self.tau),
                );
            }
        }
        if let Some(lr) = self.tau_lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                bad("tau_lr", format!("must be nonnegative, got {lr}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bad("lambda", format!("must be nonnegative, got {}", self.lambda));
        }
        if self.reg_kind == RegKind::Negative && self.batch_size < 2 {
            bad("batch_size", "the off-diagonal regularizer needs at least 2".into());
        }
        if self.pool_size == 0 {
            bad("pool_size", "must be at least 1".into());
        }
        match self.init {
            InitKind::ScaledWstar { c } if !c.is_finite() => {
                bad("init.c", "must be finite".into())
            }
            InitKind::SeededRandom { scale } if !(scale >= 0.0 && scale.is_finite()) => {
                bad("init.scale", format!("must be nonnegative, got {scale}"))
            }
            _ => {}
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.violations("").into_iter().next() {
            Some(v) => Err(Error::arg("train", v)),
            None => Ok(()),
        }
    }

    pub fn learning_rate(&self, gen: &GenerativeModel) -> f64 {
        self.eta
            .unwrap_or_else(|| default_learning_rate(gen, self.tau, self.eta_scale))
    }
}

/// `scale · τ² / (‖G‖²‖H‖²(1 + R)⁴)`.
pub fn default_learning_rate(gen: &GenerativeModel, tau: f64, scale: f64) -> f64 {
    let (g, h) = gen.dictionary_norms();
    scale * tau * tau / (g * g * h * h * (1.0 + gen.radius()).powi(4))
}

/// `2·log(16‖G‖²‖H‖²(R²+1)²·B·η·T / τ)`.
pub fn low_margin_constant(gen: &GenerativeModel, batch_size: usize, tau: f64, eta: f64, iterations: usize) -> f64 {
    let (g, h) = gen.dictionary_norms();
    let r2 = gen.radius().powi(2);
    let arg = 16.0 * g * g * h * h * (r2 + 1.0).powi(2) * batch_size as f64 * eta * iterations as f64 / tau;
    2.0 * arg.ln()
}

/// `(2/τ + λ)·‖G‖‖H‖(R² + 1)`.
pub fn gradient_norm_bound(gen: &GenerativeModel, tau: f64, lambda: f64) -> f64 {
    let (g, h) = gen.dictionary_norms();
    (2.0 / tau + lambda) * g * h * (gen.radius().powi(2) + 1.0)
}

pub fn initial_weights(gen: &GenerativeModel, config: &TrainConfig, seed: u64) -> Result<DMatrix<f64>> {
    let (d1, d2) = (gen.d1(), gen.d2());
    Ok(match config.init {
        InitKind::Zero => DMatrix::zeros(d2, d1),
        InitKind::ScaledWstar { c } => completeness_weights(gen)? * c,
        InitKind::SeededRandom { scale } => {
            let mut rng = stream(seed, "init", 0);
            DMatrix::from_fn(d2, d1, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
        }
        InitKind::LowMargin => {
            let eta = config.learning_rate(gen);
            let c = low_margin_constant(gen, config.batch_size, config.tau, eta, config.iterations);
            completeness_weights(gen)? * (c * config.tau / gen.gamma())
        }
    })
}

/// Batches stored as `(X, Y)` row matrices.
#[derive(Clone, Debug)]
pub struct BatchPool {
    pub batches: Vec<(DMatrix<f64>, DMatrix<f64>)>,
}

impl BatchPool {
    /// `n` batches from substreams `offset .. offset + n` of the `pool` purpose.
    pub fn sample(gen: &GenerativeModel, batch_size: usize, n: usize, seed: u64, offset: u64) -> Result<Self> {
        let pool_seed = crate::rng::derive_seed(seed, "pool");
        let batches = par::try_map_indexed(n, |i| {
            let b = gen.sample_batch_indexed(batch_size, pool_seed, offset + i as u64)?;
            Ok::<_, Error>((b.x_matrix(), b.y_matrix()))
        })?;
        Ok(Self { batches })
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Average gradient, loss and extreme scores over the pool. Batches are
    /// evaluated in parallel and reduced in pool order.
    pub fn gradient(&self, w: &DMatrix<f64>, tau: f64, lambda: f64, kind: RegKind) -> Result<PoolGradient> {
        let parts = par::try_map_indexed(self.batches.len(), |i| {
            let (x, y) = &self.batches[i];
            let s = (x * w.transpose()) * y.transpose();
            let (c, log_tau, loss) = score_gradient(&s, tau, lambda, kind)?;
            let g = y.transpose() * c.transpose() * x;
            let (min_diag, max_off) = extreme_scores(&s);
            Ok::<_, Error>((g, log_tau, loss, min_diag, max_off))
        })?;
        let n = parts.len() as f64;
        let mut out = PoolGradient {
            w: DMatrix::zeros(w.nrows(), w.ncols()),
            log_tau: 0.0,
            loss: 0.0,
            min_diag_score: f64::INFINITY,
            max_offdiag_score: f64::NEG_INFINITY,
        };
        for (g, lt, l, mn, mx) in parts {
            out.w += g;
            out.log_tau += lt;
            out.loss += l;
            out.min_diag_score = out.min_diag_score.min(mn);
            out.max_offdiag_score = out.max_offdiag_score.max(mx);
        }
        out.w /= n;
        out.log_tau /= n;
        out.loss /= n;
        Ok(out)
    }

    /// Mean regularized loss over the pool.
    pub fn loss(&self, w: &DMatrix<f64>, tau: f64, lambda: f64, kind: RegKind) -> Result<f64> {
        let vals = par::try_map_indexed(self.batches.len(), |i| {
            let (x, y) = &self.batches[i];
            let s = (x * w.transpose()) * y.transpose();
            crate::loss::regularized_loss_from_scores(&s, tau, lambda, kind).map(|l| l.value)
        })?;
        Ok(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

fn extreme_scores(s: &DMatrix<f64>) -> (f64, f64) {
    let mut min_diag = f64::INFINITY;
    let mut max_off = f64::NEG_INFINITY;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            if i == j {
                min_diag = min_diag.min(s[(i, j)]);
            } else {
                max_off = max_off.max(s[(i, j)]);
            }
        }
    }
    (min_diag, max_off)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolGradient {
    pub w: DMatrix<f64>,
    pub log_tau: f64,
    pub loss: f64,
    pub min_diag_score: f64,
    pub max_offdiag_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    /// Pool loss at the iterate before the update.
    pub loss: f64,
    pub grad_norm: f64,
    pub tau: f64,
    pub wall_ms: u64,
    pub min_diag_score: f64,
    pub max_offdiag_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrajectory {
    pub records: Vec<TrajectoryRecord>,
    pub eta: f64,
    pub early_stopped: bool,
}

impl TrainTrajectory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "iteration",
            "loss",
            "grad_norm",
            "tau",
            "wall_ms",
            "min_diag_score",
            "max_offdiag_score",
        ])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                format!("{:?}", r.loss),
                format!("{:?}", r.grad_norm),
                format!("{:?}", r.tau),
                r.wall_ms.to_string(),
                format!("{:?}", r.min_diag_score),
                format!("{:?}", r.max_offdiag_score),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }
}

const DIVERGENCE_LOSS: f64 = 1e6;

/// Gradient descent `W ← W − η∇L̂` over a seeded pool of batches. With a
/// trainable temperature, `log τ` takes a gradient step and `τ` is clipped
/// to `[tau_min, tau_max]`.
pub fn train_gd(
    gen: &GenerativeModel,
    config: &TrainConfig,
    seed: u64,
) -> Result<(LinearScoreModel, TrainTrajectory)> {
    let w0 = initial_weights(gen, config, seed)?;
    train_from(gen, config, seed, w0)
}

/// As [`train_gd`] but starting from `w0`.
pub fn train_from(
    gen: &GenerativeModel,
    config: &TrainConfig,
    seed: u64,
    w0: DMatrix<f64>,
) -> Result<(LinearScoreModel, TrainTrajectory)> {
    config.validate()?;
    if w0.shape() != (gen.d2(), gen.d1()) {
        return Err(Error::DimensionMismatch(format!(
            "initial W is {:?}, expected {:?}",
            w0.shape(),
            (gen.d2(), gen.d1())
        )));
    }
    let eta = config.learning_rate(gen);
    let tau_lr = config.tau_lr.unwrap_or(eta);
    let (tau_lo, tau_hi) = (
        config.tau_min.unwrap_or(config.tau),
        config.tau_max.unwrap_or(config.tau),
    );
    let mut pool = BatchPool::sample(gen, config.batch_size, config.pool_size, seed, 0)?;
    let mut w = w0;
    let mut tau = config.tau;
    let mut traj = TrainTrajectory {
        records: Vec::with_capacity(config.iterations),
        eta,
        early_stopped: false,
    };
    let start = Instant::now();
    for t in 0..config.iterations {
        if config.fresh_sampling && t > 0 {
            let offset = (t * config.pool_size) as u64;
            pool = BatchPool::sample(gen, config.batch_size, config.pool_size, seed, offset)?;
        }
        let g = pool.gradient(&w, tau, config.lambda, config.reg_kind)?;
        if !g.loss.is_finite() || g.loss > DIVERGENCE_LOSS {
            return Err(Error::Divergence {
                iteration: t,
                loss: g.loss,
            });
        }
        let grad_norm = g.w.norm();
        traj.records.push(TrajectoryRecord {
            iteration: t,
            loss: g.loss,
            grad_norm,
            tau,
            wall_ms: if config.record_wall_time {
                start.elapsed().as_millis() as u64
            } else {
                0
            },
            min_diag_score: g.min_diag_score,
            max_offdiag_score: g.max_offdiag_score,
        });
        w -= &g.w * eta;
        if config.trainable_tau {
            tau = (tau.ln() - tau_lr * g.log_tau).exp().clamp(tau_lo, tau_hi);
        }
        let window = config.early_stop_window;
        if !config.fresh_sampling && window > 0 && t >= window {
            let earlier = traj.records[t - window].loss;
            if earlier - g.loss < config.early_stop_tol {
                traj.early_stopped = true;
                break;
            }
        }
    }
    let model = LinearScoreModel::inner(w, tau)?;
    Ok((model, traj))
}
