//! Symmetric contrastive (InfoNCE) loss, its population estimate, the
//! square loss and the margin regularizers.

mod bounds;

pub use bounds::{expected_log_positive_count, positive_count_bound};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{BatchData, GenerativeModel};
use crate::error::{Error, Result};
use crate::par;
use crate::score::LinearScoreModel;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub per_sample_terms: Option<Vec<f64>>,
}

impl LossValue {
    fn from_terms(terms: Vec<f64>) -> Self {
        let value = terms.iter().sum::<f64>() / terms.len() as f64;
        Self {
            value,
            per_sample_terms: Some(terms),
        }
    }

    fn scalar(value: f64) -> Self {
        Self {
            value,
            per_sample_terms: None,
        }
    }
}

/// Monte Carlo mean of a per-batch quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n_batches: usize,
}

impl PopulationEstimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::arg("n_batches", format!("need at least 2, got {n}")));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            standard_error: (var / n as f64).sqrt(),
            n_batches: n,
        })
    }
}

/// Which regularizer is added to the contrastive loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    #[default]
    None,
    /// `−mean_i f(x_i, y_i)`, weighted by `λ`.
    Positive,
    /// `λ · Σ_{i≠j} f(x_i, y_j)`.
    Negative,
}

/// Default positive-pair coefficient.
pub const DEFAULT_POSITIVE_LAMBDA: f64 = 0.1;

/// Default off-diagonal coefficient `0.1 / (B² − B)`.
pub fn default_negative_lambda(batch_size: usize) -> f64 {
    let b = batch_size as f64;
    0.1 / (b * b - b)
}

/// `log Σ exp(v)` with the maximum factored out; the remaining terms go
/// through `ln_1p` so that near-separated rows keep their tiny positive loss.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (arg, m) = values
        .clone()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    if m.is_infinite() {
        return m;
    }
    let rest: f64 = values
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - m).exp())
        .sum();
    m + rest.ln_1p()
}

fn check_scores(s: &DMatrix<f64>) -> Result<()> {
    if s.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    if s.nrows() != s.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "score matrix is {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    match s.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(Error::NonFiniteScore(*v)),
        None => Ok(()),
    }
}

/// Contrastive loss of a score matrix `S[i][j] = f(x_i, y_j)`. Term `i` is
/// `lse_j((S[j][i] − S[i][i])/τ) + lse_j((S[i][j] − S[i][i])/τ)`.
pub fn contrastive_loss_from_scores(s: &DMatrix<f64>, tau: f64) -> Result<LossValue> {
    check_scores(s)?;
    if !(tau > 0.0) {
        return Err(Error::arg("tau", format!("must be positive, got {tau}")));
    }
    let b = s.nrows();
    let terms = (0..b)
        .map(|i| {
            let d = s[(i, i)];
            let col = log_sum_exp((0..b).map(|j| (s[(j, i)] - d) / tau));
            let row = log_sum_exp((0..b).map(|j| (s[(i, j)] - d) / tau));
            col + row
        })
        .collect();
    Ok(LossValue::from_terms(terms))
}

pub fn clip_batch_loss(model: &LinearScoreModel, batch: &BatchData) -> Result<LossValue> {
    contrastive_loss_from_scores(&model.score_matrix(batch)?, model.tau())
}

pub fn positive_regularizer_from_scores(s: &DMatrix<f64>) -> Result<LossValue> {
    check_scores(s)?;
    Ok(LossValue::from_terms(s.diagonal().iter().map(|v| -v).collect()))
}

pub fn negative_regularizer_from_scores(s: &DMatrix<f64>, lambda: f64) -> Result<LossValue> {
    check_scores(s)?;
    if s.nrows() < 2 {
        return Err(Error::DegenerateInput(
            "off-diagonal regularizer needs at least 2 samples".into(),
        ));
    }
    let off = s.sum() - s.trace();
    Ok(LossValue::scalar(lambda * off))
}

pub fn positive_pair_regularizer(model: &LinearScoreModel, batch: &BatchData) -> Result<LossValue> {
    positive_regularizer_from_scores(&model.score_matrix(batch)?)
}

pub fn negative_pair_regularizer(
    model: &LinearScoreModel,
    batch: &BatchData,
    lambda: f64,
) -> Result<LossValue> {
    if batch.batch_size() < 2 {
        return Err(Error::DegenerateInput(
            "off-diagonal regularizer needs at least 2 samples".into(),
        ));
    }
    negative_regularizer_from_scores(&model.score_matrix(batch)?, lambda)
}

/// Contrastive loss plus the selected regularizer. For [`RegKind::Negative`]
/// `lambda` is the off-diagonal coefficient itself.
pub fn regularized_loss_from_scores(
    s: &DMatrix<f64>,
    tau: f64,
    lambda: f64,
    kind: RegKind,
) -> Result<LossValue> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::arg("lambda", format!("must be nonnegative, got {lambda}")));
    }
    let base = contrastive_loss_from_scores(s, tau)?;
    match kind {
        RegKind::None => Ok(base),
        _ if lambda == 0.0 => Ok(base),
        RegKind::Positive => {
            let reg = positive_regularizer_from_scores(s)?;
            let terms = base
                .per_sample_terms
                .unwrap()
                .iter()
                .zip(reg.per_sample_terms.unwrap())
                .map(|(l, r)| l + lambda * r)
                .collect();
            Ok(LossValue::from_terms(terms))
        }
        RegKind::Negative => {
            let reg = negative_regularizer_from_scores(s, lambda)?;
            Ok(LossValue::scalar(base.value + reg.value))
        }
    }
}

pub fn regularized_loss(
    model: &LinearScoreModel,
    batch: &BatchData,
    lambda: f64,
    kind: RegKind,
) -> Result<LossValue> {
    regularized_loss_from_scores(&model.score_matrix(batch)?, model.tau(), lambda, kind)
}

/// Two-sided regularizer using latent labels: mean score over cross-latent
/// pairs minus mean score over same-latent pairs (diagonal included). Only
/// usable when the latents are known.
pub fn oracle_pair_regularizer(model: &LinearScoreModel, batch: &BatchData) -> Result<LossValue> {
    let s = model.score_matrix(batch)?;
    let z = batch.latents();
    let (mut pos, mut npos, mut neg, mut nneg) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..z.len() {
        for j in 0..z.len() {
            if z[i] == z[j] {
                pos += s[(i, j)];
                npos += 1;
            } else {
                neg += s[(i, j)];
                nneg += 1;
            }
        }
    }
    let neg_mean = if nneg == 0 { 0.0 } else { neg / nneg as f64 };
    Ok(LossValue::scalar(neg_mean - pos / npos as f64))
}

/// Mean over `n_batches` independent batches of a per-batch statistic.
/// Batch `i` is drawn from substream `i` of `seed`, so the result does not
/// depend on the evaluation order.
pub fn population_estimate<F>(
    gen: &GenerativeModel,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
    stat: F,
) -> Result<PopulationEstimate>
where
    F: Fn(&BatchData) -> Result<f64> + Sync,
{
    if n_batches < 2 {
        return Err(Error::arg("n_batches", format!("need at least 2, got {n_batches}")));
    }
    let values = par::try_map_indexed(n_batches, |i| {
        let batch = gen.sample_batch_indexed(batch_size, seed, i as u64)?;
        stat(&batch)
    })?;
    PopulationEstimate::from_values(&values)
}

/// Monte Carlo estimate of the population contrastive loss.
pub fn population_loss_estimate(
    model: &LinearScoreModel,
    gen: &GenerativeModel,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<PopulationEstimate> {
    population_estimate(gen, batch_size, n_batches, seed, |b| {
        Ok(clip_batch_loss(model, b)?.value)
    })
}

/// Mean of `‖encode(x_i) − y_i‖²` over a batch.
pub fn square_loss<F>(encode: F, batch: &BatchData) -> Result<LossValue>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let terms = batch
        .samples
        .iter()
        .map(|s| {
            let g = encode(&s.x)?;
            if g.len() != s.y.len() {
                return Err(Error::DimensionMismatch(format!(
                    "encoder output has length {}, text has length {}",
                    g.len(),
                    s.y.len()
                )));
            }
            Ok((g - &s.y).norm_squared())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossValue::from_terms(terms))
}

#[cfg(test)]
mod tests;
