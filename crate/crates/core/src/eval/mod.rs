//! Zero-shot evaluation, within-batch margins, margin-violation rates and
//! conditional-variance diagnostics.

mod alpha;
mod report;

pub use alpha::{alpha_exact, alpha_hat, default_gamma_grid, AlphaPoint, MarginPairPool};
pub use report::{write_margins_csv, EvalReport, FractionPoint, Histogram, VariancePair, ZeroShotPoint};

use std::borrow::Cow;

use nalgebra::DVector;

use crate::data::{BatchData, GenerativeModel, UniqueFeatureSampler};
use crate::error::{Error, Result};
use crate::loss::log_sum_exp;
use crate::par;
use crate::rng::{derive_seed, SampleRng};
use crate::score::{LinearScoreModel, Scorer};

/// Where prompt-side unique features come from.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum PromptSource {
    /// The model's own text sampler.
    #[default]
    InDistribution,
    /// A replacement text sampler used for prompts only.
    Shifted(UniqueFeatureSampler),
}

/// One text prompt per class, indexed by class.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    pub prompts: Vec<DVector<f64>>,
    pub source: PromptSource,
}

impl PromptSet {
    pub fn sample(gen: &GenerativeModel, source: &PromptSource, rng: &mut SampleRng) -> Result<Self> {
        let sampler = match source {
            PromptSource::InDistribution => gen.zeta_sampler(),
            PromptSource::Shifted(s) => {
                if s.dim() != gen.k3() {
                    return Err(Error::DimensionMismatch(format!(
                        "shifted prompt sampler has dimension {}, text features have {}",
                        s.dim(),
                        gen.k3()
                    )));
                }
                s
            }
        };
        let prompts = (0..gen.num_classes())
            .map(|k| gen.sample_text_with(k, sampler, rng).0)
            .collect();
        Ok(Self {
            prompts,
            source: source.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }
}

/// How zero-shot trials are drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroShotSpec {
    pub n_trials: usize,
    pub seed: u64,
    pub source: PromptSource,
    /// Draw one prompt set up front and reuse it for every trial instead of
    /// redrawing prompts per trial.
    pub fixed_prompts: bool,
    /// Temperature used for the soft-margin statistic.
    pub tau: f64,
}

impl ZeroShotSpec {
    pub fn new(n_trials: usize, seed: u64) -> Self {
        Self {
            n_trials,
            seed,
            source: PromptSource::InDistribution,
            fixed_prompts: false,
            tau: 1.0,
        }
    }

    pub fn with_source(mut self, source: PromptSource) -> Self {
        self.source = source;
        self
    }

    pub fn fixed(mut self, fixed: bool) -> Self {
        self.fixed_prompts = fixed;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

/// Result of classifying one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub latent: usize,
    /// Position of the true class in the ranking (0 = top-1).
    pub rank: usize,
    /// True-class score minus the best competing score.
    pub margin: f64,
    /// `log Σ_k exp((s_k − s_true)/τ)`.
    pub soft_margin: f64,
}

/// Ranking position of `truth` under descending scores with ties going to
/// the lower index.
fn rank_of(scores: &[f64], truth: usize) -> usize {
    let s = scores[truth];
    scores
        .iter()
        .enumerate()
        .filter(|&(k, &v)| v > s || (v == s && k < truth))
        .count()
}

/// Scores of `x` against every prompt.
pub fn prompt_scores<S: Scorer + ?Sized>(scorer: &S, x: &DVector<f64>, prompts: &PromptSet) -> Result<Vec<f64>> {
    let g = scorer.embed_image(x)?;
    prompts
        .prompts
        .iter()
        .map(|y| scorer.similarity().apply(&g, y))
        .collect()
}

/// Indices of the `r` highest-scoring prompts, best first; ties go to the
/// lower index.
pub fn zero_shot_predict<S: Scorer + ?Sized>(
    scorer: &S,
    x: &DVector<f64>,
    prompts: &PromptSet,
    r: usize,
) -> Result<Vec<usize>> {
    if r == 0 || r > prompts.len() {
        return Err(Error::arg("r", format!("must lie in [1, {}], got {r}", prompts.len())));
    }
    let scores = prompt_scores(scorer, x, prompts)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps lower indices first among equal scores.
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(r);
    Ok(idx)
}

fn trial_seed(seed: u64) -> u64 {
    derive_seed(seed, "zero-shot")
}

/// Image, latent and prompts of trial `t`. Trials with the same seed and
/// index are identical across all zero-shot statistics.
pub fn draw_trial<'a>(
    gen: &GenerativeModel,
    spec: &ZeroShotSpec,
    fixed: Option<&'a PromptSet>,
    t: usize,
) -> Result<(usize, DVector<f64>, Cow<'a, PromptSet>)> {
    let mut rng = SampleRng::substream(trial_seed(spec.seed), t as u64);
    let latent = gen.sample_latent(&mut rng);
    let (x, _) = gen.sample_image(latent, &mut rng);
    let prompts = match fixed {
        Some(p) => Cow::Borrowed(p),
        None => Cow::Owned(PromptSet::sample(gen, &spec.source, &mut rng)?),
    };
    Ok((latent, x, prompts))
}

/// The shared prompt set of a fixed-prompt run.
pub fn fixed_prompt_set(gen: &GenerativeModel, spec: &ZeroShotSpec) -> Result<PromptSet> {
    let mut rng = SampleRng::substream(derive_seed(spec.seed, "fixed-prompts"), 0);
    PromptSet::sample(gen, &spec.source, &mut rng)
}

pub fn zero_shot_trials<S: Scorer + ?Sized>(
    scorer: &S,
    gen: &GenerativeModel,
    spec: &ZeroShotSpec,
) -> Result<Vec<TrialOutcome>> {
    if spec.n_trials == 0 {
        return Err(Error::arg("n_trials", "must be at least 1"));
    }
    if !(spec.tau > 0.0) {
        return Err(Error::arg("tau", format!("must be positive, got {}", spec.tau)));
    }
    let fixed = if spec.fixed_prompts {
        Some(fixed_prompt_set(gen, spec)?)
    } else {
        None
    };
    par::try_map_indexed(spec.n_trials, |t| {
        let (latent, x, prompts) = draw_trial(gen, spec, fixed.as_ref(), t)?;
        let scores = prompt_scores(scorer, &x, &prompts)?;
        let s = scores[latent];
        let best_other = scores
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != latent)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(TrialOutcome {
            latent,
            rank: rank_of(&scores, latent),
            margin: s - best_other,
            soft_margin: log_sum_exp(scores.iter().map(|v| (v - s) / spec.tau)),
        })
    })
}

fn proportion(hits: usize, n: usize) -> (f64, f64) {
    let p = hits as f64 / n as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}

/// Top-`r` error rates from a shared set of trials.
pub fn top_r_errors(outcomes: &[TrialOutcome], rs: &[usize]) -> Vec<ZeroShotPoint> {
    rs.iter()
        .map(|&r| {
            let misses = outcomes.iter().filter(|o| o.rank >= r).count();
            let (error, se) = proportion(misses, outcomes.len());
            ZeroShotPoint { r, error, se }
        })
        .collect()
}

/// Fraction of trials whose true class has the top score and beats the
/// runner-up by at least each threshold.
pub fn correct_with_margin(outcomes: &[TrialOutcome], thresholds: &[f64]) -> Vec<FractionPoint> {
    thresholds
        .iter()
        .map(|&th| {
            let hits = outcomes
                .iter()
                .filter(|o| o.rank == 0 && o.margin >= th)
                .count();
            let (fraction, se) = proportion(hits, outcomes.len());
            FractionPoint {
                threshold: th,
                fraction,
                se,
            }
        })
        .collect()
}

/// Mean of the soft-margin statistic, an upper bound on
/// `top-r error · log(1 + r)` for every `r`.
pub fn soft_margin_expectation(outcomes: &[TrialOutcome]) -> f64 {
    outcomes.iter().map(|o| o.soft_margin).sum::<f64>() / outcomes.len() as f64
}

pub fn zero_shot_error<S: Scorer + ?Sized>(
    scorer: &S,
    gen: &GenerativeModel,
    r: usize,
    spec: &ZeroShotSpec,
) -> Result<ZeroShotPoint> {
    if r == 0 || r > gen.num_classes() {
        return Err(Error::arg("r", format!("must lie in [1, {}], got {r}", gen.num_classes())));
    }
    let outcomes = zero_shot_trials(scorer, gen, spec)?;
    Ok(top_r_errors(&outcomes, &[r])[0])
}

pub fn margin_of_correct_fraction<S: Scorer + ?Sized>(
    scorer: &S,
    gen: &GenerativeModel,
    thresholds: &[f64],
    spec: &ZeroShotSpec,
) -> Result<Vec<FractionPoint>> {
    if let Some(t) = thresholds.iter().find(|t| !(**t >= 0.0)) {
        return Err(Error::arg("thresholds", format!("must be nonnegative, got {t}")));
    }
    Ok(correct_with_margin(&zero_shot_trials(scorer, gen, spec)?, thresholds))
}

/// All `2B(B−1)` within-batch margins: for every `i` and `j ≠ i`,
/// `S[i][i] − S[j][i]` followed by `S[i][i] − S[i][j]`.
pub fn batch_margins(model: &LinearScoreModel, batch: &BatchData) -> Result<Vec<f64>> {
    let b = batch.batch_size();
    if b < 2 {
        return Err(Error::DegenerateInput("margins need at least 2 samples".into()));
    }
    let s = model.score_matrix(batch)?;
    Ok(margins_from_scores(&s))
}

pub fn margins_from_scores(s: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let b = s.nrows();
    let mut out = Vec::with_capacity(2 * b * (b - 1));
    for i in 0..b {
        for j in 0..b {
            if i != j {
                out.push(s[(i, i)] - s[(j, i)]);
                out.push(s[(i, i)] - s[(i, j)]);
            }
        }
    }
    out
}

/// Margins from `n_batches` seeded batches, in batch order.
pub fn pooled_margins(
    model: &LinearScoreModel,
    gen: &GenerativeModel,
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let margin_seed = derive_seed(seed, "margins");
    let parts = par::try_map_indexed(n_batches, |i| {
        let batch = gen.sample_batch_indexed(batch_size, margin_seed, i as u64)?;
        batch_margins(model, &batch)
    })?;
    Ok(parts.concat())
}

/// Monte Carlo estimates of `E_{(y,z)}[Var_{x|z} f(x, y)]` and
/// `E_{(x,z)}[Var_{y|z} f(x, y)]`. Each outer draw fixes `z` and one side,
/// resamples `inner` copies of the other side from the same class and takes
/// their unbiased sample variance.
pub fn conditional_variance<F>(
    score: F,
    gen: &GenerativeModel,
    n_samples: usize,
    inner: usize,
    seed: u64,
) -> Result<VariancePair>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<f64> + Sync,
{
    if n_samples == 0 || inner < 2 {
        return Err(Error::arg("n_samples", "need at least one outer draw and two inner draws"));
    }
    let var_seed = derive_seed(seed, "conditional-variance");
    let sample_var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
    };
    let parts = par::try_map_indexed(n_samples, |i| {
        let mut rng = SampleRng::substream(var_seed, i as u64);
        let k = gen.sample_latent(&mut rng);
        let (x0, _) = gen.sample_image(k, &mut rng);
        let (y0, _) = gen.sample_text(k, &mut rng);
        let xs = (0..inner)
            .map(|_| score(&gen.sample_image(k, &mut rng).0, &y0))
            .collect::<Result<Vec<_>>>()?;
        let ys = (0..inner)
            .map(|_| score(&x0, &gen.sample_text(k, &mut rng).0))
            .collect::<Result<Vec<_>>>()?;
        Ok::<_, Error>((sample_var(&xs), sample_var(&ys)))
    })?;
    let n = parts.len() as f64;
    let (sx, sy) = parts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    Ok(VariancePair {
        x_side: (sx / n).max(0.0),
        y_side: (sy / n).max(0.0),
    })
}
