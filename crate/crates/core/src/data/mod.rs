//! Case-study generative model for paired image/text data.
//!
//! A discrete shared latent `z` is drawn from a dictionary of `K` unit
//! vectors; the image is `x = G·[z; ξ]` and the text `y = H·[z; ζ]`, where
//! `ξ` and `ζ` are modality-specific unique features drawn independently
//! given `z`.

mod config;
mod dump;
mod sampler;

pub use config::{ModelConfig, ModelKind, SamplerConfig, SamplerKind, SupportPoint};
pub use dump::{read_samples_csv, write_samples_csv};
pub use sampler::UniqueFeatureSampler;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::error::{Error, Result};
use crate::linalg::{self, concat};
use crate::rng::SampleRng;

/// `K` unit vectors in `R^{K1}` whose largest pairwise inner product is
/// exactly `1 - γ`, plus the class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDictionary {
    vectors: Vec<DVector<f64>>,
    probs: Vec<f64>,
    margin_gamma: f64,
}

impl LatentDictionary {
    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> &DVector<f64> {
        &self.vectors[k]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn margin_gamma(&self) -> f64 {
        self.margin_gamma
    }

    pub fn num_classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    /// `Σ_k p_k²`, the probability that two independent draws share a latent.
    pub fn collision_probability(&self) -> f64 {
        self.probs.iter().map(|p| p * p).sum()
    }

    pub fn max_off_diagonal_inner(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for (i, a) in self.vectors.iter().enumerate() {
            for b in &self.vectors[i + 1..] {
                best = best.max(a.dot(b));
            }
        }
        best
    }

    /// Index of the dictionary vector closest to `z`.
    pub fn nearest(&self, z: &DVector<f64>) -> usize {
        let mut best = (0, f64::INFINITY);
        for (k, v) in self.vectors.iter().enumerate() {
            let d = (v - z).norm_squared();
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }
}

pub(crate) fn validate_probs(probs: &[f64], k: usize) -> Result<Vec<f64>> {
    if probs.len() != k {
        return Err(Error::InvalidProbabilities(format!(
            "expected {k} entries, got {}",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(Error::InvalidProbabilities(format!(
            "entries must be positive and finite, found {p}"
        )));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidProbabilities(format!(
            "entries sum to {total}, not 1"
        )));
    }
    Ok(probs.iter().map(|p| p / total).collect())
}

/// Builds the dictionary `v_k = sqrt(1-γ)·u + sqrt(γ)·e_k`, `k < K`, with
/// `u = e_K`. Every off-diagonal inner product equals `1 - γ`.
pub fn build_latent_dictionary(
    k: usize,
    k1: usize,
    gamma: f64,
    probs: Option<&[f64]>,
) -> Result<LatentDictionary> {
    if k < 2 {
        return Err(Error::arg("K", format!("need at least 2 classes, got {k}")));
    }
    if k1 < k + 1 {
        return Err(Error::DimensionTooSmall(format!(
            "latent dimension K1 = {k1} must be at least K + 1 = {}",
            k + 1
        )));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidMargin {
            gamma,
            reason: "must lie in (0, 1]",
        });
    }
    let probs = match probs {
        Some(p) => validate_probs(p, k)?,
        None => vec![1.0 / k as f64; k],
    };
    let shared = (1.0 - gamma).sqrt();
    let own = gamma.sqrt();
    let vectors = (0..k)
        .map(|i| {
            let mut v = DVector::zeros(k1);
            v[i] = own;
            v[k] = shared;
            v
        })
        .collect();
    Ok(LatentDictionary {
        vectors,
        probs,
        margin_gamma: gamma,
    })
}

/// One image-text pair with its latent class and unique features.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    /// Zero-based class index.
    pub latent_index: usize,
    pub xi: DVector<f64>,
    pub zeta: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchData {
    pub samples: Vec<PairedSample>,
}

impl BatchData {
    pub fn new(samples: Vec<PairedSample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyBatch);
        }
        Ok(Self { samples })
    }

    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    /// Images as rows, `B × d1`.
    pub fn x_matrix(&self) -> DMatrix<f64> {
        let d = self.samples[0].x.len();
        DMatrix::from_fn(self.samples.len(), d, |i, j| self.samples[i].x[j])
    }

    /// Texts as rows, `B × d2`.
    pub fn y_matrix(&self) -> DMatrix<f64> {
        let d = self.samples[0].y.len();
        DMatrix::from_fn(self.samples.len(), d, |i, j| self.samples[i].y[j])
    }

    pub fn latents(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.latent_index).collect()
    }

    /// Reverses the sample order.
    pub fn reversed(&self) -> Self {
        let mut samples = self.samples.clone();
        samples.reverse();
        Self { samples }
    }
}

/// Dictionaries, unique-feature samplers and the latent distribution.
#[derive(Clone, Debug)]
pub struct GenerativeModel {
    latent: LatentDictionary,
    g: DMatrix<f64>,
    h: DMatrix<f64>,
    xi_sampler: UniqueFeatureSampler,
    zeta_sampler: UniqueFeatureSampler,
    class_dist: WeightedIndex<f64>,
}

impl GenerativeModel {
    pub fn new(
        latent: LatentDictionary,
        g: DMatrix<f64>,
        h: DMatrix<f64>,
        xi_sampler: UniqueFeatureSampler,
        zeta_sampler: UniqueFeatureSampler,
    ) -> Result<Self> {
        let k1 = latent.dim();
        let k2 = xi_sampler.dim();
        let k3 = zeta_sampler.dim();
        if g.ncols() != k1 + k2 {
            return Err(Error::DimensionMismatch(format!(
                "G has {} columns, expected K1 + K2 = {}",
                g.ncols(),
                k1 + k2
            )));
        }
        if h.ncols() != k1 + k3 {
            return Err(Error::DimensionMismatch(format!(
                "H has {} columns, expected K1 + K3 = {}",
                h.ncols(),
                k1 + k3
            )));
        }
        linalg::check_full_column_rank(&g, "G")?;
        linalg::check_full_column_rank(&h, "H")?;
        let class_dist = WeightedIndex::new(latent.probs().iter().copied())
            .map_err(|e| Error::InvalidProbabilities(e.to_string()))?;
        Ok(Self {
            latent,
            g,
            h,
            xi_sampler,
            zeta_sampler,
            class_dist,
        })
    }

    /// Identity-block dictionaries in the smallest ambient dimensions.
    pub fn identity(
        latent: LatentDictionary,
        xi_sampler: UniqueFeatureSampler,
        zeta_sampler: UniqueFeatureSampler,
    ) -> Result<Self> {
        let k1 = latent.dim();
        let g = linalg::identity_block(k1 + xi_sampler.dim(), k1 + xi_sampler.dim());
        let h = linalg::identity_block(k1 + zeta_sampler.dim(), k1 + zeta_sampler.dim());
        Self::new(latent, g, h, xi_sampler, zeta_sampler)
    }

    pub fn latent(&self) -> &LatentDictionary {
        &self.latent
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn xi_sampler(&self) -> &UniqueFeatureSampler {
        &self.xi_sampler
    }

    pub fn zeta_sampler(&self) -> &UniqueFeatureSampler {
        &self.zeta_sampler
    }

    pub fn num_classes(&self) -> usize {
        self.latent.num_classes()
    }

    pub fn d1(&self) -> usize {
        self.g.nrows()
    }

    pub fn d2(&self) -> usize {
        self.h.nrows()
    }

    pub fn k1(&self) -> usize {
        self.latent.dim()
    }

    pub fn k2(&self) -> usize {
        self.xi_sampler.dim()
    }

    pub fn k3(&self) -> usize {
        self.zeta_sampler.dim()
    }

    pub fn gamma(&self) -> f64 {
        self.latent.margin_gamma()
    }

    /// Common norm bound `R` on both unique features.
    pub fn radius(&self) -> f64 {
        self.xi_sampler.radius().max(self.zeta_sampler.radius())
    }

    /// `‖G‖₂`, `‖H‖₂`.
    pub fn dictionary_norms(&self) -> (f64, f64) {
        (linalg::spectral_norm(&self.g), linalg::spectral_norm(&self.h))
    }

    pub fn image(&self, k: usize, xi: &DVector<f64>) -> DVector<f64> {
        &self.g * concat(self.latent.vector(k), xi)
    }

    pub fn text(&self, k: usize, zeta: &DVector<f64>) -> DVector<f64> {
        &self.h * concat(self.latent.vector(k), zeta)
    }

    pub fn sample_latent(&self, rng: &mut SampleRng) -> usize {
        self.class_dist.sample(&mut rng.latent)
    }

    /// Fresh image of class `k`, returned with its `ξ`.
    pub fn sample_image(&self, k: usize, rng: &mut SampleRng) -> (DVector<f64>, DVector<f64>) {
        let xi = self.xi_sampler.sample(&mut rng.xi);
        (self.image(k, &xi), xi)
    }

    /// Fresh text of class `k`, drawing `ζ` from `sampler` (the model's own
    /// text sampler unless overridden, e.g. for shifted prompts).
    pub fn sample_text_with(
        &self,
        k: usize,
        sampler: &UniqueFeatureSampler,
        rng: &mut SampleRng,
    ) -> (DVector<f64>, DVector<f64>) {
        let zeta = sampler.sample(&mut rng.zeta);
        (self.text(k, &zeta), zeta)
    }

    pub fn sample_text(&self, k: usize, rng: &mut SampleRng) -> (DVector<f64>, DVector<f64>) {
        self.sample_text_with(k, &self.zeta_sampler, rng)
    }

    pub fn sample_given_latent(&self, k: usize, rng: &mut SampleRng) -> PairedSample {
        let (x, xi) = self.sample_image(k, rng);
        let (y, zeta) = self.sample_text(k, rng);
        PairedSample {
            x,
            y,
            latent_index: k,
            xi,
            zeta,
        }
    }

    /// Draws `z` from the class probabilities, then `ξ` and `ζ`
    /// independently given `z`.
    pub fn sample_pair(&self, rng: &mut SampleRng) -> PairedSample {
        let k = self.sample_latent(rng);
        self.sample_given_latent(k, rng)
    }

    pub fn sample_batch(&self, batch_size: usize, rng: &mut SampleRng) -> Result<BatchData> {
        if batch_size == 0 {
            return Err(Error::EmptyBatch);
        }
        BatchData::new((0..batch_size).map(|_| self.sample_pair(rng)).collect())
    }

    /// Batch `index` of the batch family identified by `seed`.
    pub fn sample_batch_indexed(&self, batch_size: usize, seed: u64, index: u64) -> Result<BatchData> {
        self.sample_batch(batch_size, &mut SampleRng::substream(seed, index))
    }

    /// Largest reconstruction residual of `x` and `y` for a sample.
    pub fn reconstruction_residual(&self, s: &PairedSample) -> f64 {
        let rx = (&s.x - self.image(s.latent_index, &s.xi)).norm();
        let ry = (&s.y - self.text(s.latent_index, &s.zeta)).norm();
        rx.max(ry)
    }
}

/// The adversarial model for square-loss zero-shot failure: `K1 = K + 1`, no
/// image-side unique features, `G = I`, `H = [I; 0]` with one padding row, and
/// `ζ ∈ {e_1, e_2}` with probabilities `1/3, 2/3`. Requires `γ < 1/3`, which
/// makes every pair of dictionary vectors have inner product `1 - γ > 2/3`.
pub fn square_loss_failure_model(k: usize, gamma: f64) -> Result<GenerativeModel> {
    if !(gamma > 0.0 && gamma < 1.0 / 3.0) {
        return Err(Error::InvalidMargin {
            gamma,
            reason: "the square-loss failure construction needs 0 < gamma < 1/3",
        });
    }
    let k1 = k + 1;
    let latent = build_latent_dictionary(k, k1, gamma, None)?;
    let k3 = 2;
    let zeta = UniqueFeatureSampler::discrete(
        vec![
            (DVector::from_vec(vec![1.0, 0.0]), 1.0 / 3.0),
            (DVector::from_vec(vec![0.0, 1.0]), 2.0 / 3.0),
        ],
    )?;
    let xi = UniqueFeatureSampler::zero(0);
    let g = linalg::identity_block(k1, k1);
    let h = linalg::identity_block(k1 + k3 + 1, k1 + k3);
    GenerativeModel::new(latent, g, h, xi, zeta)
}
