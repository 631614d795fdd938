use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::GenerativeModel;
use crate::error::{Error, Result};
use crate::par;
use crate::rng::{derive_seed, SampleRng};

/// Margin-violation rates at one threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub gamma: f64,
    /// `P(f(x,y) − f(x,y') ≤ γ) + P(f(x,y) − f(x',y) ≤ γ)`.
    pub alpha_hat: f64,
    /// Same events restricted to `z ≠ z'`.
    pub alpha_exact: f64,
    pub se_hat: f64,
    pub se_exact: f64,
    /// Standard error of `alpha_hat − alpha_exact`.
    pub se_gap: f64,
}

/// Score differences of independent tuple pairs `(x, y, z)`, `(x', y', z')`,
/// shared across a whole threshold grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginPairPool {
    /// `f(x, y) − f(x, y')`.
    pub text_side: Vec<f64>,
    /// `f(x, y) − f(x', y)`.
    pub image_side: Vec<f64>,
    pub same_latent: Vec<bool>,
}

impl MarginPairPool {
    pub fn sample<F>(score: F, gen: &GenerativeModel, n_pairs: usize, seed: u64) -> Result<Self>
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> Result<f64> + Sync,
    {
        if n_pairs < 100 {
            return Err(Error::arg("n_pairs", format!("need at least 100, got {n_pairs}")));
        }
        let pair_seed = derive_seed(seed, "alpha-pairs");
        let rows = par::try_map_indexed(n_pairs, |i| {
            let mut rng = SampleRng::substream(pair_seed, i as u64);
            let a = gen.sample_pair(&mut rng);
            let b = gen.sample_pair(&mut rng);
            let pos = score(&a.x, &a.y)?;
            Ok::<_, Error>((
                pos - score(&a.x, &b.y)?,
                pos - score(&b.x, &a.y)?,
                a.latent_index == b.latent_index,
            ))
        })?;
        Ok(Self {
            text_side: rows.iter().map(|r| r.0).collect(),
            image_side: rows.iter().map(|r| r.1).collect(),
            same_latent: rows.iter().map(|r| r.2).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.same_latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.same_latent.is_empty()
    }

    pub fn same_latent_fraction(&self) -> f64 {
        self.same_latent.iter().filter(|&&s| s).count() as f64 / self.len() as f64
    }

    pub fn point(&self, gamma: f64) -> AlphaPoint {
        let n = self.len() as f64;
        let mut sums = [0.0; 3];
        let mut squares = [0.0; 3];
        for i in 0..self.len() {
            let v = f64::from(u8::from(self.text_side[i] <= gamma))
                + f64::from(u8::from(self.image_side[i] <= gamma));
            let (exact, gap) = if self.same_latent[i] { (0.0, v) } else { (v, 0.0) };
            for (k, val) in [v, exact, gap].into_iter().enumerate() {
                sums[k] += val;
                squares[k] += val * val;
            }
        }
        let se = |k: usize| {
            let m = sums[k] / n;
            ((squares[k] / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt()
        };
        AlphaPoint {
            gamma,
            alpha_hat: sums[0] / n,
            alpha_exact: sums[1] / n,
            se_hat: se(0),
            se_exact: se(1),
            se_gap: se(2),
        }
    }

    pub fn curve(&self, grid: &[f64]) -> Vec<AlphaPoint> {
        grid.iter().map(|&g| self.point(g)).collect()
    }
}

/// 41 evenly spaced thresholds on `[0, 1.2]`.
pub fn default_gamma_grid() -> Vec<f64> {
    (0..41).map(|i| 1.2 * i as f64 / 40.0).collect()
}

/// `(γ, α̂_γ)` over a grid.
pub fn alpha_hat<F>(score: F, gen: &GenerativeModel, n_pairs: usize, grid: &[f64], seed: u64) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<f64> + Sync,
{
    let pool = MarginPairPool::sample(score, gen, n_pairs, seed)?;
    Ok(pool.curve(grid).into_iter().map(|p| (p.gamma, p.alpha_hat)).collect())
}

/// `(γ, α_γ)` over a grid; needs the latent labels of the samples.
pub fn alpha_exact<F>(score: F, gen: &GenerativeModel, n_pairs: usize, grid: &[f64], seed: u64) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> Result<f64> + Sync,
{
    let pool = MarginPairPool::sample(score, gen, n_pairs, seed)?;
    Ok(pool.curve(grid).into_iter().map(|p| (p.gamma, p.alpha_exact)).collect())
}
