use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Distribution of a modality-specific unique feature vector.
#[derive(Clone, Debug)]
pub enum UniqueFeatureSampler {
    /// Always the zero vector.
    Zero { dim: usize },
    /// Uniform on the closed Euclidean ball of the given radius.
    Ball { dim: usize, radius: f64 },
    /// Finite support with probabilities.
    Discrete {
        support: Vec<DVector<f64>>,
        probs: Vec<f64>,
        dist: WeightedIndex<f64>,
    },
}

impl PartialEq for UniqueFeatureSampler {
    fn eq(&self, other: &Self) -> bool {
        use UniqueFeatureSampler::*;
        match (self, other) {
            (Zero { dim: a }, Zero { dim: b }) => a == b,
            (Ball { dim: a, radius: r }, Ball { dim: b, radius: s }) => a == b && r == s,
            (
                Discrete { support: a, probs: p, .. },
                Discrete { support: b, probs: q, .. },
            ) => a == b && p == q,
            _ => false,
        }
    }
}

impl UniqueFeatureSampler {
    pub fn zero(dim: usize) -> Self {
        Self::Zero { dim }
    }

    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(Error::arg("radius", format!("must be finite and nonnegative, got {radius}")));
        }
        Ok(Self::Ball { dim, radius })
    }

    pub fn discrete(support: Vec<(DVector<f64>, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidProbabilities("empty support".into()));
        }
        let dim = support[0].0.len();
        if support.iter().any(|(v, _)| v.len() != dim) {
            return Err(Error::DimensionMismatch(
                "support vectors differ in length".into(),
            ));
        }
        if support.iter().any(|(v, _)| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::arg("support", "non-finite coordinate"));
        }
        let raw: Vec<f64> = support.iter().map(|(_, p)| *p).collect();
        let probs = crate::data::validate_probs(&raw, raw.len())?;
        let dist = WeightedIndex::new(probs.iter().copied())
            .map_err(|e| Error::InvalidProbabilities(e.to_string()))?;
        Ok(Self::Discrete {
            support: support.into_iter().map(|(v, _)| v).collect(),
            probs,
            dist,
        })
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Zero { .. } => "zero",
            Self::Ball { .. } => "ball",
            Self::Discrete { .. } => "discrete",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Zero { dim } | Self::Ball { dim, .. } => *dim,
            Self::Discrete { support, .. } => support[0].len(),
        }
    }

    /// Norm bound `R` satisfied by every sample.
    pub fn radius(&self) -> f64 {
        match self {
            Self::Zero { .. } => 0.0,
            Self::Ball { radius, .. } => *radius,
            Self::Discrete { support, .. } => {
                support.iter().map(|v| v.norm()).fold(0.0, f64::max)
            }
        }
    }

    /// `E[ζ | z]`. The samplers do not depend on the latent, so this is the
    /// unconditional mean for every class.
    pub fn conditional_mean(&self, _latent: usize) -> DVector<f64> {
        match self {
            Self::Zero { dim } | Self::Ball { dim, .. } => DVector::zeros(*dim),
            Self::Discrete { support, probs, .. } => {
                let mut m = DVector::zeros(support[0].len());
                for (v, p) in support.iter().zip(probs) {
                    m.axpy(*p, v, 1.0);
                }
                m
            }
        }
    }

    /// Copy of a ball sampler with its radius multiplied by `factor`; other
    /// kinds are returned unchanged.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match self {
            Self::Ball { dim, radius } => Self::ball(*dim, radius * factor),
            other => Ok(other.clone()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self {
            Self::Zero { dim } => DVector::zeros(*dim),
            Self::Ball { dim, radius } => sample_ball(*dim, *radius, rng),
            Self::Discrete { support, dist, .. } => support[dist.sample(rng)].clone(),
        }
    }
}

fn sample_ball<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    if dim == 0 {
        return DVector::zeros(0);
    }
    let dir = loop {
        let g = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = g.norm();
        if n > 1e-300 {
            break g / n;
        }
    };
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    // Guard against rounding pushing the norm past the bound.
    let v = dir * r;
    let n = v.norm();
    if n > radius {
        v * (radius / n)
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn ball_samples_respect_radius() {
        let s = UniqueFeatureSampler::ball(5, 0.7).unwrap();
        let mut rng = stream(1, "t", 0);
        for _ in 0..5000 {
            assert!(s.sample(&mut rng).norm() <= 0.7);
        }
    }

    #[test]
    fn ball_second_moment() {
        // E‖ξ‖² = d R² / (d + 2) for the uniform ball.
        let (d, r) = (4usize, 1.5);
        let s = UniqueFeatureSampler::ball(d, r).unwrap();
        let mut rng = stream(2, "t", 0);
        let n = 40_000;
        let m: f64 = (0..n).map(|_| s.sample(&mut rng).norm_squared()).sum::<f64>() / n as f64;
        let want = d as f64 * r * r / (d as f64 + 2.0);
        assert!((m - want).abs() < 0.02, "{m} vs {want}");
    }

    #[test]
    fn discrete_mean_and_radius() {
        let s = UniqueFeatureSampler::discrete(vec![
            (DVector::from_vec(vec![1.0, 0.0]), 0.25),
            (DVector::from_vec(vec![0.0, 2.0]), 0.75),
        ])
        .unwrap();
        assert_eq!(s.radius(), 2.0);
        let m = s.conditional_mean(0);
        assert!((m[0] - 0.25).abs() < 1e-15 && (m[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn discrete_rejects_bad_probs() {
        let r = UniqueFeatureSampler::discrete(vec![
            (DVector::from_vec(vec![1.0]), 0.3),
            (DVector::from_vec(vec![0.0]), 0.3),
        ]);
        assert!(matches!(r, Err(Error::InvalidProbabilities(_))));
    }

    #[test]
    fn zero_dim_ball() {
        let s = UniqueFeatureSampler::ball(0, 1.0).unwrap();
        assert_eq!(s.sample(&mut stream(0, "t", 0)).len(), 0);
    }
}
