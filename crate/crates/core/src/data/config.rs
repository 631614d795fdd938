use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{build_latent_dictionary, square_loss_failure_model, GenerativeModel, UniqueFeatureSampler};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::stream;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    CaseStudy,
    /// Square-loss failure construction; only `K` and `gamma` are read.
    SquareLossFailure,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Zero,
    Ball,
    Discrete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportPoint {
    pub vector: Vec<f64>,
    pub prob: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default)]
    pub kind: SamplerKind,
    /// Ball radius; falls back to the model-level `radius`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<SupportPoint>>,
}

/// Serializable description of a generative model.
///
/// ```toml
/// kind = "case_study"
/// K = 8
/// K1 = 9
/// K2 = 4
/// K3 = 4
/// gamma = 0.5
/// radius = 0.5
/// d1 = 16
/// d2 = 16
/// mixing = false
/// seed = 0
/// xi = { kind = "ball" }
/// zeta = { kind = "ball" }
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(rename = "K")]
    pub k: usize,
    /// Defaults to `K + 1`.
    #[serde(rename = "K1", default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<usize>,
    #[serde(rename = "K2", default)]
    pub k2: usize,
    #[serde(rename = "K3", default)]
    pub k3: usize,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
    #[serde(default)]
    pub radius: f64,
    /// Ambient image dimension; defaults to `K1 + K2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d1: Option<usize>,
    /// Ambient text dimension; defaults to `K1 + K3`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d2: Option<usize>,
    /// Replace the identity-block dictionaries by seeded random
    /// well-conditioned ones.
    #[serde(default)]
    pub mixing: bool,
    /// Seed for the mixing matrices.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub xi: SamplerConfig,
    #[serde(default)]
    pub zeta: SamplerConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::CaseStudy,
            k: 8,
            k1: Some(9),
            k2: 4,
            k3: 4,
            gamma: 0.5,
            probs: None,
            radius: 0.5,
            d1: Some(16),
            d2: Some(16),
            mixing: false,
            seed: 0,
            xi: SamplerConfig {
                kind: SamplerKind::Ball,
                ..Default::default()
            },
            zeta: SamplerConfig {
                kind: SamplerKind::Ball,
                ..Default::default()
            },
        }
    }
}

impl ModelConfig {
    pub fn square_loss_failure(k: usize, gamma: f64) -> Self {
        Self {
            kind: ModelKind::SquareLossFailure,
            k,
            k1: None,
            k2: 0,
            k3: 0,
            gamma,
            probs: None,
            radius: 0.0,
            d1: None,
            d2: None,
            mixing: false,
            seed: 0,
            xi: SamplerConfig::default(),
            zeta: SamplerConfig::default(),
        }
    }

    pub fn k1(&self) -> usize {
        self.k1.unwrap_or(self.k + 1)
    }

    /// Every constraint violation, each prefixed by its field path under
    /// `prefix`.
    pub fn violations(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: String| out.push(format!("{prefix}{field}: {msg}"));
        if self.k < 2 {
            bad("K", format!("need at least 2 classes, got {}", self.k));
        }
        match self.kind {
            ModelKind::SquareLossFailure => {
                if !(self.gamma > 0.0 && self.gamma < 1.0 / 3.0) {
                    bad(
                        "gamma",
                        format!(
                            "the square-loss failure construction needs 0 < gamma < 1/3 so that two \
                             latents have inner product above 2/3, got {}",
                            self.gamma
                        ),
                    );
                }
                return out;
            }
            ModelKind::CaseStudy => {}
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            bad("gamma", format!("must lie in (0, 1], got {}", self.gamma));
        }
        let k1 = self.k1();
        if k1 < self.k + 1 {
            bad("K1", format!("must be at least K + 1 = {}, got {k1}", self.k + 1));
        }
        if let Some(p) = &self.probs {
            if let Err(e) = super::validate_probs(p, self.k) {
                bad("probs", e.to_string());
            }
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            bad("radius", format!("must be finite and nonnegative, got {}", self.radius));
        }
        if let Some(d1) = self.d1 {
            if d1 < k1 + self.k2 {
                bad("d1", format!("must be at least K1 + K2 = {}, got {d1}", k1 + self.k2));
            }
        }
        if let Some(d2) = self.d2 {
            if d2 < k1 + self.k3 {
                bad("d2", format!("must be at least K1 + K3 = {}, got {d2}", k1 + self.k3));
            }
        }
        for (name, s, dim) in [("xi", &self.xi, self.k2), ("zeta", &self.zeta, self.k3)] {
            if let Some(r) = s.radius {
                if !(r.is_finite() && r >= 0.0) {
                    bad(&format!("{name}.radius"), format!("must be finite and nonnegative, got {r}"));
                }
            }
            match s.kind {
                SamplerKind::Discrete => match &s.support {
                    None => bad(&format!("{name}.support"), "required for the discrete kind".into()),
                    Some(pts) => {
                        if pts.iter().any(|p| p.vector.len() != dim) {
                            bad(
                                &format!("{name}.support"),
                                format!("every support vector must have length {dim}"),
                            );
                        }
                        let probs: Vec<f64> = pts.iter().map(|p| p.prob).collect();
                        if let Err(e) = super::validate_probs(&probs, probs.len()) {
                            bad(&format!("{name}.support"), e.to_string());
                        }
                    }
                },
                _ => {
                    if s.support.is_some() {
                        bad(&format!("{name}.support"), "only allowed for the discrete kind".into());
                    }
                }
            }
        }
        out
    }

    fn sampler(&self, s: &SamplerConfig, dim: usize) -> Result<UniqueFeatureSampler> {
        match s.kind {
            SamplerKind::Zero => Ok(UniqueFeatureSampler::zero(dim)),
            SamplerKind::Ball => UniqueFeatureSampler::ball(dim, s.radius.unwrap_or(self.radius)),
            SamplerKind::Discrete => {
                let pts = s
                    .support
                    .as_ref()
                    .ok_or_else(|| Error::arg("support", "required for the discrete kind"))?;
                UniqueFeatureSampler::discrete(
                    pts.iter()
                        .map(|p| (DVector::from_vec(p.vector.clone()), p.prob))
                        .collect(),
                )
            }
        }
    }

    fn dictionary(&self, d: usize, k: usize, tag: &str) -> DMatrix<f64> {
        if self.mixing {
            linalg::random_well_conditioned(d, k, &mut stream(self.seed, tag, 0))
        } else {
            linalg::identity_block(d, k)
        }
    }

    pub fn build(&self) -> Result<GenerativeModel> {
        let problems = self.violations("");
        if let Some(first) = problems.into_iter().next() {
            if self.kind == ModelKind::SquareLossFailure {
                return Err(Error::InvalidMargin {
                    gamma: self.gamma,
                    reason: "the square-loss failure construction needs 0 < gamma < 1/3",
                });
            }
            return Err(Error::arg("model", first));
        }
        if self.kind == ModelKind::SquareLossFailure {
            return square_loss_failure_model(self.k, self.gamma);
        }
        let k1 = self.k1();
        let latent = build_latent_dictionary(self.k, k1, self.gamma, self.probs.as_deref())?;
        let xi = self.sampler(&self.xi, self.k2)?;
        let zeta = self.sampler(&self.zeta, self.k3)?;
        let d1 = self.d1.unwrap_or(k1 + self.k2);
        let d2 = self.d2.unwrap_or(k1 + self.k3);
        let g = self.dictionary(d1, k1 + self.k2, "dictionary-G");
        let h = self.dictionary(d2, k1 + self.k3, "dictionary-H");
        GenerativeModel::new(latent, g, h, xi, zeta)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format {
            path: "<model config>".into(),
            reason: e.to_string(),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            path: "<model config>".into(),
            reason: e.to_string(),
        })
    }
}
