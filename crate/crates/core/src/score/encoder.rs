use nalgebra::{DMatrix, DVector};

use super::{Scorer, Similarity};
use crate::data::{GenerativeModel, LatentDictionary};
use crate::error::{Error, Result};
use crate::linalg::{self, concat};

/// Minimizer of `E‖g(x) − y‖²`: recover `[z; ξ] = G⁺x`, identify the latent
/// and return `H·[z; E[ζ | z]]`.
#[derive(Clone, Debug)]
pub struct BayesSquareEncoder {
    g_plus: DMatrix<f64>,
    h: DMatrix<f64>,
    latent: LatentDictionary,
    zeta_means: Vec<DVector<f64>>,
}

impl BayesSquareEncoder {
    pub fn new(model: &GenerativeModel) -> Result<Self> {
        let g_plus = linalg::left_pseudo_inverse(model.g(), "G")?;
        let zeta_means = (0..model.num_classes())
            .map(|k| model.zeta_sampler().conditional_mean(k))
            .collect();
        Ok(Self {
            g_plus,
            h: model.h().clone(),
            latent: model.latent().clone(),
            zeta_means,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.h.nrows()
    }

    /// Recovered latent class of an image.
    pub fn latent_of(&self, x: &DVector<f64>) -> Result<usize> {
        Ok(self.latent.nearest(&self.recover_shared(x)?))
    }

    fn recover_shared(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.g_plus.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "encoder expects images of length {}, got {}",
                self.g_plus.ncols(),
                x.len()
            )));
        }
        let coords = &self.g_plus * x;
        Ok(coords.rows(0, self.latent.dim()).into_owned())
    }

    pub fn encode(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let z = self.recover_shared(x)?;
        let k = self.latent.nearest(&z);
        Ok(&self.h * concat(&z, &self.zeta_means[k]))
    }
}

/// Bayes encoder paired with a similarity, for zero-shot evaluation.
#[derive(Clone, Debug)]
pub struct EncoderScorer {
    pub encoder: BayesSquareEncoder,
    pub similarity: Similarity,
}

impl Scorer for EncoderScorer {
    fn embed_image(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.encoder.encode(x)
    }

    fn similarity(&self) -> Similarity {
        self.similarity
    }
}
