//! Linear score functions `f(x, y) = sim(Wx, y)` with the text side locked
//! to the identity, the closed-form completeness weights and the square-loss
//! Bayes encoder.

mod encoder;
mod io;

pub use encoder::{BayesSquareEncoder, EncoderScorer};
pub use io::{read_weights_bin, read_weights_csv, write_weights_bin, write_weights_csv, WEIGHTS_MAGIC};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{BatchData, GenerativeModel};
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Inner,
    Cosine,
    NegativeL2,
}

impl Similarity {
    pub const ALL: [Similarity; 3] = [Similarity::Inner, Similarity::Cosine, Similarity::NegativeL2];

    pub fn name(self) -> &'static str {
        match self {
            Similarity::Inner => "inner",
            Similarity::Cosine => "cosine",
            Similarity::NegativeL2 => "negative_l2",
        }
    }

    /// Similarity between an image embedding `g` and a text embedding `h`.
    pub fn apply(self, g: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
        if g.len() != h.len() {
            return Err(Error::DimensionMismatch(format!(
                "embeddings of length {} and {}",
                g.len(),
                h.len()
            )));
        }
        let s = match self {
            Similarity::Inner => g.dot(h),
            Similarity::Cosine => {
                let (ng, nh) = (g.norm(), h.norm());
                if ng == 0.0 || nh == 0.0 {
                    return Err(Error::DegenerateInput(
                        "cosine similarity of a zero-norm embedding".into(),
                    ));
                }
                g.dot(h) / (ng * nh)
            }
            Similarity::NegativeL2 => -(g - h).norm(),
        };
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::NonFiniteScore(s))
        }
    }
}

/// Anything that can embed images and compare them to raw text vectors.
pub trait Scorer: Sync {
    fn embed_image(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    fn similarity(&self) -> Similarity;

    fn score(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.similarity().apply(&self.embed_image(x)?, y)
    }
}

/// The pair of embeddings `(g(x), h(y)) = (Wx, y)`, unit-normalized for the
/// cosine similarity.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingPairView {
    pub g_of_x: DVector<f64>,
    pub h_of_y: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearScoreModel {
    w: DMatrix<f64>,
    tau: f64,
    similarity: Similarity,
}

impl LinearScoreModel {
    pub fn new(w: DMatrix<f64>, tau: f64, similarity: Similarity) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::arg("tau", format!("must be positive and finite, got {tau}")));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("W", "contains non-finite entries"));
        }
        Ok(Self { w, tau, similarity })
    }

    /// Inner-product model.
    pub fn inner(w: DMatrix<f64>, tau: f64) -> Result<Self> {
        Self::new(w, tau, Similarity::Inner)
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn similarity_kind(&self) -> Similarity {
        self.similarity
    }

    /// Image dimension.
    pub fn d1(&self) -> usize {
        self.w.ncols()
    }

    /// Text (and embedding) dimension.
    pub fn d2(&self) -> usize {
        self.w.nrows()
    }

    pub fn with_similarity(&self, similarity: Similarity) -> Self {
        Self {
            similarity,
            ..self.clone()
        }
    }

    pub fn with_tau(&self, tau: f64) -> Result<Self> {
        Self::new(self.w.clone(), tau, self.similarity)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(&self.w * c, self.tau, self.similarity)
    }

    fn check_dims(&self, x: &DVector<f64>, y: Option<&DVector<f64>>) -> Result<()> {
        if x.len() != self.d1() || y.is_some_and(|y| y.len() != self.d2()) {
            return Err(Error::DimensionMismatch(format!(
                "W is {}x{}, got x of length {} and y of length {}",
                self.d2(),
                self.d1(),
                x.len(),
                y.map_or(self.d2(), |y| y.len())
            )));
        }
        Ok(())
    }

    pub fn view(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<EmbeddingPairView> {
        self.check_dims(x, Some(y))?;
        let g = &self.w * x;
        if self.similarity == Similarity::Cosine {
            let (ng, nh) = (g.norm(), y.norm());
            if ng == 0.0 || nh == 0.0 {
                return Err(Error::DegenerateInput(
                    "cosine similarity of a zero-norm embedding".into(),
                ));
            }
            return Ok(EmbeddingPairView {
                g_of_x: g / ng,
                h_of_y: y / nh,
            });
        }
        Ok(EmbeddingPairView {
            g_of_x: g,
            h_of_y: y.clone(),
        })
    }

    /// `S[i][j] = f(x_i, y_j)` over a batch.
    pub fn score_matrix(&self, batch: &BatchData) -> Result<DMatrix<f64>> {
        let x = batch.x_matrix();
        let y = batch.y_matrix();
        if x.ncols() != self.d1() || y.ncols() != self.d2() {
            return Err(Error::DimensionMismatch(format!(
                "W is {}x{}, batch has d1 = {} and d2 = {}",
                self.d2(),
                self.d1(),
                x.ncols(),
                y.ncols()
            )));
        }
        let s = match self.similarity {
            Similarity::Inner => (&x * self.w.transpose()) * y.transpose(),
            _ => {
                let g = &x * self.w.transpose();
                let b = batch.batch_size();
                let mut s = DMatrix::zeros(b, b);
                for i in 0..b {
                    let gi = g.row(i).transpose();
                    for j in 0..b {
                        s[(i, j)] = self.similarity.apply(&gi, &y.row(j).transpose())?;
                    }
                }
                s
            }
        };
        if let Some(v) = s.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFiniteScore(*v));
        }
        Ok(s)
    }
}

impl Scorer for LinearScoreModel {
    fn embed_image(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_dims(x, None)?;
        Ok(&self.w * x)
    }

    fn similarity(&self) -> Similarity {
        self.similarity
    }

    fn score(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        self.check_dims(x, Some(y))?;
        self.similarity.apply(&(&self.w * x), y)
    }
}

/// `W* = H(HᵀH)⁻¹ P (GᵀG)⁻¹ Gᵀ`, where `P` keeps the shared coordinates.
/// Satisfies `Hᵀ W* G = P`, so `⟨W*x, y⟩ = ⟨z, z'⟩`.
pub fn completeness_weights(model: &GenerativeModel) -> Result<DMatrix<f64>> {
    let g_plus = linalg::left_pseudo_inverse(model.g(), "G")?;
    let h_plus = linalg::left_pseudo_inverse(model.h(), "H")?;
    Ok(h_plus.transpose() * shared_projection(model) * g_plus)
}

/// Shared-coordinate projection `P`, `(K1+K3) × (K1+K2)`.
pub fn shared_projection(model: &GenerativeModel) -> DMatrix<f64> {
    let k1 = model.k1();
    DMatrix::from_fn(k1 + model.k3(), k1 + model.k2(), |i, j| {
        if i == j && i < k1 {
            1.0
        } else {
            0.0
        }
    })
}
