use nalgebra::DMatrix;

use crate::data::BatchData;
use crate::error::{Error, Result};
use crate::loss::{log_sum_exp, regularized_loss_from_scores, RegKind};
use crate::score::{LinearScoreModel, Similarity};

/// Gradient of the regularized contrastive loss on one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipGradient {
    /// `∂L/∂W`, `d2 × d1`.
    pub w: DMatrix<f64>,
    /// `∂L/∂log τ`; the regularizers do not depend on `τ`.
    pub log_tau: f64,
    /// Loss value at the evaluation point.
    pub loss: f64,
}

/// `∂L/∂S` for `S[i][j] = f(x_i, y_j)` together with the loss and
/// `∂L/∂log τ`.
pub fn score_gradient(
    s: &DMatrix<f64>,
    tau: f64,
    lambda: f64,
    kind: RegKind,
) -> Result<(DMatrix<f64>, f64, f64)> {
    let loss = regularized_loss_from_scores(s, tau, lambda, kind)?.value;
    let b = s.nrows();
    let scale = 1.0 / (b as f64 * tau);
    let mut c = DMatrix::zeros(b, b);
    for i in 0..b {
        // Image i against every text (row) and text i against every image
        // (column); both softmaxes are shift invariant, so the diagonal
        // offset is irrelevant here.
        let row = log_sum_exp((0..b).map(|j| s[(i, j)] / tau));
        let col = log_sum_exp((0..b).map(|j| s[(j, i)] / tau));
        for j in 0..b {
            c[(i, j)] += scale * (s[(i, j)] / tau - row).exp();
            c[(j, i)] += scale * (s[(j, i)] / tau - col).exp();
        }
        c[(i, i)] -= 2.0 * scale;
    }
    // L depends on τ only through S/τ.
    let log_tau = -c.component_mul(s).sum();
    if lambda > 0.0 {
        match kind {
            RegKind::None => {}
            RegKind::Positive => {
                for i in 0..b {
                    c[(i, i)] -= lambda / b as f64;
                }
            }
            RegKind::Negative => {
                for i in 0..b {
                    for j in 0..b {
                        if i != j {
                            c[(i, j)] += lambda;
                        }
                    }
                }
            }
        }
    }
    Ok((c, log_tau, loss))
}

/// Gradient from image rows `x` (`B × d1`) and text rows `y` (`B × d2`).
pub fn gradient_from_matrices(
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    tau: f64,
    lambda: f64,
    kind: RegKind,
) -> Result<ClipGradient> {
    let s = (x * w.transpose()) * y.transpose();
    let (c, log_tau, loss) = score_gradient(&s, tau, lambda, kind)?;
    // ∂S[i][j]/∂W = y_j x_iᵀ, so ∇W = Σ C[i][j] y_j x_iᵀ = Yᵀ Cᵀ X.
    Ok(ClipGradient {
        w: y.transpose() * c.transpose() * x,
        log_tau,
        loss,
    })
}

/// Analytic gradient of the regularized contrastive loss for an
/// inner-product model.
pub fn clip_gradient(
    model: &LinearScoreModel,
    batch: &BatchData,
    lambda: f64,
    kind: RegKind,
) -> Result<ClipGradient> {
    if model.similarity_kind() != Similarity::Inner {
        return Err(Error::UnsupportedSimilarity(model.similarity_kind().name()));
    }
    gradient_from_matrices(
        model.w(),
        &batch.x_matrix(),
        &batch.y_matrix(),
        model.tau(),
        lambda,
        kind,
    )
}

/// Entrywise central differences of `objective` at `w`.
pub fn finite_diff_gradient<F>(objective: F, w: &DMatrix<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: Fn(&DMatrix<f64>) -> f64,
{
    if !(1e-8..=1e-3).contains(&step) {
        return Err(Error::arg("step_h", format!("must lie in [1e-8, 1e-3], got {step}")));
    }
    let mut probe = w.clone();
    let mut grad = DMatrix::zeros(w.nrows(), w.ncols());
    for i in 0..w.nrows() {
        for j in 0..w.ncols() {
            let orig = probe[(i, j)];
            probe[(i, j)] = orig + step;
            let up = objective(&probe);
            probe[(i, j)] = orig - step;
            let down = objective(&probe);
            probe[(i, j)] = orig;
            grad[(i, j)] = (up - down) / (2.0 * step);
        }
    }
    Ok(grad)
}
