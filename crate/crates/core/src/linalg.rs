//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Rank decisions use this threshold on the smallest singular value.
pub const RANK_TOL: f64 = 1e-10;

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DVector::zeros(0);
    }
    m.clone().svd(false, false).singular_values
}

/// Operator 2-norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    singular_values(m).iter().copied().fold(0.0, f64::max)
}

pub fn min_singular_value(m: &DMatrix<f64>) -> f64 {
    singular_values(m)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Errors unless `m` has full column rank.
pub fn check_full_column_rank(m: &DMatrix<f64>, name: &'static str) -> Result<()> {
    if m.ncols() == 0 {
        return Ok(());
    }
    if m.nrows() < m.ncols() {
        return Err(Error::RankDeficient {
            name,
            sigma_min: 0.0,
            tol: RANK_TOL,
        });
    }
    let sigma_min = min_singular_value(m);
    if !(sigma_min > RANK_TOL) {
        return Err(Error::RankDeficient {
            name,
            sigma_min,
            tol: RANK_TOL,
        });
    }
    Ok(())
}

/// `(MᵀM)⁻¹Mᵀ` for a full-column-rank `M`, computed from a thin QR
/// factorisation (`M = QR`, so the product is `R⁻¹Qᵀ`) instead of forming the
/// normal equations.
pub fn left_pseudo_inverse(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    check_full_column_rank(m, name)?;
    if m.ncols() == 0 {
        return Ok(DMatrix::zeros(0, m.nrows()));
    }
    let qr = m.clone().qr();
    let q = qr.q();
    let r = qr.r();
    r.solve_upper_triangular(&q.transpose()).ok_or(Error::RankDeficient {
        name,
        sigma_min: 0.0,
        tol: RANK_TOL,
    })
}

/// `d × k` matrix with the identity on its leading `k` rows.
pub fn identity_block(d: usize, k: usize) -> DMatrix<f64> {
    DMatrix::identity(d, k)
}

/// Haar-ish random orthogonal matrix (QR of a Gaussian matrix with the sign
/// of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let a = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Well-conditioned `d × k` dictionary: orthonormal columns from a random
/// rotation, scaled by singular values drawn from `[0.5, 1.5]` and mixed by a
/// second rotation.
pub fn random_well_conditioned<R: Rng + ?Sized>(d: usize, k: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(d >= k, "need d >= k for a full-column-rank dictionary");
    let left = random_orthogonal(d, rng);
    let right = random_orthogonal(k, rng);
    let scales = DVector::from_fn(k, |_, _| 0.5 + rng.random::<f64>());
    let basis = left.columns(0, k).into_owned();
    basis * DMatrix::from_diagonal(&scales) * right
}

/// Stacks two column vectors.
pub fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}
