//! Closed forms for the positive-count term `E[log #{t : z_t = z_1}]`.

/// `E[log #{t ≤ B : z_t = z_1}]` for i.i.d. latents with the given class
/// probabilities. Given `z_1 = k` the count is `1 + Binomial(B − 1, p_k)`.
pub fn expected_log_positive_count(probs: &[f64], batch_size: usize) -> f64 {
    let n = batch_size.saturating_sub(1);
    probs
        .iter()
        .map(|&p| {
            // Binomial pmf by the multiplicative recurrence.
            let q = 1.0 - p;
            if q <= 0.0 {
                return p * (1.0 + n as f64).ln();
            }
            let mut pmf = q.powi(n as i32);
            let mut acc = 0.0;
            for m in 0..=n {
                acc += pmf * (1.0 + m as f64).ln();
                if m < n {
                    pmf *= (n - m) as f64 / (m + 1) as f64 * p / q;
                }
            }
            p * acc
        })
        .sum()
}

/// Upper bound on the population contrastive loss of the completeness
/// weights when unique features vanish:
/// `2·E[log #{t : z_t = z_1}] + 2B·exp(−γ/τ)`.
pub fn positive_count_bound(probs: &[f64], batch_size: usize, gamma: f64, tau: f64) -> f64 {
    2.0 * expected_log_positive_count(probs, batch_size)
        + 2.0 * batch_size as f64 * (-gamma / tau).exp()
}
