//! Beta-Bernoulli likelihood and the uncertainty regularizer.

use statrs::function::beta::ln_beta;
use statrs::function::gamma::digamma;

use super::quadrature::QuadratureTable;
use crate::error::{Error, Result};

/// `P(z | α, β)` by conjugacy: `α/(α+β)` for `z = 1`, `β/(α+β)` for `z = 0`.
pub fn closed_form_marginal(alpha: f64, beta: f64, z: f64) -> f64 {
    (z * alpha + (1.0 - z) * beta) / (alpha + beta)
}

/// Value and partial derivatives `(f, ∂f/∂α, ∂f/∂β)`.
pub type WithGrad = (f64, f64, f64);

fn quadrature_nll(alpha: f64, beta: f64, z: f64, table: &QuadratureTable) -> Option<WithGrad> {
    // I(π) = π^a (1−π)^b / B(α, β)
    let a = alpha - 1.0 + z;
    let b = beta - 1.0 + (1.0 - z);
    let log_norm = ln_beta(alpha, beta);
    let psi_sum = digamma(alpha + beta);
    let (psi_a, psi_b) = (digamma(alpha), digamma(beta));

    let mut terms: Vec<(f64, f64, f64)> = Vec::with_capacity(2 * table.nodes.len());
    for (&p, &w) in table.nodes.iter().zip(&table.weights) {
        for pi in [p, 1.0 - p] {
            if w == 0.0 {
                continue;
            }
            let (lp, lq) = (pi.ln(), (1.0 - pi).ln());
            let part = |e: f64, l: f64| if e == 0.0 { 0.0 } else { e * l };
            let log_i = part(a, lp) + part(b, lq) - log_norm;
            if log_i == f64::NEG_INFINITY {
                continue;
            }
            // d log I / dα, with the endpoint convention that a vanishing
            // log factor contributes nothing
            let da = if pi == 0.0 { 0.0 } else { lp } - psi_a + psi_sum;
            let db = if pi == 1.0 { 0.0 } else { lq } - psi_b + psi_sum;
            terms.push((w.ln() + log_i, da, db));
        }
    }
    let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return None;
    }
    let (mut s, mut sa, mut sb) = (0.0, 0.0, 0.0);
    for (l, da, db) in terms {
        let e = (l - top).exp();
        s += e;
        sa += e * da;
        sb += e * db;
    }
    if s <= 0.0 || !s.is_finite() {
        return None;
    }
    Some((-(top + s.ln()), -sa / s, -sb / s))
}

/// `−log ∫₀¹ Beta(π; α, β) π^z (1−π)^(1−z) dπ` by quadrature, with gradients.
///
/// Retries at doubled order (up to 512) if the quadrature sum degenerates.
pub fn beta_bernoulli_nll(
    alpha: f64,
    beta: f64,
    z: f64,
    table: &QuadratureTable,
) -> Result<WithGrad> {
    if let Some(v) = quadrature_nll(alpha, beta, z, table) {
        return Ok(v);
    }
    let mut next = table.refined();
    while let Some(t) = next {
        if let Some(v) = quadrature_nll(alpha, beta, z, &t) {
            return Ok(v);
        }
        next = t.refined();
    }
    Err(Error::NonFiniteValue {
        op: format!("beta_bernoulli_nll(α={alpha}, β={beta})"),
    })
}

/// `((1−z)α + zβ)/(α+β) · (α − 1 + β − 1 + ln B(α, β))` with gradients.
pub fn regularizer(alpha: f64, beta: f64, z: f64) -> WithGrad {
    let s = alpha + beta;
    let f = ((1.0 - z) * alpha + z * beta) / s;
    // a KL divergence, so never below zero; only rounding near α = β = 1
    // can push the sum negative
    let g = (alpha - 1.0 + beta - 1.0 + ln_beta(alpha, beta)).max(0.0);
    let df_da = (1.0 - 2.0 * z) * beta / (s * s);
    let df_db = (2.0 * z - 1.0) * alpha / (s * s);
    let psi_s = digamma(s);
    let dg_da = 1.0 + digamma(alpha) - psi_s;
    let dg_db = 1.0 + digamma(beta) - psi_s;
    (f * g, df_da * g + f * dg_da, df_db * g + f * dg_db)
}
