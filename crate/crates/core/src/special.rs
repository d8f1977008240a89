//! Log-space special functions: log-Gamma, multivariate log-Beta and
//! log multinomial coefficients.

/// Natural logarithm of the Gamma function for `x > 0`.
#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma: non-positive argument {x}");
    libm::lgamma(x)
}

/// `ln B(a) = Σ ln Γ(a_i) − ln Γ(Σ a_i)`.
pub fn ln_beta(a: &[f64]) -> f64 {
    let total: f64 = a.iter().sum();
    a.iter().map(|&ai| ln_gamma(ai)).sum::<f64>() - ln_gamma(total)
}

/// `ln n!`.
#[inline]
pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Log of the multinomial coefficient `‖n‖! / Π n_i!`.
pub fn log_multinomial(counts: &[u32]) -> f64 {
    let total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    ln_factorial(total) - counts.iter().map(|&c| ln_factorial(u64::from(c))).sum::<f64>()
}

/// `log(Σ exp(v_i))` without overflow. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
