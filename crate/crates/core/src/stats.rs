//! Small distribution helpers: chi-square with two degrees of freedom and
//! the one-sample Kolmogorov–Smirnov test.

/// CDF of the chi-square distribution with two degrees of freedom.
pub fn chi2_2_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        -(-x / 2.0).exp_m1()
    }
}

/// Quantile of the chi-square distribution with two degrees of freedom.
pub fn chi2_2_quantile(p: f64) -> f64 {
    -2.0 * (-p).ln_1p()
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `sample` and the continuous `cdf`.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let fx = cdf(x);
            let upper = (i + 1) as f64 / n - fx;
            let lower = fx - i as f64 / n;
            upper.max(lower)
        })
        .fold(0.0, f64::max)
}

/// Survival function of the Kolmogorov distribution,
/// `Q(λ) = 2 Σ_{j≥1} (-1)^{j-1} exp(-2 j² λ²)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed series converges fast for small λ.
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let s: f64 = (0..20).map(|j| y.powi((2 * j + 1) * (2 * j + 1))).sum();
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * s;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value of the KS test with the usual small-sample
/// correction `λ = (√n + 0.12 + 0.11/√n)·D`.
pub fn ks_pvalue(statistic: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_survival((sn + 0.12 + 0.11 / sn) * statistic)
}
