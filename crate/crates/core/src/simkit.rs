//! Simulation harness: Michaelis–Menten breath-alcohol curves, noisy TAC
//! synthesis and Monte-Carlo replication of the estimator's sampling
//! distribution.

use nalgebra::{Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::diffusion::{realize, tac_series, BracCurve, ParamQ, SystemTemplate};
use crate::error::{Error, Result};
use crate::mestim::{covariance, fit, gamma_lebesgue, limiting_sigma, Dataset, FitSettings, Session};
use crate::stats::{chi2_2_cdf, ks_statistic, ks_pvalue};

/// Single-compartment alcohol kinetics: first-order absorption of each
/// dose and saturable (Michaelis–Menten) elimination,
///
/// ```text
/// dC/dt = Σ_d ka·a·p·exp(-ka (t - t_d))·1{t >= t_d} - vmax·C/(km + C)
/// ```
///
/// with `a` the dose in standard drinks and `p` the concentration one fully
/// absorbed drink would add.
#[derive(Debug, Clone, PartialEq)]
pub struct MMParams {
    /// Hours.
    pub dose_times: Vec<f64>,
    /// Standard drinks per dose.
    pub dose_amount: f64,
    /// 1/h.
    pub absorption_rate: f64,
    /// %/h.
    pub vmax: f64,
    /// %.
    pub km: f64,
    /// % per standard drink.
    pub pct_per_drink: f64,
}

impl Default for MMParams {
    fn default() -> Self {
        Self {
            dose_times: vec![0.1],
            dose_amount: 1.0,
            absorption_rate: 6.0,
            vmax: 0.017,
            km: 0.005,
            pct_per_drink: 0.0662,
        }
    }
}

impl MMParams {
    fn validate(&self, horizon: f64) -> Result<()> {
        let rates = [self.absorption_rate, self.vmax, self.km];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidInput(
                "absorption rate, vmax and km must be positive".into(),
            ));
        }
        if !(self.dose_amount >= 0.0 && self.pct_per_drink >= 0.0) {
            return Err(Error::InvalidInput("dose size must be nonnegative".into()));
        }
        if self.dose_times.iter().any(|&t| !(t >= 0.0 && t <= horizon)) {
            return Err(Error::InvalidInput(format!("dose times must lie in [0, {horizon}]")));
        }
        Ok(())
    }

    /// Right-hand side on a sub-step starting at `from`; only doses taken at
    /// or before `from` contribute.
    fn rhs(&self, from: f64, t: f64, c: f64) -> f64 {
        let load = self.dose_amount * self.pct_per_drink * self.absorption_rate;
        let input: f64 = self
            .dose_times
            .iter()
            .filter(|&&td| td <= from)
            .map(|&td| load * (-self.absorption_rate * (t - td)).exp())
            .sum();
        input - self.vmax * c.max(0.0) / (self.km + c.max(0.0))
    }

    fn rk4(&self, t: f64, c: f64, h: f64) -> f64 {
        let k1 = self.rhs(t, t, c);
        let k2 = self.rhs(t, t + h / 2.0, c + h / 2.0 * k1);
        let k3 = self.rhs(t, t + h / 2.0, c + h / 2.0 * k2);
        let k4 = self.rhs(t, t + h, c + h * k3);
        (c + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0)
    }
}

/// Concentration at the `grid + 1` nodes `i·T/grid`, by fixed-step RK4.
/// Steps containing a dose time are split there, so the kink in the input
/// does not cost accuracy.
pub fn mm_profile(params: &MMParams, horizon: f64, grid: usize) -> Result<Vec<f64>> {
    if grid < 10 {
        return Err(Error::InvalidInput(format!("grid must have >= 10 steps, got {grid}")));
    }
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
    }
    params.validate(horizon)?;

    let node = |i: usize| if i == grid { horizon } else { horizon * i as f64 / grid as f64 };
    let mut out = Vec::with_capacity(grid + 1);
    let mut c = 0.0;
    out.push(c);
    for i in 0..grid {
        let (a, b) = (node(i), node(i + 1));
        let mut cuts: Vec<f64> = params.dose_times.iter().copied().filter(|&td| td > a && td < b).collect();
        cuts.sort_by(f64::total_cmp);
        let mut t = a;
        for end in cuts.into_iter().chain(std::iter::once(b)) {
            c = params.rk4(t, c, end - t);
            t = end;
        }
        out.push(c);
    }
    Ok(out)
}

/// Uniform piecewise-constant BrAC curve whose level on each step is the
/// mean of the concentration at the step's two endpoints.
pub fn mm_brac(params: &MMParams, horizon: f64, grid: usize) -> Result<BracCurve> {
    let nodes = mm_profile(params, horizon, grid)?;
    let levels = nodes.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    BracCurve::uniform(horizon, levels)
}

/// Equally spaced observations `t_j = jT/m`, `j = 1..m`, of the model TAC
/// plus iid `N(0, σ²)` noise from a generator seeded with `seed`.
pub fn synthesize(
    template: &SystemTemplate,
    q0: ParamQ,
    mu: &BracCurve,
    m: usize,
    sigma: f64,
    seed: u64,
) -> Result<Session> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one observation".into()));
    }
    let horizon = mu.horizon();
    let times: Vec<f64> =
        (1..=m).map(|j| if j == m { horizon } else { horizon * j as f64 / m as f64 }).collect();
    synthesize_at(template, q0, mu, times, sigma, seed)
}

/// As [`synthesize`], at the given ascending observation times.
pub fn synthesize_at(
    template: &SystemTemplate,
    q0: ParamQ,
    mu: &BracCurve,
    times: Vec<f64>,
    sigma: f64,
    seed: u64,
) -> Result<Session> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("noise scale {sigma} must be >= 0")));
    }
    let mut y = tac_series(&realize(template, q0), mu, &times)?;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut y {
            *v += noise.sample(&mut rng);
        }
    }
    Session::new(times, y, mu.clone())
}

/// Seed of replicate `index` under `master`; a SplitMix64 step keeps
/// neighbouring indices' streams unrelated.
pub fn replicate_seed(master: u64, index: usize) -> u64 {
    let mut z = master.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSettings {
    /// Observations per replicate.
    pub m: usize,
    pub sigma: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Start for every replicate fit; `None` starts at the true `q0`.
    pub init: Option<ParamQ>,
    pub fit: FitSettings,
    /// Nodes of the quadrature for the limiting information matrix.
    pub quadrature_nodes: usize,
    /// Abort when more than this fraction of replicate fits fail.
    pub max_failure_fraction: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            m: 100,
            sigma: 0.01,
            replicates: 100,
            seed: 1,
            init: None,
            fit: FitSettings::default(),
            quadrature_nodes: 10_000,
            max_failure_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRow {
    pub index: usize,
    pub seed: u64,
    pub q_hat: [f64; 2],
    pub sigma2_hat: f64,
    pub converged: bool,
    /// Whether the replicate's own 95% ellipse contains `q0`.
    pub covers_truth: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub m: usize,
    pub replicates: usize,
    pub failures: usize,
    pub q0: [f64; 2],
    pub sigma: f64,
    pub mean_qhat: [f64; 2],
    /// Monte-Carlo standard deviation of each coordinate of `q̂`.
    pub sd_qhat: [f64; 2],
    /// `m ·` sample covariance of `q̂`.
    pub scaled_cov: Matrix2<f64>,
    /// `σ² Γ⁻¹` with `Γ` the limiting information matrix under uniform
    /// sampling.
    pub theoretical_sigma: Matrix2<f64>,
    /// `‖scaled_cov - theoretical_sigma‖_F / ‖theoretical_sigma‖_F`.
    pub frobenius_rel_error: Option<f64>,
    pub mahalanobis_ks_statistic: Option<f64>,
    pub mahalanobis_ks_pvalue: Option<f64>,
    pub mean_sigma2_hat: f64,
    /// Fraction of successful replicates whose 95% ellipse contains `q0`.
    pub coverage: Option<f64>,
    pub rows: Vec<ReplicateRow>,
}

impl McReport {
    /// `‖mean q̂ - q0‖`.
    pub fn bias_norm(&self) -> f64 {
        (self.mean_qhat[0] - self.q0[0]).hypot(self.mean_qhat[1] - self.q0[1])
    }

    /// Standard error of the mean `q̂`, combined over both coordinates.
    pub fn bias_standard_error(&self) -> f64 {
        let n = (self.replicates - self.failures) as f64;
        (self.sd_qhat[0].powi(2) + self.sd_qhat[1].powi(2)).sqrt() / n.sqrt()
    }
}

/// Repeated `synthesize` + `fit` cycles. Replicate `r` draws its noise from
/// [`replicate_seed`]`(seed, r)`; replicates run in parallel and are
/// aggregated in index order.
pub fn monte_carlo(
    template: &SystemTemplate,
    q0: ParamQ,
    mu: &BracCurve,
    settings: &McSettings,
) -> Result<McReport> {
    if settings.replicates < 2 {
        return Err(Error::InvalidInput("need at least two replicates".into()));
    }
    let gamma = gamma_lebesgue(template, q0, mu, settings.quadrature_nodes)?;
    let theoretical = limiting_sigma(settings.sigma, &gamma)?;
    let init = settings.init.unwrap_or(q0);

    let rows: Vec<Result<ReplicateRow>> = (0..settings.replicates)
        .into_par_iter()
        .map(|index| {
            let seed = replicate_seed(settings.seed, index);
            let session = synthesize(template, q0, mu, settings.m, settings.sigma, seed)?;
            let data = Dataset::single(session)?;
            match fit(template, &data, init, &settings.fit) {
                Ok(res) => {
                    let covers = covariance(&res, res.observations)
                        .ok()
                        .map(|c| c.ellipse.contains(q0.to_array()));
                    Ok(ReplicateRow {
                        index,
                        seed,
                        q_hat: res.q_hat.to_array(),
                        sigma2_hat: res.sigma2_hat,
                        converged: res.converged,
                        covers_truth: covers,
                    })
                }
                Err(Error::Identifiability { .. }) | Err(Error::NoConvergence { .. }) => Ok(ReplicateRow {
                    index,
                    seed,
                    q_hat: [f64::NAN; 2],
                    sigma2_hat: f64::NAN,
                    converged: false,
                    covers_truth: None,
                }),
                Err(e) => Err(e),
            }
        })
        .collect();
    let rows: Vec<ReplicateRow> = rows.into_iter().collect::<Result<_>>()?;

    let good: Vec<&ReplicateRow> = rows.iter().filter(|r| r.converged).collect();
    let failures = rows.len() - good.len();
    if failures as f64 > settings.max_failure_fraction * rows.len() as f64 || good.len() < 2 {
        return Err(Error::TooManyFailures { failed: failures, total: rows.len() });
    }

    let n = good.len() as f64;
    let mut mean = Vector2::zeros();
    for r in &good {
        mean += Vector2::from(r.q_hat);
    }
    mean /= n;
    let mut cov = Matrix2::zeros();
    for r in &good {
        let d = Vector2::from(r.q_hat) - mean;
        cov += d * d.transpose();
    }
    cov /= n - 1.0;
    let scaled = cov * settings.m as f64;
    let mean_sigma2 = good.iter().map(|r| r.sigma2_hat).sum::<f64>() / n;

    let theory_norm = theoretical.norm();
    let frob = (theory_norm > 0.0).then(|| (scaled - theoretical).norm() / theory_norm);
    let (ks_stat, ks_p) = match theoretical.try_inverse() {
        Some(precision) if theory_norm > 0.0 => {
            let q0v = Vector2::from(q0.to_array());
            let distances: Vec<f64> = good
                .iter()
                .map(|r| {
                    let d = Vector2::from(r.q_hat) - q0v;
                    settings.m as f64 * d.dot(&(precision * d))
                })
                .collect();
            let stat = ks_statistic(&distances, chi2_2_cdf);
            (Some(stat), Some(ks_pvalue(stat, distances.len())))
        }
        _ => (None, None),
    };
    let covered: Vec<bool> = good.iter().filter_map(|r| r.covers_truth).collect();
    let coverage = (!covered.is_empty())
        .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64);

    Ok(McReport {
        m: settings.m,
        replicates: settings.replicates,
        failures,
        q0: q0.to_array(),
        sigma: settings.sigma,
        mean_qhat: [mean[0], mean[1]],
        sd_qhat: [cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt()],
        scaled_cov: scaled,
        theoretical_sigma: theoretical,
        frobenius_rel_error: frob,
        mahalanobis_ks_statistic: ks_stat,
        mahalanobis_ks_pvalue: ks_p,
        mean_sigma2_hat: mean_sigma2,
        coverage,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(q1: f64, q2: f64) -> ParamQ {
        ParamQ::new(q1, q2).unwrap()
    }

    #[test]
    fn no_doses_gives_zero_curve() {
        let p = MMParams { dose_times: vec![], ..Default::default() };
        assert!(mm_brac(&p, 1.0, 300).unwrap().is_zero());
    }

    #[test]
    fn single_dose_shape() {
        let p = MMParams::default();
        let nodes = mm_profile(&p, 1.0, 300).unwrap();
        let curve = mm_brac(&p, 1.0, 300).unwrap();
        for i in 0..curve.segment_count() {
            let (_, end, level) = curve.segment(i);
            if end <= 0.1 + 1e-12 {
                assert_eq!(level, 0.0);
            }
        }
        let peak = nodes.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(peak > 30 && peak < 300);
        assert!(nodes[31..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(nodes[peak..].windows(2).all(|w| w[1] <= w[0]));
        assert!(nodes[300] < nodes[peak]);
        assert!(nodes[peak] < 0.08);
    }

    #[test]
    fn step_refinement() {
        let p = MMParams::default();
        let coarse = mm_profile(&p, 1.0, 300).unwrap();
        let fine = mm_profile(&p, 1.0, 600).unwrap();
        let sup = coarse
            .iter()
            .enumerate()
            .map(|(i, c)| (c - fine[2 * i]).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 1e-6, "sup = {sup}");
    }

    #[test]
    fn invalid_parameters() {
        let p = MMParams { vmax: -1.0, ..Default::default() };
        assert!(mm_brac(&p, 1.0, 100).is_err());
        assert!(mm_brac(&MMParams::default(), 1.0, 5).is_err());
        let late = MMParams { dose_times: vec![2.0], ..Default::default() };
        assert!(mm_brac(&late, 1.0, 100).is_err());
    }

    #[test]
    fn synthesis_is_deterministic_and_exact_without_noise() {
        let t = SystemTemplate::minimal();
        let mu = mm_brac(&MMParams::default(), 1.0, 300).unwrap();
        let clean = synthesize(&t, q(1.0, 1.0), &mu, 20, 0.0, 5).unwrap();
        let f = tac_series(&realize(&t, q(1.0, 1.0)), &mu, clean.times()).unwrap();
        assert_eq!(clean.tac_values(), &f[..]);
        assert_eq!(clean.times().len(), 20);
        assert_eq!(*clean.times().last().unwrap(), 1.0);

        let a = synthesize(&t, q(1.0, 1.0), &mu, 20, 0.01, 5).unwrap();
        let b = synthesize(&t, q(1.0, 1.0), &mu, 20, 0.01, 5).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&t, q(1.0, 1.0), &mu, 20, 0.01, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_variance() {
        let t = SystemTemplate::minimal();
        let mu = mm_brac(&MMParams::default(), 1.0, 300).unwrap();
        let m = 100_000;
        let s = synthesize(&t, q(1.0, 1.0), &mu, m, 0.01, 42).unwrap();
        let f = tac_series(&realize(&t, q(1.0, 1.0)), &mu, s.times()).unwrap();
        let eps: Vec<f64> = s.tac_values().iter().zip(&f).map(|(y, f)| y - f).collect();
        let mean = eps.iter().sum::<f64>() / m as f64;
        let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        assert!((var / 1e-4 - 1.0).abs() <= 0.03);
    }

    #[test]
    fn replicate_seeds_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| replicate_seed(7, i)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    #[test]
    fn zero_noise_monte_carlo() {
        let t = SystemTemplate::minimal();
        let mu = mm_brac(&MMParams::default(), 1.0, 300).unwrap();
        let settings = McSettings { m: 20, sigma: 0.0, replicates: 3, ..Default::default() };
        let r = monte_carlo(&t, q(1.0, 1.0), &mu, &settings).unwrap();
        assert_eq!(r.failures, 0);
        assert!(r.scaled_cov.norm() <= 1e-20);
        assert!((r.mean_qhat[0] - 1.0).abs() <= 1e-9 && (r.mean_qhat[1] - 1.0).abs() <= 1e-9);
        assert_eq!(r.theoretical_sigma, Matrix2::zeros());
        assert_eq!(r.mahalanobis_ks_pvalue, None);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let t = SystemTemplate::minimal();
        let mu = mm_brac(&MMParams::default(), 1.0, 300).unwrap();
        let settings = McSettings { m: 30, replicates: 12, seed: 99, ..Default::default() };
        let a = monte_carlo(&t, q(1.0, 1.0), &mu, &settings).unwrap();
        let b = monte_carlo(&t, q(1.0, 1.0), &mu, &settings).unwrap();
        assert_eq!(a, b);
        let theory = a.theoretical_sigma;
        assert_eq!(theory[(0, 1)], theory[(1, 0)]);
        assert!(theory.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn too_few_replicates() {
        let t = SystemTemplate::minimal();
        let mu = mm_brac(&MMParams::default(), 1.0, 300).unwrap();
        let settings = McSettings { replicates: 1, ..Default::default() };
        assert!(monte_carlo(&t, q(1.0, 1.0), &mu, &settings).is_err());
    }
}
