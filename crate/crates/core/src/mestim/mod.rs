//! Least-squares estimation of `q` and its asymptotic inference.
//!
//! For observations `y_ij` at times `t_ij` of sessions `i` with inputs `μ_i`
//! the estimator minimizes
//!
//! ```text
//! J(q) = 1/(2M) Σ_i Σ_j (f_μi(t_ij; q) - y_ij)²,    M = Σ_i m_i
//! ```
//!
//! and, with `Γ̂` the averaged rank-one information density at `q̂`, reports
//! `σ̂² Γ̂⁻¹ / M` as the covariance of `q̂`.

mod estimating;
mod fit;
mod inference;

pub use estimating::{
    check_jacobian, fd_jacobian, solve_estimating_equation, sine_gamma, DiffusionScore,
    EstimatingFunction, EstimatingSolution, SineRegression, SolverSettings,
};
pub use fit::{fit, FitResult, FitSettings};
pub use inference::{
    asymptotic_covariance, condition_number, covariance, limiting_sigma, ConfidenceEllipse,
    Covariance, MAX_CONDITION,
};

use nalgebra::{Matrix2, Vector2};

use crate::diffusion::{g_from_grad, tac_grad_series, tac_series, realize, BracCurve, ParamQ, SystemTemplate};
use crate::error::{Error, Result};

/// One drinking episode: input curve and TAC observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    times: Vec<f64>,
    tac_values: Vec<f64>,
    brac: BracCurve,
}

impl Session {
    pub fn new(times: Vec<f64>, tac_values: Vec<f64>, brac: BracCurve) -> Result<Self> {
        if times.is_empty() || times.len() != tac_values.len() {
            return Err(Error::InvalidInput(format!(
                "{} observation times for {} TAC values",
                times.len(),
                tac_values.len()
            )));
        }
        let horizon = brac.horizon();
        if times.iter().any(|&t| !(t >= 0.0 && t <= horizon)) {
            return Err(Error::InvalidInput(format!(
                "observation times must lie in [0, {horizon}]"
            )));
        }
        if times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("observation times must be ascending".into()));
        }
        if tac_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("TAC values must be finite".into()));
        }
        Ok(Self { times, tac_values, brac })
    }

    pub fn horizon(&self) -> f64 {
        self.brac.horizon()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn tac_values(&self) -> &[f64] {
        &self.tac_values
    }

    pub fn brac(&self) -> &BracCurve {
        &self.brac
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The same session with the input and the observations multiplied by
    /// `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.times.clone(),
            self.tac_values.iter().map(|y| y * factor).collect(),
            self.brac.scaled(factor)?,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    sessions: Vec<Session>,
}

impl Dataset {
    pub fn new(sessions: Vec<Session>) -> Result<Self> {
        let total: usize = sessions.iter().map(Session::len).sum();
        if sessions.is_empty() || total < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least two observations, got {total} in {} sessions",
                sessions.len()
            )));
        }
        Ok(Self { sessions })
    }

    pub fn single(session: Session) -> Result<Self> {
        Self::new(vec![session])
    }

    pub fn sessions(&self) -> &[Session] {
        &self.sessions
    }

    /// Total observation count `M`.
    pub fn total_observations(&self) -> usize {
        self.sessions.iter().map(Session::len).sum()
    }

    pub fn push(&mut self, session: Session) {
        self.sessions.push(session);
    }
}

/// Residuals `f - y` and the residual Jacobian, stacked over all sessions.
#[derive(Debug, Clone)]
pub(crate) struct Linearization {
    pub residuals: Vec<f64>,
    pub jacobian: Vec<[f64; 2]>,
}

impl Linearization {
    pub fn cost(&self) -> f64 {
        half_mean_square(&self.residuals)
    }

    /// `Jᵀr / M`.
    pub fn score(&self) -> Vector2<f64> {
        let m = self.residuals.len() as f64;
        let mut g = Vector2::zeros();
        for (r, row) in self.residuals.iter().zip(&self.jacobian) {
            g[0] += r * row[0];
            g[1] += r * row[1];
        }
        g / m
    }

    /// `JᵀJ / M`.
    pub fn gauss_newton(&self) -> Matrix2<f64> {
        let m = self.residuals.len() as f64;
        let mut h = Matrix2::zeros();
        for row in &self.jacobian {
            h[(0, 0)] += row[0] * row[0];
            h[(0, 1)] += row[0] * row[1];
            h[(1, 1)] += row[1] * row[1];
        }
        h[(1, 0)] = h[(0, 1)];
        h / m
    }
}

fn half_mean_square(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() / (2.0 * r.len() as f64)
}

pub(crate) fn residuals(template: &SystemTemplate, data: &Dataset, q: ParamQ) -> Result<Vec<f64>> {
    let real = realize(template, q);
    let mut out = Vec::with_capacity(data.total_observations());
    for s in &data.sessions {
        let f = tac_series(&real, &s.brac, &s.times)?;
        out.extend(f.iter().zip(&s.tac_values).map(|(f, y)| f - y));
    }
    Ok(out)
}

pub(crate) fn linearize(template: &SystemTemplate, data: &Dataset, q: ParamQ) -> Result<Linearization> {
    let m = data.total_observations();
    let mut residuals = Vec::with_capacity(m);
    let mut jacobian = Vec::with_capacity(m);
    for s in &data.sessions {
        for (g, y) in tac_grad_series(template, q, &s.brac, &s.times)?.iter().zip(&s.tac_values) {
            residuals.push(g.f - y);
            jacobian.push([g.df_dq1, g.df_dq2]);
        }
    }
    Ok(Linearization { residuals, jacobian })
}

/// Least-squares objective `J(q)`.
pub fn objective(template: &SystemTemplate, data: &Dataset, q: ParamQ) -> Result<f64> {
    Ok(half_mean_square(&residuals(template, data, q)?))
}

/// Gradient of [`objective`], `1/M Σ (f_ij - y_ij) ∇_q f_ij`.
pub fn score(template: &SystemTemplate, data: &Dataset, q: ParamQ) -> Result<Vector2<f64>> {
    Ok(linearize(template, data, q)?.score())
}

/// Variance estimate `1/M Σ (y_ij - f_ij(q̂))²`.
pub fn sigma2_hat(template: &SystemTemplate, data: &Dataset, q_hat: ParamQ) -> Result<f64> {
    Ok(2.0 * objective(template, data, q_hat)?)
}

/// Empirical information matrix `Γ_n = 1/M Σ_i Σ_j g_μi(t_ij)` at `q`.
pub fn gamma_n(template: &SystemTemplate, data: &Dataset, q: ParamQ) -> Result<Matrix2<f64>> {
    let mut acc = Matrix2::zeros();
    for s in &data.sessions {
        for g in tac_grad_series(template, q, &s.brac, &s.times)? {
            acc += g_from_grad(&g, q.q2());
        }
    }
    Ok(acc / data.total_observations() as f64)
}

/// Limit of [`gamma_n`] for one session sampled uniformly on `[0, T]`:
/// `1/T ∫_0^T g_μ(u) du`, by the composite trapezoid rule on `nodes`
/// equally spaced points.
pub fn gamma_lebesgue(
    template: &SystemTemplate,
    q: ParamQ,
    mu: &BracCurve,
    nodes: usize,
) -> Result<Matrix2<f64>> {
    if nodes < 2 {
        return Err(Error::InvalidInput(format!("quadrature needs >= 2 nodes, got {nodes}")));
    }
    let horizon = mu.horizon();
    let panels = nodes - 1;
    let times: Vec<f64> = (0..nodes)
        .map(|i| if i == panels { horizon } else { horizon * i as f64 / panels as f64 })
        .collect();
    let grads = tac_grad_series(template, q, mu, &times)?;
    let mut acc = Matrix2::zeros();
    for (i, g) in grads.iter().enumerate() {
        let w = if i == 0 || i == panels { 0.5 } else { 1.0 };
        acc += g_from_grad(g, q.q2()) * w;
    }
    Ok(acc / panels as f64)
}
