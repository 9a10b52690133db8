use nalgebra::{Matrix2, Vector2};

use super::{gamma_n, inference, linearize, residuals, Dataset, Linearization};
use crate::diffusion::{ParamQ, SystemTemplate};
use crate::error::{Error, Result};

/// Optimizer settings for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitSettings {
    /// Convergence threshold on the projected score norm.
    pub tol: f64,
    pub max_iter: usize,
    /// Box lower bounds on `(q1, q2)`; `q2`'s must be positive.
    pub lower: [f64; 2],
    /// Retry from a fixed grid of starts if the first run fails.
    pub multistart: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 200, lower: [1e-8, 1e-8], multistart: true }
    }
}

/// Starts tried when the initial point fails to converge: the cell centres
/// of a 2×2 log-grid over `[0.1, 10]²`.
const MULTISTARTS: [[f64; 2]; 4] = [
    [0.316_227_766_016_837_94, 0.316_227_766_016_837_94],
    [0.316_227_766_016_837_94, 3.162_277_660_168_379_5],
    [3.162_277_660_168_379_5, 0.316_227_766_016_837_94],
    [3.162_277_660_168_379_5, 3.162_277_660_168_379_5],
];

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub q_hat: ParamQ,
    pub sigma2_hat: f64,
    /// `Γ̂ = Γ_n(q̂)`.
    pub gamma_hat: Matrix2<f64>,
    /// `σ̂² Γ̂⁻¹ / M`, absent when `Γ̂` is numerically singular.
    pub cov_qhat: Option<Matrix2<f64>>,
    pub gamma_condition: f64,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the score with components pushing against an active bound
    /// removed.
    pub gradient_norm: f64,
    pub observations: usize,
    pub warnings: Vec<String>,
}

struct RunOutcome {
    q: ParamQ,
    lin: Linearization,
    iterations: usize,
    converged: bool,
    gradient_norm: f64,
}

fn projected_norm(q: [f64; 2], g: &Vector2<f64>, lower: [f64; 2]) -> f64 {
    let mut pg = *g;
    for i in 0..2 {
        if q[i] <= lower[i] && pg[i] > 0.0 {
            pg[i] = 0.0;
        }
    }
    pg.norm()
}

/// Box-constrained Levenberg–Marquardt on the residual vector, Marquardt
/// scaling, with the Nielsen damping update.
fn run_lm(
    template: &SystemTemplate,
    data: &Dataset,
    start: ParamQ,
    settings: &FitSettings,
) -> Result<RunOutcome> {
    let lower = settings.lower;
    let project = |v: [f64; 2]| [v[0].max(lower[0]), v[1].max(lower[1])];
    let start = project(start.to_array());
    let mut q = ParamQ::new(start[0], start[1])?;
    let mut lin = linearize(template, data, q)?;
    let mut cost = lin.cost();
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut iterations = 0;

    loop {
        let g = lin.score();
        let gnorm = projected_norm(q.to_array(), &g, lower);
        if gnorm <= settings.tol {
            return Ok(RunOutcome { q, lin, iterations, converged: true, gradient_norm: gnorm });
        }
        if iterations >= settings.max_iter || lambda > 1e20 || !cost.is_finite() {
            return Ok(RunOutcome { q, lin, iterations, converged: false, gradient_norm: gnorm });
        }
        iterations += 1;

        let h = lin.gauss_newton();
        let scale = Vector2::new(h[(0, 0)], h[(1, 1)]).map(|d| d.max(1e-12 * h.norm().max(1e-300)));
        let mut damped = h;
        damped[(0, 0)] += lambda * scale[0];
        damped[(1, 1)] += lambda * scale[1];
        // Variables held at a bound by the gradient stay fixed this step.
        let mut rhs = -g;
        for i in 0..2 {
            if q.to_array()[i] <= lower[i] && g[i] > 0.0 {
                rhs[i] = 0.0;
                damped[(i, 1 - i)] = 0.0;
                damped[(1 - i, i)] = 0.0;
            }
        }
        let Some(step) = damped.lu().solve(&rhs) else {
            lambda *= nu;
            nu *= 2.0;
            continue;
        };

        let cur = q.to_array();
        let trial = project([cur[0] + step[0], cur[1] + step[1]]);
        let taken = Vector2::new(trial[0] - cur[0], trial[1] - cur[1]);
        let predicted = -(g.dot(&taken) + 0.5 * taken.dot(&(h * taken)));
        if taken.norm() <= 1e-15 * (q.norm() + 1e-15) {
            // No representable progress; damping only shrinks the step further.
            return Ok(RunOutcome { q, lin, iterations, converged: false, gradient_norm: gnorm });
        }

        let trial_q = ParamQ::new(trial[0], trial[1])?;
        let trial_cost = match residuals(template, data, trial_q) {
            Ok(r) => {
                let c = r.iter().map(|v| v * v).sum::<f64>() / (2.0 * r.len() as f64);
                if c.is_finite() { c } else { f64::INFINITY }
            }
            Err(Error::Domain(_)) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let rho = if predicted > 0.0 { (cost - trial_cost) / predicted } else { -1.0 };

        if rho > 1e-4 {
            q = trial_q;
            lin = linearize(template, data, q)?;
            cost = lin.cost();
            lambda *= f64::max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
        } else {
            lambda *= nu;
            nu *= 2.0;
        }
    }
}

fn better(a: &RunOutcome, b: &RunOutcome) -> bool {
    if a.converged != b.converged {
        return a.converged;
    }
    let (ca, cb) = (a.lin.cost(), b.lin.cost());
    if ca == cb {
        a.q.norm() < b.q.norm()
    } else {
        ca < cb
    }
}

/// Least-squares fit of `q` with the covariance and diagnostics at `q̂`.
///
/// Fails up front when the model output and its sensitivities vanish at
/// the start while the data do not (for example, an all-zero input with
/// nonzero TAC): no `q` can be identified.
pub fn fit(
    template: &SystemTemplate,
    data: &Dataset,
    init: ParamQ,
    settings: &FitSettings,
) -> Result<FitResult> {
    if !(settings.lower[1] > 0.0) || settings.lower[0] < 0.0 {
        return Err(Error::InvalidInput(format!(
            "lower bounds {:?} must satisfy q1 >= 0, q2 > 0",
            settings.lower
        )));
    }
    if !(settings.tol > 0.0) {
        return Err(Error::InvalidInput("tolerance must be positive".into()));
    }

    let degenerate = data.sessions().iter().all(|s| s.brac().is_zero());
    if degenerate && data.sessions().iter().any(|s| s.tac_values().iter().any(|&y| y != 0.0)) {
        return Err(Error::Identifiability {
            reason: "every input curve is identically zero but TAC is not".into(),
            condition: f64::INFINITY,
        });
    }

    let mut best = run_lm(template, data, init, settings)?;
    let mut iterations = best.iterations;
    let mut warnings = Vec::new();
    if !best.converged && settings.multistart {
        warnings.push(format!(
            "start ({}, {}) did not converge; tried {} alternative starts",
            init.q1(),
            init.q2(),
            MULTISTARTS.len()
        ));
        for start in MULTISTARTS {
            let run = run_lm(template, data, ParamQ::new(start[0], start[1])?, settings)?;
            iterations += run.iterations;
            if better(&run, &best) {
                best = run;
            }
        }
    }

    let m = data.total_observations();
    let sigma2 = 2.0 * best.lin.cost();
    let gamma = gamma_n(template, data, best.q)?;
    let condition = inference::condition_number(&gamma);
    let cov = if condition <= inference::MAX_CONDITION {
        Some(inference::asymptotic_covariance(sigma2, &gamma, m)?)
    } else {
        warnings.push(format!(
            "information matrix is near singular (condition {condition:.3e}); covariance omitted"
        ));
        None
    };

    Ok(FitResult {
        q_hat: best.q,
        sigma2_hat: sigma2,
        gamma_hat: gamma,
        cov_qhat: cov,
        gamma_condition: condition,
        objective_value: best.lin.cost(),
        iterations,
        converged: best.converged,
        gradient_norm: best.gradient_norm,
        observations: m,
        warnings,
    })
}
