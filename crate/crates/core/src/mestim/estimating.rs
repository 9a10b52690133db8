//! A generic solver for estimating equations `U_n(θ) = 0`.
//!
//! The solver is Newton's method with backtracking on `‖U_n‖`; at the root
//! `Γ̂ = a_n U_n'(θ̂)` estimates the limit of the normalized score Jacobian.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{score, Dataset};
use crate::diffusion::{ParamQ, SystemTemplate};
use crate::error::{Error, Result};
use crate::matexp::{Mat, Vector};

pub trait EstimatingFunction {
    fn dim(&self) -> usize;

    fn score(&self, theta: &Vector) -> Result<Vector>;

    /// `∂U/∂θ`; defaults to central differences of [`score`](Self::score).
    fn jacobian(&self, theta: &Vector) -> Result<Mat> {
        fd_jacobian(self, theta, 1e-6)
    }

    /// Normalization `a_n` applied to the Jacobian at the root.
    fn scale(&self) -> f64 {
        1.0
    }
}

/// Central-difference Jacobian with step `rel_step · max(|θ_i|, 1)`.
pub fn fd_jacobian<P: EstimatingFunction + ?Sized>(problem: &P, theta: &Vector, rel_step: f64) -> Result<Mat> {
    let p = problem.dim();
    let mut jac = Mat::zeros(p, p);
    for i in 0..p {
        let h = rel_step * theta[i].abs().max(1.0);
        let mut up = theta.clone();
        up[i] += h;
        let mut down = theta.clone();
        down[i] -= h;
        let col = (problem.score(&up)? - problem.score(&down)?) / (2.0 * h);
        jac.set_column(i, &col);
    }
    Ok(jac)
}

/// Largest relative discrepancy between the problem's Jacobian and central
/// differences of its score over `probes`.
pub fn check_jacobian<P: EstimatingFunction + ?Sized>(problem: &P, probes: &[Vector]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for theta in probes {
        let analytic = problem.jacobian(theta)?;
        let numeric = fd_jacobian(problem, theta, 1e-6)?;
        let err = (&analytic - &numeric).norm() / numeric.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatingSolution {
    pub theta: Vector,
    /// `a_n U_n'(θ̂)`.
    pub gamma_hat: Mat,
    pub iterations: usize,
    pub score_norm: f64,
}

pub fn solve_estimating_equation<P: EstimatingFunction + ?Sized>(
    problem: &P,
    init: &Vector,
    settings: &SolverSettings,
) -> Result<EstimatingSolution> {
    if init.len() != problem.dim() {
        return Err(Error::Dimension {
            context: "solve_estimating_equation",
            detail: format!("problem has dimension {} but start has {}", problem.dim(), init.len()),
        });
    }
    let mut theta = init.clone();
    let mut u = problem.score(&theta)?;
    let mut unorm = u.norm();

    for iteration in 0..=settings.max_iter {
        if unorm <= settings.tol {
            let gamma_hat = problem.jacobian(&theta)? * problem.scale();
            return Ok(EstimatingSolution { theta, gamma_hat, iterations: iteration, score_norm: unorm });
        }
        if iteration == settings.max_iter {
            break;
        }
        let jac = problem.jacobian(&theta)?;
        let step = jac.lu().solve(&(-&u)).ok_or(Error::SingularJacobian { iteration })?;

        let mut alpha = 1.0;
        loop {
            let trial = &theta + &step * alpha;
            match problem.score(&trial) {
                Ok(tu) if tu.iter().all(|v| v.is_finite()) && tu.norm() < (1.0 - 1e-4 * alpha) * unorm => {
                    theta = trial;
                    unorm = tu.norm();
                    u = tu;
                    break;
                }
                Ok(_) | Err(Error::Domain(_)) => {}
                Err(e) => return Err(e),
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                return Err(Error::NoConvergence { iterations: iteration + 1, residual: unorm });
            }
        }
    }
    Err(Error::NoConvergence { iterations: settings.max_iter, residual: unorm })
}

/// The least-squares score of the diffusion model as an estimating
/// function of `θ = (q1, q2)`.
pub struct DiffusionScore<'a> {
    pub template: &'a SystemTemplate,
    pub data: &'a Dataset,
}

impl EstimatingFunction for DiffusionScore<'_> {
    fn dim(&self) -> usize {
        2
    }

    fn score(&self, theta: &Vector) -> Result<Vector> {
        let q = ParamQ::new(theta[0], theta[1])?;
        let g = score(self.template, self.data, q)?;
        Ok(Vector::from_column_slice(g.as_slice()))
    }
}

/// Scalar regression `y_i = sin(θ x_i) + ε_i` fitted by least squares.
#[derive(Debug, Clone, PartialEq)]
pub struct SineRegression {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SineRegression {
    /// Draws `x_i ~ U(0, x_max)` and `ε_i ~ N(0, σ²)`.
    pub fn simulate(n: usize, theta0: f64, sigma: f64, x_max: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ux = Uniform::new(0.0, x_max).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let noise = Normal::new(0.0, sigma).map_err(|e| Error::InvalidInput(e.to_string()))?;
        let x: Vec<f64> = (0..n).map(|_| ux.sample(&mut rng)).collect();
        let y = x.iter().map(|&xi| (theta0 * xi).sin() + noise.sample(&mut rng)).collect();
        Ok(Self { x, y })
    }
}

impl EstimatingFunction for SineRegression {
    fn dim(&self) -> usize {
        1
    }

    fn score(&self, theta: &Vector) -> Result<Vector> {
        let t = theta[0];
        let n = self.x.len() as f64;
        let u: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&x, &y)| ((t * x).sin() - y) * x * (t * x).cos())
            .sum();
        Ok(Vector::from_element(1, u / n))
    }

    fn jacobian(&self, theta: &Vector) -> Result<Mat> {
        let t = theta[0];
        let n = self.x.len() as f64;
        let d: f64 = self
            .x
            .iter()
            .zip(&self.y)
            .map(|(&x, &y)| {
                let (s, c) = (t * x).sin_cos();
                (x * c).powi(2) - (s - y) * x * x * s
            })
            .sum();
        Ok(Mat::from_element(1, 1, d / n))
    }
}

/// `γ = E[(∂θ sin(θ0 x))²] = E[x² cos²(θ0 x)]` for `x ~ U(0, x_max)`.
pub fn sine_gamma(theta0: f64, x_max: f64) -> f64 {
    let a = x_max;
    let b = 2.0 * theta0;
    // ∫_0^a x² cos(bx) dx
    let (s, c) = (a * b).sin_cos();
    let cos_moment = a * a * s / b + 2.0 * a * c / (b * b) - 2.0 * s / (b * b * b);
    (a.powi(3) / 6.0 + 0.5 * cos_moment) / a
}
