use nalgebra::{Matrix2, Vector2};

use super::FitResult;
use crate::error::{Error, Result};
use crate::stats::chi2_2_quantile;

/// Information matrices with a larger condition number are treated as
/// singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Ratio of extreme eigenvalues of a symmetric 2×2 matrix; infinite when
/// it is not positive definite.
pub fn condition_number(m: &Matrix2<f64>) -> f64 {
    let eig = m.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 || !lo.is_finite() {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// `σ² Γ⁻¹ / M`.
pub fn asymptotic_covariance(sigma2: f64, gamma: &Matrix2<f64>, m: usize) -> Result<Matrix2<f64>> {
    let condition = condition_number(gamma);
    if condition > MAX_CONDITION {
        return Err(Error::Identifiability {
            reason: "information matrix is singular".into(),
            condition,
        });
    }
    let inv = gamma.try_inverse().ok_or(Error::Identifiability {
        reason: "information matrix is not invertible".into(),
        condition,
    })?;
    let cov = inv * (sigma2 / m as f64);
    // Symmetrize away rounding from the inverse.
    Ok((cov + cov.transpose()) * 0.5)
}

/// Limiting covariance `σ² Γ⁻¹` of `√M (q̂ - q0)`.
pub fn limiting_sigma(sigma: f64, gamma: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    asymptotic_covariance(sigma * sigma, gamma, 1)
}

/// Region `{p : (p - c)ᵀ Σ⁻¹ (p - c) <= χ²₂(level)}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipse {
    pub center: [f64; 2],
    pub level: f64,
    pub chi2_quantile: f64,
    /// Semi-axis lengths, major first.
    pub semi_axes: [f64; 2],
    /// Unit direction of the major axis.
    pub major_axis: [f64; 2],
    /// Angle of the major axis from the `q1` axis, radians.
    pub angle: f64,
    precision: Matrix2<f64>,
}

impl ConfidenceEllipse {
    pub fn new(center: [f64; 2], cov: &Matrix2<f64>, level: f64) -> Result<Self> {
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidInput(format!("confidence level {level} not in (0, 1)")));
        }
        let precision = cov.try_inverse().ok_or(Error::Identifiability {
            reason: "covariance is singular".into(),
            condition: f64::INFINITY,
        })?;
        let quantile = chi2_2_quantile(level);
        let eig = cov.symmetric_eigen();
        let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
        let dir = eig.eigenvectors.column(major).into_owned();
        // Fix the sign so the direction is deterministic.
        let dir = if dir[0] < 0.0 || (dir[0] == 0.0 && dir[1] < 0.0) { -dir } else { dir };
        Ok(Self {
            center,
            level,
            chi2_quantile: quantile,
            semi_axes: [
                (eig.eigenvalues[major].max(0.0) * quantile).sqrt(),
                (eig.eigenvalues[minor].max(0.0) * quantile).sqrt(),
            ],
            major_axis: [dir[0], dir[1]],
            angle: dir[1].atan2(dir[0]),
            precision,
        })
    }

    /// Squared Mahalanobis distance of `p` from the centre.
    pub fn distance2(&self, p: [f64; 2]) -> f64 {
        let d = Vector2::new(p[0] - self.center[0], p[1] - self.center[1]);
        d.dot(&(self.precision * d))
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.distance2(p) <= self.chi2_quantile
    }

    /// `n` points on the boundary, for plotting.
    pub fn boundary(&self, n: usize) -> Vec<[f64; 2]> {
        let [a, b] = self.semi_axes;
        let (c, s) = (self.major_axis[0], self.major_axis[1]);
        (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                let (x, y) = (a * t.cos(), b * t.sin());
                [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: Matrix2<f64>,
    /// 95% confidence ellipse centred at `q̂`.
    pub ellipse: ConfidenceEllipse,
}

/// `σ̂² Γ̂⁻¹ / M` for a fit, with its 95% confidence ellipse.
pub fn covariance(fit: &FitResult, m: usize) -> Result<Covariance> {
    let matrix = asymptotic_covariance(fit.sigma2_hat, &fit.gamma_hat, m)?;
    let ellipse = ConfidenceEllipse::new(fit.q_hat.to_array(), &matrix, 0.95)?;
    Ok(Covariance { matrix, ellipse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::ParamQ;

    fn fit_with(gamma: Matrix2<f64>, sigma2: f64) -> FitResult {
        FitResult {
            q_hat: ParamQ::new(1.0, 1.0).unwrap(),
            sigma2_hat: sigma2,
            gamma_hat: gamma,
            cov_qhat: None,
            gamma_condition: condition_number(&gamma),
            objective_value: sigma2 / 2.0,
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            observations: 1,
            warnings: vec![],
        }
    }

    #[test]
    fn identity_case() {
        let cov = covariance(&fit_with(Matrix2::identity(), 1.0), 1).unwrap();
        assert_eq!(cov.matrix, Matrix2::identity());
        assert!((cov.ellipse.semi_axes[0] - 5.991_464_547_107_979f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn doubling_m_halves_covariance() {
        let g = Matrix2::new(2.0, -0.5, -0.5, 1.0);
        let f = fit_with(g, 0.3);
        let a = covariance(&f, 50).unwrap().matrix;
        let b = covariance(&f, 100).unwrap().matrix;
        assert!((a - b * 2.0).norm() <= 1e-15 * a.norm());
    }

    #[test]
    fn singular_gamma_is_identifiability_error() {
        let g = Matrix2::new(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(
            covariance(&fit_with(g, 1.0), 10),
            Err(Error::Identifiability { .. })
        ));
        assert!(matches!(
            covariance(&fit_with(Matrix2::zeros(), 1.0), 10),
            Err(Error::Identifiability { .. })
        ));
    }

    #[test]
    fn ellipse_geometry() {
        let cov = Matrix2::new(4.0, 0.0, 0.0, 1.0);
        let e = ConfidenceEllipse::new([1.0, 2.0], &cov, 0.95).unwrap();
        let k = e.chi2_quantile.sqrt();
        assert!((e.semi_axes[0] - 2.0 * k).abs() < 1e-12);
        assert!((e.semi_axes[1] - k).abs() < 1e-12);
        assert!(e.angle.abs() < 1e-12);
        assert!(e.contains([1.0 + 1.99 * k, 2.0]));
        assert!(!e.contains([1.0, 2.0 + 1.01 * k]));
        for p in e.boundary(16) {
            assert!((e.distance2(p) - e.chi2_quantile).abs() < 1e-9);
        }
    }

    #[test]
    fn correlated_ellipse_boundary() {
        let cov = Matrix2::new(16.44, -7.29, -7.29, 3.46) * 0.01;
        let e = ConfidenceEllipse::new([0.0, 0.0], &cov, 0.95).unwrap();
        assert!(e.angle < 0.0);
        for p in e.boundary(12) {
            assert!((e.distance2(p) / e.chi2_quantile - 1.0).abs() < 1e-9);
        }
    }
}
