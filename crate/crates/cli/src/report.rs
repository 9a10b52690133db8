//! JSON report shapes. `docs/report.schema.json` describes
//! [`EstimateReport`]; keep the two in step.

use serde::Serialize;
use tac_core::mestim::ConfidenceEllipse;
use tac_core::Matrix2;

pub type Mat2 = [[f64; 2]; 2];

pub fn mat2(m: &Matrix2<f64>) -> Mat2 {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

#[derive(Debug, Clone, Serialize)]
pub struct TemplateInfo {
    pub kind: String,
    /// Grid size for the diffusion discretization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub dim: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipseReport {
    pub center: [f64; 2],
    pub level: f64,
    pub chi2_quantile: f64,
    pub semi_axes: [f64; 2],
    pub major_axis: [f64; 2],
    pub angle_rad: f64,
}

impl From<&ConfidenceEllipse> for EllipseReport {
    fn from(e: &ConfidenceEllipse) -> Self {
        Self {
            center: e.center,
            level: e.level,
            chi2_quantile: e.chi2_quantile,
            semi_axes: e.semi_axes,
            major_axis: e.major_axis,
            angle_rad: e.angle,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub template: TemplateInfo,
    pub horizon_hours: f64,
    pub brac_subintervals: usize,
    pub observations: usize,
    pub init: [f64; 2],
    pub q_hat: [f64; 2],
    pub sigma2_hat: f64,
    pub objective: f64,
    pub gamma_hat: Mat2,
    pub gamma_condition: f64,
    /// `null` when `Γ̂` is numerically singular.
    pub covariance: Option<Mat2>,
    pub ellipse: Option<EllipseReport>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub residuals: Vec<f64>,
    pub notes: Vec<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct McRow {
    pub m: usize,
    pub failures: usize,
    pub mean_qhat: [f64; 2],
    pub sd_qhat: [f64; 2],
    pub scaled_cov: Mat2,
    pub frobenius_rel_error: Option<f64>,
    pub mahalanobis_ks_statistic: Option<f64>,
    pub mahalanobis_ks_pvalue: Option<f64>,
    pub mean_sigma2_hat: f64,
    pub coverage: Option<f64>,
    pub bias_norm: f64,
    pub bias_standard_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McTableReport {
    pub template: TemplateInfo,
    pub q0: [f64; 2],
    pub sigma: f64,
    pub replicates: usize,
    pub seed: u64,
    pub theoretical_sigma: Mat2,
    pub rows: Vec<McRow>,
    /// Observation counts whose run was abandoned for too many failed fits.
    pub aborted: Vec<usize>,
}

/// One line of `replicates.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicateLine {
    pub m: usize,
    pub index: usize,
    pub seed: u64,
    pub q1_hat: f64,
    pub q2_hat: f64,
    pub sigma2_hat: f64,
    pub converged: bool,
    pub covers_truth: Option<bool>,
}
