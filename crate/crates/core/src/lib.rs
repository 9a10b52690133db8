//! Parameter estimation and asymptotic inference for a linear
//! blood-to-skin alcohol diffusion model driven by breath alcohol.

pub mod diffusion;
pub mod error;
pub mod matexp;
pub mod mestim;
pub mod simkit;
pub mod stats;

pub use diffusion::{BracCurve, ParamQ, SystemRealization, SystemTemplate, TacGradient};
pub use error::{Error, Result};
pub use matexp::{Mat, Vector};
pub use nalgebra::{Matrix2, Vector2};
pub use mestim::{Dataset, FitResult, FitSettings, Session};
pub use simkit::{McReport, McSettings, MMParams};
