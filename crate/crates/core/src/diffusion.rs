//! Finite-dimensional blood-to-skin diffusion model.
//!
//! The state `x(t)` holds ethanol concentration on a depth grid through the
//! epidermis, driven by a boundary flux proportional to the blood/breath
//! alcohol curve `μ`. For a parameter `q = (q1, q2)` the system matrices are
//! `A = q1·D + E` and `B = q2·F`, and the sensor reads `TAC(t) = C·x(t)` with
//! `x(0) = 0`:
//!
//! ```text
//! f_μ(t; q) = ∫_0^t C exp(A (t - s)) B μ(s) ds
//! ```
//!
//! With `μ` piecewise constant the integral is evaluated exactly, segment by
//! segment, through [`conv_step`]. The sensitivity to `q1` is obtained by
//! propagating the state together with its derivative through the block
//! system `[[A, D], [0, A]]`; the sensitivity to `q2` is `f / q2`, since `q2`
//! only multiplies the input.


use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::matexp::{build_block, conv_step, ConvStep, Mat, Vector};

/// Diffusion parameter `(q1, q2)`: normalized diffusivity and input gain.
///
/// Admissible values have `q2 > 0`; `q1` is unconstrained here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamQ {
    q1: f64,
    q2: f64,
}

impl ParamQ {
    pub fn new(q1: f64, q2: f64) -> Result<Self> {
        if !(q1.is_finite() && q2.is_finite()) {
            return Err(Error::Domain(format!("q = ({q1}, {q2}) is not finite")));
        }
        if q2 <= 0.0 {
            return Err(Error::Domain(format!("q2 = {q2} must be positive")));
        }
        Ok(Self { q1, q2 })
    }

    pub fn q1(&self) -> f64 {
        self.q1
    }

    pub fn q2(&self) -> f64 {
        self.q2
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.q1, self.q2]
    }

    pub fn norm(&self) -> f64 {
        self.q1.hypot(self.q2)
    }
}

/// The `q`-free matrices `(D, E, F, C)` of the discretized system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemTemplate {
    d: Mat,
    e: Mat,
    f: Vector,
    c: Vector,
}

impl SystemTemplate {
    /// `c` holds the readout weights, i.e. the single row of `C`.
    pub fn new(d: Mat, e: Mat, f: Vector, c: Vector) -> Result<Self> {
        let k = d.nrows();
        if k == 0 || d.ncols() != k {
            return Err(Error::dimension("SystemTemplate", format!("D is {}x{}", k, d.ncols())));
        }
        if e.shape() != (k, k) || f.len() != k || c.len() != k {
            return Err(Error::dimension(
                "SystemTemplate",
                format!(
                    "D is {k}x{k} but E is {}x{}, F has {} rows and C has {} columns",
                    e.nrows(),
                    e.ncols(),
                    f.len(),
                    c.len()
                ),
            ));
        }
        let all_finite = d.iter().chain(e.iter()).chain(f.iter()).chain(c.iter());
        if !all_finite.into_iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("template matrices must be finite".into()));
        }
        Ok(Self { d, e, f, c })
    }

    /// Two-state toy system: `D = I`, `E = 0`, `F = (1, 0)ᵀ`, `C = (1, 0)`.
    pub fn minimal() -> Self {
        Self {
            d: Mat::identity(2, 2),
            e: Mat::zeros(2, 2),
            f: Vector::from_vec(vec![1.0, 0.0]),
            c: Vector::from_vec(vec![1.0, 0.0]),
        }
    }

    pub fn dim(&self) -> usize {
        self.d.nrows()
    }

    pub fn d(&self) -> &Mat {
        &self.d
    }

    pub fn e(&self) -> &Mat {
        &self.e
    }

    pub fn f(&self) -> &Vector {
        &self.f
    }

    pub fn c(&self) -> &Vector {
        &self.c
    }
}

/// Central-difference discretization of
///
/// ```text
/// ∂x/∂t = q1 ∂²x/∂η²,   q1 ∂x/∂η |η=1 = q2 μ(t),   q1 ∂x/∂η |η=0 = x(t, 0)
/// ```
///
/// on `k` uniformly spaced nodes `η_i = i/(k-1)`, node 0 being the skin
/// surface. The two boundary nodes carry half control volumes, which keeps
/// the scheme conservative and exactly affine in `q`: the diffusive
/// stencil (all of it multiplied by `q1`) goes into `D`, the outflow
/// through the skin into `E`, and the inflow from the blood into `F`.
pub fn discretize_pde(k: usize) -> Result<SystemTemplate> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("discretization needs k >= 2 nodes, got {k}")));
    }
    let h = 1.0 / (k - 1) as f64;
    let inv_h2 = 1.0 / (h * h);
    let last = k - 1;

    let mut d = Mat::zeros(k, k);
    d[(0, 0)] = -2.0 * inv_h2;
    d[(0, 1)] = 2.0 * inv_h2;
    for i in 1..last {
        d[(i, i - 1)] = inv_h2;
        d[(i, i)] = -2.0 * inv_h2;
        d[(i, i + 1)] = inv_h2;
    }
    d[(last, last - 1)] = 2.0 * inv_h2;
    d[(last, last)] = -2.0 * inv_h2;

    let mut e = Mat::zeros(k, k);
    e[(0, 0)] = -2.0 / h;

    let mut f = Vector::zeros(k);
    f[last] = 2.0 / h;

    let mut c = Vector::zeros(k);
    c[0] = 1.0;

    SystemTemplate::new(d, e, f, c)
}

/// `A = q1·D + E`, `B = q2·F` for a particular `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRealization {
    a: Mat,
    b: Vector,
    c: Vector,
    q: ParamQ,
}

impl SystemRealization {
    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn c(&self) -> &Vector {
        &self.c
    }

    pub fn q(&self) -> ParamQ {
        self.q
    }
}

pub fn realize(template: &SystemTemplate, q: ParamQ) -> SystemRealization {
    SystemRealization {
        a: &template.d * q.q1 + &template.e,
        b: &template.f * q.q2,
        c: template.c.clone(),
        q,
    }
}

/// Piecewise-constant input curve on `[0, T]`.
///
/// Segment `i` covers `[breakpoints[i], breakpoints[i + 1])`, the last one
/// ending at the horizon, with value `levels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BracCurve {
    horizon: f64,
    breakpoints: Vec<f64>,
    levels: Vec<f64>,
}

impl BracCurve {
    pub fn new(horizon: f64, breakpoints: Vec<f64>, levels: Vec<f64>) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidInput(format!("horizon {horizon} must be positive")));
        }
        if breakpoints.is_empty() || breakpoints.len() != levels.len() {
            return Err(Error::InvalidInput(format!(
                "{} breakpoints for {} levels",
                breakpoints.len(),
                levels.len()
            )));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidInput("first breakpoint must be 0".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("breakpoints must be strictly ascending".into()));
        }
        if *breakpoints.last().unwrap() >= horizon {
            return Err(Error::InvalidInput("breakpoints must lie below the horizon".into()));
        }
        if levels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("levels must be finite and nonnegative".into()));
        }
        Ok(Self { horizon, breakpoints, levels })
    }

    pub fn constant(horizon: f64, level: f64) -> Result<Self> {
        Self::new(horizon, vec![0.0], vec![level])
    }

    pub fn zero(horizon: f64) -> Result<Self> {
        Self::constant(horizon, 0.0)
    }

    /// Equal-length segments over `[0, horizon]`, one per level.
    pub fn uniform(horizon: f64, levels: Vec<f64>) -> Result<Self> {
        let n = levels.len();
        let breakpoints = (0..n).map(|i| horizon * i as f64 / n as f64).collect();
        Self::new(horizon, breakpoints, levels)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn segment_count(&self) -> usize {
        self.levels.len()
    }

    /// `(start, end, level)` of segment `i`.
    pub fn segment(&self, i: usize) -> (f64, f64, f64) {
        let end = self.breakpoints.get(i + 1).copied().unwrap_or(self.horizon);
        (self.breakpoints[i], end, self.levels[i])
    }

    pub fn level_at(&self, s: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= s).saturating_sub(1);
        self.levels[i]
    }

    pub fn is_zero(&self) -> bool {
        self.levels.iter().all(|&v| v == 0.0)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.horizon,
            self.breakpoints.clone(),
            self.levels.iter().map(|v| v * factor).collect(),
        )
    }
}

/// TAC and its partial derivatives with respect to `q1` and `q2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TacGradient {
    pub f: f64,
    pub df_dq1: f64,
    pub df_dq2: f64,
}

/// Walks the segments of `curve`, propagating `z' = K z + b·μ(t)` from
/// `z(0) = 0`, and returns the state at each of the ascending `times`.
fn sweep_states(k_mat: &Mat, b: &Vector, curve: &BracCurve, times: &[f64]) -> Result<Vec<Vector>> {
    let n = k_mat.nrows();
    let mut full_steps: Vec<(f64, ConvStep)> = Vec::new();
    let mut z = Vector::zeros(n);
    let mut at_rest = true;
    let mut now = 0.0;
    let mut seg = 0;
    let mut out = Vec::with_capacity(times.len());

    let advance = |z: &mut Vector, at_rest: &mut bool, step: &ConvStep, level: f64| {
        *z = &step.phi * &*z;
        if level != 0.0 {
            z.axpy(level, &step.psi, 1.0);
            *at_rest = false;
        }
    };

    for &t in times {
        while seg < curve.segment_count() {
            let (start, end, level) = curve.segment(seg);
            if end > t {
                break;
            }
            if !(at_rest && level == 0.0) {
                if now == start {
                    // Equal-width segments differ in width by rounding only;
                    // share their step.
                    let dt = end - start;
                    let hit = full_steps.iter().position(|(w, _)| (w - dt).abs() <= 8.0 * f64::EPSILON * dt);
                    let idx = match hit {
                        Some(i) => i,
                        None => {
                            full_steps.push((dt, conv_step(k_mat, b, dt)?));
                            full_steps.len() - 1
                        }
                    };
                    advance(&mut z, &mut at_rest, &full_steps[idx].1, level);
                } else {
                    let step = conv_step(k_mat, b, end - now)?;
                    advance(&mut z, &mut at_rest, &step, level);
                }
            }
            now = end;
            seg += 1;
        }
        if t > now {
            let level = curve.segment(seg).2;
            if !(at_rest && level == 0.0) {
                let step = conv_step(k_mat, b, t - now)?;
                advance(&mut z, &mut at_rest, &step, level);
            }
            now = t;
        }
        out.push(z.clone());
    }
    Ok(out)
}

fn check_time(curve: &BracCurve, t: f64) -> Result<()> {
    if !(t >= 0.0 && t <= curve.horizon) {
        return Err(Error::Domain(format!(
            "time {t} lies outside [0, {}]",
            curve.horizon
        )));
    }
    Ok(())
}

/// States at `times` given in any order, sweeping the input only once.
fn states_at(
    k_mat: &Mat,
    b: &Vector,
    curve: &BracCurve,
    times: &[f64],
) -> Result<Vec<Vector>> {
    for &t in times {
        check_time(curve, t)?;
    }
    if times.windows(2).all(|w| w[0] <= w[1]) {
        return sweep_states(k_mat, b, curve, times);
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&i, &j| times[i].total_cmp(&times[j]));
    let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let states = sweep_states(k_mat, b, curve, &sorted)?;
    let mut out = vec![Vector::zeros(0); times.len()];
    for (state, &i) in states.into_iter().zip(&order) {
        out[i] = state;
    }
    Ok(out)
}

/// Model TAC `f_μ(t; q)`.
pub fn tac(realization: &SystemRealization, mu: &BracCurve, t: f64) -> Result<f64> {
    Ok(tac_series(realization, mu, &[t])?[0])
}

/// Model TAC at several times, with a single pass over the input.
pub fn tac_series(realization: &SystemRealization, mu: &BracCurve, times: &[f64]) -> Result<Vec<f64>> {
    let states = states_at(&realization.a, &realization.b, mu, times)?;
    Ok(states.iter().map(|x| realization.c.dot(x)).collect())
}

pub fn tac_grad(
    template: &SystemTemplate,
    q: ParamQ,
    mu: &BracCurve,
    t: f64,
) -> Result<TacGradient> {
    Ok(tac_grad_series(template, q, mu, &[t])?[0])
}

/// TAC together with its `q`-gradient at several times.
///
/// The augmented state is `(∂x/∂q1, x)`, propagated by `[[A, D], [0, A]]`
/// with input column `(0, B)`.
pub fn tac_grad_series(
    template: &SystemTemplate,
    q: ParamQ,
    mu: &BracCurve,
    times: &[f64],
) -> Result<Vec<TacGradient>> {
    let k = template.dim();
    let real = realize(template, q);
    let big = build_block(&real.a, &template.d, 1)?;
    let mut input = Vector::zeros(2 * k);
    input.rows_mut(k, k).copy_from(&real.b);

    let states = states_at(&big, &input, mu, times)?;
    Ok(states
        .iter()
        .map(|z| {
            let f = real.c.dot(&z.rows(k, k));
            TacGradient {
                f,
                df_dq1: real.c.dot(&z.rows(0, k)),
                df_dq2: f / q.q2,
            }
        })
        .collect())
}

/// Outer product of `(∂1 f, f / q2)` at a single point.
pub fn g_from_grad(grad: &TacGradient, q2: f64) -> Matrix2<f64> {
    let a = grad.df_dq1;
    let b = grad.f / q2;
    Matrix2::new(a * a, a * b, a * b, b * b)
}

/// The rank-one information density `g_μ(u)` evaluated at `q0`.
pub fn g_matrix(template: &SystemTemplate, q0: ParamQ, mu: &BracCurve, u: f64) -> Result<Matrix2<f64>> {
    let grad = tac_grad(template, q0, mu, u)?;
    Ok(g_from_grad(&grad, q0.q2))
}
