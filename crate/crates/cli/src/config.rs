//! Run configuration and its flat `key = value` file format.
//!
//! Grammar: one `key = value` pair per line; `#` starts a comment; blank
//! lines are ignored; keys are case-sensitive. Lists are comma separated;
//! matrices list rows separated by `;` (`d = 1,0; 0,1`).

use tac_core::diffusion::discretize_pde;
use tac_core::{FitSettings, MMParams, Mat, ParamQ, SystemTemplate, Vector};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Copy)]
pub enum TemplateKind {
    /// Finite-volume discretization of the skin-layer diffusion equation.
    Pde,
    /// `D = I₂, E = 0, F = e₁, C = e₁`.
    Minimal,
    /// Matrices given by the `d`, `e`, `f`, `c` keys.
    Explicit,
}

impl std::str::FromStr for TemplateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pde" => Ok(Self::Pde),
            "minimal" => Ok(Self::Minimal),
            "explicit" => Ok(Self::Explicit),
            other => Err(format!("unknown template `{other}` (expected pde, minimal or explicit)")),
        }
    }
}

impl TemplateKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pde => "pde",
            Self::Minimal => "minimal",
            Self::Explicit => "explicit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub discretization_k: usize,
    pub brac_subintervals: usize,
    /// `None` leaves the choice to the subcommand.
    pub template: Option<TemplateKind>,
    pub explicit: Option<ExplicitMatrices>,
    pub tol: f64,
    pub max_iter: usize,
    pub lower: [f64; 2],
    pub multistart: bool,
    /// Optimizer start; `None` leaves the choice to the subcommand.
    pub init: Option<[f64; 2]>,
    /// Parameter used to simulate and to evaluate `Γ`.
    pub q_true: [f64; 2],
    pub sigma: f64,
    pub seed: u64,
    /// Observation counts; `None` leaves the choice to the subcommand.
    pub m: Option<Vec<usize>>,
    pub replicates: usize,
    pub horizon: f64,
    pub quadrature_nodes: usize,
    pub mm: MMParams,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExplicitMatrices {
    pub d: Option<Mat>,
    pub e: Option<Mat>,
    pub f: Option<Vector>,
    pub c: Option<Vector>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitSettings::default();
        Self {
            discretization_k: 32,
            brac_subintervals: 300,
            template: None,
            explicit: None,
            tol: fit.tol,
            max_iter: fit.max_iter,
            lower: fit.lower,
            multistart: fit.multistart,
            init: None,
            q_true: [1.0, 1.0],
            sigma: 0.01,
            seed: 1,
            m: None,
            replicates: 100,
            horizon: 1.0,
            quadrature_nodes: 10_000,
            mm: MMParams::default(),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, String> {
    v.trim().parse::<f64>().map_err(|_| format!("`{key}` expects a number, got `{v}`"))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, String> {
    v.trim().parse::<usize>().map_err(|_| format!("`{key}` expects a nonnegative integer, got `{v}`"))
}

fn parse_list<T>(key: &str, v: &str, item: impl Fn(&str, &str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| item(key, s)).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<[f64; 2], String> {
    match parse_list(key, v, parse_f64)?[..] {
        [a, b] => Ok([a, b]),
        _ => Err(format!("`{key}` expects two comma-separated numbers")),
    }
}

fn parse_matrix(key: &str, v: &str) -> Result<Mat, String> {
    let rows: Vec<Vec<f64>> = v.split(';').map(|r| parse_list(key, r, parse_f64)).collect::<Result<_, _>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(format!("`{key}` must be a square matrix"));
    }
    Ok(Mat::from_fn(n, n, |i, j| rows[i][j]))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{v}`")),
    }
}

impl RunConfig {
    /// Parses a config document on top of the defaults.
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Config { origin: origin.to_string(), line: Some(idx + 1), message };
            let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "k" | "discretization_k" => self.discretization_k = parse_usize(key, v)?,
            "brac_subintervals" => self.brac_subintervals = parse_usize(key, v)?,
            "template" => self.template = Some(v.parse()?),
            "d" => self.explicit.get_or_insert_with(Default::default).d = Some(parse_matrix(key, v)?),
            "e" => self.explicit.get_or_insert_with(Default::default).e = Some(parse_matrix(key, v)?),
            "f" => {
                self.explicit.get_or_insert_with(Default::default).f =
                    Some(Vector::from_vec(parse_list(key, v, parse_f64)?))
            }
            "c" => {
                self.explicit.get_or_insert_with(Default::default).c =
                    Some(Vector::from_vec(parse_list(key, v, parse_f64)?))
            }
            "tol" => self.tol = parse_f64(key, v)?,
            "max_iter" => self.max_iter = parse_usize(key, v)?,
            "lower_q1" => self.lower[0] = parse_f64(key, v)?,
            "lower_q2" => self.lower[1] = parse_f64(key, v)?,
            "multistart" => self.multistart = parse_bool(key, v)?,
            "init" => self.init = Some(parse_pair(key, v)?),
            "q" => self.q_true = parse_pair(key, v)?,
            "sigma" => self.sigma = parse_f64(key, v)?,
            "seed" => self.seed = v.trim().parse().map_err(|_| format!("`seed` expects an integer, got `{v}`"))?,
            "m" => self.m = Some(parse_list(key, v, parse_usize)?),
            "replicates" => self.replicates = parse_usize(key, v)?,
            "horizon" => self.horizon = parse_f64(key, v)?,
            "quadrature_nodes" => self.quadrature_nodes = parse_usize(key, v)?,
            "dose_times" => self.mm.dose_times = parse_list(key, v, parse_f64)?,
            "dose_amount" => self.mm.dose_amount = parse_f64(key, v)?,
            "absorption_rate" => self.mm.absorption_rate = parse_f64(key, v)?,
            "vmax" => self.mm.vmax = parse_f64(key, v)?,
            "km" => self.mm.km = parse_f64(key, v)?,
            "pct_per_drink" => self.mm.pct_per_drink = parse_f64(key, v)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |message: String| Err(CliError::Config { origin: "configuration".into(), line: None, message });
        if self.discretization_k < 2 {
            return bad(format!("k must be >= 2, got {}", self.discretization_k));
        }
        if self.brac_subintervals < 1 {
            return bad("brac_subintervals must be >= 1".into());
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if self.m.as_ref().is_some_and(|m| m.is_empty() || m.contains(&0)) {
            return bad("m must list positive observation counts".into());
        }
        if self.quadrature_nodes < 2 {
            return bad("quadrature_nodes must be >= 2".into());
        }
        Ok(())
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings { tol: self.tol, max_iter: self.max_iter, lower: self.lower, multistart: self.multistart }
    }

    pub fn q_true(&self) -> CliResult<ParamQ> {
        Ok(ParamQ::new(self.q_true[0], self.q_true[1])?)
    }

    pub fn init_or(&self, fallback: ParamQ) -> CliResult<ParamQ> {
        match self.init {
            Some([a, b]) => Ok(ParamQ::new(a, b)?),
            None => Ok(fallback),
        }
    }

    pub fn m_or(&self, fallback: &[usize]) -> Vec<usize> {
        self.m.clone().unwrap_or_else(|| fallback.to_vec())
    }

    pub fn template_kind(&self, fallback: TemplateKind) -> TemplateKind {
        self.template.unwrap_or(fallback)
    }

    pub fn build_template(&self, kind: TemplateKind) -> CliResult<SystemTemplate> {
        Ok(match kind {
            TemplateKind::Pde => discretize_pde(self.discretization_k)?,
            TemplateKind::Minimal => SystemTemplate::minimal(),
            TemplateKind::Explicit => {
                let missing = || CliError::Config {
                    origin: "configuration".into(),
                    line: None,
                    message: "explicit template needs all of d, e, f, c".into(),
                };
                let x = self.explicit.as_ref().ok_or_else(missing)?;
                match (&x.d, &x.e, &x.f, &x.c) {
                    (Some(d), Some(e), Some(f), Some(c)) => {
                        SystemTemplate::new(d.clone(), e.clone(), f.clone(), c.clone())?
                    }
                    _ => return Err(missing()),
                }
            }
        })
    }
}
