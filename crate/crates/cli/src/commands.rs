use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use tac_core::diffusion::{realize, tac_series};
use tac_core::mestim::{covariance, fit, gamma_lebesgue, gamma_n, limiting_sigma};
use tac_core::simkit::{mm_brac, mm_profile, monte_carlo, synthesize, synthesize_at};
use tac_core::{BracCurve, Dataset, Error, Matrix2, McSettings, ParamQ, SystemTemplate};

use crate::config::{RunConfig, TemplateKind};
use crate::error::{CliError, CliResult};
use crate::io::{self, brac_curve, load_session, read_table, write_table, BRAC_HEADER, FIT_HEADER, TAC_HEADER};
use crate::report::{mat2, EllipseReport, EstimateReport, McRow, McTableReport, ReplicateLine, TemplateInfo};

#[derive(Debug, Parser)]
#[command(name = "tacfit", version, about = "Fit and simulate the transdermal alcohol diffusion model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit (q1, q2) to a TAC/BrAC session and write a report.
    Estimate(Common),
    /// Write a synthetic session: Michaelis–Menten BrAC and noisy TAC.
    Simulate(Common),
    /// Monte-Carlo sampling distribution of the estimator.
    McTable(Common),
    /// Limiting information matrix and asymptotic covariance.
    Gamma(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// TAC table (`time_hours,tac_mg_dl`).
    #[arg(long)]
    pub tac: Option<PathBuf>,
    /// BrAC table (`time_hours,brac_pct`).
    #[arg(long)]
    pub brac: Option<PathBuf>,
    /// Flat `key = value` configuration; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Spatial grid size of the diffusion discretization.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standard deviation of the TAC measurement noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Observation counts, comma separated.
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `pde`, `minimal` or `explicit`.
    #[arg(long)]
    pub template: Option<String>,
    /// Parameter `q1,q2` to simulate at or evaluate `Γ` at.
    #[arg(long, allow_hyphen_values = true)]
    pub q: Option<String>,
    /// Optimizer start `q1,q2`.
    #[arg(long, allow_hyphen_values = true)]
    pub init: Option<String>,
}

impl Common {
    pub fn config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                RunConfig::parse(&text, &path.display().to_string())?
            }
            None => RunConfig::default(),
        };
        let flags: [(&str, Option<String>); 8] = [
            ("k", self.k.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("sigma", self.sigma.map(|v| v.to_string())),
            ("m", self.m.clone()),
            ("replicates", self.replicates.map(|v| v.to_string())),
            ("template", self.template.clone()),
            ("q", self.q.clone()),
            ("init", self.init.clone()),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v).map_err(|message| CliError::Config {
                    origin: format!("--{key}"),
                    line: None,
                    message,
                })?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> CliResult<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        Ok(dir)
    }
}

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> u8 {
    let result = match cli.command {
        Command::Estimate(c) => estimate(&c),
        Command::Simulate(c) => simulate(&c),
        Command::McTable(c) => mc_table(&c),
        Command::Gamma(c) => gamma(&c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn missing(flag: &str) -> CliError {
    CliError::Config { origin: format!("--{flag}"), line: None, message: "this option is required".into() }
}

fn template_info(cfg: &RunConfig, kind: TemplateKind, template: &SystemTemplate) -> TemplateInfo {
    TemplateInfo {
        kind: kind.name().into(),
        k: (kind == TemplateKind::Pde).then_some(cfg.discretization_k),
        dim: template.dim(),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn fmt_mat(m: &Matrix2<f64>) -> String {
    format!(
        "[[{:>12.6}, {:>12.6}]\n [{:>12.6}, {:>12.6}]]",
        m[(0, 0)],
        m[(0, 1)],
        m[(1, 0)],
        m[(1, 1)]
    )
}

/// The BrAC input for the simulation-side commands: a table when one is
/// given, else the configured Michaelis–Menten curve over `horizon`.
fn input_curve(common: &Common, cfg: &RunConfig, warnings: &mut Vec<String>) -> CliResult<BracCurve> {
    match &common.brac {
        Some(path) => {
            let table = read_table(path, BRAC_HEADER, warnings)?;
            let mut horizon = *table.times.last().unwrap();
            if let Some(tac) = &common.tac {
                let t = read_table(tac, TAC_HEADER, warnings)?;
                horizon = horizon.max(*t.times.last().unwrap());
            }
            brac_curve(&table, horizon, cfg.brac_subintervals)
        }
        None => Ok(mm_brac(&cfg.mm, cfg.horizon, cfg.brac_subintervals)?),
    }
}

pub fn estimate(common: &Common) -> CliResult<u8> {
    let cfg = common.config()?;
    let tac_path = common.tac.as_ref().ok_or_else(|| missing("tac"))?;
    let brac_path = common.brac.as_ref().ok_or_else(|| missing("brac"))?;
    let out = common.out_dir()?;

    let mut warnings = Vec::new();
    let (session, _) = load_session(tac_path, brac_path, cfg.brac_subintervals, &mut warnings)?;
    let kind = cfg.template_kind(TemplateKind::Pde);
    let template = cfg.build_template(kind)?;
    let init = cfg.init_or(ParamQ::new(1.0, 1.0)?)?;
    let data = Dataset::single(session.clone())?;
    let res = fit(&template, &data, init, &cfg.fit_settings())?;
    warnings.extend(res.warnings.iter().cloned());

    let mut notes = Vec::new();
    let first = session.times()[0];
    if first > 0.0 {
        notes.push(format!(
            "first TAC observation at {first} h; the model is driven by the interpolated BrAC from t = 0 \
             with zero initial state, and every TAC observation is fitted"
        ));
    }
    let brac_first = read_table(brac_path, BRAC_HEADER, &mut Vec::new())?.times[0];
    if brac_first > 0.0 {
        notes.push(format!("BrAC is taken as 0 before its first reading at {brac_first} h"));
    }

    let (cov, ellipse) = match covariance(&res, res.observations) {
        Ok(c) => (Some(mat2(&c.matrix)), Some(EllipseReport::from(&c.ellipse))),
        Err(Error::Identifiability { reason, condition }) => {
            notes.push(format!("covariance unavailable: {reason} (condition {condition:e})"));
            (None, None)
        }
        Err(e) => return Err(e.into()),
    };

    let fitted = tac_series(&realize(&template, res.q_hat), session.brac(), session.times())?;
    let residuals: Vec<f64> = session.tac_values().iter().zip(&fitted).map(|(y, f)| y - f).collect();
    write_table(
        &out.join("fit.csv"),
        FIT_HEADER,
        session.times().iter().zip(session.tac_values()).zip(&fitted).map(|((&t, &y), &f)| [t, y, f]),
    )?;

    let report = EstimateReport {
        template: template_info(&cfg, kind, &template),
        horizon_hours: session.horizon(),
        brac_subintervals: cfg.brac_subintervals,
        observations: res.observations,
        init: init.to_array(),
        q_hat: res.q_hat.to_array(),
        sigma2_hat: res.sigma2_hat,
        objective: res.objective_value,
        gamma_hat: mat2(&res.gamma_hat),
        gamma_condition: res.gamma_condition,
        covariance: cov,
        ellipse,
        converged: res.converged,
        iterations: res.iterations,
        gradient_norm: res.gradient_norm,
        residuals,
        notes,
        warnings,
    };
    write_json(&out.join("report.json"), &report)?;

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("q_hat      = ({:.6}, {:.6})", report.q_hat[0], report.q_hat[1]);
    println!("sigma2_hat = {:.6e}", report.sigma2_hat);
    match &res.cov_qhat {
        Some(c) => println!("covariance =\n{}", fmt_mat(c)),
        None => println!("covariance unavailable"),
    }
    println!("converged  = {} ({} iterations, |score| = {:.3e})", res.converged, res.iterations, res.gradient_norm);
    if res.converged {
        Ok(0)
    } else {
        eprintln!("error: optimizer did not converge; report written");
        Ok(2)
    }
}

pub fn simulate(common: &Common) -> CliResult<u8> {
    let cfg = common.config()?;
    let m = match cfg.m_or(&[100])[..] {
        [m] => m,
        ref many => {
            return Err(CliError::Config {
                origin: "m".into(),
                line: None,
                message: format!("simulate takes a single observation count, got {many:?}"),
            })
        }
    };
    let out = common.out_dir()?;
    let kind = cfg.template_kind(TemplateKind::Minimal);
    let template = cfg.build_template(kind)?;
    let q = cfg.q_true()?;

    let mut warnings = Vec::new();
    let (curve, brac_rows): (BracCurve, Vec<[f64; 2]>) = match &common.brac {
        Some(path) => {
            let table = io::read_table(path, BRAC_HEADER, &mut warnings)?;
            let rows = table.times.iter().zip(&table.values).map(|(&t, &v)| [t, v]).collect();
            (input_curve(common, &cfg, &mut warnings)?, rows)
        }
        None => {
            let nodes = mm_profile(&cfg.mm, cfg.horizon, cfg.brac_subintervals)?;
            let n = cfg.brac_subintervals;
            let rows = nodes
                .iter()
                .enumerate()
                .map(|(i, &c)| [if i == n { cfg.horizon } else { cfg.horizon * i as f64 / n as f64 }, c])
                .collect();
            (mm_brac(&cfg.mm, cfg.horizon, n)?, rows)
        }
    };
    let session = match &common.tac {
        Some(path) => {
            let times = read_table(path, TAC_HEADER, &mut warnings)?.times;
            synthesize_at(&template, q, &curve, times, cfg.sigma, cfg.seed)?
        }
        None => synthesize(&template, q, &curve, m, cfg.sigma, cfg.seed)?,
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    write_table(&out.join("brac.csv"), BRAC_HEADER, brac_rows)?;
    write_table(
        &out.join("tac.csv"),
        TAC_HEADER,
        session.times().iter().zip(session.tac_values()).map(|(&t, &y)| [t, y]),
    )?;
    println!(
        "wrote {} TAC rows at q = ({}, {}), sigma = {}, seed = {} to {}",
        session.len(),
        q.q1(),
        q.q2(),
        cfg.sigma,
        cfg.seed,
        out.display()
    );
    Ok(0)
}

pub fn mc_table(common: &Common) -> CliResult<u8> {
    let cfg = common.config()?;
    let out = common.out_dir()?;
    let kind = cfg.template_kind(TemplateKind::Minimal);
    let template = cfg.build_template(kind)?;
    let q0 = cfg.q_true()?;
    let mut warnings = Vec::new();
    let curve = input_curve(common, &cfg, &mut warnings)?;
    let gamma = gamma_lebesgue(&template, q0, &curve, cfg.quadrature_nodes)?;
    let theory = limiting_sigma(cfg.sigma, &gamma)?;

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    let mut aborted = Vec::new();
    let mut table = String::new();
    writeln!(table, "{:>6} {:>22} {:>22} {:>11} {:>11} {:>11} {:>8} {:>9} {:>5}",
        "m", "q1 mean ± sd", "q2 mean ± sd", "S11", "S12", "S22", "frob", "KS p", "fail").unwrap();
    for m in cfg.m_or(&[20, 60, 100]) {
        let settings = McSettings {
            m,
            sigma: cfg.sigma,
            replicates: cfg.replicates,
            seed: cfg.seed,
            init: cfg.init.map(|[a, b]| ParamQ::new(a, b)).transpose()?,
            fit: cfg.fit_settings(),
            quadrature_nodes: cfg.quadrature_nodes,
            ..Default::default()
        };
        let report = match monte_carlo(&template, q0, &curve, &settings) {
            Ok(r) => r,
            Err(Error::TooManyFailures { failed, total }) => {
                eprintln!("error: m = {m}: {failed} of {total} fits failed");
                aborted.push(m);
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let s = &report.scaled_cov;
        let opt = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.p$}"));
        writeln!(
            table,
            "{:>6} {:>22} {:>22} {:>11.4} {:>11.4} {:>11.4} {:>8} {:>9} {:>5}",
            m,
            format!("{:.4} ± {:.4}", report.mean_qhat[0], report.sd_qhat[0]),
            format!("{:.4} ± {:.4}", report.mean_qhat[1], report.sd_qhat[1]),
            s[(0, 0)],
            s[(0, 1)],
            s[(1, 1)],
            opt(report.frobenius_rel_error, 4),
            opt(report.mahalanobis_ks_pvalue, 4),
            report.failures
        )
        .unwrap();
        for r in &report.rows {
            lines.push(ReplicateLine {
                m,
                index: r.index,
                seed: r.seed,
                q1_hat: r.q_hat[0],
                q2_hat: r.q_hat[1],
                sigma2_hat: r.sigma2_hat,
                converged: r.converged,
                covers_truth: r.covers_truth,
            });
        }
        rows.push(McRow {
            m,
            failures: report.failures,
            mean_qhat: report.mean_qhat,
            sd_qhat: report.sd_qhat,
            scaled_cov: mat2(s),
            frobenius_rel_error: report.frobenius_rel_error,
            mahalanobis_ks_statistic: report.mahalanobis_ks_statistic,
            mahalanobis_ks_pvalue: report.mahalanobis_ks_pvalue,
            mean_sigma2_hat: report.mean_sigma2_hat,
            coverage: report.coverage,
            bias_norm: report.bias_norm(),
            bias_standard_error: report.bias_standard_error(),
        });
    }
    print!("{table}");
    println!("theoretical sigma^2 Gamma^-1 =\n{}", fmt_mat(&theory));

    let path = out.join("replicates.csv");
    let mut writer = csv::Writer::from_path(&path).map_err(|e| CliError::Table { path: path.clone(), message: e.to_string() })?;
    for line in &lines {
        writer.serialize(line).map_err(|e| CliError::Table { path: path.clone(), message: e.to_string() })?;
    }
    writer.flush().map_err(|e| CliError::io(&path, e))?;
    write_json(
        &out.join("mc_report.json"),
        &McTableReport {
            template: template_info(&cfg, kind, &template),
            q0: q0.to_array(),
            sigma: cfg.sigma,
            replicates: cfg.replicates,
            seed: cfg.seed,
            theoretical_sigma: mat2(&theory),
            rows,
            aborted: aborted.clone(),
        },
    )?;
    Ok(if aborted.is_empty() { 0 } else { 2 })
}

pub fn gamma(common: &Common) -> CliResult<u8> {
    let cfg = common.config()?;
    let kind = cfg.template_kind(TemplateKind::Minimal);
    let template = cfg.build_template(kind)?;
    let q = cfg.q_true()?;
    let mut warnings = Vec::new();
    let curve = input_curve(common, &cfg, &mut warnings)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    let g = gamma_lebesgue(&template, q, &curve, cfg.quadrature_nodes)?;
    println!("Gamma (uniform sampling on [0, {}], q = ({}, {})) =\n{}", curve.horizon(), q.q1(), q.q2(), fmt_mat(&g));
    let sigma = limiting_sigma(cfg.sigma, &g)?;
    println!("sigma^2 Gamma^-1 (sigma = {}) =\n{}", cfg.sigma, fmt_mat(&sigma));

    if let (Some(tac), Some(brac)) = (&common.tac, &common.brac) {
        let (session, _) = load_session(tac, brac, cfg.brac_subintervals, &mut Vec::new())?;
        let empirical = gamma_n(&template, &Dataset::single(session)?, q)?;
        println!("Gamma_n (observation times of {}) =\n{}", tac.display(), fmt_mat(&empirical));
    }
    Ok(0)
}
