//! Regenerates the synthetic sample session in `data/`: 27 BrAC readings
//! about ten minutes apart from the start of drinking, and 29 TAC readings
//! from 67 minutes to 6.3 hours, produced by the diffusion model at
//! `q = (0.6341, 0.7826)` on a 32-node grid plus measurement noise.
//!
//! `cargo run -p tac-cli --example make_sample -- crates/cli/data`

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tac_cli::io::{brac_curve, write_table, Table, BRAC_HEADER, TAC_HEADER};
use tac_core::diffusion::discretize_pde;
use tac_core::simkit::{mm_profile, synthesize_at};
use tac_core::{MMParams, ParamQ};

const HORIZON: f64 = 6.3;
const GRID: usize = 6300;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).ok_or("usage: make_sample <out dir>")?);
    let mut rng = ChaCha8Rng::seed_from_u64(311);

    let mm = MMParams {
        dose_times: vec![0.05, 0.3, 0.55],
        dose_amount: 1.0,
        absorption_rate: 5.0,
        vmax: 0.026,
        km: 0.005,
        pct_per_drink: 0.025,
    };
    let profile = mm_profile(&mm, HORIZON, GRID)?;
    let at = |t: f64| profile[(t / HORIZON * GRID as f64).round() as usize];

    let brac_times: Vec<f64> = (0..27)
        .map(|i| if i == 0 { 0.0 } else { (i as f64 * 10.0 + rng.random_range(-2.0..2.0)) / 60.0 })
        .map(|t: f64| (t * 1e4).round() / 1e4)
        .collect();
    // Breathalyzer resolution.
    let brac_values: Vec<f64> = brac_times.iter().map(|&t| (at(t) * 1e3).round() / 1e3).collect();
    let brac = Table { times: brac_times, values: brac_values };

    let first = 67.0 / 60.0;
    let step = (HORIZON - first) / 28.0;
    let tac_times: Vec<f64> = (0..29)
        .map(|j| match j {
            0 => first,
            28 => HORIZON,
            _ => first + j as f64 * step + rng.random_range(-1.5..1.5) / 60.0,
        })
        .map(|t: f64| (t * 1e4).round() / 1e4)
        .collect();

    let template = discretize_pde(32)?;
    let q = ParamQ::new(0.6341, 0.7826)?;
    let curve = brac_curve(&brac, HORIZON, 300)?;
    let clean = synthesize_at(&template, q, &curve, tac_times.clone(), 0.0, 0)?;
    let peak = clean.tac_values().iter().cloned().fold(0.0, f64::max);
    let noisy = synthesize_at(&template, q, &curve, tac_times, 0.02 * peak, 312)?;
    let tac_values: Vec<f64> = noisy.tac_values().iter().map(|v| (v.max(0.0) * 1e4).round() / 1e4).collect();

    write_table(
        &dir.join("bt311_like_brac.csv"),
        BRAC_HEADER,
        brac.times.iter().zip(&brac.values).map(|(&t, &v)| [t, v]),
    )?;
    write_table(
        &dir.join("bt311_like_tac.csv"),
        TAC_HEADER,
        noisy.times().iter().zip(&tac_values).map(|(&t, &v)| [t, v]),
    )?;
    println!("peak BrAC {:.3} %, peak TAC {peak:.4}", brac.values.iter().cloned().fold(0.0, f64::max));
    Ok(())
}
