//! `epr2`: verification runs, bound curves and two-vector model checks.
//!
//! Exit codes: 0 pass, 2 violation found, 3 inconclusive, 1 usage or
//! internal error.

mod args;
mod output;

use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::Serialize;

use epr2_core::chained::optimize_chained;
use epr2_core::decomposition::{epr2_verify, lower_bound_formula, max_local_weight, ratio_bound, Verdict};
use epr2_core::density::{Density, DensityGrid};
use epr2_core::report::{compute_curve, theta_grid, validate_local_model, write_curve_csv, ValidationConfig};
use epr2_core::search::{linspace, SearchConfig};
use epr2_core::two_lambda::{
    allowed_pair, density_check, forbidden_witness, induced_epr2_check, region_volume, truncated_product,
    InducedCheckConfig, LambdaPair, PairStatus, WitnessConfig,
};
use epr2_core::{geometry::sample_sphere, RandomStream, StateParam};

use args::{Cli, Command, DensityKind, Global, TwoLambda};
use output::{Emitter, RunManifest};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(v) => ExitCode::from(exit_code(v)),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn exit_code(v: Verdict) -> u8 {
    match v {
        Verdict::Pass => 0,
        Verdict::Fail => 2,
        Verdict::Inconclusive => 3,
    }
}

/// `EPR2_THREADS` caps the worker pool.
fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("EPR2_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("EPR2_THREADS must be a positive integer, got '{raw}'"))?;
    if n == 0 {
        bail!("EPR2_THREADS must be at least 1");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")?;
    Ok(())
}

fn search_config(g: &Global) -> SearchConfig {
    let mut cfg = SearchConfig {
        seed: g.seed,
        exec: g.exec(),
        ..SearchConfig::default()
    };
    if let Some(grid) = g.grid {
        cfg.grid = grid.0;
    }
    if let Some(n) = g.refine_iters {
        cfg.refine_iters = n;
    }
    if let Some(t) = g.tol {
        cfg.tolerance = t;
    }
    cfg
}

#[derive(Serialize)]
struct LocalWeightOutput {
    c: f64,
    s: f64,
    p_l: f64,
    lower_bound_formula: f64,
    ratio_bound: f64,
    one_minus_s: f64,
    report: epr2_core::decomposition::LocalWeight,
}

#[derive(Serialize)]
struct WitnessOutput {
    s: f64,
    pair: LambdaPair,
    ratio: Option<f64>,
    status: PairStatus,
    witness: Option<[f64; 3]>,
}

#[derive(Serialize)]
struct WitnessSweep {
    s: f64,
    pairs: usize,
    boundary_band: f64,
    skipped_in_band: usize,
    agreements: usize,
    agreement_fraction: f64,
    verdict: Verdict,
}

#[derive(Serialize)]
struct VolumePoint {
    s: f64,
    fraction: f64,
    std_err: f64,
    samples: usize,
}

#[derive(Serialize)]
struct DensityOutput {
    file: String,
    constraints: epr2_core::two_lambda::DensityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    induced: Option<epr2_core::two_lambda::InducedReport>,
    verdict: Verdict,
}

fn run(cli: Cli) -> Result<Verdict> {
    let started = Instant::now();
    let g = cli.global.clone();
    let mut em = Emitter::new(&g);
    let mut manifest = RunManifest::new(&cli);

    let verdict = match &cli.command {
        Command::Verify { state, pl } => {
            let state = state.resolve()?;
            let p_l = pl.unwrap_or(state.c());
            let report = epr2_verify(&state, p_l, &search_config(&g))?;
            eprintln!(
                "c = {:.6}, p_L = {p_l:.6}: {:?}, max |E_Q - c E_L| = {:.6}",
                report.c, report.verdict, report.bound_gap_max
            );
            em.json("epr2-verify/1", &report)?;
            manifest.verdict("verify", report.verdict);
            report.verdict
        }
        Command::Curve { points } => {
            let n = g.n_settings.unwrap_or(epr2_core::report::DEFAULT_CURVE_N);
            let thetas = theta_grid(*points)?;
            let pts = compute_curve(&thetas, n, &search_config(&g))?;
            manifest.set("n_settings", n);
            if g.json {
                em.json("epr2-curve/1", &pts)?;
            } else {
                let mut buf = Vec::new();
                write_curve_csv(&pts, em.manifest_name().as_deref(), &mut buf)?;
                em.raw(buf)?;
            }
            Verdict::Pass
        }
        Command::McValidate {} => {
            let cfg = ValidationConfig {
                samples: g.samples.unwrap_or(ValidationConfig::default().samples),
                capint_tol: g.tol.unwrap_or(ValidationConfig::default().capint_tol),
                seed: g.seed,
                exec: g.exec(),
                ..ValidationConfig::default()
            };
            let report = validate_local_model(&cfg)?;
            eprintln!(
                "quadrature max dev {:.2e}; correlator max z {:.2}; marginal max z {:.2}: {:?}",
                report.capint.max_deviation, report.correlator_mc.max_z, report.marginal_mc.max_z, report.verdict
            );
            em.json_flat(&report)?;
            manifest.verdict("mc-validate", report.verdict);
            report.verdict
        }
        Command::Chained { state } => {
            let state = state.resolve()?;
            let n = g.n_settings.unwrap_or(epr2_core::report::DEFAULT_CURVE_N);
            let report = optimize_chained(&state, n, &search_config(&g))?;
            eprintln!("N = {n}: I_Q = {:.9}, p_L <= {:.9}", report.i_q, report.upper_bound);
            em.json("epr2-chained/1", &report)?;
            Verdict::Pass
        }
        Command::LocalWeight { state } => {
            let state = state.resolve()?;
            let lw = max_local_weight(&state, &search_config(&g));
            eprintln!("c = {:.6}: p_L = {:.6}", state.c(), lw.value);
            em.json(
                "epr2-local-weight/1",
                &LocalWeightOutput {
                    c: state.c(),
                    s: state.s(),
                    p_l: lw.value,
                    lower_bound_formula: lower_bound_formula(&state),
                    ratio_bound: ratio_bound(&state),
                    one_minus_s: 1.0 - state.s(),
                    report: lw,
                },
            )?;
            Verdict::Pass
        }
        Command::TwoLambda(sub) => two_lambda(sub, &g, &mut em, &mut manifest)?,
    };

    manifest.finish(started.elapsed().as_secs_f64(), verdict);
    em.finish(&manifest)?;
    Ok(verdict)
}

fn two_lambda(sub: &TwoLambda, g: &Global, em: &mut Emitter, manifest: &mut RunManifest) -> Result<Verdict> {
    match sub {
        TwoLambda::CheckDensity { state, file, induced } => {
            let state = state.resolve()?;
            let rho = Density::read_csv(file).with_context(|| format!("reading {}", file.display()))?;
            let tol = g.tol.unwrap_or(1e-6);
            let constraints = density_check(&state, &rho, tol, g.exec())?;
            let mut verdict = if constraints.all_pass() {
                Verdict::Pass
            } else {
                Verdict::Fail
            };
            let induced = if *induced {
                let mut cfg = InducedCheckConfig {
                    seed: g.seed,
                    exec: g.exec(),
                    ..Default::default()
                };
                if let Some(n) = g.samples {
                    cfg.samples = n;
                }
                if let Some(grid) = g.grid {
                    cfg.grid = grid.0;
                }
                let r = induced_epr2_check(&state, &rho, &cfg)?;
                verdict = verdict.max(r.verdict);
                Some(r)
            } else {
                None
            };
            for c in &constraints.checks {
                eprintln!(
                    "{:<18} {:<4} worst {:.3e}",
                    c.name,
                    if c.pass { "ok" } else { "FAIL" },
                    c.worst
                );
            }
            manifest.verdict("check-density", verdict);
            em.json(
                "epr2-density-check/1",
                &DensityOutput {
                    file: file.display().to_string(),
                    constraints,
                    induced,
                    verdict,
                },
            )?;
            Ok(verdict)
        }
        TwoLambda::Witness { state, pair } => {
            let state = state.resolve()?;
            let cfg = WitnessConfig::default();
            match pair {
                Some(p) => {
                    let lp = LambdaPair::new(
                        epr2_core::BlochVector::from_spherical(p.0[0], p.0[1]),
                        epr2_core::BlochVector::from_spherical(p.0[2], p.0[3]),
                    );
                    let w = forbidden_witness(&state, &lp, &cfg);
                    let out = WitnessOutput {
                        s: state.s(),
                        pair: lp,
                        ratio: lp.ratio(),
                        status: allowed_pair(&state, &lp),
                        witness: w.map(|a| a.to_array()),
                    };
                    eprintln!("ratio {:?}, {:?}, witness {:?}", out.ratio, out.status, out.witness);
                    em.json("epr2-witness/1", &out)?;
                    Ok(Verdict::Pass)
                }
                None => {
                    let n = g.samples.unwrap_or(1000);
                    let band = 0.02;
                    let mut rng = RandomStream::new(g.seed).split(0x3117).rng();
                    let mut pairs = Vec::with_capacity(n);
                    let mut skipped = 0;
                    while pairs.len() < n {
                        let lp = LambdaPair::new(sample_sphere(&mut rng), sample_sphere(&mut rng));
                        match lp.ratio() {
                            Some(r) if (r - state.s()).abs() >= band => pairs.push(lp),
                            _ => skipped += 1,
                        }
                    }
                    let agree = g
                        .exec()
                        .map_slice(&pairs, |lp| {
                            let forbidden = allowed_pair(&state, lp) == PairStatus::Forbidden;
                            forbidden == forbidden_witness(&state, lp, &cfg).is_some()
                        })
                        .into_iter()
                        .filter(|&x| x)
                        .count();
                    let frac = agree as f64 / n as f64;
                    let verdict = if frac >= 0.99 { Verdict::Pass } else { Verdict::Fail };
                    eprintln!("witness/predicate agreement {agree}/{n}");
                    manifest.verdict("witness-sweep", verdict);
                    em.json(
                        "epr2-witness-sweep/1",
                        &WitnessSweep {
                            s: state.s(),
                            pairs: n,
                            boundary_band: band,
                            skipped_in_band: skipped,
                            agreements: agree,
                            agreement_fraction: frac,
                            verdict,
                        },
                    )?;
                    Ok(verdict)
                }
            }
        }
        TwoLambda::RegionVolume { state, points } => {
            let n = g.samples.unwrap_or(1_000_000);
            let states = match state.resolve_opt()? {
                Some(s) => vec![s],
                None => linspace(0.0, 1.0, *points)
                    .into_iter()
                    .map(StateParam::from_s)
                    .collect::<Result<_, _>>()?,
            };
            let root = RandomStream::new(g.seed);
            let out: Vec<VolumePoint> = states
                .iter()
                .enumerate()
                .map(|(i, st)| {
                    let e = region_volume(st, n, &root.split(i as u64), g.exec());
                    VolumePoint {
                        s: st.s(),
                        fraction: e.mean,
                        std_err: e.std_err,
                        samples: n,
                    }
                })
                .collect();
            for p in &out {
                eprintln!("s = {:.4}: allowed fraction {:.6} ± {:.1e}", p.s, p.fraction, p.std_err);
            }
            em.json("epr2-region-volume/1", &out)?;
            Ok(Verdict::Pass)
        }
        TwoLambda::MakeDensity {
            kind,
            state,
            n_theta,
            n_phi,
        } => {
            let rho = match kind {
                DensityKind::Diagonal => Density::Diagonal,
                DensityKind::Uniform => Density::Grid(DensityGrid::uniform(*n_theta, *n_phi)),
                DensityKind::Truncated => {
                    let state = state
                        .resolve_opt()?
                        .context("a truncated density needs --theta, --c or --s")?;
                    Density::Grid(truncated_product(&state, *n_theta, *n_phi)?)
                }
            };
            let mut buf = Vec::new();
            rho.write_csv(&mut buf)?;
            em.raw(buf)?;
            Ok(Verdict::Pass)
        }
    }
}
