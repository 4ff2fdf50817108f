//! Bounds-versus-θ curve and the local-model validation suite, with their
//! serialized forms.

use std::f64::consts::FRAC_PI_4;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chained::optimize_chained;
use crate::decomposition::{family_sigma, lower_bound_formula, statistical_verdict, Verdict};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{sample_sphere, RandomStream, SettingPair, StateParam};
use crate::local_model::{correlator_l_capint, correlator_l_closed, correlator_l_mc, marginal_l_mc};
use crate::search::{linspace, SearchConfig};

pub const CURVE_SCHEMA: &str = "epr2-curve/1";
pub const VALIDATION_SCHEMA: &str = "epr2-mc-validate/1";

/// Chained-inequality size used for the upper bound unless configured.
pub const DEFAULT_CURVE_N: usize = 12;

/// Above this `c` the local model no longer reaches `p_L = c`.
pub const EXACT_C_MAX: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub theta: f64,
    pub c: f64,
    pub s: f64,
    /// `1 − s`, the earlier lower bound.
    pub lower_old: f64,
    pub lower_new: f64,
    pub upper_chained: f64,
    /// Local content where it is known exactly (`c ≤ 0.8`).
    pub exact: Option<f64>,
}

impl CurvePoint {
    pub fn new(state: &StateParam, upper_chained: f64) -> Self {
        let (c, s) = (state.c(), state.s());
        Self {
            theta: state.theta(),
            c,
            s,
            lower_old: 1.0 - s,
            lower_new: lower_bound_formula(state),
            upper_chained,
            exact: (c <= EXACT_C_MAX).then_some(c),
        }
    }
}

/// Evenly spaced θ over `[0, π/4]`, both ends included.
pub fn theta_grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::Config("curve needs at least two points".into()));
    }
    Ok(linspace(0.0, FRAC_PI_4, points))
}

pub fn compute_curve(thetas: &[f64], n: usize, cfg: &SearchConfig) -> Result<Vec<CurvePoint>> {
    let inner = SearchConfig {
        exec: Exec::Sequential,
        ..*cfg
    };
    cfg.exec
        .map_slice(thetas, |&theta| {
            let state = StateParam::from_theta(theta)?;
            let chained = optimize_chained(&state, n, &inner)?;
            Ok(CurvePoint::new(&state, chained.upper_bound))
        })
        .into_iter()
        .collect()
}

/// Write the curve as CSV. Two comment lines carry the schema and, when
/// given, the manifest file describing the run.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], manifest: Option<&str>, out: W) -> Result<()> {
    let mut out = out;
    writeln!(out, "# schema: {CURVE_SCHEMA}")?;
    if let Some(m) = manifest {
        writeln!(out, "# manifest: {m}")?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["theta", "c", "s", "lower_old", "lower_new", "upper_chained", "exact"])?;
    let f = |x: f64| format!("{x:.12}");
    for p in points {
        w.write_record([
            f(p.theta),
            f(p.c),
            f(p.s),
            f(p.lower_old),
            f(p.lower_new),
            f(p.upper_chained),
            p.exact.map(f).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    /// Random pairs compared against the cap-intersection quadrature.
    pub capint_pairs: usize,
    pub capint_tol: f64,
    /// Random pairs compared against Monte Carlo.
    pub mc_pairs: usize,
    /// Random settings whose Monte Carlo marginal is checked.
    pub marginal_vectors: usize,
    pub samples: usize,
    pub k_sigma: f64,
    pub resolution: f64,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            capint_pairs: 1000,
            capint_tol: 1e-8,
            mc_pairs: 100,
            marginal_vectors: 50,
            samples: 1_000_000,
            k_sigma: 4.0,
            resolution: 0.01,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapintSummary {
    pub pairs: usize,
    pub max_deviation: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub cases: usize,
    pub samples: usize,
    /// Largest `|estimate − exact|`.
    pub max_deviation: f64,
    /// Largest deviation in standard errors.
    pub max_z: f64,
    /// Cases within `k_sigma` standard errors.
    pub covered: usize,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub schema: String,
    pub config: ValidationConfig,
    pub capint: CapintSummary,
    pub correlator_mc: McSummary,
    pub marginal_mc: McSummary,
    pub verdict: Verdict,
}

/// Closed-form local correlator against quadrature and Monte Carlo, and
/// Monte Carlo marginals against `v_z`.
pub fn validate_local_model(cfg: &ValidationConfig) -> Result<ValidationReport> {
    if cfg.samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    let root = RandomStream::new(cfg.seed);
    let random_pairs = |tag: u64, n: usize| -> Vec<SettingPair> {
        let mut rng = root.split(tag).rng();
        (0..n)
            .map(|_| SettingPair::new(sample_sphere(&mut rng), sample_sphere(&mut rng)))
            .collect()
    };

    let pairs = random_pairs(1, cfg.capint_pairs);
    let devs = cfg.exec.map_slice(&pairs, |p| -> Result<f64> {
        let quad = correlator_l_capint(p, cfg.capint_tol * 0.1)?;
        Ok((quad.value() - correlator_l_closed(p).value()).abs())
    });
    let max_dev = devs
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let capint = CapintSummary {
        pairs: cfg.capint_pairs,
        max_deviation: max_dev,
        verdict: if max_dev <= cfg.capint_tol {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
    };

    let mc_root = root.split(2);
    let pairs = random_pairs(3, cfg.mc_pairs);
    let corr = (0..pairs.len())
        .map(|i| {
            let est = correlator_l_mc(&pairs[i], cfg.samples, &mc_root.split(i as u64), cfg.exec);
            (est.mean, est.std_err, correlator_l_closed(&pairs[i]).value())
        })
        .collect::<Vec<_>>();
    let correlator_mc = summarize(&corr, cfg);

    let marg_root = root.split(4);
    let vectors = random_pairs(5, cfg.marginal_vectors);
    let marg = (0..vectors.len())
        .map(|i| {
            let v = vectors[i].a;
            let est = marginal_l_mc(&v, cfg.samples, &marg_root.split(i as u64), cfg.exec);
            (est.mean, est.std_err, v.z())
        })
        .collect::<Vec<_>>();
    let marginal_mc = summarize(&marg, cfg);

    let verdict = capint.verdict.max(correlator_mc.verdict).max(marginal_mc.verdict);
    Ok(ValidationReport {
        schema: VALIDATION_SCHEMA.to_string(),
        config: *cfg,
        capint,
        correlator_mc,
        marginal_mc,
        verdict,
    })
}

/// `(estimate, std_err, exact)` triples to a summary. The standard error of
/// a ±1 average is floored at `2/n`, so that a run that happens to see a
/// single outcome is not taken as exact.
fn summarize(cases: &[(f64, f64, f64)], cfg: &ValidationConfig) -> McSummary {
    let k = family_sigma(cfg.k_sigma, cases.len());
    let floor = 2.0 / cfg.samples as f64;
    let mut out = McSummary {
        cases: cases.len(),
        samples: cfg.samples,
        max_deviation: 0.0,
        max_z: 0.0,
        covered: 0,
        verdict: Verdict::Pass,
    };
    for &(mean, se, exact) in cases {
        let dev = (mean - exact).abs();
        let se = se.max(floor);
        out.max_deviation = out.max_deviation.max(dev);
        out.max_z = out.max_z.max(dev / se);
        out.covered += usize::from(dev <= cfg.k_sigma * se);
        out.verdict = out.verdict.max(statistical_verdict(dev, se, k, 0.0, cfg.resolution));
    }
    out
}
