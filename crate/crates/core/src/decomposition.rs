//! Splitting the quantum statistics into a weighted local part (the
//! shared-vector model) and a non-local remainder, and searching settings
//! space for the weight that keeps the remainder non-negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SettingPair, StateParam};
use crate::local_model::{correlator_l_closed, joint_l};
use crate::quantum::{correlator_q, joint_q, JointDistribution, Outcome};
use crate::search::maximize_settings;

pub use crate::search::SearchConfig;

/// Non-local remainder entries down to this value are accepted as rounding.
pub const NEGATIVITY_TOL: f64 = 1e-10;

/// Default floor on the local probability when forming `P_Q / P_L`.
pub const DEFAULT_RATIO_EPS: f64 = 1e-9;

/// `(P_Q − p_L P_L) / (1 − p_L)`, rejected when any entry is negative
/// beyond [`NEGATIVITY_TOL`].
pub fn nonlocal_part(state: &StateParam, p_l: f64, pair: &SettingPair) -> Result<JointDistribution> {
    if !(0.0..1.0).contains(&p_l) {
        return Err(Error::InvalidLocalWeight(p_l));
    }
    let q = joint_q(state, pair);
    let l = joint_l(pair);
    let mut p = [[0.0; 2]; 2];
    for o in Outcome::ALL {
        let v = (q.get(o) - p_l * l.get(o)) / (1.0 - p_l);
        if v < -NEGATIVITY_TOL {
            return Err(Error::Negativity {
                value: v,
                outcome: o,
                a: pair.a.to_array(),
                b: pair.b.to_array(),
            });
        }
        p[usize::from(o.alpha < 0)][usize::from(o.beta < 0)] = v;
    }
    Ok(JointDistribution::from_raw(p))
}

/// `|E_Q(a, b) − c E_L(a, b)|`.
pub fn bound_gap(state: &StateParam, pair: &SettingPair) -> f64 {
    (correlator_q(state, pair).value() - state.c() * correlator_l_closed(pair).value()).abs()
}

/// Largest bound gap over all settings, with the maximizing pair.
pub fn max_bound_gap(state: &StateParam, cfg: &SearchConfig) -> (f64, SettingPair) {
    let hit = maximize_settings(|a, b, chi| bound_gap(state, &SettingPair::from_params(a, b, chi)), cfg);
    let [a, b, chi] = hit.params;
    (hit.value, SettingPair::from_params(a, b, chi))
}

/// `min_{α,β} P_Q / P_L` over outcomes with `P_L > eps`; `+∞` if none.
pub fn min_ratio_at(state: &StateParam, pair: &SettingPair, eps: f64) -> (f64, Outcome) {
    let q = joint_q(state, pair);
    let l = joint_l(pair);
    let mut best = (f64::INFINITY, Outcome::ALL[0]);
    for o in Outcome::ALL {
        let pl = l.get(o);
        if pl > eps {
            let r = q.get(o) / pl;
            if r < best.0 {
                best = (r, o);
            }
        }
    }
    best
}

/// Infimum of `P_Q / P_L` and where it is reached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalWeight {
    pub value: f64,
    pub pair: SettingPair,
    pub outcome: Outcome,
    pub eps: f64,
}

/// Largest weight the shared-vector model can carry in a decomposition of
/// the given state: the infimum of `P_Q / P_L` over settings and outcomes.
pub fn max_local_weight(state: &StateParam, cfg: &SearchConfig) -> LocalWeight {
    max_local_weight_eps(state, cfg, DEFAULT_RATIO_EPS)
}

pub fn max_local_weight_eps(state: &StateParam, cfg: &SearchConfig, eps: f64) -> LocalWeight {
    let hit = maximize_settings(
        |a, b, chi| -min_ratio_at(state, &SettingPair::from_params(a, b, chi), eps).0,
        cfg,
    );
    let [a, b, chi] = hit.params;
    let pair = SettingPair::from_params(a, b, chi);
    let (value, outcome) = min_ratio_at(state, &pair, eps);
    LocalWeight {
        value: value.min(1.0),
        pair,
        outcome,
        eps,
    }
}

/// Best known lower bound on the local content obtained from this model:
/// `c` when `c ≤ 0.8`, otherwise `c + s − 1 + √(2(1 − c)(1 − s))`.
pub fn lower_bound_formula(state: &StateParam) -> f64 {
    let (c, s) = (state.c(), state.s());
    if c <= 0.8 {
        c
    } else {
        c + s - 1.0 + (2.0 * (1.0 - c) * (1.0 - s)).max(0.0).sqrt()
    }
}

/// `c + s − 1 + √(2(1−c)(1−s))`, the smallest P_Q/P_L, without the `c ≤ 0.8` switch.
pub fn ratio_bound(state: &StateParam) -> f64 {
    let (c, s) = (state.c(), state.s());
    c + s - 1.0 + (2.0 * (1.0 - c) * (1.0 - s)).max(0.0).sqrt()
}

/// Ordered by severity, so the verdict of a set of checks is the maximum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

/// Threshold in standard errors for `m` simultaneous comparisons, so that
/// the chance of any false alarm stays near that of a single comparison
/// at `k` (Gaussian tail union bound: `m·e^{−t²/2} = e^{−k²/2}`).
pub fn family_sigma(k: f64, m: usize) -> f64 {
    (k * k + 2.0 * (m.max(1) as f64).ln()).sqrt()
}

/// Verdict for a noisy estimate of `excess = deviation − bound` with
/// standard error `se`. A violation needs `excess > k·se + tol`. Without
/// one, the result is inconclusive when the error bar still reaches past
/// the bound and is wider than `resolution`; otherwise it passes.
pub fn statistical_verdict(excess: f64, se: f64, k: f64, tol: f64, resolution: f64) -> Verdict {
    if excess > k * se + tol {
        Verdict::Fail
    } else if excess + k * se > tol && k * se > resolution {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

/// Settings and outcome where the non-local remainder goes negative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub pair: SettingPair,
    pub outcome: Outcome,
    /// Most negative value of `P_Q − p_L P_L` found.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub c: f64,
    pub s: f64,
    pub p_l: f64,
    /// Largest `|E_Q − c E_L|` found.
    pub bound_gap_max: f64,
    pub argmax_pair: SettingPair,
    /// Whether `bound_gap_max ≤ 1 − c` (with tolerance): the correlator
    /// constraint for a decomposition at `p_L = c` with random non-local
    /// marginals. The marginal constraints hold exactly by construction.
    pub bound_gap_ok: bool,
    /// Smallest `P_Q / P_L` found.
    pub min_ratio: f64,
    pub witness: Option<Witness>,
    pub verdict: Verdict,
}

/// Check a decomposition with local weight `p_l`: search for negative
/// entries of `P_Q − p_L P_L` and evaluate the correlator constraint.
pub fn epr2_verify(state: &StateParam, p_l: f64, cfg: &SearchConfig) -> Result<DecompositionReport> {
    if !(0.0..1.0).contains(&p_l) {
        return Err(Error::InvalidLocalWeight(p_l));
    }
    cfg.validate()?;
    let (gap, gap_pair) = max_bound_gap(state, cfg);

    let worst_entry = |pair: &SettingPair| -> (f64, Outcome) {
        let q = joint_q(state, pair);
        let l = joint_l(pair);
        Outcome::ALL
            .iter()
            .map(|&o| (q.get(o) - p_l * l.get(o), o))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("four outcomes")
    };
    let hit = maximize_settings(|a, b, chi| -worst_entry(&SettingPair::from_params(a, b, chi)).0, cfg);
    let [a, b, chi] = hit.params;
    let pair = SettingPair::from_params(a, b, chi);
    let (value, outcome) = worst_entry(&pair);
    let witness = (value / (1.0 - p_l) < -NEGATIVITY_TOL).then_some(Witness { pair, outcome, value });

    let ratio = max_local_weight(state, cfg);
    let verdict = if witness.is_some() {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    Ok(DecompositionReport {
        c: state.c(),
        s: state.s(),
        p_l,
        bound_gap_max: gap,
        argmax_pair: gap_pair,
        bound_gap_ok: gap <= 1.0 - state.c() + cfg.tolerance,
        min_ratio: ratio.value,
        witness,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_sphere, BlochVector, RandomStream};
    use crate::local_model::joint_l;

    fn st(c: f64) -> StateParam {
        StateParam::from_c(c).unwrap()
    }

    fn x_mx() -> SettingPair {
        SettingPair::new(BlochVector::X, BlochVector::new(-1.0, 0.0, 0.0).unwrap())
    }

    #[test]
    fn nonlocal_zero_weight_is_quantum() {
        let mut rng = RandomStream::new(1).rng();
        let state = st(0.4);
        for _ in 0..100 {
            let p = SettingPair::new(sample_sphere(&mut rng), sample_sphere(&mut rng));
            assert_eq!(nonlocal_part(&state, 0.0, &p).unwrap(), joint_q(&state, &p));
        }
    }

    #[test]
    fn nonlocal_valid_below_threshold() {
        let mut rng = RandomStream::new(2).rng();
        let state = st(0.5);
        for _ in 0..10_000 {
            let p = SettingPair::new(sample_sphere(&mut rng), sample_sphere(&mut rng));
            let nl = nonlocal_part(&state, 0.5, &p).unwrap();
            assert!(nl.entries().iter().flatten().all(|&x| x >= -NEGATIVITY_TOL));
        }
    }

    #[test]
    fn nonlocal_negative_above_threshold() {
        match nonlocal_part(&st(0.9), 0.9, &x_mx()) {
            Err(Error::Negativity { outcome, .. }) => assert_eq!(outcome, Outcome::new(1, -1)),
            other => panic!("expected negativity, got {other:?}"),
        }
        assert!(matches!(
            nonlocal_part(&st(0.9), 1.0, &x_mx()),
            Err(Error::InvalidLocalWeight(_))
        ));
    }

    #[test]
    fn reconstruction_and_marginals() {
        let mut rng = RandomStream::new(3).rng();
        for &c in &[0.2, 0.5, 0.8] {
            let state = st(c);
            for _ in 0..2000 {
                let p = SettingPair::new(sample_sphere(&mut rng), sample_sphere(&mut rng));
                let nl = nonlocal_part(&state, c, &p).unwrap();
                let (q, l) = (joint_q(&state, &p), joint_l(&p));
                for o in Outcome::ALL {
                    let back = c * l.get(o) + (1.0 - c) * nl.get(o);
                    assert!((back - q.get(o)).abs() < 1e-12);
                }
                // random marginals at p_L = c
                assert!(nl.marginal_a().abs() < 1e-12);
                assert!(nl.marginal_b().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nonlocal_is_non_signaling() {
        let mut rng = RandomStream::new(4).rng();
        let state = st(0.7);
        for _ in 0..500 {
            let a = sample_sphere(&mut rng);
            let (b1, b2) = (sample_sphere(&mut rng), sample_sphere(&mut rng));
            let n1 = nonlocal_part(&state, 0.3, &SettingPair::new(a, b1)).unwrap();
            let n2 = nonlocal_part(&state, 0.3, &SettingPair::new(a, b2)).unwrap();
            assert!((n1.marginal_a() - n2.marginal_a()).abs() < 1e-12);
            let m1 = nonlocal_part(&state, 0.3, &SettingPair::new(b1, a)).unwrap();
            let m2 = nonlocal_part(&state, 0.3, &SettingPair::new(b2, a)).unwrap();
            assert!((m1.marginal_b() - m2.marginal_b()).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_gap_examples() {
        let s = 0.19f64.sqrt();
        assert!((bound_gap(&st(0.9), &x_mx()) - (0.9 - s)).abs() < 1e-12);
        assert!((0.9 - s - 0.464110).abs() < 1e-6);
        let zz = SettingPair::new(BlochVector::Z, BlochVector::Z);
        assert!((bound_gap(&st(0.3), &zz) - 0.7).abs() < 1e-15);
        assert_eq!(bound_gap(&st(0.0), &zz), 1.0);
    }

    #[test]
    fn lower_bound_examples() {
        assert_eq!(lower_bound_formula(&st(0.8)), 0.8);
        assert!((ratio_bound(&st(0.8)) - 0.8).abs() < 1e-12);
        let c = 12.0 / 13.0;
        assert!((lower_bound_formula(&st(c)) - 8.0 / 13.0).abs() < 1e-12);
        assert!(lower_bound_formula(&st(1.0)).abs() < 1e-15);
        assert!((lower_bound_formula(&st(0.9)) - 0.671_779_788_708).abs() < 1e-9);
    }

    #[test]
    fn max_bound_gap_examples() {
        let cfg = SearchConfig::coarse();
        let (g, _) = max_bound_gap(&st(0.5), &cfg);
        assert!((g - 0.5).abs() < 1e-4, "{g}");
        let (g, _) = max_bound_gap(&st(0.9), &cfg);
        assert!((g - (0.9 - 0.19f64.sqrt())).abs() < 1e-4, "{g}");
        let (g, _) = max_bound_gap(&st(0.0), &cfg);
        assert!((g - 1.0).abs() < 1e-6, "{g}");
    }

    #[test]
    fn max_local_weight_examples() {
        let cfg = SearchConfig::coarse();
        let w = max_local_weight(&st(0.9), &cfg);
        assert!((w.value - 0.671_779_8).abs() < 1e-3, "{w:?}");
        let w = max_local_weight(&st(0.8), &cfg);
        assert!((w.value - 0.8).abs() < 1e-3, "{w:?}");
        let w = max_local_weight(&st(0.0), &cfg);
        assert!(w.value.abs() < 1e-2, "{w:?}");
    }

    #[test]
    fn local_weight_eps_sensitivity() {
        let cfg = SearchConfig::coarse();
        for c in [0.5, 0.9] {
            let w6 = max_local_weight_eps(&st(c), &cfg, 1e-6).value;
            let w9 = max_local_weight_eps(&st(c), &cfg, 1e-9).value;
            assert!(w9 <= w6 + 1e-9, "{c}: {w9} > {w6}");
            assert!((w6 - w9).abs() < 1e-3);
        }
    }

    #[test]
    fn verify_examples() {
        let cfg = SearchConfig::coarse();
        let r = epr2_verify(&st(0.6), 0.6, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        assert!(r.bound_gap_ok);
        let r = epr2_verify(&st(0.9), 0.9, &cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(!r.bound_gap_ok);
        let w = r.witness.unwrap();
        // the worst settings sit on the χ = π seam at the equator
        assert!(w.pair.a.z().abs() < 0.05 && w.pair.b.z().abs() < 0.05, "{w:?}");
        for c in [0.0, 0.5, 0.95] {
            let r = epr2_verify(&st(c), 0.0, &cfg).unwrap();
            assert_eq!(r.verdict, Verdict::Pass);
        }
        assert!(epr2_verify(&st(0.5), 1.0, &cfg).is_err());
    }
}
