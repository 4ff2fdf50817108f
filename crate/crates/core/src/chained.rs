//! Chained Bell inequalities and the upper bound they give on the local
//! weight: `p_L ≤ (I_NS − I_Q) / (I_NS − I_L)`.
//!
//! With `N` settings per party the chained expression is
//! `Σ_k E(a_k, b_k) + Σ_{k<N} E(a_{k+1}, b_k) − E(a_1, b_N)`,
//! whose local maximum is `2N − 2` and no-signaling maximum `2N`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{BlochVector, RandomStream, SettingPair, StateParam};
use crate::quantum::correlator_q;
use crate::search::SearchConfig;

/// Above this `N` the local bound is taken from `2N − 2` instead of
/// enumerating `2^(2N)` strategies.
pub const BRUTE_FORCE_MAX_N: usize = 8;

pub const DEFAULT_MAX_N: usize = 24;

/// Settings for a chained inequality, each as `(inclination, azimuth)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainedConfig {
    pub n_settings: usize,
    pub alice_angles: Vec<[f64; 2]>,
    pub bob_angles: Vec<[f64; 2]>,
}

impl ChainedConfig {
    pub fn new(alice_angles: Vec<[f64; 2]>, bob_angles: Vec<[f64; 2]>) -> Result<Self> {
        let n = alice_angles.len();
        if n < 2 || bob_angles.len() != n {
            return Err(Error::Config(format!(
                "chained inequality needs N >= 2 settings per party (got {} and {})",
                n,
                bob_angles.len()
            )));
        }
        Ok(Self {
            n_settings: n,
            alice_angles,
            bob_angles,
        })
    }

    /// Settings in the xz plane, consecutive settings `π/2N` apart:
    /// `a_k` at `(k − 1)π/N`, `b_k` at `(k − ½)π/N`.
    pub fn equally_spaced(n: usize) -> Result<Self> {
        let step = PI / n as f64;
        Self::new(
            (0..n).map(|k| [k as f64 * step, 0.0]).collect(),
            (0..n).map(|k| [(k as f64 + 0.5) * step, 0.0]).collect(),
        )
    }

    fn vectors(angles: &[[f64; 2]]) -> Vec<BlochVector> {
        angles
            .iter()
            .map(|&[inc, az]| BlochVector::from_spherical(inc, az))
            .collect()
    }

    pub fn alice(&self) -> Vec<BlochVector> {
        Self::vectors(&self.alice_angles)
    }

    pub fn bob(&self) -> Vec<BlochVector> {
        Self::vectors(&self.bob_angles)
    }
}

fn angles_of(v: &BlochVector) -> [f64; 2] {
    [v.zenith(), v.azimuth().unwrap_or(0.0)]
}

/// Terms of the chained expression as `(alice index, bob index, sign)`.
pub fn chain_terms(n: usize) -> Vec<(usize, usize, f64)> {
    let mut terms = Vec::with_capacity(2 * n);
    for k in 0..n {
        terms.push((k, k, 1.0));
    }
    for k in 0..n - 1 {
        terms.push((k + 1, k, 1.0));
    }
    terms.push((0, n - 1, -1.0));
    terms
}

fn chained_from_vectors(state: &StateParam, alice: &[BlochVector], bob: &[BlochVector]) -> f64 {
    chain_terms(alice.len())
        .into_iter()
        .map(|(i, j, sign)| sign * correlator_q(state, &SettingPair::new(alice[i], bob[j])).value())
        .sum()
}

/// Quantum value of the chained expression for the given settings.
pub fn chained_value(state: &StateParam, cfg: &ChainedConfig) -> f64 {
    chained_from_vectors(state, &cfg.alice(), &cfg.bob())
}

/// Largest chained value over deterministic local strategies.
pub fn local_bound(n: usize) -> Result<f64> {
    local_bound_with(n, Exec::default())
}

pub fn local_bound_with(n: usize, exec: Exec) -> Result<f64> {
    if n < 2 {
        return Err(Error::Config("N must be at least 2".into()));
    }
    if n > BRUTE_FORCE_MAX_N {
        return Ok(2.0 * n as f64 - 2.0);
    }
    Ok(local_bound_brute_force(n, exec))
}

/// Enumerates all `2^(2N)` assignments of ±1 answers.
pub fn local_bound_brute_force(n: usize, exec: Exec) -> f64 {
    let terms = chain_terms(n);
    let strategies = 1usize << (2 * n);
    // partition by Alice's strategy
    let best = exec.map(1 << n, |alice_bits| {
        let mut best = f64::NEG_INFINITY;
        for bob_bits in 0..(strategies >> n) {
            let bit = |bits: usize, i: usize| if bits >> i & 1 == 1 { -1.0 } else { 1.0 };
            let v: f64 = terms
                .iter()
                .map(|&(i, j, sign)| sign * bit(alice_bits, i) * bit(bob_bits, j))
                .sum();
            best = best.max(v);
        }
        best
    });
    best.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// A no-signaling box reaching the chained maximum: every pair in the chain
/// is perfectly (anti-)correlated with uniform marginals; pairs outside the
/// chain are uniform noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NsCertificate {
    pub n: usize,
    /// `p[i][j]` is the distribution for Alice setting `i`, Bob setting `j`,
    /// entries ordered `(+,+), (+,−), (−,+), (−,−)`.
    pub p: Vec<Vec<[f64; 4]>>,
    pub value: f64,
}

impl NsCertificate {
    /// Every marginal independent of the remote setting.
    pub fn is_non_signaling(&self, tol: f64) -> bool {
        let n = self.n;
        let alice_marg = |i: usize, j: usize| self.p[i][j][0] + self.p[i][j][1];
        let bob_marg = |i: usize, j: usize| self.p[i][j][0] + self.p[i][j][2];
        (0..n).all(|i| (1..n).all(|j| (alice_marg(i, j) - alice_marg(i, 0)).abs() <= tol))
            && (0..n).all(|j| (1..n).all(|i| (bob_marg(i, j) - bob_marg(0, j)).abs() <= tol))
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.p
            .iter()
            .flatten()
            .all(|d| d.iter().all(|&x| x >= -tol) && (d.iter().sum::<f64>() - 1.0).abs() <= tol)
    }
}

pub fn ns_certificate(n: usize) -> Result<NsCertificate> {
    if n < 2 {
        return Err(Error::Config("N must be at least 2".into()));
    }
    let mut p = vec![vec![[0.25; 4]; n]; n];
    let terms = chain_terms(n);
    for &(i, j, sign) in &terms {
        p[i][j] = if sign > 0.0 {
            [0.5, 0.0, 0.0, 0.5]
        } else {
            [0.0, 0.5, 0.5, 0.0]
        };
    }
    let value = terms
        .iter()
        .map(|&(i, j, sign)| {
            let d = p[i][j];
            sign * (d[0] - d[1] - d[2] + d[3])
        })
        .sum();
    Ok(NsCertificate { n, p, value })
}

/// No-signaling maximum, certified by [`ns_certificate`].
pub fn ns_bound(n: usize) -> Result<f64> {
    let cert = ns_certificate(n)?;
    debug_assert!(cert.is_non_signaling(1e-15) && cert.is_normalized(1e-15));
    Ok(cert.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainedReport {
    pub n: usize,
    pub i_q: f64,
    pub i_l: f64,
    pub i_ns: f64,
    pub upper_bound: f64,
    pub settings: ChainedConfig,
}

fn unit(v: [f64; 3]) -> Option<BlochVector> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-300).then(|| BlochVector::normalized(v[0], v[1], v[2]))
}

/// Exact block-coordinate ascent. With `E(a, b) = aᵀ M b`,
/// `M = diag(s, −s, 1)`, the chained value is linear in each setting, so
/// the best `a_k` given all other settings is the normalized coefficient
/// vector; likewise for `b_k`.
fn coordinate_ascent(
    state: &StateParam,
    alice: &mut [BlochVector],
    bob: &mut [BlochVector],
    max_sweeps: usize,
    tol: f64,
) -> f64 {
    let n = alice.len();
    let s = state.s();
    let m = |v: &BlochVector, sign: f64| [sign * s * v.x(), -sign * s * v.y(), sign * v.z()];
    let add = |u: [f64; 3], w: [f64; 3]| [u[0] + w[0], u[1] + w[1], u[2] + w[2]];
    let mut value = chained_from_vectors(state, alice, bob);
    for _ in 0..max_sweeps {
        for k in 0..n {
            let w = if k == 0 {
                add(m(&bob[0], 1.0), m(&bob[n - 1], -1.0))
            } else {
                add(m(&bob[k], 1.0), m(&bob[k - 1], 1.0))
            };
            if let Some(a) = unit(w) {
                alice[k] = a;
            }
        }
        for k in 0..n {
            let w = if k == n - 1 {
                add(m(&alice[n - 1], 1.0), m(&alice[0], -1.0))
            } else {
                add(m(&alice[k], 1.0), m(&alice[k + 1], 1.0))
            };
            if let Some(b) = unit(w) {
                bob[k] = b;
            }
        }
        let next = chained_from_vectors(state, alice, bob);
        let gain = next - value;
        value = next;
        if gain.abs() <= tol {
            break;
        }
    }
    value
}

/// Maximize the quantum chained value over all settings by multistart
/// coordinate ascent, then form the local-weight upper bound.
pub fn optimize_chained(state: &StateParam, n: usize, cfg: &SearchConfig) -> Result<ChainedReport> {
    let i_l = local_bound_with(n, cfg.exec)?;
    let i_ns = ns_bound(n)?;
    let base = ChainedConfig::equally_spaced(n)?;
    let stream = RandomStream::new(cfg.seed).split(n as u64);

    let starts = cfg.multistart.max(1);
    let results = cfg.exec.map(starts, |i| {
        let (mut alice, mut bob) = match i {
            0 => (base.alice(), base.bob()),
            // compressed planar fans: the optimum for weakly entangled
            // states bunches the settings near the poles
            1..=3 => {
                let f = 0.25 * i as f64;
                let fan = |k: f64| [f * k * PI / n as f64, 0.0];
                let cfg = ChainedConfig::new(
                    (0..n).map(|k| fan(k as f64)).collect(),
                    (0..n).map(|k| fan(k as f64 + 0.5)).collect(),
                )
                .expect("n >= 2");
                (cfg.alice(), cfg.bob())
            }
            _ => {
                let mut rng = stream.split(i as u64).rng();
                let mut draw = || BlochVector::from_z_azimuth(rng.gen_range(-1.0..=1.0), rng.gen_range(-PI..PI));
                ((0..n).map(|_| draw()).collect(), (0..n).map(|_| draw()).collect())
            }
        };
        let v = coordinate_ascent(state, &mut alice, &mut bob, cfg.refine_iters.max(1) * 100, 1e-15);
        (v, alice, bob)
    });
    let (i_q, alice, bob) = results
        .into_iter()
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start");
    let settings = ChainedConfig::new(
        alice.iter().map(angles_of).collect(),
        bob.iter().map(angles_of).collect(),
    )?;
    let upper_bound = ((i_ns - i_q) / (i_ns - i_l)).clamp(0.0, 1.0);
    Ok(ChainedReport {
        n,
        i_q,
        i_l,
        i_ns,
        upper_bound,
        settings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn me() -> StateParam {
        StateParam::from_theta(PI / 4.0).unwrap()
    }

    #[test]
    fn chsh_tsirelson() {
        let cfg = ChainedConfig::equally_spaced(2).unwrap();
        assert!((chained_value(&me(), &cfg) - 2.0 * 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn three_settings_closed_form() {
        let cfg = ChainedConfig::equally_spaced(3).unwrap();
        assert!((chained_value(&me(), &cfg) - 6.0 * (PI / 6.0).cos()).abs() < 1e-9);
    }

    #[test]
    fn product_state_all_z() {
        let product = StateParam::from_theta(0.0).unwrap();
        for n in 2..6 {
            let cfg = ChainedConfig::new(vec![[0.0, 0.0]; n], vec![[0.0, 0.0]; n]).unwrap();
            // every correlator is 1: (2N − 1) positive terms minus one
            assert!((chained_value(&product, &cfg) - (2.0 * n as f64 - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn local_bound_brute_force_values() {
        assert_eq!(local_bound(2).unwrap(), 2.0);
        assert_eq!(local_bound(3).unwrap(), 4.0);
        assert_eq!(local_bound(5).unwrap(), 8.0);
        for n in 2..=BRUTE_FORCE_MAX_N {
            assert_eq!(local_bound_brute_force(n, Exec::default()), 2.0 * n as f64 - 2.0);
        }
        assert!(local_bound(1).is_err());
    }

    #[test]
    fn ns_bound_values() {
        for (n, v) in [(2, 4.0), (3, 6.0), (4, 8.0)] {
            let cert = ns_certificate(n).unwrap();
            assert!(cert.is_non_signaling(1e-15));
            assert!(cert.is_normalized(1e-15));
            assert_eq!(cert.value, v);
            assert!(local_bound(n).unwrap() < v);
        }
    }

    #[test]
    fn optimizer_examples() {
        let cfg = SearchConfig::default();
        let r = optimize_chained(&me(), 2, &cfg).unwrap();
        assert!((r.upper_bound - (4.0 - 8f64.sqrt()) / 2.0).abs() < 1e-4);
        let r = optimize_chained(&me(), 13, &cfg).unwrap();
        assert!(r.upper_bound <= 0.10, "{}", r.upper_bound);
        let mut prev = 1.0;
        for n in 2..=20 {
            let r = optimize_chained(&me(), n, &cfg).unwrap();
            assert!(r.upper_bound <= prev + 1e-6);
            prev = r.upper_bound;
        }
    }
}
