//! Quantum predictions for Von Neumann measurements on `cos θ |00⟩ + sin θ |11⟩`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BlochVector, SettingPair, StateParam};

/// Entries within this distance of the probability range are clamped.
pub const CLAMP_TOL: f64 = 1e-12;

/// A pair of ±1 measurement results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outcome {
    pub alpha: i8,
    pub beta: i8,
}

impl Outcome {
    pub const ALL: [Outcome; 4] = [
        Outcome { alpha: 1, beta: 1 },
        Outcome { alpha: 1, beta: -1 },
        Outcome { alpha: -1, beta: 1 },
        Outcome { alpha: -1, beta: -1 },
    ];

    pub fn new(alpha: i8, beta: i8) -> Self {
        assert!(alpha.abs() == 1 && beta.abs() == 1, "outcomes are ±1");
        Self { alpha, beta }
    }

    fn index(alpha: i8) -> usize {
        usize::from(alpha < 0)
    }

    pub fn sign(&self) -> f64 {
        f64::from(self.alpha * self.beta)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = |v: i8| if v > 0 { '+' } else { '-' };
        write!(f, "({},{})", c(self.alpha), c(self.beta))
    }
}

/// A correlator `E = Σ αβ P(α, β)`, in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Correlator(pub f64);

impl Correlator {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Conditional probabilities `p[α][β]`, index 0 for `+1` and 1 for `−1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    p: [[f64; 2]; 2],
}

impl JointDistribution {
    /// Build `¼(1 + α m_a + β m_b + αβ e)`.
    pub fn from_moments(m_a: f64, m_b: f64, e: f64) -> Result<Self> {
        let mut p = [[0.0; 2]; 2];
        for o in Outcome::ALL {
            let (al, be) = (f64::from(o.alpha), f64::from(o.beta));
            p[Outcome::index(o.alpha)][Outcome::index(o.beta)] = 0.25 * (1.0 + al * m_a + be * m_b + al * be * e);
        }
        Self::from_entries(p)
    }

    /// Entries are clamped into `[0, 1]` when within [`CLAMP_TOL`] of the
    /// boundary; larger excursions are an error.
    pub fn from_entries(mut p: [[f64; 2]; 2]) -> Result<Self> {
        for v in p.iter_mut().flatten() {
            if *v < -CLAMP_TOL || *v > 1.0 + CLAMP_TOL || !v.is_finite() {
                return Err(Error::Inconsistent(*v));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self { p })
    }

    pub(crate) fn from_raw(p: [[f64; 2]; 2]) -> Self {
        Self { p }
    }

    pub fn get(&self, o: Outcome) -> f64 {
        self.p[Outcome::index(o.alpha)][Outcome::index(o.beta)]
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.p
    }

    pub fn total(&self) -> f64 {
        self.p.iter().flatten().sum()
    }

    pub fn marginal_a(&self) -> f64 {
        self.p[0][0] + self.p[0][1] - self.p[1][0] - self.p[1][1]
    }

    pub fn marginal_b(&self) -> f64 {
        self.p[0][0] - self.p[0][1] + self.p[1][0] - self.p[1][1]
    }

    pub fn correlator(&self) -> Correlator {
        Correlator(self.p[0][0] - self.p[0][1] - self.p[1][0] + self.p[1][1])
    }
}

/// `M_Q(v) = c v_z`.
pub fn marginal_q(state: &StateParam, v: &BlochVector) -> f64 {
    state.c() * v.z()
}

/// `E_Q(a, b) = a_z b_z + s (a_x b_x − a_y b_y)`.
pub fn correlator_q(state: &StateParam, pair: &SettingPair) -> Correlator {
    let (a, b) = (&pair.a, &pair.b);
    Correlator(a.z() * b.z() + state.s() * (a.x() * b.x() - a.y() * b.y()))
}

/// `E_Q` through transverse amplitudes and `χ`. Falls back to the Cartesian
/// form for polar settings, where the transverse term vanishes anyway.
pub fn correlator_q_polar(state: &StateParam, pair: &SettingPair) -> Correlator {
    let (a, b) = (&pair.a, &pair.b);
    let transverse = match pair.chi {
        Some(chi) => a.transverse() * b.transverse() * chi.cos(),
        None => 0.0,
    };
    Correlator(a.z() * b.z() + state.s() * transverse)
}

pub fn joint_q(state: &StateParam, pair: &SettingPair) -> JointDistribution {
    JointDistribution::from_moments(
        marginal_q(state, &pair.a),
        marginal_q(state, &pair.b),
        correlator_q(state, pair).value(),
    )
    .expect("quantum probabilities lie in [0, 1]")
}

/// Bob's Bloch vector after Alice obtains `+1` along `a`:
/// `(s a_⊥ cos φ_a, −s a_⊥ sin φ_a, c + a_z) / (1 + c a_z)`.
pub fn steered_setting(state: &StateParam, a: &BlochVector) -> Result<BlochVector> {
    let (c, s) = (state.c(), state.s());
    let den = 1.0 + c * a.z();
    if den <= 1e-15 {
        return Err(Error::ProductStateDegenerate);
    }
    // a_⊥ cos φ_a = a_x and a_⊥ sin φ_a = a_y
    let x = s * a.x() / den;
    let y = -s * a.y() / den;
    let z = (c + a.z()) / den;
    Ok(BlochVector::normalized(x, y, z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_sphere, RandomStream};
    use std::f64::consts::PI;

    fn st(c: f64) -> StateParam {
        StateParam::from_c(c).unwrap()
    }

    fn v(x: f64, y: f64, z: f64) -> BlochVector {
        BlochVector::new(x, y, z).unwrap()
    }

    #[test]
    fn marginal_examples() {
        let max_ent = StateParam::from_theta(PI / 4.0).unwrap();
        assert!(marginal_q(&max_ent, &v(0.0, 0.6, 0.8)).abs() < 1e-15);
        assert!((marginal_q(&st(0.8), &BlochVector::Z) - 0.8).abs() < 1e-15);
        assert_eq!(marginal_q(&st(0.5), &BlochVector::X), 0.0);
    }

    #[test]
    fn correlator_examples() {
        let z = SettingPair::new(BlochVector::Z, BlochVector::Z);
        assert_eq!(correlator_q(&st(0.3), &z).value(), 1.0);
        let s06 = StateParam::from_s(0.6).unwrap();
        let xx = SettingPair::new(BlochVector::X, BlochVector::X);
        assert!((correlator_q(&s06, &xx).value() - 0.6).abs() < 1e-15);
        let x_mx = SettingPair::new(BlochVector::X, v(-1.0, 0.0, 0.0));
        for s in [0.0, 0.3, 0.9, 1.0] {
            let state = StateParam::from_s(s).unwrap();
            assert!((correlator_q(&state, &x_mx).value() + s).abs() < 1e-15);
        }
    }

    #[test]
    fn joint_examples() {
        let zz = SettingPair::new(BlochVector::Z, BlochVector::Z);
        let p = joint_q(&StateParam::from_theta(0.0).unwrap(), &zz);
        assert_eq!(p.entries(), [[1.0, 0.0], [0.0, 0.0]]);
        let me = StateParam::from_theta(PI / 4.0).unwrap();
        let p = joint_q(&me, &zz);
        for (e, x) in p.entries().iter().flatten().zip([0.5, 0.0, 0.0, 0.5]) {
            assert!((e - x).abs() < 1e-15);
        }
        let p = joint_q(&me, &SettingPair::new(BlochVector::Z, BlochVector::X));
        for e in p.entries().iter().flatten() {
            assert!((e - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn joint_consistency_random() {
        let mut rng = RandomStream::new(5).rng();
        for i in 0..10_000 {
            let state = StateParam::from_theta(PI / 4.0 * (i as f64 / 9999.0)).unwrap();
            let pair = SettingPair::new(sample_sphere(&mut rng), sample_sphere(&mut rng));
            let p = joint_q(&state, &pair);
            assert!((p.total() - 1.0).abs() < 1e-12);
            assert!((p.marginal_a() - marginal_q(&state, &pair.a)).abs() < 1e-12);
            assert!((p.marginal_b() - marginal_q(&state, &pair.b)).abs() < 1e-12);
            let e = correlator_q(&state, &pair).value();
            assert!((p.correlator().value() - e).abs() < 1e-12);
            assert!((correlator_q_polar(&state, &pair).value() - e).abs() < 1e-12);
            assert!(p.entries().iter().flatten().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn joint_is_non_signaling() {
        let mut rng = RandomStream::new(6).rng();
        let state = st(0.4);
        for _ in 0..1000 {
            let a = sample_sphere(&mut rng);
            let b1 = sample_sphere(&mut rng);
            let b2 = sample_sphere(&mut rng);
            let p1 = joint_q(&state, &SettingPair::new(a, b1));
            let p2 = joint_q(&state, &SettingPair::new(a, b2));
            assert!((p1.marginal_a() - p2.marginal_a()).abs() < 1e-12);
            let q1 = joint_q(&state, &SettingPair::new(b1, a));
            let q2 = joint_q(&state, &SettingPair::new(b2, a));
            assert!((q1.marginal_b() - q2.marginal_b()).abs() < 1e-12);
        }
    }

    #[test]
    fn steered_examples() {
        for c in [0.0, 0.3, 0.9, 1.0] {
            let b = steered_setting(&st(c), &BlochVector::Z).unwrap();
            assert!((b.z() - 1.0).abs() < 1e-15);
        }
        let state = st(0.6);
        let b = steered_setting(&state, &BlochVector::X).unwrap();
        assert!((b.x() - 0.8).abs() < 1e-15 && (b.z() - 0.6).abs() < 1e-15);
        let mz = v(0.0, 0.0, -1.0);
        let b = steered_setting(&st(0.7), &mz).unwrap();
        assert!((b.z() + 1.0).abs() < 1e-15);
        assert!(matches!(
            steered_setting(&st(1.0), &mz),
            Err(Error::ProductStateDegenerate)
        ));
    }

    #[test]
    fn steered_zero_probability() {
        let mut rng = RandomStream::new(8).rng();
        let plus_minus = Outcome::new(1, -1);
        for i in 0..10_000 {
            let theta = 1e-3 + (PI / 4.0 - 1e-3) * (i as f64 / 9999.0);
            let state = StateParam::from_theta(theta).unwrap();
            let a = sample_sphere(&mut rng);
            let b = steered_setting(&state, &a).unwrap();
            let unnormalized = {
                let den = 1.0 + state.c() * a.z();
                let x = state.s() * a.x() / den;
                let y = state.s() * a.y() / den;
                let z = (state.c() + a.z()) / den;
                x * x + y * y + z * z
            };
            assert!((unnormalized - 1.0).abs() < 1e-10);
            let p = joint_q(&state, &SettingPair::new(a, b));
            assert!(p.get(plus_minus) <= 1e-12);
        }
    }

    #[test]
    fn clamp_rules() {
        assert!(JointDistribution::from_entries([[0.5, -1e-13], [0.25, 0.25]]).is_ok());
        assert!(JointDistribution::from_entries([[0.5, -1e-9], [0.25, 0.25]]).is_err());
    }
}
