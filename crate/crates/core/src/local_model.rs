//! The shared-vector local model.
//!
//! Alice and Bob share `λ` uniform on the sphere. Alice answers
//! `sign(a_z − a·λ)` and Bob answers `sign(b_z − b′·λ)` with `b′` the xz
//! reflection of `b`. Marginals are exactly `a_z` and `b_z`. The correlator
//! has a closed form; two independent evaluators (spherical-cap quadrature
//! and Monte Carlo) are provided to check it.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{reflect_xz, sample_sphere, wrap_angle, BlochVector, RandomStream, SettingPair};
use crate::quadrature;
use crate::quantum::{Correlator, JointDistribution};

/// `|χ|` closer than this to 0 or π selects the seam branches.
pub const CHI_SEAM: f64 = 1e-9;

/// Default absolute tolerance of the cap-intersection quadrature.
pub const DEFAULT_CAP_TOL: f64 = 1e-9;

const TIE_EPS: f64 = 1e-15;

/// Samples per Monte Carlo chunk; each chunk owns one split stream.
pub const MC_CHUNK: usize = 1 << 16;

fn sign_with_tie(d: f64) -> i8 {
    if d.abs() < TIE_EPS || d > 0.0 {
        1
    } else {
        -1
    }
}

/// Alice's deterministic answer `sign(a_z − a·λ)`, ties to `+1`.
pub fn response_alice(a: &BlochVector, lambda: &BlochVector) -> i8 {
    sign_with_tie(a.z() - a.dot(lambda))
}

/// Bob's deterministic answer `sign(b_z − b′·λ)`, ties to `+1`.
pub fn response_bob(b: &BlochVector, lambda: &BlochVector) -> i8 {
    sign_with_tie(b.z() - reflect_xz(*b).dot(lambda))
}

/// Exact marginal of either party: the z-component of the setting.
pub fn marginal_l(v: &BlochVector) -> f64 {
    v.z()
}

/// Closed-form local correlator.
///
/// Polar settings make `χ` undefined; the polar party then answers
/// deterministically (`+1` at the north pole, `−1` at the south pole) and
/// the correlator is that sign times the other party's marginal.
pub fn correlator_l_closed(pair: &SettingPair) -> Correlator {
    let (az, bz) = (pair.a.z(), pair.b.z());
    let chi = match pair.chi {
        Some(chi) => chi,
        None if pair.a.is_pole() => return Correlator(az.signum() * bz),
        None => return Correlator(bz.signum() * az),
    };
    let abs_chi = chi.abs();
    let e = if abs_chi < CHI_SEAM {
        1.0 - (az - bz).abs()
    } else if PI - abs_chi < CHI_SEAM {
        (az + bz).abs() - 1.0
    } else {
        let (ap, bp) = (pair.a.transverse(), pair.b.transverse());
        let sin_chi = abs_chi.sin();
        // The numerators cancel badly near the seams. Rewrite them around
        // D = a⊥b_z − a_z b⊥ (χ → 0) or S = a⊥b_z + a_z b⊥ (χ → π), using
        // S·D = b_z² − a_z² to get the small one of the pair accurately.
        let (d, sum) = {
            let (d, sum) = (ap * bz - az * bp, ap * bz + az * bp);
            let prod = (bz - az) * (bz + az);
            if sum.abs() >= d.abs() && sum != 0.0 {
                (prod / sum, sum)
            } else if d != 0.0 {
                (d, prod / d)
            } else {
                (d, sum)
            }
        };
        let (num_a, num_b) = if abs_chi <= 0.5 * PI {
            let h = 2.0 * (0.5 * abs_chi).sin().powi(2);
            (d + az * bp * h, -d + ap * bz * h)
        } else {
            let h = 2.0 * (0.5 * abs_chi).cos().powi(2);
            (sum - az * bp * h, sum - ap * bz * h)
        };
        // denominators are positive here; atan2 keeps the arctan branch
        // and stays finite as a transverse amplitude shrinks
        let t_a = num_a.atan2(bp * sin_chi);
        let t_b = num_b.atan2(ap * sin_chi);
        1.0 - 2.0 * abs_chi / PI + 2.0 / PI * (az * t_a + bz * t_b)
    };
    Correlator(e)
}

fn cap_edge_cos(z: f64, perp: f64, cos_phi: f64) -> f64 {
    let (num, den) = (
        z * z - perp * perp * cos_phi * cos_phi,
        z * z + perp * perp * cos_phi * cos_phi,
    );
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// Local correlator from the area of the intersection of the two caps
/// `{a·λ ≥ a_z}` and `{b′·λ ≥ b_z}`, integrated numerically.
///
/// Defined for `0 < |χ| < π` with both settings off the poles. Settings in
/// the southern hemisphere are mapped north through
/// `E(a, b) = −E(a, −b) = −E(−a, b)`.
pub fn correlator_l_capint(pair: &SettingPair, tol: f64) -> Result<Correlator> {
    let chi = pair.chi.ok_or(Error::CapIntegrationDomain)?;
    if chi.abs() < CHI_SEAM || PI - chi.abs() < CHI_SEAM {
        return Err(Error::CapIntegrationDomain);
    }
    let (mut az, mut bz, mut chi) = (pair.a.z(), pair.b.z(), chi);
    let mut sign = 1.0;
    if az < 0.0 {
        az = -az;
        sign = -sign;
        chi = wrap_angle(chi + PI);
    }
    if bz < 0.0 {
        bz = -bz;
        sign = -sign;
        chi = wrap_angle(chi + PI);
    }
    let chi = chi.abs();
    let (ap, bp) = (
        ((1.0 - az) * (1.0 + az)).max(0.0).sqrt(),
        ((1.0 - bz) * (1.0 + bz)).max(0.0).sqrt(),
    );

    let cos_a = |phi: f64| cap_edge_cos(az, ap, phi.cos());
    let cos_b = |phi: f64| cap_edge_cos(bz, bp, (phi - chi).cos());
    let integrand = |phi: f64| 1.0 - cos_a(phi).max(cos_b(phi));

    // the cap boundaries cross once on [χ − π/2, π/2]; locate the kink
    let (lo, hi) = (chi - FRAC_PI_2, FRAC_PI_2);
    let (mut l, mut h) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (l + h);
        if m <= l || m >= h {
            break;
        }
        if cos_a(m) - cos_b(m) < 0.0 {
            l = m;
        } else {
            h = m;
        }
    }
    let phi0 = 0.5 * (l + h);

    let piece_tol = 0.5 * tol * PI;
    let area = quadrature::integrate(integrand, lo, phi0, piece_tol, 4096)?
        + quadrature::integrate(integrand, phi0, hi, piece_tol, 4096)?;
    Ok(Correlator(sign * (az + bz - 1.0 + area / PI)))
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_err: f64,
    pub n: usize,
}

impl Estimate {
    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_err
    }
}

/// Mean of `f(λ)` over `n` uniform samples. The sample count is cut into
/// fixed chunks, chunk `i` drawing from `stream.split(i)`, so the result
/// does not depend on the execution strategy.
pub fn mc_mean<F>(n: usize, stream: &RandomStream, exec: Exec, f: F) -> Estimate
where
    F: Fn(&BlochVector) -> f64 + Sync + Send,
{
    assert!(n >= 1, "need at least one sample");
    mc_mean_with(n, stream, exec, |rng| f(&sample_sphere(rng)))
}

/// Like [`mc_mean`] but hands the generator to `draw`, for callers that
/// sample something other than a single uniform vector.
pub fn mc_mean_with<F>(n: usize, stream: &RandomStream, exec: Exec, draw: F) -> Estimate
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync + Send,
{
    let [e] = mc_means(n, stream, exec, |rng| [draw(rng)]);
    e
}

/// Several means from the same draws, e.g. both marginals and the
/// correlator of one simulated run.
pub fn mc_means<const K: usize, F>(n: usize, stream: &RandomStream, exec: Exec, draw: F) -> [Estimate; K]
where
    F: Fn(&mut ChaCha8Rng) -> [f64; K] + Sync + Send,
{
    assert!(n >= 1, "need at least one sample");
    let chunks = n.div_ceil(MC_CHUNK);
    let partial = exec.map(chunks, |i| {
        let mut rng = stream.split(i as u64).rng();
        let len = MC_CHUNK.min(n - i * MC_CHUNK);
        let (mut s1, mut s2) = ([0.0; K], [0.0; K]);
        for _ in 0..len {
            let x = draw(&mut rng);
            for j in 0..K {
                s1[j] += x[j];
                s2[j] += x[j] * x[j];
            }
        }
        (s1, s2)
    });
    let nf = n as f64;
    std::array::from_fn(|j| {
        let (s1, s2) = partial.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x[j], b + y[j]));
        let mean = s1 / nf;
        let var = if n > 1 {
            ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Estimate {
            mean,
            std_err: (var / nf).sqrt(),
            n,
        }
    })
}

/// Monte Carlo estimate of the local correlator.
pub fn correlator_l_mc(pair: &SettingPair, n: usize, stream: &RandomStream, exec: Exec) -> Estimate {
    let (a, b) = (pair.a, pair.b);
    mc_mean(n, stream, exec, move |l| {
        f64::from(response_alice(&a, l) * response_bob(&b, l))
    })
}

/// Monte Carlo estimate of Alice's marginal for setting `v`.
pub fn marginal_l_mc(v: &BlochVector, n: usize, stream: &RandomStream, exec: Exec) -> Estimate {
    let v = *v;
    mc_mean(n, stream, exec, move |l| f64::from(response_alice(&v, l)))
}

/// Draw a single `λ` and return both answers; used by simulations.
pub fn sample_responses<R: Rng + ?Sized>(pair: &SettingPair, rng: &mut R) -> (i8, i8) {
    let l = sample_sphere(rng);
    (response_alice(&pair.a, &l), response_bob(&pair.b, &l))
}

pub fn joint_l(pair: &SettingPair) -> JointDistribution {
    JointDistribution::from_moments(
        marginal_l(&pair.a),
        marginal_l(&pair.b),
        correlator_l_closed(pair).value(),
    )
    .expect("local model probabilities lie in [0, 1]")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RandomStream;

    fn v(x: f64, y: f64, z: f64) -> BlochVector {
        BlochVector::new(x, y, z).unwrap()
    }

    fn random_pair<R: Rng>(rng: &mut R) -> SettingPair {
        SettingPair::new(sample_sphere(rng), sample_sphere(rng))
    }

    #[test]
    fn response_examples() {
        let mut rng = RandomStream::new(1).rng();
        for _ in 0..100 {
            let l = sample_sphere(&mut rng);
            assert_eq!(response_alice(&BlochVector::Z, &l), 1);
            assert_eq!(response_bob(&BlochVector::Z, &l), 1);
        }
        let x = BlochVector::X;
        assert_eq!(response_alice(&x, &x), -1);
        assert_eq!(response_alice(&x, &v(-1.0, 0.0, 0.0)), 1);
        let y = BlochVector::Y;
        assert_eq!(response_bob(&y, &v(0.0, -1.0, 0.0)), -1);
        assert_eq!(response_bob(&y, &y), 1);
    }

    #[test]
    fn marginal_examples() {
        assert_eq!(marginal_l(&BlochVector::Z), 1.0);
        assert_eq!(marginal_l(&BlochVector::X), 0.0);
        assert_eq!(marginal_l(&v(0.6, 0.0, 0.8)), 0.8);
    }

    #[test]
    fn closed_form_examples() {
        let zz = SettingPair::new(BlochVector::Z, BlochVector::Z);
        assert_eq!(correlator_l_closed(&zz).value(), 1.0);
        let x_mx = SettingPair::new(BlochVector::X, v(-1.0, 0.0, 0.0));
        assert!((correlator_l_closed(&x_mx).value() + 1.0).abs() < 1e-15);
        let mut rng = RandomStream::new(2).rng();
        for _ in 0..50 {
            let phi = rng.gen_range(-PI..PI);
            let b = BlochVector::from_z_azimuth(0.3, phi);
            let p = SettingPair::new(BlochVector::Z, b);
            assert!((correlator_l_closed(&p).value() - 0.3).abs() < 1e-15);
        }
        let p = SettingPair::from_params(0.5, 0.1, 0.0);
        assert!((correlator_l_closed(&p).value() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn closed_form_pole_limits() {
        // nearly polar a: the general branch must approach a_z * b_z
        for &(az, bz, chi) in &[(1.0 - 1e-13, 0.4, 1.1), (-1.0 + 1e-13, -0.7, -2.5)] {
            let p = SettingPair::from_params(az, bz, chi);
            assert!(!p.is_degenerate());
            let e = correlator_l_closed(&p).value();
            assert!((e - az.signum() * bz).abs() < 1e-5, "{e}");
        }
        let south = SettingPair::new(v(0.0, 0.0, -1.0), BlochVector::from_z_azimuth(0.25, 0.3));
        assert!((correlator_l_closed(&south).value() + 0.25).abs() < 1e-15);
        let bpole = SettingPair::new(BlochVector::from_z_azimuth(-0.4, 1.0), v(0.0, 0.0, -1.0));
        assert!((correlator_l_closed(&bpole).value() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn capint_examples() {
        let p = SettingPair::new(BlochVector::X, BlochVector::Y);
        // b = y so b' = -y: azimuth difference π/2, both equatorial
        assert!((p.chi.unwrap() - FRAC_PI_2).abs() < 1e-15);
        let e = correlator_l_capint(&p, 1e-10).unwrap().value();
        assert!(e.abs() < 1e-9);
        assert!(correlator_l_closed(&p).value().abs() < 1e-15);

        let p = SettingPair::from_params(0.3, 0.6, 1.2);
        let n = SettingPair::new(-p.a, -p.b);
        let e = correlator_l_capint(&p, 1e-10).unwrap().value();
        let en = correlator_l_capint(&n, 1e-10).unwrap().value();
        assert!((e - en).abs() < 1e-9);

        let seam = SettingPair::from_params(0.3, 0.6, 0.0);
        assert!(correlator_l_capint(&seam, 1e-9).is_err());
    }

    #[test]
    fn capint_matches_closed_form() {
        let mut rng = RandomStream::new(3).rng();
        for _ in 0..300 {
            let p = random_pair(&mut rng);
            let q = correlator_l_capint(&p, DEFAULT_CAP_TOL).unwrap().value();
            let c = correlator_l_closed(&p).value();
            assert!((q - c).abs() < 1e-8, "{p:?}: {q} vs {c}");
        }
    }

    #[test]
    fn sign_symmetries() {
        let mut rng = RandomStream::new(4).rng();
        for _ in 0..1000 {
            let p = random_pair(&mut rng);
            let e = correlator_l_closed(&p).value();
            let e_ab = correlator_l_closed(&SettingPair::new(p.a, -p.b)).value();
            let e_ba = correlator_l_closed(&SettingPair::new(-p.a, p.b)).value();
            let e_nn = correlator_l_closed(&SettingPair::new(-p.a, -p.b)).value();
            assert!((e + e_ab).abs() < 1e-12);
            assert!((e + e_ba).abs() < 1e-12);
            assert!((e - e_nn).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_and_exchange_invariance() {
        let mut rng = RandomStream::new(5).rng();
        for _ in 0..1000 {
            let p = random_pair(&mut rng);
            let e = correlator_l_closed(&p).value();
            // a and b′ rotate together: b itself rotates the other way
            let g = rng.gen_range(-PI..PI);
            let r = SettingPair::new(p.a.rotate_z(g), p.b.rotate_z(-g));
            assert!((correlator_l_closed(&r).value() - e).abs() < 1e-12);
            let chi = p.chi.unwrap();
            let swapped = SettingPair::from_params(p.b.z(), p.a.z(), -chi);
            assert!((correlator_l_closed(&swapped).value() - e).abs() < 1e-12);
        }
    }

    #[test]
    fn seam_continuity() {
        let mut rng = RandomStream::new(6).rng();
        for _ in 0..2000 {
            let (az, bz) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let at = |chi: f64| correlator_l_closed(&SettingPair::from_params(az, bz, chi)).value();
            assert!((at(1e-6) - at(0.0)).abs() <= 1e-4);
            assert!((at(-1e-6) - at(0.0)).abs() <= 1e-4);
            assert!((at(PI - 1e-6) - at(PI)).abs() <= 1e-4);
        }
    }

    #[test]
    fn mc_examples() {
        let s = RandomStream::new(7);
        let zz = SettingPair::new(BlochVector::Z, BlochVector::Z);
        let e = correlator_l_mc(&zz, 100_000, &s, Exec::default());
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_err, 0.0);
        let p = SettingPair::from_params(0.2, -0.5, 2.0);
        let e1 = correlator_l_mc(&p, 200_000, &s, Exec::Sequential);
        let e2 = correlator_l_mc(&p, 200_000, &s, Exec::Parallel);
        assert_eq!(e1, e2);
        assert!(e1.covers(correlator_l_closed(&p).value(), 4.0));
    }

    #[test]
    fn joint_l_examples() {
        let p = joint_l(&SettingPair::new(BlochVector::Z, BlochVector::Z));
        assert_eq!(p.entries()[0][0], 1.0);
        let p = joint_l(&SettingPair::new(BlochVector::X, v(-1.0, 0.0, 0.0)));
        let e = p.entries();
        assert!(e[0][0].abs() < 1e-15 && e[1][1].abs() < 1e-15);
        assert!((e[0][1] - 0.5).abs() < 1e-15 && (e[1][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn joint_l_valid_on_sweep() {
        let mut rng = RandomStream::new(8).rng();
        for _ in 0..100_000 {
            let p = random_pair(&mut rng);
            let j = joint_l(&p);
            assert!(j.entries().iter().flatten().all(|&x| (0.0..=1.0).contains(&x)));
            assert!((j.total() - 1.0).abs() < 1e-12);
            assert!((j.marginal_a() - p.a.z()).abs() < 1e-12);
            assert!((j.marginal_b() - p.b.z()).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_nonnegative_near_seams_and_poles() {
        // almost-equal heights with χ just off a seam used to cancel badly
        let mut rng = RandomStream::new(3).rng();
        for _ in 0..200_000 {
            let az: f64 = if rng.gen_bool(0.5) {
                1.0 - 10f64.powf(rng.gen_range(-14.0..0.0))
            } else {
                rng.gen_range(-1.0..1.0)
            };
            let bz = (az + rng.gen_range(-1e-6..1e-6)).clamp(-1.0, 1.0);
            let bz = if rng.gen_bool(0.5) { bz } else { -bz };
            let off = 10f64.powf(rng.gen_range(-8.9..0.0));
            let chi = if rng.gen_bool(0.5) { off } else { PI - off };
            let p = SettingPair::from_params(az, bz, chi);
            let e = correlator_l_closed(&p).value();
            for o in crate::quantum::Outcome::ALL {
                let (al, be) = (f64::from(o.alpha), f64::from(o.beta));
                let v = 0.25 * (1.0 + al * az + be * bz + al * be * e);
                assert!(v > -1e-13, "{v} at ({az}, {bz}, {chi})");
            }
        }
    }
}
