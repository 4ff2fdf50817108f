//! Bloch-sphere primitives: state parameter, unit vectors, setting pairs
//! and seeded random streams.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Transverse amplitude below which a vector is treated as a pole.
pub const POLE_EPS: f64 = 1e-12;

const UNIT_TOL: f64 = 1e-12;

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x % (2.0 * PI);
    if y <= -PI {
        y += 2.0 * PI;
    } else if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// The state `cos θ |00⟩ + sin θ |11⟩` with `θ ∈ [0, π/4]`, caching
/// `c = cos 2θ` and `s = sin 2θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateParam {
    theta: f64,
    c: f64,
    s: f64,
}

impl StateParam {
    pub fn from_theta(theta: f64) -> Result<Self> {
        if !(0.0..=PI / 4.0 + 1e-15).contains(&theta) {
            return Err(Error::InvalidState(format!("theta = {theta} outside [0, pi/4]")));
        }
        let theta = theta.min(PI / 4.0);
        let (s, c) = (2.0 * theta).sin_cos();
        Ok(Self {
            theta,
            c: c.clamp(0.0, 1.0),
            s: s.clamp(0.0, 1.0),
        })
    }

    pub fn from_c(c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidState(format!("c = {c} outside [0, 1]")));
        }
        Ok(Self {
            theta: 0.5 * c.acos(),
            c,
            s: ((1.0 - c) * (1.0 + c)).max(0.0).sqrt(),
        })
    }

    pub fn from_s(s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::InvalidState(format!("s = {s} outside [0, 1]")));
        }
        Ok(Self {
            theta: 0.5 * s.asin(),
            c: ((1.0 - s) * (1.0 + s)).max(0.0).sqrt(),
            s,
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn s(&self) -> f64 {
        self.s
    }
}

/// A unit vector on the Bloch sphere: a measurement setting or a hidden
/// variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 3]", try_from = "[f64; 3]")]
pub struct BlochVector {
    x: f64,
    y: f64,
    z: f64,
}

impl From<BlochVector> for [f64; 3] {
    fn from(v: BlochVector) -> Self {
        v.to_array()
    }
}

impl TryFrom<[f64; 3]> for BlochVector {
    type Error = Error;

    fn try_from(v: [f64; 3]) -> Result<Self> {
        BlochVector::new(v[0], v[1], v[2])
    }
}

impl BlochVector {
    pub const Z: BlochVector = BlochVector { x: 0.0, y: 0.0, z: 1.0 };
    pub const X: BlochVector = BlochVector { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: BlochVector = BlochVector { x: 0.0, y: 1.0, z: 0.0 };

    /// Checked constructor; the input must already be unit norm.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = x * x + y * y + z * z;
        if (n2 - 1.0).abs() > UNIT_TOL || !n2.is_finite() {
            return Err(Error::NotUnit(n2));
        }
        Ok(Self { x, y, z })
    }

    /// Normalizing constructor. Panics on the zero vector.
    pub fn normalized(x: f64, y: f64, z: f64) -> Self {
        let n = (x * x + y * y + z * z).sqrt();
        assert!(n > 0.0 && n.is_finite(), "cannot normalize {x}, {y}, {z}");
        Self {
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    /// From z-component and azimuth. `z` is clamped to `[-1, 1]`.
    pub fn from_z_azimuth(z: f64, azimuth: f64) -> Self {
        let z = z.clamp(-1.0, 1.0);
        let t = ((1.0 - z) * (1.0 + z)).max(0.0).sqrt();
        let (sp, cp) = azimuth.sin_cos();
        Self {
            x: t * cp,
            y: t * sp,
            z,
        }
    }

    /// From zenith angle `ϑ ∈ [0, π]` and azimuth.
    pub fn from_spherical(zenith: f64, azimuth: f64) -> Self {
        let (st, ct) = zenith.sin_cos();
        let (sp, cp) = azimuth.sin_cos();
        Self {
            x: st * cp,
            y: st * sp,
            z: ct,
        }
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Amplitude of the component in the xy plane, `√(1 − z²)`.
    pub fn transverse(&self) -> f64 {
        ((1.0 - self.z) * (1.0 + self.z)).max(0.0).sqrt()
    }

    pub fn is_pole(&self) -> bool {
        self.transverse() < POLE_EPS
    }

    /// Azimuth in `(-π, π]`, or `None` at a pole.
    pub fn azimuth(&self) -> Option<f64> {
        if self.is_pole() {
            None
        } else {
            Some(wrap_angle(self.y.atan2(self.x)))
        }
    }

    /// Zenith angle in `[0, π]`.
    pub fn zenith(&self) -> f64 {
        self.z.clamp(-1.0, 1.0).acos()
    }

    pub fn dot(&self, other: &BlochVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    /// Rotate about the z axis by `angle`.
    pub fn rotate_z(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            x: c * self.x - s * self.y,
            y: s * self.x + c * self.y,
            z: self.z,
        }
    }
}

/// Reflection across the xz plane: `(x, y, z) ↦ (x, −y, z)`.
pub fn reflect_xz(v: BlochVector) -> BlochVector {
    BlochVector {
        x: v.x,
        y: -v.y,
        z: v.z,
    }
}

/// Difference of azimuths `az(a) − az(b′)` wrapped to `(-π, π]`, or `None`
/// when either vector sits at a pole.
pub fn azimuth_diff(a: &BlochVector, b_prime: &BlochVector) -> Option<f64> {
    Some(wrap_angle(a.azimuth()? - b_prime.azimuth()?))
}

/// Alice's setting `a`, Bob's setting `b`, Bob's reflected setting `b′`
/// and the azimuth difference `χ` between `a` and `b′`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettingPair {
    pub a: BlochVector,
    pub b: BlochVector,
    pub b_prime: BlochVector,
    /// `None` when `a` or `b′` is at a pole.
    pub chi: Option<f64>,
}

impl std::ops::Neg for BlochVector {
    type Output = Self;

    fn neg(self) -> Self {
        Self {
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }
}

impl SettingPair {
    pub fn new(a: BlochVector, b: BlochVector) -> Self {
        let b_prime = reflect_xz(b);
        Self {
            a,
            b,
            b_prime,
            chi: azimuth_diff(&a, &b_prime),
        }
    }

    /// The canonical pair with `a` in the xz plane, given `a_z`, `b_z` and
    /// `χ`. Every pair is equivalent to one of these up to a joint rotation
    /// that leaves all correlators unchanged.
    pub fn from_params(a_z: f64, b_z: f64, chi: f64) -> Self {
        let a = BlochVector::from_z_azimuth(a_z, 0.0);
        let b = BlochVector::from_z_azimuth(b_z, chi);
        let mut pair = Self::new(a, b);
        // keep the requested χ exactly rather than the atan2 round trip
        if pair.chi.is_some() {
            pair.chi = Some(wrap_angle(chi));
        }
        pair
    }

    pub fn is_degenerate(&self) -> bool {
        self.chi.is_none()
    }
}

/// Uniform sample on the sphere: `z` uniform on `[-1, 1]`, azimuth uniform
/// on `[0, 2π)`.
pub fn sample_sphere<R: Rng + ?Sized>(rng: &mut R) -> BlochVector {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..2.0 * PI);
    BlochVector::from_z_azimuth(z, phi)
}

/// A splittable seeded stream. Each split yields an independent ChaCha
/// stream so parallel workers never share a generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomStream {
    seed: u64,
    stream: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream `index`. Distinct indices give distinct streams.
    pub fn split(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(index.wrapping_add(1))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}
