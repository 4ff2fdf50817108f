//! Candidate joint densities `ρ(λ_a, λ_b)` for two-variable local models,
//! restricted to functions of `(ϑ_a, ϑ_b, φ = φ_b − φ_a)`.
//!
//! A [`DensityGrid`] stores `ρ` at the centers of a regular grid: `ϑ` cells
//! split `[0, π]` evenly, `φ` cells split `[−π, π)` evenly. Cell masses use
//! the exact sphere measure, so a constant `ρ = 1/(16π²)` integrates to one.
//!
//! File format (CSV, UTF-8, LF):
//!
//! ```text
//! # epr2-density v1
//! # kind: grid
//! # n_theta: 64
//! # n_phi: 64
//! theta_a,theta_b,phi,weight
//! 0.0245436926,0.0245436926,-3.1170489609,0.0063325739
//! ...
//! ```
//!
//! `weight` is the density value at the cell center. A file with
//! `# kind: diagonal` and no rows denotes the exact same-vector density
//! `λ_a = λ_b`. Metadata lines are optional for grids; the shape is then
//! inferred from the rows.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sample_sphere, BlochVector};

pub const FORMAT_VERSION: &str = "epr2-density v1";

/// Allowed deviation of the total mass from one.
pub const NORMALIZATION_TOL: f64 = 1e-6;

const CENTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    n_theta: usize,
    n_phi: usize,
    values: Vec<f64>,
}

impl DensityGrid {
    /// Tabulate `f(ϑ_a, ϑ_b, φ)` at cell centers. Values must be finite and
    /// non-negative; normalization is not enforced here.
    pub fn from_fn<F>(n_theta: usize, n_phi: usize, f: F) -> Result<Self>
    where
        F: Fn(f64, f64, f64) -> f64,
    {
        if n_theta == 0 || n_phi == 0 {
            return Err(Error::Density("grid needs at least one cell per axis".into()));
        }
        let mut values = Vec::with_capacity(n_theta * n_theta * n_phi);
        for i in 0..n_theta {
            for j in 0..n_theta {
                for k in 0..n_phi {
                    let v = f(theta_center(n_theta, i), theta_center(n_theta, j), phi_center(n_phi, k));
                    if !(v >= 0.0 && v.is_finite()) {
                        return Err(Error::Density(format!("invalid weight {v} in cell ({i}, {j}, {k})")));
                    }
                    values.push(v);
                }
            }
        }
        Ok(Self { n_theta, n_phi, values })
    }

    /// Independent uniform `λ_a` and `λ_b`.
    pub fn uniform(n_theta: usize, n_phi: usize) -> Self {
        Self::from_fn(n_theta, n_phi, |_, _, _| 1.0 / (16.0 * PI * PI)).expect("constant density")
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_theta + j) * self.n_phi + k
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn theta_center(&self, i: usize) -> f64 {
        theta_center(self.n_theta, i)
    }

    pub fn phi_center(&self, k: usize) -> f64 {
        phi_center(self.n_phi, k)
    }

    /// `∫ sin ϑ dϑ` over `ϑ` cell `i`.
    pub fn theta_weight(&self, i: usize) -> f64 {
        let h = PI / self.n_theta as f64;
        (i as f64 * h).cos() - ((i + 1) as f64 * h).cos()
    }

    pub fn phi_width(&self) -> f64 {
        2.0 * PI / self.n_phi as f64
    }

    /// Probability mass of cell `(i, j, k)`, the common azimuth integrated out.
    pub fn cell_mass(&self, i: usize, j: usize, k: usize) -> f64 {
        self.value(i, j, k) * 2.0 * PI * self.theta_weight(i) * self.theta_weight(j) * self.phi_width()
    }

    pub fn total_mass(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n_theta {
            for j in 0..self.n_theta {
                for k in 0..self.n_phi {
                    total += self.cell_mass(i, j, k);
                }
            }
        }
        total
    }

    pub fn normalized(mut self) -> Result<Self> {
        let total = self.total_mass();
        if !(total > 0.0) {
            return Err(Error::Density("density has zero mass".into()));
        }
        self.values.iter_mut().for_each(|v| *v /= total);
        Ok(self)
    }

    pub fn check_normalized(&self) -> Result<()> {
        let total = self.total_mass();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Density(format!("total mass {total} differs from 1")));
        }
        Ok(())
    }

    /// Zero the cells where `keep` is false; the result is not renormalized.
    pub fn masked<F: Fn(f64, f64, f64) -> bool>(&self, keep: F) -> Self {
        let mut out = self.clone();
        for i in 0..self.n_theta {
            for j in 0..self.n_theta {
                for k in 0..self.n_phi {
                    if !keep(self.theta_center(i), self.theta_center(j), self.phi_center(k)) {
                        let idx = self.index(i, j, k);
                        out.values[idx] = 0.0;
                    }
                }
            }
        }
        out
    }
}

fn theta_center(n: usize, i: usize) -> f64 {
    (i as f64 + 0.5) * PI / n as f64
}

fn phi_center(n: usize, k: usize) -> f64 {
    -PI + (k as f64 + 0.5) * 2.0 * PI / n as f64
}

/// A candidate two-variable density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Density {
    /// `λ_a = λ_b`, uniform on the sphere. Kept exact rather than as a grid
    /// delta.
    Diagonal,
    Grid(DensityGrid),
}

impl Density {
    pub fn sampler(&self) -> Result<DensitySampler<'_>> {
        match self {
            Density::Diagonal => Ok(DensitySampler::Diagonal),
            Density::Grid(g) => {
                g.check_normalized()?;
                let mut cumulative = Vec::with_capacity(g.values.len());
                let mut acc = 0.0;
                for i in 0..g.n_theta {
                    for j in 0..g.n_theta {
                        for k in 0..g.n_phi {
                            acc += g.cell_mass(i, j, k);
                            cumulative.push(acc);
                        }
                    }
                }
                Ok(DensitySampler::Grid { grid: g, cumulative })
            }
        }
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut kind = None;
        let mut n_theta = None;
        let mut n_phi = None;
        let mut body = String::new();
        for line in reader.lines() {
            let line = line?;
            if let Some(meta) = line.trim().strip_prefix('#') {
                let meta = meta.trim();
                if let Some((key, value)) = meta.split_once(':') {
                    let value = value.trim();
                    let parse = |v: &str| {
                        v.parse::<usize>()
                            .map_err(|_| Error::Density(format!("bad {key}: {v}")))
                    };
                    match key.trim() {
                        "kind" => kind = Some(value.to_string()),
                        "n_theta" => n_theta = Some(parse(value)?),
                        "n_phi" => n_phi = Some(parse(value)?),
                        _ => {}
                    }
                } else if meta.starts_with("epr2-density") && meta != FORMAT_VERSION {
                    return Err(Error::Density(format!("unsupported format version '{meta}'")));
                }
                continue;
            }
            body.push_str(&line);
            body.push('\n');
        }
        match kind.as_deref() {
            Some("diagonal") => return Ok(Density::Diagonal),
            None | Some("grid") => {}
            Some(other) => return Err(Error::Density(format!("unknown density kind '{other}'"))),
        }

        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(body.as_bytes());
        let headers = rdr.headers()?.clone();
        let expected = ["theta_a", "theta_b", "phi", "weight"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(Error::Density(format!(
                "header must be {}, got {:?}",
                expected.join(","),
                headers
            )));
        }
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let mut vals = [0.0; 4];
            for (slot, field) in vals.iter_mut().zip(rec.iter()) {
                *slot = field
                    .parse()
                    .map_err(|_| Error::Density(format!("not a number: '{field}'")))?;
            }
            rows.push(vals);
        }
        if rows.is_empty() {
            return Err(Error::Density("grid density without rows".into()));
        }
        let distinct = |col: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[col]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() < CENTER_TOL);
            v.len()
        };
        let n_theta = n_theta.unwrap_or_else(|| distinct(0));
        let n_phi = n_phi.unwrap_or_else(|| distinct(2));
        if rows.len() != n_theta * n_theta * n_phi {
            return Err(Error::Density(format!(
                "expected {} rows for a {n_theta}x{n_theta}x{n_phi} grid, got {}",
                n_theta * n_theta * n_phi,
                rows.len()
            )));
        }
        let mut grid = DensityGrid {
            n_theta,
            n_phi,
            values: vec![f64::NAN; rows.len()],
        };
        let cell = |x: f64, lo: f64, width: f64, n: usize| -> Result<usize> {
            let pos = (x - lo) / width - 0.5;
            let idx = pos.round();
            if (pos - idx).abs() * width > CENTER_TOL || idx < 0.0 || idx >= n as f64 {
                return Err(Error::Density(format!("{x} is not a cell center")));
            }
            Ok(idx as usize)
        };
        let (h_theta, h_phi) = (PI / n_theta as f64, 2.0 * PI / n_phi as f64);
        for r in &rows {
            let i = cell(r[0], 0.0, h_theta, n_theta)?;
            let j = cell(r[1], 0.0, h_theta, n_theta)?;
            let k = cell(r[2], -PI, h_phi, n_phi)?;
            if !(r[3] >= 0.0 && r[3].is_finite()) {
                return Err(Error::Density(format!("invalid weight {}", r[3])));
            }
            let idx = grid.index(i, j, k);
            if !grid.values[idx].is_nan() {
                return Err(Error::Density(format!("duplicate cell ({i}, {j}, {k})")));
            }
            grid.values[idx] = r[3];
        }
        Ok(Density::Grid(grid))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# {FORMAT_VERSION}")?;
        match self {
            Density::Diagonal => {
                writeln!(out, "# kind: diagonal")?;
            }
            Density::Grid(g) => {
                writeln!(out, "# kind: grid")?;
                writeln!(out, "# n_theta: {}", g.n_theta)?;
                writeln!(out, "# n_phi: {}", g.n_phi)?;
                let mut w = csv::WriterBuilder::new()
                    .terminator(csv::Terminator::Any(b'\n'))
                    .from_writer(&mut out);
                w.write_record(["theta_a", "theta_b", "phi", "weight"])?;
                for i in 0..g.n_theta {
                    for j in 0..g.n_theta {
                        for k in 0..g.n_phi {
                            w.write_record([
                                format!("{:.12}", g.theta_center(i)),
                                format!("{:.12}", g.theta_center(j)),
                                format!("{:.12}", g.phi_center(k)),
                                format!("{:.17e}", g.value(i, j, k)),
                            ])?;
                        }
                    }
                }
                w.flush()?;
            }
        }
        Ok(())
    }
}

/// Draws `(λ_a, λ_b)` pairs from a [`Density`].
pub enum DensitySampler<'a> {
    Diagonal,
    Grid {
        grid: &'a DensityGrid,
        cumulative: Vec<f64>,
    },
}

impl DensitySampler<'_> {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (BlochVector, BlochVector) {
        match self {
            DensitySampler::Diagonal => {
                let l = sample_sphere(rng);
                (l, l)
            }
            DensitySampler::Grid { grid, cumulative } => {
                let total = *cumulative.last().expect("non-empty grid");
                let u = rng.gen_range(0.0..total);
                let cell = cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1);
                let k = cell % grid.n_phi;
                let j = (cell / grid.n_phi) % grid.n_theta;
                let i = cell / (grid.n_phi * grid.n_theta);
                let h = PI / grid.n_theta as f64;
                // uniform in cos ϑ within the cell is uniform in sphere measure
                let mut zenith = |i: usize| {
                    let (hi, lo) = ((i as f64 * h).cos(), ((i + 1) as f64 * h).cos());
                    rng.gen_range(lo..=hi).clamp(-1.0, 1.0).acos()
                };
                let (ta, tb) = (zenith(i), zenith(j));
                let dphi = grid.phi_width();
                let phi = -PI + (k as f64 + rng.gen_range(0.0..1.0)) * dphi;
                let phi_a = rng.gen_range(0.0..2.0 * PI);
                (
                    BlochVector::from_spherical(ta, phi_a),
                    BlochVector::from_spherical(tb, phi_a + phi),
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RandomStream;

    #[test]
    fn uniform_is_normalized() {
        let g = DensityGrid::uniform(16, 12);
        assert!((g.total_mass() - 1.0).abs() < 1e-12);
        assert!(g.check_normalized().is_ok());
    }

    #[test]
    fn negative_weights_rejected() {
        assert!(DensityGrid::from_fn(4, 4, |_, _, p| p).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = DensityGrid::from_fn(6, 8, |a, b, p| 1.0 + a * b + p.cos())
            .unwrap()
            .normalized()
            .unwrap();
        let d = Density::Grid(g.clone());
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = Density::from_reader(buf.as_slice()).unwrap();
        let Density::Grid(h) = back else {
            panic!("expected grid")
        };
        assert_eq!((h.n_theta(), h.n_phi()), (6, 8));
        for (x, y) in g.values.iter().zip(&h.values) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }

        let mut buf = Vec::new();
        Density::Diagonal.write_csv(&mut buf).unwrap();
        assert_eq!(Density::from_reader(buf.as_slice()).unwrap(), Density::Diagonal);
    }

    #[test]
    fn shape_inferred_without_metadata() {
        let g = DensityGrid::uniform(3, 4);
        let mut buf = Vec::new();
        Density::Grid(g).write_csv(&mut buf).unwrap();
        let text: String = String::from_utf8(buf)
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with('#'))
            .map(|l| format!("{l}\n"))
            .collect();
        let Density::Grid(h) = Density::from_reader(text.as_bytes()).unwrap() else {
            panic!("expected grid")
        };
        assert_eq!((h.n_theta(), h.n_phi()), (3, 4));
    }

    #[test]
    fn malformed_files_rejected() {
        let bad_header = "a,b,c,d\n0,0,0,1\n";
        assert!(Density::from_reader(bad_header.as_bytes()).is_err());
        let off_center = "# n_theta: 1\n# n_phi: 1\ntheta_a,theta_b,phi,weight\n0.3,0.3,0.0,1\n";
        assert!(Density::from_reader(off_center.as_bytes()).is_err());
        let version = "# epr2-density v9\n# kind: diagonal\n";
        assert!(Density::from_reader(version.as_bytes()).is_err());
    }

    #[test]
    fn grid_sampler_has_uniform_marginals() {
        let d = Density::Grid(DensityGrid::uniform(8, 8));
        let s = d.sampler().unwrap();
        let mut rng = RandomStream::new(1).rng();
        let n = 200_000;
        let (mut za, mut zb, mut zab) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b) = s.sample(&mut rng);
            za += a.z();
            zb += b.z();
            zab += a.z() * b.z();
        }
        let n = n as f64;
        assert!((za / n).abs() < 0.01 && (zb / n).abs() < 0.01 && (zab / n).abs() < 0.01);
    }
}
