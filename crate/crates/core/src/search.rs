//! Global search over the canonical setting parameters `(a_z, b_z, χ)`:
//! a dense grid, then Nelder–Mead refinement from the best nodes.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{wrap_angle, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Grid nodes along `a_z`, `b_z` and `χ`.
    pub grid: [usize; 3],
    /// Iteration cap for each local refinement.
    pub refine_iters: usize,
    /// Convergence tolerance of the refinement and slack of pass/fail checks.
    pub tolerance: f64,
    /// Number of grid nodes refined locally.
    pub multistart: usize,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid: [101, 101, 181],
            refine_iters: 2000,
            tolerance: 1e-9,
            multistart: 32,
            seed: 0,
            exec: Exec::default(),
        }
    }
}

impl SearchConfig {
    /// A lighter grid, for tests and quick looks.
    pub fn coarse() -> Self {
        Self {
            grid: [41, 41, 73],
            refine_iters: 1500,
            multistart: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.iter().any(|&n| n < 2) {
            return Err(Error::Config("grid sizes must be at least 2".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if self.multistart == 0 {
            return Err(Error::Config("multistart must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Nelder–Mead minimization. `project` maps raw simplex points back into the
/// feasible set before evaluation; the reported point is projected.
pub fn nelder_mead<F, P>(f: F, project: P, x0: &[f64], step: &[f64], max_iters: usize, ftol: f64) -> NelderMeadResult
where
    F: Fn(&[f64]) -> f64,
    P: Fn(&mut [f64]),
{
    let n = x0.len();
    let eval = |x: &mut Vec<f64>| {
        project(x);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut p = x0.to_vec();
    let f0 = eval(&mut p);
    simplex.push((p, f0));
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step[i];
        let fp = eval(&mut p);
        simplex.push((p, fp));
    }
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iters {
        iters += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, worst) = (simplex[0].1, simplex[n].1);
        let spread = if worst.is_finite() {
            (worst - best).abs()
        } else {
            f64::INFINITY
        };
        let size = simplex[1..]
            .iter()
            .map(|(p, _)| {
                p.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread <= ftol * (1.0 + best.abs()) && size < 1e-10 {
            converged = true;
            break;
        }
        if size < 1e-14 {
            converged = true;
            break;
        }
        let mut centroid = vec![0.0; n];
        for (p, _) in &simplex[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let mut xr = along(alpha);
        let fr = eval(&mut xr);
        if fr < simplex[0].1 {
            let mut xe = along(gamma);
            let fe = eval(&mut xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let outside = fr < simplex[n].1;
            let mut xc = if outside { along(rho) } else { along(-rho) };
            let fc = eval(&mut xc);
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for (p, fp) in simplex.iter_mut().skip(1) {
                    for (x, b) in p.iter_mut().zip(&x_best) {
                        *x = b + sigma * (*x - b);
                    }
                    *fp = eval(p);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    NelderMeadResult { x, f, iters, converged }
}

/// The `(a_z, b_z, χ)` box: z-components clamped, `χ` wrapped.
pub fn project_settings(x: &mut [f64]) {
    x[0] = x[0].clamp(-1.0, 1.0);
    x[1] = x[1].clamp(-1.0, 1.0);
    if x.len() > 2 {
        x[2] = wrap_angle(x[2]);
    }
}

/// Best point of a search: objective value and `(a_z, b_z, χ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub value: f64,
    pub params: [f64; 3],
}

fn push_top(top: &mut Vec<SearchHit>, hit: SearchHit, k: usize) {
    if top.len() < k {
        top.push(hit);
        top.sort_by(|a, b| b.value.total_cmp(&a.value));
    } else if hit.value > top[k - 1].value {
        top[k - 1] = hit;
        top.sort_by(|a, b| b.value.total_cmp(&a.value));
    }
}

/// Maximize `obj(a_z, b_z, χ)`. The grid covers the full box; the seams
/// `χ = 0` and `χ = π` get their own two-parameter searches because the
/// objective is kinked across them and the maximizer often sits on one.
/// The returned value is never below any grid node.
pub fn maximize_settings<F>(obj: F, cfg: &SearchConfig) -> SearchHit
where
    F: Fn(f64, f64, f64) -> f64 + Sync + Send,
{
    let [n_a, n_b, n_chi] = cfg.grid;
    let az = linspace(-1.0, 1.0, n_a);
    let bz = linspace(-1.0, 1.0, n_b);
    let chis = linspace(-PI, PI, n_chi);
    let k = cfg.multistart;
    let value = |x: f64| if x.is_nan() { f64::NEG_INFINITY } else { x };

    let rows = cfg.exec.map(n_a, |i| {
        let mut top = Vec::with_capacity(k + 1);
        for &b in &bz {
            for &c in &chis {
                let hit = SearchHit {
                    value: value(obj(az[i], b, c)),
                    params: [az[i], b, c],
                };
                push_top(&mut top, hit, k);
            }
        }
        top
    });
    let mut starts = Vec::with_capacity(k + 1);
    for hit in rows.into_iter().flatten() {
        push_top(&mut starts, hit, k);
    }
    // a few seeded random starts guard against a grid that misses a basin
    let mut rng = RandomStream::new(cfg.seed).split(0xA11).rng();
    let mut random_starts: Vec<SearchHit> = (0..k.div_ceil(4))
        .map(|_| {
            let p = [
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-1.0..=1.0),
                rng.gen_range(-PI..PI),
            ];
            SearchHit {
                value: value(obj(p[0], p[1], p[2])),
                params: p,
            }
        })
        .collect();
    starts.append(&mut random_starts);

    let steps = [
        2.0 / (n_a - 1) as f64,
        2.0 / (n_b - 1) as f64,
        2.0 * PI / (n_chi - 1) as f64,
    ];
    let refined = cfg.exec.map_slice(&starts, |s| {
        let r = nelder_mead(
            |x| -value(obj(x[0], x[1], x[2])),
            project_settings,
            &s.params,
            &steps,
            cfg.refine_iters,
            cfg.tolerance * 1e-3,
        );
        let hit = SearchHit {
            value: -r.f,
            params: [r.x[0], r.x[1], r.x[2]],
        };
        if hit.value >= s.value {
            hit
        } else {
            *s
        }
    });

    let mut best = refined
        .into_iter()
        .chain(starts.iter().copied())
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start");

    for seam in [0.0, PI] {
        let hit = maximize_seam(&obj, seam, cfg);
        if hit.value > best.value {
            best = hit;
        }
    }
    best
}

fn maximize_seam<F>(obj: &F, chi: f64, cfg: &SearchConfig) -> SearchHit
where
    F: Fn(f64, f64, f64) -> f64 + Sync + Send,
{
    let [n_a, n_b, _] = cfg.grid;
    let az = linspace(-1.0, 1.0, n_a);
    let bz = linspace(-1.0, 1.0, n_b);
    let k = cfg.multistart.div_ceil(2);
    let value = |x: f64| if x.is_nan() { f64::NEG_INFINITY } else { x };
    let rows = cfg.exec.map(n_a, |i| {
        let mut top = Vec::with_capacity(k + 1);
        for &b in &bz {
            let hit = SearchHit {
                value: value(obj(az[i], b, chi)),
                params: [az[i], b, chi],
            };
            push_top(&mut top, hit, k);
        }
        top
    });
    let mut starts = Vec::with_capacity(k + 1);
    for hit in rows.into_iter().flatten() {
        push_top(&mut starts, hit, k);
    }
    let steps = [2.0 / (n_a - 1) as f64, 2.0 / (n_b - 1) as f64];
    let refined = cfg.exec.map_slice(&starts, |s| {
        let r = nelder_mead(
            |x| -value(obj(x[0], x[1], chi)),
            project_settings,
            &s.params[..2],
            &steps,
            cfg.refine_iters,
            cfg.tolerance * 1e-3,
        );
        SearchHit {
            value: -r.f,
            params: [r.x[0], r.x[1], chi],
        }
    });
    refined
        .into_iter()
        .chain(starts)
        .max_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nelder_mead_rosenbrock() {
        let r = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            |_| {},
            &[-1.2, 1.0],
            &[0.1, 0.1],
            5000,
            1e-14,
        );
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn projection_respected() {
        let r = nelder_mead(|x| -x[0] - x[1], project_settings, &[0.0, 0.0], &[0.1, 0.1], 500, 1e-12);
        assert_eq!(r.x, vec![1.0, 1.0]);
    }

    #[test]
    fn maximize_smooth_interior() {
        let obj = |a: f64, b: f64, c: f64| -(a - 0.123).powi(2) - (b + 0.456).powi(2) - (c - 1.0).powi(2);
        let hit = maximize_settings(obj, &SearchConfig::coarse());
        assert!(hit.value > -1e-10, "{hit:?}");
        assert!((hit.params[0] - 0.123).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        let mut c = SearchConfig::default();
        assert!(c.validate().is_ok());
        c.grid[1] = 1;
        assert!(c.validate().is_err());
        let c = SearchConfig {
            tolerance: 0.0,
            ..SearchConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn grid_includes_endpoints() {
        let g = linspace(-PI, PI, 181);
        assert!(g.contains(&0.0) || g[90].abs() < 1e-15);
        assert_eq!(g[180], PI);
    }
}
