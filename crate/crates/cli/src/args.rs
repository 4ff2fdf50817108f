use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use epr2_core::{Exec, StateParam};

#[derive(Parser, Debug, Clone, Serialize)]
#[command(
    name = "epr2",
    version,
    about = "Local-content decomposition of two-qubit pure-state statistics"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct Global {
    /// Seed for every random stream of the run.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the main output here instead of stdout; a manifest is written
    /// next to it as `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON output where the default is CSV (curve).
    #[arg(long, global = true)]
    pub json: bool,
    /// Tolerance: search convergence (verify, local-weight), quadrature
    /// agreement (mc-validate), constraint slack (check-density).
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Search grid as `n_az,n_bz,n_chi` or a single count for all three.
    #[arg(long, global = true)]
    pub grid: Option<GridArg>,
    /// Nelder–Mead iterations per refinement start
    #[arg(long, global = true)]
    pub refine_iters: Option<usize>,
    /// Monte Carlo samples (per estimate) or random pairs (witness sweep).
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Settings per party in the chained inequality.
    #[arg(long, global = true)]
    pub n_settings: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = ExecArg::Parallel)]
    pub exec: ExecArg,
}

impl Global {
    pub fn exec(&self) -> Exec {
        match self.exec {
            ExecArg::Sequential => Exec::Sequential,
            ExecArg::Parallel => Exec::default(),
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Check the decomposition with local weight p_L (default p_L = c).
    Verify {
        #[command(flatten)]
        state: StateArgs,
        /// Local weight to test, in [0, 1]; defaults to c
        #[arg(long)]
        pl: Option<f64>,
    },
    /// Lower and upper bounds on the local content over θ ∈ [0, π/4].
    Curve {
        /// Number of θ values, endpoints included.
        #[arg(long, default_value_t = 20)]
        points: usize,
    },
    /// Check the closed-form local correlator against quadrature and
    /// Monte Carlo, and the Monte Carlo marginals against v_z.
    McValidate {},
    /// Optimize the chained Bell expression and report the upper bound.
    Chained {
        #[command(flatten)]
        state: StateArgs,
    },
    /// Largest local weight the model admits for the state.
    LocalWeight {
        #[command(flatten)]
        state: StateArgs,
    },
    /// Two-vector local models.
    #[command(subcommand)]
    TwoLambda(TwoLambda),
}

#[derive(Subcommand, Debug, Clone, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoLambda {
    /// Check a density file against the symmetry and allowed-region
    /// constraints.
    CheckDensity {
        #[command(flatten)]
        state: StateArgs,
        /// Density CSV, as written by `make-density`
        #[arg(long)]
        file: PathBuf,
        /// Also estimate the induced statistics and test the decomposition
        /// constraints at p_L = c.
        #[arg(long)]
        induced: bool,
    },
    /// Search for settings on which a pair of hidden vectors gives an
    /// outcome quantum mechanics forbids. Without --pair, sweep random
    /// pairs and compare with the allowed-pair predicate.
    Witness {
        #[command(flatten)]
        state: StateArgs,
        /// `theta_a,phi_a,theta_b,phi_b` in radians; `pi`, `pi/2`, `0.5pi`
        /// are accepted.
        #[arg(long)]
        pair: Option<PairArg>,
    },
    /// Fraction of independent uniform pairs that are allowed, for one
    /// state or over s ∈ [0, 1].
    RegionVolume {
        #[command(flatten)]
        state: StateArgs,
        /// Number of s values when no state is given.
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
    /// Write a density file.
    MakeDensity {
        #[arg(long, value_enum)]
        kind: DensityKind,
        #[command(flatten)]
        state: StateArgs,
        #[arg(long, default_value_t = 64)]
        n_theta: usize,
        #[arg(long, default_value_t = 64)]
        n_phi: usize,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityKind {
    Diagonal,
    Uniform,
    /// Uniform product restricted to allowed cells.
    Truncated,
}

#[derive(Args, Debug, Clone, Serialize)]
#[group(multiple = false)]
pub struct StateArgs {
    /// State angle θ in cos θ|00⟩ + sin θ|11⟩.
    #[arg(long, allow_negative_numbers = true)]
    pub theta: Option<f64>,
    /// cos 2θ.
    #[arg(long)]
    pub c: Option<f64>,
    /// sin 2θ.
    #[arg(long)]
    pub s: Option<f64>,
}

impl StateArgs {
    pub fn resolve_opt(&self) -> Result<Option<StateParam>> {
        let st = match (self.theta, self.c, self.s) {
            (Some(t), None, None) => StateParam::from_theta(t)?,
            (None, Some(c), None) => StateParam::from_c(c)?,
            (None, None, Some(s)) => StateParam::from_s(s)?,
            (None, None, None) => return Ok(None),
            _ => bail!("give only one of --theta, --c, --s"),
        };
        Ok(Some(st))
    }

    pub fn resolve(&self) -> Result<StateParam> {
        self.resolve_opt()?
            .ok_or_else(|| anyhow!("a state is required: --theta, --c or --s"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GridArg(pub [usize; 3]);

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
            .collect::<std::result::Result<_, _>>()?;
        match parts[..] {
            [n] => Ok(Self([n; 3])),
            [a, b, c] => Ok(Self([a, b, c])),
            _ => Err("expected one or three comma-separated counts".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairArg(pub [f64; 4]);

/// A number, optionally times or divided into `pi`: `1.2`, `pi`, `-pi/2`,
/// `0.5pi`, `0.5*pi`.
fn parse_angle(s: &str) -> std::result::Result<f64, String> {
    let t = s.trim().to_ascii_lowercase();
    let bad = || format!("not an angle: '{s}'");
    let Some(idx) = t.find("pi") else {
        return t.parse().map_err(|_| bad());
    };
    let (pre, post) = (t[..idx].trim_end_matches('*'), &t[idx + 2..]);
    let factor = match pre {
        "" => 1.0,
        "-" => -1.0,
        p => p.parse::<f64>().map_err(|_| bad())?,
    };
    let div = match post.strip_prefix('/') {
        Some(d) => d.parse::<f64>().map_err(|_| bad())?,
        None if post.is_empty() => 1.0,
        None => return Err(bad()),
    };
    Ok(factor * std::f64::consts::PI / div)
}

impl FromStr for PairArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let v: Vec<f64> = s.split(',').map(parse_angle).collect::<std::result::Result<_, _>>()?;
        let arr: [f64; 4] = v
            .try_into()
            .map_err(|_| "expected theta_a,phi_a,theta_b,phi_b".to_string())?;
        Ok(Self(arr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn angles() {
        assert_eq!(parse_angle("pi").unwrap(), PI);
        assert_eq!(parse_angle("-pi/2").unwrap(), -PI / 2.0);
        assert_eq!(parse_angle("0.5pi").unwrap(), 0.5 * PI);
        assert_eq!(parse_angle("0.25*pi").unwrap(), 0.25 * PI);
        assert_eq!(parse_angle("1.5").unwrap(), 1.5);
        assert!(parse_angle("pix").is_err());
    }

    #[test]
    fn grids() {
        assert_eq!("41".parse::<GridArg>().unwrap(), GridArg([41; 3]));
        assert_eq!("5,7,9".parse::<GridArg>().unwrap(), GridArg([5, 7, 9]));
        assert!("5,7".parse::<GridArg>().is_err());
    }

    #[test]
    fn pairs() {
        let p: PairArg = "pi/2,0,pi/2,pi".parse().unwrap();
        assert_eq!(p.0, [PI / 2.0, 0.0, PI / 2.0, PI]);
        assert!("1,2,3".parse::<PairArg>().is_err());
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
