use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use uld_core::analysis::FamilySetup;
use uld_core::dynamics::SolverKind;

use crate::CliError;

pub const WORKERS_ENV: &str = "ULD_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "uld", version, about = "Underdamped Langevin solver experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Strong error against a coupled reference over a ladder of step counts.
    Converge(ConvergeArgs),
    /// Strong error at fixed step count across dimensions.
    Dimscale(DimscaleArgs),
    /// Deterministic weak-error order of RMM on a quadratic.
    Weak(WeakArgs),
    /// Monte Carlo estimate of the crossing-event probability.
    Prob(ProbArgs),
    /// Grid search for a certified positive lower-bound constant.
    Clow(ClowArgs),
    /// Pathwise perturbation bound for the bump family.
    Perturb(PerturbArgs),
    /// Ordering of solutions for ordered bump indices.
    Trap(TrapArgs),
    /// Endpoint separation versus the number of differing bumps.
    Separate(SeparateArgs),
    /// Equivalence-class and chain experiments on queried cells.
    Lattice(LatticeArgs),
    /// Exhaustive check of the symmetric chain decomposition.
    #[command(name = "scd-check")]
    ScdCheck(ScdCheckArgs),
}

/// Declares an options struct whose fields can come from flags or from a
/// TOML file given by `--config`. Every field is optional at this level;
/// flags win over file values.
macro_rules! options {
    ($(#[$smeta:meta])* $name:ident { $( $(#[$fmeta:meta])* $field:ident : $ty:ty ),* $(,)? }) => {
        $(#[$smeta])*
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            /// TOML file supplying defaults for any option.
            #[arg(long)]
            #[serde(skip)]
            pub config: Option<PathBuf>,
            /// Master seed (required for randomized experiments).
            #[arg(long)]
            pub seed: Option<u64>,
            /// Worker threads; defaults to the ULD_WORKERS variable.
            #[arg(long)]
            pub workers: Option<usize>,
            /// Directory receiving `<experiment>.csv` and `<experiment>.json`.
            #[arg(long = "out-dir")]
            pub out_dir: Option<PathBuf>,
            $( $(#[$fmeta])* pub $field: Option<$ty>, )*
        }

        impl $name {
            fn overlay(self, file: Self) -> Self {
                $name {
                    config: self.config,
                    seed: self.seed.or(file.seed),
                    workers: self.workers.or(file.workers),
                    out_dir: self.out_dir.or(file.out_dir),
                    $( $field: self.$field.or(file.$field), )*
                }
            }

            /// Merge in the `--config` file, if any.
            pub fn resolve(self) -> Result<Self, CliError> {
                match &self.config {
                    Some(path) => {
                        let file: Self = read_config(path)?;
                        Ok(self.overlay(file))
                    }
                    None => Ok(self),
                }
            }

            pub fn seed(&self) -> Result<u64, CliError> {
                require(self.seed, "seed")
            }

            pub fn workers(&self) -> Result<Option<usize>, CliError> {
                match self.workers {
                    Some(0) => Err(CliError::Config("`workers` must be at least 1".into())),
                    Some(w) => Ok(Some(w)),
                    None => workers_from_env(),
                }
            }

            pub fn out_dir(&self) -> PathBuf {
                self.out_dir.clone().unwrap_or_else(|| PathBuf::from("uld-out"))
            }
        }
    };
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        CliError::Config(format!("cannot read config `{}`: {e}", path.display()))
    })?;
    toml::from_str(&text)
        .map_err(|e| CliError::Config(format!("config `{}`: {e}", path.display())))
}

fn workers_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(Some(w)),
            _ => Err(CliError::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{v}`"
            ))),
        },
        _ => Ok(None),
    }
}

pub fn require<T>(value: Option<T>, key: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing required option `{key}`")))
}

options! {
    ConvergeArgs {
        #[arg(long)]
        solver: SolverKind,
        /// e.g. `quadratic:u=1,L=4` or `smooth:ell=1,L=4,d=2`.
        #[arg(long)]
        potential: String,
        /// Strictly increasing step counts.
        #[arg(long, value_delimiter = ',')]
        ns: Vec<usize>,
        #[arg(long)]
        trials: u64,
        #[arg(long = "T")]
        #[serde(rename = "T")]
        horizon: f64,
        /// Reference resolution multiplier for non-quadratic potentials.
        #[arg(long = "reference-factor")]
        reference_factor: usize,
    }
}

options! {
    DimscaleArgs {
        #[arg(long)]
        solver: SolverKind,
        #[arg(long)]
        ell: f64,
        #[arg(long = "L")]
        #[serde(rename = "L")]
        lip: f64,
        #[arg(long = "d", value_delimiter = ',')]
        #[serde(rename = "d")]
        dims: Vec<usize>,
        /// Step count used for every dimension.
        #[arg(long)]
        ns: usize,
        #[arg(long)]
        trials: u64,
        #[arg(long = "T")]
        #[serde(rename = "T")]
        horizon: f64,
    }
}

options! {
    WeakArgs {
        #[arg(long)]
        u: f64,
        #[arg(long = "L")]
        #[serde(rename = "L")]
        lip: f64,
        #[arg(long = "T")]
        #[serde(rename = "T")]
        horizon: f64,
        /// Step sizes; each must divide T.
        #[arg(long = "h", value_delimiter = ',')]
        #[serde(rename = "h")]
        hs: Vec<f64>,
        /// Gauss–Legendre nodes for the midpoint average.
        #[arg(long)]
        nodes: usize,
        /// Minimum accepted covariance-error slope.
        #[arg(long = "min-slope")]
        min_slope: f64,
    }
}

options! {
    ProbArgs {
        #[arg(long)]
        cx: f64,
        #[arg(long)]
        cv: f64,
        #[arg(long)]
        u: f64,
        #[arg(long = "L")]
        #[serde(rename = "L")]
        lip: f64,
        #[arg(long = "T")]
        #[serde(rename = "T")]
        horizon: f64,
        #[arg(long)]
        trials: u64,
        /// Uniform steps of the grid on which path extrema are taken.
        #[arg(long)]
        grid: usize,
    }
}

options! {
    ClowArgs {
        #[arg(long)]
        ell: f64,
        #[arg(long = "L")]
        #[serde(rename = "L")]
        lip: f64,
        #[arg(long = "T")]
        #[serde(rename = "T")]
        horizon: f64,
        #[arg(long, value_delimiter = ',')]
        cx: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        cv: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        u: Vec<f64>,
        #[arg(long = "ur", value_delimiter = ',')]
        #[serde(rename = "ur")]
        u_r: Vec<f64>,
        #[arg(long)]
        trials: u64,
        #[arg(long)]
        grid: usize,
    }
}

/// Bump-family parameters shared by `perturb`, `trap`, `separate` and
/// `lattice`.
macro_rules! family_fields {
    ($name:ident { $($rest:tt)* }) => {
        options! {
            $name {
                #[arg(long)]
                ell: f64,
                #[arg(long = "L")]
                #[serde(rename = "L")]
                lip: f64,
                #[arg(long)]
                u: f64,
                #[arg(long = "ur")]
                #[serde(rename = "ur")]
                u_r: f64,
                #[arg(long)]
                cx: f64,
                #[arg(long)]
                cv: f64,
                #[arg(long = "T")]
                #[serde(rename = "T")]
                horizon: f64,
                #[arg(long)]
                trials: u64,
                /// Fine grid steps.
                #[arg(long)]
                grid: usize,
                $($rest)*
            }
        }

        impl $name {
            /// Family parameters, with the documented defaults for any that
            /// are missing.
            pub fn setup(&self) -> FamilySetup {
                FamilySetup {
                    ell: self.ell.unwrap_or(1.0),
                    lip: self.lip.unwrap_or(4.0),
                    u: self.u.unwrap_or(2.5),
                    u_r: self.u_r.unwrap_or(3.0),
                    cx: self.cx.unwrap_or(0.02),
                    cv: self.cv.unwrap_or(3.0),
                    horizon: self.horizon.unwrap_or(1.0),
                }
            }
        }
    };
}

family_fields! {
    PerturbArgs {
        /// Bump counts `N` per side.
        #[arg(long = "n", value_delimiter = ',')]
        #[serde(rename = "n")]
        n_list: Vec<usize>,
        /// Relative slack on the bounds.
        #[arg(long)]
        slack: f64,
    }
}

family_fields! {
    TrapArgs {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        tolerance: f64,
    }
}

family_fields! {
    SeparateArgs {
        #[arg(long)]
        n: usize,
        /// Numbers of differing bumps.
        #[arg(long, value_delimiter = ',')]
        bumps: Vec<usize>,
        #[arg(long)]
        factor: f64,
    }
}

family_fields! {
    LatticeArgs {
        #[arg(long)]
        solver: SolverKind,
        /// Query budgets `N`.
        #[arg(long = "n", value_delimiter = ',')]
        #[serde(rename = "n")]
        n_list: Vec<usize>,
        /// Reduced indices sampled per path for the spread; 0 skips the
        /// reference-solution parts.
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        factor: f64,
    }
}

options! {
    ScdCheckArgs {
        #[arg(long)]
        n: usize,
        /// Also write the chains, one per line, to `scd-<n>.txt`.
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        print: bool,
    }
}
