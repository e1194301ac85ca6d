//! Experiment harnesses: strong and weak error curves, crossing probabilities
//! and the invariant checks of the bump-potential construction.

mod invariants;
mod probability;

pub use invariants::*;
pub use probability::*;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    exact_moments, moment_propagate_rmm_quadratic, reference_solution, solve, RunOptions,
    SolverKind,
};
use crate::error::{invalid, Result};
use crate::noise::{sample_noise, ExponentSet, GridPlan};
use crate::par::{map_trials, Workers};
use crate::potentials::{FunctionClass, Potential, Quadratic};
use crate::rng::{RngSpec, StreamPurpose};
use crate::stats::{fit_loglog, mean_and_se, LineFit};

/// Smallest number of points accepted by [`fit_order`].
pub const MIN_FIT_POINTS: usize = 4;

/// Mean-square error at one step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub steps: usize,
    pub mse: f64,
    pub se: f64,
    pub trials: u64,
}

impl ErrorEntry {
    pub fn rmse(&self) -> f64 {
        self.mse.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub solver: SolverKind,
    pub potential: String,
    pub dim: usize,
    pub horizon: f64,
    pub seed: u64,
    /// Step count of the RMM self-convergence reference; `None` when the
    /// reference is the exact solution.
    pub reference_steps: Option<usize>,
    pub entries: Vec<ErrorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub r2: f64,
    pub residuals: Vec<f64>,
    /// Step counts that entered the fit.
    pub used: Vec<usize>,
    /// Step counts excluded for zero error or reference noise floor.
    pub dropped: Vec<usize>,
}

impl OrderFit {
    fn from_line(line: LineFit, used: Vec<usize>, dropped: Vec<usize>) -> Self {
        OrderFit {
            slope: line.slope,
            intercept: line.intercept,
            slope_se: line.slope_se,
            r2: line.r2,
            residuals: line.residuals,
            used,
            dropped,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrongErrorConfig {
    pub solver: SolverKind,
    pub lip: f64,
    pub horizon: f64,
    pub steps: Vec<usize>,
    pub trials: u64,
    pub seed: u64,
    /// Reference resolution relative to the least common multiple of `steps`
    /// (only used for potentials without a closed-form solution).
    pub reference_factor: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn validate_ladder(name: &'static str, steps: &[usize]) -> Result<()> {
    if steps.is_empty() {
        return Err(invalid(name, "list is empty"));
    }
    if steps[0] == 0 {
        return Err(invalid(name, "step counts must be positive"));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid(name, "list must be strictly increasing"));
    }
    Ok(())
}

/// Midpoint fractions for `steps` RMM steps, drawn from `purpose`'s stream.
pub fn draw_etas(rng: &RngSpec, purpose: StreamPurpose, steps: usize) -> Vec<f64> {
    let mut stream = rng.stream(purpose);
    (0..steps).map(|_| stream.random::<f64>()).collect()
}

/// Exponents needed by the exact solver for each distinct curvature.
fn exact_exponents(curvatures: &[f64], lip: f64) -> Result<ExponentSet> {
    let mut set = ExponentSet::default();
    for &u in curvatures {
        let (lm, lp) = crate::dynamics::decay_rates(u, lip)?;
        set.insert(lm)?;
        set.insert(lp)?;
    }
    Ok(set)
}

/// Mean-square error of `cfg.solver` at every step count against the coupled
/// reference, with trials spread over `workers`.
pub fn strong_error(
    cfg: &StrongErrorConfig,
    p: &dyn Potential,
    workers: Workers,
) -> Result<ErrorCurve> {
    validate_ladder("ns", &cfg.steps)?;
    if cfg.trials < 2 {
        return Err(invalid("trials", "need at least 2 trials"));
    }
    if cfg.steps.len() > 250 {
        return Err(invalid("ns", "at most 250 step counts"));
    }
    let curvatures = p.quadratic_curvatures();
    if cfg.solver == SolverKind::Exact && curvatures.is_none() {
        return Err(invalid("solver", "exact solver needs a quadratic potential"));
    }
    let thetas = match &curvatures {
        Some(c) => exact_exponents(c, cfg.lip)?,
        None => ExponentSet::default(),
    };
    let reference_steps = if curvatures.is_some() {
        None
    } else {
        let lcm = cfg.steps.iter().fold(1, |acc, &n| acc / gcd(acc, n) * n);
        Some(lcm * cfg.reference_factor.max(1))
    };
    // Fail fast on configuration errors before spawning trials.
    GridPlan::new(cfg.horizon)?;

    let per_trial = map_trials(cfg.trials, workers, |trial| -> Result<Vec<f64>> {
        let rng = RngSpec::new(cfg.seed, trial);
        let mut plan = GridPlan::new(cfg.horizon)?;
        let mut level_etas = Vec::with_capacity(cfg.steps.len());
        for (level, &ns) in cfg.steps.iter().enumerate() {
            if cfg.solver == SolverKind::Rmm {
                let etas = draw_etas(&rng, StreamPurpose::Eta(level as u8), ns);
                plan.with_midpoints(ns, &etas)?;
                level_etas.push(etas);
            } else {
                plan.uniform(ns)?;
                level_etas.push(Vec::new());
            }
        }
        let ref_etas = match reference_steps {
            Some(nref) => {
                let etas = draw_etas(&rng, StreamPurpose::ReferenceEta, nref);
                plan.with_midpoints(nref, &etas)?;
                etas
            }
            None => Vec::new(),
        };
        let nr = sample_noise(plan.build(), p.dim(), &thetas, &rng)?;
        let reference = reference_solution(p, cfg.lip, &nr, reference_steps.unwrap_or(1), &ref_etas)?;
        cfg.steps
            .iter()
            .zip(&level_etas)
            .map(|(&ns, etas)| {
                let run = solve(cfg.solver, p, cfg.lip, ns, &nr, etas, RunOptions::FINAL_ONLY)?;
                Ok(run
                    .final_state
                    .x
                    .iter()
                    .zip(&reference.x)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum())
            })
            .collect()
    });
    let per_trial: Vec<Vec<f64>> = per_trial.into_iter().collect::<Result<_>>()?;

    let entries = cfg
        .steps
        .iter()
        .enumerate()
        .map(|(level, &ns)| {
            let sq: Vec<f64> = per_trial.iter().map(|t| t[level]).collect();
            let (mse, se) = mean_and_se(&sq);
            ErrorEntry {
                steps: ns,
                mse,
                se,
                trials: cfg.trials,
            }
        })
        .collect();
    Ok(ErrorCurve {
        solver: cfg.solver,
        potential: p.label(),
        dim: p.dim(),
        horizon: cfg.horizon,
        seed: cfg.seed,
        reference_steps,
        entries,
    })
}

/// Least squares of `log rmse` against `log Ns`.
///
/// Entries with zero error are dropped, as are entries whose rmse is within
/// 100x of the estimated reference error (extrapolated from the finest level
/// with order 3/2).
pub fn fit_order(curve: &ErrorCurve) -> Result<OrderFit> {
    let floor = match (curve.reference_steps, curve.entries.last()) {
        (Some(nref), Some(last)) => last.rmse() * (last.steps as f64 / nref as f64).powf(1.5),
        _ => 0.0,
    };
    let mut used = Vec::new();
    let mut dropped = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for e in &curve.entries {
        if e.mse > 0.0 && floor <= 0.01 * e.rmse() {
            used.push(e.steps);
            xs.push(e.steps as f64);
            ys.push(e.rmse());
        } else {
            dropped.push(e.steps);
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        return Err(invalid(
            "ns",
            format!(
                "order fit needs at least {MIN_FIT_POINTS} usable step counts, got {}",
                xs.len()
            ),
        ));
    }
    Ok(OrderFit::from_line(fit_loglog(&xs, &ys)?, used, dropped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEntry {
    pub dim: usize,
    pub mse: f64,
    pub se: f64,
    pub rmse: f64,
    /// `rmse(d) / rmse(d_0)` for the first dimension in the list.
    pub ratio: f64,
    /// `√(d / d_0)`.
    pub expected_ratio: f64,
}

/// Root-mean-square error at a fixed step count on the separable quadratic
/// with curvature `(ell + L)/2` in every coordinate, across dimensions.
#[allow(clippy::too_many_arguments)]
pub fn dimension_scaling(
    solver: SolverKind,
    class: &FunctionClass,
    horizon: f64,
    steps: usize,
    dims: &[usize],
    trials: u64,
    seed: u64,
    workers: Workers,
) -> Result<Vec<DimensionEntry>> {
    validate_ladder("d", dims)?;
    let u = 0.5 * (class.ell + class.lip);
    let cfg = StrongErrorConfig {
        solver,
        lip: class.lip,
        horizon,
        steps: vec![steps],
        trials,
        seed,
        reference_factor: 1,
    };
    let mut out: Vec<DimensionEntry> = Vec::with_capacity(dims.len());
    for &d in dims {
        let p = Quadratic::new(u, d)?;
        let e = strong_error(&cfg, &p, workers)?.entries.remove(0);
        let rmse = e.rmse();
        let (ratio, expected_ratio) = match out.first() {
            Some(base) => (rmse / base.rmse, (d as f64 / base.dim as f64).sqrt()),
            None => (1.0, 1.0),
        };
        out.push(DimensionEntry {
            dim: d,
            mse: e.mse,
            se: e.se,
            rmse,
            ratio,
            expected_ratio,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakEntry {
    pub h: f64,
    pub steps: usize,
    pub err_mean: f64,
    pub err_xx: f64,
    pub err_xv: f64,
    pub err_vv: f64,
}

impl WeakEntry {
    pub fn err_cov(&self) -> f64 {
        self.err_xx.max(self.err_xv).max(self.err_vv)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakReport {
    pub entries: Vec<WeakEntry>,
    pub slope_xx: f64,
    pub slope_xv: f64,
    pub slope_vv: f64,
    /// Fit of the largest covariance-entry error against `h`.
    pub cov_fit: OrderFit,
    /// Smallest of the per-entry slopes.
    pub worst_slope: f64,
}

/// Deterministic weak-order study: covariance of RMM on `U = u x²/2` versus the
/// exact law at `horizon`, over step sizes `h_list`.
pub fn weak_error_order(
    u: f64,
    lip: f64,
    horizon: f64,
    h_list: &[f64],
    nodes: usize,
) -> Result<WeakReport> {
    let exact = exact_moments(u, lip, horizon)?;
    let mut entries = Vec::new();
    for &h in h_list {
        let ratio = horizon / h;
        let steps = ratio.round();
        if !(h > 0.0 && (ratio - steps).abs() < 1e-9 * ratio && steps >= 1.0) {
            return Err(invalid(
                "h",
                format!("step {h} does not divide the horizon {horizon}"),
            ));
        }
        let m = moment_propagate_rmm_quadratic(u, lip, h, steps as usize, nodes)?;
        let e = WeakEntry {
            h,
            steps: steps as usize,
            err_mean: m.mean[0].abs().max(m.mean[1].abs()),
            err_xx: (m.cov[0][0] - exact.cov[0][0]).abs(),
            err_xv: (m.cov[0][1] - exact.cov[0][1]).abs(),
            err_vv: (m.cov[1][1] - exact.cov[1][1]).abs(),
        };
        if [e.err_xx, e.err_xv, e.err_vv].iter().all(|v| v.is_finite()) {
            entries.push(e);
        }
    }
    entries.sort_by(|a, b| a.h.total_cmp(&b.h));
    if entries.len() < MIN_FIT_POINTS {
        return Err(invalid(
            "h",
            format!("weak-order fit needs at least {MIN_FIT_POINTS} step sizes"),
        ));
    }
    let hs: Vec<f64> = entries.iter().map(|e| e.h).collect();
    let slope_of = |f: &dyn Fn(&WeakEntry) -> f64| -> Result<f64> {
        let ys: Vec<f64> = entries.iter().map(f).collect();
        Ok(fit_loglog(&hs, &ys)?.slope)
    };
    let slope_xx = slope_of(&|e| e.err_xx)?;
    let slope_xv = slope_of(&|e| e.err_xv)?;
    let slope_vv = slope_of(&|e| e.err_vv)?;
    let cov: Vec<f64> = entries.iter().map(|e| e.err_cov()).collect();
    let cov_fit = OrderFit::from_line(
        fit_loglog(&hs, &cov)?,
        entries.iter().map(|e| e.steps).collect(),
        Vec::new(),
    );
    Ok(WeakReport {
        entries,
        slope_xx,
        slope_xv,
        slope_vv,
        worst_slope: slope_xx.min(slope_xv).min(slope_vv),
        cov_fit,
    })
}
