use serde::{Deserialize, Serialize};

use crate::dynamics::{decay_rates, exact_quadratic, RunOptions};
use crate::error::{invalid, Result};
use crate::noise::{plan_grid, sample_noise, ExponentSet};
use crate::par::{map_trials, Workers};
use crate::potentials::FunctionClass;
use crate::rng::RngSpec;
use crate::stats::wilson_interval;

/// Normal quantile for 95% intervals.
pub const Z95: f64 = 1.959963984540054;

/// Extremes of an exact quadratic path over the nodes of a fine grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathExtrema {
    pub sup_x: f64,
    pub inf_x: f64,
    pub sup_abs_v: f64,
}

/// Path extrema of the exact dynamics for `U = u x²/2` on `[0, horizon]`,
/// sampled on `grid_steps` uniform steps, one entry per trial.
#[allow(clippy::too_many_arguments)]
pub fn sample_extrema(
    u: f64,
    lip: f64,
    horizon: f64,
    trials: u64,
    grid_steps: usize,
    seed: u64,
    workers: Workers,
) -> Result<Vec<PathExtrema>> {
    let (lm, lp) = decay_rates(u, lip)?;
    let thetas = ExponentSet::new(&[lm, lp])?;
    let grid = plan_grid(grid_steps, horizon, &[], &[])?;
    map_trials(trials, workers, |trial| {
        let nr = sample_noise(grid.clone(), 1, &thetas, &RngSpec::new(seed, trial))?;
        let run = exact_quadratic(u, lip, &nr, RunOptions::TRAJECTORY)?;
        let tr = run.trajectory.expect("trajectory requested");
        let mut e = PathExtrema {
            sup_x: f64::NEG_INFINITY,
            inf_x: f64::INFINITY,
            sup_abs_v: 0.0,
        };
        for (x, v) in tr.x.iter().zip(&tr.v) {
            e.sup_x = e.sup_x.max(*x);
            e.inf_x = e.inf_x.min(*x);
            e.sup_abs_v = e.sup_abs_v.max(v.abs());
        }
        Ok(e)
    })
    .into_iter()
    .collect()
}

impl PathExtrema {
    /// `sup X ≥ 2Cx`, `inf X ≤ -2Cx` and `sup |V| ≤ Cv/2`.
    pub fn in_event(&self, cx: f64, cv: f64) -> bool {
        self.sup_x >= 2.0 * cx && self.inf_x <= -2.0 * cx && self.sup_abs_v <= 0.5 * cv
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityEstimate {
    pub cx: f64,
    pub cv: f64,
    pub hits: u64,
    pub trials: u64,
    pub p: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// `12 Cx / Cv > T`: the event needs more travel time than the horizon
    /// allows, so the probability is exactly zero.
    pub travel_forbidden: bool,
}

/// Fraction of paths in the crossing event, with a 95% Wilson interval.
pub fn estimate_from_extrema(
    extrema: &[PathExtrema],
    cx: f64,
    cv: f64,
    horizon: f64,
) -> ProbabilityEstimate {
    let hits = extrema.iter().filter(|e| e.in_event(cx, cv)).count() as u64;
    let trials = extrema.len() as u64;
    let (ci_lo, ci_hi) = wilson_interval(hits, trials, Z95);
    ProbabilityEstimate {
        cx,
        cv,
        hits,
        trials,
        p: if trials == 0 { 0.0 } else { hits as f64 / trials as f64 },
        ci_lo,
        ci_hi,
        travel_forbidden: 12.0 * cx / cv > horizon,
    }
}

/// Monte Carlo estimate of the crossing probability for one parameter point.
#[allow(clippy::too_many_arguments)]
pub fn estimate_probability(
    cx: f64,
    cv: f64,
    u: f64,
    lip: f64,
    horizon: f64,
    trials: u64,
    grid_steps: usize,
    seed: u64,
    workers: Workers,
) -> Result<ProbabilityEstimate> {
    if !(cx > 0.0 && cv > 0.0) {
        return Err(invalid("Cx/Cv", "must be positive"));
    }
    let ext = sample_extrema(u, lip, horizon, trials, grid_steps, seed, workers)?;
    Ok(estimate_from_extrema(&ext, cx, cv, horizon))
}

/// Largest perturbation size for which the quadratic crossing event implies
/// the relaxed event for every potential within `ε` of `u x`.
pub fn epsilon_bar(cx: f64, cv: f64, u: f64, lip: f64) -> Result<f64> {
    if !(u > 0.0 && u < lip) {
        return Err(invalid("u", format!("need 0 < u < L, got u={u}, L={lip}")));
    }
    let s = (1.0 - u / lip).sqrt();
    Ok((2.0 * lip * (1.0 - s) * s * cx).min(lip * s * cv / 2.0))
}

/// Pathwise perturbation bounds `(|ΔX|, |ΔV|)` for a gradient perturbation of
/// sup-norm `epsilon` around `u x`.
pub fn perturbation_bounds(epsilon: f64, u: f64, lip: f64) -> Result<(f64, f64)> {
    if !(u > 0.0 && u < lip) {
        return Err(invalid("u", format!("need 0 < u < L, got u={u}, L={lip}")));
    }
    let s = (1.0 - u / lip).sqrt();
    Ok((
        epsilon / (2.0 * lip * (1.0 - s) * s),
        epsilon / (lip * s),
    ))
}

/// Separation constant: every unit of bump measure switched on moves `X_T` by
/// at least `C̄ ε`.
pub fn cbar(cx: f64, cv: f64, u_r: f64, lip: f64, horizon: f64) -> Result<f64> {
    if !(cx > 0.0 && cv > 0.0) {
        return Err(invalid("Cx/Cv", "must be positive"));
    }
    if !(u_r > 0.0 && u_r <= lip * (1.0 + 1e-12)) {
        return Err(invalid("u_R", format!("need 0 < u_R <= L, got {u_r}")));
    }
    let lead = 1.5 * cx / cv;
    if (1.0 - u_r / lip).abs() < 1e-9 {
        return Ok(cx * (lead - horizon).exp() / (4.0 * lip * cv * cv));
    }
    let s = (1.0 - u_r / lip).sqrt();
    Ok(((lead - horizon) * (1.0 - s)).exp() * -(-(cx / cv) * s).exp_m1()
        / (4.0 * lip * cv * s))
}

/// Upper-bound prefactor `√(T³/ell + T⁴/L)`.
pub fn c_up(class: &FunctionClass, horizon: f64) -> f64 {
    (horizon.powi(3) / class.ell + horizon.powi(4) / class.lip).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClowGrid {
    pub cx: Vec<f64>,
    pub cv: Vec<f64>,
    pub u: Vec<f64>,
    pub u_r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClowPoint {
    pub cx: f64,
    pub cv: f64,
    pub u: f64,
    pub u_r: f64,
    pub p: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub hits: u64,
    pub trials: u64,
    pub cbar: f64,
    pub objective: f64,
    pub objective_lo: f64,
    pub objective_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClowResult {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub best: Option<ClowPoint>,
    /// Best point whose probability interval excludes zero, by lower bound.
    pub best_certified: Option<ClowPoint>,
    pub evaluated: usize,
    pub all_zero: bool,
    /// Every evaluated point, in search order.
    pub points: Vec<ClowPoint>,
}

/// Grid search for the lower-bound prefactor
/// `sup √P · Cx² · min{u - ell, u_R - u} · C̄` over the supplied parameters.
/// Path extrema are sampled once per `u` and reused for every `(Cx, Cv)`.
#[allow(clippy::too_many_arguments)]
pub fn clow_search(
    class: &FunctionClass,
    horizon: f64,
    grid: &ClowGrid,
    trials: u64,
    grid_steps: usize,
    seed: u64,
    workers: Workers,
) -> Result<ClowResult> {
    if grid.cx.is_empty() || grid.cv.is_empty() || grid.u.is_empty() || grid.u_r.is_empty() {
        return Err(invalid("grid", "every parameter list must be non-empty"));
    }
    let mut best: Option<ClowPoint> = None;
    let mut best_certified: Option<ClowPoint> = None;
    let mut points = Vec::new();
    for &u in &grid.u {
        if !(class.ell < u && u < class.lip) {
            continue;
        }
        let ext = sample_extrema(u, class.lip, horizon, trials, grid_steps, seed, workers)?;
        for &cx in &grid.cx {
            for &cv in &grid.cv {
                let est = estimate_from_extrema(&ext, cx, cv, horizon);
                for &u_r in &grid.u_r {
                    if !(u < u_r && u_r <= class.lip) {
                        continue;
                    }
                    let c = cbar(cx, cv, u_r, class.lip, horizon)?;
                    let factor = cx * cx * (u - class.ell).min(u_r - u) * c;
                    let pt = ClowPoint {
                        cx,
                        cv,
                        u,
                        u_r,
                        p: est.p,
                        p_lo: est.ci_lo,
                        p_hi: est.ci_hi,
                        hits: est.hits,
                        trials: est.trials,
                        cbar: c,
                        objective: est.p.sqrt() * factor,
                        objective_lo: est.ci_lo.sqrt() * factor,
                        objective_hi: est.ci_hi.sqrt() * factor,
                    };
                    if best.is_none_or(|b| pt.objective > b.objective) {
                        best = Some(pt);
                    }
                    if pt.p_lo > 0.0
                        && best_certified.is_none_or(|b| pt.objective_lo > b.objective_lo)
                    {
                        best_certified = Some(pt);
                    }
                    points.push(pt);
                }
            }
        }
    }
    let all_zero = best.is_none_or(|b| b.objective == 0.0);
    Ok(ClowResult {
        value: best.map_or(0.0, |b| b.objective),
        ci_lo: best.map_or(0.0, |b| b.objective_lo),
        ci_hi: best.map_or(0.0, |b| b.objective_hi),
        best,
        best_certified,
        evaluated: points.len(),
        all_zero,
        points,
    })
}
