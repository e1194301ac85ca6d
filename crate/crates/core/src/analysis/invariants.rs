//! Pathwise checks of the bump-family construction: perturbation size,
//! ordering (trapping) and separation of endpoints.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::probability::{cbar, epsilon_bar, perturbation_bounds, PathExtrema};
use super::{draw_etas, exact_exponents};
use crate::dynamics::{exact_quadratic, rmm_integrate, RunOptions, Trajectory};
use crate::error::{invalid, Result};
use crate::noise::{sample_noise, ExponentSet, GridPlan};
use crate::par::{map_trials, Workers};
use crate::potentials::{AdversarialFamily, BetaIndex, FunctionClass, Quadratic};
use crate::rng::{RngSpec, StreamPurpose};
use crate::stats::{fit_loglog, mean_and_se};

/// Uniformly random bump index for a family with `n` cells per side.
pub fn draw_beta<R: Rng + ?Sized>(rng: &mut R, n: usize) -> BetaIndex {
    let bits = (0..2 * n).map(|_| rng.random::<bool>()).collect();
    BetaIndex::from_bits(n, bits).expect("length matches")
}

fn trajectory_of(run: crate::dynamics::SolverRun) -> Trajectory {
    run.trajectory.expect("trajectory requested")
}

/// Parameters shared by the bump-family experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySetup {
    pub ell: f64,
    pub lip: f64,
    pub u: f64,
    pub u_r: f64,
    pub cx: f64,
    pub cv: f64,
    pub horizon: f64,
}

impl FamilySetup {
    pub fn class(&self) -> Result<FunctionClass> {
        FunctionClass::new(self.ell, self.lip)
    }

    pub fn family(&self, n: usize) -> Result<AdversarialFamily> {
        AdversarialFamily::with_upper_curvature(&self.class()?, self.u, self.u_r, self.cx, n)
    }

    /// Family for `n`, rejecting bump heights at or above `ε̄`.
    pub fn family_below_threshold(&self, n: usize) -> Result<AdversarialFamily> {
        let fam = self.family(n)?;
        let eb = epsilon_bar(self.cx, self.cv, self.u, self.lip)?;
        if fam.epsilon() >= eb {
            return Err(invalid(
                "N",
                format!(
                    "bump height {} is not below the threshold {eb}; increase N",
                    fam.epsilon()
                ),
            ));
        }
        Ok(fam)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationLevel {
    pub n: usize,
    pub epsilon: f64,
    pub epsilon_bar: f64,
    pub bound_x: f64,
    pub bound_v: f64,
    pub max_dx: f64,
    pub max_dv: f64,
    pub mean_max_dx: f64,
    pub violations: u64,
    /// Largest node error of fine-grid RMM against the exact quadratic path.
    pub discretization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationReport {
    pub trials: u64,
    pub grid_steps: usize,
    pub slack: f64,
    pub levels: Vec<PerturbationLevel>,
    /// Log–log slope of the mean pathwise deviation against `ε` across levels.
    pub epsilon_slope: Option<f64>,
}

impl PerturbationReport {
    pub fn violations(&self) -> u64 {
        self.levels.iter().map(|l| l.violations).sum()
    }
}

/// Compare RMM paths for `u x²/2` and a random bump potential on shared noise
/// and midpoints; a violation is a path whose deviation exceeds the bound by
/// more than the relative `slack`.
#[allow(clippy::too_many_arguments)]
pub fn check_perturbation(
    setup: &FamilySetup,
    n_list: &[usize],
    trials: u64,
    grid_steps: usize,
    slack: f64,
    seed: u64,
    workers: Workers,
) -> Result<PerturbationReport> {
    if n_list.is_empty() {
        return Err(invalid("n", "need at least one bump count"));
    }
    let quad = Quadratic::new(setup.u, 1)?;
    let thetas = exact_exponents(&[setup.u], setup.lip)?;
    let mut levels = Vec::new();
    for &n in n_list {
        let fam = setup.family_below_threshold(n)?;
        let eps = fam.epsilon();
        let (bx, bv) = perturbation_bounds(eps, setup.u, setup.lip)?;
        let per_trial = map_trials(trials, workers, |trial| -> Result<(f64, f64, f64)> {
            let rng = RngSpec::new(seed, trial);
            let etas = draw_etas(&rng, StreamPurpose::Eta(0), grid_steps);
            let beta = draw_beta(&mut rng.stream(StreamPurpose::Design), n);
            let mut plan = GridPlan::new(setup.horizon)?;
            plan.with_midpoints(grid_steps, &etas)?;
            let nr = sample_noise(plan.build(), 1, &thetas, &rng)?;
            let pb = fam.potential(beta)?;
            let tq = trajectory_of(rmm_integrate(&quad, setup.lip, grid_steps, &nr, &etas, RunOptions::TRAJECTORY)?);
            let tb = trajectory_of(rmm_integrate(&pb, setup.lip, grid_steps, &nr, &etas, RunOptions::TRAJECTORY)?);
            let te = trajectory_of(exact_quadratic(setup.u, setup.lip, &nr, RunOptions::TRAJECTORY)?);
            let mut dx = 0.0_f64;
            let mut dv = 0.0_f64;
            let mut disc = 0.0_f64;
            for k in 0..tq.len() {
                dx = dx.max((tq.x[k] - tb.x[k]).abs());
                dv = dv.max((tq.v[k] - tb.v[k]).abs());
                let gi = nr.grid().require_index(tq.times[k])?;
                disc = disc.max((tq.x[k] - te.x[gi]).abs());
            }
            Ok((dx, dv, disc))
        });
        let per_trial: Vec<(f64, f64, f64)> = per_trial.into_iter().collect::<Result<_>>()?;
        let violations = per_trial
            .iter()
            .filter(|(dx, dv, _)| *dx > (1.0 + slack) * bx || *dv > (1.0 + slack) * bv)
            .count() as u64;
        let dxs: Vec<f64> = per_trial.iter().map(|t| t.0).collect();
        levels.push(PerturbationLevel {
            n,
            epsilon: eps,
            epsilon_bar: epsilon_bar(setup.cx, setup.cv, setup.u, setup.lip)?,
            bound_x: bx,
            bound_v: bv,
            max_dx: dxs.iter().cloned().fold(0.0, f64::max),
            max_dv: per_trial.iter().map(|t| t.1).fold(0.0, f64::max),
            mean_max_dx: mean_and_se(&dxs).0,
            violations,
            discretization: per_trial.iter().map(|t| t.2).fold(0.0, f64::max),
        });
    }
    let epsilon_slope = if levels.len() >= 2 {
        let e: Vec<f64> = levels.iter().map(|l| l.epsilon).collect();
        let d: Vec<f64> = levels.iter().map(|l| l.mean_max_dx).collect();
        fit_loglog(&e, &d).ok().map(|f| f.slope)
    } else {
        None
    };
    Ok(PerturbationReport {
        trials,
        grid_steps,
        slack,
        levels,
        epsilon_slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrappingReport {
    pub trials: u64,
    pub grid_steps: usize,
    pub tolerance: f64,
    /// Largest positive value of `X(U1) - X(U2)` over nodes and paths.
    pub max_dx: f64,
    /// Largest positive value of `ΔV + ΔX` over nodes and paths.
    pub max_dv_plus_dx: f64,
    /// The same two maxima at half the resolution, for the refinement study.
    pub coarse_max_dx: f64,
    pub coarse_max_dv_plus_dx: f64,
    pub violations: u64,
    /// Mean of `X_T(U1) - X_T(U2)` (expected negative).
    pub mean_final_dx: f64,
}

fn ordered_pair<R: Rng + ?Sized>(rng: &mut R, n: usize, trial: u64) -> (BetaIndex, BetaIndex) {
    if trial == 0 {
        return (BetaIndex::ones(n), BetaIndex::zeros(n));
    }
    let lower = draw_beta(rng, n);
    let extra = draw_beta(rng, n);
    let upper_bits = lower
        .bits()
        .iter()
        .zip(extra.bits())
        .map(|(&a, &b)| a || b)
        .collect();
    let upper = BetaIndex::from_bits(n, upper_bits).expect("length matches");
    (upper, lower)
}

/// Ordered pairs `β1 ≥ β2` (trial 0 is all-ones against all-zeros), RMM on
/// shared noise; counts paths where `ΔX ≤ 0` or `ΔV ≤ -ΔX` fails by more than
/// `tolerance` at any node.
#[allow(clippy::too_many_arguments)]
pub fn check_trapping(
    setup: &FamilySetup,
    n: usize,
    trials: u64,
    grid_steps: usize,
    tolerance: f64,
    seed: u64,
    workers: Workers,
) -> Result<TrappingReport> {
    if grid_steps < 2 || grid_steps % 2 != 0 {
        return Err(invalid("grid", "grid steps must be even and at least 2"));
    }
    let fam = setup.family(n)?;
    let coarse = grid_steps / 2;
    let thetas = ExponentSet::default();
    let probe_per_cell = 64;
    let lo = fam.cells().boundary(-(n as i64)) - fam.bump().width();
    let hi = fam.cells().boundary(n as i64) + fam.bump().width();
    let probes = (2 * n + 2) * probe_per_cell;

    let per_trial = map_trials(trials, workers, |trial| -> Result<[f64; 5]> {
        let rng = RngSpec::new(seed, trial);
        let (b1, b2) = ordered_pair(&mut rng.stream(StreamPurpose::Design), n, trial);
        for i in 0..=probes {
            let x = lo + (hi - lo) * i as f64 / probes as f64;
            if fam.perturbation(&b1, x) < fam.perturbation(&b2, x) {
                return Err(invalid("beta", "gradient difference is negative at a probe point"));
            }
        }
        let fine_etas = draw_etas(&rng, StreamPurpose::Eta(0), grid_steps);
        let coarse_etas = draw_etas(&rng, StreamPurpose::Eta(1), coarse);
        let mut plan = GridPlan::new(setup.horizon)?;
        plan.with_midpoints(grid_steps, &fine_etas)?
            .with_midpoints(coarse, &coarse_etas)?;
        let nr = sample_noise(plan.build(), 1, &thetas, &rng)?;
        let p1 = fam.potential(b1)?;
        let p2 = fam.potential(b2)?;
        let excursions = |steps: usize, etas: &[f64]| -> Result<(f64, f64, f64)> {
            let t1 = trajectory_of(rmm_integrate(&p1, setup.lip, steps, &nr, etas, RunOptions::TRAJECTORY)?);
            let t2 = trajectory_of(rmm_integrate(&p2, setup.lip, steps, &nr, etas, RunOptions::TRAJECTORY)?);
            let mut mx = f64::NEG_INFINITY;
            let mut ms = f64::NEG_INFINITY;
            for k in 0..t1.len() {
                let dx = t1.x[k] - t2.x[k];
                let dv = t1.v[k] - t2.v[k];
                mx = mx.max(dx);
                ms = ms.max(dv + dx);
            }
            let last = t1.len() - 1;
            Ok((mx, ms, t1.x[last] - t2.x[last]))
        };
        let (fx, fs, final_dx) = excursions(grid_steps, &fine_etas)?;
        let (cxm, csm, _) = excursions(coarse, &coarse_etas)?;
        Ok([fx, fs, cxm, csm, final_dx])
    });
    let per_trial: Vec<[f64; 5]> = per_trial.into_iter().collect::<Result<_>>()?;
    let col_max = |i: usize| per_trial.iter().map(|t| t[i]).fold(f64::NEG_INFINITY, f64::max);
    let violations = per_trial
        .iter()
        .filter(|t| t[0] > tolerance || t[1] > tolerance)
        .count() as u64;
    let finals: Vec<f64> = per_trial.iter().map(|t| t[4]).collect();
    Ok(TrappingReport {
        trials,
        grid_steps,
        tolerance,
        max_dx: col_max(0),
        max_dv_plus_dx: col_max(1),
        coarse_max_dx: col_max(2),
        coarse_max_dv_plus_dx: col_max(3),
        violations,
        mean_final_dx: mean_and_se(&finals).0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationLevel {
    /// Number of extra bumps switched on.
    pub bumps: usize,
    /// `C̄ ε μ(𝕀)` with `μ(𝕀) = bumps · Cx/(4N)`.
    pub bound: f64,
    pub mean_gap: f64,
    pub min_gap: f64,
    pub violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub trials: u64,
    pub event_hits: u64,
    pub n: usize,
    pub epsilon: f64,
    pub epsilon_bar: f64,
    pub cbar: f64,
    pub factor: f64,
    pub levels: Vec<SeparationLevel>,
    /// Log–log slope of the mean gap against the number of bumps.
    pub bump_slope: Option<f64>,
    /// Smallest ratio of observed gap to bound over all event paths.
    pub min_ratio: f64,
}

impl SeparationReport {
    pub fn violations(&self) -> u64 {
        self.levels.iter().map(|l| l.violations).sum()
    }

    pub fn inconclusive(&self) -> bool {
        self.event_hits == 0
    }
}

/// On paths whose quadratic trajectory lies in the crossing event, switch on
/// nested random sets of `k` bumps (`k` from `bump_counts`) and compare the
/// endpoint gap with `factor · C̄ ε μ(𝕀)`.
#[allow(clippy::too_many_arguments)]
pub fn check_separation(
    setup: &FamilySetup,
    n: usize,
    bump_counts: &[usize],
    trials: u64,
    grid_steps: usize,
    factor: f64,
    seed: u64,
    workers: Workers,
) -> Result<SeparationReport> {
    let fam = setup.family_below_threshold(n)?;
    if bump_counts.is_empty() || bump_counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("bumps", "bump counts must be strictly increasing"));
    }
    if bump_counts[0] == 0 || *bump_counts.last().unwrap() > 2 * n {
        return Err(invalid("bumps", format!("bump counts must lie in 1..={}", 2 * n)));
    }
    let eps = fam.epsilon();
    let c = cbar(setup.cx, setup.cv, setup.u_r, setup.lip, setup.horizon)?;
    let unit = c * eps * setup.cx / (4.0 * n as f64);
    let thetas = exact_exponents(&[setup.u], setup.lip)?;

    let per_trial = map_trials(trials, workers, |trial| -> Result<Option<Vec<f64>>> {
        let rng = RngSpec::new(seed, trial);
        let etas = draw_etas(&rng, StreamPurpose::Eta(0), grid_steps);
        let mut plan = GridPlan::new(setup.horizon)?;
        plan.with_midpoints(grid_steps, &etas)?;
        let nr = sample_noise(plan.build(), 1, &thetas, &rng)?;
        let te = trajectory_of(exact_quadratic(setup.u, setup.lip, &nr, RunOptions::TRAJECTORY)?);
        let ext = PathExtrema {
            sup_x: te.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            inf_x: te.x.iter().cloned().fold(f64::INFINITY, f64::min),
            sup_abs_v: te.v.iter().map(|v| v.abs()).fold(0.0, f64::max),
        };
        if !ext.in_event(setup.cx, setup.cv) {
            return Ok(None);
        }
        let mut order: Vec<usize> = (0..2 * n).collect();
        order.shuffle(&mut rng.stream(StreamPurpose::Design));
        let base = fam.potential(BetaIndex::zeros(n))?;
        let x_base = rmm_integrate(&base, setup.lip, grid_steps, &nr, &etas, RunOptions::FINAL_ONLY)?
            .final_state
            .x[0];
        bump_counts
            .iter()
            .map(|&k| {
                let mut beta = BetaIndex::zeros(n);
                for &slot in &order[..k] {
                    beta.set(fam.cells().cell(slot), true);
                }
                let p = fam.potential(beta)?;
                let x = rmm_integrate(&p, setup.lip, grid_steps, &nr, &etas, RunOptions::FINAL_ONLY)?
                    .final_state
                    .x[0];
                Ok((x - x_base).abs())
            })
            .collect::<Result<Vec<f64>>>()
            .map(Some)
    });
    let hits: Vec<Vec<f64>> = per_trial
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut min_ratio = f64::INFINITY;
    let levels: Vec<SeparationLevel> = bump_counts
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let bound = unit * k as f64;
            let gaps: Vec<f64> = hits.iter().map(|h| h[i]).collect();
            for g in &gaps {
                min_ratio = min_ratio.min(g / bound);
            }
            SeparationLevel {
                bumps: k,
                bound,
                mean_gap: if gaps.is_empty() { 0.0 } else { mean_and_se(&gaps).0 },
                min_gap: gaps.iter().cloned().fold(f64::INFINITY, f64::min),
                violations: gaps.iter().filter(|&&g| g < factor * bound).count() as u64,
            }
        })
        .collect();
    let bump_slope = if levels.len() >= 2 && !hits.is_empty() {
        let k: Vec<f64> = levels.iter().map(|l| l.bumps as f64).collect();
        let g: Vec<f64> = levels.iter().map(|l| l.mean_gap).collect();
        fit_loglog(&k, &g).ok().map(|f| f.slope)
    } else {
        None
    };
    Ok(SeparationReport {
        trials,
        event_hits: hits.len() as u64,
        n,
        epsilon: eps,
        epsilon_bar: epsilon_bar(setup.cx, setup.cv, setup.u, setup.lip)?,
        cbar: c,
        factor,
        levels,
        bump_slope,
        min_ratio,
    })
}
