//! Boolean-lattice machinery behind the lower-bound construction: completing
//! the queried cells, reduced indices, symmetric chain decompositions and the
//! class experiments that tie them to the solvers.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{cbar, draw_beta, draw_etas, FamilySetup, PathExtrema};
use crate::dynamics::{
    decay_rates, exact_quadratic, replay_trace, rmm_integrate, solve, RunOptions, SolverKind,
};
use crate::error::{invalid, Error, Result};
use crate::noise::{sample_noise, ExponentSet, GridPlan};
use crate::par::{map_trials, Workers};
use crate::potentials::{BetaIndex, CellPartition};
use crate::rng::{RngSpec, StreamPurpose};
use crate::stats::{fit_loglog, mean_and_se};

/// Selected cells `I_j`, sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct IntervalIndexSet {
    n: usize,
    selected: Vec<i64>,
}

impl IntervalIndexSet {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cells(&self) -> &[i64] {
        &self.selected
    }

    pub fn contains(&self, j: i64) -> bool {
        self.selected.binary_search(&j).is_ok()
    }

    /// Cells not selected, ascending.
    pub fn complement(&self) -> Vec<i64> {
        let n = self.n as i64;
        (-n..n).filter(|&j| !self.contains(j)).collect()
    }
}

/// Cells hit by the first `N` query positions, topped up with the largest
/// unused indices until exactly `N` cells are selected.
pub fn complete_intervals(query_xs: &[f64], cells: &CellPartition) -> IntervalIndexSet {
    let n = cells.n();
    let mut selected: Vec<i64> = query_xs
        .iter()
        .take(n)
        .filter_map(|&x| cells.cell_of(x))
        .collect();
    selected.sort_unstable();
    selected.dedup();
    let mut j = n as i64 - 1;
    while selected.len() < n {
        if selected.binary_search(&j).is_err() {
            let pos = selected.partition_point(|&s| s < j);
            selected.insert(pos, j);
        }
        j -= 1;
    }
    IntervalIndexSet { n, selected }
}

/// Bits of an index on the cells outside the completed set, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ReducedIndex {
    pub bits: Vec<bool>,
}

impl ReducedIndex {
    pub fn weight(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Componentwise `self ≤ other`.
    pub fn precedes(&self, other: &ReducedIndex) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn to_mask(&self) -> u32 {
        self.bits
            .iter()
            .enumerate()
            .fold(0, |m, (i, &b)| if b { m | (1 << i) } else { m })
    }

    pub fn from_mask(mask: u32, n: usize) -> Self {
        ReducedIndex {
            bits: (0..n).map(|i| mask >> i & 1 == 1).collect(),
        }
    }
}

pub fn reduce_index(beta: &BetaIndex, j: &IntervalIndexSet) -> Result<ReducedIndex> {
    if beta.n() != j.n || j.selected.len() != j.n {
        return Err(Error::DimensionMismatch {
            expected: j.n,
            got: beta.n(),
        });
    }
    Ok(ReducedIndex {
        bits: j.complement().iter().map(|&c| beta.get(c)).collect(),
    })
}

/// Inverse of [`reduce_index`]: bits on the completed set come from `on_set`.
pub fn expand_index(
    reduced: &ReducedIndex,
    on_set: &BetaIndex,
    j: &IntervalIndexSet,
) -> Result<BetaIndex> {
    if reduced.bits.len() != j.n || on_set.n() != j.n {
        return Err(Error::DimensionMismatch {
            expected: j.n,
            got: reduced.bits.len(),
        });
    }
    let mut beta = on_set.clone();
    for (&c, &b) in j.complement().iter().zip(&reduced.bits) {
        beta.set(c, b);
    }
    Ok(beta)
}

/// Positions left unmatched when ones open and zeros close brackets, read
/// left to right. Unmatched zeros always precede unmatched ones.
fn unmatched(mask: u32, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut zeros = Vec::new();
    let mut open: Vec<usize> = Vec::new();
    for i in 0..n {
        if mask >> i & 1 == 1 {
            open.push(i);
        } else if open.pop().is_none() {
            zeros.push(i);
        }
    }
    (zeros, open)
}

/// Partition of `{0,1}^N` into symmetric chains; vectors are bit masks with
/// position `i` in bit `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainDecomposition {
    n: usize,
    chains: Vec<Vec<u32>>,
}

pub const MAX_CHAIN_N: usize = 24;

/// Symmetric chain decomposition by bracket matching: each chain starts at a
/// vector with no unmatched one and climbs by turning unmatched zeros into
/// ones from right to left.
pub fn scd(n: usize) -> Result<ChainDecomposition> {
    if !(1..=MAX_CHAIN_N).contains(&n) {
        return Err(invalid("n", format!("need 1 <= N <= {MAX_CHAIN_N}, got {n}")));
    }
    let mut chains = Vec::new();
    for mask in 0..(1u32 << n) {
        let (zeros, ones) = unmatched(mask, n);
        if !ones.is_empty() {
            continue;
        }
        let mut chain = Vec::with_capacity(zeros.len() + 1);
        let mut cur = mask;
        chain.push(cur);
        for &z in zeros.iter().rev() {
            cur |= 1 << z;
            chain.push(cur);
        }
        chains.push(chain);
    }
    Ok(ChainDecomposition { n, chains })
}

impl ChainDecomposition {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn chains(&self) -> &[Vec<u32>] {
        &self.chains
    }

    /// Chain and position of every vector, indexed by mask.
    pub fn locate_all(&self) -> Vec<(u32, u32)> {
        let mut at = vec![(u32::MAX, u32::MAX); 1 << self.n];
        for (c, chain) in self.chains.iter().enumerate() {
            for (p, &m) in chain.iter().enumerate() {
                at[m as usize] = (c as u32, p as u32);
            }
        }
        at
    }

    /// The partner of weight `N - k` in the chain of `mask`, by lookup.
    pub fn upsilon_lookup(&self, mask: u32, locations: &[(u32, u32)]) -> Result<u32> {
        let k = mask.count_ones() as usize;
        if 2 * k > self.n {
            return Err(invalid("k", format!("weight {k} exceeds N/2")));
        }
        let (c, _) = locations[mask as usize];
        let chain = &self.chains[c as usize];
        let bottom = chain[0].count_ones() as usize;
        Ok(chain[self.n - k - bottom])
    }
}

impl fmt::Display for ChainDecomposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for chain in &self.chains {
            let parts: Vec<String> = chain
                .iter()
                .map(|&m| (0..self.n).map(|i| if m >> i & 1 == 1 { '1' } else { '0' }).collect())
                .collect();
            writeln!(f, "{}", parts.join(" < "))?;
        }
        Ok(())
    }
}

/// `Υ`: the element of weight `N - k` in the symmetric chain through a
/// weight-`k` vector, `k ≤ N/2`. Computed directly from the unmatched
/// positions, whose pattern `0^a 1^b` becomes `0^b 1^a`.
pub fn upsilon(reduced: &ReducedIndex) -> Result<ReducedIndex> {
    let n = reduced.bits.len();
    let k = reduced.weight();
    if 2 * k > n {
        return Err(invalid("k", format!("weight {k} exceeds N/2 = {}", n / 2)));
    }
    if n > 32 {
        return Err(invalid("n", "reduced indices longer than 32 bits are not supported"));
    }
    let mask = reduced.to_mask();
    let (zeros, ones) = unmatched(mask, n);
    let free: Vec<usize> = zeros.iter().chain(&ones).copied().collect();
    let flip_from = ones.len();
    let mut out = mask;
    for (i, &pos) in free.iter().enumerate() {
        if i >= flip_from {
            out |= 1 << pos;
        } else {
            out &= !(1 << pos);
        }
    }
    Ok(ReducedIndex::from_mask(out, n))
}

pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Both sides of `Σ_k C(N,k) (N - 2k)² = N · 2^N`, the binomial-variance
/// identity scaled by 4 to stay in integers.
pub fn binomial_variance_identity(n: u32) -> (u128, u128) {
    let lhs = (0..=n)
        .map(|k| {
            let d = n as i128 - 2 * k as i128;
            binomial(n, k) * (d * d) as u128
        })
        .sum();
    (lhs, n as u128 * (1u128 << n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassConfig {
    pub solver: SolverKind,
    pub setup: FamilySetup,
    /// Query budget `N` (also the number of cells per side).
    pub n: usize,
    pub trials: u64,
    /// Fine reference steps for the separation and spread parts; raised to
    /// [`min_reference_steps`] when smaller.
    pub reference_steps: usize,
    /// Reduced indices sampled per path for the spread statistic; zero skips
    /// the reference-solution parts entirely.
    pub spread_samples: usize,
    pub separation_factor: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub n: usize,
    pub solver: SolverKind,
    pub trials: u64,
    pub reference_steps: usize,
    /// Pairs `β ~ β'` whose reruns differed in output or trace.
    pub equivalence_failures: u64,
    /// Pairs where `β' ≠ β` (only impossible when every cell is queried).
    pub distinct_pairs: u64,
    pub event_hits: u64,
    pub separation_checked: u64,
    pub separation_violations: u64,
    pub min_separation_ratio: f64,
    pub spread: f64,
    pub spread_se: f64,
    /// `Cx⁴ C̄² ξ² / N³`.
    pub spread_floor: f64,
}

struct TrialOutcome {
    identical: bool,
    distinct: bool,
    event: bool,
    separation: Option<f64>,
    spread: Option<f64>,
}

/// Smallest reference resolution at which a path moving at speed `Cv/2`
/// cannot cross a bump's plateau of width `Cx/(4N)` within half a step.
pub fn min_reference_steps(setup: &FamilySetup, n: usize) -> usize {
    (2.0 * n as f64 * setup.cv * setup.horizon / setup.cx).ceil() as usize
}

fn solver_steps(solver: SolverKind, n: usize) -> Result<usize> {
    match solver {
        SolverKind::Em => Ok(n),
        SolverKind::Rmm if n % 2 == 0 => Ok(n / 2),
        SolverKind::Rmm => Err(invalid("N", "RMM spends two queries per step; N must be even")),
        SolverKind::Exact => Err(Error::NoTrace("exact")),
    }
}

/// For each path `(ω, ω̃)`: rerun the solver on an index sharing the
/// completed query cells and require bit-identical results; on crossing-event
/// paths additionally compare fine reference endpoints of `β̃` and `Υ(β̃)` and
/// accumulate the spread of reference endpoints around the solver output.
pub fn class_experiment(cfg: &ClassConfig, workers: Workers) -> Result<ClassReport> {
    let setup = &cfg.setup;
    let n = cfg.n;
    let steps = solver_steps(cfg.solver, n)?;
    let fam = if cfg.spread_samples > 0 {
        setup.family_below_threshold(n)?
    } else {
        setup.family(n)?
    };
    if n > 32 {
        return Err(invalid("N", "at most 32 cells per side"));
    }
    let (lm, lp) = decay_rates(setup.u, setup.lip)?;
    let thetas = ExponentSet::new(&[lm, lp])?;
    let eps = fam.epsilon();
    let c = cbar(setup.cx, setup.cv, setup.u_r, setup.lip, setup.horizon)?;
    let mu = setup.cx / (4.0 * n as f64);
    let xi = fam.bump().slope_bound();
    let with_reference = cfg.spread_samples > 0;
    let reference_steps = cfg.reference_steps.max(min_reference_steps(setup, n));

    let outcomes = map_trials(cfg.trials, workers, |trial| -> Result<TrialOutcome> {
        let rng = RngSpec::new(cfg.seed, trial);
        let mut design = rng.stream(StreamPurpose::Design);
        let etas = match cfg.solver {
            SolverKind::Rmm => draw_etas(&rng, StreamPurpose::Eta(0), steps),
            _ => Vec::new(),
        };
        let mut plan = GridPlan::new(setup.horizon)?;
        if etas.is_empty() {
            plan.uniform(steps)?;
        } else {
            plan.with_midpoints(steps, &etas)?;
        }
        let ref_etas = if with_reference {
            let e = draw_etas(&rng, StreamPurpose::ReferenceEta, reference_steps);
            plan.with_midpoints(reference_steps, &e)?;
            e
        } else {
            Vec::new()
        };
        let nr = sample_noise(plan.build(), 1, &thetas, &rng)?;

        let beta = draw_beta(&mut design, n);
        let p = fam.potential(beta.clone())?;
        let run = solve(cfg.solver, &p, setup.lip, steps, &nr, &etas, RunOptions::TRACE)?;
        let trace = run.queries.as_ref().expect("trace requested");
        let xs: Vec<f64> = trace.iter().map(|q| q.point[0]).collect();
        let jset = complete_intervals(&xs, fam.cells());

        let mut twin = draw_beta(&mut design, n);
        for &cell in jset.cells() {
            twin.set(cell, beta.get(cell));
        }
        let free = jset.complement();
        if twin == beta {
            if let Some(&cell) = free.first() {
                twin.set(cell, !beta.get(cell));
            }
        }
        let distinct = twin != beta;
        let pt = fam.potential(twin)?;
        let rerun = solve(cfg.solver, &pt, setup.lip, steps, &nr, &etas, RunOptions::TRACE)?;
        let same_state = run
            .final_state
            .x
            .iter()
            .chain(&run.final_state.v)
            .zip(rerun.final_state.x.iter().chain(&rerun.final_state.v))
            .all(|(a, b)| a.to_bits() == b.to_bits());
        let same_trace = run.queries == rerun.queries
            && trace
                .iter()
                .zip(rerun.queries.as_ref().expect("trace requested"))
                .all(|(a, b)| {
                    a.time.to_bits() == b.time.to_bits()
                        && a.point[0].to_bits() == b.point[0].to_bits()
                        && a.grad[0].to_bits() == b.grad[0].to_bits()
                });
        let identical = same_state && same_trace && replay_trace(&pt, trace).is_none();

        if !with_reference {
            return Ok(TrialOutcome {
                identical,
                distinct,
                event: false,
                separation: None,
                spread: None,
            });
        }
        let tr = exact_quadratic(setup.u, setup.lip, &nr, RunOptions::TRAJECTORY)?
            .trajectory
            .expect("trajectory requested");
        let ext = PathExtrema {
            sup_x: tr.x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            inf_x: tr.x.iter().cloned().fold(f64::INFINITY, f64::min),
            sup_abs_v: tr.v.iter().map(|v| v.abs()).fold(0.0, f64::max),
        };
        let event = ext.in_event(setup.cx, setup.cv);
        if !event {
            return Ok(TrialOutcome {
                identical,
                distinct,
                event,
                separation: None,
                spread: None,
            });
        }
        let reference_x = |reduced: &ReducedIndex| -> Result<f64> {
            let b = expand_index(reduced, &beta, &jset)?;
            let pb = fam.potential(b)?;
            Ok(rmm_integrate(&pb, setup.lip, reference_steps, &nr, &ref_etas, RunOptions::FINAL_ONLY)?
                .final_state
                .x[0])
        };
        let mut low = ReducedIndex {
            bits: (0..n).map(|_| design.random::<bool>()).collect(),
        };
        if 2 * low.weight() > n {
            low.bits.iter_mut().for_each(|b| *b = !*b);
        }
        let high = upsilon(&low)?;
        let differing = n - 2 * low.weight();
        let separation = if differing > 0 {
            let gap = (reference_x(&high)? - reference_x(&low)?).abs();
            Some(gap / (c * eps * mu * differing as f64))
        } else {
            None
        };
        let output = run.final_state.x[0];
        let mut dev = 0.0;
        for _ in 0..cfg.spread_samples {
            let r = ReducedIndex {
                bits: (0..n).map(|_| design.random::<bool>()).collect(),
            };
            dev += (reference_x(&r)? - output).powi(2);
        }
        Ok(TrialOutcome {
            identical,
            distinct,
            event,
            separation,
            spread: Some(dev / cfg.spread_samples as f64),
        })
    });
    let outcomes: Vec<TrialOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let ratios: Vec<f64> = outcomes.iter().filter_map(|o| o.separation).collect();
    let spreads: Vec<f64> = outcomes.iter().filter_map(|o| o.spread).collect();
    let (spread, spread_se) = if spreads.is_empty() {
        (0.0, 0.0)
    } else {
        mean_and_se(&spreads)
    };
    Ok(ClassReport {
        n,
        solver: cfg.solver,
        trials: cfg.trials,
        reference_steps,
        equivalence_failures: outcomes.iter().filter(|o| !o.identical).count() as u64,
        distinct_pairs: outcomes.iter().filter(|o| o.distinct).count() as u64,
        event_hits: outcomes.iter().filter(|o| o.event).count() as u64,
        separation_checked: ratios.len() as u64,
        separation_violations: ratios
            .iter()
            .filter(|&&r| r < cfg.separation_factor)
            .count() as u64,
        min_separation_ratio: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        spread,
        spread_se,
        spread_floor: setup.cx.powi(4) * c * c * xi * xi / (n as f64).powi(3),
    })
}

/// Log–log slope of the class spread against `N` (expected near -3).
pub fn spread_slope(reports: &[ClassReport]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = reports
        .iter()
        .filter(|r| r.spread > 0.0)
        .map(|r| (r.n as f64, r.spread))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    fit_loglog(&x, &y).ok().map(|f| f.slope)
}
