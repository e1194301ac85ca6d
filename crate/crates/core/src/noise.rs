//! Exact joint sampling of Brownian increments and their exponentially
//! weighted integrals on a merged time grid.
//!
//! For every subinterval `[a, b]` of the grid and every exponent `θ` the
//! realization stores the right-anchored integral
//!
//! ```text
//! J_θ[a, b] = ∫_a^b exp(θ (s - b)) dW_s
//! ```
//!
//! per dimension. Within a subinterval the vector `(J_θ)_θ` is jointly Gaussian
//! with `Cov(J_θ1, J_θ2) = (1 - exp(-(θ1 + θ2)(b - a))) / (θ1 + θ2)`; disjoint
//! subintervals and distinct dimensions are independent. Integrals over unions
//! of subintervals, with any anchor, are exact linear combinations of the
//! stored values, so every solver reading the same realization sees the same
//! Brownian path.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Error, Result};
use crate::rng::{RngSpec, StreamPurpose};

/// Point provenance flags; a deduplicated point may carry several.
pub mod kind {
    pub const NODE: u8 = 1;
    pub const MIDPOINT: u8 = 2;
    pub const HORIZON: u8 = 4;
    pub const EXTRA: u8 = 8;
}

/// Exponents closer than this are treated as one.
pub const EXPONENT_MERGE_TOL: f64 = 1e-12;

/// Time of uniform node `k` for `steps` steps on `[0, horizon]`.
///
/// The last node is the horizon itself, bit for bit.
pub fn node_time(k: usize, steps: usize, horizon: f64) -> f64 {
    if k >= steps {
        horizon
    } else {
        k as f64 * (horizon / steps as f64)
    }
}

/// Time `s_k + η h` of the random midpoint in step `k`, clamped into the step.
pub fn midpoint_time(k: usize, eta: f64, steps: usize, horizon: f64) -> f64 {
    let lo = node_time(k, steps, horizon);
    let hi = node_time(k + 1, steps, horizon);
    if eta <= 0.0 {
        lo
    } else if eta >= 1.0 {
        hi
    } else {
        (lo + eta * (horizon / steps as f64)).clamp(lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    kinds: Vec<u8>,
}

impl TimeGrid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kinds(&self) -> &[u8] {
        &self.kinds
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().expect("grid is never empty")
    }

    pub fn subintervals(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of `t` by exact comparison.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.points
            .binary_search_by(|p| p.total_cmp(&t))
            .ok()
    }

    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t).ok_or(Error::OffGrid(t))
    }
}

/// Accumulates the times a set of consumers will query, then builds a grid.
#[derive(Debug, Clone)]
pub struct GridPlan {
    horizon: f64,
    entries: Vec<(f64, u8)>,
}

impl GridPlan {
    pub fn new(horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidTime {
                time: horizon,
                reason: "horizon must be finite and positive",
            });
        }
        Ok(GridPlan {
            horizon,
            entries: vec![(0.0, kind::NODE), (horizon, kind::HORIZON)],
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Uniform nodes `k T / steps`.
    pub fn uniform(&mut self, steps: usize) -> Result<&mut Self> {
        if steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        for k in 0..=steps {
            self.entries
                .push((node_time(k, steps, self.horizon), kind::NODE));
        }
        Ok(self)
    }

    /// Uniform nodes plus one random midpoint per step.
    pub fn with_midpoints(&mut self, steps: usize, etas: &[f64]) -> Result<&mut Self> {
        if etas.len() != steps {
            return Err(invalid(
                "eta",
                format!("expected {steps} midpoints, got {}", etas.len()),
            ));
        }
        self.uniform(steps)?;
        for (k, &eta) in etas.iter().enumerate() {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::InvalidTime {
                    time: eta,
                    reason: "midpoint fraction must lie in [0, 1]",
                });
            }
            self.entries
                .push((midpoint_time(k, eta, steps, self.horizon), kind::MIDPOINT));
        }
        Ok(self)
    }

    pub fn extra(&mut self, times: &[f64]) -> Result<&mut Self> {
        for &t in times {
            if !(t.is_finite() && (0.0..=self.horizon).contains(&t)) {
                return Err(Error::InvalidTime {
                    time: t,
                    reason: "extra time must lie in [0, horizon]",
                });
            }
            self.entries.push((t, kind::EXTRA));
        }
        Ok(self)
    }

    pub fn build(&self) -> TimeGrid {
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<f64> = Vec::with_capacity(entries.len());
        let mut kinds: Vec<u8> = Vec::with_capacity(entries.len());
        for (t, k) in entries {
            match points.last() {
                Some(&last) if last.to_bits() == t.to_bits() => {
                    *kinds.last_mut().unwrap() |= k;
                }
                _ => {
                    points.push(t);
                    kinds.push(k);
                }
            }
        }
        TimeGrid { points, kinds }
    }
}

/// Grid containing `{kh} ∪ {kh + η_k h} ∪ extra`, sorted and deduplicated by
/// exact comparison. `etas` may be empty (no midpoints) or have one entry per
/// step.
pub fn plan_grid(steps: usize, horizon: f64, etas: &[f64], extra: &[f64]) -> Result<TimeGrid> {
    let mut plan = GridPlan::new(horizon)?;
    if etas.is_empty() {
        plan.uniform(steps)?;
    } else {
        plan.with_midpoints(steps, etas)?;
    }
    plan.extra(extra)?;
    Ok(plan.build())
}

/// Sorted set of weighting exponents; always contains 0 and 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentSet {
    thetas: Vec<f64>,
}

impl Default for ExponentSet {
    fn default() -> Self {
        ExponentSet {
            thetas: vec![0.0, 2.0],
        }
    }
}

impl ExponentSet {
    pub fn new(extra: &[f64]) -> Result<Self> {
        let mut set = ExponentSet::default();
        for &theta in extra {
            set.insert(theta)?;
        }
        Ok(set)
    }

    /// Insert `θ` unless an exponent within [`EXPONENT_MERGE_TOL`] is present.
    pub fn insert(&mut self, theta: f64) -> Result<usize> {
        if !theta.is_finite() {
            return Err(invalid("theta", "exponent must be finite"));
        }
        if let Some(i) = self.index_of(theta) {
            return Ok(i);
        }
        let pos = self.thetas.partition_point(|&t| t < theta);
        self.thetas.insert(pos, theta);
        Ok(pos)
    }

    pub fn index_of(&self, theta: f64) -> Option<usize> {
        self.thetas
            .iter()
            .position(|&t| (t - theta).abs() < EXPONENT_MERGE_TOL)
    }

    pub fn values(&self) -> &[f64] {
        &self.thetas
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }
}

/// `Cov(J_θ1[a,b], J_θ2[a,b])` for a subinterval of length `delta`.
pub fn weighted_covariance(theta1: f64, theta2: f64, delta: f64) -> f64 {
    let s = theta1 + theta2;
    if s == 0.0 {
        delta
    } else {
        -(-s * delta).exp_m1() / s
    }
}

/// Lower factor `F` (row-major, `m × m`, rows in original order) with
/// `F Fᵀ = C` for a positive semidefinite `C`, by diagonally pivoted Cholesky.
/// Pivots below `1e-15 · max diag` are treated as zero, which absorbs the
/// near-singularity of exponentials over short intervals.
pub fn pivoted_cholesky(cov: &[f64], m: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(cov.len(), m * m);
    let mut a = cov.to_vec();
    let mut f = vec![0.0; m * m];
    let mut perm: Vec<usize> = (0..m).collect();
    let max_diag = (0..m).map(|i| a[i * m + i]).fold(0.0_f64, f64::max);
    if !(max_diag.is_finite() && max_diag > 0.0) {
        return Err(Error::Factorization(format!(
            "covariance has no positive diagonal (max {max_diag})"
        )));
    }
    let tol = 1e-15 * max_diag;
    for k in 0..m {
        let (p, piv) = (k..m)
            .map(|i| (i, a[perm[i] * m + perm[i]]))
            .fold((k, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        perm.swap(k, p);
        if piv <= tol {
            break;
        }
        let pk = perm[k];
        let root = piv.sqrt();
        f[pk * m + k] = root;
        for &pi in &perm[k + 1..] {
            f[pi * m + k] = a[pi * m + pk] / root;
        }
        for (ii, &pi) in perm.iter().enumerate().skip(k + 1) {
            for &pj in &perm[ii..] {
                let upd = a[pi * m + pj] - f[pi * m + k] * f[pj * m + k];
                a[pi * m + pj] = upd;
                a[pj * m + pi] = upd;
            }
        }
    }
    Ok(f)
}

/// One sampled path: right-anchored weighted increments on every subinterval.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    grid: TimeGrid,
    dim: usize,
    thetas: ExponentSet,
    /// `[sub][theta][dim]`
    data: Vec<f64>,
    rng: Option<RngSpec>,
}

impl NoiseRealization {
    /// All increments zero: the deterministic skeleton of every solver.
    pub fn zeros(grid: TimeGrid, dim: usize, thetas: ExponentSet) -> Self {
        let n = grid.subintervals() * thetas.len() * dim;
        NoiseRealization {
            grid,
            dim,
            thetas,
            data: vec![0.0; n],
            rng: None,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exponents(&self) -> &ExponentSet {
        &self.thetas
    }

    pub fn rng_spec(&self) -> Option<RngSpec> {
        self.rng
    }

    pub fn theta_index(&self, theta: f64) -> Result<usize> {
        self.thetas
            .index_of(theta)
            .ok_or(Error::MissingExponent(theta))
    }

    /// Stored `J_θ` on subinterval `sub` (between grid points `sub` and `sub + 1`).
    pub fn increment(&self, sub: usize, theta_idx: usize) -> &[f64] {
        let m = self.thetas.len();
        let start = (sub * m + theta_idx) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// `out = ∫_{t_ia}^{t_ic} exp(θ (s - anchor)) dW_s` for grid indices `ia ≤ ic`.
    pub fn weighted_integral_into(
        &self,
        ia: usize,
        ic: usize,
        theta_idx: usize,
        anchor: f64,
        out: &mut [f64],
    ) {
        debug_assert!(ia <= ic && ic < self.grid.len());
        debug_assert_eq!(out.len(), self.dim);
        out.fill(0.0);
        let theta = self.thetas.values()[theta_idx];
        let pts = self.grid.points();
        for sub in ia..ic {
            let inc = self.increment(sub, theta_idx);
            if theta == 0.0 {
                for (o, j) in out.iter_mut().zip(inc) {
                    *o += j;
                }
            } else {
                let w = (theta * (pts[sub + 1] - anchor)).exp();
                for (o, j) in out.iter_mut().zip(inc) {
                    *o += w * j;
                }
            }
        }
    }

    /// `∫_a^c exp(θ (s - anchor)) dW_s` where `a` and `c` are grid points.
    pub fn weighted_integral(&self, a: f64, c: f64, theta: f64, anchor: f64) -> Result<Vec<f64>> {
        let ia = self.grid.require_index(a)?;
        let ic = self.grid.require_index(c)?;
        if ia > ic {
            return Err(Error::InvalidTime {
                time: c,
                reason: "integral upper limit precedes lower limit",
            });
        }
        let th = self.theta_index(theta)?;
        let mut out = vec![0.0; self.dim];
        self.weighted_integral_into(ia, ic, th, anchor, &mut out);
        Ok(out)
    }

    /// The oracle value `W̃_t^(θ) = ∫_0^t exp(θ s) dW_s`. Overflows for large `θ t`.
    pub fn wtilde(&self, t: f64, theta: f64) -> Result<Vec<f64>> {
        self.weighted_integral(0.0, t, theta, 0.0)
    }
}

/// Sample a realization with the noise stream of `rng`.
pub fn sample_noise(
    grid: TimeGrid,
    dim: usize,
    thetas: &ExponentSet,
    rng: &RngSpec,
) -> Result<NoiseRealization> {
    let mut stream = rng.stream(StreamPurpose::Noise);
    let mut nr = sample_noise_with(grid, dim, thetas, &mut stream)?;
    nr.rng = Some(*rng);
    Ok(nr)
}

/// Sample a realization from an arbitrary generator.
pub fn sample_noise_with<R: Rng + ?Sized>(
    grid: TimeGrid,
    dim: usize,
    thetas: &ExponentSet,
    rng: &mut R,
) -> Result<NoiseRealization> {
    if dim == 0 {
        return Err(invalid("dim", "dimension must be at least 1"));
    }
    let values = thetas.values();
    if thetas.index_of(0.0).is_none() || thetas.index_of(2.0).is_none() {
        return Err(invalid("thetas", "exponent set must contain 0 and 2"));
    }
    let m = values.len();
    let pts = grid.points();
    let mut data = vec![0.0; grid.subintervals() * m * dim];
    let mut factors: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut cov = vec![0.0; m * m];
    let mut z = vec![0.0; m];

    for sub in 0..grid.subintervals() {
        let delta = pts[sub + 1] - pts[sub];
        let factor = match factors.get(&delta.to_bits()) {
            Some(f) => f,
            None => {
                for i in 0..m {
                    for j in 0..m {
                        cov[i * m + j] = weighted_covariance(values[i], values[j], delta);
                    }
                }
                let f = pivoted_cholesky(&cov, m)?;
                factors.entry(delta.to_bits()).or_insert(f)
            }
        };
        let rank = (0..m)
            .rev()
            .find(|&k| (0..m).any(|i| factor[i * m + k] != 0.0))
            .map_or(0, |k| k + 1);
        let block = &mut data[sub * m * dim..(sub + 1) * m * dim];
        for d in 0..dim {
            for zk in z.iter_mut().take(rank) {
                *zk = rng.sample(StandardNormal);
            }
            for i in 0..m {
                let row = &factor[i * m..i * m + rank];
                block[i * dim + d] = row.iter().zip(&z).map(|(f, z)| f * z).sum();
            }
        }
    }
    Ok(NoiseRealization {
        grid,
        dim,
        thetas: thetas.clone(),
        data,
        rng: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_single_step_with_midpoint() {
        let g = plan_grid(1, 1.0, &[0.5], &[]).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn grid_degenerate_midpoints_coincide_with_nodes() {
        let g = plan_grid(2, 1.0, &[1.0, 0.0], &[]).unwrap();
        assert_eq!(g.points(), &[0.0, 0.5, 1.0]);
        assert_eq!(g.kinds()[1], kind::NODE | kind::MIDPOINT);
    }

    #[test]
    fn grid_with_extra_time() {
        let g = plan_grid(2, 1.0, &[0.25, 0.75], &[0.9]).unwrap();
        assert_eq!(g.points(), &[0.0, 0.125, 0.5, 0.875, 0.9, 1.0]);
        assert_eq!(g.kinds()[5], kind::NODE | kind::HORIZON);
    }

    #[test]
    fn grid_rejects_bad_times() {
        assert!(plan_grid(2, 1.0, &[0.5, f64::NAN], &[]).is_err());
        assert!(plan_grid(2, 1.0, &[0.5, 1.5], &[]).is_err());
        assert!(plan_grid(2, 1.0, &[], &[1.5]).is_err());
        assert!(plan_grid(2, 1.0, &[], &[-0.1]).is_err());
        assert!(plan_grid(0, 1.0, &[], &[]).is_err());
        assert!(plan_grid(2, 1.0, &[0.5], &[]).is_err());
        assert!(plan_grid(2, 0.0, &[], &[]).is_err());
    }

    #[test]
    fn nested_uniform_grids_share_bits() {
        let mut plan = GridPlan::new(1.0).unwrap();
        plan.uniform(3).unwrap().uniform(192).unwrap();
        let g = plan.build();
        assert_eq!(g.len(), 193);
    }

    #[test]
    fn exponent_set_merges_close_values() {
        let mut s = ExponentSet::new(&[0.5]).unwrap();
        assert_eq!(s.values(), &[0.0, 0.5, 2.0]);
        s.insert(0.5 + 1e-14).unwrap();
        s.insert(2.0 - 1e-13).unwrap();
        assert_eq!(s.len(), 3);
        s.insert(1.5).unwrap();
        assert_eq!(s.values(), &[0.0, 0.5, 1.5, 2.0]);
    }

    #[test]
    fn covariance_formulas() {
        let h = 0.3_f64;
        assert_eq!(weighted_covariance(0.0, 0.0, h), h);
        let c02 = weighted_covariance(0.0, 2.0, h);
        assert!((c02 - (1.0 - (-2.0 * h).exp()) / 2.0).abs() < 1e-15);
        let c22 = weighted_covariance(2.0, 2.0, h);
        assert!((c22 - (1.0 - (-4.0 * h).exp()) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn pivoted_cholesky_reconstructs() {
        let thetas = [0.0, 0.134, 1.866, 2.0];
        for delta in [1.0, 1e-2, 1e-4] {
            let m = 4;
            let mut c = vec![0.0; 16];
            for i in 0..m {
                for j in 0..m {
                    c[i * m + j] = weighted_covariance(thetas[i], thetas[j], delta);
                }
            }
            let f = pivoted_cholesky(&c, m).unwrap();
            for i in 0..m {
                for j in 0..m {
                    let r: f64 = (0..m).map(|k| f[i * m + k] * f[j * m + k]).sum();
                    assert!((r - c[i * m + j]).abs() < 1e-14 * delta, "{delta} {i} {j}");
                }
            }
        }
    }

    fn sample(grid: &TimeGrid, dim: usize, thetas: &ExponentSet, seed: u64) -> NoiseRealization {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_noise_with(grid.clone(), dim, thetas, &mut rng).unwrap()
    }

    #[test]
    fn zero_weight_integral_telescopes() {
        let grid = plan_grid(4, 1.0, &[0.3, 0.6, 0.1, 0.9], &[]).unwrap();
        let nr = sample(&grid, 2, &ExponentSet::default(), 1);
        let total = nr.weighted_integral(0.0, 1.0, 0.0, 0.123).unwrap();
        let mut sum = [0.0; 2];
        for sub in 0..grid.subintervals() {
            for d in 0..2 {
                sum[d] += nr.increment(sub, 0)[d];
            }
        }
        for d in 0..2 {
            assert!((total[d] - sum[d]).abs() < 1e-14);
            assert_eq!(nr.wtilde(1.0, 0.0).unwrap()[d], total[d]);
        }
    }

    #[test]
    fn single_subinterval_anchor_right_is_identity() {
        let grid = plan_grid(2, 1.0, &[], &[]).unwrap();
        let nr = sample(&grid, 1, &ExponentSet::default(), 2);
        let th = nr.theta_index(2.0).unwrap();
        let v = nr.weighted_integral(0.5, 1.0, 2.0, 1.0).unwrap();
        assert_eq!(v[0], nr.increment(1, th)[0]);
    }

    #[test]
    fn two_subinterval_composition() {
        let h = 0.25;
        let grid = plan_grid(2, 2.0 * h, &[], &[]).unwrap();
        let nr = sample(&grid, 1, &ExponentSet::default(), 3);
        let th = nr.theta_index(2.0).unwrap();
        let expect = (-2.0 * h).exp() * nr.increment(0, th)[0] + nr.increment(1, th)[0];
        let got = nr.weighted_integral(0.0, 2.0 * h, 2.0, 2.0 * h).unwrap()[0];
        assert!((got - expect).abs() < 1e-15);
    }

    #[test]
    fn wtilde_at_origin_is_zero() {
        let grid = plan_grid(2, 1.0, &[], &[]).unwrap();
        let nr = sample(&grid, 3, &ExponentSet::default(), 4);
        assert_eq!(nr.wtilde(0.0, 2.0).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn off_grid_and_missing_exponent_are_errors() {
        let grid = plan_grid(2, 1.0, &[], &[]).unwrap();
        let nr = sample(&grid, 1, &ExponentSet::default(), 5);
        assert_eq!(
            nr.weighted_integral(0.0, 0.7, 0.0, 0.7),
            Err(Error::OffGrid(0.7))
        );
        assert_eq!(
            nr.weighted_integral(0.0, 1.0, 1.0, 1.0),
            Err(Error::MissingExponent(1.0))
        );
        assert!(nr.weighted_integral(1.0, 0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_spec() {
        let grid = plan_grid(8, 1.0, &[0.5; 8], &[]).unwrap();
        let thetas = ExponentSet::new(&[0.3, 1.7]).unwrap();
        let a = sample_noise(grid.clone(), 2, &thetas, &RngSpec::new(11, 5)).unwrap();
        let b = sample_noise(grid.clone(), 2, &thetas, &RngSpec::new(11, 5)).unwrap();
        let c = sample_noise(grid, 2, &thetas, &RngSpec::new(11, 6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.increment(0, 0), c.increment(0, 0));
    }

    #[test]
    fn exponent_set_must_contain_zero_and_two() {
        let grid = plan_grid(1, 1.0, &[], &[]).unwrap();
        let bad = ExponentSet {
            thetas: vec![0.0, 1.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_noise_with(grid, 1, &bad, &mut rng).is_err());
    }
}
