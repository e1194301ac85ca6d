//! Solvers for the underdamped Langevin dynamics
//!
//! ```text
//! dX = V dt,   dV = -2V dt - L⁻¹ ∇U(X) dt + 2 L^{-1/2} dW,   X_0 = x★, V_0 = 0
//! ```
//!
//! driven by a shared [`NoiseRealization`]: the exact Gaussian propagator for
//! quadratic potentials, the exponential Euler–Maruyama scheme and the
//! randomized midpoint method. EM and RMM can record every gradient query.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{midpoint_time, node_time, NoiseRealization};
use crate::potentials::Potential;
use crate::quadrature::gauss_legendre_on;

/// Relative distance from `u = L` below which the critically damped form is used.
pub const CRITICAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhaseState {
    pub fn at_rest(x: Vec<f64>) -> Self {
        let v = vec![0.0; x.len()];
        PhaseState { x, v }
    }
}

/// One gradient evaluation: where, at which nominal time, and what came back.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub point: Vec<f64>,
    pub time: f64,
    pub grad: Vec<f64>,
}

/// States at the solver's nodes, flattened by node then coordinate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub dim: usize,
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl Trajectory {
    fn new(dim: usize, capacity: usize) -> Self {
        Trajectory {
            dim,
            times: Vec::with_capacity(capacity),
            x: Vec::with_capacity(capacity * dim),
            v: Vec::with_capacity(capacity * dim),
        }
    }

    fn push(&mut self, t: f64, x: &[f64], v: &[f64]) {
        self.times.push(t);
        self.x.extend_from_slice(x);
        self.v.extend_from_slice(v);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn x_at(&self, node: usize) -> &[f64] {
        &self.x[node * self.dim..(node + 1) * self.dim]
    }

    pub fn v_at(&self, node: usize) -> &[f64] {
        &self.v[node * self.dim..(node + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub trace: bool,
    pub trajectory: bool,
}

impl RunOptions {
    pub const FINAL_ONLY: RunOptions = RunOptions {
        trace: false,
        trajectory: false,
    };
    pub const TRACE: RunOptions = RunOptions {
        trace: true,
        trajectory: false,
    };
    pub const TRAJECTORY: RunOptions = RunOptions {
        trace: false,
        trajectory: true,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverRun {
    pub final_state: PhaseState,
    pub trajectory: Option<Trajectory>,
    pub queries: Option<Vec<Query>>,
    pub eta: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Em,
    Rmm,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Exact => "exact",
            SolverKind::Em => "em",
            SolverKind::Rmm => "rmm",
        }
    }

    /// Gradient evaluations per step.
    pub fn queries_per_step(self) -> usize {
        match self {
            SolverKind::Exact => 0,
            SolverKind::Em => 1,
            SolverKind::Rmm => 2,
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(SolverKind::Exact),
            "em" => Ok(SolverKind::Em),
            "rmm" => Ok(SolverKind::Rmm),
            other => Err(invalid("solver", format!("unknown solver `{other}`"))),
        }
    }
}

fn check_curvature(u: f64, lip: f64) -> Result<()> {
    if !(u.is_finite() && lip.is_finite() && u > 0.0 && lip > 0.0) {
        return Err(invalid("u/L", format!("need positive finite values, got u={u}, L={lip}")));
    }
    if u > lip * (1.0 + CRITICAL_TOL) {
        return Err(invalid("u", format!("curvature {u} exceeds L={lip}")));
    }
    Ok(())
}

fn is_critical(u: f64, lip: f64) -> bool {
    (1.0 - u / lip).abs() < CRITICAL_TOL
}

/// Decay rates `λ∓ = 1 ∓ √(1 - u/L)` of the linear dynamics.
pub fn decay_rates(u: f64, lip: f64) -> Result<(f64, f64)> {
    check_curvature(u, lip)?;
    let r = (u / lip).min(1.0);
    let s = (1.0 - r).sqrt();
    Ok((r / (1.0 + s), 1.0 + s))
}

/// `exp(H t)` for `H = [[0, 1], [-u/L, -2]]`.
pub fn semigroup(u: f64, lip: f64, t: f64) -> Result<[[f64; 2]; 2]> {
    check_curvature(u, lip)?;
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidTime {
            time: t,
            reason: "semigroup time must be finite and non-negative",
        });
    }
    if is_critical(u, lip) {
        let e = (-t).exp();
        return Ok([[e * (1.0 + t), e * t], [-e * t, e * (1.0 - t)]]);
    }
    let (lm, lp) = decay_rates(u, lip)?;
    Ok(semigroup_distinct(u / lip, lm, lp, t))
}

fn semigroup_distinct(r: f64, lm: f64, lp: f64, t: f64) -> [[f64; 2]; 2] {
    let em = (-t * lm).exp();
    let ep = (-t * lp).exp();
    let k = 1.0 / (lp - lm);
    [
        [k * (lp * em - lm * ep), k * (em - ep)],
        [k * r * (ep - em), k * (lp * ep - lm * em)],
    ]
}

struct CurvatureGroup {
    u: f64,
    r: f64,
    lm: f64,
    lp: f64,
    th_m: usize,
    th_p: usize,
    scale: f64,
    dims: Vec<usize>,
}

/// Exact propagation for `U(x) = u |x|²/2`.
pub fn exact_quadratic(u: f64, lip: f64, nr: &NoiseRealization, opts: RunOptions) -> Result<SolverRun> {
    exact_separable_quadratic(&vec![u; nr.dim()], lip, nr, opts)
}

/// Exact propagation for `U(x) = Σ_i u_i x_i²/2`, one curvature per coordinate.
///
/// Requires the realization to carry the exponents `λ∓(u_i)`. The trajectory,
/// when requested, is recorded at every grid point.
pub fn exact_separable_quadratic(
    curvatures: &[f64],
    lip: f64,
    nr: &NoiseRealization,
    opts: RunOptions,
) -> Result<SolverRun> {
    let dim = nr.dim();
    if curvatures.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: curvatures.len(),
        });
    }
    let mut groups: Vec<CurvatureGroup> = Vec::new();
    for (i, &u) in curvatures.iter().enumerate() {
        if let Some(g) = groups.iter_mut().find(|g| g.u.to_bits() == u.to_bits()) {
            g.dims.push(i);
            continue;
        }
        check_curvature(u, lip)?;
        if is_critical(u, lip) {
            return Err(invalid(
                "u",
                "exact propagation needs u < L (the two decay rates coincide at u = L)",
            ));
        }
        let (lm, lp) = decay_rates(u, lip)?;
        let th_m = nr.theta_index(lm)?;
        let th_p = nr.theta_index(lp)?;
        if th_m == th_p {
            return Err(Error::MissingExponent(lp));
        }
        groups.push(CurvatureGroup {
            u,
            r: u / lip,
            lm,
            lp,
            th_m,
            th_p,
            scale: 1.0 / (lip - u).sqrt(),
            dims: vec![i],
        });
    }

    let pts = nr.grid().points();
    let mut x = vec![0.0; dim];
    let mut v = vec![0.0; dim];
    let mut traj = opts
        .trajectory
        .then(|| Trajectory::new(dim, pts.len()));
    if let Some(tr) = traj.as_mut() {
        tr.push(pts[0], &x, &v);
    }
    for sub in 0..nr.grid().subintervals() {
        let delta = pts[sub + 1] - pts[sub];
        for g in &groups {
            let m = semigroup_distinct(g.r, g.lm, g.lp, delta);
            let jm = nr.increment(sub, g.th_m);
            let jp = nr.increment(sub, g.th_p);
            for &i in &g.dims {
                let (xi, vi) = (x[i], v[i]);
                x[i] = m[0][0] * xi + m[0][1] * vi + g.scale * (jm[i] - jp[i]);
                v[i] = m[1][0] * xi + m[1][1] * vi + g.scale * (g.lp * jp[i] - g.lm * jm[i]);
            }
        }
        if let Some(tr) = traj.as_mut() {
            tr.push(pts[sub + 1], &x, &v);
        }
    }
    Ok(SolverRun {
        final_state: PhaseState { x, v },
        trajectory: traj,
        queries: None,
        eta: None,
    })
}

struct StepContext<'a> {
    nr: &'a NoiseRealization,
    node_idx: Vec<usize>,
    th0: usize,
    th2: usize,
    h: f64,
    inv_sqrt_l: f64,
    lip: f64,
}

impl<'a> StepContext<'a> {
    fn new(p: &dyn Potential, lip: f64, steps: usize, nr: &'a NoiseRealization) -> Result<Self> {
        if p.dim() != nr.dim() {
            return Err(Error::DimensionMismatch {
                expected: nr.dim(),
                got: p.dim(),
            });
        }
        if steps == 0 {
            return Err(invalid("steps", "must be at least 1"));
        }
        if !(lip.is_finite() && lip > 0.0) {
            return Err(invalid("L", format!("must be positive, got {lip}")));
        }
        let horizon = nr.grid().horizon();
        let node_idx = (0..=steps)
            .map(|k| nr.grid().require_index(node_time(k, steps, horizon)))
            .collect::<Result<Vec<_>>>()?;
        Ok(StepContext {
            nr,
            node_idx,
            th0: nr.theta_index(0.0)?,
            th2: nr.theta_index(2.0)?,
            h: horizon / steps as f64,
            inv_sqrt_l: 1.0 / lip.sqrt(),
            lip,
        })
    }

    fn time(&self, idx: usize) -> f64 {
        self.nr.grid().points()[idx]
    }

    /// `∫ dW` and `∫ e^{2(s-anchor)} dW` between two grid indices.
    fn integrals(&self, ia: usize, ic: usize, plain: &mut [f64], weighted: &mut [f64]) {
        let anchor = self.time(ic);
        self.nr.weighted_integral_into(ia, ic, self.th0, anchor, plain);
        self.nr.weighted_integral_into(ia, ic, self.th2, anchor, weighted);
    }
}

fn record(queries: &mut Option<Vec<Query>>, point: &[f64], time: f64, grad: &[f64]) {
    if let Some(q) = queries.as_mut() {
        q.push(Query {
            point: point.to_vec(),
            time,
            grad: grad.to_vec(),
        });
    }
}

/// Exponential Euler–Maruyama with `steps` uniform steps: the gradient is
/// frozen at the left node, everything else is integrated exactly.
pub fn em_integrate(
    p: &dyn Potential,
    lip: f64,
    steps: usize,
    nr: &NoiseRealization,
    opts: RunOptions,
) -> Result<SolverRun> {
    let ctx = StepContext::new(p, lip, steps, nr)?;
    let dim = p.dim();
    let h = ctx.h;
    let decay = (-2.0 * h).exp();
    let drift = -(-2.0 * h).exp_m1() / 2.0;
    let grad_x = (h - drift) / (2.0 * lip);
    let grad_v = drift / lip;

    let mut x = p.minimizer();
    let mut v = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut plain = vec![0.0; dim];
    let mut weighted = vec![0.0; dim];
    let mut queries = opts.trace.then(|| Vec::with_capacity(steps));
    let mut traj = opts.trajectory.then(|| Trajectory::new(dim, steps + 1));
    if let Some(tr) = traj.as_mut() {
        tr.push(0.0, &x, &v);
    }
    for k in 0..steps {
        let (ia, ic) = (ctx.node_idx[k], ctx.node_idx[k + 1]);
        p.grad_into(&x, &mut g);
        record(&mut queries, &x, ctx.time(ia), &g);
        ctx.integrals(ia, ic, &mut plain, &mut weighted);
        for i in 0..dim {
            let vi = v[i];
            x[i] += drift * vi + ctx.inv_sqrt_l * (plain[i] - weighted[i]) - grad_x * g[i];
            v[i] = decay * vi + 2.0 * ctx.inv_sqrt_l * weighted[i] - grad_v * g[i];
        }
        if let Some(tr) = traj.as_mut() {
            tr.push(ctx.time(ic), &x, &v);
        }
    }
    Ok(SolverRun {
        final_state: PhaseState { x, v },
        trajectory: traj,
        queries,
        eta: None,
    })
}

/// Randomized midpoint method with `steps` uniform steps and midpoint
/// fractions `etas` (one per step, each in `[0, 1]`).
pub fn rmm_integrate(
    p: &dyn Potential,
    lip: f64,
    steps: usize,
    nr: &NoiseRealization,
    etas: &[f64],
    opts: RunOptions,
) -> Result<SolverRun> {
    let ctx = StepContext::new(p, lip, steps, nr)?;
    if etas.len() != steps {
        return Err(invalid(
            "eta",
            format!("expected {steps} midpoints, got {}", etas.len()),
        ));
    }
    let dim = p.dim();
    let h = ctx.h;
    let horizon = nr.grid().horizon();
    let decay = (-2.0 * h).exp();
    let drift = -(-2.0 * h).exp_m1() / 2.0;
    let isl = ctx.inv_sqrt_l;

    let mut x = p.minimizer();
    let mut v = vec![0.0; dim];
    let mut xm = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    let mut plain = vec![0.0; dim];
    let mut weighted = vec![0.0; dim];
    let mut queries = opts.trace.then(|| Vec::with_capacity(2 * steps));
    let mut traj = opts.trajectory.then(|| Trajectory::new(dim, steps + 1));
    if let Some(tr) = traj.as_mut() {
        tr.push(0.0, &x, &v);
    }
    for (k, &eta) in etas.iter().enumerate() {
        let (ia, ic) = (ctx.node_idx[k], ctx.node_idx[k + 1]);
        let t_mid = midpoint_time(k, eta, steps, horizon);
        let im = nr.grid().require_index(t_mid)?;
        let tau = t_mid - ctx.time(ia);
        let drift_tau = -(-2.0 * tau).exp_m1() / 2.0;
        let pred_grad = (tau - drift_tau) / (2.0 * ctx.lip);
        let lag = (2.0 * (tau - h)).exp();
        let corr_x = h * -(2.0 * (tau - h)).exp_m1() / (2.0 * ctx.lip);
        let corr_v = h * lag / ctx.lip;

        p.grad_into(&x, &mut g);
        record(&mut queries, &x, t_mid, &g);
        ctx.integrals(ia, im, &mut plain, &mut weighted);
        for i in 0..dim {
            xm[i] = x[i] + drift_tau * v[i] + isl * (plain[i] - weighted[i]) - pred_grad * g[i];
        }

        p.grad_into(&xm, &mut g);
        record(&mut queries, &xm, ctx.time(ic), &g);
        ctx.integrals(ia, ic, &mut plain, &mut weighted);
        for i in 0..dim {
            let vi = v[i];
            x[i] += drift * vi + isl * (plain[i] - weighted[i]) - corr_x * g[i];
            v[i] = decay * vi + 2.0 * isl * weighted[i] - corr_v * g[i];
        }
        if let Some(tr) = traj.as_mut() {
            tr.push(ctx.time(ic), &x, &v);
        }
    }
    Ok(SolverRun {
        final_state: PhaseState { x, v },
        trajectory: traj,
        queries,
        eta: Some(etas.to_vec()),
    })
}

/// Run `kind` on the realization. `etas` is only read by RMM.
pub fn solve(
    kind: SolverKind,
    p: &dyn Potential,
    lip: f64,
    steps: usize,
    nr: &NoiseRealization,
    etas: &[f64],
    opts: RunOptions,
) -> Result<SolverRun> {
    match kind {
        SolverKind::Exact => {
            let curv = p
                .quadratic_curvatures()
                .ok_or_else(|| invalid("solver", "exact solver needs a quadratic potential"))?;
            exact_separable_quadratic(&curv, lip, nr, opts)
        }
        SolverKind::Em => em_integrate(p, lip, steps, nr, opts),
        SolverKind::Rmm => rmm_integrate(p, lip, steps, nr, etas, opts),
    }
}

/// Coupled reference solution: exact for separable quadratics, otherwise RMM
/// with `ref_steps` steps and the independent midpoints `ref_etas`.
pub fn reference_solution(
    p: &dyn Potential,
    lip: f64,
    nr: &NoiseRealization,
    ref_steps: usize,
    ref_etas: &[f64],
) -> Result<PhaseState> {
    let run = match p.quadratic_curvatures() {
        Some(curv) => exact_separable_quadratic(&curv, lip, nr, RunOptions::FINAL_ONLY)?,
        None => rmm_integrate(p, lip, ref_steps, nr, ref_etas, RunOptions::FINAL_ONLY)?,
    };
    Ok(run.final_state)
}

/// Re-evaluate `p` at every recorded query point. Returns the index of the
/// first query whose gradient differs bitwise, if any.
pub fn replay_trace(p: &dyn Potential, queries: &[Query]) -> Option<usize> {
    let mut g = vec![0.0; p.dim()];
    queries.iter().position(|q| {
        p.grad_into(&q.point, &mut g);
        g.iter()
            .zip(&q.grad)
            .any(|(a, b)| a.to_bits() != b.to_bits())
    })
}

/// First and second moments of `(X, V)` for a one-dimensional quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentState {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl MomentState {
    pub const ORIGIN: MomentState = MomentState {
        mean: [0.0; 2],
        cov: [[0.0; 2]; 2],
    };
}

type Mat2 = [[f64; 2]; 2];

fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// One RMM step on `U = u x²/2` conditional on the midpoint offset `tau`:
/// `z' = A z + B ξ` with `ξ = (I_mid, I_full, I_weighted)` Gaussian of
/// covariance `Q`, where
/// `I_mid = ∫_0^τ (1 - e^{2(s-τ)}) dW`, `I_full = ∫_0^h (1 - e^{2(s-h)}) dW`,
/// `I_weighted = ∫_0^h e^{2(s-h)} dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineStep {
    pub a: Mat2,
    pub b: [[f64; 3]; 2],
    pub q: [[f64; 3]; 3],
}

pub fn rmm_affine_step(u: f64, lip: f64, h: f64, tau: f64) -> AffineStep {
    let half_decay = |t: f64| -(-2.0 * t).exp_m1() / 2.0;
    let quarter_decay = |t: f64| -(-4.0 * t).exp_m1() / 4.0;
    let isl = 1.0 / lip.sqrt();

    let drift_tau = half_decay(tau);
    let a1 = 1.0 - u * (tau - drift_tau) / (2.0 * lip);
    let a2 = drift_tau;
    let k1 = h * -(2.0 * (tau - h)).exp_m1() / (2.0 * lip);
    let k2 = h * (2.0 * (tau - h)).exp() / lip;
    let drift = half_decay(h);
    let decay = (-2.0 * h).exp();

    let a = [
        [1.0 - k1 * u * a1, drift - k1 * u * a2],
        [-k2 * u * a1, decay - k2 * u * a2],
    ];
    let b = [
        [-k1 * u * isl, isl, 0.0],
        [-k2 * u * isl, 0.0, 2.0 * isl],
    ];

    let q_mid = tau - 2.0 * drift_tau + quarter_decay(tau);
    let q_full = h - 2.0 * drift + quarter_decay(h);
    let q_w = quarter_decay(h);
    let q_full_w = drift - quarter_decay(h);
    let lag = (2.0 * (tau - h)).exp();
    let int_lag = (lag - (-2.0 * h).exp()) / 2.0;
    let int_cross = (lag - (-2.0 * (tau + h)).exp()) / 4.0;
    let q_mid_full = tau - drift_tau - int_lag + int_cross;
    let q_mid_w = int_lag - int_cross;
    let q = [
        [q_mid, q_mid_full, q_mid_w],
        [q_mid_full, q_full, q_full_w],
        [q_mid_w, q_full_w, q_w],
    ];
    AffineStep { a, b, q }
}

/// Moments after `steps` RMM steps of size `h` on `U = u x²/2`, starting from
/// the origin, averaging each step over the midpoint fraction with an
/// `nodes`-point Gauss–Legendre rule.
pub fn moment_propagate_rmm_quadratic(
    u: f64,
    lip: f64,
    h: f64,
    steps: usize,
    nodes: usize,
) -> Result<MomentState> {
    check_curvature(u, lip)?;
    if !(h.is_finite() && h > 0.0) {
        return Err(invalid("h", format!("step must be positive, got {h}")));
    }
    if nodes < 16 {
        return Err(invalid("nodes", "need at least 16 quadrature nodes"));
    }
    let (etas, weights) = gauss_legendre_on(nodes, 0.0, 1.0);
    let laws: Vec<(f64, AffineStep)> = etas
        .iter()
        .zip(&weights)
        .map(|(&eta, &w)| (w, rmm_affine_step(u, lip, h, eta * h)))
        .collect();

    let mut mean_a = [[0.0; 2]; 2];
    let mut noise = [[0.0; 2]; 2];
    for (w, step) in &laws {
        for i in 0..2 {
            for j in 0..2 {
                mean_a[i][j] += w * step.a[i][j];
                let mut s = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        s += step.b[i][k] * step.q[k][l] * step.b[j][l];
                    }
                }
                noise[i][j] += w * s;
            }
        }
    }

    let mut mean = [0.0; 2];
    let mut second = [[0.0; 2]; 2];
    for _ in 0..steps {
        let mut next = noise;
        for (w, step) in &laws {
            let t = mat_mul(&mat_mul(&step.a, &second), &transpose(&step.a));
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] += w * t[i][j];
                }
            }
        }
        second = next;
        mean = [
            mean_a[0][0] * mean[0] + mean_a[0][1] * mean[1],
            mean_a[1][0] * mean[0] + mean_a[1][1] * mean[1],
        ];
    }
    let mut cov = second;
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] -= mean[i] * mean[j];
        }
    }
    Ok(MomentState { mean, cov })
}

/// Law of `(X_t, V_t)` under the exact dynamics for `U = u x²/2`, `u < L`.
pub fn exact_moments(u: f64, lip: f64, t: f64) -> Result<MomentState> {
    check_curvature(u, lip)?;
    if is_critical(u, lip) {
        return Err(invalid("u", "closed-form moments need u < L"));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::InvalidTime {
            time: t,
            reason: "time must be finite and non-negative",
        });
    }
    let (lm, lp) = decay_rates(u, lip)?;
    let e = |a: f64| -(-a * t).exp_m1() / a;
    let (emm, emp, epp) = (e(2.0 * lm), e(lm + lp), e(2.0 * lp));
    let c = 1.0 / (lip - u);
    let xx = c * (emm - 2.0 * emp + epp);
    let xv = c * ((lp + lm) * emp - lm * emm - lp * epp);
    let vv = c * (lp * lp * epp - 2.0 * lp * lm * emp + lm * lm * emm);
    Ok(MomentState {
        mean: [0.0; 2],
        cov: [[xx, xv], [xv, vv]],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{plan_grid, ExponentSet};
    use crate::potentials::Quadratic;

    #[test]
    fn semigroup_identity_at_zero() {
        let m = semigroup(3.0, 4.0, 0.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((m[i][j] - want).abs() < 1e-15);
            }
        }
        assert!(semigroup(5.0, 4.0, 1.0).is_err());
    }

    #[test]
    fn decay_rates_example() {
        let (lm, lp) = decay_rates(3.0, 4.0).unwrap();
        assert!((lm - 0.5).abs() < 1e-15);
        assert!((lp - 1.5).abs() < 1e-15);
    }

    #[test]
    fn semigroup_is_continuous_at_critical_damping() {
        let a = semigroup(4.0 * (1.0 - 2e-9), 4.0, 0.7).unwrap();
        let b = semigroup(4.0, 4.0, 0.7).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((a[i][j] - b[i][j]).abs() < 1e-6);
            }
        }
    }

    fn zero_noise(steps: usize, etas: &[f64], thetas: &[f64]) -> NoiseRealization {
        let grid = plan_grid(steps, 1.0, etas, &[]).unwrap();
        NoiseRealization::zeros(grid, 1, ExponentSet::new(thetas).unwrap())
    }

    #[test]
    fn zero_noise_keeps_origin() {
        let q = Quadratic::new(1.0, 1).unwrap();
        let (lm, lp) = decay_rates(1.0, 4.0).unwrap();
        let nr = zero_noise(4, &[0.3; 4], &[lm, lp]);
        let ex = exact_quadratic(1.0, 4.0, &nr, RunOptions::FINAL_ONLY).unwrap();
        assert_eq!(ex.final_state, PhaseState::at_rest(vec![0.0]));
        let em = em_integrate(&q, 4.0, 4, &nr, RunOptions::TRACE).unwrap();
        assert_eq!(em.final_state, PhaseState::at_rest(vec![0.0]));
        assert_eq!(em.queries.unwrap().len(), 4);
        let rmm = rmm_integrate(&q, 4.0, 4, &nr, &[0.3; 4], RunOptions::TRACE).unwrap();
        assert_eq!(rmm.final_state, PhaseState::at_rest(vec![0.0]));
        let trace = rmm.queries.unwrap();
        assert_eq!(trace.len(), 8);
        assert_eq!(trace[0].time, 0.075);
        assert_eq!(trace[1].time, 0.25);
    }

    #[test]
    fn exact_solver_rejects_critical_damping_and_missing_exponents() {
        let nr = zero_noise(2, &[], &[]);
        assert!(exact_quadratic(4.0, 4.0, &nr, RunOptions::FINAL_ONLY).is_err());
        assert!(matches!(
            exact_quadratic(3.0, 4.0, &nr, RunOptions::FINAL_ONLY),
            Err(Error::MissingExponent(_))
        ));
    }

    #[test]
    fn rmm_checks_inputs() {
        let q = Quadratic::new(1.0, 1).unwrap();
        let nr = zero_noise(2, &[], &[]);
        assert!(rmm_integrate(&q, 4.0, 2, &nr, &[0.5], RunOptions::FINAL_ONLY).is_err());
        assert!(matches!(
            rmm_integrate(&q, 4.0, 2, &nr, &[0.3, 0.3], RunOptions::FINAL_ONLY),
            Err(Error::OffGrid(_))
        ));
        let q2 = Quadratic::new(1.0, 2).unwrap();
        assert!(em_integrate(&q2, 4.0, 2, &nr, RunOptions::FINAL_ONLY).is_err());
        assert!(em_integrate(&q, 4.0, 3, &nr, RunOptions::FINAL_ONLY).is_err());
    }

    #[test]
    fn em_time_integral_at_ln2_over_2() {
        let h = std::f64::consts::LN_2 / 2.0;
        assert!((-(-2.0 * h).exp_m1() / 2.0 - 0.25).abs() < 1e-16);
    }

    #[test]
    fn rmm_with_unit_eta_predicts_like_em() {
        let q = Quadratic::new(1.0, 1).unwrap();
        let grid = plan_grid(4, 1.0, &[], &[]).unwrap();
        let nr = crate::noise::sample_noise(
            grid,
            1,
            &ExponentSet::default(),
            &crate::rng::RngSpec::new(1, 0),
        )
        .unwrap();
        let em = em_integrate(&q, 4.0, 4, &nr, RunOptions::TRACE).unwrap();
        let rmm = rmm_integrate(&q, 4.0, 4, &nr, &[1.0; 4], RunOptions::TRACE).unwrap();
        let (em_q, rmm_q) = (em.queries.unwrap(), rmm.queries.unwrap());
        assert!((rmm_q[1].point[0] - em_q[1].point[0]).abs() < 1e-15);
    }

    #[test]
    fn moments_start_at_origin() {
        let m = moment_propagate_rmm_quadratic(1.0, 4.0, 0.1, 0, 16).unwrap();
        assert_eq!(m, MomentState::ORIGIN);
        assert!(moment_propagate_rmm_quadratic(1.0, 4.0, 0.0, 3, 16).is_err());
        assert!(moment_propagate_rmm_quadratic(1.0, 4.0, 0.1, 3, 8).is_err());
    }

    #[test]
    fn exact_moments_approach_stationary_law() {
        let m = exact_moments(3.0, 4.0, 60.0).unwrap();
        assert!((m.cov[0][0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.cov[1][1] - 0.25).abs() < 1e-12);
        assert!(m.cov[0][1].abs() < 1e-12);
    }

    #[test]
    fn solver_kind_round_trip() {
        for k in [SolverKind::Exact, SolverKind::Em, SolverKind::Rmm] {
            assert_eq!(k.name().parse::<SolverKind>().unwrap(), k);
        }
        assert!("verlet".parse::<SolverKind>().is_err());
    }
}
