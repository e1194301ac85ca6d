//! Strongly convex potentials with Lipschitz gradient, including the
//! piecewise-quadratic bump family used by the lower-bound construction.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};

/// A potential `U: R^d → R` accessed only through its gradient.
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn grad_into(&self, x: &[f64], out: &mut [f64]);

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.grad_into(x, &mut out);
        out
    }

    /// Interval containing every eigenvalue of the Hessian.
    fn hessian_bounds(&self) -> (f64, f64);

    fn minimizer(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Per-coordinate curvatures when the potential is a separable quadratic.
    fn quadratic_curvatures(&self) -> Option<Vec<f64>> {
        None
    }

    fn label(&self) -> String;
}

/// The class of potentials with Hessian eigenvalues in `[ell, lip]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunctionClass {
    pub ell: f64,
    pub lip: f64,
}

impl FunctionClass {
    pub fn new(ell: f64, lip: f64) -> Result<Self> {
        if !(ell.is_finite() && lip.is_finite() && ell > 0.0 && ell <= lip) {
            return Err(invalid("ell/L", format!("need 0 < ell <= L, got ell={ell}, L={lip}")));
        }
        Ok(FunctionClass { ell, lip })
    }

    pub fn condition_number(&self) -> f64 {
        self.lip / self.ell
    }

    pub fn contains_bounds(&self, (lo, hi): (f64, f64)) -> bool {
        self.ell <= lo && hi <= self.lip
    }

    pub fn quadratic(&self, u: f64, dim: usize) -> Result<Quadratic> {
        if !(self.ell..=self.lip).contains(&u) {
            return Err(invalid(
                "u",
                format!("curvature {u} outside [{}, {}]", self.ell, self.lip),
            ));
        }
        Quadratic::new(u, dim)
    }

    pub fn smooth(&self, dim: usize) -> Result<SmoothNonQuadratic> {
        SmoothNonQuadratic::new(self.ell, self.lip, dim, SmoothProfile::Sine)
    }
}

/// `U(x) = u |x|² / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    u: f64,
    dim: usize,
}

impl Quadratic {
    pub fn new(u: f64, dim: usize) -> Result<Self> {
        if !(u.is_finite() && u > 0.0) {
            return Err(invalid("u", format!("curvature must be positive, got {u}")));
        }
        if dim == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        Ok(Quadratic { u, dim })
    }

    pub fn curvature(&self) -> f64 {
        self.u
    }
}

impl Potential for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.u * xi;
        }
    }

    fn hessian_bounds(&self) -> (f64, f64) {
        (self.u, self.u)
    }

    fn quadratic_curvatures(&self) -> Option<Vec<f64>> {
        Some(vec![self.u; self.dim])
    }

    fn label(&self) -> String {
        format!("quadratic(u={})", self.u)
    }
}

/// Product of one-dimensional potentials acting on separate coordinates.
#[derive(Debug, Clone)]
pub struct Separable {
    components: Vec<Arc<dyn Potential>>,
}

impl Separable {
    pub fn new(components: Vec<Arc<dyn Potential>>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("components", "need at least one component"));
        }
        if let Some(c) = components.iter().find(|c| c.dim() != 1) {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: c.dim(),
            });
        }
        Ok(Separable { components })
    }

    pub fn components(&self) -> &[Arc<dyn Potential>] {
        &self.components
    }
}

impl Potential for Separable {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, c) in self.components.iter().enumerate() {
            c.grad_into(&x[i..i + 1], &mut out[i..i + 1]);
        }
    }

    fn hessian_bounds(&self) -> (f64, f64) {
        self.components
            .iter()
            .map(|c| c.hessian_bounds())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a), hi.max(b))
            })
    }

    fn minimizer(&self) -> Vec<f64> {
        self.components.iter().flat_map(|c| c.minimizer()).collect()
    }

    fn quadratic_curvatures(&self) -> Option<Vec<f64>> {
        self.components
            .iter()
            .map(|c| c.quadratic_curvatures().map(|v| v[0]))
            .collect()
    }

    fn label(&self) -> String {
        let parts: Vec<String> = self.components.iter().map(|c| c.label()).collect();
        format!("separable[{}]", parts.join(","))
    }
}

/// Non-negative C¹ bump supported on `[0, Cx/(2N)]`, piecewise quadratic with
/// slope bound `ξ` and peak `ε = Cx ξ / (8N)` at the centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump1D {
    cx: f64,
    n: usize,
    xi: f64,
    a: f64,
    eps: f64,
}

impl Bump1D {
    pub fn new(cx: f64, n: usize, xi: f64) -> Result<Self> {
        if !(cx.is_finite() && cx > 0.0) {
            return Err(invalid("Cx", format!("must be positive, got {cx}")));
        }
        if !(xi.is_finite() && xi > 0.0) {
            return Err(invalid("xi", format!("must be positive, got {xi}")));
        }
        if n == 0 {
            return Err(invalid("N", "must be at least 1"));
        }
        let nf = n as f64;
        Ok(Bump1D {
            cx,
            n,
            xi,
            a: xi * 4.0 * nf / cx,
            eps: cx * xi / (8.0 * nf),
        })
    }

    pub fn width(&self) -> f64 {
        self.cx / (2.0 * self.n as f64)
    }

    /// Peak value `ε`.
    pub fn height(&self) -> f64 {
        self.eps
    }

    pub fn slope_bound(&self) -> f64 {
        self.xi
    }

    pub fn curvature(&self) -> f64 {
        self.a
    }

    /// The plateau `[Cx/(8N), 3Cx/(8N)]` on which the bump is at least `ε/2`.
    pub fn plateau(&self) -> (f64, f64) {
        let q = self.cx / (8.0 * self.n as f64);
        (q, 3.0 * q)
    }

    pub fn value(&self, x: f64) -> f64 {
        let q = self.cx / (8.0 * self.n as f64);
        let w = 4.0 * q;
        if !(0.0..=w).contains(&x) {
            0.0
        } else if x <= q {
            self.a * x * x
        } else if x <= 3.0 * q {
            let y = x - 2.0 * q;
            -self.a * y * y + 2.0 * self.a * q * q
        } else {
            let y = x - w;
            self.a * y * y
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let q = self.cx / (8.0 * self.n as f64);
        let w = 4.0 * q;
        if !(0.0..=w).contains(&x) {
            0.0
        } else if x <= q {
            2.0 * self.a * x
        } else if x <= 3.0 * q {
            -2.0 * self.a * (x - 2.0 * q)
        } else {
            2.0 * self.a * (x - w)
        }
    }
}

/// Cells `I_j = [x_j, x_{j+1})`, `x_j = Cx j / (2N)`, `j = -N..N-1`, tiling
/// `[-Cx/2, Cx/2]`; the last cell is closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellPartition {
    cx: f64,
    n: usize,
}

impl CellPartition {
    pub fn new(cx: f64, n: usize) -> Result<Self> {
        if !(cx.is_finite() && cx > 0.0) {
            return Err(invalid("Cx", format!("must be positive, got {cx}")));
        }
        if n == 0 {
            return Err(invalid("N", "must be at least 1"));
        }
        Ok(CellPartition { cx, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cell_count(&self) -> usize {
        2 * self.n
    }

    pub fn boundary(&self, j: i64) -> f64 {
        self.cx * j as f64 / (2 * self.n) as f64
    }

    /// Cell containing `x`, or `None` outside `[-Cx/2, Cx/2]`.
    pub fn cell_of(&self, x: f64) -> Option<i64> {
        let n = self.n as i64;
        if !(x >= self.boundary(-n) && x <= self.boundary(n)) {
            return None;
        }
        let mut j = ((x * (2 * self.n) as f64 / self.cx).floor() as i64).clamp(-n, n - 1);
        while j > -n && x < self.boundary(j) {
            j -= 1;
        }
        while j < n - 1 && x >= self.boundary(j + 1) {
            j += 1;
        }
        Some(j)
    }

    /// Position of cell `j` in `0..2N`.
    pub fn slot(&self, j: i64) -> usize {
        (j + self.n as i64) as usize
    }

    pub fn cell(&self, slot: usize) -> i64 {
        slot as i64 - self.n as i64
    }
}

/// Which bumps are switched on, indexed by cell `j = -N..N-1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BetaIndex {
    n: usize,
    bits: Vec<bool>,
}

impl BetaIndex {
    pub fn zeros(n: usize) -> Self {
        BetaIndex {
            n,
            bits: vec![false; 2 * n],
        }
    }

    pub fn ones(n: usize) -> Self {
        BetaIndex {
            n,
            bits: vec![true; 2 * n],
        }
    }

    /// Bits in slot order (cell `-N` first).
    pub fn from_bits(n: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != 2 * n {
            return Err(Error::DimensionMismatch {
                expected: 2 * n,
                got: bits.len(),
            });
        }
        Ok(BetaIndex { n, bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, j: i64) -> bool {
        self.bits[(j + self.n as i64) as usize]
    }

    pub fn set(&mut self, j: i64, on: bool) {
        self.bits[(j + self.n as i64) as usize] = on;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Componentwise `self >= other`.
    pub fn dominates(&self, other: &BetaIndex) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a || !b)
    }
}

/// Shared parameters of the bump family `∇U_β(x) = u x + Σ_j β_j g(x - x_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialFamily {
    u: f64,
    bump: Bump1D,
    cells: CellPartition,
}

impl AdversarialFamily {
    /// Requires `ξ ≤ u - ell` and `u + ξ ≤ L`, so every member has Hessian in
    /// `[u - ξ, u + ξ] ⊆ [ell, L]`.
    pub fn new(class: &FunctionClass, u: f64, cx: f64, n: usize, xi: f64) -> Result<Self> {
        let bump = Bump1D::new(cx, n, xi)?;
        let tol = 1e-12 * class.lip;
        if !(u - xi >= class.ell - tol && u + xi <= class.lip + tol) {
            return Err(invalid(
                "xi",
                format!(
                    "bump slope {xi} pushes curvature {u} outside [{}, {}]",
                    class.ell, class.lip
                ),
            ));
        }
        Ok(AdversarialFamily {
            u,
            bump,
            cells: CellPartition::new(cx, n)?,
        })
    }

    /// Family with slope bound `ξ = min{u - ell, u_R - u}`.
    pub fn with_upper_curvature(
        class: &FunctionClass,
        u: f64,
        u_r: f64,
        cx: f64,
        n: usize,
    ) -> Result<Self> {
        if !(class.ell < u && u < u_r && u_r <= class.lip) {
            return Err(invalid(
                "u/u_R",
                format!("need ell < u < u_R <= L, got u={u}, u_R={u_r}"),
            ));
        }
        Self::new(class, u, cx, n, (u - class.ell).min(u_r - u))
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn bump(&self) -> &Bump1D {
        &self.bump
    }

    pub fn cells(&self) -> &CellPartition {
        &self.cells
    }

    pub fn n(&self) -> usize {
        self.cells.n
    }

    /// `ε`, the sup-norm distance between any member's gradient and `u x`.
    pub fn epsilon(&self) -> f64 {
        self.bump.height()
    }

    pub fn potential(&self, beta: BetaIndex) -> Result<Adversarial> {
        if beta.n != self.cells.n {
            return Err(Error::DimensionMismatch {
                expected: 2 * self.cells.n,
                got: 2 * beta.n,
            });
        }
        Ok(Adversarial { family: *self, beta })
    }

    /// Bump contribution at `x` under `beta`, using only the cell containing
    /// `x`. Two indices agreeing on that cell give bit-identical values.
    pub fn perturbation(&self, beta: &BetaIndex, x: f64) -> f64 {
        match self.cells.cell_of(x) {
            Some(j) if beta.get(j) => self.bump.value(x - self.cells.boundary(j)),
            _ => 0.0,
        }
    }
}

/// One member `U_β` of the bump family (one-dimensional).
#[derive(Debug, Clone, PartialEq)]
pub struct Adversarial {
    family: AdversarialFamily,
    beta: BetaIndex,
}

impl Adversarial {
    pub fn beta(&self) -> &BetaIndex {
        &self.beta
    }

    pub fn family(&self) -> &AdversarialFamily {
        &self.family
    }
}

impl Potential for Adversarial {
    fn dim(&self) -> usize {
        1
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.family.u * x[0] + self.family.perturbation(&self.beta, x[0]);
    }

    fn hessian_bounds(&self) -> (f64, f64) {
        if self.beta.count_ones() == 0 {
            (self.family.u, self.family.u)
        } else {
            let xi = self.family.bump.slope_bound();
            (self.family.u - xi, self.family.u + xi)
        }
    }

    fn quadratic_curvatures(&self) -> Option<Vec<f64>> {
        (self.beta.count_ones() == 0).then(|| vec![self.family.u])
    }

    fn label(&self) -> String {
        format!(
            "adversarial(u={},N={},ones={})",
            self.family.u,
            self.family.n(),
            self.beta.count_ones()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothProfile {
    /// `s(x) = 1 - cos x`
    Sine,
    /// `s ≡ 0`: reduces to a quadratic.
    Zero,
}

/// `U(x) = (ell+L)/4 |x|² + (L-ell)/4 Σ_i s(x_i)` with `|s''| ≤ 1`, so the
/// Hessian lies in `[(3 ell + L)/4, (ell + 3L)/4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothNonQuadratic {
    ell: f64,
    lip: f64,
    dim: usize,
    profile: SmoothProfile,
}

impl SmoothNonQuadratic {
    pub fn new(ell: f64, lip: f64, dim: usize, profile: SmoothProfile) -> Result<Self> {
        FunctionClass::new(ell, lip)?;
        if dim == 0 {
            return Err(invalid("d", "dimension must be at least 1"));
        }
        Ok(SmoothNonQuadratic {
            ell,
            lip,
            dim,
            profile,
        })
    }
}

impl Potential for SmoothNonQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        let centre = 0.5 * (self.ell + self.lip);
        let swing = 0.25 * (self.lip - self.ell);
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = match self.profile {
                SmoothProfile::Sine => centre * xi + swing * xi.sin(),
                SmoothProfile::Zero => centre * xi,
            };
        }
    }

    fn hessian_bounds(&self) -> (f64, f64) {
        match self.profile {
            SmoothProfile::Sine => (
                0.25 * (3.0 * self.ell + self.lip),
                0.25 * (self.ell + 3.0 * self.lip),
            ),
            SmoothProfile::Zero => {
                let c = 0.5 * (self.ell + self.lip);
                (c, c)
            }
        }
    }

    fn quadratic_curvatures(&self) -> Option<Vec<f64>> {
        match self.profile {
            SmoothProfile::Sine => None,
            SmoothProfile::Zero => Some(vec![0.5 * (self.ell + self.lip); self.dim]),
        }
    }

    fn label(&self) -> String {
        format!("smooth(ell={},L={})", self.ell, self.lip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_basics() {
        let q = Quadratic::new(1.0, 2).unwrap();
        assert_eq!(q.grad(&[2.0, -3.0]), vec![2.0, -3.0]);
        assert_eq!(q.minimizer(), vec![0.0, 0.0]);
        assert_eq!(q.hessian_bounds(), (1.0, 1.0));
        let class = FunctionClass::new(1.0, 4.0).unwrap();
        assert!(class.quadratic(5.0, 1).is_err());
        assert!(class.quadratic(0.5, 1).is_err());
    }

    #[test]
    fn separable_acts_componentwise() {
        let a: Arc<dyn Potential> = Arc::new(Quadratic::new(1.0, 1).unwrap());
        let b: Arc<dyn Potential> = Arc::new(Quadratic::new(3.0, 1).unwrap());
        let s = Separable::new(vec![a.clone(), b]).unwrap();
        assert_eq!(s.grad(&[2.0, 2.0]), vec![2.0, 6.0]);
        assert_eq!(s.hessian_bounds(), (1.0, 3.0));
        assert_eq!(s.quadratic_curvatures(), Some(vec![1.0, 3.0]));
        let twin = Separable::new(vec![a.clone(), a]).unwrap();
        let q = Quadratic::new(1.0, 2).unwrap();
        assert_eq!(twin.grad(&[0.3, -0.7]), q.grad(&[0.3, -0.7]));
        assert!(Separable::new(vec![]).is_err());
        let wide: Arc<dyn Potential> = Arc::new(Quadratic::new(1.0, 2).unwrap());
        assert!(Separable::new(vec![wide]).is_err());
    }

    #[test]
    fn bump_shape() {
        let g = Bump1D::new(1.0, 4, 0.5).unwrap();
        let q = 1.0 / 32.0;
        assert_eq!(g.value(0.0), 0.0);
        assert_eq!(g.value(4.0 * q), 0.0);
        assert!((g.value(q) - g.height() / 2.0).abs() < 1e-16);
        assert!((g.value(2.0 * q) - g.height()).abs() < 1e-16);
        assert_eq!(g.height(), 1.0 / 64.0);
        assert_eq!(g.value(-0.01), 0.0);
        assert_eq!(g.value(0.2), 0.0);
    }

    #[test]
    fn bump_is_c1_at_junctions() {
        let g = Bump1D::new(0.7, 5, 0.3).unwrap();
        let (p1, p2) = g.plateau();
        for p in [p1, p2] {
            let below = p * (1.0 - 1e-15);
            let above = p * (1.0 + 1e-15);
            assert!((g.value(below) - g.value(above)).abs() < 1e-14);
            assert!((g.derivative(below) - g.derivative(above)).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_lookup() {
        let c = CellPartition::new(1.0, 3).unwrap();
        assert_eq!(c.cell_of(0.0), Some(0));
        assert_eq!(c.cell_of(-0.5), Some(-3));
        assert_eq!(c.cell_of(0.5), Some(2));
        assert_eq!(c.cell_of(1.0 / 6.0), Some(1));
        assert_eq!(c.cell_of(-1e-300), Some(-1));
        assert_eq!(c.cell_of(0.5000001), None);
        assert_eq!(c.cell_of(-0.51), None);
        assert_eq!(c.cell_of(f64::NAN), None);
        for k in -3..3 {
            assert_eq!(c.cell_of(c.boundary(k)), Some(k));
        }
    }

    #[test]
    fn adversarial_zero_beta_is_quadratic() {
        let class = FunctionClass::new(1.0, 4.0).unwrap();
        let fam = AdversarialFamily::new(&class, 2.0, 1.0, 4, 1.0).unwrap();
        let p = fam.potential(BetaIndex::zeros(4)).unwrap();
        let q = Quadratic::new(2.0, 1).unwrap();
        for x in [-1.0, -0.3, 0.0, 0.11, 0.49, 2.0] {
            assert_eq!(p.grad(&[x]), q.grad(&[x]));
        }
        assert_eq!(p.quadratic_curvatures(), Some(vec![2.0]));
    }

    #[test]
    fn adversarial_parameter_checks() {
        let class = FunctionClass::new(1.0, 4.0).unwrap();
        assert!(AdversarialFamily::new(&class, 2.0, 1.0, 4, 1.5).is_err());
        assert!(AdversarialFamily::new(&class, 3.5, 1.0, 4, 1.0).is_err());
        let fam = AdversarialFamily::with_upper_curvature(&class, 2.5, 3.0, 1.0, 4).unwrap();
        assert_eq!(fam.bump().slope_bound(), 0.5);
        assert!(fam.potential(BetaIndex::zeros(3)).is_err());
        assert!(BetaIndex::from_bits(2, vec![true; 3]).is_err());
    }

    #[test]
    fn smooth_zero_profile_is_quadratic() {
        let s = SmoothNonQuadratic::new(1.0, 3.0, 1, SmoothProfile::Zero).unwrap();
        let q = Quadratic::new(2.0, 1).unwrap();
        assert_eq!(s.grad(&[0.7]), q.grad(&[0.7]));
        let s = SmoothNonQuadratic::new(1.0, 3.0, 2, SmoothProfile::Sine).unwrap();
        assert_eq!(s.grad(&[0.0, 0.0]), vec![0.0, 0.0]);
    }
}
