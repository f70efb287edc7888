//! Level-set fields: analytic scalar fields with closed-form derivatives,
//! piecewise-polynomial interpolants on a mesh, root finding along segments,
//! and exact geometry providers (normals, closest points, normal extension)
//! for the shipped circle and annulus geometries.

use crate::geom::{Mat2, Vec2};
use crate::mesh::Mesh;
use crate::space::FeSpace;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

/// Default relative tolerance of the segment root finder.
pub const ROOT_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum LevelSetError {
    #[error("point ({0:.6}, {1:.6}) outside the bulk domain of the discrete field")]
    PointOutsideBulk(f64, f64),
    #[error("unsupported interpolation degree {0}; supported degrees are 1, 2, 3")]
    UnsupportedDegree(usize),
    #[error("no sign change of the field on the segment")]
    NoSignChange,
    #[error("root finder failed to converge within the iteration budget")]
    MaxIterationsExceeded,
    #[error("field does not provide a Hessian")]
    HessianUnavailable,
    #[error("field gradient degenerate (|grad| = {0:.3e}) near the interface")]
    DegenerateGradient(f64),
}

type ScalarFn = Arc<dyn Fn(Vec2) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(Vec2) -> Vec2 + Send + Sync>;
type MatrixFn = Arc<dyn Fn(Vec2) -> Mat2 + Send + Sync>;

/// A closed-form scalar field with gradient and optional Hessian.
#[derive(Clone)]
pub struct AnalyticLevelSet {
    value: ScalarFn,
    gradient: VectorFn,
    hessian: Option<MatrixFn>,
    name: &'static str,
}

impl fmt::Debug for AnalyticLevelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticLevelSet").field("name", &self.name).finish()
    }
}

impl AnalyticLevelSet {
    pub fn new(
        name: &'static str,
        value: impl Fn(Vec2) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static,
        hessian: Option<MatrixFn>,
    ) -> Self {
        AnalyticLevelSet {
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            hessian,
            name,
        }
    }

    /// Signed distance to the unit circle: phi(x) = |x| - 1.
    pub fn circle() -> Self {
        AnalyticLevelSet::new(
            "circle",
            |p| p.norm() - 1.0,
            |p| p.normalized(),
            Some(Arc::new(|p: Vec2| {
                // Hessian of |x|: (I - n n^T) / |x|.
                let r = p.norm();
                let n = p / r;
                Mat2::IDENTITY.sub(Mat2::outer(n)).scale(1.0 / r)
            })),
        )
    }

    /// Signed distance to the annulus of radii 0.9 and 1.1:
    /// phi(x) = ||x| - 1| - 0.1.
    pub fn annulus() -> Self {
        AnalyticLevelSet::new(
            "annulus",
            |p| (p.norm() - 1.0).abs() - 0.1,
            |p| {
                let r = p.norm();
                p * ((r - 1.0).signum() / r)
            },
            Some(Arc::new(|p: Vec2| {
                let r = p.norm();
                let n = p / r;
                Mat2::IDENTITY.sub(Mat2::outer(n)).scale((r - 1.0).signum() / r)
            })),
        )
    }

    /// Affine field n . x - c with constant gradient n.
    pub fn halfplane(normal: Vec2, offset: f64) -> Self {
        let n = normal;
        AnalyticLevelSet::new(
            "halfplane",
            move |p| n.dot(p) - offset,
            move |_| n,
            Some(Arc::new(|_| Mat2::new(0.0, 0.0, 0.0, 0.0))),
        )
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    #[inline]
    pub fn value(&self, x: Vec2) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn gradient(&self, x: Vec2) -> Vec2 {
        (self.gradient)(x)
    }

    pub fn hessian(&self, x: Vec2) -> Result<Mat2, LevelSetError> {
        match &self.hessian {
            Some(h) => Ok(h(x)),
            None => Err(LevelSetError::HessianUnavailable),
        }
    }
}

/// Continuous piecewise-polynomial field of degree q on a mesh; shared
/// Lagrange nodes carry a single coefficient, so the field is continuous
/// across edges while its gradient is elementwise.
#[derive(Debug, Clone)]
pub struct DiscreteLevelSet {
    pub mesh: Arc<Mesh>,
    pub space: FeSpace,
    pub coeffs: Vec<f64>,
}

/// A level-set field, either closed-form or a mesh interpolant.
#[derive(Debug, Clone)]
pub enum LevelSetField {
    Analytic(AnalyticLevelSet),
    Discrete(DiscreteLevelSet),
}

impl From<AnalyticLevelSet> for LevelSetField {
    fn from(a: AnalyticLevelSet) -> Self {
        LevelSetField::Analytic(a)
    }
}

impl LevelSetField {
    /// Nodal Lagrange interpolant of an analytic field, exact at all
    /// degree-q nodes.
    pub fn interpolate(
        phi: &AnalyticLevelSet,
        mesh: Arc<Mesh>,
        q: usize,
    ) -> Result<LevelSetField, LevelSetError> {
        let space = FeSpace::build(&mesh, q).map_err(|_| LevelSetError::UnsupportedDegree(q))?;
        let coeffs = space.interpolate(|p| phi.value(p));
        Ok(LevelSetField::Discrete(DiscreteLevelSet { mesh, space, coeffs }))
    }

    /// Polynomial degree of the field; analytic fields report 3, the
    /// highest degree the cut machinery samples at.
    pub fn degree(&self) -> usize {
        match self {
            LevelSetField::Analytic(_) => 3,
            LevelSetField::Discrete(d) => d.space.degree,
        }
    }

    /// Field value at `x`. Discrete fields locate the containing cell and
    /// fail outside the bulk rectangle.
    pub fn eval(&self, x: Vec2) -> Result<f64, LevelSetError> {
        match self {
            LevelSetField::Analytic(a) => Ok(a.value(x)),
            LevelSetField::Discrete(d) => {
                let cell = d
                    .mesh
                    .locate_point(x)
                    .map_err(|_| LevelSetError::PointOutsideBulk(x.x, x.y))?;
                Ok(self.eval_in_cell(cell, x))
            }
        }
    }

    /// Field gradient at `x`; for discrete fields this is the elementwise
    /// polynomial gradient of the lowest-id containing cell.
    pub fn eval_gradient(&self, x: Vec2) -> Result<Vec2, LevelSetError> {
        match self {
            LevelSetField::Analytic(a) => Ok(a.gradient(x)),
            LevelSetField::Discrete(d) => {
                let cell = d
                    .mesh
                    .locate_point(x)
                    .map_err(|_| LevelSetError::PointOutsideBulk(x.x, x.y))?;
                Ok(self.gradient_in_cell(cell, x))
            }
        }
    }

    pub fn hessian(&self, x: Vec2) -> Result<Mat2, LevelSetError> {
        match self {
            LevelSetField::Analytic(a) => a.hessian(x),
            LevelSetField::Discrete(_) => Err(LevelSetError::HessianUnavailable),
        }
    }

    /// Value using the polynomial of the given cell. For analytic fields the
    /// cell is ignored; for discrete fields the cell polynomial extends
    /// smoothly slightly beyond the cell, which the cut-cell machinery
    /// relies on during root bracketing.
    #[inline]
    pub fn eval_in_cell(&self, cell: usize, x: Vec2) -> f64 {
        match self {
            LevelSetField::Analytic(a) => a.value(x),
            LevelSetField::Discrete(d) => d.space.eval_function(&d.mesh, cell, &d.coeffs, x),
        }
    }

    /// Gradient using the polynomial of the given cell.
    #[inline]
    pub fn gradient_in_cell(&self, cell: usize, x: Vec2) -> Vec2 {
        match self {
            LevelSetField::Analytic(a) => a.gradient(x),
            LevelSetField::Discrete(d) => {
                d.space.eval_function_gradient(&d.mesh, cell, &d.coeffs, x)
            }
        }
    }

    /// Root of phi - level on the segment [a, b]. Secant iteration with a
    /// bisection fallback; the returned point x* satisfies
    /// |phi(x*) - level| <= tol * max(1, |phi(a) - level|, |phi(b) - level|).
    pub fn root_on_segment(
        &self,
        a: Vec2,
        b: Vec2,
        level: f64,
        tol: f64,
    ) -> Result<Vec2, LevelSetError> {
        let eval = |x: Vec2| self.eval(x).unwrap_or(f64::NAN);
        let mut count = 0u64;
        root_on_segment_impl(&eval, a, b, level, tol, &mut count)
    }

    /// Root finding pinned to one cell's polynomial (no point location),
    /// counting field evaluations.
    pub fn root_on_segment_in_cell(
        &self,
        cell: usize,
        a: Vec2,
        b: Vec2,
        level: f64,
        tol: f64,
        phi_evals: &mut u64,
    ) -> Result<Vec2, LevelSetError> {
        let eval = |x: Vec2| self.eval_in_cell(cell, x);
        root_on_segment_impl(&eval, a, b, level, tol, phi_evals)
    }
}

const MAX_SECANT: usize = 50;
const MAX_BISECT: usize = 200;

fn root_on_segment_impl(
    eval: &dyn Fn(Vec2) -> f64,
    a: Vec2,
    b: Vec2,
    level: f64,
    tol: f64,
    phi_evals: &mut u64,
) -> Result<Vec2, LevelSetError> {
    let f = |t: f64, n: &mut u64| {
        *n += 1;
        eval(a + (b - a) * t) - level
    };
    let fa = f(0.0, phi_evals);
    let fb = f(1.0, phi_evals);
    if !(fa * fb < 0.0) {
        if fa == 0.0 {
            return Ok(a);
        }
        if fb == 0.0 {
            return Ok(b);
        }
        return Err(LevelSetError::NoSignChange);
    }
    let target = tol * fa.abs().max(fb.abs()).max(1.0);

    let (mut lo, mut hi) = (0.0, 1.0);
    let (mut flo, mut fhi) = (fa, fb);
    let (mut t0, mut f0) = (lo, flo);
    let (mut t1, mut f1) = (hi, fhi);
    for _ in 0..MAX_SECANT {
        if f1.abs() <= target {
            return Ok(a + (b - a) * t1);
        }
        let denom = f1 - f0;
        let mut t2 = if denom != 0.0 { t1 - f1 * (t1 - t0) / denom } else { 0.5 * (lo + hi) };
        // Keep iterates inside the bracket; fall back to bisection steps.
        if !(t2 > lo && t2 < hi) || !t2.is_finite() {
            t2 = 0.5 * (lo + hi);
        }
        let f2 = f(t2, phi_evals);
        if flo * f2 <= 0.0 {
            hi = t2;
            fhi = f2;
        } else {
            lo = t2;
            flo = f2;
        }
        t0 = t1;
        f0 = f1;
        t1 = t2;
        f1 = f2;
    }
    // Pure bisection finishes the job for pathological flat cases.
    for _ in 0..MAX_BISECT {
        let tm = 0.5 * (lo + hi);
        let fm = f(tm, phi_evals);
        if fm.abs() <= target || hi - lo < f64::EPSILON {
            return Ok(a + (b - a) * tm);
        }
        if flo * fm <= 0.0 {
            hi = tm;
            fhi = fm;
        } else {
            lo = tm;
            flo = fm;
        }
    }
    let _ = fhi;
    Err(LevelSetError::MaxIterationsExceeded)
}

/// Exact geometry of a surface given as a level set: unit normal, closest
/// point projection, Hessian and extension of surface data along normals.
#[derive(Clone)]
pub struct GeometryProvider {
    field: AnalyticLevelSet,
    closest: VectorFn,
}

impl fmt::Debug for GeometryProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeometryProvider").field("field", &self.field).finish()
    }
}

impl GeometryProvider {
    pub fn new(field: AnalyticLevelSet, closest: impl Fn(Vec2) -> Vec2 + Send + Sync + 'static) -> Self {
        GeometryProvider { field, closest: Arc::new(closest) }
    }

    /// Unit circle with exact projection x / |x|.
    pub fn circle() -> Self {
        GeometryProvider::new(AnalyticLevelSet::circle(), |p| p / p.norm())
    }

    /// Annulus boundary (radii 0.9 and 1.1); projects onto the nearer circle.
    pub fn annulus() -> Self {
        GeometryProvider::new(AnalyticLevelSet::annulus(), |p| {
            let r = p.norm();
            let target = if r >= 1.0 { 1.1 } else { 0.9 };
            p * (target / r)
        })
    }

    pub fn field(&self) -> &AnalyticLevelSet {
        &self.field
    }

    pub fn value(&self, x: Vec2) -> f64 {
        self.field.value(x)
    }

    /// n(x) = grad phi(x); unit length wherever phi is a signed distance.
    pub fn normal(&self, x: Vec2) -> Vec2 {
        self.field.gradient(x)
    }

    pub fn hessian(&self, x: Vec2) -> Result<Mat2, LevelSetError> {
        self.field.hessian(x)
    }

    /// Closest-point projection p(x) = x - phi(x) n(x).
    pub fn closest_point(&self, x: Vec2) -> Vec2 {
        (self.closest)(x)
    }

    /// Normal extension: (v^e)(x) = v(p(x)).
    pub fn extend<'a, F: Fn(Vec2) -> f64 + 'a>(&'a self, v: F) -> impl Fn(Vec2) -> f64 + 'a {
        move |x| v(self.closest_point(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use approx::assert_relative_eq;

    #[test]
    fn circle_value_on_zero_level() {
        let phi = AnalyticLevelSet::circle();
        assert_eq!(phi.value(Vec2::new(1.0, 0.0)), 0.0);
    }

    #[test]
    fn annulus_value_inside_ring() {
        let phi = AnalyticLevelSet::annulus();
        assert_relative_eq!(phi.value(Vec2::new(0.95, 0.0)), -0.05, epsilon = 1e-15);
    }

    #[test]
    fn circle_gradient_is_radial() {
        let phi = AnalyticLevelSet::circle();
        let g = phi.gradient(Vec2::new(0.0, 1.0));
        assert_relative_eq!(g.x, 0.0, epsilon = 1e-15);
        assert_relative_eq!(g.y, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn halfplane_gradient_constant() {
        let phi = AnalyticLevelSet::halfplane(Vec2::new(1.0, 1.0), 0.5);
        let g = phi.gradient(Vec2::new(0.123, -4.0));
        assert_eq!((g.x, g.y), (1.0, 1.0));
    }

    #[test]
    fn interpolant_exact_at_nodes() {
        let mesh = Arc::new(Mesh::build_uniform(Rect::square(-1.5, 1.5), 0.25).unwrap());
        let phi = AnalyticLevelSet::circle();
        for q in 1..=3 {
            let field = LevelSetField::interpolate(&phi, mesh.clone(), q).unwrap();
            let LevelSetField::Discrete(d) = &field else { panic!() };
            for (dof, &p) in d.space.node_coords.iter().enumerate() {
                assert_eq!(d.coeffs[dof], phi.value(p), "q={q} node {dof}");
            }
        }
    }

    #[test]
    fn interpolant_reproduces_linear_field() {
        let mesh = Arc::new(Mesh::build_uniform(Rect::square(0.0, 1.0), 0.5).unwrap());
        let phi = AnalyticLevelSet::halfplane(Vec2::new(2.0, -1.0), 0.3);
        for q in 1..=3 {
            let field = LevelSetField::interpolate(&phi, mesh.clone(), q).unwrap();
            for p in [Vec2::new(0.31, 0.77), Vec2::new(0.5, 0.5), Vec2::new(0.99, 0.01)] {
                assert_relative_eq!(field.eval(p).unwrap(), phi.value(p), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn interpolation_degree_validation() {
        let mesh = Arc::new(Mesh::build_uniform(Rect::square(0.0, 1.0), 0.5).unwrap());
        let phi = AnalyticLevelSet::circle();
        assert!(matches!(
            LevelSetField::interpolate(&phi, mesh, 4),
            Err(LevelSetError::UnsupportedDegree(4))
        ));
    }

    #[test]
    fn discrete_eval_outside_bulk_errors() {
        let mesh = Arc::new(Mesh::build_uniform(Rect::square(0.0, 1.0), 0.5).unwrap());
        let field =
            LevelSetField::interpolate(&AnalyticLevelSet::circle(), mesh, 2).unwrap();
        assert!(matches!(
            field.eval(Vec2::new(2.0, 0.0)),
            Err(LevelSetError::PointOutsideBulk(_, _))
        ));
    }

    /// L-infinity interpolation error near the interface decays at rate
    /// q + 1 for the circle distance function (smooth away from the origin).
    #[test]
    fn interpolation_rate_matches_degree() {
        let phi = AnalyticLevelSet::circle();
        for q in [2usize, 3] {
            let mut errs = Vec::new();
            let mut hs = Vec::new();
            for i in 0..4 {
                let h = 0.1 * 0.5_f64.powi(i);
                let mesh = Arc::new(Mesh::build_uniform(Rect::square(-1.5, 1.5), h).unwrap());
                let field = LevelSetField::interpolate(&phi, mesh.clone(), q).unwrap();
                // Dense samples in the band |phi| < 0.25 where the distance
                // function is smooth.
                let mut max_err = 0.0f64;
                let n = 160;
                for jj in 0..n {
                    for ii in 0..n {
                        let x = Vec2::new(
                            -1.5 + 3.0 * (ii as f64 + 0.51) / n as f64,
                            -1.5 + 3.0 * (jj as f64 + 0.49) / n as f64,
                        );
                        if phi.value(x).abs() < 0.25 {
                            let err = (field.eval(x).unwrap() - phi.value(x)).abs();
                            max_err = max_err.max(err);
                        }
                    }
                }
                errs.push(max_err);
                hs.push(h);
            }
            let slope = fit_slope(&hs, &errs);
            assert!(
                slope >= q as f64 + 0.7,
                "q={q}: L-inf slope {slope:.2}, errors {errs:?}"
            );
            // The observed rate should sit near q + 1.
            assert!((slope - (q as f64 + 1.0)).abs() < 0.6, "q={q}: slope {slope:.2}");
        }
    }

    fn fit_slope(hs: &[f64], errs: &[f64]) -> f64 {
        let n = hs.len() as f64;
        let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        (n * sxy - sx * sy) / (n * sxx - sx * sx)
    }

    #[test]
    fn root_linear_field() {
        let field = LevelSetField::from(AnalyticLevelSet::halfplane(Vec2::new(1.0, 1.0), 0.5));
        let root = field
            .root_on_segment(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), 0.0, ROOT_TOL)
            .unwrap();
        assert_relative_eq!(root.x, 0.5, epsilon = 1e-14);
        assert_relative_eq!(root.y, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn root_on_circle() {
        let field = LevelSetField::from(AnalyticLevelSet::circle());
        let root = field
            .root_on_segment(Vec2::new(0.9, 0.0), Vec2::new(1.1, 0.0), 0.0, ROOT_TOL)
            .unwrap();
        assert_relative_eq!(root.x, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn root_requires_sign_change() {
        let field = LevelSetField::from(AnalyticLevelSet::circle());
        assert!(matches!(
            field.root_on_segment(Vec2::new(0.1, 0.0), Vec2::new(0.2, 0.0), 0.0, ROOT_TOL),
            Err(LevelSetError::NoSignChange)
        ));
    }

    #[test]
    fn geometry_provider_circle_invariants() {
        let geo = GeometryProvider::circle();
        for p in [Vec2::new(0.7, 0.2), Vec2::new(-0.3, 1.2), Vec2::new(0.95, -0.85)] {
            assert_relative_eq!(geo.normal(p).norm(), 1.0, epsilon = 1e-12);
            let proj = geo.closest_point(p);
            let twice = geo.closest_point(proj);
            assert!(proj.dist(twice) <= 1e-12);
            // p(x) = x - phi(x) n(x) holds for signed distance fields.
            let alt = p - geo.normal(p) * geo.value(p);
            assert!(proj.dist(alt) <= 1e-12);
        }
    }

    #[test]
    fn geometry_provider_annulus_invariants() {
        let geo = GeometryProvider::annulus();
        for p in [Vec2::new(1.05, 0.1), Vec2::new(0.6, 0.6), Vec2::new(-1.2, 0.3)] {
            assert_relative_eq!(geo.normal(p).norm(), 1.0, epsilon = 1e-12);
            let proj = geo.closest_point(p);
            assert!(geo.value(proj).abs() <= 1e-12);
            assert!(proj.dist(geo.closest_point(proj)) <= 1e-12);
        }
    }

    #[test]
    fn extension_constant_along_normals() {
        let geo = GeometryProvider::circle();
        let v = |p: Vec2| p.y.atan2(p.x).cos();
        let ve = geo.extend(v);
        let theta = 0.83f64;
        let dir = Vec2::new(theta.cos(), theta.sin());
        let a = ve(dir * 0.8);
        let b = ve(dir * 1.3);
        assert_relative_eq!(a, b, epsilon = 1e-13);
        assert_relative_eq!(a, theta.cos(), epsilon = 1e-13);
    }
}
