//! Moment fitting: quadrature weights at a fixed, cut-independent point set
//! obtained by least squares. Volume moments are reduced to boundary
//! integrals through divergence identities; the interface part of the
//! boundary is itself handled by a fitted surface rule built from a
//! divergence-free vector basis, so only straight-edge line integrals are
//! ever computed directly. Weights may come out negative.

use super::{
    CutCellGeometry, CutContext, CutError, CutIntegrator, CutQuadrature, MethodTag,
    PolygonEdgeKind,
};
use crate::geom::Vec2;
use crate::quadrature::{GaussRule1d, TriangleRule};
use faer::Mat;

/// Basis degree from the target order: d = m - 2.
pub fn basis_degree_from_order(m: usize) -> usize {
    m.saturating_sub(2).max(1)
}

/// Relative singular-value cutoff of the least-squares stages.
const RANK_TOL: f64 = 1e-12;
/// The point count must exceed the basis size by at least this margin.
const POINT_MARGIN: usize = 3;

pub struct MomentFitting;

impl CutIntegrator for MomentFitting {
    fn name(&self) -> &'static str {
        "mf"
    }

    fn tag(&self) -> MethodTag {
        MethodTag::Mf
    }

    /// The fitted rule integrates over the whole of Q directly; no polygon
    /// plus remainder split is involved.
    fn quadrature(
        &self,
        geom: &CutCellGeometry,
        ctx: &CutContext,
    ) -> Result<Option<CutQuadrature>, CutError> {
        let report = moment_fit_area_weights(geom, ctx, basis_degree_from_order(ctx.m))?;
        Ok(Some(report.quadrature))
    }
}

/// A single monomial c * x^a * y^b.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Mono {
    pub c: f64,
    pub a: u32,
    pub b: u32,
}

impl Mono {
    pub fn eval(&self, p: Vec2) -> f64 {
        self.c * p.x.powi(self.a as i32) * p.y.powi(self.b as i32)
    }

    /// Partial derivative in x.
    pub fn dx(&self) -> Mono {
        if self.a == 0 {
            Mono { c: 0.0, a: 0, b: self.b }
        } else {
            Mono { c: self.c * self.a as f64, a: self.a - 1, b: self.b }
        }
    }

    /// Partial derivative in y.
    pub fn dy(&self) -> Mono {
        if self.b == 0 {
            Mono { c: 0.0, a: self.a, b: 0 }
        } else {
            Mono { c: self.c * self.b as f64, a: self.a, b: self.b - 1 }
        }
    }
}

/// A vector field with monomial components.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MonoField {
    pub x: Mono,
    pub y: Mono,
}

impl MonoField {
    pub fn eval(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.x.eval(p), self.y.eval(p))
    }

    /// Divergence as the pair of monomials (d fx / dx, d fy / dy).
    #[cfg(test)]
    pub fn divergence_terms(&self) -> (Mono, Mono) {
        (self.x.dx(), self.y.dy())
    }
}

/// Scalar moment basis: all monomials of total degree <= d, ordered by
/// degree then by descending x power.
pub(crate) fn scalar_basis(d: usize) -> Vec<Mono> {
    let mut out = Vec::new();
    for deg in 0..=d as u32 {
        for b in 0..=deg {
            out.push(Mono { c: 1.0, a: deg - b, b });
        }
    }
    out
}

/// Divergence-free vector basis spanning the interface flux moments:
/// curls (d psi / dy, -d psi / dx) of the monomial stream functions psi of
/// degree 1..=d+1. For d = 2 this reproduces the classical nine-field
/// quadratic set up to sign and scaling.
pub(crate) fn divergence_free_basis(d: usize) -> Vec<MonoField> {
    let mut out = Vec::new();
    for deg in 1..=(d + 1) as u32 {
        for b in 0..=deg {
            let psi = Mono { c: 1.0, a: deg - b, b };
            out.push(MonoField { x: psi.dy(), y: Mono { c: -psi.dx().c, ..psi.dx() } });
        }
    }
    out
}

/// Area-moment companion fields with div h = 2 g:
/// h = (x g, y g) * 2 / (deg g + 2).
pub(crate) fn area_moment_fields(d: usize) -> Vec<MonoField> {
    scalar_basis(d)
        .into_iter()
        .map(|g| {
            let scale = 2.0 / (g.a + g.b + 2) as f64;
            MonoField {
                x: Mono { c: scale, a: g.a + 1, b: g.b },
                y: Mono { c: scale, a: g.a, b: g.b + 1 },
            }
        })
        .collect()
}

/// The fixed point set for a cell: symmetric triangle-rule nodes of
/// exactness d+2, raised until the count exceeds the basis size by the
/// margin. Independent of how the interface cuts the cell.
pub(crate) fn fitting_points(ctx: &CutContext, cell: usize, d: usize) -> Result<Vec<Vec2>, CutError> {
    let needed = scalar_basis(d).len() + POINT_MARGIN;
    let mut exactness = d + 2;
    loop {
        let rule = TriangleRule::with_exactness(exactness.min(10))?;
        if rule.len() >= needed || exactness >= 10 {
            let v = ctx.mesh.cell_vertices(cell);
            return Ok(rule
                .nodes
                .iter()
                .map(|&p| v[0] + (v[1] - v[0]) * p.x + (v[2] - v[0]) * p.y)
                .collect());
        }
        exactness += 1;
    }
}

/// Straight-edge boundary integrals sum_k int_{E_k} w . n_k ds over the
/// polygon edges that lie on the boundary of Q, by Gauss rules exact for
/// the field degree.
fn straight_edge_flux(
    geom: &CutCellGeometry,
    field: &MonoField,
    gauss: &GaussRule1d,
) -> Result<f64, CutError> {
    let poly = &geom.polygon;
    let mut total = 0.0;
    for (i, kind) in geom.edge_kinds.iter().enumerate() {
        if !matches!(kind, PolygonEdgeKind::Boundary | PolygonEdgeKind::BoundaryAndChord) {
            continue;
        }
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        if a.dist(b) == 0.0 {
            continue;
        }
        // Counterclockwise polygon: outward normal is the clockwise
        // rotation of the edge direction.
        let n_out = -(b - a).perp().normalized();
        let mapped = gauss.map_to_segment(a, b)?;
        total += mapped
            .points
            .iter()
            .zip(&mapped.weights)
            .map(|(&p, &w)| w * field.eval(p).dot(n_out))
            .sum::<f64>();
    }
    Ok(total)
}

/// Fitted surface rule for integrals over the interface piece I within the
/// cell: weights v_i at the fixed points x_i such that
/// sum_i w(x_i) . n_h(x_i) v_i  ~  int_I w . n ds for vector fields w.
#[derive(Debug, Clone)]
pub struct SurfaceRule {
    pub points: Vec<Vec2>,
    /// Unit outward normals n_h(x_i) at the points.
    pub normals: Vec<Vec2>,
    pub weights: Vec<f64>,
    /// Relative least-squares residual of the fitting stage.
    pub residual: f64,
    pub phi_evals: u64,
}

/// Stage one of the moment fitting: surface weights from the divergence
/// theorem applied to the divergence-free basis, with right-hand sides
/// reduced to straight-edge Gauss integrals.
pub fn moment_fit_surface_weights(
    geom: &CutCellGeometry,
    ctx: &CutContext,
    d: usize,
) -> Result<SurfaceRule, CutError> {
    let cell = geom.cell;
    let s = ctx.inside.orientation();
    let points = fitting_points(ctx, cell, d)?;
    let fields = divergence_free_basis(d);
    let gauss = GaussRule1d::with_exactness(d + 2)?;
    let mut phi_evals = 0u64;

    // Outward interface normal at the fixed points: s * grad phi / |grad phi|.
    let mut normals = Vec::with_capacity(points.len());
    for &p in &points {
        phi_evals += 1;
        let g = ctx.field.gradient_in_cell(cell, p);
        let norm = g.norm();
        if norm < super::GRAD_FLOOR {
            return Err(CutError::DegenerateCut { cell, grad: norm });
        }
        normals.push(g * (s / norm));
    }

    let rows = fields.len();
    let cols = points.len();
    let a = Mat::from_fn(rows, cols, |j, i| fields[j].eval(points[i]).dot(normals[i]));
    let mut rhs = Vec::with_capacity(rows);
    for field in &fields {
        rhs.push(-straight_edge_flux(geom, field, &gauss)?);
    }

    // The row space is allowed to be rank deficient here (for nearly
    // straight interfaces the normal barely varies and many flux rows
    // coincide); the minimum-norm solution stays consistent because the
    // right-hand sides share the same dependencies.
    let (weights, _rank, residual) = min_norm_least_squares(&a, &rhs);

    Ok(SurfaceRule {
        points,
        normals,
        weights,
        residual,
        phi_evals,
    })
}

/// Report of the full moment-fitting construction for one cell.
#[derive(Debug, Clone)]
pub struct MomentFitReport {
    pub surface: SurfaceRule,
    pub quadrature: CutQuadrature,
    /// Relative least-squares residual of the area stage.
    pub residual: f64,
}

/// Stage two: area weights matching the moments of the scalar basis, with
/// 2 int_Q g dx = int_I h . n ds + sum_k int_{E_k} h . n_k ds and the
/// interface part evaluated by the stage-one surface rule.
pub fn moment_fit_area_weights(
    geom: &CutCellGeometry,
    ctx: &CutContext,
    d: usize,
) -> Result<MomentFitReport, CutError> {
    let surface = moment_fit_surface_weights(geom, ctx, d)?;
    let basis = scalar_basis(d);
    let h_fields = area_moment_fields(d);
    let gauss = GaussRule1d::with_exactness(d + 3)?;

    let rows = basis.len();
    let cols = surface.points.len();
    let a = Mat::from_fn(rows, cols, |j, i| basis[j].eval(surface.points[i]));
    let mut rhs = Vec::with_capacity(rows);
    for h in &h_fields {
        let interface_part: f64 = surface
            .points
            .iter()
            .zip(&surface.normals)
            .zip(&surface.weights)
            .map(|((&p, &n), &v)| h.eval(p).dot(n) * v)
            .sum();
        let edge_part = straight_edge_flux(geom, h, &gauss)?;
        rhs.push(0.5 * (interface_part + edge_part));
    }

    let (weights, rank, residual) = min_norm_least_squares(&a, &rhs);
    if rank < rows.min(cols) {
        return Err(CutError::RankDeficient {
            cell: geom.cell,
            rank,
            needed: rows.min(cols),
        });
    }

    let quadrature = CutQuadrature {
        nodes: surface.points.clone(),
        weights,
        method: MethodTag::Mf,
        order: ctx.m,
        phi_evals: surface.phi_evals,
        fallback_components: 0,
    };
    Ok(MomentFitReport {
        surface,
        quadrature,
        residual,
    })
}

/// Minimum-norm least-squares solution of A x = b by SVD with a relative
/// singular-value cutoff; returns (x, effective rank, relative residual).
fn min_norm_least_squares(a: &Mat<f64>, b: &[f64]) -> (Vec<f64>, usize, f64) {
    let (rows, cols) = (a.nrows(), a.ncols());
    let svd = a.thin_svd().expect("svd of a small finite matrix converges");
    let u = svd.U();
    let v = svd.V();
    let s = svd.S().column_vector();
    let k = rows.min(cols);
    let smax = (0..k).map(|i| s[i]).fold(0.0f64, f64::max);
    let cutoff = smax * RANK_TOL;

    let mut rank = 0;
    let mut x = vec![0.0; cols];
    for i in 0..k {
        if s[i] > cutoff {
            rank += 1;
            let ub: f64 = (0..rows).map(|r| u[(r, i)] * b[r]).sum();
            let coef = ub / s[i];
            for c in 0..cols {
                x[c] += coef * v[(c, i)];
            }
        }
    }

    let mut res_sq = 0.0;
    let mut b_sq = 0.0;
    for r in 0..rows {
        let ax: f64 = (0..cols).map(|c| a[(r, c)] * x[c]).sum();
        res_sq += (ax - b[r]).powi(2);
        b_sq += b[r].powi(2);
    }
    let residual = (res_sq / b_sq.max(1e-300)).sqrt();
    (x, rank, residual)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divergence_free_basis_is_divergence_free_on_coefficients() {
        for d in 1..=4 {
            for f in divergence_free_basis(d) {
                let (tx, ty) = f.divergence_terms();
                // The two divergence terms must cancel exactly: same
                // exponents, opposite coefficients (or both zero).
                let zero = tx.c == 0.0 && ty.c == 0.0;
                let cancel = tx.c == -ty.c && (tx.c == 0.0 || (tx.a == ty.a && tx.b == ty.b));
                assert!(zero || cancel, "field {f:?} has nonzero divergence");
            }
        }
    }

    #[test]
    fn quadratic_divergence_free_count_matches_classical_set() {
        // Stream functions of degree <= 3 give the classical nine fields.
        assert_eq!(divergence_free_basis(2).len(), 9);
        assert_eq!(scalar_basis(2).len(), 6);
    }

    #[test]
    fn area_moment_fields_satisfy_div_h_eq_2g() {
        for d in 1..=4 {
            let gs = scalar_basis(d);
            let hs = area_moment_fields(d);
            for (g, h) in gs.iter().zip(&hs) {
                let (tx, ty) = h.divergence_terms();
                assert_eq!(tx.a, g.a);
                assert_eq!(tx.b, g.b);
                assert_eq!(ty.a, g.a);
                assert_eq!(ty.b, g.b);
                let total = tx.c + ty.c;
                assert!((total - 2.0 * g.c).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn min_norm_solution_of_underdetermined_system() {
        // x + y = 2 has minimum-norm solution (1, 1).
        let a = Mat::from_fn(1, 2, |_, _| 1.0);
        let (x, rank, res) = min_norm_least_squares(&a, &[2.0]);
        assert_eq!(rank, 1);
        assert!(res < 1e-14);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }
}
