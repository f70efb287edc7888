//! Quadrature over the cut part of a cell, Q = K ∩ {inside}.
//!
//! Every cut cell is preprocessed into a [`CutCellGeometry`]: the polygon
//! spanned by the edge intersection points and the inside vertices, its fan
//! triangulation, and one chord component per curvilinear remainder piece.
//! Four interchangeable integration strategies then handle the remainder
//! (or, for moment fitting, the whole cut region). Each strategy implements
//! [`CutIntegrator`] and is registered by name; callers select one at
//! runtime from configuration.

mod dump;
mod localparam;
mod momentfit;
mod montecarlo;
mod subtri;

pub use dump::{dump_cut_cell_svg, dump_cut_cell_text};
pub use localparam::{local_param_quadrature, LocalParametrization};
pub use momentfit::{
    moment_fit_area_weights, moment_fit_surface_weights, MomentFitting, SurfaceRule,
};
pub use montecarlo::{mc_remainder, McEstimate, MonteCarlo};
pub use subtri::{subtriangulate_remainder, SubTriangulation};

use crate::geom::{dist_to_segment, signed_area_x2, Vec2};
use crate::levelset::{LevelSetError, LevelSetField, ROOT_TOL};
use crate::mesh::{perturbed_level_value, CellClassification, CellTag, InsideSign, Mesh};
use crate::quadrature::{QuadratureError, TriangleRule};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Gradient floor below which a cut is considered degenerate.
pub(crate) const GRAD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum CutError {
    #[error("cell {0} is not classified as cut")]
    NotCut(usize),
    #[error("no interface intersection found on the edges of cut cell {0}")]
    NoIntersection(usize),
    #[error("degenerate cut on cell {cell}: |grad phi| = {grad:.3e}")]
    DegenerateCut { cell: usize, grad: f64 },
    #[error("ray root not found on cell {0}: interface leaves the cell unexpectedly")]
    RayRootNotFound(usize),
    #[error("moment-fitting system rank deficient on cell {cell}: rank {rank} < {needed}")]
    RankDeficient { cell: usize, rank: usize, needed: usize },
    #[error("unknown integration method '{0}'; known methods: lp, mf, st, mc")]
    UnknownMethod(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    LevelSet(#[from] LevelSetError),
}

/// Identifier of one of the four cut-cell integration strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodTag {
    Mc,
    St,
    Mf,
    Lp,
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MethodTag::Mc => "MC",
            MethodTag::St => "ST",
            MethodTag::Mf => "MF",
            MethodTag::Lp => "LP",
        };
        f.write_str(s)
    }
}

impl FromStr for MethodTag {
    type Err = CutError;

    fn from_str(s: &str) -> Result<Self, CutError> {
        match s.to_ascii_lowercase().as_str() {
            "mc" | "monte-carlo" | "montecarlo" => Ok(MethodTag::Mc),
            "st" | "sub-triangulation" | "subtriangulation" => Ok(MethodTag::St),
            "mf" | "moment-fitting" | "momentfitting" => Ok(MethodTag::Mf),
            "lp" | "local-parametrization" | "localparametrization" => Ok(MethodTag::Lp),
            other => Err(CutError::UnknownMethod(other.to_string())),
        }
    }
}

/// Everything a strategy needs besides the per-cell geometry.
#[derive(Clone, Copy)]
pub struct CutContext<'a> {
    pub mesh: &'a Mesh,
    pub field: &'a LevelSetField,
    /// Level value c0 of the interface {phi = c0}.
    pub level: f64,
    pub inside: InsideSign,
    /// Local accuracy target: per-cell error O(h^m).
    pub m: usize,
    /// Exactness of the triangle rule used on the polygon part (and on
    /// interior cells by the domain driver).
    pub poly_exactness: usize,
    /// Base seed for the Monte-Carlo strategy; the per-cell stream is
    /// seed XOR cell id, so results do not depend on processing order.
    pub seed: u64,
}

impl<'a> CutContext<'a> {
    pub fn new(mesh: &'a Mesh, field: &'a LevelSetField, level: f64, inside: InsideSign, m: usize) -> Self {
        CutContext {
            mesh,
            field,
            level,
            inside,
            m,
            poly_exactness: m.max(2),
            seed: 0,
        }
    }

    pub fn with_poly_exactness(mut self, deg: usize) -> Self {
        self.poly_exactness = deg;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// +1 when the point is on the inside of the level, -1 otherwise.
    #[inline]
    pub fn side(&self, cell: usize, x: Vec2, phi_evals: &mut u64) -> f64 {
        *phi_evals += 1;
        let s = self.inside.orientation();
        if s * (self.field.eval_in_cell(cell, x) - self.level) < 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// One simply-connected piece of the curvilinear remainder, bounded by a
/// straight chord of the polygon and the interface arc.
#[derive(Debug, Clone)]
pub struct ChordComponent {
    pub p1: Vec2,
    pub p2: Vec2,
    /// Unit normal of the chord, oriented toward the interface arc.
    pub normal: Vec2,
    /// Sampled maximum deviation of the arc from the chord.
    pub dev: f64,
    /// +1 when the region between chord and arc lies inside, -1 otherwise.
    pub sign: f64,
    /// False when the midpoint normal search failed to locate the arc.
    pub graph_ok: bool,
    /// True when the arc coincides with the chord to root tolerance.
    pub empty: bool,
}

impl ChordComponent {
    pub fn chord_length(&self) -> f64 {
        self.p1.dist(self.p2)
    }

    pub fn midpoint(&self) -> Vec2 {
        (self.p1 + self.p2) * 0.5
    }
}

/// Role of one polygon edge in the boundary of Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolygonEdgeKind {
    /// A straight piece of the boundary of Q lying on a cell edge.
    Boundary,
    /// A chord replaced by the interface arc; carries a remainder component.
    Chord,
    /// Both at once: two interface points on one cell edge with the inside
    /// between them, so Q touches the cell edge there while the interface
    /// arc bows into the cell (a cap).
    BoundaryAndChord,
}

/// Preprocessed geometry of one cut cell at one level.
#[derive(Debug, Clone)]
pub struct CutCellGeometry {
    pub cell: usize,
    pub level: f64,
    pub inside: InsideSign,
    /// Interface points on the cell edges.
    pub intersections: Vec<Vec2>,
    /// Counterclockwise polygon: convex hull of the intersection points and
    /// the inside vertices of the cell.
    pub polygon: Vec<Vec2>,
    /// Role of the polygon edge from vertex i to i+1 (a two-point polygon
    /// has a single edge).
    pub edge_kinds: Vec<PolygonEdgeKind>,
    pub components: Vec<ChordComponent>,
    /// Field evaluations spent building the geometry.
    pub phi_evals: u64,
}

impl CutCellGeometry {
    /// Fan triangulation of the polygon from its first vertex.
    pub fn fan(&self) -> impl Iterator<Item = [Vec2; 3]> + '_ {
        let p = &self.polygon;
        (1..p.len().saturating_sub(1)).map(move |i| [p[0], p[i], p[i + 1]])
    }

    pub fn polygon_area(&self) -> f64 {
        self.fan()
            .map(|t| 0.5 * signed_area_x2(t[0], t[1], t[2]))
            .sum()
    }

    /// Point-in-polygon test for the convex counterclockwise polygon.
    pub fn polygon_contains(&self, x: Vec2) -> bool {
        let p = &self.polygon;
        if p.len() < 3 {
            return false;
        }
        for i in 0..p.len() {
            let j = (i + 1) % p.len();
            if signed_area_x2(p[i], p[j], x) < -1e-14 {
                return false;
            }
        }
        true
    }
}

/// Physical-space nodes and signed weights for one cut cell.
#[derive(Debug, Clone)]
pub struct CutQuadrature {
    pub nodes: Vec<Vec2>,
    pub weights: Vec<f64>,
    pub method: MethodTag,
    /// Target order m the rule was built for.
    pub order: usize,
    /// Field evaluations spent building the rule.
    pub phi_evals: u64,
    /// Components where the local parametrization fell back to
    /// sub-triangulation.
    pub fallback_components: u32,
}

impl CutQuadrature {
    /// Integrand evaluations a caller will perform: one per node.
    pub fn eval_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn apply(&self, mut f: impl FnMut(Vec2) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }
}

/// Result of integrating one integrand over one cut cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct CutIntegral {
    pub value: f64,
    pub f_evals: u64,
    pub phi_evals: u64,
    /// Local-parametrization components that fell back to sub-triangulation.
    pub fallbacks: u32,
    /// Monte-Carlo components that hit the sample budget before reaching the
    /// variance threshold.
    pub unconverged: u32,
    /// Aggregated Monte-Carlo standard error (zero for deterministic methods).
    pub std_error: f64,
}

/// A cut-cell integration strategy. Deterministic strategies expose a
/// reusable node/weight rule; Monte-Carlo integrates each integrand
/// adaptively and returns `None` from [`CutIntegrator::quadrature`].
pub trait CutIntegrator: Send + Sync {
    /// Registry name, e.g. "lp".
    fn name(&self) -> &'static str;

    fn tag(&self) -> MethodTag;

    /// Node/weight rule for integrating over Q, when the strategy can
    /// precompute one independently of the integrand.
    fn quadrature(
        &self,
        geom: &CutCellGeometry,
        ctx: &CutContext,
    ) -> Result<Option<CutQuadrature>, CutError>;

    /// Integrate a single integrand over Q = K ∩ {inside}.
    fn integrate(
        &self,
        geom: &CutCellGeometry,
        ctx: &CutContext,
        f: &mut dyn FnMut(Vec2) -> f64,
    ) -> Result<CutIntegral, CutError> {
        let rule = self
            .quadrature(geom, ctx)?
            .expect("strategies without a precomputed rule must override integrate");
        let mut f_evals = 0u64;
        let value = rule.apply(|x| {
            f_evals += 1;
            f(x)
        });
        Ok(CutIntegral {
            value,
            f_evals,
            phi_evals: rule.phi_evals,
            fallbacks: rule.fallback_components,
            ..Default::default()
        })
    }
}

/// All registered strategies.
pub fn registry() -> &'static [&'static dyn CutIntegrator] {
    static METHODS: [&dyn CutIntegrator; 4] = [
        &LocalParametrization,
        &MomentFitting,
        &SubTriangulation,
        &MonteCarlo,
    ];
    &METHODS
}

/// Look up a strategy by name (case-insensitive; long aliases accepted).
pub fn integrator(name: &str) -> Result<&'static dyn CutIntegrator, CutError> {
    let tag = MethodTag::from_str(name)?;
    Ok(by_tag(tag))
}

pub fn by_tag(tag: MethodTag) -> &'static dyn CutIntegrator {
    registry()
        .iter()
        .copied()
        .find(|m| m.tag() == tag)
        .expect("all tags are registered")
}

/// Integrate `f` over Q with the selected strategy: polygon part plus
/// remainder for MC/ST/LP, fitted rule over the whole of Q for MF.
pub fn integrate_cut_cell(
    method: &dyn CutIntegrator,
    geom: &CutCellGeometry,
    ctx: &CutContext,
    f: &mut dyn FnMut(Vec2) -> f64,
) -> Result<CutIntegral, CutError> {
    method.integrate(geom, ctx, f)
}

/// Build the cut geometry of one cell: edge roots, the polygon, and one
/// chord component per remainder piece.
pub fn build_cut_geometry(
    ctx: &CutContext,
    class: &CellClassification,
    cell: usize,
) -> Result<CutCellGeometry, CutError> {
    if class.tag(cell) != CellTag::Cut {
        return Err(CutError::NotCut(cell));
    }
    build_cut_geometry_unchecked(ctx, cell)
}

/// As [`build_cut_geometry`] but trusting the caller that the cell is cut.
pub fn build_cut_geometry_unchecked(
    ctx: &CutContext,
    cell: usize,
) -> Result<CutCellGeometry, CutError> {
    let mesh = ctx.mesh;
    let field = ctx.field;
    let level = ctx.level;
    let s = ctx.inside.orientation();
    let h = mesh.h;
    let v = mesh.cell_vertices(cell);
    let diam = mesh.cell_diameter(cell);
    let mut phi_evals = 0u64;

    let value_at = |x: Vec2, n: &mut u64| -> f64 {
        *n += 1;
        field.eval_in_cell(cell, x) - level
    };

    // Perturbed vertex values decide inside/outside deterministically.
    let vertex_vals = [
        perturbed_level_value(value_at(v[0], &mut phi_evals), h),
        perturbed_level_value(value_at(v[1], &mut phi_evals), h),
        perturbed_level_value(value_at(v[2], &mut phi_evals), h),
    ];

    // Boundary walk: inside vertices and edge roots in perimeter order.
    #[derive(Clone, Copy)]
    struct RingPoint {
        pos: Vec2,
        edge: usize,
        t: f64,
        is_root: bool,
    }
    let n_sub = field.degree() + 1;
    let mut ring: Vec<RingPoint> = Vec::new();
    for k in 0..3 {
        let (a, b) = (v[k], v[(k + 1) % 3]);
        if s * vertex_vals[k] < 0.0 {
            ring.push(RingPoint { pos: a, edge: k, t: 0.0, is_root: false });
        }
        // Scan sub-intervals for sign changes; perturbed values at the
        // endpoints keep roots away from vertices.
        let mut t_prev = 0.0;
        let mut f_prev = vertex_vals[k];
        for i in 1..=n_sub {
            let t = i as f64 / n_sub as f64;
            let f_val = if i == n_sub {
                vertex_vals[(k + 1) % 3]
            } else {
                value_at(a + (b - a) * t, &mut phi_evals)
            };
            if f_prev * f_val < 0.0 {
                let pa = a + (b - a) * t_prev;
                let pb = a + (b - a) * t;
                let root = field
                    .root_on_segment_in_cell(cell, pa, pb, level, ROOT_TOL, &mut phi_evals)?;
                let t_root = t_prev + (t - t_prev) * ((root - pa).norm() / (pb - pa).norm());
                ring.push(RingPoint { pos: root, edge: k, t: t_root, is_root: true });
            }
            t_prev = t;
            f_prev = f_val;
        }
        // Keep points of this edge ordered along it.
        let start = ring
            .iter()
            .rposition(|p| p.edge != k)
            .map_or(0, |i| i + 1);
        ring[start..].sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
    }

    let intersections: Vec<Vec2> = ring.iter().filter(|p| p.is_root).map(|p| p.pos).collect();
    if intersections.is_empty() {
        return Err(CutError::NoIntersection(cell));
    }

    // Gradient floor at the interface points.
    for &p in &intersections {
        phi_evals += 1;
        let g = field.gradient_in_cell(cell, p).norm();
        if g < GRAD_FLOOR {
            return Err(CutError::DegenerateCut { cell, grad: g });
        }
    }

    // Deduplicate coincident ring points (e.g. a root landing on a scan
    // sample shared by two sub-intervals).
    let mut dedup: Vec<RingPoint> = Vec::with_capacity(ring.len());
    for p in ring {
        if dedup
            .iter()
            .all(|q| q.pos.dist(p.pos) > 1e-13 * diam.max(1.0))
        {
            dedup.push(p);
        }
    }
    let ring = dedup;
    let polygon: Vec<Vec2> = ring.iter().map(|p| p.pos).collect();

    // Classify polygon edges: a segment on a cell edge whose midpoint is
    // inside belongs to the boundary of Q; everything else is a chord
    // carrying a remainder component. Roots lie on one cell edge, vertices
    // on two (a vertex at edge k is also the endpoint of edge k+2).
    let edges_of = |p: &RingPoint| -> [Option<usize>; 2] {
        if p.is_root {
            [Some(p.edge), None]
        } else {
            [Some(p.edge), Some((p.edge + 2) % 3)]
        }
    };
    let on_same_cell_edge = |a: &RingPoint, b: &RingPoint| -> bool {
        edges_of(a)
            .iter()
            .flatten()
            .any(|ea| edges_of(b).iter().flatten().any(|eb| ea == eb))
    };
    let mut components = Vec::new();
    let mut edge_kinds = Vec::new();
    let np = ring.len();
    let n_poly_edges = if np == 2 { 1 } else { np };
    for i in 0..n_poly_edges {
        let j = (i + 1) % np;
        let (a, b) = (&ring[i], &ring[j]);
        if a.pos.dist(b.pos) < 1e-13 * diam.max(1.0) {
            edge_kinds.push(PolygonEdgeKind::Boundary);
            continue;
        }
        let kind = if !on_same_cell_edge(a, b) {
            PolygonEdgeKind::Chord
        } else if a.is_root && b.is_root {
            // Two interface points on one cell edge: the interface arc
            // between them bows into the cell, so this is always a chord;
            // it is additionally part of the boundary of Q when the inside
            // lies between the two roots (cap configuration).
            let mid = (a.pos + b.pos) * 0.5;
            phi_evals += 1;
            let val = perturbed_level_value(field.eval_in_cell(cell, mid) - level, h);
            if s * val < 0.0 {
                PolygonEdgeKind::BoundaryAndChord
            } else {
                PolygonEdgeKind::Chord
            }
        } else {
            PolygonEdgeKind::Boundary
        };
        if kind != PolygonEdgeKind::Boundary {
            if !(a.is_root && b.is_root) {
                // A chord must join two interface points; anything else is a
                // geometry/classification inconsistency.
                return Err(CutError::NoIntersection(cell));
            }
            let comp = build_component(ctx, cell, a.pos, b.pos, diam, &mut phi_evals)?;
            // A cap whose arc probe found nothing inside the cell is a
            // boundary segment with no curvilinear remainder.
            if kind == PolygonEdgeKind::BoundaryAndChord && !comp.graph_ok {
                edge_kinds.push(PolygonEdgeKind::Boundary);
                continue;
            }
            components.push(comp);
        }
        edge_kinds.push(kind);
    }

    Ok(CutCellGeometry {
        cell,
        level,
        inside: ctx.inside,
        intersections,
        polygon,
        edge_kinds,
        components,
        phi_evals,
    })
}

fn build_component(
    ctx: &CutContext,
    cell: usize,
    p1: Vec2,
    p2: Vec2,
    diam: f64,
    phi_evals: &mut u64,
) -> Result<ChordComponent, CutError> {
    let mut n = (p2 - p1).perp().normalized();
    let s = ctx.inside.orientation();

    // Probe the arc from three chord stations to orient the normal and
    // estimate the deviation.
    let mut best: Option<(f64, f64)> = None; // (alpha, |alpha|) at the midpoint station
    let mut dev: f64 = 0.0;
    let mut found_any = false;
    for (idx, t) in [0.5, 0.25, 0.75].iter().enumerate() {
        let q = p1 + (p2 - p1) * *t;
        if let Some(alpha) =
            normal_interface_offset(ctx, cell, q, n, diam, 24, phi_evals)
        {
            found_any = true;
            dev = dev.max(alpha.abs());
            if idx == 0 {
                best = Some((alpha, alpha.abs()));
            }
        }
    }
    let graph_ok = found_any;
    let empty = graph_ok && dev < 1e-11 * diam.max(1.0);

    // Orient the normal toward the arc using the midpoint probe when
    // available, otherwise the largest probe.
    if let Some((alpha, _)) = best {
        if alpha < 0.0 {
            n = -n;
        }
    }

    // Side of the region between chord and arc.
    let sign = if empty || !graph_ok {
        1.0
    } else {
        let probe = (p1 + p2) * 0.5 + n * (0.5 * dev);
        *phi_evals += 1;
        let val = ctx.field.eval_in_cell(cell, probe) - ctx.level;
        if s * val < 0.0 {
            1.0
        } else {
            -1.0
        }
    };

    Ok(ChordComponent {
        p1,
        p2,
        normal: n,
        dev,
        sign,
        graph_ok,
        empty,
    })
}

/// Signed offset alpha with phi(q + alpha n) = level, searching both normal
/// directions and returning the in-cell root closest to the chord. `None`
/// when no sign change is bracketed within the search range; roots whose
/// location falls outside the (slightly fattened) cell are rejected so the
/// remainder never leaks across cell boundaries.
pub(crate) fn normal_interface_offset(
    ctx: &CutContext,
    cell: usize,
    q: Vec2,
    n: Vec2,
    t_max: f64,
    steps: usize,
    phi_evals: &mut u64,
) -> Option<f64> {
    let field = ctx.field;
    let level = ctx.level;
    let v = ctx.mesh.cell_vertices(cell);
    let in_cell = |x: Vec2| {
        crate::geom::barycentric(v[0], v[1], v[2], x)
            .iter()
            .all(|&l| l >= -1e-9)
    };
    let mut best: Option<f64> = None;
    for dir in [1.0f64, -1.0] {
        *phi_evals += 1;
        let mut prev = field.eval_in_cell(cell, q) - level;
        let mut t_prev = 0.0;
        for i in 1..=steps {
            let t = t_max * i as f64 / steps as f64;
            let x = q + n * (dir * t);
            *phi_evals += 1;
            let val = field.eval_in_cell(cell, x) - level;
            if prev == 0.0 {
                best = Some(0.0);
                break;
            }
            if prev * val < 0.0 {
                let a = q + n * (dir * t_prev);
                let b = q + n * (dir * t);
                if let Ok(root) =
                    field.root_on_segment_in_cell(cell, a, b, level, ROOT_TOL, phi_evals)
                {
                    if in_cell(root) {
                        let alpha = dir * (t_prev + (root - a).norm());
                        if best.map_or(true, |b: f64| alpha.abs() < b.abs()) {
                            best = Some(alpha);
                        }
                    }
                }
                break;
            }
            prev = val;
            t_prev = t;
        }
    }
    best
}

/// Quadrature nodes and weights over the polygon part Q_K: the fan
/// triangulation mapped with a rule of the context's polygon exactness.
pub fn polygon_quadrature(
    geom: &CutCellGeometry,
    ctx: &CutContext,
) -> Result<Vec<(Vec2, f64)>, CutError> {
    let rule = TriangleRule::with_exactness(ctx.poly_exactness.clamp(1, 10))?;
    let mut out = Vec::new();
    for tri in geom.fan() {
        if signed_area_x2(tri[0], tri[1], tri[2]).abs() < 1e-30 {
            continue;
        }
        let mapped = rule.map_to_triangle(tri)?;
        out.extend(mapped.points.into_iter().zip(mapped.weights));
    }
    Ok(out)
}

/// Exact-to-rule-degree integration of `f` over the polygon Q_K.
pub fn integrate_polygon(
    geom: &CutCellGeometry,
    ctx: &CutContext,
    f: &mut dyn FnMut(Vec2) -> f64,
    f_evals: &mut u64,
) -> Result<f64, CutError> {
    let nodes = polygon_quadrature(geom, ctx)?;
    *f_evals += nodes.len() as u64;
    Ok(nodes.iter().map(|&(p, w)| w * f(p)).sum())
}

/// Aggregate counters for integrating over a whole classified domain.
#[derive(Debug, Clone, Copy, Default)]
pub struct DomainIntegral {
    pub value: f64,
    pub f_evals: u64,
    pub f_evals_cut: u64,
    pub phi_evals: u64,
    pub fallbacks: u32,
    pub unconverged: u32,
    pub std_error_sq: f64,
}

impl DomainIntegral {
    pub fn std_error(&self) -> f64 {
        self.std_error_sq.sqrt()
    }

    pub fn absorb(&mut self, c: &CutIntegral, scale: f64) {
        self.value += scale * c.value;
        self.f_evals += c.f_evals;
        self.f_evals_cut += c.f_evals;
        self.phi_evals += c.phi_evals;
        self.fallbacks += c.fallbacks;
        self.unconverged += c.unconverged;
        self.std_error_sq += c.std_error * c.std_error;
    }
}

/// Integrate `f` over the whole inside region: interior cells by the mapped
/// triangle rule of the context's polygon exactness, cut cells by the
/// selected strategy.
pub fn integrate_domain(
    method: &dyn CutIntegrator,
    ctx: &CutContext,
    class: &CellClassification,
    f: &mut dyn FnMut(Vec2) -> f64,
) -> Result<DomainIntegral, CutError> {
    let rule = TriangleRule::with_exactness(ctx.poly_exactness.clamp(1, 10))?;
    let mut out = DomainIntegral::default();
    for cell in 0..ctx.mesh.n_cells() {
        match class.tag(cell) {
            CellTag::Exterior => {}
            CellTag::Interior => {
                let mapped = rule.map_to_triangle(ctx.mesh.cell_vertices(cell))?;
                out.f_evals += mapped.len() as u64;
                out.value += mapped.integrate(&mut *f);
            }
            CellTag::Cut => {
                let geom = build_cut_geometry(ctx, class, cell)?;
                out.phi_evals += geom.phi_evals;
                let c = method.integrate(&geom, ctx, f)?;
                out.absorb(&c, 1.0);
            }
        }
    }
    Ok(out)
}

/// Signed membership in the remainder piece owned by component `comp_idx`:
/// `Some(+1)` when the point is inside the level set but outside the
/// polygon, `Some(-1)` for the reverse, `None` when the point is not in
/// this component's remainder (outside the cell, on the agreeing side of
/// both, or owned by a closer component).
pub(crate) fn remainder_sign(
    geom: &CutCellGeometry,
    ctx: &CutContext,
    comp_idx: usize,
    x: Vec2,
    phi_evals: &mut u64,
) -> Option<f64> {
    let v = ctx.mesh.cell_vertices(geom.cell);
    let l = crate::geom::barycentric(v[0], v[1], v[2], x);
    if l.iter().any(|&li| li < -1e-12) {
        return None;
    }
    *phi_evals += 1;
    let s = ctx.inside.orientation();
    let inside_level = s * (ctx.field.eval_in_cell(geom.cell, x) - ctx.level) < 0.0;
    let inside_poly = geom.polygon_contains(x);
    if inside_level == inside_poly {
        return None;
    }
    // Ownership among multiple live components: nearest chord wins.
    let live: Vec<usize> = (0..geom.components.len())
        .filter(|&i| !geom.components[i].empty)
        .collect();
    if live.len() > 1 {
        let mine = dist_to_segment(x, geom.components[comp_idx].p1, geom.components[comp_idx].p2);
        for &other in &live {
            if other != comp_idx {
                let d = dist_to_segment(x, geom.components[other].p1, geom.components[other].p2);
                if d < mine {
                    return None;
                }
            }
        }
    }
    Some(if inside_level { 1.0 } else { -1.0 })
}
