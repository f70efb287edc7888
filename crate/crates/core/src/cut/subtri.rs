//! Sub-triangulation of the curvilinear remainder: a fan of rays from a
//! basis point on the polygon boundary hits the interface in points that
//! define a local piecewise-linear interface of resolution h' = h^{m'};
//! the region between chord and polyline is triangulated and integrated
//! with a mapped triangle rule, signed by the side of each sub-triangle.

use super::{
    polygon_quadrature, ChordComponent, CutCellGeometry, CutContext, CutError, CutQuadrature,
    CutIntegrator, MethodTag,
};
use crate::geom::{dist_to_segment, signed_area_x2, Vec2};
use crate::levelset::ROOT_TOL;
use crate::quadrature::TriangleRule;

/// Piecewise-linear resolution exponent from the target order: m' = m - 2.
pub fn resolution_from_order(m: usize) -> usize {
    m.saturating_sub(2).max(1)
}

pub struct SubTriangulation;

impl CutIntegrator for SubTriangulation {
    fn name(&self) -> &'static str {
        "st"
    }

    fn tag(&self) -> MethodTag {
        MethodTag::St
    }

    fn quadrature(
        &self,
        geom: &CutCellGeometry,
        ctx: &CutContext,
    ) -> Result<Option<CutQuadrature>, CutError> {
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        let mut phi_evals = 0u64;
        for comp in &geom.components {
            if comp.empty {
                continue;
            }
            let part = component_remainder_rule(
                geom,
                ctx,
                comp,
                resolution_from_order(ctx.m),
                &mut phi_evals,
            )?;
            for (p, w) in part {
                nodes.push(p);
                weights.push(w);
            }
        }
        for (p, w) in polygon_quadrature(geom, ctx)? {
            nodes.push(p);
            weights.push(w);
        }
        Ok(Some(CutQuadrature {
            nodes,
            weights,
            method: MethodTag::St,
            order: ctx.m,
            phi_evals,
            fallback_components: 0,
        }))
    }
}

/// Integrate `f` over the remainder pieces only (the polygon part is
/// handled separately). Returns (value, f_evals, phi_evals).
pub fn subtriangulate_remainder(
    geom: &CutCellGeometry,
    ctx: &CutContext,
    f: &mut dyn FnMut(Vec2) -> f64,
    m_prime: usize,
) -> Result<(f64, u64, u64), CutError> {
    let mut value = 0.0;
    let mut f_evals = 0u64;
    let mut phi_evals = 0u64;
    for comp in &geom.components {
        if comp.empty {
            continue;
        }
        let part = component_remainder_rule(geom, ctx, comp, m_prime, &mut phi_evals)?;
        f_evals += part.len() as u64;
        value += part.iter().map(|&(p, w)| w * f(p)).sum::<f64>();
    }
    Ok((value, f_evals, phi_evals))
}

/// Signed node/weight rule for one remainder component.
///
/// The interface points are found as ray intersections from the basis
/// point (the polygon vertex farthest from the chord, or the offset chord
/// midpoint when the polygon degenerates to the chord). The ray count
/// n = max(2, ceil(chord / h^m')) resolves the interface to h' = O(h^m').
pub fn component_remainder_rule(
    geom: &CutCellGeometry,
    ctx: &CutContext,
    comp: &ChordComponent,
    m_prime: usize,
    phi_evals: &mut u64,
) -> Result<Vec<(Vec2, f64)>, CutError> {
    let cell = geom.cell;
    let diam = ctx.mesh.cell_diameter(cell);
    let chord_len = comp.chord_length();
    let h_prime = ctx.mesh.h.powi(m_prime as i32);
    let n_rays = ((chord_len / h_prime).ceil() as usize).clamp(2, 2_000_000);

    // Basis point: polygon vertex farthest from the chord.
    let mut basis = comp.midpoint() + comp.normal * (0.5 * comp.dev.max(1e-6 * diam));
    let mut best_dist = 0.0;
    for &p in &geom.polygon {
        let d = dist_to_segment(p, comp.p1, comp.p2);
        if d > best_dist {
            best_dist = d;
            basis = p;
        }
    }
    if best_dist < 1e-9 * diam {
        // Degenerate polygon: fall back to the offset midpoint inside Q.
        basis = comp.midpoint() + comp.normal * (0.5 * comp.dev.max(1e-6 * diam));
    }

    // Uniform ray fan between the directions basis -> p1 and basis -> p2.
    let th1 = (comp.p1 - basis).y.atan2((comp.p1 - basis).x);
    let th2 = (comp.p2 - basis).y.atan2((comp.p2 - basis).x);
    let mut dth = th2 - th1;
    while dth > std::f64::consts::PI {
        dth -= 2.0 * std::f64::consts::PI;
    }
    while dth < -std::f64::consts::PI {
        dth += 2.0 * std::f64::consts::PI;
    }

    let mut polyline = Vec::with_capacity(n_rays + 2);
    polyline.push(comp.p1);
    for k in 1..=n_rays {
        let th = th1 + dth * (k as f64 / (n_rays + 1) as f64);
        let dir = Vec2::new(th.cos(), th.sin());
        let hit = ray_interface_hit(ctx, cell, basis, dir, diam, phi_evals)
            .ok_or(CutError::RayRootNotFound(cell))?;
        polyline.push(hit);
    }
    polyline.push(comp.p2);

    // Triangulate the region between chord and polyline by a fan from p1
    // and sign each sub-triangle by the side of its centroid.
    let rule = TriangleRule::with_exactness(ctx.m.clamp(1, 10))?;
    let mut out = Vec::new();
    for i in 1..polyline.len() - 1 {
        let tri = [comp.p1, polyline[i], polyline[i + 1]];
        let area2 = signed_area_x2(tri[0], tri[1], tri[2]);
        if area2.abs() < 1e-30 {
            continue;
        }
        let centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
        let sigma = ctx.side(cell, centroid, phi_evals);
        let mapped = rule.map_to_triangle(if area2 > 0.0 {
            tri
        } else {
            [tri[0], tri[2], tri[1]]
        })?;
        for (p, w) in mapped.points.into_iter().zip(mapped.weights) {
            out.push((p, sigma * w));
        }
    }
    Ok(out)
}

/// First interface crossing along the ray from `origin` in direction `dir`,
/// marching to the point where the ray leaves the cell.
fn ray_interface_hit(
    ctx: &CutContext,
    cell: usize,
    origin: Vec2,
    dir: Vec2,
    diam: f64,
    phi_evals: &mut u64,
) -> Option<Vec2> {
    let field = ctx.field;
    let level = ctx.level;
    let t_exit = ray_cell_exit(ctx, cell, origin, dir).unwrap_or(diam) * (1.0 + 1e-9);
    let steps = 24usize;
    // Nudge off the origin: the basis point may itself be an interface point.
    let t0 = 1e-9 * diam;
    *phi_evals += 1;
    let mut prev = field.eval_in_cell(cell, origin + dir * t0) - level;
    let mut t_prev = t0;
    for i in 1..=steps {
        let t = t0 + (t_exit - t0) * i as f64 / steps as f64;
        *phi_evals += 1;
        let val = field.eval_in_cell(cell, origin + dir * t) - level;
        if prev * val < 0.0 || val == 0.0 {
            let a = origin + dir * t_prev;
            let b = origin + dir * t;
            let mut n = 0u64;
            let root = field
                .root_on_segment_in_cell(cell, a, b, level, ROOT_TOL, &mut n)
                .ok()?;
            *phi_evals += n;
            return Some(root);
        }
        prev = val;
        t_prev = t;
    }
    None
}

/// Distance along the ray to the cell boundary.
fn ray_cell_exit(ctx: &CutContext, cell: usize, origin: Vec2, dir: Vec2) -> Option<f64> {
    let v = ctx.mesh.cell_vertices(cell);
    let mut t_exit: Option<f64> = None;
    for k in 0..3 {
        let (a, b) = (v[k], v[(k + 1) % 3]);
        let e = b - a;
        let denom = dir.cross(e);
        if denom.abs() < 1e-300 {
            continue;
        }
        let t = (a - origin).cross(e) / denom;
        let s = (a - origin).cross(dir) / denom;
        if t > 1e-12 && (-1e-9..=1.0 + 1e-9).contains(&s) {
            t_exit = Some(t_exit.map_or(t, |cur: f64| cur.max(t)));
        }
    }
    t_exit
}
