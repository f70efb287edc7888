//! Uniform triangulations of a rectangular bulk domain, constant-time point
//! location, and cell classification against a level-set field (single level
//! or narrow band).

use crate::geom::{barycentric, signed_area_x2, Rect, Vec2};
use crate::levelset::LevelSetField;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("mesh size must be positive, got {0}")]
    NonPositiveH(f64),
    #[error("degenerate bulk rectangle")]
    DegenerateBulk,
    #[error("point ({0:.6}, {1:.6}) outside the bulk rectangle")]
    PointOutsideBulk(f64, f64),
}

/// An interior or boundary edge; `cells[1]` is `None` on the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Vertex ids with `v[0] < v[1]`.
    pub v: [usize; 2],
    pub cells: [Option<usize>; 2],
}

/// Uniform triangulation of a rectangle: squares of side <= h, each split
/// along the lower-left to upper-right diagonal.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub bulk: Rect,
    /// Requested mesh size.
    pub h: f64,
    /// Squares per direction.
    pub nx: usize,
    pub ny: usize,
    /// Actual square sides (<= h).
    pub sx: f64,
    pub sy: f64,
    pub vertices: Vec<Vec2>,
    /// Counterclockwise vertex ids per triangle.
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Edge ids per triangle; slot k is the edge between local vertices k and (k+1)%3.
    pub cell_edges: Vec<[usize; 3]>,
}

impl Mesh {
    /// Uniform triangulation with squares of side at most `h`.
    pub fn build_uniform(bulk: Rect, h: f64) -> Result<Mesh, MeshError> {
        if !(h > 0.0) {
            return Err(MeshError::NonPositiveH(h));
        }
        if bulk.is_degenerate() {
            return Err(MeshError::DegenerateBulk);
        }
        // Guard against w/h landing a hair above an integer.
        let count = |w: f64| ((w / h - 1e-9).ceil() as usize).max(1);
        let nx = count(bulk.width());
        let ny = count(bulk.height());
        let sx = bulk.width() / nx as f64;
        let sy = bulk.height() / ny as f64;

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push(Vec2::new(
                    bulk.xmin + i as f64 * sx,
                    bulk.ymin + j as f64 * sy,
                ));
            }
        }

        let vid = |i: usize, j: usize| j * (nx + 1) + i;
        let mut triangles = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (a, b, c, d) = (vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1));
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }

        let mut edge_map: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut cell_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut ids = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let id = *edge_map.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        v: [key.0, key.1],
                        cells: [None, None],
                    });
                    edges.len() - 1
                });
                let slot = if edges[id].cells[0].is_none() { 0 } else { 1 };
                edges[id].cells[slot] = Some(t);
                ids[k] = id;
            }
            cell_edges.push(ids);
        }

        Ok(Mesh {
            bulk,
            h,
            nx,
            ny,
            sx,
            sy,
            vertices,
            triangles,
            edges,
            cell_edges,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Vertex coordinates of a triangle.
    #[inline]
    pub fn cell_vertices(&self, cell: usize) -> [Vec2; 3] {
        let t = self.triangles[cell];
        [self.vertices[t[0]], self.vertices[t[1]], self.vertices[t[2]]]
    }

    pub fn cell_area(&self, cell: usize) -> f64 {
        let v = self.cell_vertices(cell);
        0.5 * signed_area_x2(v[0], v[1], v[2])
    }

    pub fn cell_centroid(&self, cell: usize) -> Vec2 {
        let v = self.cell_vertices(cell);
        (v[0] + v[1] + v[2]) / 3.0
    }

    pub fn cell_diameter(&self, cell: usize) -> f64 {
        let v = self.cell_vertices(cell);
        v[0].dist(v[1]).max(v[1].dist(v[2])).max(v[2].dist(v[0]))
    }

    pub fn cell_inradius(&self, cell: usize) -> f64 {
        let v = self.cell_vertices(cell);
        let (a, b, c) = (v[1].dist(v[2]), v[2].dist(v[0]), v[0].dist(v[1]));
        let s = 0.5 * (a + b + c);
        self.cell_area(cell).abs() / s
    }

    /// Shape-regularity ratio: max diameter over min inscribed-circle diameter.
    pub fn shape_regularity(&self) -> f64 {
        let mut max_diam: f64 = 0.0;
        let mut min_rho = f64::INFINITY;
        for c in 0..self.n_cells() {
            max_diam = max_diam.max(self.cell_diameter(c));
            min_rho = min_rho.min(2.0 * self.cell_inradius(c));
        }
        max_diam / min_rho
    }

    /// Map a reference-triangle point to the physical cell.
    #[inline]
    pub fn ref_to_physical(&self, cell: usize, p: Vec2) -> Vec2 {
        let v = self.cell_vertices(cell);
        v[0] + (v[1] - v[0]) * p.x + (v[2] - v[0]) * p.y
    }

    /// Inverse of the affine cell map.
    #[inline]
    pub fn physical_to_ref(&self, cell: usize, x: Vec2) -> Vec2 {
        let v = self.cell_vertices(cell);
        let l = barycentric(v[0], v[1], v[2], x);
        Vec2::new(l[1], l[2])
    }

    /// Lowest-id triangle containing `x` (closed cells; shared-edge points
    /// resolve to the lowest id). O(1) through the uniform grid.
    pub fn locate_point(&self, x: Vec2) -> Result<usize, MeshError> {
        const TOL: f64 = 1e-12;
        if x.x < self.bulk.xmin - TOL
            || x.x > self.bulk.xmax + TOL
            || x.y < self.bulk.ymin - TOL
            || x.y > self.bulk.ymax + TOL
        {
            return Err(MeshError::PointOutsideBulk(x.x, x.y));
        }
        let u = (x.x - self.bulk.xmin) / self.sx;
        let v = (x.y - self.bulk.ymin) / self.sy;
        let iu = (u.floor() as isize).clamp(0, self.nx as isize - 1) as usize;
        let iv = (v.floor() as isize).clamp(0, self.ny as isize - 1) as usize;

        // Points on grid lines are contained in the neighboring square too;
        // scan candidates in increasing square id so ties go to the lowest.
        let mut cand_i = [iu, usize::MAX];
        let mut cand_j = [iv, usize::MAX];
        if iu > 0 && u - iu as f64 <= TOL {
            cand_i = [iu - 1, iu];
        }
        if iv > 0 && v - iv as f64 <= TOL {
            cand_j = [iv - 1, iv];
        }

        let mut best: Option<usize> = None;
        for &j in cand_j.iter().filter(|&&j| j != usize::MAX) {
            for &i in cand_i.iter().filter(|&&i| i != usize::MAX) {
                let base = 2 * (j * self.nx + i);
                for cell in [base, base + 1] {
                    let v = self.cell_vertices(cell);
                    let l = barycentric(v[0], v[1], v[2], x);
                    if l.iter().all(|&li| li >= -1e-12) && best.map_or(true, |b| cell < b) {
                        best = Some(cell);
                    }
                }
            }
        }
        best.ok_or(MeshError::PointOutsideBulk(x.x, x.y))
    }

    /// Plain-text export: one "x y" line per vertex, then one "v0 v1 v2"
    /// line per triangle.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        for v in &self.vertices {
            out.push_str(&format!("{} {}\n", v.x, v.y));
        }
        for t in &self.triangles {
            out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
        }
        out
    }
}

/// Per-cell tag against one level of the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellTag {
    Interior,
    Exterior,
    Cut,
}

/// Which side of the level counts as inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InsideSign {
    /// Inside is where the field value is below the level.
    #[default]
    Below,
    /// Inside is where the field value is above the level.
    Above,
}

impl InsideSign {
    /// Sign s such that inside means s * (phi - level) < 0.
    #[inline]
    pub fn orientation(self) -> f64 {
        match self {
            InsideSign::Below => 1.0,
            InsideSign::Above => -1.0,
        }
    }
}

/// Tie-breaking perturbation for nodal values sitting on the level:
/// values within 1e-14*h of the level are treated as +1e-14*h.
#[inline]
pub fn perturbed_level_value(value_minus_level: f64, h: f64) -> f64 {
    let tol = 1e-14 * h;
    if value_minus_level.abs() < tol {
        tol
    } else {
        value_minus_level
    }
}

/// Classification of every cell against a single level of the field.
#[derive(Debug, Clone)]
pub struct CellClassification {
    pub level: f64,
    pub inside: InsideSign,
    pub tags: Vec<CellTag>,
    /// Cells intersected by the level (the boundary-intersected set).
    pub cut_cells: Vec<usize>,
    /// Interior edges shared by two boundary-intersected cells.
    pub boundary_faces: Vec<usize>,
}

impl CellClassification {
    pub fn tag(&self, cell: usize) -> CellTag {
        self.tags[cell]
    }

    pub fn count(&self, tag: CellTag) -> usize {
        self.tags.iter().filter(|&&t| t == tag).count()
    }
}

/// Tag every cell of the mesh against `{phi = level}` with the given inside
/// convention. A cell is cut when the signed nodal samples change sign or an
/// edge carries a root; samples are taken at the Lagrange lattice of degree
/// max(q, 3) plus a per-edge scan at q+1 sub-intervals.
pub fn classify(
    mesh: &Mesh,
    field: &LevelSetField,
    level: f64,
    inside: InsideSign,
) -> CellClassification {
    let s = inside.orientation();
    let q = field.degree();
    let sample_degree = q.max(3);
    let lattice = lattice_points(sample_degree);
    let n_sub = q + 1;
    let h = mesh.h;

    let mut tags = Vec::with_capacity(mesh.n_cells());
    let mut cut_cells = Vec::new();
    for cell in 0..mesh.n_cells() {
        let v = mesh.cell_vertices(cell);
        let mut any_in = false;
        let mut any_out = false;
        for &p in &lattice {
            let x = v[0] + (v[1] - v[0]) * p.x + (v[2] - v[0]) * p.y;
            let val = perturbed_level_value(field.eval_in_cell(cell, x) - level, h);
            if s * val < 0.0 {
                any_in = true;
            } else {
                any_out = true;
            }
        }
        let mut cut = any_in && any_out;
        if !cut {
            // A polynomial can cross an edge twice between lattice samples.
            'outer: for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                let mut prev = perturbed_level_value(field.eval_in_cell(cell, a) - level, h);
                for i in 1..=n_sub {
                    let t = i as f64 / n_sub as f64;
                    let x = a + (b - a) * t;
                    let val = perturbed_level_value(field.eval_in_cell(cell, x) - level, h);
                    if prev * val < 0.0 {
                        cut = true;
                        break 'outer;
                    }
                    prev = val;
                }
            }
        }
        let tag = if cut {
            CellTag::Cut
        } else if any_in {
            CellTag::Interior
        } else {
            CellTag::Exterior
        };
        if tag == CellTag::Cut {
            cut_cells.push(cell);
        }
        tags.push(tag);
    }

    let boundary_faces = faces_between_cut_cells(mesh, &tags);
    CellClassification {
        level,
        inside,
        tags,
        cut_cells,
        boundary_faces,
    }
}

/// Interior edges whose two adjacent cells are both cut.
fn faces_between_cut_cells(mesh: &Mesh, tags: &[CellTag]) -> Vec<usize> {
    mesh.edges
        .iter()
        .enumerate()
        .filter_map(|(id, e)| match (e.cells[0], e.cells[1]) {
            (Some(a), Some(b)) if tags[a] == CellTag::Cut && tags[b] == CellTag::Cut => Some(id),
            _ => None,
        })
        .collect()
}

/// Classification of the narrow band {|phi| < d} as the intersection of the
/// half-band classifications {phi < +d} and {phi < -d}.
#[derive(Debug, Clone)]
pub struct BandClassification {
    pub d: f64,
    /// Cells against the level +d, inside below.
    pub upper: CellClassification,
    /// Cells against the level -d, inside below.
    pub lower: CellClassification,
    pub tags: Vec<CellTag>,
    /// Cells cut by either band level.
    pub cut_cells: Vec<usize>,
    /// Interior edges shared by two band-cut cells.
    pub boundary_faces: Vec<usize>,
}

impl BandClassification {
    pub fn build(mesh: &Mesh, field: &LevelSetField, d: f64) -> BandClassification {
        let upper = classify(mesh, field, d, InsideSign::Below);
        let lower = classify(mesh, field, -d, InsideSign::Below);
        let mut tags = Vec::with_capacity(mesh.n_cells());
        let mut cut_cells = Vec::new();
        for cell in 0..mesh.n_cells() {
            // Band = {phi < d} minus {phi < -d}.
            let tag = match (upper.tags[cell], lower.tags[cell]) {
                (CellTag::Exterior, _) => CellTag::Exterior,
                (CellTag::Interior, CellTag::Interior) => CellTag::Exterior,
                (CellTag::Interior, CellTag::Exterior) => CellTag::Interior,
                _ => CellTag::Cut,
            };
            if tag == CellTag::Cut {
                cut_cells.push(cell);
            }
            tags.push(tag);
        }
        let boundary_faces = faces_between_cut_cells(mesh, &tags);
        BandClassification {
            d,
            upper,
            lower,
            tags,
            cut_cells,
            boundary_faces,
        }
    }

    pub fn tag(&self, cell: usize) -> CellTag {
        self.tags[cell]
    }
}

/// Reference-triangle Lagrange lattice of the given degree:
/// (i/k, j/k) for i + j <= k.
pub fn lattice_points(degree: usize) -> Vec<Vec2> {
    let k = degree.max(1);
    let mut pts = Vec::with_capacity((k + 1) * (k + 2) / 2);
    for j in 0..=k {
        for i in 0..=(k - j) {
            pts.push(Vec2::new(i as f64 / k as f64, j as f64 / k as f64));
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{AnalyticLevelSet, LevelSetField};
    use approx::assert_relative_eq;

    #[test]
    fn unit_square_h_half_counts() {
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 0.5).unwrap();
        assert_eq!((mesh.nx, mesh.ny), (2, 2));
        assert_eq!(mesh.n_cells(), 8);
        assert_eq!(mesh.n_vertices(), 9);
    }

    #[test]
    fn paper_bulk_counts() {
        let mesh = Mesh::build_uniform(Rect::square(-1.5, 1.5), 0.5).unwrap();
        assert_eq!((mesh.nx, mesh.ny), (6, 6));
        assert_eq!(mesh.n_cells(), 72);
    }

    #[test]
    fn areas_partition_bulk() {
        for h in [0.5, 0.3, 0.21] {
            let bulk = Rect::new(-1.0, 2.0, 0.0, 1.5);
            let mesh = Mesh::build_uniform(bulk, h).unwrap();
            let total: f64 = (0..mesh.n_cells()).map(|c| mesh.cell_area(c)).sum();
            assert_relative_eq!(total, bulk.area(), epsilon = 1e-12);
        }
    }

    #[test]
    fn all_triangles_counterclockwise_and_sized() {
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 0.3).unwrap();
        for c in 0..mesh.n_cells() {
            assert!(mesh.cell_area(c) > 0.0);
            // Squares have side <= h; triangle diameters are the diagonals.
            assert!(mesh.sx <= mesh.h + 1e-15 && mesh.sy <= mesh.h + 1e-15);
            assert!(mesh.cell_diameter(c) <= mesh.h * 2.0_f64.sqrt() + 1e-15);
        }
    }

    #[test]
    fn shape_regularity_constant_across_levels() {
        let b0 = Mesh::build_uniform(Rect::square(0.0, 1.0), 0.1).unwrap().shape_regularity();
        let b1 = Mesh::build_uniform(Rect::square(0.0, 1.0), 0.05).unwrap().shape_regularity();
        assert_relative_eq!(b0, b1, epsilon = 1e-12);
    }

    #[test]
    fn nonpositive_h_rejected() {
        assert!(Mesh::build_uniform(Rect::square(0.0, 1.0), 0.0).is_err());
        assert!(Mesh::build_uniform(Rect::square(0.0, 1.0), -1.0).is_err());
    }

    #[test]
    fn locate_centroids() {
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 0.25).unwrap();
        for c in 0..mesh.n_cells() {
            assert_eq!(mesh.locate_point(mesh.cell_centroid(c)).unwrap(), c);
        }
    }

    #[test]
    fn locate_shared_edge_midpoint_takes_lowest_id() {
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 0.5).unwrap();
        for e in &mesh.edges {
            if let (Some(a), Some(b)) = (e.cells[0], e.cells[1]) {
                let mid = (mesh.vertices[e.v[0]] + mesh.vertices[e.v[1]]) * 0.5;
                assert_eq!(mesh.locate_point(mid).unwrap(), a.min(b));
            }
        }
    }

    #[test]
    fn locate_outside_errors() {
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 0.5).unwrap();
        assert!(mesh.locate_point(Vec2::new(1.5, 0.5)).is_err());
    }

    #[test]
    fn classify_linear_interface_two_cells() {
        // x + y = 0.5 crosses only the lower-left triangle of the 2-triangle
        // unit square at h = 1.
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 1.0).unwrap();
        let field = LevelSetField::from(AnalyticLevelSet::halfplane(Vec2::new(1.0, 1.0), 0.5));
        let class = classify(&mesh, &field, 0.0, InsideSign::Below);
        assert_eq!(class.tags[0], CellTag::Cut);
        assert_eq!(class.tags[1], CellTag::Exterior);
    }

    #[test]
    fn boundary_faces_are_interior_and_between_cut_cells() {
        let mesh = Mesh::build_uniform(Rect::square(-1.5, 1.5), 0.25).unwrap();
        let field = LevelSetField::from(AnalyticLevelSet::circle());
        let class = classify(&mesh, &field, 0.0, InsideSign::Below);
        assert!(!class.boundary_faces.is_empty());
        for &eid in &class.boundary_faces {
            let e = mesh.edges[eid];
            let (a, b) = (e.cells[0].unwrap(), e.cells[1].unwrap());
            assert_eq!(class.tags[a], CellTag::Cut);
            assert_eq!(class.tags[b], CellTag::Cut);
            for &v in &e.v {
                let p = mesh.vertices[v];
                assert!(p.x > mesh.bulk.xmin && p.x < mesh.bulk.xmax);
                assert!(p.y > mesh.bulk.ymin && p.y < mesh.bulk.ymax);
            }
        }
    }

    #[test]
    fn classification_stable_under_tiny_level_shift() {
        let mesh = Mesh::build_uniform(Rect::square(-1.5, 1.5), 0.5).unwrap();
        let field = LevelSetField::from(AnalyticLevelSet::circle());
        let base = classify(&mesh, &field, 0.0, InsideSign::Below);
        for level in [1e-15, -1e-15] {
            let shifted = classify(&mesh, &field, level, InsideSign::Below);
            assert_eq!(base.tags, shifted.tags);
        }
    }
}
