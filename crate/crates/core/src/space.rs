//! Continuous Lagrange finite element spaces of degree 1..=3 on a
//! triangulated mesh: global numbering (vertex, edge, interior nodes),
//! reference basis evaluation and physical gradients.

use crate::geom::{Mat2, Vec2};
use crate::mesh::Mesh;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("unsupported polynomial degree {0}; supported degrees are 1, 2, 3")]
    UnsupportedDegree(usize),
}

/// Maximum number of local basis functions (degree 3).
pub const MAX_LOCAL: usize = 10;

/// A continuous P_r Lagrange space over a mesh.
#[derive(Debug, Clone)]
pub struct FeSpace {
    pub degree: usize,
    pub ndofs: usize,
    /// Coordinates of every global Lagrange node.
    pub node_coords: Vec<Vec2>,
    /// Global dof ids per cell in reference local order.
    cell_dofs: Vec<usize>,
    locals_per_cell: usize,
}

impl FeSpace {
    /// Build the degree-r space: vertex dofs, then r-1 dofs per edge
    /// (ordered from the lower vertex id), then one interior dof for r = 3.
    pub fn build(mesh: &Mesh, degree: usize) -> Result<FeSpace, SpaceError> {
        if !(1..=3).contains(&degree) {
            return Err(SpaceError::UnsupportedDegree(degree));
        }
        let r = degree;
        let nv = mesh.n_vertices();
        let ne = mesh.edges.len();
        let nt = mesh.n_cells();
        let per_edge = r - 1;
        let interior = usize::from(r == 3);
        let ndofs = nv + ne * per_edge + nt * interior;

        let mut node_coords = vec![Vec2::ZERO; ndofs];
        node_coords[..nv].copy_from_slice(&mesh.vertices);
        for (eid, e) in mesh.edges.iter().enumerate() {
            let (a, b) = (mesh.vertices[e.v[0]], mesh.vertices[e.v[1]]);
            for k in 0..per_edge {
                let t = (k + 1) as f64 / r as f64;
                node_coords[nv + eid * per_edge + k] = a + (b - a) * t;
            }
        }
        if interior == 1 {
            for c in 0..nt {
                node_coords[nv + ne * per_edge + c] = mesh.cell_centroid(c);
            }
        }

        let locals_per_cell = local_count(r);
        let mut cell_dofs = Vec::with_capacity(nt * locals_per_cell);
        for (c, tri) in mesh.triangles.iter().enumerate() {
            cell_dofs.extend_from_slice(&tri[..]);
            if r >= 2 {
                for k in 0..3 {
                    let (ga, gb) = (tri[k], tri[(k + 1) % 3]);
                    let eid = mesh.cell_edges[c][k];
                    for slot in 0..per_edge {
                        // Local edge nodes run from local vertex k toward
                        // k+1; global storage runs from the lower vertex id.
                        let g_slot = if ga < gb { slot } else { per_edge - 1 - slot };
                        cell_dofs.push(nv + eid * per_edge + g_slot);
                    }
                }
            }
            if interior == 1 {
                cell_dofs.push(nv + ne * per_edge + c);
            }
        }

        Ok(FeSpace {
            degree: r,
            ndofs,
            node_coords,
            cell_dofs,
            locals_per_cell,
        })
    }

    #[inline]
    pub fn locals_per_cell(&self) -> usize {
        self.locals_per_cell
    }

    /// Global dof ids of a cell, in reference local order.
    #[inline]
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        &self.cell_dofs[cell * self.locals_per_cell..(cell + 1) * self.locals_per_cell]
    }

    /// Reference coordinates of the local nodes, matching the basis order.
    pub fn reference_nodes(&self) -> Vec<Vec2> {
        reference_nodes(self.degree)
    }

    /// Basis values at a reference point.
    #[inline]
    pub fn eval_basis(&self, p: Vec2) -> [f64; MAX_LOCAL] {
        eval_basis(self.degree, p)
    }

    /// Basis reference gradients at a reference point.
    #[inline]
    pub fn eval_basis_gradients(&self, p: Vec2) -> [Vec2; MAX_LOCAL] {
        eval_basis_gradients(self.degree, p)
    }

    /// Basis values and physical gradients of a cell at a physical point.
    pub fn eval_at(
        &self,
        mesh: &Mesh,
        cell: usize,
        x: Vec2,
    ) -> ([f64; MAX_LOCAL], [Vec2; MAX_LOCAL]) {
        let p = mesh.physical_to_ref(cell, x);
        let values = self.eval_basis(p);
        let ref_grads = self.eval_basis_gradients(p);
        let v = mesh.cell_vertices(cell);
        let jac = Mat2::from_columns(v[1] - v[0], v[2] - v[0]);
        let jinv_t = jac.inverse().expect("nondegenerate cell").transpose();
        let mut grads = [Vec2::ZERO; MAX_LOCAL];
        for i in 0..self.locals_per_cell {
            grads[i] = jinv_t.mul_vec(ref_grads[i]);
        }
        (values, grads)
    }

    /// Evaluate a coefficient vector (one value per global dof) at a
    /// physical point of the given cell.
    pub fn eval_function(&self, mesh: &Mesh, cell: usize, coeffs: &[f64], x: Vec2) -> f64 {
        let p = mesh.physical_to_ref(cell, x);
        let values = self.eval_basis(p);
        self.cell_dofs(cell)
            .iter()
            .enumerate()
            .map(|(i, &g)| coeffs[g] * values[i])
            .sum()
    }

    /// Physical gradient of a coefficient vector at a point of the cell.
    pub fn eval_function_gradient(
        &self,
        mesh: &Mesh,
        cell: usize,
        coeffs: &[f64],
        x: Vec2,
    ) -> Vec2 {
        let (_, grads) = self.eval_at(mesh, cell, x);
        let mut g = Vec2::ZERO;
        for (i, &dof) in self.cell_dofs(cell).iter().enumerate() {
            g += grads[i] * coeffs[dof];
        }
        g
    }

    /// Nodal interpolant of an analytic function.
    pub fn interpolate(&self, f: impl Fn(Vec2) -> f64) -> Vec<f64> {
        self.node_coords.iter().map(|&p| f(p)).collect()
    }
}

pub fn local_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

/// Reference node coordinates in local order: vertices, then edge nodes
/// along edges (0,1), (1,2), (2,0), then the interior node for degree 3.
pub fn reference_nodes(degree: usize) -> Vec<Vec2> {
    let verts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
    let mut nodes = verts.to_vec();
    if degree >= 2 {
        for k in 0..3 {
            let (a, b) = (verts[k], verts[(k + 1) % 3]);
            for s in 0..degree - 1 {
                let t = (s + 1) as f64 / degree as f64;
                nodes.push(a + (b - a) * t);
            }
        }
    }
    if degree == 3 {
        nodes.push(Vec2::new(1.0 / 3.0, 1.0 / 3.0));
    }
    nodes
}

/// Barycentric coordinates and their constant reference gradients.
#[inline]
fn bary(p: Vec2) -> [f64; 3] {
    [1.0 - p.x - p.y, p.x, p.y]
}

const DBARY: [Vec2; 3] = [
    Vec2 { x: -1.0, y: -1.0 },
    Vec2 { x: 1.0, y: 0.0 },
    Vec2 { x: 0.0, y: 1.0 },
];

/// Lagrange basis values at a reference point.
pub fn eval_basis(degree: usize, p: Vec2) -> [f64; MAX_LOCAL] {
    let l = bary(p);
    let mut n = [0.0; MAX_LOCAL];
    match degree {
        1 => {
            n[..3].copy_from_slice(&l);
        }
        2 => {
            for i in 0..3 {
                n[i] = l[i] * (2.0 * l[i] - 1.0);
            }
            for k in 0..3 {
                let (i, j) = (k, (k + 1) % 3);
                n[3 + k] = 4.0 * l[i] * l[j];
            }
        }
        3 => {
            for i in 0..3 {
                n[i] = 0.5 * l[i] * (3.0 * l[i] - 1.0) * (3.0 * l[i] - 2.0);
            }
            for k in 0..3 {
                let (i, j) = (k, (k + 1) % 3);
                n[3 + 2 * k] = 4.5 * l[i] * l[j] * (3.0 * l[i] - 1.0);
                n[3 + 2 * k + 1] = 4.5 * l[i] * l[j] * (3.0 * l[j] - 1.0);
            }
            n[9] = 27.0 * l[0] * l[1] * l[2];
        }
        _ => unreachable!("degree validated at construction"),
    }
    n
}

/// Lagrange basis reference gradients at a reference point.
pub fn eval_basis_gradients(degree: usize, p: Vec2) -> [Vec2; MAX_LOCAL] {
    let l = bary(p);
    let mut g = [Vec2::ZERO; MAX_LOCAL];
    match degree {
        1 => {
            g[..3].copy_from_slice(&DBARY);
        }
        2 => {
            for i in 0..3 {
                g[i] = DBARY[i] * (4.0 * l[i] - 1.0);
            }
            for k in 0..3 {
                let (i, j) = (k, (k + 1) % 3);
                g[3 + k] = DBARY[i] * (4.0 * l[j]) + DBARY[j] * (4.0 * l[i]);
            }
        }
        3 => {
            for i in 0..3 {
                // d/dl [ l(3l-1)(3l-2)/2 ] = (27 l^2 - 18 l + 2) / 2
                let dl = 0.5 * (27.0 * l[i] * l[i] - 18.0 * l[i] + 2.0);
                g[i] = DBARY[i] * dl;
            }
            for k in 0..3 {
                let (i, j) = (k, (k + 1) % 3);
                // 4.5 * li*lj*(3li - 1): d/dli = lj(6li - 1), d/dlj = li(3li - 1)
                g[3 + 2 * k] = DBARY[i] * (4.5 * l[j] * (6.0 * l[i] - 1.0))
                    + DBARY[j] * (4.5 * l[i] * (3.0 * l[i] - 1.0));
                g[3 + 2 * k + 1] = DBARY[j] * (4.5 * l[i] * (6.0 * l[j] - 1.0))
                    + DBARY[i] * (4.5 * l[j] * (3.0 * l[j] - 1.0));
            }
            g[9] = DBARY[0] * (27.0 * l[1] * l[2])
                + DBARY[1] * (27.0 * l[0] * l[2])
                + DBARY[2] * (27.0 * l[0] * l[1]);
        }
        _ => unreachable!("degree validated at construction"),
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rect;
    use approx::assert_relative_eq;

    #[test]
    fn dof_counts_on_two_triangle_square() {
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 1.0).unwrap();
        assert_eq!(FeSpace::build(&mesh, 1).unwrap().ndofs, 4);
        assert_eq!(FeSpace::build(&mesh, 2).unwrap().ndofs, 9);
        // 4 vertices + 2 per edge * 5 edges + 1 per cell * 2 cells
        assert_eq!(FeSpace::build(&mesh, 3).unwrap().ndofs, 16);
    }

    #[test]
    fn unsupported_degree_rejected() {
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 1.0).unwrap();
        assert!(FeSpace::build(&mesh, 4).is_err());
        assert!(FeSpace::build(&mesh, 0).is_err());
    }

    #[test]
    fn kronecker_property_at_reference_nodes() {
        for r in 1..=3 {
            let nodes = reference_nodes(r);
            for (j, &p) in nodes.iter().enumerate() {
                let vals = eval_basis(r, p);
                for i in 0..local_count(r) {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_relative_eq!(vals[i], expect, epsilon = 1e-13);
                }
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        for r in 1..=3 {
            for p in [Vec2::new(0.21, 0.37), Vec2::new(0.0, 0.9), Vec2::new(0.5, 0.25)] {
                let vals = eval_basis(r, p);
                let sum: f64 = vals[..local_count(r)].iter().sum();
                assert_relative_eq!(sum, 1.0, epsilon = 1e-13);
                let grads = eval_basis_gradients(r, p);
                let gsum = grads[..local_count(r)]
                    .iter()
                    .fold(Vec2::ZERO, |acc, &g| acc + g);
                assert!(gsum.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let eps = 1e-6;
        for r in 1..=3 {
            let p = Vec2::new(0.3, 0.4);
            let g = eval_basis_gradients(r, p);
            for i in 0..local_count(r) {
                let fx = (eval_basis(r, Vec2::new(p.x + eps, p.y))[i]
                    - eval_basis(r, Vec2::new(p.x - eps, p.y))[i])
                    / (2.0 * eps);
                let fy = (eval_basis(r, Vec2::new(p.x, p.y + eps))[i]
                    - eval_basis(r, Vec2::new(p.x, p.y - eps))[i])
                    / (2.0 * eps);
                assert_relative_eq!(g[i].x, fx, epsilon = 1e-8, max_relative = 1e-6);
                assert_relative_eq!(g[i].y, fy, epsilon = 1e-8, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_degree_r_polynomials() {
        let mesh = Mesh::build_uniform(Rect::square(-1.0, 1.0), 0.4).unwrap();
        let polys: [(usize, Box<dyn Fn(Vec2) -> f64>); 3] = [
            (1, Box::new(|p: Vec2| 2.0 * p.x - 0.7 * p.y + 0.3)),
            (2, Box::new(|p: Vec2| p.x * p.x - p.x * p.y + 0.5 * p.y)),
            (3, Box::new(|p: Vec2| p.x.powi(3) - 2.0 * p.x * p.y * p.y + p.y)),
        ];
        for (r, f) in &polys {
            let space = FeSpace::build(&mesh, *r).unwrap();
            let coeffs = space.interpolate(|p| f(p));
            // 100 pseudo-random points in the bulk
            let mut state = 123456789u64;
            let mut rand01 = move || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            for _ in 0..100 {
                let x = Vec2::new(rand01() * 2.0 - 1.0, rand01() * 2.0 - 1.0);
                let cell = mesh.locate_point(x).unwrap();
                let got = space.eval_function(&mesh, cell, &coeffs, x);
                assert_relative_eq!(got, f(x), epsilon = 1e-12, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn shared_edge_dofs_consistent_between_cells() {
        // Evaluating the same global coefficient vector from the two cells
        // sharing an edge must agree along that edge.
        let mesh = Mesh::build_uniform(Rect::square(0.0, 1.0), 0.5).unwrap();
        for r in 2..=3 {
            let space = FeSpace::build(&mesh, r).unwrap();
            let coeffs: Vec<f64> = (0..space.ndofs).map(|i| (i as f64 * 0.37).sin()).collect();
            for e in &mesh.edges {
                if let (Some(a), Some(b)) = (e.cells[0], e.cells[1]) {
                    for t in [0.25, 0.5, 0.75] {
                        let x = mesh.vertices[e.v[0]] + (mesh.vertices[e.v[1]] - mesh.vertices[e.v[0]]) * t;
                        let va = space.eval_function(&mesh, a, &coeffs, x);
                        let vb = space.eval_function(&mesh, b, &coeffs, x);
                        assert_relative_eq!(va, vb, epsilon = 1e-12);
                    }
                }
            }
        }
    }
}
