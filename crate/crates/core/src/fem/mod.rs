//! Unfitted finite element assembly: the Neumann Poisson problem on a
//! level-set domain, the narrow-band formulation of the Laplace-Beltrami
//! problem, optional gradient-jump edge stabilization, and direct solves.
//!
//! Interior cells are integrated with a fixed triangle rule; cut cells go
//! through the selected cut-cell strategy. Only basis functions supported
//! on a non-exterior cell enter the system.

pub mod solver;

pub use solver::{is_positive_definite, solve, SolveError, SolveReport};

use crate::cut::{
    build_cut_geometry_unchecked, CutContext, CutError, CutIntegrator, MethodTag,
};
use crate::geom::{Mat2, Vec2};
use crate::levelset::{GeometryProvider, LevelSetField};
use crate::mesh::{BandClassification, CellClassification, CellTag, InsideSign, Mesh};
use crate::quadrature::{GaussRule1d, QuadratureError, TriangleRule};
use crate::space::{FeSpace, SpaceError, MAX_LOCAL};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("nonpositive band weight mu = {mu:.3e} at ({x:.4}, {y:.4}); the band is too wide")]
    NonpositiveMu { mu: f64, x: f64, y: f64 },
    #[error("surface sample point ({x:.4}, {y:.4}) lies outside the narrow band")]
    SampleOutsideBand { x: f64, y: f64 },
}

/// Evaluation counters accumulated during assembly or norm integration.
#[derive(Debug, Clone, Copy, Default)]
pub struct AssemblyStats {
    /// Quadrature nodes processed (interior plus cut).
    pub f_evals: u64,
    /// Quadrature nodes processed on cut cells only.
    pub f_evals_cut: u64,
    pub phi_evals: u64,
    pub fallbacks: u32,
    pub unconverged: u32,
}

impl AssemblyStats {
    pub fn merge(&mut self, o: &AssemblyStats) {
        self.f_evals += o.f_evals;
        self.f_evals_cut += o.f_evals_cut;
        self.phi_evals += o.phi_evals;
        self.fallbacks += o.fallbacks;
        self.unconverged += o.unconverged;
    }
}

/// Assembled symmetric system over the active degrees of freedom.
#[derive(Debug, Clone)]
pub struct FeSystem {
    pub n_active: usize,
    /// Deduplicated (row, col, value) entries in active numbering.
    pub entries: Vec<(usize, usize, f64)>,
    pub rhs: Vec<f64>,
    /// Active index -> global dof id.
    pub active_to_global: Vec<usize>,
    pub n_global: usize,
    pub stats: AssemblyStats,
}

impl FeSystem {
    /// Expand an active-dof solution to global numbering (zeros elsewhere).
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_global];
        for (a, &g) in self.active_to_global.iter().enumerate() {
            out[g] = x[a];
        }
        out
    }

    /// Matrix-vector product over active dofs.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_active];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    /// Maximum absolute asymmetry relative to the largest entry.
    pub fn symmetry_defect(&self) -> f64 {
        use std::collections::HashMap;
        let mut map: HashMap<(usize, usize), f64> = HashMap::new();
        let mut amax = 0.0f64;
        for &(i, j, v) in &self.entries {
            map.insert((i, j), v);
            amax = amax.max(v.abs());
        }
        let mut defect = 0.0f64;
        for (&(i, j), &v) in &map {
            let vt = map.get(&(j, i)).copied().unwrap_or(0.0);
            defect = defect.max((v - vt).abs());
        }
        defect / amax.max(1e-300)
    }

    /// Largest number of nonzeros in a row.
    pub fn max_row_nnz(&self) -> usize {
        let mut counts = vec![0usize; self.n_active];
        for &(i, _, _) in &self.entries {
            counts[i] += 1;
        }
        counts.into_iter().max().unwrap_or(0)
    }

    /// Plain-text coordinate export: one "row col value" line per entry.
    pub fn export_matrix_text(&self) -> String {
        let mut out = String::new();
        for &(i, j, v) in &self.entries {
            out.push_str(&format!("{i} {j} {v:.17e}\n"));
        }
        out
    }
}

/// Solution export as "x y value" lines over the active nodes.
pub fn export_solution_text(space: &FeSpace, system: &FeSystem, solution: &[f64]) -> String {
    let mut out = String::new();
    for (a, &g) in system.active_to_global.iter().enumerate() {
        let p = space.node_coords[g];
        out.push_str(&format!("{} {} {:.17e}\n", p.x, p.y, solution[a]));
    }
    out
}

/// Triplet accumulator in global dof numbering.
struct Accumulator {
    triplets: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl Accumulator {
    fn new(n_global: usize) -> Self {
        Accumulator { triplets: Vec::new(), rhs: vec![0.0; n_global] }
    }

    fn finalize(
        mut self,
        active_mask: &[bool],
        n_global: usize,
        stats: AssemblyStats,
    ) -> FeSystem {
        let mut global_to_active = vec![usize::MAX; n_global];
        let mut active_to_global = Vec::new();
        for (g, &on) in active_mask.iter().enumerate() {
            if on {
                global_to_active[g] = active_to_global.len();
                active_to_global.push(g);
            }
        }
        let n_active = active_to_global.len();
        // Map, sort and merge duplicate entries.
        for t in &mut self.triplets {
            t.0 = global_to_active[t.0];
            t.1 = global_to_active[t.1];
        }
        self.triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(self.triplets.len());
        for (i, j, v) in self.triplets {
            debug_assert!(i != usize::MAX && j != usize::MAX);
            match entries.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => entries.push((i, j, v)),
            }
        }
        let rhs = active_to_global.iter().map(|&g| self.rhs[g]).collect();
        FeSystem {
            n_active,
            entries,
            rhs,
            active_to_global,
            n_global,
            stats,
        }
    }
}

/// Pointwise coefficients of the element integrand at a quadrature node.
type BilinearKernel<'k> = dyn Fn(Vec2, usize) -> Result<(Mat2, f64, f64), FemError> + 'k;

/// Accumulate one cell's contribution from a fixed node/weight rule.
/// The kernel returns (diffusion matrix, mass coefficient, load value) at a
/// point; the bilinear form is (D grad u) . grad v + c u v.
#[allow(clippy::too_many_arguments)]
fn accumulate_fixed(
    mesh: &Mesh,
    space: &FeSpace,
    cell: usize,
    nodes: &[Vec2],
    weights: &[f64],
    scale: f64,
    kernel: &BilinearKernel,
    acc: &mut Accumulator,
) -> Result<(), FemError> {
    let nl = space.locals_per_cell();
    let dofs = space.cell_dofs(cell);
    let mut a_local = [[0.0f64; MAX_LOCAL]; MAX_LOCAL];
    let mut b_local = [0.0f64; MAX_LOCAL];
    for (&x, &w) in nodes.iter().zip(weights) {
        let (vals, grads) = space.eval_at(mesh, cell, x);
        let (diff, mass, load) = kernel(x, cell)?;
        let ws = w * scale;
        for i in 0..nl {
            let dgi = diff.mul_vec(grads[i]);
            for j in i..nl {
                a_local[i][j] += ws * (dgi.dot(grads[j]) + mass * vals[i] * vals[j]);
            }
            b_local[i] += ws * load * vals[i];
        }
    }
    for i in 0..nl {
        for j in i..nl {
            let v = a_local[i][j];
            if v != 0.0 {
                acc.triplets.push((dofs[i], dofs[j], v));
                if i != j {
                    acc.triplets.push((dofs[j], dofs[i], v));
                }
            }
        }
        acc.rhs[dofs[i]] += b_local[i];
    }
    Ok(())
}

/// Accumulate one cut cell through a per-integrand strategy (Monte-Carlo):
/// every matrix and load entry is integrated separately.
#[allow(clippy::too_many_arguments)]
fn accumulate_per_integrand(
    mesh: &Mesh,
    space: &FeSpace,
    cell: usize,
    geom: &crate::cut::CutCellGeometry,
    ctx: &CutContext,
    method: &dyn CutIntegrator,
    scale: f64,
    kernel: &BilinearKernel,
    acc: &mut Accumulator,
    stats: &mut AssemblyStats,
) -> Result<(), FemError> {
    let nl = space.locals_per_cell();
    let dofs = space.cell_dofs(cell);
    let mut kernel_err: Option<FemError> = None;
    for i in 0..nl {
        for j in i..=nl {
            // j == nl encodes the load entry for row i.
            let integral = {
                let mut f = |x: Vec2| -> f64 {
                    let (vals, grads) = space.eval_at(mesh, cell, x);
                    match kernel(x, cell) {
                        Ok((diff, mass, load)) => {
                            if j == nl {
                                load * vals[i]
                            } else {
                                diff.mul_vec(grads[i]).dot(grads[j]) + mass * vals[i] * vals[j]
                            }
                        }
                        Err(e) => {
                            kernel_err = Some(e);
                            0.0
                        }
                    }
                };
                method.integrate(geom, ctx, &mut f)?
            };
            if let Some(e) = kernel_err.take() {
                return Err(e);
            }
            stats.f_evals += integral.f_evals;
            stats.f_evals_cut += integral.f_evals;
            stats.phi_evals += integral.phi_evals;
            stats.fallbacks += integral.fallbacks;
            stats.unconverged += integral.unconverged;
            let v = scale * integral.value;
            if j == nl {
                acc.rhs[dofs[i]] += v;
            } else if v != 0.0 {
                acc.triplets.push((dofs[i], dofs[j], v));
                if i != j {
                    acc.triplets.push((dofs[j], dofs[i], v));
                }
            }
        }
    }
    Ok(())
}

/// Options shared by the assembly routines.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyOptions {
    /// Local quadrature accuracy target m for cut cells.
    pub m: usize,
    /// Triangle-rule exactness on interior cells and polygon parts.
    pub interior_exactness: usize,
    /// Monte-Carlo seed.
    pub seed: u64,
    /// Gradient-jump stabilization factor sigma; `None` disables the term.
    pub stabilization: Option<f64>,
}

impl AssemblyOptions {
    pub fn new(m: usize, degree: usize) -> Self {
        // 2r covers the stiffness and mass integrands; +2 gives margin for
        // non-polynomial data.
        AssemblyOptions {
            m,
            interior_exactness: (2 * degree + 2).min(10),
            seed: 0,
            stabilization: None,
        }
    }
}

/// Assemble the unfitted Neumann problem
/// int_{Omega_h} [grad u . grad v + alpha u v] = int_{Omega_h} f v.
#[allow(clippy::too_many_arguments)]
pub fn assemble_poisson(
    mesh: &Mesh,
    space: &FeSpace,
    field: &LevelSetField,
    class: &CellClassification,
    method: &dyn CutIntegrator,
    opts: &AssemblyOptions,
    alpha: &dyn Fn(Vec2) -> f64,
    f: &dyn Fn(Vec2) -> f64,
) -> Result<FeSystem, FemError> {
    let kernel = move |x: Vec2, _cell: usize| -> Result<(Mat2, f64, f64), FemError> {
        Ok((Mat2::IDENTITY, alpha(x), f(x)))
    };
    let ctx = CutContext::new(mesh, field, class.level, class.inside, opts.m)
        .with_poly_exactness(opts.interior_exactness)
        .with_seed(opts.seed);
    let mut stats = AssemblyStats::default();
    let mut acc = Accumulator::new(space.ndofs);
    let interior_rule = TriangleRule::with_exactness(opts.interior_exactness.min(10))?;
    let mut active = vec![false; space.ndofs];

    for cell in 0..mesh.n_cells() {
        let tag = class.tag(cell);
        if tag == CellTag::Exterior {
            continue;
        }
        for &d in space.cell_dofs(cell) {
            active[d] = true;
        }
        match tag {
            CellTag::Interior => {
                let mapped = interior_rule.map_to_triangle(mesh.cell_vertices(cell))?;
                stats.f_evals += mapped.len() as u64;
                accumulate_fixed(mesh, space, cell, &mapped.points, &mapped.weights, 1.0, &kernel, &mut acc)?;
            }
            CellTag::Cut => {
                let geom = build_cut_geometry_unchecked(&ctx, cell)?;
                stats.phi_evals += geom.phi_evals;
                match method.quadrature(&geom, &ctx)? {
                    Some(rule) => {
                        stats.f_evals += rule.nodes.len() as u64;
                        stats.f_evals_cut += rule.nodes.len() as u64;
                        stats.phi_evals += rule.phi_evals;
                        stats.fallbacks += rule.fallback_components;
                        accumulate_fixed(mesh, space, cell, &rule.nodes, &rule.weights, 1.0, &kernel, &mut acc)?;
                    }
                    None => {
                        accumulate_per_integrand(
                            mesh, space, cell, &geom, &ctx, method, 1.0, &kernel, &mut acc,
                            &mut stats,
                        )?;
                    }
                }
            }
            CellTag::Exterior => unreachable!(),
        }
    }

    if let Some(sigma) = opts.stabilization {
        let add = assemble_edge_stabilization(mesh, space, &class.boundary_faces, sigma)?;
        acc.triplets.extend(add);
    }
    Ok(acc.finalize(&active, space.ndofs, stats))
}

/// Pointwise data of the narrow-band formulation: the discrete level-set
/// field and the (exact) interface Hessian.
pub struct NarrowBandCoefficients<'a> {
    pub field: &'a LevelSetField,
    pub geometry: &'a GeometryProvider,
}

impl NarrowBandCoefficients<'_> {
    /// mu = det(I - phi H) and the diffusion matrix (I - phi H)^{-2},
    /// evaluated with the discrete field value and the exact Hessian.
    pub fn mu_and_coefficient(&self, cell: usize, x: Vec2) -> Result<(f64, Mat2), FemError> {
        let phi = self.field.eval_in_cell(cell, x);
        let hess = self
            .geometry
            .hessian(x)
            .map_err(CutError::LevelSet)?;
        let b = Mat2::IDENTITY.sub(hess.scale(phi));
        let mu = b.det();
        if !(mu > 0.0) {
            return Err(FemError::NonpositiveMu { mu, x: x.x, y: x.y });
        }
        let binv = b.inverse().ok_or(FemError::NonpositiveMu { mu, x: x.x, y: x.y })?;
        Ok((mu, binv.mul_mat(binv)))
    }
}

/// Assemble the narrow-band Laplace-Beltrami system
/// int_{Omega_h} [(I - phi H)^{-2} grad u . grad v + alpha u v] mu
///   = int_{Omega_h} g v mu
/// over the band {|phi| < d}. Each cell is processed by inclusion and
/// exclusion of the two band levels: {phi < d} minus {phi < -d}, so a cell
/// crossed by both levels contributes each level's remainder independently.
#[allow(clippy::too_many_arguments)]
pub fn assemble_narrowband(
    mesh: &Mesh,
    space: &FeSpace,
    band: &BandClassification,
    coeffs: &NarrowBandCoefficients,
    method: &dyn CutIntegrator,
    opts: &AssemblyOptions,
    alpha: &dyn Fn(Vec2) -> f64,
    g: &dyn Fn(Vec2) -> f64,
) -> Result<FeSystem, FemError> {
    let kernel = move |x: Vec2, cell: usize| -> Result<(Mat2, f64, f64), FemError> {
        let (mu, coeff) = coeffs.mu_and_coefficient(cell, x)?;
        Ok((coeff.scale(mu), mu * alpha(x), mu * g(x)))
    };
    let mut stats = AssemblyStats::default();
    let mut acc = Accumulator::new(space.ndofs);
    let interior_rule = TriangleRule::with_exactness(opts.interior_exactness.min(10))?;
    let mut active = vec![false; space.ndofs];

    for cell in 0..mesh.n_cells() {
        if band.tag(cell) == CellTag::Exterior {
            continue;
        }
        for &d in space.cell_dofs(cell) {
            active[d] = true;
        }
        for (class, scale) in [(&band.upper, 1.0f64), (&band.lower, -1.0f64)] {
            match class.tag(cell) {
                CellTag::Exterior => {}
                CellTag::Interior => {
                    let mapped = interior_rule.map_to_triangle(mesh.cell_vertices(cell))?;
                    stats.f_evals += mapped.len() as u64;
                    accumulate_fixed(
                        mesh, space, cell, &mapped.points, &mapped.weights, scale, &kernel,
                        &mut acc,
                    )?;
                }
                CellTag::Cut => {
                    let ctx = CutContext::new(mesh, coeffs.field, class.level, InsideSign::Below, opts.m)
                        .with_poly_exactness(opts.interior_exactness)
                        .with_seed(opts.seed);
                    let geom = build_cut_geometry_unchecked(&ctx, cell)?;
                    stats.phi_evals += geom.phi_evals;
                    match method.quadrature(&geom, &ctx)? {
                        Some(rule) => {
                            stats.f_evals += rule.nodes.len() as u64;
                            stats.f_evals_cut += rule.nodes.len() as u64;
                            stats.phi_evals += rule.phi_evals;
                            stats.fallbacks += rule.fallback_components;
                            accumulate_fixed(
                                mesh, space, cell, &rule.nodes, &rule.weights, scale, &kernel,
                                &mut acc,
                            )?;
                        }
                        None => {
                            accumulate_per_integrand(
                                mesh, space, cell, &geom, &ctx, method, scale, &kernel, &mut acc,
                                &mut stats,
                            )?;
                        }
                    }
                }
            }
        }
    }

    if let Some(sigma) = opts.stabilization {
        let add = assemble_edge_stabilization(mesh, space, &band.boundary_faces, sigma)?;
        acc.triplets.extend(add);
    }
    Ok(acc.finalize(&active, space.ndofs, stats))
}

/// Gradient-jump stabilization: sigma * sum_F int_F [[n . grad u]] [[n . grad v]]
/// over the given faces, as global matrix triplets.
pub fn assemble_edge_stabilization(
    mesh: &Mesh,
    space: &FeSpace,
    faces: &[usize],
    sigma: f64,
) -> Result<Vec<(usize, usize, f64)>, FemError> {
    let r = space.degree;
    let gauss = GaussRule1d::with_exactness(2 * r)?;
    let mut triplets = Vec::new();
    for &eid in faces {
        let edge = mesh.edges[eid];
        let (Some(ca), Some(cb)) = (edge.cells[0], edge.cells[1]) else {
            continue;
        };
        let (a, b) = (mesh.vertices[edge.v[0]], mesh.vertices[edge.v[1]]);
        let mut n = (b - a).perp().normalized();
        // Point the normal from cell a toward cell b.
        if (mesh.cell_centroid(cb) - mesh.cell_centroid(ca)).dot(n) < 0.0 {
            n = -n;
        }

        // Union of the two cells' dofs.
        let mut dofs: Vec<usize> = Vec::new();
        let mut local: Vec<(Option<usize>, Option<usize>)> = Vec::new();
        for (k, &d) in space.cell_dofs(ca).iter().enumerate() {
            dofs.push(d);
            local.push((Some(k), None));
        }
        for (k, &d) in space.cell_dofs(cb).iter().enumerate() {
            if let Some(pos) = dofs.iter().position(|&x| x == d) {
                local[pos].1 = Some(k);
            } else {
                dofs.push(d);
                local.push((None, Some(k)));
            }
        }

        let mapped = gauss.map_to_segment(a, b)?;
        let nu = dofs.len();
        let mut j_local = vec![0.0f64; nu * nu];
        for (&x, &w) in mapped.points.iter().zip(&mapped.weights) {
            let (_, grads_a) = space.eval_at(mesh, ca, x);
            let (_, grads_b) = space.eval_at(mesh, cb, x);
            let mut jumps = vec![0.0f64; nu];
            for (u, &(la, lb)) in local.iter().enumerate() {
                let ga = la.map_or(0.0, |k| n.dot(grads_a[k]));
                let gb = lb.map_or(0.0, |k| n.dot(grads_b[k]));
                jumps[u] = ga - gb;
            }
            for u in 0..nu {
                for v in 0..nu {
                    j_local[u * nu + v] += sigma * w * jumps[u] * jumps[v];
                }
            }
        }
        for u in 0..nu {
            for v in 0..nu {
                let val = j_local[u * nu + v];
                if val != 0.0 {
                    triplets.push((dofs[u], dofs[v], val));
                }
            }
        }
    }
    Ok(triplets)
}

/// Convenience wrapper for tests: evaluate the stabilization form
/// J(u, u) for a global coefficient vector.
pub fn stabilization_energy(
    mesh: &Mesh,
    space: &FeSpace,
    faces: &[usize],
    sigma: f64,
    u: &[f64],
) -> Result<f64, FemError> {
    let triplets = assemble_edge_stabilization(mesh, space, faces, sigma)?;
    Ok(triplets.iter().map(|&(i, j, v)| u[i] * v * u[j]).sum())
}

/// Marker for the per-integrand (Monte-Carlo) assembly path.
pub fn needs_per_integrand(method: &dyn CutIntegrator) -> bool {
    method.tag() == MethodTag::Mc
}
