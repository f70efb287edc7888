//! Local quasi-parametrization of the interface: the arc of each remainder
//! component is treated as a graph over its chord. An outer Gauss rule
//! places stations q_i on the chord; a 1D root search along the chord
//! normal finds the matching interface points, and the same Gauss rule is
//! nested on each normal segment. The combined weights are
//! w_ij = |p1 - p2| * |q_i - q_i^| * sign_i * w_i * w_j, giving O(1)
//! integrand evaluations per cut cell.

use super::{
    normal_interface_offset, polygon_quadrature, subtri, CutCellGeometry, CutContext, CutError,
    CutIntegral, CutIntegrator, CutQuadrature, MethodTag,
};
use crate::geom::Vec2;
use crate::quadrature::GaussRule1d;

/// 1D node count from the target order: 2P + 1 = m.
pub fn nodes_from_order(m: usize) -> usize {
    (m.max(2) / 2).max(1)
}

pub struct LocalParametrization;

impl CutIntegrator for LocalParametrization {
    fn name(&self) -> &'static str {
        "lp"
    }

    fn tag(&self) -> MethodTag {
        MethodTag::Lp
    }

    fn quadrature(
        &self,
        geom: &CutCellGeometry,
        ctx: &CutContext,
    ) -> Result<Option<CutQuadrature>, CutError> {
        let mut rule = local_param_quadrature(geom, ctx, nodes_from_order(ctx.m))?;
        for (p, w) in polygon_quadrature(geom, ctx)? {
            rule.nodes.push(p);
            rule.weights.push(w);
        }
        Ok(Some(rule))
    }
}

/// Remainder-only rule: Gauss stations on each chord, interface points by
/// normal root finding, nested Gauss nodes r_ij on the normal segments.
/// Components where the interface is not a graph over the chord fall back
/// to sub-triangulation; the count is recorded on the returned rule.
pub fn local_param_quadrature(
    geom: &CutCellGeometry,
    ctx: &CutContext,
    p_nodes: usize,
) -> Result<CutQuadrature, CutError> {
    let gauss = GaussRule1d::new(p_nodes)?;
    let diam = ctx.mesh.cell_diameter(geom.cell);
    let mut nodes: Vec<Vec2> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut phi_evals = 0u64;
    let mut fallbacks = 0u32;

    for comp in &geom.components {
        if comp.empty {
            continue;
        }
        let chord_len = comp.chord_length();
        // Search range: generous multiple of the sampled deviation, but at
        // least a sliver of the cell for safety.
        let t_max = (4.0 * comp.dev + 1e-3 * diam).min(1.5 * diam);

        let mut comp_nodes: Vec<Vec2> = Vec::new();
        let mut comp_weights: Vec<f64> = Vec::new();
        let mut ok = comp.graph_ok;
        if ok {
            'stations: for (i, &ti) in gauss.nodes.iter().enumerate() {
                let q = comp.p1 + (comp.p2 - comp.p1) * ti;
                let alpha = match normal_interface_offset(
                    ctx, geom.cell, q, comp.normal, t_max, 16, &mut phi_evals,
                ) {
                    Some(a) => a,
                    None => {
                        // Retry over the full cell scale before giving up.
                        match normal_interface_offset(
                            ctx, geom.cell, q, comp.normal, 1.5 * diam, 32, &mut phi_evals,
                        ) {
                            Some(a) => a,
                            None => {
                                ok = false;
                                break 'stations;
                            }
                        }
                    }
                };
                if alpha.abs() < 1e-15 * diam.max(1.0) {
                    continue; // zero-length segment, zero weight
                }
                let sign_i = ctx.side(geom.cell, q, &mut phi_evals);
                let q_hat = q + comp.normal * alpha;
                for (j, &tj) in gauss.nodes.iter().enumerate() {
                    let r = q + (q_hat - q) * tj;
                    let w = chord_len * alpha.abs() * sign_i * gauss.weights[i] * gauss.weights[j];
                    comp_nodes.push(r);
                    comp_weights.push(w);
                }
            }
        }
        if ok {
            nodes.append(&mut comp_nodes);
            weights.append(&mut comp_weights);
        } else {
            // Graph condition violated: integrate this component by
            // sub-triangulation instead.
            fallbacks += 1;
            let st = subtri::component_remainder_rule(
                geom,
                ctx,
                comp,
                subtri::resolution_from_order(ctx.m),
                &mut phi_evals,
            )?;
            for (p, w) in st {
                nodes.push(p);
                weights.push(w);
            }
        }
    }

    Ok(CutQuadrature {
        nodes,
        weights,
        method: MethodTag::Lp,
        order: ctx.m,
        phi_evals,
        fallback_components: fallbacks,
    })
}

impl LocalParametrization {
    /// Integrate one integrand (rule construction plus application).
    pub fn integrate_with_counts(
        geom: &CutCellGeometry,
        ctx: &CutContext,
        f: &mut dyn FnMut(Vec2) -> f64,
    ) -> Result<CutIntegral, CutError> {
        LocalParametrization.integrate(geom, ctx, f)
    }
}
