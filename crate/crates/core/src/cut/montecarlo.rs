//! Monte-Carlo integration of the curvilinear remainder: uniform samples
//! over a narrow chord-aligned strip enclosing each remainder piece, with
//! the sample count doubled until the empirical standard error of the
//! estimate drops below a threshold scaling like h^m. The per-cell random
//! stream is seeded by (global seed) XOR (cell id), so results are
//! independent of the cell processing order.

use super::{
    integrate_polygon, normal_interface_offset, remainder_sign, CutCellGeometry, CutContext,
    CutError, CutIntegral, CutIntegrator, CutQuadrature, MethodTag,
};
use crate::geom::Vec2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Strip width safety factor over the sampled maximum deviation.
const WIDTH_SAFETY: f64 = 1.5;
/// Chord stations used to sample the interface deviation.
const DEV_SAMPLES: usize = 32;
/// Initial sample count per remainder component.
const M_INIT: u64 = 256;
/// Hard budget per cut cell; reaching it flags the estimate.
const M_MAX: u64 = 100_000_000;

pub struct MonteCarlo;

impl CutIntegrator for MonteCarlo {
    fn name(&self) -> &'static str {
        "mc"
    }

    fn tag(&self) -> MethodTag {
        MethodTag::Mc
    }

    /// Monte-Carlo has no reusable node/weight rule: the adaptive sample
    /// count depends on the integrand.
    fn quadrature(
        &self,
        _geom: &CutCellGeometry,
        _ctx: &CutContext,
    ) -> Result<Option<CutQuadrature>, CutError> {
        Ok(None)
    }

    fn integrate(
        &self,
        geom: &CutCellGeometry,
        ctx: &CutContext,
        f: &mut dyn FnMut(Vec2) -> f64,
    ) -> Result<CutIntegral, CutError> {
        let mut f_evals = 0u64;
        let poly = integrate_polygon(geom, ctx, f, &mut f_evals)?;
        let est = mc_remainder(geom, ctx, f)?;
        Ok(CutIntegral {
            value: poly + est.value,
            f_evals: f_evals + est.f_evals,
            phi_evals: est.phi_evals,
            fallbacks: 0,
            unconverged: u32::from(est.flagged),
            std_error: est.std_error,
        })
    }
}

/// Monte-Carlo estimate of the signed remainder integral.
#[derive(Debug, Clone, Copy, Default)]
pub struct McEstimate {
    pub value: f64,
    /// Root of the summed per-component variance estimates.
    pub std_error: f64,
    pub f_evals: u64,
    pub phi_evals: u64,
    /// True when the sample budget ran out before the variance threshold.
    pub flagged: bool,
}

/// Estimate the signed integral of `f` over the remainder pieces.
///
/// Each component gets the minimal chord-aligned rectangle enclosing its
/// arc (width from 32-point deviation sampling times a 1.5 safety factor).
/// The characteristic function of the remainder is evaluated from the sign
/// of phi - level against the polygon side.
pub fn mc_remainder(
    geom: &CutCellGeometry,
    ctx: &CutContext,
    f: &mut dyn FnMut(Vec2) -> f64,
) -> Result<McEstimate, CutError> {
    let mut out = McEstimate::default();
    let diam = ctx.mesh.cell_diameter(geom.cell);
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ geom.cell as u64);
    let mut var_sq = 0.0f64;
    let eps_base = ctx.mesh.h.powi(ctx.m as i32);

    for (ci, comp) in geom.components.iter().enumerate() {
        if comp.empty {
            continue;
        }
        // Deviation both ways from the chord; the arc of an S-shaped
        // component can cross it.
        let mut w_plus = 0.0f64;
        let mut w_minus = 0.0f64;
        let t_max = (6.0 * comp.dev + 1e-3 * diam).min(1.5 * diam);
        for k in 0..DEV_SAMPLES {
            let t = (k as f64 + 0.5) / DEV_SAMPLES as f64;
            let q = comp.p1 + (comp.p2 - comp.p1) * t;
            if let Some(alpha) =
                normal_interface_offset(ctx, geom.cell, q, comp.normal, t_max, 12, &mut out.phi_evals)
            {
                if alpha >= 0.0 {
                    w_plus = w_plus.max(alpha);
                } else {
                    w_minus = w_minus.max(-alpha);
                }
            }
        }
        if w_plus + w_minus == 0.0 {
            // Nothing deviates from the chord within the cell.
            continue;
        }
        let w_plus = WIDTH_SAFETY * w_plus;
        let w_minus = WIDTH_SAFETY * w_minus;
        let chord = comp.p2 - comp.p1;
        let len = chord.norm();
        let strip_area = len * (w_plus + w_minus);

        // Adaptive loop: double M until the standard-error estimate of the
        // strip integral falls below eps = h^m scaled by the sampled
        // magnitude of the integrand.
        let mut sum_g = 0.0f64;
        let mut sum_g2 = 0.0f64;
        let mut g_max = 0.0f64;
        let mut m_total: u64 = 0;
        let mut batch = M_INIT;
        loop {
            for _ in 0..batch {
                let a: f64 = rng.random::<f64>();
                let b: f64 = rng.random::<f64>();
                let x = comp.p1 + chord * a + comp.normal * (-w_minus + (w_plus + w_minus) * b);
                let mut g = 0.0;
                if let Some(sgn) = remainder_sign(geom, ctx, ci, x, &mut out.phi_evals) {
                    out.f_evals += 1;
                    g = sgn * f(x);
                }
                sum_g += g;
                sum_g2 += g * g;
                g_max = g_max.max(g.abs());
            }
            m_total += batch;
            let mf = m_total as f64;
            let std_err = strip_area * (sum_g.powi(2) / mf - sum_g2).abs().sqrt() / mf;
            let eps = eps_base * g_max.max(1.0) * 0.25;
            if std_err <= eps {
                var_sq += std_err * std_err;
                break;
            }
            if m_total >= M_MAX {
                out.flagged = true;
                var_sq += std_err * std_err;
                break;
            }
            batch = m_total; // double
        }
        out.value += strip_area * sum_g / m_total as f64;
    }
    out.std_error = var_sq.sqrt();
    Ok(out)
}
