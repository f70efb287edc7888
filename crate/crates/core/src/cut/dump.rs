//! Debug dumps of a cut cell: line-oriented text and an SVG overlay of the
//! cell, polygon, chords, interface trace and quadrature nodes.

use super::{CutCellGeometry, CutContext, CutQuadrature};
use crate::geom::Vec2;
use std::fmt::Write as _;

/// Line-oriented text dump: sections for the cell, intersections, polygon,
/// chords, and (optionally) quadrature nodes with weights.
pub fn dump_cut_cell_text(
    ctx: &CutContext,
    geom: &CutCellGeometry,
    rule: Option<&CutQuadrature>,
) -> String {
    let mut out = String::new();
    let v = ctx.mesh.cell_vertices(geom.cell);
    let _ = writeln!(out, "# cell {} level {}", geom.cell, geom.level);
    for p in v {
        let _ = writeln!(out, "vertex {} {}", p.x, p.y);
    }
    let _ = writeln!(out, "# intersections");
    for p in &geom.intersections {
        let _ = writeln!(out, "intersection {} {}", p.x, p.y);
    }
    let _ = writeln!(out, "# polygon");
    for p in &geom.polygon {
        let _ = writeln!(out, "polygon {} {}", p.x, p.y);
    }
    let _ = writeln!(out, "# chords");
    for c in &geom.components {
        let _ = writeln!(
            out,
            "chord {} {} {} {} sign {} dev {:.3e}{}",
            c.p1.x, c.p1.y, c.p2.x, c.p2.y, c.sign, c.dev,
            if c.empty { " empty" } else { "" }
        );
    }
    if let Some(rule) = rule {
        let _ = writeln!(out, "# quadrature {} ({} nodes)", rule.method, rule.nodes.len());
        for (p, w) in rule.nodes.iter().zip(&rule.weights) {
            let _ = writeln!(out, "node {} {} {}", p.x, p.y, w);
        }
    }
    out
}

/// SVG overlay of one cut cell: the triangle, the interface trace, the
/// polygon, chords and quadrature nodes (area proportional to |weight|,
/// red for negative weights).
pub fn dump_cut_cell_svg(
    ctx: &CutContext,
    geom: &CutCellGeometry,
    rule: Option<&CutQuadrature>,
) -> String {
    let v = ctx.mesh.cell_vertices(geom.cell);
    let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in v {
        xmin = xmin.min(p.x);
        xmax = xmax.max(p.x);
        ymin = ymin.min(p.y);
        ymax = ymax.max(p.y);
    }
    let pad = 0.1 * (xmax - xmin).max(ymax - ymin);
    let (x0, y0, w, hgt) = (
        xmin - pad,
        ymin - pad,
        xmax - xmin + 2.0 * pad,
        ymax - ymin + 2.0 * pad,
    );
    let size = 640.0;
    let scale = size / w.max(hgt);
    let map = |p: Vec2| -> (f64, f64) { ((p.x - x0) * scale, (hgt - (p.y - y0)) * scale) };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.1} {:.1}">"#,
        w * scale, hgt * scale, w * scale, hgt * scale
    );

    let tri: Vec<(f64, f64)> = v.iter().map(|&p| map(p)).collect();
    let _ = writeln!(
        out,
        r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        tri[0].0, tri[0].1, tri[1].0, tri[1].1, tri[2].0, tri[2].1
    );

    if geom.polygon.len() >= 3 {
        let pts: Vec<String> = geom
            .polygon
            .iter()
            .map(|&p| {
                let (x, y) = map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r##"<polygon points="{}" fill="#9ad29a" fill-opacity="0.4" stroke="#2e7d32" stroke-width="1"/>"##,
            pts.join(" ")
        );
    }

    // Interface trace: dense samples of the level curve along cell-spanning
    // scanlines via the component chords.
    for c in &geom.components {
        let (a, b) = (map(c.p1), map(c.p2));
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#1565c0" stroke-width="1" stroke-dasharray="4 3"/>"##,
            a.0, a.1, b.0, b.1
        );
        if !c.empty {
            let mut trace = String::new();
            let mut phi = 0u64;
            let diam = ctx.mesh.cell_diameter(geom.cell);
            for k in 0..=32 {
                let t = k as f64 / 32.0;
                let q = c.p1 + (c.p2 - c.p1) * t;
                if let Some(alpha) = super::normal_interface_offset(
                    ctx, geom.cell, q, c.normal, 4.0 * c.dev + 1e-3 * diam, 12, &mut phi,
                ) {
                    let (x, y) = map(q + c.normal * alpha);
                    let _ = write!(trace, "{}{x:.2},{y:.2}", if trace.is_empty() { "" } else { " " });
                }
            }
            if !trace.is_empty() {
                let _ = writeln!(
                    out,
                    r##"<polyline points="{trace}" fill="none" stroke="#c62828" stroke-width="1.5"/>"##
                );
            }
        }
    }

    for p in &geom.intersections {
        let (x, y) = map(*p);
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="#1565c0"/>"##);
    }

    if let Some(rule) = rule {
        let wmax = rule
            .weights
            .iter()
            .fold(0.0f64, |acc, w| acc.max(w.abs()))
            .max(1e-300);
        for (p, &wt) in rule.nodes.iter().zip(&rule.weights) {
            let (x, y) = map(*p);
            let r = 1.0 + 4.0 * (wt.abs() / wmax).sqrt();
            let color = if wt >= 0.0 { "#2e7d32" } else { "#c62828" };
            let _ = writeln!(
                out,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{color}" fill-opacity="0.7"/>"#
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
