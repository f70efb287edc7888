//! End-to-end convergence experiments driven by a declarative config:
//! integration over an implicit annulus, an unfitted Neumann Poisson
//! problem on a disc, and a narrow-band Laplace-Beltrami problem on a
//! circle. Each experiment sweeps a sequence of uniform meshes, selects a
//! cut-cell strategy from the registry by name, and emits CSV/SVG reports
//! with evaluation counts.

use crate::analysis::{bulk_errors, loglog_svg, surface_errors, ConvergenceReport, LevelRecord};
use crate::cut::{integrate_domain, integrator, CutContext, CutError, CutIntegrator, MethodTag};
use crate::fem::{
    assemble_narrowband, assemble_poisson, solve, AssemblyOptions, AssemblyStats, FemError,
    NarrowBandCoefficients,
};
use crate::geom::{Rect, Vec2};
use crate::levelset::{AnalyticLevelSet, GeometryProvider, LevelSetField};
use crate::mesh::{classify, BandClassification, InsideSign, Mesh, MeshError};
use crate::quadrature::GaussRule1d;
use crate::space::FeSpace;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Cut(#[from] CutError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config { .. })
    }
}

fn cfg_err(field: &str, message: impl Into<String>) -> ExperimentError {
    ExperimentError::Config { field: field.to_string(), message: message.into() }
}

/// The three built-in experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "integrate-annulus")]
    IntegrateAnnulus,
    #[serde(rename = "poisson-disc")]
    PoissonDisc,
    #[serde(rename = "laplace-beltrami-circle")]
    LaplaceBeltramiCircle,
}

impl ExperimentKind {
    pub fn parse(s: &str) -> Result<Self, ExperimentError> {
        match s {
            "integrate-annulus" | "integrate" => Ok(ExperimentKind::IntegrateAnnulus),
            "poisson-disc" | "poisson" => Ok(ExperimentKind::PoissonDisc),
            "laplace-beltrami-circle" | "laplace-beltrami" => {
                Ok(ExperimentKind::LaplaceBeltramiCircle)
            }
            other => Err(cfg_err(
                "experiment",
                format!("unknown experiment '{other}'"),
            )),
        }
    }

    pub fn default_base_h(self) -> f64 {
        match self {
            ExperimentKind::IntegrateAnnulus => 0.1,
            _ => 0.5,
        }
    }

    pub fn bulk(self) -> Rect {
        match self {
            ExperimentKind::IntegrateAnnulus => Rect::square(0.0, 1.0),
            _ => Rect::square(-1.5, 1.5),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::IntegrateAnnulus => "integrate-annulus",
            ExperimentKind::PoissonDisc => "poisson-disc",
            ExperimentKind::LaplaceBeltramiCircle => "laplace-beltrami-circle",
        }
    }
}

/// Declarative experiment configuration. All fields have defaults; the
/// quadrature target defaults to m = min(q, r) + 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    /// Cut-cell strategy name: one of lp, mf, st, mc.
    pub method: String,
    /// Local quadrature order; `None` selects min(q, r) + 2.
    pub m: Option<usize>,
    /// Finite element degree.
    pub r: usize,
    /// Level-set interpolation degree.
    pub q: usize,
    pub i_min: usize,
    pub i_max: usize,
    /// Coarsest mesh size; `None` selects the experiment default.
    pub base_h: Option<f64>,
    pub seed: u64,
    /// Band half-width factor: d_h = d_factor * h.
    pub d_factor: f64,
    /// Gradient-jump stabilization with sigma = 1 when enabled.
    pub stabilize: bool,
    /// Output directory for report.csv / report.svg / provenance.json.
    pub out: Option<String>,
    /// Evaluation budget: MC and ST sweeps stop before a level whose
    /// predicted count exceeds it.
    pub max_evals: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: "integrate-annulus".to_string(),
            method: "lp".to_string(),
            m: None,
            r: 2,
            q: 2,
            i_min: 0,
            i_max: 4,
            base_h: None,
            seed: 42,
            d_factor: 2.0,
            stabilize: false,
            out: None,
            max_evals: 100_000_000,
        }
    }
}

impl ExperimentConfig {
    pub fn kind(&self) -> Result<ExperimentKind, ExperimentError> {
        ExperimentKind::parse(&self.experiment)
    }

    /// Effective quadrature order: m = min(q, r) + 2 unless overridden.
    pub fn order(&self) -> usize {
        self.m.unwrap_or(self.q.min(self.r) + 2)
    }

    pub fn base_h_value(&self) -> Result<f64, ExperimentError> {
        Ok(self.base_h.unwrap_or(self.kind()?.default_base_h()))
    }

    pub fn levels(&self) -> std::ops::RangeInclusive<usize> {
        self.i_min..=self.i_max
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.kind()?;
        integrator(&self.method).map_err(|e| cfg_err("method", e.to_string()))?;
        if !(1..=3).contains(&self.r) {
            return Err(cfg_err("r", format!("degree {} outside 1..=3", self.r)));
        }
        if !(1..=3).contains(&self.q) {
            return Err(cfg_err("q", format!("degree {} outside 1..=3", self.q)));
        }
        if self.i_max < self.i_min {
            return Err(cfg_err("i_max", "i_max must be >= i_min"));
        }
        if self.i_max - self.i_min + 1 < 2 {
            return Err(cfg_err("i_max", "at least 2 levels are needed to fit rates"));
        }
        if let Some(m) = self.m {
            if !(2..=10).contains(&m) {
                return Err(cfg_err("m", format!("order {m} outside 2..=10")));
            }
        }
        if let Some(h) = self.base_h {
            if !(h > 0.0) {
                return Err(cfg_err("base_h", "base_h must be positive"));
            }
        }
        if !(self.d_factor > 0.0) {
            return Err(cfg_err("d_factor", "d_factor must be positive"));
        }
        Ok(())
    }

    /// Parse a line-oriented `key = value` config with `#` comments; a
    /// leading `{` switches to JSON.
    pub fn parse(text: &str) -> Result<ExperimentConfig, ExperimentError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            let cfg: ExperimentConfig = serde_json::from_str(trimmed)
                .map_err(|e| cfg_err("<json>", e.to_string()))?;
            cfg.validate()?;
            return Ok(cfg);
        }
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(cfg_err(
                    "<config>",
                    format!("line {}: expected `key = value`, got `{raw}`", lineno + 1),
                ));
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one field from its textual form. `levels = a..b` is shorthand
    /// for i_min / i_max.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ExperimentError> {
        let parse_usize = |v: &str| -> Result<usize, ExperimentError> {
            v.parse().map_err(|_| cfg_err(key, format!("expected integer, got `{v}`")))
        };
        let parse_f64 = |v: &str| -> Result<f64, ExperimentError> {
            v.parse().map_err(|_| cfg_err(key, format!("expected number, got `{v}`")))
        };
        match key {
            "experiment" => self.experiment = value.to_string(),
            "method" => self.method = value.to_string(),
            "m" => self.m = Some(parse_usize(value)?),
            "r" => self.r = parse_usize(value)?,
            "q" => self.q = parse_usize(value)?,
            "i_min" => self.i_min = parse_usize(value)?,
            "i_max" => self.i_max = parse_usize(value)?,
            "levels" => {
                let (a, b) = value
                    .split_once("..")
                    .ok_or_else(|| cfg_err(key, "expected `a..b`"))?;
                self.i_min = parse_usize(a.trim())?;
                self.i_max = parse_usize(b.trim())?;
            }
            "base_h" => self.base_h = Some(parse_f64(value)?),
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| cfg_err(key, format!("expected integer, got `{value}`")))?;
            }
            "d_factor" => self.d_factor = parse_f64(value)?,
            "stabilize" => {
                self.stabilize = value
                    .parse()
                    .map_err(|_| cfg_err(key, format!("expected true/false, got `{value}`")))?;
            }
            "out" => self.out = Some(value.to_string()),
            "max_evals" => {
                self.max_evals = value
                    .parse()
                    .map_err(|_| cfg_err(key, format!("expected integer, got `{value}`")))?;
            }
            other => return Err(cfg_err(other, "unknown config key")),
        }
        Ok(())
    }

    /// All keys with their effective values, in config-file form.
    pub fn defaults_text(&self) -> String {
        let kind = self.kind().map(|k| k.name()).unwrap_or("?");
        format!(
            "experiment = {}\nmethod = {}\nm = {}  # min(q, r) + 2 unless set\nr = {}\nq = {}\ni_min = {}\ni_max = {}\nbase_h = {}\nseed = {}\nd_factor = {}\nstabilize = {}\nmax_evals = {}\n",
            kind,
            self.method,
            self.order(),
            self.r,
            self.q,
            self.i_min,
            self.i_max,
            self.base_h.map_or_else(
                || format!("{}  # experiment default", self.kind().map(|k| k.default_base_h()).unwrap_or(0.0)),
                |h| h.to_string()
            ),
            self.seed,
            self.d_factor,
            self.stabilize,
            self.max_evals,
        )
    }
}

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

/// Integrand of the annulus experiment, in polar form
/// f = 1e5 sin(21 theta) sin(5 pi r).
pub fn annulus_integrand(p: Vec2) -> f64 {
    let r = p.norm();
    let theta = p.y.atan2(p.x);
    1.0e5 * (21.0 * theta).sin() * (5.0 * PI * r).sin()
}

const POISSON_A: f64 = 7.0 * PI / 2.0;
const POISSON_C: f64 = 3.0 * PI;

/// Exact solution of the disc problem: u = sin(a r) sin(theta) + cos(c r).
pub fn poisson_exact(p: Vec2) -> f64 {
    let r = p.norm();
    let theta = p.y.atan2(p.x);
    (POISSON_A * r).sin() * theta.sin() + (POISSON_C * r).cos()
}

/// Gradient of the exact disc solution in Cartesian coordinates.
pub fn poisson_exact_gradient(p: Vec2) -> Vec2 {
    let r = p.norm();
    let theta = p.y.atan2(p.x);
    let (a, c) = (POISSON_A, POISSON_C);
    let ur = a * (a * r).cos() * theta.sin() - c * (c * r).sin();
    let ut_over_r = (a * r).sin() * theta.cos() / r;
    let rhat = Vec2::new(theta.cos(), theta.sin());
    let that = Vec2::new(-theta.sin(), theta.cos());
    rhat * ur + that * ut_over_r
}

/// Right-hand side of -Laplace(u) + u for the disc solution.
pub fn poisson_rhs(p: Vec2) -> f64 {
    let r = p.norm();
    let theta = p.y.atan2(p.x);
    let (a, c) = (POISSON_A, POISSON_C);
    (a * a + 1.0 / (r * r) + 1.0) * (a * r).sin() * theta.sin()
        - a / r * (a * r).cos() * theta.sin()
        + (c * c + 1.0) * (c * r).cos()
        + c / r * (c * r).sin()
}

/// Surface solution of the Laplace-Beltrami test: u = cos(8 theta).
pub fn lb_exact(theta: f64) -> f64 {
    (8.0 * theta).cos()
}

/// Tangential surface gradient of the exact solution on the unit circle.
pub fn lb_exact_surface_gradient(theta: f64) -> Vec2 {
    let that = Vec2::new(-theta.sin(), theta.cos());
    that * (-8.0 * (8.0 * theta).sin())
}

/// Normal extension of the surface data g = 65 cos(8 theta): the polar
/// angle is constant along radial normals of the circle.
pub fn lb_rhs_extension(p: Vec2) -> f64 {
    let theta = p.y.atan2(p.x);
    65.0 * (8.0 * theta).cos()
}

// ---------------------------------------------------------------------------
// Built-in annulus reference
// ---------------------------------------------------------------------------

/// High-precision reference for the annulus experiment over the bulk
/// square (0, 1)^2, by exact reduction to radial integrals: the admissible
/// angle range at radius r > 1 is (arccos(1/r), pi/2 - arccos(1/r)) because
/// the square truncates the outer arc near the axes. The angular integral
/// is closed-form; the radial integrals are evaluated by Gauss rules after
/// the substitution r = 1 + t^2 that removes the square-root kink at r = 1.
pub fn annulus_reference() -> f64 {
    static VALUE: OnceLock<f64> = OnceLock::new();
    *VALUE.get_or_init(|| {
        let gauss = GaussRule1d::new(10).expect("valid node count");
        // Composite 10-point Gauss on subintervals for spare accuracy.
        let integrate = |a: f64, b: f64, f: &dyn Fn(f64) -> f64| -> f64 {
            let n_sub = 64;
            let mut total = 0.0;
            for k in 0..n_sub {
                let lo = a + (b - a) * k as f64 / n_sub as f64;
                let hi = a + (b - a) * (k + 1) as f64 / n_sub as f64;
                total += gauss.integrate(|t| f(lo + (hi - lo) * t)) * (hi - lo);
            }
            total
        };
        let theta_integral = |r: f64| -> f64 {
            let a = if r > 1.0 { (1.0 / r).acos() } else { 0.0 };
            ((21.0 * a).cos() - (21.0 * (PI / 2.0 - a)).cos()) / 21.0
        };
        // Inner part 0.9 <= r <= 1: full quarter angle.
        let inner = integrate(0.9, 1.0, &|r| {
            1.0e5 * r * (5.0 * PI * r).sin() * theta_integral(r)
        });
        // Outer part 1 < r <= 1.1 with r = 1 + t^2.
        let outer = integrate(0.0, 0.1f64.sqrt(), &|t| {
            let r = 1.0 + t * t;
            1.0e5 * r * (5.0 * PI * r).sin() * theta_integral(r) * 2.0 * t
        });
        inner + outer
    })
}

/// Closed-form value of the untruncated quarter-annulus integral,
/// -200000 / (525 pi^2); logged as a cross-check next to the truncated
/// reference.
pub fn untruncated_quarter_annulus_value() -> f64 {
    -200000.0 / (525.0 * PI * PI)
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Output of one experiment sweep.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: ConvergenceReport,
    pub csv: String,
    pub svg: String,
    pub provenance: String,
    /// Files written when an output directory was configured.
    pub written: Vec<PathBuf>,
}

/// Expected eval-count growth per mesh halving, used for budget truncation.
fn growth_factor(tag: MethodTag, m: usize) -> f64 {
    match tag {
        MethodTag::Mc => 2f64.powi(2 * m as i32 - 5).max(8.0),
        MethodTag::St => 2f64.powi(m as i32 - 2).max(2.0) * 2.0,
        _ => 4.0,
    }
}

/// Run one experiment sweep, writing artifacts when configured.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let method = integrator(&cfg.method).map_err(|e| cfg_err("method", e.to_string()))?;
    let base_h = cfg.base_h_value()?;
    let m = cfg.order();

    let mut records = Vec::new();
    for i in cfg.levels() {
        if let Some(last) = records.last() {
            let last: &LevelRecord = last;
            if matches!(method.tag(), MethodTag::Mc | MethodTag::St) {
                let predicted = last.evals_total as f64 * growth_factor(method.tag(), m);
                if predicted > cfg.max_evals as f64 {
                    break;
                }
            }
        }
        let h = base_h * 0.5f64.powi(i as i32);
        let t0 = Instant::now();
        let record = match kind {
            ExperimentKind::IntegrateAnnulus => run_integrate_level(cfg, method, m, h),
            ExperimentKind::PoissonDisc => run_poisson_level(cfg, method, m, h),
            ExperimentKind::LaplaceBeltramiCircle => run_lb_level(cfg, method, m, h),
        };
        let mut record = match record {
            Ok(rec) => rec,
            Err(e) if e.is_config() => return Err(e),
            Err(e) => LevelRecord {
                h,
                note: Some(format!("failed: {e}")),
                ..Default::default()
            },
        };
        record.seconds = t0.elapsed().as_secs_f64();
        records.push(record);
    }

    let report = ConvergenceReport::new(records);
    let csv = report.to_csv();
    let svg = render_svg(kind, &report, cfg.r);
    let provenance = provenance_json(cfg, kind);

    let mut written = Vec::new();
    if let Some(dir) = &cfg.out {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        for (name, content) in [
            ("report.csv", &csv),
            ("report.svg", &svg),
            ("provenance.json", &provenance),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, content)?;
            written.push(path);
        }
    }
    Ok(RunOutput { report, csv, svg, provenance, written })
}

fn render_svg(kind: ExperimentKind, report: &ConvergenceReport, r: usize) -> String {
    let series_a: Vec<(f64, f64)> = report
        .records
        .iter()
        .filter_map(|rec| rec.err_a.map(|e| (rec.h, e)))
        .collect();
    let series_b: Vec<(f64, f64)> = report
        .records
        .iter()
        .filter_map(|rec| rec.err_b.map(|e| (rec.h, e)))
        .collect();
    match kind {
        ExperimentKind::IntegrateAnnulus => {
            loglog_svg(&[("error".to_string(), series_a)], &[3.0, 4.0])
        }
        _ => loglog_svg(
            &[("L2".to_string(), series_a), ("H1".to_string(), series_b)],
            &[r as f64, r as f64 + 1.0],
        ),
    }
}

fn provenance_json(cfg: &ExperimentConfig, kind: ExperimentKind) -> String {
    let mut doc = serde_json::json!({
        "config": cfg,
        "effective_m": cfg.order(),
        "effective_base_h": cfg.base_h.unwrap_or(kind.default_base_h()),
        "crate_version": env!("CARGO_PKG_VERSION"),
    });
    if kind == ExperimentKind::IntegrateAnnulus {
        doc["reference_value"] = serde_json::json!(annulus_reference());
        doc["untruncated_quarter_cross_check"] =
            serde_json::json!(untruncated_quarter_annulus_value());
    }
    serde_json::to_string_pretty(&doc).expect("config serializes") + "\n"
}

fn run_integrate_level(
    cfg: &ExperimentConfig,
    method: &dyn CutIntegrator,
    m: usize,
    h: f64,
) -> Result<LevelRecord, ExperimentError> {
    let kind = ExperimentKind::IntegrateAnnulus;
    let mesh = Mesh::build_uniform(kind.bulk(), h)?;
    // The integration study isolates quadrature accuracy: the field is the
    // exact annulus level set.
    let field = LevelSetField::from(AnalyticLevelSet::annulus());
    let class = classify(&mesh, &field, 0.0, InsideSign::Below);
    let ctx = CutContext::new(&mesh, &field, 0.0, InsideSign::Below, m)
        .with_poly_exactness(m)
        .with_seed(cfg.seed);
    let result = integrate_domain(method, &ctx, &class, &mut annulus_integrand)?;
    let error = (result.value - annulus_reference()).abs();
    let mut note = None;
    if result.unconverged > 0 {
        note = Some(format!("{} unconverged MC cells", result.unconverged));
    }
    if result.fallbacks > 0 {
        let msg = format!("{} LP fallback components", result.fallbacks);
        note = Some(note.map_or(msg.clone(), |n| format!("{n}; {msg}")));
    }
    Ok(LevelRecord {
        h,
        err_a: Some(error),
        err_b: None,
        evals_total: result.f_evals,
        evals_cut: result.f_evals_cut,
        phi_evals: result.phi_evals,
        seconds: 0.0,
        note,
    })
}

fn run_poisson_level(
    cfg: &ExperimentConfig,
    method: &dyn CutIntegrator,
    m: usize,
    h: f64,
) -> Result<LevelRecord, ExperimentError> {
    let kind = ExperimentKind::PoissonDisc;
    let mesh = Arc::new(Mesh::build_uniform(kind.bulk(), h)?);
    let exact_phi = AnalyticLevelSet::circle();
    let field = LevelSetField::interpolate(&exact_phi, mesh.clone(), cfg.q)
        .map_err(CutError::LevelSet)?;
    let class = classify(&mesh, &field, 0.0, InsideSign::Below);
    let space = FeSpace::build(&mesh, cfg.r).map_err(FemError::Space)?;
    let mut opts = AssemblyOptions::new(m, cfg.r);
    opts.seed = cfg.seed;
    opts.stabilization = cfg.stabilize.then_some(1.0);

    let system = assemble_poisson(
        &mesh,
        &space,
        &field,
        &class,
        method,
        &opts,
        &|_| 1.0,
        &poisson_rhs,
    )?;
    let mut stats = system.stats;
    let sol = solve(&system).map_err(FemError::Solve)?;
    let solution = system.expand(&sol.x);
    let (l2, h1) = bulk_errors(
        &mesh,
        &space,
        &field,
        &class,
        method,
        m,
        opts.interior_exactness,
        cfg.seed,
        &solution,
        &poisson_exact,
        &poisson_exact_gradient,
        &mut stats,
    )?;
    let mut note = None;
    if sol.indefinite {
        note = Some(format!(
            "matrix not positive definite (pivot {:?})",
            sol.bad_pivot
        ));
    }
    Ok(LevelRecord {
        h,
        err_a: Some(l2),
        err_b: Some(h1),
        evals_total: stats.f_evals,
        evals_cut: stats.f_evals_cut,
        phi_evals: stats.phi_evals,
        seconds: 0.0,
        note,
    })
}

fn run_lb_level(
    cfg: &ExperimentConfig,
    method: &dyn CutIntegrator,
    m: usize,
    h: f64,
) -> Result<LevelRecord, ExperimentError> {
    let kind = ExperimentKind::LaplaceBeltramiCircle;
    let mesh = Arc::new(Mesh::build_uniform(kind.bulk(), h)?);
    let exact_phi = AnalyticLevelSet::circle();
    let field = LevelSetField::interpolate(&exact_phi, mesh.clone(), cfg.q)
        .map_err(CutError::LevelSet)?;
    let d = cfg.d_factor * h;
    let band = BandClassification::build(&mesh, &field, d);
    let space = FeSpace::build(&mesh, cfg.r).map_err(FemError::Space)?;
    let geometry = GeometryProvider::circle();
    let coeffs = NarrowBandCoefficients { field: &field, geometry: &geometry };
    let mut opts = AssemblyOptions::new(m, cfg.r);
    opts.seed = cfg.seed;
    opts.stabilization = cfg.stabilize.then_some(1.0);

    let system = assemble_narrowband(
        &mesh,
        &space,
        &band,
        &coeffs,
        method,
        &opts,
        &|_| 1.0,
        &lb_rhs_extension,
    )?;
    let stats: AssemblyStats = system.stats;
    let sol = solve(&system).map_err(FemError::Solve)?;
    let solution = system.expand(&sol.x);
    let (l2g, h1g) = surface_errors(
        &mesh,
        &space,
        &band,
        &solution,
        1.0,
        &lb_exact,
        &lb_exact_surface_gradient,
        h,
    )?;
    let mut note = None;
    if sol.indefinite {
        note = Some(format!(
            "matrix not positive definite (pivot {:?})",
            sol.bad_pivot
        ));
    }
    Ok(LevelRecord {
        h,
        err_a: Some(l2g),
        err_b: Some(h1g),
        evals_total: stats.f_evals,
        evals_cut: stats.f_evals_cut,
        phi_evals: stats.phi_evals,
        seconds: 0.0,
        note,
    })
}

/// Output of a method comparison.
#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub per_method: Vec<(String, ConvergenceReport)>,
    pub csv: String,
    pub written: Vec<PathBuf>,
}

/// Run the same sweep once per method and merge the results into a
/// method-tagged CSV mirroring the published table layout. The merged CSV
/// carries no timing column, so reruns with the same seed are
/// byte-identical.
pub fn compare(methods: &[String], base: &ExperimentConfig) -> Result<CompareOutput, ExperimentError> {
    if methods.is_empty() {
        return Err(cfg_err("methods", "at least one method is required"));
    }
    let mut per_method = Vec::new();
    for name in methods {
        let mut cfg = base.clone();
        cfg.method = name.clone();
        cfg.out = None;
        let out = run(&cfg)?;
        per_method.push((name.to_uppercase(), out.report));
    }

    let base_h = base.base_h_value()?;
    let mut csv = String::from("h");
    for (name, _) in &per_method {
        csv.push_str(&format!(",error_{name},rate_{name}"));
    }
    for (name, _) in &per_method {
        csv.push_str(&format!(",evals_{name}"));
    }
    csv.push('\n');
    for (row, i) in base.levels().enumerate() {
        let h = base_h * 0.5f64.powi(i as i32);
        csv.push_str(&format!("{h}"));
        for (_, report) in &per_method {
            match report.records.get(row) {
                Some(rec) => {
                    let err = rec.err_a.map_or(String::new(), |e| format!("{e:.6e}"));
                    let rate = if row == 0 {
                        String::new()
                    } else {
                        report
                            .fit_a
                            .per_step
                            .get(row - 1)
                            .copied()
                            .flatten()
                            .map_or(String::new(), |r| format!("{r:.2}"))
                    };
                    csv.push_str(&format!(",{err},{rate}"));
                }
                None => csv.push_str(",,"),
            }
        }
        for (_, report) in &per_method {
            match report.records.get(row) {
                Some(rec) => csv.push_str(&format!(",{}", rec.evals_total)),
                None => csv.push(','),
            }
        }
        csv.push('\n');
    }

    let mut written = Vec::new();
    if let Some(dir) = &base.out {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("compare.csv");
        std::fs::write(&path, &csv)?;
        written.push(path);
    }
    Ok(CompareOutput { per_method, csv, written })
}

/// Build the cut geometry of one cell of an experiment's coarsest mesh and
/// dump it as text and SVG (for debugging).
pub fn dump_cell(
    cfg: &ExperimentConfig,
    cell: usize,
) -> Result<(String, String), ExperimentError> {
    cfg.validate()?;
    let kind = cfg.kind()?;
    let h = cfg.base_h_value()? * 0.5f64.powi(cfg.i_min as i32);
    let mesh = Arc::new(Mesh::build_uniform(kind.bulk(), h)?);
    let (field, level) = match kind {
        ExperimentKind::IntegrateAnnulus => {
            (LevelSetField::from(AnalyticLevelSet::annulus()), 0.0)
        }
        ExperimentKind::PoissonDisc => (
            LevelSetField::interpolate(&AnalyticLevelSet::circle(), mesh.clone(), cfg.q)
                .map_err(CutError::LevelSet)?,
            0.0,
        ),
        ExperimentKind::LaplaceBeltramiCircle => (
            LevelSetField::interpolate(&AnalyticLevelSet::circle(), mesh.clone(), cfg.q)
                .map_err(CutError::LevelSet)?,
            cfg.d_factor * h,
        ),
    };
    if cell >= mesh.n_cells() {
        return Err(cfg_err("cell", format!("cell {cell} outside 0..{}", mesh.n_cells())));
    }
    let ctx = CutContext::new(&mesh, &field, level, InsideSign::Below, cfg.order())
        .with_seed(cfg.seed);
    let geom = crate::cut::build_cut_geometry_unchecked(&ctx, cell)?;
    let method = integrator(&cfg.method).map_err(|e| cfg_err("method", e.to_string()))?;
    let rule = method.quadrature(&geom, &ctx)?;
    let text = crate::cut::dump_cut_cell_text(&ctx, &geom, rule.as_ref());
    let svg = crate::cut::dump_cut_cell_svg(&ctx, &geom, rule.as_ref());
    Ok((text, svg))
}
