//! Numerical integration over implicitly defined 2D domains and higher-order
//! unfitted finite element methods built on it.
//!
//! A domain is described by a level-set field on a uniform background
//! triangulation. Cells cut by the interface are integrated by one of four
//! interchangeable strategies, each registered by name and selectable at
//! runtime:
//!
//! * `mc` — Monte-Carlo sampling over a strip around the interface,
//! * `st` — sub-triangulation of the curvilinear remainder,
//! * `mf` — moment fitting with a divergence-free basis,
//! * `lp` — local quasi-parametrization of the interface.
//!
//! On top of the quadrature layer sit unfitted finite element solvers for a
//! Neumann Poisson problem on a level-set domain and a narrow-band method
//! for the Laplace-Beltrami equation on a level-set surface, plus the
//! convergence-study harness driving the `levelquad` command line tool.

pub mod analysis;
pub mod cut;
pub mod experiments;
pub mod fem;
pub mod geom;
pub mod levelset;
pub mod mesh;
pub mod quadrature;
pub mod space;

pub use geom::{Rect, Vec2};
pub use levelset::{AnalyticLevelSet, GeometryProvider, LevelSetField};
pub use mesh::{CellClassification, CellTag, InsideSign, Mesh};
