//! Reference quadrature rules: Gauss-Legendre on the unit interval and
//! symmetric positive-weight rules on the unit triangle, with affine
//! mapping to physical segments and cells.
//!
//! Triangle rules up to degree 8 use tabulated symmetric coefficients;
//! their moment exactness is verified by tests against the analytic
//! moments a! b! / (a+b+2)!. Degrees 9 and 10 are produced by a
//! symmetrized tensor rule on the collapsed square.

use crate::geom::{triangle_area, Vec2};
use thiserror::Error;

/// Reference triangle vertices: (0,0), (1,0), (0,1).
pub const REF_TRIANGLE: [Vec2; 3] = [
    Vec2 { x: 0.0, y: 0.0 },
    Vec2 { x: 1.0, y: 0.0 },
    Vec2 { x: 0.0, y: 1.0 },
];

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("unsupported 1D node count {0}; supported range is 1..=10")]
    UnsupportedNodeCount(usize),
    #[error("unsupported triangle exactness degree {0}; supported range is 1..=10")]
    UnsupportedExactness(usize),
    #[error("degenerate cell: measure {0:.3e}")]
    DegenerateCell(f64),
}

/// Gauss-Legendre rule on the unit interval [0, 1].
#[derive(Debug, Clone)]
pub struct GaussRule1d {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Highest polynomial degree integrated exactly (2P - 1).
    pub exactness: usize,
}

impl GaussRule1d {
    /// P-point Gauss-Legendre rule on [0, 1], exact for degree 2P - 1.
    ///
    /// Nodes are computed by Newton iteration on the Legendre polynomial,
    /// so no tabulated coefficients are involved.
    pub fn new(p: usize) -> Result<Self, QuadratureError> {
        if p == 0 || p > 10 {
            return Err(QuadratureError::UnsupportedNodeCount(p));
        }
        let mut nodes = Vec::with_capacity(p);
        let mut weights = Vec::with_capacity(p);
        for k in 1..=p {
            // Standard initial guess on [-1, 1].
            let mut x = (std::f64::consts::PI * (k as f64 - 0.25) / (p as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (v, d) = legendre_with_derivative(p, x);
                let dx = v / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(p, x);
            let w = 2.0 / ((1.0 - x * x) * d * d);
            nodes.push(0.5 * (1.0 - x)); // reversed so nodes come out increasing
            weights.push(0.5 * w);
        }
        Ok(GaussRule1d {
            nodes,
            weights,
            exactness: 2 * p - 1,
        })
    }

    /// Smallest rule exact for polynomials of the given degree.
    pub fn with_exactness(degree: usize) -> Result<Self, QuadratureError> {
        GaussRule1d::new(degree / 2 + 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrate a scalar function over [0, 1].
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    /// Nodes and weights mapped to the physical segment (a, b); weights are
    /// scaled by the segment length.
    pub fn map_to_segment(&self, a: Vec2, b: Vec2) -> Result<MappedRule, QuadratureError> {
        let len = a.dist(b);
        if len == 0.0 || !len.is_finite() {
            return Err(QuadratureError::DegenerateCell(len));
        }
        let points = self.nodes.iter().map(|&t| a + (b - a) * t).collect();
        let weights = self.weights.iter().map(|&w| w * len).collect();
        Ok(MappedRule { points, weights })
    }
}

/// Legendre polynomial P_n and its derivative at x, by the three-term
/// recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Symmetric rule on the reference triangle with positive weights.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    /// Reference coordinates.
    pub nodes: Vec<Vec2>,
    /// Weights summing to the reference area 1/2.
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl TriangleRule {
    /// Rule exact for all polynomials of total degree <= m, 1 <= m <= 10.
    pub fn with_exactness(m: usize) -> Result<Self, QuadratureError> {
        let (degree, orbits): (usize, &[Orbit]) = match m {
            0 | 1 => (1, DEG1),
            2 => (2, DEG2),
            3 | 4 => (4, DEG4),
            5 => (5, DEG5),
            6 => (6, DEG6),
            7 | 8 => (8, DEG8),
            9 | 10 => return Ok(symmetrized_collapsed_rule(m)),
            _ => return Err(QuadratureError::UnsupportedExactness(m)),
        };
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for orbit in orbits {
            orbit.expand(&mut nodes, &mut weights);
        }
        Ok(TriangleRule {
            nodes,
            weights,
            exactness: degree,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Affine image on the physical triangle; weights scale with the
    /// triangle area.
    pub fn map_to_triangle(&self, v: [Vec2; 3]) -> Result<MappedRule, QuadratureError> {
        let area = triangle_area(v[0], v[1], v[2]);
        if area == 0.0 || !area.is_finite() {
            return Err(QuadratureError::DegenerateCell(area));
        }
        let scale = area / 0.5;
        let points = self
            .nodes
            .iter()
            .map(|&p| v[0] + (v[1] - v[0]) * p.x + (v[2] - v[0]) * p.y)
            .collect();
        let weights = self.weights.iter().map(|&w| w * scale).collect();
        Ok(MappedRule { points, weights })
    }
}

/// A rule mapped to physical space. Weights carry the cell measure (and a
/// sign when the mapping is orientation-reversing).
#[derive(Debug, Clone, Default)]
pub struct MappedRule {
    pub points: Vec<Vec2>,
    pub weights: Vec<f64>,
}

impl MappedRule {
    pub fn integrate(&self, mut f: impl FnMut(Vec2) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| w * f(p))
            .sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// One symmetry orbit of a triangle rule in barycentric coordinates.
/// `weight` is normalized so all orbit weights of a rule sum to 1; expansion
/// rescales to the reference area 1/2.
enum Orbit {
    Centroid(f64),
    /// Permutations of (a, b, b) with a = 1 - 2b.
    Three { a: f64, weight: f64 },
    /// All six permutations of (a, b, c).
    Six { a: f64, b: f64, weight: f64 },
}

impl Orbit {
    fn expand(&self, nodes: &mut Vec<Vec2>, weights: &mut Vec<f64>) {
        let mut push = |l1: f64, l2: f64, w: f64| {
            // Barycentric (l0, l1, l2) -> reference (x, y) = (l1, l2).
            nodes.push(Vec2::new(l1, l2));
            weights.push(0.5 * w);
        };
        match *self {
            Orbit::Centroid(w) => push(1.0 / 3.0, 1.0 / 3.0, w),
            Orbit::Three { a, weight } => {
                let b = 0.5 * (1.0 - a);
                push(b, b, weight);
                push(a, b, weight);
                push(b, a, weight);
            }
            Orbit::Six { a, b, weight } => {
                let c = 1.0 - a - b;
                for (l1, l2) in [(b, c), (c, b), (a, c), (c, a), (a, b), (b, a)] {
                    push(l1, l2, weight);
                }
            }
        }
    }
}

const DEG1: &[Orbit] = &[Orbit::Centroid(1.0)];

const DEG2: &[Orbit] = &[Orbit::Three {
    a: 2.0 / 3.0,
    weight: 1.0 / 3.0,
}];

const DEG4: &[Orbit] = &[
    Orbit::Three {
        a: 0.108103018168070,
        weight: 0.223381589678011,
    },
    Orbit::Three {
        a: 0.816847572980459,
        weight: 0.109951743655322,
    },
];

const DEG5: &[Orbit] = &[
    Orbit::Centroid(0.225),
    Orbit::Three {
        a: 0.059715871789770,
        weight: 0.132394152788506,
    },
    Orbit::Three {
        a: 0.797426985353087,
        weight: 0.125939180544827,
    },
];

const DEG6: &[Orbit] = &[
    Orbit::Three {
        a: 0.501426509658179,
        weight: 0.116786275726379,
    },
    Orbit::Three {
        a: 0.873821971016996,
        weight: 0.050844906370207,
    },
    Orbit::Six {
        a: 0.053145049844816,
        b: 0.310352451033785,
        weight: 0.082851075618374,
    },
];

const DEG8: &[Orbit] = &[
    Orbit::Centroid(0.144315607677787),
    Orbit::Three {
        a: 0.081414823414554,
        weight: 0.095091634413923,
    },
    Orbit::Three {
        a: 0.658861384496480,
        weight: 0.103217370534718,
    },
    Orbit::Three {
        a: 0.898905543365938,
        weight: 0.032458497623198,
    },
    Orbit::Six {
        a: 0.008394777409958,
        b: 0.263112829634638,
        weight: 0.027230314174435,
    },
];

/// High-degree rule built from a tensor Gauss rule on the collapsed square
/// (x, y) = (u, v(1-u)), averaged over the six triangle symmetries so the
/// result is symmetric. All weights stay positive.
fn symmetrized_collapsed_rule(m: usize) -> TriangleRule {
    let n = m + 1; // 2n - 1 >= 2m + 1 covers the collapsed-degree increase
    let g = GaussRule1d::new(n).expect("n <= 11 is always constructible");
    let mut nodes = Vec::with_capacity(6 * n * n);
    let mut weights = Vec::with_capacity(6 * n * n);
    for (iu, &u) in g.nodes.iter().enumerate() {
        for (iv, &v) in g.nodes.iter().enumerate() {
            let w = g.weights[iu] * g.weights[iv] * (1.0 - u) / 6.0;
            let (x, y) = (u, v * (1.0 - u));
            let l = [1.0 - x - y, x, y];
            for perm in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                nodes.push(Vec2::new(l[perm[1]], l[perm[2]]));
                weights.push(w);
            }
        }
    }
    TriangleRule {
        nodes,
        weights,
        exactness: m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Analytic moment of x^a y^b over the reference triangle.
    fn triangle_moment(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn gauss_one_point_is_midpoint() {
        let g = GaussRule1d::new(1).unwrap();
        assert_eq!(g.nodes, vec![0.5]);
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn gauss_two_point_classical_values() {
        let g = GaussRule1d::new(2).unwrap();
        let d = 1.0 / (2.0 * 3.0_f64.sqrt());
        assert_relative_eq!(g.nodes[0], 0.5 - d, epsilon = 1e-15);
        assert_relative_eq!(g.nodes[1], 0.5 + d, epsilon = 1e-15);
        assert_relative_eq!(g.weights[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(g.weights[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gauss_three_point_integrates_quintic() {
        let g = GaussRule1d::new(3).unwrap();
        let val = g.integrate(|x| x.powi(5));
        assert_relative_eq!(val, 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn gauss_monomial_exactness_all_supported_counts() {
        for p in 1..=10 {
            let g = GaussRule1d::new(p).unwrap();
            assert_relative_eq!(g.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for k in 0..=g.exactness {
                let val = g.integrate(|x| x.powi(k as i32));
                assert_relative_eq!(val, 1.0 / (k as f64 + 1.0), epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn gauss_rejects_out_of_range() {
        assert!(GaussRule1d::new(0).is_err());
        assert!(GaussRule1d::new(11).is_err());
    }

    #[test]
    fn triangle_centroid_rule() {
        let r = TriangleRule::with_exactness(1).unwrap();
        assert_eq!(r.len(), 1);
        assert_relative_eq!(r.weights[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(r.nodes[0].x, 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn triangle_moment_exactness_all_degrees() {
        for m in 1..=10usize {
            let r = TriangleRule::with_exactness(m).unwrap();
            assert_relative_eq!(r.weights.iter().sum::<f64>(), 0.5, epsilon = 1e-14);
            for a in 0..=m as u32 {
                for b in 0..=(m as u32 - a) {
                    let val: f64 = r
                        .nodes
                        .iter()
                        .zip(&r.weights)
                        .map(|(p, w)| w * p.x.powi(a as i32) * p.y.powi(b as i32))
                        .sum();
                    assert_relative_eq!(
                        val,
                        triangle_moment(a, b),
                        epsilon = 1e-13,
                        max_relative = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn triangle_weights_strictly_positive() {
        for m in 1..=10usize {
            let r = TriangleRule::with_exactness(m).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0), "degree {m}");
        }
    }

    #[test]
    fn triangle_degree5_weight_sum_is_half() {
        let r = TriangleRule::with_exactness(5).unwrap();
        let val: f64 = r.weights.iter().sum();
        assert_relative_eq!(val, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn mapped_identity_is_identity() {
        let r = TriangleRule::with_exactness(4).unwrap();
        let mapped = r.map_to_triangle(REF_TRIANGLE).unwrap();
        for (a, b) in r.nodes.iter().zip(&mapped.points) {
            assert_relative_eq!(a.x, b.x, epsilon = 1e-15);
            assert_relative_eq!(a.y, b.y, epsilon = 1e-15);
        }
        for (a, b) in r.weights.iter().zip(&mapped.weights) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn mapped_centroid_rule_on_scaled_triangle() {
        let r = TriangleRule::with_exactness(1).unwrap();
        let v = [Vec2::new(0.0, 0.0), Vec2::new(2.0, 0.0), Vec2::new(0.0, 2.0)];
        let mapped = r.map_to_triangle(v).unwrap();
        assert_relative_eq!(mapped.points[0].x, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(mapped.points[0].y, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(mapped.weights[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn mapped_rule_matches_centroid_formula() {
        // Integral of x + y over a triangle equals area * (centroid_x + centroid_y).
        let v = [Vec2::new(0.3, -0.2), Vec2::new(1.7, 0.4), Vec2::new(0.5, 1.1)];
        let area = triangle_area(v[0], v[1], v[2]);
        let centroid = (v[0] + v[1] + v[2]) / 3.0;
        let r = TriangleRule::with_exactness(2).unwrap();
        let val = r.map_to_triangle(v).unwrap().integrate(|p| p.x + p.y);
        assert_relative_eq!(val, area * (centroid.x + centroid.y), epsilon = 1e-14);
    }

    #[test]
    fn degenerate_cell_rejected() {
        let r = TriangleRule::with_exactness(1).unwrap();
        let v = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        assert!(matches!(
            r.map_to_triangle(v),
            Err(QuadratureError::DegenerateCell(_))
        ));
    }
}
