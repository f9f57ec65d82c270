//! Quadrature on the reference segment `[0,1]`, triangle and tetrahedron.

use crate::error::{Error, Result};
use crate::mesh::AffineMap;
use crate::Point;

/// Highest polynomial degree [`gauss_rule`] accepts.
pub const MAX_GAUSS_DEGREE: usize = 6;

/// Degree used for right-hand sides and error norms.
pub const DEFAULT_DEGREE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integral of `f` over the reference simplex.
    pub fn integrate<F: Fn(&Point) -> f64>(&self, f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p)).sum()
    }

    /// Integral of `f` over the image of the reference simplex under `map`;
    /// `f` receives the reference point and its physical image.
    pub fn integrate_on<F: Fn(&Point, &Point) -> f64>(&self, map: &AffineMap, f: F) -> f64 {
        map.det * self.points.iter().zip(&self.weights).map(|(p, w)| w * f(p, &map.apply(p))).sum::<f64>()
    }
}

/// Measure of the reference simplex: 1, 1/2, 1/6.
pub fn reference_measure(dim: usize) -> f64 {
    match dim {
        1 => 1.0,
        2 => 0.5,
        _ => 1.0 / 6.0,
    }
}

/// Vertices of the reference simplex.
pub fn reference_vertices(dim: usize) -> Vec<Point> {
    let mut v = vec![Point::zeros()];
    for k in 0..dim {
        let mut p = Point::zeros();
        p[k] = 1.0;
        v.push(p);
    }
    v
}

/// Vertex rule: nodes at the simplex vertices, equal weights `|Ê|/s`.
pub fn vertex_rule(dim: usize) -> Result<QuadratureRule> {
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidArgument(format!("vertex rule needs dimension 2 or 3, got {dim}")));
    }
    let points = reference_vertices(dim);
    let w = reference_measure(dim) / points.len() as f64;
    Ok(QuadratureRule { dim, weights: vec![w; points.len()], points, exactness_degree: 1 })
}

/// Gauss-Legendre nodes and weights on `[0,1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    for i in 0..m {
        // Newton iteration on P_m starting from the Chebyshev guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Rule on the reference simplex of dimension `dim` (1, 2 or 3) exact for
/// polynomials of total degree `degree`.
pub fn gauss_rule(dim: usize, degree: usize) -> Result<QuadratureRule> {
    if degree > MAX_GAUSS_DEGREE {
        return Err(Error::InvalidArgument(format!("quadrature degree {degree} unsupported (max {MAX_GAUSS_DEGREE})")));
    }
    let (points, weights) = match (dim, degree) {
        (1, _) => {
            let (x, w) = gauss_legendre(degree / 2 + 1);
            (x.into_iter().map(|t| Point::new(t, 0.0, 0.0)).collect(), w)
        }
        (2, 0 | 1) => (vec![Point::new(1.0 / 3.0, 1.0 / 3.0, 0.0)], vec![0.5]),
        (2, 2) => {
            (vec![Point::new(0.5, 0.0, 0.0), Point::new(0.5, 0.5, 0.0), Point::new(0.0, 0.5, 0.0)], vec![1.0 / 6.0; 3])
        }
        (2, _) => {
            let (x, w) = gauss_legendre((degree + 3) / 2);
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for (u, wu) in x.iter().zip(&w) {
                for (v, wv) in x.iter().zip(&w) {
                    points.push(Point::new(*u, v * (1.0 - u), 0.0));
                    weights.push(wu * wv * (1.0 - u));
                }
            }
            (points, weights)
        }
        (3, 0 | 1) => (vec![Point::new(0.25, 0.25, 0.25)], vec![1.0 / 6.0]),
        (3, 2) => {
            let a = (5.0 - 5f64.sqrt()) / 20.0;
            let b = (5.0 + 3.0 * 5f64.sqrt()) / 20.0;
            (
                vec![Point::new(a, a, a), Point::new(b, a, a), Point::new(a, b, a), Point::new(a, a, b)],
                vec![1.0 / 24.0; 4],
            )
        }
        (3, _) => {
            let (x, w) = gauss_legendre((degree + 4) / 2);
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for (u, wu) in x.iter().zip(&w) {
                for (v, wv) in x.iter().zip(&w) {
                    for (t, wt) in x.iter().zip(&w) {
                        points.push(Point::new(*u, v * (1.0 - u), t * (1.0 - u) * (1.0 - v)));
                        weights.push(wu * wv * wt * (1.0 - u).powi(2) * (1.0 - v));
                    }
                }
            }
            (points, weights)
        }
        _ => return Err(Error::InvalidArgument(format!("no quadrature for dimension {dim}"))),
    };
    Ok(QuadratureRule { dim, points, weights, exactness_degree: degree })
}
