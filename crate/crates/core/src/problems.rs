//! Test problems: manufactured solutions on the unit square and cube, the
//! locking benchmark, and the isotropic compliance algebra.
//!
//! Body forces are written out by hand from `f = div σ` with
//! `σ = 2μ ε(u) + λ tr(ε(u)) I`; for piecewise constant Lamé coefficients
//! this is `f = μ Δu + (λ + μ) ∇(div u)` on each material region.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fem_spaces::{self, RotationValue};
use crate::mesh::{FacetMarker, SimplicialMesh};
use crate::{Point, Tensor};

/// Isotropic compliance `Aσ = (σ - λ/(2μ + dλ) tr(σ) I) / 2μ` and its
/// inverse `A⁻¹τ = 2μ τ + λ tr(τ) I`, acting on all `d×d` tensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicCompliance {
    pub lambda: f64,
    pub mu: f64,
    pub dim: usize,
}

impl IsotropicCompliance {
    pub fn identity_d(&self) -> Tensor {
        let mut i = Tensor::zeros();
        for k in 0..self.dim {
            i[(k, k)] = 1.0;
        }
        i
    }

    /// Coefficient `λ/(2μ + dλ)` of the trace term.
    fn trace_coefficient(&self) -> f64 {
        self.lambda / (2.0 * self.mu + self.dim as f64 * self.lambda)
    }

    pub fn apply(&self, sigma: &Tensor) -> Tensor {
        (sigma - self.trace_coefficient() * sigma.trace() * self.identity_d()) / (2.0 * self.mu)
    }

    pub fn apply_inverse(&self, tau: &Tensor) -> Tensor {
        2.0 * self.mu * tau + self.lambda * tau.trace() * self.identity_d()
    }

    /// `A(e_r ⊗ p) : (e_s ⊗ q)` without forming tensors.
    pub fn pair_rows(&self, r: usize, p: &Point, s: usize, q: &Point) -> f64 {
        let rs = if r == s { p.dot(q) } else { 0.0 };
        (rs - self.trace_coefficient() * p[r] * q[s]) / (2.0 * self.mu)
    }
}

pub fn isotropic_compliance(lambda: f64, mu: f64, dim: usize) -> Result<IsotropicCompliance> {
    if dim != 2 && dim != 3 {
        return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
    }
    if !(mu > 0.0) || !(lambda > -2.0 * mu / dim as f64) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("Lamé parameters out of range: λ = {lambda}, μ = {mu}")));
    }
    Ok(IsotropicCompliance { lambda, mu, dim })
}

/// Lamé pair `(λ, μ)` from Young's modulus and Poisson's ratio.
pub fn lame_from_young_poisson(young: f64, nu: f64) -> (f64, f64) {
    (young * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), young / (2.0 * (1.0 + nu)))
}

type VectorFn = Arc<dyn Fn(&Point) -> Point + Send + Sync>;
type TensorFn = Arc<dyn Fn(&Point) -> Tensor + Send + Sync>;
type HessianFn = Arc<dyn Fn(&Point) -> [Tensor; 3] + Send + Sync>;
type TractionFn = Arc<dyn Fn(&Point, &Point) -> Point + Send + Sync>;
type LameFn = Arc<dyn Fn(&Point) -> (f64, f64) + Send + Sync>;
type MeshCheck = Arc<dyn Fn(&SimplicialMesh) -> Result<()> + Send + Sync>;

/// Closed-form displacement with its first and second derivatives; every
/// other field follows from these and the Lamé coefficients.
#[derive(Clone)]
pub struct ManufacturedSolution {
    pub dim: usize,
    displacement: VectorFn,
    /// `(∇u)_{ij} = ∂_j u_i`.
    gradient: TensorFn,
    /// `hessian[i][(j, k)] = ∂_j ∂_k u_i`.
    hessian: HessianFn,
    lame: LameFn,
}

impl ManufacturedSolution {
    pub fn new(
        dim: usize,
        displacement: impl Fn(&Point) -> Point + Send + Sync + 'static,
        gradient: impl Fn(&Point) -> Tensor + Send + Sync + 'static,
        hessian: impl Fn(&Point) -> [Tensor; 3] + Send + Sync + 'static,
        lame: impl Fn(&Point) -> (f64, f64) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            displacement: Arc::new(displacement),
            gradient: Arc::new(gradient),
            hessian: Arc::new(hessian),
            lame: Arc::new(lame),
        }
    }

    pub fn displacement(&self, x: &Point) -> Point {
        (self.displacement)(x)
    }

    pub fn displacement_gradient(&self, x: &Point) -> Tensor {
        (self.gradient)(x)
    }

    pub fn compliance(&self, x: &Point) -> IsotropicCompliance {
        let (lambda, mu) = (self.lame)(x);
        IsotropicCompliance { lambda, mu, dim: self.dim }
    }

    /// `σ = A⁻¹ ε(u)`.
    pub fn stress(&self, x: &Point) -> Tensor {
        let g = self.displacement_gradient(x);
        self.compliance(x).apply_inverse(&(0.5 * (g + g.transpose())))
    }

    /// `p = Ξ⁻¹(Skew ∇u)`.
    pub fn rotation(&self, x: &Point) -> RotationValue {
        let g = self.displacement_gradient(x);
        fem_spaces::xi_inv(&fem_spaces::skew(&g), self.dim).expect("skew part is skew")
    }

    /// `p̃ = Ξ⁻¹(A⁻¹ Skew ∇u) = 2μ p` for isotropic materials.
    pub fn scaled_rotation(&self, x: &Point) -> RotationValue {
        let g = self.displacement_gradient(x);
        let scaled = self.compliance(x).apply_inverse(&fem_spaces::skew(&g));
        fem_spaces::xi_inv(&scaled, self.dim).expect("A⁻¹ of a skew tensor is skew")
    }

    /// Central-difference divergence of the stress closure with step `h`.
    pub fn fd_divergence(&self, x: &Point, h: f64) -> Point {
        let mut f = Point::zeros();
        for j in 0..self.dim {
            let mut e = Point::zeros();
            e[j] = h;
            let ds = (self.stress(&(x + e)) - self.stress(&(x - e))) / (2.0 * h);
            for i in 0..self.dim {
                f[i] += ds[(i, j)];
            }
        }
        f
    }

    /// Checks the analytic body force against [`Self::fd_divergence`] at
    /// `points`, skipping points whose difference stencil crosses a material
    /// jump. Returns the largest relative discrepancy.
    pub fn check_body_force(&self, points: &[Point]) -> Result<f64> {
        const STEP: f64 = 1e-5;
        const TOL: f64 = 1e-6;
        let mut worst: f64 = 0.0;
        for x in points {
            let lame = (self.lame)(x);
            let smooth = (0..self.dim).all(|j| {
                let mut e = Point::zeros();
                e[j] = 2.0 * STEP;
                (self.lame)(&(x + e)) == lame && (self.lame)(&(x - e)) == lame
            });
            if !smooth {
                continue;
            }
            let f = self.body_force(x);
            let scale = f.norm().max(self.stress(x).norm()).max(1.0);
            let err = (f - self.fd_divergence(x, STEP)).norm() / scale;
            worst = worst.max(err);
            if !(err <= TOL) {
                return Err(Error::Validation(format!(
                    "body force disagrees with the divergence of the stress at {:?}: relative {err:.2e}",
                    x.as_slice()
                )));
            }
        }
        Ok(worst)
    }

    /// `f = div σ = μ Δu + (λ + μ) ∇(div u)`, valid where the Lamé pair is
    /// locally constant.
    pub fn body_force(&self, x: &Point) -> Point {
        let (lambda, mu) = (self.lame)(x);
        let h = (self.hessian)(x);
        let d = self.dim;
        let mut f = Point::zeros();
        for i in 0..d {
            let laplace: f64 = (0..d).map(|j| h[i][(j, j)]).sum();
            let grad_div: f64 = (0..d).map(|j| h[j][(j, i)]).sum();
            f[i] = mu * laplace + (lambda + mu) * grad_div;
        }
        f
    }
}

/// A side of the unit square or cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
    Front,
    Back,
}

impl Side {
    pub fn all(dim: usize) -> &'static [Side] {
        if dim == 2 {
            &[Side::Left, Side::Right, Side::Bottom, Side::Top]
        } else {
            &[Side::Left, Side::Right, Side::Bottom, Side::Top, Side::Front, Side::Back]
        }
    }

    pub fn contains(self, x: &Point) -> bool {
        let tol = 1e-10;
        match self {
            Side::Left => x.x.abs() < tol,
            Side::Right => (x.x - 1.0).abs() < tol,
            Side::Bottom => x.y.abs() < tol,
            Side::Top => (x.y - 1.0).abs() < tol,
            Side::Front => x.z.abs() < tol,
            Side::Back => (x.z - 1.0).abs() < tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum BoundaryKind {
    Dirichlet,
    Traction,
}

/// Boundary conditions per side of the unit domain.
#[derive(Clone)]
pub struct BcSpec {
    pub sides: Vec<(Side, BoundaryKind)>,
    /// Displacement `g` on Dirichlet sides.
    pub dirichlet: VectorFn,
    /// Prescribed `σ n` on traction sides, given the point and the outward
    /// normal of the facet (which disambiguates corners).
    pub traction: Option<TractionFn>,
}

impl BcSpec {
    pub fn all_dirichlet(dim: usize, g: VectorFn) -> Self {
        Self {
            sides: Side::all(dim).iter().map(|&s| (s, BoundaryKind::Dirichlet)).collect(),
            dirichlet: g,
            traction: None,
        }
    }

    pub fn kind_at(&self, x: &Point) -> Option<BoundaryKind> {
        self.sides.iter().find(|(s, _)| s.contains(x)).map(|&(_, k)| k)
    }

    /// Marks every boundary facet of `mesh` from its side.
    pub fn apply(&self, mesh: &mut SimplicialMesh) -> Result<()> {
        for f in 0..mesh.num_facets() {
            if mesh.is_boundary_facet(f) && self.kind_at(&mesh.facet_centroid(f)).is_none() {
                return Err(Error::Config(format!(
                    "boundary facet {f} at {:?} lies on no side of the unit domain",
                    mesh.facet_centroid(f).as_slice()
                )));
            }
        }
        mesh.mark_boundary(|c, _| match self.kind_at(c) {
            Some(BoundaryKind::Traction) => FacetMarker::Neumann,
            _ => FacetMarker::Dirichlet,
        });
        let has_dirichlet = (0..mesh.num_facets()).any(|f| mesh.facet_marker(f) == FacetMarker::Dirichlet);
        if !has_dirichlet {
            return Err(Error::Config("the Dirichlet boundary is empty".into()));
        }
        let has_traction = (0..mesh.num_facets()).any(|f| mesh.facet_marker(f) == FacetMarker::Neumann);
        if has_traction && self.traction.is_none() {
            return Err(Error::Config("traction facets present but no traction data given".into()));
        }
        Ok(())
    }
}

/// Everything a solve needs: material, loads, boundary data and, when known,
/// the exact solution.
#[derive(Clone)]
pub struct Problem {
    pub name: String,
    pub dim: usize,
    lame: LameFn,
    body_force: VectorFn,
    pub bc: BcSpec,
    pub exact: Option<ManufacturedSolution>,
    /// Extra mesh requirement (material interfaces aligned with facets).
    mesh_check: Option<MeshCheck>,
}

impl Problem {
    pub fn from_manufactured(name: &str, exact: ManufacturedSolution) -> Self {
        let dim = exact.dim;
        let e1 = exact.clone();
        let e2 = exact.clone();
        Self {
            name: name.to_string(),
            dim,
            lame: exact.lame.clone(),
            body_force: Arc::new(move |x| e1.body_force(x)),
            bc: BcSpec::all_dirichlet(dim, Arc::new(move |x| e2.displacement(x))),
            exact: Some(exact),
            mesh_check: None,
        }
    }

    pub fn lame(&self, x: &Point) -> (f64, f64) {
        (self.lame)(x)
    }

    pub fn body_force(&self, x: &Point) -> Point {
        (self.body_force)(x)
    }

    pub fn dirichlet(&self, x: &Point) -> Point {
        (self.bc.dirichlet)(x)
    }

    pub fn traction(&self, x: &Point, normal: &Point) -> Option<Point> {
        self.bc.traction.as_ref().map(|t| t(x, normal))
    }

    /// Checks dimension and problem-specific mesh requirements, then marks
    /// the boundary.
    pub fn prepare_mesh(&self, mesh: &mut SimplicialMesh) -> Result<()> {
        if mesh.dim() != self.dim {
            return Err(Error::Config(format!("{} needs a {}D mesh", self.name, self.dim)));
        }
        if let Some(check) = &self.mesh_check {
            check(mesh)?;
        }
        self.bc.apply(mesh)
    }
}

/// 2D: `u = (cos πx sin 2πy, cos πy sin πx)`, `λ = 123`, `μ = 79.3`,
/// Dirichlet data from the trace of `u`.
pub fn example1() -> Problem {
    let exact = ManufacturedSolution {
        dim: 2,
        displacement: Arc::new(|x| {
            Point::new((PI * x.x).cos() * (2.0 * PI * x.y).sin(), (PI * x.y).cos() * (PI * x.x).sin(), 0.0)
        }),
        gradient: Arc::new(|x| {
            let (sx, cx) = (PI * x.x).sin_cos();
            let (sy, cy) = (PI * x.y).sin_cos();
            let (s2y, c2y) = (2.0 * PI * x.y).sin_cos();
            Tensor::new(-PI * sx * s2y, 2.0 * PI * cx * c2y, 0.0, PI * cy * cx, -PI * sy * sx, 0.0, 0.0, 0.0, 0.0)
        }),
        hessian: Arc::new(|x| {
            let (sx, cx) = (PI * x.x).sin_cos();
            let (sy, cy) = (PI * x.y).sin_cos();
            let (s2y, c2y) = (2.0 * PI * x.y).sin_cos();
            let p2 = PI * PI;
            let u1 = cx * s2y;
            let u2 = cy * sx;
            let h1 = Tensor::new(
                -p2 * u1,
                -2.0 * p2 * sx * c2y,
                0.0,
                -2.0 * p2 * sx * c2y,
                -4.0 * p2 * u1,
                0.0,
                0.0,
                0.0,
                0.0,
            );
            let h2 = Tensor::new(-p2 * u2, -p2 * sy * cx, 0.0, -p2 * sy * cx, -p2 * u2, 0.0, 0.0, 0.0, 0.0);
            [h1, h2, Tensor::zeros()]
        }),
        lame: Arc::new(|_| (123.0, 79.3)),
    };
    Problem::from_manufactured("example1", exact)
}

/// 3D: `u = (0, -(eˣ-1) g₂(y,z), -(eˣ-1) g₃(y,z))` with `g₂, g₃` affine
/// (a rotation by π/12 about the cube axis), `λ = μ = 100`.
pub fn example2() -> Problem {
    let (s, c) = (PI / 12.0).sin_cos();
    let g2 = move |x: &Point| x.y - c * (x.y - 0.5) + s * (x.z - 0.5) - 0.5;
    let g3 = move |x: &Point| x.z - s * (x.y - 0.5) - c * (x.z - 0.5) - 0.5;
    let exact = ManufacturedSolution {
        dim: 3,
        displacement: Arc::new(move |x| {
            let a = x.x.exp() - 1.0;
            Point::new(0.0, -a * g2(x), -a * g3(x))
        }),
        gradient: Arc::new(move |x| {
            let e = x.x.exp();
            let a = e - 1.0;
            Tensor::new(0.0, 0.0, 0.0, -e * g2(x), -a * (1.0 - c), -a * s, -e * g3(x), a * s, -a * (1.0 - c))
        }),
        hessian: Arc::new(move |x| {
            let e = x.x.exp();
            let h2 = Tensor::new(-e * g2(x), -e * (1.0 - c), -e * s, -e * (1.0 - c), 0.0, 0.0, -e * s, 0.0, 0.0);
            let h3 = Tensor::new(-e * g3(x), e * s, -e * (1.0 - c), e * s, 0.0, 0.0, -e * (1.0 - c), 0.0, 0.0);
            [Tensor::zeros(), h2, h3]
        }),
        lame: Arc::new(|_| (100.0, 100.0)),
    };
    Problem::from_manufactured("example2", exact)
}

/// Indicator of the center block `(1/3, 2/3)²`.
pub fn center_block(x: &Point) -> bool {
    x.x.min(x.y) > 1.0 / 3.0 && x.x.max(x.y) < 2.0 / 3.0
}

/// 2D heterogeneous: `λ = μ = κ` in the center block and 1 elsewhere,
/// `u = sin 3πx sin 3πy (1, 1) / (λ = μ)`. The stress is continuous and
/// independent of `κ`; the rotation jumps across the block boundary.
pub fn example3(kappa: f64) -> Result<Problem> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("κ must be positive, got {kappa}")));
    }
    let k = move |x: &Point| if center_block(x) { kappa } else { 1.0 };
    let exact = ManufacturedSolution {
        dim: 2,
        displacement: Arc::new(move |x| {
            let v = (3.0 * PI * x.x).sin() * (3.0 * PI * x.y).sin() / k(x);
            Point::new(v, v, 0.0)
        }),
        gradient: Arc::new(move |x| {
            let (sx, cx) = (3.0 * PI * x.x).sin_cos();
            let (sy, cy) = (3.0 * PI * x.y).sin_cos();
            let gx = 3.0 * PI * cx * sy / k(x);
            let gy = 3.0 * PI * sx * cy / k(x);
            Tensor::new(gx, gy, 0.0, gx, gy, 0.0, 0.0, 0.0, 0.0)
        }),
        hessian: Arc::new(move |x| {
            let (sx, cx) = (3.0 * PI * x.x).sin_cos();
            let (sy, cy) = (3.0 * PI * x.y).sin_cos();
            let p2 = 9.0 * PI * PI / k(x);
            let h = Tensor::new(-p2 * sx * sy, p2 * cx * cy, 0.0, p2 * cx * cy, -p2 * sx * sy, 0.0, 0.0, 0.0, 0.0);
            [h, h, Tensor::zeros()]
        }),
        lame: Arc::new(move |x| (k(x), k(x))),
    };
    let mut problem = Problem::from_manufactured("example3", exact);
    problem.mesh_check = Some(Arc::new(check_center_block_alignment));
    Ok(problem)
}

/// Every cell must lie entirely inside or entirely outside the center block.
pub fn check_center_block_alignment(mesh: &SimplicialMesh) -> Result<()> {
    let tol = 1e-12;
    let inside_closed = |p: &Point| {
        p.x >= 1.0 / 3.0 - tol && p.x <= 2.0 / 3.0 + tol && p.y >= 1.0 / 3.0 - tol && p.y <= 2.0 / 3.0 + tol
    };
    let inside_open =
        |p: &Point| p.x > 1.0 / 3.0 + tol && p.x < 2.0 / 3.0 - tol && p.y > 1.0 / 3.0 + tol && p.y < 2.0 / 3.0 - tol;
    for c in 0..mesh.num_cells() {
        let centroid = mesh.cell_centroid(c);
        let ok = if center_block(&centroid) {
            mesh.cell(c).iter().all(|&v| inside_closed(mesh.vertex(v)))
        } else {
            mesh.cell(c).iter().all(|&v| !inside_open(mesh.vertex(v)))
        };
        if !ok {
            return Err(Error::Config(format!("cell {c} straddles the material interface; use n divisible by 3")));
        }
    }
    Ok(())
}

pub const LOCKING_YOUNG: f64 = 1e5;

/// Locking benchmark on the unit square: `u = 0` at `y = 0`, traction free at
/// `x = 0` and `x = 1`, unit shear traction `σ n = (1, 0)` at `y = 1`, no body
/// force, `E = 10⁵`. No exact solution.
pub fn example4(nu: f64) -> Result<Problem> {
    if !(nu > 0.0 && nu < 0.5) {
        return Err(Error::InvalidArgument(format!("Poisson ratio must lie in (0, 0.5), got {nu}")));
    }
    let (lambda, mu) = lame_from_young_poisson(LOCKING_YOUNG, nu);
    Ok(Problem {
        name: "example4".into(),
        dim: 2,
        lame: Arc::new(move |_| (lambda, mu)),
        body_force: Arc::new(|_| Point::zeros()),
        bc: BcSpec {
            sides: vec![
                (Side::Bottom, BoundaryKind::Dirichlet),
                (Side::Left, BoundaryKind::Traction),
                (Side::Right, BoundaryKind::Traction),
                (Side::Top, BoundaryKind::Traction),
            ],
            dirichlet: Arc::new(|_| Point::zeros()),
            traction: Some(Arc::new(|_, n| if n.y > 0.5 { Point::new(1.0, 0.0, 0.0) } else { Point::zeros() })),
        },
        exact: None,
        mesh_check: None,
    })
}
