//! Finite element spaces: `(BDM1)^d` stress with normal-trace degrees of
//! freedom at facet vertices, `(P0)^d` displacement, and the reduced rotation
//! `p = Ξ⁻¹(γ)` in `P0` or continuous `P1`.
//!
//! A stress degree of freedom `(f, v, r)` is the `r`-th component of `σ n_f`
//! at vertex `v` of facet `f`, where `n_f` is the global unit normal. Inside a
//! cell the basis function of this DOF is `λ_v(x) e_r ⊗ q`, with `q` dual to
//! the normals of the cell facets meeting at `v`; it vanishes at every other
//! vertex, which is what makes the vertex quadrature local.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::mesh::{self, AffineMap, FacetMarker, SimplicialMesh};
use crate::{Point, Tensor};

/// Reduced rotation value: a scalar in 2D (first component), a 3-vector in 3D.
pub type RotationValue = nalgebra::Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Method {
    /// Piecewise constant rotation, exact stress-rotation coupling.
    Msmfe0,
    /// Continuous linear rotation, vertex quadrature for the coupling.
    Msmfe1,
    /// MSMFE-1 with the compliance-scaled rotation `p̃ = Ξ⁻¹(A⁻¹γ)`.
    Msmfe1Scaled,
}

impl Method {
    pub fn rotation_variant(self) -> RotationVariant {
        match self {
            Method::Msmfe0 => RotationVariant::PerCell,
            Method::Msmfe1 | Method::Msmfe1Scaled => RotationVariant::PerVertex,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Msmfe0 => "msmfe0",
            Method::Msmfe1 => "msmfe1",
            Method::Msmfe1Scaled => "msmfe1-scaled",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msmfe0" => Ok(Method::Msmfe0),
            "msmfe1" => Ok(Method::Msmfe1),
            "msmfe1-scaled" => Ok(Method::Msmfe1Scaled),
            _ => Err(Error::InvalidArgument(format!("unknown method `{s}`"))),
        }
    }
}

/// Number of reduced rotation components, `d(d-1)/2`.
pub fn rotation_components(dim: usize) -> usize {
    dim * (dim - 1) / 2
}

/// Asymmetry `as(τ)`: `τ12 - τ21` in 2D and
/// `(τ32 - τ23, τ13 - τ31, τ21 - τ12)` in 3D, so that
/// `τ : Ξ(p) = as(τ) · p` for every `τ` and `p`.
pub fn asym(tensor: &Tensor, dim: usize) -> RotationValue {
    if dim == 2 {
        RotationValue::new(tensor[(0, 1)] - tensor[(1, 0)], 0.0, 0.0)
    } else {
        RotationValue::new(
            tensor[(2, 1)] - tensor[(1, 2)],
            tensor[(0, 2)] - tensor[(2, 0)],
            tensor[(1, 0)] - tensor[(0, 1)],
        )
    }
}

/// `Ξ(p)`: the skew tensor `(0 p; -p 0)` in 2D, and in 3D the matrix with
/// rows `(0, -p3, p2)`, `(p3, 0, -p1)`, `(-p2, p1, 0)`.
pub fn xi(p: &RotationValue, dim: usize) -> Tensor {
    if dim == 2 {
        Tensor::new(0.0, p[0], 0.0, -p[0], 0.0, 0.0, 0.0, 0.0, 0.0)
    } else {
        Tensor::new(0.0, -p[2], p[1], p[2], 0.0, -p[0], -p[1], p[0], 0.0)
    }
}

/// Inverse of [`xi`]. Fails on input that is not skew-symmetric.
pub fn xi_inv(skew: &Tensor, dim: usize) -> Result<RotationValue> {
    let scale = skew.abs().max().max(1.0);
    if (skew + skew.transpose()).abs().max() > 1e-12 * scale {
        return Err(Error::InvalidArgument("tensor is not skew-symmetric".into()));
    }
    Ok(if dim == 2 {
        RotationValue::new(skew[(0, 1)], 0.0, 0.0)
    } else {
        RotationValue::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)])
    })
}

/// Skew part `(τ - τᵀ)/2`.
pub fn skew(tensor: &Tensor) -> Tensor {
    0.5 * (tensor - tensor.transpose())
}

/// Tensor `χ` with `χ n_j = values_j` for the `dim` given normals.
pub fn vertex_tensor(dim: usize, normals: &[Point], values: &[Point]) -> Result<Tensor> {
    let mut n = Tensor::identity();
    let mut v = Tensor::zeros();
    for j in 0..dim {
        n.set_column(j, &normals[j]);
        v.set_column(j, &values[j]);
    }
    let det = if dim == 2 { n[(0, 0)] * n[(1, 1)] - n[(0, 1)] * n[(1, 0)] } else { n.determinant() };
    if det.abs() < 1e-12 {
        return Err(Error::DegenerateGeometry("facet normals at a vertex are linearly dependent".into()));
    }
    let inv = n.try_inverse().ok_or_else(|| Error::DegenerateGeometry("singular normal system".into()))?;
    Ok(v * inv)
}

/// Vertex tensor at local vertex `a` of cell `c` from the normal values on
/// the cell facets meeting there, taken in increasing local-facet order and
/// measured against the global facet normals.
pub fn vertex_tensor_in_cell(mesh: &SimplicialMesh, c: usize, a: usize, values: &[Point]) -> Result<Tensor> {
    let dim = mesh.dim();
    let normals: Vec<Point> =
        (0..=dim).filter(|&k| k != a).map(|k| *mesh.facet_normal(mesh.cell_facets(c)[k])).collect();
    vertex_tensor(dim, &normals, values)
}

/// Number of stress basis functions on one cell: `(d+1) · d · d`.
pub fn local_stress_dim(dim: usize) -> usize {
    (dim + 1) * dim * dim
}

/// Index of local stress function `(vertex a, slot j, row r)`, where slot `j`
/// is the `j`-th facet through `a` in increasing local-facet order.
pub fn local_index(dim: usize, a: usize, slot: usize, row: usize) -> usize {
    (a * dim + slot) * dim + row
}

/// Local facet (opposite vertex) of slot `j` at local vertex `a`.
pub fn slot_facet(a: usize, slot: usize) -> usize {
    if slot < a {
        slot
    } else {
        slot + 1
    }
}

/// Nodal `(BDM1)^d` basis on the reference simplex, dual to reference
/// outward unit-normal traces at facet vertices.
#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    pub dim: usize,
    /// `q̂[a][j]`: row vector of the function `(a, j, ·)` at vertex `a`.
    pub vertex_vectors: Vec<Vec<Point>>,
    /// Gradients of the reference barycentric coordinates.
    pub barycentric_gradients: Vec<Point>,
    /// Reference outward unit normal of local facet `k`.
    pub normals: Vec<Point>,
    /// Reference facet measures.
    pub facet_measures: Vec<f64>,
}

impl ReferenceBasis {
    pub fn new(dim: usize) -> Self {
        let s = (dim as f64).sqrt();
        let mut normals = Vec::with_capacity(dim + 1);
        let mut facet_measures = Vec::with_capacity(dim + 1);
        let mut diag = Point::zeros();
        for k in 0..dim {
            diag[k] = 1.0 / s;
        }
        normals.push(diag);
        facet_measures.push(if dim == 2 { 2f64.sqrt() } else { 3f64.sqrt() / 2.0 });
        for k in 0..dim {
            let mut n = Point::zeros();
            n[k] = -1.0;
            normals.push(n);
            facet_measures.push(if dim == 2 { 1.0 } else { 0.5 });
        }
        let mut barycentric_gradients = vec![Point::zeros(); dim + 1];
        for k in 0..dim {
            barycentric_gradients[0][k] = -1.0;
            barycentric_gradients[k + 1][k] = 1.0;
        }
        let vertex_vectors = (0..=dim)
            .map(|a| {
                let ns: Vec<Point> = (0..dim).map(|j| normals[slot_facet(a, j)]).collect();
                (0..dim)
                    .map(|j| {
                        let mut values = vec![Point::zeros(); dim];
                        values[j][0] = 1.0;
                        // Row vector q with q·n_i = δ_ij: first row of the vertex tensor.
                        let t = vertex_tensor(dim, &ns, &values).expect("reference normals are independent");
                        t.row(0).transpose()
                    })
                    .collect()
            })
            .collect();
        Self { dim, vertex_vectors, barycentric_gradients, normals, facet_measures }
    }

    /// Barycentric coordinates of a reference point.
    pub fn barycentric(&self, x: &Point) -> Vec<f64> {
        let mut l = Vec::with_capacity(self.dim + 1);
        l.push(1.0 - (0..self.dim).map(|k| x[k]).sum::<f64>());
        l.extend((0..self.dim).map(|k| x[k]));
        l
    }

    /// Value and divergence of every reference function at `x̂`.
    pub fn eval(&self, x: &Point) -> Vec<(Tensor, Point)> {
        let d = self.dim;
        let lam = self.barycentric(x);
        let mut out = Vec::with_capacity(local_stress_dim(d));
        for (a, &la) in lam.iter().enumerate() {
            for &q in &self.vertex_vectors[a] {
                let div = self.barycentric_gradients[a].dot(&q);
                for r in 0..d {
                    let mut t = Tensor::zeros();
                    t.set_row(r, &(la * q).transpose());
                    let mut dv = Point::zeros();
                    dv[r] = div;
                    out.push((t, dv));
                }
            }
        }
        out
    }
}

/// Physical basis on one cell, obtained from [`ReferenceBasis`] by the
/// row-wise Piola transform and rescaled so that the degrees of freedom are
/// traces against physical outward unit normals.
#[derive(Debug, Clone)]
pub struct CellBasis {
    pub dim: usize,
    pub measure: f64,
    /// `q[a][j]`: row vector of function `(a, j, ·)` at vertex `a`.
    pub vertex_vectors: Vec<Vec<Point>>,
    /// `∇λ_a · q[a][j]`: divergence of row `r` of function `(a, j, r)`.
    pub divergences: Vec<Vec<f64>>,
    pub barycentric_gradients: Vec<Point>,
}

impl CellBasis {
    pub fn new(mesh: &SimplicialMesh, reference: &ReferenceBasis, c: usize) -> Result<Self> {
        let map = mesh::affine_map(mesh, c)?;
        let facet_measures: Vec<f64> = mesh.cell_facets(c).iter().map(|&f| mesh.facet_measure(f)).collect();
        Ok(Self::from_map(&map, reference, &facet_measures))
    }

    pub fn from_map(map: &AffineMap, reference: &ReferenceBasis, facet_measures: &[f64]) -> Self {
        let d = reference.dim;
        let mut vertex_vectors = Vec::with_capacity(d + 1);
        let mut divergences = Vec::with_capacity(d + 1);
        for a in 0..=d {
            let mut qs = Vec::with_capacity(d);
            let mut divs = Vec::with_capacity(d);
            for j in 0..d {
                let k = slot_facet(a, j);
                let scale = facet_measures[k] / reference.facet_measures[k];
                let q_ref = reference.vertex_vectors[a][j];
                qs.push(scale / map.det * (map.jacobian * q_ref));
                divs.push(scale / map.det * reference.barycentric_gradients[a].dot(&q_ref));
            }
            vertex_vectors.push(qs);
            divergences.push(divs);
        }
        let barycentric_gradients = reference.barycentric_gradients.iter().map(|g| map.inverse_transpose * g).collect();
        let factorial = if d == 2 { 2.0 } else { 6.0 };
        Self { dim: d, measure: map.det / factorial, vertex_vectors, divergences, barycentric_gradients }
    }

    /// Tensor of function `(a, j, r)` at its own vertex `a`.
    pub fn vertex_value(&self, a: usize, slot: usize, row: usize) -> Tensor {
        let mut t = Tensor::zeros();
        t.set_row(row, &self.vertex_vectors[a][slot].transpose());
        t
    }
}

/// Value and divergence of every stress basis function of a cell at the
/// reference point `x̂`, by the row-wise Piola transform
/// `τᵀ = (1/J) DF τ̂ᵀ`, rescaled to physical unit-normal traces.
pub fn eval_stress_basis(
    map: &AffineMap,
    reference: &ReferenceBasis,
    facet_measures: &[f64],
    x: &Point,
) -> Vec<(Tensor, Point)> {
    let d = reference.dim;
    reference
        .eval(x)
        .into_iter()
        .enumerate()
        .map(|(i, (t, div))| {
            let a = i / (d * d);
            let k = slot_facet(a, (i / d) % d);
            let scale = facet_measures[k] / reference.facet_measures[k] / map.det;
            let t_phys = (map.jacobian * t.transpose()).transpose() * scale;
            (t_phys, div * scale)
        })
        .collect()
}

/// Global stress numbering. DOFs are grouped by vertex: for each vertex in
/// ascending order, its incident facets in ascending order, then rows.
#[derive(Debug, Clone)]
pub struct StressDofMap {
    pub dim: usize,
    /// `facet_dofs[f][slot * dim + row]`.
    facet_dofs: Vec<[usize; 9]>,
    block_ranges: Vec<Range<usize>>,
    /// `(facet, slot, row)` of each DOF.
    dof_info: Vec<(usize, usize, usize)>,
    essential: Vec<bool>,
}

impl StressDofMap {
    pub fn build(mesh: &SimplicialMesh) -> Self {
        let d = mesh.dim();
        let mut facet_dofs = vec![[usize::MAX; 9]; mesh.num_facets()];
        let mut block_ranges = Vec::with_capacity(mesh.num_vertices());
        let mut dof_info = Vec::with_capacity(d * d * mesh.num_facets());
        let mut essential = Vec::with_capacity(d * d * mesh.num_facets());
        for v in 0..mesh.num_vertices() {
            let start = dof_info.len();
            for &f in mesh::vertex_facets(mesh, v) {
                let slot = mesh.facet(f).iter().position(|&w| w == v).expect("facet contains vertex");
                for r in 0..d {
                    facet_dofs[f][slot * d + r] = dof_info.len();
                    dof_info.push((f, slot, r));
                    essential.push(mesh.facet_marker(f) == FacetMarker::Neumann);
                }
            }
            block_ranges.push(start..dof_info.len());
        }
        Self { dim: d, facet_dofs, block_ranges, dof_info, essential }
    }

    pub fn len(&self) -> usize {
        self.dof_info.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dof_info.is_empty()
    }

    pub fn dof(&self, facet: usize, slot: usize, row: usize) -> usize {
        self.facet_dofs[facet][slot * self.dim + row]
    }

    pub fn info(&self, dof: usize) -> (usize, usize, usize) {
        self.dof_info[dof]
    }

    pub fn block(&self, vertex: usize) -> Range<usize> {
        self.block_ranges[vertex].clone()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_ranges.len()
    }

    /// DOFs on Neumann facets, whose values are prescribed.
    pub fn is_essential(&self, dof: usize) -> bool {
        self.essential[dof]
    }

    pub fn num_essential(&self) -> usize {
        self.essential.iter().filter(|&&e| e).count()
    }

    /// Global DOF and orientation sign of every local function of cell `c`,
    /// in [`local_index`] order.
    pub fn cell_dofs(&self, mesh: &SimplicialMesh, c: usize) -> Vec<(usize, f64)> {
        let d = mesh.dim();
        let cell = mesh.cell(c);
        let facets = mesh.cell_facets(c);
        let mut out = Vec::with_capacity(local_stress_dim(d));
        for (a, &v) in cell.iter().enumerate() {
            for j in 0..d {
                let k = slot_facet(a, j);
                let f = facets[k];
                let sign = mesh.facet_sign(c, k);
                let slot = mesh.facet(f).iter().position(|&w| w == v).expect("facet contains vertex");
                for r in 0..d {
                    out.push((self.dof(f, slot, r), sign));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum RotationVariant {
    /// One reduced rotation per cell (MSMFE-0).
    PerCell,
    /// One reduced rotation per vertex, continuous P1 (MSMFE-1).
    PerVertex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RotationLayout {
    pub variant: RotationVariant,
    pub components: usize,
    pub locations: usize,
}

impl RotationLayout {
    pub fn len(&self) -> usize {
        self.components * self.locations
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, location: usize, component: usize) -> usize {
        location * self.components + component
    }
}

#[derive(Debug, Clone)]
pub struct DofMaps {
    pub stress: StressDofMap,
    /// `d` displacement components per cell at `cell * d + component`.
    pub displacement: usize,
    pub rotation: RotationLayout,
}

pub fn build_dof_maps(mesh: &SimplicialMesh, method: Method) -> DofMaps {
    let d = mesh.dim();
    let variant = method.rotation_variant();
    let locations = match variant {
        RotationVariant::PerCell => mesh.num_cells(),
        RotationVariant::PerVertex => mesh.num_vertices(),
    };
    DofMaps {
        stress: StressDofMap::build(mesh),
        displacement: d * mesh.num_cells(),
        rotation: RotationLayout { variant, components: rotation_components(d), locations },
    }
}
