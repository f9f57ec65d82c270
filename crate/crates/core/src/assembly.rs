//! Assembly of the saddle-point blocks
//!
//! ```text
//! [ M   Bᵀ  Cᵀ ] [σ]   [ G ]
//! [-B   0   0  ] [u] = [-F ]
//! [-C   0   0  ] [p]   [ 0 ]
//! ```
//!
//! with `M = (Aτ_j, τ_i)_Q`, `B = (div τ_j, v_i)` and `C` the stress-rotation
//! coupling. Stress DOFs on traction facets carry prescribed values and are
//! eliminated from every block before solving.

use std::ops::Range;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fem_spaces::{self, CellBasis, DofMaps, Method, ReferenceBasis, RotationLayout, RotationVariant};
use crate::mesh::{self, AffineMap, FacetMarker, SimplicialMesh};
use crate::par;
use crate::problems::{IsotropicCompliance, Problem};
use crate::quadrature;

/// Per-cell isotropic material, sampled at cell centroids.
#[derive(Debug, Clone)]
pub struct MaterialField {
    cells: Vec<IsotropicCompliance>,
}

impl MaterialField {
    pub fn from_problem(mesh: &SimplicialMesh, problem: &Problem) -> Result<Self> {
        let cells = (0..mesh.num_cells())
            .map(|c| {
                let (lambda, mu) = problem.lame(&mesh.cell_centroid(c));
                crate::problems::isotropic_compliance(lambda, mu, mesh.dim())
            })
            .collect::<Result<_>>()?;
        Ok(Self { cells })
    }

    pub fn uniform(mesh: &SimplicialMesh, lambda: f64, mu: f64) -> Result<Self> {
        let a = crate::problems::isotropic_compliance(lambda, mu, mesh.dim())?;
        Ok(Self { cells: vec![a; mesh.num_cells()] })
    }

    pub fn cell(&self, c: usize) -> &IsotropicCompliance {
        &self.cells[c]
    }
}

/// Geometry and DOF connectivity of one cell, computed once.
#[derive(Debug, Clone)]
pub struct CellData {
    pub map: AffineMap,
    pub basis: CellBasis,
    /// Global DOF and sign of each local stress function.
    pub dofs: Vec<(usize, f64)>,
}

/// Everything the block routines share: mesh, numbering, material and cell
/// geometry.
pub struct Discretization<'a> {
    pub mesh: &'a SimplicialMesh,
    pub method: Method,
    pub maps: DofMaps,
    pub material: MaterialField,
    pub reference: ReferenceBasis,
    pub cells: Vec<CellData>,
}

impl<'a> Discretization<'a> {
    pub fn new(mesh: &'a SimplicialMesh, method: Method, material: MaterialField) -> Result<Self> {
        let maps = fem_spaces::build_dof_maps(mesh, method);
        let reference = ReferenceBasis::new(mesh.dim());
        let cells = par::map_range(mesh.num_cells(), |c| -> Result<CellData> {
            let map = mesh::affine_map(mesh, c)?;
            let facet_measures: Vec<f64> = mesh.cell_facets(c).iter().map(|&f| mesh.facet_measure(f)).collect();
            let basis = CellBasis::from_map(&map, &reference, &facet_measures);
            Ok(CellData { map, basis, dofs: maps.stress.cell_dofs(mesh, c) })
        })
        .into_iter()
        .collect::<Result<_>>()?;
        Ok(Self { mesh, method, maps, material, reference, cells })
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    /// Iterates the local stress functions of cell `c` attached to local
    /// vertex `a`: `(slot, row, global dof, sign)`.
    fn vertex_functions(&self, c: usize, a: usize) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let d = self.dim();
        let dofs = &self.cells[c].dofs;
        (0..d).flat_map(move |j| {
            (0..d).map(move |r| {
                let (g, s) = dofs[fem_spaces::local_index(d, a, j, r)];
                (j, r, g, s)
            })
        })
    }
}

/// Block-diagonal matrix over vertex groups of contiguous DOFs.
#[derive(Debug, Clone)]
pub struct VertexBlockMatrix {
    ranges: Vec<Range<usize>>,
    blocks: Vec<DMatrix<f64>>,
}

impl VertexBlockMatrix {
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, v: usize) -> &DMatrix<f64> {
        &self.blocks[v]
    }

    pub fn range(&self, v: usize) -> Range<usize> {
        self.ranges[v].clone()
    }

    pub fn size(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    /// Vertex group of `dof`.
    pub fn owner(&self, dof: usize) -> usize {
        self.ranges.partition_point(|r| r.end <= dof)
    }

    /// Entry `(i, j)`; `None` where the block structure has no entry.
    pub fn entry(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.owner(i);
        let r = &self.ranges[v];
        r.contains(&j).then(|| self.blocks[v][(i - r.start, j - r.start)])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let parts = par::map_range(self.blocks.len(), |v| {
            let r = self.ranges[v].clone();
            let xv = nalgebra::DVector::from_column_slice(&x[r]);
            &self.blocks[v] * xv
        });
        parts.into_iter().flat_map(|p| p.data.as_vec().clone()).collect()
    }
}

/// Row-compressed sparse matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCoupling {
    pub rows: usize,
    pub cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCoupling {
    /// Builds from per-row entry lists; repeated columns are summed and
    /// exact zeros kept out of the pattern.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        let nrows = rows.len();
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = 0.0;
                while i < row.len() && row[i].0 == c {
                    v += row[i].1;
                    i += 1;
                }
                if v != 0.0 {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { rows: nrows, cols, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        par::fill(&mut y, |i| self.row(i).map(|(j, v)| v * x[j]).sum());
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, v) in self.row(i) {
                    y[j] += v * xi;
                }
            }
        }
        y
    }

    pub fn transpose(&self) -> SparseCoupling {
        let mut rows = vec![Vec::new(); self.cols];
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                rows[j].push((i, v));
            }
        }
        SparseCoupling::from_rows(self.rows, rows)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// `M`: vertex quadrature makes each cell contribute `(|E|/s) Aχ:τ` at
/// each of its vertices only.
pub fn assemble_ass(disc: &Discretization) -> Result<VertexBlockMatrix> {
    let d = disc.dim();
    let mesh = disc.mesh;
    let s = (d + 1) as f64;
    let ranges: Vec<Range<usize>> = (0..mesh.num_vertices()).map(|v| disc.maps.stress.block(v)).collect();
    let blocks = par::map_range(mesh.num_vertices(), |v| {
        let range = ranges[v].clone();
        let mut block = DMatrix::zeros(range.len(), range.len());
        for &c in mesh::vertex_cells(mesh, v) {
            let a = mesh.cell(c).iter().position(|&w| w == v).expect("cell contains vertex");
            let basis = &disc.cells[c].basis;
            let comp = disc.material.cell(c);
            let w = basis.measure / s;
            for (ji, ri, gi, si) in disc.vertex_functions(c, a) {
                let qi = basis.vertex_vectors[a][ji];
                for (jj, rj, gj, sj) in disc.vertex_functions(c, a) {
                    let qj = basis.vertex_vectors[a][jj];
                    block[(gi - range.start, gj - range.start)] += w * si * sj * comp.pair_rows(ri, &qi, rj, &qj);
                }
            }
        }
        block
    });
    Ok(VertexBlockMatrix { ranges, blocks })
}

/// `B`: row `c·d + r` holds `(div τ_j, e_r)_E`.
pub fn assemble_asu(disc: &Discretization) -> SparseCoupling {
    let d = disc.dim();
    let rows = par::map_range(disc.mesh.num_cells() * d, |row| {
        let (c, r) = (row / d, row % d);
        let cell = &disc.cells[c];
        let mut entries = Vec::with_capacity((d + 1) * d);
        for a in 0..=d {
            for j in 0..d {
                let (g, s) = cell.dofs[fem_spaces::local_index(d, a, j, r)];
                entries.push((g, s * cell.basis.divergences[a][j] * cell.basis.measure));
            }
        }
        entries
    });
    SparseCoupling::from_rows(disc.maps.stress.len(), rows)
}

/// Stress-rotation coupling variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CouplingMode {
    /// `(τ, ξ)` integrated exactly, piecewise constant rotation.
    Exact,
    /// `(τ, ξ)_Q`, continuous linear rotation.
    VertexQ,
    /// `(Aτ, ξ)_Q`, continuous linear rotation.
    ScaledVertexQ,
}

impl CouplingMode {
    pub fn for_method(method: Method) -> Self {
        match method {
            Method::Msmfe0 => CouplingMode::Exact,
            Method::Msmfe1 => CouplingMode::VertexQ,
            Method::Msmfe1Scaled => CouplingMode::ScaledVertexQ,
        }
    }
}

/// `C`: entries `(as τ_j) · e_k` against rotation basis functions, using
/// `τ : Ξ(p) = as(τ) · p`.
pub fn assemble_asg(disc: &Discretization, mode: CouplingMode) -> Result<SparseCoupling> {
    let d = disc.dim();
    let layout = disc.maps.rotation;
    let mesh = disc.mesh;
    let ncomp = layout.components;
    let rows: Vec<Vec<(usize, f64)>> = match (mode, layout.variant) {
        (CouplingMode::Exact, RotationVariant::PerCell) => {
            // τ_j is linear, so its cell mean is its value at the centroid
            // where every barycentric coordinate equals 1/(d+1).
            let per_cell = par::map_range(mesh.num_cells(), |c| {
                let cell = &disc.cells[c];
                let w = cell.basis.measure / (d + 1) as f64;
                let mut rows = vec![Vec::with_capacity(local_dim(d)); ncomp];
                for a in 0..=d {
                    for (j, r, g, s) in disc.vertex_functions(c, a) {
                        let asv = fem_spaces::asym(&cell.basis.vertex_value(a, j, r), d);
                        for (k, row) in rows.iter_mut().enumerate() {
                            row.push((g, w * s * asv[k]));
                        }
                    }
                }
                rows
            });
            per_cell.into_iter().flatten().collect()
        }
        (CouplingMode::VertexQ | CouplingMode::ScaledVertexQ, RotationVariant::PerVertex) => {
            let scaled = mode == CouplingMode::ScaledVertexQ;
            let per_vertex = par::map_range(mesh.num_vertices(), |v| {
                let mut rows = vec![Vec::new(); ncomp];
                for &c in mesh::vertex_cells(mesh, v) {
                    let a = mesh.cell(c).iter().position(|&w| w == v).expect("cell contains vertex");
                    let cell = &disc.cells[c];
                    let w = cell.basis.measure / (d + 1) as f64;
                    for (j, r, g, s) in disc.vertex_functions(c, a) {
                        let mut t = cell.basis.vertex_value(a, j, r);
                        if scaled {
                            t = disc.material.cell(c).apply(&t);
                        }
                        let asv = fem_spaces::asym(&t, d);
                        for (k, row) in rows.iter_mut().enumerate() {
                            row.push((g, w * s * asv[k]));
                        }
                    }
                }
                rows
            });
            per_vertex.into_iter().flatten().collect()
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "coupling mode {mode:?} does not match rotation layout {:?}",
                layout.variant
            )))
        }
    };
    Ok(SparseCoupling::from_rows(disc.maps.stress.len(), rows))
}

fn local_dim(d: usize) -> usize {
    fem_spaces::local_stress_dim(d)
}

/// Right-hand sides before elimination of prescribed stress DOFs.
#[derive(Debug, Clone)]
pub struct Rhs {
    /// `⟨g, τ_j n⟩` on the Dirichlet boundary.
    pub stress: Vec<f64>,
    /// `(f, v_i)`.
    pub displacement: Vec<f64>,
    /// Prescribed values of stress DOFs on traction facets, zero elsewhere.
    pub essential: Vec<f64>,
}

pub fn assemble_rhs(disc: &Discretization, problem: &Problem) -> Result<Rhs> {
    let mesh = disc.mesh;
    let d = disc.dim();
    let stress_dofs = &disc.maps.stress;
    let facet_rule = quadrature::gauss_rule(d - 1, quadrature::DEFAULT_DEGREE)?;
    let facet_ref = quadrature::reference_measure(d - 1);
    let cell_rule = quadrature::gauss_rule(d, quadrature::DEFAULT_DEGREE)?;

    let mut stress = vec![0.0; stress_dofs.len()];
    let mut essential = vec![0.0; stress_dofs.len()];
    let facet_terms = par::map_range(mesh.num_facets(), |f| -> Result<Vec<(usize, f64, bool)>> {
        let verts: Vec<_> = mesh.facet(f).iter().map(|&v| *mesh.vertex(v)).collect();
        match mesh.facet_marker(f) {
            FacetMarker::Dirichlet => {
                let scale = mesh.facet_measure(f) / facet_ref;
                let mut acc = vec![0.0; d * d];
                for (t, w) in facet_rule.points.iter().zip(&facet_rule.weights) {
                    let mut phi = vec![1.0 - (0..d - 1).map(|k| t[k]).sum::<f64>()];
                    phi.extend((0..d - 1).map(|k| t[k]));
                    let x = (0..d).fold(crate::Point::zeros(), |x, k| x + phi[k] * verts[k]);
                    let g = problem.dirichlet(&x);
                    for s in 0..d {
                        for r in 0..d {
                            acc[s * d + r] += scale * w * phi[s] * g[r];
                        }
                    }
                }
                Ok((0..d * d).map(|i| (stress_dofs.dof(f, i / d, i % d), acc[i], false)).collect())
            }
            FacetMarker::Neumann => {
                let n = mesh.facet_normal(f);
                let mut out = Vec::with_capacity(d * d);
                for (s, x) in verts.iter().enumerate() {
                    let t = problem.traction(x, n).ok_or_else(|| {
                        Error::Config(format!("facet {f} is a traction facet but the problem gives no traction"))
                    })?;
                    for r in 0..d {
                        out.push((stress_dofs.dof(f, s, r), t[r], true));
                    }
                }
                Ok(out)
            }
            FacetMarker::Interior => Ok(Vec::new()),
        }
    });
    for terms in facet_terms {
        for (dof, value, is_essential) in terms? {
            if is_essential {
                essential[dof] = value;
            } else {
                stress[dof] += value;
            }
        }
    }

    let per_cell = par::map_range(mesh.num_cells(), |c| {
        let map = &disc.cells[c].map;
        (0..d).map(|r| cell_rule.integrate_on(map, |_, x| problem.body_force(x)[r])).collect::<Vec<_>>()
    });
    let displacement = per_cell.into_iter().flatten().collect();
    Ok(Rhs { stress, displacement, essential })
}

/// All assembled blocks of one discrete problem.
#[derive(Debug, Clone)]
pub struct Blocks {
    pub mass: VertexBlockMatrix,
    pub divergence: SparseCoupling,
    pub rotation: SparseCoupling,
    pub rhs: Rhs,
    /// Stress DOFs whose values are prescribed.
    pub essential: Vec<bool>,
    /// Rotation DOFs that couple to at least one free stress DOF; the others
    /// are fixed to zero and their equations dropped.
    pub active_rotations: Vec<bool>,
    pub rotation_layout: RotationLayout,
}

pub fn assemble_all(disc: &Discretization, problem: &Problem) -> Result<Blocks> {
    let mass = assemble_ass(disc)?;
    let divergence = assemble_asu(disc);
    let rotation = assemble_asg(disc, CouplingMode::for_method(disc.method))?;
    let rhs = assemble_rhs(disc, problem)?;
    let essential: Vec<bool> = (0..disc.maps.stress.len()).map(|i| disc.maps.stress.is_essential(i)).collect();
    let active_rotations = (0..rotation.rows).map(|i| rotation.row(i).any(|(j, _)| !essential[j])).collect();
    Ok(Blocks { mass, divergence, rotation, rhs, essential, active_rotations, rotation_layout: disc.maps.rotation })
}

/// Refuse oracle systems above this many unknowns.
pub const SADDLE_LIMIT: usize = 50_000;

/// The full indefinite system on free stress DOFs, all displacements and
/// active rotations, in the sign convention of the module header.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub matrix: SparseCoupling,
    pub rhs: Vec<f64>,
    /// Global stress DOF of each stress unknown.
    pub stress_dofs: Vec<usize>,
    pub num_displacement: usize,
    /// Global rotation DOF of each rotation unknown.
    pub rotation_dofs: Vec<usize>,
}

impl SaddleSystem {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }
}

/// Counts every unknown before boundary elimination.
pub fn saddle_size(maps: &DofMaps) -> usize {
    maps.stress.len() + maps.displacement + maps.rotation.len()
}

pub fn assemble_saddle(disc: &Discretization, blocks: &Blocks) -> Result<SaddleSystem> {
    let total = saddle_size(&disc.maps);
    if total > SADDLE_LIMIT {
        return Err(Error::SizeGuard { dofs: total, limit: SADDLE_LIMIT });
    }
    let ns = disc.maps.stress.len();
    let stress_dofs: Vec<usize> = (0..ns).filter(|&i| !blocks.essential[i]).collect();
    let rotation_dofs: Vec<usize> = (0..blocks.rotation.rows).filter(|&i| blocks.active_rotations[i]).collect();
    let mut stress_pos = vec![usize::MAX; ns];
    for (k, &i) in stress_dofs.iter().enumerate() {
        stress_pos[i] = k;
    }
    let nf = stress_dofs.len();
    let nu = disc.maps.displacement;
    let n = nf + nu + rotation_dofs.len();
    let sigma_e = &blocks.rhs.essential;

    // Transposed couplings restricted to free columns.
    let mut bt: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nf];
    for i in 0..nu {
        for (j, v) in blocks.divergence.row(i) {
            if stress_pos[j] != usize::MAX {
                bt[stress_pos[j]].push((nf + i, v));
            }
        }
    }
    for (k, &i) in rotation_dofs.iter().enumerate() {
        for (j, v) in blocks.rotation.row(i) {
            if stress_pos[j] != usize::MAX {
                bt[stress_pos[j]].push((nf + nu + k, v));
            }
        }
    }

    let mut rows = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    let mass_e = blocks.mass.matvec(sigma_e);
    for (k, &i) in stress_dofs.iter().enumerate() {
        let v = blocks.mass.owner(i);
        let range = blocks.mass.range(v);
        let block = blocks.mass.block(v);
        let mut row: Vec<(usize, f64)> = range
            .clone()
            .filter(|&j| !blocks.essential[j])
            .map(|j| (stress_pos[j], block[(i - range.start, j - range.start)]))
            .collect();
        row.append(&mut bt[k]);
        rows.push(row);
        rhs.push(blocks.rhs.stress[i] - mass_e[i]);
    }
    let coupled_rows = |m: &SparseCoupling, i: usize| {
        let mut known = 0.0;
        let mut row = Vec::new();
        for (j, v) in m.row(i) {
            if blocks.essential[j] {
                known += v * sigma_e[j];
            } else {
                row.push((stress_pos[j], -v));
            }
        }
        (row, known)
    };
    for i in 0..nu {
        let (row, known) = coupled_rows(&blocks.divergence, i);
        rows.push(row);
        rhs.push(-(blocks.rhs.displacement[i] - known));
    }
    for &i in &rotation_dofs {
        let (row, known) = coupled_rows(&blocks.rotation, i);
        rows.push(row);
        rhs.push(known);
    }
    Ok(SaddleSystem {
        matrix: SparseCoupling::from_rows(n, rows),
        rhs,
        stress_dofs,
        num_displacement: nu,
        rotation_dofs,
    })
}
