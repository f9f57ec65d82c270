//! Simplicial meshes of the unit square and cube.
//!
//! Cells are triangles (2D) or tetrahedra (3D). Local facet `k` of a cell is
//! the facet opposite local vertex `k`. Every facet carries one global unit
//! normal: the outward normal of its lowest-numbered adjacent cell.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::{Point, Tensor};

/// Boundary tag of a facet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum FacetMarker {
    Interior,
    Dirichlet,
    Neumann,
}

/// What to do with cells whose vertex ordering gives a negative Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Orientation {
    /// Swap two vertices so the Jacobian becomes positive.
    #[default]
    Fix,
    /// Refuse the mesh.
    Reject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplicialMesh {
    dim: usize,
    vertices: Vec<Point>,
    cells: Vec<[usize; 4]>,
    facets: Vec<[usize; 3]>,
    facet_normals: Vec<Point>,
    facet_markers: Vec<FacetMarker>,
    cell_facets: Vec<[usize; 4]>,
    facet_cells: Vec<(usize, Option<usize>)>,
    vertex_cells: Vec<Vec<usize>>,
    vertex_facets: Vec<Vec<usize>>,
    nominal_h: Option<f64>,
}

/// Affine map `F(x̂) = offset + jacobian · x̂` from the reference simplex.
///
/// In 2D the unused third row and column of `jacobian` hold the identity so
/// that the 3x3 inverse is well defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub dim: usize,
    pub offset: Point,
    pub jacobian: Tensor,
    pub det: f64,
    pub inverse_transpose: Tensor,
}

impl AffineMap {
    pub fn apply(&self, reference: &Point) -> Point {
        self.offset + self.jacobian * reference
    }

    pub fn inverse(&self, physical: &Point) -> Point {
        self.inverse_transpose.transpose() * (physical - self.offset)
    }
}

/// Cells and facets around one mesh vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VertexStar {
    pub vertex: usize,
    pub cells: Vec<usize>,
    pub facets: Vec<usize>,
    /// For each entry of `facets`, the position of `vertex` inside that facet.
    pub facet_slots: Vec<usize>,
}

impl SimplicialMesh {
    /// Builds a mesh from vertex coordinates and cell connectivity. All
    /// boundary facets are marked Dirichlet.
    pub fn from_cells(
        dim: usize,
        vertices: Vec<Point>,
        cells: Vec<Vec<usize>>,
        orientation: Orientation,
    ) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}")));
        }
        let nv = vertices.len();
        let mut oriented = Vec::with_capacity(cells.len());
        let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
        for (c, cell) in cells.iter().enumerate() {
            if cell.len() != dim + 1 {
                return Err(Error::Validation(format!("cell {c} has {} vertices, expected {}", cell.len(), dim + 1)));
            }
            if let Some(&v) = cell.iter().find(|&&v| v >= nv) {
                return Err(Error::Validation(format!("cell {c} references vertex {v} of {nv}")));
            }
            let mut key = cell.clone();
            key.sort_unstable();
            if key.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Validation(format!("cell {c} repeats a vertex")));
            }
            if let Some(prev) = seen.insert(key, c) {
                return Err(Error::Validation(format!("cell {c} repeats cell {prev}")));
            }
            let mut local = [usize::MAX; 4];
            local[..=dim].copy_from_slice(cell);
            let det = signed_volume_factor(dim, &vertices, &local);
            let scale = cell_scale(dim, &vertices, &local);
            if det.abs() <= 1e-14 * scale {
                return Err(Error::DegenerateGeometry(format!("cell {c} has zero volume")));
            }
            if det < 0.0 {
                match orientation {
                    Orientation::Fix => local.swap(dim - 1, dim),
                    Orientation::Reject => {
                        return Err(Error::Validation(format!("cell {c} is inverted")));
                    }
                }
            }
            oriented.push(local);
        }

        let mut facet_index: HashMap<[usize; 3], usize> = HashMap::new();
        let mut facets = Vec::new();
        let mut facet_cells: Vec<(usize, Option<usize>)> = Vec::new();
        let mut cell_facets = Vec::with_capacity(oriented.len());
        for (c, cell) in oriented.iter().enumerate() {
            let mut local_facets = [usize::MAX; 4];
            for (k, slot) in local_facets.iter_mut().enumerate().take(dim + 1) {
                let key = facet_key(dim, cell, k);
                let f = match facet_index.get(&key) {
                    Some(&f) => {
                        match facet_cells[f].1 {
                            None => facet_cells[f].1 = Some(c),
                            Some(_) => {
                                return Err(Error::Validation(format!(
                                    "facet {:?} is shared by more than two cells",
                                    &key[..dim]
                                )))
                            }
                        }
                        f
                    }
                    None => {
                        let f = facets.len();
                        facet_index.insert(key, f);
                        facets.push(key);
                        facet_cells.push((c, None));
                        f
                    }
                };
                *slot = f;
            }
            cell_facets.push(local_facets);
        }

        let facet_normals = facets
            .iter()
            .zip(&facet_cells)
            .map(|(facet, &(c, _))| {
                let cell = &oriented[c];
                let opposite = cell[..=dim]
                    .iter()
                    .copied()
                    .find(|v| !facet[..dim].contains(v))
                    .expect("facet of a cell misses one vertex");
                outward_normal(dim, &vertices, &facet[..dim], opposite)
            })
            .collect();

        let facet_markers = facet_cells
            .iter()
            .map(|&(_, second)| if second.is_some() { FacetMarker::Interior } else { FacetMarker::Dirichlet })
            .collect();

        let mut vertex_cells = vec![Vec::new(); nv];
        for (c, cell) in oriented.iter().enumerate() {
            for &v in &cell[..=dim] {
                vertex_cells[v].push(c);
            }
        }
        let mut vertex_facets = vec![Vec::new(); nv];
        for (f, facet) in facets.iter().enumerate() {
            for &v in &facet[..dim] {
                vertex_facets[v].push(f);
            }
        }

        Ok(Self {
            dim,
            vertices,
            cells: oriented,
            facets,
            facet_normals,
            facet_markers,
            cell_facets,
            facet_cells,
            vertex_cells,
            vertex_facets,
            nominal_h: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn vertex(&self, v: usize) -> &Point {
        &self.vertices[v]
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Vertex indices of a cell, in positively oriented order.
    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c][..=self.dim]
    }

    /// Sorted vertex indices of a facet.
    pub fn facet(&self, f: usize) -> &[usize] {
        &self.facets[f][..self.dim]
    }

    /// Global facet index of local facet `k` (opposite local vertex `k`).
    pub fn cell_facets(&self, c: usize) -> &[usize] {
        &self.cell_facets[c][..=self.dim]
    }

    pub fn facet_cells(&self, f: usize) -> (usize, Option<usize>) {
        self.facet_cells[f]
    }

    pub fn facet_normal(&self, f: usize) -> &Point {
        &self.facet_normals[f]
    }

    pub fn facet_marker(&self, f: usize) -> FacetMarker {
        self.facet_markers[f]
    }

    pub fn is_boundary_facet(&self, f: usize) -> bool {
        self.facet_cells[f].1.is_none()
    }

    /// +1 when the global normal of local facet `k` is outward for cell `c`.
    pub fn facet_sign(&self, c: usize, k: usize) -> f64 {
        if self.facet_cells[self.cell_facets[c][k]].0 == c {
            1.0
        } else {
            -1.0
        }
    }

    pub fn cell_centroid(&self, c: usize) -> Point {
        let cell = self.cell(c);
        cell.iter().map(|&v| self.vertices[v]).sum::<Point>() / cell.len() as f64
    }

    pub fn facet_centroid(&self, f: usize) -> Point {
        let facet = self.facet(f);
        facet.iter().map(|&v| self.vertices[v]).sum::<Point>() / facet.len() as f64
    }

    /// Cell area (2D) or volume (3D).
    pub fn cell_measure(&self, c: usize) -> f64 {
        let factorial = if self.dim == 2 { 2.0 } else { 6.0 };
        signed_volume_factor(self.dim, &self.vertices, &self.cells[c]).abs() / factorial
    }

    /// Edge length (2D) or face area (3D).
    pub fn facet_measure(&self, f: usize) -> f64 {
        let p = self.facet(f).iter().map(|&v| self.vertices[v]).collect::<Vec<_>>();
        if self.dim == 2 {
            (p[1] - p[0]).norm()
        } else {
            0.5 * (p[1] - p[0]).cross(&(p[2] - p[0])).norm()
        }
    }

    /// Mesh parameter: `1/n` for structured meshes, the longest edge otherwise.
    pub fn h(&self) -> f64 {
        if let Some(h) = self.nominal_h {
            return h;
        }
        let mut h: f64 = 0.0;
        for c in 0..self.num_cells() {
            let cell = self.cell(c);
            for (i, &a) in cell.iter().enumerate() {
                for &b in &cell[i + 1..] {
                    h = h.max((self.vertices[a] - self.vertices[b]).norm());
                }
            }
        }
        h
    }

    /// Reassigns boundary markers with `rule(facet_centroid, normal)`.
    /// Interior facets are left untouched.
    pub fn mark_boundary<F>(&mut self, rule: F)
    where
        F: Fn(&Point, &Point) -> FacetMarker,
    {
        for f in 0..self.num_facets() {
            if self.is_boundary_facet(f) {
                let marker = rule(&self.facet_centroid(f), &self.facet_normals[f]);
                self.facet_markers[f] = match marker {
                    FacetMarker::Interior => FacetMarker::Dirichlet,
                    m => m,
                };
            }
        }
    }

    /// Looks up a facet from its vertex indices in any order.
    pub fn find_facet(&self, vertices: &[usize]) -> Option<usize> {
        if vertices.len() != self.dim {
            return None;
        }
        let v = vertices[0];
        let mut key = vertices.to_vec();
        key.sort_unstable();
        self.vertex_facets.get(v)?.iter().copied().find(|&f| self.facet(f) == key.as_slice())
    }
}

/// Determinant of the edge matrix `[r_2 - r_1, ..., r_{d+1} - r_1]`.
fn signed_volume_factor(dim: usize, vertices: &[Point], cell: &[usize; 4]) -> f64 {
    let o = vertices[cell[0]];
    let a = vertices[cell[1]] - o;
    let b = vertices[cell[2]] - o;
    if dim == 2 {
        a.x * b.y - a.y * b.x
    } else {
        let c = vertices[cell[3]] - o;
        a.dot(&b.cross(&c))
    }
}

fn cell_scale(dim: usize, vertices: &[Point], cell: &[usize; 4]) -> f64 {
    let o = vertices[cell[0]];
    let lmax = cell[1..=dim].iter().map(|&v| (vertices[v] - o).norm()).fold(0.0, f64::max);
    lmax.powi(dim as i32)
}

fn facet_key(dim: usize, cell: &[usize; 4], opposite: usize) -> [usize; 3] {
    let mut key = [usize::MAX; 3];
    let mut n = 0;
    for (k, &v) in cell[..=dim].iter().enumerate() {
        if k != opposite {
            key[n] = v;
            n += 1;
        }
    }
    key[..dim].sort_unstable();
    key
}

fn outward_normal(dim: usize, vertices: &[Point], facet: &[usize], opposite: usize) -> Point {
    let a = vertices[facet[0]];
    let mut n = if dim == 2 {
        let t = vertices[facet[1]] - a;
        Point::new(t.y, -t.x, 0.0)
    } else {
        (vertices[facet[1]] - a).cross(&(vertices[facet[2]] - a))
    };
    n /= n.norm();
    if n.dot(&(vertices[opposite] - a)) > 0.0 {
        n = -n;
    }
    n
}

/// Structured mesh of the unit square (2D) or cube (3D) with `n` cells per
/// side. Squares are split by their positive-slope diagonal into two
/// triangles; cubes are split into six tetrahedra along the main diagonal
/// (Kuhn split). All boundary facets are Dirichlet.
pub fn generate_structured(dim: usize, n: usize) -> Result<SimplicialMesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("cells per side must be at least 1".into()));
    }
    let h = 1.0 / n as f64;
    let (vertices, cells) = match dim {
        2 => {
            let id = |i: usize, j: usize| j * (n + 1) + i;
            let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
            for j in 0..=n {
                for i in 0..=n {
                    vertices.push(Point::new(i as f64 * h, j as f64 * h, 0.0));
                }
            }
            let mut cells = Vec::with_capacity(2 * n * n);
            for j in 0..n {
                for i in 0..n {
                    let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
                    cells.push(vec![v00, v10, v11]);
                    cells.push(vec![v00, v11, v01]);
                }
            }
            (vertices, cells)
        }
        3 => {
            let id = |i: usize, j: usize, k: usize| (k * (n + 1) + j) * (n + 1) + i;
            let mut vertices = Vec::with_capacity((n + 1).pow(3));
            for k in 0..=n {
                for j in 0..=n {
                    for i in 0..=n {
                        vertices.push(Point::new(i as f64 * h, j as f64 * h, k as f64 * h));
                    }
                }
            }
            const PERMUTATIONS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let mut cells = Vec::with_capacity(6 * n * n * n);
            for k in 0..n {
                for j in 0..n {
                    for i in 0..n {
                        for perm in PERMUTATIONS {
                            let mut c = [i, j, k];
                            let mut tet = vec![id(c[0], c[1], c[2])];
                            for axis in perm {
                                c[axis] += 1;
                                tet.push(id(c[0], c[1], c[2]));
                            }
                            cells.push(tet);
                        }
                    }
                }
            }
            (vertices, cells)
        }
        _ => return Err(Error::InvalidArgument(format!("dimension must be 2 or 3, got {dim}"))),
    };
    let mut mesh = SimplicialMesh::from_cells(dim, vertices, cells, Orientation::Fix)?;
    mesh.nominal_h = Some(h);
    Ok(mesh)
}

/// Affine map of cell `c` from the reference simplex with vertices at the
/// origin and the unit coordinate points.
pub fn affine_map(mesh: &SimplicialMesh, c: usize) -> Result<AffineMap> {
    if c >= mesh.num_cells() {
        return Err(Error::InvalidArgument(format!("cell {c} out of range")));
    }
    let dim = mesh.dim;
    let cell = mesh.cell(c);
    let offset = mesh.vertices[cell[0]];
    let mut jacobian = Tensor::identity();
    for k in 0..dim {
        let col = mesh.vertices[cell[k + 1]] - offset;
        jacobian.set_column(k, &col);
    }
    let det = if dim == 2 {
        jacobian[(0, 0)] * jacobian[(1, 1)] - jacobian[(0, 1)] * jacobian[(1, 0)]
    } else {
        jacobian.determinant()
    };
    let scale = jacobian.norm().powi(dim as i32);
    if det.abs() <= 1e-14 * scale {
        return Err(Error::DegenerateGeometry(format!("cell {c} has zero volume")));
    }
    let inverse =
        jacobian.try_inverse().ok_or_else(|| Error::DegenerateGeometry(format!("cell {c} has a singular Jacobian")))?;
    Ok(AffineMap { dim, offset, jacobian, det: det.abs(), inverse_transpose: inverse.transpose() })
}

/// The star of vertex `v`: incident cells and facets in ascending order.
pub fn vertex_star(mesh: &SimplicialMesh, v: usize) -> VertexStar {
    let facets = mesh.vertex_facets[v].clone();
    let facet_slots = facets
        .iter()
        .map(|&f| mesh.facet(f).iter().position(|&w| w == v).expect("facet contains its vertex"))
        .collect();
    VertexStar { vertex: v, cells: mesh.vertex_cells[v].clone(), facets, facet_slots }
}

/// Incident cell list of a vertex without cloning.
pub(crate) fn vertex_cells(mesh: &SimplicialMesh, v: usize) -> &[usize] {
    &mesh.vertex_cells[v]
}

/// Incident facet list of a vertex without cloning.
pub(crate) fn vertex_facets(mesh: &SimplicialMesh, v: usize) -> &[usize] {
    &mesh.vertex_facets[v]
}

/// Parses the plain-text mesh format:
///
/// ```text
/// dim nv nc
/// x y [z]                  (nv lines)
/// i j k [l]                (nc lines, 0-based)
/// boundary i j [k] D|N     (optional, any number)
/// ```
///
/// Boundary facets without a `boundary` line are Dirichlet.
pub fn parse_ascii(text: &str, orientation: Orientation) -> Result<SimplicialMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_line, header) = lines.next().ok_or(Error::Parse { line: 1, message: "empty mesh file".into() })?;
    let head = parse_numbers::<usize>(header, header_line)?;
    if head.len() != 3 {
        return Err(Error::Parse { line: header_line, message: "expected `dim nv nc`".into() });
    }
    let (dim, nv, nc) = (head[0], head[1], head[2]);
    if dim != 2 && dim != 3 {
        return Err(Error::Parse { line: header_line, message: format!("unsupported dimension {dim}") });
    }

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or(Error::Parse { line: header_line, message: "missing vertex lines".into() })?;
        let xs = parse_numbers::<f64>(l, ln)?;
        if xs.len() != dim {
            return Err(Error::Parse { line: ln, message: format!("expected {dim} coordinates") });
        }
        vertices.push(Point::new(xs[0], xs[1], if dim == 3 { xs[2] } else { 0.0 }));
    }

    let mut cells = Vec::with_capacity(nc);
    let mut cell_lines = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (ln, l) = lines.next().ok_or(Error::Parse { line: header_line, message: "missing cell lines".into() })?;
        let ids = parse_numbers::<usize>(l, ln)?;
        if ids.len() != dim + 1 {
            return Err(Error::Parse { line: ln, message: format!("expected {} vertex indices", dim + 1) });
        }
        if let Some(&v) = ids.iter().find(|&&v| v >= nv) {
            return Err(Error::Parse { line: ln, message: format!("vertex index {v} out of range") });
        }
        cells.push(ids);
        cell_lines.push(ln);
    }

    let mut markers = Vec::new();
    for (ln, l) in lines {
        let mut words = l.split_whitespace();
        if words.next() != Some("boundary") {
            return Err(Error::Parse { line: ln, message: format!("unexpected content `{l}`") });
        }
        let rest: Vec<&str> = words.collect();
        if rest.len() != dim + 1 {
            return Err(Error::Parse { line: ln, message: "expected facet vertices followed by D or N".into() });
        }
        let marker = match rest[dim] {
            "D" => FacetMarker::Dirichlet,
            "N" => FacetMarker::Neumann,
            other => return Err(Error::Parse { line: ln, message: format!("unknown boundary tag `{other}`") }),
        };
        let ids = parse_numbers::<usize>(&rest[..dim].join(" "), ln)?;
        markers.push((ln, ids, marker));
    }

    let mut mesh = SimplicialMesh::from_cells(dim, vertices, cells, orientation).map_err(|e| {
        // Attach the line of the offending cell when the message names one.
        let message = e.to_string();
        let line = message
            .split_whitespace()
            .skip_while(|w| *w != "cell")
            .nth(1)
            .and_then(|w| w.trim_end_matches(|ch: char| !ch.is_ascii_digit()).parse::<usize>().ok())
            .and_then(|c| cell_lines.get(c).copied())
            .unwrap_or(header_line);
        Error::Parse { line, message }
    })?;

    for (ln, ids, marker) in markers {
        let f = mesh
            .find_facet(&ids)
            .ok_or_else(|| Error::Parse { line: ln, message: format!("{ids:?} is not a facet of the mesh") })?;
        if !mesh.is_boundary_facet(f) {
            return Err(Error::Parse { line: ln, message: format!("{ids:?} is not a boundary facet") });
        }
        mesh.facet_markers[f] = marker;
    }
    Ok(mesh)
}

fn parse_numbers<T: std::str::FromStr>(line: &str, ln: usize) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|w| w.parse::<T>().map_err(|_| Error::Parse { line: ln, message: format!("cannot parse `{w}`") }))
        .collect()
}

pub fn import_ascii(path: impl AsRef<Path>, orientation: Orientation) -> Result<SimplicialMesh> {
    let text = std::fs::read_to_string(path)?;
    parse_ascii(&text, orientation)
}

/// Writes the mesh in the format read by [`parse_ascii`]. Neumann facets are
/// listed explicitly; everything else on the boundary defaults to Dirichlet.
pub fn to_ascii(mesh: &SimplicialMesh) -> String {
    let mut out = String::new();
    let dim = mesh.dim;
    writeln!(out, "{} {} {}", dim, mesh.num_vertices(), mesh.num_cells()).unwrap();
    for p in &mesh.vertices {
        let coords: Vec<String> = (0..dim).map(|i| format!("{:?}", p[i])).collect();
        writeln!(out, "{}", coords.join(" ")).unwrap();
    }
    for c in 0..mesh.num_cells() {
        let ids: Vec<String> = mesh.cell(c).iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", ids.join(" ")).unwrap();
    }
    for f in 0..mesh.num_facets() {
        if mesh.facet_marker(f) == FacetMarker::Neumann {
            let ids: Vec<String> = mesh.facet(f).iter().map(|v| v.to_string()).collect();
            writeln!(out, "boundary {} N", ids.join(" ")).unwrap();
        }
    }
    out
}
