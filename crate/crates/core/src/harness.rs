//! Refinement sweeps, the locking study, and table output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::assembly::{self, Blocks, Discretization, MaterialField};
use crate::error::{Error, Result};
use crate::fem_spaces::{Method, RotationVariant};
use crate::linear_solver::{self, SolveReport};
use crate::mesh::{self, Orientation, SimplicialMesh};
use crate::par;
use crate::postprocess::{self, DiscreteSolution, ErrorRecord};
use crate::problems::{self, Problem};
use crate::reduction;
use crate::Point;

/// How a level is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SolverMethod {
    /// Local elimination followed by CG on the condensed system.
    Eliminated(Method),
    /// Direct solve of the full saddle-point system of the MSMFE-0
    /// discretization.
    SaddleOracle,
}

impl SolverMethod {
    pub fn discretization(self) -> Method {
        match self {
            SolverMethod::Eliminated(m) => m,
            SolverMethod::SaddleOracle => Method::Msmfe0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverMethod::Eliminated(m) => m.name(),
            SolverMethod::SaddleOracle => "saddle-oracle",
        }
    }
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "saddle-oracle" {
            Ok(SolverMethod::SaddleOracle)
        } else {
            s.parse().map(SolverMethod::Eliminated)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum OutputFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "markdown" | "md" => Ok(OutputFormat::Markdown),
            _ => Err(Error::InvalidArgument(format!("unknown format `{s}`"))),
        }
    }
}

/// Largest 3D level accepted without `allow_large`.
pub const MAX_DESK_3D_LEVEL: usize = 8;

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunConfig {
    pub method: SolverMethod,
    pub dim: usize,
    pub example: u8,
    /// Subdivisions per unit length; `h = 1/n`.
    pub levels: Vec<usize>,
    /// Poisson ratios for the locking study.
    pub nu_list: Vec<f64>,
    /// Contrast of the heterogeneous example.
    pub kappa: f64,
    pub tol: f64,
    pub max_iter: Option<usize>,
    /// Worker threads; 0 uses all cores, 1 is the deterministic reference.
    pub threads: usize,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub mesh_file: Option<PathBuf>,
    pub allow_large: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Eliminated(Method::Msmfe0),
            dim: 2,
            example: 1,
            levels: vec![2, 4, 8, 16, 32, 64],
            nu_list: locking_nu_list(),
            kappa: 1e6,
            tol: linear_solver::DEFAULT_TOL,
            max_iter: None,
            threads: 0,
            out: None,
            format: OutputFormat::Csv,
            mesh_file: None,
            allow_large: false,
        }
    }
}

/// `ν = 0.5 - 10^{-l}` for `l = 1, 2, 5, 9`.
pub fn locking_nu_list() -> Vec<f64> {
    [1, 2, 5, 9].iter().map(|&l| 0.5 - 10f64.powi(-l)).collect()
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let want_dim = if self.example == 2 { 3 } else { 2 };
        if !(1..=4).contains(&self.example) {
            return Err(Error::Config(format!("unknown example {}", self.example)));
        }
        if self.dim != want_dim {
            return Err(Error::Config(format!("example {} is posed in {want_dim}D, not {}D", self.example, self.dim)));
        }
        if self.mesh_file.is_none() {
            if self.levels.is_empty() {
                return Err(Error::Config("no levels given".into()));
            }
            if self.levels.contains(&0) {
                return Err(Error::Config("levels must be positive".into()));
            }
            if self.levels.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("levels must be strictly increasing".into()));
            }
            if self.example == 3 {
                if let Some(n) = self.levels.iter().find(|&&n| n % 3 != 0) {
                    return Err(Error::Config(format!(
                        "example 3 needs n divisible by 3 so cells do not straddle the interface (got {n})"
                    )));
                }
            }
            if self.dim == 3 && !self.allow_large {
                if let Some(n) = self.levels.iter().find(|&&n| n > MAX_DESK_3D_LEVEL) {
                    return Err(Error::Config(format!(
                        "3D level n = {n} exceeds {MAX_DESK_3D_LEVEL}; pass the large-run flag to allow it"
                    )));
                }
            }
        }
        if self.example == 4 {
            if self.nu_list.is_empty() {
                return Err(Error::Config("the locking study needs at least one Poisson ratio".into()));
            }
            if self.mesh_file.is_none() && self.levels.len() != 1 {
                return Err(Error::Config("the locking study runs on exactly one level".into()));
            }
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("tolerance must lie in (0, 1), got {}", self.tol)));
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        let iteration_factor = if self.example == 4 { LOCKING_ITERATION_FACTOR } else { DEFAULT_ITERATION_FACTOR };
        SolveOptions { tol: self.tol, max_iter: self.max_iter, iteration_factor }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolveOptions {
    pub tol: f64,
    /// Explicit iteration cap; overrides `iteration_factor`.
    pub max_iter: Option<usize>,
    /// Cap as a multiple of the number of CG unknowns.
    pub iteration_factor: usize,
}

pub const DEFAULT_ITERATION_FACTOR: usize = 10;

/// Near ν = 1/2 the condensed operator has a condition number of order
/// λ/μ · h⁻², and Jacobi-CG needs somewhat more than `10 n` iterations.
pub const LOCKING_ITERATION_FACTOR: usize = 100;

impl SolveOptions {
    fn cap(&self, n: usize) -> usize {
        self.max_iter.unwrap_or(self.iteration_factor * n.max(1))
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: linear_solver::DEFAULT_TOL, max_iter: None, iteration_factor: DEFAULT_ITERATION_FACTOR }
    }
}

/// One solved level.
#[derive(Debug, Clone)]
pub struct LevelResult {
    pub h: f64,
    /// Marked copy of the input mesh the solution lives on.
    pub mesh: SimplicialMesh,
    pub solution: DiscreteSolution,
    pub errors: Option<ErrorRecord>,
    /// CG report; `None` for the oracle.
    pub report: Option<SolveReport>,
    /// Size of the system actually solved.
    pub unknowns: usize,
}

/// Serializable summary of a level for manifests.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LevelSummary {
    pub h: f64,
    pub cells: usize,
    pub unknowns: usize,
    pub report: Option<SolveReport>,
}

impl LevelResult {
    pub fn summary(&self) -> LevelSummary {
        LevelSummary { h: self.h, cells: self.mesh.num_cells(), unknowns: self.unknowns, report: self.report }
    }
}

fn prepared(mesh: &SimplicialMesh, problem: &Problem) -> Result<SimplicialMesh> {
    let mut m = mesh.clone();
    problem.prepare_mesh(&mut m)?;
    Ok(m)
}

/// Assembles the blocks of `problem` on `mesh` (already marked).
pub fn assemble<'a>(
    mesh: &'a SimplicialMesh,
    problem: &Problem,
    method: Method,
) -> Result<(Discretization<'a>, Blocks)> {
    let material = MaterialField::from_problem(mesh, problem)?;
    let disc = Discretization::new(mesh, method, material)?;
    let blocks = assembly::assemble_all(&disc, problem)?;
    Ok((disc, blocks))
}

/// Eliminated-path solve on an assembled problem.
pub fn solve_eliminated(
    disc: &Discretization,
    blocks: &Blocks,
    opts: &SolveOptions,
) -> Result<(DiscreteSolution, SolveReport, usize)> {
    let elim = reduction::eliminate_stress(blocks)?;
    let (x, report, unknowns) = match disc.method.rotation_variant() {
        RotationVariant::PerCell => {
            let (x, report) = elim.system.solve(opts.tol, Some(opts.cap(elim.system.size)))?;
            (x, report, elim.system.size)
        }
        RotationVariant::PerVertex => {
            let rot = reduction::eliminate_rotation(&elim)?;
            let (u, report) = rot.system.solve(opts.tol, Some(opts.cap(rot.system.size)))?;
            let p = reduction::recover_rotation(&elim, &rot, &u);
            (reduction::join(&u, &p), report, rot.system.size)
        }
    };
    if !report.converged {
        return Err(Error::NonConvergence(format!(
            "CG stopped after {} iterations at relative residual {:.3e}",
            report.iterations, report.relative_residual
        )));
    }
    let fields = reduction::recover_fields(&elim, &x);
    Ok((
        DiscreteSolution {
            method: disc.method,
            stress: fields.stress,
            displacement: fields.displacement,
            rotation: fields.rotation,
        },
        report,
        unknowns,
    ))
}

/// Direct solve of the full saddle-point system: dense LU when small,
/// MINRES otherwise.
pub fn solve_saddle(disc: &Discretization, blocks: &Blocks) -> Result<(DiscreteSolution, usize)> {
    let system = assembly::assemble_saddle(disc, blocks)?;
    let n = system.len();
    let x: Vec<f64> = if n <= linear_solver::DENSE_LIMIT {
        let rhs = nalgebra::DVector::from_column_slice(&system.rhs);
        linear_solver::dense_lu_solve(system.matrix.to_dense(), &rhs)?.data.into()
    } else {
        let (x, rep) = linear_solver::minres(|v| system.matrix.matvec(v), &system.rhs, 1e-13, 20 * n)?;
        if !rep.converged {
            return Err(Error::NonConvergence("MINRES did not converge on the saddle-point system".into()));
        }
        x
    };
    let mut stress = blocks.rhs.essential.clone();
    for (k, &j) in system.stress_dofs.iter().enumerate() {
        stress[j] = x[k];
    }
    let nf = system.stress_dofs.len();
    let nu = system.num_displacement;
    let displacement = x[nf..nf + nu].to_vec();
    let mut rotation = vec![0.0; blocks.rotation.rows];
    for (k, &i) in system.rotation_dofs.iter().enumerate() {
        rotation[i] = x[nf + nu + k];
    }
    Ok((DiscreteSolution { method: disc.method, stress, displacement, rotation }, n))
}

/// Solves `problem` on `mesh` with `method` and, when the exact solution is
/// known, computes the relative errors.
pub fn solve_level(
    mesh: &SimplicialMesh,
    problem: &Problem,
    method: Method,
    opts: &SolveOptions,
) -> Result<LevelResult> {
    solve_level_with(mesh, problem, SolverMethod::Eliminated(method), opts)
}

pub fn solve_level_with(
    mesh: &SimplicialMesh,
    problem: &Problem,
    method: SolverMethod,
    opts: &SolveOptions,
) -> Result<LevelResult> {
    let mesh = prepared(mesh, problem)?;
    let h = mesh.h();
    let (disc, blocks) = assemble(&mesh, problem, method.discretization())?;
    let (solution, report, unknowns) = match method {
        SolverMethod::Eliminated(_) => {
            let (s, r, n) = solve_eliminated(&disc, &blocks, opts)?;
            (s, Some(r), n)
        }
        SolverMethod::SaddleOracle => {
            let (s, n) = solve_saddle(&disc, &blocks)?;
            (s, None, n)
        }
    };
    let errors = problem.exact.as_ref().map(|e| postprocess::compute_errors(&disc, &solution, e, h));
    drop(disc);
    Ok(LevelResult { h, mesh, solution, errors, report, unknowns })
}

/// Builds the problem selected by the configuration.
pub fn problem_for(config: &RunConfig, nu: Option<f64>) -> Result<Problem> {
    match config.example {
        1 => Ok(problems::example1()),
        2 => Ok(problems::example2()),
        3 => problems::example3(config.kappa),
        4 => problems::example4(nu.unwrap_or(config.nu_list[0])),
        e => Err(Error::Config(format!("unknown example {e}"))),
    }
}

/// Interior sample grid for the body-force check.
fn probe_points(dim: usize) -> Vec<Point> {
    let t = |k: usize| (k as f64 + 0.37) / 5.0;
    let mut pts = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            if dim == 2 {
                pts.push(Point::new(t(i), t(j), 0.0));
            } else {
                pts.extend((0..5).map(|k| Point::new(t(i), t(j), t(k))));
            }
        }
    }
    pts
}

fn meshes(config: &RunConfig) -> Result<Vec<SimplicialMesh>> {
    match &config.mesh_file {
        Some(path) => Ok(vec![mesh::import_ascii(path, Orientation::Fix)?]),
        None => config.levels.iter().map(|&n| mesh::generate_structured(config.dim, n)).collect(),
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ConvergenceRun {
    pub records: Vec<ErrorRecord>,
    pub levels: Vec<LevelSummary>,
}

/// Runs every level of the configuration and computes rates.
pub fn run_convergence(config: &RunConfig) -> Result<ConvergenceRun> {
    config.validate()?;
    if config.example == 4 {
        return Err(Error::Config("example 4 has no exact solution; use the locking study".into()));
    }
    par::with_threads(config.threads, || {
        let problem = problem_for(config, None)?;
        if let Some(exact) = &problem.exact {
            exact.check_body_force(&probe_points(config.dim))?;
        }
        let mut records = Vec::new();
        let mut levels = Vec::new();
        for mesh in meshes(config)? {
            let h = mesh.h();
            let level = solve_level_with(&mesh, &problem, config.method, &config.solve_options())
                .map_err(|e| Error::NonConvergence(format!("level h = {h}: {e}")))?;
            log::info!("h = {h}: {:?}", level.report);
            records.push(level.errors.expect("manufactured problems have an exact solution"));
            levels.push(level.summary());
        }
        postprocess::compute_rates(&mut records)?;
        Ok(ConvergenceRun { records, levels })
    })
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map(|r| format!("{r:.4}")).unwrap_or_default()
}

pub const CSV_HEADER: &str = "h,e_sigma,r_sigma,e_div,r_div,e_u,r_u,e_proj_u,r_proj_u,e_p,r_p";

pub fn to_csv(records: &[ErrorRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{}", r.h);
        for (k, e) in r.errors().iter().enumerate() {
            let _ = write!(out, ",{e:.6e},{}", fmt_rate(r.rates.map(|x| x[k])));
        }
        out.push('\n');
    }
    out
}

pub fn to_markdown(records: &[ErrorRecord]) -> String {
    let mut out =
        String::from("| h | ‖σ-σh‖ | rate | ‖div(σ-σh)‖ | rate | ‖u-uh‖ | rate | ‖Qu-uh‖ | rate | ‖p-ph‖ | rate |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in records {
        let h = if r.h > 0.0 { format!("1/{}", (1.0 / r.h).round()) } else { r.h.to_string() };
        let _ = write!(out, "| {h} ");
        for (k, e) in r.errors().iter().enumerate() {
            let rate = r.rates.map(|x| format!("{:.2}", x[k])).unwrap_or_else(|| "-".into());
            let _ = write!(out, "| {e:.2e} | {rate} ");
        }
        out.push_str("|\n");
    }
    out
}

pub fn render(records: &[ErrorRecord], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => to_csv(records),
        OutputFormat::Markdown => to_markdown(records),
    }
}

/// `out.manifest.json` next to `out`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes the table and a JSON manifest echoing the configuration and the
/// per-level solver reports.
pub fn write_outputs<T: serde::Serialize>(config: &RunConfig, table: &str, summary: &T) -> Result<()> {
    if let Some(out) = &config.out {
        std::fs::write(out, table)?;
        let manifest = serde_json::json!({ "config": config, "results": summary });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(manifest_path(out), text)?;
    }
    Ok(())
}

/// Displacement-magnitude profile along the top edge.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LockingProfile {
    pub nu: f64,
    /// `(x, |u_h|)` at the cells touching `y = 1`, by increasing `x`.
    pub samples: Vec<(f64, f64)>,
    pub report: Option<SolveReport>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct LockingRun {
    pub h: f64,
    pub profiles: Vec<LockingProfile>,
    /// `max_i |a_i - b_i| / max_i |b_i|` between consecutive profiles `a`, `b`.
    pub changes: Vec<f64>,
}

/// Cells with a facet on the top edge, ordered by centroid `x`.
pub fn top_row_cells(mesh: &SimplicialMesh) -> Vec<usize> {
    let mut cells: Vec<usize> = (0..mesh.num_facets())
        .filter(|&f| mesh.is_boundary_facet(f) && (mesh.facet_centroid(f).y - 1.0).abs() < 1e-10)
        .map(|f| mesh.facet_cells(f).0)
        .collect();
    cells.sort_by(|&a, &b| mesh.cell_centroid(a).x.total_cmp(&mesh.cell_centroid(b).x));
    cells.dedup();
    cells
}

pub fn profile_change(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x.1 - y.1).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.1.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

pub fn run_locking(config: &RunConfig) -> Result<LockingRun> {
    config.validate()?;
    if config.example != 4 {
        return Err(Error::Config("the locking study uses example 4".into()));
    }
    par::with_threads(config.threads, || {
        let mesh = meshes(config)?.remove(0);
        let mut profiles = Vec::new();
        let mut h = mesh.h();
        for &nu in &config.nu_list {
            let problem = problem_for(config, Some(nu))?;
            let level = solve_level_with(&mesh, &problem, config.method, &config.solve_options())
                .map_err(|e| Error::NonConvergence(format!("ν = {nu}: {e}")))?;
            h = level.h;
            let samples = top_row_cells(&level.mesh)
                .into_iter()
                .map(|c| {
                    let u = Point::new(level.solution.displacement[2 * c], level.solution.displacement[2 * c + 1], 0.0);
                    (level.mesh.cell_centroid(c).x, u.norm())
                })
                .collect();
            profiles.push(LockingProfile { nu, samples, report: level.report });
        }
        let changes = profiles.windows(2).map(|w| profile_change(&w[0].samples, &w[1].samples)).collect();
        Ok(LockingRun { h, profiles, changes })
    })
}

pub fn locking_csv(run: &LockingRun) -> String {
    let mut out = String::from("nu,x,u_mag\n");
    for p in &run.profiles {
        for (x, u) in &p.samples {
            let _ = writeln!(out, "{},{x},{u:.6e}", p.nu);
        }
    }
    out
}

pub fn locking_markdown(run: &LockingRun) -> String {
    let mut out = String::from("| ν | max |u_h| on top edge | change vs previous ν |\n|---|---|---|\n");
    for (i, p) in run.profiles.iter().enumerate() {
        let max = p.samples.iter().map(|s| s.1).fold(0.0, f64::max);
        let change = if i == 0 { "-".to_string() } else { format!("{:.3e}", run.changes[i - 1]) };
        let _ = writeln!(out, "| {} | {max:.6e} | {change} |", p.nu);
    }
    out
}
