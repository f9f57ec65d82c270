//! Local elimination of the stress, and for MSMFE-1 of the rotation.
//!
//! Every stress DOF belongs to one vertex block of `M`, and each row of `B`
//! and `C` only touches the blocks of the vertices it is attached to. The
//! condensed operator `K M⁻¹ Kᵀ` with `K = [B; C]` is therefore a sum of
//! small dense per-vertex contributions `K_v M_v⁻¹ K_vᵀ`, which is how it is
//! stored and applied. With a vertex-based rotation the rows of `C` at `v`
//! touch block `v` only, so the rotation can be eliminated inside the same
//! contribution.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{Blocks, SparseCoupling};
use crate::error::{Error, Result};
use crate::fem_spaces::{RotationLayout, RotationVariant};
use crate::linear_solver::{self, DenseFactor};
use crate::par;

/// Dense local contribution on the global unknowns `rows`.
#[derive(Debug, Clone)]
struct LocalBlock {
    rows: Vec<usize>,
    matrix: DMatrix<f64>,
}

/// Symmetric positive definite operator stored as a sum of local dense
/// blocks, plus unknowns whose equation is the identity.
#[derive(Debug, Clone)]
pub struct CondensedSystem {
    pub size: usize,
    locals: Vec<LocalBlock>,
    /// Unknowns pinned to zero.
    pinned: Vec<usize>,
    pub rhs: Vec<f64>,
}

impl CondensedSystem {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let parts = par::map_slice(&self.locals, |l| {
            let xl = DVector::from_iterator(l.rows.len(), l.rows.iter().map(|&i| x[i]));
            &l.matrix * xl
        });
        let mut y = vec![0.0; self.size];
        for (l, yl) in self.locals.iter().zip(parts) {
            for (k, &i) in l.rows.iter().enumerate() {
                y[i] += yl[k];
            }
        }
        for &i in &self.pinned {
            y[i] += x[i];
        }
        y
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.size];
        for l in &self.locals {
            for (k, &i) in l.rows.iter().enumerate() {
                d[i] += l.matrix[(k, k)];
            }
        }
        for &i in &self.pinned {
            d[i] += 1.0;
        }
        d
    }

    /// Explicit dense matrix, for small systems.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.size, self.size);
        for l in &self.locals {
            for (a, &i) in l.rows.iter().enumerate() {
                for (b, &j) in l.rows.iter().enumerate() {
                    m[(i, j)] += l.matrix[(a, b)];
                }
            }
        }
        for &i in &self.pinned {
            m[(i, i)] += 1.0;
        }
        m
    }

    /// Preconditioned CG on this system.
    pub fn solve(&self, tol: f64, max_iter: Option<usize>) -> Result<(Vec<f64>, linear_solver::SolveReport)> {
        linear_solver::cg_spd(|x| self.apply(x), &self.diagonal(), &self.rhs, tol, max_iter)
    }
}

/// Per-vertex data of the stress elimination.
#[derive(Debug, Clone)]
struct VertexLocal {
    /// Free stress DOFs of the block.
    free: Vec<usize>,
    factor: Option<DenseFactor>,
    /// Displacement and rotation unknowns coupled to the block, in the
    /// `(u, p)` numbering.
    rows: Vec<usize>,
    /// `K_vᵀ` restricted to free DOFs: `free.len() × rows.len()`.
    kt: DMatrix<f64>,
    /// `M_v⁻¹ K_vᵀ`.
    minv_kt: DMatrix<f64>,
    /// `L⁻¹ K_vᵀ` with `M_v = L Lᵀ`, when `M_v` is positive definite.
    half: Option<DMatrix<f64>>,
    /// `K_v M_v⁻¹ K_vᵀ`.
    condensed: DMatrix<f64>,
}

/// Result of eliminating the stress: the `(u, p)` system and what is needed
/// to recover `σ`.
#[derive(Debug, Clone)]
pub struct StressElimination {
    pub num_displacement: usize,
    pub num_rotation: usize,
    locals: Vec<VertexLocal>,
    /// Eliminated stress-equation right-hand side `G - M σ_E` on free DOFs.
    g_free: Vec<f64>,
    /// Prescribed stress values (zero on free DOFs).
    essential_values: Vec<f64>,
    rotation_layout: RotationLayout,
    pub system: CondensedSystem,
}

fn restrict_rows(kt: &SparseCoupling, dof: usize, offset: usize, active: Option<&[bool]>) -> Vec<(usize, f64)> {
    kt.row(dof).filter(|(i, _)| active.is_none_or(|a| a[*i])).map(|(i, v)| (i + offset, v)).collect()
}

/// Eliminates the stress blockwise, producing the `(u, p)` system
/// `K M⁻¹ Kᵀ x = K M⁻¹ G' - [F'; H]`.
pub fn eliminate_stress(blocks: &Blocks) -> Result<StressElimination> {
    let nu = blocks.divergence.rows;
    let np = blocks.rotation.rows;
    let bt = blocks.divergence.transpose();
    let ct = blocks.rotation.transpose();
    let sigma_e = &blocks.rhs.essential;
    let mass_e = blocks.mass.matvec(sigma_e);
    let active = &blocks.active_rotations;

    let locals = par::map_range(blocks.mass.num_blocks(), |v| -> Result<VertexLocal> {
        let range = blocks.mass.range(v);
        let free: Vec<usize> = range.clone().filter(|&j| !blocks.essential[j]).collect();
        let mut entries: Vec<Vec<(usize, f64)>> = Vec::with_capacity(free.len());
        let mut rows: Vec<usize> = Vec::new();
        for &j in &free {
            let mut e = restrict_rows(&bt, j, 0, None);
            e.extend(restrict_rows(&ct, j, nu, Some(active)));
            rows.extend(e.iter().map(|x| x.0));
            entries.push(e);
        }
        rows.sort_unstable();
        rows.dedup();
        let mut kt = DMatrix::zeros(free.len(), rows.len());
        for (a, e) in entries.iter().enumerate() {
            for &(i, val) in e {
                let b = rows.binary_search(&i).expect("row collected");
                kt[(a, b)] = val;
            }
        }
        if free.is_empty() {
            let condensed = DMatrix::zeros(rows.len(), rows.len());
            return Ok(VertexLocal { free, factor: None, rows, minv_kt: kt.clone(), kt, half: None, condensed });
        }
        let block = blocks.mass.block(v);
        let local =
            DMatrix::from_fn(free.len(), free.len(), |a, b| block[(free[a] - range.start, free[b] - range.start)]);
        let factor = linear_solver::factor_symmetric(&local, v)?;
        let minv_kt = factor.solve_matrix(&kt);
        // A Gram product keeps the block exactly symmetric and semidefinite.
        let half = factor.half_solve(&kt);
        let condensed = match &half {
            Some(w) => w.transpose() * w,
            None => symmetrized(kt.transpose() * &minv_kt),
        };
        Ok(VertexLocal { free, factor: Some(factor), rows, kt, minv_kt, half, condensed })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let g_free: Vec<f64> = (0..blocks.rhs.stress.len())
        .map(|j| if blocks.essential[j] { 0.0 } else { blocks.rhs.stress[j] - mass_e[j] })
        .collect();

    // K M⁻¹ G', accumulated per vertex.
    let n = nu + np;
    let mut rhs = vec![0.0; n];
    let parts = par::map_slice(&locals, |l| {
        let g = DVector::from_iterator(l.free.len(), l.free.iter().map(|&j| g_free[j]));
        l.minv_kt.transpose() * g
    });
    for (l, part) in locals.iter().zip(parts) {
        for (k, &i) in l.rows.iter().enumerate() {
            rhs[i] += part[k];
        }
    }
    // Minus [F'; H] with F' = F - B_E σ_E and H = -C_E σ_E.
    let b_e = known_part(&blocks.divergence, &blocks.essential, sigma_e);
    let c_e = known_part(&blocks.rotation, &blocks.essential, sigma_e);
    for i in 0..nu {
        rhs[i] -= blocks.rhs.displacement[i] - b_e[i];
    }
    let mut pinned = Vec::new();
    for i in 0..np {
        if active[i] {
            rhs[nu + i] += c_e[i];
        } else {
            rhs[nu + i] = 0.0;
            pinned.push(nu + i);
        }
    }

    let system = CondensedSystem {
        size: n,
        locals: locals
            .iter()
            .filter(|l| !l.rows.is_empty())
            .map(|l| LocalBlock { rows: l.rows.clone(), matrix: l.condensed.clone() })
            .collect(),
        pinned,
        rhs,
    };
    Ok(StressElimination {
        num_displacement: nu,
        num_rotation: np,
        locals,
        g_free,
        essential_values: sigma_e.clone(),
        rotation_layout: blocks.rotation_layout,
        system,
    })
}

/// `(m + mᵀ)/2`; removes round-off asymmetry that CG is sensitive to when
/// the material is nearly incompressible.
fn symmetrized(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `ZᵀZ` with `Z = (I - Q Qᵀ) W_u`, `Q` an orthonormal basis of `W_p`. Equals
/// `W_uᵀW_u - W_uᵀW_p (W_pᵀW_p)⁻¹ W_pᵀW_u` without the cancellation.
fn projected_gram(w: &DMatrix<f64>, u_pos: &[usize], p_pos: &[usize]) -> DMatrix<f64> {
    let wu = w.select_columns(u_pos);
    let wp = w.select_columns(p_pos);
    let q = wp.qr().q();
    let z = &wu - &q * (q.transpose() * &wu);
    z.transpose() * z
}

/// `Σ_{j essential} m_ij σ_j` for every row.
fn known_part(m: &SparseCoupling, essential: &[bool], values: &[f64]) -> Vec<f64> {
    (0..m.rows).map(|i| m.row(i).filter(|(j, _)| essential[*j]).map(|(j, v)| v * values[j]).sum()).collect()
}

/// Stress from `σ = M⁻¹(G' - Bᵀu - Cᵀp)` on free DOFs and the prescribed
/// values elsewhere. `x` is in the `(u, p)` numbering.
pub fn recover_stress(elim: &StressElimination, x: &[f64]) -> Vec<f64> {
    let parts = par::map_slice(&elim.locals, |l| match &l.factor {
        None => DVector::zeros(0),
        Some(f) => {
            let xl = DVector::from_iterator(l.rows.len(), l.rows.iter().map(|&i| x[i]));
            let g = DVector::from_iterator(l.free.len(), l.free.iter().map(|&j| elim.g_free[j]));
            f.solve(&(g - &l.kt * xl))
        }
    });
    let mut sigma = elim.essential_values.clone();
    for (l, s) in elim.locals.iter().zip(parts) {
        for (k, &j) in l.free.iter().enumerate() {
            sigma[j] = s[k];
        }
    }
    sigma
}

/// Recovered fields.
#[derive(Debug, Clone)]
pub struct Fields {
    pub stress: Vec<f64>,
    pub displacement: Vec<f64>,
    pub rotation: Vec<f64>,
}

pub fn recover_fields(elim: &StressElimination, x: &[f64]) -> Fields {
    let nu = elim.num_displacement;
    Fields { stress: recover_stress(elim, x), displacement: x[..nu].to_vec(), rotation: x[nu..].to_vec() }
}

/// Per-vertex `D_v = C_v M_v⁻¹ C_vᵀ` and its inverse.
#[derive(Debug, Clone)]
pub struct RotationSchurBlocks {
    /// Active rotation unknowns (in the rotation numbering) of each vertex.
    pub rows: Vec<Vec<usize>>,
    pub blocks: Vec<DMatrix<f64>>,
    pub inverses: Vec<DMatrix<f64>>,
}

/// Displacement-only system after local rotation elimination, with what is
/// needed to recover the rotation.
#[derive(Debug, Clone)]
pub struct RotationElimination {
    pub schur: RotationSchurBlocks,
    /// Per vertex: positions of displacement and rotation unknowns inside
    /// the stress-elimination local block.
    split: Vec<(Vec<usize>, Vec<usize>)>,
    pub system: CondensedSystem,
}

/// Eliminates a vertex-based rotation. Each vertex contribution
/// `[S_uu S_up; S_pu D]` becomes `S_uu - S_up D⁻¹ S_pu`.
pub fn eliminate_rotation(elim: &StressElimination) -> Result<RotationElimination> {
    let nu = elim.num_displacement;
    let layout = elim.rotation_layout;
    if layout.variant != RotationVariant::PerVertex {
        return Err(Error::InvalidArgument("rotation elimination needs a vertex-based rotation layout".into()));
    }
    let results = par::map_range(elim.locals.len(), |v| -> Result<_> {
        let l = &elim.locals[v];
        let s = &l.condensed;
        let u_pos: Vec<usize> = (0..l.rows.len()).filter(|&k| l.rows[k] < nu).collect();
        let p_pos: Vec<usize> = (0..l.rows.len()).filter(|&k| l.rows[k] >= nu).collect();
        debug_assert!(p_pos.iter().all(|&k| (l.rows[k] - nu) / layout.components == v));
        let pick = |a: &[usize], b: &[usize]| DMatrix::from_fn(a.len(), b.len(), |i, j| s[(a[i], b[j])]);
        let suu = pick(&u_pos, &u_pos);
        if p_pos.is_empty() {
            return Ok((suu, DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), u_pos, p_pos));
        }
        let sup = pick(&u_pos, &p_pos);
        let d = pick(&p_pos, &p_pos);
        let factor = linear_solver::factor_symmetric(&d, v).map_err(|e| match e {
            Error::NotSpd { vertex } => Error::SingularRotationBlock { vertex },
            other => other,
        })?;
        let dinv = factor.inverse();
        let reduced = match &l.half {
            Some(w) => projected_gram(w, &u_pos, &p_pos),
            None => symmetrized(&suu - &sup * &dinv * sup.transpose()),
        };
        Ok((reduced, d, dinv, u_pos, p_pos))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let rhs_full = &elim.system.rhs;
    let mut rhs = rhs_full[..nu].to_vec();
    let mut locals = Vec::new();
    let mut schur = RotationSchurBlocks { rows: Vec::new(), blocks: Vec::new(), inverses: Vec::new() };
    let mut split = Vec::new();
    for (v, (reduced, d, dinv, u_pos, p_pos)) in results.into_iter().enumerate() {
        let l = &elim.locals[v];
        if !p_pos.is_empty() {
            // r_u -= S_up D⁻¹ r_p
            let s = &l.condensed;
            let rp = DVector::from_iterator(p_pos.len(), p_pos.iter().map(|&k| rhs_full[l.rows[k]]));
            let sup = DMatrix::from_fn(u_pos.len(), p_pos.len(), |i, j| s[(u_pos[i], p_pos[j])]);
            let corr = sup * (&dinv * rp);
            for (i, &k) in u_pos.iter().enumerate() {
                rhs[l.rows[k]] -= corr[i];
            }
        }
        if !u_pos.is_empty() {
            locals.push(LocalBlock { rows: u_pos.iter().map(|&k| l.rows[k]).collect(), matrix: reduced });
        }
        schur.rows.push(p_pos.iter().map(|&k| l.rows[k] - nu).collect());
        schur.blocks.push(d);
        schur.inverses.push(dinv);
        split.push((u_pos, p_pos));
    }
    Ok(RotationElimination { schur, split, system: CondensedSystem { size: nu, locals, pinned: Vec::new(), rhs } })
}

/// `p_v = D_v⁻¹ (r_p - S_pu u)` at every vertex; inactive rotations are zero.
pub fn recover_rotation(elim: &StressElimination, rot: &RotationElimination, u: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; elim.num_rotation];
    let parts = par::map_range(elim.locals.len(), |v| {
        let (u_pos, p_pos) = &rot.split[v];
        if p_pos.is_empty() {
            return DVector::zeros(0);
        }
        let l = &elim.locals[v];
        let s = &l.condensed;
        let spu = DMatrix::from_fn(p_pos.len(), u_pos.len(), |i, j| s[(p_pos[i], u_pos[j])]);
        let ul = DVector::from_iterator(u_pos.len(), u_pos.iter().map(|&k| u[l.rows[k]]));
        let rp = DVector::from_iterator(p_pos.len(), p_pos.iter().map(|&k| elim.system.rhs[l.rows[k]]));
        &rot.schur.inverses[v] * (rp - spu * ul)
    });
    for (v, pv) in parts.into_iter().enumerate() {
        for (k, &i) in rot.schur.rows[v].iter().enumerate() {
            p[i] = pv[k];
        }
    }
    p
}

/// Concatenates `u` and `p` into the `(u, p)` numbering.
pub fn join(u: &[f64], p: &[f64]) -> Vec<f64> {
    let mut x = u.to_vec();
    x.extend_from_slice(p);
    x
}
