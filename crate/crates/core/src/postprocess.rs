//! Error norms against manufactured solutions and observed convergence
//! rates.

use crate::assembly::Discretization;
use crate::error::{Error, Result};
use crate::fem_spaces::{self, Method, RotationVariant};
use crate::par;
use crate::problems::ManufacturedSolution;
use crate::quadrature::{self, QuadratureRule};
use crate::{Point, Tensor};

/// Discrete solution in global numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSolution {
    pub method: Method,
    pub stress: Vec<f64>,
    pub displacement: Vec<f64>,
    pub rotation: Vec<f64>,
}

/// Relative errors of one level and the rates against the previous level.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ErrorRecord {
    pub h: f64,
    pub stress: f64,
    pub divergence: f64,
    pub displacement: f64,
    pub projected_displacement: f64,
    pub rotation: f64,
    /// Rates in the same column order; `None` on the coarsest level.
    pub rates: Option<[f64; 5]>,
}

impl ErrorRecord {
    pub fn errors(&self) -> [f64; 5] {
        [self.stress, self.divergence, self.displacement, self.projected_displacement, self.rotation]
    }
}

/// Absolute error and exact norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorPair {
    pub error: f64,
    pub norm: f64,
}

impl ErrorPair {
    /// `error / norm`, or the absolute error with a warning when the exact
    /// field vanishes.
    pub fn relative(&self) -> f64 {
        if self.norm > 0.0 {
            self.error / self.norm
        } else {
            log::warn!("exact field has zero norm; reporting the absolute error");
            self.error
        }
    }
}

fn default_rule(dim: usize) -> QuadratureRule {
    quadrature::gauss_rule(dim, quadrature::DEFAULT_DEGREE).expect("default degree is supported")
}

/// `Σ_E ∫_E (|e|², |x|²)` where `f(c, x̂, x)` returns the pair of vectors
/// (discrete minus exact, exact).
fn integrate_pair<F>(disc: &Discretization, f: F) -> ErrorPair
where
    F: Fn(usize, &Point, &Point) -> (f64, f64) + Sync + Send,
{
    let rule = default_rule(disc.dim());
    let parts = par::map_range(disc.mesh.num_cells(), |c| {
        let map = &disc.cells[c].map;
        let mut e = 0.0;
        let mut n = 0.0;
        for (xr, w) in rule.points.iter().zip(&rule.weights) {
            let (de, dn) = f(c, xr, &map.apply(xr));
            e += w * de;
            n += w * dn;
        }
        (map.det * e, map.det * n)
    });
    let (e, n) = parts.into_iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    ErrorPair { error: e.sqrt(), norm: n.sqrt() }
}

fn sq(t: &Tensor) -> f64 {
    t.norm_squared()
}

/// Per-vertex tensors `Σ_{j,r} σ_{(a,j,r)} e_r ⊗ q_{a,j}` of one cell.
fn cell_stress_vertex_tensors(disc: &Discretization, stress: &[f64], c: usize) -> Vec<Tensor> {
    let d = disc.dim();
    let cell = &disc.cells[c];
    (0..=d)
        .map(|a| {
            let mut t = Tensor::zeros();
            for j in 0..d {
                for r in 0..d {
                    let (g, s) = cell.dofs[fem_spaces::local_index(d, a, j, r)];
                    t += s * stress[g] * cell.basis.vertex_value(a, j, r);
                }
            }
            t
        })
        .collect()
}

fn cell_stress_divergence(disc: &Discretization, stress: &[f64], c: usize) -> Point {
    let d = disc.dim();
    let cell = &disc.cells[c];
    let mut div = Point::zeros();
    for a in 0..=d {
        for j in 0..d {
            for r in 0..d {
                let (g, s) = cell.dofs[fem_spaces::local_index(d, a, j, r)];
                div[r] += s * stress[g] * cell.basis.divergences[a][j];
            }
        }
    }
    div
}

/// Discrete stress at reference point `x̂` of cell `c`.
pub fn stress_at(disc: &Discretization, stress: &[f64], c: usize, xr: &Point) -> Tensor {
    let lam = disc.reference.barycentric(xr);
    cell_stress_vertex_tensors(disc, stress, c).iter().zip(lam).map(|(t, l)| l * t).sum()
}

/// `‖σ - σ_h‖` and `‖σ‖`.
pub fn stress_error(disc: &Discretization, stress: &[f64], exact: &ManufacturedSolution) -> ErrorPair {
    let tensors = par::map_range(disc.mesh.num_cells(), |c| cell_stress_vertex_tensors(disc, stress, c));
    integrate_pair(disc, |c, xr, x| {
        let lam = disc.reference.barycentric(xr);
        let sh: Tensor = tensors[c].iter().zip(&lam).map(|(t, l)| *l * t).sum();
        let s = exact.stress(x);
        (sq(&(sh - s)), sq(&s))
    })
}

/// `‖div σ - div σ_h‖` and `‖div σ‖`, using `div σ = f`.
pub fn divergence_error(disc: &Discretization, stress: &[f64], exact: &ManufacturedSolution) -> ErrorPair {
    let divs = par::map_range(disc.mesh.num_cells(), |c| cell_stress_divergence(disc, stress, c));
    integrate_pair(disc, |c, _, x| {
        let f = exact.body_force(x);
        ((divs[c] - f).norm_squared(), f.norm_squared())
    })
}

fn cell_vector(values: &[f64], c: usize, d: usize) -> Point {
    let mut p = Point::zeros();
    for r in 0..d {
        p[r] = values[c * d + r];
    }
    p
}

/// `‖u - u_h‖` and `‖u‖`.
pub fn displacement_error(disc: &Discretization, u: &[f64], exact: &ManufacturedSolution) -> ErrorPair {
    let d = disc.dim();
    integrate_pair(disc, |c, _, x| {
        let ue = exact.displacement(x);
        ((cell_vector(u, c, d) - ue).norm_squared(), ue.norm_squared())
    })
}

/// Cell averages of the exact displacement, `d` values per cell.
pub fn cell_averages(disc: &Discretization, exact: &ManufacturedSolution) -> Vec<f64> {
    let rule = default_rule(disc.dim());
    let d = disc.dim();
    let parts = par::map_range(disc.mesh.num_cells(), |c| {
        let map = &disc.cells[c].map;
        let sum: Point =
            rule.points.iter().zip(&rule.weights).map(|(xr, w)| *w * exact.displacement(&map.apply(xr))).sum();
        let avg = sum * (map.det / disc.cells[c].basis.measure);
        (0..d).map(|r| avg[r]).collect::<Vec<_>>()
    });
    parts.into_iter().flatten().collect()
}

/// `‖Q u - u_h‖` with the cell-average projection `Q`, and `‖u‖`.
pub fn projected_displacement_error(disc: &Discretization, u: &[f64], exact: &ManufacturedSolution) -> ErrorPair {
    let d = disc.dim();
    let avg = cell_averages(disc, exact);
    integrate_pair(disc, |c, _, x| {
        let ue = exact.displacement(x);
        ((cell_vector(u, c, d) - cell_vector(&avg, c, d)).norm_squared(), ue.norm_squared())
    })
}

/// `‖p - p_h‖` and `‖p‖` for the method's rotation; the scaled method is
/// compared against `p̃ = Ξ⁻¹(A⁻¹ Skew ∇u)`.
pub fn rotation_error(disc: &Discretization, p: &[f64], exact: &ManufacturedSolution) -> ErrorPair {
    let layout = disc.maps.rotation;
    let k = layout.components;
    let d = disc.dim();
    let scaled = disc.method == Method::Msmfe1Scaled;
    integrate_pair(disc, |c, xr, x| {
        let mut ph = Point::zeros();
        match layout.variant {
            RotationVariant::PerCell => {
                for i in 0..k {
                    ph[i] = p[layout.index(c, i)];
                }
            }
            RotationVariant::PerVertex => {
                let lam = disc.reference.barycentric(xr);
                for (a, &v) in disc.mesh.cell(c).iter().enumerate().take(d + 1) {
                    for i in 0..k {
                        ph[i] += lam[a] * p[layout.index(v, i)];
                    }
                }
            }
        }
        let pe = if scaled { exact.scaled_rotation(x) } else { exact.rotation(x) };
        ((ph - pe).norm_squared(), pe.norm_squared())
    })
}

/// All five relative errors at mesh size `h`.
pub fn compute_errors(
    disc: &Discretization,
    sol: &DiscreteSolution,
    exact: &ManufacturedSolution,
    h: f64,
) -> ErrorRecord {
    ErrorRecord {
        h,
        stress: stress_error(disc, &sol.stress, exact).relative(),
        divergence: divergence_error(disc, &sol.stress, exact).relative(),
        displacement: displacement_error(disc, &sol.displacement, exact).relative(),
        projected_displacement: projected_displacement_error(disc, &sol.displacement, exact).relative(),
        rotation: rotation_error(disc, &sol.rotation, exact).relative(),
        rates: None,
    }
}

/// `log(e_coarse / e_fine) / log(h_coarse / h_fine)`.
pub fn rate(e_coarse: f64, e_fine: f64, h_coarse: f64, h_fine: f64) -> f64 {
    (e_coarse / e_fine).ln() / (h_coarse / h_fine).ln()
}

/// Fills in rates for records ordered by decreasing `h`.
pub fn compute_rates(records: &mut [ErrorRecord]) -> Result<()> {
    for i in 1..records.len() {
        if !(records[i].h < records[i - 1].h) {
            return Err(Error::InvalidArgument(format!(
                "mesh sizes must decrease: h = {} follows h = {}",
                records[i].h,
                records[i - 1].h
            )));
        }
    }
    if let Some(first) = records.first_mut() {
        first.rates = None;
    }
    for i in 1..records.len() {
        let (prev, cur) = (records[i - 1], records[i]);
        let (ec, ef) = (prev.errors(), cur.errors());
        records[i].rates = Some(std::array::from_fn(|k| rate(ec[k], ef[k], prev.h, cur.h)));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::MaterialField;
    use crate::mesh::generate_structured;
    use crate::problems;

    fn record(h: f64, e: f64) -> ErrorRecord {
        ErrorRecord {
            h,
            stress: e,
            divergence: e,
            displacement: e,
            projected_displacement: e,
            rotation: e,
            rates: None,
        }
    }

    #[test]
    fn rate_examples() {
        assert!((rate(0.4, 0.1, 0.5, 0.25) - 2.0).abs() < 1e-14);
        assert_eq!(rate(0.3, 0.3, 0.5, 0.25), 0.0);
        let mut recs = vec![record(0.5, 0.4), record(0.25, 0.1), record(0.125, 0.1)];
        compute_rates(&mut recs).unwrap();
        assert!(recs[0].rates.is_none());
        assert!((recs[1].rates.unwrap()[0] - 2.0).abs() < 1e-14);
        assert_eq!(recs[2].rates.unwrap()[4], 0.0);
        let mut bad = vec![record(0.25, 0.1), record(0.5, 0.1)];
        assert!(matches!(compute_rates(&mut bad), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn zero_discrete_gives_unit_relative_error() {
        let mut mesh = generate_structured(2, 3).unwrap();
        let problem = problems::example1();
        problem.prepare_mesh(&mut mesh).unwrap();
        let exact = problem.exact.as_ref().unwrap();
        for method in [Method::Msmfe0, Method::Msmfe1] {
            let disc = crate::assembly::Discretization::new(
                &mesh,
                method,
                MaterialField::from_problem(&mesh, &problem).unwrap(),
            )
            .unwrap();
            let zero_s = vec![0.0; disc.maps.stress.len()];
            let zero_u = vec![0.0; disc.maps.displacement];
            let zero_p = vec![0.0; disc.maps.rotation.len()];
            assert!((stress_error(&disc, &zero_s, exact).relative() - 1.0).abs() < 1e-14);
            assert!((divergence_error(&disc, &zero_s, exact).relative() - 1.0).abs() < 1e-14);
            assert!((displacement_error(&disc, &zero_u, exact).relative() - 1.0).abs() < 1e-14);
            assert!((rotation_error(&disc, &zero_p, exact).relative() - 1.0).abs() < 1e-14);
            let avg = cell_averages(&disc, exact);
            assert!(projected_displacement_error(&disc, &avg, exact).error < 1e-15);
        }
        let pair = ErrorPair { error: 0.0, norm: 0.0 };
        assert_eq!(pair.relative(), 0.0);
    }

    #[test]
    fn interpolated_constant_stress_is_exact() {
        // A constant tensor lies in the stress space; its DOFs are σ n_f at
        // facet vertices.
        let mesh = generate_structured(2, 2).unwrap();
        let disc = crate::assembly::Discretization::new(
            &mesh,
            Method::Msmfe0,
            MaterialField::uniform(&mesh, 1.0, 1.0).unwrap(),
        )
        .unwrap();
        let t = Tensor::new(1.0, -2.0, 0.0, 0.5, 3.0, 0.0, 0.0, 0.0, 0.0);
        let dofs: Vec<f64> = (0..disc.maps.stress.len())
            .map(|i| {
                let (f, _, r) = disc.maps.stress.info(i);
                (t * mesh.facet_normal(f))[r]
            })
            .collect();
        for c in 0..mesh.num_cells() {
            for xr in [Point::new(0.2, 0.3, 0.0), Point::new(0.0, 0.0, 0.0)] {
                assert!((stress_at(&disc, &dofs, c, &xr) - t).norm() < 1e-13);
            }
            assert!(cell_stress_divergence(&disc, &dofs, c).norm() < 1e-12);
        }
    }
}
