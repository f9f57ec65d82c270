//! Randomized invariants. `MSMFE_SEED` fixes the generator.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

use msmfe::assembly::{self, MaterialField};
use msmfe::fem_spaces::{self, ReferenceBasis, RotationValue};
use msmfe::harness::{self, SolveOptions};
use msmfe::mesh::{self, Orientation};
use msmfe::problems;
use msmfe::quadrature;
use msmfe::{Method, Point, Tensor};

fn config(cases: u32) -> Config {
    let rng_seed = match std::env::var("MSMFE_SEED").ok().and_then(|s| s.parse().ok()) {
        Some(seed) => RngSeed::Fixed(seed),
        None => RngSeed::Random,
    };
    Config { cases, rng_seed, failure_persistence: None, ..Config::default() }
}

fn tensor(dim: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-10.0..10.0f64, 9).prop_map(move |v| {
        let mut t = Tensor::zeros();
        for r in 0..dim {
            for s in 0..dim {
                t[(r, s)] = v[3 * r + s];
            }
        }
        t
    })
}

fn simplex(dim: usize) -> impl Strategy<Value = mesh::SimplicialMesh> {
    prop::collection::vec(-2.0..2.0f64, dim * (dim + 1)).prop_filter_map("degenerate simplex", move |c| {
        let mut text = format!("{dim} {} 1\n", dim + 1);
        for v in c.chunks(dim) {
            text.push_str(&v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" "));
            text.push('\n');
        }
        text.push_str(&(0..=dim).map(|k| k.to_string()).collect::<Vec<_>>().join(" "));
        text.push('\n');
        mesh::parse_ascii(&text, Orientation::Fix).ok().filter(|m| m.cell_measure(0) > 0.05)
    })
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn compliance_inverse(dim in 2usize..=3, lambda in 0.0..1e4f64, mu in 1e-2..1e3f64, t in tensor(3)) {
        let t = {
            let mut s = Tensor::zeros();
            for r in 0..dim { for c in 0..dim { s[(r, c)] = t[(r, c)]; } }
            s
        };
        let a = problems::isotropic_compliance(lambda, mu, dim).unwrap();
        let back = a.apply_inverse(&a.apply(&t));
        prop_assert!((back - t).abs().max() <= 1e-9 * t.abs().max().max(1.0));
    }

    #[test]
    fn asym_pairs_with_xi(dim in 2usize..=3, t in tensor(3), p in prop::array::uniform3(-5.0..5.0f64)) {
        let mut p = RotationValue::from(p);
        if dim == 2 { p[1] = 0.0; p[2] = 0.0; }
        let mut s = Tensor::zeros();
        for r in 0..dim { for c in 0..dim { s[(r, c)] = t[(r, c)]; } }
        let lhs = s.component_mul(&fem_spaces::xi(&p, dim)).sum();
        let rhs = fem_spaces::asym(&s, dim).dot(&p);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        prop_assert_eq!(fem_spaces::xi_inv(&fem_spaces::xi(&p, dim), dim).unwrap(), p);
    }

    #[test]
    fn vertex_rule_exact_on_linears(dim in 2usize..=3, c in prop::array::uniform4(-3.0..3.0f64)) {
        let rule = quadrature::vertex_rule(dim).unwrap();
        let gauss = quadrature::gauss_rule(dim, 1).unwrap();
        let f = |x: &Point| c[0] + c[1] * x[0] + c[2] * x[1] + if dim == 3 { c[3] * x[2] } else { 0.0 };
        prop_assert!((rule.integrate(f) - gauss.integrate(f)).abs() <= 1e-14);
    }

    #[test]
    fn vertex_rule_exact_against_constant_tensor(m in simplex(2), lambda in 0.1..10.0f64, mu in 0.1..10.0f64, chi in tensor(2)) {
        let reference = ReferenceBasis::new(2);
        let map = mesh::affine_map(&m, 0).unwrap();
        let fm: Vec<f64> = m.cell_facets(0).iter().map(|&f| m.facet_measure(f)).collect();
        let a = problems::isotropic_compliance(lambda, mu, 2).unwrap();
        let vertex = quadrature::vertex_rule(2).unwrap();
        let gauss = quadrature::gauss_rule(2, 2).unwrap();
        for i in 0..fem_spaces::local_stress_dim(2) {
            let f = |x: &Point, _: &Point| {
                let t = fem_spaces::eval_stress_basis(&map, &reference, &fm, x)[i].0;
                a.apply(&t).component_mul(&chi).sum()
            };
            let (q, g) = (vertex.integrate_on(&map, f), gauss.integrate_on(&map, f));
            prop_assert!((q - g).abs() <= 1e-12 * g.abs().max(1.0));
        }
    }

    #[test]
    fn vertex_rule_exact_in_3d(m in simplex(3), chi in tensor(3)) {
        let reference = ReferenceBasis::new(3);
        let map = mesh::affine_map(&m, 0).unwrap();
        let fm: Vec<f64> = m.cell_facets(0).iter().map(|&f| m.facet_measure(f)).collect();
        let vertex = quadrature::vertex_rule(3).unwrap();
        let gauss = quadrature::gauss_rule(3, 2).unwrap();
        for i in 0..fem_spaces::local_stress_dim(3) {
            let f = |x: &Point, _: &Point| fem_spaces::eval_stress_basis(&map, &reference, &fm, x)[i].0.component_mul(&chi).sum();
            let (q, g) = (vertex.integrate_on(&map, f), gauss.integrate_on(&map, f));
            prop_assert!((q - g).abs() <= 1e-12 * g.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(config(16))]

    /// Mass blocks stay symmetric positive definite under random interior
    /// vertex perturbations and random Lamé pairs.
    #[test]
    fn mass_blocks_spd_on_perturbed_meshes(
        shifts in prop::collection::vec(-0.15..0.15f64, 2 * 25),
        lambda in 0.0..1e3f64,
        mu in 0.1..100.0f64,
    ) {
        let base = mesh::generate_structured(2, 4).unwrap();
        let mut text = mesh::to_ascii(&base);
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        for v in 0..base.num_vertices() {
            let x = base.vertex(v);
            let inside = x.x > 0.0 && x.x < 1.0 && x.y > 0.0 && x.y < 1.0;
            let (dx, dy) = if inside { (shifts[2 * v] / 4.0, shifts[2 * v + 1] / 4.0) } else { (0.0, 0.0) };
            lines[1 + v] = format!("{} {}", x.x + dx, x.y + dy);
        }
        text = lines.join("\n");
        let m = mesh::parse_ascii(&text, Orientation::Reject).unwrap();
        let material = MaterialField::uniform(&m, lambda, mu).unwrap();
        let disc = assembly::Discretization::new(&m, Method::Msmfe1, material).unwrap();
        let mass = assembly::assemble_ass(&disc).unwrap();
        for v in 0..mass.num_blocks() {
            let b = mass.block(v);
            let scale = b.abs().max();
            prop_assert!((b - b.transpose()).abs().max() <= 1e-13 * scale);
            prop_assert!(nalgebra::SymmetricEigen::new(b.clone()).eigenvalues.min() > 0.0);
        }
    }

    /// Relabeling vertices and cells does not change the discrete solution.
    #[test]
    fn permutation_invariance(
        vperm in Just((0..25).collect::<Vec<usize>>()).prop_shuffle(),
        cperm in Just((0..32).collect::<Vec<usize>>()).prop_shuffle(),
        method_index in 0usize..3,
    ) {
        let method = [Method::Msmfe0, Method::Msmfe1, Method::Msmfe1Scaled][method_index];
        let problem = problems::example1();
        let base = mesh::generate_structured(2, 4).unwrap();
        let (nv, nc) = (base.num_vertices(), base.num_cells());
        prop_assert_eq!((nv, nc), (vperm.len(), cperm.len()));
        let mut text = format!("2 {nv} {nc}\n");
        let mut inverse = vec![0; nv];
        for (new, &old) in vperm.iter().enumerate() { inverse[old] = new; }
        for &old in &vperm {
            let x = base.vertex(old);
            text.push_str(&format!("{} {}\n", x.x, x.y));
        }
        for &c in &cperm {
            let cell = base.cell(c);
            text.push_str(&format!("{} {} {}\n", inverse[cell[0]], inverse[cell[1]], inverse[cell[2]]));
        }
        let opts = SolveOptions { tol: 1e-13, max_iter: Some(100_000), ..SolveOptions::default() };
        let errors = |m: &mesh::SimplicialMesh| {
            let level = harness::solve_level(m, &problem, method, &opts).unwrap();
            level.errors.unwrap().errors()
        };
        let permuted = mesh::parse_ascii(&text, Orientation::Fix).unwrap();
        let a = errors(&base);
        let b = errors(&permuted);
        for k in 0..5 {
            prop_assert!((a[k] - b[k]).abs() <= 1e-8 * a[k], "column {}: {} vs {}", k, a[k], b[k]);
        }
    }
}
