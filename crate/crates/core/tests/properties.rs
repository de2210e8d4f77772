//! Property tests of the mesh, level-set kernels, extension operator and
//! optimiser loop.

use proptest::prelude::*;
use topopt_core::evolve::{evolve, reinit_with, EvolveParams, StencilWorkspace};
use topopt_core::fem::SolverKind;
use topopt_core::opt::{run, OptParams};
use topopt_core::problems::{build_problem, ProblemKind, ProblemSpec};
use topopt_core::sens::alpha_rule;
use topopt_core::CartesianMesh;

fn square(n: usize) -> CartesianMesh {
    CartesianMesh::new(2, &[n, n], &[0.0, 0.0], &[1.0, 1.0], &[]).unwrap()
}

/// Smooth level set `Σ a_k cos(k_x π x + k_y π y + p_k) + c`.
fn smooth_lsf(mesh: &CartesianMesh, modes: &[(f64, f64, f64, f64)], c: f64) -> Vec<f64> {
    (0..mesh.n_nodes())
        .map(|n| {
            let x = mesh.node_coords(n);
            c + modes
                .iter()
                .map(|&(a, kx, ky, p)| a * (kx * std::f64::consts::PI * x[0] + ky * std::f64::consts::PI * x[1] + p).cos())
                .sum::<f64>()
        })
        .collect()
}

fn modes() -> impl Strategy<Value = Vec<(f64, f64, f64, f64)>> {
    prop::collection::vec((0.1f64..1.0, 0.0f64..3.0, 0.0f64..3.0, 0.0f64..6.3), 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn node_coordinates_round_trip(nx in 1usize..40, ny in 1usize..40, lx in 0.1f64..5.0, ly in 0.1f64..5.0) {
        let mesh = CartesianMesh::new(2, &[nx, ny], &[-1.0, 0.5], &[lx, ly], &[]).unwrap();
        for n in 0..mesh.n_nodes() {
            prop_assert_eq!(mesh.nearest_node(&mesh.node_coords(n)), n);
        }
        let total = mesh.element_volume() * mesh.n_elements() as f64;
        prop_assert!((total - lx * ly).abs() <= 1e-14 * lx * ly);
    }

    #[test]
    fn periodic_neighbours_cycle(nx in 2usize..20, ny in 2usize..20, e in 0usize..400) {
        let mesh = CartesianMesh::new(2, &[nx, ny], &[0.0, 0.0], &[1.0, 1.0], &[true, true]).unwrap();
        let start = e % mesh.n_elements();
        for (axis, d) in [(0, nx), (1, ny)] {
            let mut cur = start;
            for _ in 0..d {
                cur = mesh.neighbour_element(cur, axis, true).unwrap();
            }
            prop_assert_eq!(cur, start);
        }
    }

    #[test]
    fn reinit_keeps_interface_signs(m in modes(), c in -0.3f64..0.3) {
        let mesh = square(32);
        let phi0 = smooth_lsf(&mesh, &m, c);
        let mut phi = phi0.clone();
        let mut ws = StencilWorkspace::new(&mesh);
        reinit_with(&mut ws, &mut phi, &EvolveParams::for_mesh(&mesh)).unwrap();
        let [nx, ny] = [33, 33];
        for j in 0..ny {
            for i in 0..nx {
                let a = mesh.node_id(&[i, j]);
                for (di, dj) in [(1, 0), (0, 1)] {
                    if i + di >= nx || j + dj >= ny {
                        continue;
                    }
                    let b = mesh.node_id(&[i + di, j + dj]);
                    if (phi0[a] < 0.0) != (phi0[b] < 0.0) {
                        prop_assert_eq!(phi[a] < 0.0, phi0[a] < 0.0, "node {}", a);
                        prop_assert_eq!(phi[b] < 0.0, phi0[b] < 0.0, "node {}", b);
                    }
                }
            }
        }
    }

    #[test]
    fn advection_step_is_bounded(m in modes(), vm in modes(), gamma in 0.01f64..0.5, steps in 1usize..30) {
        let mesh = square(24);
        let mut phi = smooth_lsf(&mesh, &m, 0.0);
        let v = smooth_lsf(&mesh, &vm, 0.2);
        let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        prop_assume!(vmax > 1e-8);
        let mut ws = StencilWorkspace::new(&mesh);
        for _ in 0..steps {
            let before = phi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let (gp, gm) = ws.upwind_norms(&phi);
            let gmax = gp.iter().chain(gm).fold(0.0f64, |a, &x| a.max(x));
            let rep = evolve(&mut ws, &mut phi, &v, gamma, 1).unwrap();
            let after = phi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            prop_assert!(after <= before + rep.dt * vmax * gmax + 1e-12);
        }
    }

    #[test]
    fn advection_of_distance_is_bounded(m in modes(), c in -0.3f64..0.3, vm in modes(), gamma in 0.01f64..0.5) {
        let mesh = square(24);
        let mut phi = smooth_lsf(&mesh, &m, c);
        let mut ws = StencilWorkspace::new(&mesh);
        let params = EvolveParams::for_mesh(&mesh);
        reinit_with(&mut ws, &mut phi, &params).unwrap();
        let v = smooth_lsf(&mesh, &vm, 0.2);
        let vmax = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        prop_assume!(vmax > 1e-8);
        let before = phi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let rep = evolve(&mut ws, &mut phi, &v, gamma, params.max_steps).unwrap();
        let t = rep.steps as f64 * rep.dt;
        let after = phi.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        prop_assert!(after <= before + t * vmax + 1e-12, "{} > {} + {}", after, before, t * vmax);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn compliance_is_positive_on_solid(g in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0], n in 10usize..20, elastic in any::<bool>()) {
        let (kind, el) = if elastic { (ProblemKind::Elastic2d, [2 * n, n]) } else { (ProblemKind::Thermal2d, [n, n]) };
        let mut spec = ProblemSpec::new(kind, &el, 0.4);
        spec.g = g;
        let mut p = build_problem(&spec).unwrap();
        let solid = vec![-1.0; p.phi0.len()];
        let (j, _) = p.functionals.values(&solid).unwrap();
        prop_assert!(j > 0.0, "J = {}", j);
    }
}

#[test]
fn extension_operator_is_symmetric_positive_definite() {
    for (kind, el) in [(ProblemKind::Thermal2d, [12, 12]), (ProblemKind::Homog2d, [10, 10])] {
        let p = build_problem(&ProblemSpec::new(kind, &el, 0.4)).unwrap();
        let mesh = p.context().mesh().clone();
        let params = EvolveParams::for_mesh(&mesh);
        let ext = p.extension(alpha_rule(params.max_steps, params.gamma, &mesh), SolverKind::Direct).unwrap();
        let m = ext.matrix();
        assert!(m.asymmetry() <= 1e-13 * m.norm_inf(), "{kind:?}");
        let mut state = 12345u64;
        for _ in 0..50 {
            let x: Vec<f64> = (0..m.n())
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let y = m.mul_vec(&x);
            let q: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!(q > 0.0, "{kind:?}: Rayleigh quotient {q}");
        }
    }
}

#[test]
fn unconstrained_volume_minimisation_descends() {
    let mut p = build_problem(&ProblemSpec::new(ProblemKind::Thermal2d, &[24, 24], 0.4)).unwrap();
    let volume = p.functionals.constraints.remove(0);
    p.functionals.objective = volume;
    let mesh = p.context().mesh().clone();
    let evolve_params = EvolveParams::for_mesh(&mesh);
    let ext = p
        .extension(alpha_rule(evolve_params.max_steps, evolve_params.gamma, &mesh), SolverKind::Direct)
        .unwrap();
    let mut params = OptParams::new(evolve_params);
    params.max_iter = 5;
    let phi0 = p.phi0.clone();
    let result = run(&mut p.functionals, &ext, &phi0, &params, |_| Ok(())).unwrap();
    let recs = result.history.records();
    assert_eq!(recs.len(), 6);
    for w in recs.windows(2) {
        assert!(w[1].j < w[0].j, "volume did not decrease: {} -> {}", w[0].j, w[1].j);
        assert!(w[1].gamma <= w[0].gamma);
        assert!(w[1].iter > w[0].iter);
        assert!(w[1].c.is_empty());
    }
}
