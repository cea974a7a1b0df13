use std::sync::OnceLock;

use poro_cem::analysis::{compute_errors, layers_for_H, ErrorNorms};
use poro_cem::cem::{build_multiscale_space, MultiscaleSpace};
use poro_cem::fem::{OperatorSet, PoroState};
use poro_cem::linalg::{quad_form, spmv};
use poro_cem::medium::{generate_channel_medium, medium_to_string, parse_medium, Medium, PhysicsConstants};
use poro_cem::mesh::{CoarsePartition, FineMesh};
use poro_cem::spectral::{AuxiliarySpaces, Family, PartitionOfUnity, WeightFields};
use proptest::prelude::*;

struct Fixture {
    ops: OperatorSet,
    norms: ErrorNorms,
    aux: AuxiliarySpaces,
    space: MultiscaleSpace,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mesh = FineMesh::new(12).unwrap();
        let part = CoarsePartition::new(&mesh, 3).unwrap();
        let (medium, _) = generate_channel_medium(&mesh, &part, 1e3, 5, PhysicsConstants::default()).unwrap();
        let ops = OperatorSet::assemble(&mesh, &medium).unwrap();
        let norms = ErrorNorms::new(&mesh, &medium, &ops);
        let pou = PartitionOfUnity::new(&mesh, &part);
        let weights = WeightFields::new(&pou, &medium);
        let aux = AuxiliarySpaces::build(&mesh, &medium, &part, &weights, 3, 2).unwrap();
        let space = build_multiscale_space(&ops, &aux, &part, 1).unwrap();
        Fixture { ops, norms, aux, space }
    })
}

fn free_vector(len: usize, free: &[usize], seed: &[f64]) -> Vec<f64> {
    let mut v = vec![0.0; len];
    for (k, &i) in free.iter().enumerate() {
        v[i] = seed[k % seed.len()] * (1.0 + (k % 7) as f64);
    }
    v
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn relative_errors_ignore_common_scaling(
        seed in prop::collection::vec(-1.0f64..1.0, 5..12),
        noise in prop::collection::vec(-0.1f64..0.1, 5..12),
        scale in prop_oneof![-1e3f64..-1e-3, 1e-3f64..1e3],
    ) {
        prop_assume!(seed.iter().any(|v| v.abs() > 1e-3));
        let f = fixture();
        let reference = PoroState {
            u: free_vector(f.ops.num_u(), &f.ops.free_u, &seed),
            p: free_vector(f.ops.num_p(), &f.ops.free_p, &seed),
            t: 1.0,
        };
        let perturb = |x: &[f64]| -> Vec<f64> {
            x.iter().enumerate().map(|(i, v)| v + noise[i % noise.len()] * v.abs()).collect()
        };
        let approx = PoroState { u: perturb(&reference.u), p: perturb(&reference.p), t: 1.0 };
        let scaled = |s: &PoroState| PoroState {
            u: s.u.iter().map(|v| v * scale).collect(),
            p: s.p.iter().map(|v| v * scale).collect(),
            t: s.t,
        };
        let e1 = compute_errors(&f.norms, &reference, &approx).unwrap();
        let e2 = compute_errors(&f.norms, &scaled(&reference), &scaled(&approx)).unwrap();
        for (a, b) in [(e1.e_u_l2, e2.e_u_l2), (e1.e_u_a, e2.e_u_a), (e1.e_p_l2, e2.e_p_l2), (e1.e_p_b, e2.e_p_b)] {
            prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-12), "{a} vs {b}");
        }
    }

    #[test]
    fn projection_is_idempotent(seed in prop::collection::vec(-1.0f64..1.0, 3..9), pressure in any::<bool>()) {
        let f = fixture();
        let (family, len) = if pressure {
            (Family::Pressure, f.ops.num_p())
        } else {
            (Family::Displacement, f.ops.num_u())
        };
        let w: Vec<f64> = (0..len).map(|i| seed[i % seed.len()] * ((i * 37 % 11) as f64 - 5.0)).collect();
        let once = f.aux.project(family, &w);
        let twice = f.aux.project_broken(family, &once);
        let size = f.aux.s_inner(family, &once, &once).sqrt();
        for (a, b) in once.iter().flatten().zip(twice.iter().flatten()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + size), "{a} vs {b}");
        }
    }

    #[test]
    fn galerkin_matrix_matches_prolongated_quadratic_form(
        seed in prop::collection::vec(-1.0f64..1.0, 2..10),
        pressure in any::<bool>(),
    ) {
        let f = fixture();
        let (family, k, dim) = if pressure {
            (Family::Pressure, &f.ops.b, f.space.dim_p())
        } else {
            (Family::Displacement, &f.ops.a, f.space.dim_u())
        };
        let c: Vec<f64> = (0..dim).map(|i| seed[i % seed.len()] + 0.01 * i as f64).collect();
        let reduced = f.space.galerkin(k, family, family);
        let lhs = quad_form(&reduced, &c);
        let fine = f.space.prolongate(family, &c);
        let rhs = quad_form(k, &fine);
        prop_assert!(close(lhs, rhs, 1e-10), "{lhs} vs {rhs}");
        let kc = spmv(&reduced, &c);
        prop_assert_eq!(kc.len(), dim);
    }

    #[test]
    fn hats_sum_to_one(coarse_n in 1usize..6, cells in 1usize..6) {
        let mesh = FineMesh::new((coarse_n * cells).max(2)).unwrap();
        prop_assume!(mesh.n % coarse_n == 0);
        let part = CoarsePartition::new(&mesh, coarse_n).unwrap();
        let pou = PartitionOfUnity::new(&mesh, &part);
        let mut sum = vec![0.0; mesh.num_vertices()];
        for node in &pou.chi {
            for &(v, val) in node {
                prop_assert!((0.0..=1.0).contains(&val));
                sum[v] += val;
            }
        }
        for s in sum {
            prop_assert!((s - 1.0).abs() <= 1e-14, "{s}");
        }
    }

    #[test]
    fn medium_text_round_trips(
        coeffs in prop::collection::vec((1e-6f64..1e6, 1e-6f64..1e6, 1e-8f64..1e8, 0.5f64..=1.0), 8),
        biot in 1e-3f64..1e3,
    ) {
        let mesh = FineMesh::new(2).unwrap();
        let consts = PhysicsConstants { biot_modulus: biot, ..PhysicsConstants::default() };
        let mut medium = Medium::homogeneous(&mesh, 1.0, 1.0, 1.0, consts).unwrap();
        for (t, &(mu, lambda, kappa, alpha)) in coeffs.iter().enumerate() {
            medium.mu[t] = mu;
            medium.lambda[t] = lambda;
            medium.kappa[t] = kappa;
            medium.alpha[t] = alpha;
        }
        medium.metadata.push(("seed".into(), "17".into()));
        let back = parse_medium(&medium_to_string(&medium)).unwrap();
        prop_assert_eq!(back, medium);
    }

    #[test]
    fn layer_count_grows_as_blocks_shrink(a in 1e-4f64..0.999, b in 1e-4f64..0.999) {
        let (small, large) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(layers_for_H(small).unwrap() >= layers_for_H(large).unwrap());
    }
}
