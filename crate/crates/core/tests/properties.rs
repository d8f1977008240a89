use asg_core::chain::{transition_distribution, Event, PimPi, TablePi};
use asg_core::dirichlet::{check_determinant_identity, sample_dirichlet};
use asg_core::lattice::{enumerate_configs, SampleConfig};
use asg_core::params::ModelParams;
use asg_core::pim::{pim_log_p, pim_pi, PimParams};
use asg_core::recursion::solve_neutral;
use asg_core::simplex::SimplexPoint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn pim_case() -> impl Strategy<Value = (f64, Vec<f64>, Vec<u32>)> {
    (2usize..=4).prop_flat_map(|d| {
        (0.1f64..5.0, prop::collection::vec(0.05f64..1.0, d), prop::collection::vec(0u32..12, d))
            .prop_filter("non-empty sample", |(_, _, n)| n.iter().sum::<u32>() > 0)
            .prop_map(|(theta, q, n)| (theta, normalize(q), n))
    })
}

fn permute<T: Clone>(v: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&k| v[k].clone()).collect()
}

fn rotation(d: usize, shift: usize) -> Vec<usize> {
    (0..d).map(|k| (k + shift) % d).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn transitions_sum_to_one_with_closed_form_pi((theta, q, n) in pim_case()) {
        let pp = PimParams::new(theta, q).unwrap();
        let params = pp.to_model().unwrap();
        let t = transition_distribution(&SampleConfig::new(n).unwrap(), &params, &PimPi(pp)).unwrap();
        prop_assert!((t.total() - 1.0).abs() < 1e-12);
        prop_assert!(t.entries.iter().all(|&(_, p)| p > 0.0));
    }

    #[test]
    fn transitions_are_permutation_equivariant((theta, q, n) in pim_case(), shift in 1usize..4) {
        let d = q.len();
        let perm = rotation(d, shift);
        let pp = PimParams::new(theta, q.clone()).unwrap();
        let qp = PimParams::new(theta, permute(&q, &perm)).unwrap();
        let base = transition_distribution(&SampleConfig::new(n.clone()).unwrap(), &pp.to_model().unwrap(), &PimPi(pp)).unwrap();
        let moved = transition_distribution(
            &SampleConfig::new(permute(&n, &perm)).unwrap(),
            &qp.to_model().unwrap(),
            &PimPi(qp),
        )
        .unwrap();
        // new label k carries old label perm[k]
        let mut inverse = vec![0; d];
        for (k, &old) in perm.iter().enumerate() {
            inverse[old] = k;
        }
        for &(e, p) in &base.entries {
            let mapped = match e {
                Event::Coalescence(j) => Event::Coalescence(inverse[j]),
                Event::Mutation { from, to } => Event::Mutation { from: inverse[from], to: inverse[to] },
                Event::Branching(j) => Event::Branching(inverse[j]),
            };
            prop_assert!((moved.prob(mapped) - p).abs() < 1e-14);
        }
    }

    #[test]
    fn pim_log_p_is_permutation_invariant((theta, q, n) in pim_case(), shift in 1usize..4) {
        let perm = rotation(q.len(), shift);
        let a = pim_log_p(&SampleConfig::new(n.clone()).unwrap(), &PimParams::new(theta, q.clone()).unwrap());
        let b = pim_log_p(&SampleConfig::new(permute(&n, &perm)).unwrap(), &PimParams::new(theta, permute(&q, &perm)).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn pim_pi_is_a_distribution((theta, q, n) in pim_case()) {
        let pp = PimParams::new(theta, q).unwrap();
        let total: f64 = (0..n.len()).map(|i| pim_pi(i, &n, &pp)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pim_sizes_are_normalized(theta in 0.1f64..5.0, q in prop::collection::vec(0.05f64..1.0, 3), m in 1u32..10) {
        let pp = PimParams::new(theta, normalize(q)).unwrap();
        let total: f64 = enumerate_configs(3, m).unwrap().iter().map(|n| pim_log_p(n, &pp).exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chart_round_trip(v in prop::collection::vec(0.01f64..1.0, 2..6)) {
        let x = SimplexPoint::normalized(&v).unwrap();
        let back = SimplexPoint::from_chart(x.chart()).unwrap();
        for (a, b) in x.coords().iter().zip(back.coords()) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn dirichlet_samples_lie_in_the_simplex(alpha in prop::collection::vec(0.2f64..20.0, 2..6), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_dirichlet(&alpha, &mut rng).unwrap();
        prop_assert!((x.coords().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(x.coords().iter().all(|&c| (0.0..=1.0).contains(&c)));
    }

    #[test]
    fn determinant_identity(v in prop::collection::vec(0.01f64..1.0, 2..7)) {
        let x = SimplexPoint::normalized(&v).unwrap();
        let (lhs, rhs) = check_determinant_identity(&x);
        prop_assert!((lhs - rhs).abs() < 1e-14);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn neutral_tables_are_normalized_and_consistent(
        theta in 0.2f64..4.0,
        a in 0.01f64..0.99,
        b in 0.01f64..0.99,
    ) {
        let params = ModelParams::new(2, theta, vec![1.0 - a, a, b, 1.0 - b], vec![0.0, 0.0]).unwrap();
        let table = solve_neutral(&params, 12).unwrap();
        for s in table.size_sums() {
            prop_assert!((s - 1.0).abs() < 1e-10);
        }
        let pi = TablePi::new(table);
        for m in 2..=11u32 {
            for n in enumerate_configs(2, m).unwrap() {
                let t = transition_distribution(&n, &params, &pi).unwrap();
                prop_assert!((t.total() - 1.0).abs() < 1e-11);
            }
        }
    }
}
