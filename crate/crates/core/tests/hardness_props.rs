use divlab_core::hardness::{
    build_general_hard_instance, build_relu_hard_instance, make_packing, GridSettings, PackingStrategy,
};
use divlab_core::Activation;
use divlab_core::Error;
use proptest::prelude::*;

fn coarse() -> GridSettings {
    GridSettings {
        directions: 2000,
        ..GridSettings::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn greedy_packings_satisfy_their_invariants(d in 1usize..7, eps in 0.05f64..1.0, seed in any::<u64>()) {
        let p = make_packing(d, eps, PackingStrategy::Greedy { target: 30, budget: 500, seed }).unwrap();
        for (i, u) in p.vectors.iter().enumerate() {
            let n: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-12);
            for v in &p.vectors[..i] {
                let ip: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
                prop_assert!(ip <= 1.0 - eps + 1e-12);
            }
        }
    }

    #[test]
    fn feasible_relu_instances_separate(d in 2usize..6, eps in 0.1f64..1.0, n_sources in 1usize..4, pick in any::<u64>()) {
        let p = make_packing(d, eps, PackingStrategy::Axes).unwrap();
        let sources: Vec<usize> = (0..n_sources).map(|i| (pick as usize + 2 * i) % p.len()).collect();
        let target = (0..p.len()).find(|i| !sources.contains(i)).unwrap();
        match build_relu_hard_instance(&p, &sources, target, &coarse()) {
            Ok(inst) => {
                prop_assert!(inst.measured.source_excess <= 1e-9);
                prop_assert!(inst.measured.target_excess >= eps * eps / 32.0 - 1e-9);
            }
            Err(Error::Infeasible(_)) => prop_assert!(p.len() - n_sources < 3),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn sigmoid_instances_meet_the_ratio_bound(x1 in 1.0f64..6.0, gap in 4.0f64..12.0, d in 2usize..5) {
        let p = make_packing(d, 0.5, PackingStrategy::Axes).unwrap();
        let inst = build_general_hard_instance(Activation::Sigmoid, x1, x1 - gap, None, &p, &[0], 2, &coarse()).unwrap();
        prop_assert!(inst.measured.ratio.at_least(inst.family.separation() - 1e-6));
    }
}
