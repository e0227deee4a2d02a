use divlab_core::diversity::{
    excess_table, kl_sandwich_check, loss_conversion, stack_multi_output, transfer_ratio, FiniteInstance, LossDirection,
    DEFAULT_STACK_CAP,
};
use proptest::prelude::*;

/// Random instance: `n` points, `n` scalar features, `reps` representations
/// and `m` functions in a class shared by sources and target.
fn instance() -> impl Strategy<Value = FiniteInstance> {
    (2usize..4, 1usize..4, 2usize..4, 1usize..3).prop_flat_map(|(n, reps, m, k)| {
        (
            prop::collection::vec(0.05f64..1.0, n),
            prop::collection::vec(prop::collection::vec(0..n, n), reps),
            prop::collection::vec(prop::collection::vec(-2i32..3, n), m),
            prop::collection::vec(0..m, k),
            0..m,
        )
            .prop_map(move |(w, representations, table, sources, target)| {
                let total: f64 = w.iter().sum();
                let functions: Vec<Vec<Vec<f64>>> = table
                    .iter()
                    .map(|f| f.iter().map(|&v| vec![f64::from(v) * 0.5]).collect())
                    .collect();
                FiniteInstance {
                    weights: w.iter().map(|v| v / total).collect(),
                    points: None,
                    features: (0..n).map(|i| vec![i as f64]).collect(),
                    representations,
                    source_functions: functions.clone(),
                    target_functions: functions,
                    sources,
                    target,
                    true_rep: 0,
                }
            })
    })
}

fn one_hot(inst: &FiniteInstance, x: usize) -> FiniteInstance {
    let mut out = inst.clone();
    out.weights = (0..inst.weights.len()).map(|i| if i == x { 1.0 } else { 0.0 }).collect();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn excess_is_linear_in_the_input_law(inst in instance()) {
        let full = excess_table(&inst).unwrap();
        let parts: Vec<_> = (0..inst.weights.len()).map(|x| excess_table(&one_hot(&inst, x)).unwrap()).collect();
        for h in 0..full.target.len() {
            for f in 0..full.target[h].len() {
                let mixed: f64 = parts.iter().zip(&inst.weights).map(|(p, w)| w * p.target[h][f]).sum();
                prop_assert!((mixed - full.target[h][f]).abs() <= 1e-12);
                for t in 0..inst.sources.len() {
                    let mixed: f64 = parts.iter().zip(&inst.weights).map(|(p, w)| w * p.source[h][t][f]).sum();
                    prop_assert!((mixed - full.source[h][t][f]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn no_tabulated_ratio_exceeds_the_certificate(inst in instance(), mu in 0.0f64..0.5) {
        let cert = transfer_ratio(&inst, mu, 1.0).unwrap();
        for r in &cert.ratios {
            prop_assert!(r.as_f64() <= cert.nu_hat.as_f64() * (1.0 + 1e-9) + 1e-12);
        }
    }

    #[test]
    fn stacked_excess_is_the_sum_of_coordinates(inst in instance()) {
        let (stacked, _) = stack_multi_output(&inst, 1.0, 0.0, DEFAULT_STACK_CAP).unwrap();
        let single = excess_table(&inst).unwrap();
        let joint = excess_table(&stacked).unwrap();
        let k = inst.sources.len() as f64;
        for h in 0..inst.representations.len() {
            // Averages: the stacked instance has one task, the original K.
            prop_assert!((joint.source_inf[h] - k * single.source_inf[h]).abs() <= 1e-12);
        }
    }

    #[test]
    fn conversions_compose_to_the_identity(nu in 0.0f64..10.0, mu in 0.0f64..5.0, c in 0.1f64..10.0) {
        let (a, b) = loss_conversion(nu, mu, c, LossDirection::StronglyConvex).unwrap();
        let (nu2, mu2) = loss_conversion(a, b, c, LossDirection::Smooth).unwrap();
        prop_assert!((nu2 - nu).abs() <= 1e-12 * nu.max(1.0));
        prop_assert!((mu2 - mu).abs() <= 1e-12 * mu.max(1.0));
    }

    #[test]
    fn kl_lower_leg_always_holds(
        p in prop::collection::vec(0.01f64..1.0, 2..9),
        q in prop::collection::vec(0.01f64..1.0, 2..9),
    ) {
        let k = p.len().min(q.len());
        let norm = |v: &[f64]| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect::<Vec<f64>>() };
        let (p, q) = (norm(&p[..k]), norm(&q[..k]));
        let b = p.iter().copied().fold(f64::INFINITY, f64::min);
        let check = kl_sandwich_check(&p, &q, b).unwrap();
        prop_assert!(check.lower <= check.kl.as_f64() + 1e-12);
        // The upper leg follows from KL ≤ χ² once min q ≥ b².
        if q.iter().all(|&v| v >= b * b) {
            prop_assert!(check.ok);
        }
    }
}
