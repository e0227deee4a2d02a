use divlab_core::eluder::{adversarial_task, eluder_dimension, shortest_cover_dimension, FiniteClass, DEFAULT_NODE_CAP};
use proptest::prelude::*;

fn class() -> impl Strategy<Value = FiniteClass> {
    (1usize..6, 1usize..6).prop_flat_map(|(nf, nx)| {
        prop::collection::vec(prop::collection::vec(0u8..4, nx), nf).prop_map(|t| {
            let rows: Vec<Vec<f64>> = t.iter().map(|r| r.iter().map(|&v| f64::from(v) * 0.5).collect()).collect();
            FiniteClass::from_scalars(&rows).unwrap()
        })
    })
}

const EPS_GRID: [f64; 6] = [0.1, 0.3, 0.5, 0.8, 1.2, 2.0];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dimension_is_non_increasing_in_epsilon(c in class()) {
        let dims: Vec<usize> = EPS_GRID.iter().map(|&e| eluder_dimension(&c, e, DEFAULT_NODE_CAP).unwrap().dim).collect();
        prop_assert!(dims.windows(2).all(|w| w[0] >= w[1]), "{:?}", dims);
    }

    #[test]
    fn cover_never_exceeds_the_longest_sequence(c in class(), e in 0.1f64..2.0) {
        let longest = eluder_dimension(&c, e, DEFAULT_NODE_CAP).unwrap().dim;
        let cover = shortest_cover_dimension(&c, e, DEFAULT_NODE_CAP).unwrap().dim;
        prop_assert!(cover <= longest);
    }

    #[test]
    fn removing_functions_never_increases_the_dimension(c in class(), drop in 0usize..6, e in 0.1f64..2.0) {
        prop_assume!(c.n_functions() > 1);
        let mut sub = c.clone();
        let i = drop % c.n_functions();
        sub.table.remove(i);
        sub.functions.remove(i);
        let full = eluder_dimension(&c, e, DEFAULT_NODE_CAP).unwrap().dim;
        prop_assert!(eluder_dimension(&sub, e, DEFAULT_NODE_CAP).unwrap().dim <= full);
    }

    #[test]
    fn adversarial_ratio_is_at_least_half_the_task_count(
        c in class(),
        chosen in prop::collection::vec(0usize..6, 1..4),
        e in 0.2f64..1.5,
    ) {
        let chosen: Vec<usize> = chosen.iter().map(|i| i % c.n_functions()).collect();
        if let Ok(task) = adversarial_task(&c, &chosen, e) {
            prop_assert!(task.ratio.at_least(chosen.len() as f64 / 2.0));
            prop_assert!(task.source_sum <= e * e / 2.0 + 1e-12);
            prop_assert!(task.target_excess >= e * e / 4.0);
        }
    }
}
