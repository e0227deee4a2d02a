use divlab_core::netcore::{backward, glorot_stack, numerical_gradient, Loss};
use divlab_core::rng::stream;
use divlab_core::{Activation, LinearHead, Matrix, Mlp, OptState, OptimizerSettings};
use proptest::prelude::*;
use rand::Rng;

const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Sigmoid, Activation::Identity];

fn random_net(depth: usize, width: usize, act: Activation, with_head: bool, seed: u64) -> Mlp {
    let mut r = stream(seed, "net", 0);
    let mut widths = vec![3];
    widths.extend(std::iter::repeat_n(width, depth));
    let mut net = glorot_stack(&widths, act, act, &mut r).unwrap();
    // Non-zero biases so the check covers their gradients too.
    let mut p = net.params();
    p.iter_mut().for_each(|v| *v += r.random_range(-0.3..0.3));
    net.set_params(&p).unwrap();
    if with_head {
        let alpha = (0..width).map(|_| r.random_range(-1.0..1.0)).collect();
        let head = Mlp::new(Vec::new(), Some(LinearHead { alpha, beta: 0.2 })).unwrap();
        net = net.then(&head).unwrap();
    }
    net
}

fn batch(rows: usize, cols: usize, seed: u64, label: &str) -> Matrix {
    let mut r = stream(seed, label, 0);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

fn max_relative_error(net: &Mlp, seed: u64) -> f64 {
    let x = batch(5, net.in_dim(), seed, "x");
    let y = batch(5, net.out_dim(), seed, "y");
    let (_, grad) = backward(net, &x, &y, Loss::Square).unwrap();
    let analytic = grad.flatten();
    let numeric = numerical_gradient(net, &x, &y, 1e-6).unwrap();
    analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

#[test]
fn backprop_matches_central_differences_across_the_architecture_matrix() {
    let mut seed = 0;
    for depth in 1..=5 {
        for width in 1..=4 {
            for act in ACTIVATIONS {
                for with_head in [false, true] {
                    seed += 1;
                    let net = random_net(depth, width, act, with_head, seed);
                    let err = max_relative_error(&net, seed);
                    assert!(err <= 1e-5, "depth {depth} width {width} {act:?} head {with_head}: {err}");
                }
            }
        }
    }
}

#[test]
fn training_trajectories_are_bit_identical() {
    let run = || {
        let mut net = random_net(3, 4, Activation::Relu, true, 9);
        let x = batch(16, 3, 9, "x");
        let y = batch(16, 1, 9, "y");
        let mut opt = OptState::new(OptimizerSettings::adam(1e-2), net.param_count());
        let mut trace = Vec::new();
        for _ in 0..50 {
            let (loss, g) = backward(&net, &x, &y, Loss::Square).unwrap();
            let mut p = net.params();
            opt.step(&mut p, &g.flatten()).unwrap();
            net.set_params(&p).unwrap();
            trace.push(loss.to_bits());
        }
        (trace, net.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_architectures_pass_the_gradient_check(
        depth in 1usize..=5,
        width in 1usize..=4,
        act in 0usize..3,
        with_head in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let net = random_net(depth, width, ACTIVATIONS[act], with_head, seed);
        let err = max_relative_error(&net, seed);
        prop_assert!(err <= 1e-5, "relative error {}", err);
    }
}
