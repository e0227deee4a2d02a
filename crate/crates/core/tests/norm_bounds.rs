use divlab_core::netcore::{glorot_stack, lipschitz_bound, measured_norms, output_bound};
use divlab_core::rng::stream;
use divlab_core::{Activation, LinearHead, Mlp};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Uniform point in the ℓ2 ball of the given radius.
fn ball_point<R: Rng>(d: usize, radius: f64, r: &mut R) -> Vec<f64> {
    let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(r)).collect();
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = radius * r.random::<f64>().powf(1.0 / d as f64) / n;
    g.into_iter().map(|v| v * scale).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Bias-free network with weights scaled up so the bounds are not slack
/// by construction.
fn random_net(i: u64) -> Mlp {
    let mut r = stream(i, "bounds-net", 0);
    let depth = r.random_range(1..=4);
    let mut widths = vec![r.random_range(1..=5)];
    for _ in 0..depth {
        widths.push(r.random_range(1..=5));
    }
    let act = [Activation::Relu, Activation::Sigmoid, Activation::Identity][r.random_range(0..3)];
    let mut net = glorot_stack(&widths, act, act, &mut r).unwrap();
    let scale = r.random_range(0.5..2.0);
    for l in net.layers_mut() {
        l.weights.iter_mut().for_each(|w| *w *= scale);
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    if r.random::<bool>() {
        let alpha = (0..*widths.last().unwrap()).map(|_| r.random_range(-1.0..1.0)).collect();
        net = net.then(&Mlp::new(Vec::new(), Some(LinearHead { alpha, beta: 0.0 })).unwrap()).unwrap();
    }
    net
}

#[test]
fn sampled_slopes_and_outputs_respect_the_bounds() {
    for i in 0..100 {
        let net = random_net(i);
        let d_z = 1.5;
        let budget = measured_norms(&net).unwrap().with_d_z(d_z);
        let lip = lipschitz_bound(&budget);
        let out = output_bound(&budget);
        let mut r = stream(i, "bounds-points", 0);
        for _ in 0..200 {
            let x = ball_point(net.in_dim(), d_z, &mut r);
            let y = ball_point(net.in_dim(), d_z, &mut r);
            let fx = net.forward(&x).unwrap();
            let fy = net.forward(&y).unwrap();
            let gap = dist(&fx, &fy);
            assert!(gap <= lip * dist(&x, &y) * (1.0 + 1e-9) + 1e-12, "net {i}: slope");
            assert!(gap <= out * (1.0 + 1e-9), "net {i}: output");
        }
    }
}
