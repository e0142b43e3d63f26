//! Backpropagation through the whole toy network against central
//! differences, in 64-bit.

mod common;

use pointtrack::codec::{encode_targets, EncodeParams};
use pointtrack::geometry::SparseDepthMap;
use pointtrack::losses::LossConfig;
use pointtrack::net::{ModelConfig, ToyNet};
use pointtrack::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_model(use_prior_depth: bool) -> ToyNet<f64> {
    ToyNet::new(ModelConfig {
        input_size: (16, 16),
        channels: vec![3, 4],
        head_channels: 3,
        use_prior_depth,
        seed: 7,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn check(model: &mut ToyNet<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input_channels = {
        let img = Grid::zeros(3, 16, 16);
        model.assemble_input(&img, &img, None).unwrap().channels()
    };
    let input = Grid::from_vec(
        input_channels,
        16,
        16,
        (0..input_channels * 256).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let mut depth = SparseDepthMap::<f64>::empty((16, 16), 4);
    for r in 0..4 {
        for c in 0..4 {
            if rng.gen_bool(0.5) {
                depth.set(r, c, rng.gen_range(3.0..40.0));
            }
        }
    }
    let cur = vec![common::bbox(6.3, 7.1, 3.0, 4.0, 0, 1)];
    let prev = vec![common::bbox(5.0, 8.0, 3.0, 4.0, 0, 1)];
    let targets = encode_targets(&cur, &prev, &depth, None, &EncodeParams::new(4, 2)).unwrap();
    let loss = LossConfig::default();

    let (_, grad) = model.loss_and_grad(&input, &targets, &loss).unwrap();
    let base = model.params().to_vec();
    let h = 1e-6;
    let (mut num, mut den) = (0.0, 0.0);
    // Every parameter of a model this small.
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        model.set_params(p.clone()).unwrap();
        let up = model.loss_and_grad(&input, &targets, &loss).unwrap().0.total;
        p[i] -= 2.0 * h;
        model.set_params(p).unwrap();
        let down = model.loss_and_grad(&input, &targets, &loss).unwrap().0.total;
        let fd = (up - down) / (2.0 * h);
        num += (fd - grad[i]).powi(2);
        den += grad[i].powi(2);
    }
    model.set_params(base).unwrap();
    let rel = num.sqrt() / den.sqrt();
    assert!(rel < 1e-5, "relative gradient error {rel:.2e}");
}

#[test]
fn parameter_gradients_match_finite_differences() {
    check(&mut tiny_model(false));
}

#[test]
fn parameter_gradients_with_prior_depth_channel() {
    check(&mut tiny_model(true));
}
