//! Finite-difference checks of every layer kind's backward pass (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tecnn::nn::gradcheck::{random_case, rel_err};
use tecnn::nn::{check_layer_kinds, grad_check, softmax_cross_entropy, LayerSpec, Network};
use tecnn::Tensor;

#[test]
fn every_kind_matches_finite_differences() {
    for (kind, worst) in check_layer_kinds(0..100, 4).unwrap() {
        eprintln!("{kind:12} max rel err {worst:.3e}");
        let bound = if matches!(kind, "linear" | "softmax") {
            1e-6
        } else {
            1e-4
        };
        assert!(worst < bound, "{kind}: {worst:e} >= {bound:e}");
    }
}

#[test]
fn conv_on_single_5x5_image() {
    let net = Network::<f64>::new(
        &[1, 5, 5],
        vec![
            LayerSpec::conv2d(1, 1, 3, 0),
            LayerSpec::linear(9, 2),
            LayerSpec::Softmax,
        ],
        7,
    )
    .unwrap();
    let (x, y) = random_case(&[1, 5, 5], 2, 1, 7);
    assert!(grad_check(&net, &x, &y, 1e-4).unwrap() < 1e-4);
}

#[test]
fn loss_gradient_matches_finite_differences() {
    // probs = softmax(logits); check d(mean CE)/d(logits) directly.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let logits: Vec<f64> = (0..12).map(|_| rng.sample(StandardNormal)).collect();
    let labels = [0usize, 2, 1, 2];
    let probs_of = |l: &[f64]| {
        let mut p = l.to_vec();
        for row in p.chunks_exact_mut(3) {
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
            row.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
        }
        Tensor::from_vec(&[4, 3], p).unwrap()
    };
    let out = softmax_cross_entropy(&probs_of(&logits), &labels).unwrap();
    let eps = 1e-6;
    for i in 0..12 {
        let mut up = logits.clone();
        up[i] += eps;
        let mut down = logits.clone();
        down[i] -= eps;
        let lu = softmax_cross_entropy(&probs_of(&up), &labels).unwrap().loss;
        let ld = softmax_cross_entropy(&probs_of(&down), &labels)
            .unwrap()
            .loss;
        let numeric = (lu - ld) / (2.0 * eps);
        let rel = rel_err(out.grad.data()[i], numeric);
        assert!(rel < 1e-6, "logit {i}: rel err {rel:e}");
    }
}
