//! Finite-difference verification of the analytic backward pass.
//!
//! Uses the fourth-order central stencil
//! `(8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h`, whose truncation error
//! stays below roundoff for steps in `[1e-6, 1e-4]`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layers::{LayerSpec, Mode};
use super::loss::softmax_cross_entropy;
use super::network::{backward_impl, network_forward, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Elements checked per parameter tensor; larger tensors are sampled.
    pub max_per_tensor: usize,
    pub sample_seed: u64,
    /// Every loss evaluation reuses this seed, so dropout masks are frozen.
    pub dropout_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            max_per_tensor: 64,
            sample_seed: 0,
            dropout_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(parameter name, max relative error)` per checked tensor, plus
    /// `"input"` for the gradient with respect to the batch.
    pub per_tensor: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Relative error used throughout: `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

pub fn grad_check(
    net: &Network<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    eps: f64,
) -> Result<f64> {
    Ok(grad_check_with(net, batch, labels, eps, &GradCheckOptions::default())?.max_rel_err)
}

pub fn grad_check_with(
    net: &Network<f64>,
    batch: &Tensor<f64>,
    labels: &[usize],
    eps: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-6..=1e-4).contains(&eps) {
        return Err(Error::config(format!(
            "eps must be in [1e-6, 1e-4], got {eps}"
        )));
    }
    if !matches!(net.layers().last(), Some(LayerSpec::Softmax)) {
        return Err(Error::config(
            "gradient check needs a network ending in softmax",
        ));
    }
    let loss_of = |n: &Network<f64>, x: &Tensor<f64>| -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.dropout_seed);
        let trace = network_forward(n, x, Mode::Train, &mut rng)?;
        Ok(softmax_cross_entropy(trace.output(), labels)?.loss)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.dropout_seed);
    let trace = network_forward(net, batch, Mode::Train, &mut rng)?;
    let loss = softmax_cross_entropy(trace.output(), labels)?;
    let (grads, dinput) = backward_impl(net, &trace, &loss.grad, true)?;

    let mut sampler = ChaCha8Rng::seed_from_u64(opts.sample_seed);
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        per_tensor: Vec::new(),
        max_rel_err: 0.0,
        checked: 0,
    };
    for (k, layer) in net.layers().iter().enumerate() {
        for (j, (name, _)) in layer.param_shapes().into_iter().enumerate() {
            let analytic = grads.params[k][j].data();
            let len = analytic.len();
            let idx: Vec<usize> = if len <= opts.max_per_tensor {
                (0..len).collect()
            } else {
                rand::seq::index::sample(&mut sampler, len, opts.max_per_tensor).into_vec()
            };
            let mut worst = 0.0f64;
            for i in idx {
                let orig = probe.params(k)[j].data()[i];
                let mut at = |offset: f64| -> Result<f64> {
                    probe.params_mut(k)[j].data_mut()[i] = orig + offset;
                    loss_of(&probe, batch)
                };
                let numeric = central_difference(&mut at, eps)?;
                probe.params_mut(k)[j].data_mut()[i] = orig;
                worst = worst.max(rel_err(analytic[i], numeric));
                report.checked += 1;
            }
            report.max_rel_err = report.max_rel_err.max(worst);
            report
                .per_tensor
                .push((format!("{k}.{}.{name}", layer.kind()), worst));
        }
    }

    if let Some(dinput) = dinput {
        let mut probe = batch.clone();
        let len = probe.len();
        let idx: Vec<usize> = if len <= opts.max_per_tensor {
            (0..len).collect()
        } else {
            rand::seq::index::sample(&mut sampler, len, opts.max_per_tensor).into_vec()
        };
        let mut worst = 0.0f64;
        for i in idx {
            let orig = probe.data()[i];
            let mut at = |offset: f64| -> Result<f64> {
                probe.data_mut()[i] = orig + offset;
                loss_of(net, &probe)
            };
            let numeric = central_difference(&mut at, eps)?;
            probe.data_mut()[i] = orig;
            worst = worst.max(rel_err(dinput.data()[i], numeric));
            report.checked += 1;
        }
        report.max_rel_err = report.max_rel_err.max(worst);
        report.per_tensor.push(("input".to_string(), worst));
    }
    Ok(report)
}

fn central_difference(f: &mut impl FnMut(f64) -> Result<f64>, h: f64) -> Result<f64> {
    let (p1, m1) = (f(h)?, f(-h)?);
    let (p2, m2) = (f(2.0 * h)?, f(-2.0 * h)?);
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h))
}

/// Step used for a layer kind in [`check_layer_kinds`]; ReLU gets a smaller
/// one so perturbations rarely cross its kink.
pub fn kind_step(kind: &str) -> f64 {
    if kind == "relu" {
        1e-5
    } else {
        1e-4
    }
}

/// One small network per layer kind: `(kind, per-sample input shape,
/// layers)`. The kind under test sits behind a parameterised layer or
/// directly on the input, so its backward rule feeds a checked gradient.
pub fn kind_nets() -> Vec<(&'static str, Vec<usize>, Vec<LayerSpec>)> {
    vec![
        (
            "linear",
            vec![6],
            vec![LayerSpec::linear(6, 4), LayerSpec::Softmax],
        ),
        (
            "softmax",
            vec![5],
            vec![
                LayerSpec::linear(5, 4),
                LayerSpec::Softmax,
                LayerSpec::linear(4, 3),
                LayerSpec::Softmax,
            ],
        ),
        (
            "relu",
            vec![6],
            vec![
                LayerSpec::linear(6, 5),
                LayerSpec::Relu,
                LayerSpec::linear(5, 3),
                LayerSpec::Softmax,
            ],
        ),
        (
            "conv2d",
            vec![1, 5, 5],
            vec![
                LayerSpec::conv2d(1, 2, 3, 0),
                LayerSpec::linear(18, 3),
                LayerSpec::Softmax,
            ],
        ),
        (
            "batchnorm2d",
            vec![2, 3, 3],
            vec![
                LayerSpec::batchnorm2d(2),
                LayerSpec::linear(18, 3),
                LayerSpec::Softmax,
            ],
        ),
        (
            "maxpool2d",
            vec![2, 4, 4],
            vec![
                LayerSpec::maxpool2d(2),
                LayerSpec::linear(8, 3),
                LayerSpec::Softmax,
            ],
        ),
        (
            "dropout",
            vec![6],
            vec![
                LayerSpec::linear(6, 5),
                LayerSpec::Dropout { p: 0.3 },
                LayerSpec::linear(5, 3),
                LayerSpec::Softmax,
            ],
        ),
    ]
}

fn batch_shape(input: &[usize], batch: usize) -> Vec<usize> {
    let mut shape = vec![batch];
    shape.extend_from_slice(input);
    shape
}

/// Random permutation of well-separated values, so no pooling window holds
/// two entries closer than any finite-difference step.
pub fn distinct_case(
    input: &[usize],
    classes: usize,
    batch: usize,
    seed: u64,
) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ed_270b);
    let n = batch * input.iter().product::<usize>();
    let mut data: Vec<f64> = (0..n).map(|i| (i as f64 / n as f64 - 0.5) * 4.0).collect();
    data.shuffle(&mut rng);
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (
        Tensor::from_vec(&batch_shape(input, batch), data).expect("consistent shape"),
        labels,
    )
}

/// Standard-normal batch with uniform labels.
pub fn random_case(
    input: &[usize],
    classes: usize,
    batch: usize,
    seed: u64,
) -> (Tensor<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let n = batch * input.iter().product::<usize>();
    let data = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (
        Tensor::from_vec(&batch_shape(input, batch), data).expect("consistent shape"),
        labels,
    )
}

/// Worst relative error per layer kind over the given network seeds.
pub fn check_layer_kinds(
    seeds: std::ops::Range<u64>,
    batch: usize,
) -> Result<Vec<(&'static str, f64)>> {
    kind_nets()
        .into_iter()
        .map(|(kind, input, layers)| {
            let mut worst = 0.0f64;
            for seed in seeds.clone() {
                let net = Network::<f64>::new(&input, layers.clone(), seed)?;
                let classes = net.output_shape()[0];
                let (x, y) = if kind == "maxpool2d" {
                    distinct_case(&input, classes, batch, seed)
                } else {
                    random_case(&input, classes, batch, seed)
                };
                let opts = GradCheckOptions {
                    dropout_seed: seed,
                    ..Default::default()
                };
                worst =
                    worst.max(grad_check_with(&net, &x, &y, kind_step(kind), &opts)?.max_rel_err);
            }
            Ok((kind, worst))
        })
        .collect()
}
