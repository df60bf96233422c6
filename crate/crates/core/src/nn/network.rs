use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::layers::{self, LayerCache, LayerSpec, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Ordered layer stack with parameters, momentum buffers and batch-norm
/// running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Per-sample output shape of every layer.
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<Tensor<T>>>,
    velocity: Vec<Vec<Tensor<T>>>,
    buffers: Vec<Vec<Tensor<T>>>,
    rng_seed: u64,
}

impl<T: Real> Network<T> {
    /// Builds the stack and initialises weights: uniform in `±1/sqrt(fan_in)`
    /// for conv/linear weights, zero biases, unit batch-norm scale.
    pub fn new(input_shape: &[usize], layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network has no layers"));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut cur = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            cur = layer
                .output_shape(&cur)
                .map_err(|e| Error::config(format!("layer {i}: {e}")))?;
            shapes.push(cur.clone());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layers.len());
        for layer in &layers {
            let mut p = Vec::new();
            for (name, shape) in layer.param_shapes() {
                let t = match (layer, name) {
                    (LayerSpec::BatchNorm2d { .. }, "weight") => Tensor::filled(&shape, T::one()),
                    (_, "weight") => {
                        let bound = 1.0 / (layer.fan_in().unwrap_or(1) as f64).sqrt();
                        let len = shape.iter().product();
                        let data = (0..len)
                            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
                            .collect();
                        Tensor::from_vec(&shape, data)?
                    }
                    _ => Tensor::zeros(&shape),
                };
                p.push(t);
            }
            params.push(p);
        }
        let velocity = params
            .iter()
            .map(|p| p.iter().map(|t| Tensor::zeros(t.shape())).collect())
            .collect();
        let buffers = layers
            .iter()
            .map(|l| {
                l.buffer_shapes()
                    .into_iter()
                    .map(|(name, shape)| {
                        if name == "running_var" {
                            Tensor::filled(&shape, T::one())
                        } else {
                            Tensor::zeros(&shape)
                        }
                    })
                    .collect()
            })
            .collect();

        Ok(Network {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
            params,
            velocity,
            buffers,
            rng_seed: seed,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer_output_shape(&self, k: usize) -> &[usize] {
        &self.shapes[k]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty network")
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn params(&self, layer: usize) -> &[Tensor<T>] {
        &self.params[layer]
    }

    pub fn params_mut(&mut self, layer: usize) -> &mut [Tensor<T>] {
        &mut self.params[layer]
    }

    pub fn velocity(&self, layer: usize) -> &[Tensor<T>] {
        &self.velocity[layer]
    }

    pub fn buffers(&self, layer: usize) -> &[Tensor<T>] {
        &self.buffers[layer]
    }

    /// Overrides the probability of every dropout layer.
    pub fn set_dropout(&mut self, p: f64) -> Result<()> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::config(format!("dropout must be in [0,1), got {p}")));
        }
        for l in &mut self.layers {
            if let LayerSpec::Dropout { p: q } = l {
                *q = p;
            }
        }
        Ok(())
    }

    /// Number of trainable scalars.
    pub fn num_params(&self) -> usize {
        self.params.iter().flatten().map(|t| t.len()).sum()
    }

    /// Every stored tensor as `(name, tensor)` in a fixed order: the
    /// record layout of checkpoints.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for ((name, _), t) in layer.param_shapes().iter().zip(&self.params[i]) {
                out.push((format!("{i}.{name}"), t));
            }
            for ((name, _), t) in layer.param_shapes().iter().zip(&self.velocity[i]) {
                out.push((format!("{i}.{name}.velocity"), t));
            }
            for ((name, _), t) in layer.buffer_shapes().iter().zip(&self.buffers[i]) {
                out.push((format!("{i}.{name}"), t));
            }
        }
        out
    }

    pub(crate) fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        let per_layer = self
            .layers
            .iter()
            .zip(self.params.iter_mut())
            .zip(self.velocity.iter_mut())
            .zip(self.buffers.iter_mut());
        for (i, (((layer, p), v), b)) in per_layer.enumerate() {
            let names = layer.param_shapes();
            for ((name, _), t) in names.iter().zip(p.iter_mut()) {
                out.push((format!("{i}.{name}"), t));
            }
            for ((name, _), t) in names.iter().zip(v.iter_mut()) {
                out.push((format!("{i}.{name}.velocity"), t));
            }
            for ((name, _), t) in layer.buffer_shapes().iter().zip(b.iter_mut()) {
                out.push((format!("{i}.{name}"), t));
            }
        }
        out
    }

    /// SHA-256 over the raw bytes of every trainable parameter.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for t in self.params.iter().flatten() {
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            h.update(&buf);
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Same network in another precision.
    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv = |v: &Vec<Vec<Tensor<T>>>| -> Vec<Vec<Tensor<U>>> {
            v.iter()
                .map(|p| p.iter().map(|t| t.cast()).collect())
                .collect()
        };
        Network {
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            shapes: self.shapes.clone(),
            params: conv(&self.params),
            velocity: conv(&self.velocity),
            buffers: conv(&self.buffers),
            rng_seed: self.rng_seed,
        }
    }

    /// Folds a train-mode trace's batch statistics into the batch-norm
    /// running averages (unbiased variance, as the reference layers do).
    pub fn commit_batch_stats(&mut self, trace: &ForwardTrace<T>) {
        for (k, layer) in self.layers.iter().enumerate() {
            let LayerSpec::BatchNorm2d {
                channels, momentum, ..
            } = *layer
            else {
                continue;
            };
            let LayerCache::BatchNorm {
                batch_mean,
                batch_var,
                ..
            } = &trace.caches[k]
            else {
                continue;
            };
            let count = trace.activations[k].len() / channels;
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            let (rm, rv) = self.buffers[k].split_at_mut(1);
            for c in 0..channels {
                let m = &mut rm[0].data_mut()[c];
                *m = T::from_f64((1.0 - momentum) * m.as_f64() + momentum * batch_mean[c].as_f64());
                let v = &mut rv[0].data_mut()[c];
                *v = T::from_f64(
                    (1.0 - momentum) * v.as_f64() + momentum * batch_var[c].as_f64() * unbias,
                );
            }
        }
    }

    pub(crate) fn params_and_velocity_mut(
        &mut self,
    ) -> impl Iterator<Item = (&mut Tensor<T>, &mut Tensor<T>)> {
        self.params
            .iter_mut()
            .flatten()
            .zip(self.velocity.iter_mut().flatten())
    }
}

/// Activations and saved state of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    /// `activations[0]` is the batch; `activations[k + 1]` is layer `k`'s output.
    pub activations: Vec<Tensor<T>>,
    pub caches: Vec<LayerCache<T>>,
    pub mode: Mode,
}

impl<T: Real> ForwardTrace<T> {
    pub fn layer_input(&self, k: usize) -> &Tensor<T> {
        &self.activations[k]
    }

    pub fn layer_output(&self, k: usize) -> &Tensor<T> {
        &self.activations[k + 1]
    }

    pub fn output(&self) -> &Tensor<T> {
        self.activations
            .last()
            .expect("trace holds the input at least")
    }
}

/// Parameter gradients and per-layer errors of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Shape-congruent with the network's parameters.
    pub params: Vec<Vec<Tensor<T>>>,
    /// `deltas[k]` is the loss gradient with respect to layer `k`'s output.
    pub deltas: Vec<Tensor<T>>,
}

pub fn network_forward<T: Real, R: Rng + ?Sized>(
    net: &Network<T>,
    batch: &Tensor<T>,
    mode: Mode,
    rng: &mut R,
) -> Result<ForwardTrace<T>> {
    if batch.shape().len() != net.input_shape.len() + 1 || batch.shape()[1..] != net.input_shape[..]
    {
        return Err(Error::config(format!(
            "batch shape {:?} does not match network input [N, {:?}]",
            batch.shape(),
            net.input_shape
        )));
    }
    let mut activations = Vec::with_capacity(net.layers.len() + 1);
    let mut caches = Vec::with_capacity(net.layers.len());
    activations.push(batch.clone());
    for (k, layer) in net.layers.iter().enumerate() {
        let f = layers::forward(
            layer,
            &net.params[k],
            &net.buffers[k],
            &activations[k],
            &net.shapes[k],
            mode,
            rng,
        );
        if !f.output.is_finite() {
            return Err(Error::NonFinite {
                context: format!("output of layer {k} ({})", layer.kind()),
            });
        }
        activations.push(f.output);
        caches.push(f.cache);
    }
    Ok(ForwardTrace {
        activations,
        caches,
        mode,
    })
}

/// Backpropagates `dloss` through the stack.
///
/// When the last layer is a softmax, `dloss` is taken with respect to its
/// input (the fused softmax/cross-entropy gradient from
/// [`softmax_cross_entropy`](super::loss::softmax_cross_entropy)) and that
/// layer's own Jacobian is skipped.
pub fn network_backward<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    dloss: &Tensor<T>,
) -> Result<Gradients<T>> {
    backward_impl(net, trace, dloss, false).map(|(g, _)| g)
}

/// Backward pass that can also return the gradient with respect to the batch.
pub(crate) fn backward_impl<T: Real>(
    net: &Network<T>,
    trace: &ForwardTrace<T>,
    dloss: &Tensor<T>,
    input_grad: bool,
) -> Result<(Gradients<T>, Option<Tensor<T>>)> {
    let n_layers = net.layers.len();
    if trace.activations.len() != n_layers + 1 || trace.caches.len() != n_layers {
        return Err(Error::shape(format!(
            "trace has {} activations for {n_layers} layers",
            trace.activations.len()
        )));
    }
    if trace.mode != Mode::Train {
        return Err(Error::shape("backward needs a train-mode trace"));
    }
    if dloss.shape() != trace.output().shape() {
        return Err(Error::shape(format!(
            "loss gradient {:?} vs network output {:?}",
            dloss.shape(),
            trace.output().shape()
        )));
    }

    let mut params: Vec<Vec<Tensor<T>>> = vec![Vec::new(); n_layers];
    let mut deltas: Vec<Option<Tensor<T>>> = vec![None; n_layers];
    let mut upstream = dloss.clone();
    let mut last = n_layers;
    if matches!(net.layers[n_layers - 1], LayerSpec::Softmax) {
        deltas[n_layers - 1] = Some(dloss.clone());
        last -= 1;
    }
    for k in (0..last).rev() {
        let b = layers::backward(
            &net.layers[k],
            &net.params[k],
            trace.layer_input(k),
            trace.layer_output(k),
            &trace.caches[k],
            &upstream,
            k > 0 || input_grad,
        )?;
        params[k] = b.dparams;
        let next = b.dinput;
        deltas[k] = Some(std::mem::replace(
            &mut upstream,
            next.unwrap_or_else(|| Tensor::zeros(&[0])),
        ));
    }
    let dinput = (input_grad && last > 0).then_some(upstream);
    let grads = Gradients {
        params,
        deltas: deltas
            .into_iter()
            .map(|d| d.expect("every layer visited"))
            .collect(),
    };
    Ok((grads, dinput))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::loss::softmax_cross_entropy;

    #[test]
    fn single_linear_identity() {
        let mut net = Network::<f64>::new(&[1], vec![LayerSpec::linear(1, 1)], 0).unwrap();
        net.params_mut(0)[0].data_mut()[0] = 1.0;
        let x = Tensor::from_vec(&[1, 1], vec![3.0]).unwrap();
        let t = network_forward(&net, &x, Mode::Eval, &mut rand::rng()).unwrap();
        assert_eq!(t.output().data(), &[3.0]);
    }

    #[test]
    fn zero_dloss_gives_zero_gradients() {
        let layers = vec![
            LayerSpec::conv2d(1, 2, 3, 1),
            LayerSpec::batchnorm2d(2),
            LayerSpec::Relu,
            LayerSpec::maxpool2d(2),
            LayerSpec::linear(8, 3),
            LayerSpec::Softmax,
        ];
        let net = Network::<f64>::new(&[1, 4, 4], layers, 3).unwrap();
        let x = Tensor::filled(&[2, 1, 4, 4], 0.5);
        let t = network_forward(&net, &x, Mode::Train, &mut rand::rng()).unwrap();
        let g = network_backward(&net, &t, &Tensor::zeros(&[2, 3])).unwrap();
        for p in g.params.iter().flatten() {
            assert!(p.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn eval_trace_rejected_by_backward() {
        let net = Network::<f64>::new(&[2], vec![LayerSpec::linear(2, 2), LayerSpec::Softmax], 0)
            .unwrap();
        let x = Tensor::filled(&[1, 2], 1.0);
        let t = network_forward(&net, &x, Mode::Eval, &mut rand::rng()).unwrap();
        let loss = softmax_cross_entropy(t.output(), &[0]).unwrap();
        assert!(network_backward(&net, &t, &loss.grad).is_err());
    }

    #[test]
    fn wrong_batch_shape_is_config_error() {
        let net = Network::<f32>::new(&[2], vec![LayerSpec::linear(2, 2)], 0).unwrap();
        let x = Tensor::filled(&[1, 3], 1.0);
        let err = network_forward(&net, &x, Mode::Eval, &mut rand::rng()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let mut net =
            Network::<f32>::new(&[1], vec![LayerSpec::linear(1, 1), LayerSpec::Relu], 0).unwrap();
        net.params_mut(0)[0].data_mut()[0] = f32::MAX;
        let x = Tensor::filled(&[1, 1], 10.0);
        let err = network_forward(&net, &x, Mode::Eval, &mut rand::rng()).unwrap_err();
        assert!(err.to_string().contains("layer 0 (linear)"), "{err}");
    }
}
