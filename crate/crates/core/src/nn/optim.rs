use super::network::{Gradients, Network};
use crate::error::{Error, Result};
use crate::tensor::Real;

/// Classical momentum: `v <- momentum*v + g`, `param <- param - lr*v`.
pub fn sgd_momentum_step<T: Real>(
    net: &mut Network<T>,
    grads: &Gradients<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if !lr.is_finite() || lr <= 0.0 {
        return Err(Error::config(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::config(format!(
            "momentum must be in [0,1), got {momentum}"
        )));
    }
    let lr = T::from_f64(lr);
    let mu = T::from_f64(momentum);
    let mut grads_iter = grads.params.iter().flatten();
    for (i, (p, v)) in net.params_and_velocity_mut().enumerate() {
        let g = grads_iter
            .next()
            .ok_or_else(|| Error::shape("fewer gradients than parameters"))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient {i} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        for ((w, vel), &gv) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
            *vel = mu * *vel + gv;
            *w = *w - lr * *vel;
        }
        if !p.is_finite() {
            return Err(Error::NonFinite {
                context: format!("parameter tensor {i} after SGD step"),
            });
        }
    }
    if grads_iter.next().is_some() {
        return Err(Error::shape("more gradients than parameters"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::LayerSpec;
    use crate::tensor::Tensor;

    fn scalar_net(w: f64) -> Network<f64> {
        let mut net = Network::new(&[1], vec![LayerSpec::linear(1, 1)], 0).unwrap();
        net.params_mut(0)[0].data_mut()[0] = w;
        net
    }

    fn grads(g: f64) -> Gradients<f64> {
        Gradients {
            params: vec![vec![Tensor::filled(&[1, 1], g), Tensor::zeros(&[1])]],
            deltas: vec![],
        }
    }

    #[test]
    fn plain_step() {
        let mut net = scalar_net(1.0);
        sgd_momentum_step(&mut net, &grads(1.0), 0.01, 0.0).unwrap();
        assert_eq!(net.params(0)[0].data()[0], 0.99);
    }

    #[test]
    fn momentum_recurrence() {
        let mut net = scalar_net(0.0);
        sgd_momentum_step(&mut net, &grads(1.0), 1.0, 0.9).unwrap();
        assert_eq!(net.params(0)[0].data()[0], -1.0);
        sgd_momentum_step(&mut net, &grads(1.0), 1.0, 0.9).unwrap();
        assert_eq!(net.velocity(0)[0].data()[0], 1.9);
        assert!((net.params(0)[0].data()[0] + 2.9).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut net = scalar_net(0.25);
        let before = net.clone();
        sgd_momentum_step(&mut net, &grads(0.0), 0.5, 0.9).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut net = scalar_net(0.0);
        assert!(sgd_momentum_step(&mut net, &grads(1.0), 0.0, 0.9).is_err());
        assert!(sgd_momentum_step(&mut net, &grads(1.0), 0.1, 1.0).is_err());
    }
}
