use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{DenseNet, Gradients, NnError};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam with moment buffers shaped like the network.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    config: AdamConfig,
    first: Gradients<T>,
    second: Gradients<T>,
    step: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(net: &DenseNet<T>, config: AdamConfig) -> Self {
        Self {
            config,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step(&mut self, net: &mut DenseNet<T>, grads: &Gradients<T>) -> Result<(), NnError> {
        if !grads.matches(net) || !self.first.matches(net) {
            return Err(NnError::ShapeMismatch);
        }
        self.step += 1;
        let b1 = T::lit(self.config.beta1);
        let b2 = T::lit(self.config.beta2);
        let lr = T::lit(self.config.lr);
        let eps = T::lit(self.config.eps);
        let t = self.step as i32;
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let update = |p: &mut T, m: &mut T, v: &mut T, g: T| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers_mut()
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            if let (Some(pb), Some(gb), Some(mb), Some(vb)) =
                (layer.bias.as_mut(), g.bias.as_ref(), m.bias.as_mut(), v.bias.as_mut())
            {
                Zip::from(pb)
                    .and(mb)
                    .and(vb)
                    .and(gb)
                    .for_each(|p, m, v, &g| update(p, m, v, g));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense};
    use ndarray::{arr1, arr2};

    fn scalar_net(w: f64) -> DenseNet<f64> {
        DenseNet::from_layers(vec![Dense {
            weights: arr2(&[[w, w]]),
            bias: None,
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn grads(g: f64) -> Gradients<f64> {
        Gradients {
            layers: vec![crate::nn::LayerGradient {
                weights: arr2(&[[g, g]]),
                bias: None,
            }],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.5);
        let mut adam = Adam::new(&net, AdamConfig::default());
        adam.step(&mut net, &grads(1.0)).unwrap();
        let delta = net.parameters()[0] - 0.5;
        let expected = -1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((delta - expected).abs() < 1e-15, "{delta} vs {expected}");
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = scalar_net(0.25);
        let mut adam = Adam::new(&net, AdamConfig::default());
        adam.step(&mut net, &grads(0.0)).unwrap();
        assert_eq!(net.parameters(), vec![0.25, 0.25]);
    }

    #[test]
    fn twin_parameters_stay_identical() {
        let mut net = scalar_net(0.1);
        let mut adam = Adam::new(&net, AdamConfig::default());
        for k in 0..50 {
            adam.step(&mut net, &grads((k as f64 * 0.37).sin())).unwrap();
            let p = net.parameters();
            assert_eq!(p[0].to_bits(), p[1].to_bits());
        }
        assert_eq!(adam.step_count(), 50);
    }

    #[test]
    fn rejects_mismatched_gradients() {
        let mut net = scalar_net(0.1);
        let mut adam = Adam::new(&net, AdamConfig::default());
        let bad = Gradients {
            layers: vec![crate::nn::LayerGradient {
                weights: arr2(&[[1.0], [2.0]]),
                bias: Some(arr1(&[0.0])),
            }],
        };
        assert!(matches!(adam.step(&mut net, &bad), Err(NnError::ShapeMismatch)));
    }
}
