use serde::{Deserialize, Serialize};

use super::network::{Gradients, Network};

/// Adaptive-moment gradient descent hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f32>>,
    pub second_moment: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(network: &Network, config: AdamConfig) -> Self {
        let zeros = || network.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    /// One bias-corrected update of every trainable parameter.
    pub fn apply(&mut self, network: &mut Network, grads: &Gradients, learning_rate: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let step_size = (learning_rate * c2.sqrt() / c1) as f32;
        let eps = (epsilon * c2.sqrt()) as f32;
        let (b1, b2) = (beta1 as f32, beta2 as f32);
        for (i, param) in network.params_mut().iter_mut().enumerate() {
            if !param.trainable {
                continue;
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (((p, g), m), v) in param.data.iter_mut().zip(&grads.grads[i]).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= step_size * *m / (v.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::{LayerSpec, NetworkSpec};

    #[test]
    fn first_step_moves_by_learning_rate() {
        let spec = NetworkSpec::new(vec![LayerSpec::OutputConv { in_ch: 1, out_ch: 1 }], 1.0, false).unwrap();
        let mut net = Network::new(spec, 0).unwrap();
        let before: Vec<f32> = net.params().iter().map(|p| p.data[0]).collect();
        let mut grads = net.zero_gradients();
        grads.grads[0][0] = 0.5;
        grads.grads[1][0] = -2.0;
        let mut adam = Adam::new(&net, AdamConfig::default());
        adam.apply(&mut net, &grads, 0.01);
        let after: Vec<f32> = net.params().iter().map(|p| p.data[0]).collect();
        assert!((before[0] - after[0] - 0.01).abs() < 1e-6);
        assert!((after[1] - before[1] - 0.01).abs() < 1e-6);
    }
}
