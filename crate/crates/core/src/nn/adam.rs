use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Mlp, MlpGrad};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for a list of networks updated together.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<MlpGrad>,
    second: Vec<MlpGrad>,
}

impl AdamState {
    pub fn new(config: AdamConfig, nets: &[&Mlp]) -> Self {
        let first: Vec<MlpGrad> = nets.iter().map(|n| MlpGrad::zeros_like(n)).collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Parameters at masked positions are
    /// left at exactly zero and their accumulators untouched.
    pub fn step(&mut self, nets: &mut [&mut Mlp], grads: &[MlpGrad]) -> Result<()> {
        if nets.len() != self.first.len() || grads.len() != nets.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} networks, got {} networks and {} gradients",
                self.first.len(),
                nets.len(),
                grads.len()
            )));
        }
        for (i, (net, grad)) in nets.iter().zip(grads).enumerate() {
            if grad.layers.len() != net.layers().len() || self.first[i].layers.len() != net.layers().len() {
                return Err(Error::Shape(format!("gradient {i} has the wrong number of layers")));
            }
            for (l, (g, p)) in grad.layers.iter().zip(net.layers()).enumerate() {
                if g.weight.dim() != p.weight.dim() || g.bias.len() != p.bias.len() {
                    return Err(Error::Shape(format!("gradient {i} layer {l} shape differs")));
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let update = move |p: &mut f64, g: f64, m: &mut f64, v: &mut f64, keep: bool| {
            if !keep {
                *p = 0.0;
                return;
            }
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for (i, net) in nets.iter_mut().enumerate() {
            let (layers, mask) = net.layers_and_mask_mut();
            for (l, layer) in layers.iter_mut().enumerate() {
                let g = &grads[i].layers[l];
                let m = &mut self.first[i].layers[l];
                let v = &mut self.second[i].layers[l];
                match mask {
                    Some(mask) => {
                        Zip::from(&mut layer.weight)
                            .and(&g.weight)
                            .and(&mut m.weight)
                            .and(&mut v.weight)
                            .and(&mask[l].weight)
                            .for_each(|p, &g, m, v, &k| update(p, g, m, v, k));
                        Zip::from(&mut layer.bias)
                            .and(&g.bias)
                            .and(&mut m.bias)
                            .and(&mut v.bias)
                            .and(&mask[l].bias)
                            .for_each(|p, &g, m, v, &k| update(p, g, m, v, k));
                    }
                    None => {
                        Zip::from(&mut layer.weight)
                            .and(&g.weight)
                            .and(&mut m.weight)
                            .and(&mut v.weight)
                            .for_each(|p, &g, m, v| update(p, g, m, v, true));
                        Zip::from(&mut layer.bias)
                            .and(&g.bias)
                            .and(&mut m.bias)
                            .and(&mut v.bias)
                            .for_each(|p, &g, m, v| update(p, g, m, v, true));
                    }
                }
            }
        }
        Ok(())
    }
}
