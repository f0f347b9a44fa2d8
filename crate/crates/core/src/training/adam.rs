use serde::{Deserialize, Serialize};

use crate::network::ParamGrads;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam with first and second moments kept per parameter tensor.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, params: Vec<&mut Tensor<T>>, grads: &ParamGrads<T>) {
        assert_eq!(params.len(), grads.tensors.len(), "one gradient per parameter tensor");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (nb1, nb2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        for (((p, g), m), v) in params.into_iter().zip(&grads.tensors).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = b1 * *mv + nb1 * gv;
                *vv = b2 * *vv + nb2 * gv * gv;
                let m_hat = mv.as_f64() / c1;
                let v_hat = vv.as_f64() / c2;
                *pv -= T::of(lr * m_hat / (v_hat.sqrt() + eps));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(grad: f64, steps: usize) -> (f64, Adam<f64>) {
        let mut p = Tensor::filled(&[1], 1.0);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        let g = ParamGrads { tensors: vec![Tensor::filled(&[1], grad)] };
        for _ in 0..steps {
            adam.update(vec![&mut p], &g);
        }
        (p.data()[0], adam)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (p, adam) = run(0.0, 5);
        assert_eq!(p, 1.0);
        assert_eq!(adam.m[0].data()[0], 0.0);
    }

    #[test]
    fn moments_decay_without_gradient() {
        let mut p: Tensor<f64> = Tensor::filled(&[1], 1.0);
        let mut adam = Adam::new(AdamConfig::default(), &[&p]);
        adam.update(vec![&mut p], &ParamGrads { tensors: vec![Tensor::filled(&[1], 2.0)] });
        let m1 = adam.m[0].data()[0];
        adam.update(vec![&mut p], &ParamGrads { tensors: vec![Tensor::filled(&[1], 0.0)] });
        assert!((adam.m[0].data()[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0f64, -0.02, 150.0] {
            let (p, _) = run(g, 1);
            let want = 1.0 - 1e-4 * g / (g.abs() + 1e-8);
            assert!((p - want).abs() < 1e-15, "{p} vs {want}");
        }
    }

    #[test]
    fn constant_gradient_descends_at_lr_per_step() {
        let (p, _) = run(0.5, 1000);
        assert!((p - (1.0 - 1000.0 * 1e-4)).abs() < 1e-6);
    }
}
