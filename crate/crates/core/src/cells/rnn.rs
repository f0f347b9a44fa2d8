//! Vanilla RNN layer: `h[t] = tanh(W1 x[t] + W2 h[t-1] + b)`.

use super::{add_bias, bias_backward, Transform};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams<T> {
    pub w_in: Transform<T>,
    pub w_rec: Transform<T>,
    /// One entry per output unit (dense) or per output channel (conv).
    pub bias: Tensor<T>,
}

impl<T: Real> RnnParams<T> {
    pub fn dense(n_in: usize, n: usize) -> Self {
        RnnParams { w_in: Transform::dense(n_in, n), w_rec: Transform::dense(n, n), bias: Tensor::zeros(&[n]) }
    }

    pub fn conv(c_in: usize, c_out: usize, height: usize, width: usize) -> Self {
        RnnParams {
            w_in: Transform::conv(c_in, c_out, height, width),
            w_rec: Transform::conv(c_out, c_out, height, width),
            bias: Tensor::zeros(&[c_out]),
        }
    }

    pub fn width(&self) -> usize {
        self.w_in.out_len()
    }

    pub fn init(&mut self, rng: &mut impl rand::Rng) {
        self.w_in.init(rng);
        self.w_rec.init(rng);
        let bound = (1.0 / self.w_in.fan_in() as f64).sqrt();
        super::init_uniform(&mut self.bias, bound, rng);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnTape<T> {
    pub input: Vec<T>,
    pub prev_h: Vec<T>,
    pub h: Vec<T>,
}

pub fn rnn_step<T: Real>(p: &RnnParams<T>, prev_h: &[T], input: &[T]) -> Result<(Vec<T>, RnnTape<T>)> {
    p.w_in.check_input(input)?;
    p.w_rec.check_input(prev_h)?;
    let mut pre = vec![T::zero(); p.width()];
    p.w_in.apply(input, &mut pre);
    p.w_rec.apply(prev_h, &mut pre);
    add_bias(p.bias.data(), p.w_in.plane(), &mut pre);
    let h: Vec<T> = pre.into_iter().map(|v| v.tanh()).collect();
    Ok((h.clone(), RnnTape { input: input.to_vec(), prev_h: prev_h.to_vec(), h }))
}

/// Gradient accumulators `[W1, W2, b]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnGrads<T> {
    pub w_in: Tensor<T>,
    pub w_rec: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> RnnGrads<T> {
    pub fn zeros_like(p: &RnnParams<T>) -> Self {
        RnnGrads {
            w_in: Tensor::zeros(p.w_in.weight().shape()),
            w_rec: Tensor::zeros(p.w_rec.weight().shape()),
            bias: Tensor::zeros(p.bias.shape()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RnnBackward<T> {
    /// `W1ᵀ(δh∘θ′)`, the spatial gradient for the layer below.
    pub d_input: Option<Vec<T>>,
    /// `W2ᵀ(δh∘θ′)`, the temporal gradient for step `t-1`.
    pub d_prev_h: Vec<T>,
}

/// `d_h` is the total `δh[t]`: the layer above's `d_input`, the next step's `d_prev_h`
/// and any direct loss gradient, summed.
pub fn rnn_backward<T: Real>(
    p: &RnnParams<T>,
    tape: &RnnTape<T>,
    d_h: &[T],
    want_input_grad: bool,
    grads: &mut RnnGrads<T>,
) -> Result<RnnBackward<T>> {
    if tape.h.len() != p.width() {
        return Err(Error::Tape(format!("RNN tape width {} for a layer of {}", tape.h.len(), p.width())));
    }
    if d_h.len() != p.width() {
        return Err(Error::shape("RNN gradient width does not match layer"));
    }
    let d_pre: Vec<T> = d_h.iter().zip(&tape.h).map(|(&g, &h)| g * (T::one() - h * h)).collect();
    let mut d_input = want_input_grad.then(|| vec![T::zero(); p.w_in.in_len()]);
    p.w_in.backward(&tape.input, &d_pre, d_input.as_deref_mut(), &mut grads.w_in);
    let mut d_prev_h = vec![T::zero(); p.width()];
    p.w_rec.backward(&tape.prev_h, &d_pre, Some(&mut d_prev_h), &mut grads.w_rec);
    bias_backward(&d_pre, p.w_in.plane(), grads.bias.data_mut());
    Ok(RnnBackward { d_input, d_prev_h })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_give_zero_state() {
        let p = RnnParams::<f64>::dense(3, 2);
        let (h, _) = rnn_step(&p, &[0.0, 0.0], &[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(h, vec![0.0, 0.0]);
    }

    #[test]
    fn boundary_backward_is_zero_and_tanh_prime_at_zero_is_one() {
        let p = RnnParams::<f64>::dense(2, 2);
        let (_, tape) = rnn_step(&p, &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        let mut g = RnnGrads::zeros_like(&p);
        let b = rnn_backward(&p, &tape, &[0.0, 0.0], true, &mut g).unwrap();
        assert!(b.d_prev_h.iter().chain(b.d_input.as_ref().unwrap()).all(|&v| v == 0.0));
        // pre-activation 0 => θ' = 1, so the bias gradient equals the incoming gradient
        let mut g = RnnGrads::zeros_like(&p);
        rnn_backward(&p, &tape, &[0.7, -0.2], false, &mut g).unwrap();
        assert_eq!(g.bias.data(), &[0.7, -0.2]);
    }

    #[test]
    fn step_matches_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = RnnParams::<f64>::dense(4, 3);
            p.init(&mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss = |p: &RnnParams<f64>, h0: &[f64]| -> f64 {
                rnn_step(p, h0, &x).unwrap().0.iter().zip(&c).map(|(h, c)| h * c).sum()
            };
            let (_, tape) = rnn_step(&p, &h0, &x).unwrap();
            let mut g = RnnGrads::zeros_like(&p);
            let b = rnn_backward(&p, &tape, &c, true, &mut g).unwrap();
            let eps = 1e-6;
            let check = |a: f64, n: f64| assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-6) <= 1e-6, "{a} vs {n}");
            for i in 0..p.w_in.weight().len() {
                let mut pp = p.clone();
                pp.w_in.weight_mut().data_mut()[i] += eps;
                let mut pm = p.clone();
                pm.w_in.weight_mut().data_mut()[i] -= eps;
                check(g.w_in.data()[i], (loss(&pp, &h0) - loss(&pm, &h0)) / (2.0 * eps));
            }
            for i in 0..3 {
                let mut hp = h0.clone();
                hp[i] += eps;
                let mut hm = h0.clone();
                hm[i] -= eps;
                check(b.d_prev_h[i], (loss(&p, &hp) - loss(&p, &hm)) / (2.0 * eps));
            }
        }
    }
}
