//! LSTM layer with forget, input and output gates and a tanh candidate.
//!
//! ```text
//! f = σ(Wf1 x + Wf2 h' + bf)    i = σ(Wi1 x + Wi2 h' + bi)
//! o = σ(Wo1 x + Wo2 h' + bo)    g = tanh(Wg1 x + Wg2 h' + bg)
//! c = c'∘f + g∘i                h = tanh(c)∘o
//! ```

use super::{add_bias, bias_backward, sigmoid, Transform};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Gate order used everywhere: forget, input, output, candidate.
pub const GATES: [&str; 4] = ["f", "i", "o", "g"];

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGate<T> {
    pub w_in: Transform<T>,
    pub w_rec: Transform<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub gates: [LstmGate<T>; 4],
}

impl<T: Real> LstmParams<T> {
    pub fn dense(n_in: usize, n: usize) -> Self {
        LstmParams {
            gates: std::array::from_fn(|_| LstmGate {
                w_in: Transform::dense(n_in, n),
                w_rec: Transform::dense(n, n),
                bias: Tensor::zeros(&[n]),
            }),
        }
    }

    pub fn conv(c_in: usize, c_out: usize, height: usize, width: usize) -> Self {
        LstmParams {
            gates: std::array::from_fn(|_| LstmGate {
                w_in: Transform::conv(c_in, c_out, height, width),
                w_rec: Transform::conv(c_out, c_out, height, width),
                bias: Tensor::zeros(&[c_out]),
            }),
        }
    }

    pub fn width(&self) -> usize {
        self.gates[0].w_in.out_len()
    }

    pub fn init(&mut self, rng: &mut impl rand::Rng) {
        for g in &mut self.gates {
            g.w_in.init(rng);
            g.w_rec.init(rng);
            let bound = (1.0 / g.w_in.fan_in() as f64).sqrt();
            super::init_uniform(&mut g.bias, bound, rng);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

impl<T: Real> LstmState<T> {
    pub fn zeros(n: usize) -> Self {
        LstmState { h: vec![T::zero(); n], c: vec![T::zero(); n] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmTape<T> {
    pub input: Vec<T>,
    pub prev_h: Vec<T>,
    pub prev_c: Vec<T>,
    /// Activated gate values, in [`GATES`] order.
    pub gates: [Vec<T>; 4],
    pub c: Vec<T>,
    pub tanh_c: Vec<T>,
}

pub fn lstm_step<T: Real>(p: &LstmParams<T>, prev: &LstmState<T>, input: &[T]) -> Result<(LstmState<T>, LstmTape<T>)> {
    let n = p.width();
    p.gates[0].w_in.check_input(input)?;
    if prev.h.len() != n || prev.c.len() != n {
        return Err(Error::shape(format!("LSTM state width {} for a layer of {n}", prev.h.len())));
    }
    let gates: [Vec<T>; 4] = std::array::from_fn(|k| {
        let gate = &p.gates[k];
        let mut pre = vec![T::zero(); n];
        gate.w_in.apply(input, &mut pre);
        gate.w_rec.apply(&prev.h, &mut pre);
        add_bias(gate.bias.data(), gate.w_in.plane(), &mut pre);
        if k == 3 {
            pre.into_iter().map(|v| v.tanh()).collect()
        } else {
            pre.into_iter().map(sigmoid).collect()
        }
    });
    let [f, i, o, g] = &gates;
    let c: Vec<T> = (0..n).map(|j| prev.c[j] * f[j] + g[j] * i[j]).collect();
    let tanh_c: Vec<T> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<T> = tanh_c.iter().zip(o).map(|(&t, &o)| t * o).collect();
    let tape = LstmTape {
        input: input.to_vec(),
        prev_h: prev.h.clone(),
        prev_c: prev.c.clone(),
        gates: gates.clone(),
        c: c.clone(),
        tanh_c,
    };
    Ok((LstmState { h, c }, tape))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGateGrads<T> {
    pub w_in: Tensor<T>,
    pub w_rec: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmGrads<T> {
    pub gates: [LstmGateGrads<T>; 4],
}

impl<T: Real> LstmGrads<T> {
    pub fn zeros_like(p: &LstmParams<T>) -> Self {
        LstmGrads {
            gates: std::array::from_fn(|k| LstmGateGrads {
                w_in: Tensor::zeros(p.gates[k].w_in.weight().shape()),
                w_rec: Tensor::zeros(p.gates[k].w_rec.weight().shape()),
                bias: Tensor::zeros(p.gates[k].bias.shape()),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmBackward<T> {
    /// `Σ_gates W*1ᵀ diag(·) δh`: the spatial gradient for the layer below.
    pub d_input: Option<Vec<T>>,
    /// `Σ_gates W*2ᵀ diag(·) δh`: the temporal gradient for step `t-1`.
    pub d_prev_h: Vec<T>,
    /// `δc[t]∘f[t]`: the cell-state carry for step `t-1`.
    pub d_prev_c: Vec<T>,
}

/// `d_h` is the total `δh[t]` (layer above + next step + loss); `d_c_carry` is the
/// `d_prev_c` returned by step `t+1` (zeros at the last step).
pub fn lstm_backward<T: Real>(
    p: &LstmParams<T>,
    tape: &LstmTape<T>,
    d_h: &[T],
    d_c_carry: &[T],
    want_input_grad: bool,
    grads: &mut LstmGrads<T>,
) -> Result<LstmBackward<T>> {
    let n = p.width();
    if tape.c.len() != n || tape.gates.iter().any(|g| g.len() != n) {
        return Err(Error::Tape(format!("LSTM tape width {} for a layer of {n}", tape.c.len())));
    }
    if d_h.len() != n || d_c_carry.len() != n {
        return Err(Error::shape("LSTM gradient width does not match layer"));
    }
    let [f, i, o, g] = &tape.gates;
    let one = T::one();
    let d_c: Vec<T> = (0..n)
        .map(|j| d_h[j] * o[j] * (one - tape.tanh_c[j] * tape.tanh_c[j]) + d_c_carry[j])
        .collect();
    // gradients on the gate pre-activations; the diagonal factors of the gate Jacobians
    let d_pre: [Vec<T>; 4] = [
        (0..n).map(|j| d_c[j] * tape.prev_c[j] * f[j] * (one - f[j])).collect(),
        (0..n).map(|j| d_c[j] * g[j] * i[j] * (one - i[j])).collect(),
        (0..n).map(|j| d_h[j] * tape.tanh_c[j] * o[j] * (one - o[j])).collect(),
        (0..n).map(|j| d_c[j] * i[j] * (one - g[j] * g[j])).collect(),
    ];
    let mut d_input = want_input_grad.then(|| vec![T::zero(); p.gates[0].w_in.in_len()]);
    let mut d_prev_h = vec![T::zero(); n];
    for k in 0..4 {
        let gate = &p.gates[k];
        let gg = &mut grads.gates[k];
        gate.w_in.backward(&tape.input, &d_pre[k], d_input.as_deref_mut(), &mut gg.w_in);
        gate.w_rec.backward(&tape.prev_h, &d_pre[k], Some(&mut d_prev_h), &mut gg.w_rec);
        bias_backward(&d_pre[k], gate.w_in.plane(), gg.bias.data_mut());
    }
    let d_prev_c = d_c.iter().zip(f).map(|(&d, &f)| d * f).collect();
    Ok(LstmBackward { d_input, d_prev_h, d_prev_c })
}
