//! Recurrent cells: leaky integrate-and-fire, vanilla RNN and LSTM. Each cell is a pure
//! per-timestep forward step that emits a tape entry, plus a closed-form backward step
//! that consumes it.
//!
//! Backward steps are written in "push" form: a step receives the total gradient on its
//! output and returns the gradient on its input (sent to the layer below) and on its
//! previous state (sent to step `t-1`). The spatial and temporal terms of the textbook
//! pull-form recursions are exactly these returned vectors, evaluated by the receiving
//! step.

pub mod lif;
pub mod lstm;
pub mod rnn;

pub use lif::{lif_backward, lif_step, surrogate_grad, LifParams, LifState, LifTape};
pub use lstm::{lstm_backward, lstm_step, LstmParams, LstmState, LstmTape};
pub use rnn::{rnn_backward, rnn_step, RnnParams, RnnTape};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, Real, Tensor};

/// Linear map shared by all cells: a dense matrix or a 3x3 same-padding convolution.
#[derive(Clone, Debug, PartialEq)]
pub enum Transform<T> {
    /// Weights stored input-major, `[n_in, n_out]`, so spike inputs can index columns.
    Dense(Tensor<T>),
    /// Kernel `[c_out, c_in, 3, 3]` over `height x width` maps.
    Conv { kernel: Tensor<T>, height: usize, width: usize },
}

impl<T: Real> Transform<T> {
    pub fn dense(n_in: usize, n_out: usize) -> Self {
        Transform::Dense(Tensor::zeros(&[n_in, n_out]))
    }

    pub fn conv(c_in: usize, c_out: usize, height: usize, width: usize) -> Self {
        Transform::Conv { kernel: Tensor::zeros(&[c_out, c_in, 3, 3]), height, width }
    }

    pub fn in_len(&self) -> usize {
        match self {
            Transform::Dense(w) => w.shape()[0],
            Transform::Conv { kernel, height, width } => kernel.shape()[1] * height * width,
        }
    }

    pub fn out_len(&self) -> usize {
        match self {
            Transform::Dense(w) => w.shape()[1],
            Transform::Conv { kernel, height, width } => kernel.shape()[0] * height * width,
        }
    }

    /// Number of output units sharing one bias entry (1 for dense, H·W for conv).
    pub fn plane(&self) -> usize {
        match self {
            Transform::Dense(_) => 1,
            Transform::Conv { height, width, .. } => height * width,
        }
    }

    pub fn fan_in(&self) -> usize {
        match self {
            Transform::Dense(w) => w.shape()[0],
            Transform::Conv { kernel, .. } => kernel.shape()[1] * 9,
        }
    }

    pub fn weight(&self) -> &Tensor<T> {
        match self {
            Transform::Dense(w) => w,
            Transform::Conv { kernel, .. } => kernel,
        }
    }

    pub fn weight_mut(&mut self) -> &mut Tensor<T> {
        match self {
            Transform::Dense(w) => w,
            Transform::Conv { kernel, .. } => kernel,
        }
    }

    pub fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.in_len() {
            return Err(Error::shape(format!("input of {} values, transform expects {}", x.len(), self.in_len())));
        }
        Ok(())
    }

    /// `y += A x`
    pub fn apply(&self, x: &[T], y: &mut [T]) {
        match self {
            Transform::Dense(w) => tensor::accumulate_input_major(w.data(), w.shape()[1], x, y),
            Transform::Conv { kernel, height, width } => {
                let s = kernel.shape();
                tensor::conv2d_into(x, s[1], *height, *width, kernel.data(), s[0], y)
            }
        }
    }

    /// Given `dy`, accumulate `dx += Aᵀ dy` (when requested) and the weight gradient.
    pub fn backward(&self, x: &[T], dy: &[T], dx: Option<&mut [T]>, dweight: &mut Tensor<T>) {
        match self {
            Transform::Dense(w) => tensor::accumulate_input_major_backward(
                w.data(),
                w.shape()[1],
                x,
                dy,
                dx,
                dweight.data_mut(),
            ),
            Transform::Conv { kernel, height, width } => {
                let s = kernel.shape();
                tensor::conv2d_backward_into(dy, x, s[1], *height, *width, kernel.data(), s[0], dx, dweight.data_mut())
            }
        }
    }

    /// Uniform in `±sqrt(1/fan_in)`.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let bound = (1.0 / self.fan_in() as f64).sqrt();
        init_uniform(self.weight_mut(), bound, rng);
    }
}

pub(crate) fn init_uniform<T: Real>(t: &mut Tensor<T>, bound: f64, rng: &mut impl Rng) {
    for v in t.data_mut() {
        *v = T::of(rng.gen_range(-bound..=bound));
    }
}

/// `y += b` broadcast over each bias entry's plane.
pub(crate) fn add_bias<T: Real>(bias: &[T], plane: usize, y: &mut [T]) {
    for (chunk, &b) in y.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn bias_backward<T: Real>(dy: &[T], plane: usize, db: &mut [T]) {
    for (chunk, g) in dy.chunks(plane).zip(db.iter_mut()) {
        for &v in chunk {
            *g += v;
        }
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
