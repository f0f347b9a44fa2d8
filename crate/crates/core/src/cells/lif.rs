//! Iterative leaky integrate-and-fire layer.
//!
//! ```text
//! u[t] = leak * u[t-1] * (1 - o[t-1]) + W x[t]  (+ W_rec o[t-1] for cross-recurrence)
//! o[t] = 1 if u[t] >= u_th else 0
//! ```
//! The reset is multiplicative, so a neuron that fired restarts from zero.

use super::Transform;
use crate::error::{Error, Result};
use crate::tensor::{self, Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LifParams<T> {
    pub weight: Transform<T>,
    /// Trainable cross-neuron weights `[n, n]` (input-major); absent in the canonical model.
    pub recurrent: Option<Tensor<T>>,
    pub u_th: T,
    /// Membrane decay per step, `exp(-dt/tau)`.
    pub leak: T,
    /// Surrogate gradient window width.
    pub a: T,
    pub leakage_enabled: bool,
    pub reset_enabled: bool,
}

impl<T: Real> LifParams<T> {
    pub fn new(weight: Transform<T>, u_th: f64, leak: f64, a: f64) -> Self {
        assert!((0.0..1.0).contains(&leak), "leak must lie in [0, 1)");
        assert!(a > 0.0, "surrogate width must be positive");
        LifParams {
            weight,
            recurrent: None,
            u_th: T::of(u_th),
            leak: T::of(leak),
            a: T::of(a),
            leakage_enabled: true,
            reset_enabled: true,
        }
    }

    pub fn width(&self) -> usize {
        self.weight.out_len()
    }

    /// Decay actually applied: 1 when leakage is disabled.
    pub fn effective_leak(&self) -> T {
        if self.leakage_enabled {
            self.leak
        } else {
            T::one()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifState<T> {
    pub u: Vec<T>,
    pub o: Vec<T>,
}

impl<T: Real> LifState<T> {
    pub fn zeros(n: usize) -> Self {
        LifState { u: vec![T::zero(); n], o: vec![T::zero(); n] }
    }
}

/// Forward quantities the backward step needs.
#[derive(Clone, Debug, PartialEq)]
pub struct LifTape<T> {
    pub input: Vec<T>,
    pub u: Vec<T>,
    pub o: Vec<T>,
    pub prev_o: Vec<T>,
}

pub fn lif_step<T: Real>(p: &LifParams<T>, prev: &LifState<T>, input: &[T]) -> Result<(LifState<T>, LifTape<T>)> {
    p.weight.check_input(input)?;
    let n = p.width();
    if prev.u.len() != n || prev.o.len() != n {
        return Err(Error::shape(format!("state of width {} for a layer of {n}", prev.u.len())));
    }
    let leak = p.effective_leak();
    let mut u: Vec<T> = if p.reset_enabled {
        prev.u.iter().zip(&prev.o).map(|(&u, &o)| leak * u * (T::one() - o)).collect()
    } else {
        prev.u.iter().map(|&u| leak * u).collect()
    };
    p.weight.apply(input, &mut u);
    if let Some(w) = &p.recurrent {
        tensor::accumulate_input_major(w.data(), n, &prev.o, &mut u);
    }
    let o: Vec<T> = u.iter().map(|&v| if v >= p.u_th { T::one() } else { T::zero() }).collect();
    let tape = LifTape { input: input.to_vec(), u: u.clone(), o: o.clone(), prev_o: prev.o.clone() };
    Ok((LifState { u, o }, tape))
}

/// Rectangular surrogate for the firing derivative: `1/a` inside `|u - u_th| <= a/2`.
pub fn surrogate_grad<T: Real>(u: &[T], u_th: T, a: T) -> Vec<T> {
    let half = a / T::of(2.0);
    let height = T::one() / a;
    u.iter().map(|&v| if (v - u_th).abs() <= half { height } else { T::zero() }).collect()
}

/// Gradient accumulators in parameter order: feedforward weight, then recurrent weight.
#[derive(Clone, Debug, PartialEq)]
pub struct LifGrads<T> {
    pub weight: Tensor<T>,
    pub recurrent: Option<Tensor<T>>,
}

impl<T: Real> LifGrads<T> {
    pub fn zeros_like(p: &LifParams<T>) -> Self {
        LifGrads {
            weight: Tensor::zeros(p.weight.weight().shape()),
            recurrent: p.recurrent.as_ref().map(|r| Tensor::zeros(r.shape())),
        }
    }
}

/// Result of one LIF backward step.
#[derive(Clone, Debug, PartialEq)]
pub struct LifBackward<T> {
    /// `δu[t]`, handed to step `t-1` as its `next_du`.
    pub du: Vec<T>,
    /// `δo[t]`
    pub d_o: Vec<T>,
    /// `Wᵀ δu[t]`, the spatial gradient for the layer below.
    pub d_input: Option<Vec<T>>,
}

#[doc(hidden)]
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mutation {
    #[default]
    None,
    /// Flip the sign of the membrane-reset term in `δo`; used to prove the oracles bite.
    FlipResetTerm,
}

/// One step of spatiotemporal backprop through a LIF layer.
///
/// * `d_output`: gradient on `o[t]` from outside the layer: the layer above's
///   `d_input` plus any direct loss gradient (zero vectors at the boundary).
/// * `next_du`: `δu[t+1]` of this layer (zeros at the last step).
///
/// ```text
/// δo[t] = d_output − leak·δu[t+1]∘u[t] (+ W_recᵀ δu[t+1])
/// δu[t] = δo[t]∘f′(u[t]) + leak·δu[t+1]∘(1 − o[t])
/// ```
pub fn lif_backward<T: Real>(
    p: &LifParams<T>,
    tape: &LifTape<T>,
    d_output: &[T],
    next_du: &[T],
    want_input_grad: bool,
    grads: &mut LifGrads<T>,
) -> Result<LifBackward<T>> {
    lif_backward_mutated(p, tape, d_output, next_du, want_input_grad, grads, Mutation::None)
}

#[doc(hidden)]
pub fn lif_backward_mutated<T: Real>(
    p: &LifParams<T>,
    tape: &LifTape<T>,
    d_output: &[T],
    next_du: &[T],
    want_input_grad: bool,
    grads: &mut LifGrads<T>,
    mutation: Mutation,
) -> Result<LifBackward<T>> {
    let n = p.width();
    if tape.u.len() != n || tape.o.len() != n || tape.prev_o.len() != n {
        return Err(Error::Tape(format!("LIF tape entry has width {}, layer has {n}", tape.u.len())));
    }
    if d_output.len() != n || next_du.len() != n {
        return Err(Error::shape("LIF gradient width does not match layer"));
    }
    let leak = p.effective_leak();
    let reset_sign = match mutation {
        Mutation::None => T::one(),
        Mutation::FlipResetTerm => -T::one(),
    };
    let mut d_o = d_output.to_vec();
    if p.reset_enabled {
        for ((g, &dn), &u) in d_o.iter_mut().zip(next_du).zip(&tape.u) {
            *g -= reset_sign * leak * dn * u;
        }
    }
    if let Some(w) = &p.recurrent {
        // o[t] feeds u[t+1] through W_rec (input-major rows)
        for (j, g) in d_o.iter_mut().enumerate() {
            let row = &w.data()[j * n..(j + 1) * n];
            *g += row.iter().zip(next_du).fold(T::zero(), |s, (&wv, &dv)| s + wv * dv);
        }
    }
    let fprime = surrogate_grad(&tape.u, p.u_th, p.a);
    let du: Vec<T> = (0..n)
        .map(|i| {
            let carry = if p.reset_enabled { T::one() - tape.o[i] } else { T::one() };
            d_o[i] * fprime[i] + leak * next_du[i] * carry
        })
        .collect();
    let mut d_input = want_input_grad.then(|| vec![T::zero(); p.weight.in_len()]);
    p.weight.backward(&tape.input, &du, d_input.as_deref_mut(), &mut grads.weight);
    if let (Some(_), Some(g)) = (&p.recurrent, grads.recurrent.as_mut()) {
        // dW_rec[j, i] += o[t-1][j] * δu[t][i]
        for (j, &oj) in tape.prev_o.iter().enumerate() {
            if oj == T::zero() {
                continue;
            }
            for (gv, &dv) in g.data_mut()[j * n..(j + 1) * n].iter_mut().zip(&du) {
                *gv += oj * dv;
            }
        }
    }
    Ok(LifBackward { du, d_o, d_input })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(w: f64, u_th: f64, leak: f64) -> LifParams<f64> {
        let mut p = LifParams::new(Transform::Dense(Tensor::from_vec(&[1, 1], vec![w]).unwrap()), u_th, leak, 0.25);
        p.u_th = u_th;
        p
    }

    #[test]
    fn integrates_and_fires() {
        let p = single(0.5, 0.3, 0.3);
        let (s, _) = lif_step(&p, &LifState::zeros(1), &[1.0]).unwrap();
        assert_eq!(s.u, vec![0.5]);
        assert_eq!(s.o, vec![1.0]);
    }

    #[test]
    fn leak_and_fire_at_equality() {
        let p = single(0.0, 0.3, 0.3);
        let prev = LifState { u: vec![1.0], o: vec![0.0] };
        let (s, _) = lif_step(&p, &prev, &[0.0]).unwrap();
        assert_eq!(s.u, vec![0.3]);
        assert_eq!(s.o, vec![1.0], "u == u_th fires");
        let mut high = p.clone();
        high.u_th = 0.30000000000000004;
        assert_eq!(lif_step(&high, &prev, &[0.0]).unwrap().0.o, vec![0.0]);
    }

    #[test]
    fn reset_masks_carry() {
        let p = single(0.0, 0.3, 0.3);
        let prev = LifState { u: vec![0.9], o: vec![1.0] };
        assert_eq!(lif_step(&p, &prev, &[0.0]).unwrap().0.u, vec![0.0]);
        let mut no_reset = p.clone();
        no_reset.reset_enabled = false;
        assert!((lif_step(&no_reset, &prev, &[0.0]).unwrap().0.u[0] - 0.27).abs() < 1e-15);
        let mut no_leak = no_reset.clone();
        no_leak.leakage_enabled = false;
        assert_eq!(lif_step(&no_leak, &prev, &[0.0]).unwrap().0.u, vec![0.9]);
    }

    #[test]
    fn surrogate_window() {
        assert_eq!(surrogate_grad(&[0.3], 0.3, 0.25), vec![4.0]);
        // |u - u_th| = a/2 exactly (values chosen to be exact in binary)
        assert_eq!(surrogate_grad(&[0.75, 0.25], 0.5, 0.5), vec![2.0, 2.0]);
        assert_eq!(surrogate_grad(&[5.0, -5.0], 0.3, 0.25), vec![0.0, 0.0]);
    }

    #[test]
    fn boundary_backward_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = LifParams::<f64>::new(Transform::dense(3, 4), 0.3, 0.3, 0.25);
        p.weight.init(&mut rng);
        let (_, tape) = lif_step(&p, &LifState::zeros(4), &[1.0, 0.0, 1.0]).unwrap();
        let mut g = LifGrads::zeros_like(&p);
        let b = lif_backward(&p, &tape, &[0.0; 4], &[0.0; 4], true, &mut g).unwrap();
        assert!(b.du.iter().chain(&b.d_o).all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_surrogate_and_no_carry_gives_zero_du() {
        let p = single(10.0, 0.3, 0.3);
        let (_, tape) = lif_step(&p, &LifState::zeros(1), &[1.0]).unwrap();
        let mut g = LifGrads::zeros_like(&p);
        let b = lif_backward(&p, &tape, &[3.0], &[0.0], false, &mut g).unwrap();
        assert_eq!(b.d_o, vec![3.0]);
        assert_eq!(b.du, vec![0.0]);
    }

    #[test]
    fn membrane_bounded_for_bounded_weights() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let mut p = LifParams::<f64>::new(Transform::dense(16, 8), 0.3, 0.3, 0.25);
            p.weight.init(&mut rng);
            let w = p.weight.weight();
            // ‖W‖∞ as the max absolute row sum of the (out x in) matrix
            let norm = (0..8)
                .map(|i| (0..16).map(|j| w.data()[j * 8 + i].abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let bound = norm / (1.0 - 0.3) + norm;
            let mut s = LifState::zeros(8);
            for _ in 0..50 {
                let x: Vec<f64> = (0..16).map(|_| rng.gen_range(0..2) as f64).collect();
                let (next, _) = lif_step(&p, &s, &x).unwrap();
                assert!(next.o.iter().all(|&o| o == 0.0 || o == 1.0));
                assert!(next.u.iter().all(|u| u.abs() <= bound));
                s = next;
            }
        }
    }
}
