//! Layer stacks built from declarative configs, the taped T-step forward pass, and
//! backpropagation through time across layers and steps.

pub mod checkpoint;
mod config;

pub use config::{CellOptions, LayerSpec, LossKind, ModelKind, NetworkConfig, Readout, Structure, Variant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cells::lif::{self, LifGrads, LifParams, LifState, LifTape};
use crate::cells::lstm::{self, LstmGrads, LstmParams, LstmState, LstmTape};
use crate::cells::rnn::{self, RnnGrads, RnnParams, RnnTape};
use crate::cells::{init_uniform, Transform};
use crate::error::{Error, Result};
use crate::event_io::{SliceSequence, CHANNELS};
use crate::tensor::{self, PoolKind, Real, Tensor};

/// Feature-map geometry `[C, H, W]`; fully connected activations are `[n, 1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape3 {
    pub fn flat(n: usize) -> Self {
        Shape3 { c: n, h: 1, w: 1 }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolLayer {
    pub kind: PoolKind,
    pub k: usize,
    pub input: Shape3,
}

impl PoolLayer {
    pub fn output(&self) -> Shape3 {
        Shape3 { c: self.input.c, h: self.input.h / self.k, w: self.input.w / self.k }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Pool(PoolLayer),
    Lif(LifParams<T>),
    Rnn(RnnParams<T>),
    Lstm(LstmParams<T>),
}

impl<T: Real> Layer<T> {
    pub fn is_trainable(&self) -> bool {
        !matches!(self, Layer::Pool(_))
    }

    pub fn is_conv(&self) -> bool {
        let t = match self {
            Layer::Pool(_) => return false,
            Layer::Lif(p) => &p.weight,
            Layer::Rnn(p) => &p.w_in,
            Layer::Lstm(p) => &p.gates[0].w_in,
        };
        matches!(t, Transform::Conv { .. })
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Layer::Pool(p) if p.kind == PoolKind::Max => "maxpool",
            Layer::Pool(_) => "avgpool",
            Layer::Lif(_) => "lif",
            Layer::Rnn(_) => "rnn",
            Layer::Lstm(_) => "lstm",
        }
    }

    fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            Layer::Pool(_) => vec![],
            Layer::Lif(p) => {
                let mut v = vec![("w", p.weight.weight())];
                if let Some(r) = &p.recurrent {
                    v.push(("w_rec", r));
                }
                v
            }
            Layer::Rnn(p) => vec![("w_in", p.w_in.weight()), ("w_rec", p.w_rec.weight()), ("b", &p.bias)],
            Layer::Lstm(p) => p
                .gates
                .iter()
                .zip(GATES_NAMES)
                .flat_map(|(g, names)| [(names[0], g.w_in.weight()), (names[1], g.w_rec.weight()), (names[2], &g.bias)])
                .collect(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Pool(_) => vec![],
            Layer::Lif(p) => {
                let mut v = vec![p.weight.weight_mut()];
                if let Some(r) = &mut p.recurrent {
                    v.push(r);
                }
                v
            }
            Layer::Rnn(p) => vec![p.w_in.weight_mut(), p.w_rec.weight_mut(), &mut p.bias],
            Layer::Lstm(p) => p
                .gates
                .iter_mut()
                .flat_map(|g| [g.w_in.weight_mut(), g.w_rec.weight_mut(), &mut g.bias])
                .collect(),
        }
    }
}

const GATES_NAMES: [[&str; 3]; 4] = [
    ["f.w_in", "f.w_rec", "f.b"],
    ["i.w_in", "i.w_rec", "i.b"],
    ["o.w_in", "o.w_rec", "o.b"],
    ["g.w_in", "g.w_rec", "g.b"],
];

/// Linear map `W^y h + b` applied to the top hidden layer at every step.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearReadout<T> {
    /// `[n_in, n_out]`, input-major.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LinearReadout<T> {
    pub fn apply(&self, h: &[T]) -> Vec<T> {
        let mut y = self.bias.data().to_vec();
        tensor::accumulate_input_major(self.weight.data(), self.bias.len(), h, &mut y);
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    layers: Vec<Layer<T>>,
    shapes: Vec<Shape3>,
    readout: Option<LinearReadout<T>>,
}

/// Per-layer dynamic state between steps.
#[derive(Clone, Debug)]
enum LayerState<T> {
    None,
    Lif(LifState<T>),
    Rnn(Vec<T>),
    Lstm(LstmState<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerTape<T> {
    MaxPool(Vec<u32>),
    AvgPool,
    Lif(LifTape<T>),
    Rnn(RnnTape<T>),
    Lstm(LstmTape<T>),
}

/// Forward caches for every `(step, layer)` pair, plus the readout inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct BpttTape<T> {
    pub steps: Vec<Vec<LayerTape<T>>>,
    pub readout_inputs: Vec<Vec<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass<T> {
    /// Spike vectors (SNN) or readout vectors (RNN/LSTM), one per step.
    pub outputs: Vec<Vec<T>>,
    /// Spikes emitted by each LIF layer over the whole pass (empty for RNN/LSTM).
    pub spike_counts: Vec<u64>,
    pub tape: Option<BpttTape<T>>,
}

/// Gradients for every parameter tensor, in [`Network::params`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamGrads<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        ParamGrads { tensors: net.params().into_iter().map(|(_, t)| Tensor::zeros(t.shape())).collect() }
    }

    pub fn add(&mut self, other: &ParamGrads<T>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, T::one());
        }
    }

    pub fn scale(&mut self, s: T) {
        self.tensors.iter_mut().for_each(|t| t.scale(s));
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flat_map(|t| t.data()).fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }
}

impl<T: Real> Network<T> {
    /// Instantiate the layer chain with seeded uniform `±sqrt(1/fan_in)` weights.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let opts = config.cell.clone();
        let mut shape = Shape3 { c: CHANNELS, h: config.input_height, w: config.input_width };
        let mut layers = Vec::new();
        let mut shapes = vec![shape];
        let mut readout = None;
        let lif = |weight: Transform<T>| {
            let mut p = LifParams::new(weight, opts.u_th, opts.leak, opts.a);
            p.leakage_enabled = opts.leakage;
            p.reset_enabled = opts.reset;
            p
        };
        for spec in &config.structure.0 {
            let layer = match *spec {
                LayerSpec::MaxPool(k) | LayerSpec::AvgPool(k) => {
                    tensor::pooled_dims(shape.c, shape.h, shape.w, k)?;
                    let kind = if matches!(spec, LayerSpec::MaxPool(_)) { PoolKind::Max } else { PoolKind::Avg };
                    Layer::Pool(PoolLayer { kind, k, input: shape })
                }
                LayerSpec::Conv(n) => match config.kind {
                    ModelKind::Snn => {
                        let mut t = Transform::conv(shape.c, n, shape.h, shape.w);
                        t.init(&mut rng);
                        Layer::Lif(lif(t))
                    }
                    ModelKind::Rnn => {
                        let mut p = RnnParams::conv(shape.c, n, shape.h, shape.w);
                        p.init(&mut rng);
                        Layer::Rnn(p)
                    }
                    ModelKind::Lstm => {
                        let mut p = LstmParams::conv(shape.c, n, shape.h, shape.w);
                        p.init(&mut rng);
                        Layer::Lstm(p)
                    }
                },
                LayerSpec::Fc(n) => Self::dense_cell(&config, shape.len(), n, &mut rng, &lif),
                LayerSpec::Output(n) => match config.kind {
                    ModelKind::Snn => Self::dense_cell(&config, shape.len(), n, &mut rng, &lif),
                    _ => {
                        let mut weight = Tensor::zeros(&[shape.len(), n]);
                        let mut bias = Tensor::zeros(&[n]);
                        let bound = (1.0 / shape.len() as f64).sqrt();
                        init_uniform(&mut weight, bound, &mut rng);
                        init_uniform(&mut bias, bound, &mut rng);
                        readout = Some(LinearReadout { weight, bias });
                        break;
                    }
                },
            };
            shape = match &layer {
                Layer::Pool(p) => p.output(),
                Layer::Lif(p) => out_shape(&p.weight),
                Layer::Rnn(p) => out_shape(&p.w_in),
                Layer::Lstm(p) => out_shape(&p.gates[0].w_in),
            };
            layers.push(layer);
            shapes.push(shape);
        }
        if !layers.iter().any(Layer::is_trainable) && readout.is_none() {
            return Err(Error::config("network has no trainable layer"));
        }
        Ok(Network { config, layers, shapes, readout })
    }

    fn dense_cell(
        config: &NetworkConfig,
        n_in: usize,
        n: usize,
        rng: &mut ChaCha8Rng,
        lif: &impl Fn(Transform<T>) -> LifParams<T>,
    ) -> Layer<T> {
        match config.kind {
            ModelKind::Snn => {
                let mut t = Transform::dense(n_in, n);
                t.init(rng);
                let mut p = lif(t);
                if config.cell.variant == Variant::CrossRecurrence {
                    let mut r = Tensor::zeros(&[n, n]);
                    init_uniform(&mut r, (1.0 / n as f64).sqrt(), rng);
                    p.recurrent = Some(r);
                }
                Layer::Lif(p)
            }
            ModelKind::Rnn => {
                let mut p = RnnParams::dense(n_in, n);
                p.init(rng);
                Layer::Rnn(p)
            }
            ModelKind::Lstm => {
                let mut p = LstmParams::dense(n_in, n);
                p.init(rng);
                Layer::Lstm(p)
            }
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Activation shapes: input first, then the output of every layer.
    pub fn shapes(&self) -> &[Shape3] {
        &self.shapes
    }

    pub fn readout(&self) -> Option<&LinearReadout<T>> {
        self.readout.as_ref()
    }

    pub fn classes(&self) -> usize {
        self.config.structure.classes()
    }

    /// Named parameter tensors in a fixed order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            for (name, t) in l.tensors() {
                out.push((format!("layer{i}.{}.{name}", l.kind_name()), t));
            }
        }
        if let Some(r) = &self.readout {
            out.push(("readout.w".to_string(), &r.weight));
            out.push(("readout.b".to_string(), &r.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.layers.iter_mut().flat_map(Layer::tensors_mut).collect();
        if let Some(r) = &mut self.readout {
            out.push(&mut r.weight);
            out.push(&mut r.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, t)| t.len()).sum()
    }

    /// Set the leak of every LIF layer.
    pub fn set_leak(&mut self, leak: f64) {
        for l in &mut self.layers {
            if let Layer::Lif(p) = l {
                p.leak = T::of(leak);
            }
        }
    }

    /// Adapt the network to a new slice duration. Only the adaptive-leakage variant
    /// changes: with `tau = -dt_train / ln(leak_train)` the leak becomes `exp(-dt/tau)`.
    pub fn set_eval_resolution(&mut self, dt_us: u32) {
        if self.config.kind == ModelKind::Snn && self.config.cell.variant == Variant::AdaptiveLeak {
            self.set_leak(adaptive_leak(self.config.cell.leak, self.config.dt_us, dt_us));
        }
    }

    fn initial_states(&self) -> Vec<LayerState<T>> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Pool(_) => LayerState::None,
                Layer::Lif(p) => LayerState::Lif(LifState::zeros(p.width())),
                Layer::Rnn(p) => LayerState::Rnn(vec![T::zero(); p.width()]),
                Layer::Lstm(p) => LayerState::Lstm(LstmState::zeros(p.width())),
            })
            .collect()
    }

    /// Run every slice of `seq` through the network. Tapes are kept when `train` is set.
    pub fn forward(&self, seq: &SliceSequence, train: bool) -> Result<ForwardPass<T>> {
        if seq.height() != self.config.input_height || seq.width() != self.config.input_width {
            return Err(Error::shape(format!(
                "sample is {}x{}, network expects {}x{}",
                seq.height(),
                seq.width(),
                self.config.input_height,
                self.config.input_width
            )));
        }
        let mut states = self.initial_states();
        let n_lif = self.layers.iter().filter(|l| matches!(l, Layer::Lif(_))).count();
        let mut spike_counts = vec![0u64; n_lif];
        let mut outputs = Vec::with_capacity(seq.steps());
        let mut tape = train.then(|| BpttTape { steps: Vec::with_capacity(seq.steps()), readout_inputs: Vec::new() });
        for t in 0..seq.steps() {
            let mut x: Vec<T> = seq.slice(t).iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect();
            let mut entries = Vec::with_capacity(self.layers.len());
            let mut lif_idx = 0;
            for (layer, state) in self.layers.iter().zip(states.iter_mut()) {
                let (y, entry) = match (layer, state) {
                    (Layer::Pool(p), _) => pool_forward(p, &x),
                    (Layer::Lif(p), LayerState::Lif(s)) => {
                        let (next, entry) = lif::lif_step(p, s, &x)?;
                        spike_counts[lif_idx] += next.o.iter().filter(|&&o| o != T::zero()).count() as u64;
                        lif_idx += 1;
                        let y = next.o.clone();
                        *s = next;
                        (y, LayerTape::Lif(entry))
                    }
                    (Layer::Rnn(p), LayerState::Rnn(h)) => {
                        let (next, entry) = rnn::rnn_step(p, h, &x)?;
                        *h = next.clone();
                        (next, LayerTape::Rnn(entry))
                    }
                    (Layer::Lstm(p), LayerState::Lstm(s)) => {
                        let (next, entry) = lstm::lstm_step(p, s, &x)?;
                        let y = next.h.clone();
                        *s = next;
                        (y, LayerTape::Lstm(entry))
                    }
                    _ => unreachable!("state kind always matches layer kind"),
                };
                if train {
                    entries.push(entry);
                }
                x = y;
            }
            let out = match &self.readout {
                Some(r) => {
                    let y = r.apply(&x);
                    if let Some(tp) = tape.as_mut() {
                        tp.readout_inputs.push(x);
                    }
                    y
                }
                None => x,
            };
            outputs.push(out);
            if let Some(tp) = tape.as_mut() {
                tp.steps.push(entries);
            }
        }
        Ok(ForwardPass { outputs, spike_counts, tape })
    }

    /// Backpropagation through time. `loss_grads[t]` is the gradient on `outputs[t]`.
    pub fn backward(&self, tape: &BpttTape<T>, loss_grads: &[Vec<T>]) -> Result<ParamGrads<T>> {
        self.backward_with(tape, loss_grads, lif::Mutation::None)
    }

    #[doc(hidden)]
    pub fn backward_with(
        &self,
        tape: &BpttTape<T>,
        loss_grads: &[Vec<T>],
        mutation: lif::Mutation,
    ) -> Result<ParamGrads<T>> {
        let steps = tape.steps.len();
        if loss_grads.len() != steps {
            return Err(Error::Tape(format!("{} loss gradients for {steps} taped steps", loss_grads.len())));
        }
        if tape.steps.iter().any(|e| e.len() != self.layers.len()) {
            return Err(Error::Tape("a step is missing layer entries".into()));
        }
        if self.readout.is_some() && tape.readout_inputs.len() != steps {
            return Err(Error::Tape("readout inputs missing".into()));
        }
        let mut grads: Vec<LayerGrads<T>> = self.layers.iter().map(LayerGrads::zeros_like).collect();
        let mut readout_grads = self.readout.as_ref().map(|r| (Tensor::zeros(r.weight.shape()), Tensor::zeros(r.bias.shape())));
        let mut carries: Vec<Carry<T>> = self.layers.iter().map(Carry::zeros_like).collect();
        // a layer needs its input gradient only if something trainable sits below it
        let needs_input_grad: Vec<bool> =
            (0..self.layers.len()).map(|i| self.layers[..i].iter().any(Layer::is_trainable)).collect();

        for t in (0..steps).rev() {
            let mut g: Vec<T> = match (&self.readout, readout_grads.as_mut()) {
                (Some(r), Some((dw, db))) => {
                    let delta = &loss_grads[t];
                    let h = &tape.readout_inputs[t];
                    let mut dh = vec![T::zero(); h.len()];
                    tensor::accumulate_input_major_backward(r.weight.data(), r.bias.len(), h, delta, Some(&mut dh), dw.data_mut());
                    for (b, &d) in db.data_mut().iter_mut().zip(delta) {
                        *b += d;
                    }
                    dh
                }
                _ => loss_grads[t].clone(),
            };
            for l in (0..self.layers.len()).rev() {
                let want = needs_input_grad[l];
                if !want && !self.layers[l].is_trainable() {
                    break;
                }
                let entry = &tape.steps[t][l];
                g = match (&self.layers[l], entry, &mut grads[l], &mut carries[l]) {
                    (Layer::Pool(p), LayerTape::MaxPool(arg), _, _) => {
                        let mut dx = vec![T::zero(); p.input.len()];
                        tensor::maxpool_backward_into(&g, arg, &mut dx);
                        dx
                    }
                    (Layer::Pool(p), LayerTape::AvgPool, _, _) => {
                        let mut dx = vec![T::zero(); p.input.len()];
                        tensor::avgpool_backward_into(&g, p.input.c, p.input.h, p.input.w, p.k, &mut dx);
                        dx
                    }
                    (Layer::Lif(p), LayerTape::Lif(e), LayerGrads::Lif(lg), Carry::Lif(du)) => {
                        let b = lif::lif_backward_mutated(p, e, &g, du, want, lg, mutation)?;
                        *du = b.du;
                        b.d_input.unwrap_or_default()
                    }
                    (Layer::Rnn(p), LayerTape::Rnn(e), LayerGrads::Rnn(rg), Carry::Rnn(dh_next)) => {
                        let d_h: Vec<T> = g.iter().zip(dh_next.iter()).map(|(&a, &b)| a + b).collect();
                        let b = rnn::rnn_backward(p, e, &d_h, want, rg)?;
                        *dh_next = b.d_prev_h;
                        b.d_input.unwrap_or_default()
                    }
                    (Layer::Lstm(p), LayerTape::Lstm(e), LayerGrads::Lstm(sg), Carry::Lstm { dh, dc }) => {
                        let d_h: Vec<T> = g.iter().zip(dh.iter()).map(|(&a, &b)| a + b).collect();
                        let b = lstm::lstm_backward(p, e, &d_h, dc, want, sg)?;
                        *dh = b.d_prev_h;
                        *dc = b.d_prev_c;
                        b.d_input.unwrap_or_default()
                    }
                    _ => return Err(Error::Tape(format!("tape entry at step {t}, layer {l} does not match the layer"))),
                };
                if !want {
                    break;
                }
            }
        }
        let mut tensors = Vec::new();
        for lg in grads {
            lg.flatten_into(&mut tensors);
        }
        if let Some((dw, db)) = readout_grads {
            tensors.push(dw);
            tensors.push(db);
        }
        Ok(ParamGrads { tensors })
    }
}

fn out_shape<T: Real>(t: &Transform<T>) -> Shape3 {
    match t {
        Transform::Dense(w) => Shape3::flat(w.shape()[1]),
        Transform::Conv { kernel, height, width } => Shape3 { c: kernel.shape()[0], h: *height, w: *width },
    }
}

fn pool_forward<T: Real>(p: &PoolLayer, x: &[T]) -> (Vec<T>, LayerTape<T>) {
    let out = p.output();
    let mut y = vec![T::zero(); out.len()];
    let Shape3 { c, h, w } = p.input;
    match p.kind {
        PoolKind::Max => {
            let mut arg = vec![0u32; out.len()];
            tensor::maxpool_into(x, c, h, w, p.k, &mut y, &mut arg);
            (y, LayerTape::MaxPool(arg))
        }
        PoolKind::Avg => {
            tensor::avgpool_into(x, c, h, w, p.k, &mut y);
            (y, LayerTape::AvgPool)
        }
    }
}

/// `exp(-dt/tau)` with `tau` fixed so that the leak equals `train_leak` at `train_dt_us`.
pub fn adaptive_leak(train_leak: f64, train_dt_us: u32, eval_dt_us: u32) -> f64 {
    let tau = -(train_dt_us as f64) / train_leak.ln();
    (-(eval_dt_us as f64) / tau).exp()
}

enum LayerGrads<T> {
    None,
    Lif(LifGrads<T>),
    Rnn(RnnGrads<T>),
    Lstm(LstmGrads<T>),
}

impl<T: Real> LayerGrads<T> {
    fn zeros_like(l: &Layer<T>) -> Self {
        match l {
            Layer::Pool(_) => LayerGrads::None,
            Layer::Lif(p) => LayerGrads::Lif(LifGrads::zeros_like(p)),
            Layer::Rnn(p) => LayerGrads::Rnn(RnnGrads::zeros_like(p)),
            Layer::Lstm(p) => LayerGrads::Lstm(LstmGrads::zeros_like(p)),
        }
    }

    /// Same order as `Layer::tensors`.
    fn flatten_into(self, out: &mut Vec<Tensor<T>>) {
        match self {
            LayerGrads::None => {}
            LayerGrads::Lif(g) => {
                out.push(g.weight);
                out.extend(g.recurrent);
            }
            LayerGrads::Rnn(g) => out.extend([g.w_in, g.w_rec, g.bias]),
            LayerGrads::Lstm(g) => {
                for gg in g.gates {
                    out.extend([gg.w_in, gg.w_rec, gg.bias]);
                }
            }
        }
    }
}

enum Carry<T> {
    None,
    Lif(Vec<T>),
    Rnn(Vec<T>),
    Lstm { dh: Vec<T>, dc: Vec<T> },
}

impl<T: Real> Carry<T> {
    fn zeros_like(l: &Layer<T>) -> Self {
        match l {
            Layer::Pool(_) => Carry::None,
            Layer::Lif(p) => Carry::Lif(vec![T::zero(); p.width()]),
            Layer::Rnn(p) => Carry::Rnn(vec![T::zero(); p.width()]),
            Layer::Lstm(p) => Carry::Lstm { dh: vec![T::zero(); p.width()], dc: vec![T::zero(); p.width()] },
        }
    }
}

/// Jacobian `∂state[t] / ∂state[t-1]` of one layer, row-major `n x n`.
///
/// For LIF the state is the membrane potential and `prev` must be the step-`t-1`
/// entry; for RNN/LSTM the state is `h` and `cur` is the step-`t` entry. The LSTM
/// Jacobian covers the hidden path only (cell state held fixed).
pub fn temporal_jacobian<T: Real>(layer: &Layer<T>, prev: &LayerTape<T>, cur: &LayerTape<T>) -> Result<Vec<Vec<T>>> {
    let unit = |n: usize, i: usize| -> Vec<T> { (0..n).map(|j| if i == j { T::one() } else { T::zero() }).collect() };
    match (layer, prev, cur) {
        (Layer::Lif(p), LayerTape::Lif(e), _) => {
            let n = p.width();
            let zeros = vec![T::zero(); n];
            (0..n)
                .map(|i| {
                    let mut g = LifGrads::zeros_like(p);
                    Ok(lif::lif_backward(p, e, &zeros, &unit(n, i), false, &mut g)?.du)
                })
                .collect()
        }
        (Layer::Rnn(p), _, LayerTape::Rnn(e)) => {
            let n = p.width();
            (0..n)
                .map(|i| {
                    let mut g = RnnGrads::zeros_like(p);
                    Ok(rnn::rnn_backward(p, e, &unit(n, i), false, &mut g)?.d_prev_h)
                })
                .collect()
        }
        (Layer::Lstm(p), _, LayerTape::Lstm(e)) => {
            let n = p.width();
            let zeros = vec![T::zero(); n];
            (0..n)
                .map(|i| {
                    let mut g = LstmGrads::zeros_like(p);
                    Ok(lstm::lstm_backward(p, e, &unit(n, i), &zeros, false, &mut g)?.d_prev_h)
                })
                .collect()
        }
        _ => Err(Error::Tape("temporal Jacobian needs matching recurrent tape entries".into())),
    }
}

#[cfg(test)]
mod tests;
