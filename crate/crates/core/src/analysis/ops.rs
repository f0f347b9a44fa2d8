//! Operation accounting for fully connected stacks.
//!
//! A *stage* is a population of `M` units that sends activity to a receiver of `N` units
//! (stage 0 is the input). Forward counts cover sending to the next layer and to the
//! stage's own next timestep; backward counts cover receiving gradients from both.
//! Only matrix operations are counted:
//!
//! | model | forward | backward |
//! |-------|---------|----------|
//! | SNN   | `spikes * N` ADDs | `MN` MACs |
//! | RNN   | `MN + M^2` MACs | `MN + M^2` MACs |
//! | LSTM  | `g_r MN + 4M^2` MACs | `4MN + 4M^2` MULs, `3MN + 3M^2` ADDs, `MN + M^2` MACs |
//!
//! `g_r` is 4 when the receiver is an LSTM layer and 1 for the linear readout. The LSTM
//! backward materialises the gate-scaled Jacobians `sum_g W_g^T diag(v_g)` and applies
//! them to the incoming gradient. Temporal terms occur on `T - 1` of the `T` steps.

use std::fmt;

use crate::cells::lstm::LstmParams;
use crate::cells::Transform;
use crate::error::{Error, Result};
use crate::event_io::SliceSequence;
use crate::network::{Layer, ModelKind, Network};
use crate::training::compute_loss;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counter {
    pub adds: u64,
    pub muls: u64,
    pub macs: u64,
}

impl std::ops::AddAssign for Counter {
    fn add_assign(&mut self, o: Counter) {
        self.adds += o.adds;
        self.muls += o.muls;
        self.macs += o.macs;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageOps {
    pub stage: usize,
    pub m: usize,
    /// Receiver width; 0 for the top spiking layer.
    pub n: usize,
    /// Fraction of the stage's units active per step.
    pub alpha: f64,
    pub ops: Counter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpCount {
    pub direction: Direction,
    pub steps: usize,
    pub stages: Vec<StageOps>,
}

impl OpCount {
    pub fn total(&self) -> Counter {
        let mut c = Counter::default();
        for s in &self.stages {
            c += s.ops;
        }
        c
    }
}

impl fmt::Display for OpCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "direction,stage,m,n,alpha,adds,muls,macs")?;
        for s in &self.stages {
            writeln!(
                f,
                "{},{},{},{},{:.6},{},{},{}",
                if self.direction == Direction::Forward { "forward" } else { "backward" },
                s.stage,
                s.m,
                s.n,
                s.alpha,
                s.ops.adds,
                s.ops.muls,
                s.ops.macs
            )?;
        }
        Ok(())
    }
}

/// Per-stage, per-step count of non-zero activations.
#[derive(Clone, Debug, PartialEq)]
pub struct Activity {
    pub steps: usize,
    pub active: Vec<Vec<u64>>,
}

struct Stage {
    m: usize,
    n: usize,
    /// Gate multiplicity of the receiver.
    recv_gates: u64,
    /// Gate multiplicity of the stage's own recurrence (0 when it has none).
    self_gates: u64,
    /// Whether the stage receives gradients (hidden layers only).
    hidden: bool,
    /// The receiver is an LSTM layer, so its Jacobian is gate-scaled.
    recv_lstm: bool,
}

fn dense(t: &Transform<f64>) -> Result<&[f64]> {
    match t {
        Transform::Dense(w) => Ok(w.data()),
        Transform::Conv { .. } => Err(Error::config("operation counting covers fully connected layers only")),
    }
}

fn cell_width(l: &Layer<f64>) -> Result<usize> {
    match l {
        Layer::Lif(p) => dense(&p.weight).map(|_| p.width()),
        Layer::Rnn(p) => dense(&p.w_in).map(|_| p.width()),
        Layer::Lstm(p) => dense(&p.gates[0].w_in).map(|_| p.width()),
        Layer::Pool(_) => Err(Error::config("operation counting covers fully connected layers only")),
    }
}

fn stages(net: &Network<f64>) -> Result<Vec<Stage>> {
    let widths: Vec<usize> = net.layers().iter().map(cell_width).collect::<Result<_>>()?;
    let kind = net.config().kind;
    let gates = |k: ModelKind| if k == ModelKind::Lstm { 4 } else { 1 };
    let cross = net.layers().iter().any(|l| matches!(l, Layer::Lif(p) if p.recurrent.is_some()));
    let input = net.shapes()[0].len();
    let mut out = Vec::new();
    for s in 0..=widths.len() {
        let m = if s == 0 { input } else { widths[s - 1] };
        let (n, recv_gates, recv_lstm) = if s < widths.len() {
            (widths[s], gates(kind), kind == ModelKind::Lstm)
        } else {
            match net.readout() {
                Some(r) => (r.bias.len(), 1, false),
                None => (0, 1, false),
            }
        };
        let self_gates = match (s, kind) {
            (0, _) => 0,
            (_, ModelKind::Snn) => u64::from(cross),
            (_, k) => gates(k),
        };
        out.push(Stage { m, n, recv_gates, self_gates, hidden: s > 0, recv_lstm });
    }
    Ok(out)
}

/// Closed-form counts from shapes and measured activity, summed over all steps.
pub fn estimate_ops(net: &Network<f64>, direction: Direction, activity: &Activity) -> Result<OpCount> {
    let st = stages(net)?;
    if activity.active.len() != st.len() {
        return Err(Error::shape(format!("activity for {} stages, network has {}", activity.active.len(), st.len())));
    }
    let t = activity.steps as u64;
    let tm1 = t.saturating_sub(1);
    let snn = net.config().kind == ModelKind::Snn;
    let lstm = net.config().kind == ModelKind::Lstm;
    let stages = st
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (m, n) = (s.m as u64, s.n as u64);
            let act = &activity.active[i];
            let total: u64 = act.iter().sum();
            let mut c = Counter::default();
            match direction {
                Direction::Forward if snn => {
                    c.adds = total * n;
                    if s.self_gates > 0 {
                        // spikes at steps 1..T-1 reach the next step
                        c.adds += act[..act.len().saturating_sub(1)].iter().sum::<u64>() * m;
                    }
                }
                Direction::Forward => c.macs = t * s.recv_gates * m * n + tm1 * s.self_gates * m * m,
                Direction::Backward if !s.hidden => {}
                Direction::Backward if snn => c.macs = t * m * n + tm1 * s.self_gates * m * m,
                Direction::Backward if lstm => {
                    if s.recv_lstm {
                        c.muls += t * 4 * m * n;
                        c.adds += t * 3 * m * n;
                    }
                    c.macs += t * m * n;
                    c.muls += tm1 * 4 * m * m;
                    c.adds += tm1 * 3 * m * m;
                    c.macs += tm1 * m * m;
                }
                Direction::Backward => c.macs = t * m * n + tm1 * m * m,
            }
            StageOps { stage: i, m: s.m, n: s.n, alpha: rate(total, s.m, activity.steps), ops: c }
        })
        .collect();
    Ok(OpCount { direction, steps: activity.steps, stages })
}

fn rate(total: u64, m: usize, steps: usize) -> f64 {
    if m == 0 || steps == 0 {
        0.0
    } else {
        total as f64 / (m * steps) as f64
    }
}

/// Activity with `round(alpha * M)` active units in every stage at every step.
pub fn uniform_activity(net: &Network<f64>, alpha: f64, steps: usize) -> Result<Activity> {
    let st = stages(net)?;
    Ok(Activity { steps, active: st.iter().map(|s| vec![(alpha * s.m as f64).round() as u64; steps]).collect() })
}

/// Steady-state single-step counts for one layer of `m` units feeding `n` units of the
/// same model.
pub fn per_step_formula(kind: ModelKind, direction: Direction, m: u64, n: u64, alpha: f64) -> Counter {
    let mut c = Counter::default();
    match (kind, direction) {
        (ModelKind::Snn, Direction::Forward) => c.adds = (alpha * (m * n) as f64).round() as u64,
        (ModelKind::Snn, Direction::Backward) => c.macs = m * n,
        (ModelKind::Rnn, _) => c.macs = m * n + m * m,
        (ModelKind::Lstm, Direction::Forward) => c.macs = 4 * (m * n + m * m),
        (ModelKind::Lstm, Direction::Backward) => {
            c.muls = 4 * (m * n + m * m);
            c.adds = 3 * (m * n + m * m);
            c.macs = m * n + m * m;
        }
    }
    c
}

// ---- instrumented execution ----

/// `y += W^T x` for binary `x`, adding the rows of active inputs.
fn event_acc(w: &[f64], n: usize, x: &[f64], y: &mut [f64], c: &mut Counter) {
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            debug_assert_eq!(xj, 1.0);
            for (yv, &wv) in y.iter_mut().zip(&w[j * n..(j + 1) * n]) {
                *yv += wv;
                c.adds += 1;
            }
        }
    }
}

/// Dense `y += W^T x`.
fn dense_acc(w: &[f64], n: usize, x: &[f64], y: &mut [f64], c: &mut Counter) {
    for (j, &xj) in x.iter().enumerate() {
        for (yv, &wv) in y.iter_mut().zip(&w[j * n..(j + 1) * n]) {
            *yv += xj * wv;
            c.macs += 1;
        }
    }
}

/// `dx = W d` (back through an input-major `[m, n]` matrix).
fn dense_back(w: &[f64], n: usize, d: &[f64], c: &mut Counter) -> Vec<f64> {
    let m = w.len() / n;
    (0..m)
        .map(|j| {
            let mut s = 0.0;
            for (&wv, &dv) in w[j * n..(j + 1) * n].iter().zip(d) {
                s += wv * dv;
                c.macs += 1;
            }
            s
        })
        .collect()
}

/// `J = sum_g W_g diag(v_g)` as an `[m, n]` matrix.
fn gate_jacobian(ws: [&[f64]; 4], vs: [&[f64]; 4], n: usize, c: &mut Counter) -> Vec<f64> {
    let len = ws[0].len();
    let mut j = vec![0.0; len];
    for (g, (w, v)) in ws.iter().zip(vs).enumerate() {
        for (k, jv) in j.iter_mut().enumerate() {
            let scaled = w[k] * v[k % n];
            c.muls += 1;
            if g == 0 {
                *jv = scaled;
            } else {
                *jv += scaled;
                c.adds += 1;
            }
        }
    }
    j
}

fn sigmoid_prime(s: f64) -> f64 {
    s * (1.0 - s)
}

/// Gate factors `v_g` with `d pre_g = v_g * d h` when the cell-state carry is held fixed.
pub(crate) fn lstm_factors(gates: &[Vec<f64>; 4], c: &[f64], c_prev: &[f64]) -> [Vec<f64>; 4] {
    let [f, i, o, g] = gates;
    let n = c.len();
    let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let dc: Vec<f64> = (0..n).map(|k| o[k] * (1.0 - tc[k] * tc[k])).collect();
    [
        (0..n).map(|k| dc[k] * c_prev[k] * sigmoid_prime(f[k])).collect(),
        (0..n).map(|k| dc[k] * g[k] * sigmoid_prime(i[k])).collect(),
        (0..n).map(|k| tc[k] * sigmoid_prime(o[k])).collect(),
        (0..n).map(|k| dc[k] * i[k] * (1.0 - g[k] * g[k])).collect(),
    ]
}

struct StepRecord {
    /// Per layer: (input, state values used by backward).
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    o: Vec<Vec<f64>>,
    gates: Vec<[Vec<f64>; 4]>,
    c: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    top: Vec<f64>,
}

/// Result of an instrumented run.
#[derive(Clone, Debug)]
pub struct Instrumented {
    pub forward: OpCount,
    pub backward: OpCount,
    pub activity: Activity,
    /// Per-step network outputs recomputed by the counting path.
    pub outputs: Vec<Vec<f64>>,
    /// Gradient of the first weight tensor (first gate's input weights for LSTM).
    pub first_weight_grad: Vec<f64>,
}

fn lstm_gate_weights(p: &LstmParams<f64>) -> Result<([&[f64]; 4], [&[f64]; 4])> {
    let mut win = [&[][..]; 4];
    let mut wrec = [&[][..]; 4];
    for k in 0..4 {
        win[k] = dense(&p.gates[k].w_in)?;
        wrec[k] = dense(&p.gates[k].w_rec)?;
    }
    Ok((win, wrec))
}

/// Run forward and backward with every counted matrix operation actually performed.
/// The backward pass is seeded with the network's own loss gradients for `label`.
pub fn count_ops(net: &Network<f64>, seq: &SliceSequence, label: usize) -> Result<Instrumented> {
    let st = stages(net)?;
    let layers = net.layers();
    let nl = layers.len();
    let steps = seq.steps();
    let mut fwd: Vec<Counter> = vec![Counter::default(); st.len()];
    let mut bwd: Vec<Counter> = vec![Counter::default(); st.len()];
    let mut active = vec![vec![0u64; steps]; st.len()];
    let mut records: Vec<StepRecord> = Vec::with_capacity(steps);
    let mut u_state: Vec<Vec<f64>> = st[1..].iter().map(|s| vec![0.0; s.m]).collect();
    let mut o_state = u_state.clone();
    let mut c_state = u_state.clone();
    let mut outputs = Vec::with_capacity(steps);

    for t in 0..steps {
        let mut x: Vec<f64> = seq.slice(t).iter().map(|&v| f64::from(v)).collect();
        let mut rec = StepRecord {
            x: Vec::new(),
            u: Vec::new(),
            o: Vec::new(),
            gates: Vec::new(),
            c: Vec::new(),
            c_prev: Vec::new(),
            top: Vec::new(),
        };
        for (l, layer) in layers.iter().enumerate() {
            active[l][t] = x.iter().filter(|&&v| v != 0.0).count() as u64;
            let stage_in = l;
            let stage_self = l + 1;
            rec.x.push(x.clone());
            let y = match layer {
                Layer::Lif(p) => {
                    let n = p.width();
                    let leak = p.effective_leak();
                    let mut u: Vec<f64> = if p.reset_enabled {
                        u_state[l].iter().zip(&o_state[l]).map(|(&u, &o)| leak * u * (1.0 - o)).collect()
                    } else {
                        u_state[l].iter().map(|&u| leak * u).collect()
                    };
                    event_acc(dense(&p.weight)?, n, &x, &mut u, &mut fwd[stage_in]);
                    if let Some(w) = &p.recurrent {
                        event_acc(w.data(), n, &o_state[l], &mut u, &mut fwd[stage_self]);
                    }
                    let o: Vec<f64> = u.iter().map(|&v| if v >= p.u_th { 1.0 } else { 0.0 }).collect();
                    u_state[l] = u.clone();
                    o_state[l] = o.clone();
                    rec.u.push(u);
                    rec.o.push(o.clone());
                    o
                }
                Layer::Rnn(p) => {
                    let n = p.width();
                    let mut pre = vec![0.0; n];
                    dense_acc(dense(&p.w_in)?, n, &x, &mut pre, &mut fwd[stage_in]);
                    if t > 0 {
                        dense_acc(dense(&p.w_rec)?, n, &o_state[l], &mut pre, &mut fwd[stage_self]);
                    }
                    let h: Vec<f64> = pre.iter().zip(p.bias.data()).map(|(&v, &b)| (v + b).tanh()).collect();
                    o_state[l] = h.clone();
                    rec.o.push(h.clone());
                    h
                }
                Layer::Lstm(p) => {
                    let n = p.width();
                    let (win, wrec) = lstm_gate_weights(p)?;
                    let mut gates: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
                    for k in 0..4 {
                        dense_acc(win[k], n, &x, &mut gates[k], &mut fwd[stage_in]);
                        if t > 0 {
                            dense_acc(wrec[k], n, &o_state[l], &mut gates[k], &mut fwd[stage_self]);
                        }
                        for (v, &b) in gates[k].iter_mut().zip(p.gates[k].bias.data()) {
                            *v = if k == 3 { (*v + b).tanh() } else { 1.0 / (1.0 + (-(*v + b)).exp()) };
                        }
                    }
                    let c_prev = c_state[l].clone();
                    let c: Vec<f64> = (0..n).map(|j| c_prev[j] * gates[0][j] + gates[3][j] * gates[1][j]).collect();
                    let h: Vec<f64> = (0..n).map(|j| c[j].tanh() * gates[2][j]).collect();
                    c_state[l] = c.clone();
                    o_state[l] = h.clone();
                    rec.gates.push(gates);
                    rec.c.push(c);
                    rec.c_prev.push(c_prev);
                    rec.o.push(h.clone());
                    h
                }
                Layer::Pool(_) => unreachable!("rejected by stages()"),
            };
            x = y;
        }
        active[nl][t] = x.iter().filter(|&&v| v != 0.0).count() as u64;
        let out = match net.readout() {
            Some(r) => {
                let mut y = r.bias.data().to_vec();
                let mut pre = vec![0.0; y.len()];
                dense_acc(r.weight.data(), y.len(), &x, &mut pre, &mut fwd[nl]);
                for (a, b) in y.iter_mut().zip(pre) {
                    *a += b;
                }
                y
            }
            None => x.clone(),
        };
        rec.top = x;
        outputs.push(out);
        records.push(rec);
    }

    let lr = compute_loss(net.config().loss, &outputs, label)?;
    let mut first = vec![0.0; layers.first().map_or(0, |l| match l {
        Layer::Lif(p) => p.weight.weight().len(),
        Layer::Rnn(p) => p.w_in.weight().len(),
        Layer::Lstm(p) => p.gates[0].w_in.weight().len(),
        Layer::Pool(_) => 0,
    })];
    // per-layer carries from step t+1
    let mut next_delta: Vec<Vec<f64>> = st[1..].iter().map(|s| vec![0.0; s.m]).collect();
    let mut next_dh: Vec<Vec<f64>> = next_delta.clone();
    for t in (0..steps).rev() {
        let rec = &records[t];
        // gradient arriving at the top cell layer from the loss/readout
        let mut from_above: Vec<f64> = match net.readout() {
            Some(r) => dense_back(r.weight.data(), r.bias.len(), &lr.grads[t], &mut bwd[nl]),
            None => lr.grads[t].clone(),
        };
        for l in (0..nl).rev() {
            let stage_self = l + 1;
            match &layers[l] {
                Layer::Lif(p) => {
                    let n = p.width();
                    let leak = p.effective_leak();
                    let (u, o) = (&rec.u[l], &rec.o[l]);
                    let mut d_o = from_above.clone();
                    if p.reset_enabled {
                        for k in 0..n {
                            d_o[k] -= leak * next_delta[l][k] * u[k];
                        }
                    }
                    if let (Some(w), true) = (&p.recurrent, t + 1 < steps) {
                        let back = dense_back(w.data(), n, &next_delta[l], &mut bwd[stage_self]);
                        for (a, b) in d_o.iter_mut().zip(back) {
                            *a += b;
                        }
                    }
                    let fprime = crate::cells::lif::surrogate_grad(u, p.u_th, p.a);
                    let du: Vec<f64> = (0..n)
                        .map(|k| {
                            let carry = if p.reset_enabled { 1.0 - o[k] } else { 1.0 };
                            d_o[k] * fprime[k] + leak * next_delta[l][k] * carry
                        })
                        .collect();
                    if l == 0 {
                        outer_acc(&mut first, &rec.x[0], &du);
                    } else {
                        from_above = dense_back(dense(&p.weight)?, n, &du, &mut bwd[l]);
                    }
                    next_delta[l] = du;
                }
                Layer::Rnn(p) => {
                    let n = p.width();
                    let h = &rec.o[l];
                    let mut dh = from_above.clone();
                    if t + 1 < steps {
                        let back = dense_back(dense(&p.w_rec)?, n, &next_delta[l], &mut bwd[stage_self]);
                        for (a, b) in dh.iter_mut().zip(back) {
                            *a += b;
                        }
                    }
                    let dpre: Vec<f64> = dh.iter().zip(h).map(|(&d, &h)| d * (1.0 - h * h)).collect();
                    if l == 0 {
                        outer_acc(&mut first, &rec.x[0], &dpre);
                    } else {
                        from_above = dense_back(dense(&p.w_in)?, n, &dpre, &mut bwd[l]);
                    }
                    next_delta[l] = dpre;
                }
                Layer::Lstm(p) => {
                    let n = p.width();
                    let (win, wrec) = lstm_gate_weights(p)?;
                    let mut dh = from_above.clone();
                    if t + 1 < steps {
                        let nr = &records[t + 1];
                        let v = lstm_factors(&nr.gates[l], &nr.c[l], &nr.c_prev[l]);
                        let j = gate_jacobian(wrec, [&v[0], &v[1], &v[2], &v[3]], n, &mut bwd[stage_self]);
                        let back = dense_back(&j, n, &next_dh[l], &mut bwd[stage_self]);
                        for (a, b) in dh.iter_mut().zip(back) {
                            *a += b;
                        }
                    }
                    let v = lstm_factors(&rec.gates[l], &rec.c[l], &rec.c_prev[l]);
                    if l == 0 {
                        let d_f: Vec<f64> = dh.iter().zip(&v[0]).map(|(a, b)| a * b).collect();
                        outer_acc(&mut first, &rec.x[0], &d_f);
                    } else {
                        let j = gate_jacobian(win, [&v[0], &v[1], &v[2], &v[3]], n, &mut bwd[l]);
                        from_above = dense_back(&j, n, &dh, &mut bwd[l]);
                    }
                    next_dh[l] = dh;
                }
                Layer::Pool(_) => unreachable!("rejected by stages()"),
            }
        }
    }

    let activity = Activity { steps, active };
    let make = |direction, counts: Vec<Counter>| OpCount {
        direction,
        steps,
        stages: counts
            .into_iter()
            .enumerate()
            .map(|(i, ops)| StageOps {
                stage: i,
                m: st[i].m,
                n: st[i].n,
                alpha: rate(activity.active[i].iter().sum(), st[i].m, steps),
                ops,
            })
            .collect(),
    };
    Ok(Instrumented {
        forward: make(Direction::Forward, fwd),
        backward: make(Direction::Backward, bwd),
        activity: activity.clone(),
        outputs,
        first_weight_grad: first,
    })
}

fn outer_acc(dw: &mut [f64], x: &[f64], d: &[f64]) {
    let n = d.len();
    for (j, &xj) in x.iter().enumerate() {
        for (g, &dv) in dw[j * n..(j + 1) * n].iter_mut().zip(d) {
            *g += xj * dv;
        }
    }
}
