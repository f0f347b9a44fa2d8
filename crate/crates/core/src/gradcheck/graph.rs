//! A scalar computation graph with reverse accumulation, used as an independent oracle
//! for the closed-form LIF backward pass.

use crate::cells::Transform;
use crate::network::{Layer, Network};
use crate::tensor::PoolKind;

#[derive(Clone, Copy, Debug)]
enum Op {
    Const,
    Param(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// Heaviside step at `u_th` with the rectangular surrogate of width `a` as its derivative.
    Spike { u: usize, u_th: f64, a: f64 },
    /// Selects the first maximal input; the derivative routes to that input only.
    Pick(usize),
}

#[derive(Default)]
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<f64>,
}

impl Graph {
    fn push(&mut self, op: Op, value: f64) -> usize {
        self.ops.push(op);
        self.values.push(value);
        self.ops.len() - 1
    }

    pub fn constant(&mut self, v: f64) -> usize {
        self.push(Op::Const, v)
    }

    pub fn param(&mut self, tensor: usize, elem: usize, v: f64) -> usize {
        self.push(Op::Param(tensor, elem), v)
    }

    pub fn add(&mut self, a: usize, b: usize) -> usize {
        let v = self.values[a] + self.values[b];
        self.push(Op::Add(a, b), v)
    }

    pub fn mul(&mut self, a: usize, b: usize) -> usize {
        let v = self.values[a] * self.values[b];
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: usize, c: f64) -> usize {
        let v = self.values[a] * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn spike(&mut self, u: usize, u_th: f64, a: f64) -> usize {
        let v = if self.values[u] >= u_th { 1.0 } else { 0.0 };
        self.push(Op::Spike { u, u_th, a }, v)
    }

    pub fn max(&mut self, xs: &[usize]) -> usize {
        let mut best = xs[0];
        for &x in &xs[1..] {
            if self.values[x] > self.values[best] {
                best = x;
            }
        }
        let v = self.values[best];
        self.push(Op::Pick(best), v)
    }

    pub fn sum(&mut self, xs: &[usize]) -> usize {
        let mut acc = self.constant(0.0);
        for &x in xs {
            acc = self.add(acc, x);
        }
        acc
    }

    pub fn value(&self, n: usize) -> f64 {
        self.values[n]
    }

    /// Reverse accumulation from the seeded adjoints. `shapes[i]` is the element count of
    /// parameter tensor `i`.
    pub fn backprop(&self, seeds: &[(usize, f64)], shapes: &[usize]) -> Vec<Vec<f64>> {
        let mut adj = vec![0.0; self.ops.len()];
        for &(n, g) in seeds {
            adj[n] += g;
        }
        let mut grads: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
        for n in (0..self.ops.len()).rev() {
            let g = adj[n];
            if g == 0.0 {
                continue;
            }
            match self.ops[n] {
                Op::Const => {}
                Op::Param(t, e) => grads[t][e] += g,
                Op::Add(a, b) => {
                    adj[a] += g;
                    adj[b] += g;
                }
                Op::Mul(a, b) => {
                    adj[a] += g * self.values[b];
                    adj[b] += g * self.values[a];
                }
                Op::Scale(a, c) => adj[a] += g * c,
                Op::Spike { u, u_th, a } => {
                    if (self.values[u] - u_th).abs() <= a / 2.0 {
                        adj[u] += g / a;
                    }
                }
                Op::Pick(a) => adj[a] += g,
            }
        }
        grads
    }
}

/// Build the unrolled SNN forward pass as a scalar graph. Returns the graph and the
/// output spike nodes per step.
pub fn unroll_snn(net: &Network<f64>, inputs: &[Vec<f64>]) -> (Graph, Vec<Vec<usize>>) {
    let mut g = Graph::default();
    let mut tensor_base = Vec::new();
    let mut next = 0;
    for l in net.layers() {
        tensor_base.push(next);
        if let Layer::Lif(p) = l {
            next += 1 + usize::from(p.recurrent.is_some());
        }
    }
    let mut params: Vec<Vec<usize>> = Vec::new();
    for l in net.layers() {
        if let Layer::Lif(p) = l {
            let t = params.len();
            params.push(p.weight.weight().data().iter().enumerate().map(|(e, &v)| g.param(t, e, v)).collect());
            if let Some(r) = &p.recurrent {
                let t = params.len();
                params.push(r.data().iter().enumerate().map(|(e, &v)| g.param(t, e, v)).collect());
            }
        }
    }
    let mut u_prev: Vec<Option<Vec<usize>>> = vec![None; net.layers().len()];
    let mut o_prev: Vec<Option<Vec<usize>>> = vec![None; net.layers().len()];
    let mut outputs = Vec::new();
    for x in inputs {
        let mut act: Vec<usize> = x.iter().map(|&v| g.constant(v)).collect();
        for (li, l) in net.layers().iter().enumerate() {
            act = match l {
                Layer::Pool(p) => {
                    let (c, h, w, k) = (p.input.c, p.input.h, p.input.w, p.k);
                    let (oh, ow) = (h / k, w / k);
                    let mut out = Vec::with_capacity(c * oh * ow);
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let win: Vec<usize> = (0..k * k)
                                    .map(|i| act[ch * h * w + (oy * k + i / k) * w + ox * k + i % k])
                                    .collect();
                                out.push(match p.kind {
                                    PoolKind::Max => g.max(&win),
                                    PoolKind::Avg => {
                                        let s = g.sum(&win);
                                        g.scale(s, 1.0 / (k * k) as f64)
                                    }
                                });
                            }
                        }
                    }
                    out
                }
                Layer::Lif(p) => {
                    let pi = tensor_base[li];
                    let w = &params[pi];
                    let n = p.width();
                    let mut drive: Vec<Vec<usize>> = vec![Vec::new(); n];
                    match &p.weight {
                        Transform::Dense(_) => {
                            for (j, &xj) in act.iter().enumerate() {
                                for (i, d) in drive.iter_mut().enumerate() {
                                    d.push(g.mul(w[j * n + i], xj));
                                }
                            }
                        }
                        Transform::Conv { kernel, height, width } => {
                            let (cout, cin) = (kernel.shape()[0], kernel.shape()[1]);
                            let (h, wd) = (*height as isize, *width as isize);
                            for co in 0..cout {
                                for oy in 0..h {
                                    for ox in 0..wd {
                                        let o = co * (h * wd) as usize + (oy * wd + ox) as usize;
                                        for ci in 0..cin {
                                            for ky in 0..3isize {
                                                for kx in 0..3isize {
                                                    let (iy, ix) = (oy + ky - 1, ox + kx - 1);
                                                    if iy < 0 || iy >= h || ix < 0 || ix >= wd {
                                                        continue;
                                                    }
                                                    let xi = act[ci * (h * wd) as usize + (iy * wd + ix) as usize];
                                                    let ki = ((co * cin + ci) * 3 + ky as usize) * 3 + kx as usize;
                                                    let m = g.mul(w[ki], xi);
                                                    drive[o].push(m);
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if let (Some(_), Some(op)) = (&p.recurrent, &o_prev[li]) {
                        let r = &params[pi + 1];
                        for (j, &oj) in op.iter().enumerate() {
                            for (i, d) in drive.iter_mut().enumerate() {
                                d.push(g.mul(r[j * n + i], oj));
                            }
                        }
                    }
                    let leak = if p.leakage_enabled { p.leak } else { 1.0 };
                    let mut u = Vec::with_capacity(n);
                    for i in 0..n {
                        let mut ui = g.sum(&drive[i]);
                        if let (Some(up), Some(op)) = (&u_prev[li], &o_prev[li]) {
                            let mut carried = g.scale(up[i], leak);
                            if p.reset_enabled {
                                let neg = g.scale(op[i], -1.0);
                                let one = g.constant(1.0);
                                let keep = g.add(one, neg);
                                carried = g.mul(carried, keep);
                            }
                            ui = g.add(ui, carried);
                        }
                        u.push(ui);
                    }
                    let o: Vec<usize> = u.iter().map(|&ui| g.spike(ui, p.u_th, p.a)).collect();
                    u_prev[li] = Some(u);
                    o_prev[li] = Some(o.clone());
                    o
                }
                Layer::Rnn(_) | Layer::Lstm(_) => panic!("graph oracle unrolls spiking networks only"),
            };
        }
        outputs.push(act);
    }
    (g, outputs)
}
