//! Gradient oracles for tiny networks: central finite differences for RNN/LSTM, and
//! reverse accumulation over an explicit scalar graph for LIF networks.

pub mod graph;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cells::lif::Mutation;
use crate::error::Result;
use crate::event_io::SliceSequence;
use crate::network::{ModelKind, Network, NetworkConfig, Variant};
use crate::training::compute_loss;
use crate::network::LossKind;

pub const FD_TOLERANCE: f64 = 1e-5;
pub const GRAPH_TOLERANCE: f64 = 1e-10;
pub const FD_STEP: f64 = 1e-3;

const SIZE: usize = 4;
const STEPS: usize = 4;
const CLASSES: usize = 3;

/// Tiny layer chains: at most 3 layers (pooling included) and 8 units per layer.
const STRUCTURES: [&str; 5] = [
    "Input-8FC-3",
    "Input-6FC-5FC-3",
    "Input-AP2-8FC-3",
    "Input-MP2-7FC-3",
    "Input-2C3-AP2-3",
];

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub kind: ModelKind,
    pub seeds: usize,
    /// Relative error for finite differences, absolute error for the graph oracle.
    pub max_error: f64,
    pub tolerance: f64,
    pub compared: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let metric = if self.kind == ModelKind::Snn { "abs" } else { "rel" };
        write!(
            f,
            "{:<5} seeds={} gradients={} max {metric} error={:.3e} tolerance={:.0e} {}",
            format!("{:?}", self.kind).to_lowercase(),
            self.seeds,
            self.compared,
            self.max_error,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Seeded tiny network, probe input and label.
pub fn tiny_case(kind: ModelKind, seed: u64) -> (Network<f64>, SliceSequence, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = NetworkConfig::nmnist_mlp(kind);
    c.structure = STRUCTURES[seed as usize % STRUCTURES.len()].parse().expect("tiny structure");
    c.input_height = SIZE;
    c.input_width = SIZE;
    c.steps = STEPS;
    if kind != ModelKind::Snn {
        c.loss = [LossKind::LastStep, LossKind::PerStep, LossKind::RateInspired][seed as usize % 3];
    } else {
        c.cell.u_th = rng.gen_range(0.1..0.4);
        c.cell.a = rng.gen_range(0.2..1.0);
        c.cell.leak = rng.gen_range(0.0..0.9);
        c.cell.leakage = rng.gen_bool(0.8);
        c.cell.reset = rng.gen_bool(0.8);
        if !c.structure.0.iter().any(|l| matches!(l, crate::network::LayerSpec::Conv(_))) && rng.gen_bool(0.3) {
            c.cell.variant = Variant::CrossRecurrence;
        }
    }
    let net = Network::build(c, seed).expect("tiny network");
    let data = (0..STEPS * 2 * SIZE * SIZE).map(|_| u8::from(rng.gen_bool(0.4))).collect();
    let seq = SliceSequence::from_data(STEPS, SIZE, SIZE, 1000, data).expect("binary data");
    (net, seq, rng.gen_range(0..CLASSES))
}

fn loss_of(net: &Network<f64>, seq: &SliceSequence, label: usize) -> Result<f64> {
    Ok(compute_loss(net.config().loss, &net.forward(seq, false)?.outputs, label)?.loss)
}

/// Central finite differences on every parameter of a tiny RNN or LSTM.
pub fn check_finite_differences(kind: ModelKind, seeds: std::ops::Range<u64>) -> Result<CheckReport> {
    assert!(kind != ModelKind::Snn, "spiking networks are checked against the graph oracle");
    let mut report = CheckReport { kind, seeds: seeds.clone().count(), max_error: 0.0, tolerance: FD_TOLERANCE, compared: 0 };
    for seed in seeds {
        let (mut net, seq, label) = tiny_case(kind, seed);
        let pass = net.forward(&seq, true)?;
        let lr = compute_loss(net.config().loss, &pass.outputs, label)?;
        let grads = net.backward(pass.tape.as_ref().expect("taped"), &lr.grads)?;
        for (ti, g) in grads.tensors.iter().enumerate() {
            for k in 0..g.len() {
                let orig = net.params_mut()[ti].data()[k];
                let mut at = |x: f64| -> Result<f64> {
                    net.params_mut()[ti].data_mut()[k] = x;
                    loss_of(&net, &seq, label)
                };
                let (p1, m1) = (at(orig + FD_STEP)?, at(orig - FD_STEP)?);
                let (p2, m2) = (at(orig + 2.0 * FD_STEP)?, at(orig - 2.0 * FD_STEP)?);
                net.params_mut()[ti].data_mut()[k] = orig;
                // fourth-order central stencil
                let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * FD_STEP);
                let an = g.data()[k];
                report.max_error = report.max_error.max(relative_error(an, fd));
                report.compared += 1;
            }
        }
    }
    Ok(report)
}

/// `|a - b| / max(|a|, |b|)`, with an absolute floor of `1e-8` on the denominator so
/// gradients that are zero up to finite-difference noise compare absolutely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Compare the closed-form LIF backward with reverse accumulation over the unrolled graph.
pub fn check_graph_oracle(seeds: std::ops::Range<u64>, mutation: Mutation) -> Result<CheckReport> {
    let mut report = CheckReport {
        kind: ModelKind::Snn,
        seeds: seeds.clone().count(),
        max_error: 0.0,
        tolerance: GRAPH_TOLERANCE,
        compared: 0,
    };
    for seed in seeds {
        let (net, seq, label) = tiny_case(ModelKind::Snn, seed);
        let pass = net.forward(&seq, true)?;
        let lr = compute_loss(net.config().loss, &pass.outputs, label)?;
        let grads = net.backward_with(pass.tape.as_ref().expect("taped"), &lr.grads, mutation)?;
        let inputs: Vec<Vec<f64>> = (0..seq.steps()).map(|t| seq.slice(t).iter().map(|&v| f64::from(v)).collect()).collect();
        let (g, outs) = graph::unroll_snn(&net, &inputs);
        for (o_graph, o_net) in outs.iter().zip(&pass.outputs) {
            for (&n, &v) in o_graph.iter().zip(o_net) {
                assert_eq!(g.value(n), v, "graph and network forward passes disagree");
            }
        }
        let seeds: Vec<(usize, f64)> =
            outs.iter().zip(&lr.grads).flat_map(|(o, d)| o.iter().copied().zip(d.iter().copied())).collect();
        let shapes: Vec<usize> = grads.tensors.iter().map(|t| t.len()).collect();
        let oracle = g.backprop(&seeds, &shapes);
        for (a, b) in grads.tensors.iter().zip(&oracle) {
            for (x, y) in a.data().iter().zip(b) {
                report.max_error = report.max_error.max((x - y).abs());
                report.compared += 1;
            }
        }
    }
    Ok(report)
}

/// All three checks over `seeds`, plus the sign-flip mutation which must be caught.
pub fn run_suite(seeds: std::ops::Range<u64>) -> Result<SuiteReport> {
    Ok(SuiteReport {
        rnn: check_finite_differences(ModelKind::Rnn, seeds.clone())?,
        lstm: check_finite_differences(ModelKind::Lstm, seeds.clone())?,
        snn: check_graph_oracle(seeds.clone(), Mutation::None)?,
        mutant: check_graph_oracle(seeds, Mutation::FlipResetTerm)?,
    })
}

#[derive(Clone, Debug)]
pub struct SuiteReport {
    pub rnn: CheckReport,
    pub lstm: CheckReport,
    pub snn: CheckReport,
    /// LIF check with the reset term of the backward pass sign-flipped.
    pub mutant: CheckReport,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.rnn.passed() && self.lstm.passed() && self.snn.passed() && !self.mutant.passed()
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}", self.rnn)?;
        writeln!(f, "{}", self.lstm)?;
        writeln!(f, "{}", self.snn)?;
        write!(
            f,
            "mutant (flipped reset term) max abs error={:.3e} {}",
            self.mutant.max_error,
            if self.mutant.passed() { "NOT DETECTED" } else { "detected" }
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rnn_and_lstm_match_finite_differences() {
        for kind in [ModelKind::Rnn, ModelKind::Lstm] {
            let r = check_finite_differences(kind, 0..5).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn lif_matches_graph_oracle() {
        let r = check_graph_oracle(0..10, Mutation::None).unwrap();
        assert!(r.passed(), "{r}");
        assert!(r.compared > 0);
    }

    #[test]
    fn flipped_reset_term_is_detected() {
        let r = check_graph_oracle(0..10, Mutation::FlipResetTerm).unwrap();
        assert!(!r.passed(), "{r}");
    }

    #[test]
    fn graph_oracle_is_not_vacuous() {
        // some probes must actually carry surrogate gradient
        let mut nonzero = 0;
        for seed in 0..10 {
            let (net, seq, label) = tiny_case(ModelKind::Snn, seed);
            let pass = net.forward(&seq, true).unwrap();
            let lr = compute_loss(net.config().loss, &pass.outputs, label).unwrap();
            let g = net.backward(pass.tape.as_ref().unwrap(), &lr.grads).unwrap();
            if g.max_abs() > 0.0 {
                nonzero += 1;
            }
        }
        assert!(nonzero >= 5, "only {nonzero} seeds produced gradients");
    }
}
