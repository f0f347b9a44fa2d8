use super::*;
use crate::event_io::SliceSequence;
use rand::{Rng, SeedableRng};

fn random_seq(steps: usize, h: usize, w: usize, density: f64, seed: u64) -> SliceSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..steps * 2 * h * w).map(|_| u8::from(rng.gen_bool(density))).collect();
    SliceSequence::from_data(steps, h, w, 1000, data).unwrap()
}

fn tiny(kind: ModelKind, structure: &str, size: usize, steps: usize) -> NetworkConfig {
    let mut c = NetworkConfig::nmnist_mlp(kind);
    c.structure = structure.parse().unwrap();
    c.input_height = size;
    c.input_width = size;
    c.steps = steps;
    c
}

#[test]
fn parameter_counts_match_presets() {
    let count = |c: NetworkConfig| Network::<f32>::build(c, 0).unwrap().num_params();
    assert_eq!(count(NetworkConfig::nmnist_mlp(ModelKind::Snn)), 1_188_864);
    assert_eq!(count(NetworkConfig::gesture_mlp(ModelKind::Snn)), 1_054_208);
    assert_eq!(count(NetworkConfig::gesture_mlp(ModelKind::Rnn)), 1_316_875);
    assert_eq!(count(NetworkConfig::gesture_mlp(ModelKind::Lstm)), 5_250_571);
}

#[test]
fn gesture_cnn_shape_trace() {
    let net = Network::<f32>::build(NetworkConfig::gesture_cnn(ModelKind::Snn), 0).unwrap();
    let dims: Vec<(usize, usize, usize)> = net.shapes().iter().map(|s| (s.c, s.h, s.w)).collect();
    assert_eq!(
        dims,
        vec![
            (2, 128, 128),
            (2, 32, 32),
            (64, 32, 32),
            (128, 32, 32),
            (128, 16, 16),
            (128, 16, 16),
            (128, 8, 8),
            (256, 1, 1),
            (11, 1, 1)
        ]
    );
    let rnn = Network::<f32>::build(NetworkConfig::gesture_cnn(ModelKind::Rnn), 0).unwrap();
    assert_eq!(rnn.shapes().last().unwrap().len(), 256);
    assert_eq!(rnn.readout().unwrap().bias.len(), 11);
}

#[test]
fn build_is_seed_deterministic() {
    let c = tiny(ModelKind::Lstm, "Input-MP2-5FC-3", 4, 3);
    let a = Network::<f64>::build(c.clone(), 3).unwrap();
    assert_eq!(a, Network::<f64>::build(c.clone(), 3).unwrap());
    assert_ne!(a, Network::<f64>::build(c, 4).unwrap());
}

#[test]
fn init_respects_fan_in_bound() {
    let net = Network::<f64>::build(tiny(ModelKind::Snn, "Input-7FC-3", 3, 2), 11).unwrap();
    let (_, w) = &net.params()[0];
    let bound = (1.0 / 18.0f64).sqrt();
    assert!(w.data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn snn_is_silent_on_empty_input() {
    let net = Network::<f64>::build(tiny(ModelKind::Snn, "Input-2C3-AP2-6FC-3", 4, 5), 2).unwrap();
    let seq = SliceSequence::zeros(5, 4, 4, 1000);
    let pass = net.forward(&seq, false).unwrap();
    assert!(pass.outputs.iter().flatten().all(|&o| o == 0.0));
    assert!(pass.spike_counts.iter().all(|&c| c == 0));
    assert!(pass.tape.is_none());
}

#[test]
fn forward_rejects_wrong_geometry() {
    let net = Network::<f64>::build(tiny(ModelKind::Rnn, "Input-6FC-3", 4, 2), 2).unwrap();
    assert!(net.forward(&SliceSequence::zeros(2, 5, 4, 1), false).is_err());
}

#[test]
fn outputs_are_binary_spikes_for_snn() {
    let mut c = tiny(ModelKind::Snn, "Input-MP2-12FC-3", 6, 6);
    c.cell.u_th = 0.05;
    let net = Network::<f64>::build(c, 5).unwrap();
    let pass = net.forward(&random_seq(6, 6, 6, 0.4, 1), false).unwrap();
    assert!(pass.outputs.iter().flatten().all(|&o| o == 0.0 || o == 1.0));
    assert!(pass.spike_counts.iter().sum::<u64>() > 0);
}

fn sum_loss(outputs: &[Vec<f64>], weights: &[Vec<f64>]) -> f64 {
    outputs.iter().zip(weights).map(|(o, w)| o.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum()
}

fn finite_difference_check(c: NetworkConfig, seed: u64, seq: &SliceSequence) {
    let mut net = Network::<f64>::build(c, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let classes = net.classes();
    let weights: Vec<Vec<f64>> = (0..seq.steps()).map(|_| (0..classes).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let pass = net.forward(seq, true).unwrap();
    let grads = net.backward(pass.tape.as_ref().unwrap(), &weights).unwrap();
    let h = 1e-6;
    let n_tensors = grads.tensors.len();
    for ti in 0..n_tensors {
        let len = grads.tensors[ti].len();
        for k in (0..len).step_by((len / 7).max(1)) {
            let orig = net.params_mut()[ti].data()[k];
            net.params_mut()[ti].data_mut()[k] = orig + h;
            let up = sum_loss(&net.forward(seq, false).unwrap().outputs, &weights);
            net.params_mut()[ti].data_mut()[k] = orig - h;
            let down = sum_loss(&net.forward(seq, false).unwrap().outputs, &weights);
            net.params_mut()[ti].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads.tensors[ti].data()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-5 || (fd - an).abs() < 1e-9, "tensor {ti} elem {k}: fd {fd} analytic {an}");
        }
    }
}

#[test]
fn rnn_network_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let seq = random_seq(4, 4, 4, 0.3, seed);
        finite_difference_check(tiny(ModelKind::Rnn, "Input-2C3-AP2-5FC-3", 4, 4), seed, &seq);
        finite_difference_check(tiny(ModelKind::Rnn, "Input-MP2-6FC-4FC-3", 4, 4), seed, &seq);
    }
}

#[test]
fn lstm_network_gradient_matches_finite_differences() {
    for seed in 0..3 {
        let seq = random_seq(4, 4, 4, 0.3, seed);
        finite_difference_check(tiny(ModelKind::Lstm, "Input-2C3-MP2-5FC-3", 4, 4), seed, &seq);
        finite_difference_check(tiny(ModelKind::Lstm, "Input-6FC-4FC-3", 4, 4), seed, &seq);
    }
}

#[test]
fn backward_rejects_incomplete_tape() {
    let net = Network::<f64>::build(tiny(ModelKind::Lstm, "Input-6FC-3", 4, 3), 0).unwrap();
    let pass = net.forward(&random_seq(3, 4, 4, 0.3, 0), true).unwrap();
    let mut tape = pass.tape.unwrap();
    let grads = vec![vec![0.0; 3]; 3];
    assert!(net.backward(&tape, &grads[..2]).is_err());
    tape.steps[1].clear();
    assert!(matches!(net.backward(&tape, &grads), Err(Error::Tape(_))));
}

#[test]
fn backward_param_order_matches_params() {
    for kind in [ModelKind::Snn, ModelKind::Rnn, ModelKind::Lstm] {
        let net = Network::<f64>::build(tiny(kind, "Input-2C3-AP2-5FC-3", 4, 2), 0).unwrap();
        let pass = net.forward(&random_seq(2, 4, 4, 0.3, 0), true).unwrap();
        let g = net.backward(pass.tape.as_ref().unwrap(), &vec![vec![1.0; 3]; 2]).unwrap();
        let shapes: Vec<Vec<usize>> = net.params().iter().map(|(_, t)| t.shape().to_vec()).collect();
        let gshapes: Vec<Vec<usize>> = g.tensors.iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, gshapes);
    }
}

#[test]
fn cross_recurrence_adds_square_weights() {
    let mut c = tiny(ModelKind::Snn, "Input-6FC-3", 4, 2);
    c.cell.variant = Variant::CrossRecurrence;
    let net = Network::<f64>::build(c, 0).unwrap();
    let names: Vec<String> = net.params().into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["layer0.lif.w", "layer0.lif.w_rec", "layer1.lif.w", "layer1.lif.w_rec"]);
    assert_eq!(net.num_params(), 32 * 6 + 36 + 6 * 3 + 9);
}

#[test]
fn zero_recurrent_weights_kill_rnn_temporal_gradient_but_not_lif() {
    let mut rnn = Network::<f64>::build(tiny(ModelKind::Rnn, "Input-5FC-3", 4, 3), 1).unwrap();
    if let Layer::Rnn(p) = &mut rnn.layers_mut()[0] {
        p.w_rec.weight_mut().fill_zero();
    }
    let seq = random_seq(3, 4, 4, 0.4, 2);
    let tape = rnn.forward(&seq, true).unwrap().tape.unwrap();
    let j = temporal_jacobian(&rnn.layers()[0], &tape.steps[1][0], &tape.steps[2][0]).unwrap();
    assert!(j.iter().flatten().all(|&v| v == 0.0));

    let snn = Network::<f64>::build(tiny(ModelKind::Snn, "Input-5FC-3", 4, 3), 1).unwrap();
    let tape = snn.forward(&seq, true).unwrap().tape.unwrap();
    let j = temporal_jacobian(&snn.layers()[0], &tape.steps[1][0], &tape.steps[2][0]).unwrap();
    let diag: Vec<f64> = (0..5).map(|i| j[i][i]).collect();
    assert!(diag.iter().any(|&d| d != 0.0));
    for (i, row) in j.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if i != k {
                assert_eq!(v, 0.0);
            }
        }
    }
}

#[test]
fn adaptive_leak_follows_resolution() {
    assert!((adaptive_leak(0.3, 1000, 1000) - 0.3).abs() < 1e-12);
    assert!((adaptive_leak(0.3, 1000, 2000) - 0.09).abs() < 1e-12);
    let mut c = tiny(ModelKind::Snn, "Input-5FC-3", 4, 3);
    c.cell.variant = Variant::AdaptiveLeak;
    c.dt_us = 1000;
    let mut net = Network::<f64>::build(c, 0).unwrap();
    net.set_eval_resolution(500);
    if let Layer::Lif(p) = &net.layers()[0] {
        assert!((p.leak - 0.3f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn canonical_leak_ignores_resolution() {
    let mut net = Network::<f64>::build(tiny(ModelKind::Snn, "Input-5FC-3", 4, 3), 0).unwrap();
    net.set_eval_resolution(12345);
    if let Layer::Lif(p) = &net.layers()[0] {
        assert_eq!(p.leak, 0.3);
    }
}
