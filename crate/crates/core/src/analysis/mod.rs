//! Post-hoc measurements: temporal contrast, parameter and operation counts, weight
//! histograms and feature-map export.

mod contrast;
mod ops;

pub use contrast::{clamped_log, contrast_matrix, contrast_stats, ContrastMatrix, ContrastStats, EPSILON};
pub use ops::{
    count_ops, estimate_ops, per_step_formula, uniform_activity, Activity, Counter, Direction, Instrumented, OpCount,
    StageOps,
};

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::event_io::SliceSequence;
use crate::network::{Layer, LayerTape, Network};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub tensors: Vec<(String, usize)>,
    pub total: usize,
}

pub fn count_params<T: Real>(net: &Network<T>) -> ParamCount {
    let tensors: Vec<(String, usize)> = net.params().into_iter().map(|(n, t)| (n, t.len())).collect();
    let total = tensors.iter().map(|(_, n)| n).sum();
    ParamCount { tensors, total }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSet {
    /// Temporal weights: W2 for RNN/LSTM, the fixed `-leak` self-connection for LIF.
    Recurrent,
    Feedforward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over the value range; a degenerate range is widened by 0.5 each side.
    pub fn from_values(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("histogram needs at least one bin"));
        }
        let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        if values.is_empty() {
            (lo, hi) = (0.0, 1.0);
        } else if lo == hi {
            (lo, hi) = (lo - 0.5, hi + 0.5);
        }
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; bins];
        for &v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["lower", "upper", "count"]).map_err(io)?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()]).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The weights of the chosen set, flattened.
pub fn weight_values<T: Real>(net: &Network<T>, which: WeightSet) -> Vec<f64> {
    let mut out = Vec::new();
    let extend = |out: &mut Vec<f64>, t: &crate::tensor::Tensor<T>| out.extend(t.data().iter().map(|v| v.as_f64()));
    for l in net.layers() {
        match (l, which) {
            (Layer::Pool(_), _) => {}
            (Layer::Lif(p), WeightSet::Recurrent) => {
                let w = -p.effective_leak().as_f64();
                out.extend(std::iter::repeat_n(w, p.width()));
                if let Some(r) = &p.recurrent {
                    out.extend(r.data().iter().map(|v| v.as_f64()));
                }
            }
            (Layer::Lif(p), WeightSet::Feedforward) => extend(&mut out, p.weight.weight()),
            (Layer::Rnn(p), WeightSet::Recurrent) => extend(&mut out, p.w_rec.weight()),
            (Layer::Rnn(p), WeightSet::Feedforward) => extend(&mut out, p.w_in.weight()),
            (Layer::Lstm(p), WeightSet::Recurrent) => p.gates.iter().for_each(|g| extend(&mut out, g.w_rec.weight())),
            (Layer::Lstm(p), WeightSet::Feedforward) => p.gates.iter().for_each(|g| extend(&mut out, g.w_in.weight())),
        }
    }
    if which == WeightSet::Feedforward {
        if let Some(r) = net.readout() {
            out.extend(r.weight.data().iter().map(|v| v.as_f64()));
        }
    }
    out
}

pub fn weight_histogram<T: Real>(net: &Network<T>, which: WeightSet, bins: usize) -> Result<Histogram> {
    Histogram::from_values(&weight_values(net, which), bins)
}

pub const FEATURE_MAGIC: [u8; 4] = *b"NVSF";
pub const FEATURE_VERSION: u32 = 1;

/// `NVSF` float tensor: magic, u32 version, u32 rank, u32 dims, f32 little-endian payload.
pub fn encode_feature_map(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + data.len() * 4);
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_feature_map(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let word = |i: usize| -> Result<u32> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .ok_or(Error::Truncated { expected: i + 4, found: bytes.len() })
    };
    let magic: [u8; 4] = bytes.get(..4).ok_or(Error::Truncated { expected: 4, found: bytes.len() })?.try_into().unwrap();
    if magic != FEATURE_MAGIC {
        return Err(Error::BadMagic { expected: FEATURE_MAGIC, found: magic });
    }
    let version = word(4)?;
    if version != FEATURE_VERSION {
        return Err(Error::Version { expected: FEATURE_VERSION, found: version });
    }
    let rank = word(8)? as usize;
    let shape: Vec<usize> = (0..rank).map(|i| word(12 + 4 * i).map(|d| d as usize)).collect::<Result<_>>()?;
    let start = 12 + 4 * rank;
    let n: usize = shape.iter().product();
    let expected = start + 4 * n;
    if bytes.len() != expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    let data = bytes[start..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Ok((shape, data))
}

/// Write the activation maps of convolutional layer `layer` at each requested step into
/// `dir`, one `NVSF` file per step plus `manifest.csv`. Returns the written tensor paths.
pub fn export_feature_maps<T: Real>(
    net: &Network<T>,
    sample: &SliceSequence,
    layer: usize,
    timesteps: &[usize],
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    let l = net.layers().get(layer).ok_or_else(|| Error::config(format!("no layer {layer}")))?;
    let conv = l.is_conv();
    if !conv {
        return Err(Error::config(format!("layer {layer} is not a convolutional layer")));
    }
    if let Some(&t) = timesteps.iter().find(|&&t| t >= sample.steps()) {
        return Err(Error::config(format!("timestep {t} beyond the sample's {} steps", sample.steps())));
    }
    let shape = net.shapes()[layer + 1];
    let pass = net.forward(sample, true)?;
    let tape = pass.tape.expect("taped forward");
    fs::create_dir_all(dir)?;
    let mut manifest = csv::Writer::from_path(dir.join("manifest.csv")).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    manifest.write_record(["file", "layer", "timestep", "channels", "height", "width"]).map_err(io)?;
    let mut paths = Vec::new();
    for &t in timesteps {
        let map: Vec<f32> = match &tape.steps[t][layer] {
            LayerTape::Lif(e) => e.o.iter().map(|v| v.as_f64() as f32).collect(),
            LayerTape::Rnn(e) => e.h.iter().map(|v| v.as_f64() as f32).collect(),
            LayerTape::Lstm(e) => e.tanh_c.iter().zip(&e.gates[2]).map(|(a, b)| (a.as_f64() * b.as_f64()) as f32).collect(),
            _ => unreachable!("conv layers always tape cell entries"),
        };
        let name = format!("layer{layer}_t{t:04}.nvsf");
        let path = dir.join(&name);
        fs::write(&path, encode_feature_map(&[shape.c, shape.h, shape.w], &map))?;
        manifest
            .write_record([name, layer.to_string(), t.to_string(), shape.c.to_string(), shape.h.to_string(), shape.w.to_string()])
            .map_err(io)?;
        paths.push(path);
    }
    manifest.flush()?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{ModelKind, NetworkConfig};

    fn small(kind: ModelKind, structure: &str) -> Network<f64> {
        let mut c = NetworkConfig::nmnist_mlp(kind);
        c.structure = structure.parse().unwrap();
        c.input_height = 8;
        c.input_width = 8;
        c.steps = 3;
        Network::build(c, 1).unwrap()
    }

    #[test]
    fn gesture_mlp_ratios() {
        let count = |k| count_params(&Network::<f32>::build(NetworkConfig::gesture_mlp(k), 0).unwrap()).total as f64;
        let snn = count(ModelKind::Snn);
        let r = snn / count(ModelKind::Rnn);
        let l = snn / count(ModelKind::Lstm);
        assert!((0.78..=0.82).contains(&r), "{r}");
        assert!((0.18..=0.22).contains(&l), "{l}");
    }

    #[test]
    fn param_count_matches_checkpoint_payload() {
        let net = small(ModelKind::Lstm, "Input-2C3-AP2-5FC-3");
        let bytes = crate::network::checkpoint::encode_checkpoint(&net).unwrap();
        let c = count_params(&net);
        assert_eq!(c.total, net.num_params());
        assert!(bytes.len() > c.total * 8);
        assert_eq!(c.tensors.len(), net.params().len());
    }

    #[test]
    fn snn_recurrent_mass_sits_at_minus_leak() {
        let net = small(ModelKind::Snn, "Input-6FC-3");
        let h = weight_histogram(&net, WeightSet::Recurrent, 5).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 9);
        let full = h.counts.iter().position(|&c| c == 9).unwrap();
        assert!(h.edges[full] <= -0.3 && -0.3 <= h.edges[full + 1]);
    }

    #[test]
    fn rnn_histogram_covers_init_support() {
        let net = small(ModelKind::Rnn, "Input-6FC-3");
        let values = weight_values(&net, WeightSet::Recurrent);
        assert_eq!(values.len(), 36);
        let bound = (1.0f64 / 6.0).sqrt();
        assert!(values.iter().all(|v| v.abs() <= bound));
        let h = weight_histogram(&net, WeightSet::Recurrent, 1).unwrap();
        assert_eq!(h.counts, vec![36]);
        let ff = weight_histogram(&net, WeightSet::Feedforward, 1).unwrap();
        assert_eq!(ff.counts[0] as usize, 128 * 6 + 6 * 3);
    }

    #[test]
    fn feature_maps_roundtrip_and_reject_dense_layers() {
        let dir = tempfile::tempdir().unwrap();
        let net = small(ModelKind::Snn, "Input-MP2-3C3-AP2-4");
        let zero = SliceSequence::zeros(3, 8, 8, 1000);
        let paths = export_feature_maps(&net, &zero, 1, &[0, 2], dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        let (shape, data) = decode_feature_map(&fs::read(&paths[1]).unwrap()).unwrap();
        assert_eq!(shape, vec![3, 4, 4]);
        assert!(data.iter().all(|&v| v == 0.0));
        let manifest = fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(manifest.lines().count(), 3);
        assert!(export_feature_maps(&net, &zero, 0, &[0], dir.path()).is_err());
        assert!(export_feature_maps(&net, &zero, 3, &[0], dir.path()).is_err());
        assert!(export_feature_maps(&net, &zero, 1, &[3], dir.path()).is_err());
    }

    #[test]
    fn feature_map_decoder_rejects_damage() {
        let bytes = encode_feature_map(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert!(decode_feature_map(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(matches!(decode_feature_map(&bad), Err(Error::BadMagic { .. })));
        assert_eq!(decode_feature_map(&bytes).unwrap().1, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
