use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Snn,
    Rnn,
    Lstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// MSE between the label and the mean output spike vector.
    SnnRateMse,
    /// MSE on the readout of the final step only.
    LastStep,
    /// Mean over steps of the per-step readout MSE.
    PerStep,
    /// MSE between the label and the mean readout.
    RateInspired,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    SpikeRate,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Canonical,
    /// LIF layers gain trainable `[n, n]` weights from the previous step's spikes.
    CrossRecurrence,
    /// The time constant is fixed from the training resolution and the leak follows
    /// the evaluation resolution.
    AdaptiveLeak,
}

/// One token of a layer chain such as `Input-MP4-64C3-128C3-AP2-128C3-AP2-256FC-11`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    MaxPool(usize),
    AvgPool(usize),
    /// `nC3`: 3x3 convolution with `n` output maps.
    Conv(usize),
    /// `nFC`: fully connected recurrent/spiking layer.
    Fc(usize),
    /// Trailing class count: a LIF layer for SNNs, the linear readout otherwise.
    Output(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Structure(pub Vec<LayerSpec>);

impl Structure {
    pub fn classes(&self) -> usize {
        match self.0.last() {
            Some(LayerSpec::Output(n)) => *n,
            _ => 0,
        }
    }
}

impl FromStr for Structure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut tokens = s.split('-').map(str::trim);
        if tokens.next() != Some("Input") {
            return Err(Error::config(format!("layer chain {s:?} must start with Input")));
        }
        let tokens: Vec<&str> = tokens.collect();
        let mut layers = Vec::with_capacity(tokens.len());
        let mut flat = false;
        for (i, tok) in tokens.iter().enumerate() {
            let num = |t: &str| -> Result<usize> {
                t.parse::<usize>()
                    .ok()
                    .filter(|&n| n > 0)
                    .ok_or_else(|| Error::config(format!("bad layer token {tok:?} in {s:?}")))
            };
            let spec = if let Some(k) = tok.strip_prefix("MP") {
                LayerSpec::MaxPool(num(k)?)
            } else if let Some(k) = tok.strip_prefix("AP") {
                LayerSpec::AvgPool(num(k)?)
            } else if let Some(n) = tok.strip_suffix("C3") {
                LayerSpec::Conv(num(n)?)
            } else if let Some(n) = tok.strip_suffix("FC") {
                LayerSpec::Fc(num(n)?)
            } else {
                if i + 1 != tokens.len() {
                    return Err(Error::config(format!("class count {tok:?} must be the last token of {s:?}")));
                }
                LayerSpec::Output(num(tok)?)
            };
            match spec {
                LayerSpec::MaxPool(_) | LayerSpec::AvgPool(_) | LayerSpec::Conv(_) if flat => {
                    return Err(Error::config(format!("{tok} cannot follow a fully connected layer in {s:?}")));
                }
                LayerSpec::Fc(_) | LayerSpec::Output(_) => flat = true,
                _ => {}
            }
            layers.push(spec);
        }
        if !matches!(layers.last(), Some(LayerSpec::Output(_))) {
            return Err(Error::config(format!("layer chain {s:?} must end with a class count")));
        }
        Ok(Structure(layers))
    }
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Input")?;
        for l in &self.0 {
            match l {
                LayerSpec::MaxPool(k) => write!(f, "-MP{k}")?,
                LayerSpec::AvgPool(k) => write!(f, "-AP{k}")?,
                LayerSpec::Conv(n) => write!(f, "-{n}C3")?,
                LayerSpec::Fc(n) => write!(f, "-{n}FC")?,
                LayerSpec::Output(n) => write!(f, "-{n}")?,
            }
        }
        Ok(())
    }
}

impl TryFrom<String> for Structure {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Structure> for String {
    fn from(s: Structure) -> String {
        s.to_string()
    }
}

/// LIF hyper-parameters; ignored by RNN/LSTM models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellOptions {
    pub u_th: f64,
    pub leak: f64,
    pub a: f64,
    pub leakage: bool,
    pub reset: bool,
    pub variant: Variant,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions { u_th: 0.3, leak: 0.3, a: 0.25, leakage: true, reset: true, variant: Variant::Canonical }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub kind: ModelKind,
    pub structure: Structure,
    pub loss: LossKind,
    pub input_height: usize,
    pub input_width: usize,
    /// Timesteps per sample.
    pub steps: usize,
    /// Slice duration the model is trained at, microseconds.
    pub dt_us: u32,
    #[serde(default)]
    pub cell: CellOptions,
}

impl NetworkConfig {
    /// Parse and validate a TOML network config.
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: NetworkConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn readout(&self) -> Readout {
        match self.kind {
            ModelKind::Snn => Readout::SpikeRate,
            ModelKind::Rnn | ModelKind::Lstm => Readout::Linear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.loss) {
            (ModelKind::Snn, LossKind::SnnRateMse) => {}
            (ModelKind::Snn, l) => return Err(Error::config(format!("SNN models train with snn_rate_mse, not {l:?}"))),
            (_, LossKind::SnnRateMse) => {
                return Err(Error::config("snn_rate_mse applies to spike outputs; RNN/LSTM use a readout loss"))
            }
            _ => {}
        }
        if self.steps == 0 || self.dt_us == 0 {
            return Err(Error::config("steps and dt_us must be positive"));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Error::config("input geometry must be non-empty"));
        }
        let c = &self.cell;
        if self.kind == ModelKind::Snn {
            if !(0.0..1.0).contains(&c.leak) {
                return Err(Error::config(format!("leak {} outside [0, 1)", c.leak)));
            }
            if c.a <= 0.0 {
                return Err(Error::config("surrogate width a must be positive"));
            }
            if c.variant == Variant::AdaptiveLeak && c.leak == 0.0 {
                return Err(Error::config("adaptive leakage needs a non-zero leak"));
            }
        } else if c.variant != Variant::Canonical {
            return Err(Error::config(format!("variant {:?} only applies to SNN models", c.variant)));
        }
        if self.kind == ModelKind::Snn
            && c.variant == Variant::CrossRecurrence
            && self.structure.0.iter().any(|l| matches!(l, LayerSpec::Conv(_)))
        {
            return Err(Error::config("cross-recurrence is only defined for fully connected LIF layers"));
        }
        Ok(())
    }

    fn preset(kind: ModelKind, structure: &str, size: usize, steps: usize, dt_us: u32, a: f64) -> Self {
        NetworkConfig {
            kind,
            structure: structure.parse().expect("preset structure"),
            loss: match kind {
                ModelKind::Snn => LossKind::SnnRateMse,
                _ => LossKind::RateInspired,
            },
            input_height: size,
            input_width: size,
            steps,
            dt_us,
            cell: CellOptions { a, ..CellOptions::default() },
        }
    }

    /// N-MNIST MLP `Input-512FC-10`, T = 15, dt = 3 ms.
    pub fn nmnist_mlp(kind: ModelKind) -> Self {
        Self::preset(kind, "Input-512FC-10", 34, 15, 3000, 0.25)
    }

    /// DVS Gesture MLP `Input-MP4-512FC-11`, T = 60.
    pub fn gesture_mlp(kind: ModelKind) -> Self {
        Self::preset(kind, "Input-MP4-512FC-11", 128, 60, 15000, 0.25)
    }

    /// DVS Gesture CNN; surrogate width 0.5.
    pub fn gesture_cnn(kind: ModelKind) -> Self {
        Self::preset(kind, "Input-MP4-64C3-128C3-AP2-128C3-AP2-256FC-11", 128, 60, 15000, 0.5)
    }
}
