//! Event-camera recordings: parsing, temporal collapse into binary slices, and the
//! on-disk slice cache.

mod collapse;
pub mod dataset;
pub mod gesture;
pub mod nmnist;
pub mod nvsl;

pub use collapse::{collapse, spike_rate};
pub use gesture::parse_gesture;
pub use nmnist::parse_nmnist;
pub use nvsl::{load_slices, save_slices};

use crate::error::{Error, Result};

/// Polarity channels per slice (Off, On).
pub const CHANNELS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// 0 = Off, 1 = On
    pub polarity: u8,
    pub t_us: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub sensor_width: u16,
    pub sensor_height: u16,
    pub label: Option<u32>,
}

impl EventStream {
    pub fn new(sensor_width: u16, sensor_height: u16) -> Self {
        EventStream { events: Vec::new(), sensor_width, sensor_height, label: None }
    }

    /// Check the geometry and ordering invariants.
    pub fn validate(&self) -> Result<()> {
        let mut last = 0u64;
        for e in &self.events {
            if e.x >= self.sensor_width || e.y >= self.sensor_height {
                return Err(Error::Geometry {
                    x: e.x.into(),
                    y: e.y.into(),
                    width: self.sensor_width.into(),
                    height: self.sensor_height.into(),
                });
            }
            if e.polarity > 1 {
                return Err(Error::Malformed(format!("polarity {} is not 0 or 1", e.polarity)));
            }
            if e.t_us < last {
                return Err(Error::Malformed("timestamps decrease".into()));
            }
            last = e.t_us;
        }
        Ok(())
    }

    pub fn duration_us(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t_us + 1)
    }
}

/// Dense binary tensor `[T, 2, H, W]`, the network input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceSequence {
    steps: usize,
    height: usize,
    width: usize,
    data: Vec<u8>,
    pub dt_us: u32,
    pub label: Option<u32>,
}

impl SliceSequence {
    pub fn zeros(steps: usize, height: usize, width: usize, dt_us: u32) -> Self {
        SliceSequence {
            steps,
            height,
            width,
            data: vec![0; steps * CHANNELS * height * width],
            dt_us,
            label: None,
        }
    }

    pub fn from_data(
        steps: usize,
        height: usize,
        width: usize,
        dt_us: u32,
        data: Vec<u8>,
    ) -> Result<Self> {
        if data.len() != steps * CHANNELS * height * width {
            return Err(Error::shape(format!(
                "slice payload of {} bytes does not match [{steps},{CHANNELS},{height},{width}]",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Malformed(format!("slice element {v} is not binary")));
        }
        Ok(SliceSequence { steps, height, width, data, dt_us, label: None })
    }

    pub fn with_label(mut self, label: Option<u32>) -> Self {
        self.label = label;
        self
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `[T, C, H, W]`
    pub fn shape(&self) -> [usize; 4] {
        [self.steps, CHANNELS, self.height, self.width]
    }

    pub fn slice_len(&self) -> usize {
        CHANNELS * self.height * self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// One timestep, laid out `[C, H, W]`.
    pub fn slice(&self, t: usize) -> &[u8] {
        let n = self.slice_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * CHANNELS + c) * self.height + y) * self.width + x
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> u8 {
        self.data[self.index(t, c, y, x)]
    }

    pub(crate) fn set(&mut self, t: usize, c: usize, y: usize, x: usize) {
        let i = self.index(t, c, y, x);
        self.data[i] = 1;
    }

    /// Keep the first `steps` slices, zero-padding if the sequence is shorter.
    pub fn truncated(&self, steps: usize) -> SliceSequence {
        let n = self.slice_len();
        let mut data = vec![0u8; steps * n];
        let keep = steps.min(self.steps) * n;
        data[..keep].copy_from_slice(&self.data[..keep]);
        SliceSequence { steps, data, ..self.clone() }
    }
}
