//! Temporal contrast: cross-entropy between windows of `k + 1` consecutive slices.

use std::io::Write;

use crate::error::{Error, Result};
use crate::event_io::SliceSequence;

pub const EPSILON: f64 = 1e-16;

/// `log(clamp(x, eps, 1 - eps))`.
pub fn clamped_log(x: f64) -> f64 {
    x.clamp(EPSILON, 1.0 - EPSILON).ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastMatrix {
    pub k: usize,
    /// Side length `T - k`.
    pub size: usize,
    /// Row-major, indexed `(t_x, t_y)`.
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population variance over all entries.
    pub variance: f64,
}

impl ContrastMatrix {
    pub fn get(&self, tx: usize, ty: usize) -> f64 {
        self.values[tx * self.size + ty]
    }

    pub fn write_csv(&self, sink: impl Write) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(sink);
        for row in self.values.chunks(self.size) {
            w.write_record(row.iter().map(|v| format!("{v:.10e}"))).map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `CE(t_x, t_y) = -(1/N) sum_i [S_i log(S'_i) + (1 - S_i) log(1 - S'_i)]` where `S` is the
/// window starting at `t_x`, `S'` the window starting at `t_y`, and `N` the window size.
pub fn contrast_matrix(seq: &SliceSequence, k: usize) -> Result<ContrastMatrix> {
    let t = seq.steps();
    if k >= t {
        return Err(Error::config(format!("window k = {k} needs more than {t} slices")));
    }
    let size = t - k;
    let win = (k + 1) * seq.slice_len();
    let window = |s: usize| &seq.data()[s * seq.slice_len()..s * seq.slice_len() + win];
    let (log1, log0) = (clamped_log(1.0), clamped_log(0.0));
    let (log_not1, log_not0) = (clamped_log(0.0), clamped_log(1.0));
    let mut values = vec![0.0; size * size];
    for tx in 0..size {
        let a = window(tx);
        for ty in 0..size {
            let b = window(ty);
            let mut s = 0.0;
            for (&x, &y) in a.iter().zip(b) {
                s += match (x != 0, y != 0) {
                    (true, true) => log1,
                    (true, false) => log0,
                    (false, true) => log_not1,
                    (false, false) => log_not0,
                };
            }
            values[tx * size + ty] = -s / win as f64;
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(ContrastMatrix { k, size, values, mean, variance })
}

/// Average of per-recording matrix means and variances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContrastStats {
    pub samples: usize,
    pub mean: f64,
    pub variance: f64,
}

pub fn contrast_stats<'a>(seqs: impl IntoIterator<Item = &'a SliceSequence>, k: usize) -> Result<ContrastStats> {
    let (mut n, mut m, mut v) = (0usize, 0.0, 0.0);
    for s in seqs {
        let c = contrast_matrix(s, k)?;
        n += 1;
        m += c.mean;
        v += c.variance;
    }
    if n == 0 {
        return Err(Error::config("no recordings to measure"));
    }
    Ok(ContrastStats { samples: n, mean: m / n as f64, variance: v / n as f64 })
}
