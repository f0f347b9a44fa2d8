//! N-MNIST raw binary files: 40-bit records of
//! `x(8) | y(8) | polarity(1) | timestamp(23, big-endian)`.

use super::{Event, EventStream};
use crate::error::{Error, Result};

pub const SENSOR_SIZE: u16 = 34;
const RECORD: usize = 5;

pub fn parse_nmnist(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() % RECORD != 0 {
        return Err(Error::Malformed(format!(
            "N-MNIST length {} is not a multiple of {RECORD}",
            bytes.len()
        )));
    }
    let mut stream = EventStream::new(SENSOR_SIZE, SENSOR_SIZE);
    stream.events.reserve(bytes.len() / RECORD);
    for rec in bytes.chunks_exact(RECORD) {
        let (x, y) = (rec[0] as u16, rec[1] as u16);
        if x >= SENSOR_SIZE || y >= SENSOR_SIZE {
            return Err(Error::Geometry {
                x: x.into(),
                y: y.into(),
                width: SENSOR_SIZE.into(),
                height: SENSOR_SIZE.into(),
            });
        }
        let polarity = rec[2] >> 7;
        let t_us = (((rec[2] & 0x7f) as u64) << 16) | ((rec[3] as u64) << 8) | rec[4] as u64;
        stream.events.push(Event { x, y, polarity, t_us });
    }
    // streams must have non-decreasing timestamps
    if stream.events.windows(2).any(|w| w[1].t_us < w[0].t_us) {
        stream.events.sort_by_key(|e| e.t_us);
    }
    Ok(stream)
}

/// Inverse of [`parse_nmnist`]; timestamps above 23 bits are rejected.
pub fn encode_nmnist(events: &[Event]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(events.len() * RECORD);
    for e in events {
        if e.t_us >= 1 << 23 || e.x > 255 || e.y > 255 || e.polarity > 1 {
            return Err(Error::Malformed(format!("event {e:?} does not fit the N-MNIST record")));
        }
        out.extend_from_slice(&[
            e.x as u8,
            e.y as u8,
            (e.polarity << 7) | ((e.t_us >> 16) as u8 & 0x7f),
            (e.t_us >> 8) as u8,
            e.t_us as u8,
        ]);
    }
    Ok(out)
}
