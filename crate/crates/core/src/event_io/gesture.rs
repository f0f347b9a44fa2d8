//! DVS Gesture recordings: AEDAT 3.1 containers plus a per-recording label CSV
//! (`class,startTime_usec,endTime_usec`).
//!
//! An AEDAT 3.1 file starts with `#`-prefixed ASCII header lines, the first being
//! `#!AER-DAT3.1` and the last `#!END-HEADER`. Packets follow, each a 28-byte
//! little-endian header (type, source, size, ts offset, ts overflow, capacity,
//! count, valid) and `count * size` bytes of events. Polarity events (type 1) are
//! 8 bytes: a data word with x in bits 17..30, y in bits 2..16, polarity in bit 1,
//! then a 32-bit timestamp extended by the packet's overflow counter.

use super::{Event, EventStream};
use crate::error::{Error, Result};

pub const SENSOR_SIZE: u16 = 128;
pub const NUM_CLASSES: u32 = 11;

const VERSION_LINE: &str = "#!AER-DAT3.1";
const END_HEADER: &str = "#!END-HEADER";
const PACKET_HEADER: usize = 28;
const POLARITY_EVENT: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelWindow {
    /// 1-based class id as stored in the CSV
    pub class: u32,
    pub start_us: u64,
    pub end_us: u64,
}

/// Decode all polarity events of an AEDAT 3.1 container.
pub fn parse_aedat(bytes: &[u8]) -> Result<Vec<Event>> {
    let body = skip_header(bytes)?;
    let mut events = Vec::new();
    let mut pos = 0;
    while pos < body.len() {
        if body.len() - pos < PACKET_HEADER {
            return Err(Error::Truncated { expected: PACKET_HEADER, found: body.len() - pos });
        }
        let h = &body[pos..pos + PACKET_HEADER];
        let u16_at = |i: usize| u16::from_le_bytes([h[i], h[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(h[i..i + 4].try_into().unwrap());
        let kind = u16_at(0);
        let size = u32_at(4) as usize;
        let overflow = u32_at(12) as u64;
        let count = u32_at(20) as usize;
        pos += PACKET_HEADER;
        let len = size
            .checked_mul(count)
            .ok_or_else(|| Error::Malformed("packet size overflows".into()))?;
        if body.len() - pos < len {
            return Err(Error::Truncated { expected: len, found: body.len() - pos });
        }
        let payload = &body[pos..pos + len];
        pos += len;
        if kind != POLARITY_EVENT {
            continue;
        }
        if size < 8 {
            return Err(Error::Malformed(format!("polarity event size {size} < 8")));
        }
        for rec in payload.chunks_exact(size) {
            let data = u32::from_le_bytes(rec[0..4].try_into().unwrap());
            let ts = u32::from_le_bytes(rec[4..8].try_into().unwrap()) as u64;
            if data & 1 == 0 {
                continue; // invalidated event
            }
            let x = ((data >> 17) & 0x1fff) as u16;
            let y = ((data >> 2) & 0x1fff) as u16;
            if x >= SENSOR_SIZE || y >= SENSOR_SIZE {
                return Err(Error::Geometry {
                    x: x.into(),
                    y: y.into(),
                    width: SENSOR_SIZE.into(),
                    height: SENSOR_SIZE.into(),
                });
            }
            events.push(Event { x, y, polarity: ((data >> 1) & 1) as u8, t_us: (overflow << 31) | ts });
        }
    }
    events.sort_by_key(|e| e.t_us);
    Ok(events)
}

fn skip_header(bytes: &[u8]) -> Result<&[u8]> {
    let mut pos = 0;
    let mut first = true;
    loop {
        if pos >= bytes.len() || bytes[pos] != b'#' {
            if first {
                return Err(Error::UnsupportedFormat("missing AEDAT header".into()));
            }
            return Ok(&bytes[pos..]);
        }
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| pos + i + 1)
            .ok_or_else(|| Error::Malformed("unterminated header line".into()))?;
        let line = String::from_utf8_lossy(&bytes[pos..end]);
        let line = line.trim_end();
        if first {
            if !line.starts_with("#!AER-DAT") {
                return Err(Error::UnsupportedFormat(format!("unrecognised header {line:?}")));
            }
            if line != VERSION_LINE {
                return Err(Error::UnsupportedFormat(format!(
                    "container version {:?}, only 3.1 is supported",
                    &line[9..]
                )));
            }
            first = false;
        }
        pos = end;
        if line == END_HEADER {
            return Ok(&bytes[pos..]);
        }
    }
}

/// Parse the label CSV. Windows must satisfy `start < end` and must not overlap.
pub fn parse_labels(csv_text: &str) -> Result<Vec<LabelWindow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(csv_text.as_bytes());
    let mut windows = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::LabelFile(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let field = |i: usize| -> Result<u64> {
            rec.get(i)
                .ok_or_else(|| Error::LabelFile(format!("row {}: missing column {i}", row + 1)))?
                .parse::<u64>()
                .map_err(|e| Error::LabelFile(format!("row {}: {e}", row + 1)))
        };
        let w = LabelWindow { class: field(0)? as u32, start_us: field(1)?, end_us: field(2)? };
        if w.class == 0 || w.class > NUM_CLASSES {
            return Err(Error::LabelFile(format!("row {}: class {} outside 1..={NUM_CLASSES}", row + 1, w.class)));
        }
        if w.end_us < w.start_us {
            return Err(Error::LabelFile(format!(
                "row {}: window end {} before start {}",
                row + 1,
                w.end_us,
                w.start_us
            )));
        }
        windows.push(w);
    }
    let mut sorted = windows.clone();
    sorted.sort_by_key(|w| w.start_us);
    for pair in sorted.windows(2) {
        if pair[1].start_us < pair[0].end_us {
            return Err(Error::LabelFile(format!(
                "windows [{}, {}) and [{}, {}) overlap",
                pair[0].start_us, pair[0].end_us, pair[1].start_us, pair[1].end_us
            )));
        }
    }
    Ok(windows)
}

/// Split a recording into one labelled stream per trial window. Events are filtered to
/// `[start, end)`, rebased to start at zero, and the class is mapped to `0..11`.
pub fn parse_gesture(bytes: &[u8], labels_csv: &str) -> Result<Vec<EventStream>> {
    let windows = parse_labels(labels_csv)?;
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    let events = parse_aedat(bytes)?;
    Ok(windows
        .iter()
        .map(|w| {
            let lo = events.partition_point(|e| e.t_us < w.start_us);
            let hi = events.partition_point(|e| e.t_us < w.end_us);
            let mut s = EventStream::new(SENSOR_SIZE, SENSOR_SIZE);
            s.events = events[lo..hi].iter().map(|e| Event { t_us: e.t_us - w.start_us, ..*e }).collect();
            s.label = Some(w.class - 1);
            s
        })
        .collect())
}

/// Write events as a single-packet AEDAT 3.1 container.
pub fn write_aedat(events: &[Event]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(format!("{VERSION_LINE}\r\n#Format: RAW\r\n{END_HEADER}\r\n").as_bytes());
    let overflow = events.first().map_or(0, |e| (e.t_us >> 31) as u32);
    let header: [u32; 6] = [8, 4, overflow, events.len() as u32, events.len() as u32, events.len() as u32];
    out.extend_from_slice(&POLARITY_EVENT.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    for v in header {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for e in events {
        let data = ((e.x as u32) << 17) | ((e.y as u32) << 2) | ((e.polarity as u32) << 1) | 1;
        out.extend_from_slice(&data.to_le_bytes());
        out.extend_from_slice(&(e.t_us as u32 & 0x7fff_ffff).to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(t: u64) -> Event {
        Event { x: 3, y: 4, polarity: 1, t_us: t }
    }

    #[test]
    fn window_filter_and_rebase() {
        let bytes = write_aedat(&[ev(5), ev(15), ev(25)]);
        let out = parse_gesture(&bytes, "class,startTime_usec,endTime_usec\n3,10,20\n").unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].events, vec![ev(5)]);
        assert_eq!(out[0].label, Some(2));
        assert_eq!(out[0].sensor_width, 128);
    }

    #[test]
    fn empty_labels() {
        let bytes = write_aedat(&[ev(5)]);
        assert!(parse_gesture(&bytes, "").unwrap().is_empty());
        assert!(parse_gesture(&bytes, "class,startTime_usec,endTime_usec\n").unwrap().is_empty());
    }

    #[test]
    fn reversed_window() {
        let err = parse_gesture(&write_aedat(&[]), "class,startTime_usec,endTime_usec\n1,20,10\n").unwrap_err();
        assert!(matches!(err, Error::LabelFile(_)));
    }

    #[test]
    fn overlapping_windows() {
        let csv = "class,startTime_usec,endTime_usec\n1,0,100\n2,50,150\n";
        assert!(matches!(parse_labels(csv), Err(Error::LabelFile(_))));
    }

    #[test]
    fn unknown_version() {
        let err = parse_aedat(b"#!AER-DAT2.0\r\n\x00\x00").unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }

    #[test]
    fn skips_non_polarity_packets() {
        let mut bytes = format!("{VERSION_LINE}\r\n{END_HEADER}\r\n").into_bytes();
        // a special-event packet (type 0) with one 8-byte event
        bytes.extend_from_slice(&0u16.to_le_bytes());
        bytes.extend_from_slice(&1u16.to_le_bytes());
        for v in [8u32, 4, 0, 1, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0xff; 8]);
        let tail = write_aedat(&[ev(7)]);
        let skip = tail.windows(END_HEADER.len()).position(|w| w == END_HEADER.as_bytes()).unwrap() + END_HEADER.len() + 2;
        bytes.extend_from_slice(&tail[skip..]);
        assert_eq!(parse_aedat(&bytes).unwrap(), vec![ev(7)]);
    }

    #[test]
    fn truncated_packet() {
        let mut bytes = write_aedat(&[ev(1), ev(2)]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(parse_aedat(&bytes), Err(Error::Truncated { .. })));
    }

    proptest! {
        #[test]
        fn aedat_roundtrip(raw in prop::collection::vec((0u16..128, 0u16..128, 0u8..2, 0u64..(1 << 31)), 0..50)) {
            let mut events: Vec<Event> = raw.into_iter().map(|(x, y, polarity, t_us)| Event { x, y, polarity, t_us }).collect();
            events.sort_by_key(|e| e.t_us);
            prop_assert_eq!(parse_aedat(&write_aedat(&events)).unwrap(), events);
        }

        #[test]
        fn parser_is_total(tail in prop::collection::vec(any::<u8>(), 0..300)) {
            let mut bytes = format!("{VERSION_LINE}\r\n{END_HEADER}\r\n").into_bytes();
            bytes.extend_from_slice(&tail);
            let _ = parse_aedat(&bytes);
            let _ = parse_aedat(&tail);
        }
    }
}
