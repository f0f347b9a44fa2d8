//! NVSL slice cache.
//!
//! ```text
//! "NVSL" | version u32 | T u32 | C u32 | H u32 | W u32 | dt_us u32 | label u32 | T*C*H*W bytes
//! ```
//! All integers little-endian; label `0xFFFFFFFF` means unlabelled. Payload bytes are
//! 0 or 1, ordered t-major, then channel, row, column.

use std::io::{Read, Write};

use super::{SliceSequence, CHANNELS};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NVSL";
pub const VERSION: u32 = 1;
const NO_LABEL: u32 = u32::MAX;
const HEADER_LEN: usize = 4 + 7 * 4;

pub fn encode_slices(seq: &SliceSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.data().len());
    out.extend_from_slice(&MAGIC);
    for v in [
        VERSION,
        seq.steps() as u32,
        CHANNELS as u32,
        seq.height() as u32,
        seq.width() as u32,
        seq.dt_us,
        seq.label.unwrap_or(NO_LABEL),
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(seq.data());
    out
}

pub fn decode_slices(bytes: &[u8]) -> Result<SliceSequence> {
    if bytes.len() < 4 {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    if version != VERSION {
        return Err(Error::Version { expected: VERSION, found: version });
    }
    let (steps, c, h, w) = (word(1) as usize, word(2) as usize, word(3) as usize, word(4) as usize);
    if c != CHANNELS {
        return Err(Error::Malformed(format!("NVSL channel count {c}, expected {CHANNELS}")));
    }
    let payload = steps
        .checked_mul(c)
        .and_then(|v| v.checked_mul(h))
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Malformed("NVSL dimensions overflow".into()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::Truncated { expected: payload, found: body.len() });
    }
    if body.len() > payload {
        return Err(Error::Malformed(format!("{} trailing bytes after NVSL payload", body.len() - payload)));
    }
    let label = match word(6) {
        NO_LABEL => None,
        l => Some(l),
    };
    Ok(SliceSequence::from_data(steps, h, w, word(5), body.to_vec())?.with_label(label))
}

pub fn save_slices(seq: &SliceSequence, mut sink: impl Write) -> Result<()> {
    sink.write_all(&encode_slices(seq))?;
    Ok(())
}

pub fn load_slices(mut source: impl Read) -> Result<SliceSequence> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode_slices(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> SliceSequence {
        let mut s = SliceSequence::zeros(3, 4, 5, 1000).with_label(Some(7));
        s.set(2, 1, 3, 4);
        s.set(0, 0, 0, 0);
        s
    }

    #[test]
    fn header_layout() {
        let bytes = encode_slices(&sample());
        assert_eq!(&bytes[..4], b"NVSL");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 7);
        assert_eq!(bytes.len(), 32 + 3 * 2 * 4 * 5);
        // last element is (t=2, c=1, y=3, x=4)
        assert_eq!(*bytes.last().unwrap(), 1);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_slices(&sample());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_slices(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_slices(&sample());
        bytes[4] = 2;
        assert!(matches!(decode_slices(&bytes), Err(Error::Version { expected: 1, found: 2 })));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode_slices(&sample());
        assert!(matches!(decode_slices(&bytes[..bytes.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_slices(&bytes[..10]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn unlabelled() {
        let s = SliceSequence::zeros(1, 1, 1, 5);
        assert_eq!(decode_slices(&encode_slices(&s)).unwrap().label, None);
    }

    proptest! {
        #[test]
        fn roundtrip(steps in 1usize..4, h in 1usize..5, w in 1usize..5, dt in 1u32..5000,
                     label in prop::option::of(0u32..20), seed in any::<u64>()) {
            let n = steps * 2 * h * w;
            let data: Vec<u8> = (0..n).map(|i| ((seed >> (i % 64)) & 1) as u8).collect();
            let s = SliceSequence::from_data(steps, h, w, dt, data).unwrap().with_label(label);
            let mut buf = Vec::new();
            save_slices(&s, &mut buf).unwrap();
            prop_assert_eq!(load_slices(buf.as_slice()).unwrap(), s);
        }

        #[test]
        fn decoder_is_total(bytes in prop::collection::vec(any::<u8>(), 0..80)) {
            let _ = decode_slices(&bytes);
            let mut framed = b"NVSL".to_vec();
            framed.extend_from_slice(&bytes);
            let _ = decode_slices(&framed);
        }
    }
}
