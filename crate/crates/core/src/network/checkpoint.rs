//! `NVCK` checkpoints: magic, version, the network config as TOML, then one record per
//! parameter tensor (name, dtype width, shape, little-endian payload).

use std::io::{Read, Write};

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const MAGIC: [u8; 4] = *b"NVCK";
pub const VERSION: u32 = 1;

pub fn encode_checkpoint<T: Real>(net: &Network<T>) -> Result<Vec<u8>> {
    let config = toml::to_string(net.config()).map_err(|e| Error::config(e.to_string()))?;
    let params = net.params();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::BYTES);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Truncated {
            expected: self.pos.saturating_add(n),
            found: self.buf.len(),
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<&'a str> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Malformed("checkpoint string is not UTF-8".into()))
    }
}

/// Rebuild a network from checkpoint bytes. Stored values are converted to `T`.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Network<T>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Version { expected: VERSION, found: version });
    }
    let config: NetworkConfig = toml::from_str(c.str()?).map_err(|e| Error::config(e.to_string()))?;
    let mut net = Network::<T>::build(config, 0)?;
    let names: Vec<(String, Vec<usize>)> =
        net.params().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let count = c.u32()? as usize;
    if count != names.len() {
        return Err(Error::Malformed(format!("checkpoint has {count} tensors, network needs {}", names.len())));
    }
    let mut loaded = Vec::with_capacity(count);
    for (want_name, want_shape) in &names {
        let name = c.str()?;
        if name != want_name {
            return Err(Error::Malformed(format!("expected tensor {want_name}, found {name}")));
        }
        let width = c.take(1)?[0];
        let ndim = c.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(c.u64()? as usize);
        }
        if &shape != want_shape {
            return Err(Error::shape(format!("{name}: stored {shape:?}, network has {want_shape:?}")));
        }
        let n: usize = shape.iter().product();
        let payload = c.take(n.checked_mul(width as usize).ok_or_else(|| Error::Malformed("tensor too large".into()))?)?;
        let data: Vec<T> = match width {
            4 => payload.chunks_exact(4).map(|b| T::of(f32::read_le(b) as f64)).collect(),
            8 => payload.chunks_exact(8).map(|b| T::of(f64::read_le(b))).collect(),
            w => return Err(Error::UnsupportedFormat(format!("{w}-byte checkpoint values"))),
        };
        loaded.push(Tensor::from_vec(&shape, data)?);
    }
    if c.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes after checkpoint", bytes.len() - c.pos)));
    }
    for (dst, src) in net.params_mut().into_iter().zip(loaded) {
        *dst = src;
    }
    Ok(net)
}

pub fn save_checkpoint<T: Real>(net: &Network<T>, mut w: impl Write) -> Result<()> {
    w.write_all(&encode_checkpoint(net)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(mut r: impl Read) -> Result<Network<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode_checkpoint(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelKind;

    fn tiny(kind: ModelKind) -> NetworkConfig {
        let mut c = NetworkConfig::nmnist_mlp(kind);
        c.structure = "Input-MP2-6FC-3".parse().unwrap();
        c.input_height = 4;
        c.input_width = 4;
        c
    }

    #[test]
    fn roundtrip_all_models() {
        for kind in [ModelKind::Snn, ModelKind::Rnn, ModelKind::Lstm] {
            let net = Network::<f64>::build(tiny(kind), 9).unwrap();
            let back: Network<f64> = decode_checkpoint(&encode_checkpoint(&net).unwrap()).unwrap();
            assert_eq!(back, net);
        }
    }

    #[test]
    fn converts_precision() {
        let net = Network::<f64>::build(tiny(ModelKind::Rnn), 1).unwrap();
        let back: Network<f32> = decode_checkpoint(&encode_checkpoint(&net).unwrap()).unwrap();
        for ((_, a), (_, b)) in net.params().iter().zip(back.params()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - *y as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let net = Network::<f32>::build(tiny(ModelKind::Snn), 1).unwrap();
        let bytes = encode_checkpoint(&net).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(decode_checkpoint::<f32>(&bad), Err(Error::Version { .. })));
        assert!(matches!(decode_checkpoint::<f32>(&bytes[..bytes.len() - 3]), Err(Error::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint::<f32>(&long), Err(Error::Malformed(_))));
        for cut in 0..bytes.len() {
            assert!(decode_checkpoint::<f32>(&bytes[..cut]).is_err());
        }
    }
}
