//! Binary weight file.
//!
//! Layout, all integers `u32` and all reals `f64`, little-endian:
//! magic `TPABCMLP`, version, activation code, layer-size count, layer sizes,
//! input `lo`/`hi`, output `lo`/`hi`, then per layer the row-major
//! `out x in` weight matrix followed by the bias vector.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Mlp, Scaler};
use crate::error::{Error, Result, WeightFileError};

pub const MAGIC: &[u8; 8] = b"TPABCMLP";
pub const VERSION: u32 = 1;
/// Hidden tanh, identity output.
const ACTIVATION_TANH: u32 = 1;
const MAX_LAYERS: usize = 64;
const MAX_WIDTH: usize = 1 << 20;

pub fn encode_weights(net: &Mlp) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + 8 * net.num_parameters());
    buf.extend_from_slice(MAGIC);
    let put_u32 = |buf: &mut Vec<u8>, v: u32| buf.extend_from_slice(&v.to_le_bytes());
    put_u32(&mut buf, VERSION);
    put_u32(&mut buf, ACTIVATION_TANH);
    put_u32(&mut buf, net.sizes().len() as u32);
    for &s in net.sizes() {
        put_u32(&mut buf, s as u32);
    }
    let mut put_f64s = |vals: &mut dyn Iterator<Item = f64>| {
        for v in vals {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    };
    for s in [net.input_scale(), net.output_scale()] {
        put_f64s(&mut s.lo.iter().copied());
        put_f64s(&mut s.hi.iter().copied());
    }
    for (w, b) in net.weights().iter().zip(net.biases()) {
        put_f64s(&mut w.iter().copied());
        put_f64s(&mut b.iter().copied());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightFileError> {
        let end = self.pos.checked_add(n).ok_or(WeightFileError::Truncated)?;
        let out = self.bytes.get(self.pos..end).ok_or(WeightFileError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, WeightFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, WeightFileError> {
        let raw = self.take(n.checked_mul(8).ok_or(WeightFileError::Truncated)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Mlp, WeightFileError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() {
        return Err(if MAGIC.starts_with(bytes) {
            WeightFileError::Truncated
        } else {
            WeightFileError::BadMagic
        });
    }
    if r.take(8)? != MAGIC {
        return Err(WeightFileError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(WeightFileError::UnsupportedVersion {
            found: version,
            expected: VERSION,
        });
    }
    let act = r.u32()?;
    if act != ACTIVATION_TANH {
        return Err(WeightFileError::Corrupt(format!("unknown activation code {act}")));
    }
    let n = r.u32()? as usize;
    if !(2..=MAX_LAYERS).contains(&n) {
        return Err(WeightFileError::Corrupt(format!("layer count {n}")));
    }
    let mut sizes = Vec::with_capacity(n);
    for _ in 0..n {
        let s = r.u32()? as usize;
        if s == 0 || s > MAX_WIDTH {
            return Err(WeightFileError::Corrupt(format!("layer width {s}")));
        }
        sizes.push(s);
    }
    let (din, dout) = (sizes[0], sizes[n - 1]);
    let input = Scaler {
        lo: r.f64s(din)?,
        hi: r.f64s(din)?,
    };
    let output = Scaler {
        lo: r.f64s(dout)?,
        hi: r.f64s(dout)?,
    };
    let mut weights = Vec::with_capacity(n - 1);
    let mut biases = Vec::with_capacity(n - 1);
    for w in sizes.windows(2) {
        let vals = r.f64s(w[0] * w[1])?;
        weights.push(Array2::from_shape_vec((w[1], w[0]), vals).expect("shape matches length"));
        biases.push(Array1::from(r.f64s(w[1])?));
    }
    if r.pos != bytes.len() {
        return Err(WeightFileError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let scalers_ok = input.lo.iter().chain(&input.hi).chain(&output.lo).chain(&output.hi).all(|v| v.is_finite());
    if !scalers_ok {
        return Err(WeightFileError::Corrupt("non-finite scaling bounds".into()));
    }
    let mut net = Mlp::from_parameters(&sizes, weights, biases)
        .map_err(|e| WeightFileError::Corrupt(e.to_string()))?;
    net.set_scaling(input, output)
        .map_err(|e| WeightFileError::Corrupt(e.to_string()))?;
    Ok(net)
}

pub fn save_weights(net: &Mlp, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(net)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<Mlp> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(&bytes).map_err(|source| Error::WeightFile {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_net() -> Mlp {
        let mut net = Mlp::random(&[2, 6, 4, 3], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        net.set_scaling(
            Scaler {
                lo: vec![-2.0, 0.5],
                hi: vec![2.0, 1.5],
            },
            Scaler {
                lo: vec![0.0, -1.0, 3.0],
                hi: vec![1.0, 1.0, 4.0],
            },
        )
        .unwrap();
        net
    }

    #[test]
    fn round_trip_is_exact() {
        let net = sample_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_weights(&net, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(net, back);
        let x = vec![0.3, 1.1].into();
        assert_eq!(net.predict(&[x]).unwrap(), back.predict(&[vec![0.3, 1.1].into()]).unwrap());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_weights(&sample_net());
        assert_eq!(&bytes[..8], b"TPABCMLP");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        let params = 2 * 6 + 6 + 6 * 4 + 4 + 4 * 3 + 3;
        assert_eq!(bytes.len(), 8 + 4 * 3 + 4 * 4 + 8 * (2 * 2 + 2 * 3) + 8 * params);
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = encode_weights(&sample_net());
        for cut in 0..bytes.len() {
            assert!(
                matches!(decode_weights(&bytes[..cut]), Err(WeightFileError::Truncated)),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_weights(&sample_net());
        bytes[0] = b'X';
        assert!(matches!(decode_weights(&bytes), Err(WeightFileError::BadMagic)));
        let mut bytes = encode_weights(&sample_net());
        bytes[8] = 7;
        assert!(matches!(
            decode_weights(&bytes),
            Err(WeightFileError::UnsupportedVersion { found: 7, expected: 1 })
        ));
    }

    #[test]
    fn trailing_bytes_and_nan_are_corrupt() {
        let mut bytes = encode_weights(&sample_net());
        bytes.push(0);
        assert!(matches!(decode_weights(&bytes), Err(WeightFileError::Corrupt(_))));
        let mut bytes = encode_weights(&sample_net());
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_weights(&bytes), Err(WeightFileError::Corrupt(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_weights("/nonexistent/w.bin"), Err(Error::Io { .. })));
    }
}
