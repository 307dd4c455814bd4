//! `FEATS v1` feature files and `CTCPOST v1` posteriorgram files.
//!
//! Both start with a magic line, then little-endian `u32` dimensions and a
//! row-major little-endian payload:
//!
//! ```text
//! FEATS v1\n   T: u32  d_feat: u32  frame_shift_ms: f32  T*d_feat f32
//! CTCPOST v1\n N: u32  V+1: u32                          N*(V+1) f64
//! ```

use std::fs;
use std::path::Path;

use crate::ctc::Posteriorgram;
use crate::encoder::FeatureMatrix;
use crate::error::{Error, Result};
use crate::numcore::Matrix;

pub const FEATS_MAGIC: &[u8] = b"FEATS v1\n";
pub const CTCPOST_MAGIC: &[u8] = b"CTCPOST v1\n";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], magic: &[u8], what: &str) -> Result<Self> {
        if !bytes.starts_with(magic) {
            return Err(Error::Format(format!("not a {what} file (bad magic)")));
        }
        Ok(Self {
            bytes,
            pos: magic.len(),
        })
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                actual: self.bytes.len(),
            });
        }
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..end]);
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take()?))
    }

    /// Check that exactly `payload` bytes remain.
    fn expect_payload(&self, payload: usize) -> Result<()> {
        let remaining = self.bytes.len() - self.pos;
        if remaining != payload {
            return Err(Error::Truncated {
                expected: payload,
                actual: remaining,
            });
        }
        Ok(())
    }

    fn rest(&self) -> &'a [u8] {
        &self.bytes[self.pos..]
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

pub fn encode_features(x: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATS_MAGIC.len() + 12 + x.frames.data().len() * 4);
    out.extend_from_slice(FEATS_MAGIC);
    out.extend_from_slice(&(x.len() as u32).to_le_bytes());
    out.extend_from_slice(&(x.dim() as u32).to_le_bytes());
    out.extend_from_slice(&x.frame_shift_ms.to_le_bytes());
    for v in x.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<FeatureMatrix> {
    let mut r = Reader::new(bytes, FEATS_MAGIC, "FEATS v1")?;
    let t = r.u32()? as usize;
    let d = r.u32()? as usize;
    let shift = r.f32()?;
    if t == 0 {
        return Err(Error::EmptyUtterance);
    }
    if d == 0 {
        return Err(Error::Format("feature dimension is zero".into()));
    }
    r.expect_payload(t * d * 4)?;
    let data = r
        .rest()
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(FeatureMatrix::new(Matrix::from_vec(t, d, data)?, shift))
}

pub fn save_features(path: &Path, x: &FeatureMatrix) -> Result<()> {
    write_file(path, &encode_features(x))
}

pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    decode_features(&read_file(path)?)
}

pub fn encode_posteriorgram(post: &Posteriorgram) -> Vec<u8> {
    let mut out = Vec::with_capacity(CTCPOST_MAGIC.len() + 8 + post.data().len() * 8);
    out.extend_from_slice(CTCPOST_MAGIC);
    out.extend_from_slice(&(post.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(post.width() as u32).to_le_bytes());
    for v in post.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_posteriorgram(bytes: &[u8]) -> Result<Posteriorgram> {
    let mut r = Reader::new(bytes, CTCPOST_MAGIC, "CTCPOST v1")?;
    let n = r.u32()? as usize;
    let w = r.u32()? as usize;
    if n == 0 {
        return Err(Error::EmptyUtterance);
    }
    r.expect_payload(n * w * 8)?;
    let data = r
        .rest()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Posteriorgram::from_flat(n, w, data)
}

pub fn save_posteriorgram(path: &Path, post: &Posteriorgram) -> Result<()> {
    write_file(path, &encode_posteriorgram(post))
}

pub fn load_posteriorgram(path: &Path) -> Result<Posteriorgram> {
    decode_posteriorgram(&read_file(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(t: usize, d: usize) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = (0..t * d).map(|_| rng.gen_range(-5.0..5.0)).collect();
        FeatureMatrix::new(Matrix::from_vec(t, d, data).unwrap(), 10.0)
    }

    #[test]
    fn features_round_trip_through_file() {
        let x = random_features(20, 83);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("u.feats");
        save_features(&path, &x).unwrap();
        let back = load_features(&path).unwrap();
        assert_eq!(back, x);
        assert_eq!(encode_features(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn empty_and_truncated_features() {
        let x = random_features(3, 4);
        let bytes = encode_features(&x);
        let short = &bytes[..bytes.len() - 3];
        match decode_features(short) {
            Err(Error::Truncated { expected, actual }) => assert_eq!((expected, actual), (48, 45)),
            other => panic!("unexpected {other:?}"),
        }
        let mut empty = FEATS_MAGIC.to_vec();
        empty.extend_from_slice(&0u32.to_le_bytes());
        empty.extend_from_slice(&4u32.to_le_bytes());
        empty.extend_from_slice(&10f32.to_le_bytes());
        assert!(matches!(decode_features(&empty), Err(Error::EmptyUtterance)));
        assert!(matches!(decode_features(b"FEATS v2\n"), Err(Error::Format(_))));
    }

    #[test]
    fn posteriorgram_round_trip() {
        let rows = vec![vec![0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()], vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY]];
        let post = Posteriorgram::from_rows(rows).unwrap();
        let bytes = encode_posteriorgram(&post);
        assert_eq!(decode_posteriorgram(&bytes).unwrap(), post);
        assert!(matches!(
            decode_posteriorgram(&bytes[..bytes.len() - 8]),
            Err(Error::Truncated { .. })
        ));
    }
}
