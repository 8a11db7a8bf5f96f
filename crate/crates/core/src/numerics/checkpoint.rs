//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! | offset     | size | content                                  |
//! |------------|------|------------------------------------------|
//! | 0          | 8    | magic `KINFCKPT`                         |
//! | 8          | 4    | format version (`u32`, currently 1)      |
//! | 12         | 4    | header length `N` in bytes (`u32`)       |
//! | 16         | N    | UTF-8 JSON [`CheckpointHeader`]          |
//! | 16 + N     | 8·P  | parameters `w1, b1, w2, b2` as `f64`     |
//! | 16 + N+8P  | 8·P  | Adam first moments, same order           |
//! | 16 + N+16P | 8·P  | Adam second moments, same order          |
//!
//! `P` is the parameter count implied by `header.dims`. Matrices are
//! row-major with `w1` shaped `input × hidden` and `w2` `hidden × output`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::mlp::{MlpDims, MlpParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"KINFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub dims: MlpDims,
    pub dropout_p: f64,
    pub config_digest: String,
    pub seed: u64,
    pub adam: AdamConfig,
    pub adam_t: u64,
    /// Epoch (1-based) whose parameters are stored; 0 for an untrained model.
    pub epoch: usize,
    pub val_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub adam: AdamState,
    pub config_digest: String,
    pub seed: u64,
    pub epoch: usize,
    pub val_mse: Option<f64>,
}

fn shapes(dims: MlpDims) -> [Vec<usize>; 4] {
    [
        vec![dims.input, dims.hidden],
        vec![dims.hidden],
        vec![dims.hidden, dims.output],
        vec![dims.output],
    ]
}

fn write_f64s(w: &mut impl Write, xs: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(8 * 8192);
    for chunk in xs.chunks(8192) {
        buf.clear();
        for x in chunk {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = vec![0u8; 8 * 8192];
    let mut left = n;
    while left > 0 {
        let take = left.min(8192);
        r.read_exact(&mut buf[..8 * take])?;
        out.extend(buf[..8 * take].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())));
        left -= take;
    }
    Ok(out)
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            dims: self.params.dims(),
            dropout_p: self.params.dropout_p(),
            config_digest: self.config_digest.clone(),
            seed: self.seed,
            adam: self.adam.config,
            adam_t: self.adam.t,
            epoch: self.epoch,
            val_mse: self.val_mse,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::io(path, e);
        let header = serde_json::to_vec(&self.header()).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(header.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for t in self.params.tensors().into_iter().chain(&self.adam.m).chain(&self.adam.v) {
            write_f64s(&mut w, t.data()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io = |e: std::io::Error| Error::io(path, e);
        let mut r = BufReader::new(File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::io(path, "not a checkpoint file (bad magic)"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(io)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::io(path, format!("unsupported checkpoint version {version}")));
        }
        r.read_exact(&mut word).map_err(io)?;
        let mut header = vec![0u8; u32::from_le_bytes(word) as usize];
        r.read_exact(&mut header).map_err(io)?;
        let header: CheckpointHeader =
            serde_json::from_slice(&header).map_err(|e| Error::io(path, format!("bad checkpoint header: {e}")))?;

        let shapes = shapes(header.dims);
        let read_set = |r: &mut BufReader<File>| -> Result<[Tensor; 4]> {
            let mut ts = Vec::with_capacity(4);
            for s in &shapes {
                let data = read_f64s(r, s.iter().product()).map_err(io)?;
                ts.push(Tensor::from_vec(s, data)?);
            }
            Ok(ts.try_into().expect("four tensors"))
        };
        let [w1, b1, w2, b2] = read_set(&mut r)?;
        let m = read_set(&mut r)?;
        let v = read_set(&mut r)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(Error::io(path, "trailing bytes after checkpoint payload"));
        }
        Ok(Self {
            params: MlpParams::from_tensors(header.dims, header.dropout_p, w1, b1, w2, b2)?,
            adam: AdamState::from_parts(header.adam, header.adam_t, m, v)?,
            config_digest: header.config_digest,
            seed: header.seed,
            epoch: header.epoch,
            val_mse: header.val_mse,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::mlp::Grads;
    use crate::numerics::rng::SeededRng;

    fn sample() -> Checkpoint {
        let dims = MlpDims::new(5, 4, 3);
        let mut rng = SeededRng::new(8);
        let mut params = MlpParams::he_init(dims, 0.25, &mut rng).unwrap();
        let mut adam = AdamState::new(dims, AdamConfig::with_lr(1e-3)).unwrap();
        let mut g = Grads::zeros(dims);
        for x in g.w1.data_mut().iter_mut().chain(g.b2.data_mut()) {
            *x = rng.normal();
        }
        adam.step(&mut params, &g).unwrap();
        Checkpoint {
            params,
            adam,
            config_digest: "abc123".into(),
            seed: 42,
            epoch: 3,
            val_mse: Some(0.125),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);

        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let n = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let p = ck.params.dims().param_count();
        assert_eq!(bytes.len(), 16 + n + 3 * 8 * p);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(Checkpoint::load(&path).unwrap_err().to_string().contains("magic"));

        sample().save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
