//! Versioned binary checkpoints.
//!
//! ```text
//! magic        8 bytes   "ASSMCKPT"
//! version      u32 LE
//! payload_len  u64 LE
//! payload      payload_len bytes
//! sha256       32 bytes  digest of payload
//! ```
//!
//! The payload is a u32 LE header length, a UTF-8 JSON header (configs,
//! metadata, tensor table), then the calibrated threshold and every tensor
//! as row-major little-endian f64 in the order the table lists them.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::create;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters, Tensor};
use crate::training::{LossBreakdown, TrainConfig};

pub const MAGIC: &[u8; 8] = b"ASSMCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREAMBLE_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub train_config: Option<TrainConfig>,
    pub epochs: usize,
    pub final_loss: Option<LossBreakdown>,
    pub train_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model_config: ModelConfig,
    pub params: Parameters,
    pub threshold: f64,
    pub metadata: TrainingMetadata,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model_config: ModelConfig,
    metadata: TrainingMetadata,
    tensors: Vec<TensorEntry>,
}

fn encode_payload(ck: &Checkpoint) -> Result<Vec<u8>> {
    let arch = ck.params.arch();
    let header = Header {
        model_config: ck.model_config.clone(),
        metadata: ck.metadata.clone(),
        tensors: Tensor::ALL
            .iter()
            .map(|&t| {
                let (rows, cols) = t.shape(arch);
                TensorEntry {
                    name: t.name().to_string(),
                    rows,
                    cols,
                }
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut payload = Vec::with_capacity(4 + header.len() + 8 * (1 + ck.params.num_scalars()));
    payload.extend_from_slice(&(header.len() as u32).to_le_bytes());
    payload.extend_from_slice(&header);
    payload.extend_from_slice(&ck.threshold.to_le_bytes());
    for v in ck.params.iter_values() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    Ok(payload)
}

pub fn checkpoint_bytes(ck: &Checkpoint) -> Result<Vec<u8>> {
    let payload = encode_payload(ck)?;
    let mut out = Vec::with_capacity(PREAMBLE_LEN + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&Sha256::digest(&payload));
    Ok(out)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let bytes = checkpoint_bytes(ck)?;
    let mut w = create(path)?;
    w.write_all(&bytes)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
    /// Offset of `bytes` within the file, for error positions.
    base: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                offset: (self.base + self.bytes.len()) as u64,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn parse_checkpoint(path: &Path, bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor {
        path,
        bytes,
        pos: 0,
        base: 0,
    };
    if cur.take(8)? != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = cur.u32()?;
    if version == 0 || version > FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len = usize::try_from(cur.u64()?).map_err(|_| Error::Truncated {
        path: path.to_path_buf(),
        offset: bytes.len() as u64,
    })?;
    let payload = cur.take(len)?;
    let digest = cur.take(DIGEST_LEN)?;
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::format(
            path,
            0,
            format!("{} trailing bytes after checksum", bytes.len() - cur.pos),
        ));
    }

    let mut body = Cursor {
        path,
        bytes: payload,
        pos: 0,
        base: PREAMBLE_LEN,
    };
    let header_len = body.u32()? as usize;
    let header: Header = serde_json::from_slice(body.take(header_len)?)
        .map_err(|e| Error::format(path, 0, format!("checkpoint header: {e}")))?;
    header.model_config.validate()?;
    let arch = header.model_config.architecture();
    if header.tensors.len() != Tensor::ALL.len() {
        return Err(Error::format(
            path,
            0,
            "checkpoint tensor table has the wrong length",
        ));
    }
    let threshold = body.f64()?;
    let mut tensors = Vec::with_capacity(Tensor::ALL.len());
    for (entry, t) in header.tensors.iter().zip(Tensor::ALL) {
        if Tensor::from_name(&entry.name) != Some(t) || (entry.rows, entry.cols) != t.shape(&arch) {
            return Err(Error::format(
                path,
                0,
                format!(
                    "tensor {} has unexpected name or shape {}x{}",
                    entry.name, entry.rows, entry.cols
                ),
            ));
        }
        let data = (0..entry.rows * entry.cols)
            .map(|_| body.f64())
            .collect::<Result<Vec<_>>>()?;
        tensors.push(data);
    }
    if body.pos != payload.len() {
        return Err(Error::format(path, 0, "unexpected bytes after tensors"));
    }
    Ok(Checkpoint {
        format_version: version,
        params: Parameters::from_tensors(arch, tensors)?,
        model_config: header.model_config,
        threshold,
        metadata: header.metadata,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_parameters, run_sequence};

    fn sample() -> Checkpoint {
        let cfg = ModelConfig {
            input_dim: 2,
            state_dim: 5,
            seed: 4,
            ..ModelConfig::default()
        };
        Checkpoint {
            format_version: FORMAT_VERSION,
            params: init_parameters(&cfg).unwrap(),
            model_config: cfg,
            threshold: f64::NEG_INFINITY,
            metadata: TrainingMetadata {
                train_config: Some(TrainConfig::default()),
                epochs: 3,
                final_loss: Some(LossBreakdown {
                    total: 1.5,
                    recon: 1.0,
                    class: 0.5,
                }),
                train_f1: Some(0.75),
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let ck = sample();
        save_checkpoint(&p, &ck).unwrap();
        let back = load_checkpoint(&p).unwrap();
        let bits = |c: &Checkpoint| c.params.iter_values().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ck));
        assert_eq!(back, ck);

        let xs: Vec<Vec<f64>> = (0..30)
            .map(|t| vec![(t as f64).sin(), (t as f64).cos()])
            .collect();
        let before: Vec<u64> = run_sequence(&ck.params, &xs)
            .unwrap()
            .iter()
            .map(|o| o.score.to_bits())
            .collect();
        let after: Vec<u64> = run_sequence(&back.params, &xs)
            .unwrap()
            .iter()
            .map(|o| o.score.to_bits())
            .collect();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupted_payload_fails_checksum() {
        let ck = sample();
        let mut bytes = checkpoint_bytes(&ck).unwrap();
        let i = bytes.len() - DIGEST_LEN - 3;
        bytes[i] ^= 0x01;
        assert!(matches!(
            parse_checkpoint(Path::new("x"), &bytes),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn future_version_is_rejected() {
        let mut bytes = checkpoint_bytes(&sample()).unwrap();
        bytes[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            parse_checkpoint(Path::new("x"), &bytes),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn truncation_and_magic() {
        let bytes = checkpoint_bytes(&sample()).unwrap();
        for cut in [0, 5, 15, 40, bytes.len() - 1] {
            assert!(matches!(
                parse_checkpoint(Path::new("x"), &bytes[..cut]),
                Err(Error::Truncated { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            parse_checkpoint(Path::new("x"), &bad),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn serialization_is_deterministic() {
        assert_eq!(
            checkpoint_bytes(&sample()).unwrap(),
            checkpoint_bytes(&sample()).unwrap()
        );
    }
}
