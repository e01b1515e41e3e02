//! Binary checkpoint container.
//!
//! ```text
//! magic   b"KDSLUCKP"
//! u32     container version
//! u64     header length, then that many bytes of UTF-8 JSON (CheckpointHeader)
//! u32     block count
//! blocks  u32 name length, name bytes, u32 ndim, ndim × u64 dims,
//!         product(dims) × f64 values (row-major)
//! ```
//!
//! Every integer and float is little-endian. Blocks are named
//! `model_o.<param>` and `model_c.<param>`, in parameter order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::dual::{Deploy, DualModel};
use super::slu::SluModel;
use crate::autodiff::Tensor;
use crate::data::{LabelVocab, SubwordVocab};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KDSLUCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub encoder: EncoderConfig,
    pub labels: LabelVocab,
    pub subwords: SubwordVocab,
    pub deploy: Deploy,
    /// Training step the parameters were taken at.
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub models: DualModel,
}

impl Checkpoint {
    pub fn new(models: DualModel, labels: LabelVocab, subwords: SubwordVocab, deploy: Deploy, step: u64) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                encoder: models.model_o.config().clone(),
                labels,
                subwords,
                deploy,
                step,
            },
            models,
        }
    }

    pub fn deployed(&self) -> &SluModel {
        self.models.deployed(self.header.deploy)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(64 + header.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let models = [("model_o", &self.models.model_o), ("model_c", &self.models.model_c)];
        let count: usize = models.iter().map(|(_, m)| m.params().len()).sum();
        out.extend_from_slice(&(count as u32).to_le_bytes());
        for (prefix, m) in models {
            for (name, t) in m.names().iter().zip(m.params()) {
                let full = format!("{prefix}.{name}");
                out.extend_from_slice(&(full.len() as u32).to_le_bytes());
                out.extend_from_slice(full.as_bytes());
                out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                for &x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                header.format_version
            )));
        }
        let count = r.u32()? as usize;
        let mut o = Vec::new();
        let mut c = Vec::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("block too large".into()))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(shape, data)?;
            if let Some(p) = name.strip_prefix("model_o.") {
                o.push((p.to_string(), t));
            } else if let Some(p) = name.strip_prefix("model_c.") {
                c.push((p.to_string(), t));
            } else {
                return Err(Error::Checkpoint(format!("unexpected block {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let (ni, ns) = (header.labels.n_intents(), header.labels.n_slot_tags());
        if header.encoder.subword_vocab_size != header.subwords.len() {
            return Err(Error::Checkpoint(format!(
                "encoder expects {} sub-words, header vocabulary has {}",
                header.encoder.subword_vocab_size,
                header.subwords.len()
            )));
        }
        let models = DualModel {
            model_o: SluModel::from_named(header.encoder.clone(), ni, ns, o)?,
            model_c: SluModel::from_named(header.encoder.clone(), ni, ns, c)?,
        };
        Ok(Self { header, models })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_subword_vocab, Example};

    fn sample() -> Checkpoint {
        let ex = Example::new(vec!["ab".into(), "c".into()], vec!["B-x".into(), "O".into()], "i", "en").unwrap();
        let labels = LabelVocab::from_examples([&ex]);
        let sub = build_subword_vocab(std::slice::from_ref(&ex), 20);
        let cfg = EncoderConfig {
            d_model: 4,
            n_heads: 2,
            n_blocks: 1,
            ffn_dim: 6,
            max_seq_len: 8,
            subword_vocab_size: sub.len(),
            dropout: 0.0,
        };
        let models = DualModel::init(&cfg, &labels, 11, false).unwrap();
        Checkpoint::new(models, labels, sub, Deploy::ModelC, 7)
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }
}
