//! Checkpoint files: the magic `CDF1`, a little-endian `u32` header length,
//! a UTF-8 JSON header, then every tensor as raw little-endian `f32` in
//! header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::arch::{ArchitectureKind, Block, Network};
use crate::data::NormStats;
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"CDF1";
pub const FORMAT_VERSION: u32 = 1;

const RUNNING_MEAN: &str = "running_mean";
const RUNNING_VAR: &str = "running_var";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epoch: usize,
    /// Hex SHA-256 of every step loss as little-endian `f32`.
    pub loss_history_digest: String,
    #[serde(default)]
    pub mean_loss: Option<f32>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ArchitectureKind,
    pub in_channels: usize,
    pub blocks: Vec<Block>,
    pub dropout: f32,
    /// Parameters followed by batch-norm running statistics.
    pub tensors: Vec<NamedTensor>,
    pub normalization: Option<NormStats>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Shape,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: ArchitectureKind,
    in_channels: usize,
    blocks: Vec<Block>,
    dropout: f32,
    tensors: Vec<TensorEntry>,
    normalization: Option<NormStats>,
    meta: TrainingMeta,
}

fn vector(v: &[f32]) -> Tensor {
    Tensor::from_vec(Shape::new(1, v.len(), 1, 1), v.to_vec()).expect("vector shape")
}

impl Checkpoint {
    pub fn from_network(net: &Network, normalization: Option<NormStats>, meta: TrainingMeta) -> Self {
        let mut tensors: Vec<NamedTensor> = net
            .params()
            .iter()
            .map(|(_, p)| NamedTensor {
                name: p.name.clone(),
                value: p.value.clone(),
            })
            .collect();
        for (name, stats) in net.running_stats() {
            tensors.push(NamedTensor {
                name: format!("{name}.{RUNNING_MEAN}"),
                value: vector(&stats.mean),
            });
            tensors.push(NamedTensor {
                name: format!("{name}.{RUNNING_VAR}"),
                value: vector(&stats.var),
            });
        }
        Checkpoint {
            format_version: FORMAT_VERSION,
            kind: net.kind(),
            in_channels: net.in_channels(),
            blocks: net.blocks().to_vec(),
            dropout: net.dropout(),
            tensors,
            normalization,
            meta,
        }
    }

    /// Errors unless the checkpoint holds `kind` (and, when given,
    /// `in_channels` bands per image).
    pub fn expect(&self, kind: ArchitectureKind, in_channels: Option<usize>) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Mismatch(format!(
                "checkpoint holds {}, requested {kind}",
                self.kind
            )));
        }
        if let Some(c) = in_channels.filter(|&c| c != self.in_channels) {
            return Err(Error::Mismatch(format!(
                "checkpoint expects {} bands per image, data has {c}",
                self.in_channels
            )));
        }
        Ok(())
    }

    /// Rebuilds the network; every tensor must match by name and shape.
    pub fn to_network(&self) -> Result<Network> {
        let mut net = Network::with_blocks(
            self.kind,
            self.in_channels,
            &self.blocks,
            self.dropout,
            &mut RngState::new(0),
        )?;
        let expected = net.params().len() + 2 * net.running_stats().len();
        if self.tensors.len() != expected {
            return Err(Error::Mismatch(format!(
                "checkpoint has {} tensors, the network needs {expected}",
                self.tensors.len()
            )));
        }
        let find = |name: &str| {
            self.tensors
                .iter()
                .find(|t| t.name == name)
                .map(|t| &t.value)
                .ok_or_else(|| Error::Mismatch(format!("checkpoint lacks tensor {name}")))
        };
        let ids: Vec<_> = net.params().ids().collect();
        for id in ids {
            let name = net.params().name(id).to_string();
            let src = find(&name)?;
            let dst = net.params_mut().get_mut(id);
            if src.shape() != dst.shape() {
                return Err(Error::Mismatch(format!(
                    "tensor {name} has shape {}, the network needs {}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = src.clone();
        }
        for i in 0..net.running_stats().len() {
            let name = net.running_stats()[i].0.clone();
            let mean = find(&format!("{name}.{RUNNING_MEAN}"))?;
            let var = find(&format!("{name}.{RUNNING_VAR}"))?;
            let stats = &mut net.running_stats_mut()[i].1;
            if mean.len() != stats.mean.len() || var.len() != stats.var.len() {
                return Err(Error::Mismatch(format!(
                    "running statistics of {name} have the wrong length"
                )));
            }
            stats.mean = mean.data().to_vec();
            stats.var = var.data().to_vec();
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: self.format_version,
            kind: self.kind,
            in_channels: self.in_channels,
            blocks: self.blocks.clone(),
            dropout: self.dropout,
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorEntry {
                    name: t.name.clone(),
                    shape: t.value.shape(),
                })
                .collect(),
            normalization: self.normalization.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = self.tensors.iter().map(|t| t.value.len() * 4).sum();
        let mut out = Vec::with_capacity(8 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for v in t.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |offset: usize, reason: String| Error::Checkpoint {
            offset: offset as u64,
            reason,
        };
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(corrupt(0, "bad magic, not a CDF1 checkpoint".into()));
        }
        let len_bytes = bytes
            .get(4..8)
            .ok_or_else(|| corrupt(4, "truncated header length".into()))?;
        let header_len = u32::from_le_bytes(len_bytes.try_into().expect("four bytes")) as usize;
        let json = bytes
            .get(8..8 + header_len)
            .ok_or_else(|| corrupt(bytes.len(), format!("truncated header, expected {header_len} bytes")))?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| corrupt(8 + e.column().saturating_sub(1), format!("invalid header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Mismatch(format!(
                "checkpoint format version {}, this build reads version {FORMAT_VERSION}",
                header.format_version
            )));
        }
        let mut offset = 8 + header_len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for entry in header.tensors {
            let n = entry.shape.len();
            let raw = bytes.get(offset..offset + 4 * n).ok_or_else(|| {
                corrupt(
                    bytes.len(),
                    format!(
                        "truncated tensor {}: needs {} bytes from offset {offset}",
                        entry.name,
                        4 * n
                    ),
                )
            })?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
                .collect();
            tensors.push(NamedTensor {
                name: entry.name,
                value: Tensor::from_vec(entry.shape, data)?,
            });
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(corrupt(offset, format!("{} trailing bytes", bytes.len() - offset)));
        }
        Ok(Checkpoint {
            format_version: header.format_version,
            kind: header.kind,
            in_channels: header.in_channels,
            blocks: header.blocks,
            dropout: header.dropout,
            tensors,
            normalization: header.normalization,
            meta: header.meta,
        })
    }

    /// Writes through a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("cdf1.tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(kind: ArchitectureKind) -> Network {
        let blocks = [Block { convs: 1, width: 4 }; 4];
        Network::with_blocks(kind, 2, &blocks, 0.1, &mut RngState::new(9)).unwrap()
    }

    fn sample() -> Checkpoint {
        let mut net = small(ArchitectureKind::FcSiamDiff);
        net.running_stats_mut()[0].1.mean[1] = 0.25;
        let norm = NormStats {
            mean: vec![1.0, 2.0],
            std: vec![3.0, 4.0],
        };
        let meta = TrainingMeta {
            epoch: 3,
            loss_history_digest: "ab".into(),
            mean_loss: Some(0.5),
            seed: Some(7),
        };
        Checkpoint::from_network(&net, Some(norm), meta)
    }

    #[test]
    fn bytes_roundtrip() {
        let ckpt = sample();
        let back = Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap();
        assert_eq!(back, ckpt);
        let net = back.to_network().unwrap();
        assert_eq!(net.running_stats()[0].1.mean[1], 0.25);
    }

    #[test]
    fn bad_magic_at_offset_zero() {
        let mut bytes = sample().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Checkpoint { offset: 0, .. })
        ));
    }

    #[test]
    fn every_truncation_is_an_error() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 6, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = Checkpoint::from_bytes(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Checkpoint { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = sample().to_bytes();
        let len = bytes.len();
        bytes.push(0);
        assert!(
            matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint { offset, .. }) if offset == len as u64)
        );
    }

    #[test]
    fn version_mismatch() {
        let mut ckpt = sample();
        ckpt.format_version = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&ckpt.to_bytes()),
            Err(Error::Mismatch(_))
        ));
    }

    #[test]
    fn kind_mismatch() {
        let ckpt = sample();
        assert!(matches!(
            ckpt.expect(ArchitectureKind::FcEf, None),
            Err(Error::Mismatch(_))
        ));
        assert!(matches!(
            ckpt.expect(ArchitectureKind::FcSiamDiff, Some(3)),
            Err(Error::Mismatch(_))
        ));
        ckpt.expect(ArchitectureKind::FcSiamDiff, Some(2)).unwrap();
    }

    #[test]
    fn missing_tensor_is_mismatch() {
        let mut ckpt = sample();
        ckpt.tensors[0].name = "renamed".into();
        assert!(matches!(ckpt.to_network(), Err(Error::Mismatch(_))));
    }
}
