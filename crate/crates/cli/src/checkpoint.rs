//! Binary checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic "EWCCKPT\0" | version u32 | header_len u32 | header JSON
//! param_count u64 | params f64*
//! penalty_count u32 | (len u64 | anchor f64* | coefficients f64*)*
//! has_fisher u8 | [sample_count u64 | len u64 | fisher f64*]
//! crc32 u32 over every preceding byte
//! ```

use std::fs;
use std::ops::Range;
use std::path::Path;

use ewc::consolidation::{FisherDiagonal, PenaltySet, QuadraticPenalty};
use ewc::network::BlockMap;
use ewc::{NetworkSpec, ParamVector};
use serde::{Deserialize, Serialize};

pub const MAGIC: &[u8; 8] = b"EWCCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{0}: not a checkpoint (bad magic)")]
    BadMagic(String),
    #[error("{path}: unsupported checkpoint version {found}")]
    Version { path: String, found: u32 },
    #[error("{0}: checksum mismatch")]
    Checksum(String),
    #[error("{0}: truncated checkpoint")]
    Truncated(String),
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerHeader {
    fan_in: usize,
    fan_out: usize,
    weights: Range<usize>,
    bias: Range<usize>,
    task_bias: Vec<Range<usize>>,
    task_gain: Vec<Range<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    blocks: Vec<LayerHeader>,
    segment: usize,
}

fn layer_headers(blocks: &BlockMap) -> Vec<LayerHeader> {
    blocks
        .layers()
        .iter()
        .map(|l| LayerHeader {
            fan_in: l.fan_in,
            fan_out: l.fan_out,
            weights: l.weights.clone(),
            bias: l.bias.clone(),
            task_bias: l.task_bias.clone(),
            task_gain: l.task_gain.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    /// Index of the training segment that produced the parameters.
    pub segment: usize,
    pub params: ParamVector,
    pub penalties: PenaltySet,
    pub fisher: Option<FisherDiagonal>,
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            spec: self.spec.clone(),
            blocks: layer_headers(self.params.blocks()),
            segment: self.segment,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        put_f64s(&mut out, self.params.values());
        out.extend_from_slice(&(self.penalties.len() as u32).to_le_bytes());
        for p in self.penalties.penalties() {
            out.extend_from_slice(&(p.len() as u64).to_le_bytes());
            put_f64s(&mut out, p.anchor());
            put_f64s(&mut out, p.coefficients());
        }
        match &self.fisher {
            None => out.push(0),
            Some(f) => {
                out.push(1);
                out.extend_from_slice(&(f.sample_count() as u64).to_le_bytes());
                out.extend_from_slice(&(f.len() as u64).to_le_bytes());
                put_f64s(&mut out, f.values());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self, CheckpointError> {
        let corrupt = |m: String| CheckpointError::Corrupt {
            path: origin.to_string(),
            message: m,
        };
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic(origin.to_string()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().expect("4 bytes")) {
            return Err(CheckpointError::Checksum(origin.to_string()));
        }
        let mut r = Reader {
            bytes: body,
            at: MAGIC.len(),
            origin,
        };
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version {
                path: origin.to_string(),
                found: version,
            });
        }
        let header_len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| corrupt(format!("header: {e}")))?;
        header.spec.validate().map_err(|e| corrupt(e.to_string()))?;
        let blocks = header.spec.block_map();
        if layer_headers(&blocks) != header.blocks {
            return Err(corrupt("block map does not match the network spec".into()));
        }
        let n = r.u64()? as usize;
        let params = ParamVector::new(r.f64s(n)?, blocks).map_err(|e| corrupt(e.to_string()))?;
        let mut penalties = PenaltySet::new();
        for _ in 0..r.u32()? {
            let len = r.u64()? as usize;
            let anchor = r.f64s(len)?;
            let coefficients = r.f64s(len)?;
            let p = QuadraticPenalty::new(anchor, coefficients).map_err(|e| corrupt(e.to_string()))?;
            penalties.push(p).map_err(|e| corrupt(e.to_string()))?;
        }
        let fisher = match r.take(1)?[0] {
            0 => None,
            1 => {
                let samples = r.u64()? as usize;
                let len = r.u64()? as usize;
                Some(FisherDiagonal::new(r.f64s(len)?, samples).map_err(|e| corrupt(e.to_string()))?)
            }
            flag => return Err(corrupt(format!("bad fisher flag {flag}"))),
        };
        if r.at != body.len() {
            return Err(corrupt(format!("{} trailing bytes", body.len() - r.at)));
        }
        Ok(Checkpoint {
            spec: header.spec,
            segment: header.segment,
            params,
            penalties,
            fisher,
        })
    }

    /// Writes the checkpoint and returns its bytes' CRC32.
    pub fn save(&self, path: &Path) -> Result<u32, CheckpointError> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(crc32fast::hash(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    origin: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Truncated(self.origin.to_string()))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CheckpointError> {
        let len = n
            .checked_mul(8)
            .ok_or_else(|| CheckpointError::Truncated(self.origin.to_string()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
