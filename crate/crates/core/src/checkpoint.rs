//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SPID" | u32 version
//! u32 len | config block (UTF-8 `key=value` lines)
//! u32 n   | n × f64 means | n × f64 standard deviations
//! u32 count, then per parameter:
//!   u32 len | name (UTF-8) | u32 rows | u32 cols | rows·cols × f64
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::flow_data::{FeatureEncoder, NormalizationStats, RAW_FEATURES};
use crate::model::{Model, Topology};
use crate::nn::ParameterStore;
use crate::trainer::TrainConfig;

pub const MAGIC: &[u8; 4] = b"SPID";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model together with the data statistics and the
/// configuration it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train: TrainConfig,
    pub stats: NormalizationStats,
    pub model: Model,
}

impl Checkpoint {
    /// Encoder producing the inputs this model was trained on.
    pub fn encoder(&self) -> FeatureEncoder {
        FeatureEncoder {
            stats: self.stats.clone(),
            max_len: self.train.max_len,
            with_tradeoff: self.train.alpha.is_uniform(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        let config: String = self
            .train
            .to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        put_u32(&mut out, config.len() as u32);
        out.extend_from_slice(config.as_bytes());
        put_u32(&mut out, RAW_FEATURES as u32);
        for v in self.stats.mean.iter().chain(&self.stats.std) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let store = self.model.store();
        put_u32(&mut out, store.len() as u32);
        for p in store.iter() {
            put_u32(&mut out, p.name.len() as u32);
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.rows as u32);
            put_u32(&mut out, p.cols as u32);
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(r.corrupt(0, "missing SPID magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let config_at = r.pos;
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.corrupt(config_at, "config block is not UTF-8"))?;
        let mut pairs = Vec::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| r.corrupt(config_at, format!("config line {line:?} lacks '='")))?;
            pairs.push((k, v));
        }
        let train = TrainConfig::from_pairs(pairs)
            .map_err(|e| r.corrupt(config_at, format!("config block: {e}")))?;

        let stats_at = r.pos;
        let n = r.u32()? as usize;
        if n != RAW_FEATURES {
            return Err(r.corrupt(stats_at, format!("expected {RAW_FEATURES} feature statistics, found {n}")));
        }
        let mut stats = NormalizationStats::identity();
        for i in 0..n {
            stats.mean[i] = r.f64()?;
        }
        for i in 0..n {
            stats.std[i] = r.f64()?;
        }
        if stats.std.iter().any(|s| !(*s > 0.0)) {
            return Err(r.corrupt(stats_at, "standard deviations must be positive"));
        }

        let count = r.u32()? as usize;
        let mut store = ParameterStore::new();
        for _ in 0..count {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| r.corrupt(at, "parameter name is not UTF-8"))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let size = rows
                .checked_mul(cols)
                .ok_or_else(|| r.corrupt(at, "parameter shape overflows"))?;
            if size > r.remaining() / 8 {
                return Err(r.corrupt(r.pos, format!("truncated: parameter {name:?} needs {size} values")));
            }
            let value = (0..size).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            store
                .add(&name, rows, cols, value)
                .map_err(|e| r.corrupt(at, e.to_string()))?;
        }
        if r.remaining() > 0 {
            return Err(r.corrupt(r.pos, format!("{} trailing bytes", r.remaining())));
        }
        let model = Model::from_store(train.model_config(), store)?;
        Ok(Checkpoint { train, stats, model })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Load and insist on a topology.
    pub fn load_as(path: impl AsRef<Path>, topology: Topology) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if ckpt.train.topology != topology {
            return Err(Error::TopologyMismatch(format!(
                "checkpoint holds a {} model, {} was requested",
                ckpt.train.topology, topology
            )));
        }
        Ok(ckpt)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::CorruptCheckpoint {
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.corrupt(
                self.pos,
                format!("truncated: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
