//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"VCNTCKPT"
//! version  u32 (= 1)
//! config   u32 length + UTF-8 TOML of the model section
//! params   tensor table
//! adam     u8 flag; if 1: step_size, beta1, beta2, eps as f64, steps u64,
//!          first-moment table, second-moment table
//!
//! tensor table = u32 count, then per entry:
//!   u32 name length, name bytes, u32 rank, rank x u64 dims, f64 values
//! ```
//!
//! Values are stored as raw IEEE bits so a round trip is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use vidcount_core::autodiff::Tensor;
use vidcount_core::model::{ModelConfig, ModelParams};
use vidcount_core::train::{Adam, AdamConfig};

use crate::config::ModelSection;
use crate::error::{read, write, CliError, Result};

const MAGIC: &[u8; 8] = b"VCNTCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    /// Present when the checkpoint can resume training.
    pub adam: Option<Adam>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend(v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend(v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend(v.to_le_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend(b);
    }
    fn table<'a>(&mut self, entries: impl ExactSizeIterator<Item = (&'a str, &'a Tensor)>) {
        self.u32(entries.len() as u32);
        for (name, t) in entries {
            self.bytes(name.as_bytes());
            self.u32(t.shape().len() as u32);
            for &d in t.shape() {
                self.u64(d as u64);
            }
            for &v in t.data() {
                self.f64(v);
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CliError::Data(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CliError::Data("checkpoint string is not UTF-8".into()))
    }
    fn table(&mut self) -> Result<BTreeMap<String, Tensor>> {
        let n = self.u32()?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let name = self.string()?;
            let rank = self.u32()? as usize;
            let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len
                .filter(|&l| l <= (self.buf.len() - self.pos) / 8)
                .ok_or_else(|| CliError::Data(format!("checkpoint entry {name} has impossible shape {shape:?}")))?;
            let data = (0..len).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| CliError::Data(format!("checkpoint entry {name}: {e}")))?;
            if out.insert(name.clone(), t).is_some() {
                return Err(CliError::Data(format!("checkpoint repeats entry {name}")));
            }
        }
        Ok(out)
    }
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(MAGIC.to_vec());
        w.u32(VERSION);
        let cfg = toml::to_string(&ModelSection::from(&self.config)).expect("model section serializes");
        w.bytes(cfg.as_bytes());
        w.table(self.params.iter().collect::<Vec<_>>().into_iter());
        match &self.adam {
            None => w.0.push(0),
            Some(adam) => {
                w.0.push(1);
                let c = adam.config;
                for v in [c.step_size, c.beta1, c.beta2, c.eps] {
                    w.f64(v);
                }
                w.u64(adam.steps());
                w.table(adam.first_moments().iter().map(|(k, v)| (k.as_str(), v)));
                w.table(adam.second_moments().iter().map(|(k, v)| (k.as_str(), v)));
            }
        }
        w.0
    }

    /// Parses a checkpoint, verifying parameter names and shapes against
    /// the embedded model config, and moment shapes against the parameters.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(CliError::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CliError::Data(format!("unsupported checkpoint version {version}")));
        }
        let section: ModelSection = toml::from_str(&r.string()?)
            .map_err(|e| CliError::Data(format!("checkpoint config: {e}")))?;
        let config = section.to_config().map_err(|e| CliError::Data(format!("checkpoint config: {e}")))?;
        let params = ModelParams::from_tensors(&config, r.table()?)
            .map_err(|e| CliError::Data(format!("checkpoint parameters: {e}")))?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let c = AdamConfig { step_size: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
                let steps = r.u64()?;
                let first = r.table()?;
                let second = r.table()?;
                for (name, m) in first.iter().chain(&second) {
                    match params.get(name) {
                        Some(p) if p.shape() == m.shape() => {}
                        _ => return Err(CliError::Data(format!("optimizer state for unknown or reshaped parameter {name}"))),
                    }
                }
                Some(Adam::from_state(c, steps, first, second))
            }
            f => return Err(CliError::Data(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(CliError::Data(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { config, params, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write(path, self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read(path)?).map_err(|e| e.context(path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let config = ModelConfig::miniature();
        let ck = Checkpoint { params: ModelParams::init(&config, 3).unwrap(), config, adam: None };
        let bytes = ck.encode();
        for cut in [0, 7, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::decode(&extra).is_err());
        assert_eq!(Checkpoint::decode(&bytes).unwrap(), ck);
    }
}
