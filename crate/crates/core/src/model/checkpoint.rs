//! Self-describing checkpoint file:
//!
//! ```text
//! "DSCK" | u32 version | u64 header length | JSON header | f32 LE payload
//! ```
//!
//! The header carries the config and its hash, counters, the validation
//! score, the normalization stats and a table of every tensor in the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, Critic, Generator, ModelConfig, ModelError, ParamSet, Result};
use crate::datastore::write_atomic;
use crate::preprocess::NormStats;
use crate::tape::Tensor;

const MAGIC: &[u8; 4] = b"DSCK";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Generator updates completed.
    pub step: u64,
    pub epoch: usize,
    pub val_crps: Option<f64>,
    pub stats: NormStats,
    pub generator: Generator,
    pub critic: Critic,
    pub opt_gen: Adam,
    pub opt_critic: Adam,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    config_hash: String,
    step: u64,
    epoch: usize,
    val_crps: Option<f64>,
    stats: NormStats,
    adam_steps: [u64; 2],
    tensors: Vec<TensorEntry>,
}

fn bad(path: &Path, reason: impl Into<String>) -> ModelError {
    ModelError::Checkpoint {
        path: path.into(),
        reason: reason.into(),
    }
}

/// Every tensor in payload order: gen params, critic params, then Adam
/// moments (gen m, gen v, critic m, critic v).
fn tensor_table(c: &Checkpoint) -> Vec<(String, Vec<usize>, &[f32])> {
    let mut out = Vec::new();
    for p in [&c.generator.params, &c.critic.params] {
        for (n, t) in p.names.iter().zip(&p.tensors) {
            out.push((n.clone(), t.shape.clone(), t.data.as_slice()));
        }
    }
    for (tag, p, opt) in [
        ("gen", &c.generator.params, &c.opt_gen),
        ("critic", &c.critic.params, &c.opt_critic),
    ] {
        for (which, moments) in [("m", &opt.m), ("v", &opt.v)] {
            for ((n, t), d) in p.names.iter().zip(&p.tensors).zip(moments) {
                out.push((format!("adam.{tag}.{which}.{n}"), t.shape.clone(), d.as_slice()));
            }
        }
    }
    out
}

impl Checkpoint {
    /// Fresh networks and optimizers for `config`.
    pub fn init(config: ModelConfig, stats: NormStats) -> Result<Self> {
        config.validate()?;
        let seed = config.train.seed;
        let generator = Generator::new(config.generator.clone(), seed);
        let critic = Critic::new(config.critic.clone(), seed);
        let t = &config.train;
        let opt_gen = Adam::new(&generator.params, t.lr_gen, t.adam_beta1, t.adam_beta2);
        let opt_critic = Adam::new(&critic.params, t.lr_critic, t.adam_beta1, t.adam_beta2);
        Ok(Self {
            config,
            step: 0,
            epoch: 0,
            val_crps: None,
            stats,
            generator,
            critic,
            opt_gen,
            opt_critic,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let table = tensor_table(self);
        let header = Header {
            config: self.config.clone(),
            config_hash: self.config.hash(),
            step: self.step,
            epoch: self.epoch,
            val_crps: self.val_crps,
            stats: self.stats.clone(),
            adam_steps: [self.opt_gen.step, self.opt_critic.step],
            tensors: table
                .iter()
                .map(|(name, shape, _)| TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let payload: usize = table.iter().map(|(_, _, d)| d.len() * 4).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, d) in &table {
            for v in *d {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_atomic(path, &self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// `path` is only used in error messages.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad(path, "not a checkpoint"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(path, format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(path, e.to_string()))?;
        if header.config.hash() != header.config_hash {
            return Err(bad(path, "config hash mismatch"));
        }
        let mut ck = Self::init(header.config, header.stats)?;
        let expected = tensor_table(&ck);
        if expected.len() != header.tensors.len() {
            return Err(bad(path, "tensor count does not match config"));
        }
        for ((name, shape, _), e) in expected.iter().zip(&header.tensors) {
            if *name != e.name || *shape != e.shape {
                return Err(bad(path, format!("unexpected tensor {} {:?}", e.name, e.shape)));
            }
        }
        let total: usize = expected.iter().map(|(_, s, _)| s.iter().product::<usize>()).sum();
        let payload = &bytes[16 + hlen..];
        if payload.len() != total * 4 {
            return Err(bad(
                path,
                format!("payload has {} bytes, expected {}", payload.len(), total * 4),
            ));
        }
        let mut floats = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        let mut fill = |dst: &mut [f32]| dst.iter_mut().for_each(|d| *d = floats.next().expect("length checked"));
        let fill_params = |p: &mut ParamSet, fill: &mut dyn FnMut(&mut [f32])| {
            p.tensors.iter_mut().for_each(|t: &mut Tensor<f32>| fill(&mut t.data));
        };
        fill_params(&mut ck.generator.params, &mut fill);
        fill_params(&mut ck.critic.params, &mut fill);
        for opt in [&mut ck.opt_gen, &mut ck.opt_critic] {
            opt.m.iter_mut().for_each(|d| fill(d));
            opt.v.iter_mut().for_each(|d| fill(d));
        }
        ck.opt_gen.step = header.adam_steps[0];
        ck.opt_critic.step = header.adam_steps[1];
        ck.step = header.step;
        ck.epoch = header.epoch;
        ck.val_crps = header.val_crps;
        Ok(ck)
    }
}
