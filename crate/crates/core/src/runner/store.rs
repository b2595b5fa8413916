//! Content-addressed cache of trained states and evaluations.
//!
//! Every unit of work is described by a JSON value. Its key is the SHA-256 of
//! that description together with the plan and a fingerprint of the dataset,
//! so a state computed for one experiment is reused by any other that needs
//! the same thing. Descriptions refer to their inputs by key, forming a chain
//! back to initialization.

use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::checkpoint::{decode_checkpoint, save_checkpoint, write_atomic};
use crate::data::{Dataset, Split};
use crate::engine::ParamSet;
use crate::error::{Error, Result};
use crate::instability::TrainPlan;
use crate::pruning::Mask;

/// Bumped whenever a change would alter cached results.
const CACHE_FORMAT: u32 = 1;

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the dataset's name, shape, inputs and labels.
pub fn dataset_fingerprint(d: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update(d.name().as_bytes());
    h.update((d.input_dim() as u64).to_le_bytes());
    h.update((d.classes() as u64).to_le_bytes());
    for split in [Split::Train, Split::Test] {
        let ex = d.split(split);
        h.update((ex.len() as u64).to_le_bytes());
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in ex.inputs().chunks(4096) {
            buf.clear();
            buf.extend(chunk.iter().flat_map(|v| v.to_le_bytes()));
            h.update(&buf);
        }
        let labels: Vec<u8> = ex.labels().iter().flat_map(|y| y.to_le_bytes()).collect();
        h.update(&labels);
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
    context: Value,
}

impl Store {
    pub fn new(dir: impl Into<PathBuf>, plan: &TrainPlan, dataset_fingerprint: &str) -> Self {
        Self {
            dir: dir.into(),
            context: json!({ "format": CACHE_FORMAT, "plan": plan, "dataset": dataset_fingerprint }),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(&self, unit: &Value) -> String {
        let text = serde_json::to_vec(&json!({ "context": self.context, "unit": unit })).expect("json values serialize");
        hex(&Sha256::digest(&text)[..16])
    }

    pub fn checkpoint_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.lmck"))
    }

    fn eval_path(&self, key: &str) -> PathBuf {
        self.dir.join("evals").join(format!("{key}.json"))
    }

    /// A stored state, or `None` when it is missing or unreadable.
    pub fn load(&self, key: &str) -> Option<(ParamSet, Option<Mask>)> {
        let bytes = std::fs::read(self.checkpoint_path(key)).ok()?;
        decode_checkpoint(&bytes).ok()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.checkpoint_path(key).is_file()
    }

    pub fn save(&self, key: &str, params: &ParamSet, mask: Option<&Mask>) -> Result<()> {
        save_checkpoint(params, mask, &self.checkpoint_path(key))
    }

    /// Cached vector of floats, stored as bit patterns so values survive
    /// exactly.
    pub fn memo_floats(&self, key: &str, compute: impl FnOnce() -> Result<Vec<f64>>) -> Result<Vec<f64>> {
        let path = self.eval_path(key);
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(bits) = serde_json::from_str::<Vec<u64>>(&text) {
                return Ok(bits.into_iter().map(f64::from_bits).collect());
            }
        }
        let values = compute()?;
        let bits: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
        let text = serde_json::to_string(&bits).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        write_atomic(&path, text.as_bytes())?;
        Ok(values)
    }
}
