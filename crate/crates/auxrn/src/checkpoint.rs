//! Versioned JSON checkpoints.
//!
//! A checkpoint carries the full config text and its SHA-256, every
//! parameter array by name, the optimizer velocity and the iteration. Every
//! random stream is derived from `(seed, iteration)`, so those two numbers
//! are the whole rng state and resuming replays the same batches.

use std::path::Path;

use auxrn_core::config::TrainConfig;
use auxrn_core::params::ParamStore;
use auxrn_core::training::Snapshot;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{json, Error, Result};
use crate::formats::{read_text, write_text};

pub const VERSION: u32 = 1;

pub fn config_hash(cfg: &TrainConfig) -> String {
    hex::encode(Sha256::digest(cfg.to_text().as_bytes()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub config: Vec<[String; 2]>,
    pub iteration: usize,
    pub val_unseen_spl: Option<f64>,
    pub rng_state: RngState,
    pub params: Vec<ParamRecord>,
    pub velocity: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn new(cfg: &TrainConfig, snapshot: &Snapshot) -> Self {
        Self {
            version: VERSION,
            config_hash: config_hash(cfg),
            config: cfg
                .entries()
                .into_iter()
                .map(|(k, v)| [k.to_string(), v])
                .collect(),
            iteration: snapshot.iteration,
            val_unseen_spl: snapshot.val_unseen_spl,
            rng_state: RngState {
                seed: cfg.seed,
                iteration: snapshot.iteration,
            },
            params: snapshot
                .store
                .iter()
                .map(|(_, p)| ParamRecord {
                    name: p.name.clone(),
                    rows: p.rows,
                    cols: p.cols,
                    data: p.data.clone(),
                })
                .collect(),
            velocity: snapshot.velocity.clone(),
        }
    }

    pub fn config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for [k, v] in &self.config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn snapshot(&self) -> Snapshot {
        let mut store = ParamStore::new();
        for p in &self.params {
            store.insert(&p.name, p.rows, p.cols, p.data.clone());
        }
        Snapshot {
            iteration: self.iteration,
            store,
            velocity: self.velocity.clone(),
            val_unseen_spl: self.val_unseen_spl,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.version != VERSION {
            return Err(Error::Version(self.version));
        }
        let expected = config_hash(&self.config()?);
        if expected != self.config_hash {
            return Err(Error::ConfigHash {
                expected,
                found: self.config_hash.clone(),
            });
        }
        for p in &self.params {
            if p.data.len() != p.rows * p.cols {
                return Err(Error::Invalid(format!("parameter {} has wrong size", p.name)));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        crate::formats::to_json(self, "checkpoint")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(json("checkpoint"))?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&read_text(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use auxrn_core::training::Trainer;

    fn small() -> TrainConfig {
        TrainConfig {
            hidden: 4,
            embed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let t = Trainer::new(small()).unwrap();
        let c = Checkpoint::new(&t.config, &t.snapshot(Some(0.125)));
        let text = c.to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), text);
        assert_eq!(back.config().unwrap(), t.config);
        assert_eq!(back.snapshot().store, t.store);
    }

    #[test]
    fn tampered_config_is_detected() {
        let t = Trainer::new(small()).unwrap();
        let mut c = Checkpoint::new(&t.config, &t.snapshot(None));
        c.config[0][1] = "12345".into();
        let text = serde_json::to_string(&c).unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::ConfigHash { .. })));
        c = Checkpoint::new(&t.config, &t.snapshot(None));
        c.version = 9;
        let text = serde_json::to_string(&c).unwrap();
        assert!(matches!(Checkpoint::from_json(&text), Err(Error::Version(9))));
    }
}
