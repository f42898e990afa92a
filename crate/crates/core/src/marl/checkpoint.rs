//! JSON checkpoints of a trained learner.

use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Adam, LearnerConfig, LearnerState, Mlp, QNetworks, ReplayBuffer};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: String },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub layer_sizes: Vec<usize>,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RngRecord {
    /// Hex-encoded 32-byte key.
    pub seed: String,
    pub stream: u64,
    /// Decimal string; the position does not fit a JSON double.
    pub word_pos: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub hyperparameters: LearnerConfig,
    pub alpha: f64,
    pub delta: f64,
    pub lambda: f64,
    pub episodes_done: usize,
    pub updates: u64,
    pub train_seed: u64,
    pub online: Vec<NetworkRecord>,
    pub target: Vec<NetworkRecord>,
    pub rng: RngRecord,
}

fn records(nets: &QNetworks) -> Vec<NetworkRecord> {
    let mut out = vec![NetworkRecord {
        name: "cluster".into(),
        layer_sizes: nets.cluster.sizes().to_vec(),
        params: nets.cluster.params().to_vec(),
    }];
    for (i, a) in nets.agents.iter().enumerate() {
        out.push(NetworkRecord {
            name: format!("agent{i}"),
            layer_sizes: a.sizes().to_vec(),
            params: a.params().to_vec(),
        });
    }
    out
}

fn networks(records: &[NetworkRecord]) -> Result<QNetworks, CheckpointError> {
    let mut mlps = records.iter().map(|r| {
        Mlp::from_params(r.layer_sizes.clone(), r.params.clone())
            .ok_or_else(|| CheckpointError::Malformed(format!("network {} has inconsistent sizes", r.name)))
    });
    let cluster = mlps
        .next()
        .ok_or_else(|| CheckpointError::Malformed("no networks stored".into()))??;
    let agents = mlps.collect::<Result<Vec<_>, _>>()?;
    if agents.is_empty() {
        return Err(CheckpointError::Malformed("no agent networks stored".into()));
    }
    let nets = QNetworks { cluster, agents };
    if !nets.is_finite() {
        return Err(CheckpointError::Malformed("non-finite parameter".into()));
    }
    Ok(nets)
}

impl Checkpoint {
    pub fn from_state(state: &LearnerState) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            hyperparameters: state.config.clone(),
            alpha: state.alpha,
            delta: state.delta,
            lambda: state.lambda,
            episodes_done: state.episodes_done,
            updates: state.updates,
            train_seed: state.seed,
            online: records(&state.online),
            target: records(&state.target),
            rng: RngRecord {
                seed: hex::encode(state.rng.get_seed()),
                stream: state.rng.get_stream(),
                word_pos: state.rng.get_word_pos().to_string(),
            },
        }
    }

    pub fn online_networks(&self) -> Result<QNetworks, CheckpointError> {
        networks(&self.online)
    }

    /// Rebuilds a learner that continues from this checkpoint. Optimizer
    /// moments and replay contents are not stored and start fresh.
    pub fn to_state(&self) -> Result<LearnerState, CheckpointError> {
        use rand::SeedableRng;
        let online = networks(&self.online)?;
        let target = networks(&self.target)?;
        if online.block_sizes() != target.block_sizes() {
            return Err(CheckpointError::Malformed("online and target shapes differ".into()));
        }
        let key: [u8; 32] = hex::decode(&self.rng.seed)
            .ok()
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| CheckpointError::Malformed("rng seed must be 32 hex bytes".into()))?;
        let word_pos: u128 = self
            .rng
            .word_pos
            .parse()
            .map_err(|_| CheckpointError::Malformed("rng word_pos".into()))?;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.rng.stream);
        rng.set_word_pos(word_pos);
        Ok(LearnerState {
            config: self.hyperparameters.clone(),
            alpha: self.alpha,
            delta: self.delta,
            optimizer: Adam::new(online.block_sizes()),
            online,
            target,
            lambda: self.lambda,
            replay: ReplayBuffer::new(self.hyperparameters.memory_capacity),
            episodes_done: self.episodes_done,
            updates: self.updates,
            seed: self.train_seed,
            rng,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    /// Parses a checkpoint. Anything that is not a document of the current
    /// version, including unreadable JSON, is a version mismatch.
    pub fn from_json(text: &str) -> Result<Self, CheckpointError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CheckpointError::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: format!("unparseable ({e})"),
        })?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => {}
            other => {
                return Err(CheckpointError::VersionMismatch {
                    expected: CHECKPOINT_VERSION,
                    found: other.map_or("none".into(), |v| v.to_string()),
                })
            }
        }
        serde_json::from_value(value).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn state() -> LearnerState {
        let cfg = LearnerConfig {
            agent_hidden: vec![4],
            cluster_hidden: vec![5],
            lambda_init: 0.75,
            ..LearnerConfig::default()
        };
        let mut s = LearnerState::new(cfg, 2, 6, 0.85, 0.025, 11).unwrap();
        let _: u64 = s.rng.random();
        s
    }

    #[test]
    fn round_trip_preserves_learner() {
        let s = state();
        let ck = Checkpoint::from_state(&s);
        let back = Checkpoint::from_json(&ck.to_json()).unwrap();
        assert_eq!(back, ck);
        let mut restored = back.to_state().unwrap();
        assert_eq!(restored.online, s.online);
        assert_eq!(restored.target, s.target);
        assert_eq!(restored.lambda, 0.75);
        let mut original = s.rng.clone();
        assert_eq!(restored.rng.random::<u64>(), original.random::<u64>());
    }

    #[test]
    fn corrupted_file_is_version_mismatch() {
        assert!(matches!(
            Checkpoint::from_json("{not json"),
            Err(CheckpointError::VersionMismatch { .. })
        ));
        let mut v: serde_json::Value = serde_json::from_str(&Checkpoint::from_state(&state()).to_json()).unwrap();
        v["version"] = 99.into();
        assert!(matches!(
            Checkpoint::from_json(&v.to_string()),
            Err(CheckpointError::VersionMismatch { .. })
        ));
    }

    #[test]
    fn inconsistent_shapes_are_rejected() {
        let mut ck = Checkpoint::from_state(&state());
        ck.online[1].params.pop();
        assert!(matches!(ck.online_networks(), Err(CheckpointError::Malformed(_))));
    }
}
