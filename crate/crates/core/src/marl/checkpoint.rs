//! Checkpoints: one parameter file per network plus a `key = value`
//! manifest echoing the configuration, progress counters and RNG state.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::neural::{load_params, save_params};

pub const CHECKPOINT_MANIFEST: &str = "manifest.toml";
const FORMAT: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: u32,
    agents: usize,
    row_width: usize,
    episodes_done: usize,
    env_steps: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    #[serde(default)]
    extra: BTreeMap<String, String>,
    train: TrainConfig,
}

fn files(slot: usize) -> [(String, usize); 4] {
    [
        (format!("actor_{slot}.bin"), 0),
        (format!("critic_{slot}.bin"), 1),
        (format!("target_actor_{slot}.bin"), 2),
        (format!("target_critic_{slot}.bin"), 3),
    ]
}

/// Write every network and the manifest into `dir`, creating it if needed.
/// `extra` entries are stored verbatim for the caller's bookkeeping.
pub fn save_checkpoint(dir: &Path, trainer: &Trainer, extra: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for slot in 0..trainer.actors.len() {
        for (name, kind) in files(slot) {
            let path = dir.join(name);
            match kind {
                0 => save_params(&path, &trainer.actors[slot])?,
                1 => save_params(&path, &trainer.critics[slot])?,
                2 => save_params(&path, &trainer.target_actors[slot])?,
                _ => save_params(&path, &trainer.target_critics[slot])?,
            }
        }
    }
    let seed: String = trainer.rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
    let manifest = Manifest {
        format: FORMAT,
        agents: trainer.agents(),
        row_width: trainer.row_width(),
        episodes_done: trainer.episodes_done,
        env_steps: trainer.env_steps,
        rng_seed: seed,
        rng_stream: trainer.rng.get_stream(),
        rng_word_pos: trainer.rng.get_word_pos().to_string(),
        extra: extra.clone(),
        train: trainer.config().clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Rebuild a trainer from `dir`. Optimizer moments and the replay buffer are
/// not stored, so training resumes with fresh ones.
pub fn load_checkpoint(dir: &Path) -> Result<(Trainer, BTreeMap<String, String>)> {
    let path = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if m.format != FORMAT {
        return Err(Error::Format(format!("unsupported checkpoint format {}", m.format)));
    }
    let mut trainer = Trainer::new(m.train, m.agents, m.row_width, 0)?;
    for slot in 0..trainer.actors.len() {
        for (name, kind) in files(slot) {
            let path = dir.join(name);
            match kind {
                0 => load_params(&path, &mut trainer.actors[slot])?,
                1 => load_params(&path, &mut trainer.critics[slot])?,
                2 => load_params(&path, &mut trainer.target_actors[slot])?,
                _ => load_params(&path, &mut trainer.target_critics[slot])?,
            }
        }
    }
    let bad_rng = || Error::Format("bad RNG state in checkpoint manifest".into());
    if m.rng_seed.len() != 64 {
        return Err(bad_rng());
    }
    let mut seed = [0u8; 32];
    for (k, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&m.rng_seed[2 * k..2 * k + 2], 16).map_err(|_| bad_rng())?;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(m.rng_stream);
    rng.set_word_pos(m.rng_word_pos.parse().map_err(|_| bad_rng())?);
    trainer.rng = rng;
    trainer.episodes_done = m.episodes_done;
    trainer.env_steps = m.env_steps;
    Ok((trainer, m.extra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn round_trip_restores_networks_and_rng() {
        let config = TrainConfig {
            hidden: 4,
            share_weights: false,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(config, 2, 10, 42).unwrap();
        let _: u64 = trainer.rng.random();
        trainer.episodes_done = 3;
        let dir = tempfile::tempdir().unwrap();
        let mut extra = BTreeMap::new();
        extra.insert("seed".to_string(), "42".to_string());
        save_checkpoint(dir.path(), &trainer, &extra).unwrap();
        let (mut back, extra_back) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(extra_back, extra);
        assert_eq!(back.actors, trainer.actors);
        assert_eq!(back.target_critics, trainer.target_critics);
        assert_eq!(back.episodes_done, 3);
        assert_eq!(back.rng.random::<u64>(), trainer.rng.random::<u64>());
        let text = fs::read_to_string(dir.path().join(CHECKPOINT_MANIFEST)).unwrap();
        assert!(text.contains("gamma = 0.9"), "{text}");
    }
}
