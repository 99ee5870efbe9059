//! Binary checkpoint container: a JSON meta header (format version, config
//! hash, vocabularies, optimizer settings, RNG state, step counter),
//! length-prefixed f64 parameter blobs with names, the Adam moments, and a
//! trailing SHA-256 checksum. Reloading restores forward outputs bit-exactly.

use std::collections::BTreeMap;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{model_config_hash, LossToggles, ModelConfig, OptimizerConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::training::{Adam, Trainer};

const MAGIC: &[u8; 8] = b"FSRELCK1";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    config_hash: u64,
    step: u64,
    model: ModelConfig,
    categories: Vec<String>,
    predicates: Vec<String>,
    optimizer: OptimizerConfig,
    toggles: LossToggles,
    opt_step: u64,
    rng_seed: Vec<u8>,
    rng_word_pos: (u64, u64),
    rng_stream: u64,
}

fn write_blob_map(out: &mut Vec<u8>, map: &BTreeMap<String, (bool, Vec<f64>)>) {
    out.extend((map.len() as u32).to_le_bytes());
    for (name, (frozen, values)) in map {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.push(u8::from(*frozen));
        out.extend((values.len() as u64).to_le_bytes());
        for v in values {
            out.extend(v.to_le_bytes());
        }
    }
}

fn read_blob_map(cur: &mut Cursor<&[u8]>) -> Result<BTreeMap<String, (bool, Vec<f64>)>> {
    let mut out = BTreeMap::new();
    let n = read_u32(cur)?;
    for _ in 0..n {
        let name_len = read_u32(cur)? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)
            .map_err(|_| Error::Integrity("truncated checkpoint".into()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Integrity("non-utf8 parameter name".into()))?;
        let mut frozen = [0u8; 1];
        cur.read_exact(&mut frozen)
            .map_err(|_| Error::Integrity("truncated checkpoint".into()))?;
        let len = read_u64(cur)? as usize;
        let mut values = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            cur.read_exact(&mut buf)
                .map_err(|_| Error::Integrity("truncated checkpoint".into()))?;
            values.push(f64::from_le_bytes(buf));
        }
        out.insert(name, (frozen[0] != 0, values));
    }
    Ok(out)
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut buf = [0u8; 4];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Integrity("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut buf = [0u8; 8];
    cur.read_exact(&mut buf)
        .map_err(|_| Error::Integrity("truncated checkpoint".into()))?;
    Ok(u64::from_le_bytes(buf))
}

pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let model = &trainer.model;
    let word_pos = trainer.episode_rng.get_word_pos();
    let meta = CheckpointMeta {
        version: VERSION,
        config_hash: model.config_hash,
        step: trainer.step,
        model: model.cfg.clone(),
        categories: model.categories.clone(),
        predicates: model.predicates.clone(),
        optimizer: trainer.optimizer.cfg.clone(),
        toggles: trainer.toggles.clone(),
        opt_step: trainer.optimizer.step,
        rng_seed: trainer.episode_rng.get_seed().to_vec(),
        rng_word_pos: ((word_pos >> 64) as u64, word_pos as u64),
        rng_stream: trainer.episode_rng.get_stream(),
    };

    let mut body = Vec::new();
    body.extend_from_slice(MAGIC);
    let meta_json = serde_json::to_vec(&meta)?;
    body.extend((meta_json.len() as u64).to_le_bytes());
    body.extend(meta_json);

    let params: BTreeMap<String, (bool, Vec<f64>)> = model
        .params
        .iter()
        .map(|(k, p)| (k.to_string(), (p.frozen, p.values.clone())))
        .collect();
    write_blob_map(&mut body, &params);
    let adam_m: BTreeMap<String, (bool, Vec<f64>)> = trainer
        .optimizer
        .m
        .iter()
        .map(|(k, v)| (k.clone(), (false, v.clone())))
        .collect();
    write_blob_map(&mut body, &adam_m);
    let adam_v: BTreeMap<String, (bool, Vec<f64>)> = trainer
        .optimizer
        .v
        .iter()
        .map(|(k, v)| (k.clone(), (false, v.clone())))
        .collect();
    write_blob_map(&mut body, &adam_v);

    let digest = Sha256::digest(&body);
    let mut file = std::fs::File::create(path.as_ref())?;
    file.write_all(&body)?;
    file.write_all(&digest)?;
    Ok(())
}

/// Load a checkpoint. `expected_hash` is the config hash the caller derived
/// from its own configuration; a mismatch is refused unless `force` is set,
/// in which case the checkpoint's stored configuration wins.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected_hash: Option<u64>,
    force: bool,
) -> Result<Trainer> {
    let bytes = std::fs::read(path.as_ref())?;
    if bytes.len() < 32 + MAGIC.len() {
        return Err(Error::Integrity("checkpoint too short".into()));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != checksum {
        return Err(Error::Integrity("checkpoint checksum mismatch".into()));
    }
    if &body[..MAGIC.len()] != MAGIC {
        return Err(Error::Integrity("not a checkpoint file".into()));
    }

    let mut cur = Cursor::new(&body[MAGIC.len()..]);
    let meta_len = read_u64(&mut cur)? as usize;
    let mut meta_json = vec![0u8; meta_len];
    cur.read_exact(&mut meta_json)
        .map_err(|_| Error::Integrity("truncated checkpoint".into()))?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_json)?;
    if meta.version != VERSION {
        return Err(Error::Config(format!(
            "checkpoint format version {} unsupported",
            meta.version
        )));
    }
    let stored_hash = model_config_hash(&meta.model, &meta.categories, &meta.predicates);
    if stored_hash != meta.config_hash {
        return Err(Error::Integrity("checkpoint config hash corrupted".into()));
    }
    if let Some(expected) = expected_hash {
        if expected != meta.config_hash && !force {
            return Err(Error::Config(format!(
                "config hash mismatch: current {expected:#x}, checkpoint {:#x} \
                 (pass --force to load anyway)",
                meta.config_hash
            )));
        }
    }

    let params = read_blob_map(&mut cur)?;
    let adam_m = read_blob_map(&mut cur)?;
    let adam_v = read_blob_map(&mut cur)?;

    let mut model = Model::new(&meta.model, meta.categories, meta.predicates, 0)?;
    for (name, (frozen, values)) in &params {
        let slot = model
            .params
            .values_mut(name)
            .ok_or_else(|| Error::Config(format!("checkpoint has unknown parameter {name}")))?;
        if slot.len() != values.len() {
            return Err(Error::Config(format!(
                "parameter {name} has {} entries, model expects {}",
                values.len(),
                slot.len()
            )));
        }
        *slot = values.clone();
        model.params.set_frozen(name, *frozen);
    }
    for name in model.params.names().map(str::to_string).collect::<Vec<_>>() {
        if !params.contains_key(&name) {
            return Err(Error::Config(format!("checkpoint misses parameter {name}")));
        }
    }

    let mut optimizer = Adam::new(meta.optimizer);
    optimizer.step = meta.opt_step;
    optimizer.m = adam_m.into_iter().map(|(k, (_, v))| (k, v)).collect();
    optimizer.v = adam_v.into_iter().map(|(k, (_, v))| (k, v)).collect();

    let seed: [u8; 32] = meta
        .rng_seed
        .as_slice()
        .try_into()
        .map_err(|_| Error::Integrity("bad rng seed length".into()))?;
    let mut episode_rng = ChaCha8Rng::from_seed(seed);
    episode_rng.set_stream(meta.rng_stream);
    episode_rng.set_word_pos(((meta.rng_word_pos.0 as u128) << 64) | meta.rng_word_pos.1 as u128);

    Ok(Trainer {
        model,
        optimizer,
        toggles: meta.toggles,
        episode_rng,
        step: meta.step,
    })
}
