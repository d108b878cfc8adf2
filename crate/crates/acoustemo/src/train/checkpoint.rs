//! Checkpoints: every parameter as a named tensor in the binary container,
//! plus a config record (dims, ranks, vocabulary, variant) serialized as
//! JSON bytes under a reserved entry name.

use super::{Pipeline, Result, TrainConfig, TrainError};
use crate::io::{read_tensor_file, write_tensor_file};
use crate::lm::Vocab;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::path::Path;

const CONFIG_ENTRY: &str = "__meta.config_json";

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    train: TrainConfig,
    feat_dim: usize,
    vocab: Vec<String>,
}

pub fn save_checkpoint(path: &Path, pipeline: &Pipeline) -> Result<()> {
    let config = CheckpointConfig {
        train: pipeline.cfg.clone(),
        feat_dim: pipeline.feat_dim,
        vocab: pipeline.lm.vocab.tokens().to_vec(),
    };
    let json = serde_json::to_string(&config).expect("config serializes");
    let bytes: Vec<f64> = json.bytes().map(|b| b as f64).collect();
    let config_tensor = Tensor::new(vec![bytes.len()], bytes).expect("byte tensor");

    let mut entries: Vec<(&str, &Tensor)> =
        pipeline.set.iter().map(|(_, p)| (p.name.as_str(), &p.tensor)).collect();
    entries.push((CONFIG_ENTRY, &config_tensor));
    write_tensor_file(path, &entries)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Pipeline> {
    let entries = read_tensor_file(path)?;
    let config_tensor = entries
        .iter()
        .find(|(n, _)| n == CONFIG_ENTRY)
        .map(|(_, t)| t)
        .ok_or_else(|| TrainError::CheckpointMismatch {
            detail: format!("no {CONFIG_ENTRY} entry in {}", path.display()),
        })?;
    let bytes: Vec<u8> = config_tensor
        .data()
        .iter()
        .map(|&v| {
            let b = v as u8;
            if (b as f64 - v).abs() > 0.0 {
                return Err(TrainError::CheckpointMismatch {
                    detail: "config record is not a byte sequence".into(),
                });
            }
            Ok(b)
        })
        .collect::<Result<_>>()?;
    let config: CheckpointConfig = serde_json::from_slice(&bytes).map_err(|e| {
        TrainError::CheckpointMismatch { detail: format!("config record does not parse: {e}") }
    })?;

    // Rebuild the registry with the stored shapes, then overwrite every
    // parameter from the file. Names must match one-to-one.
    let vocab = Vocab::from_tokens(config.vocab);
    let mut pipeline = Pipeline::init(&config.train, config.feat_dim, vocab)?;
    let mut used = vec![false; entries.len()];
    for (id, name, dims) in pipeline
        .set
        .iter()
        .map(|(id, p)| (id, p.name.clone(), p.tensor.dims().to_vec()))
        .collect::<Vec<_>>()
    {
        let idx = entries.iter().position(|(n, _)| *n == name).ok_or_else(|| {
            TrainError::CheckpointMismatch { detail: format!("missing tensor {name:?}") }
        })?;
        let tensor = &entries[idx].1;
        if tensor.dims() != dims {
            return Err(TrainError::CheckpointMismatch {
                detail: format!("{name:?} is {:?}, expected {:?}", tensor.dims(), dims),
            });
        }
        pipeline.set.set_data(id, tensor.data().to_vec());
        used[idx] = true;
    }
    for (i, (name, _)) in entries.iter().enumerate() {
        if !used[i] && name != CONFIG_ENTRY {
            return Err(TrainError::CheckpointMismatch {
                detail: format!("unexpected tensor {name:?} in checkpoint"),
            });
        }
    }
    Ok(pipeline)
}
