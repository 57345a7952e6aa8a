//! Model checkpoints: a `checkpoint.json` manifest (config echo, embedding
//! input width, parameter name -> file map) plus one FTEN file per
//! parameter under `params/`.

use std::fs;
use std::path::Path;

use coseg_core::model::{EncoderBackend, ModelConfig, SegModel};
use coseg_core::tensor::ParamSet;
use coseg_core::{rng, CoreError};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ften::{read_ften, write_ften};
use crate::io_util::write_dir_atomic;

/// JSON mirror of [`ModelConfig`] plus evaluation episode count; all
/// fields optional with the model defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub channels: usize,
    pub embed_dim: usize,
    pub depth: usize,
    /// `"file"` or `"toy"`.
    pub encoder: String,
    pub toy_in_channels: usize,
    pub toy_mid_channels: usize,
    pub upsample: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub iterations: usize,
    pub seed: u64,
    pub use_word_embeddings: bool,
    pub tie_blocks: bool,
    /// Episodes sampled per evaluation run.
    pub eval_episodes: usize,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            channels: m.channels,
            embed_dim: m.embed_dim,
            depth: m.depth,
            encoder: "file".into(),
            toy_in_channels: m.toy_in_channels,
            toy_mid_channels: m.toy_mid_channels,
            upsample: m.upsample,
            learning_rate: m.learning_rate,
            momentum: m.momentum,
            iterations: m.iterations,
            seed: m.seed,
            use_word_embeddings: m.use_word_embeddings,
            tie_blocks: m.tie_blocks,
            eval_episodes: 100,
        }
    }
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::parse_line(path, e.line() as u64, e.to_string()))
    }

    pub fn to_model_config(&self) -> Result<ModelConfig> {
        let encoder = match self.encoder.as_str() {
            "file" => EncoderBackend::File,
            "toy" => EncoderBackend::Toy,
            other => {
                return Err(Error::Core(CoreError::Config(format!(
                    "unknown encoder backend {other:?}; expected \"file\" or \"toy\""
                ))))
            }
        };
        let cfg = ModelConfig {
            channels: self.channels,
            embed_dim: self.embed_dim,
            depth: self.depth,
            encoder,
            toy_in_channels: self.toy_in_channels,
            toy_mid_channels: self.toy_mid_channels,
            upsample: self.upsample,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            iterations: self.iterations,
            seed: self.seed,
            use_word_embeddings: self.use_word_embeddings,
            tie_blocks: self.tie_blocks,
        };
        cfg.validate().map_err(Error::Core)?;
        Ok(cfg)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    config: ConfigFile,
    embed_input_dim: usize,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    file: String,
}

/// Saves the model and its parameter values to a fresh directory.
pub fn save_checkpoint(
    dir: &Path,
    config: &ConfigFile,
    model: &SegModel,
    set: &ParamSet,
) -> Result<()> {
    write_dir_atomic(dir, |staging| {
        fs::create_dir(staging.join("params")).map_err(|e| Error::io(staging, e))?;
        let mut entries = Vec::with_capacity(set.len());
        for (i, (_, param)) in set.iter().enumerate() {
            let file = format!("params/p{i:03}.ften");
            write_ften(&staging.join(&file), &param.tensor)?;
            entries.push(ParamEntry {
                name: param.name().to_string(),
                file,
            });
        }
        let manifest = CheckpointManifest {
            config: config.clone(),
            embed_input_dim: model.embed_input_dim,
            params: entries,
        };
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        crate::io_util::write_atomic(&staging.join("checkpoint.json"), json.as_bytes())
    })
}

/// Rebuilds the model structure from the config echo and overwrites every
/// parameter with the stored values. Name sets and shapes must match the
/// rebuilt structure exactly.
pub fn load_checkpoint(dir: &Path) -> Result<(ConfigFile, SegModel, ParamSet)> {
    let manifest_path = dir.join("checkpoint.json");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse_line(&manifest_path, e.line() as u64, e.to_string()))?;

    let cfg = manifest.config.to_model_config()?;
    let mut set = ParamSet::new();
    // Structure only; every value is overwritten below.
    let mut throwaway = rng::stream(cfg.seed, rng::streams::INIT);
    let model = SegModel::init(cfg, manifest.embed_input_dim, &mut set, &mut throwaway)
        .map_err(Error::Core)?;

    if manifest.params.len() != set.len() {
        return Err(Error::Core(CoreError::Data(format!(
            "checkpoint stores {} parameters, model has {}",
            manifest.params.len(),
            set.len()
        ))));
    }
    for entry in &manifest.params {
        let Some((pid, param)) = set.by_name(&entry.name) else {
            return Err(Error::Core(CoreError::Data(format!(
                "checkpoint parameter {:?} does not exist in the model",
                entry.name
            ))));
        };
        let stored = read_ften(&dir.join(&entry.file))?;
        if stored.shape() != param.tensor.shape() {
            return Err(Error::Core(CoreError::Data(format!(
                "parameter {:?}: stored shape {:?} vs model shape {:?}",
                entry.name,
                stored.shape(),
                param.tensor.shape()
            ))));
        }
        set.get_mut(pid)
            .tensor
            .data_mut()
            .copy_from_slice(stored.data());
    }
    Ok((manifest.config, model, set))
}
