//! Checkpoint directories and run manifests.
//!
//! A checkpoint holds `config.txt` (the resolved run configuration with the
//! vocabulary hash), `vocab.txt`, `stopwords.txt`, `model.safetensors`
//! and, for models with a posterior, `inference.safetensors`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::corpus::{StopwordSet, Vocabulary};
use crate::error::{Error, Result};
use crate::inference::{posterior_block_mask, InferenceNet};
use crate::model::Generator;
use crate::tape::{Matrix, ParamSet};
use crate::training::TrainMode;

pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const STOPWORDS_FILE: &str = "stopwords.txt";
pub const MODEL_FILE: &str = "model.safetensors";
pub const INFERENCE_FILE: &str = "inference.safetensors";

/// Serializes a parameter set as little-endian f64 tensors.
pub fn params_to_bytes(set: &ParamSet) -> Result<Vec<u8>> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = set
        .iter()
        .map(|(_, name, m)| {
            let bytes = m.data().iter().flat_map(|x| x.to_le_bytes()).collect();
            (name.to_string(), vec![m.rows(), m.cols()], bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, &None).map_err(|e| Error::Checkpoint(e.to_string()))
}

/// Reads tensors back; parameters are ordered by name.
pub fn params_from_bytes(bytes: &[u8]) -> Result<ParamSet> {
    let tensors = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut names = tensors.names();
    names.sort();
    let mut set = ParamSet::new();
    for name in names {
        let t = tensors.tensor(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if t.dtype() != Dtype::F64 || t.shape().len() != 2 {
            return Err(Error::Checkpoint(format!("tensor `{name}` is not a 2-d f64 matrix")));
        }
        let data: Vec<f64> = t
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        set.add(name.as_str(), Matrix::from_vec(t.shape()[0], t.shape()[1], data));
    }
    Ok(set)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A trained model with everything needed to rebuild it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub stopwords: StopwordSet,
    pub model: Generator,
    pub inference: Option<InferenceNet>,
}

impl Checkpoint {
    /// Writes all files into `dir`, creating it if needed, and returns the
    /// checkpoint id.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<String> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut config = self.config.clone();
        config.vocab_hash = Some(self.vocab.hash());
        write(&dir.join(CONFIG_FILE), config.to_text())?;
        write(&dir.join(VOCAB_FILE), self.vocab.to_text())?;
        write(&dir.join(STOPWORDS_FILE), self.stopwords.to_text())?;
        write(&dir.join(MODEL_FILE), params_to_bytes(self.model.params())?)?;
        let inference_path = dir.join(INFERENCE_FILE);
        match &self.inference {
            Some(inf) => write(&inference_path, params_to_bytes(inf.params())?)?,
            None if inference_path.exists() => {
                fs::remove_file(&inference_path).map_err(|e| Error::io(&inference_path, e))?
            }
            None => {}
        }
        checkpoint_id(dir)
    }

    /// Loads and validates a checkpoint directory.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::Checkpoint(format!("{} is not a directory", dir.display())));
        }
        let config = RunConfig::parse(&read_text(&dir.join(CONFIG_FILE))?)?;
        let vocab = Vocabulary::from_text(&read_text(&dir.join(VOCAB_FILE))?)?;
        let expected = config
            .vocab_hash
            .as_deref()
            .ok_or_else(|| Error::Checkpoint("config has no vocab_hash".into()))?;
        if vocab.hash() != expected {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash {} does not match the configured {expected}",
                vocab.hash()
            )));
        }
        let stopwords = StopwordSet::parse(&read_text(&dir.join(STOPWORDS_FILE))?);
        let params = params_from_bytes(&read(&dir.join(MODEL_FILE))?)?;
        let model = Generator::from_params(config.model_config(vocab.len()), params)
            .map_err(|e| Error::Checkpoint(format!("model parameters: {e}")))?;
        let inference_path = dir.join(INFERENCE_FILE);
        let inference = if inference_path.exists() {
            let params = params_from_bytes(&read(&inference_path)?)?;
            let blocked = posterior_block_mask(&vocab, &stopwords);
            Some(
                InferenceNet::from_params(config.inference_config(vocab.len()), params, blocked)
                    .map_err(|e| Error::Checkpoint(format!("inference parameters: {e}")))?,
            )
        } else {
            None
        };
        if config.mode.is_latent() && inference.is_none() {
            return Err(Error::Checkpoint(format!(
                "mode {} needs {INFERENCE_FILE}",
                config.mode
            )));
        }
        Ok(Checkpoint {
            config,
            vocab,
            stopwords,
            model,
            inference,
        })
    }

    /// Refuses a requested mode that decodes differently from the trained one.
    pub fn check_mode(&self, requested: TrainMode) -> Result<()> {
        let trained = self.config.mode;
        if requested.decoder() != trained.decoder() || requested.uses_plan() != trained.uses_plan() {
            return Err(Error::Checkpoint(format!(
                "checkpoint trained as {trained} cannot run as {requested}"
            )));
        }
        Ok(())
    }

    /// Hash over the vocabulary and every architecture field.
    pub fn compatibility_hash(&self) -> String {
        let c = self.model.config();
        let arch = format!(
            "{}|{}|{}|{}|{}|{}",
            self.vocab.hash(),
            c.vocab_size,
            c.embed_dim,
            c.hidden_dim,
            c.layers,
            c.decoder
        );
        sha256_hex(arch.as_bytes())
    }
}

/// Content id of a saved checkpoint: the first 12 hex digits of a hash over
/// its files in a fixed order.
pub fn checkpoint_id(dir: impl AsRef<Path>) -> Result<String> {
    let dir = dir.as_ref();
    let mut hasher = Sha256::new();
    for name in [CONFIG_FILE, VOCAB_FILE, STOPWORDS_FILE, MODEL_FILE, INFERENCE_FILE] {
        let path = dir.join(name);
        if path.exists() {
            hasher.update(name.as_bytes());
            hasher.update(read(&path)?);
        }
    }
    Ok(hex::encode(hasher.finalize())[..12].to_string())
}

/// A produced checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub stage: String,
    pub path: PathBuf,
    pub id: String,
}

/// Everything needed to reproduce a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: BTreeMap<String, String>,
    /// sha256 of every input file, keyed by path.
    pub corpus_hashes: BTreeMap<String, String>,
    pub vocab_hash: String,
    pub seed: u64,
    pub mode: String,
    /// Last completed stage.
    pub stage: String,
    pub checkpoints: Vec<ArtifactRecord>,
    pub deterministic: bool,
    pub version: String,
}

impl RunManifest {
    pub fn new(config: &RunConfig, vocab_hash: String, seed: u64) -> Self {
        RunManifest {
            config: config
                .entries()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            corpus_hashes: BTreeMap::new(),
            vocab_hash,
            seed,
            mode: config.mode.to_string(),
            stage: "none".into(),
            checkpoints: Vec::new(),
            deterministic: true,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn hash_input(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let digest = sha256_hex(&read(path)?);
        self.corpus_hashes.insert(path.display().to_string(), digest);
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write(path, serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Ok(serde_json::from_str(&read_text(path)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn params_roundtrip_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut set = ParamSet::new();
        set.add("b", Matrix::uniform(2, 3, 0.5, &mut rng));
        set.add("a", Matrix::uniform(1, 4, 0.5, &mut rng));
        let back = params_from_bytes(&params_to_bytes(&set).unwrap()).unwrap();
        for name in ["a", "b"] {
            let x = set.get(set.find(name).unwrap());
            let y = back.get(back.find(name).unwrap());
            assert_eq!(x.shape(), y.shape());
            assert!(x.data().iter().zip(y.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(params_from_bytes(b"not a tensor file").is_err());
    }
}
