//! Flat `key = value` run configuration.
//!
//! Every field is addressable by key; unknown keys are rejected. `#` starts a
//! comment line.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::CorpusFormat;
use crate::error::{Error, Result};
use crate::inference::{InferenceConfig, PosteriorMode};
use crate::model::{DecoderMode, ModelConfig};
use crate::training::{TrainMode, TrainingConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub init_scale: f64,
    pub inference_embed_dim: usize,
    pub inference_hidden_dim: usize,
    pub inference_title: bool,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            embed_dim: 1000,
            hidden_dim: 1000,
            layers: 3,
            dropout: 0.3,
            init_scale: 0.1,
            inference_embed_dim: 1000,
            inference_hidden_dim: 1000,
            inference_title: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationConfig {
    pub top_p: f64,
    pub plan_top_p: f64,
    pub num_sentences: usize,
    pub max_sentence_len: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            top_p: 0.6,
            plan_top_p: 0.6,
            num_sentences: 5,
            max_sentence_len: 30,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationConfig {
    pub iw_samples: usize,
    /// Stories per DIV-B pool; 0 uses the whole split.
    pub divb_pool: usize,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            iw_samples: 20,
            divb_pool: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: TrainMode,
    pub seed: Option<u64>,
    pub corpus_format: CorpusFormat,
    pub min_count: usize,
    pub max_sentences: usize,
    /// Stopword file; empty means the bundled English list.
    pub stopwords: Option<String>,
    pub model: ModelSettings,
    pub training: TrainingConfig,
    pub generation: GenerationConfig,
    pub evaluation: EvaluationConfig,
    /// Set in checkpoints; verified against the saved vocabulary.
    pub vocab_hash: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: TrainMode::LapCinfUdec,
            seed: None,
            corpus_format: CorpusFormat::Titled,
            min_count: 2,
            max_sentences: 10,
            stopwords: None,
            model: ModelSettings::default(),
            training: TrainingConfig::default(),
            generation: GenerationConfig::default(),
            evaluation: EvaluationConfig::default(),
            vocab_hash: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn optional(value: &str) -> Option<String> {
    (!value.is_empty()).then(|| value.to_string())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies only the keys present in `text`, leaving the rest as they are.
    /// Does not validate.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` assignment.
    pub fn apply_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected `key=value`, got `{assignment}`")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.training;
        let g = &mut self.generation;
        let e = &mut self.evaluation;
        match key {
            "mode" => self.mode = parse(key, value)?,
            "seed" => {
                self.seed = match value {
                    "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "corpus_format" => self.corpus_format = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "max_sentences" => self.max_sentences = parse(key, value)?,
            "stopwords" => self.stopwords = optional(value),
            "embed_dim" => m.embed_dim = parse(key, value)?,
            "hidden_dim" => m.hidden_dim = parse(key, value)?,
            "layers" => m.layers = parse(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "init_scale" => m.init_scale = parse(key, value)?,
            "inference_embed_dim" => m.inference_embed_dim = parse(key, value)?,
            "inference_hidden_dim" => m.inference_hidden_dim = parse(key, value)?,
            "inference_title" => m.inference_title = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "clip_norm" => t.clip_norm = parse(key, value)?,
            "temporal_weight" => t.temporal_weight = parse(key, value)?,
            "baseline_alpha" => t.baseline_alpha = parse(key, value)?,
            "entropy_weight" => t.entropy_weight = parse(key, value)?,
            "free_bits" => t.free_bits = parse(key, value)?,
            "kl_floor" => t.kl_floor = parse(key, value)?,
            "reconstruction_samples" => t.reconstruction_samples = parse(key, value)?,
            "stage1_epochs" => t.stage1_epochs = parse(key, value)?,
            "stage2_epochs" => t.stage2_epochs = parse(key, value)?,
            "stage3_epochs" => t.stage3_epochs = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "top_p" => g.top_p = parse(key, value)?,
            "plan_top_p" => g.plan_top_p = parse(key, value)?,
            "num_sentences" => g.num_sentences = parse(key, value)?,
            "max_sentence_len" => g.max_sentence_len = parse(key, value)?,
            "iw_samples" => e.iw_samples = parse(key, value)?,
            "divb_pool" => e.divb_pool = parse(key, value)?,
            "vocab_hash" => self.vocab_hash = optional(value),
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let t = &self.training;
        let g = &self.generation;
        let e = &self.evaluation;
        vec![
            ("mode", self.mode.to_string()),
            ("seed", self.seed.map(|s| s.to_string()).unwrap_or_default()),
            (
                "corpus_format",
                match self.corpus_format {
                    CorpusFormat::Titled => "titled".into(),
                    CorpusFormat::Untitled => "untitled".into(),
                },
            ),
            ("min_count", self.min_count.to_string()),
            ("max_sentences", self.max_sentences.to_string()),
            ("stopwords", self.stopwords.clone().unwrap_or_default()),
            ("embed_dim", m.embed_dim.to_string()),
            ("hidden_dim", m.hidden_dim.to_string()),
            ("layers", m.layers.to_string()),
            ("dropout", m.dropout.to_string()),
            ("init_scale", m.init_scale.to_string()),
            ("inference_embed_dim", m.inference_embed_dim.to_string()),
            ("inference_hidden_dim", m.inference_hidden_dim.to_string()),
            ("inference_title", m.inference_title.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("clip_norm", t.clip_norm.to_string()),
            ("temporal_weight", t.temporal_weight.to_string()),
            ("baseline_alpha", t.baseline_alpha.to_string()),
            ("entropy_weight", t.entropy_weight.to_string()),
            ("free_bits", t.free_bits.to_string()),
            ("kl_floor", t.kl_floor.to_string()),
            ("reconstruction_samples", t.reconstruction_samples.to_string()),
            ("stage1_epochs", t.stage1_epochs.to_string()),
            ("stage2_epochs", t.stage2_epochs.to_string()),
            ("stage3_epochs", t.stage3_epochs.to_string()),
            ("epochs", t.epochs.to_string()),
            ("top_p", g.top_p.to_string()),
            ("plan_top_p", g.plan_top_p.to_string()),
            ("num_sentences", g.num_sentences.to_string()),
            ("max_sentence_len", g.max_sentence_len.to_string()),
            ("iw_samples", e.iw_samples.to_string()),
            ("divb_pool", e.divb_pool.to_string()),
            ("vocab_hash", self.vocab_hash.clone().unwrap_or_default()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        let g = &self.generation;
        for (name, p) in [("top_p", g.top_p), ("plan_top_p", g.plan_top_p)] {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1]")));
            }
        }
        if g.num_sentences == 0 || g.num_sentences > self.max_sentences {
            return Err(Error::Config(format!(
                "num_sentences must lie in 1..={}",
                self.max_sentences
            )));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if self.model.hidden_dim == 0 || self.model.embed_dim == 0 || self.model.layers == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.evaluation.iw_samples == 0 {
            return Err(Error::Config("iw_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            vocab_size,
            embed_dim: m.embed_dim,
            hidden_dim: m.hidden_dim,
            layers: m.layers,
            dropout: m.dropout,
            decoder: self.mode.decoder(),
            init_scale: m.init_scale,
        }
    }

    /// Inference network layout; plan-free modes fall back to the constrained net
    /// (used when a posterior is retrofitted).
    pub fn inference_config(&self, vocab_size: usize) -> InferenceConfig {
        let m = &self.model;
        InferenceConfig {
            vocab_size,
            embed_dim: m.inference_embed_dim,
            hidden_dim: m.inference_hidden_dim,
            mode: self.mode.posterior().unwrap_or(PosteriorMode::Constrained),
            condition_on_title: m.inference_title,
            init_scale: m.init_scale,
        }
    }

    pub fn decoder(&self) -> DecoderMode {
        self.mode.decoder()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let cfg = RunConfig {
            seed: Some(17),
            mode: TrainMode::LapCinfCdec,
            stopwords: Some("stop.txt".into()),
            ..RunConfig::default()
        };
        let parsed = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn default_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.training.batch_size, 20);
        assert_eq!(cfg.training.temporal_weight, 1.0);
        assert_eq!(cfg.training.baseline_alpha, 0.1);
        assert_eq!(cfg.model.hidden_dim, 1000);
        assert_eq!(cfg.generation.top_p, 0.6);
        assert_eq!(cfg.evaluation.iw_samples, 20);
    }

    #[test]
    fn every_key_is_settable() {
        let cfg = RunConfig::default();
        let mut other = RunConfig::default();
        for (k, v) in cfg.entries() {
            other.set(k, &v).unwrap();
        }
        assert_eq!(other, cfg);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse("hidden_dim = 8\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::parse("top_p = 0").is_err());
        assert!(RunConfig::parse("batch_size = 0").is_err());
        assert!(RunConfig::parse("free_bits = -1").is_err());
        assert!(RunConfig::parse("mode = lap-xyz").is_err());
        assert!(RunConfig::parse("hidden_dim").is_err());
    }
}
