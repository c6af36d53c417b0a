use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::anyhow;
use clap::Args;
use latent_plan::corpus::{load_corpus, truncate_stories, Story};
use latent_plan::{Checkpoint, RunConfig};

use crate::failure::{Classify, Failure};

/// Config file and `--set` overrides shared by every command.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config key; repeatable. Applied after --config.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Random seed; one is drawn and logged when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// Layers the config file, then `--set`, then `extra` (dedicated flags)
    /// over `base`.
    pub fn apply(&self, base: &mut RunConfig, extra: &[(&str, Option<String>)]) -> Result<(), Failure> {
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(anyhow!("cannot read config {}: {e}", path.display())))?;
            base.apply_text(&text).usage(&format!("config {}", path.display()))?;
        }
        for assignment in &self.set {
            base.apply_assignment(assignment).usage("--set")?;
        }
        for (key, value) in extra {
            if let Some(v) = value {
                base.set(key, v).usage(&format!("--{}", key.replace('_', "-")))?;
            }
        }
        if let Some(seed) = self.seed {
            base.seed = Some(seed);
        }
        base.validate().usage("invalid configuration")
    }
}

/// The configured seed, or a fresh one that is logged so the run can be repeated.
pub fn resolve_seed(cfg: &mut RunConfig) -> u64 {
    match cfg.seed {
        Some(seed) => seed,
        None => {
            let nanos = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_nanos() as u64)
                .unwrap_or(0);
            let seed = nanos ^ ((std::process::id() as u64) << 32);
            log::info!("no seed given; drew seed {seed}");
            cfg.seed = Some(seed);
            seed
        }
    }
}

pub fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(anyhow!("{what} {} does not exist", path.display())))
    }
}

/// Reads a corpus and cuts stories to the configured sentence limit.
pub fn read_stories(path: &Path, cfg: &RunConfig) -> Result<Vec<Story>, Failure> {
    require_file(path, "corpus")?;
    let corpus = load_corpus(path, cfg.corpus_format).usage(&format!("corpus {}", path.display()))?;
    if corpus.skipped_empty_lines > 0 {
        log::info!("{}: skipped {} empty lines", path.display(), corpus.skipped_empty_lines);
    }
    let mut stories = corpus.stories;
    truncate_stories(&mut stories, cfg.max_sentences);
    Ok(stories)
}

/// Loads a checkpoint and applies run-time overrides. Architecture and
/// vocabulary fields cannot change.
pub fn open_checkpoint(
    dir: &Path,
    args: &ConfigArgs,
    extra: &[(&str, Option<String>)],
) -> Result<Checkpoint, Failure> {
    if !dir.is_dir() {
        return Err(Failure::usage(anyhow!("checkpoint {} is not a directory", dir.display())));
    }
    let mut ckpt = Checkpoint::load(dir).usage(&format!("checkpoint {}", dir.display()))?;
    let trained = ckpt.config.clone();
    // the training seed is not reused for sampling
    ckpt.config.seed = None;
    args.apply(&mut ckpt.config, extra)?;
    let requested = ckpt.config.mode;
    ckpt.config.mode = trained.mode;
    if requested != trained.mode {
        ckpt.check_mode(requested).usage("requested mode")?;
    }
    let fixed = [
        "embed_dim",
        "hidden_dim",
        "layers",
        "inference_embed_dim",
        "inference_hidden_dim",
        "inference_title",
        "vocab_hash",
        "corpus_format",
    ];
    let before = trained.entries();
    let after = ckpt.config.entries();
    for ((key, old), (_, new)) in before.iter().zip(&after) {
        if fixed.contains(key) && old != new {
            return Err(Failure::usage(anyhow!(
                "`{key}` is fixed by the checkpoint ({old}); cannot override with {new}"
            )));
        }
    }
    Ok(ckpt)
}
