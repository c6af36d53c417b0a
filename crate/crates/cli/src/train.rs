use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::Args;
use latent_plan::checkpoint::ArtifactRecord;
use latent_plan::corpus::{build_vocabulary, encode_story, load_plan_annotations, Story};
use latent_plan::inference::posterior_block_mask;
use latent_plan::training::{
    fit_posterior_to_frozen_model, metrics_header, run_schedule, train_baseline, EpochMetrics, Stage,
    TrainingData, TrainingObserver,
};
use latent_plan::{
    Checkpoint, Generator, InferenceNet, RunConfig, RunManifest, StopwordSet, TrainMode, Vocabulary,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::failure::{Classify, Failure};
use crate::settings::{read_stories, require_file, resolve_seed, ConfigArgs};

pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FINAL_DIR: &str = "final";

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Training corpus.
    #[arg(long)]
    pub train: PathBuf,

    /// Held-out corpus for the per-epoch dev ELBO.
    #[arg(long)]
    pub dev: Option<PathBuf>,

    /// Plan annotations aligned with --train (supervised mode).
    #[arg(long)]
    pub plans: Option<PathBuf>,

    /// Plan annotations aligned with --dev (supervised mode).
    #[arg(long)]
    pub dev_plans: Option<PathBuf>,

    /// Output directory for checkpoints, metrics and the manifest.
    #[arg(long)]
    pub out: PathBuf,

    /// Training mode: lap-cinf-udec, lap-cinf-cdec, lap-uinf-udec, noplan, supervised.
    #[arg(long)]
    pub mode: Option<String>,

    /// Stopword file, one token per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
}

/// Writes metrics rows and stage checkpoints as training progresses.
struct Recorder {
    out: PathBuf,
    config: RunConfig,
    vocab: Vocabulary,
    stopwords: StopwordSet,
    metrics: BufWriter<File>,
    steps: usize,
    manifest: RunManifest,
}

impl Recorder {
    fn save(&mut self, name: &str, stage: &str, model: &Generator, inference: Option<&InferenceNet>) -> latent_plan::Result<()> {
        let ckpt = Checkpoint {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            stopwords: self.stopwords.clone(),
            model: model.clone(),
            inference: inference.cloned(),
        };
        let path = self.out.join(name);
        let id = ckpt.save(&path)?;
        log::info!("checkpoint {id} written to {}", path.display());
        self.manifest.stage = stage.to_string();
        self.manifest.checkpoints.push(ArtifactRecord {
            stage: stage.to_string(),
            path: PathBuf::from(name),
            id,
        });
        self.manifest.save(self.out.join(MANIFEST_FILE))
    }
}

impl TrainingObserver for Recorder {
    fn epoch(&mut self, m: &EpochMetrics) -> latent_plan::Result<()> {
        let io = |e| latent_plan::Error::Checkpoint(format!("writing {METRICS_FILE}: {e}"));
        writeln!(self.metrics, "{}", m.csv_row(self.steps)).map_err(io)?;
        self.metrics.flush().map_err(io)?;
        let mut line = format!("stage {} epoch {}: recon {:.3}", m.stage.label(), m.epoch, m.recon);
        if !m.kl_raw.is_empty() {
            line += &format!(" kl {:.3}", m.kl_raw.iter().sum::<f64>());
        }
        if let Some(dev) = m.dev_elbo {
            line += &format!(" dev {dev:.3}");
        }
        log::info!("{line}");
        Ok(())
    }

    fn stage_complete(&mut self, stage: Stage, model: &Generator, inference: Option<&InferenceNet>) -> latent_plan::Result<()> {
        let name = match stage {
            Stage::Pretrain | Stage::Model | Stage::Joint => format!("stage-{}", stage.label()),
            other => other.label().to_string(),
        };
        self.save(&name, stage.label(), model, inference)
    }
}

fn encode_all(stories: &[Story], vocab: &Vocabulary, stopwords: &StopwordSet) -> Vec<latent_plan::TokenizedStory> {
    stories.iter().map(|s| encode_story(s, vocab, stopwords)).collect()
}

fn read_plans(path: &Path, vocab: &Vocabulary, stories: &[Story]) -> Result<Vec<Vec<u32>>, Failure> {
    require_file(path, "plan file")?;
    let counts: Vec<usize> = stories.iter().map(Story::num_sentences).collect();
    let plans = load_plan_annotations(path, vocab, &counts).usage(&format!("plan file {}", path.display()))?;
    Ok(plans.plans.into_iter().map(|p| p.anchors).collect())
}

pub fn run(args: TrainArgs) -> Result<(), Failure> {
    let mut cfg = RunConfig::default();
    let stopwords_flag = args.stopwords.as_ref().map(|p| p.display().to_string());
    args.config.apply(&mut cfg, &[("mode", args.mode.clone()), ("stopwords", stopwords_flag)])?;
    let mode = cfg.mode;

    if mode == TrainMode::Supervised && args.plans.is_none() {
        return Err(Failure::usage(anyhow!("supervised mode requires --plans")));
    }
    if mode == TrainMode::Supervised && args.dev.is_some() && args.dev_plans.is_none() {
        return Err(Failure::usage(anyhow!("supervised mode with --dev requires --dev-plans")));
    }
    if mode != TrainMode::Supervised && (args.plans.is_some() || args.dev_plans.is_some()) {
        log::info!("mode {mode} does not use plan annotations; ignoring the plan files");
    }

    let seed = resolve_seed(&mut cfg);
    let train_stories = read_stories(&args.train, &cfg)?;
    if train_stories.is_empty() {
        return Err(Failure::usage(anyhow!("{} has no stories", args.train.display())));
    }
    let dev_stories = match &args.dev {
        Some(path) => read_stories(path, &cfg)?,
        None => Vec::new(),
    };
    let stopwords = match &cfg.stopwords {
        Some(path) => {
            require_file(Path::new(path), "stopword file")?;
            StopwordSet::load(path).usage("stopword file")?
        }
        None => StopwordSet::english(),
    };
    let vocab = build_vocabulary(&train_stories, cfg.min_count).usage("vocabulary")?;
    log::info!(
        "{} training stories, {} dev stories, vocabulary {}",
        train_stories.len(),
        dev_stories.len(),
        vocab.len()
    );

    let supervised = mode == TrainMode::Supervised;
    let data = TrainingData {
        train: encode_all(&train_stories, &vocab, &stopwords),
        dev: encode_all(&dev_stories, &vocab, &stopwords),
        train_plans: match (&args.plans, supervised) {
            (Some(p), true) => Some(read_plans(p, &vocab, &train_stories)?),
            _ => None,
        },
        dev_plans: match (&args.dev_plans, supervised && args.dev.is_some()) {
            (Some(p), true) => Some(read_plans(p, &vocab, &dev_stories)?),
            _ => None,
        },
    };

    let mut manifest = RunManifest::new(&cfg, vocab.hash(), seed);
    for path in [Some(&args.train), args.dev.as_ref()].into_iter().flatten() {
        manifest.hash_input(path).usage("hashing inputs")?;
    }
    if supervised {
        for path in [args.plans.as_ref(), args.dev_plans.as_ref()].into_iter().flatten() {
            manifest.hash_input(path).usage("hashing inputs")?;
        }
    }
    if let Some(path) = &cfg.stopwords {
        manifest.hash_input(path).usage("hashing inputs")?;
    }

    std::fs::create_dir_all(&args.out).usage(&format!("creating {}", args.out.display()))?;
    let metrics_path = args.out.join(METRICS_FILE);
    let file = File::create(&metrics_path).usage(&format!("creating {}", metrics_path.display()))?;
    let steps = data.max_sentences();
    let mut recorder = Recorder {
        out: args.out.clone(),
        config: cfg.clone(),
        vocab: vocab.clone(),
        stopwords: stopwords.clone(),
        metrics: BufWriter::new(file),
        steps,
        manifest,
    };
    writeln!(recorder.metrics, "{}", metrics_header(steps)).runtime("writing metrics")?;
    recorder.manifest.save(args.out.join(MANIFEST_FILE)).usage("writing manifest")?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Generator::new(cfg.model_config(vocab.len()), &mut rng);
    let blocked = posterior_block_mask(&vocab, &stopwords);
    let outcome = if mode.is_latent() {
        let inference = InferenceNet::new(cfg.inference_config(vocab.len()), blocked, &mut rng);
        run_schedule(&cfg.training, model, inference, &data, &mut rng, &mut recorder)
            .map(|t| (t.model, Some(t.inference)))
    } else {
        train_baseline(&cfg.training, mode, model, &data, &mut rng, &mut recorder).and_then(|(model, _)| {
            if !supervised {
                return Ok((model, None));
            }
            log::info!("fitting a posterior to the frozen supervised model");
            let inference = InferenceNet::new(cfg.inference_config(vocab.len()), blocked, &mut rng);
            let (inference, _) =
                fit_posterior_to_frozen_model(&cfg.training, &model, inference, &data, &mut rng, &mut recorder)?;
            Ok((model, Some(inference)))
        })
    };
    let (model, inference) = match outcome {
        Ok(trained) => trained,
        Err(err) => {
            match recorder.manifest.checkpoints.last() {
                Some(last) => log::error!("training aborted; last good checkpoint is {}", last.path.display()),
                None => log::error!("training aborted before the first checkpoint"),
            }
            return Err(Failure::runtime(anyhow::Error::new(err).context("training")));
        }
    };
    recorder
        .save(FINAL_DIR, "final", &model, inference.as_ref())
        .runtime("saving the final checkpoint")?;
    log::info!("done; final checkpoint in {}", args.out.join(FINAL_DIR).display());
    Ok(())
}
