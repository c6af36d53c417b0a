use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::Args;
use latent_plan::checkpoint::checkpoint_id;
use latent_plan::corpus::tokenize;
use latent_plan::generation::{generate_story, generate_unplanned, sample_plan, GeneratedStory};
use latent_plan::model::AnchorEntry;
use latent_plan::{Checkpoint, PlanSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::failure::{Classify, Failure};
use crate::settings::{open_checkpoint, require_file, resolve_seed, ConfigArgs};

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// One title per line; one record per title.
    #[arg(long, conflicts_with = "count", required_unless_present = "count")]
    pub titles: Option<PathBuf>,

    /// Number of untitled stories.
    #[arg(long)]
    pub count: Option<usize>,

    /// Top-p threshold for story tokens [default: 0.6].
    #[arg(long)]
    pub p: Option<f64>,

    /// Top-p threshold for plan anchors [default: 0.6].
    #[arg(long)]
    pub plan_p: Option<f64>,

    /// Sentences per story.
    #[arg(long)]
    pub num_sentences: Option<usize>,

    /// Plans to use instead of sampling, one line of anchors per record.
    #[arg(long)]
    pub plan_file: Option<PathBuf>,

    /// Output JSONL file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Decode mode; must match how the checkpoint was trained.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Serialize)]
struct Record<'a> {
    title: Option<String>,
    plan: Option<Vec<String>>,
    sentences: Vec<String>,
    seed: u64,
    p: f64,
    checkpoint_id: &'a str,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    index: usize,
    title: Option<String>,
    error: String,
    seed: u64,
    checkpoint_id: &'a str,
}

fn read_lines(path: &Path, what: &str) -> Result<Vec<String>, Failure> {
    require_file(path, what)?;
    let text = std::fs::read_to_string(path).usage(&format!("{what} {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Plan tokens for one record, or the reason it cannot be used.
fn forced_plan(ckpt: &Checkpoint, line: Option<&String>, k: usize) -> Result<PlanSample, String> {
    let line = line.ok_or("plan file has no line for this record")?;
    let words = tokenize(line);
    if words.len() != k {
        return Err(format!("plan has {} anchors, expected {k}", words.len()));
    }
    let mut plan = PlanSample::default();
    for w in &words {
        let id = ckpt.vocab.get(w).ok_or_else(|| format!("plan anchor `{w}` is not in the vocabulary"))?;
        plan.anchors.push(AnchorEntry::token(id));
    }
    Ok(plan)
}

pub fn run(args: GenerateArgs) -> Result<(), Failure> {
    let extra = [
        ("mode", args.mode.clone()),
        ("top_p", args.p.map(|p| p.to_string())),
        ("plan_top_p", args.plan_p.map(|p| p.to_string())),
        ("num_sentences", args.num_sentences.map(|k| k.to_string())),
    ];
    let mut ckpt = open_checkpoint(&args.checkpoint, &args.config, &extra)?;
    let seed = resolve_seed(&mut ckpt.config);
    let id = checkpoint_id(&args.checkpoint).usage("checkpoint id")?;
    let uses_plan = ckpt.config.mode.uses_plan();
    if args.plan_file.is_some() && !uses_plan {
        return Err(Failure::usage(anyhow!(
            "checkpoint mode {} does not take a plan",
            ckpt.config.mode
        )));
    }

    let titles: Vec<Option<String>> = match (&args.titles, args.count) {
        (Some(path), _) => read_lines(path, "titles file")?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .map(Some)
            .collect(),
        (None, Some(n)) => vec![None; n],
        (None, None) => return Err(Failure::usage(anyhow!("give --titles or --count"))),
    };
    let plan_lines = match &args.plan_file {
        Some(path) => Some(read_lines(path, "plan file")?),
        None => None,
    };

    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            std::fs::File::create(path).usage(&format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let cfg = ckpt.config.clone();
    let k = cfg.generation.num_sentences;
    let blocked = ckpt.stopwords.blocked_ids(&ckpt.vocab);
    let mut failures = 0;
    for (i, title) in titles.iter().enumerate() {
        // one stream per record, so a record does not depend on the ones before it
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let title_ids: Option<Vec<u32>> = title
            .as_ref()
            .map(|t| tokenize(t).iter().map(|w| ckpt.vocab.id(w)).collect());
        let t = title_ids.as_deref();
        let g = &cfg.generation;
        let result: Result<(Option<PlanSample>, GeneratedStory), String> = (|| {
            if !uses_plan {
                let story = generate_unplanned(&ckpt.model, t, k, g.top_p, g.max_sentence_len, &mut rng)
                    .map_err(|e| e.to_string())?;
                return Ok((None, story));
            }
            let plan = match &plan_lines {
                Some(lines) => forced_plan(&ckpt, lines.get(i), k)?,
                None => sample_plan(&ckpt.model, t, k, g.plan_top_p, &mut rng, &blocked).map_err(|e| e.to_string())?,
            };
            let story = generate_story(&ckpt.model, t, &plan, g.top_p, g.max_sentence_len, &mut rng)
                .map_err(|e| e.to_string())?;
            Ok((Some(plan), story))
        })();
        let line = match result {
            Ok((plan, story)) => serde_json::to_string(&Record {
                title: title.clone(),
                plan: plan.map(|p| ckpt.vocab.decode(&p.tokens())),
                sentences: story.text(&ckpt.vocab),
                seed,
                p: g.top_p,
                checkpoint_id: &id,
            }),
            Err(error) => {
                log::warn!("record {i}: {error}");
                failures += 1;
                serde_json::to_string(&ErrorRecord {
                    index: i,
                    title: title.clone(),
                    error,
                    seed,
                    checkpoint_id: &id,
                })
            }
        }
        .runtime("serializing a record")?;
        writeln!(out, "{line}").runtime("writing output")?;
    }
    out.flush().runtime("writing output")?;
    log::info!("{} records, {failures} failed", titles.len());
    Ok(())
}
