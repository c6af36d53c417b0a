use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use clap::Args;
use latent_plan::checkpoint::checkpoint_id;
use latent_plan::corpus::encode_story;
use latent_plan::evaluation::{evaluate_split, p_sweep, EvalOptions, EvaluationReport};
use latent_plan::inference::posterior_records;
use latent_plan::{Checkpoint, TokenizedStory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::failure::{Classify, Failure};
use crate::settings::{now_secs, open_checkpoint, read_stories, resolve_seed, ConfigArgs};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";
const DEFAULT_SWEEP: [f64; 4] = [0.5, 0.6, 0.7, 0.8];

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Corpus files to score, as `name=path` or a path (named by its file stem).
    #[arg(required = true, value_name = "SPLIT")]
    pub splits: Vec<String>,

    /// Importance samples per story [default: 20].
    #[arg(long)]
    pub iw_samples: Option<usize>,

    /// Top-p threshold for generated stories [default: 0.6].
    #[arg(long)]
    pub p: Option<f64>,

    /// Also sweep top-p over these comma-separated values (0.5,0.6,0.7,0.8 when empty),
    /// generating from the first split's titles.
    #[arg(long, num_args = 0.., value_delimiter = ',', value_name = "P")]
    pub p_sweep: Option<Vec<f64>>,

    /// Stories per DIV-B pool; 0 uses the whole split.
    #[arg(long)]
    pub divb_pool: Option<usize>,

    /// Directory for report.json and report.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PosteriorArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Corpus whose sentences are scored.
    #[arg(long)]
    pub corpus: PathBuf,

    /// Output JSONL file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn split_arg(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            (name, path)
        }
    }
}

fn encoded(path: &Path, ckpt: &Checkpoint) -> Result<Vec<TokenizedStory>, Failure> {
    let stories = read_stories(path, &ckpt.config)?;
    if stories.is_empty() {
        return Err(Failure::usage(anyhow!("{} has no stories", path.display())));
    }
    Ok(stories
        .iter()
        .map(|s| encode_story(s, &ckpt.vocab, &ckpt.stopwords))
        .collect())
}

pub fn run(args: EvaluateArgs) -> Result<(), Failure> {
    let extra = [
        ("iw_samples", args.iw_samples.map(|k| k.to_string())),
        ("top_p", args.p.map(|p| p.to_string())),
        ("divb_pool", args.divb_pool.map(|n| n.to_string())),
    ];
    let mut ckpt = open_checkpoint(&args.checkpoint, &args.config, &extra)?;
    let seed = resolve_seed(&mut ckpt.config);
    let id = checkpoint_id(&args.checkpoint).usage("checkpoint id")?;
    let cfg = ckpt.config.clone();
    let use_plan = cfg.mode.uses_plan();
    let inference = if use_plan {
        Some(ckpt.inference.as_ref().ok_or_else(|| {
            Failure::usage(anyhow!("checkpoint has no inference network for importance weighting"))
        })?)
    } else {
        log::info!("mode {} has no plan; scoring stories directly", cfg.mode);
        None
    };
    if let Some(ps) = &args.p_sweep {
        if ps.iter().any(|&p| !(p > 0.0 && p <= 1.0)) || ps.windows(2).any(|w| w[0] > w[1]) {
            return Err(Failure::usage(anyhow!("--p-sweep values must be ascending and lie in (0, 1]")));
        }
    }

    let splits: Vec<(String, Vec<TokenizedStory>)> = args
        .splits
        .iter()
        .map(|a| {
            let (name, path) = split_arg(a);
            encoded(&path, &ckpt).map(|s| (name, s))
        })
        .collect::<Result<_, _>>()?;

    let opts = EvalOptions {
        iw_samples: cfg.evaluation.iw_samples,
        story_p: cfg.generation.top_p,
        plan_p: cfg.generation.plan_top_p,
        max_sentence_len: cfg.generation.max_sentence_len,
        divb_pool: cfg.evaluation.divb_pool,
        blocked: ckpt.stopwords.blocked_ids(&ckpt.vocab),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();
    for (name, stories) in &splits {
        log::info!("evaluating {name} ({} stories)", stories.len());
        let report = evaluate_split(name, &ckpt.model, inference, use_plan, stories, &opts, &mut rng)
            .runtime(&format!("evaluating {name}"))?;
        reports.push(report);
    }
    let sweep = match &args.p_sweep {
        Some(ps) => {
            let ps: Vec<f64> = if ps.is_empty() { DEFAULT_SWEEP.to_vec() } else { ps.clone() };
            let titles: Vec<(Option<Vec<u32>>, usize)> = splits[0]
                .1
                .iter()
                .map(|s| (s.title.clone(), s.num_sentences()))
                .collect();
            Some(p_sweep(&ckpt.model, &titles, use_plan, &ps, &opts, seed).runtime("p-sweep")?)
        }
        None => None,
    };
    let report = EvaluationReport {
        checkpoint_id: id,
        mode: cfg.mode.to_string(),
        iw_samples: inference.map(|_| opts.iw_samples),
        p: opts.story_p,
        plan_p: opts.plan_p,
        divb_pool: opts.divb_pool,
        seed,
        timestamp: now_secs(),
        splits: reports,
        p_sweep: sweep,
    };
    let table = report.to_table();
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).usage(&format!("creating {}", dir.display()))?;
        let json = report.to_json().runtime("serializing the report")? + "\n";
        std::fs::write(dir.join(REPORT_JSON), json).runtime("writing the report")?;
        std::fs::write(dir.join(REPORT_TABLE), &table).runtime("writing the report")?;
        log::info!("report written to {}", dir.display());
    }
    print!("{table}");
    Ok(())
}

pub fn dump_posteriors(args: PosteriorArgs) -> Result<(), Failure> {
    let ckpt = open_checkpoint(&args.checkpoint, &args.config, &[])?;
    let inference = ckpt
        .inference
        .as_ref()
        .ok_or_else(|| Failure::usage(anyhow!("checkpoint has no inference network")))?;
    let stories = encoded(&args.corpus, &ckpt)?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            std::fs::File::create(path).usage(&format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    for (i, story) in stories.iter().enumerate() {
        let posts = inference.compute_posteriors(story).runtime(&format!("story {i}"))?;
        for record in posterior_records(i, &posts, &ckpt.vocab) {
            let line = serde_json::to_string(&record).runtime("serializing a record")?;
            writeln!(out, "{line}").runtime("writing output")?;
        }
    }
    out.flush().runtime("writing output")
}
