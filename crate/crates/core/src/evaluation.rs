//! Likelihood bounds, diversity and control metrics, and evaluation reports.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedStory;
use crate::error::{Error, Result};
use crate::generation::{generate_story, generate_unplanned, sample_plan, GeneratedStory};
use crate::inference::{sample_plan_from_posterior, InferenceNet, SentencePosterior};
use crate::model::{DecoderMode, Generator, PlanSample};
use crate::tape::log_sum_exp;

/// `log q(z | x, t)` of a sampled plan. Under the constrained decoder the
/// latent is the anchor position; otherwise it is the anchor type, whose
/// mass sums over positions.
pub fn plan_log_q(posteriors: &[SentencePosterior], plan: &PlanSample, decoder: DecoderMode) -> f64 {
    posteriors
        .iter()
        .zip(&plan.anchors)
        .map(|(q, a)| match (decoder, a.position) {
            (DecoderMode::Constrained, Some(pos)) => {
                let col = (0..q.probs.len())
                    .find(|&i| q.support.position(i) == Some(pos))
                    .expect("sampled position lies in the support");
                q.probs[col].ln()
            }
            _ => q.token_mass(a.token).ln(),
        })
        .sum()
}

/// `k` importance log-weights `log p(x, z | t) − log q(z | x, t)`, `z ~ q`.
pub fn log_importance_weights(
    model: &Generator,
    inference: &InferenceNet,
    story: &TokenizedStory,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::contract("importance weighting needs at least one sample"));
    }
    let posteriors = inference.compute_posteriors(story)?;
    let title = story.title.as_deref();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let plan = sample_plan_from_posterior(&posteriors, rng);
        let log_q = plan_log_q(&posteriors, &plan, model.decoder_mode());
        if !log_q.is_finite() {
            return Err(Error::contract("posterior assigned zero mass to its own sample"));
        }
        let score = model.decode_score(title, Some(&plan.anchors), story)?;
        let log_joint = score.total + score.prior.unwrap_or(0.0);
        out.push(log_joint - log_q);
    }
    Ok(out)
}

/// `−log((1/k) Σ exp(w_j))`.
pub fn iw_nll_from_weights(log_weights: &[f64]) -> f64 {
    -(log_sum_exp(log_weights) - (log_weights.len() as f64).ln())
}

/// `−(1/k) Σ w_j`: the average single-sample ELBO bound on the same pool.
pub fn elbo_nll_from_weights(log_weights: &[f64]) -> f64 {
    -log_weights.iter().sum::<f64>() / log_weights.len() as f64
}

/// Importance-weighted upper bound on `−log p(x | t)` from `k` samples.
pub fn iw_nll(
    model: &Generator,
    inference: &InferenceNet,
    story: &TokenizedStory,
    k: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let w = log_importance_weights(model, inference, story, k, rng)?;
    Ok(iw_nll_from_weights(&w))
}

/// `exp(nll_total / token_count)`.
pub fn perplexity(nll_total: f64, token_count: usize) -> Result<f64> {
    if token_count == 0 {
        return Err(Error::contract("perplexity over zero tokens"));
    }
    Ok((nll_total / token_count as f64).exp())
}

fn ngram_entropy<T: Hash + Eq>(texts: &[Vec<T>], n: usize) -> Option<f64> {
    let mut counts: HashMap<&[T], usize> = HashMap::new();
    let mut total = 0usize;
    for t in texts {
        for w in t.windows(n) {
            *counts.entry(w).or_default() += 1;
            total += 1;
        }
    }
    if total == 0 {
        return None;
    }
    let total = total as f64;
    // summing in sorted order keeps the value independent of hash order
    let mut terms: Vec<f64> = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    Some(terms.iter().sum())
}

/// Geometric mean of the base-2 entropies of the pooled 1..=`max_n`-gram
/// distributions.
pub fn div_n<T: Hash + Eq>(texts: &[Vec<T>], max_n: usize) -> Result<f64> {
    if max_n == 0 {
        return Err(Error::contract("DIV needs n-grams of order at least 1"));
    }
    let mut product = 1.0;
    for n in 1..=max_n {
        let h = ngram_entropy(texts, n).ok_or_else(|| {
            Error::contract(format!(
                "no {n}-grams in the input; DIV needs texts of at least {max_n} tokens"
            ))
        })?;
        product *= h;
    }
    Ok(product.max(0.0).powf(1.0 / max_n as f64))
}

/// DIV with unigrams through trigrams.
pub fn div<T: Hash + Eq>(texts: &[Vec<T>]) -> Result<f64> {
    div_n(texts, 3)
}

fn ngram_counts<T: Hash + Eq + Clone>(text: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    for w in text.windows(n) {
        *counts.entry(w.to_vec()).or_default() += 1;
    }
    counts
}

/// Combines clipped match counts into BLEU-4 with add-one smoothing on
/// orders without any match.
fn bleu_from_counts(matches: [usize; 4], totals: [usize; 4], hyp_len: usize, ref_len: usize) -> f64 {
    let mut log_p = 0.0;
    for n in 0..4 {
        let p = if matches[n] == 0 {
            1.0 / (totals[n] as f64 + 1.0)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        log_p += 0.25 * p.ln();
    }
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    bp * log_p.exp()
}

/// Reference length closest to `hyp_len`, preferring the shorter on ties.
fn closest_length(hyp_len: usize, lengths: impl Iterator<Item = usize>) -> usize {
    lengths
        .min_by_key(|&r| (r.abs_diff(hyp_len), r))
        .unwrap_or(0)
}

/// Multi-reference BLEU-4 of `hyp`; n-gram counts are clipped by their
/// maximum count in any single reference.
pub fn bleu4<T: Hash + Eq + Clone>(hyp: &[T], refs: &[&[T]]) -> f64 {
    let mut matches = [0; 4];
    let mut totals = [0; 4];
    for n in 1..=4 {
        let hyp_counts = ngram_counts(hyp, n);
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        for (gram, &c) in &hyp_counts {
            let max_ref = ref_counts
                .iter()
                .map(|rc| rc.get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            matches[n - 1] += c.min(max_ref);
        }
        totals[n - 1] = hyp.len().saturating_sub(n - 1);
    }
    let ref_len = closest_length(hyp.len(), refs.iter().map(|r| r.len()));
    bleu_from_counts(matches, totals, hyp.len(), ref_len)
}

/// (count, story id) for the two stories with the most copies of an n-gram.
type TopTwo = [(usize, usize); 2];

/// Mean BLEU-4 of each story against all the others as references.
pub fn div_b<T: Hash + Eq + Clone>(stories: &[Vec<T>]) -> Result<f64> {
    let n_stories = stories.len();
    if n_stories < 2 {
        return Err(Error::contract("DIV-B needs at least two stories"));
    }
    let short = stories.iter().filter(|s| s.len() < 4).count();
    if short > 0 {
        log::warn!("{short} stories are shorter than 4 tokens; their BLEU-4 rests on smoothing");
    }
    // for every n-gram, its two largest per-story counts, so that the
    // maximum over the other stories is available in constant time
    let mut best: [HashMap<&[T], TopTwo>; 4] = Default::default();
    for (sid, story) in stories.iter().enumerate() {
        for n in 1..=4 {
            let mut local: HashMap<&[T], usize> = HashMap::new();
            for w in story.windows(n) {
                *local.entry(w).or_default() += 1;
            }
            for (gram, c) in local {
                let slot = best[n - 1].entry(gram).or_insert([(0, usize::MAX); 2]);
                if c > slot[0].0 {
                    slot[1] = slot[0];
                    slot[0] = (c, sid);
                } else if c > slot[1].0 {
                    slot[1] = (c, sid);
                }
            }
        }
    }
    let lengths: Vec<usize> = stories.iter().map(Vec::len).collect();
    let mut total = 0.0;
    for (sid, story) in stories.iter().enumerate() {
        let mut matches = [0; 4];
        let mut totals = [0; 4];
        for n in 1..=4 {
            let mut local: HashMap<&[T], usize> = HashMap::new();
            for w in story.windows(n) {
                *local.entry(w).or_default() += 1;
            }
            for (gram, c) in local {
                let slot = best[n - 1][gram];
                let other = if slot[0].1 == sid { slot[1].0 } else { slot[0].0 };
                matches[n - 1] += c.min(other);
            }
            totals[n - 1] = story.len().saturating_sub(n - 1);
        }
        let ref_len = closest_length(
            story.len(),
            lengths.iter().enumerate().filter(|&(j, _)| j != sid).map(|(_, &l)| l),
        );
        total += bleu_from_counts(matches, totals, story.len(), ref_len);
    }
    Ok(total / n_stories as f64)
}

/// Fraction of anchors that occur as a token of their aligned sentence.
pub fn ctrl<T: PartialEq>(plans: &[Vec<T>], stories: &[Vec<Vec<T>>]) -> Result<f64> {
    if plans.len() != stories.len() {
        return Err(Error::contract(format!(
            "{} plans for {} stories",
            plans.len(),
            stories.len()
        )));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, (plan, story)) in plans.iter().zip(stories).enumerate() {
        if plan.len() != story.len() {
            return Err(Error::contract(format!(
                "story {i}: plan has {} anchors, story has {} sentences",
                plan.len(),
                story.len()
            )));
        }
        for (anchor, sentence) in plan.iter().zip(story) {
            total += 1;
            if sentence.contains(anchor) {
                hits += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::contract("CTRL over zero anchors"));
    }
    Ok(hits as f64 / total as f64)
}

/// Sampling and metric settings shared by evaluation and the p-sweep.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub iw_samples: usize,
    pub story_p: f64,
    pub plan_p: f64,
    pub max_sentence_len: usize,
    /// Stories per DIV-B pool; 0 uses all of them.
    pub divb_pool: usize,
    /// Ids excluded from plan sampling.
    pub blocked: Vec<bool>,
}

/// One generated story with the plan it was generated from.
#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub plan: Option<PlanSample>,
    pub story: GeneratedStory,
}

/// Generates one story per title with `k` sentences each.
pub fn generate_for_titles(
    model: &Generator,
    titles: &[(Option<Vec<u32>>, usize)],
    use_plan: bool,
    opts: &EvalOptions,
    rng: &mut dyn RngCore,
) -> Result<Vec<Generation>> {
    titles
        .iter()
        .map(|(title, k)| {
            let title = title.as_deref();
            if use_plan {
                let plan = sample_plan(model, title, *k, opts.plan_p, rng, &opts.blocked)?;
                let story = generate_story(model, title, &plan, opts.story_p, opts.max_sentence_len, rng)?;
                Ok(Generation {
                    plan: Some(plan),
                    story,
                })
            } else {
                let story = generate_unplanned(model, title, *k, opts.story_p, opts.max_sentence_len, rng)?;
                Ok(Generation { plan: None, story })
            }
        })
        .collect()
}

fn flat_story(g: &Generation) -> Vec<u32> {
    g.story.sentences.concat()
}

fn pooled_div_b(stories: &[Vec<u32>], pool: usize) -> Result<f64> {
    let pool = if pool == 0 { stories.len() } else { pool.min(stories.len()) };
    div_b(&stories[..pool])
}

fn generation_ctrl(gens: &[Generation]) -> Result<Option<f64>> {
    let mut plans = Vec::new();
    let mut stories = Vec::new();
    for g in gens {
        match &g.plan {
            Some(p) => plans.push(p.tokens()),
            None => return Ok(None),
        }
        stories.push(g.story.sentences.clone());
    }
    ctrl(&plans, &stories).map(Some)
}

/// One row of the p-sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p: f64,
    pub ctrl: Option<f64>,
    pub div_b: f64,
}

/// Generates from every title at each `p` (used for both plan and story),
/// restarting from `seed` for each value.
pub fn p_sweep(
    model: &Generator,
    titles: &[(Option<Vec<u32>>, usize)],
    use_plan: bool,
    p_values: &[f64],
    opts: &EvalOptions,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    use rand::SeedableRng;
    if p_values.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::contract("p values must be sorted ascending"));
    }
    p_values
        .iter()
        .map(|&p| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let opts = EvalOptions {
                story_p: p,
                plan_p: p,
                ..opts.clone()
            };
            let gens = generate_for_titles(model, titles, use_plan, &opts, &mut rng)?;
            let flat: Vec<Vec<u32>> = gens.iter().map(flat_story).collect();
            Ok(SweepRow {
                p,
                ctrl: generation_ctrl(&gens)?,
                div_b: pooled_div_b(&flat, opts.divb_pool)?,
            })
        })
        .collect()
}

/// Metrics for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub stories: usize,
    /// Story tokens including sentence ends; titles and plans excluded.
    pub token_count: usize,
    /// Mean per-story NLL in nats.
    pub nll: f64,
    pub nll_total: f64,
    pub nll_per_token: f64,
    pub ppl: f64,
    /// Mean single-sample ELBO bound on the IW sample pool.
    pub elbo_nll: Option<f64>,
    pub div_plan: Option<f64>,
    pub div_story: Option<f64>,
    pub div_b: Option<f64>,
    pub ctrl: Option<f64>,
    pub truncated_sentences: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub checkpoint_id: String,
    pub mode: String,
    pub iw_samples: Option<usize>,
    pub p: f64,
    pub plan_p: f64,
    pub divb_pool: usize,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub splits: Vec<SplitReport>,
    pub p_sweep: Option<Vec<SweepRow>>,
}

fn metric_or_error(name: &str, r: Result<f64>) -> Option<f64> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            log::warn!("{name} not computed: {e}");
            None
        }
    }
}

/// Likelihood and generation metrics for one split. `inference = None`
/// scores the story directly under a plan-free model.
pub fn evaluate_split(
    name: &str,
    model: &Generator,
    inference: Option<&InferenceNet>,
    use_plan: bool,
    stories: &[TokenizedStory],
    opts: &EvalOptions,
    rng: &mut dyn RngCore,
) -> Result<SplitReport> {
    if stories.is_empty() {
        return Err(Error::contract(format!("split `{name}` has no stories")));
    }
    let mut nll_total = 0.0;
    let mut elbo_total = 0.0;
    let mut token_count = 0;
    for (i, story) in stories.iter().enumerate() {
        token_count += story.token_count();
        let nll = match inference {
            Some(inf) => {
                let w = log_importance_weights(model, inf, story, opts.iw_samples, rng)?;
                elbo_total += elbo_nll_from_weights(&w);
                iw_nll_from_weights(&w)
            }
            None => -model.decode_score(story.title.as_deref(), None, story)?.total,
        };
        if !nll.is_finite() {
            return Err(Error::NonFinite { what: "NLL", story: i });
        }
        nll_total += nll;
    }
    let n = stories.len() as f64;

    let titles: Vec<(Option<Vec<u32>>, usize)> = stories
        .iter()
        .map(|s| (s.title.clone(), s.num_sentences()))
        .collect();
    let gens = generate_for_titles(model, &titles, use_plan, opts, rng)?;
    let flat: Vec<Vec<u32>> = gens.iter().map(flat_story).collect();
    let plans: Option<Vec<Vec<u32>>> = gens.iter().map(|g| g.plan.as_ref().map(|p| p.tokens())).collect();

    Ok(SplitReport {
        split: name.to_string(),
        stories: stories.len(),
        token_count,
        nll: nll_total / n,
        nll_total,
        nll_per_token: nll_total / token_count.max(1) as f64,
        ppl: perplexity(nll_total, token_count)?,
        elbo_nll: inference.map(|_| elbo_total / n),
        div_plan: plans.and_then(|p| metric_or_error("DIV(plan)", div(&p))),
        div_story: metric_or_error("DIV(story)", div(&flat)),
        div_b: metric_or_error("DIV-B", pooled_div_b(&flat, opts.divb_pool)),
        ctrl: generation_ctrl(&gens)?,
        truncated_sentences: gens
            .iter()
            .map(|g| g.story.truncated.iter().filter(|&&t| t).count())
            .sum(),
    })
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.digits$}"))
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned plain-text table, one row per split, then the sweep if any.
    pub fn to_table(&self) -> String {
        let header = ["split", "PPL", "NLL", "DIV(plan)", "DIV(story)", "DIV-B", "CTRL"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for s in &self.splits {
            rows.push(vec![
                s.split.clone(),
                format!("{:.2}", s.ppl),
                format!("{:.2}", s.nll),
                cell(s.div_plan, 3),
                cell(s.div_story, 3),
                cell(s.div_b, 3),
                cell(s.ctrl, 3),
            ]);
        }
        let mut out = align(&rows);
        if let Some(sweep) = &self.p_sweep {
            let mut rows = vec![vec!["p".to_string(), "CTRL".into(), "DIV-B".into()]];
            for r in sweep {
                rows.push(vec![format!("{:.2}", r.p), cell(r.ctrl, 3), format!("{:.3}", r.div_b)]);
            }
            out.push('\n');
            out.push_str(&align(&rows));
        }
        out
    }
}

/// Left-aligns the first column and right-aligns the rest.
pub fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, v) in r.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{v:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "  {v:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn div_hand_example() {
        let d = div(&[toks("a b a b")]).unwrap();
        assert!((d - 0.9720).abs() < 1e-4, "{d}");
        assert_eq!(div(&[toks("a a a a")]).unwrap(), 0.0);
        assert!(div(&[toks("a b")]).is_err());
    }

    #[test]
    fn div_ignores_order() {
        let a = vec![toks("x y z x"), toks("p q r"), toks("x y q")];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(div(&a).unwrap(), div(&b).unwrap());
    }

    #[test]
    fn identical_stories_have_div_b_one() {
        let s = toks("the cat sat on the mat");
        let pool = vec![s.clone(); 5];
        assert!((div_b(&pool).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_stories_near_zero() {
        let pool = vec![toks("a b c d e f g h"), toks("p q r s t u v w")];
        // only the add-one mass of 1/9, 1/8, 1/7, 1/6 remains
        let smoothing = (1.0f64 / (9.0 * 8.0 * 7.0 * 6.0)).powf(0.25);
        assert!((div_b(&pool).unwrap() - smoothing).abs() < 1e-12);
    }

    #[test]
    fn div_b_matches_direct_bleu() {
        let pool = vec![
            toks("the dog ran to the park"),
            toks("a dog ran home"),
            toks("the cat sat on the park bench"),
            toks("she ran to the store"),
        ];
        let fast = div_b(&pool).unwrap();
        let slow: f64 = (0..pool.len())
            .map(|i| {
                let refs: Vec<&[&str]> = (0..pool.len()).filter(|&j| j != i).map(|j| pool[j].as_slice()).collect();
                bleu4(&pool[i], &refs)
            })
            .sum::<f64>()
            / pool.len() as f64;
        assert!((fast - slow).abs() < 1e-12);
    }

    #[test]
    fn ctrl_examples() {
        let sentences = vec![vec![toks("the dog barked"), toks("he ran home")]];
        assert_eq!(ctrl(&[vec!["dog", "ran"]], &sentences).unwrap(), 1.0);
        assert_eq!(ctrl(&[vec!["dog", "flew"]], &sentences).unwrap(), 0.5);
        assert!(ctrl(&[vec!["dog"]], &sentences).is_err());
    }

    #[test]
    fn perplexity_examples() {
        assert_eq!(perplexity(0.0, 10).unwrap(), 1.0);
        let v = 7.0f64;
        assert!((perplexity(12.0 * v.ln(), 12).unwrap() - 7.0).abs() < 1e-12);
        assert!(perplexity(1.0, 0).is_err());
        let worked = perplexity(154.0, 54).unwrap();
        assert!((worked - 17.3).abs() < 0.1);
    }

    #[test]
    fn iw_single_weight_is_elbo() {
        assert_eq!(iw_nll_from_weights(&[-3.5]), 3.5);
        let w = [-3.0, -5.0, -4.0];
        assert!(iw_nll_from_weights(&w) <= elbo_nll_from_weights(&w));
    }

    #[test]
    fn table_marks_missing_metrics() {
        let report = EvaluationReport {
            checkpoint_id: "x".into(),
            mode: "noplan".into(),
            iw_samples: None,
            p: 0.6,
            plan_p: 0.6,
            divb_pool: 0,
            seed: 1,
            timestamp: 0,
            splits: vec![SplitReport {
                split: "test".into(),
                stories: 2,
                token_count: 10,
                nll: 1.0,
                nll_total: 2.0,
                nll_per_token: 0.2,
                ppl: 1.2214,
                elbo_nll: None,
                div_plan: None,
                div_story: Some(3.0),
                div_b: Some(0.5),
                ctrl: None,
                truncated_sentences: 0,
            }],
            p_sweep: None,
        };
        let table = report.to_table();
        assert!(table.lines().nth(1).unwrap().contains("NA"));
        let json = report.to_json().unwrap();
        assert_eq!(EvaluationReport::from_json(&json).unwrap().to_json().unwrap(), json);
    }
}
