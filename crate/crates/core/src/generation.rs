//! Test-time sampling: an anchor plan from the prior, then the story,
//! both with nucleus (top-p) filtering.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{Special, Vocabulary};
use crate::error::{Error, Result};
use crate::inference::sample_index;
use crate::model::{DecoderMode, Generator, Phase, PlanSample};
use crate::tape::Graph;

/// Restricts `dist` to its nucleus: the shortest prefix, by descending
/// probability with ties broken by ascending id, whose mass reaches `p`.
/// The nucleus is renormalized; every other entry becomes exactly zero.
pub fn top_p_filter(dist: &[f64], p: f64) -> Result<Vec<f64>> {
    let nucleus = nucleus(dist, p)?;
    let mass: f64 = nucleus.iter().map(|&i| dist[i]).sum();
    let mut out = vec![0.0; dist.len()];
    for i in nucleus {
        out[i] = dist[i] / mass;
    }
    Ok(out)
}

/// Ids in the nucleus of `dist`, most probable first.
pub fn nucleus(dist: &[f64], p: f64) -> Result<Vec<usize>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::contract(format!("top-p threshold {p} outside (0, 1]")));
    }
    let mut order: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] > 0.0).collect();
    if order.is_empty() {
        return Err(Error::contract("distribution has no mass"));
    }
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    let mut cumulative = 0.0;
    for (n, &i) in order.iter().enumerate() {
        cumulative += dist[i];
        if cumulative >= p {
            order.truncate(n + 1);
            break;
        }
    }
    Ok(order)
}

/// Zeroes `blocked` ids and renormalizes; `None` if nothing is left.
fn mask_and_renormalize(dist: &mut [f64], blocked: &[bool]) -> Option<()> {
    for (x, &b) in dist.iter_mut().zip(blocked) {
        if b {
            *x = 0.0;
        }
    }
    let total: f64 = dist.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return None;
    }
    for x in dist.iter_mut() {
        *x /= total;
    }
    Some(())
}

/// Draws `k` anchors ancestrally from the prior.
///
/// `blocked[v]` removes id `v` before filtering; pass
/// [`crate::corpus::StopwordSet::blocked_ids`] to exclude stopwords and
/// reserved ids.
pub fn sample_plan(
    model: &Generator,
    title: Option<&[u32]>,
    k: usize,
    p: f64,
    rng: &mut dyn RngCore,
    blocked: &[bool],
) -> Result<PlanSample> {
    if k == 0 {
        return Err(Error::contract("a plan needs at least one anchor"));
    }
    let mut g = Graph::new();
    let h = g.bind(model.params());
    let mut stream = model.stream(&mut g, h, None);
    stream.feed_title(model, &mut g, title);
    let mut plan = PlanSample::default();
    for step in 0..k {
        let lp = stream.prior(model, &mut g);
        let log_probs = g.value(lp).data().to_vec();
        let mut dist: Vec<f64> = log_probs.iter().map(|x| x.exp()).collect();
        mask_and_renormalize(&mut dist, blocked).ok_or(Error::AllBlocked { step })?;
        let filtered = top_p_filter(&dist, p)?;
        let z = sample_index(&filtered, rng) as u32;
        let mut entry = crate::model::AnchorEntry::token(z);
        entry.prior_log_prob = Some(log_probs[z as usize]);
        plan.anchors.push(entry);
        stream.feed(model, &mut g, z, None);
    }
    Ok(plan)
}

/// A sampled story.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedStory {
    /// Surface-order token ids per sentence, without sentence ends.
    pub sentences: Vec<Vec<u32>>,
    /// Sentences cut at the length cap.
    pub truncated: Vec<bool>,
}

impl GeneratedStory {
    pub fn words(&self, vocab: &Vocabulary) -> Vec<Vec<String>> {
        self.sentences.iter().map(|s| vocab.decode(s)).collect()
    }

    pub fn text(&self, vocab: &Vocabulary) -> Vec<String> {
        self.words(vocab).iter().map(|s| s.join(" ")).collect()
    }

    pub fn any_truncated(&self) -> bool {
        self.truncated.iter().any(|&t| t)
    }
}

/// Decodes a story for `plan`, one sentence per anchor.
pub fn generate_story(
    model: &Generator,
    title: Option<&[u32]>,
    plan: &PlanSample,
    p: f64,
    max_sentence_len: usize,
    rng: &mut dyn RngCore,
) -> Result<GeneratedStory> {
    if plan.is_empty() {
        return Err(Error::contract("cannot generate from an empty plan"));
    }
    let max_len = max_sentence_len.max(1);
    let mut g = Graph::new();
    let h = g.bind(model.params());
    let mut stream = model.stream(&mut g, h, None);
    stream.feed_title(model, &mut g, title);
    for a in &plan.anchors {
        stream.feed(model, &mut g, a.token, None);
    }
    stream.feed(model, &mut g, Special::PlanSep.id(), None);

    let k = plan.len();
    let mut out = GeneratedStory {
        sentences: Vec::with_capacity(k),
        truncated: Vec::with_capacity(k),
    };
    let eos = Special::Eos.id();
    let lb = Special::LeftBoundary.id();
    for (i, anchor) in plan.anchors.iter().enumerate() {
        let last = i + 1 == k;
        match model.decoder_mode() {
            DecoderMode::Unconstrained => {
                let mut sentence = Vec::new();
                let mut truncated = true;
                while sentence.len() < max_len {
                    let lp = stream.decoder(model, &mut g, Phase::Surface);
                    let tok = draw(&g, lp, p, rng)?;
                    if tok == eos {
                        truncated = false;
                        break;
                    }
                    sentence.push(tok);
                    stream.feed(model, &mut g, tok, None);
                }
                if !last {
                    stream.feed(model, &mut g, eos, None);
                }
                out.sentences.push(sentence);
                out.truncated.push(truncated);
            }
            DecoderMode::Constrained => {
                let z = anchor.token;
                let mut branch = stream.branch();
                branch.feed(model, &mut g, z, Some(z));
                let mut left = Vec::new();
                let mut right = Vec::new();
                let mut truncated = false;
                // leftwards until the boundary
                loop {
                    if 1 + left.len() >= max_len {
                        truncated = true;
                        break;
                    }
                    let lp = branch.decoder(model, &mut g, Phase::Left);
                    let tok = draw(&g, lp, p, rng)?;
                    if tok == lb {
                        break;
                    }
                    left.push(tok);
                    branch.feed(model, &mut g, tok, Some(z));
                }
                branch.feed(model, &mut g, lb, Some(z));
                // rightwards until the end
                loop {
                    if 1 + left.len() + right.len() >= max_len {
                        truncated = true;
                        break;
                    }
                    let lp = branch.decoder(model, &mut g, Phase::Right);
                    let tok = draw(&g, lp, p, rng)?;
                    if tok == eos {
                        break;
                    }
                    right.push(tok);
                    branch.feed(model, &mut g, tok, Some(z));
                }
                let mut sentence: Vec<u32> = left.into_iter().rev().collect();
                sentence.push(z);
                sentence.extend(right);
                if !last {
                    for &tok in sentence.iter().chain(std::iter::once(&eos)) {
                        stream.feed(model, &mut g, tok, Some(z));
                    }
                }
                out.sentences.push(sentence);
                out.truncated.push(truncated);
            }
        }
    }
    if out.any_truncated() {
        log::debug!("generated story hit the sentence length cap");
    }
    Ok(out)
}

/// Samples `k` sentences left to right without a plan, for the plan-free
/// language model.
pub fn generate_unplanned(
    model: &Generator,
    title: Option<&[u32]>,
    k: usize,
    p: f64,
    max_sentence_len: usize,
    rng: &mut dyn RngCore,
) -> Result<GeneratedStory> {
    if k == 0 {
        return Err(Error::contract("cannot generate zero sentences"));
    }
    if model.decoder_mode() != DecoderMode::Unconstrained {
        return Err(Error::contract("plan-free generation needs the unconstrained decoder"));
    }
    let max_len = max_sentence_len.max(1);
    let mut g = Graph::new();
    let h = g.bind(model.params());
    let mut stream = model.stream(&mut g, h, None);
    stream.feed_title(model, &mut g, title);
    stream.feed(model, &mut g, Special::PlanSep.id(), None);
    let eos = Special::Eos.id();
    let mut out = GeneratedStory {
        sentences: Vec::with_capacity(k),
        truncated: Vec::with_capacity(k),
    };
    for i in 0..k {
        let mut sentence = Vec::new();
        let mut truncated = true;
        while sentence.len() < max_len {
            let lp = stream.decoder(model, &mut g, Phase::Surface);
            let tok = draw(&g, lp, p, rng)?;
            if tok == eos {
                truncated = false;
                break;
            }
            sentence.push(tok);
            stream.feed(model, &mut g, tok, None);
        }
        if i + 1 < k {
            stream.feed(model, &mut g, eos, None);
        }
        out.sentences.push(sentence);
        out.truncated.push(truncated);
    }
    Ok(out)
}

fn draw(g: &Graph, log_probs: crate::tape::Var, p: f64, rng: &mut dyn RngCore) -> Result<u32> {
    let dist: Vec<f64> = g.value(log_probs).data().iter().map(|x| x.exp()).collect();
    let filtered = top_p_filter(&dist, p)?;
    Ok(sample_index(&filtered, rng) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_nucleus_example() {
        let out = top_p_filter(&[0.5, 0.3, 0.15, 0.05], 0.6).unwrap();
        assert!((out[0] - 0.625).abs() < 1e-12);
        assert!((out[1] - 0.375).abs() < 1e-12);
        assert_eq!(&out[2..], &[0.0, 0.0]);
    }

    #[test]
    fn full_threshold_is_identity() {
        let d = [0.1, 0.2, 0.3, 0.4];
        let out = top_p_filter(&d, 1.0).unwrap();
        for (a, b) in out.iter().zip(d) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn small_threshold_gives_argmax() {
        let out = top_p_filter(&[0.2, 0.5, 0.3], 0.5).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
        let out = top_p_filter(&[0.2, 0.5, 0.3], 1e-9).unwrap();
        assert_eq!(out, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn ties_break_by_id() {
        assert_eq!(nucleus(&[0.25, 0.25, 0.25, 0.25], 0.5).unwrap(), vec![0, 1]);
        assert_eq!(nucleus(&[0.1, 0.45, 0.45], 0.4).unwrap(), vec![1]);
    }

    #[test]
    fn invalid_threshold() {
        assert!(top_p_filter(&[1.0], 0.0).is_err());
        assert!(top_p_filter(&[1.0], 1.5).is_err());
    }

    #[test]
    fn mask_reports_total_blocking() {
        let mut d = vec![0.5, 0.5];
        assert!(mask_and_renormalize(&mut d, &[true, true]).is_none());
        let mut d = vec![0.5, 0.25, 0.25];
        mask_and_renormalize(&mut d, &[true, false, false]).unwrap();
        assert_eq!(d, vec![0.0, 0.5, 0.5]);
    }
}
