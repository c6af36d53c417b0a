//! ELBO terms and their gradients for one story.
//!
//! Decoder and prior parameters receive pathwise gradients. Inference
//! parameters receive a score-function gradient `(R - b) ∇ log q(z)` plus an
//! entropy bonus, and, for sparse posteriors, the pathwise gradient of the
//! exact per-step KL. Every gradient returned here is an ascent direction of
//! the surrogate objective.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedStory;
use crate::error::{Error, Result};
use crate::inference::{sample_index, InferenceNet, SentencePosterior};
use crate::model::{AnchorEntry, Generator, PlanSample};
use crate::tape::{Gradients, Graph, Matrix, Var};

/// Exponential moving average of the REINFORCE reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    pub value: f64,
    pub updates: u64,
}

impl BaselineState {
    /// `b ← (1 − α)·b + α·r`.
    pub fn update(self, reward: f64, alpha: f64) -> BaselineState {
        BaselineState {
            value: (1.0 - alpha) * self.value + alpha * reward,
            updates: self.updates + 1,
        }
    }
}

/// `max(kl_i, λ)` per component.
pub fn apply_free_bits(kl: &[f64], lambda: f64) -> Vec<f64> {
    kl.iter().map(|&k| k.max(lambda)).collect()
}

/// `weight · Σ_t ‖h_{t+1} − h_t‖²`.
pub fn temporal_penalty(states: &[Vec<f64>], weight: f64) -> f64 {
    if weight == 0.0 {
        return 0.0;
    }
    weight
        * states
            .windows(2)
            .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| (b - a) * (b - a)).sum::<f64>())
            .sum::<f64>()
}

fn temporal_penalty_graph(g: &mut Graph, tracks: &[Vec<Var>], weight: f64) -> Option<Var> {
    if weight == 0.0 {
        return None;
    }
    let mut terms = Vec::new();
    for track in tracks {
        for w in track.windows(2) {
            let d = g.sub(w[1], w[0]);
            terms.push(g.sum_squares(d));
        }
    }
    let total = g.add_all(&terms);
    Some(g.scale(total, weight))
}

/// `KL(q ‖ p)` summed over q's support at the token level. Prior masses
/// below `floor` are raised to it; the flag reports whether that happened.
pub fn sparse_kl(q: &SentencePosterior, prior: &[f64], floor: f64) -> (f64, bool) {
    let mut floored = false;
    let mut kl = 0.0;
    for (v, mass) in q.type_masses() {
        let mut p = prior[v as usize];
        if p < floor {
            p = floor;
            floored = true;
        }
        kl += mass * (mass.ln() - p.ln());
    }
    (kl.max(0.0), floored)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlReport {
    pub components: Vec<f64>,
    /// Supported tokens whose prior mass underflowed the floor.
    pub floor_events: usize,
    /// The context anchors drawn along the way.
    pub context: Vec<u32>,
}

/// Exact per-step KL for sparse posteriors: step i sums over q_i's support
/// against the prior given anchors drawn from q_1..q_{i-1}.
pub fn kl_exact_stepwise(
    posteriors: &[SentencePosterior],
    model: &Generator,
    title: Option<&[u32]>,
    floor: f64,
    rng: &mut dyn RngCore,
) -> Result<KlReport> {
    let mut report = KlReport {
        components: Vec::with_capacity(posteriors.len()),
        floor_events: 0,
        context: Vec::with_capacity(posteriors.len()),
    };
    for q in posteriors {
        let prior = model.prior_step_distribution(title, &report.context);
        for (v, _) in q.type_masses() {
            if prior[v as usize] < floor {
                report.floor_events += 1;
            }
        }
        let (kl, _) = sparse_kl(q, &prior, floor);
        report.components.push(kl);
        let i = sample_index(&q.probs, rng);
        report.context.push(q.support.token(i));
    }
    Ok(report)
}

/// Monte-Carlo estimate of `E_q[log q(z_i) − log p(z_i | z_<i, t)]` per step
/// from `n_samples` ancestral draws.
pub fn kl_monte_carlo(
    posteriors: &[SentencePosterior],
    model: &Generator,
    title: Option<&[u32]>,
    rng: &mut dyn RngCore,
    n_samples: usize,
) -> Result<Vec<f64>> {
    if n_samples == 0 {
        return Err(Error::contract("Monte-Carlo KL needs at least one sample"));
    }
    let mut sums = vec![0.0; posteriors.len()];
    for _ in 0..n_samples {
        let plan: Vec<u32> = posteriors
            .iter()
            .map(|q| q.support.token(sample_index(&q.probs, rng)))
            .collect();
        let prior = model.plan_log_probs(title, &plan);
        for (i, q) in posteriors.iter().enumerate() {
            sums[i] += q.token_mass(plan[i]).ln() - prior[i];
        }
    }
    Ok(sums.into_iter().map(|s| s / n_samples as f64).collect())
}

/// How the KL term enters the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KlTreatment {
    /// Reconstruction only.
    Skip,
    /// Exact per-step sum over the sparse support.
    Exact,
    /// Single-sample estimate at the plan used for reconstruction.
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveSettings {
    pub kl: KlTreatment,
    pub free_bits: f64,
    pub entropy_weight: f64,
    pub temporal_weight: f64,
    pub kl_floor: f64,
    /// Enable decoder dropout.
    pub dropout: bool,
}

impl ObjectiveSettings {
    pub fn reconstruction_only(entropy_weight: f64) -> Self {
        ObjectiveSettings {
            kl: KlTreatment::Skip,
            free_bits: 0.0,
            entropy_weight,
            temporal_weight: 0.0,
            kl_floor: 1e-30,
            dropout: false,
        }
    }
}

/// One sample of the ELBO and its auxiliary terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElboEstimate {
    /// `log p(x | z, t)` at the sampled plan.
    pub reconstruction: f64,
    pub kl_raw: Vec<f64>,
    pub kl_thresholded: Vec<f64>,
    /// Posterior entropy summed over sentences.
    pub entropy: f64,
    pub temporal: f64,
    pub plan: PlanSample,
    pub floor_events: usize,
}

impl ElboEstimate {
    /// `reconstruction − Σ max(KL_i, λ)`; auxiliary terms are excluded.
    pub fn total(&self) -> f64 {
        self.reconstruction - self.kl_thresholded.iter().sum::<f64>()
    }

    /// `reconstruction − Σ KL_i`.
    pub fn elbo(&self) -> f64 {
        self.reconstruction - self.kl_raw.iter().sum::<f64>()
    }
}

/// An ELBO sample together with gradients of the surrogate objective.
#[derive(Clone, Debug)]
pub struct StoryObjective {
    pub estimate: ElboEstimate,
    /// The quantity tracked by the moving-average baseline.
    pub reward: f64,
    pub model_grads: Gradients,
    pub inference_grads: Gradients,
}

/// Samples a plan from the posterior and builds the surrogate objective.
pub fn story_objective(
    model: &Generator,
    inference: &InferenceNet,
    story: &TokenizedStory,
    baseline: f64,
    settings: &ObjectiveSettings,
    rng: &mut dyn RngCore,
) -> Result<StoryObjective> {
    let mut g = Graph::new();
    let hm = g.bind(model.params());
    let hi = g.bind(inference.params());
    let nodes = inference.posterior_graph(&mut g, hi, story)?;

    let mut anchors = Vec::with_capacity(nodes.len());
    let mut sampled_log_q = Vec::with_capacity(nodes.len());
    for node in &nodes {
        let probs: Vec<f64> = g.value(node.log_probs).data().iter().map(|x| x.exp()).collect();
        let col = sample_index(&probs, rng);
        let lq = g.pick(node.log_probs, col);
        anchors.push(AnchorEntry {
            token: node.support.token(col),
            position: node.support.position(col),
            prior_log_prob: None,
            posterior_log_prob: Some(g.item(lq)),
        });
        sampled_log_q.push(lq);
    }

    let score = model.score(
        &mut g,
        hm,
        story.title.as_deref(),
        Some(&anchors),
        story,
        if settings.dropout { Some(rng) } else { None },
    )?;
    for (a, &lp) in anchors.iter_mut().zip(&score.anchor_log_probs) {
        a.prior_log_prob = Some(g.item(lp));
    }
    let reconstruction = g.item(score.reconstruction);
    if !reconstruction.is_finite() {
        return Err(Error::NonFinite {
            what: "reconstruction",
            story: 0,
        });
    }

    let mut kl_vars = Vec::with_capacity(nodes.len());
    let mut floor_events = 0;
    let log_floor = settings.kl_floor.ln();
    match settings.kl {
        KlTreatment::Skip => {}
        KlTreatment::Exact => {
            for (node, &prior) in nodes.iter().zip(&score.prior_log_probs) {
                let mut terms = Vec::new();
                for (token, cols) in node.token_groups() {
                    let lq = if cols.len() == 1 {
                        g.pick(node.log_probs, cols[0])
                    } else {
                        let sel = g.gather(node.log_probs, &cols);
                        g.log_sum_exp(sel)
                    };
                    let q = g.exp(lq);
                    let mut lp = g.pick(prior, token as usize);
                    if g.item(lp) < log_floor {
                        floor_events += 1;
                        lp = g.scalar(log_floor);
                    }
                    let diff = g.sub(lq, lp);
                    terms.push(g.mul(q, diff));
                }
                kl_vars.push(g.add_all(&terms));
            }
        }
        KlTreatment::MonteCarlo => {
            for ((node, a), &lp) in nodes.iter().zip(&anchors).zip(&score.anchor_log_probs) {
                let cols: Vec<usize> = node
                    .live
                    .iter()
                    .copied()
                    .filter(|&c| node.support.token(c) == a.token)
                    .collect();
                let lq = if cols.len() == 1 {
                    g.pick(node.log_probs, cols[0])
                } else {
                    let sel = g.gather(node.log_probs, &cols);
                    g.log_sum_exp(sel)
                };
                kl_vars.push(g.sub(lq, lp));
            }
        }
    }
    let kl_raw: Vec<f64> = kl_vars.iter().map(|&v| g.item(v)).collect();
    let kl_thresholded = apply_free_bits(&kl_raw, settings.free_bits);
    // components under the threshold contribute a constant
    let kl_active: Vec<Var> = kl_vars
        .iter()
        .zip(&kl_raw)
        .filter(|(_, &raw)| raw >= settings.free_bits)
        .map(|(&v, _)| v)
        .collect();
    let kl_active = g.add_all(&kl_active);

    let entropies: Vec<Var> = nodes.iter().map(|n| n.entropy(&mut g)).collect();
    let entropy = g.add_all(&entropies);
    let temporal = temporal_penalty_graph(&mut g, &score.hidden_tracks, settings.temporal_weight);

    let reward = match settings.kl {
        KlTreatment::MonteCarlo => reconstruction - kl_thresholded.iter().sum::<f64>(),
        _ => reconstruction,
    };
    let advantage = reward - baseline;
    let log_q = g.add_all(&sampled_log_q);
    let score_term = g.scale(log_q, advantage);
    let bonus = g.scale(entropy, settings.entropy_weight);

    let mut objective = g.sub(score.reconstruction, kl_active);
    objective = g.add(objective, score_term);
    objective = g.add(objective, bonus);
    if let Some(t) = temporal {
        objective = g.sub(objective, t);
    }

    let estimate = ElboEstimate {
        reconstruction,
        kl_raw: kl_raw.iter().map(|k| k.max(0.0)).collect(),
        kl_thresholded,
        entropy: g.item(entropy),
        temporal: temporal.map_or(0.0, |t| g.item(t)),
        plan: PlanSample { anchors },
        floor_events,
    };
    let mut back = g.backward(objective);
    Ok(StoryObjective {
        estimate,
        reward,
        model_grads: back.take_params(hm),
        inference_grads: back.take_params(hi),
    })
}

/// Result of [`reconstruction_and_reinforce`].
#[derive(Clone, Debug)]
pub struct ReinforceStep {
    pub reconstruction: f64,
    pub plan: PlanSample,
    /// `∇_θ log p(x | z, t)`.
    pub decoder_grads: Gradients,
    /// `(R − b) ∇_γ log q(z | x, t) + w_H ∇_γ H(q)`.
    pub inference_grads: Gradients,
    pub baseline: BaselineState,
}

/// Reconstruction term with its pathwise decoder gradient and the
/// score-function gradient for the inference network. The baseline is
/// updated after it has been used.
pub fn reconstruction_and_reinforce(
    model: &Generator,
    inference: &InferenceNet,
    story: &TokenizedStory,
    baseline: BaselineState,
    alpha: f64,
    entropy_weight: f64,
    rng: &mut dyn RngCore,
) -> Result<ReinforceStep> {
    let settings = ObjectiveSettings::reconstruction_only(entropy_weight);
    let out = story_objective(model, inference, story, baseline.value, &settings, rng)?;
    Ok(ReinforceStep {
        reconstruction: out.estimate.reconstruction,
        plan: out.estimate.plan,
        decoder_grads: out.model_grads,
        inference_grads: out.inference_grads,
        baseline: baseline.update(out.reward, alpha),
    })
}

/// Loss of a plan-free or plan-supervised baseline model on one story.
#[derive(Clone, Debug)]
pub struct BaselineLoss {
    /// `−log p(x | t, plan)`.
    pub decoder_nll: f64,
    /// `−log p(plan | t)`; zero without a plan.
    pub prior_nll: f64,
    pub temporal: f64,
    /// Gradient of `decoder_nll + prior_nll + temporal` (a descent direction).
    pub grads: Gradients,
}

impl BaselineLoss {
    pub fn loss(&self) -> f64 {
        self.decoder_nll + self.prior_nll
    }
}

/// Teacher-forced loss for the baselines: `plan = None` scores the story
/// given the title only; a plan adds its prior NLL.
pub fn baseline_loss(
    model: &Generator,
    story: &TokenizedStory,
    plan: Option<&[u32]>,
    temporal_weight: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<BaselineLoss> {
    let mut g = Graph::new();
    let h = g.bind(model.params());
    let anchors: Option<Vec<AnchorEntry>> =
        plan.map(|p| p.iter().map(|&t| AnchorEntry::token(t)).collect());
    let score = model.score(&mut g, h, story.title.as_deref(), anchors.as_deref(), story, rng)?;
    let decoder_nll = -g.item(score.reconstruction);
    let prior_nll = -g.item(score.prior_total);
    if !decoder_nll.is_finite() || !prior_nll.is_finite() {
        return Err(Error::NonFinite {
            what: "baseline loss",
            story: 0,
        });
    }
    let temporal = temporal_penalty_graph(&mut g, &score.hidden_tracks, temporal_weight);
    let nll = g.add(score.reconstruction, score.prior_total);
    let mut loss = g.neg(nll);
    if let Some(t) = temporal {
        loss = g.add(loss, t);
    }
    let back = g.backward(loss);
    Ok(BaselineLoss {
        decoder_nll,
        prior_nll,
        temporal: temporal.map_or(0.0, |t| g.item(t)),
        grads: back.params(h).clone(),
    })
}

/// Hidden-state sequences of the generator, for inspecting the temporal penalty.
pub fn hidden_tracks(
    model: &Generator,
    story: &TokenizedStory,
    plan: Option<&[AnchorEntry]>,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let mut g = Graph::new();
    let h = g.bind(model.params());
    let score = model.score(&mut g, h, story.title.as_deref(), plan, story, None)?;
    Ok(score
        .hidden_tracks
        .iter()
        .map(|t| t.iter().map(|&v| g.value(v).data().to_vec()).collect())
        .collect())
}

/// Temporal penalty of a row-vector track as computed on the tape.
pub fn temporal_penalty_on_tape(states: &[Vec<f64>], weight: f64) -> f64 {
    let mut g = Graph::new();
    let track: Vec<Var> = states
        .iter()
        .map(|s| g.constant(Matrix::row_vector(s.clone())))
        .collect();
    temporal_penalty_graph(&mut g, &[track], weight).map_or(0.0, |v| g.item(v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::{Candidate, Support};

    #[test]
    fn baseline_update_rule() {
        let b = BaselineState::default().update(10.0, 0.1);
        assert_eq!(b.value, 1.0);
        assert_eq!(b.updates, 1);
    }

    #[test]
    fn free_bits_examples() {
        assert_eq!(apply_free_bits(&[0.1, 2.0], 0.0), vec![0.1, 2.0]);
        assert_eq!(apply_free_bits(&[0.1, 2.0], 0.5), vec![0.5, 2.0]);
    }

    #[test]
    fn temporal_examples() {
        let constant = vec![vec![0.3, -1.0]; 4];
        assert_eq!(temporal_penalty(&constant, 1.0), 0.0);
        let step = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        assert_eq!(temporal_penalty(&step, 1.0), 1.0);
        assert_eq!(temporal_penalty(&step, 0.0), 0.0);
        assert_eq!(temporal_penalty_on_tape(&step, 1.0), 1.0);
    }

    fn two_point(q: (f64, f64)) -> SentencePosterior {
        SentencePosterior {
            support: Support::Positions(vec![
                Candidate { position: 0, token: 0 },
                Candidate { position: 1, token: 1 },
            ]),
            probs: vec![q.0, q.1],
            fallback: false,
        }
    }

    #[test]
    fn sparse_kl_two_terms() {
        let (kl, floored) = sparse_kl(&two_point((0.7, 0.3)), &[0.1, 0.2, 0.7], 1e-30);
        let expected = 0.7 * (0.7f64 / 0.1).ln() + 0.3 * (0.3f64 / 0.2).ln();
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 1.4838).abs() < 1e-4);
        assert!(!floored);
    }

    #[test]
    fn sparse_kl_identical_is_zero() {
        let (kl, _) = sparse_kl(&two_point((0.25, 0.75)), &[0.25, 0.75], 1e-30);
        assert!(kl.abs() < 1e-15);
    }

    #[test]
    fn sparse_kl_floor() {
        let (kl, floored) = sparse_kl(&two_point((0.5, 0.5)), &[0.0, 1.0], 1e-10);
        assert!(floored);
        assert!(kl.is_finite() && kl > 0.0);
    }
}
