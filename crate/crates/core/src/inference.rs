//! Amortized posterior over anchors, factorized over sentences.
//!
//! The constrained network encodes a sentence with a bidirectional LSTM, scores
//! every position with a linear layer and normalizes over the sentence's
//! anchor candidates, so every other token has exactly zero mass. The
//! unconstrained network encodes the sentence with a forward LSTM and maps
//! the last state to vocabulary logits.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{Special, StopwordSet, TokenizedStory, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{AnchorEntry, PlanSample};
use crate::nn::{LstmLayer, LstmState};
use crate::tape::{Graph, Matrix, ParamId, ParamSet, SetHandle, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorMode {
    Constrained,
    Unconstrained,
}

impl std::fmt::Display for PosteriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PosteriorMode::Constrained => "constrained",
            PosteriorMode::Unconstrained => "unconstrained",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub mode: PosteriorMode,
    /// Prepend the title to each sentence before encoding.
    pub condition_on_title: bool,
    pub init_scale: f64,
}

impl InferenceConfig {
    pub fn new(vocab_size: usize, hidden_dim: usize, mode: PosteriorMode) -> Self {
        InferenceConfig {
            vocab_size,
            embed_dim: hidden_dim,
            hidden_dim,
            mode,
            condition_on_title: false,
            init_scale: 0.1,
        }
    }
}

/// Vocabulary ids the unconstrained posterior may never propose:
/// structural markers and stopwords. The unknown token stays allowed.
pub fn posterior_block_mask(vocab: &Vocabulary, stopwords: &StopwordSet) -> Vec<bool> {
    (0..vocab.len() as u32)
        .map(|id| {
            (crate::corpus::is_special(id) && id != Special::Unk.id())
                || stopwords.contains(vocab.token(id))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub position: usize,
    pub token: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Support {
    /// Positions within the sentence.
    Positions(Vec<Candidate>),
    /// Every vocabulary id; blocked ids carry zero mass.
    Vocabulary(usize),
}

impl Support {
    pub fn len(&self) -> usize {
        match self {
            Support::Positions(c) => c.len(),
            Support::Vocabulary(v) => *v,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn token(&self, i: usize) -> u32 {
        match self {
            Support::Positions(c) => c[i].token,
            Support::Vocabulary(_) => i as u32,
        }
    }

    pub fn position(&self, i: usize) -> Option<usize> {
        match self {
            Support::Positions(c) => Some(c[i].position),
            Support::Vocabulary(_) => None,
        }
    }
}

/// The approximate posterior of one sentence's anchor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentencePosterior {
    pub support: Support,
    pub probs: Vec<f64>,
    /// Set when the sentence had no candidates and every position was used.
    pub fallback: bool,
}

impl SentencePosterior {
    pub fn entropy(&self) -> f64 {
        posterior_entropy(self)
    }

    /// Probability mass per distinct token, sorted by token id. Zero-mass
    /// tokens are omitted.
    pub fn type_masses(&self) -> Vec<(u32, f64)> {
        let mut out: Vec<(u32, f64)> = Vec::new();
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                out.push((self.support.token(i), p));
            }
        }
        out.sort_by_key(|&(t, _)| t);
        out.dedup_by(|b, a| {
            if a.0 == b.0 {
                a.1 += b.1;
                true
            } else {
                false
            }
        });
        out
    }

    /// Mass on token `v`, summed over positions.
    pub fn token_mass(&self, v: u32) -> f64 {
        (0..self.probs.len())
            .filter(|&i| self.support.token(i) == v)
            .map(|i| self.probs[i])
            .sum()
    }
}

/// `-Σ q ln q` over the support.
pub fn posterior_entropy(posterior: &SentencePosterior) -> f64 {
    -posterior
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Graph-level posterior of one sentence.
pub struct PosteriorNode {
    /// Log-probabilities over the support (1×n); blocked entries are `-inf`.
    pub log_probs: Var,
    pub support: Support,
    pub fallback: bool,
    /// Support columns with non-zero mass.
    pub live: Vec<usize>,
}

impl PosteriorNode {
    /// Entropy as a graph node.
    pub fn entropy(&self, g: &mut Graph) -> Var {
        let lp = g.gather(self.log_probs, &self.live);
        let p = g.exp(lp);
        let plp = g.mul(p, lp);
        let s = g.sum(plp);
        g.neg(s)
    }

    /// Live support columns grouped by token, sorted by token id.
    pub fn token_groups(&self) -> Vec<(u32, Vec<usize>)> {
        let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
        let mut cols = self.live.clone();
        cols.sort_by_key(|&c| (self.support.token(c), c));
        for c in cols {
            let t = self.support.token(c);
            match groups.last_mut() {
                Some((last, members)) if *last == t => members.push(c),
                _ => groups.push((t, vec![c])),
            }
        }
        groups
    }

    pub fn to_posterior(&self, g: &Graph) -> SentencePosterior {
        SentencePosterior {
            support: self.support.clone(),
            probs: g.value(self.log_probs).data().iter().map(|x| x.exp()).collect(),
            fallback: self.fallback,
        }
    }
}

enum Index {
    Constrained {
        embedding: ParamId,
        forward: LstmLayer,
        backward: LstmLayer,
        score_weight: ParamId,
        score_bias: ParamId,
    },
    Unconstrained {
        embedding: ParamId,
        lstm: LstmLayer,
        out_weight: ParamId,
        out_bias: ParamId,
    },
}

pub struct InferenceNet {
    config: InferenceConfig,
    params: ParamSet,
    blocked: Vec<bool>,
    index: Index,
}

impl Clone for InferenceNet {
    fn clone(&self) -> Self {
        InferenceNet::from_params(self.config.clone(), self.params.clone(), self.blocked.clone())
            .expect("an inference network's own parameters are well-formed")
    }
}

impl std::fmt::Debug for InferenceNet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InferenceNet")
            .field("config", &self.config)
            .field("scalars", &self.params.num_scalars())
            .finish()
    }
}

impl InferenceNet {
    /// `blocked[v]` removes id `v` from the unconstrained posterior's support.
    pub fn new<R: Rng + ?Sized>(config: InferenceConfig, blocked: Vec<bool>, rng: &mut R) -> Self {
        let (v, d, h, s) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.init_scale,
        );
        let mut params = ParamSet::new();
        params.add("embedding", Matrix::uniform(v, d, s, rng));
        match config.mode {
            PosteriorMode::Constrained => {
                LstmLayer::register(&mut params, "forward", d, h, s, rng);
                LstmLayer::register(&mut params, "backward", d, h, s, rng);
                params.add("score.weight", Matrix::uniform(2 * h, 1, s, rng));
                params.add("score.bias", Matrix::zeros(1, 1));
            }
            PosteriorMode::Unconstrained => {
                LstmLayer::register(&mut params, "encoder", d, h, s, rng);
                params.add("output.weight", Matrix::uniform(h, v, s, rng));
                params.add("output.bias", Matrix::zeros(1, v));
            }
        }
        InferenceNet::from_params(config, params, blocked).expect("freshly initialized parameters")
    }

    pub fn from_params(config: InferenceConfig, params: ParamSet, blocked: Vec<bool>) -> Result<Self> {
        let find = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing inference parameter `{name}`")))
        };
        let layer = |prefix: &str| {
            LstmLayer::find(&params, prefix)
                .filter(|l| l.input_size() == config.embed_dim && l.hidden_size() == config.hidden_dim)
                .ok_or_else(|| Error::Checkpoint(format!("bad inference layer `{prefix}`")))
        };
        if blocked.len() != config.vocab_size {
            return Err(Error::Config("posterior block mask does not cover the vocabulary".into()));
        }
        let embedding = find("embedding")?;
        if params.get(embedding).shape() != (config.vocab_size, config.embed_dim) {
            return Err(Error::Checkpoint("inference embedding has the wrong shape".into()));
        }
        let index = match config.mode {
            PosteriorMode::Constrained => Index::Constrained {
                embedding,
                forward: layer("forward")?,
                backward: layer("backward")?,
                score_weight: find("score.weight")?,
                score_bias: find("score.bias")?,
            },
            PosteriorMode::Unconstrained => Index::Unconstrained {
                embedding,
                lstm: layer("encoder")?,
                out_weight: find("output.weight")?,
                out_bias: find("output.bias")?,
            },
        };
        Ok(InferenceNet {
            config,
            params,
            blocked,
            index,
        })
    }

    pub fn config(&self) -> &InferenceConfig {
        &self.config
    }

    pub fn mode(&self) -> PosteriorMode {
        self.config.mode
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn blocked(&self) -> &[bool] {
        &self.blocked
    }

    /// Builds the posterior of every sentence of `story`.
    pub fn posterior_graph(
        &self,
        g: &mut Graph,
        h: SetHandle,
        story: &TokenizedStory,
    ) -> Result<Vec<PosteriorNode>> {
        (0..story.num_sentences())
            .map(|i| self.sentence_posterior(g, h, story, i))
            .collect()
    }

    fn encoder_input(&self, story: &TokenizedStory, i: usize) -> (Vec<u32>, usize) {
        let mut tokens = Vec::new();
        if self.config.condition_on_title {
            if let Some(title) = &story.title {
                tokens.extend_from_slice(title);
                tokens.push(Special::TitleSep.id());
            }
        }
        let offset = tokens.len();
        tokens.extend_from_slice(story.words(i));
        (tokens, offset)
    }

    fn sentence_posterior(
        &self,
        g: &mut Graph,
        h: SetHandle,
        story: &TokenizedStory,
        i: usize,
    ) -> Result<PosteriorNode> {
        let words = story.words(i);
        if words.is_empty() {
            return Err(Error::contract(format!("sentence {i} is empty")));
        }
        let (tokens, offset) = self.encoder_input(story, i);
        let hd = self.config.hidden_dim;
        match &self.index {
            Index::Constrained {
                embedding,
                forward,
                backward,
                score_weight,
                score_bias,
            } => {
                let emb = g.param(h, *embedding);
                let inputs: Vec<Var> = tokens.iter().map(|&t| g.row(emb, t as usize)).collect();
                let mut fwd = Vec::with_capacity(inputs.len());
                let mut state = LstmState::zeros(g, hd);
                for &x in &inputs {
                    state = forward.step(g, h, x, state);
                    fwd.push(state.h);
                }
                let mut bwd = vec![state.h; inputs.len()];
                let mut state = LstmState::zeros(g, hd);
                for (j, &x) in inputs.iter().enumerate().rev() {
                    state = backward.step(g, h, x, state);
                    bwd[j] = state.h;
                }
                let w = g.param(h, *score_weight);
                let b = g.param(h, *score_bias);
                let scores: Vec<Var> = (offset..tokens.len())
                    .map(|j| {
                        let enc = g.concat(&[fwd[j], bwd[j]]);
                        let s = g.matmul(enc, w);
                        g.add(s, b)
                    })
                    .collect();
                let scores = g.concat(&scores);
                let candidates = &story.candidates[i];
                let fallback = candidates.is_empty();
                let positions: Vec<usize> = if fallback {
                    log::warn!("sentence {i} has no anchor candidates; using every position");
                    (0..words.len()).collect()
                } else {
                    candidates.clone()
                };
                let picked = g.gather(scores, &positions);
                let log_probs = g.log_softmax(picked);
                let support = Support::Positions(
                    positions
                        .iter()
                        .map(|&p| Candidate {
                            position: p,
                            token: words[p],
                        })
                        .collect(),
                );
                Ok(PosteriorNode {
                    log_probs,
                    live: (0..positions.len()).collect(),
                    support,
                    fallback,
                })
            }
            Index::Unconstrained {
                embedding,
                lstm,
                out_weight,
                out_bias,
            } => {
                let emb = g.param(h, *embedding);
                let mut state = LstmState::zeros(g, hd);
                for &t in &tokens {
                    let x = g.row(emb, t as usize);
                    state = lstm.step(g, h, x, state);
                }
                let w = g.param(h, *out_weight);
                let b = g.param(h, *out_bias);
                let logits = g.matmul(state.h, w);
                let logits = g.add(logits, b);
                let mask = Matrix::row_vector(
                    self.blocked
                        .iter()
                        .map(|&blk| if blk { f64::NEG_INFINITY } else { 0.0 })
                        .collect(),
                );
                let mask = g.constant(mask);
                let logits = g.add(logits, mask);
                let log_probs = g.log_softmax(logits);
                Ok(PosteriorNode {
                    log_probs,
                    support: Support::Vocabulary(self.config.vocab_size),
                    fallback: false,
                    live: (0..self.config.vocab_size).filter(|&v| !self.blocked[v]).collect(),
                })
            }
        }
    }

    /// One posterior per sentence, evaluated without gradients.
    pub fn compute_posteriors(&self, story: &TokenizedStory) -> Result<Vec<SentencePosterior>> {
        let mut g = Graph::new();
        let h = g.bind(&self.params);
        let nodes = self.posterior_graph(&mut g, h, story)?;
        Ok(nodes.iter().map(|n| n.to_posterior(&g)).collect())
    }
}

/// Index drawn from `probs` by inversion of a single uniform draw.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if target < acc {
            return i;
        }
    }
    last
}

/// Draws one anchor per sentence and records its posterior log-probability.
pub fn sample_plan_from_posterior(posteriors: &[SentencePosterior], rng: &mut dyn RngCore) -> PlanSample {
    let anchors = posteriors
        .iter()
        .map(|q| {
            let i = sample_index(&q.probs, rng);
            AnchorEntry {
                token: q.support.token(i),
                position: q.support.position(i),
                prior_log_prob: None,
                posterior_log_prob: Some(q.probs[i].ln()),
            }
        })
        .collect();
    PlanSample { anchors }
}

/// One line of a posterior audit dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub story_id: usize,
    pub sentence_index: usize,
    pub support: Vec<String>,
    pub probabilities: Vec<f64>,
}

pub fn posterior_records(
    story_id: usize,
    posteriors: &[SentencePosterior],
    vocab: &Vocabulary,
) -> Vec<PosteriorRecord> {
    posteriors
        .iter()
        .enumerate()
        .map(|(sentence_index, q)| {
            let live: Vec<usize> = (0..q.probs.len()).filter(|&i| q.probs[i] > 0.0).collect();
            PosteriorRecord {
                story_id,
                sentence_index,
                support: live
                    .iter()
                    .map(|&i| vocab.token(q.support.token(i)).to_string())
                    .collect(),
                probabilities: live.iter().map(|&i| q.probs[i]).collect(),
            }
        })
        .collect()
}
