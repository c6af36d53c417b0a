//! The generative model: a shared embedding and recurrent backbone with an
//! autoregressive anchor prior and a story decoder.
//!
//! Everything runs through one token stream:
//!
//! ```text
//! title… <tsep> z_1 … z_K <psep> sentence_1 <eos> … sentence_K <eos>
//! ```
//!
//! The prior head predicts each anchor from the state before it; the decoder
//! head predicts story tokens. The constrained decoder starts every sentence
//! from the surface-order context, copies its anchor, generates leftwards to a
//! left-boundary marker and then rightwards to the sentence end, with the
//! anchor embedding fed alongside every input of that sentence.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::corpus::{Special, TokenizedStory};
use crate::error::{Error, Result};
use crate::nn::{dropout_masks, LstmStack, LstmState};
use crate::tape::{Graph, Matrix, ParamId, ParamSet, SetHandle, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderMode {
    Unconstrained,
    Constrained,
}

impl std::fmt::Display for DecoderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecoderMode::Unconstrained => "unconstrained",
            DecoderMode::Constrained => "constrained",
        })
    }
}

impl std::str::FromStr for DecoderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unconstrained" => Ok(DecoderMode::Unconstrained),
            "constrained" => Ok(DecoderMode::Constrained),
            other => Err(Error::Config(format!("unknown decoder mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub decoder: DecoderMode,
    pub init_scale: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize, hidden_dim: usize, decoder: DecoderMode) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: hidden_dim,
            hidden_dim,
            layers: 3,
            dropout: 0.3,
            decoder,
            init_scale: 0.1,
        }
    }
}

/// One anchor of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub token: u32,
    /// Index into the sentence; present when produced by constrained machinery.
    pub position: Option<usize>,
    pub prior_log_prob: Option<f64>,
    pub posterior_log_prob: Option<f64>,
}

impl AnchorEntry {
    pub fn token(token: u32) -> Self {
        AnchorEntry {
            token,
            position: None,
            prior_log_prob: None,
            posterior_log_prob: None,
        }
    }

    pub fn at(token: u32, position: usize) -> Self {
        AnchorEntry {
            position: Some(position),
            ..AnchorEntry::token(token)
        }
    }
}

/// A sequence of anchors, one per sentence.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanSample {
    pub anchors: Vec<AnchorEntry>,
}

impl PlanSample {
    pub fn from_tokens(tokens: &[u32]) -> Self {
        PlanSample {
            anchors: tokens.iter().map(|&t| AnchorEntry::token(t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn tokens(&self) -> Vec<u32> {
        self.anchors.iter().map(|a| a.token).collect()
    }

    /// Sum of recorded prior log-probabilities, if every step has one.
    pub fn prior_log_prob(&self) -> Option<f64> {
        self.anchors.iter().map(|a| a.prior_log_prob).sum()
    }

    pub fn posterior_log_prob(&self) -> Option<f64> {
        self.anchors.iter().map(|a| a.posterior_log_prob).sum()
    }
}

/// One step of the constrained decoder's generation order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Emission<T> {
    Token(T),
    LeftBoundary,
    End,
}

/// Generation order for one sentence: the anchor, the tokens left of it
/// from right to left, a left boundary, the tokens right of it, then the end.
pub fn linearize_constrained<T: Clone>(sentence: &[T], anchor_pos: usize) -> Result<Vec<Emission<T>>> {
    if anchor_pos >= sentence.len() {
        return Err(Error::contract(format!(
            "anchor position {anchor_pos} outside a sentence of length {}",
            sentence.len()
        )));
    }
    let mut out = Vec::with_capacity(sentence.len() + 2);
    out.push(Emission::Token(sentence[anchor_pos].clone()));
    out.extend(sentence[..anchor_pos].iter().rev().cloned().map(Emission::Token));
    out.push(Emission::LeftBoundary);
    out.extend(sentence[anchor_pos + 1..].iter().cloned().map(Emission::Token));
    out.push(Emission::End);
    Ok(out)
}

/// Inverse of [`linearize_constrained`]; returns the surface sentence.
pub fn delinearize_constrained<T: Clone>(emissions: &[Emission<T>]) -> Result<Vec<T>> {
    Ok(split_constrained(emissions)?.0)
}

/// Surface sentence and anchor position of a well-formed emission list.
pub fn split_constrained<T: Clone>(emissions: &[Emission<T>]) -> Result<(Vec<T>, usize)> {
    let anchor = match emissions.first() {
        Some(Emission::Token(t)) => t.clone(),
        _ => return Err(Error::Decode("emissions must start with the anchor token".into())),
    };
    if !matches!(emissions.last(), Some(Emission::End)) || emissions.len() < 3 {
        return Err(Error::Decode("emissions must end with a single sentence end".into()));
    }
    let body = &emissions[1..emissions.len() - 1];
    let boundaries = body.iter().filter(|e| matches!(e, Emission::LeftBoundary)).count();
    if boundaries != 1 {
        return Err(Error::Decode(format!("expected one left boundary, found {boundaries}")));
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut seen_boundary = false;
    for e in body {
        match e {
            Emission::Token(t) if seen_boundary => right.push(t.clone()),
            Emission::Token(t) => left.push(t.clone()),
            Emission::LeftBoundary => seen_boundary = true,
            Emission::End => return Err(Error::Decode("sentence end before the last emission".into())),
        }
    }
    let position = left.len();
    left.reverse();
    left.push(anchor);
    left.extend(right);
    Ok((left, position))
}

pub(crate) fn emission_id(e: &Emission<u32>) -> u32 {
    match e {
        Emission::Token(t) => *t,
        Emission::LeftBoundary => Special::LeftBoundary.id(),
        Emission::End => Special::Eos.id(),
    }
}

/// Which structural tokens the decoder may emit at a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Phase {
    /// Left-to-right surface decoding.
    Surface,
    /// Constrained decoder before the left boundary.
    Left,
    /// Constrained decoder after the left boundary.
    Right,
}

struct Index {
    embedding: ParamId,
    lstm: LstmStack,
    projection: Option<(ParamId, ParamId)>,
    decoder_bias: ParamId,
    prior_weight: ParamId,
    prior_hidden_bias: ParamId,
    prior_bias: ParamId,
}

/// Model parameters together with their layout.
pub struct Generator {
    config: ModelConfig,
    params: ParamSet,
    index: Index,
}

impl Clone for Generator {
    fn clone(&self) -> Self {
        Generator::from_params(self.config.clone(), self.params.clone())
            .expect("a generator's own parameters are well-formed")
    }
}

impl std::fmt::Debug for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generator")
            .field("config", &self.config)
            .field("scalars", &self.params.num_scalars())
            .finish()
    }
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Self {
        let (v, d, h, s) = (
            config.vocab_size,
            config.embed_dim,
            config.hidden_dim,
            config.init_scale,
        );
        let mut params = ParamSet::new();
        params.add("embedding", Matrix::uniform(v, d, s, rng));
        let input = match config.decoder {
            DecoderMode::Unconstrained => d,
            DecoderMode::Constrained => 2 * d,
        };
        LstmStack::register(&mut params, "lstm", input, h, config.layers, s, rng);
        if d != h {
            params.add("decoder.projection", Matrix::uniform(h, d, s, rng));
            params.add("decoder.projection_bias", Matrix::zeros(1, d));
        }
        params.add("decoder.bias", Matrix::zeros(1, v));
        params.add("prior.weight", Matrix::uniform(h, d, s, rng));
        params.add("prior.hidden_bias", Matrix::zeros(1, d));
        params.add("prior.bias", Matrix::zeros(1, v));
        Generator::from_params(config, params).expect("freshly initialized parameters")
    }

    /// Wraps loaded parameters, checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        let find = |name: &str| {
            params
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let expect = |id: ParamId, shape: (usize, usize)| {
            let got = params.get(id).shape();
            if got == shape {
                Ok(())
            } else {
                Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {got:?}, expected {shape:?}",
                    params.name(id)
                )))
            }
        };
        let (v, d, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let embedding = find("embedding")?;
        expect(embedding, (v, d))?;
        let lstm = LstmStack::find(&params, "lstm")
            .ok_or_else(|| Error::Checkpoint("missing recurrent layers".into()))?;
        let input = match config.decoder {
            DecoderMode::Unconstrained => d,
            DecoderMode::Constrained => 2 * d,
        };
        if lstm.depth() != config.layers || lstm.hidden_size() != h || lstm.input_size() != input {
            return Err(Error::Checkpoint("recurrent layers do not match the config".into()));
        }
        let projection = if d != h {
            let w = find("decoder.projection")?;
            let b = find("decoder.projection_bias")?;
            expect(w, (h, d))?;
            expect(b, (1, d))?;
            Some((w, b))
        } else {
            None
        };
        let decoder_bias = find("decoder.bias")?;
        expect(decoder_bias, (1, v))?;
        let prior_weight = find("prior.weight")?;
        expect(prior_weight, (h, d))?;
        let prior_hidden_bias = find("prior.hidden_bias")?;
        expect(prior_hidden_bias, (1, d))?;
        let prior_bias = find("prior.bias")?;
        expect(prior_bias, (1, v))?;
        Ok(Generator {
            config,
            params,
            index: Index {
                embedding,
                lstm,
                projection,
                decoder_bias,
                prior_weight,
                prior_hidden_bias,
                prior_bias,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn decoder_mode(&self) -> DecoderMode {
        self.config.decoder
    }

    /// Opens a stream at the start of the title.
    pub(crate) fn stream(&self, g: &mut Graph, h: SetHandle, rng: Option<&mut dyn RngCore>) -> Stream {
        let dropout = match rng {
            Some(rng) if self.config.dropout > 0.0 && self.config.layers > 1 => Some(dropout_masks(
                g,
                self.config.dropout,
                self.config.hidden_dim,
                self.config.layers - 1,
                rng,
            )),
            _ => None,
        };
        let states = self.index.lstm.zero_state(g);
        let top = states.last().expect("at least one layer").h;
        let zeros = g.constant(Matrix::zeros(1, self.config.embed_dim));
        Stream {
            params: h,
            states,
            dropout,
            zeros,
            track: vec![top],
            masks: StructuralMasks::default(),
        }
    }

    /// Builds the scoring graph for `story` under `plan`.
    ///
    /// `plan = None` scores the story without any anchors (the plan-free
    /// language model). Supplying `rng` enables dropout.
    pub fn score(
        &self,
        g: &mut Graph,
        h: SetHandle,
        title: Option<&[u32]>,
        plan: Option<&[AnchorEntry]>,
        story: &TokenizedStory,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<ScoreGraph> {
        let k = story.num_sentences();
        if let Some(plan) = plan {
            if plan.len() != k {
                return Err(Error::contract(format!(
                    "plan has {} anchors for a story of {k} sentences",
                    plan.len()
                )));
            }
        }
        let mut stream = self.stream(g, h, rng);
        let mut prior_log_probs = Vec::new();
        let mut anchor_log_probs = Vec::new();
        stream.feed_title(self, g, title);
        if let Some(plan) = plan {
            for a in plan {
                let lp = stream.prior(self, g);
                anchor_log_probs.push(g.pick(lp, a.token as usize));
                prior_log_probs.push(lp);
                stream.feed(self, g, a.token, None);
            }
        }
        stream.feed(self, g, Special::PlanSep.id(), None);

        let mut token_log_probs = Vec::with_capacity(k);
        let mut tracks = Vec::new();
        match (self.config.decoder, plan) {
            (DecoderMode::Constrained, None) => {
                return Err(Error::contract("the constrained decoder needs a plan"));
            }
            (DecoderMode::Unconstrained, _) => {
                for (i, sentence) in story.sentences.iter().enumerate() {
                    let mut lps = Vec::with_capacity(sentence.len());
                    for (j, &tok) in sentence.iter().enumerate() {
                        let lp = stream.decoder(self, g, Phase::Surface);
                        lps.push(g.pick(lp, tok as usize));
                        let last = i + 1 == k && j + 1 == sentence.len();
                        if !last {
                            stream.feed(self, g, tok, None);
                        }
                    }
                    token_log_probs.push(lps);
                }
            }
            (DecoderMode::Constrained, Some(plan)) => {
                for (i, anchor) in plan.iter().enumerate() {
                    let words = story.words(i);
                    let pos = anchor.position.ok_or_else(|| {
                        Error::contract(format!("anchor {i} has no position in its sentence"))
                    })?;
                    if words.get(pos) != Some(&anchor.token) {
                        return Err(Error::contract(format!(
                            "anchor {i} is not at position {pos} of its sentence"
                        )));
                    }
                    let order = linearize_constrained(words, pos)?;
                    let mut branch = stream.branch();
                    let mut lps = Vec::with_capacity(order.len() - 1);
                    let mut phase = Phase::Left;
                    branch.feed(self, g, anchor.token, Some(anchor.token));
                    for e in &order[1..] {
                        let lp = branch.decoder(self, g, phase);
                        lps.push(g.pick(lp, emission_id(e) as usize));
                        match e {
                            Emission::End => {}
                            Emission::LeftBoundary => {
                                phase = Phase::Right;
                                branch.feed(self, g, Special::LeftBoundary.id(), Some(anchor.token));
                            }
                            Emission::Token(t) => branch.feed(self, g, *t, Some(anchor.token)),
                        }
                    }
                    tracks.push(branch.track);
                    token_log_probs.push(lps);
                    if i + 1 < k {
                        for &tok in &story.sentences[i] {
                            stream.feed(self, g, tok, Some(anchor.token));
                        }
                    }
                }
            }
        }
        tracks.insert(0, stream.track);
        let flat: Vec<Var> = token_log_probs.iter().flatten().copied().collect();
        let reconstruction = g.add_all(&flat);
        let prior_total = g.add_all(&anchor_log_probs);
        Ok(ScoreGraph {
            prior_log_probs,
            anchor_log_probs,
            token_log_probs,
            reconstruction,
            prior_total,
            hidden_tracks: tracks,
        })
    }

    /// Prior distribution over the vocabulary for the next anchor.
    pub fn prior_step_distribution(&self, title: Option<&[u32]>, previous: &[u32]) -> Vec<f64> {
        let mut g = Graph::new();
        let h = g.bind(&self.params);
        let mut stream = self.stream(&mut g, h, None);
        stream.feed_title(self, &mut g, title);
        for &z in previous {
            stream.feed(self, &mut g, z, None);
        }
        let lp = stream.prior(self, &mut g);
        g.value(lp).data().iter().map(|x| x.exp()).collect()
    }

    /// Per-step prior log-probabilities of a whole plan.
    pub fn plan_log_probs(&self, title: Option<&[u32]>, plan: &[u32]) -> Vec<f64> {
        let mut g = Graph::new();
        let h = g.bind(&self.params);
        let mut stream = self.stream(&mut g, h, None);
        stream.feed_title(self, &mut g, title);
        plan.iter()
            .map(|&z| {
                let lp = stream.prior(self, &mut g);
                let v = g.value(lp).data()[z as usize];
                stream.feed(self, &mut g, z, None);
                v
            })
            .collect()
    }

    /// Log-probability of `story` under the unconstrained decoder.
    pub fn unconstrained_decoder_log_prob(
        &self,
        title: Option<&[u32]>,
        plan: &PlanSample,
        story: &TokenizedStory,
    ) -> Result<DecodeScore> {
        if self.config.decoder != DecoderMode::Unconstrained {
            return Err(Error::contract("model was built with the constrained decoder"));
        }
        self.decode_score(title, Some(&plan.anchors), story)
    }

    /// Log-probability of `story` under the constrained decoder; every anchor
    /// needs a position.
    pub fn constrained_decoder_log_prob(
        &self,
        title: Option<&[u32]>,
        plan: &PlanSample,
        story: &TokenizedStory,
    ) -> Result<DecodeScore> {
        if self.config.decoder != DecoderMode::Constrained {
            return Err(Error::contract("model was built with the unconstrained decoder"));
        }
        self.decode_score(title, Some(&plan.anchors), story)
    }

    /// Decoder log-probability in whichever mode the model was built with.
    /// `plan = None` gives the plan-free language model score.
    pub fn decode_score(
        &self,
        title: Option<&[u32]>,
        plan: Option<&[AnchorEntry]>,
        story: &TokenizedStory,
    ) -> Result<DecodeScore> {
        let mut g = Graph::new();
        let h = g.bind(&self.params);
        let score = self.score(&mut g, h, title, plan, story, None)?;
        let per_sentence: Vec<Vec<f64>> = score
            .token_log_probs
            .iter()
            .map(|s| s.iter().map(|&v| g.item(v)).collect())
            .collect();
        Ok(DecodeScore {
            total: g.item(score.reconstruction),
            prior: plan.map(|_| g.item(score.prior_total)),
            per_sentence,
        })
    }
}

/// Value-level scores of one story.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodeScore {
    /// Log-probability per emitted token, per sentence.
    pub per_sentence: Vec<Vec<f64>>,
    pub total: f64,
    /// Prior log-probability of the plan, when one was given.
    pub prior: Option<f64>,
}

impl DecodeScore {
    pub fn sentence_totals(&self) -> Vec<f64> {
        self.per_sentence.iter().map(|s| s.iter().sum()).collect()
    }
}

/// Graph nodes produced by [`Generator::score`].
pub struct ScoreGraph {
    /// Full prior log-distribution (1×V) before each anchor.
    pub prior_log_probs: Vec<Var>,
    pub anchor_log_probs: Vec<Var>,
    pub token_log_probs: Vec<Vec<Var>>,
    /// `log p(x | z, t)`.
    pub reconstruction: Var,
    /// `log p(z | t)`.
    pub prior_total: Var,
    /// Top-layer hidden states, one run per contiguous recurrence.
    pub hidden_tracks: Vec<Vec<Var>>,
}

#[derive(Default, Clone)]
struct StructuralMasks {
    prior: Option<Var>,
    surface: Option<Var>,
    left: Option<Var>,
}

/// Recurrent state walking along the token stream.
#[derive(Clone)]
pub(crate) struct Stream {
    params: SetHandle,
    states: Vec<LstmState>,
    dropout: Option<Vec<Var>>,
    zeros: Var,
    track: Vec<Var>,
    masks: StructuralMasks,
}

impl Stream {
    pub(crate) fn top(&self) -> Var {
        self.states.last().expect("at least one layer").h
    }

    /// A copy of the current state that records its own hidden track.
    pub(crate) fn branch(&self) -> Stream {
        let mut b = self.clone();
        b.track = vec![self.top()];
        b
    }

    pub(crate) fn feed_title(&mut self, model: &Generator, g: &mut Graph, title: Option<&[u32]>) {
        for &t in title.unwrap_or_default() {
            self.feed(model, g, t, None);
        }
        self.feed(model, g, Special::TitleSep.id(), None);
    }

    pub(crate) fn feed(&mut self, model: &Generator, g: &mut Graph, token: u32, anchor: Option<u32>) {
        let emb = g.param(self.params, model.index.embedding);
        let x = g.row(emb, token as usize);
        let x = match model.config.decoder {
            DecoderMode::Unconstrained => x,
            DecoderMode::Constrained => {
                let a = match anchor {
                    Some(a) => g.row(emb, a as usize),
                    None => self.zeros,
                };
                g.concat(&[x, a])
            }
        };
        self.states = model
            .index
            .lstm
            .step(g, self.params, x, &self.states, self.dropout.as_deref());
        let top = self.top();
        self.track.push(top);
    }

    fn mask(vocab: usize, blocked: &[Special]) -> Matrix {
        let mut m = Matrix::zeros(1, vocab);
        for s in blocked {
            m.data_mut()[s.id() as usize] = f64::NEG_INFINITY;
        }
        m
    }

    /// Log-distribution of the next anchor.
    pub(crate) fn prior(&mut self, model: &Generator, g: &mut Graph) -> Var {
        let ix = &model.index;
        let w = g.param(self.params, ix.prior_weight);
        let b = g.param(self.params, ix.prior_hidden_bias);
        let emb = g.param(self.params, ix.embedding);
        let pb = g.param(self.params, ix.prior_bias);
        let u = g.matmul(self.top(), w);
        let u = g.add(u, b);
        let u = g.tanh(u);
        let logits = g.matmul_t(u, emb);
        let logits = g.add(logits, pb);
        let mask = *self.masks.prior.get_or_insert_with(|| {
            g.constant(Self::mask(
                model.config.vocab_size,
                &[
                    Special::Pad,
                    Special::Eos,
                    Special::TitleSep,
                    Special::PlanSep,
                    Special::LeftBoundary,
                ],
            ))
        });
        let logits = g.add(logits, mask);
        g.log_softmax(logits)
    }

    /// Log-distribution of the next story token.
    pub(crate) fn decoder(&mut self, model: &Generator, g: &mut Graph, phase: Phase) -> Var {
        let ix = &model.index;
        let mut hidden = self.top();
        if let Some((w, b)) = ix.projection {
            let w = g.param(self.params, w);
            let b = g.param(self.params, b);
            hidden = g.matmul(hidden, w);
            hidden = g.add(hidden, b);
        }
        let emb = g.param(self.params, ix.embedding);
        let bias = g.param(self.params, ix.decoder_bias);
        let logits = g.matmul_t(hidden, emb);
        let logits = g.add(logits, bias);
        let v = model.config.vocab_size;
        let structural = [Special::Pad, Special::TitleSep, Special::PlanSep];
        let mask = match phase {
            Phase::Surface | Phase::Right => *self.masks.surface.get_or_insert_with(|| {
                let mut blocked = structural.to_vec();
                blocked.push(Special::LeftBoundary);
                g.constant(Self::mask(v, &blocked))
            }),
            Phase::Left => *self.masks.left.get_or_insert_with(|| {
                let mut blocked = structural.to_vec();
                blocked.push(Special::Eos);
                g.constant(Self::mask(v, &blocked))
            }),
        };
        let logits = g.add(logits, mask);
        g.log_softmax(logits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(s: &str) -> Emission<String> {
        match s {
            "<lb>" => Emission::LeftBoundary,
            "<end>" => Emission::End,
            t => Emission::Token(t.to_string()),
        }
    }

    fn order(tokens: &str) -> Vec<Emission<String>> {
        tokens.split(' ').map(e).collect()
    }

    fn words(s: &str) -> Vec<String> {
        s.split(' ').map(String::from).collect()
    }

    #[test]
    fn linearize_examples() {
        assert_eq!(
            linearize_constrained(&words("a b c"), 1).unwrap(),
            order("b a <lb> c <end>")
        );
        assert_eq!(linearize_constrained(&words("a"), 0).unwrap(), order("a <lb> <end>"));
        assert_eq!(
            linearize_constrained(&words("a b c"), 0).unwrap(),
            order("a <lb> b c <end>")
        );
        assert_eq!(
            linearize_constrained(&words("tim entered a local gym"), 1).unwrap(),
            order("entered tim <lb> a local gym <end>")
        );
        assert!(linearize_constrained(&words("a b"), 2).is_err());
    }

    #[test]
    fn delinearize_examples() {
        assert_eq!(
            delinearize_constrained(&order("b a <lb> c <end>")).unwrap(),
            words("a b c")
        );
        assert_eq!(
            delinearize_constrained(&order("entered tim <lb> a local gym <end>")).unwrap(),
            words("tim entered a local gym")
        );
        assert_eq!(delinearize_constrained(&order("x <lb> <end>")).unwrap(), words("x"));
    }

    #[test]
    fn delinearize_rejects_malformed() {
        for bad in [
            "<lb> <end>",
            "a b <end>",
            "a <lb> b",
            "a <lb> <lb> <end>",
            "a <end> <lb> <end>",
            "a <lb> <end> <end>",
        ] {
            assert!(
                matches!(delinearize_constrained(&order(bad)), Err(Error::Decode(_))),
                "{bad}"
            );
        }
        assert!(delinearize_constrained::<u32>(&[]).is_err());
    }

    #[test]
    fn split_recovers_position() {
        let (s, pos) = split_constrained(&order("c b a <lb> d <end>")).unwrap();
        assert_eq!(s, words("a b c d"));
        assert_eq!(pos, 2);
    }
}
