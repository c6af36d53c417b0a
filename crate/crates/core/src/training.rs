//! Three-stage ELBO training for the latent-plan modes, teacher-forced
//! training for the plan-free and plan-supervised baselines, and posterior
//! retrofitting for frozen models.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::TokenizedStory;
use crate::error::{Error, Result};
use crate::inference::{InferenceNet, PosteriorMode};
use crate::model::{DecoderMode, Generator};
use crate::objective::{
    baseline_loss, story_objective, BaselineLoss, BaselineState, ElboEstimate, KlTreatment,
    ObjectiveSettings,
};
use crate::optim::{clip_global_norm, Adam};
use crate::tape::Gradients;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    #[serde(rename = "lap-cinf-udec")]
    LapCinfUdec,
    #[serde(rename = "lap-cinf-cdec")]
    LapCinfCdec,
    #[serde(rename = "lap-uinf-udec")]
    LapUinfUdec,
    #[serde(rename = "noplan")]
    NoPlan,
    #[serde(rename = "supervised")]
    Supervised,
}

impl TrainMode {
    pub const ALL: [TrainMode; 5] = [
        TrainMode::LapCinfUdec,
        TrainMode::LapCinfCdec,
        TrainMode::LapUinfUdec,
        TrainMode::NoPlan,
        TrainMode::Supervised,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::LapCinfUdec => "lap-cinf-udec",
            TrainMode::LapCinfCdec => "lap-cinf-cdec",
            TrainMode::LapUinfUdec => "lap-uinf-udec",
            TrainMode::NoPlan => "noplan",
            TrainMode::Supervised => "supervised",
        }
    }

    pub fn decoder(self) -> DecoderMode {
        match self {
            TrainMode::LapCinfCdec => DecoderMode::Constrained,
            _ => DecoderMode::Unconstrained,
        }
    }

    /// Posterior family trained jointly with the model, if any.
    pub fn posterior(self) -> Option<PosteriorMode> {
        match self {
            TrainMode::LapCinfUdec | TrainMode::LapCinfCdec => Some(PosteriorMode::Constrained),
            TrainMode::LapUinfUdec => Some(PosteriorMode::Unconstrained),
            TrainMode::NoPlan | TrainMode::Supervised => None,
        }
    }

    pub fn is_latent(self) -> bool {
        self.posterior().is_some()
    }

    /// Whether the model generates through an anchor plan.
    pub fn uses_plan(self) -> bool {
        self != TrainMode::NoPlan
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub temporal_weight: f64,
    pub baseline_alpha: f64,
    pub entropy_weight: f64,
    /// Per-component KL threshold, applied in the joint stage.
    pub free_bits: f64,
    /// Prior probabilities below this are floored inside the exact KL.
    pub kl_floor: f64,
    /// Plan samples per story per gradient step.
    pub reconstruction_samples: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    /// Epochs for the baselines and for posterior retrofitting.
    pub epochs: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            batch_size: 20,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            temporal_weight: 1.0,
            baseline_alpha: 0.1,
            entropy_weight: 0.01,
            free_bits: 0.5,
            kl_floor: 1e-30,
            reconstruction_samples: 1,
            stage1_epochs: 5,
            stage2_epochs: 5,
            stage3_epochs: 20,
            epochs: 20,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.reconstruction_samples == 0 {
            return Err(Error::Config("reconstruction_samples must be at least 1".into()));
        }
        let weights = [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("temporal_weight", self.temporal_weight),
            ("entropy_weight", self.entropy_weight),
            ("free_bits", self.free_bits),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.baseline_alpha > 0.0 && self.baseline_alpha <= 1.0) {
            return Err(Error::Config("baseline_alpha must lie in (0, 1]".into()));
        }
        if !(self.kl_floor > 0.0 && self.kl_floor < 1.0) {
            return Err(Error::Config("kl_floor must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Training and held-out stories, already encoded.
#[derive(Clone, Debug, Default)]
pub struct TrainingData {
    pub train: Vec<TokenizedStory>,
    pub dev: Vec<TokenizedStory>,
    /// Anchor plans aligned with `train`, for the supervised baseline.
    pub train_plans: Option<Vec<Vec<u32>>>,
    /// Anchor plans aligned with `dev`.
    pub dev_plans: Option<Vec<Vec<u32>>>,
}

impl TrainingData {
    pub fn max_sentences(&self) -> usize {
        self.train
            .iter()
            .chain(&self.dev)
            .map(|s| s.num_sentences())
            .max()
            .unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Pretrain,
    Model,
    Joint,
    Baseline,
    Retrofit,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Pretrain => "1",
            Stage::Model => "2",
            Stage::Joint => "3",
            Stage::Baseline => "baseline",
            Stage::Retrofit => "retrofit",
        }
    }
}

/// Averages over one epoch of training stories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Counted across stages, from 1.
    pub epoch: usize,
    pub stage: Stage,
    pub recon: f64,
    /// Mean raw KL per plan step; empty for plan-free objectives.
    pub kl_raw: Vec<f64>,
    pub kl_thresholded: Vec<f64>,
    pub entropy: f64,
    pub temporal: f64,
    /// Mean dev ELBO (log-likelihood for the baselines).
    pub dev_elbo: Option<f64>,
}

/// CSV header for `k` plan steps.
pub fn metrics_header(k: usize) -> String {
    let mut cols = vec!["epoch".to_string(), "stage".into(), "recon".into()];
    cols.extend((1..=k).map(|i| format!("kl_raw_{i}")));
    cols.extend((1..=k).map(|i| format!("kl_thr_{i}")));
    cols.extend(["entropy".into(), "temporal".into(), "dev_elbo".into()]);
    cols.join(",")
}

impl EpochMetrics {
    /// CSV row padded to `k` plan steps; missing values are `NA`.
    pub fn csv_row(&self, k: usize) -> String {
        let cell = |v: Option<&f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        let mut cols = vec![self.epoch.to_string(), self.stage.label().into(), format!("{:.6}", self.recon)];
        cols.extend((0..k).map(|i| cell(self.kl_raw.get(i))));
        cols.extend((0..k).map(|i| cell(self.kl_thresholded.get(i))));
        cols.push(format!("{:.6}", self.entropy));
        cols.push(format!("{:.6}", self.temporal));
        cols.push(cell(self.dev_elbo.as_ref()));
        cols.join(",")
    }
}

/// Receives progress during training. Both hooks default to no-ops.
pub trait TrainingObserver {
    fn epoch(&mut self, _metrics: &EpochMetrics) -> Result<()> {
        Ok(())
    }

    fn stage_complete(
        &mut self,
        _stage: Stage,
        _model: &Generator,
        _inference: Option<&InferenceNet>,
    ) -> Result<()> {
        Ok(())
    }
}

impl TrainingObserver for () {}

/// Collects epoch rows in memory.
impl TrainingObserver for Vec<EpochMetrics> {
    fn epoch(&mut self, metrics: &EpochMetrics) -> Result<()> {
        self.push(metrics.clone());
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainedModel {
    pub model: Generator,
    pub inference: InferenceNet,
    pub baseline: BaselineState,
    pub metrics: Vec<EpochMetrics>,
}

#[derive(Default)]
struct EpochAccumulator {
    stories: usize,
    recon: f64,
    kl_raw: Vec<(f64, usize)>,
    kl_thr: Vec<(f64, usize)>,
    entropy: f64,
    temporal: f64,
}

impl EpochAccumulator {
    fn add(&mut self, e: &ElboEstimate, weight: f64) {
        self.recon += weight * e.reconstruction;
        self.entropy += weight * e.entropy;
        self.temporal += weight * e.temporal;
        for (acc, vals) in [(&mut self.kl_raw, &e.kl_raw), (&mut self.kl_thr, &e.kl_thresholded)] {
            if acc.len() < vals.len() {
                acc.resize(vals.len(), (0.0, 0));
            }
            for (slot, &v) in acc.iter_mut().zip(vals) {
                slot.0 += weight * v;
                slot.1 += 1;
            }
        }
    }

    fn finish(self, epoch: usize, stage: Stage, dev_elbo: Option<f64>, samples: usize) -> EpochMetrics {
        let n = self.stories.max(1) as f64;
        let mean = |v: Vec<(f64, usize)>| -> Vec<f64> {
            v.into_iter()
                .map(|(s, c)| s / (c as f64 / samples as f64).max(1.0))
                .collect()
        };
        EpochMetrics {
            epoch,
            stage,
            recon: self.recon / n,
            kl_raw: mean(self.kl_raw),
            kl_thresholded: mean(self.kl_thr),
            entropy: self.entropy / n,
            temporal: self.temporal / n,
            dev_elbo,
        }
    }
}

/// Which parameters a latent stage updates, and how.
struct LatentStage<'a> {
    stage: Stage,
    settings: ObjectiveSettings,
    update_model: bool,
    update_inference: bool,
    model_opt: Option<&'a mut Adam>,
    inference_opt: Option<&'a mut Adam>,
}

fn stage_settings(cfg: &TrainingConfig, kl: KlTreatment, free_bits: f64, dropout: bool) -> ObjectiveSettings {
    ObjectiveSettings {
        kl,
        free_bits,
        entropy_weight: cfg.entropy_weight,
        temporal_weight: cfg.temporal_weight,
        kl_floor: cfg.kl_floor,
        dropout,
    }
}

fn kl_treatment(inference: &InferenceNet) -> KlTreatment {
    match inference.mode() {
        PosteriorMode::Constrained => KlTreatment::Exact,
        PosteriorMode::Unconstrained => KlTreatment::MonteCarlo,
    }
}

/// One pass over `stories` in a shuffled order.
#[allow(clippy::too_many_arguments)]
fn latent_epoch(
    cfg: &TrainingConfig,
    stage: &mut LatentStage<'_>,
    model: &mut Generator,
    inference: &mut InferenceNet,
    stories: &[TokenizedStory],
    baseline: &mut BaselineState,
    rng: &mut dyn RngCore,
    epoch: usize,
) -> Result<EpochAccumulator> {
    let mut order: Vec<usize> = (0..stories.len()).collect();
    order.shuffle(rng);
    let mut acc = EpochAccumulator::default();
    let samples = cfg.reconstruction_samples;
    let weight = 1.0 / samples as f64;
    for batch in order.chunks(cfg.batch_size) {
        let mut model_grads = Gradients::zeros_like(model.params());
        let mut inference_grads = Gradients::zeros_like(inference.params());
        let mut reward_sum = 0.0;
        for &idx in batch {
            for _ in 0..samples {
                let out = story_objective(model, inference, &stories[idx], baseline.value, &stage.settings, rng)
                    .map_err(|e| with_story(e, idx))?;
                acc.add(&out.estimate, weight);
                reward_sum += weight * out.reward;
                // ascent directions become descent directions here
                model_grads.add_scaled(&out.model_grads, -weight / batch.len() as f64);
                inference_grads.add_scaled(&out.inference_grads, -weight / batch.len() as f64);
            }
            acc.stories += 1;
        }
        if !reward_sum.is_finite() {
            return Err(Error::NonFinite {
                what: "reward",
                story: batch[0],
            });
        }
        *baseline = baseline.update(reward_sum / batch.len() as f64, cfg.baseline_alpha);
        let mut active: Vec<&mut Gradients> = Vec::new();
        if stage.update_model {
            active.push(&mut model_grads);
        }
        if stage.update_inference {
            active.push(&mut inference_grads);
        }
        clip_global_norm(&mut active, cfg.clip_norm);
        if stage.update_model {
            if let Some(opt) = stage.model_opt.as_deref_mut() {
                opt.step(model.params_mut(), &model_grads);
            }
        }
        if stage.update_inference {
            if let Some(opt) = stage.inference_opt.as_deref_mut() {
                opt.step(inference.params_mut(), &inference_grads);
            }
        }
    }
    log::debug!(
        "stage {} epoch {epoch}: recon {:.4}",
        stage.stage.label(),
        acc.recon / acc.stories.max(1) as f64
    );
    Ok(acc)
}

fn with_story(e: Error, idx: usize) -> Error {
    match e {
        Error::NonFinite { what, .. } => Error::NonFinite { what, story: idx },
        other => other,
    }
}

/// Mean single-sample ELBO over `stories` without dropout or thresholds.
pub fn dev_elbo(
    model: &Generator,
    inference: &InferenceNet,
    stories: &[TokenizedStory],
    kl_floor: f64,
    rng: &mut dyn RngCore,
) -> Result<Option<f64>> {
    if stories.is_empty() {
        return Ok(None);
    }
    let settings = ObjectiveSettings {
        kl: kl_treatment(inference),
        free_bits: 0.0,
        entropy_weight: 0.0,
        temporal_weight: 0.0,
        kl_floor,
        dropout: false,
    };
    let mut total = 0.0;
    for (idx, story) in stories.iter().enumerate() {
        let out = story_objective(model, inference, story, 0.0, &settings, rng).map_err(|e| with_story(e, idx))?;
        total += out.estimate.elbo();
    }
    let mean = total / stories.len() as f64;
    if !mean.is_finite() {
        return Err(Error::NonFinite {
            what: "dev ELBO",
            story: 0,
        });
    }
    Ok(Some(mean))
}

/// Runs the three-stage schedule: inference pretraining against a
/// throwaway sentence decoder, model training with the posterior frozen,
/// then joint training with free bits.
pub fn run_schedule(
    cfg: &TrainingConfig,
    mut model: Generator,
    mut inference: InferenceNet,
    data: &TrainingData,
    rng: &mut dyn RngCore,
    observer: &mut dyn TrainingObserver,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::contract("no training stories"));
    }
    let dropout = model.config().dropout > 0.0;
    let kl = kl_treatment(&inference);
    let mut metrics = Vec::new();
    let mut epoch = 0;
    let mut baseline = BaselineState::default();
    let mut inference_opt = Adam::new(inference.params(), cfg.learning_rate);

    // Stage 1: one single-sentence story per training sentence.
    let sentences: Vec<TokenizedStory> = data
        .train
        .iter()
        .flat_map(|s| (0..s.num_sentences()).map(move |i| s.sentence_story(i)))
        .collect();
    let mut scratch = Generator::new(model.config().clone(), rng);
    let mut scratch_opt = Adam::new(scratch.params(), cfg.learning_rate);
    let mut stage1_baseline = BaselineState::default();
    for _ in 0..cfg.stage1_epochs {
        epoch += 1;
        let mut stage = LatentStage {
            stage: Stage::Pretrain,
            settings: ObjectiveSettings {
                temporal_weight: cfg.temporal_weight,
                dropout,
                ..ObjectiveSettings::reconstruction_only(cfg.entropy_weight)
            },
            update_model: true,
            update_inference: true,
            model_opt: Some(&mut scratch_opt),
            inference_opt: Some(&mut inference_opt),
        };
        let acc = latent_epoch(
            cfg,
            &mut stage,
            &mut scratch,
            &mut inference,
            &sentences,
            &mut stage1_baseline,
            rng,
            epoch,
        )?;
        let row = acc.finish(epoch, Stage::Pretrain, None, cfg.reconstruction_samples);
        observer.epoch(&row)?;
        metrics.push(row);
    }
    drop(scratch);
    observer.stage_complete(Stage::Pretrain, &model, Some(&inference))?;

    let mut model_opt = Adam::new(model.params(), cfg.learning_rate);
    let stages = [
        (Stage::Model, cfg.stage2_epochs, 0.0, false),
        (Stage::Joint, cfg.stage3_epochs, cfg.free_bits, true),
    ];
    for (which, epochs, free_bits, train_inference) in stages {
        for _ in 0..epochs {
            epoch += 1;
            let mut stage = LatentStage {
                stage: which,
                settings: stage_settings(cfg, kl, free_bits, dropout),
                update_model: true,
                update_inference: train_inference,
                model_opt: Some(&mut model_opt),
                inference_opt: Some(&mut inference_opt),
            };
            let acc = latent_epoch(
                cfg,
                &mut stage,
                &mut model,
                &mut inference,
                &data.train,
                &mut baseline,
                rng,
                epoch,
            )?;
            let dev = dev_elbo(&model, &inference, &data.dev, cfg.kl_floor, rng)?;
            let row = acc.finish(epoch, which, dev, cfg.reconstruction_samples);
            observer.epoch(&row)?;
            metrics.push(row);
        }
        observer.stage_complete(which, &model, Some(&inference))?;
    }
    Ok(TrainedModel {
        model,
        inference,
        baseline,
        metrics,
    })
}

/// Teacher-forced loss for one story under a baseline mode. The plan is
/// ignored for `noplan` and required for `supervised`.
pub fn baseline_step(
    model: &Generator,
    story: &TokenizedStory,
    plan: Option<&[u32]>,
    mode: TrainMode,
    temporal_weight: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<BaselineLoss> {
    match mode {
        TrainMode::NoPlan => baseline_loss(model, story, None, temporal_weight, rng),
        TrainMode::Supervised => {
            let plan = plan.ok_or_else(|| Error::contract("supervised mode requires a plan annotation"))?;
            if plan.len() != story.num_sentences() {
                return Err(Error::Alignment {
                    story: 0,
                    expected: story.num_sentences(),
                    found: plan.len(),
                });
            }
            baseline_loss(model, story, Some(plan), temporal_weight, rng)
        }
        other => Err(Error::contract(format!("{other} is not a baseline mode"))),
    }
}

/// Mean teacher-forced log-likelihood of `stories` (joint with the plan
/// for the supervised baseline).
pub fn baseline_log_likelihood(
    model: &Generator,
    stories: &[TokenizedStory],
    plans: Option<&[Vec<u32>]>,
    mode: TrainMode,
) -> Result<Option<f64>> {
    if stories.is_empty() {
        return Ok(None);
    }
    let mut total = 0.0;
    for (i, story) in stories.iter().enumerate() {
        let plan = plans.map(|p| p[i].as_slice());
        total -= baseline_step(model, story, plan, mode, 0.0, None)
            .map_err(|e| with_story(e, i))?
            .loss();
    }
    Ok(Some(total / stories.len() as f64))
}

/// Trains the `noplan` or `supervised` baseline.
pub fn train_baseline(
    cfg: &TrainingConfig,
    mode: TrainMode,
    mut model: Generator,
    data: &TrainingData,
    rng: &mut dyn RngCore,
    observer: &mut dyn TrainingObserver,
) -> Result<(Generator, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if mode.is_latent() {
        return Err(Error::contract(format!("{mode} is not a baseline mode")));
    }
    if data.train.is_empty() {
        return Err(Error::contract("no training stories"));
    }
    let plans = match mode {
        TrainMode::Supervised => Some(
            data.train_plans
                .as_deref()
                .ok_or_else(|| Error::contract("supervised mode requires plan annotations"))?,
        ),
        _ => None,
    };
    let dev_plans = match mode {
        TrainMode::Supervised if !data.dev.is_empty() => Some(
            data.dev_plans
                .as_deref()
                .ok_or_else(|| Error::contract("supervised mode requires dev plan annotations"))?,
        ),
        _ => None,
    };
    let dropout = model.config().dropout > 0.0;
    let mut opt = Adam::new(model.params(), cfg.learning_rate);
    let mut metrics = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(rng);
        let (mut recon, mut temporal) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(model.params());
            for &idx in batch {
                let plan = plans.map(|p| p[idx].as_slice());
                let drop_rng: Option<&mut dyn RngCore> = if dropout { Some(&mut *rng) } else { None };
                let out = baseline_step(&model, &data.train[idx], plan, mode, cfg.temporal_weight, drop_rng)
                    .map_err(|e| with_story(e, idx))?;
                recon -= out.decoder_nll;
                temporal += out.temporal;
                grads.add_scaled(&out.grads, 1.0 / batch.len() as f64);
            }
            clip_global_norm(&mut [&mut grads], cfg.clip_norm);
            opt.step(model.params_mut(), &grads);
        }
        let dev = baseline_log_likelihood(&model, &data.dev, dev_plans, mode)?;
        if dev.is_some_and(|d| !d.is_finite()) {
            return Err(Error::NonFinite {
                what: "dev log-likelihood",
                story: 0,
            });
        }
        let n = data.train.len() as f64;
        let row = EpochMetrics {
            epoch,
            stage: Stage::Baseline,
            recon: recon / n,
            kl_raw: Vec::new(),
            kl_thresholded: Vec::new(),
            entropy: 0.0,
            temporal: temporal / n,
            dev_elbo: dev,
        };
        observer.epoch(&row)?;
        metrics.push(row);
    }
    observer.stage_complete(Stage::Baseline, &model, None)?;
    Ok((model, metrics))
}

/// Fits an inference network to maximize the ELBO of a frozen model.
/// The model is only read.
pub fn fit_posterior_to_frozen_model(
    cfg: &TrainingConfig,
    model: &Generator,
    mut inference: InferenceNet,
    data: &TrainingData,
    rng: &mut dyn RngCore,
    observer: &mut dyn TrainingObserver,
) -> Result<(InferenceNet, Vec<EpochMetrics>)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::contract("no training stories"));
    }
    // a private copy keeps the caller's parameters untouchable
    let mut frozen = model.clone();
    let mut opt = Adam::new(inference.params(), cfg.learning_rate);
    let mut baseline = BaselineState::default();
    let mut metrics = Vec::new();
    let settings = ObjectiveSettings {
        kl: kl_treatment(&inference),
        free_bits: 0.0,
        entropy_weight: cfg.entropy_weight,
        temporal_weight: 0.0,
        kl_floor: cfg.kl_floor,
        dropout: false,
    };
    for epoch in 1..=cfg.epochs {
        let mut stage = LatentStage {
            stage: Stage::Retrofit,
            settings,
            update_model: false,
            update_inference: true,
            model_opt: None,
            inference_opt: Some(&mut opt),
        };
        let acc = latent_epoch(
            cfg,
            &mut stage,
            &mut frozen,
            &mut inference,
            &data.train,
            &mut baseline,
            rng,
            epoch,
        )?;
        let dev = dev_elbo(&frozen, &inference, &data.dev, cfg.kl_floor, rng)?;
        let row = acc.finish(epoch, Stage::Retrofit, dev, cfg.reconstruction_samples);
        observer.epoch(&row)?;
        metrics.push(row);
    }
    debug_assert_eq!(frozen.params().fingerprint(), model.params().fingerprint());
    observer.stage_complete(Stage::Retrofit, model, Some(&inference))?;
    Ok((inference, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_names_roundtrip() {
        for m in TrainMode::ALL {
            assert_eq!(m.as_str().parse::<TrainMode>().unwrap(), m);
        }
        assert!("lap".parse::<TrainMode>().is_err());
        assert_eq!(TrainMode::LapCinfCdec.decoder(), DecoderMode::Constrained);
        assert_eq!(TrainMode::LapUinfUdec.posterior(), Some(PosteriorMode::Unconstrained));
        assert!(!TrainMode::Supervised.is_latent());
    }

    #[test]
    fn header_and_row_widths_agree() {
        let header = metrics_header(3);
        assert_eq!(
            header,
            "epoch,stage,recon,kl_raw_1,kl_raw_2,kl_raw_3,kl_thr_1,kl_thr_2,kl_thr_3,entropy,temporal,dev_elbo"
        );
        let row = EpochMetrics {
            epoch: 4,
            stage: Stage::Joint,
            recon: -10.0,
            kl_raw: vec![0.1, 0.2],
            kl_thresholded: vec![0.5, 0.5],
            entropy: 1.0,
            temporal: 0.25,
            dev_elbo: None,
        };
        let line = row.csv_row(3);
        assert_eq!(line.split(',').count(), header.split(',').count());
        assert!(line.starts_with("4,3,-10.000000,0.100000,0.200000,NA,"));
        assert!(line.ends_with(",NA"));
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::default().validate().is_ok());
        let bad = TrainingConfig {
            batch_size: 0,
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainingConfig {
            entropy_weight: -0.1,
            ..TrainingConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
