mod common;

use latent_plan::inference::{posterior_block_mask, InferenceConfig, InferenceNet, PosteriorMode};
use latent_plan::model::{DecoderMode, Generator, ModelConfig};
use latent_plan::training::{
    baseline_step, dev_elbo, fit_posterior_to_frozen_model, run_schedule, train_baseline, EpochMetrics, Stage,
    TrainMode, TrainingConfig, TrainingData, TrainingObserver,
};
use latent_plan::{Checkpoint, Error, RunConfig, StopwordSet, Story};
use latent_plan::corpus::{build_vocabulary, encode_story};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_model(vocab_size: usize, decoder: DecoderMode, seed: u64) -> Generator {
    let cfg = ModelConfig {
        vocab_size,
        embed_dim: 12,
        hidden_dim: 12,
        layers: 3,
        dropout: 0.0,
        decoder,
        init_scale: 0.1,
    };
    Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn small_inference(toy: &common::Toy, mode: PosteriorMode, seed: u64) -> InferenceNet {
    let cfg = InferenceConfig {
        vocab_size: toy.vocab.len(),
        embed_dim: 8,
        hidden_dim: 8,
        mode,
        condition_on_title: false,
        init_scale: 0.1,
    };
    let blocked = posterior_block_mask(&toy.vocab, &toy.stopwords);
    InferenceNet::new(cfg, blocked, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn small_data(toy: &common::Toy) -> TrainingData {
    TrainingData {
        train: toy.data.train[..8].to_vec(),
        dev: toy.data.dev[..4].to_vec(),
        train_plans: toy.data.train_plans.as_ref().map(|p| p[..8].to_vec()),
        dev_plans: toy.data.dev_plans.as_ref().map(|p| p[..4].to_vec()),
    }
}

fn quick_config() -> TrainingConfig {
    TrainingConfig {
        batch_size: 4,
        learning_rate: 0.01,
        temporal_weight: 0.01,
        stage1_epochs: 1,
        stage2_epochs: 2,
        stage3_epochs: 1,
        epochs: 3,
        ..TrainingConfig::default()
    }
}

#[derive(Default)]
struct Fingerprints {
    rows: Vec<EpochMetrics>,
    stages: Vec<(Stage, String, Option<String>)>,
}

impl TrainingObserver for Fingerprints {
    fn epoch(&mut self, metrics: &EpochMetrics) -> latent_plan::Result<()> {
        self.rows.push(metrics.clone());
        Ok(())
    }

    fn stage_complete(&mut self, stage: Stage, model: &Generator, inference: Option<&InferenceNet>) -> latent_plan::Result<()> {
        self.stages.push((
            stage,
            model.params().fingerprint(),
            inference.map(|i| i.params().fingerprint()),
        ));
        Ok(())
    }
}

#[test]
fn stage_two_leaves_inference_untouched() {
    let toy = common::toy();
    let model = small_model(toy.vocab.len(), DecoderMode::Unconstrained, 1);
    let inference = small_inference(&toy, PosteriorMode::Constrained, 2);
    let mut obs = Fingerprints::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trained = run_schedule(&quick_config(), model.clone(), inference, &small_data(&toy), &mut rng, &mut obs).unwrap();

    let stages: Vec<Stage> = obs.stages.iter().map(|s| s.0).collect();
    assert_eq!(stages, vec![Stage::Pretrain, Stage::Model, Stage::Joint]);
    // stage 1 trains a throwaway decoder; the main model starts stage 2 untouched
    assert_eq!(obs.stages[0].1, model.params().fingerprint());
    assert_eq!(obs.stages[0].2, obs.stages[1].2, "stage 2 changed the inference network");
    assert_ne!(obs.stages[1].1, obs.stages[0].1, "stage 2 did not train the model");
    assert_ne!(obs.stages[2].2, obs.stages[1].2, "stage 3 did not train the inference network");
    assert_eq!(trained.metrics.len(), 4);
    assert_eq!(obs.rows.len(), 4);
    assert!(trained.metrics[1..].iter().all(|m| m.dev_elbo.is_some_and(f64::is_finite)));
}

#[test]
fn schedule_is_deterministic_for_a_seed() {
    let toy = common::toy();
    let run = || {
        let model = small_model(toy.vocab.len(), DecoderMode::Constrained, 5);
        let inference = small_inference(&toy, PosteriorMode::Constrained, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = TrainingConfig {
            stage1_epochs: 1,
            stage2_epochs: 1,
            stage3_epochs: 1,
            ..quick_config()
        };
        run_schedule(&cfg, model, inference, &small_data(&toy), &mut rng, &mut ()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.model.params().fingerprint(), b.model.params().fingerprint());
    assert_eq!(a.inference.params().fingerprint(), b.inference.params().fingerprint());
    let rows = |t: &latent_plan::training::TrainedModel| -> Vec<String> { t.metrics.iter().map(|m| m.csv_row(5)).collect() };
    assert_eq!(rows(&a), rows(&b));
}

#[test]
fn retrofit_keeps_model_frozen_and_raises_elbo() {
    let toy = common::toy();
    let data = &toy.data;
    let cfg = TrainingConfig {
        batch_size: 5,
        ..quick_config()
    };
    let (model, _) = train_baseline(
        &cfg,
        TrainMode::Supervised,
        small_model(toy.vocab.len(), DecoderMode::Unconstrained, 9),
        data,
        &mut ChaCha8Rng::seed_from_u64(11),
        &mut (),
    )
    .unwrap();
    let before = model.params().fingerprint();
    let inference = small_inference(&toy, PosteriorMode::Constrained, 10);

    // common random numbers across checkpoints
    let elbo = |inf: &InferenceNet| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        (0..20)
            .map(|_| dev_elbo(&model, inf, &data.dev, 1e-30, &mut rng).unwrap().unwrap())
            .sum::<f64>()
            / 20.0
    };
    let mut curve = vec![elbo(&inference)];
    // the same seed replays the same prefix, so k epochs here are the first k of a longer run
    for epochs in 1..=3 {
        let cfg = TrainingConfig { epochs, ..cfg.clone() };
        let mut obs = Fingerprints::default();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (fitted, rows) =
            fit_posterior_to_frozen_model(&cfg, &model, inference.clone(), data, &mut rng, &mut obs).unwrap();
        assert_eq!(model.params().fingerprint(), before);
        assert_eq!(obs.stages[0].1, before);
        assert_eq!(rows.len(), epochs);
        assert!(rows.iter().all(|r| r.stage == Stage::Retrofit));
        curve.push(elbo(&fitted));
    }
    assert!(curve.windows(2).all(|w| w[1] >= w[0]), "ELBO curve {curve:?}");
}

#[test]
fn supervised_plan_is_scored_under_the_prior() {
    let story = Story::from_text(
        Some("race day"),
        &[
            "today was the day of the race .",
            "it was a good morning .",
            "we drove to the track .",
            "i ran the race fast .",
            "i won the race .",
        ],
    )
    .unwrap();
    let vocab = build_vocabulary(std::slice::from_ref(&story), 1).unwrap();
    let stop = StopwordSet::english();
    let enc = encode_story(&story, &vocab, &stop);
    let plan: Vec<u32> = "today good day race race".split(' ').map(|w| vocab.id(w)).collect();
    let model = small_model(vocab.len(), DecoderMode::Unconstrained, 4);

    let with_plan = baseline_step(&model, &enc, Some(&plan), TrainMode::Supervised, 0.0, None).unwrap();
    let expected: f64 = -model.plan_log_probs(enc.title.as_deref(), &plan).iter().sum::<f64>();
    assert!(with_plan.prior_nll > 0.0);
    assert!((with_plan.prior_nll - expected).abs() < 1e-9);

    let noplan = baseline_step(&model, &enc, Some(&plan), TrainMode::NoPlan, 0.0, None).unwrap();
    assert_eq!(noplan.prior_nll, 0.0);

    assert!(matches!(
        baseline_step(&model, &enc, None, TrainMode::Supervised, 0.0, None),
        Err(Error::Contract(_))
    ));
    assert!(matches!(
        baseline_step(&model, &enc, Some(&plan[..3]), TrainMode::Supervised, 0.0, None),
        Err(Error::Alignment { expected: 5, found: 3, .. })
    ));
}

#[test]
fn checkpoint_roundtrip() {
    let toy = common::toy();
    let mut config = RunConfig::default();
    config.model.embed_dim = 12;
    config.model.hidden_dim = 12;
    config.model.inference_embed_dim = 8;
    config.model.inference_hidden_dim = 8;
    config.model.init_scale = 0.1;
    let model = Generator::new(config.model_config(toy.vocab.len()), &mut ChaCha8Rng::seed_from_u64(1));
    let blocked = posterior_block_mask(&toy.vocab, &toy.stopwords);
    let inference = InferenceNet::new(config.inference_config(toy.vocab.len()), blocked, &mut ChaCha8Rng::seed_from_u64(2));
    let ckpt = Checkpoint {
        config,
        vocab: toy.vocab.clone(),
        stopwords: toy.stopwords.clone(),
        model,
        inference: Some(inference),
    };
    let dir = tempfile::tempdir().unwrap();
    let id = ckpt.save(dir.path()).unwrap();
    assert_eq!(id.len(), 12);
    let back = Checkpoint::load(dir.path()).unwrap();
    assert_eq!(back.model.params().fingerprint(), ckpt.model.params().fingerprint());
    assert_eq!(
        back.inference.as_ref().unwrap().params().fingerprint(),
        ckpt.inference.as_ref().unwrap().params().fingerprint()
    );
    assert_eq!(back.vocab, ckpt.vocab);
    assert_eq!(back.compatibility_hash(), ckpt.compatibility_hash());
    assert_eq!(back.save(dir.path()).unwrap(), id);

    assert!(back.check_mode(TrainMode::LapUinfUdec).is_ok());
    assert!(back.check_mode(TrainMode::LapCinfCdec).is_err());
    assert!(back.check_mode(TrainMode::NoPlan).is_err());

    // a vocabulary edit breaks the stored hash
    let vocab_path = dir.path().join("vocab.txt");
    let text = std::fs::read_to_string(&vocab_path).unwrap();
    std::fs::write(&vocab_path, text + "extra\n").unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));
}

#[test]
fn latent_checkpoint_needs_inference_parameters() {
    let toy = common::toy();
    let mut config = RunConfig::default();
    config.model.embed_dim = 8;
    config.model.hidden_dim = 8;
    let model = Generator::new(config.model_config(toy.vocab.len()), &mut ChaCha8Rng::seed_from_u64(1));
    let ckpt = Checkpoint {
        config,
        vocab: toy.vocab.clone(),
        stopwords: toy.stopwords.clone(),
        model,
        inference: None,
    };
    let dir = tempfile::tempdir().unwrap();
    ckpt.save(dir.path()).unwrap();
    assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));
}
