mod common;

use common::tiny;
use latent_plan::evaluation::{
    evaluate_split, iw_nll, log_importance_weights, elbo_nll_from_weights, iw_nll_from_weights, p_sweep,
    EvalOptions, EvaluationReport,
};
use latent_plan::inference::PosteriorMode;
use latent_plan::model::DecoderMode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn options() -> EvalOptions {
    EvalOptions {
        iw_samples: 5,
        story_p: 0.6,
        plan_p: 0.6,
        max_sentence_len: 6,
        divb_pool: 0,
        blocked: latent_plan::inference::posterior_block_mask(&tiny::vocab(), &latent_plan::StopwordSet::empty()),
    }
}

fn stories(n: usize, k: usize, seed: u64) -> Vec<latent_plan::TokenizedStory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| tiny::random_story(&mut rng, k, 4)).collect()
}

#[test]
fn iw_error_shrinks_with_more_samples() {
    let model = tiny::model(DecoderMode::Unconstrained, 21);
    let inference = tiny::inference(PosteriorMode::Unconstrained, 22);
    let story = tiny::story();
    // reference: a very large sample
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let exact = iw_nll(&model, &inference, &story, 200_000, &mut rng).unwrap();
    let mean_error = |k: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        (0..100)
            .map(|_| (iw_nll(&model, &inference, &story, k, &mut rng).unwrap() - exact).abs())
            .sum::<f64>()
            / 100.0
    };
    let errors: Vec<f64> = [1, 10, 100].into_iter().map(mean_error).collect();
    assert!(errors[0] > errors[1] && errors[1] > errors[2], "errors {errors:?}");
}

#[test]
fn elbo_bound_is_looser_on_the_same_pool() {
    let model = tiny::model(DecoderMode::Constrained, 23);
    let inference = tiny::inference(PosteriorMode::Constrained, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for story in stories(30, 2, 4) {
        let w = log_importance_weights(&model, &inference, &story, 20, &mut rng).unwrap();
        assert!(elbo_nll_from_weights(&w) >= iw_nll_from_weights(&w) - 1e-12);
    }
}

#[test]
fn latent_split_report_is_complete_and_reproducible() {
    let model = tiny::model(DecoderMode::Unconstrained, 25);
    let inference = tiny::inference(PosteriorMode::Constrained, 26);
    let data = stories(6, 3, 5);
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        evaluate_split("test", &model, Some(&inference), true, &data, &options(), &mut rng).unwrap()
    };
    let report = run();
    assert_eq!(report, run());
    assert_eq!(report.stories, 6);
    assert_eq!(report.token_count, 6 * (3 * 4 + 3));
    assert!((report.ppl - (report.nll_total / report.token_count as f64).exp()).abs() < 1e-9 * report.ppl);
    assert!(report.elbo_nll.unwrap() >= report.nll - 1e-12);
    assert!(report.div_plan.is_some() && report.ctrl.is_some());
}

#[test]
fn noplan_report_marks_plan_metrics_missing() {
    let model = tiny::model(DecoderMode::Unconstrained, 27);
    let data = stories(4, 2, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let split = evaluate_split("dev", &model, None, false, &data, &options(), &mut rng).unwrap();
    assert_eq!(split.div_plan, None);
    assert_eq!(split.ctrl, None);
    assert_eq!(split.elbo_nll, None);
    let report = EvaluationReport {
        checkpoint_id: "abc".into(),
        mode: "noplan".into(),
        iw_samples: None,
        p: 0.6,
        plan_p: 0.6,
        divb_pool: 0,
        seed: 1,
        timestamp: 0,
        splits: vec![split],
        p_sweep: None,
    };
    let table = report.to_table();
    let row = table.lines().nth(1).unwrap();
    assert!(row.starts_with("dev"));
    assert_eq!(row.matches("NA").count(), 2);
    assert_eq!(EvaluationReport::from_json(&report.to_json().unwrap()).unwrap(), report);
}

#[test]
fn sweep_rows_follow_p_values() {
    let model = tiny::model(DecoderMode::Constrained, 29);
    let titles: Vec<_> = stories(5, 2, 9).into_iter().map(|s| (s.title.clone(), 2)).collect();
    let rows = p_sweep(&model, &titles, true, &[0.5, 0.9], &options(), 3).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.ctrl == Some(1.0)));
    let single = p_sweep(&model, &titles, true, &[0.7], &options(), 3).unwrap();
    assert_eq!(single.len(), 1);
    assert!(p_sweep(&model, &titles, true, &[0.8, 0.5], &options(), 3).is_err());
}
