//! Browser bindings for three small pieces of the library: nucleus
//! filtering, the constrained decoder's generation order, and the
//! corpus diversity metrics.
//!
//! Each operation is a plain function returning `Result<_, String>` so it
//! can be tested natively; the `#[wasm_bindgen]` wrappers only convert
//! errors.

use latent_plan::corpus::{tokenize, SENTENCE_DELIMITER};
use latent_plan::evaluation::{bleu4, div, div_b};
use latent_plan::generation::{nucleus, top_p_filter};
use latent_plan::inference::sample_index;
use latent_plan::model::{linearize_constrained, Emission};
use latent_plan::Special;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

/// Scales non-negative weights to a distribution.
pub fn normalize(weights: &[f64]) -> Result<Vec<f64>, String> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err("weights must be finite and non-negative".into());
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err("weights have no mass".into());
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// Normalizes `weights`, then keeps the top-p nucleus renormalized.
pub fn filter(weights: &[f64], p: f64) -> Result<Vec<f64>, String> {
    let dist = normalize(weights)?;
    top_p_filter(&dist, p).map_err(|e| e.to_string())
}

/// Ids in the nucleus, most probable first.
pub fn nucleus_ids(weights: &[f64], p: f64) -> Result<Vec<u32>, String> {
    let dist = normalize(weights)?;
    let ids = nucleus(&dist, p).map_err(|e| e.to_string())?;
    Ok(ids.into_iter().map(|i| i as u32).collect())
}

/// Per-id counts of `draws` samples from the filtered distribution.
pub fn draw_counts(weights: &[f64], p: f64, draws: u32, seed: u64) -> Result<Vec<u32>, String> {
    let filtered = filter(weights, p)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0; filtered.len()];
    for _ in 0..draws {
        counts[sample_index(&filtered, &mut rng)] += 1;
    }
    Ok(counts)
}

/// The constrained decoder's emission order for `sentence` around the
/// token at `anchor`, space separated.
pub fn emission_order(sentence: &str, anchor: usize) -> Result<String, String> {
    let words = tokenize(sentence);
    if words.is_empty() {
        return Err("sentence is empty".into());
    }
    let order = linearize_constrained(&words, anchor).map_err(|e| e.to_string())?;
    let symbols: Vec<&str> = order
        .iter()
        .map(|e| match e {
            Emission::Token(w) => w.as_str(),
            Emission::LeftBoundary => Special::LeftBoundary.symbol(),
            Emission::End => Special::Eos.symbol(),
        })
        .collect();
    Ok(symbols.join(" "))
}

/// Diversity of a pool of stories.
#[wasm_bindgen]
#[derive(Clone, Debug, PartialEq)]
pub struct Diversity {
    /// Distinct trigrams over total trigrams, in bits.
    pub div: f64,
    /// Mean BLEU-4 of each story against the rest; lower is more diverse.
    pub div_b: f64,
    pub stories: usize,
    /// Story whose BLEU-4 against the others is highest.
    pub most_similar: usize,
}

/// Stories are read one per line; `|` between sentences is ignored.
fn parse_stories(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| tokenize(l).into_iter().filter(|w| w != SENTENCE_DELIMITER).collect::<Vec<_>>())
        .filter(|s| !s.is_empty())
        .collect()
}

pub fn diversity(text: &str) -> Result<Diversity, String> {
    let stories = parse_stories(text);
    let d = div(&stories).map_err(|e| e.to_string())?;
    let b = div_b(&stories).map_err(|e| e.to_string())?;
    let most_similar = (0..stories.len())
        .map(|i| {
            let refs: Vec<&[String]> = stories
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, s)| s.as_slice())
                .collect();
            (i, bleu4(&stories[i], &refs))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map_or(0, |(i, _)| i);
    Ok(Diversity {
        div: d,
        div_b: b,
        stories: stories.len(),
        most_similar,
    })
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = topPFilter)]
pub fn top_p_filter_js(weights: &[f64], p: f64) -> Result<Vec<f64>, JsError> {
    filter(weights, p).map_err(js)
}

#[wasm_bindgen(js_name = nucleusIds)]
pub fn nucleus_ids_js(weights: &[f64], p: f64) -> Result<Vec<u32>, JsError> {
    nucleus_ids(weights, p).map_err(js)
}

#[wasm_bindgen(js_name = drawCounts)]
pub fn draw_counts_js(weights: &[f64], p: f64, draws: u32, seed: u64) -> Result<Vec<u32>, JsError> {
    draw_counts(weights, p, draws, seed).map_err(js)
}

#[wasm_bindgen(js_name = emissionOrder)]
pub fn emission_order_js(sentence: &str, anchor: usize) -> Result<String, JsError> {
    emission_order(sentence, anchor).map_err(js)
}

#[wasm_bindgen(js_name = diversity)]
pub fn diversity_js(text: &str) -> Result<Diversity, JsError> {
    diversity(text).map_err(js)
}
