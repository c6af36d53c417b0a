#![allow(dead_code)]

use std::path::PathBuf;

use latent_plan::corpus::{build_vocabulary, encode_story, load_corpus, load_plan_annotations, CorpusFormat};
use latent_plan::training::TrainingData;
use latent_plan::{RunConfig, StopwordSet, TokenizedStory, Vocabulary};

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn desk_config() -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg");
    RunConfig::load(path).unwrap()
}

pub struct Toy {
    pub vocab: Vocabulary,
    pub stopwords: StopwordSet,
    pub data: TrainingData,
    pub test: Vec<TokenizedStory>,
}

pub fn toy() -> Toy {
    let train = load_corpus(data_path("toy_train.txt"), CorpusFormat::Titled).unwrap().stories;
    let dev = load_corpus(data_path("toy_dev.txt"), CorpusFormat::Titled).unwrap().stories;
    let test = load_corpus(data_path("toy_test.txt"), CorpusFormat::Titled).unwrap().stories;
    let vocab = build_vocabulary(&train, 1).unwrap();
    let stopwords = StopwordSet::english();
    let enc = |s: &[latent_plan::Story]| -> Vec<TokenizedStory> {
        s.iter().map(|s| encode_story(s, &vocab, &stopwords)).collect()
    };
    let counts = |s: &[latent_plan::Story]| -> Vec<usize> { s.iter().map(|s| s.num_sentences()).collect() };
    let plans = |name: &str, s: &[latent_plan::Story]| -> Vec<Vec<u32>> {
        load_plan_annotations(data_path(name), &vocab, &counts(s))
            .unwrap()
            .plans
            .into_iter()
            .map(|p| p.anchors)
            .collect()
    };
    let data = TrainingData {
        train: enc(&train),
        dev: enc(&dev),
        train_plans: Some(plans("toy_train_plans.txt", &train)),
        dev_plans: Some(plans("toy_dev_plans.txt", &dev)),
    };
    Toy {
        test: enc(&test),
        vocab,
        stopwords,
        data,
    }
}

pub mod tiny {
    use latent_plan::corpus::{encode_story, StopwordSet, Story};
    use latent_plan::inference::{posterior_block_mask, InferenceConfig, InferenceNet, PosteriorMode};
    use latent_plan::model::{DecoderMode, Generator, ModelConfig};
    use latent_plan::{TokenizedStory, Vocabulary};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const WORDS: [&str; 6] = ["w0", "w1", "w2", "w3", "w4", "w5"];

    /// Twelve ids: the six reserved symbols and six words.
    pub fn vocab() -> Vocabulary {
        Vocabulary::from_words(WORDS).unwrap()
    }

    pub fn model(decoder: DecoderMode, seed: u64) -> Generator {
        let cfg = ModelConfig {
            vocab_size: 12,
            embed_dim: 8,
            hidden_dim: 8,
            layers: 3,
            dropout: 0.0,
            decoder,
            init_scale: 0.5,
        };
        Generator::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn inference(mode: PosteriorMode, seed: u64) -> InferenceNet {
        let cfg = InferenceConfig {
            vocab_size: 12,
            embed_dim: 4,
            hidden_dim: 4,
            mode,
            condition_on_title: false,
            init_scale: 0.5,
        };
        let blocked = posterior_block_mask(&vocab(), &StopwordSet::empty());
        InferenceNet::new(cfg, blocked, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn encode(title: &str, sentences: &[&str]) -> TokenizedStory {
        let story = Story::from_text(Some(title), sentences).unwrap();
        encode_story(&story, &vocab(), &StopwordSet::empty())
    }

    /// The fixed two-sentence story with three tokens per sentence.
    pub fn story() -> TokenizedStory {
        encode("w0", &["w1 w2 w3", "w4 w5 w1"])
    }

    /// A random story of `k` sentences of `len` words.
    pub fn random_story<R: Rng>(rng: &mut R, k: usize, len: usize) -> TokenizedStory {
        let pick = |rng: &mut R| WORDS[rng.gen_range(0..WORDS.len())];
        let title = pick(rng).to_string();
        let sentences: Vec<String> = (0..k)
            .map(|_| (0..len).map(|_| pick(rng)).collect::<Vec<_>>().join(" "))
            .collect();
        let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
        encode(&title, &refs)
    }
}
