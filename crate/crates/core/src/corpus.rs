//! Story corpora, vocabularies and tokenization.
//!
//! A corpus file holds one story per line. In titled mode a line is
//! `title<TAB>sentence one . | sentence two .`; in untitled mode the title
//! field is absent and the whole line is the sentence list.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Token separating sentences inside a corpus line.
pub const SENTENCE_DELIMITER: &str = "|";

const STOPWORDS_EN: &str = include_str!("../resources/stopwords_en.txt");

/// Lowercase whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Titled,
    Untitled,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "titled" => Ok(CorpusFormat::Titled),
            "untitled" => Ok(CorpusFormat::Untitled),
            other => Err(Error::Config(format!("unknown corpus format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Story {
    pub title: Option<Vec<String>>,
    pub sentences: Vec<Vec<String>>,
}

impl Story {
    pub fn new(title: Option<Vec<String>>, sentences: Vec<Vec<String>>) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::contract("a story needs at least one sentence"));
        }
        if sentences.iter().any(Vec::is_empty) {
            return Err(Error::contract("stories may not contain empty sentences"));
        }
        Ok(Story { title, sentences })
    }

    /// Builds a story from a title string and sentence strings.
    pub fn from_text(title: Option<&str>, sentences: &[&str]) -> Result<Self> {
        Story::new(
            title.map(tokenize),
            sentences.iter().map(|s| tokenize(s)).collect(),
        )
    }

    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.title
            .iter()
            .flatten()
            .chain(self.sentences.iter().flatten())
            .map(String::as_str)
    }

    /// All sentence tokens in surface order.
    pub fn story_tokens(&self) -> Vec<String> {
        self.sentences.iter().flatten().cloned().collect()
    }
}

/// Stories read from a corpus file.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub stories: Vec<Story>,
    pub skipped_empty_lines: usize,
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, format, path)
}

pub fn parse_corpus(text: &str, format: CorpusFormat, origin: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            corpus.skipped_empty_lines += 1;
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: line_no,
            message,
        };
        let (title, body) = match (format, line.split_once('\t')) {
            (CorpusFormat::Titled, Some((title, body))) => (Some(tokenize(title)), body),
            (CorpusFormat::Titled, None) => {
                return Err(parse_err("missing tab between title and story".into()))
            }
            (CorpusFormat::Untitled, Some((_, body))) => (None, body),
            (CorpusFormat::Untitled, None) => (None, line),
        };
        let tokens = tokenize(body);
        let sentences: Vec<Vec<String>> = tokens
            .split(|t| t == SENTENCE_DELIMITER)
            .map(<[String]>::to_vec)
            .collect();
        if sentences.iter().any(Vec::is_empty) {
            return Err(parse_err("empty sentence".into()));
        }
        corpus.stories.push(Story { title, sentences });
    }
    Ok(corpus)
}

/// Serializes stories back into the corpus line format.
pub fn format_story(story: &Story) -> String {
    let body = story
        .sentences
        .iter()
        .map(|s| s.join(" "))
        .collect::<Vec<_>>()
        .join(" | ");
    match &story.title {
        Some(title) => format!("{}\t{}", title.join(" "), body),
        None => body,
    }
}

/// Drops sentences beyond `max_sentences`; returns how many stories were cut.
pub fn truncate_stories(stories: &mut [Story], max_sentences: usize) -> usize {
    let mut cut = 0;
    for story in stories.iter_mut() {
        if story.sentences.len() > max_sentences {
            story.sentences.truncate(max_sentences);
            cut += 1;
        }
    }
    if cut > 0 {
        log::warn!("{cut} stories truncated to {max_sentences} sentences");
    }
    cut
}

/// Reserved vocabulary entries. Their ids are fixed and precede all words.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Special {
    Pad = 0,
    Unk = 1,
    Eos = 2,
    TitleSep = 3,
    PlanSep = 4,
    LeftBoundary = 5,
}

impl Special {
    pub const ALL: [Special; 6] = [
        Special::Pad,
        Special::Unk,
        Special::Eos,
        Special::TitleSep,
        Special::PlanSep,
        Special::LeftBoundary,
    ];

    pub const fn id(self) -> u32 {
        self as u32
    }

    pub const fn symbol(self) -> &'static str {
        match self {
            Special::Pad => "<pad>",
            Special::Unk => "<unk>",
            Special::Eos => "<eos>",
            Special::TitleSep => "<tsep>",
            Special::PlanSep => "<psep>",
            Special::LeftBoundary => "<lb>",
        }
    }
}

pub const NUM_SPECIALS: usize = Special::ALL.len();

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary from reserved symbols followed by `words` in order.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = Special::ALL.iter().map(|s| s.symbol().to_string()).collect();
        tokens.extend(words.into_iter().map(Into::into));
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, token) in tokens.iter().enumerate() {
            if index.insert(token.clone(), id as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry `{token}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, falling back to the unknown-token id.
    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or(Special::Unk.id())
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.tokens[NUM_SPECIALS..]
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    /// One token per line, specials included.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for token in &self.tokens {
            let _ = writeln!(out, "{token}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS
            || Special::ALL
                .iter()
                .zip(&lines)
                .any(|(special, line)| special.symbol() != *line)
        {
            return Err(Error::Checkpoint("vocabulary file lacks the reserved header".into()));
        }
        Vocabulary::from_words(lines[NUM_SPECIALS..].iter().copied())
    }

    /// Hex SHA-256 over the serialized vocabulary.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Builds a vocabulary from every title and sentence token.
///
/// Words are ordered by descending frequency with ties broken lexicographically.
pub fn build_vocabulary(stories: &[Story], min_count: usize) -> Result<Vocabulary> {
    if stories.is_empty() {
        return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
    }
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let reserved: HashSet<&str> = Special::ALL.iter().map(|s| s.symbol()).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for token in stories.iter().flat_map(Story::tokens) {
        if !reserved.contains(token) && token != SENTENCE_DELIMITER {
            *counts.entry(token).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    if kept.is_empty() {
        return Err(Error::Config(format!(
            "no token occurs at least {min_count} times"
        )));
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(kept.into_iter().map(|(t, _)| t))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StopwordSet {
    words: HashSet<String>,
}

impl StopwordSet {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The bundled English list.
    pub fn english() -> Self {
        Self::parse(STOPWORDS_EN)
    }

    /// One token per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(&token.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut words: Vec<&String> = self.words.iter().collect();
        words.sort();
        words.into_iter().fold(String::new(), |mut out, w| {
            let _ = writeln!(out, "{w}");
            out
        })
    }

    /// Per-id blocking mask: reserved ids and stopwords are blocked.
    pub fn blocked_ids(&self, vocab: &Vocabulary) -> Vec<bool> {
        (0..vocab.len() as u32)
            .map(|id| is_special(id) || self.contains(vocab.token(id)))
            .collect()
    }
}

impl<S: AsRef<str>> FromIterator<S> for StopwordSet {
    fn from_iter<T: IntoIterator<Item = S>>(iter: T) -> Self {
        StopwordSet {
            words: iter.into_iter().map(|s| s.as_ref().to_lowercase()).collect(),
        }
    }
}

/// A story mapped to ids. Each sentence ends with the sentence-end id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedStory {
    pub title: Option<Vec<u32>>,
    pub sentences: Vec<Vec<u32>>,
    /// Positions (into the sentence) of tokens eligible as anchors.
    pub candidates: Vec<Vec<usize>>,
}

impl TokenizedStory {
    pub fn num_sentences(&self) -> usize {
        self.sentences.len()
    }

    /// Sentence `i` without its trailing sentence-end id.
    pub fn words(&self, i: usize) -> &[u32] {
        let s = &self.sentences[i];
        &s[..s.len() - 1]
    }

    /// Tokens scored by the decoder: all sentence tokens including sentence ends.
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// A single-sentence view of sentence `i` that keeps the title.
    pub fn sentence_story(&self, i: usize) -> TokenizedStory {
        TokenizedStory {
            title: self.title.clone(),
            sentences: vec![self.sentences[i].clone()],
            candidates: vec![self.candidates[i].clone()],
        }
    }
}

pub fn encode_story(story: &Story, vocab: &Vocabulary, stopwords: &StopwordSet) -> TokenizedStory {
    let title = story
        .title
        .as_ref()
        .map(|t| t.iter().map(|w| vocab.id(w)).collect());
    let mut sentences = Vec::with_capacity(story.sentences.len());
    let mut candidates = Vec::with_capacity(story.sentences.len());
    for sentence in &story.sentences {
        let mut ids: Vec<u32> = sentence.iter().map(|w| vocab.id(w)).collect();
        let cands = sentence
            .iter()
            .zip(&ids)
            .enumerate()
            .filter(|(_, (word, &id))| id != Special::Unk.id() && !stopwords.contains(word))
            .map(|(pos, _)| pos)
            .collect();
        ids.push(Special::Eos.id());
        sentences.push(ids);
        candidates.push(cands);
    }
    TokenizedStory {
        title,
        sentences,
        candidates,
    }
}

/// Observed anchor words for one story.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanAnnotation {
    pub story: usize,
    pub anchors: Vec<u32>,
}

#[derive(Clone, Debug, Default)]
pub struct PlanFile {
    pub plans: Vec<PlanAnnotation>,
    /// Keywords that were mapped to the unknown-token id.
    pub unknown_keywords: usize,
}

/// Reads a line-aligned plan file; `sentence_counts[i]` is story i's K.
pub fn load_plan_annotations(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    sentence_counts: &[usize],
) -> Result<PlanFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_plan_annotations(&text, vocab, sentence_counts, path)
}

pub fn parse_plan_annotations(
    text: &str,
    vocab: &Vocabulary,
    sentence_counts: &[usize],
    origin: &Path,
) -> Result<PlanFile> {
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < sentence_counts.len() {
        return Err(Error::Parse {
            path: PathBuf::from(origin),
            line: lines.len() + 1,
            message: format!(
                "plan file has {} lines for {} stories",
                lines.len(),
                sentence_counts.len()
            ),
        });
    }
    let mut out = PlanFile::default();
    for (story, (&expected, line)) in sentence_counts.iter().zip(lines).enumerate() {
        let keywords = tokenize(line);
        if keywords.len() != expected {
            return Err(Error::Alignment {
                story,
                expected,
                found: keywords.len(),
            });
        }
        let anchors = keywords
            .iter()
            .map(|w| {
                vocab.get(w).unwrap_or_else(|| {
                    out.unknown_keywords += 1;
                    Special::Unk.id()
                })
            })
            .collect();
        out.plans.push(PlanAnnotation { story, anchors });
    }
    if out.unknown_keywords > 0 {
        log::warn!("{} plan keywords are out of vocabulary", out.unknown_keywords);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str, format: CorpusFormat) -> Result<Corpus> {
        parse_corpus(text, format, Path::new("test.txt"))
    }

    #[test]
    fn titled_line() {
        let c = parse(
            "the exam\tI had a big geometry exam today . | I knew that i would have to do it .",
            CorpusFormat::Titled,
        )
        .unwrap();
        assert_eq!(c.stories.len(), 1);
        let s = &c.stories[0];
        assert_eq!(s.title.as_deref(), Some(&["the".to_string(), "exam".to_string()][..]));
        assert_eq!(s.num_sentences(), 2);
        assert_eq!(s.sentences[0][0], "i");
    }

    #[test]
    fn empty_input_and_blank_lines() {
        assert!(parse("", CorpusFormat::Titled).unwrap().stories.is_empty());
        let c = parse("\n  \nt\ta b .\n\n", CorpusFormat::Titled).unwrap();
        assert_eq!(c.stories.len(), 1);
        assert_eq!(c.skipped_empty_lines, 3);
    }

    #[test]
    fn untitled_line() {
        let c = parse("We got together to have a reunion .", CorpusFormat::Untitled).unwrap();
        assert_eq!(c.stories[0].title, None);
        assert_eq!(c.stories[0].num_sentences(), 1);
    }

    #[test]
    fn missing_tab_names_line() {
        let err = parse("t\ta .\nno title here .", CorpusFormat::Titled).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_sentence_rejected() {
        assert!(parse("t\ta . | | b .", CorpusFormat::Titled).is_err());
    }

    fn story(text: &str) -> Story {
        Story::from_text(None, &[text]).unwrap()
    }

    #[test]
    fn min_count_threshold() {
        let v = build_vocabulary(&[story("a a b")], 2).unwrap();
        assert!(v.get("a").is_some());
        assert!(v.get("b").is_none());
        assert_eq!(v.id("b"), Special::Unk.id());

        let v = build_vocabulary(&[story("a b")], 1).unwrap();
        assert!(v.get("a").is_some() && v.get("b").is_some());
    }

    #[test]
    fn vocabulary_is_deterministic() {
        let stories = vec![story("c b a b c c"), story("d a")];
        let a = build_vocabulary(&stories, 1).unwrap();
        let b = build_vocabulary(&stories, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.words(), &["c", "a", "b", "d"]);
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn vocabulary_errors() {
        assert!(build_vocabulary(&[], 1).is_err());
        assert!(matches!(
            build_vocabulary(&[story("a b")], 5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn vocabulary_text_roundtrip() {
        let v = build_vocabulary(&[story("x y z y")], 1).unwrap();
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("a\nb\n").is_err());
    }

    #[test]
    fn reserved_ids_distinct_and_dense() {
        let v = build_vocabulary(&[story("x y")], 1).unwrap();
        for s in Special::ALL {
            assert_eq!(v.get(s.symbol()), Some(s.id()));
        }
        for id in 0..v.len() as u32 {
            assert_eq!(v.id(v.token(id)), id);
        }
    }

    #[test]
    fn candidates_skip_stopwords() {
        let s = story("the dog barked");
        let v = build_vocabulary(std::slice::from_ref(&s), 1).unwrap();
        let stop: StopwordSet = ["the"].into_iter().collect();
        let t = encode_story(&s, &v, &stop);
        assert_eq!(t.candidates[0], vec![1, 2]);
        assert_eq!(*t.sentences[0].last().unwrap(), Special::Eos.id());
        assert_eq!(t.words(0).len(), 3);
    }

    #[test]
    fn all_stopword_sentence_has_no_candidates() {
        let s = story("of the and");
        let v = build_vocabulary(std::slice::from_ref(&s), 1).unwrap();
        let t = encode_story(&s, &v, &StopwordSet::english());
        assert!(t.candidates[0].is_empty());
    }

    #[test]
    fn nervous_is_the_only_candidate() {
        let s = story("I was nervous .");
        let v = build_vocabulary(std::slice::from_ref(&s), 1).unwrap();
        let t = encode_story(&s, &v, &StopwordSet::english());
        assert_eq!(t.candidates[0], vec![2]);
        assert_eq!(v.token(t.sentences[0][2]), "nervous");
    }

    #[test]
    fn unknown_tokens_are_not_candidates() {
        let train = story("a a b b");
        let v = build_vocabulary(&[train], 2).unwrap();
        let t = encode_story(&story("a zebra b"), &v, &StopwordSet::empty());
        assert_eq!(t.candidates[0], vec![0, 2]);
        assert_eq!(t.sentences[0][1], Special::Unk.id());
    }

    #[test]
    fn stopwords_are_case_insensitive() {
        let stop = StopwordSet::parse("The\n# comment\n\nand\n");
        assert!(stop.contains("the") && stop.contains("THE") && stop.contains("And"));
        assert_eq!(stop.len(), 2);
    }

    #[test]
    fn plan_annotations() {
        let words = "midterm knew nervous performed passed";
        let v = Vocabulary::from_words(words.split(' ')).unwrap();
        let p = parse_plan_annotations(words, &v, &[5], Path::new("p")).unwrap();
        assert_eq!(p.plans[0].anchors.len(), 5);
        assert_eq!(p.unknown_keywords, 0);

        let p = parse_plan_annotations("midterm zebra nervous performed passed", &v, &[5], Path::new("p"))
            .unwrap();
        assert_eq!(p.plans[0].anchors[1], Special::Unk.id());
        assert_eq!(p.unknown_keywords, 1);

        let err = parse_plan_annotations("a b c d", &v, &[5], Path::new("p")).unwrap_err();
        assert!(matches!(err, Error::Alignment { story: 0, expected: 5, found: 4 }));
    }

    #[test]
    fn truncation_counts_cut_stories() {
        let mut stories = vec![
            Story::from_text(None, &["a", "b", "c"]).unwrap(),
            Story::from_text(None, &["a"]).unwrap(),
        ];
        assert_eq!(truncate_stories(&mut stories, 2), 1);
        assert_eq!(stories[0].num_sentences(), 2);
    }

    #[test]
    fn format_roundtrip() {
        let line = "the exam\ti was nervous . | i passed .";
        let c = parse(line, CorpusFormat::Titled).unwrap();
        assert_eq!(format_story(&c.stories[0]), line);
    }
}
