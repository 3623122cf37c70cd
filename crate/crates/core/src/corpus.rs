//! Labeled single-turn dialogue corpora: synthetic generation, JSONL ingestion,
//! label filtering and stratified splitting.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LotError, Result};
use crate::vocab::{TokenId, Vocab, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Safe,
    Unsafe,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Safe => "safe",
            Label::Unsafe => "unsafe",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialoguePair {
    pub context: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub label: Label,
}

impl DialoguePair {
    /// Teacher-forcing target: the response followed by end-of-sequence.
    pub fn target(&self) -> Vec<TokenId> {
        let mut t = Vec::with_capacity(self.response.len() + 1);
        t.extend_from_slice(&self.response);
        t.push(EOS);
        t
    }
}

/// Word lists the synthetic generator draws from. Also the canned-template
/// source for evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub safe_terms: Vec<String>,
    pub toxic_terms: Vec<String>,
    /// Canned responses, whitespace separated.
    pub templates: Vec<String>,
}

impl Lexicon {
    pub fn validate(&self) -> Result<()> {
        let toxic: HashSet<&str> = self.toxic_terms.iter().map(String::as_str).collect();
        if let Some(t) = self.safe_terms.iter().find(|t| toxic.contains(t.as_str())) {
            return Err(LotError::config(format!("`{t}` is both safe and toxic")));
        }
        for tpl in &self.templates {
            if tpl.split_whitespace().any(|w| toxic.contains(w)) {
                return Err(LotError::config(format!("template `{tpl}` contains a toxic term")));
            }
        }
        Ok(())
    }

    pub fn toxic_ids(&self, vocab: &Vocab) -> HashSet<TokenId> {
        self.toxic_terms.iter().filter_map(|t| vocab.id(t)).collect()
    }

    pub fn template_ids(&self, vocab: &Vocab) -> Vec<Vec<TokenId>> {
        self.templates.iter().map(|t| vocab.encode(t)).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LotError::io(format!("reading {}", path.display()), e))?;
        let lex: Lexicon = serde_json::from_str(&text)?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| LotError::io(format!("writing {}", path.display()), e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub pairs: Vec<DialoguePair>,
    pub split: Option<Split>,
    pub vocab: Arc<Vocab>,
    pub lexicon: Option<Arc<Lexicon>>,
}

impl LabeledCorpus {
    pub fn new(pairs: Vec<DialoguePair>, vocab: Arc<Vocab>) -> Self {
        LabeledCorpus {
            pairs,
            split: None,
            vocab,
            lexicon: None,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `(safe, unsafe)` counts.
    pub fn label_counts(&self) -> (usize, usize) {
        let unsafe_n = self.pairs.iter().filter(|p| p.label == Label::Unsafe).count();
        (self.pairs.len() - unsafe_n, unsafe_n)
    }

    pub fn unsafe_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.label_counts().1 as f64 / self.pairs.len() as f64
    }

    fn with_pairs(&self, pairs: Vec<DialoguePair>, split: Option<Split>) -> Self {
        LabeledCorpus {
            pairs,
            split,
            vocab: self.vocab.clone(),
            lexicon: self.lexicon.clone(),
        }
    }

    /// Writes one `{"context","response","label"}` record per line.
    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| LotError::io(format!("creating {}", path.display()), e))?;
        let mut w = BufWriter::new(f);
        for p in &self.pairs {
            let rec = Record {
                context: self.vocab.decode(&p.context),
                response: self.vocab.decode(&p.response),
                label: p.label.as_str().to_string(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")
                .map_err(|e| LotError::io(format!("writing {}", path.display()), e))?;
        }
        w.flush()
            .map_err(|e| LotError::io(format!("writing {}", path.display()), e))
    }
}

#[derive(Serialize, Deserialize)]
struct Record {
    context: String,
    response: String,
    label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_pairs: usize,
    pub vocab_size: usize,
    pub toxic_fraction: f64,
    /// Longest context or response, in tokens.
    pub max_len: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_pairs: 2000,
            vocab_size: 50,
            toxic_fraction: 0.39,
            max_len: 6,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 16 {
            return Err(LotError::config("vocab_size must be at least 16"));
        }
        if !(self.toxic_fraction > 0.0 && self.toxic_fraction < 1.0) {
            return Err(LotError::config("toxic_fraction must lie in (0, 1)"));
        }
        if self.n_pairs < 10 {
            return Err(LotError::config("n_pairs must be at least 10"));
        }
        if self.max_len < 3 {
            return Err(LotError::config("max_len must be at least 3"));
        }
        Ok(())
    }
}

const TOPIC_WORDS: &[&str] = &[
    "music", "food", "work", "sports", "movies", "games", "travel", "weather", "books", "news",
];
const SAFE_WORDS: &[&str] = &["nice", "great", "fun", "lovely", "interesting", "cool", "good", "kind"];
const TOXIC_WORDS: &[&str] = &["stupid", "idiot", "trash", "dumb", "ugly", "loser", "pathetic", "moron"];
const FRAME_WORDS: &[&str] = &[
    "what", "do", "you", "think", "about", "tell", "me", "hey", "so", "it", "is", "really", "that", "sounds", "i",
    "not", "want", "to", "talk", "let", "us", "change", "the", "subject", "maybe", "we", "can", "well", "just",
    "quite",
];

/// Difference between the unsafe rate of provocative topics and the corpus
/// average. Provocative topics are the first half of the topic list; at the
/// default fraction they sit at 0.50, where a plain likelihood fit is split
/// between the safe and the toxic slot word.
const PROVOCATION_SKEW: f64 = 0.11;
const CANNED_PROB: f64 = 0.08;

fn word_list(base: &[&str], prefix: &str, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| match base.get(i) {
            Some(w) => w.to_string(),
            None => format!("{prefix}{i}"),
        })
        .collect()
}

struct Grammar {
    topics: Vec<TokenId>,
    safe: Vec<TokenId>,
    toxic: Vec<TokenId>,
    context_pool: Vec<TokenId>,
    /// Response prefixes; the slot word follows.
    patterns: Vec<Vec<TokenId>>,
    canned: Vec<Vec<TokenId>>,
}

fn build_grammar(cfg: &SynthConfig) -> (Vocab, Lexicon, Grammar) {
    let content = cfg.vocab_size - 4;
    let n_toxic = (content / 8).max(1);
    let n_safe = (content / 8).max(1);
    let n_topic = (content / 6).max(2);
    let n_frame = content - n_toxic - n_safe - n_topic;

    let topics = word_list(TOPIC_WORDS, "topic", n_topic);
    let safe = word_list(SAFE_WORDS, "safe", n_safe);
    let toxic = word_list(TOXIC_WORDS, "toxic", n_toxic);
    let frame = word_list(FRAME_WORDS, "w", n_frame);

    let vocab = Vocab::with_words(
        topics
            .iter()
            .chain(&safe)
            .chain(&toxic)
            .chain(&frame)
            .map(String::as_str),
    );
    let ids = |ws: &[String]| ws.iter().map(|w| vocab.id(w).unwrap()).collect::<Vec<_>>();
    let frame_ids = ids(&frame);
    let n_ctx = (n_frame / 4).max(1);
    let g = |i: usize| frame_ids[(n_ctx + i) % n_frame];

    let max_resp = cfg.max_len;
    let patterns: Vec<Vec<TokenId>> = [vec![g(0), g(1)], vec![g(2), g(3)], vec![g(4)]]
        .into_iter()
        .map(|mut p| {
            p.truncate(max_resp - 1);
            p
        })
        .collect();
    let canned: Vec<Vec<TokenId>> = [vec![g(5), g(6), g(7), g(8), g(9)], vec![g(10), g(11), g(12), g(13)]]
        .into_iter()
        .map(|mut c| {
            c.truncate(max_resp);
            c
        })
        .collect();

    let lexicon = Lexicon {
        safe_terms: safe.clone(),
        toxic_terms: toxic.clone(),
        templates: canned.iter().map(|c| vocab.decode(c)).collect(),
    };
    let grammar = Grammar {
        topics: ids(&topics),
        safe: ids(&safe),
        toxic: ids(&toxic),
        context_pool: frame_ids[..n_ctx].to_vec(),
        patterns,
        canned,
    };
    (vocab, lexicon, grammar)
}

/// Cycles through `0..n` in a fresh random order per pass.
struct Deck {
    cards: Vec<usize>,
    next: usize,
}

impl Deck {
    fn new(n: usize) -> Self {
        Deck {
            cards: (0..n).collect(),
            next: n,
        }
    }

    fn draw(&mut self, rng: &mut impl Rng) -> usize {
        if self.next == self.cards.len() {
            self.cards.shuffle(rng);
            self.next = 0;
        }
        self.next += 1;
        self.cards[self.next - 1]
    }
}

/// Generates a seeded synthetic corpus. Responses fill a slot after a short
/// frame; unsafe responses fill it with the topic's toxic term. Contexts share
/// one topic pool across labels, and half of the topics are provocative (they
/// draw a higher share of the unsafe responses).
pub fn gen_synthetic_corpus(cfg: &SynthConfig, seed: u64) -> Result<LabeledCorpus> {
    cfg.validate()?;
    let (vocab, lexicon, gr) = build_grammar(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.n_pairs;
    let n_prov_topics = gr.topics.len().div_ceil(2);

    let topic_of: Vec<usize> = (0..n).map(|_| rng.gen_range(0..gr.topics.len())).collect();
    let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); gr.topics.len()];
    for (i, &k) in topic_of.iter().enumerate() {
        by_topic[k].push(i);
    }

    // exact unsafe count overall, split across topics by largest remainder so
    // every provocative topic sits at the same rate
    let n_unsafe = (cfg.toxic_fraction * n as f64).round() as usize;
    let n_prov: usize = by_topic[..n_prov_topics].iter().map(Vec::len).sum();
    let n_calm = n - n_prov;
    let p_hi = (cfg.toxic_fraction + PROVOCATION_SKEW)
        .min(2.0 * cfg.toxic_fraction)
        .min(1.0)
        .max(n_unsafe.saturating_sub(n_calm) as f64 / n_prov.max(1) as f64);
    let p_lo = if n_calm == 0 {
        0.0
    } else {
        ((n_unsafe as f64 - p_hi * n_prov as f64) / n_calm as f64).clamp(0.0, 1.0)
    };
    let quota: Vec<f64> = by_topic
        .iter()
        .enumerate()
        .map(|(k, ix)| ix.len() as f64 * if k < n_prov_topics { p_hi } else { p_lo })
        .collect();
    let mut take: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..take.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quota[a] - quota[a].floor();
        let rb = quota[b] - quota[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut rest = n_unsafe - take.iter().sum::<usize>().min(n_unsafe);
    while rest > 0 {
        let before = rest;
        for &k in &order {
            if rest > 0 && take[k] < by_topic[k].len() {
                take[k] += 1;
                rest -= 1;
            }
        }
        if rest == before {
            break;
        }
    }

    // Patterns and context words are dealt from shuffled decks within each
    // (topic, label) group, so no surface feature other than the topic
    // carries label information.
    let max_ctx = cfg.max_len.min(4);
    let mut is_unsafe = vec![false; n];
    let mut pattern_of = vec![0usize; n];
    let mut lead_of: Vec<Vec<TokenId>> = vec![Vec::new(); n];
    for (k, ix) in by_topic.iter_mut().enumerate() {
        ix.shuffle(&mut rng);
        let (bad, good) = ix.split_at(take[k]);
        for &i in bad {
            is_unsafe[i] = true;
        }
        for group in [bad, good] {
            let mut patterns = Deck::new(gr.patterns.len());
            let mut lengths = Deck::new(max_ctx - 1);
            let mut slots: Vec<Deck> = (0..max_ctx - 1).map(|_| Deck::new(gr.context_pool.len())).collect();
            for &i in group {
                pattern_of[i] = patterns.draw(&mut rng);
                let n_lead = lengths.draw(&mut rng) + 1;
                lead_of[i] = slots[..n_lead]
                    .iter_mut()
                    .rev()
                    .map(|d| gr.context_pool[d.draw(&mut rng)])
                    .collect();
            }
        }
    }

    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let k = topic_of[i];
        let mut context = std::mem::take(&mut lead_of[i]);
        context.push(gr.topics[k]);

        let (response, label) = if is_unsafe[i] {
            let mut r = gr.patterns[pattern_of[i]].clone();
            r.push(gr.toxic[k % gr.toxic.len()]);
            (r, Label::Unsafe)
        } else if rng.gen_bool(CANNED_PROB) {
            (gr.canned[rng.gen_range(0..gr.canned.len())].clone(), Label::Safe)
        } else {
            let mut r = gr.patterns[pattern_of[i]].clone();
            r.push(gr.safe[k % gr.safe.len()]);
            (r, Label::Safe)
        };
        pairs.push(DialoguePair {
            context,
            response,
            label,
        });
    }

    Ok(LabeledCorpus {
        pairs,
        split: None,
        vocab: Arc::new(vocab),
        lexicon: Some(Arc::new(lexicon)),
    })
}

/// Builds a vocabulary from every word in a JSONL file, in first-seen order.
pub fn vocab_from_jsonl(path: &Path) -> Result<Vocab> {
    let mut words: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for_each_record(path, |_, rec| {
        for w in rec.context.split_whitespace().chain(rec.response.split_whitespace()) {
            if seen.insert(w.to_string()) {
                words.push(w.to_string());
            }
        }
        Ok(())
    })?;
    Ok(Vocab::with_words(words))
}

fn for_each_record(path: &Path, mut f: impl FnMut(usize, Record) -> Result<()>) -> Result<()> {
    let file = File::open(path).map_err(|e| LotError::io(format!("opening {}", path.display()), e))?;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| LotError::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| LotError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        f(line_no, rec)?;
    }
    Ok(())
}

/// Loads a JSONL corpus, tokenizing against `vocab`. Record order is kept.
pub fn load_jsonl(path: &Path, vocab: Arc<Vocab>) -> Result<LabeledCorpus> {
    let mut pairs = Vec::new();
    for_each_record(path, |line, rec| {
        let label = match rec.label.as_str() {
            "safe" => Label::Safe,
            "unsafe" => Label::Unsafe,
            other => {
                return Err(LotError::Schema {
                    path: path.to_path_buf(),
                    line,
                    message: format!("label must be \"safe\" or \"unsafe\", found {other:?}"),
                })
            }
        };
        let response = vocab.encode(&rec.response);
        if response.is_empty() {
            return Err(LotError::Malformed {
                path: path.to_path_buf(),
                line,
                message: "empty response".into(),
            });
        }
        pairs.push(DialoguePair {
            context: vocab.encode(&rec.context),
            response,
            label,
        });
        Ok(())
    })?;
    Ok(LabeledCorpus::new(pairs, vocab))
}

pub fn filter_by_label(corpus: &LabeledCorpus, label: Label) -> LabeledCorpus {
    let pairs = corpus.pairs.iter().filter(|p| p.label == label).cloned().collect();
    corpus.with_pairs(pairs, corpus.split)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let r = [self.train, self.valid, self.test];
        if r.iter().any(|&x| !(x > 0.0)) {
            return Err(LotError::config("split ratios must be positive"));
        }
        if (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(LotError::config("split ratios must sum to 1"));
        }
        Ok(())
    }
}

/// Stratified three-way split. Each label class is shuffled under `seed` and
/// cut by the ratios; every split keeps source order.
pub fn split(
    corpus: &LabeledCorpus,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(LabeledCorpus, LabeledCorpus, LabeledCorpus)> {
    ratios.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assign = vec![Split::Train; corpus.len()];
    for label in [Label::Safe, Label::Unsafe] {
        let mut idx: Vec<usize> = (0..corpus.len()).filter(|&i| corpus.pairs[i].label == label).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (ratios.train * n as f64).round() as usize;
        let n_valid = ((ratios.valid * n as f64).round() as usize).min(n - n_train);
        for &i in &idx[n_train..n_train + n_valid] {
            assign[i] = Split::Valid;
        }
        for &i in &idx[n_train + n_valid..] {
            assign[i] = Split::Test;
        }
    }
    let part = |s: Split| {
        let pairs = corpus
            .pairs
            .iter()
            .zip(&assign)
            .filter(|(_, &a)| a == s)
            .map(|(p, _)| p.clone())
            .collect();
        corpus.with_pairs(pairs, Some(s))
    };
    let (train, valid, test) = (part(Split::Train), part(Split::Valid), part(Split::Test));
    if corpus.len() >= 10 && (train.is_empty() || valid.is_empty() || test.is_empty()) {
        return Err(LotError::config(format!(
            "split ratios leave an empty split ({}/{}/{})",
            train.len(),
            valid.len(),
            test.len()
        )));
    }
    Ok((train, valid, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, f: f64) -> SynthConfig {
        SynthConfig {
            n_pairs: n,
            toxic_fraction: f,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn synthetic_unsafe_count_in_band() {
        let c = gen_synthetic_corpus(&cfg(100, 0.4), 7).unwrap();
        let (_, u) = c.label_counts();
        assert!((35..=45).contains(&u), "unsafe = {u}");
        assert_eq!(c.len(), 100);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = gen_synthetic_corpus(&cfg(100, 0.4), 7).unwrap();
        let b = gen_synthetic_corpus(&cfg(100, 0.4), 7).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_corpus(&cfg(100, 0.4), 8).unwrap();
        assert_ne!(a.pairs, c.pairs);
    }

    #[test]
    fn synthetic_matches_reference_unsafe_ratio() {
        let c = gen_synthetic_corpus(&cfg(2000, 0.39), 1).unwrap();
        let reference = 27225.0 / 69274.0;
        assert!((c.unsafe_fraction() - 0.39).abs() < 0.005);
        assert!((c.unsafe_fraction() - reference).abs() < 0.01);
    }

    #[test]
    fn synthetic_topics_and_surface_balanced() {
        let c = gen_synthetic_corpus(&cfg(2000, 0.39), 1).unwrap();
        let topics: Vec<TokenId> = c.pairs.iter().map(|p| *p.context.last().unwrap()).collect();
        let mut seen: Vec<TokenId> = topics.clone();
        seen.sort_unstable();
        seen.dedup();
        let n_prov = seen.len().div_ceil(2);
        for (k, &t) in seen.iter().enumerate() {
            let ix: Vec<usize> = (0..c.len()).filter(|&i| topics[i] == t).collect();
            let bad = ix.iter().filter(|&&i| c.pairs[i].label == Label::Unsafe).count();
            let rate = bad as f64 / ix.len() as f64;
            if k < n_prov {
                assert!(
                    (rate - 0.50).abs() <= 1.0 / ix.len() as f64 + 1e-12,
                    "topic {k}: {rate}"
                );
            } else {
                assert!(rate < 0.35, "topic {k}: {rate}");
            }
            // unsafe response frames are dealt evenly
            let mut first = std::collections::HashMap::new();
            for &i in &ix {
                if c.pairs[i].label == Label::Unsafe {
                    *first.entry(c.pairs[i].response[0]).or_insert(0usize) += 1;
                }
            }
            let (lo, hi) = (first.values().min().unwrap(), first.values().max().unwrap());
            assert!(hi - lo <= 1, "{first:?}");
        }
    }

    #[test]
    fn synthetic_labels_follow_lexicon() {
        let c = gen_synthetic_corpus(&cfg(500, 0.3), 3).unwrap();
        let lex = c.lexicon.as_ref().unwrap();
        lex.validate().unwrap();
        let toxic = lex.toxic_ids(&c.vocab);
        for p in &c.pairs {
            let has = p.response.iter().any(|t| toxic.contains(t));
            assert_eq!(has, p.label == Label::Unsafe);
            assert!(!p.response.is_empty());
            assert!(p
                .response
                .iter()
                .chain(&p.context)
                .all(|&t| (t as usize) < c.vocab.len()));
        }
    }

    #[test]
    fn synthetic_small_vocab() {
        let c = gen_synthetic_corpus(
            &SynthConfig {
                n_pairs: 50,
                vocab_size: 16,
                toxic_fraction: 0.5,
                max_len: 3,
            },
            0,
        )
        .unwrap();
        assert_eq!(c.vocab.len(), 16);
        assert!(c.pairs.iter().all(|p| p.response.len() <= 3 && p.context.len() <= 3));
    }

    #[test]
    fn synthetic_rejects_bad_config() {
        for bad in [
            SynthConfig {
                vocab_size: 15,
                ..cfg(100, 0.4)
            },
            cfg(100, 0.0),
            cfg(100, 1.0),
            cfg(9, 0.4),
        ] {
            assert!(matches!(gen_synthetic_corpus(&bad, 0), Err(LotError::Config(_))));
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn load_three_records() {
        let f = write_lines(&[
            r#"{"context": "hi there", "response": "hello", "label": "safe"}"#,
            r#"{"context": "", "response": "you idiot", "label": "unsafe"}"#,
            r#"{"context": "what", "response": "never mind", "label": "safe"}"#,
        ]);
        let vocab = Arc::new(vocab_from_jsonl(f.path()).unwrap());
        let c = load_jsonl(f.path(), vocab.clone()).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.label_counts(), (2, 1));
        assert!(c.pairs[1].context.is_empty());
        assert_eq!(vocab.decode(&c.pairs[1].response), "you idiot");
    }

    #[test]
    fn load_unknown_words_become_unk() {
        let f = write_lines(&[r#"{"context": "a zz", "response": "b", "label": "safe"}"#]);
        let vocab = Arc::new(Vocab::with_words(["a", "b"]));
        let c = load_jsonl(f.path(), vocab).unwrap();
        assert_eq!(c.pairs[0].context, vec![4, crate::vocab::UNK]);
    }

    #[test]
    fn load_rejects_unknown_label() {
        let f = write_lines(&[
            r#"{"context": "a", "response": "b", "label": "safe"}"#,
            r#"{"context": "a", "response": "b", "label": "offensive"}"#,
        ]);
        let vocab = Arc::new(Vocab::with_words(["a", "b"]));
        match load_jsonl(f.path(), vocab) {
            Err(LotError::Schema { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_malformed_line() {
        let f = write_lines(&[
            r#"{"context": "a", "response": "b", "label": "safe"}"#,
            r#"{"context": "a", "response": "b", "label": "safe"}"#,
            r#"{"context": "a", "label": "safe"}"#,
        ]);
        let vocab = Arc::new(Vocab::with_words(["a", "b"]));
        match load_jsonl(f.path(), vocab) {
            Err(e @ LotError::Malformed { line: 3, .. }) => assert!(e.to_string().contains(":3:")),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_roundtrip() {
        let c = gen_synthetic_corpus(&cfg(200, 0.4), 11).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        c.save_jsonl(f.path()).unwrap();
        let back = load_jsonl(f.path(), c.vocab.clone()).unwrap();
        assert_eq!(back.pairs, c.pairs);
    }

    #[test]
    fn filter_keeps_order_and_complements() {
        let v = Arc::new(Vocab::with_words(["a"]));
        let mk = |l| DialoguePair {
            context: vec![],
            response: vec![4],
            label: l,
        };
        let c = LabeledCorpus::new(vec![mk(Label::Safe), mk(Label::Unsafe), mk(Label::Safe)], v);
        assert_eq!(filter_by_label(&c, Label::Safe).len(), 2);
        assert_eq!(filter_by_label(&c, Label::Unsafe).len(), 1);
        let clean = filter_by_label(&c, Label::Safe);
        assert!(filter_by_label(&clean, Label::Unsafe).is_empty());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let c = gen_synthetic_corpus(&cfg(100, 0.4), 2).unwrap();
        let (tr, va, te) = split(&c, SplitRatios::default(), 5).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        let (tr2, va2, te2) = split(&c, SplitRatios::default(), 5).unwrap();
        assert_eq!((tr.pairs, va.pairs, te.pairs), (tr2.pairs, va2.pairs, te2.pairs));
    }

    #[test]
    fn split_rejects_degenerate_ratios() {
        let c = gen_synthetic_corpus(&cfg(10, 0.4), 2).unwrap();
        let r = SplitRatios {
            train: 0.98,
            valid: 0.01,
            test: 0.01,
        };
        assert!(matches!(split(&c, r, 0), Err(LotError::Config(_))));
        let r = SplitRatios {
            train: 0.5,
            valid: 0.5,
            test: 0.1,
        };
        assert!(matches!(split(&c, r, 0), Err(LotError::Config(_))));
    }
}
