//! Synthetic punctuated corpus with a known labeling rule.
//!
//! Sentences are clauses joined by conjunctions. The word before each
//! conjunction takes a COMMA, the last word of a statement takes a PERIOD,
//! and a sentence opening with a question word ends in a QUESTION mark.

use std::collections::HashSet;
use std::path::Path;

use prrl_core::text::io::{save_dataset, save_vocab, WordSequence};
use prrl_core::text::{AugmentationConfig, Augmenter, LabeledSequence, PunctLabel, Vocab};
use prrl_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const QUESTION_WORDS: [&str; 6] = ["what", "where", "why", "how", "when", "who"];
const PRONOUNS: [&str; 6] = ["i", "you", "he", "she", "we", "they"];
const DETERMINERS: [&str; 6] = ["the", "a", "this", "that", "my", "your"];
const AUXILIARIES: [&str; 5] = ["did", "does", "can", "will", "should"];
const CONJUNCTIONS: [&str; 5] = ["and", "but", "so", "because", "while"];
const PREPOSITIONS: [&str; 5] = ["in", "on", "with", "near", "under"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticGrammarSpec {
    /// Probability that a sentence is a question.
    pub p_question: f64,
    /// Probability of appending another clause to a statement; the clause
    /// count is geometric with mean `1 / (1 - p_continue)`.
    pub p_continue: f64,
    /// Probability a noun phrase is a bare pronoun.
    pub p_pronoun: f64,
    pub p_adjective: f64,
    pub p_object: f64,
    pub p_prep_phrase: f64,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub shared_nouns: usize,
    /// Number of topics. Topic 0 is the training topic, topic 1 the topic
    /// of dev, test and the seed pool; the rest appear only in the general
    /// corpus.
    pub topics: usize,
    /// Nouns specific to each topic.
    pub topic_nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    /// Probability that a noun is drawn from the split's topic lexicon.
    pub p_topic_noun: f64,
    pub train_sequences: usize,
    pub dev_sequences: usize,
    pub test_sequences: usize,
    pub pool_sequences: usize,
    /// Mixed-topic text for language-model pretraining, one topic per
    /// sequence drawn uniformly.
    pub general_sequences: usize,
    /// Noise applied to the dev and test splits.
    pub noise: AugmentationConfig,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
}

impl Default for SyntheticGrammarSpec {
    fn default() -> Self {
        SyntheticGrammarSpec {
            p_question: 0.2,
            p_continue: 0.35,
            p_pronoun: 0.4,
            p_adjective: 0.3,
            p_object: 0.7,
            p_prep_phrase: 0.3,
            min_sentences: 3,
            max_sentences: 8,
            shared_nouns: 60,
            topics: 4,
            topic_nouns: 30,
            verbs: 40,
            adjectives: 25,
            p_topic_noun: 0.3,
            train_sequences: 2000,
            dev_sequences: 100,
            test_sequences: 300,
            pool_sequences: 1000,
            general_sequences: 2000,
            noise: AugmentationConfig::default(),
            vocab_min_freq: 2,
            vocab_max_size: 2000,
        }
    }
}

/// Expected fraction of words carrying each label, in label order.
pub type LabelRates = [f64; 4];

impl SyntheticGrammarSpec {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_question", self.p_question),
            ("p_pronoun", self.p_pronoun),
            ("p_adjective", self.p_adjective),
            ("p_object", self.p_object),
            ("p_prep_phrase", self.p_prep_phrase),
            ("p_topic_noun", self.p_topic_noun),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(0.0..1.0).contains(&self.p_continue) {
            return Err(Error::Config(format!("p_continue = {} must lie in [0,1)", self.p_continue)));
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return Err(Error::Config("need 1 <= min_sentences <= max_sentences".into()));
        }
        if self.shared_nouns == 0 || self.verbs == 0 || self.adjectives == 0 {
            return Err(Error::Config("lexicon sizes must be positive".into()));
        }
        if self.topics < 2 {
            return Err(Error::Config("need at least two topics".into()));
        }
        if self.topic_nouns == 0 && self.p_topic_noun > 0.0 {
            return Err(Error::Config("p_topic_noun > 0 needs topic_nouns > 0".into()));
        }
        if self.train_sequences == 0 || self.dev_sequences == 0 || self.test_sequences == 0 || self.pool_sequences == 0
        {
            return Err(Error::Config("every split needs at least one sequence".into()));
        }
        self.noise.validate()
    }

    fn noun_phrase_words(&self) -> f64 {
        self.p_pronoun + (1.0 - self.p_pronoun) * (2.0 + self.p_adjective)
    }

    fn clause_words(&self) -> f64 {
        let object = self.p_object * (2.0 + self.p_adjective);
        self.noun_phrase_words() + 1.0 + object + self.p_prep_phrase * 3.0
    }

    /// Long-run label frequencies implied by the grammar (ratio of expected
    /// counts per sentence).
    pub fn expected_label_rates(&self) -> LabelRates {
        let clauses = 1.0 / (1.0 - self.p_continue);
        let c = self.clause_words();
        let statement_words = clauses * c + (clauses - 1.0);
        let question_words = 2.0 + c;
        let q = self.p_question;
        let words = (1.0 - q) * statement_words + q * question_words;
        let comma = (1.0 - q) * (clauses - 1.0) / words;
        let period = (1.0 - q) / words;
        let question = q / words;
        [1.0 - comma - period - question, comma, period, question]
    }
}

/// Word lists for one grammar.
#[derive(Clone, Debug)]
pub struct Lexicon {
    pub shared_nouns: Vec<String>,
    pub topic_nouns: Vec<Vec<String>>,
    pub verbs: Vec<String>,
    pub adjectives: Vec<String>,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

impl Lexicon {
    /// Pseudo-words; the lexicon depends only on the sizes in `spec`.
    pub fn new(spec: &SyntheticGrammarSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_1e71);
        let mut used: HashSet<String> = QUESTION_WORDS
            .iter()
            .chain(&PRONOUNS)
            .chain(&DETERMINERS)
            .chain(&AUXILIARIES)
            .chain(&CONJUNCTIONS)
            .chain(&PREPOSITIONS)
            .map(|s| s.to_string())
            .collect();
        let mut draw = |n: usize, suffix: &str| -> Vec<String> {
            let mut out = Vec::with_capacity(n);
            while out.len() < n {
                let syllables = rng.gen_range(2..=3);
                let mut w: String = (0..syllables)
                    .map(|_| format!("{}{}", ONSETS.choose(&mut rng).unwrap(), NUCLEI.choose(&mut rng).unwrap()))
                    .collect();
                w.push_str(suffix);
                if used.insert(w.clone()) {
                    out.push(w);
                }
            }
            out
        };
        let shared_nouns = draw(spec.shared_nouns, "n");
        let verbs = draw(spec.verbs, "s");
        let adjectives = draw(spec.adjectives, "l");
        let topic_nouns = (0..spec.topics).map(|_| draw(spec.topic_nouns, "n")).collect();
        Lexicon { shared_nouns, topic_nouns, verbs, adjectives }
    }
}

struct Writer<'a, R> {
    spec: &'a SyntheticGrammarSpec,
    lex: &'a Lexicon,
    topic: usize,
    rng: &'a mut R,
    out: WordSequence,
}

impl<R: Rng> Writer<'_, R> {
    fn word(&mut self, w: &str) {
        self.out.push((w.to_string(), PunctLabel::None));
    }

    fn pick(&mut self, list: &[&str]) {
        let w = *list.choose(self.rng).unwrap();
        self.word(w);
    }

    fn noun(&mut self) {
        let topical = self.rng.gen_bool(self.spec.p_topic_noun);
        let list = if topical { &self.lex.topic_nouns[self.topic] } else { &self.lex.shared_nouns };
        let w = list.choose(self.rng).unwrap().clone();
        self.word(&w);
    }

    fn full_noun_phrase(&mut self) {
        self.pick(&DETERMINERS);
        if self.rng.gen_bool(self.spec.p_adjective) {
            let w = self.lex.adjectives.choose(self.rng).unwrap().clone();
            self.word(&w);
        }
        self.noun();
    }

    fn subject(&mut self) {
        if self.rng.gen_bool(self.spec.p_pronoun) {
            self.pick(&PRONOUNS);
        } else {
            self.full_noun_phrase();
        }
    }

    fn clause(&mut self) {
        self.subject();
        let v = self.lex.verbs.choose(self.rng).unwrap().clone();
        self.word(&v);
        if self.rng.gen_bool(self.spec.p_object) {
            self.full_noun_phrase();
        }
        if self.rng.gen_bool(self.spec.p_prep_phrase) {
            self.pick(&PREPOSITIONS);
            self.pick(&DETERMINERS);
            self.noun();
        }
    }

    fn mark_last(&mut self, label: PunctLabel) {
        self.out.last_mut().expect("clause emitted words").1 = label;
    }

    fn sentence(&mut self) {
        if self.rng.gen_bool(self.spec.p_question) {
            self.pick(&QUESTION_WORDS);
            self.pick(&AUXILIARIES);
            self.clause();
            self.mark_last(PunctLabel::Question);
            return;
        }
        self.clause();
        while self.rng.gen_bool(self.spec.p_continue) {
            self.mark_last(PunctLabel::Comma);
            self.pick(&CONJUNCTIONS);
            self.clause();
        }
        self.mark_last(PunctLabel::Period);
    }
}

/// One sequence of several sentences on `topic`.
pub fn generate_sequence<R: Rng>(
    spec: &SyntheticGrammarSpec,
    lex: &Lexicon,
    topic: usize,
    rng: &mut R,
) -> WordSequence {
    let n = rng.gen_range(spec.min_sentences..=spec.max_sentences);
    let mut w = Writer { spec, lex, topic, rng, out: Vec::new() };
    for _ in 0..n {
        w.sentence();
    }
    w.out
}

/// All splits of a synthetic corpus, as surface words.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<WordSequence>,
    pub dev: Vec<WordSequence>,
    pub test: Vec<WordSequence>,
    pub test_clean: Vec<WordSequence>,
    pub pool: Vec<WordSequence>,
    pub general: Vec<WordSequence>,
    pub vocab: Vocab,
}

fn to_ids(seq: &WordSequence, vocab: &Vocab) -> LabeledSequence {
    prrl_core::text::io::words_to_sequence(seq, vocab)
}

fn to_words(seq: &LabeledSequence, vocab: &Vocab) -> WordSequence {
    seq.word_ids.iter().zip(&seq.labels).map(|(&id, &l)| (vocab.token(id).unwrap_or("<unk>").to_string(), l)).collect()
}

/// Generates every split. Train is on topic 0; dev, test and the seed pool
/// are on topic 1; the general corpus mixes all topics. Dev and test are
/// noised; `test_clean` is the same kind of text as test without noise.
/// Splits never share a sequence. The vocabulary covers train, pool and the
/// general corpus.
pub fn synthesize(spec: &SyntheticGrammarSpec, seed: u64) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let lex = Lexicon::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen: HashSet<WordSequence> = HashSet::new();
    let mut split = |n: usize, topic: usize, rng: &mut ChaCha8Rng| {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let s = generate_sequence(spec, &lex, topic, rng);
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        out
    };
    let train = split(spec.train_sequences, 0, &mut rng);
    let pool = split(spec.pool_sequences, 1, &mut rng);
    let dev_clean = split(spec.dev_sequences, 1, &mut rng);
    let test_raw = split(spec.test_sequences, 1, &mut rng);
    let test_clean = split(spec.test_sequences, 1, &mut rng);
    let mut general = Vec::with_capacity(spec.general_sequences);
    for _ in 0..spec.general_sequences {
        let topic = rng.gen_range(0..spec.topics);
        general.extend(split(1, topic, &mut rng));
    }

    let words = train.iter().chain(&pool).chain(&general).flat_map(|s| s.iter().map(|(w, _)| w.as_str()));
    let vocab = Vocab::build(words, spec.vocab_min_freq, spec.vocab_max_size);
    let noise = Augmenter::new(spec.noise, vocab.len())?;
    let mut noisy = |seqs: &[WordSequence]| -> Vec<WordSequence> {
        seqs.iter().map(|s| to_words(&noise.apply(&to_ids(s, &vocab), &mut rng), &vocab)).collect()
    };
    let dev = noisy(&dev_clean);
    let test = noisy(&test_raw);
    Ok(SyntheticCorpus { train, dev, test, test_clean, pool, general, vocab })
}

pub const SPLIT_FILES: [&str; 6] = ["train.tsv", "dev.tsv", "test.tsv", "test_clean.tsv", "pool.tsv", "general.tsv"];

impl SyntheticCorpus {
    /// Writes the six split files, `vocab.tsv` and the resolved spec.
    pub fn write(&self, dir: &Path, spec: &SyntheticGrammarSpec) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let splits = [&self.train, &self.dev, &self.test, &self.test_clean, &self.pool, &self.general];
        for (name, seqs) in SPLIT_FILES.iter().zip(splits) {
            let ids: Vec<LabeledSequence> = seqs.iter().map(|s| to_ids(s, &self.vocab)).collect();
            save_dataset(&dir.join(name), &ids, &self.vocab)?;
        }
        save_vocab(&dir.join("vocab.tsv"), &self.vocab)?;
        std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)? + "\n")?;
        Ok(())
    }
}
