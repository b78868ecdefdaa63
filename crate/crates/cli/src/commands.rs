//! Implementations of the `prrl` subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use prrl_core::metrics::{evaluate, Metrics};
use prrl_core::models::checkpoint::{load_file, restore, write_checkpoint};
use prrl_core::models::{CheckpointMeta, Generator, ModelConfig, ModelKind, SequencePolicy, Tagger};
use prrl_core::rl::{pretrain_generator_on, Chunking, Corpus, IterationRecord, Trainer};
use prrl_core::text::io::{load_dataset, load_vocab, save_dataset, save_vocab, words_to_sequence};
use prrl_core::text::{tokenize, AugmentationConfig, Augmenter, LabeledSequence, PunctLabel, Vocab};
use prrl_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::synth::{synthesize, SyntheticGrammarSpec};

/// Writes through a temporary file in the same directory, then renames, so
/// a crash never leaves a half-written file at `path`.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

// Streams 1-4 belong to the trainer.
const TAGGER_INIT_STREAM: u64 = 0;
const GENERATOR_INIT_STREAM: u64 = 5;
const PREPARE_STREAM: u64 = 6;
const LM_PRETRAIN_STREAM: u64 = 7;

// ---------------------------------------------------------------- prepare

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub sequences: usize,
    pub words: usize,
    pub labels: [usize; 4],
}

impl LabelCounts {
    pub fn of(seqs: &[LabeledSequence]) -> Self {
        let mut c = LabelCounts { sequences: seqs.len(), ..Default::default() };
        for s in seqs {
            c.words += s.len();
            for l in &s.labels {
                c.labels[l.index()] += 1;
            }
        }
        c
    }

    pub fn report(&self) -> String {
        let mut s = format!("sequences {}\nwords {}\n", self.sequences, self.words);
        for l in PunctLabel::ALL {
            s.push_str(&format!("{} {}\n", l.as_str(), self.labels[l.index()]));
        }
        s
    }
}

pub struct PrepareArgs<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
    pub vocab: &'a Path,
    pub augment: Option<AugmentationConfig>,
    pub seed: u64,
    pub min_freq: usize,
    pub max_vocab: usize,
}

/// Punctuated text, one sequence per blank-line separated paragraph, to a
/// labeled dataset. An existing vocab file is reused; otherwise one is built
/// from the input and written.
pub fn prepare(args: &PrepareArgs<'_>) -> Result<LabelCounts> {
    let text = std::fs::read_to_string(args.input)?;
    let paragraphs: Vec<Vec<(String, PunctLabel)>> =
        text.split("\n\n").map(tokenize).filter(|t| !t.is_empty()).collect();
    if paragraphs.is_empty() {
        return Err(Error::EmptyInput("input contains no words"));
    }
    let vocab = if args.vocab.exists() {
        load_vocab(args.vocab)?
    } else {
        let words = paragraphs.iter().flat_map(|p| p.iter().map(|(w, _)| w.as_str()));
        let v = Vocab::build(words, args.min_freq, args.max_vocab);
        save_vocab(args.vocab, &v)?;
        v
    };
    let mut seqs: Vec<LabeledSequence> = paragraphs.iter().map(|p| words_to_sequence(p, &vocab)).collect();
    if let Some(cfg) = args.augment.filter(|c| !c.is_identity()) {
        let aug = Augmenter::new(cfg, vocab.len())?;
        let mut rng = rng_for(args.seed, PREPARE_STREAM);
        seqs = seqs.iter().map(|s| aug.apply(s, &mut rng)).collect();
    }
    save_dataset(args.output, &seqs, &vocab)?;
    Ok(LabelCounts::of(&seqs))
}

// ---------------------------------------------------------------- synth

pub fn synth(spec: Option<&Path>, out_dir: &Path, seed: u64) -> Result<LabelCounts> {
    let spec: SyntheticGrammarSpec = match spec {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(|e| Error::Config(e.to_string()))?,
        None => SyntheticGrammarSpec::default(),
    };
    let corpus = synthesize(&spec, seed)?;
    corpus.write(out_dir, &spec)?;
    let train: Vec<LabeledSequence> = corpus.train.iter().map(|s| words_to_sequence(s, &corpus.vocab)).collect();
    Ok(LabelCounts::of(&train))
}

// ---------------------------------------------------------------- train

pub const TELEMETRY_FILE: &str = "telemetry.jsonl";
pub const TAGGER_CKPT: &str = "tagger.ckpt";
pub const GENERATOR_CKPT: &str = "generator.ckpt";
pub const EFFECTIVE_CONFIG: &str = "effective_config.json";
pub const PRETRAIN_FILE: &str = "pretrain.json";
pub const TEST_REPORT: &str = "test_metrics.json";

/// Command-line overrides for the pre-stages.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOverrides {
    pub pretrain_pr: Option<usize>,
    pub pretrain_gen: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct PretrainLosses {
    pub tagger: Vec<f64>,
    pub generator: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub iterations: usize,
    pub records: Vec<IterationRecord>,
    pub test: Option<Metrics>,
}

fn save_tagger(dir: &Path, tagger: &Tagger<f32>, vocab_hash: &str, step: u64) -> Result<()> {
    let meta = CheckpointMeta {
        kind: ModelKind::Tagger,
        config: tagger.config().clone(),
        vocab_hash: vocab_hash.to_string(),
        layout_id: tagger.params().layout_id(),
        step,
    };
    write_atomic(&dir.join(TAGGER_CKPT), |w| write_checkpoint(w, &meta, tagger.params()))
}

fn save_generator(dir: &Path, gen: &Generator<f32>, vocab_hash: &str, step: u64) -> Result<()> {
    let meta = CheckpointMeta {
        kind: ModelKind::Generator,
        config: gen.config().clone(),
        vocab_hash: vocab_hash.to_string(),
        layout_id: gen.params().layout_id(),
        step,
    };
    write_atomic(&dir.join(GENERATOR_CKPT), |w| write_checkpoint(w, &meta, gen.params()))
}

/// Loads a generator checkpoint, checking it against `vocab`.
pub fn load_generator(path: &Path, vocab: &Vocab) -> Result<(Generator<f32>, u64)> {
    let (meta, values) = load_file(path)?;
    let mut gen = Generator::new(meta.config.clone(), &mut rng_for(0, GENERATOR_INIT_STREAM))?;
    restore(&meta, &values, ModelKind::Generator, &vocab.hash(), gen.params_mut())?;
    Ok((gen, meta.step))
}

/// Loads a tagger checkpoint, checking it against `vocab`.
pub fn load_tagger(path: &Path, vocab: &Vocab) -> Result<(Tagger<f32>, u64)> {
    let (meta, values) = load_file(path)?;
    let mut tagger = Tagger::new(meta.config.clone(), &mut rng_for(0, TAGGER_INIT_STREAM))?;
    restore(&meta, &values, ModelKind::Tagger, &vocab.hash(), tagger.params_mut())?;
    Ok((tagger, meta.step))
}

fn same_config(which: &str, found: &ModelConfig, expected: &ModelConfig) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::Config(format!("{which} checkpoint has config {found:?}, run config asks for {expected:?}")))
    }
}

pub fn train(cfg: &RunConfig, overrides: TrainOverrides) -> Result<TrainSummary> {
    let mut cfg = cfg.clone();
    if let Some(e) = overrides.pretrain_pr {
        cfg.pretrain_pr = e;
    }
    if let Some(e) = overrides.pretrain_gen {
        cfg.pretrain_gen = e;
    }
    cfg.validate()?;
    let out = &cfg.paths.output_dir;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join(EFFECTIVE_CONFIG), |w| Ok(w.write_all(cfg.to_json()?.as_bytes())?))?;

    let vocab = load_vocab(&cfg.paths.vocab)?;
    let vocab_hash = vocab.hash();
    let train = load_dataset(&cfg.paths.train, &vocab)?;
    let dev = load_dataset(&cfg.paths.dev, &vocab)?;
    let pool = match (&cfg.paths.seed_pool, cfg.mode.generates()) {
        (Some(p), true) => load_dataset(p, &vocab)?,
        _ => Vec::new(),
    };

    let (tagger, tagger_step) = match &cfg.tagger_init {
        Some(p) => {
            let (t, step) = load_tagger(p, &vocab)?;
            same_config("tagger", t.config(), &cfg.tagger.with_vocab(vocab.len()))?;
            (t, step)
        }
        None => (Tagger::new(cfg.tagger.with_vocab(vocab.len()), &mut rng_for(cfg.seed, TAGGER_INIT_STREAM))?, 0),
    };
    let (generator, gen_step) = if cfg.mode.generates() {
        match &cfg.generator_init {
            Some(p) => {
                let (g, step) = load_generator(p, &vocab)?;
                same_config("generator", g.config(), &cfg.generator.with_vocab(vocab.len()))?;
                (Some(g), step)
            }
            None => {
                let c = cfg.generator.with_vocab(vocab.len());
                (Some(Generator::new(c, &mut rng_for(cfg.seed, GENERATOR_INIT_STREAM))?), 0)
            }
        }
    } else {
        (None, 0)
    };

    let mut pre = PretrainLosses::default();
    let mut generator = generator;
    let mut gen_step = gen_step;
    if let (Some(gen), true) = (generator.as_mut(), cfg.pretrain_gen > 0) {
        let text = match &cfg.paths.lm_corpus {
            Some(p) => load_dataset(p, &vocab)?,
            None => pool.clone(),
        };
        let streams: Vec<Vec<usize>> = text.iter().map(|s| gen.encode(s)).collect();
        pre.generator = pretrain_generator_on(
            gen,
            &streams,
            cfg.pretrain_gen,
            cfg.pretrain_gen_batch,
            cfg.rl.generator_lr,
            cfg.rl.clip_norm,
            &mut rng_for(cfg.seed, LM_PRETRAIN_STREAM),
        )?;
        gen_step += cfg.pretrain_gen as u64;
    }

    let corpus = Corpus { train: &train, dev: &dev, pool: &pool, vocab: &vocab };
    let mut trainer =
        Trainer::new(cfg.mode, tagger, generator, corpus, cfg.rl.clone(), cfg.chunking, cfg.augmentation, cfg.seed)?;
    if cfg.pretrain_pr > 0 {
        pre.tagger = trainer.pretrain_tagger(cfg.pretrain_pr)?;
    }
    if cfg.pretrain_gen > 0 || cfg.pretrain_pr > 0 {
        let json = serde_json::to_string_pretty(&pre)? + "\n";
        write_atomic(&out.join(PRETRAIN_FILE), |w| Ok(w.write_all(json.as_bytes())?))?;
    }

    let iterations = match cfg.epochs {
        Some(e) => e * trainer.epoch_len()?.div_ceil(cfg.rl.train_batch),
        None => cfg.rl.max_iterations,
    };

    let save_all = |t: &Trainer<'_, f32>, done: usize| -> Result<()> {
        save_tagger(out, &t.tagger, &vocab_hash, tagger_step + done as u64)?;
        if let Some(g) = &t.generator {
            let step = if cfg.mode.rewards() { gen_step + done as u64 } else { gen_step };
            save_generator(out, g, &vocab_hash, step)?;
        }
        Ok(())
    };

    let mut telemetry = BufWriter::new(File::create(out.join(TELEMETRY_FILE))?);
    let mut records = Vec::with_capacity(iterations);
    for i in 0..iterations {
        let record = match trainer.step() {
            Ok(r) => r,
            Err(e) => {
                telemetry.flush()?;
                // Keep the last good parameters; the step failed before any
                // optimizer update could apply a non-finite value.
                save_all(&trainer, i)?;
                return Err(e);
            }
        };
        serde_json::to_writer(&mut telemetry, &record)?;
        telemetry.write_all(b"\n")?;
        records.push(record);
        if cfg.checkpoint_interval > 0 && (i + 1) % cfg.checkpoint_interval == 0 && i + 1 < iterations {
            telemetry.flush()?;
            save_all(&trainer, i + 1)?;
        }
    }
    telemetry.flush()?;
    save_all(&trainer, iterations)?;

    let test = match &cfg.paths.test {
        Some(p) => {
            let seqs = load_dataset(p, &vocab)?;
            let m = evaluate(&trainer.tagger, &seqs, cfg.chunking.core_size, cfg.chunking.context)?;
            m.write_json(&out.join(TEST_REPORT))?;
            Some(m)
        }
        None => None,
    };
    Ok(TrainSummary { iterations, records, test })
}

// ---------------------------------------------------------------- eval

pub fn eval(ckpt: &Path, data: &Path, vocab: &Path, report: &Path, chunking: Chunking) -> Result<Metrics> {
    let vocab = load_vocab(vocab)?;
    let (tagger, _) = load_tagger(ckpt, &vocab)?;
    if chunking.window() > tagger.config().max_len {
        return Err(Error::Config(format!(
            "chunk window {} exceeds the checkpoint's max_len {}",
            chunking.window(),
            tagger.config().max_len
        )));
    }
    let seqs = load_dataset(data, &vocab)?;
    let m = evaluate(&tagger, &seqs, chunking.core_size, chunking.context)?;
    m.write_json(report)?;
    Ok(m)
}

pub fn format_metrics(m: &Metrics) -> String {
    let mut s = String::new();
    for l in PunctLabel::MARKS {
        let c = m.class(l).expect("marks have metrics");
        s.push_str(&format!("{:<9} P {:.4} R {:.4} F {:.4}\n", l.as_str(), c.precision, c.recall, c.f1));
    }
    let o = &m.overall;
    s.push_str(&format!("Overall   P {:.4} R {:.4} F {:.4}\n", o.precision, o.recall, o.f1));
    s
}

// ---------------------------------------------------------------- generate

pub struct GenerateArgs<'a> {
    pub gen_ckpt: &'a Path,
    pub vocab: &'a Path,
    pub seed_file: &'a Path,
    pub n: usize,
    pub len: usize,
    pub temperature: f64,
    pub seed: u64,
}

/// Samples `n` continuations, cycling through the seed file's non-empty
/// lines, and renders each with its seed as punctuated text.
pub fn generate(args: &GenerateArgs<'_>) -> Result<Vec<String>> {
    let vocab = load_vocab(args.vocab)?;
    let (gen, _) = load_generator(args.gen_ckpt, &vocab)?;
    let text = std::fs::read_to_string(args.seed_file)?;
    let seeds: Vec<Vec<usize>> = text
        .lines()
        .map(tokenize)
        .filter(|t| !t.is_empty())
        .map(|t| gen.encode(&words_to_sequence(&t, &vocab)))
        .collect();
    if seeds.is_empty() {
        return Err(Error::EmptyInput("seed file has no words"));
    }
    let prompts: Vec<Vec<usize>> = (0..args.n).map(|i| seeds[i % seeds.len()].clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let samples = gen.sample_batch(&prompts, args.len, args.temperature, &mut rng)?;
    Ok(samples.iter().map(|s| gen.render(s, &vocab)).collect())
}

// ---------------------------------------------------------------- errors

/// Process exit status for an error: 1 usage or configuration, 2 data and
/// I/O, 3 numeric failure.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}
