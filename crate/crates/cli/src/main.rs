use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use prrl::commands::{self, GenerateArgs, PrepareArgs, TrainOverrides};
use prrl::RunConfig;
use prrl_core::rl::Chunking;
use prrl_core::text::AugmentationConfig;

#[derive(Parser)]
#[command(name = "prrl", version, about = "Punctuation restoration with reward-driven data generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert punctuated text into a labeled dataset.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Vocabulary file; built from the input when missing.
        #[arg(long)]
        vocab: PathBuf,
        /// Duplication, substitution and deletion rates.
        #[arg(long, num_args = 3, value_names = ["DUP", "SUB", "DEL"])]
        augment: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long, default_value_t = 50_000)]
        max_vocab: usize,
    },
    /// Write a synthetic corpus: train, dev, test, seed pool and a general LM split.
    Synth {
        /// Grammar spec JSON; defaults are used when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a tagger in one of the modes baseline, augment, gpt or rl.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Supervised tagger epochs before the main loop.
        #[arg(long)]
        pretrain_pr: Option<usize>,
        /// Language-model epochs for the generator on `paths.lm_corpus`, or the seed pool.
        #[arg(long)]
        pretrain_gen: Option<usize>,
    },
    /// Score a tagger checkpoint on a labeled dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = Chunking::default().core_size)]
        core_size: usize,
        #[arg(long, default_value_t = Chunking::default().context)]
        context: usize,
    },
    /// Sample punctuated continuations of seed texts.
    Generate {
        #[arg(long)]
        gen_ckpt: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// One seed text per line.
        #[arg(long)]
        seed_file: PathBuf,
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Tokens to generate after each seed.
        #[arg(long, default_value_t = 64)]
        len: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prepare { input, output, vocab, augment, seed, min_freq, max_vocab } => {
            let augment = augment.map(|a| AugmentationConfig { alpha_dup: a[0], alpha_sub: a[1], alpha_del: a[2] });
            if let Some(a) = &augment {
                a.validate()?;
            }
            let counts = commands::prepare(&PrepareArgs {
                input: &input,
                output: &output,
                vocab: &vocab,
                augment,
                seed,
                min_freq,
                max_vocab,
            })?;
            print!("{}", counts.report());
        }
        Command::Synth { spec, out_dir, seed } => {
            let counts = commands::synth(spec.as_deref(), &out_dir, seed)?;
            print!("train {}", counts.report());
        }
        Command::Train { config, pretrain_pr, pretrain_gen } => {
            let cfg = RunConfig::load(&config)?;
            let summary = commands::train(&cfg, TrainOverrides { pretrain_pr, pretrain_gen })?;
            println!("iterations {}", summary.iterations);
            if let Some(m) = summary.test {
                print!("{}", commands::format_metrics(&m));
            }
        }
        Command::Eval { ckpt, data, vocab, report, core_size, context } => {
            let m = commands::eval(&ckpt, &data, &vocab, &report, Chunking { core_size, context })?;
            print!("{}", commands::format_metrics(&m));
        }
        Command::Generate { gen_ckpt, vocab, seed_file, n, len, temperature, seed } => {
            let out = commands::generate(&GenerateArgs {
                gen_ckpt: &gen_ckpt,
                vocab: &vocab,
                seed_file: &seed_file,
                n,
                len,
                temperature,
                seed,
            })?;
            for line in out {
                println!("{line}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(prrl::exit_code(&e) as u8)
        }
    }
}
