use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use isodub::config::RunConfig;
use isodub::harness::{run_ablation, AblationRun, FrameSource};
use isodub::pipeline;

#[derive(Parser)]
#[command(name = "isodub", version, about = "Duration-aware length control for dubbing translation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build corpus.jsonl and vocab.txt from TextGrid pairs or the toy generator.
    Prepare {
        #[arg(long)]
        textgrids: Option<PathBuf>,
        #[arg(long)]
        bpe_merges: Option<usize>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt and train_log.csv.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Decode a corpus or request file under per-sentence frame budgets.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// src_total_frames (source control) or tgt_total_frames (target control).
        #[arg(long)]
        budget_column: Option<String>,
        #[arg(long)]
        beam_size: Option<usize>,
        #[arg(long)]
        hard_stop: bool,
    },
    /// Score hypotheses: BLEU, SLC_0.2, SLC_0.4.
    Evaluate {
        #[arg(long)]
        hypotheses: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// Measure toy-corpus hypotheses with the toy lexicon instead of predicted frames.
        #[arg(long)]
        toy_lexicon: bool,
        #[arg(long)]
        json: bool,
    },
    /// Fit phoneme durations to budgets by scaling vowels and silences.
    Adjust {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write the synthetic train/test corpus.
    GenToy {
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 1000)]
        test_size: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "toy")]
        out: PathBuf,
    },
    /// Evaluate NAME=CHECKPOINT runs on a test corpus; writes TSV and JSON tables.
    Ablate {
        #[arg(long)]
        test: PathBuf,
        #[arg(long = "run", value_name = "NAME=CHECKPOINT", required = true)]
        runs: Vec<String>,
        #[arg(long)]
        toy_lexicon: bool,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Prepare { textgrids, bpe_merges, out } => {
            if let Some(m) = bpe_merges {
                cfg.prepare.bpe_merges = m;
            }
            cfg.validate()?;
            pipeline::cmd_prepare(&cfg, textgrids.as_deref(), &out)?;
        }
        Command::Train { corpus, vocab, steps, seed, out } => {
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
                cfg.model.seed = s;
            }
            cfg.validate()?;
            pipeline::cmd_train(&cfg, &corpus, vocab.as_deref(), &out)?;
        }
        Command::Translate { checkpoint, input, output, budget_column, beam_size, hard_stop } => {
            if let Some(c) = budget_column {
                cfg.translate.budget_column = c;
            }
            if let Some(b) = beam_size {
                cfg.translate.beam_size = b;
            }
            cfg.translate.hard_stop |= hard_stop;
            cfg.validate()?;
            pipeline::cmd_translate(&cfg, &checkpoint, &input, &output)?;
        }
        Command::Evaluate { hypotheses, references, toy_lexicon, json } => {
            let lex = cfg.toy.lexicon();
            let frames = if toy_lexicon { FrameSource::Lexicon(&lex) } else { FrameSource::Predicted };
            let report = pipeline::cmd_evaluate(&hypotheses, &references, frames)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_text());
            }
        }
        Command::Adjust { input, output } => {
            let unmet = pipeline::cmd_adjust(&input, &output)?;
            if unmet > 0 {
                log::warn!("{unmet} sequences could not reach their budget");
            }
        }
        Command::GenToy { size, test_size, seed, out } => {
            if let Some(s) = size {
                cfg.toy.size = s;
            }
            if let Some(s) = seed {
                cfg.toy.seed = s;
            }
            cfg.validate()?;
            pipeline::cmd_gen_toy(&cfg, test_size, &out)?;
        }
        Command::Ablate { test, runs, toy_lexicon, out } => {
            let runs = runs
                .iter()
                .map(|r| match r.split_once('=') {
                    Some((name, path)) => Ok(AblationRun { name: name.to_string(), checkpoint: path.into() }),
                    None => bail!("expected NAME=CHECKPOINT, got `{r}`"),
                })
                .collect::<Result<Vec<_>>>()?;
            let records = isodub::corpus::read_jsonl(&test)?;
            let lex = cfg.toy.lexicon();
            let frames = if toy_lexicon { FrameSource::Lexicon(&lex) } else { FrameSource::Predicted };
            let table = run_ablation(&runs, &records, &cfg.translate.budget_column, &cfg.translate.options(), frames)?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            std::fs::write(out.join("ablation.tsv"), table.to_tsv())?;
            std::fs::write(out.join("ablation.json"), table.to_json()?)?;
            print!("{}", table.to_tsv());
        }
    }
    Ok(())
}
