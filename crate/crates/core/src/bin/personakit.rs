//! Command-line front end for the corpus pipeline, toy model and metrics.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use personakit::ablation::{run_seed, trend_holds, AblationConfig};
use personakit::eval::EvalReport;
use personakit::pipeline::{self, PipelineConfig};
use personakit::{ConfigError, Result};

#[derive(Parser)]
#[command(name = "personakit", version, about = "Persona dialogue corpus tools")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Configuration override as dotted.key=value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InOut {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Thread a JSONL comment dump into dialogue sessions.
    Ingest(InOut),
    /// Summarize every utterance into a persona triple.
    Extract(InOut),
    /// Apply the quality rules to extracted summaries.
    Filter {
        #[command(flatten)]
        io: InOut,
        /// Write rejected summaries with their reasons.
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Build per-speaker profiles and training examples.
    Build(InOut),
    /// Add unrelated personas and merge with the raw examples.
    Augment(InOut),
    /// Encode examples into model input channels.
    Encode {
        #[command(flatten)]
        io: InOut,
        /// Existing vocabulary; built from the input when absent.
        #[arg(long)]
        vocab_in: Option<PathBuf>,
        /// Where to write the vocabulary.
        #[arg(long)]
        vocab_out: Option<PathBuf>,
    },
    /// Train the toy model on encoded examples.
    Train {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        vocab: PathBuf,
        /// Per-step loss and learning rate as JSONL.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Decode a response for every example.
    Generate {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Score responses for diversity and persona consistency.
    Eval {
        /// Examples whose profiles the responses are judged against.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Model checkpoint for perplexity; needs --encoded.
        #[arg(long, requires = "encoded")]
        model: Option<PathBuf>,
        #[arg(long, requires = "model")]
        encoded: Option<PathBuf>,
    },
    /// Print corpus statistics of a filtered-session file.
    Stats {
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate a synthetic dataset or comment dump.
    Synth {
        #[arg(long)]
        output: PathBuf,
        /// Where to write the world description.
        #[arg(long)]
        world: PathBuf,
        /// Emit a raw comment dump instead of examples.
        #[arg(long)]
        comments: bool,
    },
    /// Run the persona ablation on the synthetic world.
    Ablate {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        /// Ablation settings as TOML; defaults when absent.
        #[arg(long)]
        ablation_config: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    PipelineConfig::load(cli.config.as_deref(), &overrides)
}

fn print_report(r: &EvalReport) {
    println!("{}", EvalReport::TABLE_HEADER);
    println!("{}", r.table_row());
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Ingest(io) => {
            let m = pipeline::ingest(&cfg, &io.input, &io.output)?;
            log::info!("ingest: {:?}", m.counters);
        }
        Command::Extract(io) => {
            pipeline::extract(&cfg, &io.input, &io.output)?;
        }
        Command::Filter { io, audit } => {
            pipeline::filter(&cfg, &io.input, &io.output, audit.as_deref())?;
        }
        Command::Build(io) => {
            let (_, stats) = pipeline::build(&cfg, &io.input, &io.output)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Augment(io) => {
            pipeline::augment(&cfg, &io.input, &io.output)?;
        }
        Command::Encode { io, vocab_in, vocab_out } => {
            pipeline::encode(&cfg, &io.input, &io.output, vocab_in.as_deref(), vocab_out.as_deref())?;
        }
        Command::Train { io, vocab, trace } => {
            let m = pipeline::train_model(&cfg, &io.input, vocab, &io.output, trace.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&m.counters)?);
        }
        Command::Generate { io, model, vocab } => {
            pipeline::generate(&cfg, model, vocab, &io.input, &io.output)?;
        }
        Command::Eval {
            dataset,
            responses,
            output,
            model,
            encoded,
        } => {
            let ppl = model.as_deref().zip(encoded.as_deref());
            let (_, report) = pipeline::eval(&cfg, dataset, responses, ppl, output)?;
            print_report(&report);
        }
        Command::Stats { input } => {
            let stats = pipeline::stats(input)?;
            println!("{}", serde_json::to_string_pretty(&stats)?);
        }
        Command::Synth { output, world, comments } => {
            pipeline::synth(&cfg, output, world, *comments)?;
        }
        Command::Ablate { seeds, ablation_config } => {
            let ab: AblationConfig = match ablation_config {
                Some(p) => {
                    let text = std::fs::read_to_string(p)?;
                    toml::from_str(&text).map_err(|e| ConfigError::new(format!("{}: {e}", p.display())))?
                }
                None => AblationConfig::default(),
            };
            let mut holds = 0;
            for seed in 0..*seeds {
                let rs = run_seed(&ab, seed)?;
                println!("seed {seed}");
                println!("variant     | {}", EvalReport::TABLE_HEADER);
                for r in &rs {
                    println!("{:<11} | {}", r.variant.name(), r.report.table_row());
                }
                let ok = trend_holds(&rs);
                holds += usize::from(ok);
                println!("trend {}", if ok { "holds" } else { "does not hold" });
            }
            println!("trend held in {holds} of {seeds} seeds");
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
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
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(2))
        }
    }
}

