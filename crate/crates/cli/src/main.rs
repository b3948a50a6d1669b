//! `emgspeech` command-line tool.
//!
//! Exit status: 0 on success, 1 on usage errors (bad flags, bad config
//! keys or values), 2 on data errors (unreadable or inconsistent inputs).

mod commands;
mod settings;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::UsageError;

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (build ",
    env!("EMGSPEECH_BUILD_HASH"),
    ")\ncontainer formats: EMGS v1, CKPT v1"
);

#[derive(Debug, Parser)]
#[command(name = "emgspeech", version, long_version = LONG_VERSION, about = "Silent-speech EMG to phoneme and word decoding")]
struct Cli {
    /// Flat `key = value` configuration file; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<std::path::PathBuf>,

    /// Worker threads for per-sentence work. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_name = "N")]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with known class covariances.
    Synth(commands::SynthArgs),
    /// Reference subtraction, bandpass, segmentation and z-normalization.
    Preprocess(commands::PreprocessArgs),
    /// Compute SPD or spectrogram features and the eigenbasis.
    Featurize(commands::FeaturizeArgs),
    /// Train the BiGRU acoustic model with CTC loss.
    Train(commands::TrainArgs),
    /// Decode a split into phoneme or word strings.
    Decode(commands::DecodeArgs),
    /// Score hypotheses against references.
    Eval(commands::EvalArgs),
    /// Fit E = alpha / N^beta to (N, error) points.
    FitScaling(commands::FitScalingArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Globals {
    pub config: Option<std::path::PathBuf>,
    pub jobs: usize,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<emgspeech::Error>() {
        Some(e) if !e.is_data_error() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let globals = Globals {
        config: cli.config,
        jobs: cli.jobs.max(1),
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&globals, a),
        Command::Preprocess(a) => commands::preprocess(&globals, a),
        Command::Featurize(a) => commands::featurize(&globals, a),
        Command::Train(a) => commands::train(&globals, a),
        Command::Decode(a) => commands::decode(&globals, a),
        Command::Eval(a) => commands::eval(&globals, a),
        Command::FitScaling(a) => commands::fit_scaling(&globals, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
