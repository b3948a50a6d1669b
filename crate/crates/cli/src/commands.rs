use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use log::{info, warn};

use emgspeech::config::{RunConfig, RUN_CONFIG_FILE};
use emgspeech::features::{FeatureConfig, FeatureKind, FeatureStore};
use emgspeech::io::SplitPart;
use emgspeech::metrics::{fit_scaling as fit_power_law, Unit};
use emgspeech::neural::{load_checkpoint, save_checkpoint, write_training_log, TrainConfig};
use emgspeech::pipeline::{self, DecodeMode, DecodeOptions};
use emgspeech::preprocess::{BandpassSpec, WindowSpec};
use emgspeech::testkit::{generate_corpus, SyntheticSpec};

use crate::settings::{usage, Flags, Settings};
use crate::Globals;

fn save_run_config(dir: &Path, rc: &RunConfig) -> Result<()> {
    rc.save(&dir.join(RUN_CONFIG_FILE))?;
    Ok(())
}

fn parse_split(s: &str) -> Result<SplitPart> {
    match s {
        "train" => Ok(SplitPart::Train),
        "validation" => Ok(SplitPart::Validation),
        "test" => Ok(SplitPart::Test),
        _ => Err(usage(format!("unknown split {s:?} (train|validation|test)"))),
    }
}

fn parse_unit(s: &str) -> Result<Unit> {
    match s {
        "phoneme" => Ok(Unit::Phoneme),
        "word" => Ok(Unit::Word),
        "char" => Ok(Unit::Char),
        _ => Err(usage(format!("unknown unit {s:?} (phoneme|word|char)"))),
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: Option<String>,
    /// JSON generator spec; unset fields take their defaults.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_classes: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

pub fn synth(g: &Globals, a: SynthArgs) -> Result<()> {
    let flags = Flags::default()
        .set("out", &a.out)
        .set("spec", &a.spec)
        .set("seed", &a.seed)
        .set("n_classes", &a.n_classes)
        .set("n_train", &a.n_train)
        .set("n_val", &a.n_val)
        .set("n_test", &a.n_test)
        .take();
    let mut s = Settings::new(
        "synth",
        &["out", "spec", "seed", "n_classes", "n_train", "n_val", "n_test"],
        g,
        flags,
    )?;
    let out: String = s.required("out")?;
    let mut spec = match s.opt::<String>("spec")? {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {p}"))?;
            SyntheticSpec::from_json(&text)?
        }
        None => SyntheticSpec::default(),
    };
    spec.seed = s.get("seed", spec.seed)?;
    spec.n_classes = s.get("n_classes", spec.n_classes)?;
    spec.n_train = s.get("n_train", spec.n_train)?;
    spec.n_val = s.get("n_val", spec.n_val)?;
    spec.n_test = s.get("n_test", spec.n_test)?;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let out = PathBuf::from(out);
    generate_corpus(&spec, &out)?;
    save_run_config(&out, &s.finish())?;
    info!("wrote {} synthetic sentences to {}", spec.n_sentences(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Corpus directory with manifest.jsonl and split.json.
    #[arg(long)]
    corpus: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    low_hz: Option<f64>,
    #[arg(long)]
    high_hz: Option<f64>,
    #[arg(long)]
    order: Option<usize>,
    /// Forward-backward filtering instead of causal filtering.
    #[arg(long)]
    zero_phase: bool,
}

pub fn preprocess(g: &Globals, a: PreprocessArgs) -> Result<()> {
    let flags = Flags::default()
        .set("corpus", &a.corpus)
        .set("out", &a.out)
        .set("low_hz", &a.low_hz)
        .set("high_hz", &a.high_hz)
        .set("order", &a.order)
        .switch("zero_phase", a.zero_phase)
        .take();
    let mut s = Settings::new(
        "preprocess",
        &["corpus", "out", "low_hz", "high_hz", "order", "zero_phase"],
        g,
        flags,
    )?;
    let corpus: String = s.required("corpus")?;
    let out: String = s.required("out")?;
    let d = BandpassSpec::default();
    let spec = BandpassSpec {
        low_hz: s.get("low_hz", d.low_hz)?,
        high_hz: s.get("high_hz", d.high_hz)?,
        order: s.get("order", d.order)?,
        zero_phase: s.get("zero_phase", d.zero_phase)?,
    };
    let out = PathBuf::from(out);
    let records = pipeline::preprocess_corpus(Path::new(&corpus), &out, &spec, g.jobs)?;
    save_run_config(&out, &s.finish())?;
    info!("preprocessed {} sentences into {}", records.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    /// Preprocessed directory.
    #[arg(long)]
    input: Option<String>,
    /// Feature store directory.
    #[arg(long)]
    out: Option<String>,
    /// spd or spectrogram.
    #[arg(long)]
    kind: Option<String>,
    /// Shrinkage toward the scaled identity.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    window_ms: Option<f64>,
    #[arg(long)]
    hop_ms: Option<f64>,
    /// Keep only the diagonal of each SPD frame.
    #[arg(long)]
    diag_only: bool,
}

pub fn featurize(g: &Globals, a: FeaturizeArgs) -> Result<()> {
    let flags = Flags::default()
        .set("input", &a.input)
        .set("out", &a.out)
        .set("kind", &a.kind)
        .set("eta", &a.eta)
        .set("window_ms", &a.window_ms)
        .set("hop_ms", &a.hop_ms)
        .switch("diag_only", a.diag_only)
        .take();
    let mut s = Settings::new(
        "featurize",
        &["input", "out", "kind", "eta", "window_ms", "hop_ms", "diag_only"],
        g,
        flags,
    )?;
    let input: String = s.required("input")?;
    let out: String = s.required("out")?;
    let d = FeatureConfig::default();
    let kind: String = s.get("kind", d.kind.as_str().to_string())?;
    let cfg = FeatureConfig {
        kind: kind.parse::<FeatureKind>().map_err(|e| usage(e.to_string()))?,
        eta: s.get("eta", d.eta)?,
        window: WindowSpec {
            window_ms: s.get("window_ms", d.window.window_ms)?,
            hop_ms: s.get("hop_ms", d.window.hop_ms)?,
        },
        diag_only: s.get("diag_only", d.diag_only)?,
    };
    let out = PathBuf::from(out);
    let report = pipeline::featurize_dir(Path::new(&input), &out, &cfg, g.jobs)?;
    save_run_config(&out, &s.finish())?;
    if !report.skipped.is_empty() {
        warn!("{} sentences shorter than one window were skipped", report.skipped.len());
    }
    info!("featurized {} sentences into {}", report.entries.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Feature store directory.
    #[arg(long)]
    features: Option<String>,
    /// Output directory for model.ckpt and train_log.csv.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    layers: Option<usize>,
    /// Hidden width per direction.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

pub fn train(g: &Globals, a: TrainArgs) -> Result<()> {
    let flags = Flags::default()
        .set("features", &a.features)
        .set("out", &a.out)
        .set("layers", &a.layers)
        .set("hidden", &a.hidden)
        .set("epochs", &a.epochs)
        .set("learning_rate", &a.learning_rate)
        .set("weight_decay", &a.weight_decay)
        .set("batch_size", &a.batch_size)
        .set("seed", &a.seed)
        .take();
    let mut s = Settings::new(
        "train",
        &[
            "features",
            "out",
            "layers",
            "hidden",
            "epochs",
            "learning_rate",
            "weight_decay",
            "batch_size",
            "seed",
        ],
        g,
        flags,
    )?;
    let features: String = s.required("features")?;
    let out: String = s.required("out")?;
    let layers = s.get("layers", 3usize)?;
    let hidden = s.get("hidden", 256usize)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: s.get("epochs", d.epochs)?,
        learning_rate: s.get("learning_rate", d.learning_rate)?,
        weight_decay: s.get("weight_decay", d.weight_decay)?,
        batch_size: s.get("batch_size", d.batch_size)?,
        seed: s.get("seed", d.seed)?,
    };
    let rc = s.finish();
    let (mut ckpt, report) = pipeline::train_store(Path::new(&features), layers, hidden, &cfg, g.jobs, |_| {})?;
    ckpt.meta.run_config = rc.entries().clone();
    let out = PathBuf::from(out);
    save_checkpoint(&out.join(pipeline::CHECKPOINT_FILE), &ckpt)?;
    write_training_log(&out.join(pipeline::TRAIN_LOG_FILE), &report.log)?;
    save_run_config(&out, &rc)?;
    if !report.skipped.is_empty() {
        warn!("{} sentences could not be aligned and were skipped", report.skipped.len());
    }
    info!(
        "{} parameters; best validation loss {:.4} at epoch {}",
        ckpt.model.param_count(),
        report.best_val_loss,
        report.best_epoch
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Trained checkpoint.
    #[arg(long)]
    model: Option<String>,
    /// Feature store directory.
    #[arg(long)]
    features: Option<String>,
    /// Output directory for hypotheses.tsv and references.tsv.
    #[arg(long)]
    out: Option<String>,
    /// train, validation or test.
    #[arg(long)]
    split: Option<String>,
    /// per (phoneme strings) or wer (word strings).
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Pronunciation lexicon (wer mode).
    #[arg(long)]
    lexicon: Option<String>,
    /// ARPA word n-gram model (wer mode).
    #[arg(long)]
    lm: Option<String>,
    #[arg(long)]
    lm_weight: Option<f64>,
    #[arg(long)]
    word_insertion_penalty: Option<f64>,
    /// Phoneme allowed between words without producing output.
    #[arg(long)]
    silence: Option<String>,
}

pub fn decode(g: &Globals, a: DecodeArgs) -> Result<()> {
    let flags = Flags::default()
        .set("model", &a.model)
        .set("features", &a.features)
        .set("out", &a.out)
        .set("split", &a.split)
        .set("mode", &a.mode)
        .set("beam_width", &a.beam_width)
        .set("lexicon", &a.lexicon)
        .set("lm", &a.lm)
        .set("lm_weight", &a.lm_weight)
        .set("word_insertion_penalty", &a.word_insertion_penalty)
        .set("silence", &a.silence)
        .take();
    let mut s = Settings::new(
        "decode",
        &[
            "model",
            "features",
            "out",
            "split",
            "mode",
            "beam_width",
            "lexicon",
            "lm",
            "lm_weight",
            "word_insertion_penalty",
            "silence",
        ],
        g,
        flags,
    )?;
    let model: String = s.required("model")?;
    let features: String = s.required("features")?;
    let out: String = s.required("out")?;
    let split = parse_split(&s.get("split", "test".to_string())?)?;
    let mode: String = s.get("mode", "per".to_string())?;
    let d = DecodeOptions::default();
    let opts = DecodeOptions {
        mode: mode.parse::<DecodeMode>().map_err(|e| usage(e.to_string()))?,
        beam_width: s.get("beam_width", d.beam_width)?,
        lexicon: s.opt::<String>("lexicon")?.map(PathBuf::from),
        lm: s.opt::<String>("lm")?.map(PathBuf::from),
        lm_weight: s.get("lm_weight", d.lm_weight)?,
        word_insertion_penalty: s.get("word_insertion_penalty", d.word_insertion_penalty)?,
        silence: s.opt("silence")?,
    };
    if opts.mode == DecodeMode::Wer && opts.lexicon.is_none() {
        return Err(usage("word decoding needs --lexicon"));
    }
    let ckpt = load_checkpoint(Path::new(&model))?;
    let store = FeatureStore::open(Path::new(&features))?;
    pipeline::check_compatible(&ckpt, &store)?;
    let decoded = pipeline::decode_store(&ckpt, &store, split, &opts, g.jobs)?;
    let out = PathBuf::from(out);
    pipeline::write_decoded(&out, &decoded)?;
    save_run_config(&out, &s.finish())?;
    info!("decoded {} sentences into {}", decoded.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Hypotheses, one `id<TAB>text` per line.
    #[arg(long)]
    hyp: Option<String>,
    /// References, one `id<TAB>text` per line.
    #[arg(long = "ref")]
    reference: Option<String>,
    /// phoneme, word or char.
    #[arg(long)]
    unit: Option<String>,
    /// Directory for report.json (the report is always printed).
    #[arg(long)]
    out: Option<String>,
}

pub fn eval(g: &Globals, a: EvalArgs) -> Result<()> {
    let flags = Flags::default()
        .set("hyp", &a.hyp)
        .set("ref", &a.reference)
        .set("unit", &a.unit)
        .set("out", &a.out)
        .take();
    let mut s = Settings::new("eval", &["hyp", "ref", "unit", "out"], g, flags)?;
    let hyp: String = s.required("hyp")?;
    let reference: String = s.required("ref")?;
    let unit = parse_unit(&s.get("unit", "phoneme".to_string())?)?;
    let out = s.opt::<String>("out")?;
    let report = pipeline::evaluate(
        &pipeline::read_tsv(Path::new(&reference))?,
        &pipeline::read_tsv(Path::new(&hyp))?,
        unit,
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(out) = out {
        let out = PathBuf::from(out);
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("report.json"), format!("{json}\n"))?;
        save_run_config(&out, &s.finish())?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitScalingArgs {
    /// CSV of `N,error` rows (a non-numeric header row is skipped).
    #[arg(long)]
    points: Option<String>,
    /// Directory for fit.json (the fit is always printed).
    #[arg(long)]
    out: Option<String>,
}

fn read_points(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = match fields.as_slice() {
            [n, e] => n.parse::<f64>().ok().zip(e.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(p) => points.push(p),
            None if i == 0 => continue,
            None => {
                return Err(emgspeech::Error::Format(format!("{} line {}: expected N,error", path.display(), i + 1)).into())
            }
        }
    }
    Ok(points)
}

pub fn fit_scaling(g: &Globals, a: FitScalingArgs) -> Result<()> {
    let flags = Flags::default().set("points", &a.points).set("out", &a.out).take();
    let mut s = Settings::new("fit-scaling", &["points", "out"], g, flags)?;
    let points: String = s.required("points")?;
    let out = s.opt::<String>("out")?;
    let points = read_points(Path::new(&points))?;
    let fit = fit_power_law(&points).map_err(|e| emgspeech::Error::Data(e.to_string()))?;
    let json = serde_json::to_string_pretty(&fit)?;
    println!("{json}");
    if let Some(out) = out {
        let out = PathBuf::from(out);
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("fit.json"), format!("{json}\n"))?;
        save_run_config(&out, &s.finish())?;
    }
    Ok(())
}
