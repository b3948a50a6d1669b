//! Directory-level stages shared by the command-line tool and the
//! end-to-end tests: preprocess a corpus, featurize it, train, decode and
//! score.
//!
//! Directory layouts:
//!
//! ```text
//! corpus/        manifest.jsonl  split.json  [phonemes.txt]  emg files
//! preprocessed/  manifest.jsonl  split.json  phonemes.txt    segments/<id>.emgs
//! features/      index.jsonl     phonemes.txt  feats/<id>.emgs  [basis_q.emgs basis_lambda.emgs]
//! model/         model.ckpt      train_log.csv
//! decoded/       hypotheses.tsv  references.tsv
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctc::{beam_decode, Fusion};
use crate::error::{Error, Result};
use crate::exec::parallel_map;
use crate::features::{featurize_corpus, FeatureConfig, FeatureIndexEntry, FeatureStore, FeaturizeReport};
use crate::io::{
    load_manifest, load_recording, read_tensor, save_manifest, write_bytes, write_tensor, DatasetSplit, Lexicon,
    PhonemeInventory, SentenceRecord, SplitPart,
};
use crate::lm::{hlg_decode, load_arpa, DecodingGraph, GraphWeights, LexiconTrie, SymbolLm};
use crate::metrics::{corpus_rates, tokenize, CorpusRate, Unit};
use crate::neural::{input_statistics, train, AcousticModel, Checkpoint, Example, ModelShape, TrainConfig, TrainReport};
use crate::preprocess::{preprocess_sentence, BandpassSpec, EmgSegment};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const INVENTORY_FILE: &str = "phonemes.txt";
pub const SEGMENT_DIR: &str = "segments";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const FEATURE_CONFIG_FILE: &str = "feature_config.json";
pub const HYPOTHESES_FILE: &str = "hypotheses.tsv";
pub const REFERENCES_FILE: &str = "references.tsv";

/// The inventory stored in `dir`, or the built-in 40-symbol set.
pub fn load_inventory(dir: &Path) -> Result<PhonemeInventory> {
    let path = dir.join(INVENTORY_FILE);
    if path.exists() {
        PhonemeInventory::load(&path)
    } else {
        Ok(PhonemeInventory::default())
    }
}

pub fn save_inventory(dir: &Path, inventory: &PhonemeInventory) -> Result<()> {
    let text: String = inventory.symbols().iter().map(|s| format!("{s}\n")).collect();
    write_bytes(&dir.join(INVENTORY_FILE), text.as_bytes())
}

/// Preprocesses every sentence of the corpus in `corpus` into `out`.
/// Output records point at their segment files and span the whole segment.
pub fn preprocess_corpus(corpus: &Path, out: &Path, spec: &BandpassSpec, jobs: usize) -> Result<Vec<SentenceRecord>> {
    let inventory = load_inventory(corpus)?;
    let records = load_manifest(&corpus.join(MANIFEST_FILE), &inventory)?;
    let split = DatasetSplit::load(&corpus.join(SPLIT_FILE))?;
    let segments = parallel_map(jobs, &records, |r| -> Result<EmgSegment> {
        let mut rec = load_recording(&r.resolve_emg_path(corpus))?;
        if let Some(c) = r.reference_channel {
            rec = rec.with_reference(c)?;
        }
        r.check_bounds(&rec)?;
        preprocess_sentence(&rec, r.start_sample, r.end_sample, spec)
    })?;
    let mut out_records = Vec::with_capacity(records.len());
    for (r, seg) in records.iter().zip(segments) {
        let seg = seg.map_err(|e| Error::Data(format!("{}: {e}", r.id)))?;
        let path = PathBuf::from(SEGMENT_DIR).join(format!("{}.emgs", r.id));
        write_tensor(&out.join(&path), &seg.to_tensor())?;
        out_records.push(SentenceRecord {
            emg_path: path,
            start_sample: 0,
            end_sample: seg.samples,
            reference_channel: None,
            ..r.clone()
        });
    }
    save_manifest(&out.join(MANIFEST_FILE), &out_records)?;
    split.save(&out.join(SPLIT_FILE))?;
    save_inventory(out, &inventory)?;
    Ok(out_records)
}

/// Reads a preprocessed segment written by [`preprocess_corpus`].
pub fn load_segment(dir: &Path, record: &SentenceRecord) -> Result<EmgSegment> {
    let seg = EmgSegment::from_tensor(&read_tensor(&record.resolve_emg_path(dir))?);
    if record.start_sample != 0 || seg.samples != record.end_sample {
        return Err(Error::Data(format!(
            "{}: segment has {} samples, manifest spans [{}, {})",
            record.id, seg.samples, record.start_sample, record.end_sample
        )));
    }
    Ok(seg)
}

/// Featurizes a preprocessed directory into a feature store.
pub fn featurize_dir(preprocessed: &Path, out: &Path, cfg: &FeatureConfig, jobs: usize) -> Result<FeaturizeReport> {
    let inventory = load_inventory(preprocessed)?;
    let records = load_manifest(&preprocessed.join(MANIFEST_FILE), &inventory)?;
    let split = DatasetSplit::load(&preprocessed.join(SPLIT_FILE))?;
    let report = featurize_corpus(&records, &split, |r| load_segment(preprocessed, r), cfg, out, jobs)?;
    save_inventory(out, &inventory)?;
    let json = serde_json::to_string_pretty(cfg).map_err(|e| Error::Format(e.to_string()))?;
    write_bytes(&out.join(FEATURE_CONFIG_FILE), format!("{json}\n").as_bytes())?;
    Ok(report)
}

/// The feature settings recorded in a store, when present.
pub fn load_feature_config(store_dir: &Path) -> Result<Option<FeatureConfig>> {
    let path = store_dir.join(FEATURE_CONFIG_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Checks that a checkpoint was trained on features like the ones in `store`.
pub fn check_compatible(ckpt: &Checkpoint, store: &FeatureStore) -> Result<()> {
    let input_dim = ckpt.model.shape().input_dim;
    if let Some(e) = store.entries.iter().find(|e| e.frame_dim != input_dim) {
        return Err(Error::Data(format!(
            "{}: frame dim {} but the model expects {input_dim}",
            e.id, e.frame_dim
        )));
    }
    let stored = load_feature_config(&store.dir)?;
    if let (Some(a), Some(b)) = (&ckpt.meta.feature, &stored) {
        if a != b {
            return Err(Error::Data(format!(
                "model was trained on {a:?} features, store holds {b:?}"
            )));
        }
    }
    if let Some(basis) = &ckpt.model.basis {
        if &store.basis()? != basis {
            return Err(Error::Data("feature store eigenbasis differs from the model's".into()));
        }
    }
    Ok(())
}

/// Labelled examples of one split part, in index order.
pub fn load_examples(store: &FeatureStore, inventory: &PhonemeInventory, part: SplitPart) -> Result<Vec<Example>> {
    store
        .part(part)
        .map(|e| {
            Ok(Example {
                id: e.id.clone(),
                features: store.load(e)?,
                labels: inventory.encode(&e.phonemes, 0)?,
            })
        })
        .collect()
}

/// Trains a model on the train/validation parts of a feature store.
pub fn train_store(
    store_dir: &Path,
    layers: usize,
    hidden: usize,
    cfg: &TrainConfig,
    jobs: usize,
    on_epoch: impl FnMut(&crate::neural::EpochLog),
) -> Result<(Checkpoint, TrainReport)> {
    let store = FeatureStore::open(store_dir)?;
    let inventory = load_inventory(store_dir)?;
    let tr = load_examples(&store, &inventory, SplitPart::Train)?;
    let va = load_examples(&store, &inventory, SplitPart::Validation)?;
    let first = tr.first().ok_or_else(|| Error::Data("feature store has no training sentences".into()))?;
    let shape = ModelShape {
        layers,
        hidden,
        input_dim: first.features.frame_dim,
        output_dim: inventory.num_classes(),
    };
    let mut model = AcousticModel::new(shape, cfg.seed)?;
    let (mean, std) = input_statistics(&tr, shape.input_dim)?;
    model.input_mean = mean;
    model.input_std = std;
    if first.features.kind == crate::features::FeatureKind::Spd {
        model.basis = Some(store.basis()?);
    }
    let report = train(&mut model, &tr, &va, cfg, jobs, on_epoch)?;
    let mut ckpt = Checkpoint::new(model, inventory.symbols().to_vec());
    ckpt.meta.train = Some(*cfg);
    ckpt.meta.feature = load_feature_config(store_dir)?;
    ckpt.meta.best_epoch = Some(report.best_epoch);
    ckpt.meta.best_val_loss = Some(report.best_val_loss);
    Ok((ckpt, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    /// Phoneme strings from CTC prefix beam search.
    Per,
    /// Word strings from the lexicon/grammar search.
    Wer,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per" => Ok(DecodeMode::Per),
            "wer" => Ok(DecodeMode::Wer),
            _ => Err(Error::Parameter(format!("unknown decode mode {s:?} (per|wer)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    pub beam_width: usize,
    pub lexicon: Option<PathBuf>,
    pub lm: Option<PathBuf>,
    pub lm_weight: f64,
    pub word_insertion_penalty: f64,
    pub silence: Option<String>,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            mode: DecodeMode::Per,
            beam_width: 16,
            lexicon: None,
            lm: None,
            lm_weight: 1.0,
            word_insertion_penalty: 0.0,
            silence: None,
        }
    }
}

/// One decoded sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub id: String,
    pub hypothesis: String,
    pub reference: String,
}

/// Decodes one split part of a feature store with a trained model.
pub fn decode_store(
    ckpt: &Checkpoint,
    store: &FeatureStore,
    part: SplitPart,
    opts: &DecodeOptions,
    jobs: usize,
) -> Result<Vec<Decoded>> {
    let inventory = PhonemeInventory::new(ckpt.meta.inventory.clone())?;
    let model = &ckpt.model;
    if model.shape().output_dim != inventory.num_classes() {
        return Err(Error::Format(format!(
            "model has {} outputs but its inventory needs {}",
            model.shape().output_dim,
            inventory.num_classes()
        )));
    }
    let graph = match opts.mode {
        DecodeMode::Per => None,
        DecodeMode::Wer => {
            let path = opts
                .lexicon
                .as_ref()
                .ok_or_else(|| Error::Parameter("word decoding needs a lexicon".into()))?;
            let lexicon = Lexicon::load(path, &inventory)?;
            let trie = LexiconTrie::new(&lexicon, inventory.len())?;
            let lm = opts.lm.as_deref().map(load_arpa).transpose()?;
            let silence = match &opts.silence {
                Some(s) => Some(
                    inventory
                        .id(s)
                        .ok_or_else(|| Error::Parameter(format!("silence symbol {s:?} is not in the inventory")))?,
                ),
                None => None,
            };
            let weights = GraphWeights {
                lm_weight: opts.lm_weight,
                word_insertion_penalty: opts.word_insertion_penalty,
                silence,
            };
            Some(DecodingGraph::new(trie, lm, weights)?)
        }
    };
    // in per mode an ARPA model over phoneme symbols is fused into the beam search
    let phoneme_lm = match (&graph, &opts.lm) {
        (None, Some(path)) => Some(load_arpa(path)?),
        _ => None,
    };
    let symbol_lm = phoneme_lm.as_ref().map(|model| SymbolLm {
        model,
        symbols: inventory.symbols(),
    });
    let entries: Vec<&FeatureIndexEntry> = store.part(part).collect();
    let out = parallel_map(jobs, &entries, |e| -> Result<Decoded> {
        let feats = store.load(e)?;
        let lattice = model.lattice(&feats)?;
        let fusion = symbol_lm.as_ref().map(|lm| Fusion {
            lm,
            weight: opts.lm_weight,
        });
        let (hypothesis, reference) = match &graph {
            None => {
                let hyps = beam_decode(&lattice, opts.beam_width, fusion.as_ref())?;
                let best = hyps.first().map(|h| inventory.decode(&h.labels)).unwrap_or_default();
                (best.join(" "), e.phonemes.join(" "))
            }
            Some(g) => {
                let res = hlg_decode(&lattice, g, opts.beam_width)?;
                let best = res.best().map(|h| h.text()).unwrap_or_default();
                (best, e.transcript.split_whitespace().collect::<Vec<_>>().join(" "))
            }
        };
        Ok(Decoded {
            id: e.id.clone(),
            hypothesis,
            reference,
        })
    })?;
    out.into_iter().collect()
}

/// Writes `id<TAB>text` lines.
pub fn write_tsv(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    for (id, t) in rows {
        if id.contains(['\t', '\n']) || t.contains(['\t', '\n']) {
            return Err(Error::Data(format!("{id}: tab or newline in a TSV field")));
        }
        text.push_str(id);
        text.push('\t');
        text.push_str(t);
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

/// Reads `id<TAB>text` lines; a line without a tab is an id with empty text.
pub fn read_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, t) = line.split_once('\t').unwrap_or((line, ""));
        rows.push((id.to_string(), t.to_string()));
    }
    Ok(rows)
}

pub fn write_decoded(dir: &Path, decoded: &[Decoded]) -> Result<()> {
    let hyps: Vec<(String, String)> = decoded.iter().map(|d| (d.id.clone(), d.hypothesis.clone())).collect();
    let refs: Vec<(String, String)> = decoded.iter().map(|d| (d.id.clone(), d.reference.clone())).collect();
    write_tsv(&dir.join(HYPOTHESES_FILE), &hyps)?;
    write_tsv(&dir.join(REFERENCES_FILE), &refs)
}

/// Error-rate report of an evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub unit: Unit,
    pub rate: f64,
    pub errors: usize,
    pub reference_length: usize,
    pub sentences: usize,
}

/// Scores hypotheses against references, matched by id. Count or id
/// mismatches are data errors.
pub fn evaluate(references: &[(String, String)], hypotheses: &[(String, String)], unit: Unit) -> Result<EvalReport> {
    if references.len() != hypotheses.len() {
        return Err(Error::Data(format!(
            "{} references but {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    let mut hyp_by_id = std::collections::HashMap::new();
    for (id, t) in hypotheses {
        if hyp_by_id.insert(id.as_str(), t.as_str()).is_some() {
            return Err(Error::Data(format!("duplicate hypothesis id {id:?}")));
        }
    }
    let mut refs = Vec::new();
    let mut hyps = Vec::new();
    for (id, t) in references {
        let h = hyp_by_id
            .get(id.as_str())
            .ok_or_else(|| Error::Data(format!("no hypothesis for {id:?}")))?;
        refs.push(tokenize(t, unit));
        hyps.push(tokenize(h, unit));
    }
    let CorpusRate {
        rate,
        errors,
        reference_length,
        sentences,
        ..
    } = corpus_rates(&refs, &hyps, true)?;
    Ok(EvalReport {
        unit,
        rate,
        errors,
        reference_length,
        sentences,
    })
}
