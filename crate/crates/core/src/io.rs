//! On-disk formats: EMG recordings (and the generic float tensor container
//! they share), sentence manifests, lexicons, phoneme inventories and
//! dataset splits.
//!
//! The binary container is
//!
//! ```text
//! magic   4 bytes   "EMGS"
//! version u16 LE    1
//! rows    u32 LE    channels (recordings) / frames (feature tensors)
//! rate    u32 LE    sample rate in Hz (frame rate for features)
//! cols    u64 LE    samples per channel / values per frame
//! payload rows × cols float32 LE, row-major
//! ```
//!
//! For recordings the payload is channel-major; for feature tensors it is
//! frame-major. Data from other acquisition systems can be brought in by
//! building an [`EmgRecording`] and calling [`save_recording`].

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"EMGS";
pub const TENSOR_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8;

/// A row-major float32 matrix read from (or destined for) the tensor container.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub rate: u32,
    pub data: Vec<f32>,
}

pub fn encode_tensor(t: &Tensor2) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + t.data.len() * 4);
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rows as u32).to_le_bytes());
    out.extend_from_slice(&t.rate.to_le_bytes());
    out.extend_from_slice(&(t.cols as u64).to_le_bytes());
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor2> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let rate = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[14..22].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format(format!("header size {rows}x{cols} overflows")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected * 4 {
        return Err(Error::Truncation {
            expected,
            found: payload.len() / 4,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor2 {
        rows,
        cols,
        rate,
        data,
    })
}

pub fn write_tensor(path: &Path, t: &Tensor2) -> Result<()> {
    write_bytes(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor2> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Multichannel EMG recording, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmgRecording {
    pub channels: usize,
    pub sample_rate: u32,
    pub samples: usize,
    pub data: Vec<f32>,
    pub reference_index: usize,
}

impl EmgRecording {
    /// Validates and wraps channel-major data; the reference defaults to the last channel.
    pub fn new(channels: usize, sample_rate: u32, samples: usize, data: Vec<f32>) -> Result<Self> {
        let rec = EmgRecording {
            channels,
            sample_rate,
            samples,
            data,
            reference_index: channels.saturating_sub(1),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn with_reference(mut self, index: usize) -> Result<Self> {
        self.reference_index = index;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 2 {
            return Err(Error::Data(format!(
                "recording needs at least 2 channels, has {}",
                self.channels
            )));
        }
        if self.reference_index >= self.channels {
            return Err(Error::Data(format!(
                "reference channel {} out of range for {} channels",
                self.reference_index, self.channels
            )));
        }
        if self.data.len() != self.channels * self.samples {
            return Err(Error::Truncation {
                expected: self.channels * self.samples,
                found: self.data.len(),
            });
        }
        if let Some(pos) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite amplitude at channel {}, sample {}",
                pos / self.samples.max(1),
                pos % self.samples.max(1)
            )));
        }
        Ok(())
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * self.samples..(c + 1) * self.samples]
    }
}

pub fn load_recording(path: &Path) -> Result<EmgRecording> {
    let t = read_tensor(path)?;
    EmgRecording::new(t.rows, t.rate, t.cols, t.data)
}

pub fn save_recording(path: &Path, rec: &EmgRecording) -> Result<()> {
    rec.validate()?;
    write_tensor(
        path,
        &Tensor2 {
            rows: rec.channels,
            cols: rec.samples,
            rate: rec.sample_rate,
            data: rec.data.clone(),
        },
    )
}

pub const ARPABET_WITH_SILENCE: [&str; 40] = [
    "aa", "ae", "ah", "ao", "aw", "ay", "b", "ch", "d", "dh", "eh", "er", "ey", "f", "g", "hh",
    "ih", "iy", "jh", "k", "l", "m", "n", "ng", "ow", "oy", "p", "r", "s", "sh", "t", "th", "uh",
    "uw", "v", "w", "y", "z", "zh", "sil",
];

pub const INVENTORY_SIZE: usize = 40;

/// The 40 phoneme symbols; class index 40 is the CTC blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Default for PhonemeInventory {
    fn default() -> Self {
        PhonemeInventory::new(ARPABET_WITH_SILENCE.iter().map(|s| s.to_string()).collect())
            .expect("builtin inventory is valid")
    }
}

impl PhonemeInventory {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() != INVENTORY_SIZE {
            return Err(Error::Format(format!(
                "inventory must list exactly {INVENTORY_SIZE} phonemes, got {}",
                symbols.len()
            )));
        }
        let mut lookup = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.chars().any(char::is_whitespace) || s == "<blank>" {
                return Err(Error::Format(format!("invalid phoneme symbol {s:?}")));
            }
            if lookup.insert(s.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate phoneme symbol {s:?}")));
            }
        }
        Ok(PhonemeInventory { symbols, lookup })
    }

    /// One symbol per line; blank lines and `#` comments ignored.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let symbols = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        PhonemeInventory::new(symbols)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Index of the CTC blank (one past the last phoneme).
    pub fn blank_id(&self) -> usize {
        self.symbols.len()
    }

    /// Number of model output classes (phonemes plus blank).
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.lookup.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn encode(&self, symbols: &[String], line: usize) -> Result<Vec<usize>> {
        symbols
            .iter()
            .map(|s| {
                self.id(s).ok_or_else(|| Error::Vocabulary {
                    symbol: s.clone(),
                    line,
                })
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.symbol(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

/// One sentence: where its EMG lives and what was articulated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceRecord {
    pub id: String,
    pub emg_path: PathBuf,
    pub start_sample: usize,
    pub end_sample: usize,
    pub transcript: String,
    pub phonemes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_channel: Option<usize>,
}

impl SentenceRecord {
    pub fn words(&self) -> Vec<&str> {
        self.transcript.split_whitespace().collect()
    }

    /// Resolves `emg_path` against the manifest's directory when relative.
    pub fn resolve_emg_path(&self, manifest_dir: &Path) -> PathBuf {
        if self.emg_path.is_absolute() {
            self.emg_path.clone()
        } else {
            manifest_dir.join(&self.emg_path)
        }
    }

    /// Checks the sentence boundaries against the referenced recording.
    pub fn check_bounds(&self, rec: &EmgRecording) -> Result<()> {
        if self.start_sample >= self.end_sample || self.end_sample > rec.samples {
            return Err(Error::Bounds(format!(
                "sentence {} spans [{}, {}) but recording has {} samples",
                self.id, self.start_sample, self.end_sample, rec.samples
            )));
        }
        Ok(())
    }
}

pub fn parse_manifest(text: &str, inventory: &PhonemeInventory) -> Result<Vec<SentenceRecord>> {
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SentenceRecord = serde_json::from_str(line)
            .map_err(|e| Error::Manifest(format!("line {lineno}: {e}")))?;
        inventory.encode(&rec.phonemes, lineno)?;
        if rec.start_sample >= rec.end_sample {
            return Err(Error::Manifest(format!(
                "line {lineno}: start_sample {} not before end_sample {}",
                rec.start_sample, rec.end_sample
            )));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::Manifest(format!(
                "line {lineno}: duplicate id {:?}",
                rec.id
            )));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_manifest(path: &Path, inventory: &PhonemeInventory) -> Result<Vec<SentenceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, inventory)
}

pub fn save_manifest(path: &Path, records: &[SentenceRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub word: String,
    pub phonemes: Vec<usize>,
}

/// Word → pronunciations, preserving file order of pronunciations.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    index: HashMap<String, Vec<usize>>,
}

impl Lexicon {
    pub fn from_entries(entries: Vec<LexiconEntry>) -> Self {
        let mut index: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            index.entry(e.word.clone()).or_default().push(i);
        }
        Lexicon { entries, index }
    }

    pub fn parse(text: &str, inventory: &PhonemeInventory) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap().to_string();
            let symbols: Vec<String> = parts.map(str::to_string).collect();
            if symbols.is_empty() {
                return Err(Error::Format(format!(
                    "lexicon line {lineno}: word {word:?} has no phonemes"
                )));
            }
            let phonemes = inventory.encode(&symbols, lineno)?;
            entries.push(LexiconEntry { word, phonemes });
        }
        Ok(Lexicon::from_entries(entries))
    }

    pub fn load(path: &Path, inventory: &PhonemeInventory) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::parse(&text, inventory)
    }

    /// All pronunciations of `word`, in file order.
    pub fn pronunciations(&self, word: &str) -> Vec<&[usize]> {
        self.index
            .get(word)
            .map(|ix| ix.iter().map(|&i| self.entries[i].phonemes.as_slice()).collect())
            .unwrap_or_default()
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    /// Number of distinct words.
    pub fn num_words(&self) -> usize {
        self.index.len()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Validation,
    Test,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashMap<&str, &str> = HashMap::new();
        for (name, ids) in [
            ("train", &self.train),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            for id in ids {
                if let Some(prev) = seen.insert(id.as_str(), name) {
                    return Err(Error::Manifest(format!(
                        "sentence {id:?} appears in both {prev} and {name}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn part_of(&self, id: &str) -> Option<SplitPart> {
        if self.train.iter().any(|x| x == id) {
            Some(SplitPart::Train)
        } else if self.validation.iter().any(|x| x == id) {
            Some(SplitPart::Validation)
        } else if self.test.iter().any(|x| x == id) {
            Some(SplitPart::Test)
        } else {
            None
        }
    }

    pub fn ids(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train,
            SplitPart::Validation => &self.validation,
            SplitPart::Test => &self.test,
        }
    }

    /// Seeded shuffle of `ids` into train/validation/test of the given sizes.
    pub fn random(ids: &[String], n_val: usize, n_test: usize, seed: u64) -> Result<Self> {
        if n_val + n_test > ids.len() {
            return Err(Error::Parameter(format!(
                "cannot carve {n_val} validation + {n_test} test from {} sentences",
                ids.len()
            )));
        }
        let mut shuffled = ids.to_vec();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let test = shuffled.split_off(shuffled.len() - n_test);
        let validation = shuffled.split_off(shuffled.len() - n_val);
        let split = DatasetSplit {
            train: shuffled,
            validation,
            test,
        };
        split.validate()?;
        Ok(split)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let split: DatasetSplit =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("split file: {e}")))?;
        split.validate()?;
        Ok(split)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("split serializes");
        write_bytes(path, text.as_bytes())
    }
}

/// Reads non-empty trimmed lines (used for plain-text corpora).
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn recording_roundtrip_small() {
        let dir = tmp();
        let p = dir.path().join("r.emg");
        let rec = EmgRecording::new(2, 5000, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        save_recording(&p, &rec).unwrap();
        let back = load_recording(&p).unwrap();
        assert_eq!(back.channel(0), &[1., 2., 3.]);
        assert_eq!(back.channel(1), &[4., 5., 6.]);
        assert_eq!(back.reference_index, 1);
    }

    #[test]
    fn one_value_short_is_truncation() {
        let rec = EmgRecording::new(2, 5000, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut bytes = encode_tensor(&Tensor2 {
            rows: 2,
            cols: 3,
            rate: 5000,
            data: rec.data,
        });
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode_tensor(&bytes),
            Err(Error::Truncation {
                expected: 6,
                found: 5
            })
        ));
    }

    #[test]
    fn malformed_header_is_format_error() {
        assert!(matches!(decode_tensor(b"EMG"), Err(Error::Format(_))));
        let mut bytes = encode_tensor(&Tensor2 {
            rows: 1,
            cols: 1,
            rate: 1,
            data: vec![0.0],
        });
        bytes[0] = b'X';
        assert!(matches!(decode_tensor(&bytes), Err(Error::Format(_))));
        bytes[0] = b'E';
        bytes[4] = 2;
        assert!(matches!(decode_tensor(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_is_data_error() {
        let bytes = encode_tensor(&Tensor2 {
            rows: 2,
            cols: 1,
            rate: 5000,
            data: vec![1.0, f32::NAN],
        });
        let dir = tmp();
        let p = dir.path().join("nan.emg");
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_recording(&p), Err(Error::Data(_))));
    }

    #[test]
    fn default_inventory_has_forty_plus_blank() {
        let inv = PhonemeInventory::default();
        assert_eq!(inv.len(), 40);
        assert_eq!(inv.blank_id(), 40);
        assert_eq!(inv.num_classes(), 41);
        assert_eq!(inv.id("sil"), Some(39));
        assert!(inv.id("<blank>").is_none());
    }

    #[test]
    fn manifest_friday_line() {
        let inv = PhonemeInventory::default();
        let line = r#"{"id":"s1","emg_path":"s1.emg","start_sample":0,"end_sample":100,"transcript":"friday","phonemes":["f","r","iy","d","ay"]}"#;
        let recs = parse_manifest(line, &inv).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].phonemes.len(), 5);
        assert_eq!(recs[0].words(), vec!["friday"]);
    }

    #[test]
    fn manifest_empty_and_errors() {
        let inv = PhonemeInventory::default();
        assert!(parse_manifest("", &inv).unwrap().is_empty());
        let bad = "\n".to_string()
            + r#"{"id":"s1","emg_path":"a","start_sample":0,"end_sample":1,"transcript":"x","phonemes":["zz"]}"#;
        match parse_manifest(&bad, &inv) {
            Err(Error::Vocabulary { symbol, line }) => {
                assert_eq!(symbol, "zz");
                assert_eq!(line, 2);
            }
            other => panic!("expected vocabulary error, got {other:?}"),
        }
        let line = r#"{"id":"s1","emg_path":"a","start_sample":0,"end_sample":1,"transcript":"x","phonemes":["f"]}"#;
        let dup = format!("{line}\n{line}\n");
        assert!(matches!(parse_manifest(&dup, &inv), Err(Error::Manifest(_))));
    }

    #[test]
    fn lexicon_parsing() {
        let inv = PhonemeInventory::default();
        let lex = Lexicon::parse(
            "# toy\nfriday f r iy d ay\nthe dh ah\nthe dh iy\n",
            &inv,
        )
        .unwrap();
        let f: Vec<usize> = ["f", "r", "iy", "d", "ay"]
            .iter()
            .map(|s| inv.id(s).unwrap())
            .collect();
        assert_eq!(lex.pronunciations("friday"), vec![f.as_slice()]);
        let the = lex.pronunciations("the");
        assert_eq!(the.len(), 2);
        assert_eq!(the[0][1], inv.id("ah").unwrap());
        assert_eq!(the[1][1], inv.id("iy").unwrap());
        assert!(matches!(
            Lexicon::parse("lonely\n", &inv),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            Lexicon::parse("w zz\n", &inv),
            Err(Error::Vocabulary { .. })
        ));
    }

    #[test]
    fn ten_word_lexicon() {
        let inv = PhonemeInventory::default();
        let words = ["a", "b", "c", "d", "e", "f", "g", "h", "i", "j"];
        let text: String = words.iter().map(|w| format!("{w} aa b\n")).collect();
        let lex = Lexicon::parse(&text, &inv).unwrap();
        assert_eq!(lex.num_words(), 10);
        assert!(words.iter().all(|w| lex.contains(w)));
    }

    #[test]
    fn split_disjointness() {
        let ids: Vec<String> = (0..50).map(|i| format!("s{i}")).collect();
        for seed in 0..20 {
            let s = DatasetSplit::random(&ids, 5, 7, seed).unwrap();
            let test: HashSet<_> = s.test.iter().collect();
            assert!(s.train.iter().all(|x| !test.contains(x)));
            assert!(s.validation.iter().all(|x| !test.contains(x)));
            assert_eq!(s.train.len() + s.validation.len() + s.test.len(), 50);
        }
        let bad = DatasetSplit {
            train: vec!["a".into()],
            validation: vec![],
            test: vec!["a".into()],
        };
        assert!(bad.validate().is_err());
    }
}
