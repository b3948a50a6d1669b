//! Model-ready feature sequences and the on-disk feature store.
//!
//! The SPD path turns each window into σ = Qᵀ·reg(X·Xᵀ)·Q flattened row-major.
//! The spectrogram baseline takes a Hann-windowed 256-point magnitude STFT
//! per channel, log-compresses it and average-pools 129 bins into 31 groups.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::parallel_map;
use crate::io::{read_tensor, write_bytes, write_tensor, DatasetSplit, SentenceRecord, SplitPart, Tensor2};
use crate::linalg::Matrix;
use crate::preprocess::{windows, EmgSegment, WindowSpec};
use crate::spd::{cholesky, diagonalize, edge_matrix, eigenbasis, regularize, Eigenbasis, FrechetAccumulator};

/// Frame rate of every feature sequence (one frame per 20 ms hop).
pub const FRAME_RATE_HZ: u32 = 50;
pub const FFT_SIZE: usize = 256;
pub const SPECTRUM_BINS: usize = FFT_SIZE / 2 + 1;
pub const POOLED_BINS: usize = 31;
pub const LOG_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Spd,
    Spectrogram,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Spd => "spd",
            FeatureKind::Spectrogram => "spectrogram",
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spd" => Ok(FeatureKind::Spd),
            "spectrogram" => Ok(FeatureKind::Spectrogram),
            _ => Err(Error::Parameter(format!("unknown feature kind {s:?} (spd|spectrogram)"))),
        }
    }
}

/// T frames of `frame_dim` values each, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub kind: FeatureKind,
    pub frames: usize,
    pub frame_dim: usize,
    pub hop_ms: f64,
    pub values: Vec<f64>,
}

impl FeatureSequence {
    pub fn frame(&self, t: usize) -> &[f64] {
        &self.values[t * self.frame_dim..(t + 1) * self.frame_dim]
    }

    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2 {
            rows: self.frames,
            cols: self.frame_dim,
            rate: FRAME_RATE_HZ,
            data: self.values.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_tensor(t: &Tensor2, kind: FeatureKind) -> Self {
        FeatureSequence {
            kind,
            frames: t.rows,
            frame_dim: t.cols,
            hop_ms: 1000.0 / f64::from(t.rate.max(1)),
            values: t.data.iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Row-major flattening of a square matrix.
pub fn flatten(m: &Matrix) -> Vec<f64> {
    m.as_slice().to_vec()
}

/// Inverse of [`flatten`].
pub fn unflatten(values: &[f64], dim: usize) -> Result<Matrix> {
    Matrix::from_vec(dim, dim, values.to_vec())
}

/// SPD spectral features: per window, edge matrix → regularize(η) →
/// congruence with the basis → flatten (full 961 values, or only the
/// diagonal when `diag_only`).
pub fn spd_features(
    seg: &EmgSegment,
    spec: &WindowSpec,
    basis: &Eigenbasis,
    eta: f64,
    diag_only: bool,
) -> Result<FeatureSequence> {
    if basis.dim() != seg.channels {
        return Err(Error::Parameter(format!(
            "basis dim {} does not match {} channels",
            basis.dim(),
            seg.channels
        )));
    }
    let blocks = windows(seg, spec)?;
    let dim = seg.channels;
    let frame_dim = if diag_only { dim } else { dim * dim };
    let mut values = Vec::with_capacity(blocks.len() * frame_dim);
    for block in &blocks {
        let e = regularize(&edge_matrix(block)?, eta)?;
        let sigma = diagonalize(&e, basis)?;
        if diag_only {
            values.extend(sigma.entries.diag());
        } else {
            values.extend(flatten(&sigma.entries));
        }
    }
    Ok(FeatureSequence {
        kind: FeatureKind::Spd,
        frames: blocks.len(),
        frame_dim,
        hop_ms: spec.hop_ms,
        values,
    })
}

/// First bin of each pooled group: 26 groups of 4 bins, then 5 groups of 5.
pub fn pooling_edges() -> [usize; POOLED_BINS + 1] {
    let mut edges = [0; POOLED_BINS + 1];
    for g in 0..POOLED_BINS {
        edges[g + 1] = edges[g] + if g < 26 { 4 } else { 5 };
    }
    edges
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Stft {
    fn new(window_len: usize) -> Self {
        Stft {
            fft: FftPlanner::new().plan_fft_forward(FFT_SIZE),
            window: hann(window_len),
        }
    }

    /// Pooled log-magnitude of one windowed block.
    fn pooled(&self, x: &[f64], buf: &mut [Complex64], out: &mut Vec<f64>) {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (i, (&v, &w)) in x.iter().zip(&self.window).enumerate() {
            buf[i] = Complex64::new(v * w, 0.0);
        }
        self.fft.process(buf);
        let edges = pooling_edges();
        for g in 0..POOLED_BINS {
            let bins = edges[g]..edges[g + 1];
            let n = bins.len() as f64;
            let sum: f64 = bins.map(|k| (buf[k].norm() + LOG_FLOOR).ln()).sum();
            out.push(sum / n);
        }
    }
}

/// Log-spectrogram baseline: frame `t` holds channels × 31 pooled bins.
pub fn spectrogram_features(seg: &EmgSegment, spec: &WindowSpec) -> Result<FeatureSequence> {
    let (w, h) = spec.samples(seg.sample_rate)?;
    if w > FFT_SIZE {
        return Err(Error::Parameter(format!("window of {w} samples exceeds the {FFT_SIZE}-point FFT")));
    }
    let frames = spec.frame_count(seg.samples, seg.sample_rate)?;
    if frames == 0 {
        return Err(Error::TooShort {
            samples: seg.samples,
            window: w,
        });
    }
    let stft = Stft::new(w);
    let mut buf = vec![Complex64::new(0.0, 0.0); FFT_SIZE];
    let frame_dim = seg.channels * POOLED_BINS;
    let mut values = Vec::with_capacity(frames * frame_dim);
    for t in 0..frames {
        for c in 0..seg.channels {
            stft.pooled(&seg.channel(c)[t * h..t * h + w], &mut buf, &mut values);
        }
    }
    Ok(FeatureSequence {
        kind: FeatureKind::Spectrogram,
        frames,
        frame_dim,
        hop_ms: spec.hop_ms,
        values,
    })
}

/// Featurization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub kind: FeatureKind,
    pub eta: f64,
    pub window: WindowSpec,
    pub diag_only: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            kind: FeatureKind::Spd,
            eta: crate::spd::DEFAULT_ETA,
            window: WindowSpec::default(),
            diag_only: false,
        }
    }
}

/// Featurizes one segment with `basis` (ignored for spectrograms).
pub fn featurize_segment(seg: &EmgSegment, cfg: &FeatureConfig, basis: Option<&Eigenbasis>) -> Result<FeatureSequence> {
    match cfg.kind {
        FeatureKind::Spd => {
            let basis = basis.ok_or_else(|| Error::Parameter("SPD features need an eigenbasis".into()))?;
            spd_features(seg, &cfg.window, basis, cfg.eta, cfg.diag_only)
        }
        FeatureKind::Spectrogram => {
            if cfg.diag_only {
                return Err(Error::Parameter("diag-only applies to SPD features only".into()));
            }
            spectrogram_features(seg, &cfg.window)
        }
    }
}

/// Log-Cholesky accumulation of every regularized window of `seg`.
pub fn accumulate_segment(seg: &EmgSegment, cfg: &FeatureConfig) -> Result<FrechetAccumulator> {
    let mut acc = FrechetAccumulator::new(seg.channels);
    for block in windows(seg, &cfg.window)? {
        let e = regularize(&edge_matrix(&block)?, cfg.eta)?;
        acc.add(&cholesky(&e.entries)?)?;
    }
    Ok(acc)
}

/// Eigenbasis of the Fréchet mean over all windows of `segments`.
/// Per-segment accumulators are merged in input order.
pub fn fit_basis(partials: &[FrechetAccumulator]) -> Result<Eigenbasis> {
    let first = partials
        .first()
        .ok_or_else(|| Error::Data("no training windows to fit the eigenbasis".into()))?;
    let mut acc = FrechetAccumulator::new(first.dim());
    for p in partials {
        acc.merge(p)?;
    }
    if acc.count() == 0 {
        return Err(Error::Data("no training windows to fit the eigenbasis".into()));
    }
    eigenbasis(&acc.mean()?)
}

/// Rounds the basis through the float32 storage format so that featurizing
/// now and featurizing later from the saved basis agree bit for bit.
pub fn storage_rounded(basis: &Eigenbasis) -> Result<Eigenbasis> {
    let (q, l) = basis_tensors(basis);
    basis_from_tensors(&q, &l)
}

pub fn basis_tensors(basis: &Eigenbasis) -> (Tensor2, Tensor2) {
    let n = basis.dim();
    let q = Tensor2 {
        rows: n,
        cols: n,
        rate: 0,
        data: basis.q.as_slice().iter().map(|&v| v as f32).collect(),
    };
    let lambda = Tensor2 {
        rows: 1,
        cols: n,
        rate: 0,
        data: basis.lambda.iter().map(|&v| v as f32).collect(),
    };
    (q, lambda)
}

pub fn basis_from_tensors(q: &Tensor2, lambda: &Tensor2) -> Result<Eigenbasis> {
    let n = lambda.cols;
    if q.rows != n || q.cols != n || lambda.rows != 1 {
        return Err(Error::Format(format!(
            "basis tensors have shapes {}x{} and {}x{}",
            q.rows, q.cols, lambda.rows, lambda.cols
        )));
    }
    Ok(Eigenbasis {
        q: Matrix::from_vec(n, n, q.data.iter().map(|&v| f64::from(v)).collect())?,
        lambda: lambda.data.iter().map(|&v| f64::from(v)).collect(),
    })
}

pub const BASIS_Q_FILE: &str = "basis_q.emgs";
pub const BASIS_LAMBDA_FILE: &str = "basis_lambda.emgs";
pub const INDEX_FILE: &str = "index.jsonl";

pub fn save_basis(dir: &Path, basis: &Eigenbasis) -> Result<()> {
    let (q, l) = basis_tensors(basis);
    write_tensor(&dir.join(BASIS_Q_FILE), &q)?;
    write_tensor(&dir.join(BASIS_LAMBDA_FILE), &l)
}

pub fn load_basis(dir: &Path) -> Result<Eigenbasis> {
    basis_from_tensors(&read_tensor(&dir.join(BASIS_Q_FILE))?, &read_tensor(&dir.join(BASIS_LAMBDA_FILE))?)
}

/// One line of the feature-store index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndexEntry {
    pub id: String,
    /// Relative to the store directory.
    pub path: PathBuf,
    #[serde(rename = "T")]
    pub frames: usize,
    pub frame_dim: usize,
    pub kind: FeatureKind,
    pub split: SplitPart,
    pub phonemes: Vec<String>,
    pub transcript: String,
}

pub fn save_index(path: &Path, entries: &[FeatureIndexEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        text.push_str(&serde_json::to_string(e).map_err(|e| Error::Format(e.to_string()))?);
        text.push('\n');
    }
    write_bytes(path, text.as_bytes())
}

pub fn load_index(path: &Path) -> Result<Vec<FeatureIndexEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// A loaded feature store.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    pub dir: PathBuf,
    pub entries: Vec<FeatureIndexEntry>,
}

impl FeatureStore {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(FeatureStore {
            dir: dir.to_path_buf(),
            entries: load_index(&dir.join(INDEX_FILE))?,
        })
    }

    pub fn part(&self, part: SplitPart) -> impl Iterator<Item = &FeatureIndexEntry> {
        self.entries.iter().filter(move |e| e.split == part)
    }

    pub fn load(&self, entry: &FeatureIndexEntry) -> Result<FeatureSequence> {
        let t = read_tensor(&self.dir.join(&entry.path))?;
        if t.rows != entry.frames || t.cols != entry.frame_dim {
            return Err(Error::Data(format!(
                "{}: tensor is {}x{}, index says {}x{}",
                entry.id, t.rows, t.cols, entry.frames, entry.frame_dim
            )));
        }
        Ok(FeatureSequence::from_tensor(&t, entry.kind))
    }

    pub fn basis(&self) -> Result<Eigenbasis> {
        load_basis(&self.dir)
    }
}

/// Outcome of [`featurize_corpus`].
#[derive(Debug, Clone)]
pub struct FeaturizeReport {
    pub entries: Vec<FeatureIndexEntry>,
    pub basis: Option<Eigenbasis>,
    /// Sentences skipped because they were shorter than one window.
    pub skipped: Vec<String>,
}

/// Featurizes every sentence that belongs to the split and writes the store
/// (`index.jsonl`, `feats/<id>.emgs`, and for SPD the basis tensors) under
/// `out`. The eigenbasis comes from training sentences only.
///
/// `load` turns a record into its preprocessed segment.
pub fn featurize_corpus<F>(
    records: &[SentenceRecord],
    split: &DatasetSplit,
    load: F,
    cfg: &FeatureConfig,
    out: &Path,
    jobs: usize,
) -> Result<FeaturizeReport>
where
    F: Fn(&SentenceRecord) -> Result<EmgSegment> + Sync + Send,
{
    split.validate()?;
    let known: HashSet<&str> = records.iter().map(|r| r.id.as_str()).collect();
    for id in split.train.iter().chain(&split.validation).chain(&split.test) {
        if !known.contains(id.as_str()) {
            return Err(Error::Manifest(format!("split lists unknown sentence {id:?}")));
        }
    }
    let selected: Vec<(&SentenceRecord, SplitPart)> = records
        .iter()
        .filter_map(|r| split.part_of(&r.id).map(|p| (r, p)))
        .collect();

    let segments: Vec<Result<Option<EmgSegment>>> = parallel_map(jobs, &selected, |(r, _)| {
        let seg = load(r)?;
        let (w, _) = cfg.window.samples(seg.sample_rate)?;
        Ok(if seg.samples < w { None } else { Some(seg) })
    })?;
    let segments: Vec<Option<EmgSegment>> = segments.into_iter().collect::<Result<_>>()?;
    let mut skipped = Vec::new();
    for ((r, _), s) in selected.iter().zip(&segments) {
        if s.is_none() {
            warn!("{}: shorter than one window, skipped", r.id);
            skipped.push(r.id.clone());
        }
    }

    let basis = match cfg.kind {
        FeatureKind::Spd => {
            let train: Vec<&EmgSegment> = selected
                .iter()
                .zip(&segments)
                .filter(|((_, p), _)| *p == SplitPart::Train)
                .filter_map(|(_, s)| s.as_ref())
                .collect();
            let partials = parallel_map(jobs, &train, |s| accumulate_segment(s, cfg))?
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Some(storage_rounded(&fit_basis(&partials)?)?)
        }
        FeatureKind::Spectrogram => None,
    };

    let work: Vec<(usize, &EmgSegment)> = segments
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.as_ref().map(|s| (i, s)))
        .collect();
    let feats = parallel_map(jobs, &work, |(_, s)| featurize_segment(s, cfg, basis.as_ref()))?;
    let mut entries = Vec::with_capacity(work.len());
    for ((i, _), f) in work.iter().zip(feats) {
        let f = f?;
        let (r, part) = selected[*i];
        let path = PathBuf::from("feats").join(format!("{}.emgs", r.id));
        write_tensor(&out.join(&path), &f.to_tensor())?;
        entries.push(FeatureIndexEntry {
            id: r.id.clone(),
            path,
            frames: f.frames,
            frame_dim: f.frame_dim,
            kind: cfg.kind,
            split: part,
            phonemes: r.phonemes.clone(),
            transcript: r.transcript.clone(),
        });
    }
    save_index(&out.join(INDEX_FILE), &entries)?;
    if let Some(b) = &basis {
        save_basis(out, b)?;
    }
    Ok(FeaturizeReport { entries, basis, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::symmetric_eigen;
    use crate::spd::SpectralFrame;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn noise_segment(rng: &mut impl Rng, channels: usize, samples: usize) -> EmgSegment {
        let data = (0..channels * samples).map(|_| rng.sample(StandardNormal)).collect();
        EmgSegment::new(channels, samples, 5000, data).unwrap()
    }

    #[test]
    fn frame_count_for_1000_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seg = noise_segment(&mut rng, 31, 1000);
        let f = spd_features(&seg, &WindowSpec::default(), &Eigenbasis::identity(31), 0.1, false).unwrap();
        assert_eq!((f.frames, f.frame_dim), (8, 961));
        let s = spectrogram_features(&seg, &WindowSpec::default()).unwrap();
        assert_eq!((s.frames, s.frame_dim), (8, 961));
        let d = spd_features(&seg, &WindowSpec::default(), &Eigenbasis::identity(31), 0.1, true).unwrap();
        assert_eq!((d.frames, d.frame_dim), (8, 31));
    }

    #[test]
    fn frame_count_formula_holds_for_both_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for samples in [250, 349, 350, 351, 777, 1234] {
            let seg = noise_segment(&mut rng, 3, samples);
            let expect = (samples - 250) / 100 + 1;
            let a = spd_features(&seg, &WindowSpec::default(), &Eigenbasis::identity(3), 0.1, false).unwrap();
            let b = spectrogram_features(&seg, &WindowSpec::default()).unwrap();
            assert_eq!(a.frames, expect);
            assert_eq!(b.frames, expect);
        }
        let short = noise_segment(&mut rng, 3, 249);
        assert!(spectrogram_features(&short, &WindowSpec::default()).is_err());
    }

    #[test]
    fn composition_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seg = noise_segment(&mut rng, 5, 700);
        let mut m = Matrix::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                m[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
        let sym = m.matmul(&m.transpose());
        let q = symmetric_eigen(&sym).unwrap();
        let basis = Eigenbasis { q: q.vectors, lambda: q.values };
        let f = spd_features(&seg, &WindowSpec::default(), &basis, 0.1, false).unwrap();
        for (t, block) in windows(&seg, &WindowSpec::default()).unwrap().iter().enumerate() {
            let e = regularize(&edge_matrix(block).unwrap(), 0.1).unwrap();
            let SpectralFrame { entries } = diagonalize(&e, &basis).unwrap();
            assert_eq!(f.frame(t), entries.as_slice());
        }
    }

    #[test]
    fn white_noise_with_identity_basis_is_near_scaled_identity() {
        // E = X·Xᵀ over 250 samples of unit white noise has mean 250·I and
        // per-entry standard deviation about √250; after regularization the
        // off-diagonal/diagonal ratio is O(1/√250).
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 31;
        let mut off_ratio_sum = 0.0;
        let mut diag_mean_sum = 0.0;
        let draws = 1000;
        for _ in 0..draws {
            let seg = noise_segment(&mut rng, n, 250);
            let f = spd_features(&seg, &WindowSpec::default(), &Eigenbasis::identity(n), 0.1, false).unwrap();
            let m = unflatten(f.frame(0), n).unwrap();
            let diag_mean = m.trace() / n as f64;
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[(i, j)] * m[(i, j)])
                .sum::<f64>()
                / (n * (n - 1)) as f64;
            off_ratio_sum += off.sqrt() / diag_mean;
            diag_mean_sum += diag_mean;
        }
        // regularized diagonal mean: 0.9·250 + 0.1·31·250 = 1000
        let diag_mean = diag_mean_sum / draws as f64;
        assert!((diag_mean - 1000.0).abs() < 5.0, "{diag_mean}");
        // off-diagonal rms: 0.9·√250 ≈ 14.2, over 1000
        let ratio = off_ratio_sum / draws as f64;
        let expect = 0.9 * 250f64.sqrt() / 1000.0;
        assert!((ratio - expect).abs() < 0.05 * expect, "{ratio} vs {expect}");
    }

    #[test]
    fn pooling_groups() {
        let e = pooling_edges();
        assert_eq!(e[0], 0);
        assert_eq!(e[31], 129);
        assert_eq!(e[26], 104);
        let group_of_50 = (0..31).find(|&g| e[g] <= 50 && 50 < e[g + 1]).unwrap();
        assert_eq!(group_of_50, 12);
    }

    #[test]
    fn sine_energy_lands_in_its_group() {
        let f0 = 50.0 * 5000.0 / 256.0;
        assert_eq!(f0, 976.5625);
        let samples = 1000;
        let data: Vec<f64> = (0..samples)
            .map(|t| (2.0 * std::f64::consts::PI * f0 * t as f64 / 5000.0).sin())
            .collect();
        let seg = EmgSegment::new(1, samples, 5000, data.clone()).unwrap();
        let s = spectrogram_features(&seg, &WindowSpec::default()).unwrap();
        // independent direct DFT of the first window
        let w = hann(250);
        let mags: Vec<f64> = (0..129)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, (&x, &wn)) in data[..250].iter().zip(&w).enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * n) as f64 / 256.0;
                    re += x * wn * ang.cos();
                    im += x * wn * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect();
        let edges = pooling_edges();
        for g in 0..31 {
            let direct: f64 = (edges[g]..edges[g + 1]).map(|k| (mags[k] + LOG_FLOOR).ln()).sum::<f64>()
                / (edges[g + 1] - edges[g]) as f64;
            // high bins sit near the 1e-6 floor, where log amplifies FFT rounding
            assert!((s.frame(0)[g] - direct).abs() < 1e-7, "{g} {} {direct}", s.frame(0)[g]);
        }
        for t in 0..s.frames {
            let frame = s.frame(t);
            let best = (0..31).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap();
            assert_eq!(best, 12);
        }
    }

    #[test]
    fn zero_segment_hits_the_floor() {
        let seg = EmgSegment::new(2, 500, 5000, vec![0.0; 1000]).unwrap();
        let s = spectrogram_features(&seg, &WindowSpec::default()).unwrap();
        assert!(s.values.iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn flatten_round_trip_keeps_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seg = noise_segment(&mut rng, 6, 600);
        let f = spd_features(&seg, &WindowSpec::default(), &Eigenbasis::identity(6), 0.1, false).unwrap();
        for t in 0..f.frames {
            let m = unflatten(f.frame(t), 6).unwrap();
            assert_eq!(m.asymmetry(), 0.0);
            assert_eq!(flatten(&m), f.frame(t));
        }
    }

    #[test]
    fn basis_changes_values_not_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let seg = noise_segment(&mut rng, 4, 800);
        let acc = accumulate_segment(&seg, &FeatureConfig::default()).unwrap();
        let basis = fit_basis(&[acc]).unwrap();
        let a = spd_features(&seg, &WindowSpec::default(), &basis, 0.1, false).unwrap();
        let b = spd_features(&seg, &WindowSpec::default(), &Eigenbasis::identity(4), 0.1, false).unwrap();
        assert_eq!((a.frames, a.frame_dim), (b.frames, b.frame_dim));
        assert_ne!(a.values, b.values);
        assert!(spd_features(&seg, &WindowSpec::default(), &Eigenbasis::identity(3), 0.1, false).is_err());
    }

    fn tiny_corpus() -> (Vec<SentenceRecord>, DatasetSplit, Vec<EmgSegment>) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut records = Vec::new();
        let mut segs = Vec::new();
        for (i, n) in [900usize, 700, 650, 100].iter().enumerate() {
            records.push(SentenceRecord {
                id: format!("u{i}"),
                emg_path: PathBuf::from("unused"),
                start_sample: 0,
                end_sample: *n,
                transcript: "w".into(),
                phonemes: vec!["aa".into()],
                reference_channel: None,
            });
            segs.push(noise_segment(&mut rng, 3, *n));
        }
        let split = DatasetSplit {
            train: vec!["u0".into(), "u1".into()],
            validation: vec!["u3".into()],
            test: vec!["u2".into()],
        };
        (records, split, segs)
    }

    #[test]
    fn basis_comes_from_training_sentences_only() {
        let (records, split, segs) = tiny_corpus();
        let dir = tempfile::tempdir().unwrap();
        let lookup = |r: &SentenceRecord| Ok(segs[r.id[1..].parse::<usize>().unwrap()].clone());
        let report = featurize_corpus(&records, &split, lookup, &FeatureConfig::default(), dir.path(), 1).unwrap();
        assert_eq!(report.skipped, vec!["u3".to_string()]);
        assert_eq!(report.entries.len(), 3);
        let cfg = FeatureConfig::default();
        let partials = vec![
            accumulate_segment(&segs[0], &cfg).unwrap(),
            accumulate_segment(&segs[1], &cfg).unwrap(),
        ];
        let expect = storage_rounded(&fit_basis(&partials).unwrap()).unwrap();
        assert_eq!(report.basis.as_ref().unwrap(), &expect);
        let store = FeatureStore::open(dir.path()).unwrap();
        assert_eq!(store.basis().unwrap(), expect);
        let test = store.part(SplitPart::Test).next().unwrap();
        let loaded = store.load(test).unwrap();
        let fresh = spd_features(&segs[2], &cfg.window, &expect, cfg.eta, false).unwrap();
        assert_eq!(loaded.to_tensor(), fresh.to_tensor());
    }

    #[test]
    fn reruns_and_worker_counts_are_byte_identical() {
        let (records, split, segs) = tiny_corpus();
        let lookup = |r: &SentenceRecord| Ok(segs[r.id[1..].parse::<usize>().unwrap()].clone());
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        featurize_corpus(&records, &split, lookup, &FeatureConfig::default(), a.path(), 1).unwrap();
        featurize_corpus(&records, &split, lookup, &FeatureConfig::default(), b.path(), 3).unwrap();
        for f in [INDEX_FILE, BASIS_Q_FILE, BASIS_LAMBDA_FILE, "feats/u0.emgs", "feats/u2.emgs"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
    }

    #[test]
    fn spectrogram_store_has_no_basis() {
        let (records, split, segs) = tiny_corpus();
        let lookup = |r: &SentenceRecord| Ok(segs[r.id[1..].parse::<usize>().unwrap()].clone());
        let dir = tempfile::tempdir().unwrap();
        let cfg = FeatureConfig {
            kind: FeatureKind::Spectrogram,
            ..FeatureConfig::default()
        };
        let report = featurize_corpus(&records, &split, lookup, &cfg, dir.path(), 1).unwrap();
        assert!(report.basis.is_none());
        assert!(!dir.path().join(BASIS_Q_FILE).exists());
        assert_eq!(report.entries[0].frame_dim, 3 * 31);
    }
}
