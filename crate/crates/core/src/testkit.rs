//! Synthetic corpora and brute-force oracles.
//!
//! The generator draws each phoneme class as a zero-mean Gaussian with its
//! own 31×31 covariance, so the SPD feature path has something real to
//! separate. The oracles enumerate every frame path of a lattice and share
//! no code with [`crate::ctc`] or [`crate::lm`].

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ctc::PosteriorLattice;
use crate::error::{Error, Result};
use crate::io::{
    save_manifest, save_recording, write_bytes, DatasetSplit, EmgRecording, SentenceRecord,
    ARPABET_WITH_SILENCE,
};
use crate::linalg::Matrix;
use crate::spd::{cholesky, log_cholesky_distance, CholeskyFactor};

/// Generator settings. Every random draw derives from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    /// Signal channels; the recording adds one reference channel.
    pub dim: usize,
    pub sample_rate: u32,
    /// Inclusive range of windows (hops of 20 ms) each phoneme lasts.
    pub frames_per_phoneme: (usize, usize),
    /// Inclusive range of phonemes per sentence.
    pub sentence_length: (usize, usize),
    /// Inclusive range of the log-uniform class spectra.
    pub spectrum: (f64, f64),
    /// Required pairwise log-Cholesky distance between class covariances.
    pub min_separation: f64,
    /// Standard deviation of independent per-channel sensor noise.
    pub noise_scale: f64,
    /// Standard deviation of the common reference signal.
    pub reference_scale: f64,
    /// Silent padding before and after each sentence, in samples.
    pub rest_samples: usize,
    /// Words in the synthetic lexicon.
    pub n_words: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_classes: 5,
            dim: 31,
            sample_rate: 5000,
            frames_per_phoneme: (3, 8),
            sentence_length: (3, 8),
            spectrum: (0.2, 5.0),
            min_separation: 0.5,
            noise_scale: 0.1,
            reference_scale: 1.0,
            rest_samples: 500,
            n_words: 12,
            n_train: 400,
            n_val: 50,
            n_test: 50,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(format!("synthetic spec: {m}")));
        if self.n_classes == 0 || self.n_classes > ARPABET_WITH_SILENCE.len() {
            return bad("n_classes must be in 1..=40");
        }
        if self.dim < 1 {
            return bad("dim must be positive");
        }
        if self.sample_rate % 50 != 0 || self.sample_rate == 0 {
            return bad("sample_rate must be a positive multiple of 50 Hz");
        }
        let ordered = |r: (usize, usize)| r.0 >= 1 && r.0 <= r.1;
        if !ordered(self.frames_per_phoneme) || !ordered(self.sentence_length) {
            return bad("ranges must satisfy 1 <= lo <= hi");
        }
        if !(self.spectrum.0 > 0.0 && self.spectrum.0 <= self.spectrum.1) {
            return bad("spectrum must satisfy 0 < lo <= hi");
        }
        if self.noise_scale < 0.0 || self.reference_scale < 0.0 {
            return bad("noise scales must be non-negative");
        }
        if self.n_words == 0 || self.n_train + self.n_val + self.n_test == 0 {
            return bad("need at least one word and one sentence");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SyntheticSpec =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("synthetic spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    fn hop(&self) -> usize {
        self.sample_rate as usize / 50
    }

    pub fn n_sentences(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named sub-stream, stable across platforms and runs.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    // FNV-1a over the label, then mixed with the master seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(master ^ mix64(h))
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape")
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian columns.
fn random_orthogonal(rng: &mut impl Rng, n: usize) -> Matrix {
    loop {
        let g = gaussian_matrix(rng, n, n);
        let mut q = Matrix::zeros(n, n);
        let mut ok = true;
        for j in 0..n {
            let mut v: Vec<f64> = (0..n).map(|i| g[(i, j)]).collect();
            // two passes keep the basis orthogonal to machine precision
            for _ in 0..2 {
                for k in 0..j {
                    let d: f64 = (0..n).map(|i| v[i] * q[(i, k)]).sum();
                    for (i, vi) in v.iter_mut().enumerate() {
                        *vi -= d * q[(i, k)];
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for (i, vi) in v.iter().enumerate() {
                q[(i, j)] = vi / norm;
            }
        }
        if ok {
            return q;
        }
    }
}

/// Q·diag(spectrum)·Qᵀ with a log-uniform spectrum.
fn random_covariance(rng: &mut impl Rng, n: usize, (lo, hi): (f64, f64)) -> Matrix {
    let q = random_orthogonal(rng, n);
    let spectrum: Vec<f64> = (0..n)
        .map(|_| (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp())
        .collect();
    let c = q.matmul(&Matrix::from_diag(&spectrum)).matmul(&q.transpose());
    // exact symmetry
    let mut s = c.clone();
    for i in 0..n {
        for j in 0..n {
            s[(i, j)] = 0.5 * (c[(i, j)] + c[(j, i)]);
        }
    }
    s
}

/// One generated sentence.
#[derive(Debug, Clone)]
pub struct SyntheticSentence {
    pub record: SentenceRecord,
    pub recording: EmgRecording,
    /// Class index of every phoneme, in order.
    pub classes: Vec<usize>,
}

/// Deterministic corpus generator built from a [`SyntheticSpec`].
#[derive(Debug, Clone)]
pub struct SyntheticGenerator {
    spec: SyntheticSpec,
    covariances: Vec<Matrix>,
    factors: Vec<CholeskyFactor>,
    /// Pronunciations as class indices; word `k` is named `w{k:02}`.
    words: Vec<Vec<usize>>,
}

const MAX_DRAWS: usize = 1000;

impl SyntheticGenerator {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "classes"));
        let mut covariances: Vec<Matrix> = Vec::with_capacity(spec.n_classes);
        let mut draws = 0;
        while covariances.len() < spec.n_classes {
            draws += 1;
            if draws > MAX_DRAWS {
                return Err(Error::Parameter(format!(
                    "could not draw {} classes separated by {}",
                    spec.n_classes, spec.min_separation
                )));
            }
            let c = random_covariance(&mut rng, spec.dim, spec.spectrum);
            let mut separated = true;
            for other in &covariances {
                if log_cholesky_distance(&c, other)? <= spec.min_separation {
                    separated = false;
                    break;
                }
            }
            if separated {
                covariances.push(c);
            }
        }
        let factors = covariances.iter().map(cholesky).collect::<Result<Vec<_>>>()?;
        let words = draw_words(&spec)?;
        Ok(SyntheticGenerator {
            spec,
            covariances,
            factors,
            words,
        })
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn class_covariances(&self) -> &[Matrix] {
        &self.covariances
    }

    pub fn class_symbol(&self, class: usize) -> &'static str {
        ARPABET_WITH_SILENCE[class]
    }

    pub fn word_name(k: usize) -> String {
        format!("w{k:02}")
    }

    pub fn words(&self) -> &[Vec<usize>] {
        &self.words
    }

    /// Lexicon text: one `word ph ph ...` line per synthetic word.
    pub fn lexicon_text(&self) -> String {
        let mut out = String::new();
        for (k, pron) in self.words.iter().enumerate() {
            let syms: Vec<&str> = pron.iter().map(|&c| self.class_symbol(c)).collect();
            let _ = writeln!(out, "{} {}", Self::word_name(k), syms.join(" "));
        }
        out
    }

    pub fn sentence_id(index: usize) -> String {
        format!("s{index:04}")
    }

    pub fn split(&self) -> DatasetSplit {
        let ids: Vec<String> = (0..self.spec.n_sentences()).map(Self::sentence_id).collect();
        let (train, rest) = ids.split_at(self.spec.n_train);
        let (val, test) = rest.split_at(self.spec.n_val);
        DatasetSplit {
            train: train.to_vec(),
            validation: val.to_vec(),
            test: test.to_vec(),
        }
    }

    /// `samples` draws of class `class`, as a dim × samples matrix.
    pub fn class_stream(&self, class: usize, samples: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.spec.dim;
        let l = &self.factors[class].lower;
        let mut out = Matrix::zeros(dim, samples);
        let mut z = vec![0.0; dim];
        for t in 0..samples {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            for i in 0..dim {
                let mut acc = 0.0;
                for (k, zk) in z.iter().enumerate().take(i + 1) {
                    acc += l[(i, k)] * zk;
                }
                out[(i, t)] = acc;
            }
        }
        out
    }

    fn draw_sentence_words(&self, rng: &mut impl Rng) -> Result<Vec<usize>> {
        let allow_repeats = self.spec.n_classes == 1;
        let (lo, hi) = self.spec.sentence_length;
        for _ in 0..MAX_DRAWS {
            let target = rng.gen_range(lo..=hi);
            let mut chosen: Vec<usize> = Vec::new();
            let mut len = 0;
            let mut last: Option<usize> = None;
            let mut stuck = false;
            while len < target {
                let fits: Vec<usize> = (0..self.words.len())
                    .filter(|&k| {
                        let w = &self.words[k];
                        len + w.len() <= hi && (allow_repeats || Some(w[0]) != last)
                    })
                    .collect();
                match fits.choose(rng) {
                    Some(&k) => {
                        len += self.words[k].len();
                        last = self.words[k].last().copied();
                        chosen.push(k);
                    }
                    None => {
                        stuck = true;
                        break;
                    }
                }
            }
            if !stuck && len >= lo {
                return Ok(chosen);
            }
        }
        Err(Error::Parameter("synthetic lexicon cannot fill the sentence length range".into()))
    }

    /// Generates sentence `index`; independent of every other sentence.
    pub fn sentence(&self, index: usize) -> Result<SyntheticSentence> {
        let spec = &self.spec;
        let id = Self::sentence_id(index);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &id));
        let words = self.draw_sentence_words(&mut rng)?;
        let classes: Vec<usize> = words.iter().flat_map(|&k| self.words[k].iter().copied()).collect();
        let hop = spec.hop();
        let dwell: Vec<usize> = classes
            .iter()
            .map(|_| rng.gen_range(spec.frames_per_phoneme.0..=spec.frames_per_phoneme.1) * hop)
            .collect();
        let active: usize = dwell.iter().sum();
        let samples = active + 2 * spec.rest_samples;
        let dim = spec.dim;
        let channels = dim + 1;
        let mut signal = vec![0.0f64; dim * samples];
        let mut t0 = spec.rest_samples;
        for (&class, &len) in classes.iter().zip(&dwell) {
            let stream = self.class_stream(class, len, rng.gen());
            for c in 0..dim {
                signal[c * samples + t0..c * samples + t0 + len].copy_from_slice(stream.row(c));
            }
            t0 += len;
        }
        let reference: Vec<f64> = (0..samples)
            .map(|_| spec.reference_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut data = vec![0.0f32; channels * samples];
        for c in 0..dim {
            for t in 0..samples {
                let noise: f64 = rng.sample(StandardNormal);
                data[c * samples + t] =
                    (signal[c * samples + t] + spec.noise_scale * noise + reference[t]) as f32;
            }
        }
        for t in 0..samples {
            data[dim * samples + t] = reference[t] as f32;
        }
        let recording = EmgRecording::new(channels, spec.sample_rate, samples, data)?;
        let transcript: Vec<String> = words.iter().map(|&k| Self::word_name(k)).collect();
        let record = SentenceRecord {
            id: id.clone(),
            emg_path: PathBuf::from("emg").join(format!("{id}.emg")),
            start_sample: spec.rest_samples,
            end_sample: spec.rest_samples + active,
            transcript: transcript.join(" "),
            phonemes: classes.iter().map(|&c| self.class_symbol(c).to_string()).collect(),
            reference_channel: None,
        };
        Ok(SyntheticSentence {
            record,
            recording,
            classes,
        })
    }
}

/// Random vocabulary of distinct pronunciations with 1–3 phonemes and, when
/// there is more than one class, no phoneme repeated back to back.
fn draw_words(spec: &SyntheticSpec) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "words"));
    let mut words: Vec<Vec<usize>> = Vec::new();
    if spec.n_classes == 1 {
        return Ok(vec![vec![0]]);
    }
    // single-phoneme words for every class first, so any class sequence is spellable
    for c in 0..spec.n_classes.min(spec.n_words) {
        words.push(vec![c]);
    }
    let mut draws = 0;
    while words.len() < spec.n_words && draws < MAX_DRAWS {
        draws += 1;
        let len = rng.gen_range(2..=3);
        let mut w = vec![rng.gen_range(0..spec.n_classes)];
        while w.len() < len {
            let c = rng.gen_range(0..spec.n_classes);
            if Some(&c) != w.last() {
                w.push(c);
            }
        }
        if !words.contains(&w) {
            words.push(w);
        }
    }
    Ok(words)
}

/// Files written by [`write_corpus`], relative to the output directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusLayout {
    pub manifest: PathBuf,
    pub split: PathBuf,
    pub lexicon: PathBuf,
    pub inventory: PathBuf,
    pub transcripts: PathBuf,
    pub spec: PathBuf,
}

impl Default for CorpusLayout {
    fn default() -> Self {
        CorpusLayout {
            manifest: "manifest.jsonl".into(),
            split: "split.json".into(),
            lexicon: "lexicon.txt".into(),
            inventory: "phonemes.txt".into(),
            transcripts: "train_transcripts.txt".into(),
            spec: "spec.json".into(),
        }
    }
}

/// Writes generated sentences plus manifest, split, lexicon, inventory,
/// training transcripts and the generator settings under `out`.
pub fn write_corpus(gen: &SyntheticGenerator, sentences: &[SyntheticSentence], out: &Path) -> Result<CorpusLayout> {
    let layout = CorpusLayout::default();
    for s in sentences {
        save_recording(&out.join(&s.record.emg_path), &s.recording)?;
    }
    let records: Vec<SentenceRecord> = sentences.iter().map(|s| s.record.clone()).collect();
    save_manifest(&out.join(&layout.manifest), &records)?;
    let split = gen.split();
    split.save(&out.join(&layout.split))?;
    write_bytes(&out.join(&layout.lexicon), gen.lexicon_text().as_bytes())?;
    let inventory: String = ARPABET_WITH_SILENCE.iter().map(|s| format!("{s}\n")).collect();
    write_bytes(&out.join(&layout.inventory), inventory.as_bytes())?;
    let train: std::collections::HashSet<&str> = split.train.iter().map(String::as_str).collect();
    let transcripts: String = records
        .iter()
        .filter(|r| train.contains(r.id.as_str()))
        .map(|r| format!("{}\n", r.transcript))
        .collect();
    write_bytes(&out.join(&layout.transcripts), transcripts.as_bytes())?;
    write_bytes(&out.join(&layout.spec), gen.spec().to_json().as_bytes())?;
    Ok(layout)
}

/// Generates and writes the whole corpus sequentially.
pub fn generate_corpus(spec: &SyntheticSpec, out: &Path) -> Result<CorpusLayout> {
    let gen = SyntheticGenerator::new(spec.clone())?;
    let sentences = (0..spec.n_sentences())
        .map(|i| gen.sentence(i))
        .collect::<Result<Vec<_>>>()?;
    write_corpus(&gen, &sentences, out)
}

/// Largest number of frame paths the oracles agree to enumerate.
pub const ORACLE_PATH_LIMIT: u64 = 20_000_000;

fn path_count(lattice: &PosteriorLattice) -> Result<u64> {
    let mut n: u64 = 1;
    for _ in 0..lattice.frames() {
        n = n
            .checked_mul(lattice.classes() as u64)
            .filter(|&n| n <= ORACLE_PATH_LIMIT)
            .ok_or_else(|| {
                Error::Parameter(format!(
                    "{}^{} frame paths exceed the oracle limit",
                    lattice.classes(),
                    lattice.frames()
                ))
            })?;
    }
    Ok(n)
}

/// Visits every frame path with its probability (a plain product).
fn for_each_path(lattice: &PosteriorLattice, mut visit: impl FnMut(&[usize], f64)) -> Result<()> {
    let total = path_count(lattice)?;
    let (t_len, c_len) = (lattice.frames(), lattice.classes());
    let probs: Vec<f64> = (0..t_len * c_len)
        .map(|i| lattice.log_prob(i / c_len, i % c_len).exp())
        .collect();
    let mut path = vec![0usize; t_len];
    for mut code in 0..total {
        let mut p = 1.0;
        for (t, slot) in path.iter_mut().enumerate() {
            *slot = (code % c_len as u64) as usize;
            code /= c_len as u64;
            p *= probs[t * c_len + *slot];
        }
        visit(&path, p);
    }
    Ok(())
}

/// Removes adjacent duplicates, then blanks.
fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &s in path {
        if Some(s) != prev && s != blank {
            out.push(s);
        }
        prev = Some(s);
    }
    out
}

/// Probability of `labels`: the sum over every frame path that collapses to it.
pub fn brute_force_ctc(lattice: &PosteriorLattice, labels: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for_each_path(lattice, |path, p| {
        if collapse(path, lattice.blank()) == labels {
            total += p;
        }
    })?;
    Ok(total)
}

/// Path-sum probability of every label sequence with non-zero mass.
pub fn brute_force_posteriors(lattice: &PosteriorLattice) -> Result<BTreeMap<Vec<usize>, f64>> {
    let mut sums: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for_each_path(lattice, |path, p| {
        if p > 0.0 {
            *sums.entry(collapse(path, lattice.blank())).or_insert(0.0) += p;
        }
    })?;
    Ok(sums)
}

/// Most probable label sequence of length ≤ `max_len`. Ties go to the
/// lexicographically smallest sequence, so a prefix beats its extensions.
pub fn brute_force_decode(lattice: &PosteriorLattice, max_len: usize) -> Result<Vec<usize>> {
    let sums = brute_force_posteriors(lattice)?;
    let mut best: Option<(&Vec<usize>, f64)> = None;
    // BTreeMap iterates in ascending order, so strict improvement keeps the smallest tie
    for (labels, &p) in &sums {
        if labels.len() <= max_len && best.map_or(true, |(_, b)| p > b) {
            best = Some((labels, p));
        }
    }
    Ok(best.map(|(l, _)| l.clone()).unwrap_or_default())
}

/// Best word sequence by exhaustive enumeration of up to `max_words`
/// pronunciations. Each candidate scores ln p(phonemes) + `graph_score(words)`.
/// Ties go to the smaller word sequence, then the smaller phoneme string.
pub fn brute_force_word_decode(
    lattice: &PosteriorLattice,
    pronunciations: &[(String, Vec<usize>)],
    max_words: usize,
    graph_score: &dyn Fn(&[&str]) -> f64,
) -> Result<Option<(Vec<String>, f64)>> {
    let sums: HashMap<Vec<usize>, f64> = brute_force_posteriors(lattice)?.into_iter().collect();
    let mut best: Option<(Vec<String>, Vec<usize>, f64)> = None;
    let mut stack: Vec<Vec<usize>> = (0..pronunciations.len()).map(|i| vec![i]).collect();
    while let Some(seq) = stack.pop() {
        if seq.len() < max_words {
            for i in 0..pronunciations.len() {
                let mut next = seq.clone();
                next.push(i);
                stack.push(next);
            }
        }
        let phonemes: Vec<usize> = seq.iter().flat_map(|&i| pronunciations[i].1.iter().copied()).collect();
        let Some(&p) = sums.get(&phonemes) else { continue };
        let words: Vec<&str> = seq.iter().map(|&i| pronunciations[i].0.as_str()).collect();
        let score = p.ln() + graph_score(&words);
        let words: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        let better = match &best {
            None => true,
            Some((bw, bp, bs)) => {
                score > *bs || (score == *bs && (&words, &phonemes) < (bw, bp))
            }
        };
        if better {
            best = Some((words, phonemes, score));
        }
    }
    Ok(best.map(|(w, _, s)| (w, s)))
}
