//! Connectionist temporal classification: log-domain forward-backward loss
//! with its gradient, best-path decoding, and prefix beam search with
//! optional token-level shallow fusion.

use std::cmp::Ordering;
use std::collections::HashMap;

use crate::error::{Error, Result};

/// `log(exp(a) + exp(b))`, exact for infinities.
#[inline]
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `T × C` matrix of per-frame log-probabilities; class `blank` is the CTC blank.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorLattice {
    frames: usize,
    classes: usize,
    blank: usize,
    data: Vec<f64>,
}

impl PosteriorLattice {
    pub fn new(frames: usize, classes: usize, blank: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != frames * classes {
            return Err(Error::Parameter(format!(
                "lattice {frames}x{classes} needs {} values, got {}",
                frames * classes,
                data.len()
            )));
        }
        if blank >= classes {
            return Err(Error::Parameter(format!(
                "blank {blank} outside {classes} classes"
            )));
        }
        Ok(PosteriorLattice {
            frames,
            classes,
            blank,
            data,
        })
    }

    /// Builds a lattice from probabilities (not logs).
    pub fn from_probs(frames: usize, classes: usize, blank: usize, probs: &[f64]) -> Result<Self> {
        PosteriorLattice::new(frames, classes, blank, probs.iter().map(|p| p.ln()).collect())
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn blank(&self) -> usize {
        self.blank
    }

    #[inline]
    pub fn log_prob(&self, t: usize, c: usize) -> f64 {
        self.data[t * self.classes + c]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.classes..(t + 1) * self.classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Largest `|logsumexp(row)|` over all frames.
    pub fn normalization_error(&self) -> f64 {
        (0..self.frames)
            .map(|t| log_sum_exp(self.row(t)).abs())
            .fold(0.0, f64::max)
    }
}

/// Minimum number of frames able to emit `labels` (repeats need a blank between).
pub fn min_frames(labels: &[usize]) -> usize {
    labels.len() + labels.windows(2).filter(|w| w[0] == w[1]).count()
}

#[derive(Debug, Clone)]
pub struct CtcOutput {
    /// `−log p(labels | lattice)`.
    pub loss: f64,
    /// `∂loss/∂log_prob[t][c]`, row-major `T × C`.
    pub grad: Vec<f64>,
}

fn check_labels(lattice: &PosteriorLattice, labels: &[usize]) -> Result<()> {
    if let Some(&bad) = labels
        .iter()
        .find(|&&l| l >= lattice.classes || l == lattice.blank)
    {
        return Err(Error::Parameter(format!(
            "label {bad} is blank or outside {} classes",
            lattice.classes
        )));
    }
    let required = min_frames(labels);
    if lattice.frames < required {
        return Err(Error::InfeasibleAlignment {
            frames: lattice.frames,
            labels: labels.len(),
            required,
        });
    }
    Ok(())
}

/// Forward variables over the blank-interleaved label sequence.
fn forward(lattice: &PosteriorLattice, ext: &[usize]) -> Vec<f64> {
    let t_max = lattice.frames;
    let s_max = ext.len();
    let mut alpha = vec![f64::NEG_INFINITY; t_max * s_max];
    alpha[0] = lattice.log_prob(0, ext[0]);
    if s_max > 1 {
        alpha[1] = lattice.log_prob(0, ext[1]);
    }
    for t in 1..t_max {
        let (prev, cur) = alpha.split_at_mut(t * s_max);
        let prev = &prev[(t - 1) * s_max..];
        for s in 0..s_max {
            let mut a = prev[s];
            if s >= 1 {
                a = log_add(a, prev[s - 1]);
            }
            if s >= 2 && ext[s] != lattice.blank && ext[s] != ext[s - 2] {
                a = log_add(a, prev[s - 2]);
            }
            cur[s] = if a == f64::NEG_INFINITY {
                a
            } else {
                a + lattice.log_prob(t, ext[s])
            };
        }
    }
    alpha
}

fn backward(lattice: &PosteriorLattice, ext: &[usize]) -> Vec<f64> {
    let t_max = lattice.frames;
    let s_max = ext.len();
    let mut beta = vec![f64::NEG_INFINITY; t_max * s_max];
    let last = (t_max - 1) * s_max;
    beta[last + s_max - 1] = lattice.log_prob(t_max - 1, ext[s_max - 1]);
    if s_max > 1 {
        beta[last + s_max - 2] = lattice.log_prob(t_max - 1, ext[s_max - 2]);
    }
    for t in (0..t_max - 1).rev() {
        let (cur, next) = beta.split_at_mut((t + 1) * s_max);
        let cur = &mut cur[t * s_max..];
        let next = &next[..s_max];
        for s in 0..s_max {
            let mut b = next[s];
            if s + 1 < s_max {
                b = log_add(b, next[s + 1]);
            }
            if s + 2 < s_max && ext[s] != lattice.blank && ext[s] != ext[s + 2] {
                b = log_add(b, next[s + 2]);
            }
            cur[s] = if b == f64::NEG_INFINITY {
                b
            } else {
                b + lattice.log_prob(t, ext[s])
            };
        }
    }
    beta
}

fn extend_with_blanks(labels: &[usize], blank: usize) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(blank);
    for &l in labels {
        ext.push(l);
        ext.push(blank);
    }
    ext
}

/// `log p(labels | lattice)` summed over every alignment.
pub fn ctc_log_likelihood(lattice: &PosteriorLattice, labels: &[usize]) -> Result<f64> {
    if lattice.frames == 0 {
        return Ok(if labels.is_empty() { 0.0 } else { f64::NEG_INFINITY });
    }
    check_labels(lattice, labels)?;
    let ext = extend_with_blanks(labels, lattice.blank);
    let alpha = forward(lattice, &ext);
    let s_max = ext.len();
    let last = (lattice.frames - 1) * s_max;
    let mut ll = alpha[last + s_max - 1];
    if s_max > 1 {
        ll = log_add(ll, alpha[last + s_max - 2]);
    }
    Ok(ll)
}

/// CTC loss and its gradient with respect to the lattice log-probabilities.
pub fn ctc_loss(lattice: &PosteriorLattice, labels: &[usize]) -> Result<CtcOutput> {
    if lattice.frames == 0 {
        return Err(Error::InfeasibleAlignment {
            frames: 0,
            labels: labels.len(),
            required: min_frames(labels).max(1),
        });
    }
    check_labels(lattice, labels)?;
    let ext = extend_with_blanks(labels, lattice.blank);
    let s_max = ext.len();
    let alpha = forward(lattice, &ext);
    let beta = backward(lattice, &ext);
    let last = (lattice.frames - 1) * s_max;
    let mut ll = alpha[last + s_max - 1];
    if s_max > 1 {
        ll = log_add(ll, alpha[last + s_max - 2]);
    }
    if !ll.is_finite() {
        return Err(Error::Numeric(format!("CTC likelihood is {ll}")));
    }

    let c = lattice.classes;
    let mut grad = vec![0.0; lattice.frames * c];
    let mut occ = vec![f64::NEG_INFINITY; c];
    for t in 0..lattice.frames {
        occ.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for s in 0..s_max {
            let ab = alpha[t * s_max + s] + beta[t * s_max + s];
            occ[ext[s]] = log_add(occ[ext[s]], ab);
        }
        for k in 0..c {
            if occ[k] != f64::NEG_INFINITY {
                // αβ double-counts the emission at t
                grad[t * c + k] = -(occ[k] - lattice.log_prob(t, k) - ll).exp();
            }
        }
    }
    Ok(CtcOutput { loss: -ll, grad })
}

/// Best-path decoding: per-frame argmax (lowest index on ties), collapse repeats, drop blanks.
pub fn greedy_decode(lattice: &PosteriorLattice) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for t in 0..lattice.frames {
        let row = lattice.row(t);
        let mut best = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if Some(best) != prev && best != lattice.blank {
            out.push(best);
        }
        prev = Some(best);
    }
    out
}

/// Token-level language model used for shallow fusion during beam search.
pub trait TokenLm {
    /// Natural-log probability of `token` following `history` (most recent last).
    fn log_prob(&self, history: &[usize], token: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: Vec<usize>,
    /// Log prefix probability plus any weighted LM contribution.
    pub score: f64,
    /// Log prefix probability alone.
    pub acoustic: f64,
}

/// Optional shallow-fusion configuration for [`beam_decode`].
pub struct Fusion<'a> {
    pub lm: &'a dyn TokenLm,
    pub weight: f64,
}

/// Arena of label prefixes; node 0 is the empty prefix.
struct PrefixArena {
    parent: Vec<u32>,
    label: Vec<u32>,
    len: Vec<u32>,
    children: HashMap<(u32, u32), u32>,
}

impl PrefixArena {
    fn new() -> Self {
        PrefixArena {
            parent: vec![0],
            label: vec![u32::MAX],
            len: vec![0],
            children: HashMap::new(),
        }
    }

    fn child(&mut self, node: u32, label: usize) -> u32 {
        let key = (node, label as u32);
        if let Some(&c) = self.children.get(&key) {
            return c;
        }
        let id = self.parent.len() as u32;
        self.parent.push(node);
        self.label.push(label as u32);
        self.len.push(self.len[node as usize] + 1);
        self.children.insert(key, id);
        id
    }

    fn last(&self, node: u32) -> Option<usize> {
        (node != 0).then(|| self.label[node as usize] as usize)
    }

    fn labels(&self, mut node: u32) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.len[node as usize] as usize);
        while node != 0 {
            out.push(self.label[node as usize] as usize);
            node = self.parent[node as usize];
        }
        out.reverse();
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct BeamEntry {
    node: u32,
    blank: f64,
    non_blank: f64,
    lm: f64,
}

impl BeamEntry {
    fn acoustic(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }

    fn score(&self) -> f64 {
        self.acoustic() + self.lm
    }
}

/// CTC prefix beam search.
///
/// Each prefix carries separate probabilities for alignments ending in blank
/// and in its last label, so alignments that collapse to the same prefix are
/// summed. With `fusion`, `weight·log p_LM` is added once per emitted label.
/// Up to `width` prefixes survive each frame, ranked by score, then by
/// lexicographically smaller (and shorter) label sequence.
pub fn beam_decode(
    lattice: &PosteriorLattice,
    width: usize,
    fusion: Option<&Fusion<'_>>,
) -> Result<Vec<Hypothesis>> {
    if width == 0 {
        return Err(Error::Parameter("beam width must be at least 1".into()));
    }
    let blank = lattice.blank;
    let mut arena = PrefixArena::new();
    let mut beam = vec![BeamEntry {
        node: 0,
        blank: 0.0,
        non_blank: f64::NEG_INFINITY,
        lm: 0.0,
    }];
    let mut next: HashMap<u32, BeamEntry> = HashMap::new();

    for t in 0..lattice.frames {
        next.clear();
        let row = lattice.row(t);
        for entry in &beam {
            let total = entry.acoustic();
            let last = arena.last(entry.node);
            let stay = next.entry(entry.node).or_insert(BeamEntry {
                node: entry.node,
                blank: f64::NEG_INFINITY,
                non_blank: f64::NEG_INFINITY,
                lm: entry.lm,
            });
            stay.blank = log_add(stay.blank, total + row[blank]);
            if let Some(l) = last {
                stay.non_blank = log_add(stay.non_blank, entry.non_blank + row[l]);
            }
            for (c, &lp) in row.iter().enumerate() {
                if c == blank || lp == f64::NEG_INFINITY {
                    continue;
                }
                let from = if Some(c) == last { entry.blank } else { total };
                if from == f64::NEG_INFINITY {
                    continue;
                }
                let child = arena.child(entry.node, c);
                let lm = match fusion {
                    Some(f) if !next.contains_key(&child) => {
                        let history = arena.labels(entry.node);
                        entry.lm + f.weight * f.lm.log_prob(&history, c)
                    }
                    _ => entry.lm,
                };
                let e = next.entry(child).or_insert(BeamEntry {
                    node: child,
                    blank: f64::NEG_INFINITY,
                    non_blank: f64::NEG_INFINITY,
                    lm,
                });
                e.non_blank = log_add(e.non_blank, from + lp);
            }
        }
        let mut entries: Vec<BeamEntry> = next
            .values()
            .copied()
            .filter(|e| e.score() > f64::NEG_INFINITY)
            .collect();
        rank(&mut entries, &arena);
        entries.truncate(width);
        beam = entries;
    }
    rank(&mut beam, &arena);
    Ok(beam
        .iter()
        .map(|e| Hypothesis {
            labels: arena.labels(e.node),
            score: e.score(),
            acoustic: e.acoustic(),
        })
        .collect())
}

fn rank(entries: &mut [BeamEntry], arena: &PrefixArena) {
    entries.sort_by(|a, b| {
        b.score()
            .total_cmp(&a.score())
            .then_with(|| match a.node.cmp(&b.node) {
                Ordering::Equal => Ordering::Equal,
                _ => arena.labels(a.node).cmp(&arena.labels(b.node)),
            })
    });
}
