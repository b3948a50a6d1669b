//! Edit-distance error rates, chance-level estimation, scaling-law fits and
//! a paired permutation test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimal-cost alignment breakdown between a reference and a hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_length: usize,
    pub rate: f64,
    /// Set when the reference was empty and the denominator was floored at 1.
    pub empty_reference: bool,
}

impl ErrorReport {
    pub fn distance(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Unit-cost Levenshtein alignment.
///
/// Among all minimal-cost alignments the one with the most substitutions is
/// chosen (substitution preferred over an insertion/deletion pair). Because
/// `I − D = |hyp| − |ref|`, the breakdown is unique and swapping the
/// arguments swaps insertions with deletions exactly.
pub fn levenshtein<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> ErrorReport {
    let n = reference.len();
    let m = hypothesis.len();
    let w = m + 1;
    // (distance, substitutions): minimize the first, maximize the second
    let better = |a: (usize, usize), b: (usize, usize)| a.0 < b.0 || (a.0 == b.0 && a.1 > b.1);
    let mut d = vec![(0usize, 0usize); (n + 1) * w];
    for i in 0..=n {
        d[i * w] = (i, 0);
    }
    for j in 0..=m {
        d[j] = (j, 0);
    }
    for i in 1..=n {
        for j in 1..=m {
            let diff = usize::from(reference[i - 1] != hypothesis[j - 1]);
            let diag = d[(i - 1) * w + j - 1];
            let mut best = (diag.0 + diff, diag.1 + diff);
            let del = d[(i - 1) * w + j];
            if better((del.0 + 1, del.1), best) {
                best = (del.0 + 1, del.1);
            }
            let ins = d[i * w + j - 1];
            if better((ins.0 + 1, ins.1), best) {
                best = (ins.0 + 1, ins.1);
            }
            d[i * w + j] = best;
        }
    }
    let (dist, s) = d[n * w + m];
    // I + D = dist − S and I − D = m − n
    let rest = dist - s;
    let ins = if m >= n { (rest + (m - n)) / 2 } else { (rest - (n - m)) / 2 };
    let del = rest - ins;
    let denom = n.max(1);
    ErrorReport {
        substitutions: s,
        insertions: ins,
        deletions: del,
        reference_length: n,
        rate: (s + ins + del) as f64 / denom as f64,
        empty_reference: n == 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Phoneme,
    Word,
    Char,
}

/// Splits a transcript into scoring tokens for the given unit.
///
/// Phoneme and word inputs are whitespace tokens; characters are taken from
/// the whitespace-normalized string, spaces included.
pub fn tokenize(text: &str, unit: Unit) -> Vec<String> {
    match unit {
        Unit::Phoneme | Unit::Word => text.split_whitespace().map(str::to_string).collect(),
        Unit::Char => text
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ")
            .chars()
            .map(|c| c.to_string())
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusRate {
    pub rate: f64,
    pub errors: usize,
    pub reference_length: usize,
    pub sentences: usize,
    pub pooled: bool,
}

/// Corpus error rate over token sequences.
///
/// Pooled: `Σ(S+I+D) / Σ|ref|`. Otherwise the mean of per-sentence rates.
pub fn corpus_rates<T: PartialEq>(refs: &[Vec<T>], hyps: &[Vec<T>], pooled: bool) -> Result<CorpusRate> {
    if refs.len() != hyps.len() {
        return Err(Error::Parameter(format!(
            "{} references but {} hypotheses",
            refs.len(),
            hyps.len()
        )));
    }
    let reports: Vec<ErrorReport> = refs.iter().zip(hyps).map(|(r, h)| levenshtein(r, h)).collect();
    let errors: usize = reports.iter().map(ErrorReport::distance).sum();
    let reference_length: usize = reports.iter().map(|r| r.reference_length).sum();
    let rate = if pooled {
        errors as f64 / reference_length.max(1) as f64
    } else if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|r| r.rate).sum::<f64>() / reports.len() as f64
    };
    Ok(CorpusRate {
        rate,
        errors,
        reference_length,
        sentences: refs.len(),
        pooled,
    })
}

/// Monte-Carlo corpus error rate when references and hypotheses are
/// independent uniform draws of matched lengths from `inventory_size` symbols.
pub fn chance_rate(inventory_size: usize, ref_lengths: &[usize], trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Parameter("chance_rate needs at least one trial".into()));
    }
    if inventory_size == 0 {
        return Err(Error::Parameter("inventory must be non-empty".into()));
    }
    let total_ref: usize = ref_lengths.iter().sum();
    if total_ref == 0 {
        return Err(Error::Parameter("reference lengths sum to zero".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..trials {
        let mut errors = 0;
        for &len in ref_lengths {
            let r: Vec<usize> = (0..len).map(|_| rng.gen_range(0..inventory_size)).collect();
            let h: Vec<usize> = (0..len).map(|_| rng.gen_range(0..inventory_size)).collect();
            errors += levenshtein(&r, &h).distance();
        }
        acc += errors as f64 / total_ref as f64;
    }
    Ok(acc / trials as f64)
}

/// `E ≈ α / N^β` fitted by least squares on `(ln N, ln E)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    pub r_squared: f64,
    pub points: Vec<(f64, f64)>,
}

impl ScalingFit {
    pub fn predict(&self, n: f64) -> f64 {
        self.alpha / n.powf(self.beta)
    }
}

pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 2 {
        return Err(Error::Parameter("scaling fit needs at least two points".into()));
    }
    if let Some(&(n, e)) = points.iter().find(|&&(n, e)| !(n > 0.0 && e > 0.0)) {
        return Err(Error::Parameter(format!(
            "scaling fit needs positive N and E, got ({n}, {e})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("scaling fit needs at least two distinct N".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    // a flat law is fitted exactly even though the total variance is zero
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(ScalingFit {
        alpha: intercept.exp(),
        beta: -slope,
        r_squared,
        points: points.to_vec(),
    })
}

/// Two-sided paired permutation (sign-flip) test on per-item differences.
///
/// Returns the fraction of random sign assignments whose absolute mean
/// difference is at least the observed one (with the +1 correction).
pub fn paired_permutation_test(a: &[f64], b: &[f64], rounds: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Parameter("paired test needs equal, non-empty samples".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>().abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut extreme = 0usize;
    for _ in 0..rounds {
        let s: f64 = diffs
            .iter()
            .map(|d| if rng.gen::<bool>() { *d } else { -*d })
            .sum();
        if s.abs() >= observed - 1e-12 {
            extreme += 1;
        }
    }
    Ok((extreme + 1) as f64 / (rounds + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_distance(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = brute_distance(ra, rb) + usize::from(x != y);
                let del = brute_distance(ra, b) + 1;
                let ins = brute_distance(a, rb) + 1;
                sub.min(del).min(ins)
            }
        }
    }

    #[test]
    fn friday_deletion() {
        let r = ["f", "r", "iy", "d", "ay"];
        let h = ["f", "iy", "d", "ay"];
        let rep = levenshtein(&r, &h);
        assert_eq!((rep.substitutions, rep.insertions, rep.deletions), (0, 0, 1));
        assert!((rep.rate - 0.2).abs() < 1e-15);
        assert_eq!(levenshtein(&r, &r).rate, 0.0);
    }

    #[test]
    fn substitution_preferred() {
        let rep = levenshtein(&["a"], &["b"]);
        assert_eq!((rep.substitutions, rep.insertions, rep.deletions), (1, 0, 0));
    }

    #[test]
    fn empty_reference_is_flagged() {
        let rep = levenshtein::<&str>(&[], &["a", "b"]);
        assert!(rep.empty_reference);
        assert_eq!(rep.insertions, 2);
        assert_eq!(rep.rate, 2.0);
        assert_eq!(levenshtein::<&str>(&[], &[]).rate, 0.0);
    }

    #[test]
    fn random_pairs_match_recursive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a: Vec<u8> = (0..rng.gen_range(0..=8)).map(|_| rng.gen_range(0..3)).collect();
            let b: Vec<u8> = (0..rng.gen_range(0..=8)).map(|_| rng.gen_range(0..3)).collect();
            assert_eq!(levenshtein(&a, &b).distance(), brute_distance(&a, &b));
        }
    }

    #[test]
    fn wer_examples() {
        let refs = vec![tokenize("the cat sat", Unit::Word)];
        let hyps = vec![tokenize("the cat", Unit::Word)];
        let r = corpus_rates(&refs, &hyps, true).unwrap();
        assert!((r.rate - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(corpus_rates(&refs, &refs, true).unwrap().rate, 0.0);
        assert!(corpus_rates(&refs, &[], true).is_err());
    }

    #[test]
    fn pooled_differs_from_mean() {
        // sentence 1: 1 error over 1 token; sentence 2: 0 errors over 9 tokens
        let refs = vec![vec!["a"], vec!["b"; 9]];
        let hyps = vec![vec!["x"], vec!["b"; 9]];
        let pooled = corpus_rates(&refs, &hyps, true).unwrap().rate;
        let mean = corpus_rates(&refs, &hyps, false).unwrap().rate;
        assert!((pooled - 0.1).abs() < 1e-15);
        assert!((mean - 0.5).abs() < 1e-15);
    }

    #[test]
    fn char_tokens() {
        assert_eq!(tokenize(" ab  c ", Unit::Char), vec!["a", "b", " ", "c"]);
    }

    #[test]
    fn chance_rate_examples() {
        assert_eq!(chance_rate(1, &[3, 5], 10, 0).unwrap(), 0.0);
        let five = chance_rate(5, &[1], 10_000, 1).unwrap();
        assert!((five - 0.8).abs() < 0.02, "{five}");
        assert!(chance_rate(5, &[1], 0, 1).is_err());
    }

    #[test]
    fn scaling_examples() {
        let fit = fit_scaling(&[(100.0, 0.2), (400.0, 0.1)]).unwrap();
        assert!((fit.alpha - 2.0).abs() < 1e-12);
        assert!((fit.beta - 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let flat = fit_scaling(&[(10.0, 0.3), (20.0, 0.3), (40.0, 0.3)]).unwrap();
        assert!(flat.beta.abs() < 1e-12);
        assert!((flat.alpha - 0.3).abs() < 1e-12);
        assert!(fit_scaling(&[(1.0, 0.0), (2.0, 1.0)]).is_err());
        assert!(fit_scaling(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn permutation_test_detects_shift() {
        let a: Vec<f64> = (0..30).map(|i| 0.5 + 0.01 * (i % 3) as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x - 0.1).collect();
        assert!(paired_permutation_test(&a, &b, 2000, 0).unwrap() < 0.01);
        assert!(paired_permutation_test(&a, &a, 2000, 0).unwrap() > 0.9);
    }

    proptest! {
        #[test]
        fn symmetric_with_swapped_counts(a in proptest::collection::vec(0u8..4, 0..12),
                                         b in proptest::collection::vec(0u8..4, 0..12)) {
            let ab = levenshtein(&a, &b);
            let ba = levenshtein(&b, &a);
            prop_assert_eq!(ab.distance(), ba.distance());
            prop_assert_eq!(ab.insertions + ab.deletions, ba.insertions + ba.deletions);
            prop_assert_eq!(ab.insertions as isize - ab.deletions as isize,
                            ba.deletions as isize - ba.insertions as isize);
        }

        #[test]
        fn triangle_inequality(a in proptest::collection::vec(0u8..3, 0..10),
                               b in proptest::collection::vec(0u8..3, 0..10),
                               c in proptest::collection::vec(0u8..3, 0..10)) {
            let ac = levenshtein(&a, &c).distance();
            let ab = levenshtein(&a, &b).distance();
            let bc = levenshtein(&b, &c).distance();
            prop_assert!(ac <= ab + bc);
        }

        #[test]
        fn scale_equivariance(c in 0.1f64..100.0, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<(f64, f64)> = (0..5)
                .map(|i| (10f64.powi(i + 1), rng.gen_range(0.05..0.9)))
                .collect();
            let base = fit_scaling(&pts).unwrap();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|&(n, e)| (c * n, e)).collect();
            let fit = fit_scaling(&scaled).unwrap();
            prop_assert!((fit.beta - base.beta).abs() < 1e-12);
            prop_assert!((fit.alpha.ln() - (base.alpha.ln() + base.beta * c.ln())).abs() < 1e-12);
        }
    }
}
