use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::ctc::TokenLm;
use crate::error::{Error, Result};
use crate::io::write_bytes;

pub const DEFAULT_DISCOUNT: f64 = 0.75;

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";
/// Word separator token for character-level models.
pub const CHAR_SPACE: &str = "<sp>";

/// log10 probability given to `<s>` as a predicted token, and to tokens the
/// model has never seen when it has no `<unk>` entry.
const FLOOR_LOG10: f64 = -99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    log10_prob: f64,
    backoff: Option<f64>,
}

/// Backoff n-gram model with log10 probabilities, as stored in ARPA files.
#[derive(Debug, Clone)]
pub struct NGramModel {
    order: usize,
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    /// `levels[n - 1]` holds the n-grams, keyed by token ids.
    levels: Vec<HashMap<Vec<u32>, Entry>>,
}

impl NGramModel {
    fn empty(order: usize) -> Self {
        NGramModel {
            order,
            vocab: Vec::new(),
            ids: HashMap::new(),
            levels: vec![HashMap::new(); order],
        }
    }

    fn intern(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.vocab.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    pub fn token_id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Number of stored n-grams of length `n`.
    pub fn ngram_count(&self, n: usize) -> usize {
        if n == 0 || n > self.order {
            0
        } else {
            self.levels[n - 1].len()
        }
    }

    /// Every stored context (an n-gram that carries a backoff weight), as tokens.
    pub fn contexts(&self) -> Vec<Vec<&str>> {
        let mut out: Vec<Vec<&str>> = self
            .levels
            .iter()
            .flat_map(|level| level.iter())
            .filter(|(_, e)| e.backoff.is_some())
            .map(|(k, _)| k.iter().map(|&i| self.vocab[i as usize].as_str()).collect())
            .collect();
        out.sort();
        out
    }

    /// Tokens that can be predicted, i.e. everything except `<s>`.
    pub fn predictable(&self) -> impl Iterator<Item = &str> {
        self.vocab.iter().map(String::as_str).filter(|t| *t != SENTENCE_START)
    }

    /// log10 p(token | context) by backoff. Only the last `order - 1`
    /// context tokens are used; an unknown context token cuts the context.
    pub fn log10_prob(&self, context: &[&str], token: &str) -> f64 {
        let unk = self.token_id(UNKNOWN);
        let mut ctx = Vec::with_capacity(context.len());
        for t in context {
            match self.token_id(t).or(unk) {
                Some(id) => ctx.push(id),
                None => ctx.clear(),
            }
        }
        match self.token_id(token).or(unk) {
            Some(id) => self.log10_prob_ids(&ctx, id),
            None => FLOOR_LOG10 + self.backoff_sum(&ctx),
        }
    }

    /// Sum of the backoff weights met while backing off all the way to the
    /// empty context.
    fn backoff_sum(&self, ctx: &[u32]) -> f64 {
        let keep = ctx.len().min(self.order - 1);
        let ctx = &ctx[ctx.len() - keep..];
        (0..ctx.len()).map(|s| self.backoff(&ctx[s..])).sum()
    }

    fn backoff(&self, ctx: &[u32]) -> f64 {
        self.levels[ctx.len() - 1]
            .get(ctx)
            .and_then(|e| e.backoff)
            .unwrap_or(0.0)
    }

    pub fn log10_prob_ids(&self, context: &[u32], token: u32) -> f64 {
        let keep = context.len().min(self.order - 1);
        let ctx = &context[context.len() - keep..];
        let mut acc = 0.0;
        let mut key: Vec<u32> = Vec::with_capacity(ctx.len() + 1);
        for start in 0..=ctx.len() {
            let h = &ctx[start..];
            key.clear();
            key.extend_from_slice(h);
            key.push(token);
            if let Some(e) = self.levels[h.len()].get(&key) {
                return acc + e.log10_prob;
            }
            if !h.is_empty() {
                acc += self.backoff(h);
            }
        }
        acc + FLOOR_LOG10
    }

    /// log10 probability of a whole sentence, including the end marker when
    /// the model has one.
    pub fn sentence_log10(&self, tokens: &[&str]) -> f64 {
        let mut ctx: Vec<&str> = Vec::new();
        if self.ids.contains_key(SENTENCE_START) {
            ctx.push(SENTENCE_START);
        }
        let mut total = 0.0;
        for t in tokens {
            total += self.log10_prob(&ctx, t);
            ctx.push(t);
        }
        total + self.end_log10(&ctx)
    }

    /// log10 p(`</s>` | context), or 0 for models without sentence markers.
    pub fn end_log10(&self, context: &[&str]) -> f64 {
        if self.ids.contains_key(SENTENCE_END) {
            self.log10_prob(context, SENTENCE_END)
        } else {
            0.0
        }
    }

    /// ARPA text with every value printed in shortest round-trip form.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for (n, level) in self.levels.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", n + 1, level.len());
        }
        for (n, level) in self.levels.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", n + 1);
            let sorted: BTreeMap<Vec<&str>, &Entry> = level
                .iter()
                .map(|(k, e)| (k.iter().map(|&i| self.vocab[i as usize].as_str()).collect(), e))
                .collect();
            for (tokens, e) in sorted {
                let _ = write!(out, "{}\t{}", e.log10_prob, tokens.join(" "));
                if let Some(b) = e.backoff {
                    let _ = write!(out, "\t{b}");
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn save_arpa(&self, path: &Path) -> Result<()> {
        write_bytes(path, self.to_arpa().as_bytes())
    }
}

/// Adapter so that an n-gram model over symbol strings can score label ids
/// during CTC prefix search. Scores are natural logs.
pub struct SymbolLm<'a> {
    pub model: &'a NGramModel,
    pub symbols: &'a [String],
}

impl TokenLm for SymbolLm<'_> {
    fn log_prob(&self, history: &[usize], token: usize) -> f64 {
        let mut ctx: Vec<&str> = Vec::with_capacity(history.len() + 1);
        if self.model.token_id(SENTENCE_START).is_some() {
            ctx.push(SENTENCE_START);
        }
        ctx.extend(history.iter().map(|&h| self.symbols[h].as_str()));
        self.model.log10_prob(&ctx, &self.symbols[token]) * std::f64::consts::LN_10
    }
}

/// Splits text into the character tokens used by character-level models.
pub fn char_tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .chars()
        .map(|c| if c == ' ' { CHAR_SPACE.to_string() } else { c.to_string() })
        .collect()
}

/// Trains an interpolated Kneser-Ney model with a fixed discount.
///
/// Sentences are wrapped in `<s>`/`</s>` when `order > 1`. Orders below the
/// top use continuation counts, except for n-grams that begin with `<s>`.
/// An order-1 model is the plain maximum-likelihood unigram distribution
/// over the corpus tokens, without sentence markers.
pub fn train_ngram(corpus: &[Vec<String>], order: usize, discount: f64) -> Result<NGramModel> {
    if order == 0 {
        return Err(Error::Parameter("n-gram order must be at least 1".into()));
    }
    if !(discount > 0.0 && discount < 1.0) {
        return Err(Error::Parameter(format!("discount {discount} outside (0, 1)")));
    }
    if corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::Parameter("language model corpus is empty".into()));
    }
    if let Some(bad) = corpus
        .iter()
        .flatten()
        .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
    {
        return Err(Error::Parameter(format!("invalid LM token {bad:?}")));
    }
    let mut model = NGramModel::empty(order);
    if order == 1 {
        return Ok(train_unigram(model, corpus));
    }

    let bos = model.intern(SENTENCE_START);
    let eos = model.intern(SENTENCE_END);
    let sentences: Vec<Vec<u32>> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| {
            let mut ids = vec![bos];
            ids.extend(s.iter().map(|t| model.intern(t)));
            ids.push(eos);
            ids
        })
        .collect();

    let mut raw: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    for s in &sentences {
        for n in 1..=order {
            for w in s.windows(n) {
                *raw[n - 1].entry(w.to_vec()).or_default() += 1;
            }
        }
    }
    // Counts actually used at each level.
    let mut adjusted: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    adjusted[order - 1] = raw[order - 1].clone();
    for n in 1..order {
        let mut cont: HashMap<Vec<u32>, u64> = HashMap::new();
        for k in raw[n].keys() {
            *cont.entry(k[1..].to_vec()).or_default() += 1;
        }
        for (k, &c) in &raw[n - 1] {
            let a = if k[0] == bos { c } else { cont.get(k).copied().unwrap_or(0) };
            if a > 0 {
                adjusted[n - 1].insert(k.clone(), a);
            }
        }
    }

    let total: u64 = adjusted[0]
        .iter()
        .filter(|(k, _)| k[0] != bos)
        .map(|(_, &c)| c)
        .sum();
    for (k, &c) in &adjusted[0] {
        let log10_prob = if k[0] == bos {
            FLOOR_LOG10
        } else {
            (c as f64 / total as f64).log10()
        };
        model.levels[0].insert(k.clone(), Entry { log10_prob, backoff: None });
    }

    for n in 2..=order {
        // (total count, distinct followers) per context
        let mut ctx_stats: HashMap<&[u32], (u64, u64)> = HashMap::new();
        for (k, &c) in &adjusted[n - 1] {
            let s = ctx_stats.entry(&k[..n - 1]).or_default();
            s.0 += c;
            s.1 += 1;
        }
        let mut gammas: HashMap<Vec<u32>, f64> = HashMap::new();
        for (h, &(c, followers)) in &ctx_stats {
            let gamma = discount * followers as f64 / c as f64;
            let entry = model.levels[n - 2].get_mut(*h).ok_or_else(|| {
                Error::Numeric(format!("context of length {} missing from the model", n - 1))
            })?;
            entry.backoff = Some(gamma.log10());
            gammas.insert(h.to_vec(), gamma);
        }
        let mut level = HashMap::with_capacity(adjusted[n - 1].len());
        for (k, &c) in &adjusted[n - 1] {
            let h = &k[..n - 1];
            let (ctx_total, _) = ctx_stats[h];
            let lower = 10f64.powf(model.log10_prob_ids(&k[1..n - 1], k[n - 1]));
            let p = (c as f64 - discount) / ctx_total as f64 + gammas[h] * lower;
            level.insert(k.clone(), Entry { log10_prob: p.log10(), backoff: None });
        }
        model.levels[n - 1] = level;
    }
    Ok(model)
}

fn train_unigram(mut model: NGramModel, corpus: &[Vec<String>]) -> NGramModel {
    let mut counts: HashMap<u32, u64> = HashMap::new();
    let mut total = 0u64;
    for t in corpus.iter().flatten() {
        *counts.entry(model.intern(t)).or_default() += 1;
        total += 1;
    }
    for (id, c) in counts {
        model.levels[0].insert(
            vec![id],
            Entry {
                log10_prob: (c as f64 / total as f64).log10(),
                backoff: None,
            },
        );
    }
    model
}

pub fn load_arpa(path: &Path) -> Result<NGramModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_arpa(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn arpa_error(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Format(format!("ARPA line {line}: {msg}"))
}

/// Parses ARPA text, verifying the `\data\` counts against the entries.
pub fn parse_arpa(text: &str) -> Result<NGramModel> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut last_line = 0;

    // header
    loop {
        match lines.next() {
            Some((n, "\\data\\")) => {
                last_line = n;
                break;
            }
            Some((n, l)) if l.is_empty() => last_line = n,
            Some((n, l)) => return Err(arpa_error(n, format!("expected \\data\\, found {l:?}"))),
            None => return Err(arpa_error(last_line + 1, "missing \\data\\ header")),
        }
    }
    let mut declared: Vec<usize> = Vec::new();
    let mut pending = None;
    for (n, l) in lines.by_ref() {
        last_line = n;
        if l.is_empty() {
            if !declared.is_empty() {
                break;
            }
            continue;
        }
        if let Some(rest) = l.strip_prefix("ngram ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| arpa_error(n, format!("malformed count line {l:?}")))?;
            let k: usize = k.trim().parse().map_err(|_| arpa_error(n, "bad n-gram order"))?;
            let v: usize = v.trim().parse().map_err(|_| arpa_error(n, "bad n-gram count"))?;
            if k != declared.len() + 1 {
                return Err(arpa_error(n, format!("expected ngram {}, found {k}", declared.len() + 1)));
            }
            declared.push(v);
        } else {
            pending = Some((n, l));
            break;
        }
    }
    if declared.is_empty() {
        return Err(arpa_error(last_line, "no ngram counts in \\data\\ section"));
    }
    let order = declared.len();
    let mut model = NGramModel::empty(order);
    let mut section: Option<(usize, usize)> = None; // (order, header line)
    let mut ended = false;

    let close = |model: &NGramModel, section: Option<(usize, usize)>, at: usize| -> Result<()> {
        if let Some((k, _)) = section {
            let found = model.levels[k - 1].len();
            if found != declared[k - 1] {
                return Err(arpa_error(
                    at,
                    format!("\\data\\ declares {} {k}-grams but the section has {found}", declared[k - 1]),
                ));
            }
        }
        Ok(())
    };

    let rest = pending.into_iter().chain(lines);
    for (n, l) in rest {
        last_line = n;
        if l.is_empty() {
            continue;
        }
        if l == "\\end\\" {
            close(&model, section, n)?;
            ended = true;
            break;
        }
        if let Some(k) = l
            .strip_prefix('\\')
            .and_then(|s| s.strip_suffix("-grams:"))
        {
            close(&model, section, n)?;
            let k: usize = k.parse().map_err(|_| arpa_error(n, format!("bad section {l:?}")))?;
            let expected = section.map_or(1, |(p, _)| p + 1);
            if k != expected || k > order {
                return Err(arpa_error(n, format!("unexpected section {l:?}")));
            }
            section = Some((k, n));
            continue;
        }
        let (k, _) = section.ok_or_else(|| arpa_error(n, format!("entry outside a section: {l:?}")))?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() != k + 1 && !(k < order && fields.len() == k + 2) {
            return Err(arpa_error(n, format!("expected {k} tokens in {l:?}")));
        }
        let log10_prob: f64 = fields[0]
            .parse()
            .map_err(|_| arpa_error(n, format!("bad probability {:?}", fields[0])))?;
        let backoff = match fields.get(k + 1) {
            Some(b) => Some(b.parse::<f64>().map_err(|_| arpa_error(n, format!("bad backoff {b:?}")))?),
            None => None,
        };
        let mut key = Vec::with_capacity(k);
        for t in &fields[1..=k] {
            let id = if k == 1 {
                model.intern(t)
            } else {
                model
                    .token_id(t)
                    .ok_or_else(|| arpa_error(n, format!("token {t:?} has no unigram entry")))?
            };
            key.push(id);
        }
        if model.levels[k - 1].insert(key, Entry { log10_prob, backoff }).is_some() {
            return Err(arpa_error(n, format!("duplicate n-gram {l:?}")));
        }
    }
    if !ended {
        return Err(arpa_error(last_line + 1, "missing \\end\\ marker"));
    }
    if let Some((k, _)) = section {
        if k != order {
            return Err(arpa_error(last_line, format!("sections stop at {k}-grams, expected {order}")));
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn corpus(lines: &[&str]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.split_whitespace().map(str::to_string).collect())
            .collect()
    }

    fn p(m: &NGramModel, ctx: &[&str], t: &str) -> f64 {
        10f64.powf(m.log10_prob(ctx, t))
    }

    #[test]
    fn hand_worked_bigram_table() {
        // <s> a b a b </s>: c(a b) = 2, c(a .) = 2, one follower type after a.
        // Continuation counts: N(. a) = 2, N(. b) = 1, N(. </s>) = 1, total 4.
        let m = train_ngram(&corpus(&["a b a b"]), 2, 0.75).unwrap();
        let gamma_a = 0.75 * 1.0 / 2.0;
        assert!((p(&m, &["a"], "b") - (1.25 / 2.0 + gamma_a * 0.25)).abs() < 1e-12);
        assert!((p(&m, &["a"], "a") - gamma_a * 0.5).abs() < 1e-12);
        assert!((p(&m, &["a"], "</s>") - gamma_a * 0.25).abs() < 1e-12);
        assert!((p(&m, &[], "a") - 0.5).abs() < 1e-12);
        // b is followed by a once and by </s> once
        let gamma_b = 0.75 * 2.0 / 2.0;
        assert!((p(&m, &["b"], "a") - (0.25 / 2.0 + gamma_b * 0.5)).abs() < 1e-12);
        assert_eq!(m.log10_prob(&[], "<s>"), -99.0);
    }

    #[test]
    fn unigram_is_maximum_likelihood() {
        let m = train_ngram(&corpus(&["a a b"]), 1, 0.75).unwrap();
        assert!((p(&m, &[], "a") - 2.0 / 3.0).abs() < 1e-12);
        assert!((p(&m, &[], "b") - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.end_log10(&["a"]), 0.0);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(matches!(train_ngram(&[], 3, 0.75), Err(Error::Parameter(_))));
        assert!(matches!(train_ngram(&corpus(&[""]), 3, 0.75), Err(Error::Parameter(_))));
        assert!(train_ngram(&corpus(&["a"]), 0, 0.75).is_err());
        assert!(train_ngram(&corpus(&["a"]), 2, 1.5).is_err());
    }

    fn random_corpus(rng: &mut impl Rng, sentences: usize, vocab: usize) -> Vec<Vec<String>> {
        (0..sentences)
            .map(|_| {
                let len = rng.gen_range(1..8);
                (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
            })
            .collect()
    }

    #[test]
    fn every_context_is_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for order in 1..=4 {
            let m = train_ngram(&random_corpus(&mut rng, 30, 6), order, 0.75).unwrap();
            let mut contexts = m.contexts();
            contexts.push(vec![]);
            for ctx in contexts {
                let total: f64 = m.predictable().map(|t| p(&m, &ctx, t)).sum();
                assert!((total - 1.0).abs() < 1e-9, "order {order} ctx {ctx:?}: {total}");
            }
        }
    }

    #[test]
    fn unseen_context_sums_to_one() {
        let m = train_ngram(&corpus(&["a b c", "c b a", "a a"]), 3, 0.75).unwrap();
        let total: f64 = m.predictable().map(|t| p(&m, &["c", "c"], t)).sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    const MINIMAL: &str = "\\data\\\nngram 1=2\n\n\\1-grams:\n-0.30103\ta\n-0.4\tb\n\n\\end\\\n";

    #[test]
    fn minimal_arpa_reads_back_exactly() {
        let m = parse_arpa(MINIMAL).unwrap();
        assert_eq!(m.log10_prob(&[], "a"), -0.30103);
        assert_eq!(m.log10_prob(&["a"], "b"), -0.4);
    }

    #[test]
    fn unseen_bigram_backs_off() {
        let text = "\\data\\\nngram 1=3\nngram 2=1\n\n\\1-grams:\n-1.0\t<s>\t-0.25\n-0.5\ta\t-0.125\n\
                    -0.7\tb\n\n\\2-grams:\n-0.1\ta a\n\n\\end\\\n";
        let m = parse_arpa(text).unwrap();
        assert_eq!(m.log10_prob(&["a"], "a"), -0.1);
        assert_eq!(m.log10_prob(&["a"], "b"), -0.7 + -0.125);
        assert_eq!(m.log10_prob(&["b"], "a"), -0.5);
    }

    #[test]
    fn arpa_errors_carry_line_numbers() {
        let truncated = MINIMAL.replace("\\end\\\n", "");
        match parse_arpa(&truncated) {
            Err(Error::Format(m)) => assert!(m.contains("line 8") && m.contains("end"), "{m}"),
            other => panic!("{other:?}"),
        }
        let miscounted = MINIMAL.replace("ngram 1=2", "ngram 1=3");
        match parse_arpa(&miscounted) {
            Err(Error::Format(m)) => assert!(m.contains("line 8"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(parse_arpa("hello").is_err());
        assert!(parse_arpa(&MINIMAL.replace("-0.4\tb", "-0.4\tb c")).is_err());
    }

    #[test]
    fn round_trip_preserves_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = train_ngram(&random_corpus(&mut rng, 40, 8), 4, 0.75).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.arpa");
        m.save_arpa(&path).unwrap();
        let back = load_arpa(&path).unwrap();
        assert_eq!(back.order(), 4);
        let vocab: Vec<&str> = m.vocabulary().iter().map(String::as_str).collect();
        for _ in 0..1000 {
            let n = rng.gen_range(0..4);
            let ctx: Vec<&str> = (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
            let t = vocab[rng.gen_range(0..vocab.len())];
            assert_eq!(m.log10_prob(&ctx, t).to_bits(), back.log10_prob(&ctx, t).to_bits());
        }
        assert_eq!(m.to_arpa(), back.to_arpa());
    }

    #[test]
    fn unknown_tokens() {
        let m = train_ngram(&corpus(&["a b"]), 2, 0.75).unwrap();
        assert!(m.log10_prob(&["zzz"], "a").is_finite());
        assert!(m.log10_prob(&["a"], "zzz") <= -99.0);
    }

    #[test]
    fn char_tokenization() {
        assert_eq!(char_tokens(" ab  c"), vec!["a", "b", "<sp>", "c"]);
    }

    #[test]
    fn symbol_adapter_uses_natural_log() {
        let m = train_ngram(&corpus(&["x y"]), 2, 0.75).unwrap();
        let symbols = vec!["x".to_string(), "y".to_string()];
        let lm = SymbolLm { model: &m, symbols: &symbols };
        let expect = m.log10_prob(&["<s>", "x"], "y") * std::f64::consts::LN_10;
        assert!((lm.log_prob(&[0], 1) - expect).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn backoff_queries_are_total(seed in 0u64..500, n in 0usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = train_ngram(&random_corpus(&mut rng, 10, 5), 3, 0.75).unwrap();
            let vocab: Vec<&str> = m.vocabulary().iter().map(String::as_str).collect();
            let ctx: Vec<&str> = (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())]).collect();
            for t in m.predictable() {
                let lp = m.log10_prob(&ctx, t);
                prop_assert!(lp.is_finite() && lp <= 1e-12);
            }
        }
    }
}
