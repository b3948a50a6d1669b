use std::cmp::Ordering;
use std::collections::HashMap;
use std::f64::consts::LN_10;

use crate::ctc::{log_add, PosteriorLattice};
use crate::error::{Error, Result};

use super::ngram::{char_tokens, NGramModel, SENTENCE_START};
use super::trie::LexiconTrie;

/// Composition weights of the decoding graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphWeights {
    /// Multiplies the natural-log LM probability of every word and of `</s>`.
    pub lm_weight: f64,
    /// Added once per emitted word.
    pub word_insertion_penalty: f64,
    /// Phoneme id that may be emitted between words without producing output.
    pub silence: Option<usize>,
}

impl Default for GraphWeights {
    fn default() -> Self {
        GraphWeights {
            lm_weight: 1.0,
            word_insertion_penalty: 0.0,
            silence: None,
        }
    }
}

/// CTC topology (implicit, blank = last class), lexicon trie and optional
/// grammar, searched jointly by [`hlg_decode`]. Without a grammar every
/// word sequence gets LM score zero.
#[derive(Debug, Clone)]
pub struct DecodingGraph {
    trie: LexiconTrie,
    lm: Option<NGramModel>,
    weights: GraphWeights,
}

impl DecodingGraph {
    pub fn new(trie: LexiconTrie, lm: Option<NGramModel>, weights: GraphWeights) -> Result<Self> {
        if let Some(s) = weights.silence {
            if s >= trie.num_phonemes() {
                return Err(Error::Parameter(format!("silence id {s} outside the phoneme inventory")));
            }
        }
        if !weights.lm_weight.is_finite() || !weights.word_insertion_penalty.is_finite() {
            return Err(Error::Parameter("graph weights must be finite".into()));
        }
        Ok(DecodingGraph { trie, lm, weights })
    }

    pub fn trie(&self) -> &LexiconTrie {
        &self.trie
    }

    pub fn lm(&self) -> Option<&NGramModel> {
        self.lm.as_ref()
    }

    pub fn weights(&self) -> &GraphWeights {
        &self.weights
    }

    fn lm_context<'a>(&'a self, history: &[&'a str]) -> Vec<&'a str> {
        let mut ctx = Vec::with_capacity(history.len() + 1);
        if let Some(lm) = &self.lm {
            if lm.token_id(SENTENCE_START).is_some() {
                ctx.push(SENTENCE_START);
            }
        }
        ctx.extend_from_slice(history);
        ctx
    }

    /// Weighted LM score plus insertion penalty for appending `word`.
    pub fn word_score(&self, history: &[&str], word: &str) -> f64 {
        let lm = match &self.lm {
            Some(lm) => self.weights.lm_weight * LN_10 * lm.log10_prob(&self.lm_context(history), word),
            None => 0.0,
        };
        lm + self.weights.word_insertion_penalty
    }

    /// Weighted end-of-sentence score after `history`.
    pub fn end_score(&self, history: &[&str]) -> f64 {
        match &self.lm {
            Some(lm) => self.weights.lm_weight * LN_10 * lm.end_log10(&self.lm_context(history)),
            None => 0.0,
        }
    }

    /// Total graph score of a complete word sequence.
    pub fn sentence_score(&self, words: &[&str]) -> f64 {
        let mut total = 0.0;
        for i in 0..words.len() {
            total += self.word_score(&words[..i], words[i]);
        }
        total + self.end_score(words)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordHypothesis {
    pub words: Vec<String>,
    /// Concatenated pronunciations of `words`.
    pub phonemes: Vec<usize>,
    /// Acoustic + graph score.
    pub score: f64,
    /// Acoustic part alone: log-sum over the alignments kept by the search.
    pub acoustic: f64,
}

impl WordHypothesis {
    pub fn text(&self) -> String {
        self.words.join(" ")
    }
}

/// Complete hypotheses, best first. Empty when no word sequence survived.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HlgResult {
    pub hypotheses: Vec<WordHypothesis>,
}

impl HlgResult {
    pub fn best(&self) -> Option<&WordHypothesis> {
        self.hypotheses.first()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct HistoryNode {
    parent: u32,
    pron: u32,
    /// Accumulated graph score of the sequence ending here.
    graph: f64,
}

/// Pronunciation sequences stored as a tree; node 0 is the empty sequence.
struct Histories {
    nodes: Vec<HistoryNode>,
    lookup: HashMap<(u32, u32), u32>,
}

impl Histories {
    fn new() -> Self {
        Histories {
            nodes: vec![HistoryNode {
                parent: u32::MAX,
                pron: u32::MAX,
                graph: 0.0,
            }],
            lookup: HashMap::new(),
        }
    }

    fn prons(&self, mut h: u32) -> Vec<u32> {
        let mut out = Vec::new();
        while h != 0 {
            let n = self.nodes[h as usize];
            out.push(n.pron);
            h = n.parent;
        }
        out.reverse();
        out
    }

    fn words<'a>(&self, h: u32, trie: &'a LexiconTrie) -> Vec<&'a str> {
        self.prons(h).into_iter().map(|p| trie.word_of(p)).collect()
    }

    fn extend(&mut self, h: u32, pron: u32, graph: &DecodingGraph) -> u32 {
        if let Some(&c) = self.lookup.get(&(h, pron)) {
            return c;
        }
        let words = self.words(h, &graph.trie);
        let score = self.nodes[h as usize].graph + graph.word_score(&words, graph.trie.word_of(pron));
        self.nodes.push(HistoryNode {
            parent: h,
            pron,
            graph: score,
        });
        let c = (self.nodes.len() - 1) as u32;
        self.lookup.insert((h, pron), c);
        c
    }

    fn graph(&self, h: u32) -> f64 {
        self.nodes[h as usize].graph
    }
}

const NO_LABEL: u32 = u32::MAX;

/// Search state: pronunciation history, trie node, last emitted phoneme.
type Key = (u32, u32, u32);

#[derive(Debug, Clone, Copy)]
struct Token {
    blank: f64,
    non_blank: f64,
}

impl Token {
    const EMPTY: Token = Token {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn acoustic(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

fn add_non_blank(next: &mut HashMap<Key, Token>, key: Key, v: f64) {
    if v > f64::NEG_INFINITY {
        let t = next.entry(key).or_insert(Token::EMPTY);
        t.non_blank = log_add(t.non_blank, v);
    }
}

/// Frame-synchronous token passing over (history, trie node, last phoneme)
/// states with per-frame top-`width` pruning.
///
/// Each word sequence is scored as the CTC log-probability of its
/// concatenated pronunciation plus the graph score of
/// [`DecodingGraph::sentence_score`]. Only hypotheses that end on a word
/// boundary and contain at least one word are returned.
pub fn hlg_decode(lattice: &PosteriorLattice, graph: &DecodingGraph, width: usize) -> Result<HlgResult> {
    if width == 0 {
        return Err(Error::Parameter("beam width must be at least 1".into()));
    }
    let trie = &graph.trie;
    let blank = trie.num_phonemes();
    if lattice.classes() != blank + 1 || lattice.blank() != blank {
        return Err(Error::Parameter(format!(
            "lattice has {} classes with blank {}, lexicon expects {} with blank {blank}",
            lattice.classes(),
            lattice.blank(),
            blank + 1
        )));
    }
    let silence = graph.weights.silence;
    let mut histories = Histories::new();
    let mut beam: Vec<(Key, Token)> = vec![(
        (0, LexiconTrie::ROOT, NO_LABEL),
        Token {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];
    let mut next: HashMap<Key, Token> = HashMap::new();

    for t in 0..lattice.frames() {
        next.clear();
        let row = lattice.row(t);
        for &(key, tok) in &beam {
            let (hist, node, last) = key;
            let total = tok.acoustic();
            let stay = next.entry(key).or_insert(Token::EMPTY);
            stay.blank = log_add(stay.blank, total + row[blank]);
            if last != NO_LABEL {
                stay.non_blank = log_add(stay.non_blank, tok.non_blank + row[last as usize]);
            }
            let source = |ph: usize| if last == ph as u32 { tok.blank } else { total };
            if node == LexiconTrie::ROOT {
                if let Some(s) = silence {
                    add_non_blank(&mut next, (hist, node, s as u32), source(s) + row[s]);
                }
            }
            for (ph, child) in trie.children(node) {
                let v = source(ph) + row[ph];
                if v == f64::NEG_INFINITY {
                    continue;
                }
                if trie.has_children(child) {
                    add_non_blank(&mut next, (hist, child, ph as u32), v);
                }
                for &pron in trie.emits(child) {
                    let h2 = histories.extend(hist, pron, graph);
                    add_non_blank(&mut next, (h2, LexiconTrie::ROOT, ph as u32), v);
                }
            }
        }
        let mut entries: Vec<(Key, Token, f64)> = next
            .iter()
            .map(|(&k, &tok)| (k, tok, tok.acoustic() + histories.graph(k.0)))
            .filter(|e| e.2 > f64::NEG_INFINITY)
            .collect();
        entries.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        entries.truncate(width);
        beam = entries.into_iter().map(|(k, tok, _)| (k, tok)).collect();
    }

    // Sum the word-boundary states of each history.
    let mut finals: HashMap<u32, f64> = HashMap::new();
    for &((hist, node, _), tok) in &beam {
        if node == LexiconTrie::ROOT && hist != 0 {
            let a = finals.entry(hist).or_insert(f64::NEG_INFINITY);
            *a = log_add(*a, tok.acoustic());
        }
    }
    let mut hypotheses: Vec<WordHypothesis> = finals
        .into_iter()
        .map(|(hist, acoustic)| {
            let prons = histories.prons(hist);
            let words: Vec<&str> = prons.iter().map(|&p| trie.word_of(p)).collect();
            let score = acoustic + histories.graph(hist) + graph.end_score(&words);
            WordHypothesis {
                words: words.iter().map(|w| w.to_string()).collect(),
                phonemes: prons.iter().flat_map(|&p| trie.pronunciation(p).iter().copied()).collect(),
                score,
                acoustic,
            }
        })
        .collect();
    hypotheses.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.words.cmp(&b.words))
            .then_with(|| a.phonemes.cmp(&b.phonemes))
    });
    Ok(HlgResult { hypotheses })
}

/// A scored text hypothesis for character-level rescoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TextHypothesis {
    pub text: String,
    pub score: f64,
}

/// Adds `weight` times the natural-log character-LM probability of each
/// text (end marker included) and re-sorts, keeping the input order among
/// equal scores.
pub fn char_lm_rescore(hyps: &[TextHypothesis], lm: &NGramModel, weight: f64) -> Vec<TextHypothesis> {
    let mut out: Vec<TextHypothesis> = hyps
        .iter()
        .map(|h| {
            let tokens = char_tokens(&h.text);
            let refs: Vec<&str> = tokens.iter().map(String::as_str).collect();
            let bonus = if weight == 0.0 {
                0.0
            } else {
                weight * LN_10 * lm.sentence_log10(&refs)
            };
            TextHypothesis {
                text: h.text.clone(),
                score: h.score + bonus,
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    out
}
