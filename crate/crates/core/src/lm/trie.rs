use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::Lexicon;

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<usize, u32>,
    /// Pronunciations (lexicon entry indices) ending at this node.
    emits: Vec<u32>,
}

/// Phoneme-labelled prefix tree over every pronunciation in a lexicon.
/// Node 0 is the root.
#[derive(Debug, Clone)]
pub struct LexiconTrie {
    nodes: Vec<Node>,
    /// Per pronunciation: word index and phonemes.
    prons: Vec<(u32, Vec<usize>)>,
    words: Vec<String>,
    num_phonemes: usize,
}

impl LexiconTrie {
    pub const ROOT: u32 = 0;

    pub fn new(lexicon: &Lexicon, num_phonemes: usize) -> Result<Self> {
        if lexicon.entries().is_empty() {
            return Err(Error::Parameter("lexicon is empty".into()));
        }
        let mut nodes = vec![Node::default()];
        let mut prons = Vec::new();
        let mut words: Vec<String> = Vec::new();
        let mut word_ids: BTreeMap<&str, u32> = BTreeMap::new();
        for (p, entry) in lexicon.entries().iter().enumerate() {
            if entry.phonemes.is_empty() {
                return Err(Error::Parameter(format!("word {:?} has an empty pronunciation", entry.word)));
            }
            if let Some(&bad) = entry.phonemes.iter().find(|&&x| x >= num_phonemes) {
                return Err(Error::Parameter(format!(
                    "word {:?} uses phoneme id {bad} outside an inventory of {num_phonemes}",
                    entry.word
                )));
            }
            let word = *word_ids.entry(&entry.word).or_insert_with(|| {
                words.push(entry.word.clone());
                (words.len() - 1) as u32
            });
            let mut node = 0usize;
            for &ph in &entry.phonemes {
                node = match nodes[node].children.get(&ph) {
                    Some(&c) => c as usize,
                    None => {
                        nodes.push(Node::default());
                        let c = nodes.len() - 1;
                        nodes[node].children.insert(ph, c as u32);
                        c
                    }
                };
            }
            nodes[node].emits.push(p as u32);
            prons.push((word, entry.phonemes.clone()));
        }
        Ok(LexiconTrie {
            nodes,
            prons,
            words,
            num_phonemes,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_phonemes(&self) -> usize {
        self.num_phonemes
    }

    pub fn child(&self, node: u32, phoneme: usize) -> Option<u32> {
        self.nodes[node as usize].children.get(&phoneme).copied()
    }

    pub fn children(&self, node: u32) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.nodes[node as usize].children.iter().map(|(&p, &c)| (p, c))
    }

    pub fn has_children(&self, node: u32) -> bool {
        !self.nodes[node as usize].children.is_empty()
    }

    /// Pronunciation ids ending at `node`.
    pub fn emits(&self, node: u32) -> &[u32] {
        &self.nodes[node as usize].emits
    }

    pub fn num_pronunciations(&self) -> usize {
        self.prons.len()
    }

    pub fn pronunciation(&self, pron: u32) -> &[usize] {
        &self.prons[pron as usize].1
    }

    pub fn word_of(&self, pron: u32) -> &str {
        &self.words[self.prons[pron as usize].0 as usize]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Follows `phonemes` from the root.
    pub fn walk(&self, phonemes: &[usize]) -> Option<u32> {
        phonemes
            .iter()
            .try_fold(Self::ROOT, |node, &ph| self.child(node, ph))
    }
}
