use std::collections::HashMap;

use super::document::{Document, Token};
use super::tags::{spans_to_tags, TagScheme};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_SYMBOL: &str = "<pad>";
pub const UNK_SYMBOL: &str = "<unk>";

/// Bidirectional symbol ↔ id map with `PAD = 0` and `UNK = 1` reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::from_symbols(Vec::<String>::new())
    }
}

impl Lexicon {
    /// Lexicon over `symbols` (excluding the reserved entries), in order.
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut lex = Lexicon {
            symbols: vec![PAD_SYMBOL.to_string(), UNK_SYMBOL.to_string()],
            index: HashMap::from([(PAD_SYMBOL.to_string(), PAD), (UNK_SYMBOL.to_string(), UNK)]),
        };
        for s in symbols {
            let s = s.into();
            if !lex.index.contains_key(&s) {
                lex.index.insert(s.clone(), lex.symbols.len());
                lex.symbols.push(s);
            }
        }
        lex
    }

    /// Lexicon from counts: descending frequency, then lexicographic order,
    /// keeping only symbols seen at least `min_count` times.
    pub fn from_counts(counts: HashMap<String, usize>, min_count: usize) -> Self {
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_symbols(entries.into_iter().map(|(s, _)| s))
    }

    /// Id of `symbol`, or [`UNK`].
    pub fn id(&self, symbol: &str) -> usize {
        self.index.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> &str {
        &self.symbols[id]
    }

    /// Total size including the reserved ids.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() <= 2
    }

    /// Non-reserved symbols in id order.
    pub fn entries(&self) -> &[String] {
        &self.symbols[2..]
    }
}

/// Lowercased first and last `n` characters; `None` for shorter tokens.
pub fn extract_affixes(token: &Token, n: usize) -> (Option<String>, Option<String>) {
    if n == 0 || token.chars.len() < n {
        return (None, None);
    }
    let lower: Vec<char> = token.lower.chars().collect();
    if lower.len() < n {
        return (None, None);
    }
    let prefix = lower[..n].iter().collect();
    let suffix = lower[lower.len() - n..].iter().collect();
    (Some(prefix), Some(suffix))
}

/// All symbol maps the model looks features up in.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    /// Lowercased token forms; also the context-embedding vocabulary.
    pub tokens: Lexicon,
    /// Case-preserving characters.
    pub chars: Lexicon,
    pub prefixes: Lexicon,
    pub suffixes: Lexicon,
    pub tags: Lexicon,
    pub affix_length: usize,
    pub scheme: TagScheme,
}

impl Vocabulary {
    pub fn token_id(&self, token: &Token) -> usize {
        self.tokens.id(&token.lower)
    }

    pub fn char_ids(&self, token: &Token) -> Vec<usize> {
        let mut buf = [0u8; 4];
        token
            .chars
            .iter()
            .map(|c| self.chars.id(c.encode_utf8(&mut buf)))
            .collect()
    }

    pub fn affix_ids(&self, token: &Token) -> (usize, usize) {
        let (p, s) = extract_affixes(token, self.affix_length);
        (
            p.map_or(UNK, |p| self.prefixes.id(&p)),
            s.map_or(UNK, |s| self.suffixes.id(&s)),
        )
    }

    /// Number of CRF states: every tag id except PAD.
    pub fn num_crf_tags(&self) -> usize {
        self.tags.len() - 1
    }

    /// CRF state index of a tag string (unknown tags land on the UNK state).
    pub fn crf_tag(&self, tag: &str) -> usize {
        self.tags.id(tag) - 1
    }

    pub fn crf_tag_name(&self, state: usize) -> &str {
        self.tags.symbol(state + 1)
    }
}

/// Build every map from training documents. Affix candidates rarer than
/// `affix_threshold` are dropped and later map to UNK.
pub fn build_vocab(
    docs: &[Document],
    affix_threshold: usize,
    affix_length: usize,
    scheme: TagScheme,
) -> Result<Vocabulary> {
    if docs.is_empty() {
        return Err(Error::Domain(
            "cannot build a vocabulary from no documents".into(),
        ));
    }
    if affix_length == 0 {
        return Err(Error::Config("affix length must be at least 1".into()));
    }
    let mut tokens = HashMap::new();
    let mut chars = HashMap::new();
    let mut prefixes = HashMap::new();
    let mut suffixes = HashMap::new();
    let mut tags = HashMap::new();
    for doc in docs {
        for t in &doc.tokens {
            *tokens.entry(t.lower.clone()).or_insert(0) += 1;
            for c in &t.chars {
                *chars.entry(c.to_string()).or_insert(0) += 1;
            }
            let (p, s) = extract_affixes(t, affix_length);
            if let Some(p) = p {
                *prefixes.entry(p).or_insert(0) += 1;
            }
            if let Some(s) = s {
                *suffixes.entry(s).or_insert(0) += 1;
            }
        }
        for tag in spans_to_tags(doc, scheme)? {
            *tags.entry(tag).or_insert(0) += 1;
        }
    }
    Ok(Vocabulary {
        tokens: Lexicon::from_counts(tokens, 1),
        chars: Lexicon::from_counts(chars, 1),
        prefixes: Lexicon::from_counts(prefixes, affix_threshold.max(1)),
        suffixes: Lexicon::from_counts(suffixes, affix_threshold.max(1)),
        tags: Lexicon::from_counts(tags, 1),
        affix_length,
        scheme,
    })
}
