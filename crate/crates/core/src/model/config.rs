use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::corpus::TagScheme;
use crate::error::{Error, Result};

/// Which input features and attention placements are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Features {
    pub char: bool,
    pub token: bool,
    pub prefix: bool,
    pub suffix: bool,
    pub context: bool,
    /// Windowed attention over the main biLSTM outputs.
    pub attention: bool,
    /// Attention pooling over each token's character states.
    pub char_attention: bool,
    /// Attention pooling over each direction's n-gram states.
    pub ngram_attention: bool,
}

const FEATURE_NAMES: [&str; 8] = [
    "char",
    "token",
    "prefix",
    "suffix",
    "context",
    "attention",
    "char_attention",
    "ngram_attention",
];

impl Features {
    pub const NONE: Features = Features {
        char: false,
        token: false,
        prefix: false,
        suffix: false,
        context: false,
        attention: false,
        char_attention: false,
        ngram_attention: false,
    };

    fn flags(&self) -> [bool; 8] {
        [
            self.char,
            self.token,
            self.prefix,
            self.suffix,
            self.context,
            self.attention,
            self.char_attention,
            self.ngram_attention,
        ]
    }

    fn flag_mut(&mut self, name: &str) -> Option<&mut bool> {
        Some(match name {
            "char" => &mut self.char,
            "token" => &mut self.token,
            "prefix" => &mut self.prefix,
            "suffix" => &mut self.suffix,
            "context" => &mut self.context,
            "attention" => &mut self.attention,
            "char_attention" => &mut self.char_attention,
            "ngram_attention" => &mut self.ngram_attention,
            _ => return None,
        })
    }

    /// True when at least one per-token input feature is enabled.
    pub fn has_input(&self) -> bool {
        self.char || self.token || self.prefix || self.suffix || self.context
    }
}

impl Default for Features {
    fn default() -> Self {
        Features {
            char: true,
            token: true,
            prefix: true,
            context: true,
            attention: true,
            ..Features::NONE
        }
    }
}

impl fmt::Display for Features {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let on: Vec<&str> = FEATURE_NAMES
            .iter()
            .zip(self.flags())
            .filter_map(|(n, on)| on.then_some(*n))
            .collect();
        if on.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&on.join(","))
        }
    }
}

impl FromStr for Features {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut features = Features::NONE;
        let s = s.trim();
        if s == "none" || s.is_empty() {
            return Ok(features);
        }
        for name in s.split(',').map(str::trim) {
            *features
                .flag_mut(name)
                .ok_or_else(|| Error::Config(format!("unknown feature {name:?}")))? = true;
        }
        Ok(features)
    }
}

/// Every hyperparameter of the tagger and its training protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct CediConfig {
    pub ngram_size: usize,
    pub char_dim: usize,
    /// Width of the prefix and suffix embeddings.
    pub prefix_dim: usize,
    pub prefix_threshold: usize,
    pub affix_length: usize,
    pub token_dim: usize,
    pub char_hidden: usize,
    /// Retained for configuration compatibility; affixes are single
    /// embedding rows and have no recurrent encoder.
    pub prefix_hidden: usize,
    pub context_hidden: usize,
    pub main_hidden: usize,
    pub attention_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub tag_scheme: TagScheme,
    pub seed: u64,
    /// Half-width of the attention window; `None` means `ngram_size`.
    pub attention_window: Option<usize>,
    pub chunk_length: usize,
    pub clip_norm: f64,
    pub features: Features,
    /// Whether token embedding rows are updated during training.
    pub tune_token_embeddings: bool,
}

impl Default for CediConfig {
    fn default() -> Self {
        CediConfig {
            ngram_size: 10,
            char_dim: 25,
            prefix_dim: 25,
            prefix_threshold: 20,
            affix_length: 3,
            token_dim: 100,
            char_hidden: 25,
            prefix_hidden: 25,
            context_hidden: 256,
            main_hidden: 100,
            attention_dim: 50,
            dropout: 0.5,
            lr: 0.02,
            max_epochs: 100,
            patience: 15,
            tag_scheme: TagScheme::Bioes,
            seed: 0,
            attention_window: None,
            chunk_length: 500,
            clip_norm: 5.0,
            features: Features::default(),
            tune_token_embeddings: true,
        }
    }
}

pub const CONFIG_KEYS: [&str; 22] = [
    "ngram_size",
    "char_dim",
    "prefix_dim",
    "prefix_threshold",
    "affix_length",
    "token_dim",
    "char_hidden",
    "prefix_hidden",
    "context_hidden",
    "main_hidden",
    "attention_dim",
    "dropout",
    "lr",
    "max_epochs",
    "patience",
    "tag_scheme",
    "seed",
    "attention_window",
    "chunk_length",
    "clip_norm",
    "features",
    "tune_token_embeddings",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl CediConfig {
    pub fn attention_window(&self) -> usize {
        self.attention_window.unwrap_or(self.ngram_size)
    }

    /// Assign one `key = value` pair. Returns `Ok(false)` for keys this
    /// type does not own so callers can layer their own keys on top.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let value = value.trim();
        match key {
            "ngram_size" => self.ngram_size = parse(key, value)?,
            "char_dim" => self.char_dim = parse(key, value)?,
            "prefix_dim" => self.prefix_dim = parse(key, value)?,
            "prefix_threshold" => self.prefix_threshold = parse(key, value)?,
            "affix_length" => self.affix_length = parse(key, value)?,
            "token_dim" => self.token_dim = parse(key, value)?,
            "char_hidden" => self.char_hidden = parse(key, value)?,
            "prefix_hidden" => self.prefix_hidden = parse(key, value)?,
            "context_hidden" => self.context_hidden = parse(key, value)?,
            "main_hidden" => self.main_hidden = parse(key, value)?,
            "attention_dim" => self.attention_dim = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "tag_scheme" => self.tag_scheme = value.parse()?,
            "seed" => self.seed = parse(key, value)?,
            "attention_window" => {
                self.attention_window = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "chunk_length" => self.chunk_length = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "features" => self.features = value.parse()?,
            "tune_token_embeddings" => self.tune_token_embeddings = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Reject configurations that cannot be built or trained.
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("ngram_size", self.ngram_size),
            ("char_dim", self.char_dim),
            ("prefix_dim", self.prefix_dim),
            ("affix_length", self.affix_length),
            ("token_dim", self.token_dim),
            ("char_hidden", self.char_hidden),
            ("prefix_hidden", self.prefix_hidden),
            ("context_hidden", self.context_hidden),
            ("main_hidden", self.main_hidden),
            ("attention_dim", self.attention_dim),
            ("attention_window", self.attention_window()),
            ("chunk_length", self.chunk_length),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Config(format!(
                "clip_norm must be non-negative, got {}",
                self.clip_norm
            )));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !self.features.has_input() {
            return Err(Error::Config("no input feature is enabled".into()));
        }
        if self.features.char_attention && !self.features.char {
            return Err(Error::Config(
                "char_attention requires the char feature".into(),
            ));
        }
        if self.features.ngram_attention && !self.features.context {
            return Err(Error::Config(
                "ngram_attention requires the context feature".into(),
            ));
        }
        Ok(())
    }

    /// Canonical `key = value` text, one key per line in a fixed order.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("ngram_size = {}", self.ngram_size),
            format!("char_dim = {}", self.char_dim),
            format!("prefix_dim = {}", self.prefix_dim),
            format!("prefix_threshold = {}", self.prefix_threshold),
            format!("affix_length = {}", self.affix_length),
            format!("token_dim = {}", self.token_dim),
            format!("char_hidden = {}", self.char_hidden),
            format!("prefix_hidden = {}", self.prefix_hidden),
            format!("context_hidden = {}", self.context_hidden),
            format!("main_hidden = {}", self.main_hidden),
            format!("attention_dim = {}", self.attention_dim),
            format!("dropout = {}", self.dropout),
            format!("lr = {}", self.lr),
            format!("max_epochs = {}", self.max_epochs),
            format!("patience = {}", self.patience),
            format!("tag_scheme = {}", self.tag_scheme),
            format!("seed = {}", self.seed),
        ];
        lines.push(match self.attention_window {
            Some(w) => format!("attention_window = {w}"),
            None => "attention_window = auto".to_string(),
        });
        lines.extend([
            format!("chunk_length = {}", self.chunk_length),
            format!("clip_norm = {}", self.clip_norm),
            format!("features = {}", self.features),
            format!("tune_token_embeddings = {}", self.tune_token_embeddings),
        ]);
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    /// Parse text produced by [`CediConfig::to_text`] or written by hand.
    /// Unknown and repeated keys are rejected; absent keys keep defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = CediConfig::default();
        for (key, value) in parse_pairs(text)? {
            if !config.apply(&key, &value)? {
                return Err(Error::Config(format!("unknown configuration key {key:?}")));
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// `key = value` lines with `#` comments. Each key may appear once.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = HashSet::new();
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
            line: i + 1,
            message: format!("expected `key = value`, found {raw:?}"),
        })?;
        let key = key.trim().to_string();
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("key {key:?} given more than once")));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let c = CediConfig::default();
        c.validate().unwrap();
        assert_eq!(c.attention_window(), 10);
        assert_eq!(CediConfig::from_text(&c.to_text()).unwrap(), c);
        let mut d = c.clone();
        d.dropout = 0.1 + 0.2;
        d.attention_window = Some(4);
        d.features.suffix = true;
        d.tag_scheme = TagScheme::Bio;
        assert_eq!(CediConfig::from_text(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        assert!(matches!(
            CediConfig::from_text("bogus = 1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CediConfig::from_text("lr = 0.1\nlr = 0.2"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            CediConfig::from_text("lr 0.1"),
            Err(Error::Format { line: 1, .. })
        ));
        let c = CediConfig::from_text("# comment\nngram_size = 3  # inline\n\n").unwrap();
        assert_eq!(c.ngram_size, 3);
        assert_eq!(c.attention_window(), 3);
    }

    #[test]
    fn invalid_values_rejected() {
        for text in [
            "dropout = 1.0",
            "main_hidden = 0",
            "patience = 200",
            "features = none",
            "features = attention",
            "features = token,char_attention",
            "features = token,sparkle",
        ] {
            assert!(CediConfig::from_text(text).is_err(), "{text}");
        }
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let text = CediConfig::default().to_text();
        let keys: Vec<String> = parse_pairs(&text)
            .unwrap()
            .into_iter()
            .map(|(k, _)| k)
            .collect();
        assert_eq!(keys, CONFIG_KEYS);
    }

    #[test]
    fn feature_lists() {
        let f: Features = "token, context".parse().unwrap();
        assert!(f.token && f.context && !f.char);
        assert_eq!(f.to_string(), "token,context");
        assert_eq!(
            Features::default().to_string(),
            "char,token,prefix,context,attention"
        );
    }
}
