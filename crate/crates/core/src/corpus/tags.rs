use std::fmt;
use std::str::FromStr;

use super::document::{Document, EntitySpan};
use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

/// Span encoding used for per-token labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum TagScheme {
    Bio,
    #[default]
    Bioes,
}

impl FromStr for TagScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bio" | "iob2" => Ok(TagScheme::Bio),
            "bioes" | "iobes" => Ok(TagScheme::Bioes),
            other => Err(Error::Config(format!("unknown tag scheme '{other}'"))),
        }
    }
}

impl fmt::Display for TagScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TagScheme::Bio => "BIO",
            TagScheme::Bioes => "BIOES",
        })
    }
}

/// Reject span sets with overlapping members.
pub fn check_non_overlapping(spans: &[EntitySpan]) -> Result<()> {
    let mut sorted: Vec<&EntitySpan> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.first_token, s.last_token));
    for pair in sorted.windows(2) {
        if pair[0].overlaps(pair[1]) {
            return Err(Error::Annotation(format!(
                "overlapping spans {}({}..{}) and {}({}..{})",
                pair[0].label,
                pair[0].first_token,
                pair[0].last_token,
                pair[1].label,
                pair[1].first_token,
                pair[1].last_token
            )));
        }
    }
    Ok(())
}

/// Encode spans over `len` tokens as one tag per token.
pub fn encode_spans(len: usize, spans: &[EntitySpan], scheme: TagScheme) -> Result<Vec<String>> {
    check_non_overlapping(spans)?;
    let mut tags = vec![OUTSIDE.to_string(); len];
    for s in spans {
        if s.first_token > s.last_token || s.last_token >= len {
            return Err(Error::Annotation(format!(
                "span {}..{} outside a {len}-token document",
                s.first_token, s.last_token
            )));
        }
        for (t, tag) in tags
            .iter_mut()
            .enumerate()
            .take(s.last_token + 1)
            .skip(s.first_token)
        {
            let prefix = match scheme {
                TagScheme::Bio if t == s.first_token => "B",
                TagScheme::Bio => "I",
                TagScheme::Bioes if s.first_token == s.last_token => "S",
                TagScheme::Bioes if t == s.first_token => "B",
                TagScheme::Bioes if t == s.last_token => "E",
                TagScheme::Bioes => "I",
            };
            *tag = format!("{prefix}-{}", s.label);
        }
    }
    Ok(tags)
}

/// Gold spans of `doc` as per-token tags.
pub fn spans_to_tags(doc: &Document, scheme: TagScheme) -> Result<Vec<String>> {
    encode_spans(doc.tokens.len(), &doc.gold_spans, scheme)
}

fn split_tag(tag: &str) -> Option<(char, &str)> {
    let (prefix, label) = tag.split_once('-')?;
    let mut chars = prefix.chars();
    let p = chars.next()?;
    if chars.next().is_some() || label.is_empty() {
        return None;
    }
    matches!(p, 'B' | 'I' | 'E' | 'S').then_some((p, label))
}

/// Decode per-token tags into spans (character offsets left at zero).
///
/// Accepts both schemes. Ill-formed input is repaired: an `I-L` or `E-L`
/// that does not continue an open `L` span starts a new span. Tags that are
/// not of the form `X-L` read as outside.
pub fn tags_to_spans<S: AsRef<str>>(tags: &[S], _scheme: TagScheme) -> Vec<EntitySpan> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, &str)> = None;
    let close = |open: &mut Option<(usize, &str)>, end: usize, spans: &mut Vec<EntitySpan>| {
        if let Some((start, label)) = open.take() {
            spans.push(EntitySpan::tokens_only(start, end, label));
        }
    };
    for (t, tag) in tags.iter().enumerate() {
        let Some((prefix, label)) = split_tag(tag.as_ref()) else {
            close(&mut open, t.wrapping_sub(1), &mut spans);
            continue;
        };
        let continues = matches!(open, Some((_, l)) if l == label);
        match prefix {
            'B' => {
                close(&mut open, t.wrapping_sub(1), &mut spans);
                open = Some((t, label));
            }
            'I' => {
                if !continues {
                    close(&mut open, t.wrapping_sub(1), &mut spans);
                    open = Some((t, label));
                }
            }
            'E' => {
                if !continues {
                    close(&mut open, t.wrapping_sub(1), &mut spans);
                    open = Some((t, label));
                }
                close(&mut open, t, &mut spans);
            }
            _ => {
                close(&mut open, t.wrapping_sub(1), &mut spans);
                spans.push(EntitySpan::tokens_only(t, t, label));
            }
        }
    }
    close(&mut open, tags.len().wrapping_sub(1), &mut spans);
    spans
}
