//! Column format: `surface<TAB>start<TAB>end<TAB>tag`, one token per line,
//! with a blank line between documents.

use std::fmt::Write as _;

use super::document::Document;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnToken {
    pub surface: String,
    pub start: usize,
    pub end: usize,
    pub tag: String,
}

pub type ColumnDocument = Vec<ColumnToken>;

/// Pair each document token with its tag.
pub fn to_columns(doc: &Document, tags: &[String]) -> Result<ColumnDocument> {
    if tags.len() != doc.tokens.len() {
        return Err(Error::dimension(
            "column tags",
            &[doc.tokens.len()],
            &[tags.len()],
        ));
    }
    Ok(doc
        .tokens
        .iter()
        .zip(tags)
        .map(|(t, tag)| ColumnToken {
            surface: t.surface.clone(),
            start: t.start,
            end: t.end,
            tag: tag.clone(),
        })
        .collect())
}

pub fn write_columns(docs: &[ColumnDocument]) -> String {
    let mut out = String::new();
    for (i, doc) in docs.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for t in doc {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", t.surface, t.start, t.end, t.tag);
        }
    }
    out
}

pub fn read_columns(content: &str) -> Result<Vec<ColumnDocument>> {
    let mut docs = Vec::new();
    let mut current = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            docs.push(std::mem::take(&mut current));
            continue;
        }
        let bad = |message: &str| Error::Format {
            line: i + 1,
            message: format!("{message}: {line:?}"),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [surface, start, end, tag] = fields.as_slice() else {
            return Err(bad("expected 4 tab-separated fields"));
        };
        current.push(ColumnToken {
            surface: surface.to_string(),
            start: start.parse().map_err(|_| bad("bad start offset"))?,
            end: end.parse().map_err(|_| bad("bad end offset"))?,
            tag: tag.to_string(),
        });
    }
    if !current.is_empty() {
        docs.push(current);
    }
    Ok(docs)
}
