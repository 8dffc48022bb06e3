//! Brat/i2b2 style standoff annotations: a `.txt` document and an `.ann`
//! file with lines `T<id>\t<LABEL> <start> <end>\t<surface>`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use super::document::{Document, EntitySpan, Token};
use crate::error::{Error, Result};

/// One parsed annotation line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Annotation {
    pub id: String,
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

/// A span whose character range did not fall on token boundaries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SnapWarning {
    pub annotation: String,
    pub original: (usize, usize),
    pub snapped: (usize, usize),
}

/// A loaded document plus any alignment warnings raised on the way.
#[derive(Clone, Debug)]
pub struct Standoff {
    pub document: Document,
    pub warnings: Vec<SnapWarning>,
}

pub fn parse_annotations(content: &str) -> Result<Vec<Annotation>> {
    let mut out = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let bad = |message: &str| Error::Format {
            line: line_no,
            message: format!("{message}: {raw:?}"),
        };
        let mut fields = raw.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        if !id.starts_with('T') {
            return Err(bad("expected a T<id> text-bound annotation"));
        }
        let middle = fields.next().ok_or_else(|| bad("missing label field"))?;
        let surface = fields.next().ok_or_else(|| bad("missing surface field"))?;
        let parts: Vec<&str> = middle.split(' ').collect();
        let [label, start, end] = parts.as_slice() else {
            return Err(bad("expected '<LABEL> <start> <end>'"));
        };
        let start: usize = start.parse().map_err(|_| bad("bad start offset"))?;
        let end: usize = end.parse().map_err(|_| bad("bad end offset"))?;
        if end <= start || label.is_empty() {
            return Err(bad("empty span"));
        }
        out.push(Annotation {
            id: id.to_string(),
            label: label.to_string(),
            start,
            end,
            surface: surface.to_string(),
        });
    }
    Ok(out)
}

/// Align character-offset annotations to tokens, widening any span that cuts
/// through a token to that token's full extent.
pub fn align(
    doc: &Document,
    annotations: &[Annotation],
) -> Result<(Vec<EntitySpan>, Vec<SnapWarning>)> {
    let total_chars = doc.text.chars().count();
    let mut spans = Vec::with_capacity(annotations.len());
    let mut warnings = Vec::new();
    for a in annotations {
        if a.end > total_chars {
            return Err(Error::Integrity(format!(
                "{}: offsets {}..{} exceed document length {total_chars}",
                a.id, a.start, a.end
            )));
        }
        let actual = doc.slice(a.start, a.end);
        if actual != a.surface {
            return Err(Error::Integrity(format!(
                "{}: annotated surface {:?} does not match text {:?}",
                a.id, a.surface, actual
            )));
        }
        let first = doc.tokens.iter().position(|t: &Token| t.end > a.start);
        let last = doc.tokens.iter().rposition(|t: &Token| t.start < a.end);
        let (first, last) = match (first, last) {
            (Some(f), Some(l)) if f <= l => (f, l),
            _ => {
                return Err(Error::Integrity(format!(
                    "{}: span {}..{} covers no token",
                    a.id, a.start, a.end
                )))
            }
        };
        let span = EntitySpan::over(&doc.tokens, first, last, a.label.clone());
        if (span.char_start, span.char_end) != (a.start, a.end) {
            warn!(
                "{}: {} {}..{} snapped to token boundaries {}..{}",
                doc.id, a.id, a.start, a.end, span.char_start, span.char_end
            );
            warnings.push(SnapWarning {
                annotation: a.id.clone(),
                original: (a.start, a.end),
                snapped: (span.char_start, span.char_end),
            });
        }
        spans.push(span);
    }
    spans.sort();
    Ok((spans, warnings))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Load a `.txt`/`.ann` pair. The document id is the text file stem.
pub fn load_standoff(text_path: &Path, ann_path: &Path) -> Result<Standoff> {
    let text = read(text_path)?;
    let id = text_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut document = Document::from_text(id, text);
    let annotations = parse_annotations(&read(ann_path)?)?;
    let (spans, warnings) = align(&document, &annotations)?;
    document.gold_spans = spans;
    Ok(Standoff { document, warnings })
}

/// Render spans as `.ann` content.
pub fn format_annotations(doc: &Document, spans: &[EntitySpan]) -> String {
    let mut out = String::new();
    for (i, s) in spans.iter().enumerate() {
        let surface = doc.slice(s.char_start, s.char_end);
        let _ = writeln!(
            out,
            "T{}\t{} {} {}\t{}",
            i + 1,
            s.label,
            s.char_start,
            s.char_end,
            surface
        );
    }
    out
}

pub fn write_standoff(
    dir: &Path,
    doc: &Document,
    spans: &[EntitySpan],
    with_text: bool,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if with_text {
        let p = dir.join(format!("{}.txt", doc.id));
        fs::write(&p, &doc.text).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join(format!("{}.ann", doc.id));
    fs::write(&p, format_annotations(doc, spans)).map_err(|e| Error::io(&p, e))
}

/// Sorted document ids (file stems) in `dir` having the given extension.
pub fn list_ids(dir: &Path, extension: &str) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path: PathBuf = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == extension) && path.is_file() {
            if let Some(stem) = path.file_stem() {
                ids.push(stem.to_string_lossy().into_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

/// Load every `.txt`/`.ann` pair in `dir`, in id order. A text file without
/// an annotation file loads with no gold spans.
pub fn load_dir(dir: &Path) -> Result<Vec<Standoff>> {
    list_ids(dir, "txt")?
        .into_iter()
        .map(|id| {
            let text_path = dir.join(format!("{id}.txt"));
            let ann_path = dir.join(format!("{id}.ann"));
            if ann_path.exists() {
                load_standoff(&text_path, &ann_path)
            } else {
                let text = read(&text_path)?;
                Ok(Standoff {
                    document: Document::from_text(id, text),
                    warnings: Vec::new(),
                })
            }
        })
        .collect()
}
