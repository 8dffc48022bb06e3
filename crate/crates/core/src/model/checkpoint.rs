//! Binary checkpoint layout:
//!
//! ```text
//! "CEDI" u32-version
//! section*   where section = tag[4] u64-length payload
//!   CONF  configuration as `key = value` text
//!   VOCB  five lexicons (tokens, chars, prefixes, suffixes, tags)
//!   PARM  named arrays: name, rank, dims, f64 values
//!   END\0 empty terminator
//! ```
//!
//! Integers and floats are little-endian; strings are u32-length-prefixed
//! UTF-8.

use std::path::Path;

use super::{CediConfig, CediModel};
use crate::corpus::{Lexicon, Vocabulary};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CEDI";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                line: 0,
                message: format!("checkpoint truncated at byte {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn len(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| malformed("length overflows"))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| malformed("invalid UTF-8 string"))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn malformed(message: &str) -> Error {
    Error::Format {
        line: 0,
        message: format!("malformed checkpoint: {message}"),
    }
}

fn lexicons(v: &Vocabulary) -> [&Lexicon; 5] {
    [&v.tokens, &v.chars, &v.prefixes, &v.suffixes, &v.tags]
}

impl CediModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        section(&mut out, b"CONF", self.config.to_text().as_bytes());

        let mut vocab = Vec::new();
        for lex in lexicons(&self.vocab) {
            put_u32(&mut vocab, lex.entries().len() as u32);
            for s in lex.entries() {
                put_str(&mut vocab, s);
            }
        }
        section(&mut out, b"VOCB", &vocab);

        let mut params = Vec::new();
        put_u32(&mut params, self.params.len() as u32);
        for (_, name, t) in self.params.iter() {
            put_str(&mut params, name);
            put_u32(&mut params, t.shape().len() as u32);
            for &d in t.shape() {
                params.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.values() {
                params.extend_from_slice(&v.to_le_bytes());
            }
        }
        section(&mut out, b"PARM", &params);
        section(&mut out, b"END\0", &[]);
        out
    }

    /// Rebuild a model from [`CediModel::to_bytes`] output. Every parameter
    /// the configuration implies must be present with the expected shape.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| malformed("missing magic"))? != CHECKPOINT_MAGIC {
            return Err(malformed("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Compatibility(format!(
                "checkpoint format version {version}, this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let mut config = None;
        let mut vocab = None;
        let mut arrays = Vec::new();
        let mut ended = false;
        while !ended {
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.len()?;
            let mut s = Reader {
                bytes: r.take(len)?,
                pos: 0,
            };
            match &tag {
                b"CONF" => {
                    let text = std::str::from_utf8(s.bytes)
                        .map_err(|_| malformed("configuration is not UTF-8"))?;
                    config = Some(CediConfig::from_text(text)?);
                    s.pos = s.bytes.len();
                }
                b"VOCB" => {
                    let mut lex = Vec::with_capacity(5);
                    for _ in 0..5 {
                        let n = s.u32()? as usize;
                        let entries = (0..n).map(|_| s.string()).collect::<Result<Vec<_>>>()?;
                        lex.push(Lexicon::from_symbols(entries));
                    }
                    vocab = Some(lex);
                }
                b"PARM" => {
                    let n = s.u32()? as usize;
                    for _ in 0..n {
                        let name = s.string()?;
                        let rank = s.u32()? as usize;
                        let shape = (0..rank).map(|_| s.len()).collect::<Result<Vec<_>>>()?;
                        let count: usize = shape.iter().product();
                        let raw = s.take(
                            count
                                .checked_mul(8)
                                .ok_or_else(|| malformed("array too large"))?,
                        )?;
                        let values: Vec<f64> = raw
                            .chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect();
                        arrays.push((name, shape, values));
                    }
                }
                b"END\0" => ended = true,
                other => {
                    return Err(malformed(&format!(
                        "unknown section {:?}",
                        String::from_utf8_lossy(other)
                    )));
                }
            }
            if !s.done() {
                return Err(malformed("section has trailing bytes"));
            }
        }
        if !r.done() {
            return Err(malformed("data after the end section"));
        }
        let config = config.ok_or_else(|| malformed("missing CONF section"))?;
        let mut lex = vocab
            .ok_or_else(|| malformed("missing VOCB section"))?
            .into_iter();
        let mut next = || lex.next().expect("five lexicons");
        let vocab = Vocabulary {
            tokens: next(),
            chars: next(),
            prefixes: next(),
            suffixes: next(),
            tags: next(),
            affix_length: config.affix_length,
            scheme: config.tag_scheme,
        };

        let mut model = CediModel::build(config, vocab, None)?;
        if arrays.len() != model.params.len() {
            return Err(Error::Compatibility(format!(
                "checkpoint holds {} parameter arrays, configuration implies {}",
                arrays.len(),
                model.params.len()
            )));
        }
        let ids: Vec<_> = model.params.ids().collect();
        for (id, (name, shape, values)) in ids.into_iter().zip(arrays) {
            let expected = model.params.name(id);
            let tensor = model.params.get(id);
            if expected != name || tensor.shape() != shape.as_slice() {
                return Err(Error::Compatibility(format!(
                    "parameter {name} {shape:?} does not match expected {expected} {:?}",
                    tensor.shape()
                )));
            }
            model
                .params
                .get_mut(id)
                .values_mut()
                .copy_from_slice(&values);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
