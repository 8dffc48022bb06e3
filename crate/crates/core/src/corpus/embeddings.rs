use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::vocab::{Lexicon, PAD};
use crate::error::{Error, Result};

/// One vector per vocabulary id. The PAD row is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    /// Row-major `len × dim`.
    pub rows: Vec<f64>,
    pub trainable: bool,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.rows.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        &self.rows[id * self.dim..(id + 1) * self.dim]
    }

    /// Rows drawn uniformly from `[-√(3/dim), √(3/dim)]`, PAD zeroed.
    pub fn random<R: Rng>(len: usize, dim: usize, rng: &mut R) -> Self {
        let bound = (3.0 / dim as f64).sqrt();
        let mut rows: Vec<f64> = (0..len * dim)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        rows[PAD * dim..(PAD + 1) * dim].fill(0.0);
        EmbeddingTable {
            dim,
            rows,
            trainable: true,
        }
    }
}

/// Pretrained rows together with the fraction of vocabulary entries found.
#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained {
    pub table: EmbeddingTable,
    pub coverage: f64,
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let count = it.next()?.parse().ok()?;
    let dim = it.next()?.parse().ok()?;
    it.next().is_none().then_some((count, dim))
}

/// Load `word v1 … v_dim` lines for the entries of `vocab`, matching
/// case-insensitively. Entries not in the file get random rows.
pub fn load_pretrained<R: Rng>(
    path: &Path,
    vocab: &Lexicon,
    dim: usize,
    rng: &mut R,
) -> Result<Pretrained> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    // value, and whether it came from an already-lowercase word
    let mut found: HashMap<usize, (Vec<f64>, bool)> = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 {
            if let Some((_, header_dim)) = parse_header(&line) {
                if header_dim != dim {
                    return Err(Error::Config(format!(
                        "{} declares dimension {header_dim}, configuration expects {dim}",
                        path.display()
                    )));
                }
                continue;
            }
        }
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let word = fields.next().unwrap_or_default();
        let values: Vec<&str> = fields.collect();
        if values.len() != dim {
            return Err(Error::Format {
                line: line_no,
                message: format!("expected {dim} values for {word:?}, found {}", values.len()),
            });
        }
        let lower = word.to_lowercase();
        let Some(id) = vocab.get(&lower) else {
            continue;
        };
        let exact = lower == word;
        if found
            .get(&id)
            .is_some_and(|(_, was_exact)| *was_exact || !exact)
        {
            continue;
        }
        let vector = values
            .iter()
            .map(|v| {
                v.parse::<f64>().map_err(|_| Error::Format {
                    line: line_no,
                    message: format!("bad number {v:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        found.insert(id, (vector, exact));
    }

    let mut table = EmbeddingTable::random(vocab.len(), dim, rng);
    for (id, (v, _)) in &found {
        table.rows[id * dim..(id + 1) * dim].copy_from_slice(v);
    }
    let denominator = vocab.entries().len().max(1) as f64;
    Ok(Pretrained {
        table,
        coverage: found.len() as f64 / denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    fn file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn direct_load_with_full_coverage() {
        let f = file("the 0.1 0.2\n");
        let vocab = Lexicon::from_symbols(["the"]);
        let p = load_pretrained(f.path(), &vocab, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.table.row(vocab.id("the")), &[0.1, 0.2]);
        assert_eq!(p.coverage, 1.0);
        assert_eq!(p.table.row(PAD), &[0.0, 0.0]);
    }

    #[test]
    fn missing_word_gets_bounded_random_row() {
        let f = file("the 0.1 0.2\n");
        let vocab = Lexicon::from_symbols(["zzyzx"]);
        let load =
            || load_pretrained(f.path(), &vocab, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let p = load();
        assert_eq!(p.coverage, 0.0);
        let bound = 1.5f64.sqrt();
        assert!(p
            .table
            .row(vocab.id("zzyzx"))
            .iter()
            .all(|v| v.abs() <= bound));
        assert_eq!(p.table, load().table);
    }

    #[test]
    fn wrong_arity_is_format_error() {
        let values = vec!["0.5"; 50].join(" ");
        let f = file(&format!("the {values}\n"));
        let vocab = Lexicon::from_symbols(["the"]);
        let err =
            load_pretrained(f.path(), &vocab, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Format { line: 1, .. }));
    }

    #[test]
    fn header_dimension_mismatch_is_config_error() {
        let f = file("3 50\nthe 0.1\n");
        let vocab = Lexicon::from_symbols(["the"]);
        let err =
            load_pretrained(f.path(), &vocab, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn lookup_is_case_insensitive_preferring_lowercase() {
        let f = file("The 9 9\nthe 1 2\nPARIS 3 4\n");
        let vocab = Lexicon::from_symbols(["the", "paris"]);
        let p = load_pretrained(f.path(), &vocab, 2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(p.table.row(vocab.id("the")), &[1.0, 2.0]);
        assert_eq!(p.table.row(vocab.id("paris")), &[3.0, 4.0]);
    }
}
