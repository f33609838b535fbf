use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

use super::{CorpusError, Vocabulary, UNK_ID};

pub const DEFAULT_EMBEDDING_DIM: usize = 128;

/// Unit → vector table. Row [`UNK_ID`] holds the unknown-unit vector, so the
/// stored tensor is `(V + 1) × d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    vectors: Tensor,
    pretrained: bool,
}

impl EmbeddingTable {
    /// Learnable table with N(0, 1/d) entries, UNK row included.
    pub fn random(vocab: Vocabulary, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors = Tensor::randn(&[vocab.len() + 1, dim], 1.0 / (dim as f64).sqrt(), &mut rng);
        Self {
            vocab,
            vectors,
            pretrained: false,
        }
    }

    /// `(V, d)`, not counting the UNK row.
    pub fn shape(&self) -> (usize, usize) {
        (self.vocab.len(), self.dim())
    }

    pub fn dim(&self) -> usize {
        self.vectors.dims2().1
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn into_vectors(self) -> Tensor {
        self.vectors
    }

    pub fn row_id(&self, unit: &str) -> usize {
        self.vocab.id(unit)
    }

    pub fn lookup(&self, unit: &str) -> &[f64] {
        self.vectors.row(self.row_id(unit))
    }

    pub fn unk(&self) -> &[f64] {
        self.vectors.row(UNK_ID)
    }
}

/// Reads `V d` followed by `V` lines of `unit v1 … vd`. Without a path, falls
/// back to a seeded learnable table over `vocab`.
pub fn load_char_embeddings(
    path: Option<&Path>,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable, CorpusError> {
    let Some(path) = path else {
        return Ok(EmbeddingTable::random(vocab.clone(), dim, seed));
    };
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    parse_embeddings(&text)
}

pub(crate) fn parse_embeddings(text: &str) -> Result<EmbeddingTable, CorpusError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(CorpusError::Parse {
        line: 1,
        reason: "empty embedding file".into(),
    })?;
    let header_err = |reason: &str| CorpusError::Parse {
        line: 1,
        reason: reason.into(),
    };
    let mut parts = header.split_whitespace();
    let v: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err("expected 'V d' header"))?;
    let d: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| header_err("expected 'V d' header"))?;
    if d == 0 || parts.next().is_some() {
        return Err(header_err("expected 'V d' header"));
    }
    let mut units = Vec::with_capacity(v);
    let mut rows = Vec::with_capacity(v);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let mut fields = line.split_whitespace();
        let unit = fields.next().expect("non-empty line").to_string();
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| CorpusError::Parse {
                    line: line_no,
                    reason: format!("'{f}' is not a number"),
                })
            })
            .collect::<Result<_, _>>()?;
        if values.len() != d {
            return Err(CorpusError::Parse {
                line: line_no,
                reason: format!("expected {d} values, found {}", values.len()),
            });
        }
        if units.contains(&unit) {
            return Err(CorpusError::Parse {
                line: line_no,
                reason: format!("duplicate unit '{unit}'"),
            });
        }
        units.push(unit);
        rows.push(values);
    }
    if units.len() != v {
        return Err(CorpusError::Parse {
            line: text.lines().count(),
            reason: format!("header declares {v} rows, found {}", units.len()),
        });
    }
    let vocab = Vocabulary::new(units.iter().cloned());
    let mut vectors = Tensor::zeros(&[v + 1, d]);
    for (unit, row) in units.iter().zip(rows) {
        let id = vocab.id(unit);
        vectors.data_mut()[id * d..(id + 1) * d].copy_from_slice(&row);
    }
    Ok(EmbeddingTable {
        vocab,
        vectors,
        pretrained: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_and_rows() {
        let t = parse_embeddings("3 2\n北 0.5 1\n京 -1 2\nA 3 4\n").unwrap();
        assert_eq!(t.shape(), (3, 2));
        assert_eq!(t.lookup("京"), &[-1.0, 2.0]);
        assert_eq!(t.lookup("A"), &[3.0, 4.0]);
        assert_eq!(t.lookup("missing"), t.unk());
        assert!(t.is_pretrained());
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = parse_embeddings("2 2\na 1 2\nb 1 x\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 3, .. }), "{err}");
        let err = parse_embeddings("2 3\na 1 2 3\nb 1 2\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 3, .. }), "{err}");
        let err = parse_embeddings("two 3\n").unwrap_err();
        assert!(matches!(err, CorpusError::Parse { line: 1, .. }));
        assert!(parse_embeddings("3 1\na 1\n").is_err());
    }

    #[test]
    fn fallback_table_statistics() {
        let vocab = Vocabulary::new((0..100).map(|i| format!("u{i}")));
        let t = load_char_embeddings(None, &vocab, 128, 7).unwrap();
        assert_eq!(t.shape(), (100, 128));
        assert!(!t.is_pretrained());
        let data = t.vectors().data();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        // Target N(0, 1/128): 12,928 draws put mean within 3σ/√n and the variance within 5%.
        let sigma2 = 1.0 / 128.0;
        assert!(mean.abs() < 3.0 * (sigma2 / n).sqrt(), "mean {mean}");
        assert!((var / sigma2 - 1.0).abs() < 0.05, "var {var}");
        assert_eq!(t, load_char_embeddings(None, &vocab, 128, 7).unwrap());
    }
}
