use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::{Vocab, PAD};
use crate::numcore::{Rng, Tensor};
use crate::{Error, Result};

/// Standard deviation of the normal init for words without a vector.
const OOV_STD: f64 = 0.1;

/// Initial word-embedding table, `|V| × d_word`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Tensor,
    /// Per row: `true` when the row came from the vector file.
    pub pretrained: Vec<bool>,
}

impl EmbeddingMatrix {
    /// Every row drawn from `N(0, 0.1²)` except PAD, which is zero.
    pub fn random(vocab_size: usize, d_word: usize, rng: &mut Rng) -> Self {
        let mut values = Tensor::zeros(&[vocab_size, d_word]);
        for row in 0..vocab_size {
            if row == PAD {
                continue;
            }
            for v in &mut values.data_mut()[row * d_word..(row + 1) * d_word] {
                *v = rng.normal(0.0, OOV_STD);
            }
        }
        EmbeddingMatrix { values, pretrained: vec![false; vocab_size] }
    }

    pub fn pretrained_count(&self) -> usize {
        self.pretrained.iter().filter(|&&p| p).count()
    }
}

/// Reads whitespace-separated `token v1 … v_d` lines. Vocabulary entries found
/// in the file take its vector; the rest are drawn from `N(0, 0.1²)` in id
/// order, and PAD stays zero.
pub fn parse_word_vectors(
    reader: impl BufRead,
    vocab: &Vocab,
    d_word: usize,
    rng: &mut Rng,
) -> Result<EmbeddingMatrix> {
    let mut values = Tensor::zeros(&[vocab.len(), d_word]);
    let mut pretrained = vec![false; vocab.len()];
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse { line: line_no, message: format!("bad vector component: {e}") })?;
        if row.len() != d_word {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {d_word} components, found {}", row.len()),
            });
        }
        let id = vocab.lookup(token);
        if id <= super::UNK || pretrained[id] {
            continue;
        }
        values.data_mut()[id * d_word..(id + 1) * d_word].copy_from_slice(&row);
        pretrained[id] = true;
    }
    for (id, &found) in pretrained.iter().enumerate() {
        if id == PAD || found {
            continue;
        }
        for v in &mut values.data_mut()[id * d_word..(id + 1) * d_word] {
            *v = rng.normal(0.0, OOV_STD);
        }
    }
    Ok(EmbeddingMatrix { values, pretrained })
}

pub fn load_word_vectors(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    d_word: usize,
    rng: &mut Rng,
) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(BufReader::new(file), vocab, d_word, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::from_tokens(vec!["the".to_string(), "spoiler".to_string()], 1)
    }

    #[test]
    fn file_vectors_and_oov_rows() {
        let text = "the 0.1 0.2\nunrelated 9 9\n";
        let m = parse_word_vectors(text.as_bytes(), &vocab(), 2, &mut Rng::new(1)).unwrap();
        assert_eq!(m.values.row(2), &[0.1, 0.2]);
        assert_eq!(m.pretrained, vec![false, false, true, false]);
        assert_eq!(m.values.row(PAD), &[0.0, 0.0]);
        assert!(m.values.row(3).iter().all(|v| *v != 0.0));
        assert_eq!(m.pretrained_count(), 1);
    }

    #[test]
    fn same_seed_bit_identical() {
        let text = "spoiler 1 2 3\n";
        let a = parse_word_vectors(text.as_bytes(), &vocab(), 3, &mut Rng::new(8)).unwrap();
        let b = parse_word_vectors(text.as_bytes(), &vocab(), 3, &mut Rng::new(8)).unwrap();
        let bits = |m: &EmbeddingMatrix| m.values.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let text = "the 0.1 0.2\nspoiler 0.3\n";
        match parse_word_vectors(text.as_bytes(), &vocab(), 2, &mut Rng::new(0)) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
