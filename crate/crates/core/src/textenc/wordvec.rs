use std::collections::HashMap;

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::textenc::TokenSequence;

/// Pretrained word vectors. Never updated by training.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectorTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Tensor<f32>,
}

impl WordVectorTable {
    /// `matrix` is `V×dim` with row `i` holding the vector of `words[i]`.
    pub fn new(words: Vec<String>, matrix: Tensor<f32>) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.shape()[0] != words.len() {
            return Err(Error::config(format!(
                "word matrix shape {:?} does not match {} words",
                matrix.shape(),
                words.len()
            )));
        }
        if matrix.shape()[1] == 0 {
            return Err(Error::config("word vector dimension must be positive"));
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate word {w:?} in vector table")));
            }
        }
        Ok(WordVectorTable { words, index, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn matrix(&self) -> &Tensor<f32> {
        &self.matrix
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, word: &str) -> Option<&[f32]> {
        self.index_of(word).map(|i| self.matrix.row(i))
    }

    /// `len×dim` input matrix; out-of-vocabulary tokens get a zero row.
    pub fn lookup<T: Real>(&self, seq: &TokenSequence) -> Tensor<T> {
        let dim = self.dim();
        let mut out = Tensor::zeros(&[seq.len(), dim]);
        for (t, tok) in seq.tokens.iter().enumerate() {
            if let Some(v) = self.vector(tok) {
                for (o, &x) in out.row_mut(t).iter_mut().zip(v) {
                    *o = T::lit(x as f64);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textenc::{tokenize, StopWords};

    fn table() -> WordVectorTable {
        let m = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -0.5, 0.25, 4.0]).unwrap();
        WordVectorTable::new(vec!["man".into(), "dog".into()], m).unwrap()
    }

    #[test]
    fn in_vocab_rows_match_exactly() {
        let t = table();
        let seq = tokenize("dog man", 5, &StopWords::empty()).unwrap();
        let x: Tensor<f32> = t.lookup(&seq);
        assert_eq!(x.row(0), t.vector("dog").unwrap());
        assert_eq!(x.row(1), t.vector("man").unwrap());
    }

    #[test]
    fn oov_rows_are_zero() {
        let t = table();
        let seq = tokenize("xqzv plugh", 5, &StopWords::empty()).unwrap();
        let x: Tensor<f64> = t.lookup(&seq);
        assert_eq!(x.shape(), &[2, 3]);
        assert!(x.data().iter().all(|v| *v == 0.0));

        let seq = tokenize("man xqzv", 5, &StopWords::empty()).unwrap();
        let x: Tensor<f32> = t.lookup(&seq);
        assert_eq!(x.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(x.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_duplicates() {
        let m = Tensor::zeros(&[2, 2]);
        assert!(WordVectorTable::new(vec!["a".into(), "a".into()], m).is_err());
    }
}
