//! In-batch hard negative mining with a lexical overlap filter.
//!
//! For every positive image in a batch, the candidates are the other samples
//! of the batch with a different image id whose text does not overlap the
//! positive's text. The `n` candidates closest to the positive image (squared
//! distance in image space) become its negatives.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::diffcore::{sq_dist, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSample {
    pub image_id: String,
    pub image_vec: Vec<f32>,
    pub content_words: BTreeSet<String>,
}

/// Lexical filter strength requested by the caller.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FilterMode {
    /// Drop candidates sharing any content word with the positive.
    #[default]
    AnyOverlap,
    /// Drop only candidates containing every content word of the positive
    /// (harder negatives).
    AllOverlap,
}

/// Filter that actually produced a sample's negatives after fallbacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AppliedFilter {
    AnyOverlap,
    AllOverlap,
    Unfiltered,
}

impl fmt::Display for FilterMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterMode::AnyOverlap => "any",
            FilterMode::AllOverlap => "all",
        })
    }
}

impl FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "any" => Ok(FilterMode::AnyOverlap),
            "all" => Ok(FilterMode::AllOverlap),
            other => Err(Error::config(format!(
                "unknown mining mode {other:?} (expected any|all)"
            ))),
        }
    }
}

impl fmt::Display for AppliedFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AppliedFilter::AnyOverlap => "any",
            AppliedFilter::AllOverlap => "all",
            AppliedFilter::Unfiltered => "unfiltered",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedSample {
    pub positive: usize,
    /// `(batch index, squared distance to the positive)`, ascending by
    /// distance, ties by index.
    pub negatives: Vec<(usize, f32)>,
    pub filter: AppliedFilter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedTriplets {
    pub samples: Vec<MinedSample>,
}

impl MinedTriplets {
    /// Negative batch indices per positive, in batch order.
    pub fn negative_indices(&self) -> Vec<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| s.negatives.iter().map(|&(j, _)| j).collect())
            .collect()
    }

    /// Audit dump: `pos_index<TAB>neg_index<TAB>sq_dist<TAB>mode` per line.
    /// Indices are mapped through `ids` (batch index → reported index).
    pub fn to_tsv(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for s in &self.samples {
            for &(j, d) in &s.negatives {
                out.push_str(&format!("{}\t{}\t{}\t{}\n", ids[s.positive], ids[j], d, s.filter));
            }
        }
        out
    }
}

/// `B×B` matrix of squared distances between the batch image vectors.
pub fn pairwise_sq_dist(batch: &[BatchSample]) -> Result<Tensor<f32>> {
    let b = batch.len();
    let dim = batch.first().map_or(0, |s| s.image_vec.len());
    if let Some(bad) = batch.iter().position(|s| s.image_vec.len() != dim) {
        return Err(Error::config(format!(
            "batch sample {bad} has dimension {}, expected {dim}",
            batch[bad].image_vec.len()
        )));
    }
    let mut m = Tensor::zeros(&[b, b]);
    for i in 0..b {
        for j in i + 1..b {
            let d = sq_dist(&batch[i].image_vec, &batch[j].image_vec);
            m.data_mut()[i * b + j] = d;
            m.data_mut()[j * b + i] = d;
        }
    }
    Ok(m)
}

/// Whether `candidate` survives the lexical filter for `positive`. An empty
/// positive word set filters nothing in either mode.
pub fn lexical_filter(positive: &BatchSample, candidate: &BatchSample, mode: FilterMode) -> bool {
    keeps(&positive.content_words, &candidate.content_words, mode)
}

fn keeps(pos: &BTreeSet<String>, cand: &BTreeSet<String>, mode: FilterMode) -> bool {
    if pos.is_empty() {
        return true;
    }
    match mode {
        FilterMode::AnyOverlap => pos.is_disjoint(cand),
        FilterMode::AllOverlap => !pos.is_subset(cand),
    }
}

fn nearest(mut cands: Vec<(usize, f32)>, n: usize) -> Vec<(usize, f32)> {
    cands.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    cands.truncate(n);
    cands
}

/// Mines up to `n` negatives per positive.
///
/// If the requested filter leaves nothing, any-overlap falls back to
/// all-overlap, and then to the single nearest sample with a different
/// image id.
pub fn mine_negatives(batch: &[BatchSample], n: usize, mode: FilterMode) -> Result<MinedTriplets> {
    if batch.len() < 2 {
        return Err(Error::config(format!(
            "mining needs a batch of at least 2, got {}",
            batch.len()
        )));
    }
    if n == 0 {
        return Err(Error::config("number of negatives must be at least 1"));
    }
    let dist = pairwise_sq_dist(batch)?;
    let b = batch.len();

    let samples = (0..b)
        .into_par_iter()
        .map(|i| {
            let pos = &batch[i];
            let distinct: Vec<(usize, f32)> = (0..b)
                .filter(|&j| j != i && batch[j].image_id != pos.image_id)
                .map(|j| (j, dist.data()[i * b + j]))
                .collect();
            if distinct.is_empty() {
                return Err(Error::Data(format!(
                    "batch sample {i} ({}) has no candidate with a different image id",
                    pos.image_id
                )));
            }
            let filtered = |m: FilterMode| -> Vec<(usize, f32)> {
                distinct
                    .iter()
                    .copied()
                    .filter(|&(j, _)| keeps(&pos.content_words, &batch[j].content_words, m))
                    .collect()
            };

            let mut chain = vec![mode];
            if mode == FilterMode::AnyOverlap {
                chain.push(FilterMode::AllOverlap);
            }
            for m in chain {
                let kept = filtered(m);
                if !kept.is_empty() {
                    let applied = match m {
                        FilterMode::AnyOverlap => AppliedFilter::AnyOverlap,
                        FilterMode::AllOverlap => AppliedFilter::AllOverlap,
                    };
                    return Ok(MinedSample {
                        positive: i,
                        negatives: nearest(kept, n),
                        filter: applied,
                    });
                }
            }
            Ok(MinedSample {
                positive: i,
                negatives: nearest(distinct, 1),
                filter: AppliedFilter::Unfiltered,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MinedTriplets { samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, v: &[f32], words: &[&str]) -> BatchSample {
        BatchSample {
            image_id: id.to_string(),
            image_vec: v.to_vec(),
            content_words: words.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn pairwise_simple() {
        let b = [sample("a", &[0., 0.], &[]), sample("b", &[3., 4.], &[])];
        let m = pairwise_sq_dist(&b).unwrap();
        assert_eq!(m.data(), &[0., 25., 25., 0.]);
        let same = [
            sample("a", &[1., 2.], &[]),
            sample("b", &[1., 2.], &[]),
            sample("c", &[1., 2.], &[]),
        ];
        assert!(pairwise_sq_dist(&same).unwrap().data().iter().all(|v| *v == 0.0));
        let bad = [sample("a", &[1., 2.], &[]), sample("b", &[1.], &[])];
        assert!(matches!(pairwise_sq_dist(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn lexical_filter_modes() {
        let pos = sample("p", &[0.], &["man", "motorbike"]);
        let man = sample("c", &[0.], &["man", "street"]);
        let both = sample("c", &[0.], &["man", "motorbike", "red"]);
        let other = sample("c", &[0.], &["dog"]);
        assert!(!lexical_filter(&pos, &man, FilterMode::AnyOverlap));
        assert!(lexical_filter(&pos, &man, FilterMode::AllOverlap));
        assert!(!lexical_filter(&pos, &both, FilterMode::AllOverlap));
        assert!(lexical_filter(&pos, &other, FilterMode::AnyOverlap));
        assert!(lexical_filter(&pos, &other, FilterMode::AllOverlap));
        let empty = sample("p", &[0.], &[]);
        assert!(lexical_filter(&empty, &both, FilterMode::AllOverlap));
        assert!(lexical_filter(&empty, &both, FilterMode::AnyOverlap));
    }

    #[test]
    fn hand_checked_batch() {
        // distances 1, 4, 9 from sample 0 along one axis
        let b = [
            sample("i0", &[0.], &["man", "motorbike"]),
            sample("i1", &[1.], &["man"]),
            sample("i2", &[2.], &["dog"]),
            sample("i3", &[3.], &["cat"]),
        ];
        let mined = mine_negatives(&b, 2, FilterMode::AnyOverlap).unwrap();
        assert_eq!(mined.samples[0].negatives, vec![(2, 4.0), (3, 9.0)]);
        assert_eq!(mined.samples[0].filter, AppliedFilter::AnyOverlap);
    }

    #[test]
    fn fallback_chain() {
        let b = [
            sample("i0", &[0.], &["dog"]),
            sample("i1", &[1.], &["dog", "park"]),
            sample("i2", &[2.], &["dog"]),
            sample("i3", &[3.], &["dog", "ball"]),
        ];
        let mined = mine_negatives(&b, 3, FilterMode::AnyOverlap).unwrap();
        // {dog} ⊆ everything: nearest distinct image, unfiltered
        assert_eq!(mined.samples[0].filter, AppliedFilter::Unfiltered);
        assert_eq!(mined.samples[0].negatives, vec![(1, 1.0)]);
        assert_eq!(mined.samples[2].filter, AppliedFilter::Unfiltered);
        assert_eq!(mined.samples[2].negatives, vec![(1, 1.0)]);
        // {dog, park} is not a subset of the others: all-overlap retry keeps them
        assert_eq!(mined.samples[1].filter, AppliedFilter::AllOverlap);
        assert_eq!(mined.samples[1].negatives, vec![(0, 1.0), (2, 1.0), (3, 4.0)]);
        assert_eq!(mined.samples[3].filter, AppliedFilter::AllOverlap);
        assert_eq!(mined.samples[3].negatives, vec![(2, 1.0), (1, 4.0), (0, 9.0)]);

        let strict = mine_negatives(&b, 3, FilterMode::AllOverlap).unwrap();
        assert_eq!(strict.samples[0].filter, AppliedFilter::Unfiltered);
        assert_eq!(strict.samples[1].filter, AppliedFilter::AllOverlap);
    }

    #[test]
    fn excludes_self_and_duplicate_ids_and_breaks_ties_by_index() {
        let b = [
            sample("x", &[0.], &["a"]),
            sample("x", &[0.], &["b"]),
            sample("y", &[1.], &["c"]),
            sample("z", &[-1.], &["d"]),
        ];
        let mined = mine_negatives(&b, 3, FilterMode::AnyOverlap).unwrap();
        assert_eq!(mined.samples[0].negatives, vec![(2, 1.0), (3, 1.0)]);
    }

    #[test]
    fn rejects_tiny_batches_and_zero_n() {
        let one = [sample("a", &[0.], &[])];
        assert!(matches!(
            mine_negatives(&one, 1, FilterMode::AnyOverlap),
            Err(Error::Config(_))
        ));
        let two = [sample("a", &[0.], &[]), sample("b", &[0.], &[])];
        assert!(mine_negatives(&two, 0, FilterMode::AnyOverlap).is_err());
        let dup = [sample("a", &[0.], &[]), sample("a", &[1.], &[])];
        assert!(matches!(
            mine_negatives(&dup, 1, FilterMode::AnyOverlap),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn tsv_dump() {
        let b = [
            sample("i0", &[0.], &["man", "motorbike"]),
            sample("i1", &[1.], &["man"]),
            sample("i2", &[2.], &["dog"]),
        ];
        let mined = mine_negatives(&b, 1, FilterMode::AnyOverlap).unwrap();
        let tsv = mined.to_tsv(&[10, 11, 12]);
        assert_eq!(tsv.lines().next().unwrap(), "10\t12\t4\tany");
    }
}
