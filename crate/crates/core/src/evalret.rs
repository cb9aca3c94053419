//! Exact nearest-neighbour retrieval in the shared space and the R@K and
//! mAP@R metrics.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataio::{FeatureStore, LabelMap, PairDataset};
use crate::diffcore::{sq_dist, Tensor};
use crate::error::{Error, Result};
use crate::textenc::TextEncoder;

/// Gallery of embeddings searched by squared distance.
#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    ids: Vec<String>,
    matrix: Tensor<f32>,
}

impl RetrievalIndex {
    pub fn new(ids: Vec<String>, matrix: Tensor<f32>) -> Result<Self> {
        if matrix.shape().len() != 2 || matrix.shape()[0] != ids.len() {
            return Err(Error::config(format!(
                "index matrix {:?} does not match {} ids",
                matrix.shape(),
                ids.len()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::Data("index contains non-finite embeddings".into()));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Data(format!("duplicate index id {dup:?}")));
        }
        Ok(RetrievalIndex { ids, matrix })
    }

    pub fn from_store(store: &FeatureStore) -> Self {
        RetrievalIndex {
            ids: store.ids().to_vec(),
            matrix: store.matrix().clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopK {
    /// `(row, squared distance)`, ascending; ties keep insertion order.
    pub hits: Vec<(usize, f32)>,
    /// Set when `k` exceeded the gallery size and every item was returned.
    pub truncated: bool,
}

impl TopK {
    pub fn ids<'a>(&self, index: &'a RetrievalIndex) -> Vec<&'a str> {
        self.hits.iter().map(|&(r, _)| index.ids[r].as_str()).collect()
    }
}

pub fn retrieve_topk(query: &[f32], index: &RetrievalIndex, k: usize) -> Result<TopK> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if query.len() != index.dim() {
        return Err(Error::config(format!(
            "query has dimension {}, index has {}",
            query.len(),
            index.dim()
        )));
    }
    let mut all: Vec<(usize, f32)> = (0..index.len())
        .map(|r| (r, sq_dist(query, index.matrix.row(r))))
        .collect();
    let order = |a: &(usize, f32), b: &(usize, f32)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    let truncated = k > all.len();
    if !truncated && k < all.len() {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_by(order);
    Ok(TopK { hits: all, truncated })
}

/// One query's ranked result ids.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedQuery {
    pub query: String,
    pub ranking: Vec<String>,
}

/// Fraction of queries with at least one ground-truth id in the first `k`
/// results.
pub fn recall_at_k(ranked: &[RankedQuery], ground_truth: &HashMap<String, HashSet<String>>, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if ranked.is_empty() {
        return Err(Error::config("no queries to evaluate"));
    }
    let mut hits = 0usize;
    for q in ranked {
        let truth = ground_truth
            .get(&q.query)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| Error::Data(format!("no ground truth for query {:?}", q.query)))?;
        if q.ranking.iter().take(k).any(|id| truth.contains(id)) {
            hits += 1;
        }
    }
    Ok(hits as f64 / ranked.len() as f64)
}

/// Average precision over the first `r` results: `(1/M) Σ p(i)·rel(i)`
/// with `M` the number of relevant results within those `r`; 0 when none
/// is relevant.
pub fn average_precision(ranking: &[String], labels: &LabelMap, query_label: &str, r: usize) -> Result<f64> {
    if r == 0 {
        return Err(Error::config("R must be at least 1"));
    }
    let mut relevant = 0usize;
    let mut sum = 0.0;
    for (pos, id) in ranking.iter().take(r).enumerate() {
        let label = labels
            .get(id)
            .ok_or_else(|| Error::Data(format!("no label for retrieved id {id:?}")))?;
        if label == query_label {
            relevant += 1;
            sum += relevant as f64 / (pos + 1) as f64;
        }
    }
    Ok(if relevant == 0 { 0.0 } else { sum / relevant as f64 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    TextToImage,
    ImageToText,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::TextToImage => "txt2img",
            Direction::ImageToText => "img2txt",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "txt2img" => Ok(Direction::TextToImage),
            "img2txt" => Ok(Direction::ImageToText),
            other => Err(Error::config(format!(
                "unknown direction {other:?} (expected txt2img|img2txt)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub direction: Direction,
    /// `(K, R@K)` in the requested order.
    pub recall: Vec<(usize, f64)>,
    /// `(R, mAP@R)` when labels were supplied.
    pub map: Option<(usize, f64)>,
    pub queries: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["dataset".to_string(), "direction".to_string()];
        if let Some(first) = self.rows.first() {
            h.extend(first.recall.iter().map(|(k, _)| format!("R@{k}")));
            if let Some((r, _)) = first.map {
                h.push(format!("mAP@{r}"));
            }
        }
        h
    }

    fn cells(row: &EvalRow) -> Vec<String> {
        let mut c = vec![row.dataset.clone(), row.direction.to_string()];
        c.extend(row.recall.iter().map(|(_, v)| format!("{v:.4}")));
        if let Some((_, m)) = row.map {
            c.push(format!("{m:.4}"));
        }
        c
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header().join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&Self::cells(row).join("\t"));
            out.push('\n');
        }
        out
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut lines = vec![self.header()];
        lines.extend(self.rows.iter().map(Self::cells));
        let cols = lines.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> = (0..cols)
            .map(|c| {
                lines
                    .iter()
                    .filter_map(|l| l.get(c))
                    .map(String::len)
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        for l in lines {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Unweighted mean of matching metrics across rows.
    pub fn average(&self, name: &str) -> Option<EvalRow> {
        let first = self.rows.first()?;
        let n = self.rows.len() as f64;
        let recall = first
            .recall
            .iter()
            .enumerate()
            .map(|(i, (k, _))| (*k, self.rows.iter().map(|r| r.recall[i].1).sum::<f64>() / n))
            .collect();
        let map = first.map.and_then(|(r, _)| {
            let vals: Option<Vec<f64>> = self.rows.iter().map(|row| row.map.map(|m| m.1)).collect();
            vals.map(|v| (r, v.iter().sum::<f64>() / n))
        });
        Some(EvalRow {
            dataset: name.to_string(),
            direction: first.direction,
            recall,
            map,
            queries: self.rows.iter().map(|r| r.queries).sum(),
        })
    }
}

/// Metrics plus the rankings they were computed from.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub row: EvalRow,
    pub ranked: Vec<RankedQuery>,
    pub ground_truth: HashMap<String, HashSet<String>>,
    /// Label of each query, when labels were supplied.
    pub query_labels: Option<Vec<String>>,
    /// Labels of gallery ids, when labels were supplied.
    pub gallery_labels: Option<LabelMap>,
}

/// Query id of the `i`-th pair in text-to-image mode, and gallery id of the
/// `i`-th text in image-to-text mode.
pub fn text_id(i: usize) -> String {
    format!("t{i}")
}

/// Evaluates retrieval for one pair set.
///
/// Text-to-image: every pair's text is a query, the gallery is the distinct
/// images referenced by the pairs. Image-to-text: every distinct image is a
/// query, the gallery holds one encoded text per pair. R@K uses the pairing
/// as ground truth; mAP@R uses `labels` (keyed by image id).
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    encoder: &TextEncoder,
    dataset_name: &str,
    pairs: &PairDataset,
    store: &FeatureStore,
    labels: Option<&LabelMap>,
    direction: Direction,
    ks: &[usize],
    map_r: usize,
) -> Result<Evaluation> {
    if pairs.is_empty() {
        return Err(Error::config("no pairs to evaluate"));
    }
    if ks.is_empty() || ks.contains(&0) || map_r == 0 {
        return Err(Error::config("K values and R must be at least 1"));
    }
    if encoder.config.output_dim != store.dim() {
        return Err(Error::config(format!(
            "encoder output_dim {} does not match feature dimension {}",
            encoder.config.output_dim,
            store.dim()
        )));
    }

    // Distinct images in first-occurrence order.
    let mut image_ids: Vec<String> = Vec::new();
    let mut seen = HashSet::new();
    for (_, id) in &pairs.samples {
        if store.get(id).is_none() {
            return Err(Error::Data(format!("image id {id:?} not in feature store")));
        }
        if seen.insert(id.as_str()) {
            image_ids.push(id.clone());
        }
    }
    let image_matrix = Tensor::from_rows(
        &image_ids
            .iter()
            .map(|id| store.get(id).expect("checked above").to_vec())
            .collect::<Vec<_>>(),
    )?;
    let texts: Vec<&str> = pairs.samples.iter().map(|(t, _)| t.as_str()).collect();
    let text_matrix = encoder.embed_batch(&texts)?;
    let depth = ks.iter().copied().max().unwrap_or(1).max(map_r);

    let label_of = |id: &str| -> Result<String> {
        let labels = labels.expect("only called with labels");
        labels
            .get(id)
            .map(str::to_string)
            .ok_or_else(|| Error::Data(format!("no label for image id {id:?}")))
    };

    let (query_names, query_matrix, index, ground_truth, query_labels, gallery_labels) = match direction {
        Direction::TextToImage => {
            let names: Vec<String> = (0..pairs.len()).map(text_id).collect();
            let truth = pairs
                .samples
                .iter()
                .enumerate()
                .map(|(i, (_, id))| (text_id(i), HashSet::from([id.clone()])))
                .collect();
            let (ql, gl) = match labels {
                Some(_) => (
                    Some(
                        pairs
                            .samples
                            .iter()
                            .map(|(_, id)| label_of(id))
                            .collect::<Result<Vec<_>>>()?,
                    ),
                    Some(
                        image_ids
                            .iter()
                            .map(|id| Ok((id.clone(), label_of(id)?)))
                            .collect::<Result<LabelMap>>()?,
                    ),
                ),
                None => (None, None),
            };
            (
                names,
                text_matrix,
                RetrievalIndex::new(image_ids.clone(), image_matrix)?,
                truth,
                ql,
                gl,
            )
        }
        Direction::ImageToText => {
            let gallery: Vec<String> = (0..pairs.len()).map(text_id).collect();
            let mut truth: HashMap<String, HashSet<String>> = HashMap::new();
            for (i, (_, id)) in pairs.samples.iter().enumerate() {
                truth.entry(id.clone()).or_default().insert(text_id(i));
            }
            let (ql, gl) = match labels {
                Some(_) => (
                    Some(image_ids.iter().map(|id| label_of(id)).collect::<Result<Vec<_>>>()?),
                    Some(
                        pairs
                            .samples
                            .iter()
                            .enumerate()
                            .map(|(i, (_, id))| Ok((text_id(i), label_of(id)?)))
                            .collect::<Result<LabelMap>>()?,
                    ),
                ),
                None => (None, None),
            };
            (
                image_ids.clone(),
                image_matrix,
                RetrievalIndex::new(gallery, text_matrix)?,
                truth,
                ql,
                gl,
            )
        }
    };

    let ranked: Vec<RankedQuery> = (0..query_names.len())
        .into_par_iter()
        .map(|q| {
            let top = retrieve_topk(query_matrix.row(q), &index, depth)?;
            Ok(RankedQuery {
                query: query_names[q].clone(),
                ranking: top.ids(&index).into_iter().map(str::to_string).collect(),
            })
        })
        .collect::<Result<_>>()?;

    let recall = ks
        .iter()
        .map(|&k| recall_at_k(&ranked, &ground_truth, k).map(|v| (k, v)))
        .collect::<Result<Vec<_>>>()?;
    let map = match (&query_labels, &gallery_labels) {
        (Some(ql), Some(gl)) => {
            let aps = ranked
                .iter()
                .zip(ql)
                .map(|(q, label)| average_precision(&q.ranking, gl, label, map_r))
                .collect::<Result<Vec<f64>>>()?;
            Some((map_r, aps.iter().sum::<f64>() / aps.len() as f64))
        }
        _ => None,
    };

    Ok(Evaluation {
        row: EvalRow {
            dataset: dataset_name.to_string(),
            direction,
            recall,
            map,
            queries: ranked.len(),
        },
        ranked,
        ground_truth,
        query_labels,
        gallery_labels,
    })
}
