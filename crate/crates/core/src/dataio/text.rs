use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::dataio::read_text;
use crate::error::{Error, Result};
use crate::textenc::StopWords;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSource {
    Caption,
    Click,
}

impl fmt::Display for PairSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairSource::Caption => "caption",
            PairSource::Click => "click",
        })
    }
}

/// `(text, image_id)` pairs from one supervision source, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    pub source: PairSource,
    pub samples: Vec<(String, String)>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn tsv_lines(text: &str) -> impl Iterator<Item = (u64, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(n, l)| (n as u64 + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn two_fields(lineno: u64, line: &str, what: &str) -> Result<(String, String)> {
    let (a, b) = line
        .split_once('\t')
        .ok_or_else(|| Error::format(Some(lineno), format!("expected {what}, found no tab")))?;
    if b.contains('\t') {
        return Err(Error::format(Some(lineno), format!("expected {what}, found extra tab")));
    }
    if a.is_empty() {
        return Err(Error::format(Some(lineno), "empty id"));
    }
    if b.trim().is_empty() {
        return Err(Error::format(Some(lineno), "empty second field"));
    }
    Ok((a.to_string(), b.to_string()))
}

/// `<image_id>\t<text>` per line.
pub fn parse_pairs(text: &str, source: PairSource) -> Result<PairDataset> {
    let samples = tsv_lines(text)
        .map(|(n, l)| two_fields(n, l, "<image_id>\\t<text>").map(|(id, t)| (t, id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PairDataset { source, samples })
}

pub fn load_pairs(path: impl AsRef<Path>, source: PairSource) -> Result<PairDataset> {
    let path = path.as_ref();
    parse_pairs(&read_text(path)?, source).map_err(|e| e.with_path(path))
}

/// Semantic label per image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelMap(pub HashMap<String, String>);

impl LabelMap {
    pub fn get(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for LabelMap {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        LabelMap(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

/// `<id>\t<label>` per line; ids must be unique.
pub fn parse_labels(text: &str) -> Result<LabelMap> {
    let mut map = HashMap::new();
    for (n, line) in tsv_lines(text) {
        let (id, label) = two_fields(n, line, "<id>\\t<label>")?;
        if map.insert(id.clone(), label).is_some() {
            return Err(Error::format(Some(n), format!("duplicate label for {id:?}")));
        }
    }
    Ok(LabelMap(map))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    parse_labels(&read_text(path)?).map_err(|e| e.with_path(path))
}

/// Reads a stop-word list, or returns the bundled English list for `None`.
pub fn load_stopwords(path: Option<&Path>) -> Result<StopWords> {
    match path {
        Some(p) => Ok(StopWords::parse(&read_text(p)?)),
        None => Ok(StopWords::default_english()),
    }
}
