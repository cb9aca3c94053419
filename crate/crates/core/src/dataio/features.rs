use std::collections::HashMap;
use std::path::Path;

use crate::dataio::{put_f32s, put_string, read_file, write_atomic, ByteReader};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PVF1";

/// Frozen image embeddings keyed by image id, in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Tensor<f32>,
}

impl FeatureStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("feature dimension must be positive"));
        }
        Ok(FeatureStore {
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            matrix: Tensor::zeros(&[0, dim]),
        })
    }

    pub fn from_records<S: Into<String>>(dim: usize, records: impl IntoIterator<Item = (S, Vec<f32>)>) -> Result<Self> {
        let mut store = Self::new(dim)?;
        let mut data = Vec::new();
        for (id, v) in records {
            let id = id.into();
            if v.len() != dim {
                return Err(Error::config(format!(
                    "feature {id:?} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Data(format!("feature {id:?} has non-finite values")));
            }
            if store.index.insert(id.clone(), store.ids.len()).is_some() {
                return Err(Error::Data(format!("duplicate image id {id:?}")));
            }
            store.ids.push(id);
            data.extend_from_slice(&v);
        }
        store.matrix = Tensor::from_vec(&[store.ids.len(), dim], data)?;
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Tensor<f32> {
        &self.matrix
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.position(id).map(|i| self.matrix.row(i))
    }
}

pub fn encode_features_binary(store: &FeatureStore) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + store.len() * (store.dim * 4 + 16));
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(store.len()).map_err(|_| Error::config("too many feature records"))?;
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&(store.dim as u32).to_le_bytes());
    for (i, id) in store.ids.iter().enumerate() {
        put_string(&mut out, id, "image id")?;
        put_f32s(&mut out, store.matrix.row(i));
    }
    Ok(out)
}

pub fn encode_features_tsv(store: &FeatureStore) -> String {
    let mut out = String::new();
    for (i, id) in store.ids.iter().enumerate() {
        out.push_str(id);
        out.push('\t');
        let row: Vec<String> = store.matrix.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn decode_binary(bytes: &[u8]) -> Result<FeatureStore> {
    let mut r = ByteReader::new(bytes);
    r.bytes(4, "magic")?;
    let count = r.u32("record count")? as usize;
    let dim = r.u32("dimension")? as usize;
    if dim == 0 {
        return Err(Error::format(Some(8), "feature dimension must be positive"));
    }
    let mut store = FeatureStore::new(dim)?;
    let mut data = Vec::with_capacity(count.min(1 << 20) * dim);
    for rec in 0..count {
        let at = r.offset();
        let id = r.string(&format!("id of record {rec}"))?;
        if id.is_empty() {
            return Err(Error::format(Some(at), format!("record {rec} has an empty id")));
        }
        let v = r.f32s(dim, &format!("vector of record {rec}"))?;
        if store.index.insert(id.clone(), store.ids.len()).is_some() {
            return Err(Error::format(Some(at), format!("duplicate image id {id:?}")));
        }
        store.ids.push(id);
        data.extend_from_slice(&v);
    }
    r.finish("last feature record")?;
    store.matrix = Tensor::from_vec(&[count, dim], data)?;
    Ok(store)
}

fn decode_tsv(text: &str) -> Result<FeatureStore> {
    let mut records: Vec<(String, Vec<f32>)> = Vec::new();
    let mut dim = None;
    let mut seen = HashMap::new();
    for (n, raw) in text.split('\n').enumerate() {
        let lineno = Some(n as u64 + 1);
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            continue;
        }
        let (id, vals) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(lineno, "expected <id>\\t<f1>,<f2>,..."))?;
        if id.is_empty() {
            return Err(Error::format(lineno, "empty image id"));
        }
        let v = vals
            .split(',')
            .map(|s| match s.trim().parse::<f32>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(Error::format(lineno, format!("bad feature value {s:?}"))),
            })
            .collect::<Result<Vec<f32>>>()?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(Error::format(
                    lineno,
                    format!("record has {} values, expected {d}", v.len()),
                ))
            }
            _ => {}
        }
        if seen.insert(id.to_string(), n).is_some() {
            return Err(Error::format(lineno, format!("duplicate image id {id:?}")));
        }
        records.push((id.to_string(), v));
    }
    let dim = dim.ok_or_else(|| Error::format(Some(1), "feature TSV contains no records"))?;
    FeatureStore::from_records(dim, records)
}

/// Parses the binary format, or the TSV fallback when the magic is absent.
pub fn decode_features(bytes: &[u8]) -> Result<FeatureStore> {
    if bytes.starts_with(MAGIC) {
        return decode_binary(bytes);
    }
    match std::str::from_utf8(bytes) {
        Ok(text) => decode_tsv(text),
        Err(e) => Err(Error::format(
            Some(0),
            format!(
                "neither a PVF1 feature file nor UTF-8 TSV (invalid byte at offset {})",
                e.valid_up_to()
            ),
        )),
    }
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureStore> {
    let path = path.as_ref();
    decode_features(&read_file(path)?).map_err(|e| e.with_path(path))
}

pub fn write_features(store: &FeatureStore, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_features_binary(store)?)
}

pub fn write_features_tsv(store: &FeatureStore, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), encode_features_tsv(store).as_bytes())
}
