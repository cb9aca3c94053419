use std::path::Path;

use crate::dataio::{read_text, write_atomic};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::textenc::WordVectorTable;

/// Parses the text vector format: a `<count> <dim>` header followed by
/// `count` lines of `<word> <f1> ... <fdim>`. A repeated word keeps its first
/// vector; later occurrences are dropped with a warning.
pub fn parse_word_vectors(text: &str) -> Result<WordVectorTable> {
    let mut lines = text
        .split('\n')
        .enumerate()
        .map(|(n, l)| (n as u64 + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty());

    let (hline, header) = lines
        .next()
        .ok_or_else(|| Error::format(Some(1), "missing `<count> <dim>` header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields[..] {
        [c, d] => match (c.parse::<usize>(), d.parse::<usize>()) {
            (Ok(c), Ok(d)) if d > 0 => (c, d),
            _ => return Err(Error::format(Some(hline), format!("malformed header {header:?}"))),
        },
        _ => return Err(Error::format(Some(hline), format!("malformed header {header:?}"))),
    };

    let mut words = Vec::with_capacity(count.min(1 << 22));
    let mut data = Vec::with_capacity(count.min(1 << 22) * dim);
    let mut seen = std::collections::HashSet::new();
    let mut entries = 0usize;
    for (lineno, line) in lines {
        entries += 1;
        if entries > count {
            return Err(Error::format(
                Some(lineno),
                format!("more than the {count} entries declared in the header"),
            ));
        }
        let mut parts = line.split_whitespace();
        let word = parts.next().expect("line is not blank");
        let vals: Vec<&str> = parts.collect();
        if vals.len() != dim {
            return Err(Error::format(
                Some(lineno),
                format!("word {word:?} has {} components, expected {dim}", vals.len()),
            ));
        }
        let mut v = Vec::with_capacity(dim);
        for s in vals {
            match s.parse::<f32>() {
                Ok(x) if x.is_finite() => v.push(x),
                _ => return Err(Error::format(Some(lineno), format!("bad vector component {s:?}"))),
            }
        }
        if !seen.insert(word.to_string()) {
            log::warn!("line {lineno}: duplicate word {word:?}, keeping the first vector");
            continue;
        }
        words.push(word.to_string());
        data.extend_from_slice(&v);
    }
    if entries != count {
        return Err(Error::format(
            Some(hline),
            format!("header declares {count} entries, file has {entries}"),
        ));
    }
    let rows = words.len();
    WordVectorTable::new(words, Tensor::from_vec(&[rows, dim], data)?)
}

pub fn format_word_vectors(table: &WordVectorTable) -> String {
    let mut out = format!("{} {}\n", table.len(), table.dim());
    for (i, w) in table.words().iter().enumerate() {
        out.push_str(w);
        for v in table.matrix().row(i) {
            out.push(' ');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectorTable> {
    let path = path.as_ref();
    parse_word_vectors(&read_text(path)?).map_err(|e| e.with_path(path))
}

pub fn write_word_vectors(table: &WordVectorTable, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), format_word_vectors(table).as_bytes())
}
