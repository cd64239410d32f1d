use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use super::Vocab;
use crate::error::{Error, Result};

/// Words kept per description.
pub const DEFAULT_DESC_LEN: usize = 200;

/// Word vectors with two extra rows: padding (zeros) and unknown (mean of
/// all loaded vectors).
#[derive(Debug, Clone)]
pub struct WordEmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
    pad: usize,
    unk: usize,
}

impl WordEmbeddingTable {
    /// Builds a table from `(token, vector)` pairs; later repeats of a token
    /// overwrite earlier ones.
    pub fn from_pairs<I, S>(dim: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        let mut vectors = Vec::new();
        for (tok, v) in pairs {
            if v.len() != dim {
                return Err(Error::Format(format!(
                    "word vector has {} dimensions, expected {dim}",
                    v.len()
                )));
            }
            let tok = tok.into();
            match index.get(&tok) {
                Some(&i) => vectors[i * dim..(i + 1) * dim].copy_from_slice(&v),
                None => {
                    index.insert(tok.clone(), tokens.len());
                    tokens.push(tok);
                    vectors.extend_from_slice(&v);
                }
            }
        }
        Ok(Self::finish(tokens, index, dim, vectors))
    }

    fn finish(tokens: Vec<String>, index: HashMap<String, usize>, dim: usize, mut vectors: Vec<f64>) -> Self {
        let n = tokens.len();
        let mut mean = vec![0.0; dim];
        if n > 0 {
            for row in vectors.chunks(dim) {
                for (m, &v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= n as f64);
        }
        vectors.extend(std::iter::repeat_n(0.0, dim));
        vectors.extend_from_slice(&mean);
        Self {
            tokens,
            index,
            dim,
            vectors,
            pad: n,
            unk: n + 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Rows including padding and unknown.
    pub fn rows(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn pad_index(&self) -> usize {
        self.pad
    }

    pub fn unk_index(&self) -> usize {
        self.unk
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk)
    }

    /// Table of the listed word rows only. Padding stays zero and the
    /// unknown vector is carried over.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let dim = self.dim;
        let mut tokens = Vec::with_capacity(rows.len());
        let mut index = HashMap::with_capacity(rows.len());
        let mut vectors = Vec::with_capacity((rows.len() + 2) * dim);
        for &r in rows {
            index.insert(self.tokens[r].clone(), tokens.len());
            tokens.push(self.tokens[r].clone());
            vectors.extend_from_slice(self.vector(r));
        }
        let n = tokens.len();
        vectors.extend(std::iter::repeat_n(0.0, dim));
        vectors.extend_from_slice(self.vector(self.unk));
        Self {
            tokens,
            index,
            dim,
            vectors,
            pad: n,
            unk: n + 1,
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Row-major `rows() × dim()` matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.vectors
    }
}

pub fn load_word_vectors(path: &Path) -> Result<(WordEmbeddingTable, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(BufReader::new(file))
}

/// Parses GloVe text layout. Returns the table and the number of repeated
/// tokens (last occurrence wins).
pub fn parse_word_vectors<R: BufRead>(reader: R) -> Result<(WordEmbeddingTable, usize)> {
    let mut tokens = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut vectors = Vec::new();
    let mut dim = None;
    let mut repeats = 0;
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: no + 1,
            msg: e.to_string(),
        })?;
        let mut fields = line.split_whitespace();
        let Some(tok) = fields.next() else { continue };
        let values = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::Parse {
                    line: no + 1,
                    msg: format!("bad value `{f}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let d = *dim.get_or_insert(values.len());
        if values.len() != d || d == 0 {
            return Err(Error::Parse {
                line: no + 1,
                msg: format!("expected {d} values, found {}", values.len()),
            });
        }
        match index.get(tok) {
            Some(&i) => {
                repeats += 1;
                vectors[i * d..(i + 1) * d].copy_from_slice(&values);
            }
            None => {
                index.insert(tok.to_owned(), tokens.len());
                tokens.push(tok.to_owned());
                vectors.extend_from_slice(&values);
            }
        }
    }
    if repeats > 0 {
        log::warn!("word vectors: {repeats} repeated tokens, last occurrence kept");
    }
    let dim = dim.ok_or_else(|| Error::Format("word-vector file is empty".into()))?;
    Ok((WordEmbeddingTable::finish(tokens, index, dim, vectors), repeats))
}

/// Lowercases, splits on whitespace and strips punctuation from token edges.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Description {
    /// Exactly `len` word-table indices, padded with the padding row.
    pub tokens: Vec<usize>,
    /// Words before padding.
    pub word_count: usize,
}

/// Fixed-length token sequences, one optional entry per entity.
#[derive(Debug, Clone)]
pub struct DescriptionTable {
    len: usize,
    entries: Vec<Option<Description>>,
}

impl DescriptionTable {
    pub fn new(num_entities: usize, len: usize) -> Self {
        Self {
            len,
            entries: vec![None; num_entities],
        }
    }

    /// Tokens per description.
    pub fn desc_len(&self) -> usize {
        self.len
    }

    pub fn num_entities(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, entity: usize) -> Option<&Description> {
        self.entries.get(entity).and_then(Option::as_ref)
    }

    pub fn has(&self, entity: usize) -> bool {
        self.get(entity).is_some()
    }

    /// Entities that carry a description, ascending.
    pub fn described(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&e| self.has(e)).collect()
    }

    /// Grows the table to cover newly registered entities.
    pub fn resize(&mut self, num_entities: usize) {
        if num_entities > self.entries.len() {
            self.entries.resize(num_entities, None);
        }
    }

    /// Encodes `text` and stores it for `entity`.
    pub fn insert_text(&mut self, entity: usize, text: &str, words: &WordEmbeddingTable) {
        let mut tokens: Vec<usize> = tokenize(text).iter().take(self.len).map(|w| words.lookup(w)).collect();
        let word_count = tokens.len();
        tokens.resize(self.len, words.pad_index());
        self.resize(entity + 1);
        self.entries[entity] = Some(Description { tokens, word_count });
    }

    /// Shrinks `words` to the rows these descriptions use and rewrites the
    /// token indices to match the returned table.
    pub fn compact(&mut self, words: &WordEmbeddingTable) -> WordEmbeddingTable {
        let real = words.tokens().len();
        let mut used = vec![false; real];
        for d in self.entries.iter().flatten() {
            for &t in &d.tokens {
                if t < real {
                    used[t] = true;
                }
            }
        }
        let rows: Vec<usize> = (0..real).filter(|&r| used[r]).collect();
        let small = words.subset(&rows);
        let mut remap = vec![0; words.rows()];
        for (new, &old) in rows.iter().enumerate() {
            remap[old] = new;
        }
        remap[words.pad_index()] = small.pad_index();
        remap[words.unk_index()] = small.unk_index();
        for d in self.entries.iter_mut().flatten() {
            d.tokens.iter_mut().for_each(|t| *t = remap[*t]);
        }
        small
    }

    pub fn insert(&mut self, entity: usize, desc: Description) -> Result<()> {
        if desc.tokens.len() != self.len {
            return Err(Error::Shape(format!(
                "description has {} tokens, table length is {}",
                desc.tokens.len(),
                self.len
            )));
        }
        self.resize(entity + 1);
        self.entries[entity] = Some(desc);
        Ok(())
    }
}

pub fn load_descriptions(
    path: &Path,
    vocab: &Vocab,
    words: &WordEmbeddingTable,
    len: usize,
) -> Result<(DescriptionTable, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_descriptions(BufReader::new(file), vocab, words, len)
}

/// Parses `entity<TAB>free text` lines. Returns the table and the number of
/// lines skipped because the entity is not in `vocab`.
pub fn parse_descriptions<R: BufRead>(
    reader: R,
    vocab: &Vocab,
    words: &WordEmbeddingTable,
    len: usize,
) -> Result<(DescriptionTable, usize)> {
    let mut table = DescriptionTable::new(vocab.num_entities(), len);
    let mut skipped = 0;
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: no + 1,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let Some((name, text)) = line.split_once('\t') else {
            return Err(Error::Parse {
                line: no + 1,
                msg: "expected `entity<TAB>text`".into(),
            });
        };
        match vocab.entity(name.trim()) {
            Some(e) => table.insert_text(e, text, words),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("descriptions: skipped {skipped} lines for unknown entities");
    }
    Ok((table, skipped))
}
