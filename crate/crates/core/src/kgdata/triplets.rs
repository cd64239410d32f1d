use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Vocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub h: usize,
    pub r: usize,
    pub t: usize,
}

impl Triplet {
    pub fn new(h: usize, r: usize, t: usize) -> Self {
        Self { h, r, t }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    pub split: Split,
}

impl TripletSet {
    pub fn new(split: Split) -> Self {
        Self {
            triplets: Vec::new(),
            split,
        }
    }

    /// Builds a set from triplets, dropping repeats (first occurrence kept).
    pub fn from_triplets(split: Split, triplets: impl IntoIterator<Item = Triplet>) -> Self {
        let mut seen = HashSet::new();
        let triplets = triplets.into_iter().filter(|t| seen.insert(*t)).collect();
        Self { triplets, split }
    }

    pub fn len(&self) -> usize {
        self.triplets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Triplet> {
        self.triplets.iter()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub duplicates: usize,
}

/// Reads `head<TAB>relation<TAB>tail` lines, registering names in `vocab`.
///
/// Lines without tabs are split on whitespace instead. Blank lines are
/// skipped; repeated triplets are dropped and counted.
pub fn load_triplets(path: &Path, vocab: &mut Vocab, split: Split) -> Result<(TripletSet, LoadReport)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_triplets(BufReader::new(file), vocab, split)
}

pub fn parse_triplets<R: BufRead>(reader: R, vocab: &mut Vocab, split: Split) -> Result<(TripletSet, LoadReport)> {
    let mut set = TripletSet::new(split);
    let mut seen = HashSet::new();
    let mut report = LoadReport::default();
    for (no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: no + 1,
            msg: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').map(str::trim).collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() != 3 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::Parse {
                line: no + 1,
                msg: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let h = vocab.add_entity(fields[0]);
        let r = vocab.add_relation(fields[1]);
        let t = vocab.add_entity(fields[2]);
        let trip = Triplet { h, r, t };
        if seen.insert(trip) {
            set.triplets.push(trip);
        } else {
            report.duplicates += 1;
        }
    }
    if report.duplicates > 0 {
        log::warn!("{:?} split: dropped {} duplicate triplets", split, report.duplicates);
    }
    Ok((set, report))
}

/// Membership index over positive triplets with per-(r,t) heads and
/// per-(h,r) tails.
#[derive(Debug, Clone, Default)]
pub struct TripletIndex {
    members: HashSet<Triplet>,
    heads: HashMap<(usize, usize), Vec<usize>>,
    tails: HashMap<(usize, usize), Vec<usize>>,
}

impl TripletIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_sets<'a>(sets: impl IntoIterator<Item = &'a TripletSet>) -> Self {
        let mut idx = Self::new();
        for s in sets {
            for &t in &s.triplets {
                idx.insert(t);
            }
        }
        idx
    }

    pub fn insert(&mut self, t: Triplet) -> bool {
        if !self.members.insert(t) {
            return false;
        }
        self.heads.entry((t.r, t.t)).or_default().push(t.h);
        self.tails.entry((t.h, t.r)).or_default().push(t.t);
        true
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.members.contains(t)
    }

    /// Known heads `h` with `(h, r, t)` positive.
    pub fn heads(&self, r: usize, t: usize) -> &[usize] {
        self.heads.get(&(r, t)).map_or(&[], Vec::as_slice)
    }

    /// Known tails `t` with `(h, r, t)` positive.
    pub fn tails(&self, h: usize, r: usize) -> &[usize] {
        self.tails.get(&(h, r)).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(TripletSet, LoadReport, Vocab)> {
        let mut v = Vocab::new();
        let (s, r) = parse_triplets(text.as_bytes(), &mut v, Split::Train)?;
        Ok((s, r, v))
    }

    #[test]
    fn parses_simple_file() {
        let (s, _, v) = parse("a\tr1\tb\nb\tr1\tc\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(v.num_entities(), 3);
        assert_eq!(v.num_relations(), 1);
        assert_eq!(s.triplets[1], Triplet::new(1, 0, 2));
    }

    #[test]
    fn whitespace_fallback() {
        let (s, _, v) = parse("a r1 b\nb r1 c\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(v.num_entities(), 3);
    }

    #[test]
    fn empty_file() {
        let (s, r, v) = parse("").unwrap();
        assert!(s.is_empty());
        assert_eq!(r.duplicates, 0);
        assert_eq!(v.num_entities() + v.num_relations(), 0);
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse("a\tr\tb\na\tr\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicates_are_dropped_and_counted() {
        let (s, r, _) = parse("a\tr\tb\na\tr\tb\nb\tr\ta\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(r.duplicates, 1);
    }

    #[test]
    fn index_lookups() {
        let (s, _, _) = parse("a\tr\tx\nb\tr\tx\na\tr\ty\n").unwrap();
        // a=0, x=1, b=2, y=3
        let idx = TripletIndex::from_sets([&s]);
        assert!(idx.contains(&Triplet::new(2, 0, 1)));
        assert!(!idx.contains(&Triplet::new(2, 0, 3)));
        assert_eq!(idx.heads(0, 1), &[0, 2]);
        assert_eq!(idx.tails(0, 0), &[1, 3]);
        assert!(idx.tails(1, 0).is_empty());
    }
}
