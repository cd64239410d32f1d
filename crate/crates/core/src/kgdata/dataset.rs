use std::path::{Path, PathBuf};

use super::{
    load_descriptions, load_triplets, load_word_vectors, DescriptionTable, Split, TripletIndex, TripletSet, Vocab,
    WordEmbeddingTable,
};
use crate::error::{Error, Result};

/// Word table and per-entity descriptions.
#[derive(Debug, Clone)]
pub struct TextData {
    pub words: WordEmbeddingTable,
    pub descriptions: DescriptionTable,
}

/// Training, validation and test triplets over one vocabulary.
///
/// Training triplets are read first, so entity ids below
/// `train_entities` are exactly the entities seen in training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: TripletSet,
    pub valid: TripletSet,
    pub test: TripletSet,
    pub train_entities: usize,
    pub train_relations: usize,
    pub text: Option<TextData>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetPaths {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub descriptions: Option<PathBuf>,
    pub word_vectors: Option<PathBuf>,
}

impl Dataset {
    pub fn from_sets(vocab: Vocab, train: TripletSet, valid: TripletSet, test: TripletSet) -> Self {
        let train_entities = train.iter().map(|t| t.h.max(t.t) + 1).max().unwrap_or(0);
        let train_relations = train.iter().map(|t| t.r + 1).max().unwrap_or(0);
        Self {
            vocab,
            train,
            valid,
            test,
            train_entities,
            train_relations,
            text: None,
        }
    }

    /// Loads the triplet files, then descriptions of length `desc_len`
    /// if both text paths are given.
    pub fn load(paths: &DatasetPaths, desc_len: usize) -> Result<Self> {
        let mut vocab = Vocab::new();
        let Some(train_path) = &paths.train else {
            return Err(Error::Config("a training triplet file is required".into()));
        };
        let (train, _) = load_triplets(train_path, &mut vocab, Split::Train)?;
        let train_entities = vocab.num_entities();
        let train_relations = vocab.num_relations();
        let mut optional = |p: &Option<PathBuf>, split| -> Result<TripletSet> {
            match p {
                Some(p) => Ok(load_triplets(p, &mut vocab, split)?.0),
                None => Ok(TripletSet::new(split)),
            }
        };
        let valid = optional(&paths.valid, Split::Valid)?;
        let test = optional(&paths.test, Split::Test)?;
        let mut data = Self {
            vocab,
            train,
            valid,
            test,
            train_entities,
            train_relations,
            text: None,
        };
        match (&paths.descriptions, &paths.word_vectors) {
            (Some(d), Some(w)) => data.attach_text(d, w, desc_len)?,
            (None, None) => {}
            _ => {
                return Err(Error::Config(
                    "descriptions and word vectors must be given together".into(),
                ))
            }
        }
        Ok(data)
    }

    pub fn attach_text(&mut self, descriptions: &Path, word_vectors: &Path, desc_len: usize) -> Result<()> {
        let (words, _) = load_word_vectors(word_vectors)?;
        let (mut descriptions, _) = load_descriptions(descriptions, &self.vocab, &words, desc_len)?;
        let words = descriptions.compact(&words);
        self.text = Some(TextData { words, descriptions });
        Ok(())
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.num_entities()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.num_relations()
    }

    /// Positives that negative sampling must avoid.
    pub fn sampling_index(&self) -> TripletIndex {
        TripletIndex::from_sets([&self.train])
    }

    /// Positives removed from ranking candidates.
    pub fn filter_index(&self, include_test: bool) -> TripletIndex {
        let mut sets = vec![&self.train, &self.valid];
        if include_test {
            sets.push(&self.test);
        }
        TripletIndex::from_sets(sets)
    }

    pub fn is_seen(&self, entity: usize) -> bool {
        entity < self.train_entities
    }

    /// `trained[r]` holds for every relation that occurs in training.
    pub fn trained_relations(&self) -> Vec<bool> {
        (0..self.num_relations()).map(|r| r < self.train_relations).collect()
    }
}

/// Random knowledge graph with entities `e0..` and relations `r0..`.
/// Every triplet goes to the training split.
pub fn synthetic_dataset(num_entities: usize, num_relations: usize, num_triplets: usize, seed: u64) -> Dataset {
    use rand::{Rng, SeedableRng};
    assert!(
        num_triplets <= num_entities * num_entities * num_relations,
        "too many triplets requested"
    );
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = Vocab::new();
    for e in 0..num_entities {
        vocab.add_entity(&format!("e{e}"));
    }
    for r in 0..num_relations {
        vocab.add_relation(&format!("r{r}"));
    }
    let mut seen = std::collections::HashSet::new();
    let mut triplets = Vec::with_capacity(num_triplets);
    while triplets.len() < num_triplets {
        let t = super::Triplet::new(
            rng.random_range(0..num_entities),
            rng.random_range(0..num_relations),
            rng.random_range(0..num_entities),
        );
        if seen.insert(t) {
            triplets.push(t);
        }
    }
    let mut data = Dataset::from_sets(
        vocab,
        TripletSet::from_triplets(Split::Train, triplets),
        TripletSet::new(Split::Valid),
        TripletSet::new(Split::Test),
    );
    data.train_entities = num_entities;
    data.train_relations = num_relations;
    data
}
