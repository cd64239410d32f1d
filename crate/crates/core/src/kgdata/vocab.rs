use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// Dense name ↔ index maps for entities and relations.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "VocabNames", into = "VocabNames")]
pub struct Vocab {
    entities: Vec<String>,
    relations: Vec<String>,
    entity_index: HashMap<String, usize>,
    relation_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabNames {
    entities: Vec<String>,
    relations: Vec<String>,
}

impl From<VocabNames> for Vocab {
    fn from(v: VocabNames) -> Self {
        let mut vocab = Vocab::default();
        for e in v.entities {
            vocab.add_entity(&e);
        }
        for r in v.relations {
            vocab.add_relation(&r);
        }
        vocab
    }
}

impl From<Vocab> for VocabNames {
    fn from(v: Vocab) -> Self {
        VocabNames {
            entities: v.entities,
            relations: v.relations,
        }
    }
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of `name`, registering it if new.
    pub fn add_entity(&mut self, name: &str) -> usize {
        if let Some(&i) = self.entity_index.get(name) {
            return i;
        }
        let i = self.entities.len();
        self.entities.push(name.to_owned());
        self.entity_index.insert(name.to_owned(), i);
        i
    }

    pub fn add_relation(&mut self, name: &str) -> usize {
        if let Some(&i) = self.relation_index.get(name) {
            return i;
        }
        let i = self.relations.len();
        self.relations.push(name.to_owned());
        self.relation_index.insert(name.to_owned(), i);
        i
    }

    pub fn entity(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, i: usize) -> &str {
        &self.entities[i]
    }

    pub fn relation_name(&self, i: usize) -> &str {
        &self.relations[i]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entities
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }
}
