//! Name → implementation tables for the interchangeable pieces of the
//! pipeline (backends, training objectives, null-column strategies,
//! decoders). Configuration files and the CLI select entries by name.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Registry<T> {
    kind: &'static str,
    entries: BTreeMap<&'static str, T>,
}

impl<T> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, value: T) -> &mut Self {
        self.entries.insert(name, value);
        self
    }

    pub fn with(mut self, name: &'static str, value: T) -> Self {
        self.register(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}
