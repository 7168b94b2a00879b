//! Name-keyed tables of interchangeable implementations.
//!
//! Composition rules, environments and training algorithms are each exposed
//! through a trait and registered here under the name used in configs and on
//! the command line.

use crate::error::{Error, Result};

pub struct Entry<F> {
    pub name: &'static str,
    pub summary: &'static str,
    pub factory: F,
}

pub struct Registry<F> {
    kind: &'static str,
    entries: Vec<Entry<F>>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: Vec::new(),
        }
    }

    /// Later registrations under the same name replace earlier ones.
    pub fn register(&mut self, name: &'static str, summary: &'static str, factory: F) {
        self.entries.retain(|e| e.name != name);
        self.entries.push(Entry { name, summary, factory });
    }

    pub fn get(&self, name: &str) -> Result<&F> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &e.factory)
            .ok_or_else(|| Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name).collect()
    }

    pub fn entries(&self) -> &[Entry<F>] {
        &self.entries
    }
}
