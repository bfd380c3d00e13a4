//! Name-keyed registries of interchangeable strategies.
//!
//! Integrators, datasets, analytic fields, branch rules, weight schedules and
//! sample distances are all trait objects looked up by the names used in
//! config files and on the command line.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown {kind} '{name}' (known: {known})")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
    pub known: String,
}

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &str, entry: Arc<T>) -> &mut Self {
        self.entries.insert(name.to_string(), entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>, UnknownName> {
        self.entries.get(name).cloned().ok_or_else(|| UnknownName {
            kind: self.kind,
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}
