//! The activity class table and the active class subset of an experiment.
//!
//! Fine classes are identified by their 1-based table id. Inside models and
//! losses a class is a 0-based index into the experiment's [`ClassSet`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BUILTIN: &str = include_str!("../data/activities.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityClass {
    pub id: u32,
    pub key: String,
    pub name: String,
    pub modalities: Vec<String>,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivityTable {
    pub version: u32,
    pub classes: Vec<ActivityClass>,
    pub desk_classes: Vec<u32>,
    pub coarse: BTreeMap<String, Vec<u32>>,
}

impl ActivityTable {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("builtin activity table is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let table: ActivityTable = toml::from_str(text).map_err(|e| crate::config::toml_error(text, &e))?;
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        for (i, c) in self.classes.iter().enumerate() {
            if c.id as usize != i + 1 {
                return Err(Error::Config(format!("class ids must be 1..=N in order, found {} at {}", c.id, i + 1)));
            }
        }
        for id in self.desk_classes.iter().chain(self.coarse.values().flatten()) {
            if !self.contains(*id) {
                return Err(Error::Config(format!("class id {id} is not in the table")));
            }
        }
        Ok(())
    }

    pub fn contains(&self, id: u32) -> bool {
        id >= 1 && (id as usize) <= self.classes.len()
    }

    pub fn class(&self, id: u32) -> Option<&ActivityClass> {
        if self.contains(id) {
            Some(&self.classes[id as usize - 1])
        } else {
            None
        }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Ordered subset of table classes used by one experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSet {
    ids: Vec<u32>,
}

impl ClassSet {
    pub fn new(table: &ActivityTable, ids: Vec<u32>) -> Result<Self> {
        if ids.len() < 2 {
            return Err(Error::Config("at least two activity classes are required".into()));
        }
        let mut seen = ids.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != ids.len() {
            return Err(Error::Config("duplicate class ids".into()));
        }
        if let Some(bad) = ids.iter().find(|&&id| !table.contains(id)) {
            return Err(Error::Config(format!("class id {bad} is not in the table")));
        }
        Ok(Self { ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn fine_id(&self, index: usize) -> u32 {
        self.ids[index]
    }

    pub fn index_of(&self, id: u32) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }
}
