//! Flat `key=value` maps shared by the run configuration file and the
//! checkpoint header.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{DidError, Result};

/// Ordered key/value pairs with typed accessors. Every key must be consumed
/// exactly once; [`Pairs::finish`] rejects leftovers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pairs {
    map: BTreeMap<String, String>,
    section: String,
}

impl Pairs {
    pub fn new(section: &str) -> Self {
        Self {
            map: BTreeMap::new(),
            section: section.to_string(),
        }
    }

    pub fn insert(&mut self, key: &str, value: impl Display) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn insert_list<T: Display>(&mut self, key: &str, values: &[T]) {
        let joined: Vec<String> = values.iter().map(ToString::to_string).collect();
        self.insert(key, joined.join(","));
    }

    pub fn raw(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    pub fn set_raw(&mut self, key: &str, value: &str) {
        self.map.insert(key.to_string(), value.to_string());
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    fn bad(&self, key: &str, value: &str, why: impl Display) -> DidError {
        DidError::Config(format!("{}.{key} = {value:?}: {why}", self.section))
    }

    /// Removes `key` and parses it, or returns `default` when absent.
    pub fn take<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => v.trim().parse().map_err(|e| self.bad(key, &v, e)),
        }
    }

    pub fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) => match v.trim() {
                "true" | "on" | "yes" | "1" => Ok(true),
                "false" | "off" | "no" | "0" => Ok(false),
                _ => Err(self.bad(key, &v, "expected true or false")),
            },
        }
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T::Err: Display,
    {
        match self.map.remove(key) {
            None => Ok(default),
            Some(v) if v.trim().is_empty() => Ok(Vec::new()),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse().map_err(|e| self.bad(key, &v, e)))
                .collect(),
        }
    }

    /// Errors if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.map.keys().next() {
            None => Ok(()),
            Some(k) => Err(DidError::Config(format!(
                "unknown key {}.{k}",
                self.section
            ))),
        }
    }
}
