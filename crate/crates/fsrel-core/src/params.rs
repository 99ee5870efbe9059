//! Named parameter storage shared by the model, optimizer and checkpoints.

use std::collections::BTreeMap;

/// One named parameter tensor (flattened) plus its freeze flag.
#[derive(Debug, Clone)]
pub struct Param {
    pub values: Vec<f64>,
    /// Frozen parameters still carry gradients through the graph but are
    /// skipped by optimizer updates.
    pub frozen: bool,
}

/// Flat map of parameter name to values. Iteration order is the sorted name
/// order, which keeps updates and serialization deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, values: Vec<f64>, frozen: bool) {
        let prev = self.entries.insert(name.to_string(), Param { values, frozen });
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn values(&self, name: &str) -> Option<&[f64]> {
        self.entries.get(name).map(|p| p.values.as_slice())
    }

    pub fn values_mut(&mut self, name: &str) -> Option<&mut Vec<f64>> {
        self.entries.get_mut(name).map(|p| &mut p.values)
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.entries.get(name).map(|p| p.frozen).unwrap_or(true)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) {
        if let Some(p) = self.entries.get_mut(name) {
            p.frozen = frozen;
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(|(_, p)| !p.frozen)
            .map(|(k, _)| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn total_len(&self) -> usize {
        self.entries.values().map(|p| p.values.len()).sum()
    }
}
