//! Extracted-view cache: a keyed collection of view sets, persisted one
//! `<lesion_id>.views.raw` stack (plus sidecar) per lesion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::views::{load_view_stack, save_view_stack, ViewSet};

#[derive(Debug, Clone, Default)]
pub struct ViewStore {
    sets: BTreeMap<String, ViewSet>,
}

impl ViewStore {
    pub fn new() -> Self {
        ViewStore::default()
    }

    pub fn insert(&mut self, set: ViewSet) {
        self.sets.insert(set.lesion_id().to_string(), set);
    }

    pub fn get(&self, lesion_id: &str) -> Option<&ViewSet> {
        self.sets.get(lesion_id)
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Lesion ids in sorted order (the deterministic iteration order).
    pub fn ids(&self) -> Vec<String> {
        self.sets.keys().cloned().collect()
    }

    /// Load every `*.raw` view stack under a directory.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut store = ViewStore::new();
        let entries = fs::read_dir(dir)
            .map_err(|e| Error::io(format!("read view store dir {}", dir.display()), e))?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "raw"))
            .collect();
        paths.sort();
        for p in paths {
            store.insert(load_view_stack(&p)?);
        }
        if store.is_empty() {
            return Err(Error::EmptyData {
                context: "view store directory has no stacks",
            });
        }
        Ok(store)
    }

    /// Persist every stack into a directory as `<lesion_id>.views.raw`.
    pub fn save_into(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)
            .map_err(|e| Error::io(format!("create {}", dir.display()), e))?;
        for (id, set) in &self.sets {
            save_view_stack(set, &dir.join(format!("{id}.views.raw")))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic_lesion, SyntheticClass};
    use crate::views::extract_views;

    #[test]
    fn roundtrip_through_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ViewStore::new();
        for seed in 0..3 {
            let cube = gen_synthetic_lesion(SyntheticClass::SmoothBlob, 12, seed).unwrap();
            store.insert(extract_views(&cube, &[1, 2, 3], 12).unwrap());
        }
        store.save_into(dir.path()).unwrap();
        let back = ViewStore::from_dir(dir.path()).unwrap();
        assert_eq!(back.ids(), store.ids());
        // Pixels go through f32 on disk; ids and shapes survive exactly.
        let id = &store.ids()[0];
        assert_eq!(back.get(id).unwrap().plane_ids(), store.get(id).unwrap().plane_ids());
    }
}
