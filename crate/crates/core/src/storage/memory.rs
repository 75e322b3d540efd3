use std::collections::{BTreeMap, BTreeSet, HashMap};

use parking_lot::RwLock;

use super::{Collection, Document, IndexSpec, Store, StoreError};

/// Documents plus their index entries. Both store implementations keep their
/// live state in one of these.
pub(crate) struct Tables {
    docs: HashMap<Collection, BTreeMap<String, Document>>,
    specs: Vec<IndexSpec>,
    // index name -> key -> doc ids
    entries: HashMap<&'static str, BTreeMap<String, BTreeSet<String>>>,
}

impl Tables {
    pub(crate) fn new(specs: Vec<IndexSpec>) -> Self {
        let entries = specs.iter().map(|s| (s.name, BTreeMap::new())).collect();
        Tables { docs: HashMap::new(), specs, entries }
    }

    pub(crate) fn get(&self, collection: Collection, id: &str) -> Option<&Document> {
        self.docs.get(&collection).and_then(|c| c.get(id))
    }

    pub(crate) fn prepare_new(&self, collection: Collection, id: &str, payload: Vec<u8>) -> Result<Document, StoreError> {
        if self.get(collection, id).is_some() {
            return Err(StoreError::DuplicateId { collection, id: id.to_owned() });
        }
        let doc = Document { collection, id: id.to_owned(), version: 1, payload };
        self.check_unique(&doc)?;
        Ok(doc)
    }

    pub(crate) fn prepare_update(
        &self,
        collection: Collection,
        id: &str,
        expected_version: u64,
        payload: Vec<u8>,
    ) -> Result<Document, StoreError> {
        let current = self
            .get(collection, id)
            .ok_or_else(|| StoreError::NotFound { collection, id: id.to_owned() })?;
        if current.version != expected_version {
            return Err(StoreError::VersionConflict {
                collection,
                id: id.to_owned(),
                expected: expected_version,
                actual: current.version,
            });
        }
        let doc = Document { collection, id: id.to_owned(), version: current.version + 1, payload };
        self.check_unique(&doc)?;
        Ok(doc)
    }

    pub(crate) fn prepare_delete(&self, collection: Collection, id: &str) -> Result<(), StoreError> {
        match self.get(collection, id) {
            Some(_) => Ok(()),
            None => Err(StoreError::NotFound { collection, id: id.to_owned() }),
        }
    }

    fn check_unique(&self, doc: &Document) -> Result<(), StoreError> {
        for spec in self.specs.iter().filter(|s| s.unique && s.collection == doc.collection) {
            let index = &self.entries[spec.name];
            for key in spec.keys(&doc.payload) {
                if let Some(ids) = index.get(&key) {
                    if ids.iter().any(|other| other != &doc.id) {
                        return Err(StoreError::UniqueViolation { index: spec.name, key });
                    }
                }
            }
        }
        Ok(())
    }

    /// Installs a prepared document, replacing any previous version.
    pub(crate) fn install(&mut self, doc: Document) {
        self.unindex(doc.collection, &doc.id);
        for spec in self.specs.iter().filter(|s| s.collection == doc.collection) {
            let index = self.entries.get_mut(spec.name).expect("declared index");
            for key in spec.keys(&doc.payload) {
                index.entry(key).or_default().insert(doc.id.clone());
            }
        }
        self.docs.entry(doc.collection).or_default().insert(doc.id.clone(), doc);
    }

    pub(crate) fn remove(&mut self, collection: Collection, id: &str) {
        self.unindex(collection, id);
        if let Some(c) = self.docs.get_mut(&collection) {
            c.remove(id);
        }
    }

    fn unindex(&mut self, collection: Collection, id: &str) {
        let Some(old) = self.docs.get(&collection).and_then(|c| c.get(id)) else {
            return;
        };
        for spec in self.specs.iter().filter(|s| s.collection == collection) {
            let index = self.entries.get_mut(spec.name).expect("declared index");
            for key in spec.keys(&old.payload) {
                if let Some(ids) = index.get_mut(&key) {
                    ids.remove(id);
                    if ids.is_empty() {
                        index.remove(&key);
                    }
                }
            }
        }
    }

    pub(crate) fn query(&self, collection: Collection, index_name: &str, key: &str) -> Result<Vec<Document>, StoreError> {
        let spec = self
            .specs
            .iter()
            .find(|s| s.name == index_name && s.collection == collection)
            .ok_or_else(|| StoreError::UnknownIndex(index_name.to_owned()))?;
        let Some(ids) = self.entries[spec.name].get(key) else {
            return Ok(Vec::new());
        };
        Ok(ids.iter().filter_map(|id| self.get(collection, id)).cloned().collect())
    }

    pub(crate) fn scan(&self, collection: Collection) -> Vec<Document> {
        self.docs.get(&collection).map(|c| c.values().cloned().collect()).unwrap_or_default()
    }
}

/// Volatile store; everything is lost when dropped.
pub struct MemoryStore {
    tables: RwLock<Tables>,
}

impl MemoryStore {
    pub fn new(indexes: Vec<IndexSpec>) -> Self {
        MemoryStore { tables: RwLock::new(Tables::new(indexes)) }
    }
}

impl Store for MemoryStore {
    fn get(&self, collection: Collection, id: &str) -> Result<Option<Document>, StoreError> {
        Ok(self.tables.read().get(collection, id).cloned())
    }

    fn put_new(&self, collection: Collection, id: &str, payload: Vec<u8>) -> Result<Document, StoreError> {
        let mut tables = self.tables.write();
        let doc = tables.prepare_new(collection, id, payload)?;
        tables.install(doc.clone());
        Ok(doc)
    }

    fn update_if_version(
        &self,
        collection: Collection,
        id: &str,
        expected_version: u64,
        payload: Vec<u8>,
    ) -> Result<Document, StoreError> {
        let mut tables = self.tables.write();
        let doc = tables.prepare_update(collection, id, expected_version, payload)?;
        tables.install(doc.clone());
        Ok(doc)
    }

    fn query_by_index(&self, collection: Collection, index_name: &str, key: &str) -> Result<Vec<Document>, StoreError> {
        self.tables.read().query(collection, index_name, key)
    }

    fn delete(&self, collection: Collection, id: &str) -> Result<(), StoreError> {
        let mut tables = self.tables.write();
        tables.prepare_delete(collection, id)?;
        tables.remove(collection, id);
        Ok(())
    }

    fn scan(&self, collection: Collection) -> Result<Vec<Document>, StoreError> {
        Ok(self.tables.read().scan(collection))
    }

    fn flush(&self) -> Result<(), StoreError> {
        Ok(())
    }
}
