//! Typed access to store collections.

use std::marker::PhantomData;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::storage::{Collection, Document, Store, StoreError};

#[derive(Clone, Debug)]
pub struct Versioned<T> {
    pub id: String,
    pub version: u64,
    pub value: T,
}

pub(crate) struct Repo<T> {
    store: Arc<dyn Store>,
    collection: Collection,
    _marker: PhantomData<fn() -> T>,
}

impl<T> Clone for Repo<T> {
    fn clone(&self) -> Self {
        Repo { store: self.store.clone(), collection: self.collection, _marker: PhantomData }
    }
}

fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("domain values serialize")
}

impl<T: Serialize + DeserializeOwned> Repo<T> {
    pub(crate) fn new(store: Arc<dyn Store>, collection: Collection) -> Self {
        Repo { store, collection, _marker: PhantomData }
    }

    fn decode(&self, doc: Document) -> Result<Versioned<T>, StoreError> {
        let value = serde_json::from_slice(&doc.payload).map_err(|e| StoreError::Corrupt {
            file: format!("{}/{}", self.collection, doc.id),
            detail: e.to_string(),
        })?;
        Ok(Versioned { id: doc.id, version: doc.version, value })
    }

    pub(crate) fn get(&self, id: &str) -> Result<Option<Versioned<T>>, StoreError> {
        self.store.get(self.collection, id)?.map(|d| self.decode(d)).transpose()
    }

    pub(crate) fn insert(&self, id: &str, value: T) -> Result<Versioned<T>, StoreError> {
        let doc = self.store.put_new(self.collection, id, encode(&value))?;
        Ok(Versioned { id: doc.id, version: doc.version, value })
    }

    pub(crate) fn replace(&self, current: &Versioned<T>, value: T) -> Result<Versioned<T>, StoreError> {
        let doc = self.store.update_if_version(self.collection, &current.id, current.version, encode(&value))?;
        Ok(Versioned { id: doc.id, version: doc.version, value })
    }

    /// Read-modify-write with retry on version conflicts. `f` sees the latest
    /// value each attempt; an `Err` from it aborts without writing, `Ok(None)`
    /// leaves the document as is.
    pub(crate) fn modify<E>(
        &self,
        id: &str,
        mut f: impl FnMut(&T) -> Result<Option<T>, E>,
    ) -> Result<Option<Versioned<T>>, E>
    where
        E: From<StoreError>,
    {
        loop {
            let Some(current) = self.get(id)? else {
                return Ok(None);
            };
            let Some(next) = f(&current.value)? else {
                return Ok(Some(current));
            };
            match self.replace(&current, next) {
                Ok(v) => return Ok(Some(v)),
                Err(StoreError::VersionConflict { .. }) => continue,
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub(crate) fn query(&self, index: &str, key: &str) -> Result<Vec<Versioned<T>>, StoreError> {
        self.store
            .query_by_index(self.collection, index, key)?
            .into_iter()
            .map(|d| self.decode(d))
            .collect()
    }

    pub(crate) fn scan(&self) -> Result<Vec<Versioned<T>>, StoreError> {
        self.store.scan(self.collection)?.into_iter().map(|d| self.decode(d)).collect()
    }

    pub(crate) fn delete(&self, id: &str) -> Result<(), StoreError> {
        self.store.delete(self.collection, id)
    }
}
