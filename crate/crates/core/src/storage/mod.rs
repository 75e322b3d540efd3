//! Document persistence.
//!
//! A [`Store`] holds versioned documents in a fixed set of collections.
//! Secondary indexes are declared up front and keyed by a top-level field of
//! the JSON payload; a field holding an array contributes one key per
//! element, a missing or null field contributes none. Unique indexes reject
//! writes that would give two documents the same key.

mod file;
mod memory;

use std::fmt;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{FileStore, FileStoreOptions, LOG_FORMAT_VERSION};
pub use memory::MemoryStore;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    Users,
    Credentials,
    Sessions,
    FriendRequests,
    Friendships,
    Conversations,
    Messages,
    Events,
    Participations,
    Cards,
    Payments,
}

impl Collection {
    pub const ALL: [Collection; 11] = [
        Collection::Users,
        Collection::Credentials,
        Collection::Sessions,
        Collection::FriendRequests,
        Collection::Friendships,
        Collection::Conversations,
        Collection::Messages,
        Collection::Events,
        Collection::Participations,
        Collection::Cards,
        Collection::Payments,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Collection::Users => "users",
            Collection::Credentials => "credentials",
            Collection::Sessions => "sessions",
            Collection::FriendRequests => "friend_requests",
            Collection::Friendships => "friendships",
            Collection::Conversations => "conversations",
            Collection::Messages => "messages",
            Collection::Events => "events",
            Collection::Participations => "participations",
            Collection::Cards => "cards",
            Collection::Payments => "payments",
        }
    }
}

impl fmt::Display for Collection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub collection: Collection,
    pub id: String,
    pub version: u64,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexSpec {
    pub name: &'static str,
    pub collection: Collection,
    pub field: &'static str,
    pub unique: bool,
}

impl IndexSpec {
    pub const fn new(name: &'static str, collection: Collection, field: &'static str) -> Self {
        IndexSpec { name, collection, field, unique: false }
    }

    pub const fn unique(name: &'static str, collection: Collection, field: &'static str) -> Self {
        IndexSpec { name, collection, field, unique: true }
    }

    /// Keys this index derives from `payload`. Non-JSON payloads have none.
    pub(crate) fn keys(&self, payload: &[u8]) -> Vec<String> {
        let Ok(serde_json::Value::Object(map)) = serde_json::from_slice::<serde_json::Value>(payload) else {
            return Vec::new();
        };
        let mut keys = match map.get(self.field) {
            Some(serde_json::Value::Array(items)) => items.iter().filter_map(scalar_key).collect(),
            Some(v) => scalar_key(v).into_iter().collect(),
            None => Vec::new(),
        };
        keys.sort();
        keys.dedup();
        keys
    }
}

fn scalar_key(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{collection}/{id} already exists")]
    DuplicateId { collection: Collection, id: String },
    #[error("{collection}/{id} not found")]
    NotFound { collection: Collection, id: String },
    #[error("{collection}/{id} is at version {actual}, expected {expected}")]
    VersionConflict { collection: Collection, id: String, expected: u64, actual: u64 },
    #[error("unknown index {0}")]
    UnknownIndex(String),
    #[error("key {key:?} already present in unique index {index}")]
    UniqueViolation { index: &'static str, key: String },
    #[error("corrupt log {file}: {detail}")]
    Corrupt { file: String, detail: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Versioned document storage shared by every service.
pub trait Store: Send + Sync {
    fn get(&self, collection: Collection, id: &str) -> Result<Option<Document>, StoreError>;

    /// Inserts at version 1; fails if `id` is taken.
    fn put_new(&self, collection: Collection, id: &str, payload: Vec<u8>) -> Result<Document, StoreError>;

    /// Replaces the payload iff the stored version equals `expected_version`.
    fn update_if_version(
        &self,
        collection: Collection,
        id: &str,
        expected_version: u64,
        payload: Vec<u8>,
    ) -> Result<Document, StoreError>;

    /// Documents whose `index_name` key equals `key`, ordered by id.
    fn query_by_index(&self, collection: Collection, index_name: &str, key: &str) -> Result<Vec<Document>, StoreError>;

    fn delete(&self, collection: Collection, id: &str) -> Result<(), StoreError>;

    /// Every document in `collection`, ordered by id.
    fn scan(&self, collection: Collection) -> Result<Vec<Document>, StoreError>;

    /// Makes every acknowledged write durable.
    fn flush(&self) -> Result<(), StoreError>;
}
