//! Append-only log persistence.
//!
//! Each collection lives in `<data-dir>/<collection>.log`: one format byte
//! followed by records of the form
//!
//! ```text
//! u32 LE body length | u32 LE crc32(body) | body
//! body = op u8 (1 put, 2 delete) | u16 LE id length | id | [u64 LE version | payload]
//! ```
//!
//! On open every log is replayed, a torn or corrupt tail is dropped, and the
//! log is rewritten with one put record per live document.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use parking_lot::RwLock;

use super::memory::Tables;
use super::{Collection, Document, IndexSpec, Store, StoreError};

pub const LOG_FORMAT_VERSION: u8 = 0x01;

const OP_PUT: u8 = 1;
const OP_DELETE: u8 = 2;
const RECORD_HEADER: usize = 8;

#[derive(Clone, Debug)]
pub struct FileStoreOptions {
    /// fsync after every append. Without it, writes survive a process
    /// crash but not a power loss.
    pub sync_writes: bool,
}

impl Default for FileStoreOptions {
    fn default() -> Self {
        FileStoreOptions { sync_writes: true }
    }
}

struct Inner {
    tables: Tables,
    logs: HashMap<Collection, File>,
}

pub struct FileStore {
    dir: PathBuf,
    options: FileStoreOptions,
    inner: RwLock<Inner>,
}

enum Record {
    Put(Document),
    Delete { collection: Collection, id: String },
}

impl FileStore {
    pub fn open(dir: impl AsRef<Path>, indexes: Vec<IndexSpec>, options: FileStoreOptions) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut tables = Tables::new(indexes);
        let mut logs = HashMap::new();
        for collection in Collection::ALL {
            let path = log_path(&dir, collection);
            let mut replayed = 0usize;
            if path.exists() {
                for record in read_log(&path, collection)? {
                    replayed += 1;
                    match record {
                        Record::Put(doc) => tables.install(doc),
                        Record::Delete { collection, id } => tables.remove(collection, &id),
                    }
                }
            }
            let live = tables.scan(collection);
            if replayed > 0 || !path.exists() {
                compact(&dir, collection, &live)?;
            }
            if replayed > live.len() {
                info!("compacted {}: {} records -> {}", collection, replayed, live.len());
            }
            let file = OpenOptions::new().append(true).open(&path)?;
            logs.insert(collection, file);
        }
        sync_dir(&dir)?;
        Ok(FileStore { dir, options, inner: RwLock::new(Inner { tables, logs }) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append(&self, inner: &mut Inner, record: &Record) -> Result<(), StoreError> {
        let collection = match record {
            Record::Put(doc) => doc.collection,
            Record::Delete { collection, .. } => *collection,
        };
        let file = inner.logs.get_mut(&collection).expect("log opened for every collection");
        file.write_all(&encode(record))?;
        if self.options.sync_writes {
            file.sync_data()?;
        }
        Ok(())
    }
}

impl Store for FileStore {
    fn get(&self, collection: Collection, id: &str) -> Result<Option<Document>, StoreError> {
        Ok(self.inner.read().tables.get(collection, id).cloned())
    }

    fn put_new(&self, collection: Collection, id: &str, payload: Vec<u8>) -> Result<Document, StoreError> {
        let mut inner = self.inner.write();
        let doc = inner.tables.prepare_new(collection, id, payload)?;
        let record = Record::Put(doc);
        self.append(&mut inner, &record)?;
        let Record::Put(doc) = record else { unreachable!() };
        inner.tables.install(doc.clone());
        Ok(doc)
    }

    fn update_if_version(
        &self,
        collection: Collection,
        id: &str,
        expected_version: u64,
        payload: Vec<u8>,
    ) -> Result<Document, StoreError> {
        let mut inner = self.inner.write();
        let doc = inner.tables.prepare_update(collection, id, expected_version, payload)?;
        let record = Record::Put(doc);
        self.append(&mut inner, &record)?;
        let Record::Put(doc) = record else { unreachable!() };
        inner.tables.install(doc.clone());
        Ok(doc)
    }

    fn query_by_index(&self, collection: Collection, index_name: &str, key: &str) -> Result<Vec<Document>, StoreError> {
        self.inner.read().tables.query(collection, index_name, key)
    }

    fn delete(&self, collection: Collection, id: &str) -> Result<(), StoreError> {
        let mut inner = self.inner.write();
        inner.tables.prepare_delete(collection, id)?;
        self.append(&mut inner, &Record::Delete { collection, id: id.to_owned() })?;
        inner.tables.remove(collection, id);
        Ok(())
    }

    fn scan(&self, collection: Collection) -> Result<Vec<Document>, StoreError> {
        Ok(self.inner.read().tables.scan(collection))
    }

    fn flush(&self) -> Result<(), StoreError> {
        let inner = self.inner.read();
        for file in inner.logs.values() {
            file.sync_all()?;
        }
        Ok(())
    }
}

fn log_path(dir: &Path, collection: Collection) -> PathBuf {
    dir.join(format!("{}.log", collection.name()))
}

fn encode(record: &Record) -> Vec<u8> {
    let mut body = Vec::new();
    let (op, id) = match record {
        Record::Put(doc) => (OP_PUT, &doc.id),
        Record::Delete { id, .. } => (OP_DELETE, id),
    };
    body.push(op);
    body.extend_from_slice(&(id.len() as u16).to_le_bytes());
    body.extend_from_slice(id.as_bytes());
    if let Record::Put(doc) = record {
        body.extend_from_slice(&doc.version.to_le_bytes());
        body.extend_from_slice(&doc.payload);
    }
    let mut out = Vec::with_capacity(RECORD_HEADER + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    out.extend_from_slice(&body);
    out
}

fn decode(collection: Collection, body: &[u8]) -> Option<Record> {
    let (&op, rest) = body.split_first()?;
    let id_len = u16::from_le_bytes(rest.get(..2)?.try_into().ok()?) as usize;
    let id = std::str::from_utf8(rest.get(2..2 + id_len)?).ok()?.to_owned();
    let rest = &rest[2 + id_len..];
    match op {
        OP_PUT => {
            let version = u64::from_le_bytes(rest.get(..8)?.try_into().ok()?);
            Some(Record::Put(Document { collection, id, version, payload: rest[8..].to_vec() }))
        }
        OP_DELETE if rest.is_empty() => Some(Record::Delete { collection, id }),
        _ => None,
    }
}

fn read_log(path: &Path, collection: Collection) -> Result<Vec<Record>, StoreError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let file = path.display().to_string();
    match bytes.first() {
        None => return Ok(Vec::new()),
        Some(&LOG_FORMAT_VERSION) => {}
        Some(&other) => {
            return Err(StoreError::Corrupt { file, detail: format!("unsupported format byte {other:#04x}") });
        }
    }
    let mut records = Vec::new();
    let mut pos = 1;
    while pos < bytes.len() {
        let Some(header) = bytes.get(pos..pos + RECORD_HEADER) else {
            warn!("{file}: dropping torn record header at offset {pos}");
            break;
        };
        let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(header[4..].try_into().unwrap());
        let Some(body) = bytes.get(pos + RECORD_HEADER..pos + RECORD_HEADER + len) else {
            warn!("{file}: dropping torn record at offset {pos}");
            break;
        };
        if crc32fast::hash(body) != crc {
            warn!("{file}: checksum mismatch at offset {pos}, dropping the rest of the log");
            break;
        }
        match decode(collection, body) {
            Some(r) => records.push(r),
            None => {
                return Err(StoreError::Corrupt { file, detail: format!("undecodable record at offset {pos}") });
            }
        }
        pos += RECORD_HEADER + len;
    }
    Ok(records)
}

fn compact(dir: &Path, collection: Collection, live: &[Document]) -> io::Result<()> {
    let path = log_path(dir, collection);
    let tmp = path.with_extension("log.tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        out.write_all(&[LOG_FORMAT_VERSION])?;
        for doc in live {
            out.write_all(&encode(&Record::Put(doc.clone())))?;
        }
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    }
    fs::rename(&tmp, &path)
}

fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}
