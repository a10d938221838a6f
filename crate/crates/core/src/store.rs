//! Filesystem document store.
//!
//! Layout, one directory per distinct PDF:
//!
//! ```text
//! <root>/<content_hash>/document.pdf
//! <root>/<content_hash>/meta.json
//! <root>/<content_hash>/questions.quiz.json
//! ```
//!
//! Writes go to a temporary file in the same directory and are renamed into
//! place, so readers only ever see complete files.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};
use uuid::Uuid;

use crate::ingest::{ContentHash, DocumentId, PageText, SourceDocument};
use crate::parser::PageQuestionSet;
use crate::sidecar::{parse_sidecar, serialize_sidecar, DocumentDescriptor, SidecarError};

const PDF_FILE: &str = "document.pdf";
const META_FILE: &str = "meta.json";
const SIDECAR_FILE: &str = "questions.quiz.json";
const TEMP_MARKER: &str = ".tmp-";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("document {0} not found")]
    NotFound(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

impl From<io::Error> for StoreError {
    fn from(e: io::Error) -> Self {
        StoreError::StorageFailure(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredDocument {
    pub document: SourceDocument,
    pub pages: Vec<PageText>,
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    write_atomic_with(path, bytes, |_| Ok(()))
}

/// [`write_atomic`] with a hook that runs after the temp file is durable and
/// before the rename. An error from the hook aborts the write.
pub(crate) fn write_atomic_with(
    path: &Path,
    bytes: &[u8],
    before_rename: impl FnOnce(&Path) -> io::Result<()>,
) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(
        "{}{TEMP_MARKER}{}",
        name.to_string_lossy(),
        Uuid::new_v4().simple()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    before_rename(&tmp)?;
    fs::rename(&tmp, path)
}

/// Content-addressed store of uploaded PDFs, their extracted pages, and
/// generated question sets.
#[derive(Debug)]
pub struct DocumentStore {
    root: PathBuf,
    index: RwLock<HashMap<DocumentId, ContentHash>>,
    write_locks: Mutex<HashMap<ContentHash, Arc<Mutex<()>>>>,
}

impl DocumentStore {
    /// Opens (creating if needed) a store rooted at `root` and indexes the
    /// documents already present.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        let mut index = HashMap::new();
        for entry in fs::read_dir(&root)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let dir = entry.path();
            remove_stale_temps(&dir);
            match read_meta(&dir) {
                Ok(stored) => {
                    index.insert(stored.document.id.clone(), stored.document.content_hash);
                }
                Err(e) => warn!(dir = %dir.display(), error = %e, "skipping unreadable store entry"),
            }
        }
        debug!(root = %root.display(), documents = index.len(), "opened document store");
        Ok(Self {
            root,
            index: RwLock::new(index),
            write_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, hash: &ContentHash) -> PathBuf {
        self.root.join(hash.to_hex())
    }

    fn write_lock(&self, hash: &ContentHash) -> Arc<Mutex<()>> {
        self.write_locks
            .lock()
            .expect("write lock map poisoned")
            .entry(*hash)
            .or_default()
            .clone()
    }

    /// Resolves a document id or a hex content hash.
    pub fn resolve(&self, key: &str) -> Option<ContentHash> {
        if let Some(hash) = self
            .index
            .read()
            .expect("index poisoned")
            .get(&DocumentId::from(key.to_string()))
        {
            return Some(*hash);
        }
        ContentHash::from_hex(key).filter(|h| self.dir(h).join(META_FILE).is_file())
    }

    pub fn find_by_hash(&self, hash: &ContentHash) -> Option<StoredDocument> {
        read_meta(&self.dir(hash)).ok()
    }

    pub fn get(&self, key: &str) -> Result<StoredDocument, StoreError> {
        let hash = self.resolve(key).ok_or_else(|| StoreError::NotFound(key.to_string()))?;
        read_meta(&self.dir(&hash))
    }

    /// Stores a freshly extracted document. If the same bytes are already
    /// stored, the existing record is returned with `false`.
    pub fn insert(
        &self,
        document: SourceDocument,
        pages: Vec<PageText>,
        pdf_bytes: &[u8],
    ) -> Result<(StoredDocument, bool), StoreError> {
        let hash = document.content_hash;
        let lock = self.write_lock(&hash);
        let _guard = lock.lock().expect("document lock poisoned");
        if let Some(existing) = self.find_by_hash(&hash) {
            return Ok((existing, false));
        }
        let dir = self.dir(&hash);
        fs::create_dir_all(&dir)?;
        write_atomic(&dir.join(PDF_FILE), pdf_bytes)?;
        let stored = StoredDocument { document, pages };
        let meta = serde_json::to_vec_pretty(&stored).map_err(|e| StoreError::StorageFailure(e.to_string()))?;
        // meta.json is written last; its presence marks a complete entry.
        write_atomic(&dir.join(META_FILE), &meta)?;
        self.index
            .write()
            .expect("index poisoned")
            .insert(stored.document.id.clone(), hash);
        Ok((stored, true))
    }

    pub fn read_pdf(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        let hash = self.resolve(key).ok_or_else(|| StoreError::NotFound(key.to_string()))?;
        Ok(fs::read(self.dir(&hash).join(PDF_FILE))?)
    }

    pub fn sidecar_path(&self, hash: &ContentHash) -> PathBuf {
        self.dir(hash).join(SIDECAR_FILE)
    }

    /// Replaces all stored question sets of `document`.
    pub fn save_results(
        &self,
        document: &SourceDocument,
        sets: &[PageQuestionSet],
        generated_at: &str,
    ) -> Result<PathBuf, StoreError> {
        let lock = self.write_lock(&document.content_hash);
        let _guard = lock.lock().expect("document lock poisoned");
        self.save_locked(document, sets, generated_at, |_| Ok(()))
    }

    fn save_locked(
        &self,
        document: &SourceDocument,
        sets: &[PageQuestionSet],
        generated_at: &str,
        before_rename: impl FnOnce(&Path) -> io::Result<()>,
    ) -> Result<PathBuf, StoreError> {
        if self.find_by_hash(&document.content_hash).is_none() {
            return Err(StoreError::NotFound(document.id.to_string()));
        }
        let mut sorted = sets.to_vec();
        sort_sets(&mut sorted);
        let text = serialize_sidecar(&DocumentDescriptor::from(document), generated_at, &sorted)?;
        let path = self.sidecar_path(&document.content_hash);
        write_atomic_with(&path, text.as_bytes(), before_rename)?;
        Ok(path)
    }

    /// Loads the stored question sets for a document id or content hash.
    /// A known document with nothing generated yet yields an empty list.
    pub fn load_results(&self, key: &str) -> Result<Vec<PageQuestionSet>, StoreError> {
        let hash = self.resolve(key).ok_or_else(|| StoreError::NotFound(key.to_string()))?;
        match fs::read_to_string(self.sidecar_path(&hash)) {
            Ok(text) => Ok(parse_sidecar(&text)?.pages),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    /// Merges `sets` into the stored sidecar, replacing entries with the
    /// same (page, kind) and leaving the rest untouched.
    pub fn upsert_results(
        &self,
        document: &SourceDocument,
        sets: &[PageQuestionSet],
        generated_at: &str,
    ) -> Result<Vec<PageQuestionSet>, StoreError> {
        let lock = self.write_lock(&document.content_hash);
        let _guard = lock.lock().expect("document lock poisoned");
        let mut merged = self.load_results(&document.content_hash.to_hex())?;
        for set in sets {
            match merged
                .iter_mut()
                .find(|s| s.page_index == set.page_index && s.kind == set.kind)
            {
                Some(slot) => *slot = set.clone(),
                None => merged.push(set.clone()),
            }
        }
        sort_sets(&mut merged);
        self.save_locked(document, &merged, generated_at, |_| Ok(()))?;
        Ok(merged)
    }
}

/// Canonical order of stored sets: by page, then kind.
pub fn sort_sets(sets: &mut [PageQuestionSet]) {
    sets.sort_by_key(|s| (s.page_index, s.kind));
}

fn read_meta(dir: &Path) -> Result<StoredDocument, StoreError> {
    let text = fs::read_to_string(dir.join(META_FILE)).map_err(|e| {
        if e.kind() == io::ErrorKind::NotFound {
            StoreError::NotFound(dir.display().to_string())
        } else {
            e.into()
        }
    })?;
    serde_json::from_str(&text).map_err(|e| StoreError::StorageFailure(format!("corrupt metadata: {e}")))
}

fn remove_stale_temps(dir: &Path) {
    let Ok(entries) = fs::read_dir(dir) else { return };
    for entry in entries.flatten() {
        if entry.file_name().to_string_lossy().contains(TEMP_MARKER) {
            let _ = fs::remove_file(entry.path());
        }
    }
}
