//! PDF ingestion: validation, hashing and per-page text extraction.
//!
//! Text is pulled straight from page content streams. Every text-showing
//! operator contributes its decoded string, text-positioning operators act as
//! word/line breaks, and the result is whitespace-collapsed so prompts carry
//! no layout noise. Pages without any text-showing operator (scans, figures)
//! come back empty with `has_text_layer = false`.

use std::collections::BTreeMap;
use std::fmt;

use lopdf::content::Content;
use lopdf::{Document, Encoding, Object, ObjectId};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::warn;
use uuid::Uuid;

/// Default upper bound on accepted PDF size.
pub const DEFAULT_MAX_UPLOAD_BYTES: u64 = 50 * 1024 * 1024;
/// Default per-page character budget applied before prompting.
pub const DEFAULT_PAGE_CHAR_BUDGET: usize = 12_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("document is not a readable PDF: {0}")]
    UnreadableDocument(String),
    #[error("document is password-protected")]
    EncryptedDocument,
    #[error("document has no pages")]
    EmptyDocument,
    #[error("page {index} is out of range (document has {page_count} pages)")]
    PageOutOfRange { index: usize, page_count: usize },
}

/// Size limits for ingestion and prompting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestLimits {
    pub max_upload_bytes: u64,
    pub page_char_budget: usize,
}

impl Default for IngestLimits {
    fn default() -> Self {
        Self {
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            page_char_budget: DEFAULT_PAGE_CHAR_BUDGET,
        }
    }
}

/// Opaque document identifier, unique per upload within a store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocumentId(String);

impl DocumentId {
    pub fn generate() -> Self {
        Self(Uuid::new_v4().simple().to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for DocumentId {
    fn from(value: String) -> Self {
        Self(value)
    }
}

impl fmt::Display for DocumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// SHA-256 digest of the raw PDF bytes, rendered as lowercase hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash([u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).ok()?;
        Some(Self(out))
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ContentHash {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ContentHash::from_hex(&s)
            .ok_or_else(|| serde::de::Error::custom("content_hash must be 64 hex characters"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub id: DocumentId,
    pub filename: String,
    pub byte_size: u64,
    pub page_count: usize,
    pub content_hash: ContentHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageText {
    pub page_index: usize,
    pub text: String,
    pub char_count: usize,
    pub has_text_layer: bool,
}

impl PageText {
    pub fn new(page_index: usize, text: String, has_text_layer: bool) -> Self {
        let text = if has_text_layer { text } else { String::new() };
        Self {
            page_index,
            char_count: text.chars().count(),
            text,
            has_text_layer,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// Whether the bytes start with a PDF header (allowing leading junk the
/// format tolerates within the first KiB).
pub fn looks_like_pdf(bytes: &[u8]) -> bool {
    let window = &bytes[..bytes.len().min(1024)];
    window.windows(5).any(|w| w == b"%PDF-")
}

/// Parses `pdf_bytes` and returns the document metadata plus one entry per
/// physical page, in page order.
pub fn extract_document(
    pdf_bytes: &[u8],
    filename: &str,
) -> Result<(SourceDocument, Vec<PageText>), IngestError> {
    if pdf_bytes.is_empty() {
        return Err(IngestError::UnreadableDocument("empty input".into()));
    }
    if !looks_like_pdf(pdf_bytes) {
        return Err(IngestError::UnreadableDocument("missing %PDF header".into()));
    }
    let doc = match Document::load_mem(pdf_bytes) {
        Ok(doc) => doc,
        Err(lopdf::Error::Decryption(_)) => return Err(IngestError::EncryptedDocument),
        Err(e) => return Err(IngestError::UnreadableDocument(e.to_string())),
    };
    // lopdf transparently decrypts documents with an empty user password;
    // anything still flagged as encrypted needs a password we do not have.
    if doc.is_encrypted() {
        return Err(IngestError::EncryptedDocument);
    }

    let page_ids: BTreeMap<u32, ObjectId> = doc.get_pages();
    if page_ids.is_empty() {
        return Err(IngestError::EmptyDocument);
    }

    let pages: Vec<PageText> = page_ids
        .values()
        .enumerate()
        .map(|(index, &page_id)| {
            let (raw, has_text_layer) = page_raw_text(&doc, page_id).unwrap_or_else(|e| {
                warn!(page = index, error = %e, "could not decode page content");
                (String::new(), false)
            });
            PageText::new(index, normalize_whitespace(&raw), has_text_layer)
        })
        .collect();

    let document = SourceDocument {
        id: DocumentId::generate(),
        filename: filename.to_string(),
        byte_size: pdf_bytes.len() as u64,
        page_count: pages.len(),
        content_hash: ContentHash::of(pdf_bytes),
    };
    Ok((document, pages))
}

pub fn page_text(pages: &[PageText], index: usize) -> Result<&PageText, IngestError> {
    pages
        .iter()
        .find(|p| p.page_index == index)
        .ok_or(IngestError::PageOutOfRange {
            index,
            page_count: pages.len(),
        })
}

/// Collapses every run of whitespace into a single space and trims the ends.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Returns at most `budget` characters of `text`, cut on a char boundary.
pub fn truncate_to_budget(text: &str, budget: usize) -> &str {
    match text.char_indices().nth(budget) {
        Some((byte_idx, _)) => &text[..byte_idx],
        None => text,
    }
}

fn page_raw_text(doc: &Document, page_id: ObjectId) -> Result<(String, bool), lopdf::Error> {
    let fonts = doc.get_page_fonts(page_id).unwrap_or_default();
    let encodings: BTreeMap<Vec<u8>, Encoding> = fonts
        .into_iter()
        .filter_map(|(name, font)| font.get_font_encoding(doc).ok().map(|enc| (name, enc)))
        .collect();

    let content_data = match doc.get_page_content(page_id) {
        Ok(data) => data,
        // A page without a Contents entry is blank.
        Err(lopdf::Error::DictKey(_)) => return Ok((String::new(), false)),
        Err(e) => return Err(e),
    };
    let content = Content::decode(&content_data)?;

    let mut out = String::new();
    let mut has_text_layer = false;
    let mut encoding: Option<&Encoding> = None;
    for op in &content.operations {
        match op.operator.as_str() {
            "Tf" => {
                encoding = op
                    .operands
                    .first()
                    .and_then(|o| o.as_name().ok())
                    .and_then(|name| encodings.get(name));
            }
            "Tj" => {
                has_text_layer = true;
                push_strings(&mut out, encoding, &op.operands);
            }
            "TJ" => {
                has_text_layer = true;
                if let Some(Object::Array(items)) = op.operands.first() {
                    for item in items {
                        match item {
                            Object::String(bytes, _) => out.push_str(&decode(encoding, bytes)),
                            // Large negative kerning is how many producers encode a space.
                            Object::Integer(i) if *i < -200 => out.push(' '),
                            Object::Real(r) if *r < -200.0 => out.push(' '),
                            _ => {}
                        }
                    }
                }
            }
            "'" => {
                has_text_layer = true;
                out.push(' ');
                push_strings(&mut out, encoding, &op.operands);
            }
            "\"" => {
                has_text_layer = true;
                out.push(' ');
                push_strings(&mut out, encoding, op.operands.get(2..).unwrap_or_default());
            }
            "Td" | "TD" | "T*" | "Tm" | "BT" | "ET" => out.push(' '),
            _ => {}
        }
    }
    Ok((out, has_text_layer))
}

fn push_strings(out: &mut String, encoding: Option<&Encoding>, operands: &[Object]) {
    for operand in operands {
        if let Object::String(bytes, _) = operand {
            out.push_str(&decode(encoding, bytes));
        }
    }
}

fn decode(encoding: Option<&Encoding>, bytes: &[u8]) -> String {
    encoding
        .and_then(|enc| Document::decode_text(enc, bytes).ok())
        // Without a usable font encoding fall back to Latin-1.
        .unwrap_or_else(|| bytes.iter().map(|&b| b as char).collect())
}
