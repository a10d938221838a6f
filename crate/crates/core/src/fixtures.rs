//! Synthetic PDF builders for tests.
//!
//! Output is byte-stable across calls: no timestamps or random IDs are
//! written, so fixtures can be content-hashed.

use lopdf::content::{Content, Operation};
use lopdf::encryption::{EncryptionState, EncryptionVersion, Permissions};
use lopdf::{dictionary, Document, Object, ObjectId, Stream};

const SENTENCES: &[&str] = &[
    "Skimming is a reading strategy used to gather the gist of a text quickly.",
    "Researchers often skim dozens of papers before choosing which ones to read in depth.",
    "Augmented reading interfaces add overlays to documents without changing their structure.",
    "Comprehension questions check whether a reader can restate what the text says.",
    "Analysis questions ask the reader to reach conclusions beyond the text itself.",
    "Generated questions can be placed next to the page they were derived from.",
    "Latency matters when a tool waits on a remote language model for every page.",
];

/// A PDF with one page per entry. Newlines inside an entry become separate
/// text lines on the page.
pub fn text_pdf(pages: &[&str]) -> Vec<u8> {
    let specs: Vec<PageSpec> = pages.iter().map(|t| PageSpec::Text(t)).collect();
    build(&specs, None)
}

/// A PDF with `n` text pages; page `k` contains the literal marker `PAGE-k`.
pub fn marked_pdf(n: usize) -> Vec<u8> {
    let texts: Vec<String> = (0..n).map(marked_page_text).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    text_pdf(&refs)
}

/// The text placed on page `k` of [`marked_pdf`].
pub fn marked_page_text(k: usize) -> String {
    let a = SENTENCES[k % SENTENCES.len()];
    let b = SENTENCES[(k + 3) % SENTENCES.len()];
    format!("PAGE-{k} Section {k}\n{a}\n{b}")
}

/// Text pages with an image-only page inserted at `image_index`.
pub fn pdf_with_image_page(texts: &[&str], image_index: usize) -> Vec<u8> {
    let mut specs: Vec<PageSpec> = texts.iter().map(|t| PageSpec::Text(t)).collect();
    specs.insert(image_index.min(specs.len()), PageSpec::Image);
    build(&specs, None)
}

/// A single-page document protected with a non-empty user password.
pub fn encrypted_pdf(user_password: &str) -> Vec<u8> {
    build(&[PageSpec::Text("confidential")], Some(user_password))
}

enum PageSpec<'a> {
    Text(&'a str),
    Image,
}

fn build(pages: &[PageSpec<'_>], password: Option<&str>) -> Vec<u8> {
    let mut doc = Document::with_version("1.5");
    let pages_id = doc.new_object_id();
    let font_id = doc.add_object(dictionary! {
        "Type" => "Font",
        "Subtype" => "Type1",
        "BaseFont" => "Helvetica",
        "Encoding" => "WinAnsiEncoding",
    });
    let image_id = doc.add_object(gray_image());
    let resources_id = doc.add_object(dictionary! {
        "Font" => dictionary! { "F1" => font_id },
        "XObject" => dictionary! { "Im1" => image_id },
    });

    let kids: Vec<Object> = pages
        .iter()
        .map(|spec| {
            let content = match spec {
                PageSpec::Text(text) => text_content(text),
                PageSpec::Image => image_content(),
            };
            let content_id = doc.add_object(Stream::new(
                dictionary! {},
                content.encode().expect("content encodes"),
            ));
            let page_id: ObjectId = doc.add_object(dictionary! {
                "Type" => "Page",
                "Parent" => pages_id,
                "Contents" => content_id,
                "MediaBox" => vec![0.into(), 0.into(), 612.into(), 792.into()],
            });
            page_id.into()
        })
        .collect();
    let count = kids.len() as i64;
    doc.objects.insert(
        pages_id,
        Object::Dictionary(dictionary! {
            "Type" => "Pages",
            "Kids" => kids,
            "Count" => count,
            "Resources" => resources_id,
        }),
    );
    let catalog_id = doc.add_object(dictionary! {
        "Type" => "Catalog",
        "Pages" => pages_id,
    });
    doc.trailer.set("Root", catalog_id);
    let file_id = Object::string_literal(b"quizreadfixture!".to_vec());
    doc.trailer.set("ID", vec![file_id.clone(), file_id]);

    if let Some(password) = password {
        let version = EncryptionVersion::V1 {
            document: &doc,
            owner_password: "owner",
            user_password: password,
            permissions: Permissions::all(),
        };
        let state = EncryptionState::try_from(version).expect("encryption state");
        doc.encrypt(&state).expect("encrypt");
    }

    let mut out = Vec::new();
    doc.save_to(&mut out).expect("save pdf");
    out
}

fn text_content(text: &str) -> Content {
    let mut ops = vec![
        Operation::new("BT", vec![]),
        Operation::new("Tf", vec!["F1".into(), 11.into()]),
        Operation::new("Td", vec![72.into(), 720.into()]),
    ];
    for (i, line) in text.lines().enumerate() {
        if i > 0 {
            ops.push(Operation::new("Td", vec![0.into(), (-14).into()]));
        }
        ops.push(Operation::new("Tj", vec![Object::string_literal(line)]));
    }
    ops.push(Operation::new("ET", vec![]));
    Content { operations: ops }
}

fn image_content() -> Content {
    Content {
        operations: vec![
            Operation::new("q", vec![]),
            Operation::new(
                "cm",
                vec![400.into(), 0.into(), 0.into(), 400.into(), 100.into(), 200.into()],
            ),
            Operation::new("Do", vec!["Im1".into()]),
            Operation::new("Q", vec![]),
        ],
    }
}

fn gray_image() -> Stream {
    let (w, h) = (8i64, 8i64);
    let pixels: Vec<u8> = (0..w * h).map(|i| ((i * 37) % 256) as u8).collect();
    Stream::new(
        dictionary! {
            "Type" => "XObject",
            "Subtype" => "Image",
            "Width" => w,
            "Height" => h,
            "ColorSpace" => "DeviceGray",
            "BitsPerComponent" => 8,
        },
        pixels,
    )
}
