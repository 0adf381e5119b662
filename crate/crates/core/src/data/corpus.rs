use std::fs;
use std::path::{Path, PathBuf};

use super::ImageCaptionRecord;
use crate::error::{Error, Result};

/// A manifest row whose image file could not be found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingImage {
    pub row: usize,
    pub image_id: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct CaptionCorpus {
    pub records: Vec<ImageCaptionRecord>,
    pub missing: Vec<MissingImage>,
}

/// Reads a tab-separated `image_id \t relative_path \t caption` manifest.
///
/// Paths resolve against the manifest's directory. Rows pointing at absent
/// images are skipped and listed in [`CaptionCorpus::missing`]. Row numbers in
/// errors and diagnostics are 1-based line numbers.
pub fn load_image_caption_corpus(manifest_path: &Path) -> Result<CaptionCorpus> {
    if !manifest_path.is_file() {
        return Err(Error::MissingFile(manifest_path.to_path_buf()));
    }
    let text = fs::read_to_string(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut corpus = CaptionCorpus::default();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::MalformedRow {
                row,
                reason: format!("expected 3 tab-separated columns, found {}", fields.len()),
            });
        }
        let (image_id, rel, caption) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        if image_id.is_empty() || rel.is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "empty image id or path".into(),
            });
        }
        if caption.is_empty() {
            return Err(Error::MalformedRow {
                row,
                reason: "empty caption".into(),
            });
        }
        let image_path = base.join(rel);
        if !image_path.is_file() {
            log::warn!(
                "manifest row {row}: image `{image_id}` not found at {}",
                image_path.display()
            );
            corpus.missing.push(MissingImage {
                row,
                image_id: image_id.to_string(),
                path: image_path,
            });
            continue;
        }
        corpus.records.push(ImageCaptionRecord {
            image_id: image_id.to_string(),
            image_path,
            caption: caption.to_string(),
        });
    }
    if corpus.records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(corpus)
}
