//! Dataset records and loaders for caption corpora and VQA benchmarks.

mod analysis;
mod corpus;
mod image;
mod vocab;
mod vqa;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use analysis::{question_type_histogram, verify_split_images, OverlapReport, QuestionTypeHistogram};
pub use corpus::{load_image_caption_corpus, CaptionCorpus, MissingImage};
pub use image::{load_and_preprocess_image, load_grayscale, Normalization};
pub use vocab::{build_answer_vocabulary, normalize_answer, AnswerVocabulary};
pub use vqa::{load_vqa_dataset, Dialect};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCaptionRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub caption: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerType {
    Open,
    Closed,
}

impl AnswerType {
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "open" => Some(AnswerType::Open),
            "closed" => Some(AnswerType::Closed),
            _ => None,
        }
    }

    /// Closed iff the normalized answer is yes or no.
    pub fn infer(answer: &str) -> Self {
        match normalize_answer(answer).as_str() {
            "yes" | "no" => AnswerType::Closed,
            _ => AnswerType::Open,
        }
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerType::Open => "open",
            AnswerType::Closed => "closed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub question: String,
    pub answer: String,
    pub answer_type: AnswerType,
    pub question_type: Option<String>,
    pub language: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub records: Vec<VqaRecord>,
}

impl DatasetSplit {
    pub fn new(name: SplitName, records: Vec<VqaRecord>) -> Self {
        Self { name, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
