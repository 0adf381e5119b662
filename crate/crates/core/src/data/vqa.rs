use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{AnswerType, DatasetSplit, SplitName, VqaRecord};
use crate::error::{Error, Result};

/// On-disk layout of a VQA benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    /// `trainset.json`, `testset.json`, images under `images/`.
    Rad,
    /// `train.json`, `test.json`, images under `imgs/`; English records only.
    Slake,
}

impl FromStr for Dialect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rad" | "vqa-rad" | "vqa_rad" => Ok(Dialect::Rad),
            "slake" => Ok(Dialect::Slake),
            other => Err(Error::UnknownDialect(other.to_string())),
        }
    }
}

impl Dialect {
    fn files(self) -> (&'static str, &'static str, &'static str) {
        match self {
            Dialect::Rad => ("trainset.json", "testset.json", "images"),
            Dialect::Slake => ("train.json", "test.json", "imgs"),
        }
    }

    fn image_fields(self) -> &'static [&'static str] {
        match self {
            Dialect::Rad => &["image_name", "img_name"],
            Dialect::Slake => &["img_name", "image_name"],
        }
    }

    fn type_fields(self) -> &'static [&'static str] {
        match self {
            Dialect::Rad => &["question_type", "content_type"],
            Dialect::Slake => &["content_type", "question_type"],
        }
    }
}

/// Loads the train and test splits of a dataset root.
pub fn load_vqa_dataset(root: &Path, dialect: Dialect) -> Result<(DatasetSplit, DatasetSplit)> {
    let (train_file, test_file, image_dir) = dialect.files();
    let images = root.join(image_dir);
    let train = load_split(&root.join(train_file), &images, dialect, SplitName::Train)?;
    let test = load_split(&root.join(test_file), &images, dialect, SplitName::Test)?;
    Ok((train, test))
}

fn load_split(path: &Path, images: &Path, dialect: Dialect, name: SplitName) -> Result<DatasetSplit> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let value: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let Value::Array(items) = value else {
        return Err(Error::SchemaViolation {
            index: 0,
            reason: format!("{} is not a JSON array", path.display()),
        });
    };
    let mut records = Vec::with_capacity(items.len());
    for (index, item) in items.iter().enumerate() {
        let Value::Object(obj) = item else {
            return Err(Error::SchemaViolation {
                index,
                reason: "record is not an object".into(),
            });
        };
        if let Some(record) = parse_record(obj, index, images, dialect)? {
            records.push(record);
        }
    }
    Ok(DatasetSplit::new(name, records))
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(if *b { "yes" } else { "no" }.to_string()),
        _ => None,
    }
}

fn field(obj: &Map<String, Value>, names: &[&str]) -> Option<String> {
    names.iter().find_map(|n| obj.get(*n).and_then(scalar_text))
}

fn parse_record(obj: &Map<String, Value>, index: usize, images: &Path, dialect: Dialect) -> Result<Option<VqaRecord>> {
    let missing = |name: &str| Error::SchemaViolation {
        index,
        reason: format!("missing field `{name}`"),
    };
    let language = field(obj, &["q_lang"]);
    if dialect == Dialect::Slake {
        match language.as_deref() {
            Some("en") => {}
            Some(_) => return Ok(None),
            None => return Err(missing("q_lang")),
        }
    }
    let image = field(obj, dialect.image_fields()).ok_or_else(|| missing(dialect.image_fields()[0]))?;
    let question = field(obj, &["question"]).ok_or_else(|| missing("question"))?;
    if question.trim().is_empty() {
        return Err(Error::SchemaViolation {
            index,
            reason: "empty question".into(),
        });
    }
    let answer = field(obj, &["answer"]).ok_or_else(|| missing("answer"))?;
    let answer_type = match field(obj, &["answer_type"]) {
        Some(raw) => AnswerType::parse(&raw).ok_or_else(|| Error::SchemaViolation {
            index,
            reason: format!("answer_type `{raw}` is neither open nor closed"),
        })?,
        None => AnswerType::infer(&answer),
    };
    let question_type = field(obj, dialect.type_fields()).filter(|t| !t.trim().is_empty());
    Ok(Some(VqaRecord {
        image_path: PathBuf::from(images).join(&image),
        image_id: image,
        question,
        answer,
        answer_type,
        question_type,
        language,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_root(dialect: Dialect, train: &str, test: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let (a, b, _) = dialect.files();
        fs::write(dir.path().join(a), train).unwrap();
        fs::write(dir.path().join(b), test).unwrap();
        dir
    }

    #[test]
    fn slake_keeps_english_only() {
        let train = r#"[
            {"img_name":"x/source.jpg","question":"Which organ?","answer":"Lung","q_lang":"en","answer_type":"OPEN","content_type":"Organ"},
            {"img_name":"x/source.jpg","question":"哪个器官?","answer":"肺","q_lang":"zh","answer_type":"OPEN","content_type":"Organ"},
            {"img_name":"y/source.jpg","question":"Is it normal?","answer":"No","q_lang":"en","answer_type":"CLOSED","content_type":"Abnormal"}
        ]"#;
        let dir = write_root(Dialect::Slake, train, "[]");
        let (train, test) = load_vqa_dataset(dir.path(), Dialect::Slake).unwrap();
        assert_eq!(train.len(), 2);
        assert!(test.is_empty());
        assert_eq!(train.records[1].answer_type, AnswerType::Closed);
        assert_eq!(train.records[0].question_type.as_deref(), Some("Organ"));
        assert!(train.records[0].image_path.ends_with("imgs/x/source.jpg"));
    }

    #[test]
    fn missing_question_names_index() {
        let train = r#"[
            {"image_name":"a.jpg","question":"is it?","answer":"yes"},
            {"image_name":"b.jpg","answer":"no"}
        ]"#;
        let dir = write_root(Dialect::Rad, train, "[]");
        match load_vqa_dataset(dir.path(), Dialect::Rad) {
            Err(Error::SchemaViolation { index, reason }) => {
                assert_eq!(index, 1);
                assert!(reason.contains("question"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn answer_type_inferred_and_numbers_accepted() {
        let train = r#"[
            {"image_name":"a.jpg","question":"is there a mass?","answer":"Yes"},
            {"image_name":"a.jpg","question":"how many lesions?","answer":3,"answer_type":"OPEN "}
        ]"#;
        let dir = write_root(Dialect::Rad, train, "[]");
        let (train, _) = load_vqa_dataset(dir.path(), Dialect::Rad).unwrap();
        assert_eq!(train.records[0].answer_type, AnswerType::Closed);
        assert_eq!(train.records[1].answer, "3");
        assert_eq!(train.records[1].answer_type, AnswerType::Open);
    }

    #[test]
    fn dialect_names() {
        assert_eq!("SLAKE".parse::<Dialect>().unwrap(), Dialect::Slake);
        assert!(matches!("pathvqa".parse::<Dialect>(), Err(Error::UnknownDialect(_))));
    }

    #[test]
    fn load_is_deterministic() {
        let train = r#"[{"image_name":"a.jpg","question":"q1","answer":"yes"},{"image_name":"b.jpg","question":"q2","answer":"no"}]"#;
        let dir = write_root(Dialect::Rad, train, train);
        let a = load_vqa_dataset(dir.path(), Dialect::Rad).unwrap();
        let b = load_vqa_dataset(dir.path(), Dialect::Rad).unwrap();
        assert_eq!(a, b);
    }
}
