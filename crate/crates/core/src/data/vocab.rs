use std::collections::HashMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DatasetSplit;
use crate::error::{Error, Result};

/// Lowercase, trim, collapse internal whitespace, strip trailing periods.
pub fn normalize_answer(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(|c: char| c == '.' || c.is_whitespace())
        .to_string()
}

/// Bijection between normalized answers and contiguous class indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerVocabulary {
    index_to_answer: Vec<String>,
    answer_to_index: HashMap<String, usize>,
}

impl AnswerVocabulary {
    /// Builds from answers in first-occurrence order after normalization.
    pub fn from_answers<I, S>(answers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self {
            index_to_answer: Vec::new(),
            answer_to_index: HashMap::new(),
        };
        for a in answers {
            let norm = normalize_answer(a.as_ref());
            if !vocab.answer_to_index.contains_key(&norm) {
                vocab.answer_to_index.insert(norm.clone(), vocab.index_to_answer.len());
                vocab.index_to_answer.push(norm);
            }
        }
        vocab
    }

    pub fn len(&self) -> usize {
        self.index_to_answer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_to_answer.is_empty()
    }

    /// Looks up an answer after normalizing it.
    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.answer_to_index.get(&normalize_answer(answer)).copied()
    }

    pub fn answer(&self, index: usize) -> Option<&str> {
        self.index_to_answer.get(index).map(String::as_str)
    }

    pub fn answers(&self) -> &[String] {
        &self.index_to_answer
    }
}

impl Serialize for AnswerVocabulary {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.index_to_answer.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AnswerVocabulary {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let answers = Vec::<String>::deserialize(d)?;
        let vocab = AnswerVocabulary::from_answers(&answers);
        if vocab.len() != answers.len() || vocab.index_to_answer != answers {
            return Err(serde::de::Error::custom(
                "answer list is not a set of normalized answers",
            ));
        }
        Ok(vocab)
    }
}

pub fn build_answer_vocabulary(train: &DatasetSplit) -> Result<AnswerVocabulary> {
    if train.is_empty() {
        return Err(Error::EmptySplit);
    }
    Ok(AnswerVocabulary::from_answers(train.records.iter().map(|r| &r.answer)))
}
