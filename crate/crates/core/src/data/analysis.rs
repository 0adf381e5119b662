use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::DatasetSplit;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Fraction of distinct test image ids that also occur in train.
    pub test_images_in_train: f64,
    pub disjoint: bool,
    pub distinct_train_images: usize,
    pub distinct_test_images: usize,
}

pub fn verify_split_images(train: &DatasetSplit, test: &DatasetSplit) -> OverlapReport {
    let train_ids: HashSet<&str> = train.records.iter().map(|r| r.image_id.as_str()).collect();
    let test_ids: HashSet<&str> = test.records.iter().map(|r| r.image_id.as_str()).collect();
    let shared = test_ids.iter().filter(|id| train_ids.contains(*id)).count();
    let fraction = if test_ids.is_empty() {
        0.0
    } else {
        shared as f64 / test_ids.len() as f64
    };
    OverlapReport {
        test_images_in_train: fraction,
        disjoint: shared == 0,
        distinct_train_images: train_ids.len(),
        distinct_test_images: test_ids.len(),
    }
}

/// Most frequent question types, descending by count, ties by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionTypeHistogram {
    pub counts: Vec<(String, usize)>,
    /// Sum of the reported counts.
    pub total: usize,
    pub split_size: usize,
}

impl QuestionTypeHistogram {
    pub fn count(&self, question_type: &str) -> Option<usize> {
        self.counts.iter().find(|(t, _)| t == question_type).map(|(_, c)| *c)
    }
}

pub fn question_type_histogram(split: &DatasetSplit, top_k: usize) -> Result<QuestionTypeHistogram> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (index, r) in split.records.iter().enumerate() {
        let t = r.question_type.as_deref().ok_or(Error::MissingLabels { index })?;
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
    // BTreeMap iteration is already name-ordered, so a stable sort keeps ties lexicographic.
    ranked.sort_by_key(|r| std::cmp::Reverse(r.1));
    ranked.truncate(top_k);
    let total = ranked.iter().map(|(_, c)| c).sum();
    Ok(QuestionTypeHistogram {
        counts: ranked,
        total,
        split_size: split.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AnswerType, SplitName, VqaRecord};
    use proptest::prelude::*;

    fn rec(image: &str, qtype: Option<&str>) -> VqaRecord {
        VqaRecord {
            image_id: image.into(),
            image_path: image.into(),
            question: "q".into(),
            answer: "yes".into(),
            answer_type: AnswerType::Closed,
            question_type: qtype.map(Into::into),
            language: None,
        }
    }

    fn split(images: &[&str]) -> DatasetSplit {
        DatasetSplit::new(SplitName::Test, images.iter().map(|i| rec(i, Some("t"))).collect())
    }

    #[test]
    fn overlap_cases() {
        let a = split(&["1", "2", "2"]);
        let r = verify_split_images(&a, &a);
        assert_eq!(r.test_images_in_train, 1.0);
        assert!(!r.disjoint);

        let b = split(&["3", "4"]);
        let r = verify_split_images(&a, &b);
        assert_eq!(r.test_images_in_train, 0.0);
        assert!(r.disjoint);

        let r = verify_split_images(&a, &split(&[]));
        assert_eq!(r.test_images_in_train, 0.0);
        assert!(r.disjoint);

        let r = verify_split_images(&a, &split(&["1", "9"]));
        assert_eq!(r.test_images_in_train, 0.5);
    }

    #[test]
    fn histogram_top_k_and_ties() {
        let s = DatasetSplit::new(
            SplitName::Train,
            vec![
                rec("a", Some("organ")),
                rec("b", Some("organ")),
                rec("c", Some("presence")),
            ],
        );
        let h = question_type_histogram(&s, 2).unwrap();
        assert_eq!(h.counts, vec![("organ".into(), 2), ("presence".into(), 1)]);
        assert_eq!(h.total, 3);

        let h = question_type_histogram(&s, 10).unwrap();
        assert_eq!(h.counts.len(), 2);

        let tie = DatasetSplit::new(
            SplitName::Train,
            vec![rec("a", Some("zeta")), rec("b", Some("alpha")), rec("c", Some("mid"))],
        );
        let h = question_type_histogram(&tie, 2).unwrap();
        assert_eq!(h.counts, vec![("alpha".into(), 1), ("mid".into(), 1)]);
    }

    #[test]
    fn histogram_requires_labels() {
        let s = DatasetSplit::new(SplitName::Train, vec![rec("a", Some("x")), rec("b", None)]);
        assert!(matches!(
            question_type_histogram(&s, 5),
            Err(Error::MissingLabels { index: 1 })
        ));
    }

    proptest! {
        #[test]
        fn histogram_totals(types in proptest::collection::vec(0u8..6, 0..40), k in 0usize..8) {
            let names: Vec<String> = types.iter().map(|t| format!("type{t}")).collect();
            let s = DatasetSplit::new(SplitName::Train, names.iter().map(|n| rec("i", Some(n))).collect());
            let h = question_type_histogram(&s, k).unwrap();
            prop_assert_eq!(h.counts.iter().map(|c| c.1).sum::<usize>(), h.total);
            prop_assert!(h.total <= s.len());
            let distinct: HashSet<_> = names.iter().collect();
            if k >= distinct.len() {
                prop_assert_eq!(h.total, s.len());
            }
            for w in h.counts.windows(2) {
                prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
            }
        }
    }
}
