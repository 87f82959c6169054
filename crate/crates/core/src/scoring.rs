//! B-cubed agreement between clusterings, inter-annotator agreement and
//! the tutorial screening gate.
//!
//! In `exclude` mode singleton clusters are dropped from key and response
//! independently before scoring, as the CoNLL-2012 scorer does. A mention
//! dropped on one side only scores 0 on the pass where it remains.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotation::{Clustering, PartitionError};

/// Default screening threshold on B3 F1.
pub const SCREENING_THRESHOLD: f64 = 0.90;

/// Slack for comparing a computed F1 against the threshold, so a score that
/// is exactly the threshold in rational terms is not rejected by rounding.
const THRESHOLD_EPSILON: f64 = 1e-9;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ScoringError {
    #[error("empty mention universe")]
    EmptyUniverse,
    #[error("key and response cover different mentions: only in key {only_key:?}, only in response {only_response:?}")]
    MismatchedUniverse {
        only_key: Vec<String>,
        only_response: Vec<String>,
    },
    #[error("{side} clustering is not a partition: {problem}")]
    NotAPartition { side: &'static str, problem: PartitionError },
    #[error("no response for passage {0}")]
    MissingResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SingletonMode {
    #[default]
    Include,
    Exclude,
}

impl fmt::Display for SingletonMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SingletonMode::Include => "include",
            SingletonMode::Exclude => "exclude",
        })
    }
}

impl FromStr for SingletonMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "include" => Ok(SingletonMode::Include),
            "exclude" => Ok(SingletonMode::Exclude),
            other => Err(format!("singleton mode must be include or exclude, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct B3Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub singleton_mode: SingletonMode,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Unnormalized B3 sums. Counts from several passages can be added and
/// scored together (micro-average over mentions).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct B3Counts {
    pub precision_num: f64,
    pub precision_den: usize,
    pub recall_num: f64,
    pub recall_den: usize,
}

impl std::ops::AddAssign for B3Counts {
    fn add_assign(&mut self, rhs: Self) {
        self.precision_num += rhs.precision_num;
        self.precision_den += rhs.precision_den;
        self.recall_num += rhs.recall_num;
        self.recall_den += rhs.recall_den;
    }
}

impl B3Counts {
    /// Both sides empty (possible only after dropping singletons) counts as
    /// perfect agreement; one side empty scores 0 on that side.
    pub fn score(&self, mode: SingletonMode) -> B3Score {
        if self.precision_den == 0 && self.recall_den == 0 {
            return B3Score {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                singleton_mode: mode,
            };
        }
        let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
        let precision = ratio(self.precision_num, self.precision_den);
        let recall = ratio(self.recall_num, self.recall_den);
        B3Score {
            precision,
            recall,
            f1: f1(precision, recall),
            singleton_mode: mode,
        }
    }
}

fn kept_clusters(c: &Clustering, mode: SingletonMode) -> Vec<&Vec<String>> {
    c.clusters
        .iter()
        .filter(|cl| match mode {
            SingletonMode::Include => !cl.is_empty(),
            SingletonMode::Exclude => cl.len() > 1,
        })
        .collect()
}

/// B3 sums for one key/response pair over the same mention universe.
pub fn b3_counts(key: &Clustering, response: &Clustering, mode: SingletonMode) -> Result<B3Counts, ScoringError> {
    key.validate_disjoint()
        .map_err(|problem| ScoringError::NotAPartition { side: "key", problem })?;
    response
        .validate_disjoint()
        .map_err(|problem| ScoringError::NotAPartition {
            side: "response",
            problem,
        })?;
    let key_ids: BTreeSet<&String> = key.mention_ids().collect();
    let resp_ids: BTreeSet<&String> = response.mention_ids().collect();
    if key_ids.is_empty() && resp_ids.is_empty() {
        return Err(ScoringError::EmptyUniverse);
    }
    if key_ids != resp_ids {
        return Err(ScoringError::MismatchedUniverse {
            only_key: key_ids.difference(&resp_ids).map(|s| s.to_string()).collect(),
            only_response: resp_ids.difference(&key_ids).map(|s| s.to_string()).collect(),
        });
    }

    let key_clusters = kept_clusters(key, mode);
    let resp_clusters = kept_clusters(response, mode);
    let key_of: HashMap<&str, usize> = key_clusters
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |m| (m.as_str(), i)))
        .collect();

    // overlap[(k, r)] = |K_k ∩ R_r|
    let mut overlap: HashMap<(usize, usize), usize> = HashMap::new();
    for (r, cluster) in resp_clusters.iter().enumerate() {
        for m in cluster.iter() {
            if let Some(&k) = key_of.get(m.as_str()) {
                *overlap.entry((k, r)).or_insert(0) += 1;
            }
        }
    }

    let mut counts = B3Counts {
        precision_den: resp_clusters.iter().map(|c| c.len()).sum(),
        recall_den: key_clusters.iter().map(|c| c.len()).sum(),
        ..B3Counts::default()
    };
    for (&(k, r), &n) in &overlap {
        let n2 = (n * n) as f64;
        counts.precision_num += n2 / resp_clusters[r].len() as f64;
        counts.recall_num += n2 / key_clusters[k].len() as f64;
    }
    Ok(counts)
}

/// B3 precision, recall and F1 of `response` against `key`.
pub fn b3(key: &Clustering, response: &Clustering, mode: SingletonMode) -> Result<B3Score, ScoringError> {
    Ok(b3_counts(key, response, mode)?.score(mode))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageIaa {
    pub passage_id: String,
    pub f1: f64,
    pub annotators: usize,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaGroup {
    pub group: String,
    pub mean_f1: f64,
    pub passages: Vec<PassageIaa>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaReport {
    pub singleton_mode: SingletonMode,
    pub groups: Vec<IaaGroup>,
    /// Passages with fewer than two annotations.
    pub skipped: Vec<String>,
}

/// Mean pairwise B3 F1 per passage, then the mean over passages within each
/// group given by `group_of(passage_id)`.
pub fn pairwise_iaa(
    annotations: &[Clustering],
    mode: SingletonMode,
    group_of: impl Fn(&str) -> String,
) -> Result<IaaReport, ScoringError> {
    let mut by_passage: BTreeMap<&str, Vec<&Clustering>> = BTreeMap::new();
    for ann in annotations {
        by_passage.entry(ann.passage_id.as_str()).or_default().push(ann);
    }

    let mut groups: BTreeMap<String, Vec<PassageIaa>> = BTreeMap::new();
    let mut skipped = Vec::new();
    for (passage_id, anns) in by_passage {
        if anns.len() < 2 {
            log::warn!("passage {passage_id} has {} annotation(s); skipped in agreement", anns.len());
            skipped.push(passage_id.to_string());
            continue;
        }
        let mut total = 0.0;
        let mut pairs = 0;
        for (i, a) in anns.iter().enumerate() {
            for b in &anns[i + 1..] {
                total += b3(a, b, mode)?.f1;
                pairs += 1;
            }
        }
        groups.entry(group_of(passage_id)).or_default().push(PassageIaa {
            passage_id: passage_id.to_string(),
            f1: total / pairs as f64,
            annotators: anns.len(),
            pairs,
        });
    }

    let groups = groups
        .into_iter()
        .map(|(group, passages)| IaaGroup {
            mean_f1: passages.iter().map(|p| p.f1).sum::<f64>() / passages.len() as f64,
            group,
            passages,
        })
        .collect();
    Ok(IaaReport {
        singleton_mode: mode,
        groups,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub annotator_id: String,
    pub b3_f1: f64,
    pub passed: bool,
}

pub fn meets_threshold(f1: f64, threshold: f64) -> bool {
    f1 + THRESHOLD_EPSILON >= threshold
}

/// Tutorial quality check: B3 F1 (singletons included) against gold must be
/// at least `threshold`.
pub fn screening_pass(candidate: &Clustering, gold: &Clustering, threshold: f64) -> Result<ScreeningResult, ScoringError> {
    let score = b3(gold, candidate, SingletonMode::Include)?;
    Ok(ScreeningResult {
        annotator_id: candidate.annotator_id.clone(),
        b3_f1: score.f1,
        passed: meets_threshold(score.f1, threshold),
    })
}
