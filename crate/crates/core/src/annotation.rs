//! Per-annotator clusterings and their aggregation.
//!
//! Two mentions are linked when at least `tau` annotators put them in the
//! same cluster; the aggregate clusters are the connected components of the
//! resulting graph. With five annotators `tau = 3` is majority voting,
//! `tau = 1` accepts any single vote and `tau = 5` requires unanimity.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::mentions::parse_mention_id;
use crate::union_find::UnionFind;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AnnotationError {
    #[error("no annotations given")]
    NoAnnotations,
    #[error("annotations mix passages {0} and {1}")]
    MixedPassages(String, String),
    #[error("annotation by {annotator_id} does not partition the mention set: {problem}")]
    NotAPartition {
        annotator_id: String,
        problem: PartitionError,
    },
    #[error("tau {tau} is outside 1..={n_annotators}")]
    TauOutOfRange { tau: u32, n_annotators: u32 },
    #[error("vote matrix mentions {0:?} not in the mention list")]
    UnknownMentions(Vec<String>),
}

/// What is wrong with a would-be partition of a mention set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("missing {missing:?}, extra {extra:?}, duplicated {duplicated:?}, empty clusters {empty_clusters}")]
pub struct PartitionError {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub duplicated: Vec<String>,
    pub empty_clusters: usize,
}

impl PartitionError {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.duplicated.is_empty() && self.empty_clusters == 0
    }
}

/// One annotator's grouping of a passage's mentions into entities.
/// Singletons are clusters of size one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub passage_id: String,
    #[serde(default)]
    pub annotator_id: String,
    pub clusters: Vec<Vec<String>>,
}

impl Clustering {
    pub fn new(passage_id: impl Into<String>, annotator_id: impl Into<String>, clusters: Vec<Vec<String>>) -> Self {
        Clustering {
            passage_id: passage_id.into(),
            annotator_id: annotator_id.into(),
            clusters,
        }
    }

    pub fn singletons(passage_id: &str, annotator_id: &str, mention_ids: &[String]) -> Self {
        Clustering::new(
            passage_id,
            annotator_id,
            mention_ids.iter().map(|m| vec![m.clone()]).collect(),
        )
    }

    pub fn mention_ids(&self) -> impl Iterator<Item = &String> {
        self.clusters.iter().flatten()
    }

    /// Checks that the clusters partition exactly `mention_ids`.
    pub fn validate_partition(&self, mention_ids: &[String]) -> Result<(), PartitionError> {
        let expected: BTreeSet<&String> = mention_ids.iter().collect();
        let mut seen = BTreeSet::new();
        let mut err = PartitionError::default();
        for id in self.mention_ids() {
            if !seen.insert(id) {
                err.duplicated.push(id.clone());
            }
            if !expected.contains(id) {
                err.extra.push(id.clone());
            }
        }
        err.missing = expected
            .into_iter()
            .filter(|id| !seen.contains(id))
            .cloned()
            .collect();
        err.empty_clusters = self.clusters.iter().filter(|c| c.is_empty()).count();
        if err.is_empty() {
            Ok(())
        } else {
            Err(err)
        }
    }

    /// Checks only internal consistency: no mention in two clusters, no
    /// empty cluster.
    pub fn validate_disjoint(&self) -> Result<(), PartitionError> {
        let ids: Vec<String> = self.mention_ids().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        self.validate_partition(&ids)
    }

    /// All unordered coreferent pairs `(a, b)` with `a < b`.
    pub fn linked_pairs(&self) -> BTreeSet<(String, String)> {
        let mut pairs = BTreeSet::new();
        for cluster in &self.clusters {
            for (i, a) in cluster.iter().enumerate() {
                for b in &cluster[i + 1..] {
                    pairs.insert(ordered_pair(a, b));
                }
            }
        }
        pairs
    }

    /// Sorts members and clusters into canonical mention order.
    pub fn normalized(&self) -> Clustering {
        let mut clusters: Vec<Vec<String>> = self
            .clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                sort_mention_ids(&mut c);
                c
            })
            .collect();
        clusters.sort_by(|a, b| compare_mention_ids(&a[0], &b[0]));
        Clustering {
            passage_id: self.passage_id.clone(),
            annotator_id: self.annotator_id.clone(),
            clusters,
        }
    }
}

fn ordered_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Orders mention ids by encoded span (start, longer first) when they carry
/// one, falling back to plain string order.
pub fn compare_mention_ids(a: &str, b: &str) -> std::cmp::Ordering {
    match (parse_mention_id(a), parse_mention_id(b)) {
        (Some((pa, sa)), Some((pb, sb))) => pa
            .cmp(pb)
            .then(sa.order_key().cmp(&sb.order_key()))
            .then(a.cmp(b)),
        _ => a.cmp(b),
    }
}

pub fn sort_mention_ids(ids: &mut [String]) {
    ids.sort_by(|a, b| compare_mention_ids(a, b));
}

/// Pairwise coreference votes for one passage. Pairs with no votes are
/// not stored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteMatrix {
    pub passage_id: String,
    pub n_annotators: u32,
    pub mention_ids: Vec<String>,
    #[serde(with = "pair_votes")]
    pub votes: BTreeMap<(String, String), u32>,
}

impl VoteMatrix {
    pub fn get(&self, a: &str, b: &str) -> u32 {
        if a == b {
            return 0;
        }
        self.votes.get(&ordered_pair(a, b)).copied().unwrap_or(0)
    }
}

mod pair_votes {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Entry {
        a: String,
        b: String,
        count: u32,
    }

    pub fn serialize<S: Serializer>(votes: &BTreeMap<(String, String), u32>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> = votes
            .iter()
            .map(|((a, b), &count)| Entry {
                a: a.clone(),
                b: b.clone(),
                count,
            })
            .collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<(String, String), u32>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries
            .into_iter()
            .map(|e| (super::ordered_pair(&e.a, &e.b), e.count))
            .collect())
    }
}

/// Counts, for each mention pair, how many annotators clustered them
/// together. All annotations must cover the same passage and mention set.
pub fn count_votes(annotations: &[Clustering]) -> Result<VoteMatrix, AnnotationError> {
    let first = annotations.first().ok_or(AnnotationError::NoAnnotations)?;
    let mut universe: Vec<String> = first.mention_ids().cloned().collect();
    sort_mention_ids(&mut universe);
    universe.dedup();

    let mut votes = BTreeMap::new();
    for ann in annotations {
        if ann.passage_id != first.passage_id {
            return Err(AnnotationError::MixedPassages(
                first.passage_id.clone(),
                ann.passage_id.clone(),
            ));
        }
        ann.validate_partition(&universe)
            .map_err(|problem| AnnotationError::NotAPartition {
                annotator_id: ann.annotator_id.clone(),
                problem,
            })?;
        for pair in ann.linked_pairs() {
            *votes.entry(pair).or_insert(0) += 1;
        }
    }
    Ok(VoteMatrix {
        passage_id: first.passage_id.clone(),
        n_annotators: annotations.len() as u32,
        mention_ids: universe,
        votes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationConfig {
    pub tau: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregateClustering {
    pub passage_id: String,
    pub tau: u32,
    pub clusters: Vec<Vec<String>>,
}

impl AggregateClustering {
    pub fn to_clustering(&self) -> Clustering {
        Clustering::new(&self.passage_id, format!("aggregate-tau{}", self.tau), self.clusters.clone())
    }
}

/// Links every pair with at least `tau` votes and returns the connected
/// components over `mention_ids`. Members and clusters follow the order
/// of `mention_ids`.
pub fn aggregate(
    votes: &VoteMatrix,
    cfg: AggregationConfig,
    mention_ids: &[String],
) -> Result<AggregateClustering, AnnotationError> {
    if cfg.tau < 1 || cfg.tau > votes.n_annotators {
        return Err(AnnotationError::TauOutOfRange {
            tau: cfg.tau,
            n_annotators: votes.n_annotators,
        });
    }
    let index: HashMap<&str, usize> = mention_ids
        .iter()
        .enumerate()
        .map(|(i, m)| (m.as_str(), i))
        .collect();
    let unknown: Vec<String> = votes
        .votes
        .keys()
        .flat_map(|(a, b)| [a, b])
        .filter(|m| !index.contains_key(m.as_str()))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !unknown.is_empty() {
        return Err(AnnotationError::UnknownMentions(unknown));
    }

    let mut uf = UnionFind::new(mention_ids.len());
    for ((a, b), &count) in &votes.votes {
        if count >= cfg.tau {
            uf.union(index[a.as_str()], index[b.as_str()]);
        }
    }
    let clusters = uf
        .components()
        .into_iter()
        .map(|members| members.into_iter().map(|i| mention_ids[i].clone()).collect())
        .collect();
    Ok(AggregateClustering {
        passage_id: votes.passage_id.clone(),
        tau: cfg.tau,
        clusters,
    })
}

/// Counts votes and aggregates in one step, using the annotations' own
/// mention order.
pub fn aggregate_annotations(annotations: &[Clustering], tau: u32) -> Result<AggregateClustering, AnnotationError> {
    let votes = count_votes(annotations)?;
    aggregate(&votes, AggregationConfig { tau }, &votes.mention_ids)
}
