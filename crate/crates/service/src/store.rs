//! File-backed annotation store.
//!
//! Layout under the store root:
//!
//! ```text
//! corpus.json
//! tutorial.json
//! gold/<passage_id>.json            optional gold clusterings
//! gold_mentions.json                optional, for detector evaluation
//! annotators/<annotator_id>.json
//! annotations/<passage_id>/<annotator_id>.json
//! ```
//!
//! Mutations go through one writer lock and publish a fresh snapshot;
//! readers clone the current snapshot `Arc` and never wait on writers.
//! Leases live only in memory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use corefkit::annotation::Clustering;
use corefkit::corpus::Corpus;
use corefkit::reports::{self, GoldMentions, ReportError};
use corefkit::scoring::{ScreeningResult, SingletonMode};
use corefkit::tutorial::{evaluate_step, StepOutcome, TutorialError, TutorialScript};
use corefkit::Mention;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::ServiceError;
use crate::fsio::{self, FailPoint};

pub const DEFAULT_TARGET_ANNOTATIONS: u32 = 5;
pub const DEFAULT_LEASE_TTL: Duration = Duration::from_secs(60 * 60);

type Result<T> = std::result::Result<T, ServiceError>;

pub trait Clock: Send + Sync {
    fn now(&self) -> SystemTime;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> SystemTime {
        SystemTime::now()
    }
}

/// Clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<SystemTime>);

impl ManualClock {
    pub fn new(start: SystemTime) -> Self {
        ManualClock(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock() += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> SystemTime {
        *self.0.lock()
    }
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub target_annotations: u32,
    pub lease_ttl: Duration,
    /// Token required for report endpoints; `None` leaves them open.
    pub admin_token: Option<String>,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            target_annotations: DEFAULT_TARGET_ANNOTATIONS,
            lease_ttl: DEFAULT_LEASE_TTL,
            admin_token: None,
        }
    }
}

/// Persisted per-annotator state. Only a hash of the bearer token is kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatorRecord {
    pub annotator_id: String,
    pub token_sha256: String,
    #[serde(default)]
    pub screening: Option<ScreeningResult>,
    #[serde(default)]
    pub completed_passages: u32,
    /// Index of the next tutorial step the annotator may take.
    #[serde(default)]
    pub tutorial_step: usize,
}

impl AnnotatorRecord {
    pub fn screened(&self) -> bool {
        self.screening.as_ref().is_some_and(|s| s.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lease {
    pub passage_id: String,
    pub expires_at: SystemTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub passage_id: String,
    /// Seconds since the Unix epoch.
    pub lease_expires_at: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Registration {
    pub annotator_id: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubmitAck {
    pub passage_id: String,
    pub annotator_id: String,
    pub replaced: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViewToken {
    pub offset: usize,
    pub text: String,
    /// True for the first token of each sentence.
    pub sentence_start: bool,
}

/// Everything the annotation UI needs to render a passage.
#[derive(Debug, Clone, Serialize)]
pub struct PassageView {
    pub passage_id: String,
    pub doc_id: String,
    pub tokens: Vec<ViewToken>,
    pub mentions: Vec<Mention>,
    pub draft: Option<Clustering>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportKind {
    Aggregate,
    Scores,
    Iaa,
    DetectorEval,
}

impl std::str::FromStr for ReportKind {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aggregate" => Ok(ReportKind::Aggregate),
            "scores" => Ok(ReportKind::Scores),
            "iaa" => Ok(ReportKind::Iaa),
            "detector-eval" => Ok(ReportKind::DetectorEval),
            other => Err(ServiceError::BadRequest(format!("unknown report kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportParams {
    #[serde(default)]
    pub tau: Option<u32>,
    #[serde(default)]
    pub singletons: Option<SingletonMode>,
}

#[derive(Debug, Clone, Default)]
struct State {
    annotators: BTreeMap<String, AnnotatorRecord>,
    tokens: HashMap<String, String>,
    /// passage_id -> annotator_id -> clustering
    annotations: BTreeMap<String, BTreeMap<String, Clustering>>,
    /// annotator_id -> lease
    leases: BTreeMap<String, Lease>,
}

impl State {
    fn live_leases_on(&self, passage_id: &str) -> u32 {
        self.leases.values().filter(|l| l.passage_id == passage_id).count() as u32
    }

    fn completed_on(&self, passage_id: &str) -> u32 {
        self.annotations.get(passage_id).map_or(0, |m| m.len() as u32)
    }

    fn has_annotated(&self, passage_id: &str, annotator_id: &str) -> bool {
        self.annotations
            .get(passage_id)
            .is_some_and(|m| m.contains_key(annotator_id))
    }

    fn completed_by(&self, annotator_id: &str) -> u32 {
        self.annotations
            .values()
            .filter(|m| m.contains_key(annotator_id))
            .count() as u32
    }

    fn all_annotations(&self) -> Vec<Clustering> {
        self.annotations.values().flat_map(|m| m.values().cloned()).collect()
    }
}

pub struct Store {
    root: PathBuf,
    config: StoreConfig,
    corpus: Arc<Corpus>,
    mention_ids: HashMap<String, Vec<String>>,
    tutorial: Arc<TutorialScript>,
    gold: Arc<BTreeMap<String, Clustering>>,
    gold_mentions: Option<Arc<GoldMentions>>,
    state: RwLock<Arc<State>>,
    writer: Mutex<()>,
    clock: Arc<dyn Clock>,
    fault: Mutex<Option<FailPoint>>,
    report_cache: Mutex<HashMap<String, Arc<Value>>>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish_non_exhaustive()
    }
}

/// True for ids safe to use as a single path component.
pub fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | ':'))
}

fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn unix_secs(t: SystemTime) -> u64 {
    t.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| ServiceError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| ServiceError::Corrupt(format!("{}: {e}", path.display())))
}

fn json_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| ServiceError::io(dir, e))? {
        let path = entry.map_err(|e| ServiceError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") && path.is_file() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn report_error(err: ReportError) -> ServiceError {
    match err {
        ReportError::MissingGold(p) => ServiceError::NotFound(format!("gold clustering for passage {p}")),
        other => ServiceError::Unprocessable {
            message: other.to_string(),
            details: Value::Null,
        },
    }
}

impl Store {
    /// Creates a new store directory. Fails if `corpus.json` already exists.
    pub fn init(root: &Path, corpus: &Corpus, tutorial: &TutorialScript, gold: &[Clustering]) -> Result<()> {
        tutorial
            .validate()
            .map_err(|e| ServiceError::BadRequest(format!("tutorial: {e}")))?;
        for p in &corpus.passages {
            if !is_valid_id(&p.passage_id) {
                return Err(ServiceError::BadRequest(format!(
                    "passage id {:?} cannot be used as a file name",
                    p.passage_id
                )));
            }
        }
        let corpus_path = root.join("corpus.json");
        if corpus_path.exists() {
            return Err(ServiceError::conflict(
                "store_exists",
                format!("{} already holds a store", root.display()),
            ));
        }
        for dir in ["annotators", "annotations", "gold"] {
            let d = root.join(dir);
            fs::create_dir_all(&d).map_err(|e| ServiceError::io(&d, e))?;
        }
        fsio::write_json_atomic(&root.join("tutorial.json"), tutorial, None)
            .map_err(|e| ServiceError::io(root, e))?;
        for g in gold {
            if corpus.passage(&g.passage_id).is_none() {
                return Err(ServiceError::BadRequest(format!("gold for unknown passage {}", g.passage_id)));
            }
            let path = root.join("gold").join(format!("{}.json", g.passage_id));
            fsio::write_json_atomic(&path, &g.normalized(), None).map_err(|e| ServiceError::io(&path, e))?;
        }
        // Written last: its presence marks a complete store.
        fsio::write_json_atomic(&corpus_path, corpus, None).map_err(|e| ServiceError::io(&corpus_path, e))
    }

    pub fn open(root: &Path, config: StoreConfig) -> Result<Store> {
        Store::open_with_clock(root, config, Arc::new(SystemClock))
    }

    /// Loads a store, removing stray temp files and validating every record.
    pub fn open_with_clock(root: &Path, config: StoreConfig, clock: Arc<dyn Clock>) -> Result<Store> {
        let swept = fsio::sweep_temp_files(root).map_err(|e| ServiceError::io(root, e))?;
        if swept > 0 {
            log::warn!("removed {swept} interrupted write(s) under {}", root.display());
        }
        let corpus: Corpus = read_json(&root.join("corpus.json"))?;
        let tutorial: TutorialScript = read_json(&root.join("tutorial.json"))?;
        tutorial
            .validate()
            .map_err(|e| ServiceError::Corrupt(format!("tutorial.json: {e}")))?;
        let mention_ids: HashMap<String, Vec<String>> = corpus
            .passages
            .iter()
            .map(|p| (p.passage_id.clone(), p.mention_ids()))
            .collect();

        let validate = |c: &Clustering, what: &Path| -> Result<()> {
            let ids = mention_ids
                .get(&c.passage_id)
                .ok_or_else(|| ServiceError::Corrupt(format!("{}: unknown passage {}", what.display(), c.passage_id)))?;
            c.validate_partition(ids)
                .map_err(|p| ServiceError::Corrupt(format!("{}: {p}", what.display())))
        };

        let mut gold = BTreeMap::new();
        for path in json_files(&root.join("gold"))? {
            let g: Clustering = read_json(&path)?;
            validate(&g, &path)?;
            gold.insert(g.passage_id.clone(), g);
        }
        let gm_path = root.join("gold_mentions.json");
        let gold_mentions = if gm_path.exists() {
            Some(Arc::new(read_json::<GoldMentions>(&gm_path)?))
        } else {
            None
        };

        let mut state = State::default();
        let ann_root = root.join("annotations");
        if ann_root.exists() {
            let mut dirs: Vec<PathBuf> = fs::read_dir(&ann_root)
                .map_err(|e| ServiceError::io(&ann_root, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            for dir in dirs {
                for path in json_files(&dir)? {
                    let c: Clustering = read_json(&path)?;
                    validate(&c, &path)?;
                    let expected = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                    if c.passage_id != expected {
                        return Err(ServiceError::Corrupt(format!(
                            "{}: passage id {} does not match its directory",
                            path.display(),
                            c.passage_id
                        )));
                    }
                    state
                        .annotations
                        .entry(c.passage_id.clone())
                        .or_default()
                        .insert(c.annotator_id.clone(), c);
                }
            }
        }
        for path in json_files(&root.join("annotators"))? {
            let mut rec: AnnotatorRecord = read_json(&path)?;
            // The annotation files are authoritative for the count.
            rec.completed_passages = state.completed_by(&rec.annotator_id);
            state.tokens.insert(rec.token_sha256.clone(), rec.annotator_id.clone());
            state.annotators.insert(rec.annotator_id.clone(), rec);
        }
        for (pid, anns) in &state.annotations {
            for aid in anns.keys() {
                if !state.annotators.contains_key(aid) {
                    return Err(ServiceError::Corrupt(format!("annotation {pid}/{aid} from unknown annotator")));
                }
            }
        }

        Ok(Store {
            root: root.to_path_buf(),
            config,
            corpus: Arc::new(corpus),
            mention_ids,
            tutorial: Arc::new(tutorial),
            gold: Arc::new(gold),
            gold_mentions,
            state: RwLock::new(Arc::new(state)),
            writer: Mutex::new(()),
            clock,
            fault: Mutex::new(None),
            report_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn tutorial(&self) -> &TutorialScript {
        &self.tutorial
    }

    fn snapshot(&self) -> Arc<State> {
        self.state.read().clone()
    }

    fn publish(&self, next: State) {
        *self.state.write() = Arc::new(next);
    }

    /// Makes the next persisted write fail at `point`, leaving whatever a
    /// crash at that moment would leave on disk.
    pub fn inject_fault(&self, point: FailPoint) {
        *self.fault.lock() = Some(point);
    }

    fn persist<T: Serialize>(&self, path: &Path, value: &T) -> Result<()> {
        let fault = self.fault.lock().take();
        fsio::write_json_atomic(path, value, fault).map_err(|e| ServiceError::io(path, e))
    }

    fn annotator_path(&self, annotator_id: &str) -> PathBuf {
        self.root.join("annotators").join(format!("{annotator_id}.json"))
    }

    fn annotation_path(&self, passage_id: &str, annotator_id: &str) -> PathBuf {
        self.root
            .join("annotations")
            .join(passage_id)
            .join(format!("{annotator_id}.json"))
    }

    pub fn annotator(&self, annotator_id: &str) -> Option<AnnotatorRecord> {
        self.snapshot().annotators.get(annotator_id).cloned()
    }

    /// Maps a bearer token to its annotator id.
    pub fn authenticate(&self, token: &str) -> Result<String> {
        self.snapshot()
            .tokens
            .get(&hash_token(token))
            .cloned()
            .ok_or(ServiceError::Unauthorized)
    }

    pub fn is_admin(&self, token: Option<&str>) -> bool {
        match (&self.config.admin_token, token) {
            (None, _) => true,
            (Some(expected), Some(got)) => expected == got,
            (Some(_), None) => false,
        }
    }

    pub fn register(&self, annotator_id: Option<String>) -> Result<Registration> {
        let _w = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        let annotator_id = match annotator_id {
            Some(id) if !is_valid_id(&id) => {
                return Err(ServiceError::BadRequest(format!(
                    "annotator id {id:?} must be 1-128 characters of [A-Za-z0-9._:-]"
                )))
            }
            Some(id) => id,
            None => loop {
                let id = format!("a-{}", &uuid::Uuid::new_v4().simple().to_string()[..12]);
                if !next.annotators.contains_key(&id) {
                    break id;
                }
            },
        };
        if next.annotators.contains_key(&annotator_id) {
            return Err(ServiceError::conflict(
                "annotator_exists",
                format!("annotator {annotator_id} is already registered"),
            ));
        }
        let token = uuid::Uuid::new_v4().simple().to_string();
        let record = AnnotatorRecord {
            annotator_id: annotator_id.clone(),
            token_sha256: hash_token(&token),
            screening: None,
            completed_passages: 0,
            tutorial_step: 0,
        };
        self.persist(&self.annotator_path(&annotator_id), &record)?;
        next.tokens.insert(record.token_sha256.clone(), annotator_id.clone());
        next.annotators.insert(annotator_id.clone(), record);
        self.publish(next);
        Ok(Registration { annotator_id, token })
    }

    fn screened_record<'s>(state: &'s State, annotator_id: &str) -> Result<&'s AnnotatorRecord> {
        let rec = state.annotators.get(annotator_id).ok_or(ServiceError::Unauthorized)?;
        if !rec.screened() {
            return Err(ServiceError::Forbidden(format!(
                "annotator {annotator_id} has not passed the screening step"
            )));
        }
        Ok(rec)
    }

    /// Hands out the least-annotated eligible passage, or the one already
    /// leased to this annotator.
    pub fn assign_next(&self, annotator_id: &str) -> Result<Option<Assignment>> {
        let _w = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        Self::screened_record(&next, annotator_id)?;
        let now = self.clock.now();
        next.leases.retain(|_, l| l.expires_at > now);

        if let Some(lease) = next.leases.get(annotator_id) {
            let a = Assignment {
                passage_id: lease.passage_id.clone(),
                lease_expires_at: unix_secs(lease.expires_at),
            };
            self.publish(next);
            return Ok(Some(a));
        }

        let target = self.config.target_annotations;
        let choice = self
            .corpus
            .passages
            .iter()
            .map(|p| p.passage_id.as_str())
            .filter(|pid| !next.has_annotated(pid, annotator_id))
            .map(|pid| (next.completed_on(pid) + next.live_leases_on(pid), pid))
            .filter(|(load, _)| *load < target)
            .min()
            .map(|(_, pid)| pid.to_string());

        let assignment = choice.map(|passage_id| {
            let expires_at = now + self.config.lease_ttl;
            next.leases.insert(
                annotator_id.to_string(),
                Lease {
                    passage_id: passage_id.clone(),
                    expires_at,
                },
            );
            Assignment {
                passage_id,
                lease_expires_at: unix_secs(expires_at),
            }
        });
        self.publish(next);
        Ok(assignment)
    }

    /// Stores a complete clustering of a leased passage, or replaces the
    /// annotator's earlier record for that passage.
    pub fn submit(&self, annotator_id: &str, mut clustering: Clustering) -> Result<SubmitAck> {
        let _w = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        Self::screened_record(&next, annotator_id)?;
        if !clustering.annotator_id.is_empty() && clustering.annotator_id != annotator_id {
            return Err(ServiceError::Forbidden(format!(
                "cannot submit on behalf of {}",
                clustering.annotator_id
            )));
        }
        clustering.annotator_id = annotator_id.to_string();
        let passage_id = clustering.passage_id.clone();
        let ids = self
            .mention_ids
            .get(&passage_id)
            .ok_or_else(|| ServiceError::NotFound(format!("passage {passage_id}")))?;
        if let Err(problem) = clustering.validate_partition(ids) {
            return Err(ServiceError::Unprocessable {
                message: format!("clusters must partition the passage's mentions: {problem}"),
                details: json!({
                    "unassigned": problem.missing,
                    "unknown": problem.extra,
                    "duplicated": problem.duplicated,
                    "empty_clusters": problem.empty_clusters,
                }),
            });
        }

        let now = self.clock.now();
        next.leases.retain(|_, l| l.expires_at > now);
        let replaced = next.has_annotated(&passage_id, annotator_id);
        if !replaced {
            match next.leases.get(annotator_id) {
                Some(l) if l.passage_id == passage_id => {}
                _ => {
                    return Err(ServiceError::conflict(
                        "no_lease",
                        format!("no live lease on passage {passage_id} for {annotator_id}"),
                    ))
                }
            }
            if next.completed_on(&passage_id) >= self.config.target_annotations {
                return Err(ServiceError::conflict(
                    "saturated",
                    format!("passage {passage_id} already has its annotations"),
                ));
            }
        }

        let clustering = clustering.normalized();
        self.persist(&self.annotation_path(&passage_id, annotator_id), &clustering)?;
        next.annotations
            .entry(passage_id.clone())
            .or_default()
            .insert(annotator_id.to_string(), clustering);
        if next.leases.get(annotator_id).is_some_and(|l| l.passage_id == passage_id) {
            next.leases.remove(annotator_id);
        }
        let completed = next.completed_by(annotator_id);
        let rec = next.annotators.get_mut(annotator_id).expect("checked above");
        if rec.completed_passages != completed {
            rec.completed_passages = completed;
            let rec = rec.clone();
            // The count is derived on load, so a failure here loses nothing.
            if let Err(e) = self.persist(&self.annotator_path(annotator_id), &rec) {
                log::warn!("could not update annotator record: {e}");
            }
        }
        self.publish(next);
        Ok(SubmitAck {
            passage_id,
            annotator_id: annotator_id.to_string(),
            replaced,
        })
    }

    /// Practice steps advance only when answered correctly; the screening
    /// step may be taken once.
    pub fn tutorial_step(&self, annotator_id: &str, step_index: usize, mut submission: Clustering) -> Result<StepOutcome> {
        let _w = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        let rec = next.annotators.get(annotator_id).ok_or(ServiceError::Unauthorized)?;
        if step_index >= self.tutorial.steps.len() {
            return Err(ServiceError::NotFound(format!("tutorial step {step_index}")));
        }
        if step_index > rec.tutorial_step {
            return Err(ServiceError::conflict(
                "out_of_order",
                format!("step {step_index} requested, next step is {}", rec.tutorial_step),
            ));
        }
        if self.tutorial.steps[step_index].is_screening && rec.screening.is_some() {
            return Err(ServiceError::conflict("already_screened", "the screening step was already taken"));
        }
        submission.annotator_id = annotator_id.to_string();
        let outcome = evaluate_step(&self.tutorial, step_index, &submission).map_err(|e| match e {
            TutorialError::BadSubmission { ref problem, .. } => ServiceError::Unprocessable {
                message: e.to_string(),
                details: json!({
                    "unassigned": problem.missing,
                    "unknown": problem.extra,
                    "duplicated": problem.duplicated,
                    "empty_clusters": problem.empty_clusters,
                }),
            },
            TutorialError::NoSuchStep(i) => ServiceError::NotFound(format!("tutorial step {i}")),
            other => ServiceError::Unprocessable {
                message: other.to_string(),
                details: Value::Null,
            },
        })?;

        let mut rec = rec.clone();
        match &outcome {
            StepOutcome::Feedback(fb) if fb.correct && step_index == rec.tutorial_step => {
                rec.tutorial_step += 1;
            }
            StepOutcome::Screening(result) => {
                rec.screening = Some(result.clone());
                rec.tutorial_step = self.tutorial.steps.len();
            }
            StepOutcome::Feedback(_) => return Ok(outcome),
        }
        self.persist(&self.annotator_path(annotator_id), &rec)?;
        next.annotators.insert(annotator_id.to_string(), rec);
        self.publish(next);
        Ok(outcome)
    }

    pub fn passage_view(&self, passage_id: &str, annotator_id: Option<&str>) -> Result<PassageView> {
        let passage = self
            .corpus
            .passage(passage_id)
            .ok_or_else(|| ServiceError::NotFound(format!("passage {passage_id}")))?;
        let tokens = self
            .corpus
            .passage_tokens(passage)
            .into_iter()
            .map(|t| ViewToken {
                offset: t.doc_offset,
                text: t.surface.clone(),
                sentence_start: t.index == 1,
            })
            .collect();
        let draft = annotator_id.and_then(|a| {
            self.snapshot()
                .annotations
                .get(passage_id)
                .and_then(|m| m.get(a).cloned())
        });
        Ok(PassageView {
            passage_id: passage.passage_id.clone(),
            doc_id: passage.doc_id.clone(),
            tokens,
            mentions: passage.mentions.clone(),
            draft,
        })
    }

    /// Stored clusterings, grouped by passage.
    pub fn annotations(&self) -> Vec<Clustering> {
        self.snapshot().all_annotations()
    }

    /// Live leases as (annotator_id, lease).
    pub fn leases(&self) -> Vec<(String, Lease)> {
        let now = self.clock.now();
        self.snapshot()
            .leases
            .iter()
            .filter(|(_, l)| l.expires_at > now)
            .map(|(a, l)| (a.clone(), l.clone()))
            .collect()
    }

    /// Recomputes a report from stored files. Results are cached under a
    /// digest of the report parameters and the annotations they read.
    pub fn report(&self, kind: ReportKind, params: &ReportParams) -> Result<Arc<Value>> {
        let annotations = self.annotations();
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&(kind, params)).unwrap_or_default());
        hasher.update(serde_json::to_vec(&annotations).unwrap_or_default());
        let key = hex::encode(hasher.finalize());
        if let Some(hit) = self.report_cache.lock().get(&key) {
            return Ok(hit.clone());
        }
        let value = Arc::new(self.compute_report(kind, params, &annotations)?);
        let mut cache = self.report_cache.lock();
        if cache.len() > 256 {
            cache.clear();
        }
        cache.insert(key, value.clone());
        Ok(value)
    }

    fn default_tau(&self) -> u32 {
        self.config.target_annotations / 2 + 1
    }

    fn compute_report(&self, kind: ReportKind, params: &ReportParams, annotations: &[Clustering]) -> Result<Value> {
        let corpus = Some(&*self.corpus);
        // Passages without mentions have nothing to aggregate or score.
        let annotations: Vec<Clustering> = annotations
            .iter()
            .filter(|c| self.mention_ids.get(&c.passage_id).is_some_and(|ids| !ids.is_empty()))
            .cloned()
            .collect();
        match kind {
            ReportKind::Aggregate => {
                let tau = params.tau.unwrap_or_else(|| self.default_tau());
                if tau == 0 {
                    return Err(ServiceError::BadRequest("tau must be at least 1".into()));
                }
                let (eligible, skipped) = split_by_count(&annotations, tau);
                let aggs = reports::aggregate_passages(&eligible, tau, corpus).map_err(report_error)?;
                Ok(json!({ "tau": tau, "passages": to_value(&aggs), "skipped": skipped }))
            }
            ReportKind::Scores => {
                let mode = params.singletons.unwrap_or(SingletonMode::Include);
                let annotated: BTreeSet<&str> = annotations.iter().map(|c| c.passage_id.as_str()).collect();
                let missing: Vec<&str> = annotated.iter().copied().filter(|p| !self.gold.contains_key(*p)).collect();
                if annotated.is_empty() || !missing.is_empty() {
                    return Err(ServiceError::NotFound(format!(
                        "gold clustering for passage(s) {}",
                        if missing.is_empty() { "(none annotated)".to_string() } else { missing.join(", ") }
                    )));
                }
                let gold: Vec<Clustering> = self.gold.values().cloned().collect();
                let rows = match params.tau {
                    Some(tau) => {
                        let (eligible, _) = split_by_count(&annotations, tau);
                        let aggs = reports::aggregate_passages(&eligible, tau, corpus).map_err(report_error)?;
                        let responses: Vec<Clustering> = aggs.iter().map(|a| a.to_clustering()).collect();
                        let keys: Vec<Clustering> = gold
                            .into_iter()
                            .filter(|g| responses.iter().any(|r| r.passage_id == g.passage_id))
                            .collect();
                        reports::score_passages(&keys, &responses, mode, Some(tau), |pid| {
                            reports::passage_domain(&self.corpus, pid)
                        })
                        .map_err(report_error)?
                    }
                    None => reports::tau_sweep(&gold, &annotations, 1..=self.config.target_annotations, mode, corpus)
                        .map_err(report_error)?,
                };
                Ok(to_value(&rows))
            }
            ReportKind::Iaa => {
                let mode = params.singletons.unwrap_or(SingletonMode::Exclude);
                let report = reports::iaa_by_domain(&annotations, mode, corpus).map_err(report_error)?;
                Ok(to_value(&report))
            }
            ReportKind::DetectorEval => {
                let gold = self
                    .gold_mentions
                    .as_ref()
                    .ok_or_else(|| ServiceError::NotFound("gold_mentions.json".into()))?;
                let report = reports::detector_report(&self.corpus, gold).map_err(report_error)?;
                Ok(to_value(&report))
            }
        }
    }
}

fn split_by_count(annotations: &[Clustering], tau: u32) -> (Vec<Clustering>, Vec<String>) {
    let mut eligible = Vec::new();
    let mut skipped = Vec::new();
    for (pid, anns) in reports::by_passage(annotations) {
        if anns.len() as u32 >= tau {
            eligible.extend(anns);
        } else {
            skipped.push(pid);
        }
    }
    (eligible, skipped)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}
