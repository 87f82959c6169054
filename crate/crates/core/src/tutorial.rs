//! Tutorial scripts: ordered practice steps ending in a screening example.
//!
//! The script is plain JSON so the guidelines can be changed without
//! touching code:
//!
//! ```json
//! {
//!   "screening_threshold": 0.9,
//!   "steps": [
//!     {
//!       "title": "Pronouns",
//!       "instructions": "Link every pronoun to the entity it refers to.",
//!       "tokens": ["John", "told", "Fred", "he", "would", "call", "him", "."],
//!       "mentions": [{"mention_id": "t0:0-0", "span": [0, 0]}],
//!       "gold": [["t0:0-0"]],
//!       "feedback": {"missing_link": "...", "wrong_link": "...", "correct": "..."},
//!       "is_screening": false
//!     }
//!   ]
//! }
//! ```

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::annotation::{Clustering, PartitionError};
use crate::mentions::Span;
use crate::scoring::{screening_pass, ScoringError, ScreeningResult, SCREENING_THRESHOLD};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TutorialError {
    #[error("tutorial has no steps")]
    NoSteps,
    #[error("tutorial needs exactly one screening step, found {0}")]
    ScreeningCount(usize),
    #[error("the screening step must be the last step")]
    ScreeningNotLast,
    #[error("step {step}: {message}")]
    InvalidStep { step: usize, message: String },
    #[error("step {0} does not exist")]
    NoSuchStep(usize),
    #[error("step {step}: submission is not a partition of the step's mentions: {problem}")]
    BadSubmission { step: usize, problem: PartitionError },
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TutorialMention {
    pub mention_id: String,
    /// Inclusive token positions within the step's `tokens`.
    pub span: Span,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackText {
    #[serde(default)]
    pub missing_link: String,
    #[serde(default)]
    pub wrong_link: String,
    #[serde(default)]
    pub correct: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TutorialStep {
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub instructions: String,
    pub tokens: Vec<String>,
    pub mentions: Vec<TutorialMention>,
    pub gold: Vec<Vec<String>>,
    #[serde(default)]
    pub feedback: FeedbackText,
    #[serde(default)]
    pub is_screening: bool,
}

impl TutorialStep {
    pub fn mention_ids(&self) -> Vec<String> {
        self.mentions.iter().map(|m| m.mention_id.clone()).collect()
    }

    pub fn gold_clustering(&self, step_index: usize) -> Clustering {
        Clustering::new(format!("tutorial-{step_index}"), "gold", self.gold.clone())
    }

    /// The step without its answer, as served to annotators.
    pub fn without_gold(&self) -> TutorialStep {
        TutorialStep {
            gold: Vec::new(),
            ..self.clone()
        }
    }
}

fn default_threshold() -> f64 {
    SCREENING_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TutorialScript {
    #[serde(default = "default_threshold")]
    pub screening_threshold: f64,
    pub steps: Vec<TutorialStep>,
}

impl TutorialScript {
    pub fn validate(&self) -> Result<(), TutorialError> {
        if self.steps.is_empty() {
            return Err(TutorialError::NoSteps);
        }
        let screening: Vec<usize> = self
            .steps
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_screening)
            .map(|(i, _)| i)
            .collect();
        if screening.len() != 1 {
            return Err(TutorialError::ScreeningCount(screening.len()));
        }
        if screening[0] != self.steps.len() - 1 {
            return Err(TutorialError::ScreeningNotLast);
        }
        if !(0.0..=1.0).contains(&self.screening_threshold) {
            return Err(TutorialError::InvalidStep {
                step: screening[0],
                message: format!("screening threshold {} outside [0, 1]", self.screening_threshold),
            });
        }
        for (i, step) in self.steps.iter().enumerate() {
            let invalid = |message: String| TutorialError::InvalidStep { step: i, message };
            for m in &step.mentions {
                if m.span.is_empty() || m.span.end >= step.tokens.len() {
                    return Err(invalid(format!(
                        "mention {} span {} outside {} tokens",
                        m.mention_id,
                        m.span,
                        step.tokens.len()
                    )));
                }
            }
            step.gold_clustering(i)
                .validate_partition(&step.mention_ids())
                .map_err(|p| invalid(format!("gold is not a partition of the mentions: {p}")))?;
        }
        Ok(())
    }

    pub fn screening_index(&self) -> usize {
        self.steps.len().saturating_sub(1)
    }

    /// The script as served to annotators: gold answers removed.
    pub fn public_view(&self) -> TutorialScript {
        TutorialScript {
            screening_threshold: self.screening_threshold,
            steps: self.steps.iter().map(TutorialStep::without_gold).collect(),
        }
    }
}

/// Link-level comparison of a practice submission with the step's gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFeedback {
    pub step_index: usize,
    pub correct: bool,
    pub missing_links: Vec<(String, String)>,
    pub wrong_links: Vec<(String, String)>,
    pub messages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepOutcome {
    Feedback(StepFeedback),
    Screening(ScreeningResult),
}

fn pairs(clusters: &[Vec<String>]) -> BTreeSet<(String, String)> {
    Clustering::new("", "", clusters.to_vec()).linked_pairs()
}

/// Scores one submission. Practice steps get missing/wrong link feedback;
/// the screening step gets a [`ScreeningResult`].
pub fn evaluate_step(
    script: &TutorialScript,
    step_index: usize,
    submission: &Clustering,
) -> Result<StepOutcome, TutorialError> {
    let step = script
        .steps
        .get(step_index)
        .ok_or(TutorialError::NoSuchStep(step_index))?;
    submission
        .validate_partition(&step.mention_ids())
        .map_err(|problem| TutorialError::BadSubmission {
            step: step_index,
            problem,
        })?;

    if step.is_screening {
        let gold = step.gold_clustering(step_index);
        let mut candidate = submission.clone();
        candidate.passage_id = gold.passage_id.clone();
        return Ok(StepOutcome::Screening(screening_pass(
            &candidate,
            &gold,
            script.screening_threshold,
        )?));
    }

    let gold = pairs(&step.gold);
    let got = submission.linked_pairs();
    let missing_links: Vec<_> = gold.difference(&got).cloned().collect();
    let wrong_links: Vec<_> = got.difference(&gold).cloned().collect();
    let mut messages = Vec::new();
    if !missing_links.is_empty() && !step.feedback.missing_link.is_empty() {
        messages.push(step.feedback.missing_link.clone());
    }
    if !wrong_links.is_empty() && !step.feedback.wrong_link.is_empty() {
        messages.push(step.feedback.wrong_link.clone());
    }
    let correct = missing_links.is_empty() && wrong_links.is_empty();
    if correct && !step.feedback.correct.is_empty() {
        messages.push(step.feedback.correct.clone());
    }
    Ok(StepOutcome::Feedback(StepFeedback {
        step_index,
        correct,
        missing_links,
        wrong_links,
        messages,
    }))
}
