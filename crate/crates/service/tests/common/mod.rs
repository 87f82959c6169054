#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, UNIX_EPOCH};

use corefkit::annotation::Clustering;
use corefkit::corpus::{parse_conllu, Corpus, SplitConfig};
use corefkit::reports::detect_corpus;
use corefkit::tutorial::{FeedbackText, TutorialMention, TutorialScript, TutorialStep};
use corefkit::Span;
use corefkit_service::{ManualClock, Store, StoreConfig};

/// One six-token sentence per passage: "John told Fred about Bob ."
/// Each passage has exactly three mentions.
pub fn corpus(n_passages: usize) -> Corpus {
    let mut text = String::from("# newdoc id = d\n# domain = test\n");
    for i in 0..n_passages {
        text.push_str(&format!(
            "# sent_id = s{i}\n\
             1\tJohn\t_\tPROPN\t_\t_\t2\tnsubj\t_\t_\n\
             2\ttold\t_\tVERB\t_\t_\t0\troot\t_\t_\n\
             3\tFred\t_\tPROPN\t_\t_\t2\tobj\t_\t_\n\
             4\tabout\t_\tADP\t_\t_\t5\tcase\t_\t_\n\
             5\tBob\t_\tPROPN\t_\t_\t2\tobl\t_\t_\n\
             6\t.\t_\tPUNCT\t_\t_\t2\tpunct\t_\t_\n\n"
        ));
    }
    let documents = parse_conllu(&text).unwrap();
    let mut corpus = Corpus {
        documents,
        passages: Vec::new(),
    };
    detect_corpus(&mut corpus);
    corpus
        .resplit(&SplitConfig {
            target_tokens: 6,
            min_tail_tokens: 1,
        })
        .unwrap();
    assert_eq!(corpus.passages.len(), n_passages);
    for p in &corpus.passages {
        assert_eq!(p.mentions.len(), 3);
    }
    corpus
}

/// Mention ids of a passage: (John, Fred, Bob).
pub fn ids(corpus: &Corpus, passage_id: &str) -> [String; 3] {
    let ids = corpus.passage(passage_id).unwrap().mention_ids();
    [ids[0].clone(), ids[1].clone(), ids[2].clone()]
}

fn tutorial_step(is_screening: bool) -> TutorialStep {
    let m = |id: &str, at: usize| TutorialMention {
        mention_id: id.into(),
        span: Span::new(at, at),
    };
    TutorialStep {
        title: if is_screening { "Check".into() } else { "Pronouns".into() },
        instructions: "Link each pronoun to the person it refers to.".into(),
        tokens: ["John", "told", "Fred", "he", "would", "call", "him"].map(String::from).to_vec(),
        mentions: vec![m("John", 0), m("Fred", 2), m("he", 3), m("him", 6)],
        gold: vec![vec!["John".into(), "he".into()], vec!["Fred".into(), "him".into()]],
        feedback: FeedbackText {
            missing_link: "Some mentions of the same person are not linked.".into(),
            wrong_link: "Some linked mentions refer to different people.".into(),
            correct: "Correct.".into(),
        },
        is_screening,
    }
}

pub fn tutorial() -> TutorialScript {
    TutorialScript {
        screening_threshold: 0.9,
        steps: vec![tutorial_step(false), tutorial_step(true)],
    }
}

pub fn gold_answer() -> Vec<Vec<String>> {
    tutorial().steps[0].gold.clone()
}

pub fn wrong_answer() -> Vec<Vec<String>> {
    vec![["John", "Fred", "he", "him"].map(String::from).to_vec()]
}

pub fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(UNIX_EPOCH + Duration::from_secs(1_700_000_000)))
}

pub fn init(dir: &Path, corpus: &Corpus, gold: &[Clustering]) {
    Store::init(dir, corpus, &tutorial(), gold).unwrap();
}

pub fn open(dir: &Path, clock: Arc<ManualClock>) -> Store {
    Store::open_with_clock(dir, StoreConfig::default(), clock).unwrap()
}

/// Registers an annotator and takes them through the tutorial with
/// correct answers.
pub fn screened(store: &Store, id: &str) -> String {
    let reg = store.register(Some(id.into())).unwrap();
    for i in 0..store.tutorial().steps.len() {
        store
            .tutorial_step(id, i, Clustering::new("", "", gold_answer()))
            .unwrap();
    }
    assert!(store.annotator(id).unwrap().screened());
    reg.token
}
