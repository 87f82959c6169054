use std::fs;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use corefkit::annotation::Clustering;
use corefkit::corpus::{parse_conllu_named, Corpus, SplitConfig};
use corefkit::reports::{self, GoldDocumentMentions, GoldMentions};
use corefkit::scoring::SingletonMode;
use corefkit::mention_eval::GoldMention;
use corefkit_cli::commands::{tutorial_check, DEFAULT_TUTORIAL};

const BIN: &str = env!("CARGO_BIN_EXE_corefkit");

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/worked_examples.conllu")
}

fn corefkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("COREFKIT_STORE")
        .env_remove("COREFKIT_ADMIN_TOKEN")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = corefkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn pretty<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap() + "\n"
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, pretty(v)).unwrap();
}

/// Five annotators over mentions a, b, c with votes ab = 4, bc = 2, ac = 1.
fn vote_fixture(dir: &Path) -> [String; 3] {
    let [a, b, c] = ["p1:0-0", "p1:2-2", "p1:4-4"].map(String::from);
    let layouts = [
        vec![vec![a.clone(), b.clone(), c.clone()]],
        vec![vec![a.clone(), b.clone()], vec![c.clone()]],
        vec![vec![a.clone(), b.clone()], vec![c.clone()]],
        vec![vec![a.clone(), b.clone()], vec![c.clone()]],
        vec![vec![a.clone()], vec![b.clone(), c.clone()]],
    ];
    for (k, clusters) in layouts.into_iter().enumerate() {
        write_json(
            &dir.join("anns").join("p1").join(format!("a{k}.json")),
            &Clustering::new("p1", format!("a{k}"), clusters),
        );
    }
    [a, b, c]
}

#[test]
fn ingest_detect_split_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture();
    let fx = fx.to_str().unwrap();
    for run in ["one", "two"] {
        let out = format!("{run}.json");
        ok(dir.path(), &["ingest", "--conllu", fx, "--out", &out]);
        ok(dir.path(), &["detect", "--corpus", &out]);
        ok(dir.path(), &["split", "--corpus", &out, "--target-tokens", "20", "--min-tail", "5"]);
    }
    let one = fs::read(dir.path().join("one.json")).unwrap();
    assert_eq!(one, fs::read(dir.path().join("two.json")).unwrap());
    let corpus: Corpus = serde_json::from_slice(&one).unwrap();
    assert!(corpus.passages.len() > 1);
    assert!(corpus.passages.iter().all(|p| !p.mentions.is_empty()));
}

#[test]
fn subcommands_match_direct_library_calls() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let fx = fixture();

    // ingest
    let cli_corpus = ok(d, &["ingest", "--conllu", fx.to_str().unwrap()]);
    let mut corpus = Corpus {
        documents: parse_conllu_named(&fs::read_to_string(&fx).unwrap(), "worked_examples").unwrap(),
        passages: Vec::new(),
    };
    corpus.resplit(&SplitConfig::default()).unwrap();
    assert_eq!(cli_corpus, pretty(&corpus));
    fs::write(d.join("c.json"), &cli_corpus).unwrap();

    // detect
    let cli_detected = ok(d, &["detect", "--corpus", "c.json", "--out", "-"]);
    reports::detect_corpus(&mut corpus);
    assert_eq!(cli_detected, pretty(&corpus));
    fs::write(d.join("c.json"), &cli_detected).unwrap();

    // split
    let cli_split = ok(d, &["split", "--corpus", "c.json", "--out", "-", "--target-tokens", "12", "--min-tail", "3"]);
    corpus
        .resplit(&SplitConfig {
            target_tokens: 12,
            min_tail_tokens: 3,
        })
        .unwrap();
    assert_eq!(cli_split, pretty(&corpus));
    fs::write(d.join("c.json"), &cli_split).unwrap();

    // eval-detector: gold keeps every other detected mention
    let doc = &corpus.documents[0];
    let gold = GoldMentions {
        documents: vec![GoldDocumentMentions {
            doc_id: doc.doc_id.clone(),
            mentions: doc
                .mentions
                .iter()
                .step_by(2)
                .map(|m| GoldMention { span: m.span, head: None })
                .collect(),
        }],
    };
    write_json(&d.join("gold_mentions.json"), &gold);
    let cli_eval = ok(d, &["eval-detector", "--corpus", "c.json", "--gold", "gold_mentions.json"]);
    let report = reports::detector_report(&corpus, &gold).unwrap();
    assert_eq!(cli_eval, pretty(&report));
    assert_eq!(report.overall.recall, 1.0);

    // aggregate, score, iaa over the vote fixture
    vote_fixture(d);
    let anns = reports::by_passage(&{
        let mut v = Vec::new();
        for k in 0..5 {
            v.push(serde_json::from_str::<Clustering>(&fs::read_to_string(d.join(format!("anns/p1/a{k}.json"))).unwrap()).unwrap());
        }
        v
    })
    .remove("p1")
    .unwrap();
    let cli_agg = ok(d, &["aggregate", "--annotations", "anns", "--tau", "3"]);
    let aggs = reports::aggregate_passages(&anns, 3, None).unwrap();
    assert_eq!(cli_agg, pretty(&aggs));
    fs::write(d.join("agg.json"), &cli_agg).unwrap();

    let key = Clustering::new("p1", "gold", vec![vec!["p1:0-0".into(), "p1:2-2".into(), "p1:4-4".into()]]);
    write_json(&d.join("key.json"), &key);
    let cli_score = ok(d, &["score", "--key", "key.json", "--response", "agg.json", "--singletons", "exclude"]);
    let rows = reports::score_passages(
        std::slice::from_ref(&key),
        &[aggs[0].to_clustering()],
        SingletonMode::Exclude,
        Some(3),
        |_| None,
    )
    .unwrap();
    assert_eq!(cli_score, pretty(&rows));

    let cli_sweep = ok(d, &["score", "--key", "key.json", "--annotations", "anns"]);
    let sweep = reports::tau_sweep(std::slice::from_ref(&key), &anns, 1..=5, SingletonMode::Include, None).unwrap();
    assert_eq!(cli_sweep, pretty(&sweep));

    let cli_iaa = ok(d, &["iaa", "--annotations", "anns"]);
    assert_eq!(cli_iaa, pretty(&reports::iaa_by_domain(&anns, SingletonMode::Exclude, None).unwrap()));

    // tutorial-check
    fs::write(d.join("tutorial.json"), DEFAULT_TUTORIAL).unwrap();
    let cli_tc = ok(d, &["tutorial-check", "--tutorial", "tutorial.json"]);
    let script = serde_json::from_str(DEFAULT_TUTORIAL).unwrap();
    assert_eq!(cli_tc, pretty(&tutorial_check(&script, None).unwrap()));
}

#[test]
fn aggregate_at_three_gives_ab_and_c() {
    let dir = tempfile::tempdir().unwrap();
    let [a, b, c] = vote_fixture(dir.path());
    ok(dir.path(), &["aggregate", "--annotations", "anns", "--tau", "3", "--out", "agg.json"]);
    let aggs: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("agg.json")).unwrap()).unwrap();
    assert_eq!(aggs[0]["clusters"], serde_json::json!([[a, b], [c]]));
    assert_eq!(aggs[0]["tau"], 3);
}

#[test]
fn score_report_formats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    vote_fixture(d);
    ok(d, &["aggregate", "--annotations", "anns", "--tau", "3", "--out", "agg.json"]);
    write_json(
        &d.join("key.json"),
        &Clustering::new("p1", "gold", vec![vec!["p1:0-0".into(), "p1:2-2".into()], vec!["p1:4-4".into()]]),
    );
    let json: serde_json::Value =
        serde_json::from_str(&ok(d, &["score", "--key", "key.json", "--response", "agg.json", "--singletons", "exclude"])).unwrap();
    for row in json.as_array().unwrap() {
        for field in ["precision", "recall", "f1"] {
            assert_eq!(row[field], 1.0, "{row}");
        }
        assert_eq!(row["singleton_mode"], "exclude");
        assert_eq!(row["tau"], 3);
    }
    let csv = ok(d, &["score", "--key", "key.json", "--response", "agg.json", "--format", "csv"]);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("passage_id,group,tau,singleton_mode,precision,recall,f1"));
    assert_eq!(lines.next(), Some("p1,,3,include,1,1,1"));
    let table = ok(d, &["score", "--key", "key.json", "--annotations", "anns", "--taus", "1,3,5", "--format", "table"]);
    assert_eq!(table.lines().count(), 4);
    assert!(table.lines().next().unwrap().contains("F1"));
}

#[test]
fn config_file_fills_in_flags_not_given() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    vote_fixture(d);
    fs::write(d.join("cfg.json"), r#"{"tau": 2, "out": "from_config.json"}"#).unwrap();
    ok(d, &["aggregate", "--annotations", "anns", "--config", "cfg.json"]);
    let aggs: serde_json::Value = serde_json::from_slice(&fs::read(d.join("from_config.json")).unwrap()).unwrap();
    assert_eq!(aggs[0]["tau"], 2);
    ok(d, &["aggregate", "--annotations", "anns", "--config", "cfg.json", "--tau", "4", "--out", "flag.json"]);
    let aggs: serde_json::Value = serde_json::from_slice(&fs::read(d.join("flag.json")).unwrap()).unwrap();
    assert_eq!(aggs[0]["tau"], 4);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = corefkit(d, &["aggregate", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(corefkit(d, &["--help"]).status.code(), Some(0));
    assert_eq!(corefkit(d, &["--version"]).status.code(), Some(0));
    assert_eq!(corefkit(d, &["aggregate", "--annotations", "missing", "--tau", "3"]).status.code(), Some(2));
    assert_eq!(corefkit(d, &["aggregate", "--annotations", "x", "--tau", "0"]).status.code(), Some(1));
    fs::write(d.join("bad.json"), "{\"passage_id\": 3}").unwrap();
    assert_eq!(corefkit(d, &["aggregate", "--annotations", "bad.json", "--tau", "1"]).status.code(), Some(1));
    assert_eq!(corefkit(d, &["split", "--corpus", "c.json", "--target-tokens", "10", "--min-tail", "10"]).status.code(), Some(1));
    // A tree with a self-loop is a validation failure.
    fs::write(d.join("loop.conllu"), "# sent_id = S1\n1\ta\t_\tNOUN\t_\t_\t0\troot\t_\t_\n2\tb\t_\tNOUN\t_\t_\t1\tnmod\t_\t_\n3\tc\t_\tNOUN\t_\t_\t3\tnmod\t_\t_\n\n").unwrap();
    let out = corefkit(d, &["ingest", "--conllu", "loop.conllu"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("self-loop at sent_id S1 token 3"));
    fs::write(d.join("cfg.json"), "[1]").unwrap();
    assert_eq!(corefkit(d, &["iaa", "--annotations", "x", "--config", "cfg.json"]).status.code(), Some(1));
    assert_eq!(corefkit(d, &["iaa", "--annotations", "x", "--config", "nope.json"]).status.code(), Some(2));
}

#[test]
fn seed_is_accepted_and_ignored() {
    let dir = tempfile::tempdir().unwrap();
    vote_fixture(dir.path());
    let a = ok(dir.path(), &["aggregate", "--annotations", "anns", "--tau", "3", "--seed", "7"]);
    let b = ok(dir.path(), &["aggregate", "--annotations", "anns", "--tau", "3"]);
    assert_eq!(a, b);
}

#[test]
fn serve_requires_a_store_or_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["serve"])
        .env("COREFKIT_STORE", dir.path().join("store"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--init-corpus"));
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    stream.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_initializes_a_store_and_answers_http() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["ingest", "--conllu", fixture().to_str().unwrap(), "--out", "c.json"]);
    ok(d, &["detect", "--corpus", "c.json"]);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(BIN)
        .args(["serve", "--init-corpus", "c.json", "--bind", &format!("127.0.0.1:{port}")])
        .env("COREFKIT_STORE", d.join("store"))
        .current_dir(d)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut health = None;
    while Instant::now() < deadline {
        if let Some(resp) = http_get(port, "/healthz") {
            health = Some(resp);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    let tutorial = http_get(port, "/api/tutorial");
    child.kill().unwrap();
    child.wait().unwrap();
    let health = health.expect("server came up");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"status\":\"ok\""));
    assert!(tutorial.unwrap().contains("\"Final check\""));
    assert!(d.join("store/corpus.json").exists());
    assert!(d.join("store/tutorial.json").exists());
}
