mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use common::*;
use corefkit_service::api::router;
use corefkit_service::{Store, StoreConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct App {
    router: Router,
    _dir: tempfile::TempDir,
}

fn app(n_passages: usize, config: StoreConfig) -> App {
    let dir = tempfile::tempdir().unwrap();
    init(dir.path(), &corpus(n_passages), &[]);
    let store = Store::open_with_clock(dir.path(), config, clock()).unwrap();
    App {
        router: router(Arc::new(store), None),
        _dir: dir,
    }
}

async fn call(router: &Router, method: Method, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = router.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn onboard(router: &Router, id: &str) -> String {
    let (status, reg) = call(router, Method::POST, "/api/annotators", None, Some(json!({ "annotator_id": id }))).await;
    assert_eq!(status, StatusCode::CREATED, "{reg}");
    let token = reg["token"].as_str().unwrap().to_string();
    for step in 0..2 {
        let (status, out) = call(
            router,
            Method::POST,
            &format!("/api/tutorial/steps/{step}"),
            Some(&token),
            Some(json!({ "clusters": gold_answer() })),
        )
        .await;
        assert_eq!(status, StatusCode::OK, "{out}");
    }
    token
}

fn assert_error_shape(body: &Value, code: &str) {
    assert_eq!(body["code"], code, "{body}");
    assert!(body["message"].is_string());
    assert!(body.get("details").is_some());
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let app = app(1, StoreConfig::default());
    let (status, body) = call(&app.router, Method::GET, "/healthz", None, None).await;
    assert_eq!((status, body), (StatusCode::OK, json!({ "status": "ok" })));
    let (status, body) = call(&app.router, Method::GET, "/api/nope", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error_shape(&body, "not_found");
}

#[tokio::test]
async fn tutorial_is_served_without_answers() {
    let app = app(1, StoreConfig::default());
    let (status, body) = call(&app.router, Method::GET, "/api/tutorial", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["screening_threshold"], 0.9);
    let steps = body["steps"].as_array().unwrap();
    assert_eq!(steps.len(), 2);
    assert!(steps.iter().all(|s| s["gold"] == json!([])));
    assert_eq!(steps[1]["is_screening"], true);
    assert_eq!(steps[0]["tokens"][0], "John");
}

#[tokio::test]
async fn tutorial_feedback_and_ordering_over_http() {
    let app = app(1, StoreConfig::default());
    let (_, reg) = call(&app.router, Method::POST, "/api/annotators", None, Some(json!({}))).await;
    let token = reg["token"].as_str().unwrap();
    assert!(reg["annotator_id"].as_str().unwrap().starts_with("a-"));

    let (status, body) = call(
        &app.router,
        Method::POST,
        "/api/tutorial/steps/1",
        Some(token),
        Some(json!({ "clusters": gold_answer() })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_error_shape(&body, "out_of_order");

    let (status, body) = call(
        &app.router,
        Method::POST,
        "/api/tutorial/steps/0",
        Some(token),
        Some(json!({ "clusters": wrong_answer() })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["kind"], "feedback");
    assert_eq!(body["correct"], false);
    assert_eq!(body["wrong_links"].as_array().unwrap().len(), 4);

    let (status, body) = call(
        &app.router,
        Method::POST,
        "/api/tutorial/steps/0",
        Some(token),
        Some(json!({ "clusters": [["John", "he"]] })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_error_shape(&body, "invalid_annotation");
    assert_eq!(body["details"]["unassigned"], json!(["Fred", "him"]));

    let (status, _) = call(&app.router, Method::GET, "/api/assignments/next", Some(token), None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn auth_is_required() {
    let app = app(1, StoreConfig::default());
    for (method, uri) in [
        (Method::GET, "/api/assignments/next"),
        (Method::GET, "/api/passages/d.p000"),
        (Method::POST, "/api/annotations"),
    ] {
        let body = (method == Method::POST).then(|| json!({ "clusters": [] }));
        let (status, err) = call(&app.router, method.clone(), uri, Some("bogus"), body).await;
        assert_eq!(status, StatusCode::UNAUTHORIZED, "{uri}");
        assert_error_shape(&err, "unauthorized");
    }
}

#[tokio::test]
async fn assignment_passage_and_submission_round_trip() {
    let app = app(2, StoreConfig::default());
    let token = onboard(&app.router, "ann").await;

    let (status, body) = call(&app.router, Method::GET, "/api/assignments/next", Some(&token), None).await;
    assert_eq!(status, StatusCode::OK);
    let pid = body["assignment"]["passage_id"].as_str().unwrap().to_string();
    assert!(body["assignment"]["lease_expires_at"].as_u64().unwrap() > 0);

    let (status, view) = call(&app.router, Method::GET, &format!("/api/passages/{pid}"), Some(&token), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(view["tokens"].as_array().unwrap().len(), 6);
    assert_eq!(view["draft"], Value::Null);
    let ids: Vec<String> = view["mentions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["mention_id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(view["mentions"][0]["span"], json!([0, 0]));

    let (status, err) = call(
        &app.router,
        Method::POST,
        "/api/annotations",
        Some(&token),
        Some(json!({ "passage_id": pid, "clusters": [[ids[0], ids[1]]] })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(err["details"]["unassigned"], json!([ids[2]]));

    let clusters = json!([[ids[0], ids[2]], [ids[1]]]);
    let (status, ack) = call(
        &app.router,
        Method::POST,
        "/api/annotations",
        Some(&token),
        Some(json!({ "passage_id": pid, "clusters": clusters })),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{ack}");
    assert_eq!(ack, json!({ "passage_id": pid, "annotator_id": "ann", "replaced": false }));

    let (_, view) = call(&app.router, Method::GET, &format!("/api/passages/{pid}"), Some(&token), None).await;
    assert_eq!(view["draft"]["clusters"], clusters);

    let (_, body) = call(&app.router, Method::GET, "/api/assignments/next", Some(&token), None).await;
    assert_ne!(body["assignment"]["passage_id"], json!(pid));
    let other = body["assignment"]["passage_id"].as_str().unwrap().to_string();
    let (_, view) = call(&app.router, Method::GET, &format!("/api/passages/{other}"), Some(&token), None).await;
    let ids: Vec<Value> = view["mentions"].as_array().unwrap().iter().map(|m| m["mention_id"].clone()).collect();
    let (status, _) = call(
        &app.router,
        Method::POST,
        "/api/annotations",
        Some(&token),
        Some(json!({ "passage_id": other, "clusters": [[ids[0]], [ids[1]], [ids[2]]] })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (_, body) = call(&app.router, Method::GET, "/api/assignments/next", Some(&token), None).await;
    assert_eq!(body, json!({ "assignment": null }));
}

#[tokio::test]
async fn malformed_bodies_get_json_errors() {
    let app = app(1, StoreConfig::default());
    let token = onboard(&app.router, "ann").await;
    let req = Request::builder()
        .method(Method::POST)
        .uri("/api/annotations")
        .header(header::AUTHORIZATION, format!("Bearer {token}"))
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = app.router.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_error_shape(&body, "bad_request");
}

#[tokio::test]
async fn reports_honour_the_admin_token() {
    let app = app(
        1,
        StoreConfig {
            admin_token: Some("s3cret".into()),
            ..StoreConfig::default()
        },
    );
    let (status, _) = call(&app.router, Method::GET, "/api/admin/reports?kind=iaa", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, body) = call(&app.router, Method::GET, "/api/admin/reports?kind=iaa", Some("s3cret"), None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["singleton_mode"], "exclude");
    let (status, body) = call(&app.router, Method::GET, "/api/admin/reports?kind=bogus", Some("s3cret"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_error_shape(&body, "bad_request");
    let (status, _) = call(
        &app.router,
        Method::GET,
        "/api/admin/reports?kind=iaa&singletons=maybe",
        Some("s3cret"),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) = call(&app.router, Method::GET, "/api/admin/reports?kind=scores&tau=3", Some("s3cret"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_error_shape(&body, "not_found");
}

#[tokio::test]
async fn aggregate_report_over_http() {
    let app = app(1, StoreConfig::default());
    let mut tokens = Vec::new();
    for k in 0..3 {
        tokens.push(onboard(&app.router, &format!("a{k}")).await);
    }
    for token in &tokens {
        let (_, body) = call(&app.router, Method::GET, "/api/assignments/next", Some(token), None).await;
        let pid = body["assignment"]["passage_id"].as_str().unwrap().to_string();
        let (_, view) = call(&app.router, Method::GET, &format!("/api/passages/{pid}"), Some(token), None).await;
        let ids: Vec<Value> = view["mentions"].as_array().unwrap().iter().map(|m| m["mention_id"].clone()).collect();
        let (status, _) = call(
            &app.router,
            Method::POST,
            "/api/annotations",
            Some(token),
            Some(json!({ "passage_id": pid, "clusters": [[ids[0], ids[1]], [ids[2]]] })),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, body) = call(&app.router, Method::GET, "/api/admin/reports?kind=aggregate&tau=3", None, None).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["tau"], 3);
    assert_eq!(body["passages"][0]["clusters"].as_array().unwrap().len(), 2);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_http_annotators_never_oversaturate() {
    let app = app(4, StoreConfig::default());
    let mut tokens = Vec::new();
    for k in 0..12 {
        tokens.push(onboard(&app.router, &format!("w{k}")).await);
    }
    let tasks: Vec<_> = tokens
        .into_iter()
        .map(|token| {
            let router = app.router.clone();
            tokio::spawn(async move {
                let mut done = Vec::new();
                loop {
                    let (_, body) = call(&router, Method::GET, "/api/assignments/next", Some(&token), None).await;
                    let Some(pid) = body["assignment"]["passage_id"].as_str().map(String::from) else {
                        break;
                    };
                    let (_, view) = call(&router, Method::GET, &format!("/api/passages/{pid}"), Some(&token), None).await;
                    let clusters: Vec<Vec<Value>> =
                        view["mentions"].as_array().unwrap().iter().map(|m| vec![m["mention_id"].clone()]).collect();
                    let (status, _) = call(
                        &router,
                        Method::POST,
                        "/api/annotations",
                        Some(&token),
                        Some(json!({ "passage_id": pid, "clusters": clusters })),
                    )
                    .await;
                    assert_eq!(status, StatusCode::OK);
                    done.push(pid);
                }
                done
            })
        })
        .collect();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in tasks {
        let done = t.await.unwrap();
        let mut unique = done.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), done.len());
        for p in done {
            *counts.entry(p).or_default() += 1;
        }
    }
    assert_eq!(counts.len(), 4);
    assert!(counts.values().all(|&n| n == 5), "{counts:?}");
}
