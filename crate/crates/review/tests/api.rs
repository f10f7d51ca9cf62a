use std::collections::BTreeMap;
use std::path::Path;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use surgkit_core::annotations::synthetic_frames;
use surgkit_core::cleaning::*;
use surgkit_core::generation::*;
use surgkit_review::*;

const PNG: &[u8] = b"\x89PNG\r\n\x1a\nnot really an image";

struct Fixture {
    dir: tempfile::TempDir,
    corpus: Vec<InstructionRecord>,
}

impl Fixture {
    fn new() -> Self {
        let corpus = generate_corpus(
            &synthetic_frames(8, 3),
            &TemplateSet::builtin(),
            &GenerationConfig::default(),
            &StubEnricher,
        )
        .unwrap()
        .value;
        Self {
            dir: tempfile::tempdir().unwrap(),
            corpus,
        }
    }

    fn log(&self) -> std::path::PathBuf {
        self.dir.path().join("decisions.jsonl")
    }

    fn state(&self, options: ServeOptions) -> ReviewState {
        let session = sample_for_review(&self.corpus, 0.2, 11).unwrap();
        let persistent = if self.log().exists() {
            PersistentSession::resume(self.log(), &corpus_digest(&self.corpus)).unwrap()
        } else {
            PersistentSession::create(self.log(), session).unwrap()
        };
        let image = self.dir.path().join("frame.png");
        std::fs::write(&image, PNG).unwrap();
        let images: BTreeMap<String, _> = self.corpus.iter().map(|r| (r.frame_id.clone(), image.clone())).collect();
        ReviewState::new(persistent, self.corpus.clone(), images, options).unwrap()
    }

    fn app(&self) -> Router {
        app(self.state(ServeOptions {
            output: Some(self.dir.path().join("out")),
            ..Default::default()
        }))
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    call_with(app, method, uri, body.map(|b| b.to_string()), None).await
}

async fn call_with(
    app: &Router,
    method: Method,
    uri: &str,
    body: Option<String>,
    token: Option<&str>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    if let Some(t) = token {
        req = req.header(header::AUTHORIZATION, format!("Bearer {t}"));
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

/// Record ids contain `/`, so they travel percent-encoded.
fn enc(id: &str) -> String {
    id.replace('%', "%25").replace('/', "%2F").replace('+', "%2B")
}

fn json<T: serde::de::DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn log_decisions(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count() - 1
}

#[tokio::test]
async fn session_summary_reports_sample_and_progress() {
    let fx = Fixture::new();
    let app = fx.app();
    let (status, body) = call(&app, Method::GET, "/api/session", None).await;
    assert_eq!(status, StatusCode::OK);
    let s: SessionSummary = json(&body);
    assert_eq!(s.corpus_size, fx.corpus.len());
    assert_eq!(s.sample_size, (fx.corpus.len() as f64 * 0.2).ceil() as usize);
    assert_eq!((s.decided, s.remaining, s.complete), (0, s.sample_size, false));
    assert_eq!(s.ratio, 0.2);
    assert!(s.next.is_some());
}

#[tokio::test]
async fn next_item_carries_record_image_and_parsed_boxes() {
    let fx = Fixture::new();
    let app = fx.app();
    let (status, body) = call(&app, Method::GET, "/api/items/next", None).await;
    assert_eq!(status, StatusCode::OK);
    let item: ReviewItem = json(&body);
    assert_eq!(item.progress.position, 1);
    assert_eq!(item.image_url, format!("/api/images/{}", item.record.frame_id));
    let want: Vec<_> = item
        .record
        .turns
        .iter()
        .flat_map(|t| parse_grounding(&t.text).boxes)
        .map(|b| b.bbox.to_array())
        .collect();
    assert_eq!(item.boxes.iter().map(|b| b.bbox).collect::<Vec<_>>(), want);

    let (status, body) = call(&app, Method::GET, &format!("/api/items/{}", enc(&item.record.record_id)), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json::<ReviewItem>(&body), item);

    let (status, body) = call(&app, Method::GET, &item.image_url, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, PNG);
    let (status, _) = call(&app, Method::GET, "/api/images/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/api/items/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_decisions_are_rejected_without_touching_the_log() {
    let fx = Fixture::new();
    let app = fx.app();
    let (_, body) = call(&app, Method::GET, "/api/items/next", None).await;
    let id = json::<ReviewItem>(&body).record.record_id;
    let uri = format!("/api/items/{}/decision", enc(&id));

    let (status, body) = call(&app, Method::POST, &uri, Some(json!({"verdict": "edit"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(json::<Value>(&body)["error"].is_string());
    let (status, _) = call_with(&app, Method::POST, &uri, Some("{not json".into()), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, &uri, Some(json!({"verdict": "maybe"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, &uri, Some(json!({"record_id": "other", "verdict": "accept"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let foreign = fx.corpus.iter().map(|r| &r.record_id).find(|r| {
        !sample_for_review(&fx.corpus, 0.2, 11).unwrap().sample.contains(r)
    });
    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/api/items/{}/decision", enc(foreign.unwrap())),
        Some(json!({"verdict": "accept"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(log_decisions(&fx.log()), 0);

    let (status, body) = call(&app, Method::POST, &uri, Some(json!({"verdict": "flag", "issues": ["clarity"]}))).await;
    assert_eq!(status, StatusCode::NO_CONTENT, "{}", String::from_utf8_lossy(&body));
    assert_eq!(log_decisions(&fx.log()), 1);
    let (_, body) = call(&app, Method::GET, &format!("/api/items/{}", enc(&id)), None).await;
    let d = json::<ReviewItem>(&body).decision.unwrap();
    assert_eq!(d.verdict, Verdict::Flag);
    assert!(d.issues.contains(&IssueTag::Clarity));
}

#[tokio::test]
async fn full_session_then_finalize() {
    let fx = Fixture::new();
    let app = fx.app();
    let mut verdicts = BTreeMap::new();
    let mut n = 0;
    loop {
        let (status, body) = call(&app, Method::GET, "/api/items/next", None).await;
        if status == StatusCode::NO_CONTENT {
            break;
        }
        let item: ReviewItem = json(&body);
        assert_eq!(item.progress.decided, n);
        let id = item.record.record_id.clone();
        let body = match n % 3 {
            0 => json!({"verdict": "accept"}),
            1 => json!({"verdict": "edit", "edited_text": format!("Reviewed answer {n}.")}),
            _ => json!({"verdict": "flag", "issues": ["completeness"], "note": "incomplete"}),
        };
        let (status, _) = call(&app, Method::POST, &format!("/api/items/{}/decision", enc(&id)), Some(body)).await;
        assert_eq!(status, StatusCode::NO_CONTENT);
        verdicts.insert(id, n % 3);
        n += 1;
        assert_eq!(log_decisions(&fx.log()), n);
    }
    let (_, body) = call(&app, Method::GET, "/api/session", None).await;
    let s: SessionSummary = json(&body);
    assert!(s.complete && s.next.is_none());
    assert_eq!(s.decided, n);
    assert_eq!(s.accepted + s.edited + s.flagged, n);

    let (status, body) = call(&app, Method::POST, "/api/finalize", None).await;
    assert_eq!(status, StatusCode::OK);
    let fin: FinalizeResponse = json(&body);
    assert_eq!(fin.records_in, fx.corpus.len());
    for (id, v) in &verdicts {
        let kinds: Vec<ChangeKind> = fin.changes.entries.iter().filter(|e| &e.record_id == id).map(|e| e.kind).collect();
        let want = match v {
            0 => vec![],
            1 => vec![ChangeKind::Edited],
            _ => vec![ChangeKind::Dropped],
        };
        assert_eq!(kinds, want, "{id}");
    }
    let dropped = fin.changes.count(ChangeKind::Dropped) + fin.changes.count(ChangeKind::DroppedByRule);
    assert_eq!(fin.records_out, fin.records_in - dropped);

    let cleaned = std::fs::read(fx.dir.path().join("out/cleaned.jsonl")).unwrap();
    assert_eq!(read_corpus(cleaned.as_slice()).unwrap().len(), fin.records_out);
    let rules: Vec<CleaningRule> = json(&std::fs::read(fx.dir.path().join("out/rules.json")).unwrap());
    assert_eq!(rules, fin.rules);

    // the log alone reproduces what the server holds
    let replayed = replay_log(std::io::BufReader::new(std::fs::File::open(fx.log()).unwrap())).unwrap();
    assert_eq!(replayed.decisions.len(), n);
    drop(app);
    let resumed = fx.state(ServeOptions::default());
    assert_eq!(resumed.session().session(), &replayed);
}

#[tokio::test]
async fn token_is_required_when_configured() {
    let fx = Fixture::new();
    let app = app(fx.state(ServeOptions {
        token: Some("s3cret".into()),
        ..Default::default()
    }));
    let (status, _) = call_with(&app, Method::GET, "/api/session", None, None).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_with(&app, Method::GET, "/api/session", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::UNAUTHORIZED);
    let (status, _) = call_with(&app, Method::GET, "/api/session", None, Some("s3cret")).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn serves_over_a_real_socket() {
    let fx = Fixture::new();
    let (listener, addr) = bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
    assert_ne!(addr.port(), 0);
    let server = tokio::spawn(serve(listener, fx.app()));
    let mut stream = tokio::net::TcpStream::connect(addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /api/session HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut out = String::new();
    stream.read_to_string(&mut out).await.unwrap();
    assert!(out.starts_with("HTTP/1.1 200"), "{out}");
    assert!(out.contains("corpus_digest"));
    server.abort();
}

#[test]
fn state_rejects_a_log_from_another_corpus() {
    let fx = Fixture::new();
    let other = sample_for_review(&fx.corpus[1..], 0.2, 1).unwrap();
    let p = PersistentSession::create(fx.log(), other).unwrap();
    assert!(ReviewState::new(p, fx.corpus.clone(), BTreeMap::new(), ServeOptions::default()).is_err());
}
