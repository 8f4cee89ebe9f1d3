//! HTTP service behind the ranking annotation tool.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use super::clip_path;
use crate::benchmark::{Category, PromptRecord};
use crate::scoring::{parse_ranking, RankingRecord};
use crate::video::{read_sequence, sprite_strip_png};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct AnnotationConfig {
    pub prompts: Vec<PromptRecord>,
    /// model id -> clip directory
    pub models: BTreeMap<String, PathBuf>,
    pub rankings_path: PathBuf,
    /// Superseded submissions are appended here.
    pub audit_path: PathBuf,
    pub static_dir: Option<PathBuf>,
}

/// Shared service state. The stored rankings mirror the rankings file.
pub struct AnnotationState {
    cfg: AnnotationConfig,
    model_ids: Vec<String>,
    rankings: Mutex<BTreeMap<(String, String), RankingRecord>>,
}

impl AnnotationState {
    pub fn new(cfg: AnnotationConfig) -> Result<Arc<Self>> {
        if cfg.models.is_empty() {
            return Err(Error::InvalidArgument("no models to annotate".into()));
        }
        let existing = if cfg.rankings_path.exists() {
            crate::scoring::read_rankings_jsonl(&cfg.rankings_path)?
        } else {
            Vec::new()
        };
        let rankings = existing
            .into_iter()
            .map(|r| ((r.prompt_id.clone(), r.evaluator_id.clone()), r))
            .collect();
        Ok(Arc::new(Self {
            model_ids: cfg.models.keys().cloned().collect(),
            cfg,
            rankings: Mutex::new(rankings),
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub prompt_id: String,
    pub text: String,
    pub category: Category,
    pub models: Vec<String>,
    pub completed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingSubmission {
    pub prompt_id: String,
    pub evaluator_id: String,
    pub order: String,
    /// Order in which the clips were shown, kept for position-bias audits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presentation: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct StoredRanking {
    #[serde(flatten)]
    record: RankingRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    presentation: Option<Vec<String>>,
}

#[derive(Deserialize)]
struct TasksQuery {
    evaluator: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub evaluator_id: String,
    pub completed: usize,
    pub total: usize,
}

fn bad_request(message: impl Into<String>) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(serde_json::json!({ "error": message.into() })),
    )
        .into_response()
}

fn not_found(message: impl Into<String>) -> Response {
    (
        StatusCode::NOT_FOUND,
        Json(serde_json::json!({ "error": message.into() })),
    )
        .into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    log::error!("{e}");
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(serde_json::json!({ "error": e.to_string() })),
    )
        .into_response()
}

async fn tasks(State(st): State<Arc<AnnotationState>>, Query(q): Query<TasksQuery>) -> Json<Vec<AnnotationTask>> {
    let done = st.rankings.lock().await;
    let tasks = st
        .cfg
        .prompts
        .iter()
        .map(|p| AnnotationTask {
            prompt_id: p.id.clone(),
            text: p.text.clone(),
            category: p.category,
            models: st.model_ids.clone(),
            completed: q
                .evaluator
                .as_ref()
                .is_some_and(|e| done.contains_key(&(p.id.clone(), e.clone()))),
        })
        .collect();
    Json(tasks)
}

async fn video(
    State(st): State<Arc<AnnotationState>>,
    UrlPath((prompt_id, model_id)): UrlPath<(String, String)>,
) -> Response {
    if !st.cfg.prompts.iter().any(|p| p.id == prompt_id) {
        return not_found(format!("unknown prompt `{prompt_id}`"));
    }
    let Some(dir) = st.cfg.models.get(&model_id) else {
        return not_found(format!("unknown model `{model_id}`"));
    };
    let path = clip_path(dir, &prompt_id);
    let png = tokio::task::spawn_blocking(move || read_sequence(&path).and_then(|s| sprite_strip_png(&s))).await;
    match png {
        Ok(Ok(bytes)) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Ok(Err(e)) => not_found(e.to_string()),
        Err(e) => internal(e),
    }
}

fn append_line(path: &Path, line: &str) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    // one write per line so a record is either whole or absent
    f.write_all(format!("{line}\n").as_bytes())?;
    f.sync_data()
}

async fn submit(State(st): State<Arc<AnnotationState>>, Json(sub): Json<RankingSubmission>) -> Response {
    if sub.evaluator_id.trim().is_empty() {
        return bad_request("evaluator_id is empty");
    }
    if !st.cfg.prompts.iter().any(|p| p.id == sub.prompt_id) {
        return bad_request(format!("unknown prompt `{}`", sub.prompt_id));
    }
    let parsed = match parse_ranking(&sub.order, &st.model_ids) {
        Ok(p) => p,
        Err(e) => return bad_request(e.to_string()),
    };
    let record = RankingRecord {
        prompt_id: sub.prompt_id.clone(),
        evaluator_id: sub.evaluator_id.clone(),
        order: sub.order.clone(),
        ranks: parsed.ranks,
    };
    let stored = StoredRanking {
        record: record.clone(),
        presentation: sub.presentation.clone(),
    };
    let line = match serde_json::to_string(&stored) {
        Ok(l) => l,
        Err(e) => return internal(e),
    };
    // the lock makes this task the single writer of both files
    let mut rankings = st.rankings.lock().await;
    let key = (sub.prompt_id, sub.evaluator_id);
    if let Some(prior) = rankings.get(&key) {
        let audit = serde_json::json!({ "superseded": prior, "by_order": record.order });
        if let Err(e) = append_line(&st.cfg.audit_path, &audit.to_string()) {
            return internal(Error::io(&st.cfg.audit_path, e));
        }
    }
    if let Err(e) = append_line(&st.cfg.rankings_path, &line) {
        return internal(Error::io(&st.cfg.rankings_path, e));
    }
    rankings.insert(key, record.clone());
    Json(record).into_response()
}

async fn progress(State(st): State<Arc<AnnotationState>>, UrlPath(evaluator_id): UrlPath<String>) -> Json<Progress> {
    let done = st.rankings.lock().await;
    let completed = st
        .cfg
        .prompts
        .iter()
        .filter(|p| done.contains_key(&(p.id.clone(), evaluator_id.clone())))
        .count();
    Json(Progress {
        evaluator_id,
        completed,
        total: st.cfg.prompts.len(),
    })
}

const PLACEHOLDER: &str = "<!doctype html><title>phyco</title><p>Annotation API: <code>/api/tasks</code>, \
<code>/api/video/{prompt}/{model}</code>, <code>/api/rankings</code>, <code>/api/progress/{evaluator}</code>.</p>";

pub fn router(state: Arc<AnnotationState>) -> Router {
    let api = Router::new()
        .route("/api/tasks", get(tasks))
        .route("/api/video/:prompt_id/:model_id", get(video))
        .route("/api/rankings", post(submit))
        .route("/api/progress/:evaluator_id", get(progress));
    let api = match &state.cfg.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(PLACEHOLDER) })),
    };
    api.with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(cfg: AnnotationConfig, addr: SocketAddr) -> Result<()> {
    let app = router(AnnotationState::new(cfg)?);
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Other(format!("cannot bind {addr}: {e}")))?;
    log::info!("listening on {addr}");
    axum::serve(listener, app)
        .await
        .map_err(|e| Error::Other(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::BenchmarkManifest;
    use crate::video::{write_sequence, FrameSequence};
    use axum::body::Body;
    use axum::http::Request;
    use http_body_util::BodyExt;
    use ndarray::Array4;
    use tower::ServiceExt;

    fn setup(dir: &Path) -> Arc<AnnotationState> {
        let prompts = BenchmarkManifest::seed().prompts;
        let mut models = BTreeMap::new();
        for m in ["1", "2", "3", "4"] {
            let d = dir.join(format!("model{m}"));
            std::fs::create_dir_all(&d).unwrap();
            models.insert(m.to_string(), d);
        }
        let clip = FrameSequence::new(Array4::from_elem((3, 3, 8, 10), 0.5), 8.0, "c").unwrap();
        write_sequence(&clip, &models["1"].join(format!("{}.pcvf", prompts[0].id))).unwrap();
        AnnotationState::new(AnnotationConfig {
            prompts,
            models,
            rankings_path: dir.join("rankings.jsonl"),
            audit_path: dir.join("audit.jsonl"),
            static_dir: None,
        })
        .unwrap()
    }

    async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    fn post_json(body: serde_json::Value) -> Request<Body> {
        Request::post("/api/rankings")
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap()
    }

    #[tokio::test]
    async fn valid_ranking_is_stored_with_tied_ranks() {
        let d = tempfile::tempdir().unwrap();
        let st = setup(d.path());
        let pid = st.cfg.prompts[0].id.clone();
        let app = router(st);
        let (s, body) = call(
            &app,
            post_json(serde_json::json!({"prompt_id": pid, "evaluator_id": "e1", "order": "2 > 1 = 3 > 4"})),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        let rec: RankingRecord = serde_json::from_slice(&body).unwrap();
        let want: BTreeMap<String, f64> = [("2", 1.0), ("1", 2.5), ("3", 2.5), ("4", 4.0)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        assert_eq!(rec.ranks, want);
        let on_disk = crate::scoring::read_rankings_jsonl(&d.path().join("rankings.jsonl")).unwrap();
        assert_eq!(on_disk, vec![rec]);
    }

    #[tokio::test]
    async fn malformed_or_unknown_submissions_are_rejected() {
        let d = tempfile::tempdir().unwrap();
        let st = setup(d.path());
        let pid = st.cfg.prompts[0].id.clone();
        let app = router(st);
        for (p, order) in [
            (pid.as_str(), "2 > 1 = 3 > 5"),
            (pid.as_str(), "2 > > 1"),
            (pid.as_str(), "1 > 2 > 3"),
            ("nope", "1 > 2 > 3 > 4"),
        ] {
            let (s, body) = call(
                &app,
                post_json(serde_json::json!({"prompt_id": p, "evaluator_id": "e1", "order": order})),
            )
            .await;
            assert_eq!(s, StatusCode::BAD_REQUEST, "{order}");
            let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
            assert!(!v["error"].as_str().unwrap().is_empty());
        }
        assert!(!d.path().join("rankings.jsonl").exists());
    }

    #[tokio::test]
    async fn tasks_and_progress_track_submissions() {
        let d = tempfile::tempdir().unwrap();
        let st = setup(d.path());
        let ids: Vec<String> = st.cfg.prompts.iter().map(|p| p.id.clone()).collect();
        let app = router(st);
        for id in &ids[..3] {
            let (s, _) = call(
                &app,
                post_json(serde_json::json!({"prompt_id": id, "evaluator_id": "e1", "order": "1 > 2 > 3 > 4"})),
            )
            .await;
            assert_eq!(s, StatusCode::OK);
        }
        let (_, body) = call(
            &app,
            Request::get("/api/tasks?evaluator=e1").body(Body::empty()).unwrap(),
        )
        .await;
        let tasks: Vec<AnnotationTask> = serde_json::from_slice(&body).unwrap();
        assert_eq!(tasks.len(), ids.len());
        for t in &tasks {
            assert_eq!(t.completed, ids[..3].contains(&t.prompt_id));
            assert_eq!(t.models, ["1", "2", "3", "4"]);
        }
        let (_, body) = call(
            &app,
            Request::get("/api/tasks?evaluator=e2").body(Body::empty()).unwrap(),
        )
        .await;
        let tasks: Vec<AnnotationTask> = serde_json::from_slice(&body).unwrap();
        assert!(tasks.iter().all(|t| !t.completed));
        let (_, body) = call(&app, Request::get("/api/progress/e1").body(Body::empty()).unwrap()).await;
        let p: Progress = serde_json::from_slice(&body).unwrap();
        assert_eq!((p.completed, p.total), (3, ids.len()));
    }

    #[tokio::test]
    async fn resubmission_wins_and_is_audited() {
        let d = tempfile::tempdir().unwrap();
        let st = setup(d.path());
        let pid = st.cfg.prompts[0].id.clone();
        let app = router(st);
        for order in ["1 > 2 > 3 > 4", "4 > 3 > 2 > 1"] {
            let (s, _) = call(&app, post_json(serde_json::json!({"prompt_id": pid, "evaluator_id": "e1", "order": order, "presentation": ["3", "1", "4", "2"]}))).await;
            assert_eq!(s, StatusCode::OK);
        }
        let stored = crate::scoring::read_rankings_jsonl(&d.path().join("rankings.jsonl")).unwrap();
        assert_eq!(stored.len(), 1);
        assert_eq!(stored[0].order, "4 > 3 > 2 > 1");
        let audit = std::fs::read_to_string(d.path().join("audit.jsonl")).unwrap();
        assert_eq!(audit.lines().count(), 1);
        assert!(audit.contains("1 > 2 > 3 > 4"));
        let raw = std::fs::read_to_string(d.path().join("rankings.jsonl")).unwrap();
        assert!(raw.contains("\"presentation\""));

        // a restarted service sees the latest record
        let st = setup(d.path());
        let app = router(st);
        let (_, body) = call(&app, Request::get("/api/progress/e1").body(Body::empty()).unwrap()).await;
        let p: Progress = serde_json::from_slice(&body).unwrap();
        assert_eq!(p.completed, 1);
    }

    #[tokio::test]
    async fn video_preview_is_a_png_strip() {
        let d = tempfile::tempdir().unwrap();
        let st = setup(d.path());
        let pid = st.cfg.prompts[0].id.clone();
        let app = router(st);
        let resp = app
            .clone()
            .oneshot(Request::get(format!("/api/video/{pid}/1")).body(Body::empty()).unwrap())
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()[header::CONTENT_TYPE], "image/png");
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let img = image::load_from_memory(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (30, 8));
        let (s, _) = call(
            &app,
            Request::get(format!("/api/video/{pid}/2")).body(Body::empty()).unwrap(),
        )
        .await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        let (s, _) = call(
            &app,
            Request::get(format!("/api/video/{pid}/9")).body(Body::empty()).unwrap(),
        )
        .await;
        assert_eq!(s, StatusCode::NOT_FOUND);
        let (s, body) = call(&app, Request::get("/").body(Body::empty()).unwrap()).await;
        assert_eq!(s, StatusCode::OK);
        assert!(String::from_utf8(body).unwrap().contains("/api/tasks"));
    }
}
