//! Summary dashboard over HTTP.
//!
//! - `GET /` server-rendered page with both totals and one table per kind
//! - `GET /api/summary[?session=]` `{"yawns": n, "alarms": n}`
//! - `GET /api/events?kind=yawn|alarm&limit=&offset=` event array
//! - `POST /api/events` append one event (403 when read-only)

use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::store::{now_wall_time, Event, EventKind, EventStore, StoreError, Summary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DashboardConfig {
    pub bind_address: String,
    pub store_path: PathBuf,
    pub read_only: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum DashboardError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot bind {address}: {source}")]
    Bind { address: String, source: std::io::Error },
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::ReadOnly => StatusCode::FORBIDDEN,
            StoreError::Order { .. } => StatusCode::CONFLICT,
            StoreError::InvalidEvent(_) => StatusCode::BAD_REQUEST,
            StoreError::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type Shared = Arc<EventStore>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SummaryQuery {
    session: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventsQuery {
    kind: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewEvent {
    kind: EventKind,
    t_ms: u64,
    session: String,
    wall: Option<String>,
}

fn bad_query(e: QueryRejection) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, e.body_text())
}

async fn summary(State(store): State<Shared>, q: Result<Query<SummaryQuery>, QueryRejection>) -> Result<Json<Summary>, ApiError> {
    let Query(q) = q.map_err(bad_query)?;
    Ok(Json(store.summary(q.session.as_deref())?))
}

async fn list_events(State(store): State<Shared>, q: Result<Query<EventsQuery>, QueryRejection>) -> Result<Json<Vec<Event>>, ApiError> {
    let Query(q) = q.map_err(bad_query)?;
    let kind = q
        .kind
        .as_deref()
        .map(str::parse::<EventKind>)
        .transpose()
        .map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    Ok(Json(store.list_events(kind, q.limit, q.offset.unwrap_or(0))?))
}

async fn post_event(State(store): State<Shared>, body: Bytes) -> Result<(StatusCode, Json<Event>), ApiError> {
    if store.is_read_only() {
        return Err(ApiError(StatusCode::FORBIDDEN, "dashboard is read-only".into()));
    }
    let new: NewEvent = serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?;
    let event = Event::new(new.kind, new.t_ms, new.session, new.wall.unwrap_or_else(now_wall_time));
    let ev = event.clone();
    tokio::task::spawn_blocking(move || store.append(&ev))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(event)))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders the summary page from one snapshot of events.
pub fn render_page(events: &[Event]) -> String {
    let mut totals = Summary::default();
    for ev in events {
        totals.count(ev.kind);
    }
    let mut html = String::from(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>Drowsiness events</title>\n\
         <style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse;margin-bottom:2em}\
         td,th{border:1px solid #999;padding:.3em .8em}</style>\n</head>\n<body>\n<h1>Drowsiness events</h1>\n",
    );
    let _ = writeln!(
        html,
        "<p>Total yawns: <strong id=\"yawns\">{}</strong></p>\n<p>Total alarms: <strong id=\"alarms\">{}</strong></p>",
        totals.yawns, totals.alarms
    );
    for (kind, title) in [(EventKind::Alarm, "Alarms"), (EventKind::Yawn, "Yawns")] {
        let _ = writeln!(
            html,
            "<h2>{title}</h2>\n<table id=\"{kind}s\">\n<tr><th>Time (UTC)</th><th>t_ms</th></tr>"
        );
        for ev in events.iter().filter(|e| e.kind == kind) {
            let _ = writeln!(html, "<tr><td>{}</td><td>{}</td></tr>", escape(&ev.wall_time), ev.t_ms);
        }
        html.push_str("</table>\n");
    }
    html.push_str("</body>\n</html>\n");
    html
}

async fn index(State(store): State<Shared>) -> Result<Html<String>, ApiError> {
    let events = store.events()?;
    Ok(Html(render_page(&events)))
}

async fn not_found() -> ApiError {
    ApiError(StatusCode::NOT_FOUND, "not found".into())
}

pub fn router(store: Arc<EventStore>) -> Router {
    Router::new()
        .route("/", get(index))
        .route("/api/summary", get(summary))
        .route("/api/events", get(list_events).post(post_event))
        .fallback(not_found)
        .with_state(store)
}

/// A running dashboard. Dropping it without [`ServiceHandle::shutdown`]
/// leaves the server running until the runtime stops.
pub struct ServiceHandle {
    addr: SocketAddr,
    store: Arc<EventStore>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn store(&self) -> &Arc<EventStore> {
        &self.store
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.task.await.map_err(std::io::Error::other)?
    }
}

pub async fn serve(cfg: &DashboardConfig) -> Result<ServiceHandle, DashboardError> {
    let store = Arc::new(if cfg.read_only {
        EventStore::open_read_only(&cfg.store_path)?
    } else {
        EventStore::open(&cfg.store_path)?
    });
    let listener = TcpListener::bind(&cfg.bind_address)
        .await
        .map_err(|source| DashboardError::Bind {
            address: cfg.bind_address.clone(),
            source,
        })?;
    let addr = listener.local_addr().map_err(|source| DashboardError::Bind {
        address: cfg.bind_address.clone(),
        source,
    })?;
    let (stop, stopped) = oneshot::channel::<()>();
    let app = router(Arc::clone(&store));
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = stopped.await;
            })
            .await
    });
    log::info!("dashboard listening on http://{addr}");
    Ok(ServiceHandle {
        addr,
        store,
        stop: Some(stop),
        task,
    })
}

/// Content type used for HTML responses.
pub const HTML_CONTENT_TYPE: &str = "text/html; charset=utf-8";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::replay_wall_time;
    use axum::body::Body;
    use axum::http::{header, Request};
    use http_body_util::BodyExt;
    use tower::ServiceExt;

    async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, String, String) {
        let req = Request::builder()
            .method(method)
            .uri(uri)
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(body.to_string()))
            .unwrap();
        let resp = app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let ctype = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .map(|v| v.to_str().unwrap().to_string())
            .unwrap_or_default();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        (status, ctype, String::from_utf8(bytes.to_vec()).unwrap())
    }

    #[tokio::test]
    async fn summary_post_and_list() {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(EventStore::open(dir.path().join("e.jsonl")).unwrap());
        let app = router(store);
        let (s, ctype, body) = call(&app, "GET", "/api/summary", "").await;
        assert_eq!((s, body.as_str()), (StatusCode::OK, r#"{"yawns":0,"alarms":0}"#));
        assert_eq!(ctype, "application/json");

        let (s, _, _) = call(&app, "POST", "/api/events", r#"{"kind":"alarm","t_ms":100,"session":"a"}"#).await;
        assert_eq!(s, StatusCode::CREATED);
        let (_, _, body) = call(&app, "GET", "/api/summary", "").await;
        assert_eq!(body, r#"{"yawns":0,"alarms":1}"#);

        let wall = replay_wall_time(200);
        let post = format!(r#"{{"kind":"yawn","t_ms":200,"session":"a","wall":"{wall}"}}"#);
        assert_eq!(call(&app, "POST", "/api/events", &post).await.0, StatusCode::CREATED);
        let (s, _, body) = call(&app, "GET", "/api/events?kind=yawn", "").await;
        assert_eq!(s, StatusCode::OK);
        let events: Vec<Event> = serde_json::from_str(&body).unwrap();
        assert_eq!(events, vec![Event::new(EventKind::Yawn, 200, "a", wall)]);

        let (s, ctype, page) = call(&app, "GET", "/", "").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(ctype, HTML_CONTENT_TYPE);
        assert!(page.contains("<strong id=\"yawns\">1</strong>"));
        assert!(page.contains("<strong id=\"alarms\">1</strong>"));
    }

    #[tokio::test]
    async fn error_statuses() {
        let dir = tempfile::tempdir().unwrap();
        let app = router(Arc::new(EventStore::open(dir.path().join("e.jsonl")).unwrap()));
        assert_eq!(call(&app, "GET", "/api/events?kind=nap", "").await.0, StatusCode::BAD_REQUEST);
        assert_eq!(call(&app, "GET", "/api/events?limit=-1", "").await.0, StatusCode::BAD_REQUEST);
        assert_eq!(call(&app, "POST", "/api/events", "{\"kind\":").await.0, StatusCode::BAD_REQUEST);
        assert_eq!(
            call(&app, "POST", "/api/events", r#"{"kind":"alarm","t_ms":1,"session":"a","wall":"noon"}"#).await.0,
            StatusCode::BAD_REQUEST
        );
        assert_eq!(call(&app, "GET", "/nope", "").await.0, StatusCode::NOT_FOUND);
        call(&app, "POST", "/api/events", r#"{"kind":"alarm","t_ms":10,"session":"a"}"#).await;
        assert_eq!(
            call(&app, "POST", "/api/events", r#"{"kind":"alarm","t_ms":5,"session":"a"}"#).await.0,
            StatusCode::CONFLICT
        );
    }

    #[tokio::test]
    async fn read_only_forbids_posts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        let app = router(Arc::new(EventStore::open_read_only(&path).unwrap()));
        let (s, _, _) = call(&app, "POST", "/api/events", r#"{"kind":"alarm","t_ms":1,"session":"a"}"#).await;
        assert_eq!(s, StatusCode::FORBIDDEN);
        assert!(!path.exists());
    }

    #[test]
    fn page_escapes_wall_time() {
        let page = render_page(&[Event::new(EventKind::Alarm, 1, "s", "<script>")]);
        assert!(page.contains("&lt;script&gt;"));
        assert!(!page.contains("<script>"));
    }
}
