use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde_json::Value;
use tokio::sync::broadcast::error::RecvError;

use crate::app::{AppState, CreateJobRequest, OverridesRequest};
use crate::error::ApiError;
use crate::job::ProgressEvent;

type Shared = State<Arc<AppState>>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/jobs", post(create_job))
        .route("/jobs/{id}", get(get_job))
        .route("/jobs/{id}/masks", post(compute_masks).get(get_masks))
        .route("/jobs/{id}/matches/preview", post(preview_matches))
        .route("/jobs/{id}/matches", put(put_matches))
        .route("/jobs/{id}/run", post(run))
        .route("/jobs/{id}/events", get(events))
        .route("/jobs/{id}/result", get(result))
        .with_state(state)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::Format(format!("request body: {e}")))
}

/// An empty body reads as no patch.
fn parse_patch(body: &Bytes, key: Option<&str>) -> Result<Option<Value>, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(None);
    }
    let v: Value = parse(body)?;
    if !v.is_object() {
        return Err(ApiError::Validation("request body must be a JSON object".into()));
    }
    Ok(Some(match key {
        Some(k) => serde_json::json!({ k: v }),
        None => v,
    }))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(format!("worker task: {e}")))?
}

async fn create_job(State(st): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateJobRequest = parse(&body)?;
    let job = blocking(move || st.create_job(req)).await?;
    Ok((StatusCode::CREATED, Json(job)).into_response())
}

async fn get_job(State(st): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(st.get_job(&id)?).into_response())
}

/// Body (optional): clustering overrides, e.g. `{"k_max": 6}`.
async fn compute_masks(State(st): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let patch = parse_patch(&body, Some("clustering"))?;
    Ok(Json(blocking(move || st.compute_masks(&id, patch)).await?).into_response())
}

async fn get_masks(State(st): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(blocking(move || st.masks(&id)).await?).into_response())
}

async fn preview_matches(State(st): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(Json(blocking(move || st.preview_matches(&id)).await?).into_response())
}

async fn put_matches(State(st): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let req: OverridesRequest = parse(&body)?;
    Ok(Json(blocking(move || st.put_overrides(&id, req)).await?).into_response())
}

/// Body (optional): transfer overrides, e.g. `{"lambda_c": 0.29}`.
async fn run(State(st): Shared, Path(id): Path<String>, body: Bytes) -> Result<Response, ApiError> {
    let patch = parse_patch(&body, Some("transfer"))?;
    let job = blocking(move || st.start_run(&id, patch)).await?;
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

async fn result(State(st): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let png = blocking(move || st.result_png(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

fn to_sse(e: &ProgressEvent) -> Result<Event, Infallible> {
    Ok(Event::default()
        .event(e.kind.as_str())
        .id(e.seq.to_string())
        .json_data(e)
        .expect("events serialize"))
}

/// Replays the current run, then follows it live until its terminal event.
async fn events(
    State(st): Shared,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let (run, replay, rx, follow) = st.subscribe(&id)?;
    let replayed = stream::iter(replay.iter().map(to_sse).collect::<Vec<_>>());
    let live = stream::unfold((rx, follow), move |(mut rx, open)| async move {
        if !open {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(e) if e.run == run => {
                    let open = !e.kind.is_terminal();
                    return Some((to_sse(&e), (rx, open)));
                }
                Ok(_) | Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(replayed.chain(live)).keep_alive(KeepAlive::default()))
}
