//! HTTP surface.
//!
//! | route | |
//! |---|---|
//! | `POST /launch` `{"station": n}` | launch outcome document |
//! | `GET /state` | latest state snapshot |
//! | `GET /events` | server-sent events: `snapshot`, then `schedule` and `tick` |
//! | `GET /loops/{id}.wav` | one loop or announcement |
//! | `GET /audio/next[?measure=m]` | one rendered measure as WAV |
//! | `GET /config` | effective session config |
//! | `POST /advance` `{"measures": n}` or `{"to_sample": s}` | manual clock only |

use std::convert::Infallible;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use interlock_core::render::wav_bytes;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::session::{AudioError, SessionHandle, StreamMessage};

pub fn router(handle: SessionHandle) -> Router {
    Router::new()
        .route("/launch", post(launch))
        .route("/state", get(state))
        .route("/events", get(events))
        .route("/loops/{file}", get(loop_wav))
        .route("/audio/next", get(audio_next))
        .route("/config", get(config))
        .route("/advance", post(advance))
        .with_state(handle)
}

fn unavailable() -> Response {
    (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "session stopped"}))).into_response()
}

#[derive(Deserialize)]
struct LaunchBody {
    station: u8,
}

async fn launch(State(h): State<SessionHandle>, Json(body): Json<LaunchBody>) -> Response {
    match h.launch(body.station).await {
        Ok(doc) => Json(doc).into_response(),
        Err(_) => unavailable(),
    }
}

async fn state(State(h): State<SessionHandle>) -> Response {
    Json(h.state().as_ref().clone()).into_response()
}

async fn config(State(h): State<SessionHandle>) -> Response {
    Json(h.config().clone()).into_response()
}

fn sse_event(msg: &StreamMessage) -> Event {
    Event::default().event(msg.name()).data(msg.data_json())
}

async fn events(
    State(h): State<SessionHandle>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, Response> {
    let (snapshot, rx) = h.subscribe().await.map_err(|_| unavailable())?;
    let first = stream::once(async move { Ok(sse_event(&StreamMessage::Snapshot(snapshot))) });
    // A lagging subscriber is cut off rather than silently skipping
    // messages; it reconnects and starts from a fresh snapshot.
    let rest = stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(msg) => Some((Ok(sse_event(&msg)), rx)),
            Err(RecvError::Lagged(_)) | Err(RecvError::Closed) => None,
        }
    });
    Ok(Sse::new(futures::StreamExt::chain(first, rest)).keep_alive(KeepAlive::default()))
}

fn wav_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"))], bytes).into_response()
}

async fn loop_wav(State(h): State<SessionHandle>, Path(file): Path<String>) -> Response {
    let Some(id) = file.strip_suffix(".wav") else {
        return StatusCode::NOT_FOUND.into_response();
    };
    match h.assets().loop_wav(id) {
        Some(bytes) => wav_response(bytes.as_ref().clone()),
        None => (StatusCode::NOT_FOUND, Json(json!({"error": format!("UnknownLoopId: {id}")}))).into_response(),
    }
}

#[derive(Deserialize)]
struct AudioQuery {
    measure: Option<u64>,
}

async fn audio_next(State(h): State<SessionHandle>, Query(q): Query<AudioQuery>) -> Response {
    match h.audio(q.measure).await {
        Ok((m, Ok(mix))) => {
            let mut resp = wav_response(wav_bytes(&mix.pcm));
            let headers = resp.headers_mut();
            headers.insert("x-measure", m.into());
            headers.insert("x-clipped-samples", mix.clipped_samples.into());
            resp
        }
        Ok((_, Err(e @ AudioError::NotYet { .. }))) => {
            let mut resp = (StatusCode::TOO_EARLY, Json(json!({"error": e.to_string()}))).into_response();
            resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from_static("1"));
            resp
        }
        Ok((_, Err(e))) => (StatusCode::INTERNAL_SERVER_ERROR, Json(json!({"error": e.to_string()}))).into_response(),
        Err(_) => unavailable(),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AdvanceBody {
    measures: Option<u64>,
    to_sample: Option<u64>,
}

async fn advance(State(h): State<SessionHandle>, Json(body): Json<AdvanceBody>) -> Response {
    if h.config().realtime {
        return (
            StatusCode::CONFLICT,
            Json(json!({"error": "the clock follows wall time in realtime mode"})),
        )
            .into_response();
    }
    let result = match (body.measures, body.to_sample) {
        (Some(n), None) => h.advance_measures(n).await,
        (None, Some(s)) => h.advance_to(s).await,
        _ => {
            return (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(json!({"error": "give exactly one of measures, to_sample"})),
            )
                .into_response()
        }
    };
    match result {
        Ok(doc) => Json(doc).into_response(),
        Err(_) => unavailable(),
    }
}
