//! HTTP attribution service over an immutable registry snapshot.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use keymark::registry::{KeyRegistry, Verdict};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub struct AppState {
    pub registry: KeyRegistry,
    pub expose_keys: bool,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/registry", get(registry_info))
        .route("/attribute", post(attribute))
        .fallback(not_found)
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

async fn registry_info(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let r = &state.registry;
    let mut body = json!({
        "dim": r.dim(),
        "keys": r.len(),
        "active": r.active_keys().len(),
        "delta": r.delta(),
        "dataset_fingerprint": r.dataset_fingerprint(),
    });
    if state.expose_keys {
        let entries: Vec<serde_json::Value> = r
            .entries()
            .iter()
            .map(|e| {
                json!({
                    "id": e.key().id(),
                    "vector": e.key().vector(),
                    "gamma": e.gamma(),
                    "noise_sigma": e.noise_sigma(),
                    "revoked": e.revoked(),
                })
            })
            .collect();
        body["entries"] = serde_json::Value::Array(entries);
    }
    Json(body)
}

#[derive(Deserialize)]
struct AttributeRequest {
    vector: Vec<f64>,
}

#[derive(Serialize)]
pub struct AttributeResponse {
    pub verdict: &'static str,
    pub model_id: Option<u32>,
    pub scores: Vec<f64>,
}

fn bad_request(msg: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({"error": msg}))).into_response()
}

/// Body is parsed by hand so malformed JSON is a 400, not a framework 415/422.
async fn attribute(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let request: AttributeRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("malformed body: {e}")),
    };
    match state.registry.attribute(&request.vector) {
        Ok(v) => {
            let (verdict, model_id) = match v.verdict {
                Verdict::Model(id) => ("model", Some(id)),
                Verdict::Authentic => ("authentic", None),
                Verdict::Ambiguous => ("ambiguous", None),
            };
            Json(AttributeResponse { verdict, model_id, scores: v.scores }).into_response()
        }
        Err(e) => bad_request(e.to_string()),
    }
}

async fn not_found() -> Response {
    (StatusCode::NOT_FOUND, Json(json!({"error": "unknown route"}))).into_response()
}
