//! Per-site HTTP router.
//!
//! Reads the tenant from the `Host` header and the service from the path,
//! then serves locally, forwards to the primary's router or refuses. The
//! request is relayed unchanged; forwarding sleeps the link delay each way.

use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Router;
use fedsec_core::registry::RegistryHandle;
use fedsec_core::router::{RouteKind, SiteRouter};
use parking_lot::RwLock;
use sk_service::ApiError;

/// Response header listing the routers a request went through, `>`-joined.
pub const HOPS_HEADER: &str = "x-fedsim-path";

const MAX_BODY: usize = 16 * 1024 * 1024;
const SKIPPED: [header::HeaderName; 3] = [header::CONNECTION, header::TRANSFER_ENCODING, header::CONTENT_LENGTH];

#[derive(Clone)]
pub struct ProxyState {
    pub site: String,
    pub router: Arc<SiteRouter>,
    pub registry: Arc<RegistryHandle>,
    /// This site's services listener.
    pub local_url: String,
    /// The primary's router; unused at the primary.
    pub primary_url: Option<String>,
    /// One-way delay to the primary in milliseconds.
    pub latency_ms: Arc<RwLock<f64>>,
    pub http: reqwest::Client,
}

pub fn router(state: ProxyState) -> Router {
    Router::new().fallback(handle).with_state(state)
}

fn copy_headers(from: &HeaderMap, to: &mut HeaderMap) {
    for (k, v) in from {
        if !SKIPPED.contains(k) {
            to.append(k.clone(), v.clone());
        }
    }
}

fn reject(reason: &str) -> Response {
    let (status, code) = match reason {
        "unknown tenant" => (StatusCode::NOT_FOUND, "UnknownTenant"),
        "unknown service" => (StatusCode::NOT_FOUND, "UnknownService"),
        "wrong site" => (StatusCode::MISDIRECTED_REQUEST, "WrongSite"),
        _ => (StatusCode::BAD_GATEWAY, "RouteRejected"),
    };
    ApiError::new(status, code, format!("router: {reason}")).into_response()
}

async fn relay(http: &reqwest::Client, base: &str, req: Request) -> Result<Response, Response> {
    let (parts, body) = req.into_parts();
    let path = parts.uri.path_and_query().map_or("/", |p| p.as_str());
    let bytes = to_bytes(body, MAX_BODY)
        .await
        .map_err(|e| ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "BodyTooLarge", e.to_string()).into_response())?;
    let mut headers = HeaderMap::new();
    copy_headers(&parts.headers, &mut headers);
    let upstream = http
        .request(parts.method, format!("{base}{path}"))
        .headers(headers)
        .body(bytes)
        .send()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "PrimaryUnreachable", e.to_string()).into_response())?;
    let status = upstream.status();
    let mut out_headers = HeaderMap::new();
    copy_headers(upstream.headers(), &mut out_headers);
    let body = upstream
        .bytes()
        .await
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "PrimaryUnreachable", e.to_string()).into_response())?;
    let mut resp = Response::new(Body::from(body));
    *resp.status_mut() = status;
    *resp.headers_mut() = out_headers;
    Ok(resp)
}

async fn delay(ms: f64) {
    if ms > 0.0 {
        tokio::time::sleep(Duration::from_secs_f64(ms / 1000.0)).await;
    }
}

async fn handle(State(state): State<ProxyState>, req: Request) -> Response {
    let host = req.headers().get(header::HOST).and_then(|v| v.to_str().ok()).unwrap_or_default().to_string();
    let path = req.uri().path().to_string();
    let decision = state.router.route(&host, &path, &state.registry.snapshot());
    let mut resp = match decision.kind {
        RouteKind::Reject => reject(decision.reason.as_deref().unwrap_or("rejected")),
        RouteKind::Local => relay(&state.http, &state.local_url, req).await.unwrap_or_else(|r| r),
        RouteKind::ForwardToPrimary => match &state.primary_url {
            None => reject("no primary configured"),
            Some(primary) => {
                let ms = *state.latency_ms.read();
                delay(ms).await;
                let r = relay(&state.http, primary, req).await.unwrap_or_else(|r| r);
                delay(ms).await;
                r
            }
        },
    };
    let hops = match resp.headers().get(HOPS_HEADER).and_then(|v| v.to_str().ok()) {
        Some(rest) => format!("{}>{rest}", state.site),
        None => state.site.clone(),
    };
    if let Ok(v) = HeaderValue::from_str(&hops) {
        resp.headers_mut().insert(HOPS_HEADER, v);
    }
    resp
}
