//! Tokens routes and the start-up path that loads tenant signing keys.

use std::sync::Arc;

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::routing::post;
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fedsec_core::gatekeeper::{HEADER_OBO_TENANT, HEADER_OBO_USER, HEADER_TOKEN};
use fedsec_core::secrets::signing_key_path;
use fedsec_core::token::{private_key_from_pem, TokenError, TokenForge};
use serde::Deserialize;

use crate::auth::{Authenticated, Gate, HasGate};
use crate::envelope::{ok, ApiEnvelope, ApiError, ApiResult, Body};

#[derive(Clone)]
pub struct TokensState {
    pub gate: Gate,
    pub forge: Arc<TokenForge>,
}

impl HasGate for TokensState {
    fn gate(&self) -> &Gate {
        &self.gate
    }
}

impl From<TokenError> for ApiError {
    fn from(e: TokenError) -> Self {
        let (status, code) = match &e {
            TokenError::BadSignature => (StatusCode::UNAUTHORIZED, "BadSignature"),
            TokenError::ExpiredToken => (StatusCode::UNAUTHORIZED, "ExpiredToken"),
            TokenError::MalformedToken(_) => (StatusCode::BAD_REQUEST, "MalformedToken"),
            TokenError::BadCredentials => (StatusCode::UNAUTHORIZED, "BadCredentials"),
            TokenError::ReusedToken => (StatusCode::UNAUTHORIZED, "ReusedToken"),
            TokenError::NotAuthorized(_) => (StatusCode::FORBIDDEN, "NotAuthorized"),
            TokenError::UnknownTenant(_) => (StatusCode::NOT_FOUND, "UnknownTenant"),
            TokenError::UnknownSite(_) => (StatusCode::NOT_FOUND, "UnknownSite"),
            TokenError::Key(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Key"),
            TokenError::Unavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "Unavailable"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

pub fn router(state: TokensState) -> Router {
    Router::new()
        .route("/v3/tokens", post(user_token))
        .route("/v3/tokens/service", post(service_tokens))
        .route("/v3/tokens/refresh", post(refresh))
        .with_state(state)
}

#[derive(Deserialize)]
struct UserTokenBody {
    tenant: String,
    username: String,
    #[serde(default)]
    ttl: Option<u64>,
}

async fn user_token(State(state): State<TokensState>, auth: Authenticated, Body(body): Body<UserTokenBody>) -> ApiResult {
    let requester = auth.claims.subject().ok_or_else(|| ApiError::bad_request("token subject is not user@tenant"))?;
    Ok(ok("user token", state.forge.issue_user_token(&requester, &body.tenant, &body.username, body.ttl)?))
}

#[derive(Deserialize, Default)]
struct ServiceTokenBody {
    #[serde(default)]
    site: Option<String>,
    #[serde(default)]
    targets: Option<Vec<String>>,
}

/// `Authorization: Basic base64(service:password)`.
fn basic_credentials(headers: &HeaderMap) -> Result<(String, Vec<u8>), ApiError> {
    let unauthorized = || ApiError::new(StatusCode::UNAUTHORIZED, "BadCredentials", "basic authentication required");
    let value = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()).ok_or_else(unauthorized)?;
    let encoded = value.strip_prefix("Basic ").ok_or_else(unauthorized)?;
    let decoded = STANDARD.decode(encoded.trim()).map_err(|_| unauthorized())?;
    let colon = decoded.iter().position(|&b| b == b':').ok_or_else(unauthorized)?;
    let service = String::from_utf8(decoded[..colon].to_vec()).map_err(|_| unauthorized())?;
    Ok((service, decoded[colon + 1..].to_vec()))
}

async fn service_tokens(State(state): State<TokensState>, headers: HeaderMap, Body(body): Body<ServiceTokenBody>) -> ApiResult {
    let (service, password) = basic_credentials(&headers)?;
    let site = state.forge.site().site_id.clone();
    let targets = body.targets.unwrap_or_else(|| vec![site.clone()]);
    let pairs = state.forge.issue_service_tokens(&service, &password, body.site.as_deref().unwrap_or(&site), &targets)?;
    Ok(ok("service tokens", pairs))
}

#[derive(Deserialize)]
struct RefreshBody {
    refresh_token: String,
}

async fn refresh(State(state): State<TokensState>, Body(body): Body<RefreshBody>) -> ApiResult {
    Ok(ok("refreshed", state.forge.refresh(&body.refresh_token)?))
}

/// Loads signing keys for `tenants` from the local Security Kernel, using a
/// service token signed with the already-installed admin-tenant key.
/// Returns how many keys were installed.
pub async fn load_tenant_keys(forge: &TokenForge, client: &reqwest::Client, sk_url: &str, tenants: &[String]) -> Result<usize, TokenError> {
    let site = forge.site().site_id.clone();
    let token = forge.self_service_token(&site)?;
    let unavailable = |m: String| TokenError::Unavailable(m);
    let mut installed = 0;
    for tenant in tenants {
        if forge.signs_for(tenant) {
            continue;
        }
        let path = signing_key_path(tenant);
        let url = format!("{sk_url}/v3/security/vault/secret/{}/{}/{}", path.category, path.owner, path.name);
        let resp = client
            .get(url)
            .header(HEADER_TOKEN, &token)
            .header(HEADER_OBO_USER, "tokens")
            .header(HEADER_OBO_TENANT, tenant)
            .send()
            .await
            .map_err(|e| unavailable(e.to_string()))?;
        let env: ApiEnvelope = resp.json().await.map_err(|e| unavailable(e.to_string()))?;
        if !env.is_success() {
            return Err(unavailable(format!("key for {tenant}: {}", env.message)));
        }
        let pem = env.result["data"].as_str().ok_or_else(|| unavailable(format!("key for {tenant}: no data")))?;
        forge.install_tenant_key(tenant, private_key_from_pem(pem)?);
        installed += 1;
    }
    Ok(installed)
}
