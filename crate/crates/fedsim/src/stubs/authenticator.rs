//! Password login for the tenants a site owns.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;
use fedsec_core::UserIdentity;
use reqwest::Method;
use serde::Deserialize;
use serde_json::json;
use sk_service::envelope::{ApiResult, Body};
use sk_service::ApiError;

use super::{relay, SiteContext};
use crate::client::ServiceClient;

#[derive(Clone)]
pub struct AuthnState {
    pub ctx: SiteContext,
    pub client: Arc<ServiceClient>,
}

pub fn router(state: AuthnState) -> Router {
    Router::new().route("/v3/authenticator/tokens", post(login)).with_state(state)
}

#[derive(Deserialize)]
struct Login {
    tenant: String,
    username: String,
    password: String,
    #[serde(default)]
    ttl: Option<u64>,
}

async fn login(State(state): State<AuthnState>, Body(body): Body<Login>) -> ApiResult {
    let snap = state.ctx.registry.snapshot();
    let owned = snap.tenant(&body.tenant).is_ok_and(|t| t.owning_site == state.ctx.site);
    if !owned {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "UnknownTenant", format!("{} is not served here", body.tenant)));
    }
    if !state.ctx.idp.check(&body.tenant, &body.username, &body.password) {
        return Err(ApiError::new(StatusCode::UNAUTHORIZED, "BadCredentials", "wrong username or password"));
    }
    let user = UserIdentity::new(body.username.clone(), body.tenant.clone());
    let req = json!({ "tenant": body.tenant, "username": body.username, "ttl": body.ttl });
    let resp = state.client.call(Method::POST, "/v3/tokens", &user, None, Some(&req)).await;
    Ok(relay(&resp))
}
