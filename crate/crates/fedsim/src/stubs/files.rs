//! File transfers between systems.
//!
//! Each endpoint is resolved through Systems, which decides system access and
//! hands back the login to use. Path access is then checked against SK unless
//! Systems granted access as owner or through a SAC. The host's own ACL has
//! the last word.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::Response;
use axum::routing::post;
use axum::Router;
use fedsec_core::UserIdentity;
use reqwest::Method;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sk_service::auth::SacHeaders;
use sk_service::envelope::{ok, ApiResult, Body};
use sk_service::{ApiError, Authenticated, Gate, HasGate};

use super::systems::Resolved;
use super::{relay, FileRef, SiteContext};
use crate::client::ServiceClient;
use crate::topology::Topology;

#[derive(Clone)]
pub struct FilesState {
    gate: Gate,
    client: Arc<ServiceClient>,
    topology: Arc<Topology>,
}

impl FilesState {
    pub fn new(ctx: &SiteContext, client: Arc<ServiceClient>) -> Self {
        FilesState { gate: ctx.gate("files"), client, topology: ctx.topology.clone() }
    }
}

impl HasGate for FilesState {
    fn gate(&self) -> &Gate {
        &self.gate
    }
}

pub fn router(state: FilesState) -> Router {
    Router::new().route("/v3/files/transfer", post(transfer)).with_state(state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferRequest {
    pub source: FileRef,
    pub destination: FileRef,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferResult {
    pub transferred: bool,
    pub source_login: String,
    pub destination_login: String,
}

/// Resolves one endpoint of a transfer to the login it will use.
async fn endpoint(state: &FilesState, me: &UserIdentity, sac: Option<&SacHeaders>, file: &FileRef, write: bool) -> Result<String, Response> {
    use axum::response::IntoResponse;
    let resp = state.client.call(Method::GET, &format!("/v3/systems/{}?privilege=READ", file.system), me, sac, None).await;
    if !resp.ok() {
        return Err(relay(&resp));
    }
    let resolved: Resolved = serde_json::from_value(resp.env.result.clone())
        .map_err(|e| ApiError::new(StatusCode::BAD_GATEWAY, "BadSystem", e.to_string()).into_response())?;
    let Some(cred) = resolved.credential else {
        return Err(ApiError::new(StatusCode::BAD_GATEWAY, "NoCredentials", format!("no login for {}", file.system)).into_response());
    };
    if resolved.via != "owner" && !resolved.via.starts_with("sac:") {
        let privilege = if write { "MODIFY" } else { "READ" };
        let perm = format!("files:{}:{privilege}:{}:{}", me.tenant, file.system, file.path);
        let body = json!({ "username": me.username, "permission": perm });
        let check = state.client.call(Method::POST, "/v3/security/perms/isPermitted", me, None, Some(&body)).await;
        if !check.ok() {
            return Err(relay(&check));
        }
        if check.env.result.as_bool() != Some(true) {
            return Err(ApiError::forbidden("NotAuthorized", format!("{me} lacks {privilege} on {}:{}", file.system, file.path)).into_response());
        }
    }
    if !state.topology.host_allows(&file.system, &cred.login, &file.path, write) {
        return Err(ApiError::forbidden("HostDenied", format!("host refuses {} at {}:{}", cred.login, file.system, file.path)).into_response());
    }
    Ok(cred.login)
}

async fn transfer(State(state): State<FilesState>, auth: Authenticated, Body(req): Body<TransferRequest>) -> ApiResult {
    let me = auth.effective.clone();
    let sac = auth.sac.clone();
    let source_login = match endpoint(&state, &me, sac.as_ref(), &req.source, false).await {
        Ok(l) => l,
        Err(r) => return Ok(r),
    };
    let destination_login = match endpoint(&state, &me, sac.as_ref(), &req.destination, true).await {
        Ok(l) => l,
        Err(r) => return Ok(r),
    };
    Ok(ok("transferred", TransferResult { transferred: true, source_login, destination_login }))
}
