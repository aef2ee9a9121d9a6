//! Application definitions and application shares.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::Router;
use parking_lot::RwLock;
use reqwest::Method;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sk_service::envelope::{ok, ApiResult, Body};
use sk_service::{ApiError, Authenticated, Gate, HasGate};

use super::{relay, FileRef, SiteContext};
use crate::client::ServiceClient;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppDef {
    pub id: String,
    #[serde(default)]
    pub owner: String,
    pub exec_system: String,
    pub exec_dir: String,
    #[serde(default)]
    pub inputs: Vec<FileRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive: Option<FileRef>,
}

impl AppDef {
    /// Every system the definition names.
    pub fn systems(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::from([self.exec_system.clone()]);
        out.extend(self.inputs.iter().map(|f| f.system.clone()));
        out.extend(self.archive.iter().map(|f| f.system.clone()));
        out
    }
}

/// What `GET /v3/apps/{id}` returns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppView {
    pub app: AppDef,
    /// Set when the caller sees the app through a share, naming the grantor.
    pub sac_grantor: Option<String>,
}

#[derive(Clone)]
pub struct AppsState {
    gate: Gate,
    client: Arc<ServiceClient>,
    apps: Arc<RwLock<BTreeMap<(String, String), AppDef>>>,
}

impl AppsState {
    pub fn new(ctx: &SiteContext, client: Arc<ServiceClient>) -> Self {
        AppsState { gate: ctx.gate("apps"), client, apps: Default::default() }
    }
}

impl HasGate for AppsState {
    fn gate(&self) -> &Gate {
        &self.gate
    }
}

pub fn router(state: AppsState) -> Router {
    Router::new()
        .route("/v3/apps", get(list).post(create))
        .route("/v3/apps/{id}", get(fetch))
        .route("/v3/apps/{id}/share", post(share))
        .with_state(state)
}

fn lookup(state: &AppsState, tenant: &str, id: &str) -> Result<AppDef, ApiError> {
    state
        .apps
        .read()
        .get(&(tenant.to_string(), id.to_string()))
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NoSuchApp", format!("no application {id}")))
}

async fn list(State(state): State<AppsState>, auth: Authenticated) -> ApiResult {
    let me = &auth.effective;
    let mine: Vec<AppDef> =
        state.apps.read().iter().filter(|((t, _), a)| *t == me.tenant && a.owner == me.username).map(|(_, a)| a.clone()).collect();
    Ok(ok("apps", mine))
}

async fn create(State(state): State<AppsState>, auth: Authenticated, Body(mut app): Body<AppDef>) -> ApiResult {
    app.owner = auth.effective.username.clone();
    let key = (auth.tenant().to_string(), app.id.clone());
    let mut apps = state.apps.write();
    if apps.contains_key(&key) {
        return Err(ApiError::new(StatusCode::CONFLICT, "AppExists", format!("application {} exists", app.id)));
    }
    apps.insert(key, app.clone());
    Ok(ok("app created", app))
}

async fn fetch(State(state): State<AppsState>, auth: Authenticated, Path(id): Path<String>) -> ApiResult {
    let app = lookup(&state, auth.tenant(), &id)?;
    let me = &auth.effective;
    if app.owner == me.username {
        return Ok(ok("app", AppView { app, sac_grantor: None }));
    }
    let path = format!("/v3/security/shares/isShared?resource_type=application&resource_id={id}&username={}&privilege=READ", me.username);
    let resp = state.client.call(Method::GET, &path, me, None, None).await;
    if !resp.ok() {
        return Ok(relay(&resp));
    }
    match (resp.env.result["shared"].as_bool(), resp.env.result["grantor"].as_str()) {
        (Some(true), Some(grantor)) => Ok(ok("app", AppView { sac_grantor: Some(grantor.to_string()), app })),
        _ => Err(ApiError::forbidden("NotAuthorized", format!("{me} may not read application {id}"))),
    }
}

#[derive(Deserialize)]
struct ShareApp {
    user: String,
}

async fn share(State(state): State<AppsState>, auth: Authenticated, Path(id): Path<String>, Body(body): Body<ShareApp>) -> ApiResult {
    let app = lookup(&state, auth.tenant(), &id)?;
    if app.owner != auth.effective.username {
        return Err(ApiError::forbidden("NotAuthorized", "only the owner shares an application"));
    }
    let share = json!({
        "grantee": body.user,
        "resource_type": "application",
        "resource_id": id,
        "privilege": "READ",
        "referenced_systems": app.systems(),
    });
    let resp = state.client.call(Method::POST, "/v3/security/shares", &auth.effective, None, Some(&share)).await;
    if !resp.ok() {
        return Ok(relay(&resp));
    }
    Ok(ok("app shared", resp.env.result))
}
