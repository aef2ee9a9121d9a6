//! System definitions, access grants and credential resolution.
//!
//! A system's `credential` is either `${requester}`, which resolves to the
//! effective user's own stored credential, or a fixed login whose stored
//! credential is always used.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{delete, get, post};
use axum::Router;
use fedsec_core::sharing::{AccessOutcome, Resource, SacDescriptor};
use fedsec_core::UserIdentity;
use parking_lot::RwLock;
use reqwest::Method;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sk_service::auth::SacHeaders;
use sk_service::envelope::{ok, ApiResult, Body, Params};
use sk_service::{ApiError, Authenticated, Gate, HasGate};

use super::apps::AppView;
use super::{relay, SiteContext};
use crate::client::{Response as ClientResponse, ServiceClient};
use crate::transcript::{Event, Transcript};

pub const REQUESTER_TEMPLATE: &str = "${requester}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemDef {
    pub id: String,
    #[serde(default)]
    pub owner: String,
    pub host: String,
    /// `${requester}` or a fixed login.
    pub credential: String,
}

impl SystemDef {
    /// Whose stored credential a request by `user` uses.
    pub fn login_owner<'a>(&'a self, user: &'a str) -> &'a str {
        if self.credential == REQUESTER_TEMPLATE {
            user
        } else {
            &self.credential
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub login: String,
    pub secret: String,
}

/// A resolved system as returned to services.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Resolved {
    pub system: SystemDef,
    /// How access was granted: `owner`, `share`, `permission` or
    /// `sac:<outcome>`.
    pub via: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential: Option<Credential>,
}

#[derive(Clone)]
pub struct SystemsState {
    gate: Gate,
    client: Arc<ServiceClient>,
    transcript: Transcript,
    systems: Arc<RwLock<BTreeMap<(String, String), SystemDef>>>,
}

impl SystemsState {
    pub fn new(ctx: &SiteContext, client: Arc<ServiceClient>) -> Self {
        SystemsState { gate: ctx.gate("systems"), client, transcript: ctx.transcript.clone(), systems: Default::default() }
    }
}

impl HasGate for SystemsState {
    fn gate(&self) -> &Gate {
        &self.gate
    }
}

pub fn router(state: SystemsState) -> Router {
    Router::new()
        .route("/v3/systems", get(list).post(create))
        .route("/v3/systems/{id}", get(fetch))
        .route("/v3/systems/{id}/perms", post(grant))
        .route("/v3/systems/{id}/perms/{user}", delete(revoke))
        .route("/v3/systems/{id}/share", post(share).delete(unshare))
        .route("/v3/systems/{id}/credentials/{user}", post(set_credential))
        .with_state(state)
}

fn lookup(state: &SystemsState, tenant: &str, id: &str) -> Result<SystemDef, ApiError> {
    state
        .systems
        .read()
        .get(&(tenant.to_string(), id.to_string()))
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "NoSuchSystem", format!("no system {id}")))
}

fn owner_only(def: &SystemDef, auth: &Authenticated) -> Result<(), ApiError> {
    if def.owner == auth.effective.username {
        Ok(())
    } else {
        Err(ApiError::forbidden("NotAuthorized", format!("only {} administers {}", def.owner, def.id)))
    }
}

fn privilege_name(p: &str) -> Result<&'static str, ApiError> {
    match p.to_ascii_uppercase().as_str() {
        "READ" => Ok("READ"),
        "EXECUTE" => Ok("EXECUTE"),
        "MODIFY" => Ok("MODIFY"),
        _ => Err(ApiError::bad_request(format!("unknown privilege {p}"))),
    }
}

/// Runs SK calls in order, stopping at the first failure.
async fn sk_calls(client: &ServiceClient, obo: &UserIdentity, calls: &[(Method, String, Value)]) -> Result<(), ClientResponse> {
    for (method, path, body) in calls {
        let resp = client.call(method.clone(), path, obo, None, Some(body)).await;
        // an existing role is fine; re-granting is idempotent
        if !resp.ok() && resp.code() != Some("RoleExists") {
            return Err(resp);
        }
    }
    Ok(())
}

async fn list(State(state): State<SystemsState>, auth: Authenticated) -> ApiResult {
    let me = &auth.effective;
    let mine: Vec<SystemDef> = state
        .systems
        .read()
        .iter()
        .filter(|((t, _), s)| *t == me.tenant && s.owner == me.username)
        .map(|(_, s)| s.clone())
        .collect();
    Ok(ok("systems", mine))
}

#[derive(Deserialize)]
struct CreateSystem {
    id: String,
    host: String,
    credential: String,
}

async fn create(State(state): State<SystemsState>, auth: Authenticated, Body(body): Body<CreateSystem>) -> ApiResult {
    let me = auth.effective.clone();
    let t = me.tenant.clone();
    let def = SystemDef { id: body.id.clone(), owner: me.username.clone(), host: body.host, credential: body.credential };
    {
        let mut systems = state.systems.write();
        if systems.contains_key(&(t.clone(), def.id.clone())) {
            return Err(ApiError::new(StatusCode::CONFLICT, "SystemExists", format!("system {} exists", def.id)));
        }
        systems.insert((t.clone(), def.id.clone()), def.clone());
    }
    let role = format!("{}-owner", def.id);
    let calls = [
        (Method::POST, "/v3/security/roles".to_string(), json!({ "name": role, "description": format!("owner of {}", def.id) })),
        (Method::POST, format!("/v3/security/roles/{role}/permissions"), json!({ "permission": format!("systems:{t}:*:{}", def.id) })),
        (Method::POST, format!("/v3/security/roles/{role}/permissions"), json!({ "permission": format!("files:{t}:*:{}:/", def.id) })),
        (Method::POST, format!("/v3/security/users/{}/roles", me.username), json!({ "role": role })),
    ];
    if let Err(resp) = sk_calls(&state.client, &me, &calls).await {
        state.systems.write().remove(&(t, def.id));
        return Ok(relay(&resp));
    }
    Ok(ok("system created", def))
}

#[derive(Deserialize)]
struct Grant {
    user: String,
    privileges: Vec<String>,
    /// When set, grants file access below this path instead of system access.
    #[serde(default)]
    path: Option<String>,
}

async fn grant(State(state): State<SystemsState>, auth: Authenticated, Path(id): Path<String>, Body(body): Body<Grant>) -> ApiResult {
    let def = lookup(&state, auth.tenant(), &id)?;
    owner_only(&def, &auth)?;
    let t = auth.tenant().to_string();
    let privs = body.privileges.iter().map(|p| privilege_name(p)).collect::<Result<BTreeSet<_>, _>>()?;
    if privs.is_empty() {
        return Err(ApiError::bad_request("no privileges"));
    }
    let listed = privs.iter().copied().collect::<Vec<_>>().join(",");
    let role = format!("{id}.{}", body.user);
    let mut perms = Vec::new();
    match &body.path {
        Some(path) => perms.push(format!("files:{t}:{listed}:{id}:{path}")),
        None => {
            perms.push(format!("systems:{t}:{listed}:{id}"));
            let file_privs: Vec<&str> = privs.iter().copied().filter(|p| *p != "EXECUTE").collect();
            if !file_privs.is_empty() {
                perms.push(format!("files:{t}:{}:{id}:/", file_privs.join(",")));
            }
        }
    }
    let mut calls = vec![(Method::POST, "/v3/security/roles".to_string(), json!({ "name": role, "description": format!("{} on {id}", body.user) }))];
    calls.extend(perms.iter().map(|p| (Method::POST, format!("/v3/security/roles/{role}/permissions"), json!({ "permission": p }))));
    calls.push((Method::POST, format!("/v3/security/users/{}/roles", body.user), json!({ "role": role })));
    if let Err(resp) = sk_calls(&state.client, &auth.effective, &calls).await {
        return Ok(relay(&resp));
    }
    Ok(ok("granted", json!({ "role": role, "permissions": perms })))
}

async fn revoke(State(state): State<SystemsState>, auth: Authenticated, Path((id, user)): Path<(String, String)>) -> ApiResult {
    let def = lookup(&state, auth.tenant(), &id)?;
    owner_only(&def, &auth)?;
    let path = format!("/v3/security/users/{user}/roles/{id}.{user}");
    let resp = state.client.call(Method::DELETE, &path, &auth.effective, None, None).await;
    if !resp.ok() {
        return Ok(relay(&resp));
    }
    Ok(ok("revoked", resp.env.result))
}

#[derive(Deserialize)]
struct ShareSystem {
    user: String,
    privileges: Vec<String>,
}

async fn share_calls(state: &SystemsState, auth: &Authenticated, id: &str, body: &ShareSystem, method: Method) -> ApiResult {
    let def = lookup(state, auth.tenant(), id)?;
    owner_only(&def, auth)?;
    for p in &body.privileges {
        let grant = json!({ "grantee": body.user, "resource_type": "system", "resource_id": id, "privilege": privilege_name(p)? });
        let resp = state.client.call(method.clone(), "/v3/security/shares", &auth.effective, None, Some(&grant)).await;
        if !resp.ok() {
            return Ok(relay(&resp));
        }
    }
    Ok(ok("shares updated", json!({ "system": id, "user": body.user, "privileges": body.privileges })))
}

async fn share(State(state): State<SystemsState>, auth: Authenticated, Path(id): Path<String>, Body(body): Body<ShareSystem>) -> ApiResult {
    share_calls(&state, &auth, &id, &body, Method::POST).await
}

async fn unshare(State(state): State<SystemsState>, auth: Authenticated, Path(id): Path<String>, Body(body): Body<ShareSystem>) -> ApiResult {
    share_calls(&state, &auth, &id, &body, Method::DELETE).await
}

async fn set_credential(
    State(state): State<SystemsState>,
    auth: Authenticated,
    Path((id, user)): Path<(String, String)>,
    Body(cred): Body<Credential>,
) -> ApiResult {
    let def = lookup(&state, auth.tenant(), &id)?;
    if auth.effective.username != user && def.owner != auth.effective.username {
        return Err(ApiError::forbidden("NotAuthorized", "users store only their own credentials"));
    }
    let body = json!({ "data": serde_json::to_string(&cred).expect("credential serializes") });
    let path = format!("/v3/security/vault/secret/system-credential/{id}/{user}");
    let resp = state.client.call(Method::POST, &path, &auth.effective, None, Some(&body)).await;
    if !resp.ok() {
        return Ok(relay(&resp));
    }
    Ok(ok("credential stored", json!({ "system": id, "user": user, "login": cred.login })))
}

#[derive(Deserialize)]
struct FetchQuery {
    #[serde(default)]
    privilege: Option<String>,
}

/// Why access was granted, or the response that refused it.
type Decision = Result<String, axum::response::Response>;

async fn sac_decision(state: &SystemsState, auth: &Authenticated, sac: &SacHeaders, def: &SystemDef, privilege: &str) -> Option<Decision> {
    use axum::response::IntoResponse;
    let me = &auth.effective;
    let app = state.client.call(Method::GET, &format!("/v3/apps/{}", sac.app_id), me, None, None).await;
    if !app.ok() {
        return Some(Err(relay(&app)));
    }
    let view: AppView = match serde_json::from_value(app.env.result.clone()) {
        Ok(v) => v,
        Err(e) => return Some(Err(ApiError::new(StatusCode::BAD_GATEWAY, "BadApp", e.to_string()).into_response())),
    };
    if view.sac_grantor.as_deref() != Some(sac.grantor.as_str()) {
        return Some(Err(ApiError::forbidden("SacInvalid", format!("{} is not shared with {me} by {}", sac.app_id, sac.grantor)).into_response()));
    }
    let descriptor = SacDescriptor {
        grantor: sac.grantor.clone(),
        app_id: sac.app_id.clone(),
        tenant: me.tenant.clone(),
        shared_resources: view.app.systems().iter().map(|s| Resource::system(s)).collect(),
    };
    let body = json!({ "sac": descriptor, "username": me.username, "resource": Resource::system(&def.id), "privilege": privilege });
    let resp = state.client.call(Method::POST, "/v3/security/shares/sac/resolve", me, None, Some(&body)).await;
    if resp.code() == Some("ResourceNotInSac") {
        return None;
    }
    if !resp.ok() {
        return Some(Err(relay(&resp)));
    }
    let outcome: Option<AccessOutcome> = serde_json::from_value(resp.env.result["outcome"].clone()).ok();
    Some(match outcome {
        Some(AccessOutcome::Denied) | None => Err(ApiError::forbidden("SacDenied", format!("neither {} nor {me} may use {}", sac.grantor, def.id)).into_response()),
        Some(o) => Ok(format!("sac:{o:?}")),
    })
}

async fn standard_decision(state: &SystemsState, auth: &Authenticated, def: &SystemDef, privilege: &str) -> Decision {
    use axum::response::IntoResponse;
    let me = &auth.effective;
    let shared = format!("/v3/security/shares/isShared?resource_type=system&resource_id={}&username={}&privilege={privilege}", def.id, me.username);
    let resp = state.client.call(Method::GET, &shared, me, None, None).await;
    if !resp.ok() {
        return Err(relay(&resp));
    }
    if resp.env.result["shared"].as_bool() == Some(true) {
        return Ok("share".into());
    }
    let body = json!({ "username": me.username, "permission": format!("systems:{}:{privilege}:{}", me.tenant, def.id) });
    let resp = state.client.call(Method::POST, "/v3/security/perms/isPermitted", me, None, Some(&body)).await;
    if !resp.ok() {
        return Err(relay(&resp));
    }
    if resp.env.result.as_bool() == Some(true) {
        Ok("permission".into())
    } else {
        Err(ApiError::forbidden("NotAuthorized", format!("{me} has no {privilege} access to {}", def.id)).into_response())
    }
}

async fn resolve_credential(state: &SystemsState, auth: &Authenticated, def: &SystemDef) -> Result<Credential, axum::response::Response> {
    use axum::response::IntoResponse;
    let me = &auth.effective;
    let login_owner = def.login_owner(&me.username);
    let path = format!("/v3/security/vault/secret/system-credential/{}/{login_owner}", def.id);
    let resp = state.client.call(Method::GET, &path, me, None, None).await;
    if resp.status == 404 {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "NoCredentials", format!("{login_owner} has no credentials on {}", def.id)).into_response());
    }
    if !resp.ok() {
        return Err(relay(&resp));
    }
    let cred: Credential = resp.env.result["data"]
        .as_str()
        .and_then(|d| serde_json::from_str(d).ok())
        .ok_or_else(|| ApiError::new(StatusCode::BAD_GATEWAY, "BadCredential", "stored credential is unreadable").into_response())?;
    state.transcript.push(Event::Credential { system: def.id.clone(), user: me.username.clone(), login: cred.login.clone() });
    Ok(cred)
}

async fn fetch(State(state): State<SystemsState>, auth: Authenticated, Path(id): Path<String>, Params(q): Params<FetchQuery>) -> ApiResult {
    let def = lookup(&state, auth.tenant(), &id)?;
    let privilege = privilege_name(q.privilege.as_deref().unwrap_or("READ"))?;
    let me = auth.effective.clone();
    let decision = if def.owner == me.username {
        Ok("owner".to_string())
    } else {
        let sac = match &auth.sac {
            Some(sac) => sac_decision(&state, &auth, sac, &def, privilege).await,
            None => None,
        };
        match sac {
            Some(d) => d,
            None => standard_decision(&state, &auth, &def, privilege).await,
        }
    };
    let via = match &decision {
        Ok(v) => v.clone(),
        Err(r) => format!("denied:{}", r.status().as_u16()),
    };
    state.transcript.push(Event::Decision { system: id.clone(), user: me.username.clone(), privilege: privilege.into(), via: via.clone() });
    if let Err(resp) = decision {
        return Ok(resp);
    }
    let credential = if auth.is_service() {
        match resolve_credential(&state, &auth, &def).await {
            Ok(c) => Some(c),
            Err(resp) => return Ok(resp),
        }
    } else {
        None
    };
    Ok(ok("system", Resolved { system: def, via, credential }))
}
