//! Security Kernel routes: roles, permissions, shares and the vault.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use fedsec_core::rbac::{RbacError, RbacService, TENANT_ADMIN_ROLE};
use fedsec_core::registry::REFRESH_INTERVAL_SECS;
use fedsec_core::secrets::{signing_key_path, SecretCategory, SecretPath, SecretValue, SecretsError, SecretsStore};
use fedsec_core::sharing::{
    Grantee, Privilege, Resource, ResourceType, SacDescriptor, ShareContext, ShareError, ShareGrant, ShareStore,
};
use fedsec_core::{Caller, UserIdentity};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::auth::{Authenticated, Gate, HasGate};
use crate::envelope::{ok, ApiEnvelope, ApiError, ApiResult, Body, Params};

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("required secret {0} is missing; run sk-admin bootstrap")]
    MissingSecret(String),
    #[error(transparent)]
    Store(#[from] SecretsError),
}

#[derive(Clone)]
pub struct SkState {
    pub gate: Gate,
    pub rbac: Arc<RbacService>,
    pub secrets: Arc<SecretsStore>,
    pub shares: Arc<ShareStore>,
}

impl HasGate for SkState {
    fn gate(&self) -> &Gate {
        &self.gate
    }
}

impl SkState {
    /// Refuses to start until the site's admin signing key exists.
    pub fn new(gate: Gate, rbac: Arc<RbacService>, secrets: Arc<SecretsStore>, shares: Arc<ShareStore>) -> Result<Self, StartupError> {
        let key = signing_key_path(secrets.admin_tenant());
        if !secrets.exists(&key, &Caller::Bootstrap)? {
            return Err(StartupError::MissingSecret(key.key()));
        }
        Ok(SkState { gate, rbac, secrets, shares })
    }

    pub fn share_context(&self) -> RbacShareContext<'_> {
        RbacShareContext(&self.rbac)
    }
}

/// Permission string standing for `privilege` on `resource`.
pub fn permission_for(tenant: &str, resource: &Resource, privilege: Privilege) -> String {
    let p = match privilege {
        Privilege::Read => "READ",
        Privilege::Execute => "EXECUTE",
        Privilege::Modify => "MODIFY",
    };
    match (resource.resource_type, &resource.path) {
        (ResourceType::System, _) => format!("systems:{tenant}:{p}:{}", resource.resource_id),
        (ResourceType::Path, Some(path)) => format!("files:{tenant}:{p}:{}:{path}", resource.resource_id),
        (ResourceType::Path, None) => format!("files:{tenant}:{p}:{}:/", resource.resource_id),
        (ResourceType::Application, _) => format!("apps:{tenant}:{p}:{}", resource.resource_id),
    }
}

/// Access facts from role-attached permissions.
pub struct RbacShareContext<'a>(pub &'a RbacService);

impl ShareContext for RbacShareContext<'_> {
    fn has_access(&self, tenant: &str, user: &str, resource: &Resource, privilege: Privilege) -> bool {
        let Ok(id) = UserIdentity::try_new(user, tenant) else {
            return false;
        };
        self.0.is_permitted(&id, &permission_for(tenant, resource, privilege)).unwrap_or(false)
    }

    fn is_tenant_admin(&self, tenant: &str, user: &str) -> bool {
        UserIdentity::try_new(user, tenant).is_ok_and(|id| self.0.has_role(&id, TENANT_ADMIN_ROLE).unwrap_or(false))
    }
}

impl From<RbacError> for ApiError {
    fn from(e: RbacError) -> Self {
        let (status, code) = match &e {
            RbacError::RoleExists(_) => (StatusCode::CONFLICT, "RoleExists"),
            RbacError::UnknownRole { .. } => (StatusCode::NOT_FOUND, "UnknownRole"),
            RbacError::CycleDetected { .. } => (StatusCode::CONFLICT, "CycleDetected"),
            RbacError::NotAuthorized(_) => (StatusCode::FORBIDDEN, "NotAuthorized"),
            RbacError::InvalidName(_) => (StatusCode::BAD_REQUEST, "InvalidName"),
            RbacError::Permission(_) => (StatusCode::BAD_REQUEST, "InvalidPermission"),
            RbacError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Storage"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<SecretsError> for ApiError {
    fn from(e: SecretsError) -> Self {
        let (status, code) = match &e {
            SecretsError::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            SecretsError::NotAuthorized(_) => (StatusCode::FORBIDDEN, "NotAuthorized"),
            SecretsError::QuotaExceeded(_) => (StatusCode::PAYLOAD_TOO_LARGE, "QuotaExceeded"),
            SecretsError::Unavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "Unavailable"),
            SecretsError::InvalidPath(_) => (StatusCode::BAD_REQUEST, "InvalidPath"),
            SecretsError::Integrity(_) | SecretsError::Archive(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Integrity"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl From<ShareError> for ApiError {
    fn from(e: ShareError) -> Self {
        let (status, code) = match &e {
            ShareError::NotAuthorized(_) => (StatusCode::FORBIDDEN, "NotAuthorized"),
            ShareError::ShareTimeCheckFailed(_) => (StatusCode::FORBIDDEN, "ShareTimeCheckFailed"),
            ShareError::NotFound => (StatusCode::NOT_FOUND, "NotFound"),
            ShareError::Invalid(_) => (StatusCode::BAD_REQUEST, "InvalidShare"),
            ShareError::ResourceNotInSac(_) => (StatusCode::CONFLICT, "ResourceNotInSac"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

/// Requests operate in the effective user's tenant; a body may restate it
/// but not change it.
fn operating_tenant(auth: &Authenticated, requested: Option<&str>) -> Result<String, ApiError> {
    match requested {
        Some(t) if t != auth.tenant() => Err(ApiError::forbidden("TenantMismatch", format!("request operates in {}, not {t}", auth.tenant()))),
        _ => Ok(auth.tenant().to_string()),
    }
}

/// Services and tenant admins may inspect anyone in the tenant; users only
/// themselves.
fn may_inspect(state: &SkState, auth: &Authenticated, username: &str) -> Result<(), ApiError> {
    if auth.is_service() || auth.effective.username == username || state.rbac.has_role(&auth.effective, TENANT_ADMIN_ROLE).unwrap_or(false) {
        Ok(())
    } else {
        Err(ApiError::forbidden("NotAuthorized", format!("{} may not inspect {username}", auth.effective)))
    }
}

fn user_in(tenant: &str, username: &str) -> Result<UserIdentity, ApiError> {
    UserIdentity::try_new(username, tenant).map_err(|e| ApiError::bad_request(e.to_string()))
}

pub fn router(state: SkState) -> Router {
    Router::new()
        .route("/v3/security/healthcheck", get(health))
        .route("/v3/security/whoami", get(whoami))
        .route("/v3/security/roles", get(list_roles).post(create_role))
        .route("/v3/security/roles/hasRole", get(has_role))
        .route("/v3/security/roles/{name}", get(get_role).put(update_role).delete(delete_role))
        .route("/v3/security/roles/{name}/children", post(add_child))
        .route("/v3/security/roles/{name}/children/{child}", delete(remove_child))
        .route("/v3/security/roles/{name}/permissions", get(list_permissions).post(add_permission).delete(remove_permission))
        .route("/v3/security/users/{user}/roles", get(user_roles).post(grant_role))
        .route("/v3/security/users/{user}/roles/{role}", delete(revoke_role))
        .route("/v3/security/perms/isPermitted", post(is_permitted))
        .route("/v3/security/shares", get(list_shares).post(create_share).delete(revoke_share))
        .route("/v3/security/shares/isShared", get(is_shared))
        .route("/v3/security/shares/sac/resolve", post(resolve_sac))
        .route("/v3/security/vault/secret/{category}/{owner}/{name}", get(read_secret).post(write_secret))
        .route("/v3/security/vault/validateServicePassword", post(validate_password))
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthReport {
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    pub registry_age_secs: u64,
}

async fn health(State(state): State<SkState>) -> impl IntoResponse {
    let now = state.gate.clock.now();
    let age = now.saturating_sub(state.gate.snapshot().loaded_at());
    let (status, report) = match state.secrets.ping() {
        Err(e) => (
            StatusCode::SERVICE_UNAVAILABLE,
            ApiEnvelope {
                status: "error".into(),
                message: e.to_string(),
                result: json!(HealthReport { status: "not-ready".into(), component: Some("secrets-store".into()), registry_age_secs: age }),
                version: crate::API_VERSION.into(),
            },
        ),
        Ok(()) if age > 2 * REFRESH_INTERVAL_SECS => (
            StatusCode::OK,
            ApiEnvelope::success(
                "registry snapshot is stale",
                HealthReport { status: "degraded".into(), component: Some("tenant-registry".into()), registry_age_secs: age },
            ),
        ),
        Ok(()) => (StatusCode::OK, ApiEnvelope::success("ready", HealthReport { status: "ready".into(), component: None, registry_age_secs: age })),
    };
    (status, Json(report))
}

async fn whoami(auth: Authenticated) -> ApiResult {
    Ok(ok(
        "identity",
        json!({
            "username": auth.effective.username,
            "tenant": auth.effective.tenant,
            "account_type": auth.claims.account_type,
            "service": auth.service_name(),
        }),
    ))
}

#[derive(Deserialize)]
struct CreateRole {
    name: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    tenant: Option<String>,
}

async fn list_roles(State(state): State<SkState>, auth: Authenticated) -> ApiResult {
    Ok(ok("roles", state.rbac.role_names(auth.tenant())?))
}

async fn create_role(State(state): State<SkState>, auth: Authenticated, Body(body): Body<CreateRole>) -> ApiResult {
    let tenant = operating_tenant(&auth, body.tenant.as_deref())?;
    let role = state.rbac.create_role(&auth.caller(), &tenant, &body.name, &auth.effective.username, &body.description)?;
    Ok(ok("role created", role))
}

async fn get_role(State(state): State<SkState>, auth: Authenticated, Path(name): Path<String>) -> ApiResult {
    Ok(ok("role", state.rbac.role(auth.tenant(), &name)?))
}

#[derive(Deserialize)]
struct UpdateRole {
    description: String,
}

async fn update_role(State(state): State<SkState>, auth: Authenticated, Path(name): Path<String>, Body(body): Body<UpdateRole>) -> ApiResult {
    Ok(ok("role updated", state.rbac.update_role_description(&auth.caller(), auth.tenant(), &name, &body.description)?))
}

async fn delete_role(State(state): State<SkState>, auth: Authenticated, Path(name): Path<String>) -> ApiResult {
    state.rbac.delete_role(&auth.caller(), auth.tenant(), &name)?;
    Ok(ok("role deleted", ()))
}

#[derive(Deserialize)]
struct ChildBody {
    child: String,
}

async fn add_child(State(state): State<SkState>, auth: Authenticated, Path(name): Path<String>, Body(body): Body<ChildBody>) -> ApiResult {
    state.rbac.add_child_role(&auth.caller(), auth.tenant(), &name, &body.child)?;
    Ok(ok("child added", state.rbac.role(auth.tenant(), &name)?))
}

async fn remove_child(State(state): State<SkState>, auth: Authenticated, Path((name, child)): Path<(String, String)>) -> ApiResult {
    let removed = state.rbac.remove_child_role(&auth.caller(), auth.tenant(), &name, &child)?;
    Ok(ok("child removed", json!({ "removed": removed })))
}

#[derive(Deserialize)]
struct PermissionBody {
    permission: String,
}

async fn list_permissions(State(state): State<SkState>, auth: Authenticated, Path(name): Path<String>) -> ApiResult {
    Ok(ok("permissions", state.rbac.role_permissions(auth.tenant(), &name)?))
}

async fn add_permission(State(state): State<SkState>, auth: Authenticated, Path(name): Path<String>, Body(body): Body<PermissionBody>) -> ApiResult {
    let canonical = state.rbac.grant_permission(&auth.caller(), auth.tenant(), &name, &body.permission)?;
    Ok(ok("permission granted", json!({ "permission": canonical })))
}

async fn remove_permission(State(state): State<SkState>, auth: Authenticated, Path(name): Path<String>, Body(body): Body<PermissionBody>) -> ApiResult {
    let removed = state.rbac.revoke_permission(&auth.caller(), auth.tenant(), &name, &body.permission)?;
    Ok(ok("permission revoked", json!({ "removed": removed })))
}

#[derive(Deserialize)]
struct GrantBody {
    role: String,
}

async fn user_roles(State(state): State<SkState>, auth: Authenticated, Path(user): Path<String>) -> ApiResult {
    may_inspect(&state, &auth, &user)?;
    Ok(ok("effective roles", state.rbac.effective_roles(&user_in(auth.tenant(), &user)?)?))
}

async fn grant_role(State(state): State<SkState>, auth: Authenticated, Path(user): Path<String>, Body(body): Body<GrantBody>) -> ApiResult {
    let id = user_in(auth.tenant(), &user)?;
    Ok(ok("role granted", state.rbac.grant_role(&auth.caller(), &id, &body.role)?))
}

async fn revoke_role(State(state): State<SkState>, auth: Authenticated, Path((user, role)): Path<(String, String)>) -> ApiResult {
    let id = user_in(auth.tenant(), &user)?;
    let removed = state.rbac.revoke_role(&auth.caller(), &id, &role)?;
    Ok(ok("role revoked", json!({ "removed": removed })))
}

#[derive(Deserialize)]
struct HasRoleQuery {
    #[serde(default)]
    tenant: Option<String>,
    username: String,
    role: String,
}

async fn has_role(State(state): State<SkState>, auth: Authenticated, Params(q): Params<HasRoleQuery>) -> ApiResult {
    let tenant = operating_tenant(&auth, q.tenant.as_deref())?;
    may_inspect(&state, &auth, &q.username)?;
    let held = match state.rbac.has_role(&user_in(&tenant, &q.username)?, &q.role) {
        Err(RbacError::UnknownRole { .. }) => false,
        other => other?,
    };
    Ok(ok("hasRole", held))
}

#[derive(Deserialize)]
struct IsPermittedBody {
    #[serde(default)]
    tenant: Option<String>,
    username: String,
    permission: String,
}

async fn is_permitted(State(state): State<SkState>, auth: Authenticated, Body(body): Body<IsPermittedBody>) -> ApiResult {
    let tenant = operating_tenant(&auth, body.tenant.as_deref())?;
    may_inspect(&state, &auth, &body.username)?;
    Ok(ok("isPermitted", state.rbac.is_permitted(&user_in(&tenant, &body.username)?, &body.permission)?))
}

#[derive(Deserialize)]
struct ShareBody {
    grantee: String,
    resource_type: ResourceType,
    resource_id: String,
    privilege: Privilege,
    /// Systems an application share refers to, checked at share time.
    #[serde(default)]
    referenced_systems: Vec<String>,
    #[serde(default)]
    grantor: Option<String>,
}

impl ShareBody {
    fn grant(&self, tenant: &str, grantor: &str) -> Result<ShareGrant, ApiError> {
        Ok(ShareGrant {
            tenant: tenant.into(),
            grantor: grantor.into(),
            grantee: self.grantee.parse::<Grantee>()?,
            resource_type: self.resource_type,
            resource_id: self.resource_id.clone(),
            privilege: self.privilege,
        })
    }
}

async fn list_shares(State(state): State<SkState>, auth: Authenticated) -> ApiResult {
    let all = state.shares.list(auth.tenant());
    let me = &auth.effective.username;
    let visible: Vec<ShareGrant> = if auth.is_service() || state.share_context().is_tenant_admin(auth.tenant(), me) {
        all
    } else {
        all.into_iter()
            .filter(|g| &g.grantor == me || g.grantee == Grantee::User(me.clone()) || g.grantee == Grantee::PublicTenant)
            .collect()
    };
    Ok(ok("shares", visible))
}

async fn create_share(State(state): State<SkState>, auth: Authenticated, Body(body): Body<ShareBody>) -> ApiResult {
    let grant = body.grant(auth.tenant(), &auth.effective.username)?;
    state.shares.create_share(grant.clone(), &auth.effective, &body.referenced_systems, &state.share_context())?;
    Ok(ok("share created", grant))
}

async fn revoke_share(State(state): State<SkState>, auth: Authenticated, Body(body): Body<ShareBody>) -> ApiResult {
    let grantor = body.grantor.clone().unwrap_or_else(|| auth.effective.username.clone());
    let grant = body.grant(auth.tenant(), &grantor)?;
    state.shares.revoke_share(&grant, &auth.effective, &state.share_context())?;
    Ok(ok("share revoked", grant))
}

#[derive(Deserialize)]
struct IsSharedQuery {
    resource_type: ResourceType,
    resource_id: String,
    username: String,
    privilege: Privilege,
}

async fn is_shared(State(state): State<SkState>, auth: Authenticated, Params(q): Params<IsSharedQuery>) -> ApiResult {
    may_inspect(&state, &auth, &q.username)?;
    Ok(ok("isShared", state.shares.is_shared_with(auth.tenant(), q.resource_type, &q.resource_id, &q.username, q.privilege)))
}

#[derive(Deserialize)]
struct SacResolveBody {
    sac: SacDescriptor,
    username: String,
    resource: Resource,
    privilege: Privilege,
}

async fn resolve_sac(State(state): State<SkState>, auth: Authenticated, Body(body): Body<SacResolveBody>) -> ApiResult {
    if !auth.is_service() {
        return Err(ApiError::forbidden("NotAuthorized", "only services resolve shared application contexts"));
    }
    operating_tenant(&auth, Some(&body.sac.tenant))?;
    let outcome = state.shares.resolve_sac_access(&body.sac, &body.username, &body.resource, body.privilege, &state.share_context())?;
    Ok(ok("sac access", json!({ "outcome": outcome })))
}

#[derive(Deserialize)]
struct SecretQuery {
    #[serde(default)]
    version: Option<u32>,
}

#[derive(Deserialize)]
struct SecretWrite {
    data: String,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

fn secret_path(auth: &Authenticated, category: &str, owner: &str, name: &str) -> Result<SecretPath, ApiError> {
    let category: SecretCategory = category.parse().map_err(|e: SecretsError| ApiError::bad_request(e.to_string()))?;
    Ok(SecretPath::new(auth.tenant(), category, owner, name))
}

async fn read_secret(
    State(state): State<SkState>,
    auth: Authenticated,
    Path((category, owner, name)): Path<(String, String, String)>,
    Params(q): Params<SecretQuery>,
) -> ApiResult {
    let path = secret_path(&auth, &category, &owner, &name)?;
    let caller = auth.caller();
    let version = match q.version {
        Some(v) => v,
        None => state.secrets.latest_version(&path, &caller)?.ok_or_else(|| SecretsError::NotFound(path.key()))?,
    };
    let value: SecretValue = state.secrets.read_secret(&path.clone().at_version(version), &caller)?;
    Ok(ok(
        "secret",
        json!({
            "version": version,
            "data": String::from_utf8_lossy(&value.payload),
            "metadata": value.metadata,
            "created_at": value.created_at,
        }),
    ))
}

async fn write_secret(
    State(state): State<SkState>,
    auth: Authenticated,
    Path((category, owner, name)): Path<(String, String, String)>,
    Body(body): Body<SecretWrite>,
) -> ApiResult {
    let path = secret_path(&auth, &category, &owner, &name)?;
    let mut value = SecretValue::new(body.data.into_bytes());
    value.metadata = body.metadata;
    let version = state.secrets.write_secret(&path, value, &auth.caller())?;
    Ok(ok("secret written", json!({ "version": version })))
}

#[derive(Deserialize)]
struct PasswordCheck {
    service: String,
    site: String,
    password: String,
}

async fn validate_password(State(state): State<SkState>, auth: Authenticated, Body(body): Body<PasswordCheck>) -> ApiResult {
    let valid = state.secrets.validate_service_password(&body.service, &body.site, body.password.as_bytes(), &auth.caller())?;
    Ok(ok("password checked", valid))
}
