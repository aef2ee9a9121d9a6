//! Read-only Tenants API, served at the primary.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::get;
use axum::Router;
use fedsec_core::registry::RegistryHandle;

use crate::envelope::{ok, ApiError, ApiResult};

#[derive(Clone)]
pub struct TenantsState {
    pub registry: Arc<RegistryHandle>,
}

pub fn router(state: TenantsState) -> Router {
    Router::new()
        .route("/v3/tenants", get(list))
        .route("/v3/tenants/{id}", get(one))
        .route("/v3/sites", get(sites))
        .with_state(state)
}

async fn list(State(state): State<TenantsState>) -> ApiResult {
    let snap = state.registry.snapshot();
    Ok(ok("tenants", snap.tenants().collect::<Vec<_>>()))
}

async fn one(State(state): State<TenantsState>, Path(id): Path<String>) -> ApiResult {
    let snap = state.registry.snapshot();
    let t = snap.tenant(&id).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "UnknownTenant", e.to_string()))?;
    Ok(ok("tenant", t))
}

async fn sites(State(state): State<TenantsState>) -> ApiResult {
    let snap = state.registry.snapshot();
    Ok(ok("sites", snap.sites().collect::<Vec<_>>()))
}
