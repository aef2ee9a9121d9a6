//! Minimal Apps, Systems, Files, Jobs and Authenticator services.
//!
//! Each implements only what the shared-application walkthrough needs. All
//! inbound requests pass the gatekeeper; outbound calls go through the
//! federation's routers with the stub's own service tokens.

pub mod apps;
pub mod authenticator;
pub mod files;
pub mod jobs;
pub mod systems;

use std::collections::HashMap;
use std::sync::Arc;

use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use fedsec_core::clock::Clock;
use fedsec_core::registry::RegistryHandle;
use fedsec_core::router::service_from_path;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use sk_service::{ApiError, Gate};

use crate::client::{Dns, Response as ClientResponse, ServiceClient};
use crate::topology::Topology;
use crate::transcript::Transcript;

/// The services a stub can stand in for, in deployment order.
pub const STUB_SERVICES: [&str; 5] = ["authenticator", "apps", "systems", "files", "jobs"];

/// Identity provider behind the Authenticator: `(tenant, user)` to password.
#[derive(Debug, Clone, Default)]
pub struct Idp(Arc<RwLock<HashMap<(String, String), String>>>);

impl Idp {
    pub fn add(&self, tenant: &str, user: &str, password: &str) {
        self.0.write().insert((tenant.into(), user.into()), password.into());
    }

    pub fn check(&self, tenant: &str, user: &str, password: &str) -> bool {
        self.0.read().get(&(tenant.to_string(), user.to_string())).is_some_and(|p| p == password)
    }

    pub fn password(&self, tenant: &str, user: &str) -> Option<String> {
        self.0.read().get(&(tenant.to_string(), user.to_string())).cloned()
    }
}

/// What every stub on a site shares.
#[derive(Clone)]
pub struct SiteContext {
    pub site: String,
    pub registry: Arc<RegistryHandle>,
    pub clock: Arc<dyn Clock>,
    pub dns: Dns,
    pub transcript: Transcript,
    pub topology: Arc<Topology>,
    pub idp: Idp,
}

impl SiteContext {
    pub fn gate(&self, service: &str) -> Gate {
        Gate { service: service.into(), site: self.site.clone(), registry: self.registry.clone(), clock: self.clock.clone() }
    }

    pub fn client(&self, service: &str) -> Arc<ServiceClient> {
        Arc::new(ServiceClient::new(service, &self.site, self.registry.clone(), self.dns.clone(), self.transcript.clone()))
    }

    pub fn admin_tenant(&self) -> String {
        self.registry.snapshot().site(&self.site).map(|s| s.admin_tenant.clone()).unwrap_or_default()
    }
}

/// A file on a system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRef {
    pub system: String,
    pub path: String,
}

/// Routers for every stub service `services` names, plus their outbound
/// clients, which still need service tokens.
pub fn routers(ctx: &SiteContext, services: &[String]) -> (Router, Vec<Arc<ServiceClient>>) {
    let mut app = Router::new();
    let mut clients = Vec::new();
    for svc in STUB_SERVICES {
        if !services.iter().any(|s| s == svc) {
            continue;
        }
        let client = ctx.client(svc);
        let r = match svc {
            "authenticator" => authenticator::router(authenticator::AuthnState { ctx: ctx.clone(), client: client.clone() }),
            "apps" => apps::router(apps::AppsState::new(ctx, client.clone())),
            "systems" => systems::router(systems::SystemsState::new(ctx, client.clone())),
            "files" => files::router(files::FilesState::new(ctx, client.clone())),
            _ => jobs::router(jobs::JobsState::new(ctx, client.clone())),
        };
        app = app.merge(r);
        clients.push(client);
    }
    (app, clients)
}

/// Requests for services this listener does not carry still meet the
/// gatekeeper first, so a site that does not run a service answers with the
/// rule it breaks.
pub async fn unserved(ctx: SiteContext, headers: HeaderMap, uri: Uri) -> Response {
    let Some(service) = service_from_path(uri.path()) else {
        return ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint").into_response();
    };
    match ctx.gate(&service).authenticate(&headers) {
        Err(e) => e.into_response(),
        Ok(_) => ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint").into_response(),
    }
}

/// Passes a downstream error envelope back to our caller unchanged.
pub fn relay(resp: &ClientResponse) -> Response {
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::BAD_GATEWAY);
    (status, Json(resp.env.clone())).into_response()
}
