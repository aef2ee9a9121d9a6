//! Outbound HTTP: tenant host resolution and service-to-service calls.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::http::StatusCode;
use fedsec_core::gatekeeper::{HEADER_OBO_TENANT, HEADER_OBO_USER, HEADER_TOKEN};
use fedsec_core::registry::{host_of, RegistryHandle};
use fedsec_core::router::service_from_path;
use fedsec_core::sharing::{HEADER_SAC_APP, HEADER_SAC_GRANTOR};
use fedsec_core::token::TokenPair;
use fedsec_core::UserIdentity;
use parking_lot::RwLock;
use reqwest::Method;
use serde_json::{json, Value};
use sk_service::auth::SacHeaders;
use sk_service::{ApiEnvelope, API_VERSION};

use crate::proxy::HOPS_HEADER;
use crate::transcript::{Event, Transcript};

/// Maps tenant hosts to the router listening for them.
#[derive(Debug, Clone, Default)]
pub struct Dns(Arc<RwLock<BTreeMap<String, String>>>);

impl Dns {
    pub fn insert(&self, host: &str, router_url: &str) {
        self.0.write().insert(host.to_ascii_lowercase(), router_url.to_string());
    }

    pub fn resolve(&self, host: &str) -> Option<String> {
        self.0.read().get(&host.to_ascii_lowercase()).cloned()
    }
}

#[derive(Debug, Clone)]
pub struct Response {
    pub status: u16,
    pub env: ApiEnvelope,
    /// Sites the request passed through, as recorded by the routers.
    pub hops: Option<String>,
}

impl Response {
    pub fn ok(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn code(&self) -> Option<&str> {
        self.env.code()
    }

    fn local_error(status: StatusCode, code: &str, message: String) -> Self {
        Response {
            status: status.as_u16(),
            env: ApiEnvelope { status: "error".into(), message, result: json!({ "code": code }), version: API_VERSION.into() },
            hops: None,
        }
    }
}

/// Everything about one outbound request except where it goes.
#[derive(Debug, Clone, Default)]
pub struct Outbound<'a> {
    pub token: Option<&'a str>,
    pub obo: Option<&'a UserIdentity>,
    pub sac: Option<&'a SacHeaders>,
    pub body: Option<&'a Value>,
    pub extra_headers: Vec<(&'a str, &'a str)>,
}

/// Sends to `base_url` with the `Host` header set to `host` when given.
pub async fn send(http: &reqwest::Client, base_url: &str, host: Option<&str>, method: Method, path: &str, out: Outbound<'_>) -> Response {
    let mut rb = http.request(method, format!("{base_url}{path}"));
    if let Some(h) = host {
        rb = rb.header(reqwest::header::HOST, h);
    }
    if let Some(t) = out.token {
        rb = rb.header(HEADER_TOKEN, t);
    }
    if let Some(id) = out.obo {
        rb = rb.header(HEADER_OBO_USER, &id.username).header(HEADER_OBO_TENANT, &id.tenant);
    }
    if let Some(sac) = out.sac {
        rb = rb.header(HEADER_SAC_GRANTOR, &sac.grantor).header(HEADER_SAC_APP, &sac.app_id);
    }
    for (k, v) in out.extra_headers {
        rb = rb.header(k, v);
    }
    if let Some(b) = out.body {
        rb = rb.json(b);
    }
    let resp = match rb.send().await {
        Ok(r) => r,
        Err(e) => return Response::local_error(StatusCode::BAD_GATEWAY, "Unreachable", e.to_string()),
    };
    let status = resp.status().as_u16();
    let hops = resp.headers().get(HOPS_HEADER).and_then(|v| v.to_str().ok()).map(String::from);
    let text = resp.text().await.unwrap_or_default();
    match serde_json::from_str::<ApiEnvelope>(&text) {
        Ok(env) => Response { status, env, hops },
        Err(_) => Response { hops, ..Response::local_error(StatusCode::BAD_GATEWAY, "NotAnEnvelope", text) },
    }
}

/// A service's outbound side: its service tokens, one per target site, and
/// tenant-host routing through the federation's routers.
pub struct ServiceClient {
    pub service: String,
    pub site: String,
    registry: Arc<RegistryHandle>,
    dns: Dns,
    http: reqwest::Client,
    tokens: RwLock<BTreeMap<String, String>>,
    transcript: Transcript,
}

impl ServiceClient {
    pub fn new(service: &str, site: &str, registry: Arc<RegistryHandle>, dns: Dns, transcript: Transcript) -> Self {
        ServiceClient {
            service: service.into(),
            site: site.into(),
            registry,
            dns,
            http: reqwest::Client::new(),
            tokens: RwLock::new(BTreeMap::new()),
            transcript,
        }
    }

    pub fn http(&self) -> &reqwest::Client {
        &self.http
    }

    pub fn install_tokens(&self, pairs: &[TokenPair]) {
        let mut tokens = self.tokens.write();
        for p in pairs {
            if let Some(site) = &p.target_site {
                tokens.insert(site.clone(), p.access_token.clone());
            }
        }
    }

    pub fn token_for(&self, site: &str) -> Option<String> {
        self.tokens.read().get(site).cloned()
    }

    /// Site that will serve `service` for `tenant`: the tenant's own site
    /// when it runs the service, the primary otherwise.
    pub fn serving_site(&self, service: &str, tenant: &str) -> Option<String> {
        let snap = self.registry.snapshot();
        let owner = snap.resolve_site_for_tenant(tenant).ok()?;
        Some(if owner.runs(service) { owner.site_id.clone() } else { snap.primary().site_id.clone() })
    }

    /// Calls another service on behalf of `obo`, routed through the router
    /// for `obo`'s tenant host.
    pub async fn call(&self, method: Method, path: &str, obo: &UserIdentity, sac: Option<&SacHeaders>, body: Option<&Value>) -> Response {
        let target = service_from_path(path).unwrap_or_default();
        let response = self.dispatch(method.clone(), path, &target, obo, sac, body).await;
        self.transcript.push(Event::Call {
            from: self.service.clone(),
            to: target,
            method: method.to_string(),
            path: path.to_string(),
            obo: Some(obo.subject()),
            sac: sac.map(|s| format!("{}/{}", s.grantor, s.app_id)),
            status: response.status,
        });
        if let Some(permission) = path.ends_with("/perms/isPermitted").then(|| body.and_then(|b| b["permission"].as_str())).flatten() {
            self.transcript.push(Event::PermissionCheck {
                from: self.service.clone(),
                user: obo.subject(),
                permission: permission.to_string(),
                granted: response.ok() && response.env.result.as_bool() == Some(true),
            });
        }
        response
    }

    async fn dispatch(&self, method: Method, path: &str, target: &str, obo: &UserIdentity, sac: Option<&SacHeaders>, body: Option<&Value>) -> Response {
        let snap = self.registry.snapshot();
        let host = snap.tenant(&obo.tenant).ok().and_then(|t| host_of(&t.base_url));
        let (Some(host), Some(site)) = (host, self.serving_site(target, &obo.tenant)) else {
            return Response::local_error(StatusCode::BAD_REQUEST, "UnknownTenant", format!("no route for tenant {}", obo.tenant));
        };
        let Some(router) = self.dns.resolve(&host) else {
            return Response::local_error(StatusCode::BAD_GATEWAY, "Unresolvable", format!("no router for {host}"));
        };
        let Some(token) = self.token_for(&site) else {
            return Response::local_error(StatusCode::UNAUTHORIZED, "NoServiceToken", format!("{} has no token for {site}", self.service));
        };
        let out = Outbound { token: Some(&token), obo: Some(obo), sac, body, extra_headers: vec![] };
        send(&self.http, &router, Some(&host), method, path, out).await
    }
}
