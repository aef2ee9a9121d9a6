#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::{Arc, OnceLock};

use fedsec_core::clock::{Clock, ManualClock};
use fedsec_core::rbac::RbacService;
use fedsec_core::registry::{RegistryDocument, RegistryHandle, SiteConfig, TenantRecord};
use fedsec_core::secrets::{signing_key_path, MasterKey, MemoryBackend, SecretValue, SecretsStore};
use fedsec_core::sharing::ShareStore;
use fedsec_core::token::{encode_jwt, generate_key, private_key_pem, public_key_pem, AccountType, ForgeSite, TokenClaims, TokenForge, TokenUse};
use fedsec_core::Caller;
use reqwest::Method;
use rsa::RsaPrivateKey;
use serde_json::Value;
use sk_service::adapters::{RbacRoles, StorePasswords};
use sk_service::{sk, tokens, ApiEnvelope, Gate, ServiceHandle, SkState, TokensState};

pub const START: u64 = 1_700_000_000;
pub const TENANTS: [&str; 4] = ["primary-admin", "tacc", "assoc1-admin", "tenant1"];

/// One key per tenant; generation is slow, so once per test binary.
pub fn keys() -> &'static [(String, RsaPrivateKey)] {
    static KEYS: OnceLock<Vec<(String, RsaPrivateKey)>> = OnceLock::new();
    KEYS.get_or_init(|| TENANTS.iter().map(|t| (t.to_string(), generate_key())).collect())
}

pub fn key(tenant: &str) -> &'static RsaPrivateKey {
    &keys().iter().find(|(t, _)| t == tenant).unwrap().1
}

fn site(id: &str, primary: bool, services: &[&str]) -> SiteConfig {
    SiteConfig {
        site_id: id.into(),
        is_primary: primary,
        admin_tenant: format!("{id}-admin"),
        services: services.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        base_host: format!("{id}.example.org"),
    }
}

pub fn document() -> RegistryDocument {
    let owner = |t: &str| if t.starts_with("assoc1") || t == "tenant1" { "assoc1" } else { "primary" };
    RegistryDocument {
        sites: vec![
            site("primary", true, &["tokens", "authenticator", "security-kernel", "tenants", "systems", "files", "jobs", "apps"]),
            site("assoc1", false, &["tokens", "authenticator", "security-kernel", "systems"]),
        ],
        tenants: TENANTS
            .iter()
            .map(|t| TenantRecord {
                tenant_id: t.to_string(),
                owning_site: owner(t).into(),
                base_url: format!("https://{t}.example.org"),
                public_key: public_key_pem(&key(t).to_public_key()),
                token_service_url: format!("https://{t}.example.org/v3/tokens"),
                is_admin_tenant: t.ends_with("-admin"),
            })
            .collect(),
        schemas: vec![],
    }
}

pub struct World {
    pub clock: Arc<ManualClock>,
    pub backend: Arc<MemoryBackend>,
    pub registry: Arc<RegistryHandle>,
    pub rbac: Arc<RbacService>,
    pub secrets: Arc<SecretsStore>,
    pub forge: Arc<TokenForge>,
    pub server: ServiceHandle,
    pub client: reqwest::Client,
}

/// Primary-site SK and Tokens on one listener. `tacc/admin` is tenant admin;
/// `authenticator` holds the token generator role in the admin tenant.
pub async fn primary() -> World {
    let clock = Arc::new(ManualClock::new(START));
    let dyn_clock: Arc<dyn Clock> = clock.clone();
    let registry = Arc::new(RegistryHandle::from_document(document(), START).unwrap());
    let backend = Arc::new(MemoryBackend::new());
    let secrets = Arc::new(SecretsStore::new("primary", "primary-admin", backend.clone(), MasterKey::from_bytes([7; 32])).with_clock(dyn_clock.clone()));
    for t in ["primary-admin", "tacc"] {
        secrets.add_site_tenant(t);
        secrets.write_secret(&signing_key_path(t), SecretValue::new(private_key_pem(key(t))), &Caller::Bootstrap).unwrap();
    }
    for svc in ["jobs", "systems"] {
        let path = fedsec_core::secrets::service_password_path("primary-admin", svc);
        secrets.write_secret(&path, SecretValue::new(format!("{svc}-password")), &Caller::Bootstrap).unwrap();
    }
    let rbac = Arc::new(RbacService::in_memory("primary-admin"));
    rbac.init_tenant("tacc", &["admin"]).unwrap();
    rbac.init_tenant("primary-admin", &[]).unwrap();
    rbac.grant_role(&Caller::Bootstrap, &fedsec_core::UserIdentity::new("authenticator", "primary-admin"), fedsec_core::rbac::TOKEN_GENERATOR_ROLE)
        .unwrap();

    let gate = |service: &str| Gate { service: service.into(), site: "primary".into(), registry: registry.clone(), clock: dyn_clock.clone() };
    let sk_state = SkState::new(gate("security-kernel"), rbac.clone(), secrets.clone(), Arc::new(ShareStore::new())).unwrap();
    let forge_site = ForgeSite {
        site_id: "primary".into(),
        admin_tenant: "primary-admin".into(),
        primary_site: "primary".into(),
        known_sites: ["primary", "assoc1"].iter().map(|s| s.to_string()).collect(),
        tokens_url: "https://primary-admin.example.org/v3/tokens".into(),
    };
    let forge = Arc::new(
        TokenForge::new(forge_site, Arc::new(StorePasswords { store: secrets.clone() }), Arc::new(RbacRoles(rbac.clone()))).with_clock(dyn_clock.clone()),
    );
    forge.install_tenant_key("primary-admin", key("primary-admin").clone());
    let app = sk::router(sk_state).merge(tokens::router(TokensState { gate: gate("tokens"), forge: forge.clone() }));
    let server = sk_service::spawn_local(app).await.unwrap();
    World { clock, backend, registry, rbac, secrets, forge, server, client: reqwest::Client::new() }
}

pub fn sign(sub: &str, tenant: &str, kind: AccountType, target: Option<&str>, key_of: &str, now: u64) -> String {
    let claims = TokenClaims {
        jti: format!("{sub}-{tenant}-{now}"),
        sub: format!("{sub}@{tenant}"),
        tenant_id: tenant.into(),
        account_type: kind,
        target_site: target.map(String::from),
        exp: now + 3600,
        iat: now,
        iss: format!("https://{tenant}.example.org/v3/tokens"),
        token_use: TokenUse::Access,
    };
    encode_jwt(&claims, key(key_of))
}

pub fn user(name: &str, tenant: &str) -> String {
    sign(name, tenant, AccountType::User, None, tenant, START)
}

pub fn service(name: &str, admin_tenant: &str, target: &str) -> String {
    sign(name, admin_tenant, AccountType::Service, Some(target), admin_tenant, START)
}

#[derive(Default, Clone)]
pub struct Req<'a> {
    pub token: Option<&'a str>,
    pub obo: Option<(&'a str, &'a str)>,
    pub headers: Vec<(&'a str, &'a str)>,
    pub body: Option<Value>,
}

impl World {
    pub async fn call(&self, method: Method, path: &str, req: Req<'_>) -> (u16, ApiEnvelope) {
        let mut rb = self.client.request(method, format!("{}{path}", self.server.base_url()));
        if let Some(t) = req.token {
            rb = rb.header("X-Tapis-Token", t);
        }
        if let Some((u, t)) = req.obo {
            rb = rb.header("X-Tapis-User", u).header("X-Tapis-Tenant", t);
        }
        for (k, v) in req.headers {
            rb = rb.header(k, v);
        }
        if let Some(b) = req.body {
            rb = rb.json(&b);
        }
        let resp = rb.send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        let env: ApiEnvelope = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{path}: not an envelope ({e}): {text}"));
        (status, env)
    }

    pub async fn get(&self, path: &str, token: &str) -> (u16, ApiEnvelope) {
        self.call(Method::GET, path, Req { token: Some(token), ..Default::default() }).await
    }

    pub async fn post(&self, path: &str, token: &str, body: Value) -> (u16, ApiEnvelope) {
        self.call(Method::POST, path, Req { token: Some(token), body: Some(body), ..Default::default() }).await
    }

    /// A primary-admin service token acting for `user@tenant`.
    pub async fn as_service(&self, method: Method, path: &str, svc: &str, obo: (&str, &str), body: Option<Value>) -> (u16, ApiEnvelope) {
        let tok = service(svc, "primary-admin", "primary");
        self.call(method, path, Req { token: Some(&tok), obo: Some(obo), body, ..Default::default() }).await
    }
}
