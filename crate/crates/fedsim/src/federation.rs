//! Standing up a federation from a topology.
//!
//! Every site is bootstrapped into its own in-memory store, associates send
//! their public keys to the primary, and the primary is started first so the
//! associates can pull the registry from its Tenants API.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{SocketAddr, TcpListener as StdListener};
use std::sync::Arc;

use axum::http::{HeaderMap, Uri};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fedsec_core::clock::{Clock, SystemClock};
use fedsec_core::rbac::{RbacService, TOKEN_GENERATOR_ROLE};
use fedsec_core::registry::{host_of, RegistryDocument, RegistryHandle, SiteConfig, TenantRecord};
use fedsec_core::router::SiteRouter;
use fedsec_core::secrets::{service_password_path, signing_key_path, MasterKey, MemoryBackend, SecretsStore};
use fedsec_core::sharing::ShareStore;
use fedsec_core::token::{private_key_from_pem, ForgeSite, TokenForge, TokenPair};
use fedsec_core::{Caller, UserIdentity};
use parking_lot::{Mutex, RwLock};
use reqwest::Method;
use serde::de::DeserializeOwned;
use serde_json::json;
use sk_admin::{
    check_deployment_order, exchange_associate_key, public_keys_for_exchange, render_registry, run_bootstrap, BootstrapConfig, DeployStep, SiteKind,
};
use sk_service::adapters::{RbacRoles, StorePasswords};
use sk_service::{sk, tenants, tokens, ApiEnvelope, Gate, SkState, TenantsState, TokensState};
use tokio::runtime::Runtime;

use crate::client::{send, Dns, Outbound, Response};
use crate::proxy::{self, ProxyState};
use crate::stubs::{self, Idp, SiteContext};
use crate::topology::Topology;
use crate::transcript::Transcript;
use crate::{FedsimError, Result};

const SITE_WORKERS: usize = 4;

/// One running site.
pub struct Site {
    pub id: String,
    pub config: SiteConfig,
    /// Listener carrying every service the site runs.
    pub services_url: String,
    /// Listener routing by tenant host.
    pub router_url: String,
    pub registry: Arc<RegistryHandle>,
    pub store: Arc<SecretsStore>,
    pub rbac: Arc<RbacService>,
    pub shares: Arc<ShareStore>,
    pub forge: Arc<TokenForge>,
    /// One-way delay to the primary, read on every forward.
    pub latency_ms: Arc<RwLock<f64>>,
    pub deploy_log: Vec<DeployStep>,
    runtime: Option<Runtime>,
}

impl Site {
    pub fn kind(&self) -> SiteKind {
        if self.config.is_primary {
            SiteKind::Primary
        } else {
            SiteKind::Associate
        }
    }
}

impl Drop for Site {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

pub struct Federation {
    pub topology: Arc<Topology>,
    /// Primary first, then associates in topology order.
    pub sites: Vec<Site>,
    pub dns: Dns,
    pub transcript: Transcript,
    pub idp: Idp,
    pub http: reqwest::Client,
}

fn startup(e: impl std::fmt::Display) -> FedsimError {
    FedsimError::Startup(e.to_string())
}

fn bind() -> Result<(StdListener, String)> {
    let listener = StdListener::bind(SocketAddr::from(([127, 0, 0, 1], 0)))?;
    listener.set_nonblocking(true)?;
    let url = format!("http://{}", listener.local_addr()?);
    Ok((listener, url))
}

fn serve(rt: &Runtime, listener: StdListener, app: Router) {
    rt.spawn(async move {
        match tokio::net::TcpListener::from_std(listener) {
            Ok(l) => {
                if let Err(e) = axum::serve(l, app).await {
                    tracing::error!("listener stopped: {e}");
                }
            }
            Err(e) => tracing::error!("listener unusable: {e}"),
        }
    });
}

async fn get_result<T: DeserializeOwned>(http: &reqwest::Client, url: &str) -> Result<T> {
    let env: ApiEnvelope = http.get(url).send().await.map_err(startup)?.json().await.map_err(startup)?;
    if !env.is_success() {
        return Err(startup(format!("{url}: {}", env.message)));
    }
    serde_json::from_value(env.result).map_err(startup)
}

/// Pulls the federation registry from the primary's Tenants API.
async fn fetch_registry(http: &reqwest::Client, primary_services: &str) -> Result<RegistryDocument> {
    let sites: Vec<SiteConfig> = get_result(http, &format!("{primary_services}/v3/sites")).await?;
    let tenants: Vec<TenantRecord> = get_result(http, &format!("{primary_services}/v3/tenants")).await?;
    Ok(RegistryDocument { sites, tenants, schemas: vec![] })
}

/// Deployment log for a site, which start-up follows.
fn deploy_log(config: &SiteConfig) -> Vec<DeployStep> {
    let mut log = vec![DeployStep::Vault, DeployStep::SkAdmin];
    log.push(if config.is_primary { DeployStep::Tenants } else { DeployStep::SendKey });
    log.extend([DeployStep::SecurityKernel, DeployStep::Tokens, DeployStep::Authenticator]);
    let core = ["tokens", "authenticator", "security-kernel", "tenants"];
    log.extend(config.services.iter().filter(|s| !core.contains(&s.as_str())).map(|s| DeployStep::Service(s.clone())));
    log
}

struct Shared {
    topology: Arc<Topology>,
    dns: Dns,
    transcript: Transcript,
    idp: Idp,
    clock: Arc<dyn Clock>,
}

async fn start_site(shared: &Shared, cfg: BootstrapConfig, store: Arc<SecretsStore>, doc: RegistryDocument, primary_router: Option<String>) -> Result<Site> {
    let topology = shared.topology.clone();
    let site_id = cfg.site_id.clone();
    let config = topology.site(&site_id).cloned().ok_or_else(|| startup(format!("unknown site {site_id}")))?;
    let admin = config.admin_tenant.clone();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(SITE_WORKERS)
        .thread_name(format!("site-{site_id}"))
        .enable_all()
        .build()?;

    let (svc_listener, services_url) = bind()?;
    let (router_listener, router_url) = bind()?;
    let registry = Arc::new(RegistryHandle::from_document(doc, shared.clock.now()).map_err(startup)?);
    let owned: Vec<String> = cfg.tenants();
    for t in &owned {
        let record = registry.snapshot().tenant(t).map_err(startup)?.clone();
        if let Some(host) = host_of(&record.base_url) {
            shared.dns.insert(&host, &router_url);
        }
    }
    shared.dns.insert(&config.base_host, &router_url);

    let rbac = Arc::new(RbacService::in_memory(admin.clone()));
    for t in &owned {
        let admins: Vec<&str> = topology.tenant_admins.get(t).map(|v| v.iter().map(String::as_str).collect()).unwrap_or_default();
        rbac.init_tenant(t, &admins).map_err(startup)?;
    }
    rbac.grant_role(&Caller::Bootstrap, &UserIdentity::new("authenticator", admin.clone()), TOKEN_GENERATOR_ROLE).map_err(startup)?;

    let gate = |service: &str| Gate { service: service.into(), site: site_id.clone(), registry: registry.clone(), clock: shared.clock.clone() };
    let shares = Arc::new(ShareStore::new());
    let sk_state = SkState::new(gate("security-kernel"), rbac.clone(), store.clone(), shares.clone()).map_err(startup)?;

    let snap = registry.snapshot();
    let forge_site = ForgeSite {
        site_id: site_id.clone(),
        admin_tenant: admin.clone(),
        primary_site: snap.primary().site_id.clone(),
        known_sites: snap.sites().map(|s| s.site_id.clone()).collect::<BTreeSet<_>>(),
        tokens_url: snap.tenant(&admin).map_err(startup)?.token_service_url.clone(),
    };
    let forge = Arc::new(
        TokenForge::new(forge_site, Arc::new(StorePasswords { store: store.clone() }), Arc::new(RbacRoles(rbac.clone())))
            .with_clock(shared.clock.clone()),
    );
    let admin_key = store.read_secret(&signing_key_path(&admin), &Caller::Bootstrap).map_err(startup)?;
    forge.install_tenant_key(&admin, private_key_from_pem(&String::from_utf8_lossy(&admin_key.payload)).map_err(startup)?);

    let ctx = SiteContext {
        site: site_id.clone(),
        registry: registry.clone(),
        clock: shared.clock.clone(),
        dns: shared.dns.clone(),
        transcript: shared.transcript.clone(),
        topology: topology.clone(),
        idp: shared.idp.clone(),
    };
    let services: Vec<String> = config.services.iter().cloned().collect();
    let (stub_app, clients) = stubs::routers(&ctx, &services);
    let mut app = sk::router(sk_state).merge(tokens::router(TokensState { gate: gate("tokens"), forge: forge.clone() })).merge(stub_app);
    if config.is_primary {
        app = app.merge(tenants::router(TenantsState { registry: registry.clone() }));
    }
    let fallback_ctx = ctx.clone();
    let app = app.fallback(move |headers: HeaderMap, uri: Uri| stubs::unserved(fallback_ctx.clone(), headers, uri));
    serve(&runtime, svc_listener, app);

    // Everything that talks HTTP runs on the site's runtime so pooled
    // connections belong to it.
    let targets: Vec<String> =
        if config.is_primary { snap.sites().map(|s| s.site_id.clone()).collect() } else { vec![site_id.clone(), snap.primary().site_id.clone()] };
    let passwords = clients
        .iter()
        .map(|c| {
            let v = store.read_secret(&service_password_path(&admin, &c.service), &Caller::Bootstrap).map_err(startup)?;
            Ok(String::from_utf8_lossy(&v.payload).into_owned())
        })
        .collect::<Result<Vec<_>>>()?;
    let warmup = {
        let forge = forge.clone();
        let url = services_url.clone();
        let owned = owned.clone();
        let clients = clients.clone();
        runtime.spawn(async move {
            let http = reqwest::Client::new();
            tokens::load_tenant_keys(&forge, &http, &url, &owned).await.map_err(startup)?;
            for (client, pw) in clients.iter().zip(passwords) {
                let basic = STANDARD.encode(format!("{}:{pw}", client.service));
                let resp = http
                    .post(format!("{url}/v3/tokens/service"))
                    .header(reqwest::header::AUTHORIZATION, format!("Basic {basic}"))
                    .json(&json!({ "targets": targets }))
                    .send()
                    .await
                    .map_err(startup)?;
                let env: ApiEnvelope = resp.json().await.map_err(startup)?;
                if !env.is_success() {
                    return Err(startup(format!("service tokens for {}: {}", client.service, env.message)));
                }
                let pairs: Vec<TokenPair> = serde_json::from_value(env.result).map_err(startup)?;
                client.install_tokens(&pairs);
            }
            Ok::<(), FedsimError>(())
        })
    };
    warmup.await.map_err(startup)??;

    let latency_ms = Arc::new(RwLock::new(topology.latency(&site_id, &snap.primary().site_id)));
    let proxy_state = ProxyState {
        site: site_id.clone(),
        router: Arc::new(SiteRouter::new(&site_id)),
        registry: registry.clone(),
        local_url: services_url.clone(),
        primary_url: primary_router,
        latency_ms: latency_ms.clone(),
        http: reqwest::Client::new(),
    };
    serve(&runtime, router_listener, proxy::router(proxy_state));

    let log = deploy_log(&config);
    let kind = if config.is_primary { SiteKind::Primary } else { SiteKind::Associate };
    check_deployment_order(&log, kind).map_err(|v| startup(format!("{site_id}: {v}")))?;

    Ok(Site {
        id: site_id,
        config,
        services_url,
        router_url,
        registry,
        store,
        rbac,
        shares,
        forge,
        latency_ms,
        deploy_log: log,
        runtime: Some(runtime),
    })
}

/// Starts every site in `topology` and returns once all routers listen.
pub async fn build_federation(topology: Topology) -> Result<Federation> {
    topology.validate()?;
    let topology = Arc::new(topology);
    let primary_id = topology.primary().site_id.clone();

    let mut configs: BTreeMap<String, BootstrapConfig> = BTreeMap::new();
    let mut stores: BTreeMap<String, Arc<SecretsStore>> = BTreeMap::new();
    for site in &topology.sites {
        let cfg = topology.bootstrap_config(&site.site_id)?;
        let store = Arc::new(SecretsStore::new(&site.site_id, &site.admin_tenant, Arc::new(MemoryBackend::new()), MasterKey::generate()));
        run_bootstrap(&cfg, &store, None).map_err(startup)?;
        configs.insert(site.site_id.clone(), cfg);
        stores.insert(site.site_id.clone(), store);
    }
    for site in topology.sites.iter().filter(|s| !s.is_primary) {
        let keys = public_keys_for_exchange(&configs[&site.site_id], &stores[&site.site_id]).map_err(startup)?;
        let primary_cfg = configs.get_mut(&primary_id).expect("primary configured");
        exchange_associate_key(primary_cfg, &site.site_id, keys).map_err(startup)?;
    }
    let primary_cfg = configs.remove(&primary_id).expect("primary configured");
    let primary_store = stores.remove(&primary_id).expect("primary store");
    run_bootstrap(&primary_cfg, &primary_store, None).map_err(startup)?;
    let doc = render_registry(&primary_cfg, &primary_store).map_err(startup)?;

    let shared = Shared {
        topology: topology.clone(),
        dns: Dns::default(),
        transcript: Transcript::new(),
        idp: Idp::default(),
        clock: Arc::new(SystemClock),
    };
    let primary = start_site(&shared, primary_cfg, primary_store, doc, None).await?;
    let mut sites = vec![primary];
    let http = reqwest::Client::new();
    for site in topology.sites.iter().filter(|s| !s.is_primary) {
        let doc = fetch_registry(&http, &sites[0].services_url).await?;
        let cfg = configs.remove(&site.site_id).expect("associate configured");
        let store = stores.remove(&site.site_id).expect("associate store");
        let router = Some(sites[0].router_url.clone());
        sites.push(start_site(&shared, cfg, store, doc, router).await?);
    }
    Ok(Federation { topology, sites, dns: shared.dns, transcript: shared.transcript, idp: shared.idp, http })
}

static PASSWORD_SEQ: Mutex<u64> = Mutex::new(0);

impl Federation {
    pub fn primary(&self) -> &Site {
        &self.sites[0]
    }

    pub fn site(&self, id: &str) -> Option<&Site> {
        self.sites.iter().find(|s| s.id == id)
    }

    /// The site owning `tenant`.
    pub fn site_of(&self, tenant: &str) -> Option<&Site> {
        self.topology.owning_site(tenant).and_then(|s| self.site(s))
    }

    pub fn tenant_host(&self, tenant: &str) -> Option<String> {
        self.topology.tenants.iter().find(|t| t.tenant_id == tenant).and_then(|t| host_of(&t.base_url))
    }

    /// Registers a user with the identity provider; returns the password.
    pub fn add_user(&self, tenant: &str, user: &str) -> String {
        if let Some(pw) = self.idp.password(tenant, user) {
            return pw;
        }
        let pw = {
            let mut seq = PASSWORD_SEQ.lock();
            *seq += 1;
            format!("pw-{user}-{}", *seq)
        };
        self.idp.add(tenant, user, &pw);
        pw
    }

    /// Sends a request to the router serving `tenant`'s host.
    pub async fn request(&self, tenant: &str, method: Method, path: &str, out: Outbound<'_>) -> Response {
        let host = self.tenant_host(tenant).unwrap_or_default();
        let router = self.dns.resolve(&host).unwrap_or_default();
        send(&self.http, &router, Some(&host), method, path, out).await
    }

    /// Logs `user` in through the Authenticator of the tenant's site.
    pub async fn login(&self, tenant: &str, user: &str) -> Result<TokenPair> {
        let password = self.add_user(tenant, user);
        let body = json!({ "tenant": tenant, "username": user, "password": password });
        let resp = self.request(tenant, Method::POST, "/v3/authenticator/tokens", Outbound { body: Some(&body), ..Default::default() }).await;
        if !resp.ok() {
            return Err(FedsimError::Http(format!("login {user}@{tenant}: {} {}", resp.status, resp.env.message)));
        }
        serde_json::from_value(resp.env.result).map_err(|e| FedsimError::Http(e.to_string()))
    }

    /// Changes the one-way delay between `site` and the primary.
    pub fn set_link_latency(&self, site: &str, ms: f64) {
        if let Some(s) = self.site(site) {
            *s.latency_ms.write() = ms;
        }
    }
}
