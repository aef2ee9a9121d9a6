//! Randomized cross-tenant probes.
//!
//! Each tenant gets the same cast (`victor`, `mallory`, a tenant `admin`)
//! and the same object names, with tenant-specific marker strings hidden in
//! role descriptions, secrets and application definitions. Probes let a user
//! of one tenant ask about another tenant's objects; a probe leaks when a
//! foreign marker shows up in the response, a yes/no query answers yes, or a
//! cross-tenant write succeeds.

use std::collections::BTreeMap;

use fedsec_core::{Caller, UserIdentity};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use reqwest::Method;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::client::{send, Outbound, Response};
use crate::federation::Federation;
use crate::{FedsimError, Result};

pub const CAST: [&str; 3] = ["victor", "mallory", "admin"];
const MARKER_ROLE: &str = "marker-role";
const MARKER_SYSTEM: &str = "marker-sys";
const MARKER_APP: &str = "marker-app";
const SECRET_PATH: &str = "/v3/security/vault/secret/user-secret/victor/diary";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    RoleGet,
    RoleList,
    HasRole,
    IsPermitted,
    IsPermittedOtherTenant,
    SecretRead,
    ShareList,
    IsShared,
    AppGet,
    CreateRoleElsewhere,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 10] = [
        ProbeKind::RoleGet,
        ProbeKind::RoleList,
        ProbeKind::HasRole,
        ProbeKind::IsPermitted,
        ProbeKind::IsPermittedOtherTenant,
        ProbeKind::SecretRead,
        ProbeKind::ShareList,
        ProbeKind::IsShared,
        ProbeKind::AppGet,
        ProbeKind::CreateRoleElsewhere,
    ];

    fn request(self, victim: &str) -> (Method, String, Option<Value>) {
        match self {
            ProbeKind::RoleGet => (Method::GET, format!("/v3/security/roles/{MARKER_ROLE}"), None),
            ProbeKind::RoleList => (Method::GET, "/v3/security/roles".into(), None),
            ProbeKind::HasRole => (Method::GET, format!("/v3/security/roles/hasRole?username=victor&role=only-{victim}"), None),
            ProbeKind::IsPermitted => (
                Method::POST,
                "/v3/security/perms/isPermitted".into(),
                Some(json!({ "username": "victor", "permission": format!("systems:{victim}:READ:{MARKER_SYSTEM}") })),
            ),
            ProbeKind::IsPermittedOtherTenant => (
                Method::POST,
                "/v3/security/perms/isPermitted".into(),
                Some(json!({ "tenant": victim, "username": "victor", "permission": format!("systems:{victim}:READ:{MARKER_SYSTEM}") })),
            ),
            ProbeKind::SecretRead => (Method::GET, SECRET_PATH.into(), None),
            ProbeKind::ShareList => (Method::GET, "/v3/security/shares".into(), None),
            ProbeKind::IsShared => (
                Method::GET,
                format!("/v3/security/shares/isShared?resource_type=system&resource_id={MARKER_SYSTEM}&username=friend-{victim}&privilege=READ"),
                None,
            ),
            ProbeKind::AppGet => (Method::GET, format!("/v3/apps/{MARKER_APP}"), None),
            ProbeKind::CreateRoleElsewhere => {
                (Method::POST, "/v3/security/roles".into(), Some(json!({ "name": "intruder", "description": "x", "tenant": victim })))
            }
        }
    }

    fn yes_no(self) -> bool {
        matches!(self, ProbeKind::HasRole | ProbeKind::IsPermitted | ProbeKind::IsPermittedOtherTenant | ProbeKind::IsShared)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Probe {
    pub kind: ProbeKind,
    pub attacker: String,
    pub attacker_tenant: String,
    pub victim_tenant: String,
    /// Tenant whose host the request was sent to.
    pub via_host: String,
    /// Whether on-behalf-of headers naming the victim tenant were added.
    pub spoofed_obo: bool,
    pub status: u16,
    pub leak: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsolationReport {
    pub probes: Vec<Probe>,
    /// Owners reading their own objects saw their markers.
    pub controls_passed: usize,
    pub controls_failed: Vec<String>,
}

impl IsolationReport {
    pub fn leaks(&self) -> Vec<&Probe> {
        self.probes.iter().filter(|p| p.leak.is_some()).collect()
    }
}

struct Tenant {
    marker: String,
    tokens: BTreeMap<String, String>,
}

fn is_yes(v: &Value) -> bool {
    v.as_bool() == Some(true) || v["shared"].as_bool() == Some(true)
}

async fn call(fed: &Federation, host_tenant: &str, token: &str, obo: Option<&UserIdentity>, req: &(Method, String, Option<Value>)) -> Response {
    let out = Outbound { token: Some(token), obo, body: req.2.as_ref(), ..Default::default() };
    fed.request(host_tenant, req.0.clone(), &req.1, out).await
}

async fn must(fed: &Federation, tenant: &str, token: &str, method: Method, path: &str, body: Value) -> Result<()> {
    let out = Outbound { token: Some(token), body: Some(&body), ..Default::default() };
    let r = fed.request(tenant, method, path, out).await;
    if r.ok() {
        Ok(())
    } else {
        Err(FedsimError::SeedingFailed(format!("{tenant} {path}: {} {}", r.status, r.env.message)))
    }
}

async fn plant(fed: &Federation, tenant: &str, t: &Tenant) -> Result<()> {
    let admin = &t.tokens["admin"];
    let victor = &t.tokens["victor"];
    let m = &t.marker;
    must(fed, tenant, admin, Method::POST, "/v3/security/roles", json!({ "name": MARKER_ROLE, "description": m })).await?;
    must(fed, tenant, admin, Method::POST, &format!("/v3/security/roles/{MARKER_ROLE}/permissions"), json!({ "permission": format!("systems:{tenant}:READ:{MARKER_SYSTEM}") })).await?;
    must(fed, tenant, admin, Method::POST, "/v3/security/users/victor/roles", json!({ "role": MARKER_ROLE })).await?;
    must(fed, tenant, admin, Method::POST, "/v3/security/roles", json!({ "name": format!("only-{tenant}"), "description": m })).await?;
    must(fed, tenant, admin, Method::POST, "/v3/security/users/victor/roles", json!({ "role": format!("only-{tenant}") })).await?;
    must(fed, tenant, victor, Method::POST, SECRET_PATH, json!({ "data": m })).await?;
    let share = json!({ "grantee": format!("friend-{tenant}"), "resource_type": "system", "resource_id": MARKER_SYSTEM, "privilege": "READ" });
    must(fed, tenant, victor, Method::POST, "/v3/security/shares", share).await?;
    let app = json!({ "id": MARKER_APP, "exec_system": format!("exec-{m}"), "exec_dir": format!("/scratch/{m}") });
    must(fed, tenant, victor, Method::POST, "/v3/apps", app).await?;
    Ok(())
}

/// Owners reading their own objects must see their own markers, or the
/// probes below prove nothing.
async fn controls(fed: &Federation, tenant: &str, t: &Tenant) -> Vec<(String, bool)> {
    let victor = &t.tokens["victor"];
    let mut out = Vec::new();
    for kind in [ProbeKind::RoleGet, ProbeKind::SecretRead, ProbeKind::AppGet] {
        let r = call(fed, tenant, victor, None, &kind.request(tenant)).await;
        out.push((format!("{tenant} {kind:?}"), r.ok() && serde_json::to_string(&r.env).unwrap_or_default().contains(&t.marker)));
    }
    for kind in [ProbeKind::HasRole, ProbeKind::IsPermitted] {
        let r = call(fed, tenant, victor, None, &kind.request(tenant)).await;
        out.push((format!("{tenant} {kind:?}"), r.ok() && is_yes(&r.env.result)));
    }
    let r = call(fed, tenant, &t.tokens["admin"], None, &ProbeKind::IsShared.request(tenant)).await;
    out.push((format!("{tenant} IsShared"), r.ok() && is_yes(&r.env.result)));
    out
}

/// Plants markers in `tenants` and runs `count` random probes.
pub async fn run_isolation(fed: &Federation, tenants: &[&str], count: usize, seed: u64) -> Result<IsolationReport> {
    if tenants.len() < 2 {
        return Err(FedsimError::SeedingFailed("isolation needs at least two tenants".into()));
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let mut cast: BTreeMap<String, Tenant> = BTreeMap::new();
    for &tenant in tenants {
        let mut tokens = BTreeMap::new();
        for user in CAST {
            tokens.insert(user.to_string(), fed.login(tenant, user).await?.access_token);
        }
        let site = fed.site_of(tenant).ok_or_else(|| FedsimError::SeedingFailed(format!("no site for {tenant}")))?;
        // the tenant admin role is the only thing not done over the wire
        site.rbac
            .grant_role(&Caller::Bootstrap, &UserIdentity::new("admin", tenant), fedsec_core::rbac::TENANT_ADMIN_ROLE)
            .map_err(|e| FedsimError::SeedingFailed(e.to_string()))?;
        cast.insert(tenant.to_string(), Tenant { marker: format!("MK{:016x}", rng.gen::<u64>()), tokens });
    }
    let mut controls_passed = 0;
    let mut controls_failed = Vec::new();
    for (tenant, t) in &cast {
        plant(fed, tenant, t).await?;
        for (name, ok) in controls(fed, tenant, t).await {
            if ok {
                controls_passed += 1;
            } else {
                controls_failed.push(name);
            }
        }
    }

    let mut probes = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = *ProbeKind::ALL.choose(&mut rng).expect("kinds");
        let attacker_tenant = tenants.choose(&mut rng).expect("tenants").to_string();
        let victim_tenant = tenants.iter().filter(|t| **t != attacker_tenant).collect::<Vec<_>>().choose(&mut rng).map(|t| t.to_string()).expect("victims");
        let attacker = CAST.choose(&mut rng).expect("cast").to_string();
        let via_host = if rng.gen_bool(0.75) { attacker_tenant.clone() } else { victim_tenant.clone() };
        let spoofed_obo = rng.gen_bool(0.2);
        let obo = spoofed_obo.then(|| UserIdentity::new("victor", victim_tenant.clone()));
        let token = &cast[&attacker_tenant].tokens[&attacker];
        let req = kind.request(&victim_tenant);
        let resp = call(fed, &via_host, token, obo.as_ref(), &req).await;
        let text = serde_json::to_string(&resp.env).unwrap_or_default();
        let foreign = cast.iter().filter(|(t, _)| **t != attacker_tenant).find(|(_, t)| text.contains(&t.marker));
        let leak = if let Some((t, _)) = foreign {
            Some(format!("marker of {t} in response"))
        } else if kind.yes_no() && resp.ok() && is_yes(&resp.env.result) {
            Some("answered yes about another tenant".into())
        } else if kind == ProbeKind::CreateRoleElsewhere && resp.ok() {
            Some("created a role in another tenant".into())
        } else {
            None
        };
        probes.push(Probe { kind, attacker, attacker_tenant, victim_tenant, via_host, spoofed_obo, status: resp.status, leak });
    }
    Ok(IsolationReport { probes, controls_passed, controls_failed })
}

/// Sends `token` to `base_url` directly; exposed for ad hoc probing.
pub async fn probe_direct(fed: &Federation, base_url: &str, token: &str, method: Method, path: &str) -> Response {
    send(&fed.http, base_url, None, method, path, Outbound { token: Some(token), ..Default::default() }).await
}
