//! The gatekeeper validation matrix, sent over the wire.
//!
//! Every cell is one request built from a token kind, token tenant, signer,
//! receiving site, target service, on-behalf-of identity, `target_site`
//! claim and the name in the token's subject. Cells go straight to the
//! receiving site's services listener, so the verdict seen is the
//! gatekeeper's and not the router's.

use std::collections::BTreeMap;
use std::fmt;

use fedsec_core::clock::{Clock, SystemClock};
use fedsec_core::gatekeeper::{check_rule, validate_request_with_order, InboundRequest, Rule};
use fedsec_core::registry::RegistrySnapshot;
use fedsec_core::secrets::signing_key_path;
use fedsec_core::token::{encode_jwt, generate_key, private_key_from_pem, AccountType, TokenClaims, TokenUse};
use fedsec_core::{Caller, UserIdentity};
use reqwest::Method;
use rsa::RsaPrivateKey;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::client::{send, Outbound};
use crate::federation::Federation;
use crate::topology::Topology;
use crate::{FedsimError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub service_token: bool,
    pub tenant: String,
    pub forged: bool,
    pub receiving: String,
    pub target: String,
    pub obo: Option<(String, String)>,
    pub target_site: Option<String>,
    /// Service name (or user name stem) in the token subject.
    pub subject: String,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}@{}{} -> {}/{} obo={} target_site={}",
            if self.service_token { "service" } else { "user" },
            self.subject,
            self.tenant,
            if self.forged { " (forged)" } else { "" },
            self.receiving,
            self.target,
            self.obo.as_ref().map_or("-".to_string(), |(u, t)| format!("{u}@{t}")),
            self.target_site.as_deref().unwrap_or("-"),
        )
    }
}

impl Cell {
    pub fn username(&self) -> String {
        if self.service_token {
            self.subject.clone()
        } else {
            format!("u-{}", self.subject)
        }
    }

    /// Path that reaches `target` with a plain GET.
    pub fn path(&self) -> &'static str {
        target_path(&self.target)
    }
}

pub fn target_path(service: &str) -> &'static str {
    match service {
        "security-kernel" => "/v3/security/whoami",
        "jobs" => "/v3/jobs",
        _ => "/v3/systems",
    }
}

/// Axes of the matrix for a topology with one associate.
#[derive(Debug, Clone)]
pub struct Axes {
    pub tenants: Vec<String>,
    pub sites: Vec<String>,
    pub targets: Vec<String>,
    pub obo: Vec<Option<(String, String)>>,
    pub subjects: Vec<String>,
}

impl Axes {
    pub fn canonical() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Axes {
            tenants: s(&["primary-admin", "tacc", "assoc1-admin", "tenant1"]),
            sites: s(&["primary", "assoc1"]),
            targets: s(&["security-kernel", "systems", "jobs"]),
            obo: vec![None, Some(("carol".into(), "tacc".into())), Some(("dave".into(), "tenant1".into()))],
            subjects: s(&["systems", "jobs"]),
        }
    }

    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        let target_sites: Vec<Option<String>> = std::iter::once(None).chain(self.sites.iter().cloned().map(Some)).collect();
        for service_token in [false, true] {
            for tenant in &self.tenants {
                for forged in [false, true] {
                    for receiving in &self.sites {
                        for target in &self.targets {
                            for obo in &self.obo {
                                for target_site in &target_sites {
                                    for subject in &self.subjects {
                                        out.push(Cell {
                                            service_token,
                                            tenant: tenant.clone(),
                                            forged,
                                            receiving: receiving.clone(),
                                            target: target.clone(),
                                            obo: obo.clone(),
                                            target_site: target_site.clone(),
                                            subject: subject.clone(),
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// The decision table: the first rule a cell breaks, read off the topology
/// alone.
pub fn decision_table(topology: &Topology, cell: &Cell) -> Option<Rule> {
    let owner = |t: &str| topology.owning_site(t).unwrap_or_default().to_string();
    let runs = |site: &str, svc: &str| topology.site(site).is_some_and(|s| s.services.contains(svc));
    let admin_of = |site: &str| topology.site(site).map(|s| s.admin_tenant.clone()).unwrap_or_default();
    let primary = topology.primary().site_id.clone();
    let is_admin = topology.sites.iter().any(|s| s.admin_tenant == cell.tenant);
    let sender = owner(&cell.tenant);
    let user = !cell.service_token;

    let claims_consistent = if user { cell.target_site.is_none() } else { cell.target_site.is_some() };
    let table: [(Rule, bool); 10] = [
        (Rule::R1, !cell.forged && claims_consistent),
        (Rule::R2, runs(&cell.receiving, &cell.target)),
        (Rule::R3, !matches!(cell.target.as_str(), "security-kernel" | "tokens") || sender == cell.receiving),
        (Rule::R4, !(cell.receiving == primary && sender != primary && runs(&sender, &cell.target))),
        (Rule::R5, cell.receiving == primary || sender == cell.receiving || sender == primary),
        (Rule::R6a, !(user && cell.obo.is_some())),
        (Rule::R6b, !(user && is_admin)),
        (Rule::R7a, user || cell.obo.is_some()),
        (Rule::R7b, user || cell.target_site.as_deref() == Some(cell.receiving.as_str())),
        (
            Rule::R7c,
            user || cell.obo.as_ref().is_some_and(|(_, t)| {
                let site = owner(t);
                admin_of(&site) == cell.tenant && runs(&site, &cell.subject)
            }),
        ),
    ];
    table.iter().find(|(_, ok)| !ok).map(|(r, _)| *r)
}

/// HTTP status a cell should produce: 401 for rule 1, 403 for any other
/// rule, 200 when accepted.
pub fn expected_status(rule: Option<Rule>) -> u16 {
    match rule {
        None => 200,
        Some(Rule::R1) => 401,
        Some(_) => 403,
    }
}

/// Signs matrix tokens with each tenant's real key or a stranger's.
pub struct Signer {
    keys: BTreeMap<String, RsaPrivateKey>,
    stranger: RsaPrivateKey,
    now: u64,
}

impl Signer {
    pub fn from_federation(fed: &Federation) -> Result<Self> {
        let mut keys = BTreeMap::new();
        for t in &fed.topology.tenants {
            let site = fed.site_of(&t.tenant_id).ok_or_else(|| FedsimError::TopologyInvalid(format!("no site for {}", t.tenant_id)))?;
            let v = site.store.read_secret(&signing_key_path(&t.tenant_id), &Caller::Bootstrap).map_err(|e| FedsimError::Startup(e.to_string()))?;
            let key = private_key_from_pem(&String::from_utf8_lossy(&v.payload)).map_err(|e| FedsimError::Startup(e.to_string()))?;
            keys.insert(t.tenant_id.clone(), key);
        }
        Ok(Signer { keys, stranger: generate_key(), now: SystemClock.now() })
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn claims(&self, cell: &Cell) -> TokenClaims {
        TokenClaims {
            jti: format!("matrix-{}-{}-{}-{:?}", cell.username(), cell.tenant, cell.forged, cell.target_site),
            sub: format!("{}@{}", cell.username(), cell.tenant),
            tenant_id: cell.tenant.clone(),
            account_type: if cell.service_token { AccountType::Service } else { AccountType::User },
            target_site: cell.target_site.clone(),
            exp: self.now + 3600,
            iat: self.now,
            iss: format!("https://{}.fedsim/v3/tokens", cell.tenant),
            token_use: TokenUse::Access,
        }
    }

    pub fn token(&self, cell: &Cell) -> String {
        let key = if cell.forged { &self.stranger } else { self.keys.get(&cell.tenant).unwrap_or(&self.stranger) };
        encode_jwt(&self.claims(cell), key)
    }

    pub fn request(&self, cell: &Cell) -> InboundRequest {
        let mut req = InboundRequest::new(self.token(cell), &cell.target, &cell.receiving);
        if let Some((u, t)) = &cell.obo {
            req = req.on_behalf_of(u, t);
        }
        req
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    pub expected: Option<String>,
    pub expected_status: u16,
    pub status: u16,
    pub rule: Option<String>,
}

impl CellResult {
    pub fn agrees(&self) -> bool {
        self.status == self.expected_status && self.rule == self.expected
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixReport {
    pub results: Vec<CellResult>,
}

impl MatrixReport {
    pub fn disagreements(&self) -> Vec<&CellResult> {
        self.results.iter().filter(|r| !r.agrees()).collect()
    }
}

/// Sends every cell to its receiving site and compares with the decision
/// table.
pub async fn run_validation_matrix(fed: &Federation, axes: &Axes) -> Result<MatrixReport> {
    let signer = Signer::from_federation(fed)?;
    let mut tokens: BTreeMap<(bool, String, bool, Option<String>, String), String> = BTreeMap::new();
    let mut results = Vec::new();
    for cell in axes.cells() {
        let site = fed.site(&cell.receiving).ok_or_else(|| FedsimError::TopologyInvalid(format!("no site {}", cell.receiving)))?;
        let key = (cell.service_token, cell.tenant.clone(), cell.forged, cell.target_site.clone(), cell.subject.clone());
        let token = tokens.entry(key).or_insert_with(|| signer.token(&cell)).clone();
        let obo = cell.obo.as_ref().map(|(u, t)| UserIdentity::new(u.clone(), t.clone()));
        let out = Outbound { token: Some(&token), obo: obo.as_ref(), ..Default::default() };
        let resp = send(&fed.http, &site.services_url, None, Method::GET, cell.path(), out).await;
        let expected = decision_table(&fed.topology, &cell);
        results.push(CellResult {
            expected: expected.map(|r| r.label().to_string()),
            expected_status: expected_status(expected),
            status: resp.status,
            rule: resp.env.rule().map(|r| r.label().to_string()),
            cell,
        });
    }
    Ok(MatrixReport { results })
}

/// Verdicts under an altered rule order, computed in-process against the
/// receiving site's registry. Used to show the matrix notices a reordering.
pub fn verdicts_with_order(fed: &Federation, axes: &Axes, order: &[Rule]) -> Result<Vec<(Cell, Option<Rule>)>> {
    let signer = Signer::from_federation(fed)?;
    let mut out = Vec::new();
    for cell in axes.cells() {
        let site = fed.site(&cell.receiving).ok_or_else(|| FedsimError::TopologyInvalid(format!("no site {}", cell.receiving)))?;
        let verdict = validate_request_with_order(&signer.request(&cell), &site.registry.snapshot(), signer.now(), order);
        out.push((cell, verdict.rule_violated));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForwardResult {
    pub cell: Cell,
    /// Whether rules 1, 4 and 7 all pass at the primary.
    pub rules_allow: bool,
    pub forwarded_status: u16,
    pub hops: Option<String>,
    /// Body of the same request sent directly to the primary.
    pub direct: Value,
    pub forwarded: Value,
}

/// Service-token requests for a primary-only service in an associate-owned
/// tenant, entering at the associate's router and forwarded to the primary.
pub async fn run_forwarding(fed: &Federation, tenant: &str, service: &str) -> Result<Vec<ForwardResult>> {
    let signer = Signer::from_federation(fed)?;
    let primary = fed.primary();
    let snap: std::sync::Arc<RegistrySnapshot> = primary.registry.snapshot();
    let admins: Vec<String> = fed.topology.sites.iter().map(|s| s.admin_tenant.clone()).collect();
    let sites: Vec<Option<String>> = std::iter::once(None).chain(fed.topology.sites.iter().map(|s| Some(s.site_id.clone()))).collect();
    let obos: Vec<Option<(String, String)>> = std::iter::once(None)
        .chain(fed.topology.tenants.iter().filter(|t| !t.is_admin_tenant).map(|t| Some(("dave".to_string(), t.tenant_id.clone()))))
        .collect();
    let mut out = Vec::new();
    for tenant_of_token in &admins {
        for target_site in &sites {
            for obo in &obos {
                for subject in [service, "systems"] {
                    let cell = Cell {
                        service_token: true,
                        tenant: tenant_of_token.clone(),
                        forged: false,
                        receiving: primary.id.clone(),
                        target: service.into(),
                        obo: obo.clone(),
                        target_site: target_site.clone(),
                        subject: subject.into(),
                    };
                    let req = signer.request(&cell);
                    let rules_allow = [Rule::R1, Rule::R4, Rule::R7a, Rule::R7b, Rule::R7c].iter().all(|r| check_rule(*r, &req, &snap, signer.now()));
                    let obo_id = obo.as_ref().map(|(u, t)| UserIdentity::new(u.clone(), t.clone()));
                    let token = signer.token(&cell);
                    let path = target_path(service);
                    let mk = || Outbound { token: Some(&token), obo: obo_id.as_ref(), ..Default::default() };
                    let fwd = fed.request(tenant, Method::GET, path, mk()).await;
                    let direct = send(&fed.http, &primary.services_url, None, Method::GET, path, mk()).await;
                    out.push(ForwardResult {
                        cell,
                        rules_allow,
                        forwarded_status: fwd.status,
                        hops: fwd.hops,
                        direct: serde_json::to_value(&direct.env).unwrap_or_default(),
                        forwarded: serde_json::to_value(&fwd.env).unwrap_or_default(),
                    });
                }
            }
        }
    }
    Ok(out)
}
