//! Inbound request validation.
//!
//! Every service checks each request against an ordered rule list before
//! doing any work. The first failing rule is reported.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::identity::UserIdentity;
use crate::registry::{RegistryResult, RegistrySnapshot};
use crate::token::{self, AccountType, TokenClaims, TokenUse};

pub const HEADER_TOKEN: &str = "X-Tapis-Token";
pub const HEADER_OBO_USER: &str = "X-Tapis-User";
pub const HEADER_OBO_TENANT: &str = "X-Tapis-Tenant";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    #[serde(rename = "1")]
    R1,
    #[serde(rename = "2")]
    R2,
    #[serde(rename = "3")]
    R3,
    #[serde(rename = "4")]
    R4,
    #[serde(rename = "5")]
    R5,
    #[serde(rename = "6a")]
    R6a,
    #[serde(rename = "6b")]
    R6b,
    #[serde(rename = "7a")]
    R7a,
    #[serde(rename = "7b")]
    R7b,
    #[serde(rename = "7c")]
    R7c,
}

impl Rule {
    pub const ORDER: [Rule; 10] =
        [Rule::R1, Rule::R2, Rule::R3, Rule::R4, Rule::R5, Rule::R6a, Rule::R6b, Rule::R7a, Rule::R7b, Rule::R7c];

    pub fn label(self) -> &'static str {
        match self {
            Rule::R1 => "1",
            Rule::R2 => "2",
            Rule::R3 => "3",
            Rule::R4 => "4",
            Rule::R5 => "5",
            Rule::R6a => "6a",
            Rule::R6b => "6b",
            Rule::R7a => "7a",
            Rule::R7b => "7b",
            Rule::R7c => "7c",
        }
    }

    pub fn parse(label: &str) -> Option<Rule> {
        Rule::ORDER.into_iter().find(|r| r.label() == label)
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundRequest {
    pub token: String,
    pub obo_user: Option<String>,
    pub obo_tenant: Option<String>,
    pub target_service: String,
    pub receiving_site: String,
}

impl InboundRequest {
    pub fn new(token: impl Into<String>, target_service: &str, receiving_site: &str) -> Self {
        InboundRequest {
            token: token.into(),
            obo_user: None,
            obo_tenant: None,
            target_service: target_service.into(),
            receiving_site: receiving_site.into(),
        }
    }

    pub fn on_behalf_of(mut self, user: &str, tenant: &str) -> Self {
        self.obo_user = Some(user.into());
        self.obo_tenant = Some(tenant.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule_violated: Option<Rule>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effective_user: Option<UserIdentity>,
    /// Verified claims; present only on acceptance.
    #[serde(skip)]
    pub claims: Option<TokenClaims>,
    pub detail: String,
}

impl ValidationVerdict {
    fn reject(rule: Rule, detail: impl Into<String>) -> Self {
        ValidationVerdict { accepted: false, rule_violated: Some(rule), effective_user: None, claims: None, detail: detail.into() }
    }
}

/// Site owning the token's tenant. Service tokens live in admin tenants, so
/// for them this is the site the sending service belongs to.
pub fn derive_sender_site(claims: &TokenClaims, registry: &RegistrySnapshot) -> RegistryResult<String> {
    Ok(registry.resolve_site_for_tenant(&claims.tenant_id)?.site_id.clone())
}

struct Context<'a> {
    req: &'a InboundRequest,
    reg: &'a RegistrySnapshot,
    claims: &'a TokenClaims,
    signature_ok: Result<(), String>,
}

const SIGNING_SERVICES: [&str; 2] = ["security-kernel", "tokens"];

fn check(rule: Rule, cx: &Context<'_>) -> Result<(), String> {
    let c = cx.claims;
    let req = cx.req;
    let reg = cx.reg;
    let owner = |tenant: &str| reg.resolve_site_for_tenant(tenant).map(|s| s.site_id.clone()).ok();
    let is_user = c.account_type == AccountType::User;
    let obo_set = req.obo_user.is_some() || req.obo_tenant.is_some();
    match rule {
        Rule::R1 => cx.signature_ok.clone(),
        Rule::R2 => match reg.service_runs_at(&req.target_service, &req.receiving_site) {
            Ok(true) => Ok(()),
            Ok(false) => Err(format!("{} does not run {}", req.receiving_site, req.target_service)),
            Err(e) => Err(e.to_string()),
        },
        Rule::R3 => {
            if !SIGNING_SERVICES.contains(&req.target_service.as_str()) || owner(&c.tenant_id).as_deref() == Some(req.receiving_site.as_str()) {
                Ok(())
            } else {
                Err(format!("tenant {} is not owned by {}", c.tenant_id, req.receiving_site))
            }
        }
        Rule::R4 => {
            let receiving_primary = reg.primary().site_id == req.receiving_site;
            let Some(owner) = owner(&c.tenant_id) else {
                return Err(format!("unknown tenant {}", c.tenant_id));
            };
            if receiving_primary && owner != req.receiving_site && reg.service_runs_at(&req.target_service, &owner).unwrap_or(false) {
                Err(format!("{owner} runs {} itself", req.target_service))
            } else {
                Ok(())
            }
        }
        Rule::R5 => {
            let receiving_primary = reg.primary().site_id == req.receiving_site;
            let sender = owner(&c.tenant_id);
            match sender {
                _ if receiving_primary => Ok(()),
                Some(s) if s == req.receiving_site || s == reg.primary().site_id => Ok(()),
                Some(s) => Err(format!("sender {s} is not the primary")),
                None => Err(format!("unknown tenant {}", c.tenant_id)),
            }
        }
        Rule::R6a => {
            if is_user && obo_set {
                Err("user token with on-behalf-of headers".into())
            } else {
                Ok(())
            }
        }
        Rule::R6b => {
            if is_user && reg.is_admin_tenant(&c.tenant_id) {
                Err(format!("user token in administrative tenant {}", c.tenant_id))
            } else {
                Ok(())
            }
        }
        Rule::R7a => {
            if !is_user && (req.obo_user.is_none() || req.obo_tenant.is_none()) {
                Err("service token without on-behalf-of headers".into())
            } else {
                Ok(())
            }
        }
        Rule::R7b => {
            if !is_user && c.target_site.as_deref() != Some(req.receiving_site.as_str()) {
                Err(format!("target_site is not {}", req.receiving_site))
            } else {
                Ok(())
            }
        }
        Rule::R7c => {
            if is_user {
                return Ok(());
            }
            let Some(obo_tenant) = req.obo_tenant.as_deref() else {
                return Err("missing on-behalf-of tenant".into());
            };
            let Ok(site) = reg.resolve_site_for_tenant(obo_tenant) else {
                return Err(format!("unknown on-behalf-of tenant {obo_tenant}"));
            };
            if site.admin_tenant != c.tenant_id {
                Err(format!("token tenant is not the admin tenant of {}", site.site_id))
            } else if !site.runs(c.username()) {
                Err(format!("sending service {} does not run at {}", c.username(), site.site_id))
            } else {
                Ok(())
            }
        }
    }
}

fn signature_status(token_str: &str, reg: &RegistrySnapshot, now: u64) -> Result<TokenClaims, String> {
    let claims = token::verify(token_str, reg, now).map_err(|e| e.to_string())?;
    if claims.token_use != TokenUse::Access {
        return Err("refresh tokens are not accepted on service APIs".into());
    }
    Ok(claims)
}

/// Validates with the standard rule order.
pub fn validate_request(req: &InboundRequest, registry: &RegistrySnapshot, now: u64) -> ValidationVerdict {
    validate_request_with_order(req, registry, now, &Rule::ORDER)
}

/// Like [`validate_request`] with an arbitrary evaluation order. Rules not
/// listed are skipped.
pub fn validate_request_with_order(req: &InboundRequest, registry: &RegistrySnapshot, now: u64, order: &[Rule]) -> ValidationVerdict {
    let verified = signature_status(&req.token, registry, now);
    let claims = match (&verified, token::decode_unverified(&req.token)) {
        (Ok(c), _) => c.clone(),
        (Err(_), Ok(c)) => c,
        (Err(e), Err(_)) => return ValidationVerdict::reject(Rule::R1, e.clone()),
    };
    let cx = Context { req, reg: registry, claims: &claims, signature_ok: verified.as_ref().map(|_| ()).map_err(Clone::clone) };
    for &rule in order {
        if let Err(detail) = check(rule, &cx) {
            return ValidationVerdict::reject(rule, detail);
        }
    }
    let effective_user = match claims.account_type {
        AccountType::User => claims.subject(),
        AccountType::Service => match (&req.obo_user, &req.obo_tenant) {
            (Some(u), Some(t)) => UserIdentity::try_new(u, t).ok(),
            _ => None,
        },
    };
    let Some(effective_user) = effective_user else {
        return ValidationVerdict::reject(if claims.account_type == AccountType::User { Rule::R1 } else { Rule::R7a }, "unusable identity");
    };
    ValidationVerdict { accepted: true, rule_violated: None, effective_user: Some(effective_user), claims: Some(claims), detail: String::new() }
}

/// Outcome of a single rule in isolation, for auditing accepted requests.
pub fn check_rule(rule: Rule, req: &InboundRequest, registry: &RegistrySnapshot, now: u64) -> bool {
    let verified = signature_status(&req.token, registry, now);
    let Ok(claims) = verified.clone().or_else(|_| token::decode_unverified(&req.token).map_err(|e| e.to_string())) else {
        return false;
    };
    let cx = Context { req, reg: registry, claims: &claims, signature_ok: verified.map(|_| ()) };
    check(rule, &cx).is_ok()
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use rsa::RsaPrivateKey;

    use super::*;
    use crate::registry::fixtures::document;
    use crate::token::{encode_jwt, test_keys};

    struct World {
        reg: RegistrySnapshot,
        keys: HashMap<String, RsaPrivateKey>,
    }

    fn world() -> World {
        let mut doc = document();
        let pool = test_keys::pool();
        let mut keys = HashMap::new();
        for (i, t) in doc.tenants.iter_mut().enumerate() {
            let k = pool[i % pool.len()].clone();
            t.public_key = token::public_key_pem(&k.to_public_key());
            keys.insert(t.tenant_id.clone(), k);
        }
        World { reg: RegistrySnapshot::load(doc, 0).unwrap(), keys }
    }

    impl World {
        fn user(&self, user: &str, tenant: &str) -> String {
            self.sign(user, tenant, AccountType::User, None, tenant)
        }

        fn service(&self, service: &str, site: &str, target: &str) -> String {
            let admin = format!("{site}-admin");
            self.sign(service, &admin, AccountType::Service, Some(target), &admin)
        }

        fn sign(&self, user: &str, tenant: &str, kind: AccountType, target: Option<&str>, key_of: &str) -> String {
            let claims = TokenClaims {
                jti: "j".into(),
                sub: format!("{user}@{tenant}"),
                tenant_id: tenant.into(),
                account_type: kind,
                target_site: target.map(String::from),
                exp: 1_000,
                iat: 1,
                iss: "test".into(),
                token_use: TokenUse::Access,
            };
            encode_jwt(&claims, &self.keys[key_of])
        }
    }

    #[test]
    fn plain_user_request_accepted() {
        let w = world();
        let v = validate_request(&InboundRequest::new(w.user("bob", "tenant1"), "security-kernel", "assoc1"), &w.reg, 10);
        assert!(v.accepted, "{v:?}");
        assert_eq!(v.effective_user.unwrap().subject(), "bob@tenant1");
    }

    #[test]
    fn listed_rejections() {
        let w = world();
        let at = |req: InboundRequest| validate_request(&req, &w.reg, 10).rule_violated;

        assert_eq!(at(InboundRequest::new(w.user("bob", "tenant1"), "security-kernel", "assoc1").on_behalf_of("x", "tenant1")), Some(Rule::R6a));
        assert_eq!(at(InboundRequest::new(w.service("streams", "primary", "primary"), "streams", "assoc1").on_behalf_of("bob", "tacc")), Some(Rule::R7b));
        // tenant1 belongs to assoc1, which runs streams itself
        assert_eq!(at(InboundRequest::new(w.user("bob", "tenant1"), "streams", "primary")), Some(Rule::R4));
        // assoc1 service calling assoc2
        assert_eq!(at(InboundRequest::new(w.service("streams", "assoc1", "assoc2"), "security-kernel", "assoc2").on_behalf_of("bob", "tenant1")), Some(Rule::R3));
        assert_eq!(at(InboundRequest::new(w.service("streams", "assoc1", "assoc2"), "tokens", "assoc2").on_behalf_of("bob", "tenant1")), Some(Rule::R3));
        assert_eq!(at(InboundRequest::new(w.service("streams", "assoc1", "assoc2"), "authenticator", "assoc2").on_behalf_of("bob", "tenant1")), Some(Rule::R5));
        assert_eq!(at(InboundRequest::new(w.user("ops", "primary-admin"), "systems", "primary")), Some(Rule::R6b));
        assert_eq!(at(InboundRequest::new(w.user("bob", "tenant1"), "jobs", "assoc1")), Some(Rule::R2));
        assert_eq!(at(InboundRequest::new(w.service("jobs", "primary", "primary"), "systems", "primary")), Some(Rule::R7a));
        // primary service acting for an associate-owned tenant
        assert_eq!(at(InboundRequest::new(w.service("jobs", "primary", "primary"), "systems", "primary").on_behalf_of("bob", "tenant1")), Some(Rule::R7c));
        // service name not deployed at the signing site
        assert_eq!(at(InboundRequest::new(w.service("jobs", "assoc1", "primary"), "systems", "primary").on_behalf_of("bob", "tenant1")), Some(Rule::R7c));
    }

    #[test]
    fn forged_and_refresh_tokens_fail_rule_one() {
        let w = world();
        let forged = w.sign("bob", "tenant1", AccountType::User, None, "tenant2");
        let v = validate_request(&InboundRequest::new(forged, "security-kernel", "assoc1"), &w.reg, 10);
        assert_eq!(v.rule_violated, Some(Rule::R1));
        assert!(!v.detail.contains("eyJ"));

        let expired = validate_request(&InboundRequest::new(w.user("bob", "tenant1"), "security-kernel", "assoc1"), &w.reg, 5_000);
        assert_eq!(expired.rule_violated, Some(Rule::R1));

        let garbage = validate_request(&InboundRequest::new("not.a.token", "security-kernel", "assoc1"), &w.reg, 10);
        assert_eq!(garbage.rule_violated, Some(Rule::R1));
    }

    #[test]
    fn cross_site_service_flow_accepted() {
        let w = world();
        // assoc1's streams forwards a tenant1 user's request to primary jobs
        let req = InboundRequest::new(w.service("streams", "assoc1", "primary"), "jobs", "primary").on_behalf_of("bob", "tenant1");
        let v = validate_request(&req, &w.reg, 10);
        assert!(v.accepted, "{v:?}");
        assert_eq!(v.effective_user.unwrap().subject(), "bob@tenant1");
        // primary jobs calling assoc1 streams for a primary tenant user
        let req = InboundRequest::new(w.service("jobs", "primary", "assoc1"), "streams", "assoc1").on_behalf_of("alice", "tacc");
        assert!(validate_request(&req, &w.reg, 10).accepted);
        for r in Rule::ORDER {
            assert!(check_rule(r, &req, &w.reg, 10), "{r}");
        }
    }

    #[test]
    fn sender_site_derivation() {
        let w = world();
        let claims = |t: &str| token::decode_unverified(&w.user("x", t)).unwrap();
        assert_eq!(derive_sender_site(&claims("primary-admin"), &w.reg).unwrap(), "primary");
        assert_eq!(derive_sender_site(&claims("assoc1-admin"), &w.reg).unwrap(), "assoc1");
        assert_eq!(derive_sender_site(&claims("tenant1"), &w.reg).unwrap(), "assoc1");
    }

    #[test]
    fn custom_order_reports_first_listed_failure() {
        let w = world();
        // violates both 2 and 6a
        let req = InboundRequest::new(w.user("bob", "tenant1"), "jobs", "assoc1").on_behalf_of("x", "tenant1");
        assert_eq!(validate_request(&req, &w.reg, 10).rule_violated, Some(Rule::R2));
        let reordered = validate_request_with_order(&req, &w.reg, 10, &[Rule::R6a, Rule::R2]);
        assert_eq!(reordered.rule_violated, Some(Rule::R6a));
    }
}
