//! Federation topology: sites, tenants, service placement and public keys.
//!
//! The registry is loaded from a JSON document and validated before use.
//! Readers take an `Arc` snapshot; updates build a new snapshot and swap it in.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::RwLock;
use rsa::RsaPublicKey;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::Caller;
use crate::perm::{SchemaRegistry, SchemaRule};
use crate::token::{public_key_from_pem, public_key_pem, KeyLookup};

/// Associates re-read the registry this often.
pub const REFRESH_INTERVAL_SECS: u64 = 300;

pub const CORE_SERVICES: [&str; 3] = ["tokens", "authenticator", "security-kernel"];
pub const TENANTS_SERVICE: &str = "tenants";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("invalid registry: {0}")]
    Invalid(String),
    #[error("duplicate tenant `{0}`")]
    DuplicateTenant(String),
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("unknown tenant `{0}`")]
    UnknownTenant(String),
    #[error("not authorized: {0}")]
    NotAuthorized(String),
    #[error("bad public key for `{0}`")]
    BadKey(String),
}

pub type RegistryResult<T> = Result<T, RegistryError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site_id: String,
    pub is_primary: bool,
    pub admin_tenant: String,
    pub services: BTreeSet<String>,
    pub base_host: String,
}

impl SiteConfig {
    pub fn runs(&self, service: &str) -> bool {
        self.services.contains(service)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TenantRecord {
    pub tenant_id: String,
    pub owning_site: String,
    pub base_url: String,
    /// SPKI PEM. Empty until the site's keys have been generated.
    #[serde(default)]
    pub public_key: String,
    pub token_service_url: String,
    #[serde(default)]
    pub is_admin_tenant: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryDocument {
    pub sites: Vec<SiteConfig>,
    pub tenants: Vec<TenantRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schemas: Vec<SchemaRule>,
}

impl RegistryDocument {
    pub fn from_json(text: &str) -> RegistryResult<Self> {
        serde_json::from_str(text).map_err(|e| RegistryError::Invalid(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }
}

/// Host component of a base URL, lowercased.
pub fn host_of(base_url: &str) -> Option<String> {
    let parsed = url::Url::parse(base_url)
        .or_else(|_| url::Url::parse(&format!("https://{base_url}")))
        .ok()?;
    let host = parsed.host_str()?.to_ascii_lowercase();
    Some(match parsed.port() {
        Some(p) => format!("{host}:{p}"),
        None => host,
    })
}

/// Validated, immutable view of the registry.
#[derive(Debug)]
pub struct RegistrySnapshot {
    doc: RegistryDocument,
    sites: BTreeMap<String, SiteConfig>,
    tenants: BTreeMap<String, TenantRecord>,
    keys: HashMap<String, RsaPublicKey>,
    hosts: HashMap<String, String>,
    schemas: SchemaRegistry,
    primary: String,
    loaded_at: u64,
}

impl RegistrySnapshot {
    pub fn load(doc: RegistryDocument, loaded_at: u64) -> RegistryResult<Self> {
        let invalid = |m: String| Err(RegistryError::Invalid(m));
        let mut sites = BTreeMap::new();
        for s in &doc.sites {
            if s.site_id.is_empty() || sites.insert(s.site_id.clone(), s.clone()).is_some() {
                return invalid(format!("duplicate or empty site id `{}`", s.site_id));
            }
        }
        let primaries: Vec<_> = sites.values().filter(|s| s.is_primary).collect();
        if primaries.len() != 1 {
            return invalid(format!("expected exactly one primary site, found {}", primaries.len()));
        }
        let primary = primaries[0].clone();
        let mut base_hosts = BTreeSet::new();
        for s in sites.values() {
            for core in CORE_SERVICES {
                if !s.runs(core) {
                    return invalid(format!("site `{}` lacks `{core}`", s.site_id));
                }
            }
            if !s.is_primary && s.runs(TENANTS_SERVICE) {
                return invalid(format!("associate `{}` runs the tenants service", s.site_id));
            }
            if let Some(missing) = s.services.iter().find(|svc| !primary.runs(svc)) {
                return invalid(format!("primary does not run `{missing}` deployed at `{}`", s.site_id));
            }
            if !base_hosts.insert(s.base_host.to_ascii_lowercase()) {
                return invalid(format!("duplicate base host `{}`", s.base_host));
            }
        }
        if !primary.runs(TENANTS_SERVICE) {
            return invalid("primary does not run the tenants service".into());
        }

        let mut tenants = BTreeMap::new();
        let mut keys = HashMap::new();
        let mut hosts = HashMap::new();
        for t in &doc.tenants {
            if t.tenant_id.is_empty() || t.tenant_id.contains('@') {
                return invalid(format!("bad tenant id `{}`", t.tenant_id));
            }
            if tenants.contains_key(&t.tenant_id) {
                return Err(RegistryError::DuplicateTenant(t.tenant_id.clone()));
            }
            if !sites.contains_key(&t.owning_site) {
                return Err(RegistryError::UnknownSite(t.owning_site.clone()));
            }
            let host = host_of(&t.base_url).ok_or_else(|| RegistryError::Invalid(format!("bad base url `{}`", t.base_url)))?;
            if hosts.insert(host, t.tenant_id.clone()).is_some() {
                return invalid(format!("duplicate base url `{}`", t.base_url));
            }
            if !t.public_key.is_empty() {
                let key = public_key_from_pem(&t.public_key).map_err(|_| RegistryError::BadKey(t.tenant_id.clone()))?;
                keys.insert(t.tenant_id.clone(), key);
            }
            tenants.insert(t.tenant_id.clone(), t.clone());
        }
        for s in sites.values() {
            match tenants.get(&s.admin_tenant) {
                Some(t) if t.is_admin_tenant && t.owning_site == s.site_id => {}
                _ => return invalid(format!("admin tenant `{}` of `{}` is missing or not flagged", s.admin_tenant, s.site_id)),
            }
        }
        if let Some(t) = tenants.values().find(|t| t.is_admin_tenant && sites[&t.owning_site].admin_tenant != t.tenant_id) {
            return invalid(format!("`{}` is flagged admin but is not its site's admin tenant", t.tenant_id));
        }

        let schemas = if doc.schemas.is_empty() {
            SchemaRegistry::standard()
        } else {
            SchemaRegistry::from_rules(doc.schemas.clone()).map_err(|e| RegistryError::Invalid(e.to_string()))?
        };

        Ok(RegistrySnapshot { primary: primary.site_id, doc, sites, tenants, keys, hosts, schemas, loaded_at })
    }

    pub fn document(&self) -> &RegistryDocument {
        &self.doc
    }

    pub fn loaded_at(&self) -> u64 {
        self.loaded_at
    }

    pub fn is_stale(&self, now: u64) -> bool {
        now.saturating_sub(self.loaded_at) >= REFRESH_INTERVAL_SECS
    }

    pub fn schemas(&self) -> &SchemaRegistry {
        &self.schemas
    }

    pub fn primary(&self) -> &SiteConfig {
        &self.sites[&self.primary]
    }

    pub fn sites(&self) -> impl Iterator<Item = &SiteConfig> {
        self.sites.values()
    }

    pub fn site(&self, site_id: &str) -> RegistryResult<&SiteConfig> {
        self.sites.get(site_id).ok_or_else(|| RegistryError::UnknownSite(site_id.to_string()))
    }

    pub fn tenants(&self) -> impl Iterator<Item = &TenantRecord> {
        self.tenants.values()
    }

    pub fn tenant(&self, tenant_id: &str) -> RegistryResult<&TenantRecord> {
        self.tenants.get(tenant_id).ok_or_else(|| RegistryError::UnknownTenant(tenant_id.to_string()))
    }

    pub fn tenants_of(&self, site_id: &str) -> Vec<&TenantRecord> {
        self.tenants.values().filter(|t| t.owning_site == site_id).collect()
    }

    pub fn get_public_key(&self, tenant_id: &str) -> RegistryResult<&RsaPublicKey> {
        self.tenant(tenant_id)?;
        self.keys.get(tenant_id).ok_or_else(|| RegistryError::UnknownTenant(tenant_id.to_string()))
    }

    pub fn resolve_site_for_tenant(&self, tenant_id: &str) -> RegistryResult<&SiteConfig> {
        let t = self.tenant(tenant_id)?;
        self.site(&t.owning_site)
    }

    pub fn service_runs_at(&self, service: &str, site_id: &str) -> RegistryResult<bool> {
        Ok(self.site(site_id)?.runs(service))
    }

    pub fn is_admin_tenant(&self, tenant_id: &str) -> bool {
        self.sites.values().any(|s| s.admin_tenant == tenant_id)
    }

    pub fn tenant_by_host(&self, host_or_url: &str) -> Option<&TenantRecord> {
        let host = host_of(host_or_url)?;
        self.hosts.get(&host).and_then(|t| self.tenants.get(t))
    }

    /// Every service deployed anywhere.
    pub fn known_services(&self) -> &BTreeSet<String> {
        &self.primary().services
    }
}

impl KeyLookup for RegistrySnapshot {
    fn verification_key(&self, tenant: &str) -> Option<RsaPublicKey> {
        self.keys.get(tenant).cloned()
    }
}

/// Shared, swappable registry.
pub struct RegistryHandle {
    current: RwLock<Arc<RegistrySnapshot>>,
}

impl RegistryHandle {
    pub fn new(snapshot: RegistrySnapshot) -> Self {
        RegistryHandle { current: RwLock::new(Arc::new(snapshot)) }
    }

    pub fn from_document(doc: RegistryDocument, now: u64) -> RegistryResult<Self> {
        Ok(Self::new(RegistrySnapshot::load(doc, now)?))
    }

    pub fn snapshot(&self) -> Arc<RegistrySnapshot> {
        self.current.read().clone()
    }

    /// Replaces the whole view, e.g. after an associate's periodic refresh.
    pub fn replace(&self, doc: RegistryDocument, now: u64) -> RegistryResult<()> {
        let next = RegistrySnapshot::load(doc, now)?;
        *self.current.write() = Arc::new(next);
        Ok(())
    }

    fn mutate(&self, f: impl FnOnce(&RegistrySnapshot, &mut RegistryDocument) -> RegistryResult<()>) -> RegistryResult<()> {
        let mut guard = self.current.write();
        let mut doc = guard.doc.clone();
        f(&guard, &mut doc)?;
        let next = RegistrySnapshot::load(doc, guard.loaded_at)?;
        *guard = Arc::new(next);
        Ok(())
    }

    fn authorize(snap: &RegistrySnapshot, owning_site: &str, caller: &Caller) -> RegistryResult<()> {
        match caller {
            Caller::Bootstrap => Ok(()),
            Caller::Operator { site } if *site == snap.primary || site == owning_site => Ok(()),
            _ => Err(RegistryError::NotAuthorized("tenant changes need an operator of the primary or owning site".into())),
        }
    }

    pub fn register_tenant(&self, record: TenantRecord, caller: &Caller) -> RegistryResult<()> {
        self.mutate(|snap, doc| {
            if snap.tenants.contains_key(&record.tenant_id) {
                return Err(RegistryError::DuplicateTenant(record.tenant_id.clone()));
            }
            if !snap.sites.contains_key(&record.owning_site) {
                return Err(RegistryError::UnknownSite(record.owning_site.clone()));
            }
            Self::authorize(snap, &record.owning_site, caller)?;
            if record.is_admin_tenant {
                return Err(RegistryError::NotAuthorized("admin tenants enter through key exchange".into()));
            }
            doc.tenants.push(record);
            Ok(())
        })
    }

    /// Installs or rotates a tenant's verification key.
    pub fn set_public_key(&self, tenant_id: &str, key: &RsaPublicKey, caller: &Caller) -> RegistryResult<()> {
        let pem = public_key_pem(key);
        self.mutate(|snap, doc| {
            let owner = snap.tenant(tenant_id)?.owning_site.clone();
            Self::authorize(snap, &owner, caller)?;
            let t = doc.tenants.iter_mut().find(|t| t.tenant_id == tenant_id).expect("present in snapshot");
            t.public_key = pem;
            Ok(())
        })
    }

    pub fn remove_tenant(&self, tenant_id: &str, caller: &Caller) -> RegistryResult<()> {
        self.mutate(|snap, doc| {
            let owner = snap.tenant(tenant_id)?.owning_site.clone();
            Self::authorize(snap, &owner, caller)?;
            if snap.is_admin_tenant(tenant_id) {
                return Err(RegistryError::NotAuthorized("admin tenants cannot be removed".into()));
            }
            doc.tenants.retain(|t| t.tenant_id != tenant_id);
            Ok(())
        })
    }
}

impl KeyLookup for RegistryHandle {
    fn verification_key(&self, tenant: &str) -> Option<RsaPublicKey> {
        self.snapshot().verification_key(tenant)
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn load_and_query() {
        let snap = RegistrySnapshot::load(document(), 0).unwrap();
        assert_eq!(snap.primary().site_id, "primary");
        assert_eq!(snap.resolve_site_for_tenant("tenant1").unwrap().site_id, "assoc1");
        assert_eq!(snap.resolve_site_for_tenant("primary-admin").unwrap().site_id, "primary");
        assert!(snap.service_runs_at("security-kernel", "assoc1").unwrap());
        assert!(!snap.service_runs_at("jobs", "assoc1").unwrap());
        assert!(!snap.service_runs_at("tenants", "assoc1").unwrap());
        assert!(matches!(snap.service_runs_at("jobs", "mars"), Err(RegistryError::UnknownSite(_))));
        assert!(matches!(snap.get_public_key("nobody"), Err(RegistryError::UnknownTenant(_))));
        assert_eq!(snap.tenant_by_host("https://tenant1.assoc1.example.org/v3/x").unwrap().tenant_id, "tenant1");
        assert_eq!(snap.tenant_by_host("TENANT1.assoc1.example.org").unwrap().tenant_id, "tenant1");
        assert!(snap.is_admin_tenant("assoc2-admin"));
        assert!(!snap.is_admin_tenant("tacc"));
    }

    #[test]
    fn invalid_topologies_rejected() {
        let mut two_primaries = document();
        two_primaries.sites[1].is_primary = true;
        assert!(RegistrySnapshot::load(two_primaries, 0).is_err());

        let mut no_sk = document();
        no_sk.sites[2].services.remove("security-kernel");
        assert!(RegistrySnapshot::load(no_sk, 0).is_err());

        let mut assoc_tenants = document();
        assoc_tenants.sites[1].services.insert("tenants".into());
        assert!(RegistrySnapshot::load(assoc_tenants, 0).is_err());

        let mut beyond_primary = document();
        beyond_primary.sites[1].services.insert("gizmo".into());
        assert!(RegistrySnapshot::load(beyond_primary, 0).is_err());

        let mut no_admin = document();
        no_admin.tenants.retain(|t| t.tenant_id != "assoc1-admin");
        assert!(RegistrySnapshot::load(no_admin, 0).is_err());

        let mut dup_url = document();
        dup_url.tenants[4].base_url = dup_url.tenants[3].base_url.clone();
        assert!(RegistrySnapshot::load(dup_url, 0).is_err());

        let mut dup = document();
        dup.tenants.push(tenant("tacc", "assoc1", false));
        assert!(matches!(RegistrySnapshot::load(dup, 0), Err(RegistryError::DuplicateTenant(_))));
    }

    #[test]
    fn registration_and_keys() {
        let h = RegistryHandle::from_document(document(), 0).unwrap();
        let op = Caller::Operator { site: "primary".into() };
        h.register_tenant(tenant("new", "assoc2", false), &op).unwrap();
        assert!(h.snapshot().tenant("new").is_ok());
        assert!(matches!(h.register_tenant(tenant("new", "assoc2", false), &op), Err(RegistryError::DuplicateTenant(_))));
        assert!(matches!(h.register_tenant(tenant("x", "mars", false), &op), Err(RegistryError::UnknownSite(_))));
        let other = Caller::Operator { site: "assoc1".into() };
        assert!(matches!(h.register_tenant(tenant("y", "assoc2", false), &other), Err(RegistryError::NotAuthorized(_))));
        assert!(h.register_tenant(tenant("y", "assoc1", false), &other).is_ok());
        assert!(h.register_tenant(tenant("z", "assoc1", false), &Caller::user("bob", "tacc")).is_err());

        let k1 = crate::token::test_keys::pool()[0].to_public_key();
        let k2 = crate::token::test_keys::pool()[1].to_public_key();
        h.set_public_key("new", &k1, &op).unwrap();
        assert_eq!(h.snapshot().get_public_key("new").unwrap(), &k1);
        h.set_public_key("new", &k2, &op).unwrap();
        assert_eq!(h.snapshot().get_public_key("new").unwrap(), &k2);

        h.remove_tenant("new", &op).unwrap();
        assert!(matches!(h.snapshot().resolve_site_for_tenant("new"), Err(RegistryError::UnknownTenant(_))));
    }

    #[test]
    fn snapshots_are_deterministic_and_age() {
        let text = document().to_json_pretty();
        let a = RegistrySnapshot::load(RegistryDocument::from_json(&text).unwrap(), 0).unwrap();
        let b = RegistrySnapshot::load(RegistryDocument::from_json(&text).unwrap(), 0).unwrap();
        for t in a.tenants() {
            assert_eq!(a.resolve_site_for_tenant(&t.tenant_id).unwrap(), b.resolve_site_for_tenant(&t.tenant_id).unwrap());
            for s in a.sites() {
                for svc in a.known_services() {
                    assert_eq!(a.service_runs_at(svc, &s.site_id), b.service_runs_at(svc, &s.site_id));
                }
            }
        }
        assert!(!a.is_stale(REFRESH_INTERVAL_SECS - 1));
        assert!(a.is_stale(REFRESH_INTERVAL_SECS));
    }
}
