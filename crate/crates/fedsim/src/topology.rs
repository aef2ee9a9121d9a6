//! Federation layout: sites, tenants, link delays and host allow-tables.

use std::collections::{BTreeMap, BTreeSet};

use fedsec_core::registry::{RegistryDocument, RegistrySnapshot, SiteConfig, TenantRecord, TENANTS_SERVICE};
use serde::{Deserialize, Serialize};
use sk_admin::{BootstrapConfig, ExportTarget, SecretSpec, SpecKind};

use crate::{FedsimError, Result};

/// One-way delay between two sites, applied in each direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: String,
    pub b: String,
    pub ms: f64,
}

/// A login allowed by a host below `path`; `write` also allows writes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    pub login: String,
    pub path: String,
    #[serde(default)]
    pub write: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub sites: Vec<SiteConfig>,
    pub tenants: Vec<TenantRecord>,
    #[serde(default)]
    pub link_latency: Vec<Link>,
    /// Per system id. Systems without a table accept every login.
    #[serde(default)]
    pub host_acl: BTreeMap<String, Vec<AclEntry>>,
    /// Users given the tenant-admin role at start-up, by tenant.
    #[serde(default)]
    pub tenant_admins: BTreeMap<String, Vec<String>>,
}

fn under(path: &str, prefix: &str) -> bool {
    let seg = |p: &str| p.split('/').filter(|s| !s.is_empty()).map(String::from).collect::<Vec<_>>();
    seg(path).starts_with(&seg(prefix))
}

impl Topology {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Topology = serde_json::from_str(text).map_err(|e| FedsimError::TopologyInvalid(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FedsimError::TopologyInvalid(m));
        let primaries: Vec<&SiteConfig> = self.sites.iter().filter(|s| s.is_primary).collect();
        if primaries.len() != 1 {
            return bad(format!("expected one primary site, found {}", primaries.len()));
        }
        let primary = primaries[0].site_id.as_str();
        if let Some(s) = self.sites.iter().find(|s| !s.is_primary && s.runs(TENANTS_SERVICE)) {
            return bad(format!("associate `{}` lists the tenants service", s.site_id));
        }
        let ids: BTreeSet<&str> = self.sites.iter().map(|s| s.site_id.as_str()).collect();
        let mut seen: BTreeMap<(String, String), f64> = BTreeMap::new();
        for l in &self.link_latency {
            if !ids.contains(l.a.as_str()) || !ids.contains(l.b.as_str()) {
                return bad(format!("link {}-{} names an unknown site", l.a, l.b));
            }
            if l.a == l.b {
                return bad(format!("link from {} to itself", l.a));
            }
            if l.a != primary && l.b != primary {
                return bad(format!("associates {} and {} may only link to the primary", l.a, l.b));
            }
            if !(l.ms.is_finite() && l.ms >= 0.0) {
                return bad(format!("link {}-{} has delay {}", l.a, l.b, l.ms));
            }
            for key in [(l.a.clone(), l.b.clone()), (l.b.clone(), l.a.clone())] {
                if let Some(prev) = seen.insert(key, l.ms) {
                    if prev != l.ms {
                        return bad(format!("link {}-{} is not symmetric ({prev} vs {})", l.a, l.b, l.ms));
                    }
                }
            }
        }
        for (system, entries) in &self.host_acl {
            if let Some(e) = entries.iter().find(|e| e.login.is_empty() || !e.path.starts_with('/')) {
                return bad(format!("host acl for {system}: bad entry {e:?}"));
            }
        }
        for tenant in self.tenant_admins.keys() {
            if !self.tenants.iter().any(|t| &t.tenant_id == tenant) {
                return bad(format!("admins listed for unknown tenant {tenant}"));
            }
        }
        RegistrySnapshot::load(self.registry_document(), 0).map_err(|e| FedsimError::TopologyInvalid(e.to_string()))?;
        Ok(())
    }

    pub fn primary(&self) -> &SiteConfig {
        self.sites.iter().find(|s| s.is_primary).expect("validated topology has a primary")
    }

    pub fn site(&self, id: &str) -> Option<&SiteConfig> {
        self.sites.iter().find(|s| s.site_id == id)
    }

    pub fn owning_site(&self, tenant: &str) -> Option<&str> {
        self.tenants.iter().find(|t| t.tenant_id == tenant).map(|t| t.owning_site.as_str())
    }

    /// One-way delay in milliseconds; zero when no link is configured.
    pub fn latency(&self, a: &str, b: &str) -> f64 {
        self.link_latency
            .iter()
            .find(|l| (l.a == a && l.b == b) || (l.a == b && l.b == a))
            .map_or(0.0, |l| l.ms)
    }

    pub fn host_allows(&self, system: &str, login: &str, path: &str, write: bool) -> bool {
        match self.host_acl.get(system) {
            None => true,
            Some(entries) => entries.iter().any(|e| e.login == login && under(path, &e.path) && (e.write || !write)),
        }
    }

    /// Registry layout with blank public keys.
    pub fn registry_document(&self) -> RegistryDocument {
        RegistryDocument { sites: self.sites.clone(), tenants: self.tenants.clone(), schemas: vec![] }
    }

    pub fn bootstrap_config(&self, site_id: &str) -> Result<BootstrapConfig> {
        let site = self.site(site_id).ok_or_else(|| FedsimError::TopologyInvalid(format!("unknown site {site_id}")))?;
        Ok(BootstrapConfig {
            site_id: site_id.into(),
            topology: self.registry_document(),
            services: site.services.iter().cloned().collect(),
            secret_specs: vec![
                SecretSpec { kind: SpecKind::Database, owner: "security-kernel".into(), name: "postgres".into() },
                SecretSpec { kind: SpecKind::Auxiliary, owner: "authenticator".into(), name: "ldap-bind".into() },
            ],
            export_target: ExportTarget::EncryptedFile,
            associate_keys: BTreeMap::new(),
            store: None,
        })
    }

    /// One primary running everything and one associate running the core
    /// services plus Systems, 132.5 ms apart.
    pub fn canonical() -> Self {
        let site = |id: &str, primary: bool, services: &[&str]| SiteConfig {
            site_id: id.into(),
            is_primary: primary,
            admin_tenant: format!("{id}-admin"),
            services: services.iter().map(|s| s.to_string()).collect(),
            base_host: format!("{id}.fedsim"),
        };
        let tenant = |id: &str, site: &str, admin: bool| TenantRecord {
            tenant_id: id.into(),
            owning_site: site.into(),
            base_url: format!("https://{id}.{site}.fedsim"),
            public_key: String::new(),
            token_service_url: format!("https://{id}.{site}.fedsim/v3/tokens"),
            is_admin_tenant: admin,
        };
        let acl = |rows: &[(&str, &str, bool)]| {
            rows.iter().map(|(login, path, write)| AclEntry { login: login.to_string(), path: path.to_string(), write: *write }).collect()
        };
        Topology {
            sites: vec![
                site("primary", true, &["tokens", "authenticator", "security-kernel", "tenants", "apps", "systems", "files", "jobs"]),
                site("assoc1", false, &["tokens", "authenticator", "security-kernel", "systems"]),
            ],
            tenants: vec![
                tenant("primary-admin", "primary", true),
                tenant("tacc", "primary", false),
                tenant("dev", "primary", false),
                tenant("assoc1-admin", "assoc1", true),
                tenant("tenant1", "assoc1", false),
            ],
            link_latency: vec![Link { a: "primary".into(), b: "assoc1".into(), ms: 132.5 }],
            host_acl: BTreeMap::from([
                ("execSys".to_string(), acl(&[("bob", "/scratch", true), ("alice", "/scratch", true)])),
                ("storeSys".to_string(), acl(&[("storeAdmin", "/data", false)])),
                ("arcSys".to_string(), acl(&[("bob", "/arcDir", true)])),
            ]),
            tenant_admins: BTreeMap::from([
                ("tacc".to_string(), vec!["admin".to_string()]),
                ("dev".to_string(), vec!["admin".to_string()]),
                ("tenant1".to_string(), vec!["admin".to_string()]),
            ]),
        }
    }
}
