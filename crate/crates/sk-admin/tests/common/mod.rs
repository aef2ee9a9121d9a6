#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use fedsec_core::registry::{RegistryDocument, SiteConfig, TenantRecord};
use fedsec_core::secrets::{MasterKey, MemoryBackend, SecretsStore};
use sk_admin::{BootstrapConfig, ExportTarget, SecretSpec, SpecKind};

pub fn site(id: &str, primary: bool, services: &[&str]) -> SiteConfig {
    SiteConfig {
        site_id: id.into(),
        is_primary: primary,
        admin_tenant: format!("{id}-admin"),
        services: services.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>(),
        base_host: format!("{id}.example.org"),
    }
}

pub fn tenant(id: &str, site: &str, admin: bool) -> TenantRecord {
    TenantRecord {
        tenant_id: id.into(),
        owning_site: site.into(),
        base_url: format!("https://{id}.example.org"),
        public_key: String::new(),
        token_service_url: format!("https://{id}.example.org/v3/tokens"),
        is_admin_tenant: admin,
    }
}

pub const PRIMARY_SERVICES: [&str; 7] = ["tokens", "authenticator", "security-kernel", "tenants", "jobs", "systems", "files"];
pub const ASSOC_SERVICES: [&str; 4] = ["tokens", "authenticator", "security-kernel", "systems"];

pub fn topology() -> RegistryDocument {
    RegistryDocument {
        sites: vec![site("primary", true, &PRIMARY_SERVICES), site("assoc1", false, &ASSOC_SERVICES)],
        tenants: vec![
            tenant("primary-admin", "primary", true),
            tenant("assoc1-admin", "assoc1", true),
            tenant("tacc", "primary", false),
            tenant("tenant1", "assoc1", false),
        ],
        schemas: vec![],
    }
}

pub fn config(site_id: &str) -> BootstrapConfig {
    let services = if site_id == "primary" { &PRIMARY_SERVICES[..] } else { &ASSOC_SERVICES[..] };
    BootstrapConfig {
        site_id: site_id.into(),
        topology: topology(),
        services: services.iter().map(|s| s.to_string()).collect(),
        secret_specs: vec![
            SecretSpec { kind: SpecKind::Database, owner: "systems".into(), name: "postgres".into() },
            SecretSpec { kind: SpecKind::Auxiliary, owner: "authenticator".into(), name: "ldap-bind".into() },
        ],
        export_target: ExportTarget::EncryptedFile,
        associate_keys: Default::default(),
        store: None,
    }
}

pub fn store(config: &BootstrapConfig) -> SecretsStore {
    SecretsStore::new(&config.site_id, config.admin_tenant().unwrap(), Arc::new(MemoryBackend::new()), MasterKey::generate())
}
