//! Site bootstrap utility.
//!
//! Creates the secrets a site needs before any service starts: one RSA
//! signing key per owned tenant, a password per service, database
//! credentials and auxiliary service secrets. Runs are idempotent; existing
//! secrets are skipped unless they match the replace pattern.

mod export;
mod order;

use std::collections::{BTreeMap, BTreeSet};

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use fedsec_core::registry::{RegistryDocument, CORE_SERVICES};
use fedsec_core::secrets::{service_password_path, signing_key_path, SecretCategory, SecretPath, SecretValue, SecretsError, SecretsStore};
use fedsec_core::token::{generate_key, private_key_pem, public_key_from_pem, public_key_pem};
use fedsec_core::Caller;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use export::{decrypt_export, export_secrets, ExportArtifact, ExportTarget, SecretDocument};
pub use order::{check_deployment_order, DeployStep, OrderViolation, SiteKind};

/// Metadata key holding the public half of a stored signing key.
pub const PUBLIC_KEY_META: &str = "public_key";
pub const PASSWORD_BYTES: usize = 32;

#[derive(Debug, Error)]
pub enum AdminError {
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("secrets store unreachable: {0}")]
    StoreUnreachable(String),
    #[error("export failed: {0}")]
    ExportFailed(String),
    #[error("site `{0}` already has an exchanged key")]
    DuplicateSite(String),
    #[error(transparent)]
    Order(#[from] OrderViolation),
    #[error("secrets store error: {0}")]
    Store(SecretsError),
}

impl AdminError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            AdminError::ConfigInvalid(_) | AdminError::DuplicateSite(_) => 2,
            AdminError::StoreUnreachable(_) => 3,
            AdminError::Order(_) => 4,
            AdminError::ExportFailed(_) | AdminError::Store(_) => 1,
        }
    }
}

impl From<SecretsError> for AdminError {
    fn from(e: SecretsError) -> Self {
        match e {
            SecretsError::Unavailable(m) => AdminError::StoreUnreachable(m),
            other => AdminError::Store(other),
        }
    }
}

pub type AdminResult<T> = Result<T, AdminError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpecKind {
    Database,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretSpec {
    pub kind: SpecKind,
    pub owner: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreConfig {
    pub path: String,
    pub master_key_file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub site_id: String,
    /// Federation layout; public keys may be blank.
    pub topology: RegistryDocument,
    pub services: Vec<String>,
    #[serde(default)]
    pub secret_specs: Vec<SecretSpec>,
    #[serde(default = "default_target")]
    pub export_target: ExportTarget,
    /// Primary only: exchanged public keys, by associate site then tenant.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub associate_keys: BTreeMap<String, BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<StoreConfig>,
}

fn default_target() -> ExportTarget {
    ExportTarget::EncryptedFile
}

impl BootstrapConfig {
    pub fn from_json(text: &str) -> AdminResult<Self> {
        serde_json::from_str(text).map_err(|e| AdminError::ConfigInvalid(e.to_string()))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn admin_tenant(&self) -> AdminResult<&str> {
        self.topology
            .sites
            .iter()
            .find(|s| s.site_id == self.site_id)
            .map(|s| s.admin_tenant.as_str())
            .ok_or_else(|| AdminError::ConfigInvalid(format!("site `{}` not in topology", self.site_id)))
    }

    pub fn is_primary(&self) -> bool {
        self.topology.sites.iter().any(|s| s.site_id == self.site_id && s.is_primary)
    }

    /// Tenants owned by this site, admin tenant included.
    pub fn tenants(&self) -> Vec<String> {
        self.topology.tenants.iter().filter(|t| t.owning_site == self.site_id).map(|t| t.tenant_id.clone()).collect()
    }

    pub fn validate(&self) -> AdminResult<()> {
        let bad = |m: String| Err(AdminError::ConfigInvalid(m));
        let admin = self.admin_tenant()?;
        if !self.tenants().iter().any(|t| t == admin) {
            return bad(format!("admin tenant `{admin}` is not owned by `{}`", self.site_id));
        }
        let services: BTreeSet<&str> = self.services.iter().map(String::as_str).collect();
        if services.len() != self.services.len() {
            return bad("duplicate service names".into());
        }
        for core in CORE_SERVICES {
            if !services.contains(core) {
                return bad(format!("services must include `{core}`"));
            }
        }
        for kind in [SpecKind::Database, SpecKind::Auxiliary] {
            if !self.secret_specs.iter().any(|s| s.kind == kind) {
                return bad(format!("secret_specs has no {kind:?} entry"));
            }
        }
        for s in &self.secret_specs {
            if s.name.is_empty() || s.name.contains('/') || !services.contains(s.owner.as_str()) {
                return bad(format!("bad secret spec {}/{}", s.owner, s.name));
            }
        }
        if !self.associate_keys.is_empty() && !self.is_primary() {
            return bad("only the primary holds exchanged associate keys".into());
        }
        Ok(())
    }

    /// Every path bootstrap manages, with what it generates there.
    pub fn expected_secrets(&self) -> AdminResult<Vec<(SecretPath, Generator)>> {
        let admin = self.admin_tenant()?.to_string();
        let mut out: Vec<(SecretPath, Generator)> =
            self.tenants().iter().map(|t| (signing_key_path(t), Generator::SigningKey)).collect();
        out.extend(self.services.iter().map(|s| (service_password_path(&admin, s), Generator::Password)));
        out.extend(
            self.secret_specs
                .iter()
                .map(|s| (SecretPath::new(&admin, SecretCategory::DbCredential, &s.owner, &s.name), Generator::Password)),
        );
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    SigningKey,
    Password,
}

impl Generator {
    fn generate(self) -> SecretValue {
        match self {
            Generator::SigningKey => {
                let key = generate_key();
                SecretValue::new(private_key_pem(&key)).with_metadata(PUBLIC_KEY_META, &public_key_pem(&key.to_public_key()))
            }
            Generator::Password => SecretValue::new(generate_password()),
        }
    }
}

/// 32 random bytes, base64url without padding.
pub fn generate_password() -> String {
    let mut bytes = [0u8; PASSWORD_BYTES];
    rand::rngs::OsRng.fill_bytes(&mut bytes);
    URL_SAFE_NO_PAD.encode(bytes)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub created: Vec<SecretPath>,
    pub skipped: Vec<SecretPath>,
    pub replaced: Vec<SecretPath>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Ensures every expected secret exists. Secrets whose key
/// (`tenant/category/owner/name`) matches `replace` are regenerated.
pub fn run_bootstrap(config: &BootstrapConfig, store: &SecretsStore, replace: Option<&str>) -> AdminResult<BootstrapReport> {
    config.validate()?;
    let pattern = replace
        .map(glob::Pattern::new)
        .transpose()
        .map_err(|e| AdminError::ConfigInvalid(format!("bad replace pattern: {e}")))?;
    store.ping()?;
    for t in config.tenants() {
        store.add_site_tenant(&t);
    }
    let mut report = BootstrapReport::default();
    for (path, generator) in config.expected_secrets()? {
        let exists = store.exists(&path, &Caller::Bootstrap)?;
        let replacing = exists && pattern.as_ref().is_some_and(|p| p.matches(&path.key()));
        if exists && !replacing {
            report.skipped.push(path);
            continue;
        }
        store.write_secret(&path, generator.generate(), &Caller::Bootstrap)?;
        if replacing {
            if path.category == SecretCategory::DbCredential {
                report.warnings.push(format!("{} replaced; services using it need a coordinated restart", path.key()));
            }
            report.replaced.push(path);
        } else {
            report.created.push(path);
        }
    }
    Ok(report)
}

/// Registry document with public keys filled in from the store and from
/// exchanged associate keys.
pub fn render_registry(config: &BootstrapConfig, store: &SecretsStore) -> AdminResult<RegistryDocument> {
    config.validate()?;
    let mut doc = config.topology.clone();
    let own: BTreeSet<String> = config.tenants().into_iter().collect();
    for t in doc.tenants.iter_mut() {
        if own.contains(&t.tenant_id) {
            let v = store.read_secret(&signing_key_path(&t.tenant_id), &Caller::Bootstrap).map_err(|e| match e {
                SecretsError::NotFound(_) => AdminError::ExportFailed(format!("no signing key for `{}`; run bootstrap first", t.tenant_id)),
                other => other.into(),
            })?;
            t.public_key = v.metadata.get(PUBLIC_KEY_META).cloned().unwrap_or_default();
        } else if let Some(pem) = config.associate_keys.get(&t.owning_site).and_then(|m| m.get(&t.tenant_id)) {
            t.public_key = pem.clone();
        }
    }
    Ok(doc)
}

/// Adds an associate's public keys to the primary's configuration. The
/// associate's admin tenant key is required; other tenant keys are optional.
pub fn exchange_associate_key(primary: &mut BootstrapConfig, assoc_site: &str, keys: BTreeMap<String, String>) -> AdminResult<()> {
    if !primary.is_primary() {
        return Err(AdminError::ConfigInvalid("key exchange targets the primary's configuration".into()));
    }
    let site = primary
        .topology
        .sites
        .iter()
        .find(|s| s.site_id == assoc_site && !s.is_primary)
        .ok_or_else(|| AdminError::ConfigInvalid(format!("`{assoc_site}` is not an associate site")))?;
    if primary.associate_keys.contains_key(assoc_site) {
        return Err(AdminError::DuplicateSite(assoc_site.to_string()));
    }
    if !keys.contains_key(&site.admin_tenant) {
        return Err(AdminError::ConfigInvalid(format!("missing key for admin tenant `{}`", site.admin_tenant)));
    }
    for (tenant, pem) in &keys {
        let owned = primary.topology.tenants.iter().any(|t| t.tenant_id == *tenant && t.owning_site == assoc_site);
        if !owned {
            return Err(AdminError::ConfigInvalid(format!("`{tenant}` is not owned by `{assoc_site}`")));
        }
        public_key_from_pem(pem).map_err(|e| AdminError::ConfigInvalid(format!("key for `{tenant}`: {e}")))?;
    }
    primary.associate_keys.insert(assoc_site.to_string(), keys);
    Ok(())
}

/// Public keys of every tenant this site owns, for sending to the primary.
pub fn public_keys_for_exchange(config: &BootstrapConfig, store: &SecretsStore) -> AdminResult<BTreeMap<String, String>> {
    let doc = render_registry(config, store)?;
    Ok(doc
        .tenants
        .into_iter()
        .filter(|t| t.owning_site == config.site_id)
        .map(|t| (t.tenant_id, t.public_key))
        .collect())
}
