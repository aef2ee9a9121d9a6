//! Tenant-segregated, versioned secrets in five categories.
//!
//! Values are sealed with XChaCha20-Poly1305 under the site master key before
//! they reach the backend; the backend only ever sees ciphertext. Each write
//! creates a new version and older versions stay readable when pinned.

mod backend;
mod policy;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit, OsRng, Payload};
use chacha20poly1305::{AeadCore, XChaCha20Poly1305, XNonce};
use parking_lot::RwLock;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use subtle::ConstantTimeEq;
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::identity::Caller;

pub use backend::{FileBackend, MemoryBackend, SecretsBackend};
pub use policy::{allowed, classify, Access, CallerClass};

/// Largest payload accepted by `write_secret`.
pub const MAX_PAYLOAD_BYTES: usize = 64 * 1024;
/// Versions retained per path before writes are refused.
pub const MAX_VERSIONS: u32 = 1000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SecretsError {
    #[error("secret not found: {0}")]
    NotFound(String),
    #[error("not authorized: {0}")]
    NotAuthorized(String),
    #[error("quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("secrets backend unavailable: {0}")]
    Unavailable(String),
    #[error("integrity failure for {0}")]
    Integrity(String),
    #[error("invalid secret path: {0}")]
    InvalidPath(String),
    #[error("archive error: {0}")]
    Archive(String),
}

pub type SecretsResult<T> = Result<T, SecretsError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecretCategory {
    ServicePassword,
    DbCredential,
    SystemCredential,
    SigningKey,
    UserSecret,
}

impl SecretCategory {
    pub const ALL: [SecretCategory; 5] = [
        SecretCategory::ServicePassword,
        SecretCategory::DbCredential,
        SecretCategory::SystemCredential,
        SecretCategory::SigningKey,
        SecretCategory::UserSecret,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SecretCategory::ServicePassword => "service-password",
            SecretCategory::DbCredential => "db-credential",
            SecretCategory::SystemCredential => "system-credential",
            SecretCategory::SigningKey => "signing-key",
            SecretCategory::UserSecret => "user-secret",
        }
    }
}

impl fmt::Display for SecretCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SecretCategory {
    type Err = SecretsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SecretCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SecretsError::InvalidPath(format!("unknown category `{s}`")))
    }
}

/// Location of a secret. `version: None` addresses the latest version.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SecretPath {
    pub tenant: String,
    pub category: SecretCategory,
    pub owner: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
}

impl SecretPath {
    pub fn new(tenant: &str, category: SecretCategory, owner: &str, name: &str) -> Self {
        SecretPath {
            tenant: tenant.into(),
            category,
            owner: owner.into(),
            name: name.into(),
            version: None,
        }
    }

    pub fn at_version(mut self, version: u32) -> Self {
        self.version = Some(version);
        self
    }

    pub fn unversioned(&self) -> SecretPath {
        SecretPath { version: None, ..self.clone() }
    }

    fn validate(&self) -> SecretsResult<()> {
        for (what, v) in [("tenant", &self.tenant), ("owner", &self.owner), ("name", &self.name)] {
            if v.is_empty() || v.contains('/') || v.contains('@') {
                return Err(SecretsError::InvalidPath(format!("bad {what} `{v}`")));
            }
        }
        if self.version == Some(0) {
            return Err(SecretsError::InvalidPath("versions start at 1".into()));
        }
        Ok(())
    }

    /// `tenant/category/owner/name`, without the version.
    pub fn key(&self) -> String {
        format!("{}/{}/{}/{}", self.tenant, self.category, self.owner, self.name)
    }

    fn version_key(&self, version: u32) -> String {
        format!("{}@v{version:010}", self.key())
    }
}

impl fmt::Display for SecretPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.version {
            Some(v) => write!(f, "{}@v{v}", self.key()),
            None => f.write_str(&self.key()),
        }
    }
}

/// A secret value. `Debug` never prints the payload.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretValue {
    #[serde(with = "b64")]
    pub payload: Vec<u8>,
    pub created_at: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl fmt::Debug for SecretValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretValue")
            .field("payload", &format_args!("<{} bytes>", self.payload.len()))
            .field("created_at", &self.created_at)
            .field("metadata", &self.metadata)
            .finish()
    }
}

impl SecretValue {
    pub fn new(payload: impl Into<Vec<u8>>) -> Self {
        SecretValue { payload: payload.into(), created_at: 0, metadata: BTreeMap::new() }
    }

    pub fn with_metadata(mut self, key: &str, value: &str) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }
}

pub(crate) mod b64 {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD.decode(s).map_err(serde::de::Error::custom)
    }
}

/// 32-byte symmetric key for sealing secrets or archives.
#[derive(Clone)]
pub struct MasterKey([u8; 32]);

impl MasterKey {
    pub fn generate() -> Self {
        let mut bytes = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        MasterKey(bytes)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        MasterKey(bytes)
    }

    pub fn from_base64(s: &str) -> SecretsResult<Self> {
        let raw = B64
            .decode(s.trim())
            .map_err(|_| SecretsError::InvalidPath("master key is not base64".into()))?;
        let bytes: [u8; 32] = raw
            .try_into()
            .map_err(|_| SecretsError::InvalidPath("master key must be 32 bytes".into()))?;
        Ok(MasterKey(bytes))
    }

    pub fn to_base64(&self) -> String {
        B64.encode(self.0)
    }

    fn cipher(&self) -> XChaCha20Poly1305 {
        XChaCha20Poly1305::new((&self.0).into())
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKey(<redacted>)")
    }
}

/// Sealed blob layout: 24-byte nonce followed by ciphertext+tag.
pub fn seal(key: &MasterKey, aad: &[u8], plaintext: &[u8]) -> Vec<u8> {
    let nonce = XChaCha20Poly1305::generate_nonce(&mut OsRng);
    let mut out = nonce.to_vec();
    let ct = key
        .cipher()
        .encrypt(&nonce, Payload { msg: plaintext, aad })
        .expect("encryption with a valid key does not fail");
    out.extend_from_slice(&ct);
    out
}

pub fn open(key: &MasterKey, aad: &[u8], sealed: &[u8]) -> Option<Vec<u8>> {
    if sealed.len() < 24 {
        return None;
    }
    let (nonce, ct) = sealed.split_at(24);
    key.cipher().decrypt(XNonce::from_slice(nonce), Payload { msg: ct, aad }).ok()
}

/// One secret version as it appears in a backup archive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchivedSecret {
    pub path: SecretPath,
    pub value: SecretValue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArchiveEnvelope {
    format: String,
    version: u32,
    scope: String,
    #[serde(with = "b64")]
    sealed: Vec<u8>,
}

const ARCHIVE_FORMAT: &str = "fedsec-secrets-archive";
const ARCHIVE_AAD: &[u8] = b"fedsec-secrets-archive/v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackupScope {
    Tenant(String),
    Site,
}

/// Decrypts an archive produced by [`SecretsStore::export_backup`].
pub fn decrypt_archive(bytes: &[u8], key: &MasterKey) -> SecretsResult<Vec<ArchivedSecret>> {
    let envelope: ArchiveEnvelope =
        serde_json::from_slice(bytes).map_err(|e| SecretsError::Archive(format!("bad envelope: {e}")))?;
    if envelope.format != ARCHIVE_FORMAT || envelope.version != 1 {
        return Err(SecretsError::Archive("unsupported archive format".into()));
    }
    let plain = open(key, ARCHIVE_AAD, &envelope.sealed)
        .ok_or_else(|| SecretsError::Archive("authentication failed".into()))?;
    let text = String::from_utf8(plain).map_err(|_| SecretsError::Archive("archive is not UTF-8".into()))?;
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| SecretsError::Archive(format!("bad record: {e}"))))
        .collect()
}

/// Site-local secrets store in front of a pluggable backend.
pub struct SecretsStore {
    site: String,
    admin_tenant: String,
    site_tenants: RwLock<BTreeSet<String>>,
    backend: Arc<dyn SecretsBackend>,
    key: MasterKey,
    clock: Arc<dyn Clock>,
    /// Writers take it exclusively; exports share it for a consistent snapshot.
    gate: RwLock<()>,
}

impl SecretsStore {
    pub fn new(site: &str, admin_tenant: &str, backend: Arc<dyn SecretsBackend>, key: MasterKey) -> Self {
        SecretsStore {
            site: site.into(),
            admin_tenant: admin_tenant.into(),
            site_tenants: RwLock::new(BTreeSet::from([admin_tenant.to_string()])),
            backend,
            key,
            clock: Arc::new(SystemClock),
            gate: RwLock::new(()),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn site(&self) -> &str {
        &self.site
    }

    pub fn admin_tenant(&self) -> &str {
        &self.admin_tenant
    }

    /// Tenants owned by this site; services may only touch these.
    pub fn add_site_tenant(&self, tenant: &str) {
        self.site_tenants.write().insert(tenant.into());
    }

    pub fn site_tenants(&self) -> BTreeSet<String> {
        self.site_tenants.read().clone()
    }

    pub fn ping(&self) -> SecretsResult<()> {
        self.backend.ping()
    }

    fn authorize(&self, caller: &Caller, path: &SecretPath, access: Access) -> SecretsResult<()> {
        let in_scope = match caller {
            Caller::Bootstrap | Caller::Operator { .. } => self.site_tenants.read().contains(&path.tenant),
            Caller::Service(id) => id.tenant == self.admin_tenant && self.site_tenants.read().contains(&path.tenant),
            Caller::User(id) => id.tenant == path.tenant,
        };
        let class = classify(caller, path);
        if in_scope && allowed(path.category, class, access) {
            Ok(())
        } else {
            Err(SecretsError::NotAuthorized(format!("{class:?} may not {access:?} {}", path.category)))
        }
    }

    fn versions(&self, path: &SecretPath) -> SecretsResult<Vec<u32>> {
        let prefix = format!("{}@v", path.key());
        let mut versions: Vec<u32> = self
            .backend
            .list(&prefix)?
            .iter()
            .filter_map(|k| k.strip_prefix(&prefix)?.parse().ok())
            .collect();
        versions.sort_unstable();
        Ok(versions)
    }

    fn load(&self, path: &SecretPath, version: u32) -> SecretsResult<Option<SecretValue>> {
        let key = path.version_key(version);
        let Some(sealed) = self.backend.get(&key)? else {
            return Ok(None);
        };
        let plain = open(&self.key, key.as_bytes(), &sealed).ok_or_else(|| SecretsError::Integrity(path.key()))?;
        serde_json::from_slice(&plain).map(Some).map_err(|_| SecretsError::Integrity(path.key()))
    }

    /// Stores `value` as the next version of `path` and returns that version.
    pub fn write_secret(&self, path: &SecretPath, mut value: SecretValue, caller: &Caller) -> SecretsResult<u32> {
        path.validate()?;
        self.authorize(caller, path, Access::Write)?;
        if value.payload.len() > MAX_PAYLOAD_BYTES {
            return Err(SecretsError::QuotaExceeded(format!("payload over {MAX_PAYLOAD_BYTES} bytes")));
        }
        let _guard = self.gate.write();
        let latest = self.versions(path)?.last().copied().unwrap_or(0);
        if latest >= MAX_VERSIONS {
            return Err(SecretsError::QuotaExceeded(format!("{} has {MAX_VERSIONS} versions", path.key())));
        }
        let version = latest + 1;
        if value.created_at == 0 {
            value.created_at = self.clock.now();
        }
        let key = path.version_key(version);
        let plain = serde_json::to_vec(&value).expect("secret values serialize");
        self.backend.put(&key, seal(&self.key, key.as_bytes(), &plain))?;
        Ok(version)
    }

    /// Reads the pinned version of `path`, or the latest when unpinned.
    pub fn read_secret(&self, path: &SecretPath, caller: &Caller) -> SecretsResult<SecretValue> {
        path.validate()?;
        self.authorize(caller, path, Access::Read)?;
        let _guard = self.gate.read();
        let version = match path.version {
            Some(v) => v,
            None => *self.versions(path)?.last().ok_or_else(|| SecretsError::NotFound(path.key()))?,
        };
        self.load(path, version)?.ok_or_else(|| SecretsError::NotFound(path.to_string()))
    }

    /// True when any version of `path` exists. Restricted to bootstrap.
    pub fn exists(&self, path: &SecretPath, caller: &Caller) -> SecretsResult<bool> {
        if *caller != Caller::Bootstrap {
            return Err(SecretsError::NotAuthorized("existence checks are a bootstrap operation".into()));
        }
        let _guard = self.gate.read();
        Ok(!self.versions(path)?.is_empty())
    }

    pub fn latest_version(&self, path: &SecretPath, caller: &Caller) -> SecretsResult<Option<u32>> {
        self.authorize(caller, path, Access::Read)?;
        let _guard = self.gate.read();
        Ok(self.versions(path)?.last().copied())
    }

    /// Constant-time check of a service password. Only the site's Tokens
    /// service may ask, and the stored value is never returned.
    pub fn validate_service_password(
        &self,
        service: &str,
        site: &str,
        candidate: &[u8],
        caller: &Caller,
    ) -> SecretsResult<bool> {
        let is_tokens = matches!(caller, Caller::Service(id) if id.username == "tokens" && id.tenant == self.admin_tenant);
        if !is_tokens || site != self.site {
            return Err(SecretsError::NotAuthorized("only the site's Tokens service validates service passwords".into()));
        }
        let path = service_password_path(&self.admin_tenant, service);
        let _guard = self.gate.read();
        let Some(latest) = self.versions(&path)?.last().copied() else {
            return Ok(false);
        };
        let stored = self.load(&path, latest)?.ok_or_else(|| SecretsError::NotFound(path.key()))?;
        Ok(stored.payload.ct_eq(candidate).into())
    }

    /// Snapshot of every version in `scope`, sealed under `archive_key`.
    pub fn export_backup(&self, scope: &BackupScope, caller: &Caller, archive_key: &MasterKey) -> SecretsResult<Vec<u8>> {
        if !matches!(caller, Caller::Operator { site } if *site == self.site) && *caller != Caller::Bootstrap {
            return Err(SecretsError::NotAuthorized("backups require an operator credential".into()));
        }
        let prefix = match scope {
            BackupScope::Tenant(t) => format!("{t}/"),
            BackupScope::Site => String::new(),
        };
        let records = {
            let _guard = self.gate.read();
            let mut records = Vec::new();
            for key in self.backend.list(&prefix)? {
                let sealed = self.backend.get(&key)?.ok_or_else(|| SecretsError::NotFound(key.clone()))?;
                let plain = open(&self.key, key.as_bytes(), &sealed).ok_or_else(|| SecretsError::Integrity(key.clone()))?;
                let value: SecretValue = serde_json::from_slice(&plain).map_err(|_| SecretsError::Integrity(key.clone()))?;
                records.push(ArchivedSecret { path: parse_version_key(&key)?, value });
            }
            records
        };
        let mut lines = String::new();
        for r in &records {
            lines.push_str(&serde_json::to_string(r).expect("records serialize"));
            lines.push('\n');
        }
        let envelope = ArchiveEnvelope {
            format: ARCHIVE_FORMAT.into(),
            version: 1,
            scope: match scope {
                BackupScope::Tenant(t) => format!("tenant:{t}"),
                BackupScope::Site => format!("site:{}", self.site),
            },
            sealed: seal(archive_key, ARCHIVE_AAD, lines.as_bytes()),
        };
        Ok(serde_json::to_vec(&envelope).expect("envelope serializes"))
    }
}

fn parse_version_key(key: &str) -> SecretsResult<SecretPath> {
    let bad = || SecretsError::Integrity(format!("unparseable key {key}"));
    let (base, version) = key.rsplit_once("@v").ok_or_else(bad)?;
    let mut it = base.split('/');
    let (Some(tenant), Some(category), Some(owner), Some(name), None) = (it.next(), it.next(), it.next(), it.next(), it.next())
    else {
        return Err(bad());
    };
    Ok(SecretPath::new(tenant, category.parse()?, owner, name).at_version(version.parse().map_err(|_| bad())?))
}

pub fn service_password_path(admin_tenant: &str, service: &str) -> SecretPath {
    SecretPath::new(admin_tenant, SecretCategory::ServicePassword, service, "password")
}

/// Where a tenant's private signing key lives.
pub fn signing_key_path(tenant: &str) -> SecretPath {
    SecretPath::new(tenant, SecretCategory::SigningKey, "tenant-key", "private-key")
}
