//! Export of bootstrapped secrets to a deployment destination.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use fedsec_core::secrets::{open, seal, MasterKey, SecretPath, SecretsError, SecretsStore};
use fedsec_core::Caller;
use serde::{Deserialize, Serialize};

use crate::{AdminError, AdminResult, BootstrapConfig};

const EXPORT_AAD: &[u8] = b"fedsec-bootstrap-export/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportTarget {
    OrchestratorSecrets,
    EncryptedFile,
}

/// One secret as an orchestrator key/value document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecretDocument {
    pub kind: String,
    pub name: String,
    pub path: SecretPath,
    /// Base64 payload.
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExportArtifact {
    Manifest(Vec<SecretDocument>),
    EncryptedFile(Vec<u8>),
}

impl ExportArtifact {
    /// Bytes as written to disk: JSON lines for manifests.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            ExportArtifact::Manifest(docs) => {
                let mut out = Vec::new();
                for d in docs {
                    out.extend(serde_json::to_vec(d).expect("documents serialize"));
                    out.push(b'\n');
                }
                out
            }
            ExportArtifact::EncryptedFile(bytes) => bytes.clone(),
        }
    }
}

fn document_name(path: &SecretPath) -> String {
    format!("{}-{}-{}-{}", path.tenant, path.category, path.owner, path.name)
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

/// Latest version of every managed secret. `file_key` is required for the
/// encrypted-file target and ignored otherwise.
pub fn export_secrets(config: &BootstrapConfig, store: &SecretsStore, target: ExportTarget, file_key: Option<&MasterKey>) -> AdminResult<ExportArtifact> {
    let mut docs = Vec::new();
    for (path, _) in config.expected_secrets()? {
        let value = store.read_secret(&path, &Caller::Bootstrap).map_err(|e| match e {
            SecretsError::NotFound(_) => AdminError::ExportFailed(format!("{} missing; run bootstrap first", path.key())),
            other => other.into(),
        })?;
        let version = store.latest_version(&path, &Caller::Bootstrap)?.unwrap_or(1);
        docs.push(SecretDocument {
            kind: "Secret".into(),
            name: document_name(&path),
            path: path.at_version(version),
            data: STANDARD.encode(&value.payload),
        });
    }
    match target {
        ExportTarget::OrchestratorSecrets => Ok(ExportArtifact::Manifest(docs)),
        ExportTarget::EncryptedFile => {
            let key = file_key.ok_or_else(|| AdminError::ExportFailed("encrypted export needs a key".into()))?;
            let plain = serde_json::to_vec(&docs).expect("documents serialize");
            Ok(ExportArtifact::EncryptedFile(seal(key, EXPORT_AAD, &plain)))
        }
    }
}

pub fn decrypt_export(bytes: &[u8], key: &MasterKey) -> AdminResult<Vec<SecretDocument>> {
    let plain = open(key, EXPORT_AAD, bytes).ok_or_else(|| AdminError::ExportFailed("export does not authenticate".into()))?;
    serde_json::from_slice(&plain).map_err(|e| AdminError::ExportFailed(e.to_string()))
}
