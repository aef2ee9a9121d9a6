//! Deployment order checking.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteKind {
    Primary,
    Associate,
}

impl FromStr for SiteKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "primary" => Ok(SiteKind::Primary),
            "associate" => Ok(SiteKind::Associate),
            other => Err(format!("unknown site kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DeployStep {
    Vault,
    SkAdmin,
    Tenants,
    SendKey,
    SecurityKernel,
    Tokens,
    Authenticator,
    Service(String),
}

impl FromStr for DeployStep {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Ok(match norm.as_str() {
            "" => return Err("empty step".into()),
            "vault" => DeployStep::Vault,
            "sk-admin" => DeployStep::SkAdmin,
            "tenants" => DeployStep::Tenants,
            "send-key" => DeployStep::SendKey,
            "sk" | "security-kernel" => DeployStep::SecurityKernel,
            "tokens" => DeployStep::Tokens,
            "authenticator" => DeployStep::Authenticator,
            _ => DeployStep::Service(norm),
        })
    }
}

impl fmt::Display for DeployStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeployStep::Vault => f.write_str("vault"),
            DeployStep::SkAdmin => f.write_str("sk-admin"),
            DeployStep::Tenants => f.write_str("tenants"),
            DeployStep::SendKey => f.write_str("send-key"),
            DeployStep::SecurityKernel => f.write_str("security-kernel"),
            DeployStep::Tokens => f.write_str("tokens"),
            DeployStep::Authenticator => f.write_str("authenticator"),
            DeployStep::Service(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("step {index} ({step}): {message}")]
pub struct OrderViolation {
    pub index: usize,
    pub step: String,
    pub message: String,
}

impl DeployStep {
    fn rank(&self) -> usize {
        match self {
            DeployStep::Vault => 0,
            DeployStep::SkAdmin => 1,
            DeployStep::Tenants | DeployStep::SendKey => 2,
            DeployStep::SecurityKernel => 3,
            DeployStep::Tokens => 4,
            DeployStep::Authenticator => 5,
            DeployStep::Service(_) => 6,
        }
    }
}

/// Why the step at `rank` must precede later ones.
fn prerequisite_message(rank: usize, kind: SiteKind) -> &'static str {
    match (rank, kind) {
        (0, _) => "Vault must be deployed before anything else",
        (1, _) => "sk-admin must generate secrets before services deploy",
        (2, SiteKind::Primary) => "SK depends on the Tenants registry",
        (2, SiteKind::Associate) => "the admin public key must reach the primary before SK deploys",
        (3, _) => "Tokens depends on SK for the private key",
        (4, _) => "Authenticator depends on Tokens",
        _ => "other services deploy after Authenticator",
    }
}

/// Validates Vault, sk-admin, Tenants (primary) or key send (associate), SK,
/// Tokens, Authenticator, then any other services. Reports the first violation.
pub fn check_deployment_order(events: &[DeployStep], kind: SiteKind) -> Result<(), OrderViolation> {
    let violation = |index: usize, step: &DeployStep, message: &str| OrderViolation { index, step: step.to_string(), message: message.into() };
    let mut next = 0usize;
    for (i, step) in events.iter().enumerate() {
        match (step, kind) {
            (DeployStep::Tenants, SiteKind::Associate) => return Err(violation(i, step, "associate sites never run the Tenants API")),
            (DeployStep::SendKey, SiteKind::Primary) => return Err(violation(i, step, "the primary does not send its key anywhere")),
            _ => {}
        }
        let rank = step.rank();
        if rank == 6 {
            if next < 6 {
                return Err(violation(i, step, prerequisite_message(next, kind)));
            }
            continue;
        }
        if rank < next {
            return Err(violation(i, step, "deployed twice or after a step that depends on it"));
        }
        if rank > next {
            return Err(violation(i, step, prerequisite_message(next, kind)));
        }
        next += 1;
    }
    if next < 6 {
        let missing = match (next, kind) {
            (0, _) => DeployStep::Vault,
            (1, _) => DeployStep::SkAdmin,
            (2, SiteKind::Primary) => DeployStep::Tenants,
            (2, SiteKind::Associate) => DeployStep::SendKey,
            (3, _) => DeployStep::SecurityKernel,
            (4, _) => DeployStep::Tokens,
            _ => DeployStep::Authenticator,
        };
        return Err(violation(events.len(), &missing, "required step missing"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(names: &[&str]) -> Vec<DeployStep> {
        names.iter().map(|n| n.parse().unwrap()).collect()
    }

    const PRIMARY: [&str; 7] = ["vault", "sk-admin", "tenants", "sk", "tokens", "authenticator", "jobs"];

    #[test]
    fn canonical_orders() {
        assert!(check_deployment_order(&steps(&PRIMARY), SiteKind::Primary).is_ok());
        let assoc = steps(&["vault", "sk-admin", "send-key", "sk", "tokens", "authenticator", "streams", "systems"]);
        assert!(check_deployment_order(&assoc, SiteKind::Associate).is_ok());
        // no other services at all
        assert!(check_deployment_order(&steps(&PRIMARY[..6]), SiteKind::Primary).is_ok());
    }

    #[test]
    fn every_adjacent_swap_rejected() {
        for i in 0..PRIMARY.len() - 1 {
            let mut s = PRIMARY;
            s.swap(i, i + 1);
            assert!(check_deployment_order(&steps(&s), SiteKind::Primary).is_err(), "{s:?}");
        }
    }

    #[test]
    fn messages() {
        let e = check_deployment_order(&steps(&["vault", "sk-admin", "tenants", "tokens", "sk"]), SiteKind::Primary).unwrap_err();
        assert_eq!(e.message, "Tokens depends on SK for the private key");
        let e = check_deployment_order(&steps(&["vault", "sk-admin", "tenants"]), SiteKind::Associate).unwrap_err();
        assert_eq!(e.message, "associate sites never run the Tenants API");
        let e = check_deployment_order(&steps(&["vault", "sk-admin"]), SiteKind::Primary).unwrap_err();
        assert_eq!((e.step.as_str(), e.message.as_str()), ("tenants", "required step missing"));
        assert!(check_deployment_order(&steps(&["vault", "vault"]), SiteKind::Primary).is_err());
    }
}
