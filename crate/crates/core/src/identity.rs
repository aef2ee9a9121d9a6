//! Principals as seen by the security plane.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid identity `{0}`: expected username@tenant")]
pub struct IdentityError(pub String);

/// A user (or service) within a tenant, rendered `username@tenant`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UserIdentity {
    pub username: String,
    pub tenant: String,
}

impl UserIdentity {
    pub fn new(username: impl Into<String>, tenant: impl Into<String>) -> Self {
        UserIdentity { username: username.into(), tenant: tenant.into() }
    }

    pub fn try_new(username: &str, tenant: &str) -> Result<Self, IdentityError> {
        if username.is_empty() || tenant.is_empty() || username.contains('@') || tenant.contains('@') {
            return Err(IdentityError(format!("{username}@{tenant}")));
        }
        Ok(UserIdentity::new(username, tenant))
    }

    pub fn subject(&self) -> String {
        format!("{}@{}", self.username, self.tenant)
    }
}

impl fmt::Display for UserIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.username, self.tenant)
    }
}

impl FromStr for UserIdentity {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.rsplit_once('@') {
            Some((user, tenant)) => UserIdentity::try_new(user, tenant),
            None => Err(IdentityError(s.to_string())),
        }
    }
}

/// Who is asking. Services authenticate in their site's administrative tenant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Caller {
    /// The sk-admin bootstrap path.
    Bootstrap,
    /// A site operator (backup/export, tenant registration).
    Operator { site: String },
    Service(UserIdentity),
    User(UserIdentity),
}

impl Caller {
    pub fn service(name: &str, admin_tenant: &str) -> Self {
        Caller::Service(UserIdentity::new(name, admin_tenant))
    }

    pub fn user(username: &str, tenant: &str) -> Self {
        Caller::User(UserIdentity::new(username, tenant))
    }

    pub fn identity(&self) -> Option<&UserIdentity> {
        match self {
            Caller::Service(id) | Caller::User(id) => Some(id),
            _ => None,
        }
    }

    pub fn service_name(&self) -> Option<&str> {
        match self {
            Caller::Service(id) => Some(&id.username),
            _ => None,
        }
    }
}
