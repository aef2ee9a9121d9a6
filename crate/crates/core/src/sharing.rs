//! Share grants and shared application contexts (SACs).
//!
//! A SAC lets a job run with the grantor's access to the resources named in
//! an application definition. Access is rechecked at every use: if the
//! grantor has lost access, the grantee's own authorization is tried next.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::UserIdentity;

pub const HEADER_SAC_GRANTOR: &str = "X-Tapis-Sac-Grantor";
pub const HEADER_SAC_APP: &str = "X-Tapis-Sac-App";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShareError {
    #[error("not authorized: {0}")]
    NotAuthorized(String),
    #[error("share-time check failed: grantor lacks access to system `{0}`")]
    ShareTimeCheckFailed(String),
    #[error("share not found")]
    NotFound,
    #[error("invalid share: {0}")]
    Invalid(String),
    #[error("resource `{0}` is not part of the shared application context")]
    ResourceNotInSac(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Grantee {
    User(String),
    PublicTenant,
    NoAuthn,
}

impl fmt::Display for Grantee {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grantee::User(u) => f.write_str(u),
            Grantee::PublicTenant => f.write_str("~public"),
            Grantee::NoAuthn => f.write_str("~noauthn"),
        }
    }
}

impl FromStr for Grantee {
    type Err = ShareError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "~public" | "PUBLIC_TENANT" => Ok(Grantee::PublicTenant),
            "~noauthn" | "NO_AUTHN" => Ok(Grantee::NoAuthn),
            "" => Err(ShareError::Invalid("empty grantee".into())),
            u if u.starts_with('~') => Err(ShareError::Invalid(format!("unknown grantee `{u}`"))),
            u => Ok(Grantee::User(u.into())),
        }
    }
}

impl TryFrom<String> for Grantee {
    type Error = ShareError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Grantee> for String {
    fn from(g: Grantee) -> Self {
        g.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceType {
    Application,
    System,
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Privilege {
    Read,
    Execute,
    Modify,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ShareGrant {
    pub tenant: String,
    pub grantor: String,
    pub grantee: Grantee,
    pub resource_type: ResourceType,
    pub resource_id: String,
    pub privilege: Privilege,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShareStatus {
    pub shared: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grantor: Option<String>,
}

/// A resource reference. `path` is only meaningful for `ResourceType::Path`,
/// where `resource_id` names the system.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Resource {
    pub resource_type: ResourceType,
    pub resource_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
}

impl Resource {
    pub fn system(id: &str) -> Self {
        Resource { resource_type: ResourceType::System, resource_id: id.into(), path: None }
    }

    pub fn path(system: &str, path: &str) -> Self {
        Resource { resource_type: ResourceType::Path, resource_id: system.into(), path: Some(path.into()) }
    }

    pub fn application(id: &str) -> Self {
        Resource { resource_type: ResourceType::Application, resource_id: id.into(), path: None }
    }

    /// True when `self` (a SAC member) covers `other`.
    pub fn covers(&self, other: &Resource) -> bool {
        if self.resource_type != other.resource_type || self.resource_id != other.resource_id {
            return false;
        }
        match (&self.path, &other.path) {
            (None, _) => true,
            (Some(_), None) => false,
            (Some(a), Some(b)) => {
                let seg = |p: &str| p.split('/').filter(|s| !s.is_empty()).map(String::from).collect::<Vec<_>>();
                let (a, b) = (seg(a), seg(b));
                b.starts_with(&a)
            }
        }
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.path {
            Some(p) => write!(f, "{}:{p}", self.resource_id),
            None => f.write_str(&self.resource_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SacDescriptor {
    pub grantor: String,
    pub app_id: String,
    pub tenant: String,
    pub shared_resources: BTreeSet<Resource>,
}

impl SacDescriptor {
    fn member(&self, r: &Resource) -> bool {
        self.shared_resources.iter().any(|m| m.covers(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccessOutcome {
    GrantorAuthorized,
    GranteeAuthorized,
    Denied,
}

/// Authorization facts owned by other services (Systems ownership, permissions).
pub trait ShareContext {
    fn has_access(&self, tenant: &str, user: &str, resource: &Resource, privilege: Privilege) -> bool;
    fn is_tenant_admin(&self, tenant: &str, user: &str) -> bool;
}

#[derive(Default)]
pub struct ShareStore {
    grants: RwLock<BTreeMap<String, BTreeSet<ShareGrant>>>,
}

impl ShareStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Persists `grant`. Application shares also require the grantor to have
    /// access to each of `referenced_systems` right now.
    pub fn create_share(
        &self,
        grant: ShareGrant,
        caller: &UserIdentity,
        referenced_systems: &[String],
        ctx: &dyn ShareContext,
    ) -> Result<(), ShareError> {
        if caller.tenant != grant.tenant || caller.username != grant.grantor {
            return Err(ShareError::NotAuthorized("only the grantor may share".into()));
        }
        if grant.grantee == Grantee::User(grant.grantor.clone()) {
            return Err(ShareError::Invalid("grantor and grantee are the same".into()));
        }
        if grant.resource_id.is_empty() {
            return Err(ShareError::Invalid("empty resource id".into()));
        }
        if grant.resource_type == ResourceType::Application {
            for sys in referenced_systems {
                if !ctx.has_access(&grant.tenant, &grant.grantor, &Resource::system(sys), Privilege::Read) {
                    return Err(ShareError::ShareTimeCheckFailed(sys.clone()));
                }
            }
        }
        self.grants.write().entry(grant.tenant.clone()).or_default().insert(grant);
        Ok(())
    }

    pub fn revoke_share(&self, grant: &ShareGrant, caller: &UserIdentity, ctx: &dyn ShareContext) -> Result<(), ShareError> {
        if caller.tenant != grant.tenant || (caller.username != grant.grantor && !ctx.is_tenant_admin(&grant.tenant, &caller.username)) {
            return Err(ShareError::NotAuthorized("only the grantor or a tenant admin may revoke".into()));
        }
        let mut grants = self.grants.write();
        if grants.get_mut(&grant.tenant).is_some_and(|set| set.remove(grant)) {
            Ok(())
        } else {
            Err(ShareError::NotFound)
        }
    }

    /// Direct or tenant-public grants. No-authn grants are not consulted.
    pub fn is_shared_with(&self, tenant: &str, resource_type: ResourceType, resource_id: &str, user: &str, privilege: Privilege) -> ShareStatus {
        let grants = self.grants.read();
        let hit = grants.get(tenant).and_then(|set| {
            set.iter().find(|g| {
                g.resource_type == resource_type
                    && g.resource_id == resource_id
                    && g.privilege == privilege
                    && match &g.grantee {
                        Grantee::User(u) => u == user,
                        Grantee::PublicTenant => true,
                        Grantee::NoAuthn => false,
                    }
            })
        });
        ShareStatus { shared: hit.is_some(), grantor: hit.map(|g| g.grantor.clone()) }
    }

    /// For endpoints explicitly configured to honor no-authn shares.
    pub fn is_shared_no_authn(&self, tenant: &str, resource_type: ResourceType, resource_id: &str, privilege: Privilege) -> ShareStatus {
        let grants = self.grants.read();
        let hit = grants.get(tenant).and_then(|set| {
            set.iter().find(|g| {
                g.grantee == Grantee::NoAuthn && g.resource_type == resource_type && g.resource_id == resource_id && g.privilege == privilege
            })
        });
        ShareStatus { shared: hit.is_some(), grantor: hit.map(|g| g.grantor.clone()) }
    }

    pub fn list(&self, tenant: &str) -> Vec<ShareGrant> {
        self.grants.read().get(tenant).map(|s| s.iter().cloned().collect()).unwrap_or_default()
    }

    fn shared_resource(&self, tenant: &str, user: &str, resource: &Resource, privilege: Privilege) -> bool {
        self.is_shared_with(tenant, resource.resource_type, &resource.resource_id, user, privilege).shared
    }

    /// Runtime SAC check: grantor first, then the requesting user's own access.
    pub fn resolve_sac_access(
        &self,
        sac: &SacDescriptor,
        requesting_user: &str,
        resource: &Resource,
        privilege: Privilege,
        ctx: &dyn ShareContext,
    ) -> Result<AccessOutcome, ShareError> {
        if !sac.member(resource) {
            return Err(ShareError::ResourceNotInSac(resource.to_string()));
        }
        let t = &sac.tenant;
        if ctx.has_access(t, &sac.grantor, resource, privilege) {
            return Ok(AccessOutcome::GrantorAuthorized);
        }
        if ctx.has_access(t, requesting_user, resource, privilege) || self.shared_resource(t, requesting_user, resource, privilege) {
            return Ok(AccessOutcome::GranteeAuthorized);
        }
        Ok(AccessOutcome::Denied)
    }
}
