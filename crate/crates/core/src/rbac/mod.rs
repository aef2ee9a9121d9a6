//! Roles, role nesting, assignments and role-attached permissions.
//!
//! Roles within a tenant form a forest of DAGs through child edges; holding a
//! role implicitly grants every role reachable from it. `has_role` and
//! `is_permitted` evaluate the reflexive-transitive closure of a user's direct
//! assignments. Closures and parsed permissions are memoized per tenant and
//! dropped on any mutation in that tenant.

mod memory;
mod sqlite;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{Caller, UserIdentity};
use crate::perm::{PermError, PermissionSpec, SchemaRegistry};

pub use memory::MemoryRbacStore;
pub use sqlite::SqliteRbacStore;

pub const TENANT_ADMIN_ROLE: &str = "$!tenant_admin";
pub const TOKEN_GENERATOR_ROLE: &str = "$!token_generator";
pub const DEFAULT_ROLE_PREFIX: &str = "$$";
const RESERVED_PREFIX: &str = "$!";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RbacError {
    #[error("role `{0}` already exists with different attributes")]
    RoleExists(String),
    #[error("unknown role `{name}` in tenant `{tenant}`")]
    UnknownRole { tenant: String, name: String },
    #[error("adding {parent} -> {child} would create a cycle")]
    CycleDetected { parent: String, child: String },
    #[error("not authorized: {0}")]
    NotAuthorized(String),
    #[error("invalid role name `{0}`")]
    InvalidName(String),
    #[error(transparent)]
    Permission(#[from] PermError),
    #[error("storage failure: {0}")]
    Storage(String),
}

pub type RbacResult<T> = Result<T, RbacError>;

/// Role attributes as stored; children live in the edge table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleRecord {
    pub tenant: String,
    pub name: String,
    pub owner: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub name: String,
    pub tenant: String,
    pub owner: String,
    pub description: String,
    pub children: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub user: UserIdentity,
    pub role_name: String,
    pub grantor: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub tenant: String,
    pub action: String,
    pub detail: String,
}

/// Relational storage contract: tables `roles`, `role_edges`, `assignments`,
/// `role_permissions`, all keyed by tenant.
pub trait RbacStorage: Send + Sync {
    fn role(&self, tenant: &str, name: &str) -> RbacResult<Option<RoleRecord>>;
    fn roles(&self, tenant: &str) -> RbacResult<Vec<RoleRecord>>;
    fn insert_role(&self, role: &RoleRecord) -> RbacResult<()>;
    /// Removes the role together with its edges, assignments and permissions.
    /// Returns the number of assignments removed.
    fn delete_role(&self, tenant: &str, name: &str) -> RbacResult<usize>;
    fn update_description(&self, tenant: &str, name: &str, description: &str) -> RbacResult<()>;

    fn insert_edge(&self, tenant: &str, parent: &str, child: &str) -> RbacResult<()>;
    fn delete_edge(&self, tenant: &str, parent: &str, child: &str) -> RbacResult<bool>;
    fn edges(&self, tenant: &str) -> RbacResult<Vec<(String, String)>>;

    fn insert_assignment(&self, assignment: &RoleAssignment) -> RbacResult<()>;
    fn delete_assignment(&self, user: &UserIdentity, role: &str) -> RbacResult<bool>;
    fn assigned_roles(&self, user: &UserIdentity) -> RbacResult<Vec<String>>;

    /// Inserting an existing permission is a no-op.
    fn insert_permission(&self, tenant: &str, role: &str, permission: &str) -> RbacResult<()>;
    fn delete_permission(&self, tenant: &str, role: &str, permission: &str) -> RbacResult<bool>;
    fn role_permissions(&self, tenant: &str, role: &str) -> RbacResult<Vec<String>>;
}

#[derive(Default)]
struct TenantCache {
    /// Readers share, mutations are exclusive.
    gate: RwLock<()>,
    children: Mutex<Option<Arc<HashMap<String, Vec<String>>>>>,
    closures: Mutex<HashMap<String, Arc<BTreeSet<String>>>>,
    permissions: Mutex<HashMap<String, Arc<Vec<PermissionSpec>>>>,
}

impl TenantCache {
    fn invalidate(&self) {
        *self.children.lock() = None;
        self.closures.lock().clear();
        self.permissions.lock().clear();
    }
}

pub struct RbacService {
    store: Box<dyn RbacStorage>,
    schemas: SchemaRegistry,
    admin_tenant: String,
    tenants: Mutex<HashMap<String, Arc<TenantCache>>>,
    audit: Mutex<Vec<AuditEntry>>,
}

fn describe(caller: &Caller) -> String {
    match caller {
        Caller::Bootstrap => "bootstrap".into(),
        Caller::Operator { site } => format!("operator@{site}"),
        Caller::Service(id) | Caller::User(id) => id.subject(),
    }
}

pub fn default_role_name(username: &str) -> String {
    format!("{DEFAULT_ROLE_PREFIX}{username}")
}

impl RbacService {
    /// `admin_tenant` is the site's administrative tenant; services
    /// authenticated there may administer roles in any tenant of the site.
    pub fn new(store: Box<dyn RbacStorage>, schemas: SchemaRegistry, admin_tenant: impl Into<String>) -> Self {
        RbacService {
            store,
            schemas,
            admin_tenant: admin_tenant.into(),
            tenants: Mutex::new(HashMap::new()),
            audit: Mutex::new(Vec::new()),
        }
    }

    pub fn in_memory(admin_tenant: impl Into<String>) -> Self {
        Self::new(Box::new(MemoryRbacStore::default()), SchemaRegistry::standard(), admin_tenant)
    }

    pub fn schemas(&self) -> &SchemaRegistry {
        &self.schemas
    }

    pub fn admin_tenant(&self) -> &str {
        &self.admin_tenant
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().clone()
    }

    fn cache(&self, tenant: &str) -> Arc<TenantCache> {
        self.tenants.lock().entry(tenant.to_string()).or_default().clone()
    }

    fn authorize_admin(&self, caller: &Caller, tenant: &str) -> RbacResult<()> {
        let ok = match caller {
            Caller::Bootstrap => true,
            Caller::Service(id) => id.tenant == self.admin_tenant,
            Caller::User(id) => {
                id.tenant == tenant && {
                    let cache = self.cache(tenant);
                    let _guard = cache.gate.read();
                    self.holds(&cache, id, TENANT_ADMIN_ROLE)?
                }
            }
            Caller::Operator { .. } => false,
        };
        if ok {
            Ok(())
        } else {
            Err(RbacError::NotAuthorized(format!("{} cannot administer roles in {tenant}", describe(caller))))
        }
    }

    fn require_role(&self, tenant: &str, name: &str) -> RbacResult<RoleRecord> {
        self.store
            .role(tenant, name)?
            .ok_or_else(|| RbacError::UnknownRole { tenant: tenant.into(), name: name.into() })
    }

    fn check_name(caller: &Caller, name: &str) -> RbacResult<()> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(RbacError::InvalidName(name.into()));
        }
        let reserved = name.starts_with(DEFAULT_ROLE_PREFIX) || name.starts_with(RESERVED_PREFIX);
        if reserved && *caller != Caller::Bootstrap {
            return Err(RbacError::InvalidName(name.into()));
        }
        Ok(())
    }

    fn insert_role_locked(&self, record: RoleRecord) -> RbacResult<Role> {
        match self.store.role(&record.tenant, &record.name)? {
            Some(existing) if existing == record => {}
            Some(_) => return Err(RbacError::RoleExists(record.name)),
            None => self.store.insert_role(&record)?,
        }
        self.role_locked(&record.tenant, &record.name)
    }

    fn role_locked(&self, tenant: &str, name: &str) -> RbacResult<Role> {
        let record = self.require_role(tenant, name)?;
        let children = self
            .store
            .edges(tenant)?
            .into_iter()
            .filter(|(p, _)| p == name)
            .map(|(_, c)| c)
            .collect();
        Ok(Role {
            name: record.name,
            tenant: record.tenant,
            owner: record.owner,
            description: record.description,
            children,
        })
    }

    pub fn create_role(
        &self,
        caller: &Caller,
        tenant: &str,
        name: &str,
        owner: &str,
        description: &str,
    ) -> RbacResult<Role> {
        Self::check_name(caller, name)?;
        self.authorize_admin(caller, tenant)?;
        let cache = self.cache(tenant);
        let _guard = cache.gate.write();
        let role = self.insert_role_locked(RoleRecord {
            tenant: tenant.into(),
            name: name.into(),
            owner: owner.into(),
            description: description.into(),
        })?;
        cache.invalidate();
        Ok(role)
    }

    pub fn role(&self, tenant: &str, name: &str) -> RbacResult<Role> {
        let cache = self.cache(tenant);
        let _guard = cache.gate.read();
        self.role_locked(tenant, name)
    }

    pub fn role_names(&self, tenant: &str) -> RbacResult<Vec<String>> {
        let cache = self.cache(tenant);
        let _guard = cache.gate.read();
        let mut names: Vec<String> = self.store.roles(tenant)?.into_iter().map(|r| r.name).collect();
        names.sort();
        Ok(names)
    }

    pub fn update_role_description(
        &self,
        caller: &Caller,
        tenant: &str,
        name: &str,
        description: &str,
    ) -> RbacResult<Role> {
        self.authorize_admin(caller, tenant)?;
        let cache = self.cache(tenant);
        let _guard = cache.gate.write();
        self.require_role(tenant, name)?;
        self.store.update_description(tenant, name, description)?;
        self.role_locked(tenant, name)
    }

    /// Deletes a role, cascading to its edges, assignments, and permissions.
    pub fn delete_role(&self, caller: &Caller, tenant: &str, name: &str) -> RbacResult<()> {
        self.authorize_admin(caller, tenant)?;
        let cache = self.cache(tenant);
        let _guard = cache.gate.write();
        self.require_role(tenant, name)?;
        let removed = self.store.delete_role(tenant, name)?;
        cache.invalidate();
        self.audit.lock().push(AuditEntry {
            tenant: tenant.into(),
            action: "delete_role".into(),
            detail: format!("{name} deleted by {}; {removed} assignment(s) cascaded", describe(caller)),
        });
        Ok(())
    }

    /// Creates the reserved tenant-admin and token-generator roles and assigns
    /// tenant-admin to `admins`.
    pub fn init_tenant(&self, tenant: &str, admins: &[&str]) -> RbacResult<()> {
        let boot = Caller::Bootstrap;
        self.create_role(&boot, tenant, TENANT_ADMIN_ROLE, "bootstrap", "tenant administrators")?;
        self.create_role(&boot, tenant, TOKEN_GENERATOR_ROLE, "bootstrap", "may mint user tokens")?;
        for admin in admins {
            self.grant_role(&boot, &UserIdentity::new(*admin, tenant), TENANT_ADMIN_ROLE)?;
        }
        Ok(())
    }

    pub fn add_child_role(&self, caller: &Caller, tenant: &str, parent: &str, child: &str) -> RbacResult<()> {
        self.authorize_admin(caller, tenant)?;
        let cache = self.cache(tenant);
        let _guard = cache.gate.write();
        self.require_role(tenant, parent)?;
        self.require_role(tenant, child)?;
        let edges = self.store.edges(tenant)?;
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for (p, c) in &edges {
            children.entry(p.as_str()).or_default().push(c.as_str());
        }
        if reaches(&children, child, parent) {
            return Err(RbacError::CycleDetected { parent: parent.into(), child: child.into() });
        }
        if !edges.iter().any(|(p, c)| p == parent && c == child) {
            self.store.insert_edge(tenant, parent, child)?;
        }
        cache.invalidate();
        Ok(())
    }

    pub fn remove_child_role(&self, caller: &Caller, tenant: &str, parent: &str, child: &str) -> RbacResult<bool> {
        self.authorize_admin(caller, tenant)?;
        let cache = self.cache(tenant);
        let _guard = cache.gate.write();
        let removed = self.store.delete_edge(tenant, parent, child)?;
        cache.invalidate();
        Ok(removed)
    }

    /// Creates and assigns the user's `$$<username>` role if missing.
    pub fn ensure_default_role(&self, user: &UserIdentity) -> RbacResult<Role> {
        let name = default_role_name(&user.username);
        let cache = self.cache(&user.tenant);
        let _guard = cache.gate.write();
        let role = match self.store.role(&user.tenant, &name)? {
            Some(_) => self.role_locked(&user.tenant, &name)?,
            None => self.insert_role_locked(RoleRecord {
                tenant: user.tenant.clone(),
                name: name.clone(),
                owner: user.username.clone(),
                description: format!("default role for {user}"),
            })?,
        };
        if !self.store.assigned_roles(user)?.contains(&name) {
            self.store.insert_assignment(&RoleAssignment {
                user: user.clone(),
                role_name: name,
                grantor: "bootstrap".into(),
            })?;
        }
        cache.invalidate();
        Ok(role)
    }

    pub fn grant_role(&self, caller: &Caller, user: &UserIdentity, role: &str) -> RbacResult<RoleAssignment> {
        self.authorize_admin(caller, &user.tenant)?;
        let cache = self.cache(&user.tenant);
        let _guard = cache.gate.write();
        self.require_role(&user.tenant, role)?;
        let assignment = RoleAssignment { user: user.clone(), role_name: role.into(), grantor: describe(caller) };
        if !self.store.assigned_roles(user)?.iter().any(|r| r == role) {
            self.store.insert_assignment(&assignment)?;
        }
        cache.invalidate();
        Ok(assignment)
    }

    pub fn revoke_role(&self, caller: &Caller, user: &UserIdentity, role: &str) -> RbacResult<bool> {
        self.authorize_admin(caller, &user.tenant)?;
        let cache = self.cache(&user.tenant);
        let _guard = cache.gate.write();
        self.require_role(&user.tenant, role)?;
        let removed = self.store.delete_assignment(user, role)?;
        cache.invalidate();
        Ok(removed)
    }

    fn children_map(&self, cache: &TenantCache, tenant: &str) -> RbacResult<Arc<HashMap<String, Vec<String>>>> {
        if let Some(map) = cache.children.lock().clone() {
            return Ok(map);
        }
        let mut map: HashMap<String, Vec<String>> = HashMap::new();
        for (p, c) in self.store.edges(tenant)? {
            map.entry(p).or_default().push(c);
        }
        let map = Arc::new(map);
        *cache.children.lock() = Some(map.clone());
        Ok(map)
    }

    /// Reflexive-transitive closure of one role. Caller holds the tenant gate.
    fn closure(&self, cache: &TenantCache, tenant: &str, role: &str) -> RbacResult<Arc<BTreeSet<String>>> {
        if let Some(set) = cache.closures.lock().get(role) {
            return Ok(set.clone());
        }
        let children = self.children_map(cache, tenant)?;
        let mut seen = BTreeSet::new();
        let mut stack = vec![role.to_string()];
        while let Some(next) = stack.pop() {
            if let Some(kids) = children.get(&next) {
                stack.extend(kids.iter().filter(|k| !seen.contains(*k)).cloned());
            }
            seen.insert(next);
        }
        let set = Arc::new(seen);
        cache.closures.lock().insert(role.to_string(), set.clone());
        Ok(set)
    }

    fn effective_roles_locked(&self, cache: &TenantCache, user: &UserIdentity) -> RbacResult<BTreeSet<String>> {
        let mut all = BTreeSet::new();
        for direct in self.store.assigned_roles(user)? {
            all.extend(self.closure(cache, &user.tenant, &direct)?.iter().cloned());
        }
        Ok(all)
    }

    fn holds(&self, cache: &TenantCache, user: &UserIdentity, role: &str) -> RbacResult<bool> {
        for direct in self.store.assigned_roles(user)? {
            if self.closure(cache, &user.tenant, &direct)?.contains(role) {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn has_role(&self, user: &UserIdentity, role: &str) -> RbacResult<bool> {
        let cache = self.cache(&user.tenant);
        let _guard = cache.gate.read();
        self.require_role(&user.tenant, role)?;
        self.holds(&cache, user, role)
    }

    /// Every role the user holds directly or through nesting.
    pub fn effective_roles(&self, user: &UserIdentity) -> RbacResult<BTreeSet<String>> {
        let cache = self.cache(&user.tenant);
        let _guard = cache.gate.read();
        self.effective_roles_locked(&cache, user)
    }

    pub fn grant_permission(&self, caller: &Caller, tenant: &str, role: &str, permission: &str) -> RbacResult<String> {
        let spec = self.schemas.parse(permission)?;
        self.authorize_admin(caller, tenant)?;
        let cache = self.cache(tenant);
        let _guard = cache.gate.write();
        self.require_role(tenant, role)?;
        let canonical = spec.canonical();
        self.store.insert_permission(tenant, role, &canonical)?;
        cache.permissions.lock().remove(role);
        Ok(canonical)
    }

    pub fn revoke_permission(&self, caller: &Caller, tenant: &str, role: &str, permission: &str) -> RbacResult<bool> {
        let spec = self.schemas.parse(permission)?;
        self.authorize_admin(caller, tenant)?;
        let cache = self.cache(tenant);
        let _guard = cache.gate.write();
        self.require_role(tenant, role)?;
        let removed = self.store.delete_permission(tenant, role, &spec.canonical())?;
        cache.permissions.lock().remove(role);
        Ok(removed)
    }

    pub fn role_permissions(&self, tenant: &str, role: &str) -> RbacResult<Vec<String>> {
        let cache = self.cache(tenant);
        let _guard = cache.gate.read();
        self.require_role(tenant, role)?;
        self.store.role_permissions(tenant, role)
    }

    fn parsed_permissions(&self, cache: &TenantCache, tenant: &str, role: &str) -> RbacResult<Arc<Vec<PermissionSpec>>> {
        if let Some(list) = cache.permissions.lock().get(role) {
            return Ok(list.clone());
        }
        let parsed = self
            .store
            .role_permissions(tenant, role)?
            .iter()
            .map(|raw| self.schemas.parse(raw))
            .collect::<Result<Vec<_>, _>>()?;
        let parsed = Arc::new(parsed);
        cache.permissions.lock().insert(role.to_string(), parsed.clone());
        Ok(parsed)
    }

    /// True iff some permission attached to a role in the user's closure
    /// implies `required`.
    pub fn is_permitted(&self, user: &UserIdentity, required: &str) -> RbacResult<bool> {
        let required = self.schemas.parse(required)?;
        let cache = self.cache(&user.tenant);
        let _guard = cache.gate.read();
        for role in self.effective_roles_locked(&cache, user)? {
            let granted = self.parsed_permissions(&cache, &user.tenant, &role)?;
            // A schema mismatch means this grant cannot speak to the request.
            if granted.iter().any(|g| g.implies(&required).unwrap_or(false)) {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

fn reaches(children: &HashMap<&str, Vec<&str>>, from: &str, to: &str) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(node) = stack.pop() {
        if node == to {
            return true;
        }
        if seen.insert(node) {
            if let Some(kids) = children.get(node) {
                stack.extend(kids.iter().copied());
            }
        }
    }
    false
}

#[cfg(test)]
mod tests;
