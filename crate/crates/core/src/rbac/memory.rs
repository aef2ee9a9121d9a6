use std::collections::{BTreeMap, BTreeSet};

use parking_lot::RwLock;

use super::{RbacResult, RbacStorage, RoleAssignment, RoleRecord};
use crate::identity::UserIdentity;

#[derive(Default)]
struct Tables {
    roles: BTreeMap<(String, String), RoleRecord>,
    edges: BTreeSet<(String, String, String)>,
    assignments: BTreeMap<(UserIdentity, String), RoleAssignment>,
    permissions: BTreeSet<(String, String, String)>,
}

/// In-memory implementation of the RBAC storage contract.
#[derive(Default)]
pub struct MemoryRbacStore {
    tables: RwLock<Tables>,
}

fn key(tenant: &str, name: &str) -> (String, String) {
    (tenant.to_string(), name.to_string())
}

impl RbacStorage for MemoryRbacStore {
    fn role(&self, tenant: &str, name: &str) -> RbacResult<Option<RoleRecord>> {
        Ok(self.tables.read().roles.get(&key(tenant, name)).cloned())
    }

    fn roles(&self, tenant: &str) -> RbacResult<Vec<RoleRecord>> {
        Ok(self.tables.read().roles.values().filter(|r| r.tenant == tenant).cloned().collect())
    }

    fn insert_role(&self, role: &RoleRecord) -> RbacResult<()> {
        self.tables.write().roles.insert(key(&role.tenant, &role.name), role.clone());
        Ok(())
    }

    fn delete_role(&self, tenant: &str, name: &str) -> RbacResult<usize> {
        let mut t = self.tables.write();
        t.roles.remove(&key(tenant, name));
        t.edges.retain(|(tn, p, c)| !(tn == tenant && (p == name || c == name)));
        t.permissions.retain(|(tn, r, _)| !(tn == tenant && r == name));
        let before = t.assignments.len();
        t.assignments.retain(|(u, r), _| !(u.tenant == tenant && r == name));
        Ok(before - t.assignments.len())
    }

    fn update_description(&self, tenant: &str, name: &str, description: &str) -> RbacResult<()> {
        if let Some(role) = self.tables.write().roles.get_mut(&key(tenant, name)) {
            role.description = description.to_string();
        }
        Ok(())
    }

    fn insert_edge(&self, tenant: &str, parent: &str, child: &str) -> RbacResult<()> {
        self.tables.write().edges.insert((tenant.into(), parent.into(), child.into()));
        Ok(())
    }

    fn delete_edge(&self, tenant: &str, parent: &str, child: &str) -> RbacResult<bool> {
        Ok(self.tables.write().edges.remove(&(tenant.into(), parent.into(), child.into())))
    }

    fn edges(&self, tenant: &str) -> RbacResult<Vec<(String, String)>> {
        Ok(self
            .tables
            .read()
            .edges
            .iter()
            .filter(|(t, _, _)| t == tenant)
            .map(|(_, p, c)| (p.clone(), c.clone()))
            .collect())
    }

    fn insert_assignment(&self, assignment: &RoleAssignment) -> RbacResult<()> {
        self.tables
            .write()
            .assignments
            .insert((assignment.user.clone(), assignment.role_name.clone()), assignment.clone());
        Ok(())
    }

    fn delete_assignment(&self, user: &UserIdentity, role: &str) -> RbacResult<bool> {
        Ok(self.tables.write().assignments.remove(&(user.clone(), role.to_string())).is_some())
    }

    fn assigned_roles(&self, user: &UserIdentity) -> RbacResult<Vec<String>> {
        let t = self.tables.read();
        let start = (user.clone(), String::new());
        Ok(t.assignments
            .range(start..)
            .take_while(|((u, _), _)| u == user)
            .map(|((_, r), _)| r.clone())
            .collect())
    }

    fn insert_permission(&self, tenant: &str, role: &str, permission: &str) -> RbacResult<()> {
        self.tables.write().permissions.insert((tenant.into(), role.into(), permission.into()));
        Ok(())
    }

    fn delete_permission(&self, tenant: &str, role: &str, permission: &str) -> RbacResult<bool> {
        Ok(self.tables.write().permissions.remove(&(tenant.into(), role.into(), permission.into())))
    }

    fn role_permissions(&self, tenant: &str, role: &str) -> RbacResult<Vec<String>> {
        let t = self.tables.read();
        let start = (tenant.to_string(), role.to_string(), String::new());
        Ok(t.permissions
            .range(start..)
            .take_while(|(tn, r, _)| tn == tenant && r == role)
            .map(|(_, _, p)| p.clone())
            .collect())
    }
}
