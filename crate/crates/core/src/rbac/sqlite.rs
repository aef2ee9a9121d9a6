use std::path::Path;

use parking_lot::Mutex;
use rusqlite::{params, Connection, OptionalExtension};

use super::{RbacError, RbacResult, RbacStorage, RoleAssignment, RoleRecord};
use crate::identity::UserIdentity;

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS roles (
    tenant      TEXT NOT NULL,
    name        TEXT NOT NULL,
    owner       TEXT NOT NULL,
    description TEXT NOT NULL,
    PRIMARY KEY (tenant, name)
);
CREATE TABLE IF NOT EXISTS role_edges (
    tenant TEXT NOT NULL,
    parent TEXT NOT NULL,
    child  TEXT NOT NULL,
    PRIMARY KEY (tenant, parent, child)
);
CREATE TABLE IF NOT EXISTS assignments (
    tenant    TEXT NOT NULL,
    username  TEXT NOT NULL,
    role_name TEXT NOT NULL,
    grantor   TEXT NOT NULL,
    PRIMARY KEY (tenant, username, role_name)
);
CREATE TABLE IF NOT EXISTS role_permissions (
    tenant     TEXT NOT NULL,
    role_name  TEXT NOT NULL,
    permission TEXT NOT NULL,
    PRIMARY KEY (tenant, role_name, permission)
);
"#;

/// Durable SQLite-backed implementation of the RBAC storage contract.
pub struct SqliteRbacStore {
    conn: Mutex<Connection>,
}

fn db(err: rusqlite::Error) -> RbacError {
    RbacError::Storage(err.to_string())
}

impl SqliteRbacStore {
    pub fn open(path: impl AsRef<Path>) -> RbacResult<Self> {
        Self::from_connection(Connection::open(path).map_err(db)?)
    }

    pub fn open_in_memory() -> RbacResult<Self> {
        Self::from_connection(Connection::open_in_memory().map_err(db)?)
    }

    fn from_connection(conn: Connection) -> RbacResult<Self> {
        conn.execute_batch(SCHEMA).map_err(db)?;
        Ok(SqliteRbacStore { conn: Mutex::new(conn) })
    }

    fn strings(&self, sql: &str, args: &[&str]) -> RbacResult<Vec<String>> {
        let conn = self.conn.lock();
        let mut stmt = conn.prepare_cached(sql).map_err(db)?;
        let rows = stmt
            .query_map(rusqlite::params_from_iter(args.iter()), |row| row.get::<_, String>(0))
            .map_err(db)?;
        rows.collect::<Result<_, _>>().map_err(db)
    }

    fn exec(&self, sql: &str, args: &[&str]) -> RbacResult<usize> {
        let conn = self.conn.lock();
        conn.execute(sql, rusqlite::params_from_iter(args.iter())).map_err(db)
    }
}

impl RbacStorage for SqliteRbacStore {
    fn role(&self, tenant: &str, name: &str) -> RbacResult<Option<RoleRecord>> {
        let conn = self.conn.lock();
        conn.query_row(
            "SELECT tenant, name, owner, description FROM roles WHERE tenant = ?1 AND name = ?2",
            params![tenant, name],
            |row| {
                Ok(RoleRecord {
                    tenant: row.get(0)?,
                    name: row.get(1)?,
                    owner: row.get(2)?,
                    description: row.get(3)?,
                })
            },
        )
        .optional()
        .map_err(db)
    }

    fn roles(&self, tenant: &str) -> RbacResult<Vec<RoleRecord>> {
        let conn = self.conn.lock();
        let mut stmt = conn
            .prepare_cached("SELECT tenant, name, owner, description FROM roles WHERE tenant = ?1 ORDER BY name")
            .map_err(db)?;
        let rows = stmt
            .query_map(params![tenant], |row| {
                Ok(RoleRecord {
                    tenant: row.get(0)?,
                    name: row.get(1)?,
                    owner: row.get(2)?,
                    description: row.get(3)?,
                })
            })
            .map_err(db)?;
        rows.collect::<Result<_, _>>().map_err(db)
    }

    fn insert_role(&self, role: &RoleRecord) -> RbacResult<()> {
        self.exec(
            "INSERT INTO roles (tenant, name, owner, description) VALUES (?1, ?2, ?3, ?4)",
            &[&role.tenant, &role.name, &role.owner, &role.description],
        )?;
        Ok(())
    }

    fn delete_role(&self, tenant: &str, name: &str) -> RbacResult<usize> {
        let mut conn = self.conn.lock();
        let tx = conn.transaction().map_err(db)?;
        tx.execute("DELETE FROM roles WHERE tenant = ?1 AND name = ?2", params![tenant, name]).map_err(db)?;
        tx.execute(
            "DELETE FROM role_edges WHERE tenant = ?1 AND (parent = ?2 OR child = ?2)",
            params![tenant, name],
        )
        .map_err(db)?;
        tx.execute(
            "DELETE FROM role_permissions WHERE tenant = ?1 AND role_name = ?2",
            params![tenant, name],
        )
        .map_err(db)?;
        let removed = tx
            .execute("DELETE FROM assignments WHERE tenant = ?1 AND role_name = ?2", params![tenant, name])
            .map_err(db)?;
        tx.commit().map_err(db)?;
        Ok(removed)
    }

    fn update_description(&self, tenant: &str, name: &str, description: &str) -> RbacResult<()> {
        self.exec("UPDATE roles SET description = ?3 WHERE tenant = ?1 AND name = ?2", &[tenant, name, description])?;
        Ok(())
    }

    fn insert_edge(&self, tenant: &str, parent: &str, child: &str) -> RbacResult<()> {
        self.exec(
            "INSERT OR IGNORE INTO role_edges (tenant, parent, child) VALUES (?1, ?2, ?3)",
            &[tenant, parent, child],
        )?;
        Ok(())
    }

    fn delete_edge(&self, tenant: &str, parent: &str, child: &str) -> RbacResult<bool> {
        Ok(self.exec(
            "DELETE FROM role_edges WHERE tenant = ?1 AND parent = ?2 AND child = ?3",
            &[tenant, parent, child],
        )? > 0)
    }

    fn edges(&self, tenant: &str) -> RbacResult<Vec<(String, String)>> {
        let conn = self.conn.lock();
        let mut stmt = conn
            .prepare_cached("SELECT parent, child FROM role_edges WHERE tenant = ?1 ORDER BY parent, child")
            .map_err(db)?;
        let rows = stmt
            .query_map(params![tenant], |row| Ok((row.get(0)?, row.get(1)?)))
            .map_err(db)?;
        rows.collect::<Result<_, _>>().map_err(db)
    }

    fn insert_assignment(&self, a: &RoleAssignment) -> RbacResult<()> {
        self.exec(
            "INSERT OR REPLACE INTO assignments (tenant, username, role_name, grantor) VALUES (?1, ?2, ?3, ?4)",
            &[&a.user.tenant, &a.user.username, &a.role_name, &a.grantor],
        )?;
        Ok(())
    }

    fn delete_assignment(&self, user: &UserIdentity, role: &str) -> RbacResult<bool> {
        Ok(self.exec(
            "DELETE FROM assignments WHERE tenant = ?1 AND username = ?2 AND role_name = ?3",
            &[&user.tenant, &user.username, role],
        )? > 0)
    }

    fn assigned_roles(&self, user: &UserIdentity) -> RbacResult<Vec<String>> {
        self.strings(
            "SELECT role_name FROM assignments WHERE tenant = ?1 AND username = ?2 ORDER BY role_name",
            &[&user.tenant, &user.username],
        )
    }

    fn insert_permission(&self, tenant: &str, role: &str, permission: &str) -> RbacResult<()> {
        self.exec(
            "INSERT OR IGNORE INTO role_permissions (tenant, role_name, permission) VALUES (?1, ?2, ?3)",
            &[tenant, role, permission],
        )?;
        Ok(())
    }

    fn delete_permission(&self, tenant: &str, role: &str, permission: &str) -> RbacResult<bool> {
        Ok(self.exec(
            "DELETE FROM role_permissions WHERE tenant = ?1 AND role_name = ?2 AND permission = ?3",
            &[tenant, role, permission],
        )? > 0)
    }

    fn role_permissions(&self, tenant: &str, role: &str) -> RbacResult<Vec<String>> {
        self.strings(
            "SELECT permission FROM role_permissions WHERE tenant = ?1 AND role_name = ?2 ORDER BY permission",
            &[tenant, role],
        )
    }
}
