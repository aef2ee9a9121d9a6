use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;

use super::*;

fn services() -> Vec<(&'static str, fn() -> RbacService)> {
    vec![
        ("memory", || RbacService::in_memory("admin")),
        ("sqlite", || {
            RbacService::new(
                Box::new(SqliteRbacStore::open_in_memory().unwrap()),
                SchemaRegistry::standard(),
                "admin",
            )
        }),
    ]
}

fn boot() -> Caller {
    Caller::Bootstrap
}

fn user(name: &str) -> UserIdentity {
    UserIdentity::new(name, "tacc")
}

#[test]
fn create_role_is_idempotent_for_identical_fields() {
    for (label, make) in services() {
        let rbac = make();
        let a = rbac.create_role(&boot(), "tacc", "ds_scientist", "admin", "data scientists").unwrap();
        let b = rbac.create_role(&boot(), "tacc", "ds_scientist", "admin", "data scientists").unwrap();
        assert_eq!(a, b, "{label}");
        assert_eq!(rbac.role_names("tacc").unwrap(), vec!["ds_scientist"], "{label}");
        assert_eq!(
            rbac.create_role(&boot(), "tacc", "ds_scientist", "admin", "other"),
            Err(RbacError::RoleExists("ds_scientist".into())),
            "{label}"
        );
    }
}

#[test]
fn role_administration_requires_tenant_admin_or_site_service() {
    for (label, make) in services() {
        let rbac = make();
        rbac.init_tenant("tacc", &["root"]).unwrap();
        let plain = Caller::user("bob", "tacc");
        assert!(matches!(
            rbac.create_role(&plain, "tacc", "r", "bob", ""),
            Err(RbacError::NotAuthorized(_))
        ), "{label}");
        assert!(rbac.create_role(&Caller::user("root", "tacc"), "tacc", "r", "root", "").is_ok(), "{label}");
        assert!(rbac.create_role(&Caller::service("jobs", "admin"), "tacc", "s", "jobs", "").is_ok(), "{label}");
        // A service authenticated outside the site admin tenant is not trusted.
        assert!(rbac.create_role(&Caller::service("jobs", "elsewhere"), "tacc", "t", "jobs", "").is_err(), "{label}");
        // A tenant admin of another tenant cannot reach in.
        rbac.init_tenant("other", &["root"]).unwrap();
        assert!(rbac.create_role(&Caller::user("root", "other"), "tacc", "u", "root", "").is_err(), "{label}");
    }
}

#[test]
fn reserved_names_are_rejected_for_callers() {
    let rbac = RbacService::in_memory("admin");
    let svc = Caller::service("jobs", "admin");
    for name in ["$$bob", "$!tenant_admin", "", "has space"] {
        assert_eq!(rbac.create_role(&svc, "tacc", name, "jobs", ""), Err(RbacError::InvalidName(name.into())));
    }
}

#[test]
fn child_roles_and_cycles() {
    for (label, make) in services() {
        let rbac = make();
        for r in ["pi_all", "read_data", "write_data", "other_parent"] {
            rbac.create_role(&boot(), "tacc", r, "admin", "").unwrap();
        }
        rbac.add_child_role(&boot(), "tacc", "pi_all", "read_data").unwrap();
        rbac.add_child_role(&boot(), "tacc", "pi_all", "write_data").unwrap();
        rbac.add_child_role(&boot(), "tacc", "other_parent", "read_data").unwrap();
        assert_eq!(
            rbac.role("tacc", "pi_all").unwrap().children,
            ["read_data", "write_data"].iter().map(|s| s.to_string()).collect()
        );
        assert!(matches!(
            rbac.add_child_role(&boot(), "tacc", "read_data", "pi_all"),
            Err(RbacError::CycleDetected { .. })
        ), "{label}");
        assert!(matches!(
            rbac.add_child_role(&boot(), "tacc", "pi_all", "pi_all"),
            Err(RbacError::CycleDetected { .. })
        ), "{label}");
        assert!(matches!(
            rbac.add_child_role(&boot(), "tacc", "pi_all", "ghost"),
            Err(RbacError::UnknownRole { .. })
        ), "{label}");

        let bob = user("bob");
        rbac.grant_role(&boot(), &bob, "pi_all").unwrap();
        assert!(rbac.has_role(&bob, "read_data").unwrap(), "{label}");
        rbac.revoke_role(&boot(), &bob, "pi_all").unwrap();
        assert!(!rbac.has_role(&bob, "read_data").unwrap(), "{label}");

        rbac.grant_role(&boot(), &bob, "pi_all").unwrap();
        rbac.grant_role(&boot(), &bob, "read_data").unwrap();
        rbac.revoke_role(&boot(), &bob, "pi_all").unwrap();
        assert!(rbac.has_role(&bob, "read_data").unwrap(), "{label}");
        assert!(!rbac.has_role(&bob, "write_data").unwrap(), "{label}");
        assert!(matches!(rbac.has_role(&bob, "ghost"), Err(RbacError::UnknownRole { .. })), "{label}");
    }
}

#[test]
fn default_role_is_per_user_and_idempotent() {
    for (label, make) in services() {
        let rbac = make();
        let bob = UserIdentity::new("bob", "tenant1");
        let role = rbac.ensure_default_role(&bob).unwrap();
        assert_eq!(role.name, "$$bob", "{label}");
        assert!(rbac.has_role(&bob, "$$bob").unwrap(), "{label}");
        rbac.ensure_default_role(&bob).unwrap();
        assert_eq!(rbac.role_names("tenant1").unwrap(), vec!["$$bob"], "{label}");

        let other = UserIdentity::new("bob", "tenant2");
        rbac.ensure_default_role(&other).unwrap();
        assert_eq!(rbac.role_names("tenant2").unwrap(), vec!["$$bob"], "{label}");
        assert!(!rbac.has_role(&UserIdentity::new("carol", "tenant1"), "$$bob").unwrap(), "{label}");
    }
}

#[test]
fn permissions_attach_canonically_and_flow_through_nesting() {
    for (label, make) in services() {
        let rbac = make();
        rbac.create_role(&boot(), "tacc", "ds_scientist", "admin", "").unwrap();
        rbac.create_role(&boot(), "tacc", "pi_all", "admin", "").unwrap();
        rbac.add_child_role(&boot(), "tacc", "pi_all", "ds_scientist").unwrap();
        let stored = rbac.grant_permission(&boot(), "tacc", "ds_scientist", "systems:tacc:read,modify:stampede2").unwrap();
        assert_eq!(stored, "systems:tacc:modify,read:stampede2", "{label}");
        assert!(matches!(
            rbac.grant_permission(&boot(), "tacc", "ds_scientist", "x::y"),
            Err(RbacError::Permission(PermError::Malformed(_)))
        ), "{label}");
        assert!(!rbac.revoke_permission(&boot(), "tacc", "ds_scientist", "systems:tacc:read:nothing").unwrap());

        let bob = user("bob");
        rbac.ensure_default_role(&bob).unwrap();
        assert!(!rbac.is_permitted(&bob, "systems:tacc:read:stampede2").unwrap(), "{label}");
        rbac.grant_role(&boot(), &bob, "pi_all").unwrap();
        assert!(rbac.is_permitted(&bob, "systems:tacc:read:stampede2").unwrap(), "{label}");
        assert!(!rbac.is_permitted(&bob, "systems:tacc:exec:stampede2").unwrap(), "{label}");
        rbac.revoke_permission(&boot(), "tacc", "ds_scientist", "systems:tacc:modify,read:stampede2").unwrap();
        assert!(!rbac.is_permitted(&bob, "systems:tacc:read:stampede2").unwrap(), "{label}");
        assert!(rbac.is_permitted(&bob, "bad::perm").is_err(), "{label}");
    }
}

#[test]
fn wildcard_grant_implies_concrete_request() {
    let rbac = RbacService::in_memory("admin");
    let carol = UserIdentity::new("carol", "cyverse");
    rbac.ensure_default_role(&carol).unwrap();
    rbac.grant_permission(&boot(), "cyverse", "$$carol", "systems:cyverse:*:frontera").unwrap();
    assert!(rbac.is_permitted(&carol, "systems:cyverse:exec:frontera").unwrap());
}

#[test]
fn delete_role_cascades_and_audits() {
    for (label, make) in services() {
        let rbac = make();
        rbac.create_role(&boot(), "tacc", "parent", "admin", "").unwrap();
        rbac.create_role(&boot(), "tacc", "doomed", "admin", "").unwrap();
        rbac.add_child_role(&boot(), "tacc", "parent", "doomed").unwrap();
        rbac.grant_permission(&boot(), "tacc", "doomed", "systems:tacc:read:x").unwrap();
        let bob = user("bob");
        rbac.grant_role(&boot(), &bob, "doomed").unwrap();
        rbac.grant_role(&boot(), &bob, "parent").unwrap();
        rbac.delete_role(&boot(), "tacc", "doomed").unwrap();
        assert!(rbac.role("tacc", "parent").unwrap().children.is_empty(), "{label}");
        assert!(!rbac.is_permitted(&bob, "systems:tacc:read:x").unwrap(), "{label}");
        assert_eq!(rbac.effective_roles(&bob).unwrap(), BTreeSet::from(["parent".to_string()]), "{label}");
        let audit = rbac.audit_log();
        assert_eq!(audit.len(), 1);
        assert!(audit[0].detail.contains("1 assignment"), "{}", audit[0].detail);
        // Re-creating the role starts clean.
        rbac.create_role(&boot(), "tacc", "doomed", "admin", "").unwrap();
        assert!(!rbac.has_role(&bob, "doomed").unwrap(), "{label}");
    }
}

#[test]
fn tenants_do_not_see_each_other() {
    let rbac = RbacService::in_memory("admin");
    rbac.create_role(&boot(), "a", "shared_name", "admin", "").unwrap();
    rbac.grant_role(&boot(), &UserIdentity::new("bob", "a"), "shared_name").unwrap();
    rbac.grant_permission(&boot(), "a", "shared_name", "systems:a:read:x").unwrap();
    assert!(matches!(
        rbac.has_role(&UserIdentity::new("bob", "b"), "shared_name"),
        Err(RbacError::UnknownRole { .. })
    ));
    assert!(!rbac.is_permitted(&UserIdentity::new("bob", "b"), "systems:a:read:x").unwrap());
    assert!(rbac.role_names("b").unwrap().is_empty());
}

#[test]
fn sqlite_store_is_durable() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sk.db");
    {
        let rbac = RbacService::new(Box::new(SqliteRbacStore::open(&path).unwrap()), SchemaRegistry::standard(), "admin");
        rbac.create_role(&boot(), "tacc", "r", "admin", "").unwrap();
        rbac.grant_permission(&boot(), "tacc", "r", "files:tacc:read:sys1:/home/bud").unwrap();
        rbac.grant_role(&boot(), &user("bob"), "r").unwrap();
    }
    let rbac = RbacService::new(Box::new(SqliteRbacStore::open(&path).unwrap()), SchemaRegistry::standard(), "admin");
    assert!(rbac.is_permitted(&user("bob"), "files:tacc:read:sys1:/home/bud/x").unwrap());
}

/// Independent oracle: BFS over an explicit edge list.
fn reachable(edges: &[(usize, usize)], from: usize, to: usize) -> bool {
    let mut seen = vec![false; edges.iter().map(|&(a, b)| a.max(b)).max().unwrap_or(0).max(from).max(to) + 1];
    let mut queue = std::collections::VecDeque::from([from]);
    while let Some(n) = queue.pop_front() {
        if n == to {
            return true;
        }
        if std::mem::replace(&mut seen[n], true) {
            continue;
        }
        queue.extend(edges.iter().filter(|&&(a, _)| a == n).map(|&(_, b)| b));
    }
    false
}

fn topologically_sortable(rbac: &RbacService, tenant: &str) -> bool {
    let names = rbac.role_names(tenant).unwrap();
    let mut indegree: HashMap<String, usize> = names.iter().map(|n| (n.clone(), 0)).collect();
    let mut children: HashMap<String, Vec<String>> = HashMap::new();
    for n in &names {
        for c in rbac.role(tenant, n).unwrap().children {
            *indegree.get_mut(&c).unwrap() += 1;
            children.entry(n.clone()).or_default().push(c);
        }
    }
    let mut ready: Vec<String> = indegree.iter().filter(|(_, &d)| d == 0).map(|(n, _)| n.clone()).collect();
    let mut visited = 0;
    while let Some(n) = ready.pop() {
        visited += 1;
        for c in children.get(&n).into_iter().flatten() {
            let d = indegree.get_mut(c).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push(c.clone());
            }
        }
    }
    visited == names.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn has_role_matches_reachability(
        n in 2usize..20,
        raw_edges in proptest::collection::vec((0usize..20, 0usize..20), 0..40),
        assigned in proptest::collection::btree_set(0usize..20, 0..4),
    ) {
        let rbac = RbacService::in_memory("admin");
        for i in 0..n {
            rbac.create_role(&boot(), "t", &format!("r{i}"), "admin", "").unwrap();
        }
        let mut accepted = Vec::new();
        for (a, b) in raw_edges.into_iter().map(|(a, b)| (a % n, b % n)) {
            let result = rbac.add_child_role(&boot(), "t", &format!("r{a}"), &format!("r{b}"));
            let would_cycle = a == b || reachable(&accepted, b, a);
            prop_assert_eq!(result.is_err(), would_cycle);
            if !would_cycle {
                accepted.push((a, b));
            }
            prop_assert!(topologically_sortable(&rbac, "t"));
        }
        let u = UserIdentity::new("u", "t");
        for &a in assigned.iter().filter(|&&a| a < n) {
            rbac.grant_role(&boot(), &u, &format!("r{a}")).unwrap();
        }
        for target in 0..n {
            let expected = assigned.iter().any(|&a| a < n && reachable(&accepted, a, target));
            prop_assert_eq!(rbac.has_role(&u, &format!("r{target}")).unwrap(), expected);
        }
    }

    #[test]
    fn is_permitted_matches_naive_scan(
        grants in proptest::collection::vec((0usize..4, "[ab*]", "[ab*]"), 0..8),
        edges in proptest::collection::vec((0usize..4, 0usize..4), 0..5),
        assigned in 0usize..4,
        query in ("[ab]", "[ab]"),
    ) {
        let rbac = RbacService::in_memory("admin");
        let schemas = SchemaRegistry::standard();
        for i in 0..4 {
            rbac.create_role(&boot(), "t", &format!("r{i}"), "admin", "").unwrap();
        }
        let mut accepted = Vec::new();
        for (a, b) in edges {
            if rbac.add_child_role(&boot(), "t", &format!("r{a}"), &format!("r{b}")).is_ok() {
                accepted.push((a, b));
            }
        }
        for (role, op, sys) in &grants {
            rbac.grant_permission(&boot(), "t", &format!("r{role}"), &format!("systems:t:{op}:{sys}")).unwrap();
        }
        let u = UserIdentity::new("u", "t");
        rbac.grant_role(&boot(), &u, &format!("r{assigned}")).unwrap();
        let required = format!("systems:t:{}:{}", query.0, query.1);
        let req = schemas.parse(&required).unwrap();
        let expected = grants.iter().any(|(role, op, sys)| {
            reachable(&accepted, assigned, *role)
                && schemas.parse(&format!("systems:t:{op}:{sys}")).unwrap().implies(&req).unwrap()
        });
        prop_assert_eq!(rbac.is_permitted(&u, &required).unwrap(), expected);
    }
}
