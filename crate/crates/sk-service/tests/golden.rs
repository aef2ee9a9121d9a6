//! Response contract. Each file under `tests/golden/` holds one request and
//! the exact envelope it produces. Set `GOLDEN_UPDATE=1` to rewrite them.

mod common;

use std::path::PathBuf;

use common::*;
use reqwest::Method;
use serde_json::{json, Value};

struct Case {
    name: &'static str,
    method: Method,
    path: &'static str,
    token: Option<&'static str>,
    obo: Option<(&'static str, &'static str)>,
    body: Option<Value>,
}

fn case(name: &'static str, method: Method, path: &'static str, token: Option<&'static str>, body: Option<Value>) -> Case {
    Case { name, method, path, token, obo: None, body }
}

fn scrub(v: &mut Value) {
    match v {
        Value::Object(map) => {
            for (k, val) in map.iter_mut() {
                match k.as_str() {
                    "access_token" | "refresh_token" => *val = json!("<jwt>"),
                    _ => scrub(val),
                }
            }
        }
        Value::Array(items) => items.iter_mut().for_each(scrub),
        _ => {}
    }
}

#[tokio::test]
async fn envelopes_match_golden_files() {
    let w = primary().await;
    sk_service::tokens::load_tenant_keys(&w.forge, &w.client, &w.server.base_url(), &["tacc".to_string()]).await.unwrap();
    let admin = user("admin", "tacc");
    let alice = user("alice", "tacc");
    let bob = user("bob", "tacc");
    let foreign = user("u1", "tenant1");
    let tok = |t: &'static str| match t {
        "admin" => admin.clone(),
        "alice" => alice.clone(),
        "bob" => bob.clone(),
        "foreign" => foreign.clone(),
        "jobs" => service("jobs", "primary-admin", "primary"),
        "authenticator" => service("authenticator", "primary-admin", "primary"),
        other => other.to_string(),
    };
    use Method as M;
    let cases = vec![
        case("healthcheck", M::GET, "/v3/security/healthcheck", None, None),
        case("whoami", M::GET, "/v3/security/whoami", Some("alice"), None),
        case("create_role", M::POST, "/v3/security/roles", Some("admin"), Some(json!({ "name": "sci", "description": "scientists" }))),
        case("create_child_role", M::POST, "/v3/security/roles", Some("admin"), Some(json!({ "name": "pub", "description": "public" }))),
        case("add_child", M::POST, "/v3/security/roles/sci/children", Some("admin"), Some(json!({ "child": "pub" }))),
        case("add_permission", M::POST, "/v3/security/roles/sci/permissions", Some("admin"), Some(json!({ "permission": "files:tacc:read,write:stampede:/home/bud/data" }))),
        case("list_permissions", M::GET, "/v3/security/roles/sci/permissions", Some("alice"), None),
        case("grant_role", M::POST, "/v3/security/users/alice/roles", Some("admin"), Some(json!({ "role": "sci" }))),
        case("user_roles", M::GET, "/v3/security/users/alice/roles", Some("alice"), None),
        case("get_role", M::GET, "/v3/security/roles/sci", Some("alice"), None),
        case("list_roles", M::GET, "/v3/security/roles", Some("alice"), None),
        case("update_role", M::PUT, "/v3/security/roles/pub", Some("admin"), Some(json!({ "description": "everyone" }))),
        case("has_role", M::GET, "/v3/security/roles/hasRole?username=alice&role=pub", Some("alice"), None),
        case("is_permitted_true", M::POST, "/v3/security/perms/isPermitted", Some("alice"), Some(json!({ "tenant": "tacc", "username": "alice", "permission": "files:tacc:read:stampede:/home/bud/data/x" }))),
        case("is_permitted_boundary", M::POST, "/v3/security/perms/isPermitted", Some("alice"), Some(json!({ "tenant": "tacc", "username": "alice", "permission": "files:tacc:read:stampede:/home/budget" }))),
        case("is_permitted_other_user", M::POST, "/v3/security/perms/isPermitted", Some("bob"), Some(json!({ "username": "alice", "permission": "systems:tacc:read:s" }))),
        case("cycle_rejected", M::POST, "/v3/security/roles/pub/children", Some("admin"), Some(json!({ "child": "sci" }))),
        case("remove_child", M::DELETE, "/v3/security/roles/sci/children/pub", Some("admin"), None),
        case("revoke_permission", M::DELETE, "/v3/security/roles/sci/permissions", Some("admin"), Some(json!({ "permission": "files:tacc:read,write:stampede:/home/bud/data" }))),
        case("revoke_role", M::DELETE, "/v3/security/users/alice/roles/sci", Some("admin"), None),
        case("delete_role", M::DELETE, "/v3/security/roles/pub", Some("admin"), None),
        case("unknown_role", M::GET, "/v3/security/roles/pub", Some("alice"), None),
        case("create_share", M::POST, "/v3/security/shares", Some("alice"), Some(json!({ "grantee": "~public", "resource_type": "system", "resource_id": "execSys", "privilege": "READ" }))),
        case("list_shares", M::GET, "/v3/security/shares", Some("bob"), None),
        case("is_shared", M::GET, "/v3/security/shares/isShared?resource_type=system&resource_id=execSys&username=bob&privilege=READ", Some("bob"), None),
        case("share_time_check_failed", M::POST, "/v3/security/shares", Some("alice"), Some(json!({ "grantee": "bob", "resource_type": "application", "resource_id": "app", "privilege": "READ", "referenced_systems": ["execSys"] }))),
        case("revoke_share", M::DELETE, "/v3/security/shares", Some("alice"), Some(json!({ "grantee": "~public", "resource_type": "system", "resource_id": "execSys", "privilege": "READ" }))),
        case("revoke_missing_share", M::DELETE, "/v3/security/shares", Some("alice"), Some(json!({ "grantee": "~public", "resource_type": "system", "resource_id": "execSys", "privilege": "READ" }))),
        Case { obo: Some(("bob", "tacc")), ..case("sac_resolve", M::POST, "/v3/security/shares/sac/resolve", Some("jobs"), Some(json!({ "sac": { "grantor": "alice", "app_id": "aliceApp", "tenant": "tacc", "shared_resources": [{ "resource_type": "system", "resource_id": "execSys" }] }, "username": "bob", "resource": { "resource_type": "system", "resource_id": "execSys" }, "privilege": "EXECUTE" }))) },
        Case { obo: Some(("bob", "tacc")), ..case("sac_not_member", M::POST, "/v3/security/shares/sac/resolve", Some("jobs"), Some(json!({ "sac": { "grantor": "alice", "app_id": "aliceApp", "tenant": "tacc", "shared_resources": [] }, "username": "bob", "resource": { "resource_type": "system", "resource_id": "arcSys" }, "privilege": "READ" }))) },
        case("write_secret", M::POST, "/v3/security/vault/secret/user-secret/alice/ssh-key", Some("alice"), Some(json!({ "data": "not-really-a-key", "metadata": { "purpose": "demo" } }))),
        case("read_secret", M::GET, "/v3/security/vault/secret/user-secret/alice/ssh-key?version=1", Some("alice"), None),
        case("read_secret_denied", M::GET, "/v3/security/vault/secret/user-secret/alice/ssh-key", Some("bob"), None),
        case("missing_secret", M::GET, "/v3/security/vault/secret/user-secret/alice/other", Some("alice"), None),
        case("rule_1_missing_token", M::GET, "/v3/security/roles", None, None),
        case("rule_3_foreign_tenant", M::GET, "/v3/security/roles", Some("foreign"), None),
        case("rule_7a_no_obo", M::GET, "/v3/security/roles", Some("jobs"), None),
        case("bad_body", M::POST, "/v3/security/roles", Some("admin"), Some(json!({ "title": "x" }))),
        case("no_such_endpoint", M::GET, "/v3/security/nope", Some("alice"), None),
        Case { obo: Some(("authenticator", "primary-admin")), ..case("user_token_denied", M::POST, "/v3/tokens", Some("jobs"), Some(json!({ "tenant": "tacc", "username": "alice" }))) },
        case("refresh_garbage", M::POST, "/v3/tokens/refresh", None, Some(json!({ "refresh_token": "a.b.c" }))),
    ];

    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    let update = std::env::var("GOLDEN_UPDATE").is_ok_and(|v| v == "1");
    let mut mismatches = Vec::new();
    for c in cases {
        let token = c.token.map(tok);
        let (status, env) = w
            .call(c.method.clone(), c.path, Req { token: token.as_deref(), obo: c.obo, body: c.body.clone(), ..Default::default() })
            .await;
        let mut response = serde_json::to_value(&env).unwrap();
        scrub(&mut response);
        let record = json!({
            "request": { "method": c.method.as_str(), "path": c.path, "as": c.token, "obo": c.obo.map(|(u, t)| format!("{u}@{t}")), "body": c.body },
            "status": status,
            "response": response,
        });
        let file = dir.join(format!("{}.json", c.name));
        if update {
            std::fs::write(&file, serde_json::to_string_pretty(&record).unwrap() + "\n").unwrap();
            continue;
        }
        let expected: Value = serde_json::from_str(&std::fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing {}", file.display()))).unwrap();
        if expected != record {
            mismatches.push(format!("{}:\n  expected {expected}\n  got      {record}", c.name));
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}
