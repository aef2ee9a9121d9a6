mod common;

use std::path::Path;
use std::process::Command;

use fedsec_core::secrets::MasterKey;
use sk_admin::{decrypt_export, StoreConfig};

fn sk_admin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sk-admin")).args(args).output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let mut cfg = common::config("primary");
    cfg.store = Some(StoreConfig { path: "vault/secrets.json".into(), master_key_file: "master.key".into() });
    std::fs::create_dir(dir.join("vault")).unwrap();
    std::fs::write(dir.join("master.key"), MasterKey::generate().to_base64()).unwrap();
    let path = dir.join("bootstrap.json");
    std::fs::write(&path, cfg.to_json_pretty()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn bootstrap_twice_then_file_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let first = sk_admin(&["bootstrap", "--config", &cfg]);
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let report: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(report["created"].as_array().unwrap().len(), 11);

    let out = dir.path().join("export.bin");
    let second = sk_admin(&["bootstrap", "--config", &cfg, "--export", "file", "--out", out.to_str().unwrap()]);
    assert!(second.status.success());
    let report: serde_json::Value = serde_json::from_slice(&second.stdout).unwrap();
    assert!(report["created"].as_array().unwrap().is_empty());

    let key = MasterKey::from_base64(&std::fs::read_to_string(dir.path().join("export.bin.key")).unwrap()).unwrap();
    let docs = decrypt_export(&std::fs::read(&out).unwrap(), &key).unwrap();
    assert_eq!(docs.len(), 11);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(sk_admin(&["bootstrap", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let cfg = write_config(dir.path());
    std::fs::remove_dir(dir.path().join("vault")).unwrap();
    let out = sk_admin(&["bootstrap", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let events = dir.path().join("events.json");
    std::fs::write(&events, r#"["vault","sk-admin","tenants","tokens","sk"]"#).unwrap();
    let out = sk_admin(&["check-order", "--events", events.to_str().unwrap(), "--site-kind", "primary"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Tokens depends on SK"));

    std::fs::write(&events, r#"["vault","sk-admin","send-key","sk","tokens","authenticator","systems"]"#).unwrap();
    let out = sk_admin(&["check-order", "--events", events.to_str().unwrap(), "--site-kind", "associate"]);
    assert!(out.status.success());
}
