mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use common::{config, store};
use fedsec_core::registry::RegistrySnapshot;
use fedsec_core::secrets::{signing_key_path, MasterKey, MemoryBackend, SecretCategory, SecretsError, SecretsStore};
use fedsec_core::token::{encode_jwt, private_key_from_pem, verify, AccountType, TokenClaims, TokenUse};
use fedsec_core::Caller;
use sk_admin::*;

#[test]
fn first_run_creates_everything_second_run_skips() {
    let cfg = config("primary");
    let s = store(&cfg);
    let first = run_bootstrap(&cfg, &s, None).unwrap();
    let expected: Vec<_> = cfg.expected_secrets().unwrap().into_iter().map(|(p, _)| p).collect();
    assert_eq!(first.created, expected);
    assert!(first.skipped.is_empty() && first.replaced.is_empty());
    // 2 tenant keys + 7 service passwords + 2 specs
    assert_eq!(first.created.len(), 11);

    let before = export_secrets(&cfg, &s, ExportTarget::OrchestratorSecrets, None).unwrap();
    let second = run_bootstrap(&cfg, &s, None).unwrap();
    assert!(second.created.is_empty());
    assert_eq!(second.skipped, expected);
    assert_eq!(export_secrets(&cfg, &s, ExportTarget::OrchestratorSecrets, None).unwrap(), before);
}

#[test]
fn replace_regenerates_matching_secrets() {
    let cfg = config("primary");
    let s = store(&cfg);
    run_bootstrap(&cfg, &s, None).unwrap();
    let old = render_registry(&cfg, &s).unwrap();
    let r = run_bootstrap(&cfg, &s, Some("tacc/signing-key/*")).unwrap();
    assert_eq!(r.replaced, vec![signing_key_path("tacc")]);
    assert_eq!(r.skipped.len(), 10);
    let new = render_registry(&cfg, &s).unwrap();
    let key = |doc: &fedsec_core::registry::RegistryDocument, t: &str| doc.tenants.iter().find(|x| x.tenant_id == t).unwrap().public_key.clone();
    assert_ne!(key(&old, "tacc"), key(&new, "tacc"));
    assert_eq!(key(&old, "primary-admin"), key(&new, "primary-admin"));

    let db = run_bootstrap(&cfg, &s, Some("*/db-credential/*")).unwrap();
    assert_eq!(db.replaced.len(), 2);
    assert_eq!(db.warnings.len(), 2);
    assert!(matches!(run_bootstrap(&cfg, &s, Some("[")), Err(AdminError::ConfigInvalid(_))));
}

#[test]
fn passwords_are_32_random_bytes() {
    let p = generate_password();
    assert_eq!(p.len(), 43);
    assert_ne!(p, generate_password());
}

#[test]
fn config_validation() {
    let mut no_aux = config("primary");
    no_aux.secret_specs.retain(|s| s.kind != SpecKind::Auxiliary);
    assert!(matches!(run_bootstrap(&no_aux, &store(&config("primary")), None), Err(AdminError::ConfigInvalid(_))));

    let mut no_sk = config("primary");
    no_sk.services.retain(|s| s != "security-kernel");
    assert_eq!(no_sk.validate().unwrap_err().exit_code(), 2);

    let mut unknown = config("primary");
    unknown.site_id = "mars".into();
    assert!(unknown.validate().is_err());
}

#[test]
fn unreachable_store_exits_3() {
    let cfg = config("primary");
    let backend = Arc::new(MemoryBackend::new());
    let s = SecretsStore::new("primary", "primary-admin", backend.clone(), MasterKey::generate());
    backend.set_available(false);
    let e = run_bootstrap(&cfg, &s, None).unwrap_err();
    assert!(matches!(e, AdminError::StoreUnreachable(_)));
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn exports() {
    let cfg = config("primary");
    let s = store(&cfg);
    assert!(matches!(export_secrets(&cfg, &s, ExportTarget::OrchestratorSecrets, None), Err(AdminError::ExportFailed(_))));
    run_bootstrap(&cfg, &s, None).unwrap();

    let ExportArtifact::Manifest(docs) = export_secrets(&cfg, &s, ExportTarget::OrchestratorSecrets, None).unwrap() else {
        panic!("expected manifest");
    };
    assert_eq!(docs.len(), 11);
    let names: Vec<_> = docs.iter().map(|d| d.name.clone()).collect();
    assert!(names.contains(&"primary-admin-service-password-jobs-password".to_string()));
    let again = match export_secrets(&cfg, &s, ExportTarget::OrchestratorSecrets, None).unwrap() {
        ExportArtifact::Manifest(d) => d.into_iter().map(|d| d.name).collect::<Vec<_>>(),
        _ => unreachable!(),
    };
    assert_eq!(names, again);

    let key = MasterKey::generate();
    let ExportArtifact::EncryptedFile(bytes) = export_secrets(&cfg, &s, ExportTarget::EncryptedFile, Some(&key)).unwrap() else {
        panic!("expected file");
    };
    assert_eq!(decrypt_export(&bytes, &key).unwrap(), docs);
    assert!(decrypt_export(&bytes, &MasterKey::generate()).is_err());
    assert!(export_secrets(&cfg, &s, ExportTarget::EncryptedFile, None).is_err());
}

#[test]
fn admin_signing_key_is_shared_by_tokens_and_sk_only() {
    let cfg = config("primary");
    let s = store(&cfg);
    run_bootstrap(&cfg, &s, None).unwrap();
    let path = signing_key_path("primary-admin");
    assert!(s.read_secret(&path, &Caller::service("tokens", "primary-admin")).is_ok());
    assert!(s.read_secret(&path, &Caller::service("security-kernel", "primary-admin")).is_ok());
    for other in ["jobs", "systems", "authenticator"] {
        assert!(matches!(s.read_secret(&path, &Caller::service(other, "primary-admin")), Err(SecretsError::NotAuthorized(_))));
    }
    assert!(s.read_secret(&path, &Caller::user("admin", "primary-admin")).is_err());
    assert_eq!(path.category, SecretCategory::SigningKey);
}

#[test]
fn key_exchange_enables_cross_site_verification() {
    let assoc_cfg = config("assoc1");
    let assoc_store = store(&assoc_cfg);
    run_bootstrap(&assoc_cfg, &assoc_store, None).unwrap();
    let sent = public_keys_for_exchange(&assoc_cfg, &assoc_store).unwrap();
    assert_eq!(sent.keys().cloned().collect::<Vec<_>>(), vec!["assoc1-admin".to_string(), "tenant1".to_string()]);

    let mut primary_cfg = config("primary");
    let primary_store = store(&primary_cfg);
    run_bootstrap(&primary_cfg, &primary_store, None).unwrap();
    let before = RegistrySnapshot::load(render_registry(&primary_cfg, &primary_store).unwrap(), 0).unwrap();
    assert!(before.get_public_key("assoc1-admin").is_err());

    exchange_associate_key(&mut primary_cfg, "assoc1", sent.clone()).unwrap();
    assert!(matches!(exchange_associate_key(&mut primary_cfg, "assoc1", sent.clone()), Err(AdminError::DuplicateSite(_))));
    let mut missing_admin = config("primary");
    assert!(exchange_associate_key(&mut missing_admin, "assoc1", BTreeMap::new()).is_err());

    // "re-run bootstrap and restart the registry"
    run_bootstrap(&primary_cfg, &primary_store, None).unwrap();
    let after = RegistrySnapshot::load(render_registry(&primary_cfg, &primary_store).unwrap(), 0).unwrap();
    assert!(after.get_public_key("assoc1-admin").is_ok());

    let pem = assoc_store.read_secret(&signing_key_path("assoc1-admin"), &Caller::Bootstrap).unwrap().payload;
    let private = private_key_from_pem(std::str::from_utf8(&pem).unwrap()).unwrap();
    let claims = TokenClaims {
        jti: "x".into(),
        sub: "systems@assoc1-admin".into(),
        tenant_id: "assoc1-admin".into(),
        account_type: AccountType::Service,
        target_site: Some("primary".into()),
        exp: 100,
        iat: 1,
        iss: "assoc1".into(),
        token_use: TokenUse::Access,
    };
    assert!(verify(&encode_jwt(&claims, &private), &after, 10).is_ok());
}
