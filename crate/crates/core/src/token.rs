//! Per-tenant RS256 tokens.
//!
//! Tokens use the compact three-segment JWS encoding so any RS256 verifier
//! can read them. Each tenant has its own RSA key; verification needs only
//! the tenant's public key.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64URL;
use base64::Engine;
use parking_lot::{Mutex, RwLock};
use rsa::pkcs1v15::{Signature, SigningKey, VerifyingKey};
use rsa::pkcs8::{DecodePrivateKey, DecodePublicKey, EncodePrivateKey, EncodePublicKey, LineEnding};
use rsa::signature::{SignatureEncoding, Signer, Verifier};
use rsa::{RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::identity::UserIdentity;

pub const DEFAULT_ACCESS_TTL: u64 = 4 * 3600;
pub const DEFAULT_USER_TTL: u64 = 4 * 3600;
pub const DEFAULT_REFRESH_TTL: u64 = 24 * 3600;
pub const RSA_BITS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenError {
    #[error("signature does not verify under the tenant's key")]
    BadSignature,
    #[error("token expired")]
    ExpiredToken,
    #[error("unknown tenant `{0}`")]
    UnknownTenant(String),
    #[error("unknown site `{0}`")]
    UnknownSite(String),
    #[error("malformed token: {0}")]
    MalformedToken(String),
    #[error("not authorized: {0}")]
    NotAuthorized(String),
    #[error("bad credentials")]
    BadCredentials,
    #[error("refresh token already used")]
    ReusedToken,
    #[error("key error: {0}")]
    Key(String),
    #[error("dependency unavailable: {0}")]
    Unavailable(String),
}

pub type TokenResult<T> = Result<T, TokenError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccountType {
    User,
    Service,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenUse {
    Access,
    Refresh,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClaims {
    pub jti: String,
    pub sub: String,
    pub tenant_id: String,
    pub account_type: AccountType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_site: Option<String>,
    pub exp: u64,
    pub iat: u64,
    pub iss: String,
    pub token_use: TokenUse,
}

impl TokenClaims {
    /// Structural invariants every issued token satisfies.
    pub fn check_invariants(&self) -> Result<(), String> {
        match (self.account_type, &self.target_site) {
            (AccountType::Service, None) => return Err("service token without target_site".into()),
            (AccountType::User, Some(_)) => return Err("user token with target_site".into()),
            _ => {}
        }
        let id: UserIdentity = self.sub.parse().map_err(|_| format!("bad subject `{}`", self.sub))?;
        if id.tenant != self.tenant_id {
            return Err("subject tenant differs from tenant_id".into());
        }
        if self.exp <= self.iat {
            return Err("exp not after iat".into());
        }
        Ok(())
    }

    pub fn subject(&self) -> Option<UserIdentity> {
        self.sub.parse().ok()
    }

    pub fn username(&self) -> &str {
        self.sub.rsplit_once('@').map_or(self.sub.as_str(), |(u, _)| u)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    alg: String,
    typ: String,
}

/// Signs `claims` as-is. Callers are trusted to have checked invariants.
pub fn encode_jwt(claims: &TokenClaims, key: &RsaPrivateKey) -> String {
    let header = B64URL.encode(br#"{"alg":"RS256","typ":"JWT"}"#);
    let body = B64URL.encode(serde_json::to_vec(claims).expect("claims serialize"));
    let signing_input = format!("{header}.{body}");
    let sig = SigningKey::<Sha256>::new(key.clone()).sign(signing_input.as_bytes());
    format!("{signing_input}.{}", B64URL.encode(sig.to_bytes()))
}

struct Parsed<'a> {
    signing_input: &'a str,
    claims: TokenClaims,
    sig: Vec<u8>,
}

fn parse(token: &str) -> TokenResult<Parsed<'_>> {
    let bad = |m: &str| TokenError::MalformedToken(m.to_string());
    let token = token.trim();
    let mut it = token.split('.');
    let (Some(h), Some(b), Some(s), None) = (it.next(), it.next(), it.next(), it.next()) else {
        return Err(bad("expected three segments"));
    };
    let header: Header = B64URL
        .decode(h)
        .ok()
        .and_then(|raw| serde_json::from_slice(&raw).ok())
        .ok_or_else(|| bad("undecodable header"))?;
    if header.alg != "RS256" {
        return Err(bad("unsupported alg"));
    }
    let claims: TokenClaims = B64URL
        .decode(b)
        .ok()
        .and_then(|raw| serde_json::from_slice(&raw).ok())
        .ok_or_else(|| bad("undecodable claims"))?;
    let sig = B64URL.decode(s).map_err(|_| bad("undecodable signature"))?;
    Ok(Parsed { signing_input: &token[..h.len() + 1 + b.len()], claims, sig })
}

/// Reads claims without checking the signature. Diagnostics only.
pub fn decode_unverified(token: &str) -> TokenResult<TokenClaims> {
    parse(token).map(|p| p.claims)
}

/// Source of tenant verification keys, normally a registry snapshot.
pub trait KeyLookup: Send + Sync {
    fn verification_key(&self, tenant: &str) -> Option<RsaPublicKey>;
}

impl KeyLookup for HashMap<String, RsaPublicKey> {
    fn verification_key(&self, tenant: &str) -> Option<RsaPublicKey> {
        self.get(tenant).cloned()
    }
}

/// Checks, in order: encoding, tenant key, signature, claim invariants, expiry.
pub fn verify(token: &str, keys: &dyn KeyLookup, now: u64) -> TokenResult<TokenClaims> {
    let p = parse(token)?;
    let key = keys
        .verification_key(&p.claims.tenant_id)
        .ok_or_else(|| TokenError::UnknownTenant(p.claims.tenant_id.clone()))?;
    let sig = Signature::try_from(p.sig.as_slice()).map_err(|_| TokenError::BadSignature)?;
    VerifyingKey::<Sha256>::new(key)
        .verify(p.signing_input.as_bytes(), &sig)
        .map_err(|_| TokenError::BadSignature)?;
    p.claims.check_invariants().map_err(TokenError::MalformedToken)?;
    if p.claims.exp <= now {
        return Err(TokenError::ExpiredToken);
    }
    Ok(p.claims)
}

pub fn generate_key() -> RsaPrivateKey {
    RsaPrivateKey::new(&mut rand::rngs::OsRng, RSA_BITS).expect("RSA key generation")
}

pub fn public_key_pem(key: &RsaPublicKey) -> String {
    key.to_public_key_pem(LineEnding::LF).expect("public key encodes")
}

pub fn public_key_from_pem(pem: &str) -> TokenResult<RsaPublicKey> {
    RsaPublicKey::from_public_key_pem(pem).map_err(|e| TokenError::Key(e.to_string()))
}

pub fn private_key_pem(key: &RsaPrivateKey) -> String {
    key.to_pkcs8_pem(LineEnding::LF).expect("private key encodes").to_string()
}

pub fn private_key_from_pem(pem: &str) -> TokenResult<RsaPrivateKey> {
    RsaPrivateKey::from_pkcs8_pem(pem).map_err(|e| TokenError::Key(e.to_string()))
}

/// Checks a service password; backed by the secrets store in production.
pub trait PasswordValidator: Send + Sync {
    fn validate(&self, service: &str, password: &[u8]) -> TokenResult<bool>;
}

/// Answers role membership; backed by the role engine in production.
pub trait RoleChecker: Send + Sync {
    fn has_role(&self, user: &UserIdentity, role: &str) -> TokenResult<bool>;
}

/// Records consumed refresh tokens.
pub trait TombstoneLedger: Send + Sync {
    /// Marks `jti` used. Returns false if it already was.
    fn consume(&self, jti: &str) -> TokenResult<bool>;
}

#[derive(Default)]
pub struct MemoryTombstones(Mutex<HashSet<String>>);

impl TombstoneLedger for MemoryTombstones {
    fn consume(&self, jti: &str) -> TokenResult<bool> {
        Ok(self.0.lock().insert(jti.to_string()))
    }
}

/// Append-only tombstone file, one jti per line.
pub struct FileTombstones {
    seen: Mutex<(HashSet<String>, File)>,
}

impl FileTombstones {
    pub fn open(path: impl AsRef<Path>) -> TokenResult<Self> {
        let io = |e: std::io::Error| TokenError::Unavailable(e.to_string());
        let mut seen = HashSet::new();
        if let Ok(f) = File::open(path.as_ref()) {
            for line in BufReader::new(f).lines() {
                let line = line.map_err(io)?;
                if !line.is_empty() {
                    seen.insert(line);
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path.as_ref()).map_err(io)?;
        Ok(FileTombstones { seen: Mutex::new((seen, file)) })
    }
}

impl TombstoneLedger for FileTombstones {
    fn consume(&self, jti: &str) -> TokenResult<bool> {
        let mut guard = self.seen.lock();
        let (seen, file) = &mut *guard;
        if seen.contains(jti) {
            return Ok(false);
        }
        writeln!(file, "{jti}").and_then(|_| file.sync_data()).map_err(|e| TokenError::Unavailable(e.to_string()))?;
        seen.insert(jti.to_string());
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub access_token: String,
    pub refresh_token: String,
    pub target_site: Option<String>,
    pub expires_at: u64,
}

/// Federation facts Tokens needs about its own site.
#[derive(Debug, Clone)]
pub struct ForgeSite {
    pub site_id: String,
    pub admin_tenant: String,
    pub primary_site: String,
    pub known_sites: BTreeSet<String>,
    pub tokens_url: String,
}

impl ForgeSite {
    pub fn is_primary(&self) -> bool {
        self.site_id == self.primary_site
    }
}

/// The Tokens service of one site.
pub struct TokenForge {
    site: ForgeSite,
    signing: RwLock<HashMap<String, RsaPrivateKey>>,
    passwords: Arc<dyn PasswordValidator>,
    roles: Arc<dyn RoleChecker>,
    tombstones: Arc<dyn TombstoneLedger>,
    clock: Arc<dyn Clock>,
    pub access_ttl: u64,
    pub user_ttl: u64,
    pub refresh_ttl: u64,
}

impl TokenForge {
    pub fn new(site: ForgeSite, passwords: Arc<dyn PasswordValidator>, roles: Arc<dyn RoleChecker>) -> Self {
        TokenForge {
            site,
            signing: RwLock::new(HashMap::new()),
            passwords,
            roles,
            tombstones: Arc::new(MemoryTombstones::default()),
            clock: Arc::new(SystemClock),
            access_ttl: DEFAULT_ACCESS_TTL,
            user_ttl: DEFAULT_USER_TTL,
            refresh_ttl: DEFAULT_REFRESH_TTL,
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_tombstones(mut self, ledger: Arc<dyn TombstoneLedger>) -> Self {
        self.tombstones = ledger;
        self
    }

    pub fn site(&self) -> &ForgeSite {
        &self.site
    }

    pub fn install_tenant_key(&self, tenant: &str, key: RsaPrivateKey) {
        self.signing.write().insert(tenant.to_string(), key);
    }

    pub fn signs_for(&self, tenant: &str) -> bool {
        self.signing.read().contains_key(tenant)
    }

    /// Public halves of the keys this forge signs with.
    pub fn public_keys(&self) -> HashMap<String, RsaPublicKey> {
        self.signing.read().iter().map(|(t, k)| (t.clone(), k.to_public_key())).collect()
    }

    fn sign(&self, claims: &TokenClaims) -> TokenResult<String> {
        let keys = self.signing.read();
        let key = keys.get(&claims.tenant_id).ok_or_else(|| TokenError::UnknownTenant(claims.tenant_id.clone()))?;
        Ok(encode_jwt(claims, key))
    }

    fn claims(&self, sub: &UserIdentity, kind: AccountType, target: Option<String>, ttl: u64, token_use: TokenUse) -> TokenResult<TokenClaims> {
        if ttl == 0 {
            return Err(TokenError::MalformedToken("ttl must be positive".into()));
        }
        let now = self.clock.now();
        Ok(TokenClaims {
            jti: uuid::Uuid::new_v4().to_string(),
            sub: sub.subject(),
            tenant_id: sub.tenant.clone(),
            account_type: kind,
            target_site: target,
            exp: now + ttl,
            iat: now,
            iss: self.site.tokens_url.clone(),
            token_use,
        })
    }

    fn pair(&self, sub: &UserIdentity, kind: AccountType, target: Option<String>, ttl: u64) -> TokenResult<TokenPair> {
        let access = self.claims(sub, kind, target.clone(), ttl, TokenUse::Access)?;
        let refresh = self.claims(sub, kind, target.clone(), self.refresh_ttl, TokenUse::Refresh)?;
        Ok(TokenPair {
            access_token: self.sign(&access)?,
            refresh_token: self.sign(&refresh)?,
            target_site: target,
            expires_at: access.exp,
        })
    }

    /// Requester must hold the token_generator role, either in `tenant` or in
    /// this site's administrative tenant.
    pub fn issue_user_token(&self, requester: &UserIdentity, tenant: &str, username: &str, ttl: Option<u64>) -> TokenResult<TokenPair> {
        if !self.signs_for(tenant) {
            return Err(TokenError::UnknownTenant(tenant.to_string()));
        }
        let scoped = requester.tenant == tenant || requester.tenant == self.site.admin_tenant;
        if !scoped || !self.roles.has_role(requester, crate::rbac::TOKEN_GENERATOR_ROLE)? {
            return Err(TokenError::NotAuthorized(format!("{} may not generate tokens in {tenant}", requester.subject())));
        }
        let sub = UserIdentity::try_new(username, tenant).map_err(|e| TokenError::MalformedToken(e.to_string()))?;
        self.pair(&sub, AccountType::User, None, ttl.unwrap_or(self.user_ttl))
    }

    /// One access/refresh pair per target site, in the order given.
    pub fn issue_service_tokens(&self, service: &str, password: &[u8], site: &str, targets: &[String]) -> TokenResult<Vec<TokenPair>> {
        if site != self.site.site_id {
            return Err(TokenError::UnknownSite(site.to_string()));
        }
        if !self.passwords.validate(service, password)? {
            return Err(TokenError::BadCredentials);
        }
        for t in targets {
            self.check_target(t)?;
        }
        let sub = UserIdentity::try_new(service, &self.site.admin_tenant).map_err(|e| TokenError::MalformedToken(e.to_string()))?;
        targets
            .iter()
            .map(|t| self.pair(&sub, AccountType::Service, Some(t.clone()), self.access_ttl))
            .collect()
    }

    fn check_target(&self, target: &str) -> TokenResult<()> {
        if !self.site.known_sites.contains(target) {
            return Err(TokenError::UnknownSite(target.to_string()));
        }
        if !self.site.is_primary() && target != self.site.site_id && target != self.site.primary_site {
            return Err(TokenError::NotAuthorized(format!("{} may only target itself or the primary", self.site.site_id)));
        }
        Ok(())
    }

    /// Service token for Tokens itself, signed with its own admin-tenant key.
    /// Used to call the local Security Kernel before any password exists.
    pub fn self_service_token(&self, target: &str) -> TokenResult<String> {
        self.check_target(target)?;
        let sub = UserIdentity::new("tokens", self.site.admin_tenant.clone());
        let claims = self.claims(&sub, AccountType::Service, Some(target.to_string()), self.access_ttl, TokenUse::Access)?;
        self.sign(&claims)
    }

    /// Exchanges a refresh token for a new pair. Each refresh token works once.
    pub fn refresh(&self, refresh_token: &str) -> TokenResult<TokenPair> {
        let claims = verify(refresh_token, &self.public_keys(), self.clock.now())?;
        if claims.token_use != TokenUse::Refresh {
            return Err(TokenError::MalformedToken("not a refresh token".into()));
        }
        if !self.tombstones.consume(&claims.jti)? {
            return Err(TokenError::ReusedToken);
        }
        let sub = claims.subject().ok_or_else(|| TokenError::MalformedToken("bad subject".into()))?;
        let ttl = match claims.account_type {
            AccountType::User => self.user_ttl,
            AccountType::Service => self.access_ttl,
        };
        self.pair(&sub, claims.account_type, claims.target_site, ttl)
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use proptest::prelude::*;

    struct Pw;
    impl PasswordValidator for Pw {
        fn validate(&self, _service: &str, password: &[u8]) -> TokenResult<bool> {
            Ok(password == b"right")
        }
    }

    struct Roles(HashSet<String>);
    impl RoleChecker for Roles {
        fn has_role(&self, user: &UserIdentity, role: &str) -> TokenResult<bool> {
            Ok(role == crate::rbac::TOKEN_GENERATOR_ROLE && self.0.contains(&user.subject()))
        }
    }

    fn forge(site: &str, clock: Arc<ManualClock>) -> TokenForge {
        let admin = format!("{site}-admin");
        let f = TokenForge::new(
            ForgeSite {
                site_id: site.into(),
                admin_tenant: admin.clone(),
                primary_site: "primary".into(),
                known_sites: ["primary", "assoc1", "assoc2"].map(String::from).into(),
                tokens_url: format!("https://{site}.example/v3/tokens"),
            },
            Arc::new(Pw),
            Arc::new(Roles(["authenticator@primary-admin", "authenticator@tenant1"].map(String::from).into())),
        )
        .with_clock(clock);
        let keys = test_keys::pool();
        f.install_tenant_key(&admin, keys[0].clone());
        f.install_tenant_key("tenant1", keys[1].clone());
        f
    }

    #[test]
    fn user_token_for_authorized_requester() {
        let clock = Arc::new(ManualClock::new(1_000));
        let f = forge("primary", clock.clone());
        let pair = f.issue_user_token(&UserIdentity::new("authenticator", "primary-admin"), "tenant1", "bob", None).unwrap();
        let claims = verify(&pair.access_token, &f.public_keys(), 1_001).unwrap();
        assert_eq!(claims.sub, "bob@tenant1");
        assert_eq!(claims.account_type, AccountType::User);
        assert_eq!(claims.target_site, None);
        assert_eq!(claims.exp - claims.iat, DEFAULT_USER_TTL);

        // also allowed from within the tenant itself
        assert!(f.issue_user_token(&UserIdentity::new("authenticator", "tenant1"), "tenant1", "bob", None).is_ok());
    }

    #[test]
    fn user_token_refused_without_role_or_tenant() {
        let f = forge("primary", Arc::new(ManualClock::new(1_000)));
        let r = f.issue_user_token(&UserIdentity::new("mallory", "tenant1"), "tenant1", "bob", None);
        assert!(matches!(r, Err(TokenError::NotAuthorized(_))));
        let r = f.issue_user_token(&UserIdentity::new("authenticator", "primary-admin"), "nowhere", "bob", None);
        assert!(matches!(r, Err(TokenError::UnknownTenant(_))));
    }

    #[test]
    fn service_tokens_per_target() {
        let f = forge("primary", Arc::new(ManualClock::new(1_000)));
        let targets = vec!["primary".to_string(), "assoc1".to_string()];
        let pairs = f.issue_service_tokens("jobs", b"right", "primary", &targets).unwrap();
        assert_eq!(pairs.len(), 2);
        let keys = f.public_keys();
        let a = verify(&pairs[0].access_token, &keys, 1_001).unwrap();
        let b = verify(&pairs[1].access_token, &keys, 1_001).unwrap();
        assert_eq!(a.target_site.as_deref(), Some("primary"));
        assert_eq!(b.target_site.as_deref(), Some("assoc1"));
        assert_ne!(a.jti, b.jti);
        let strip = |c: &TokenClaims| TokenClaims { jti: String::new(), target_site: None, ..c.clone() };
        assert_eq!(strip(&a), strip(&b));
        assert_eq!(a.exp - a.iat, DEFAULT_ACCESS_TTL);
        assert_eq!(a.sub, "jobs@primary-admin");

        assert_eq!(f.issue_service_tokens("jobs", b"wrong", "primary", &targets), Err(TokenError::BadCredentials));
        assert!(matches!(f.issue_service_tokens("jobs", b"right", "elsewhere", &targets), Err(TokenError::UnknownSite(_))));
    }

    #[test]
    fn associates_cannot_target_each_other() {
        let f = forge("assoc1", Arc::new(ManualClock::new(1_000)));
        assert!(f.issue_service_tokens("streams", b"right", "assoc1", &["assoc1".into(), "primary".into()]).is_ok());
        assert!(matches!(
            f.issue_service_tokens("streams", b"right", "assoc1", &["assoc2".into()]),
            Err(TokenError::NotAuthorized(_))
        ));
        assert!(matches!(
            f.issue_service_tokens("streams", b"right", "assoc1", &["mars".into()]),
            Err(TokenError::UnknownSite(_))
        ));
    }

    #[test]
    fn refresh_is_single_use_and_expires() {
        let clock = Arc::new(ManualClock::new(1_000));
        let f = forge("primary", clock.clone());
        let pair = f.issue_user_token(&UserIdentity::new("authenticator", "tenant1"), "tenant1", "bob", None).unwrap();
        clock.advance(60);
        let next = f.refresh(&pair.refresh_token).unwrap();
        assert!(next.expires_at > pair.expires_at);
        assert_eq!(f.refresh(&pair.refresh_token), Err(TokenError::ReusedToken));
        // access tokens are not refresh tokens
        assert!(matches!(f.refresh(&next.access_token), Err(TokenError::MalformedToken(_))));
        clock.advance(DEFAULT_REFRESH_TTL + 1);
        assert_eq!(f.refresh(&next.refresh_token), Err(TokenError::ExpiredToken));
    }

    #[test]
    fn file_tombstones_survive_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tombstones");
        assert!(FileTombstones::open(&path).unwrap().consume("a").unwrap());
        let again = FileTombstones::open(&path).unwrap();
        assert!(!again.consume("a").unwrap());
        assert!(again.consume("b").unwrap());
    }

    #[test]
    fn verify_rejections() {
        let keys = test_keys::pool();
        let claims = TokenClaims {
            jti: "j".into(),
            sub: "bob@tenant1".into(),
            tenant_id: "tenant1".into(),
            account_type: AccountType::User,
            target_site: None,
            exp: 2_000,
            iat: 1_000,
            iss: "x".into(),
            token_use: TokenUse::Access,
        };
        let lookup: HashMap<String, RsaPublicKey> =
            [("tenant1".to_string(), keys[1].to_public_key()), ("tenant2".to_string(), keys[2].to_public_key())].into();

        // signed with tenant2's key while claiming tenant1
        assert_eq!(verify(&encode_jwt(&claims, &keys[2]), &lookup, 1_500), Err(TokenError::BadSignature));

        let good = encode_jwt(&claims, &keys[1]);
        assert!(verify(&good, &lookup, 1_500).is_ok());
        assert_eq!(verify(&good, &lookup, 2_000), Err(TokenError::ExpiredToken));
        assert!(matches!(verify(&good[..good.len() / 2], &lookup, 1_500), Err(TokenError::MalformedToken(_))));
        assert!(matches!(verify("", &lookup, 1_500), Err(TokenError::MalformedToken(_))));

        let stranger = TokenClaims { sub: "bob@tenant9".into(), tenant_id: "tenant9".into(), ..claims.clone() };
        assert!(matches!(verify(&encode_jwt(&stranger, &keys[1]), &lookup, 1_500), Err(TokenError::UnknownTenant(_))));

        let service_without_target = TokenClaims { account_type: AccountType::Service, ..claims.clone() };
        assert!(matches!(verify(&encode_jwt(&service_without_target, &keys[1]), &lookup, 1_500), Err(TokenError::MalformedToken(_))));

        // flip one payload bit; re-encode so the structure still parses
        let mut parts: Vec<String> = good.split('.').map(String::from).collect();
        let mut body = B64URL.decode(&parts[1]).unwrap();
        let pos = body.windows(3).position(|w| w == b"bob").unwrap();
        body[pos + 2] = b'd';
        parts[1] = B64URL.encode(body);
        assert_eq!(verify(&parts.join("."), &lookup, 1_500), Err(TokenError::BadSignature));
    }

    #[test]
    fn pem_round_trip() {
        let k = &test_keys::pool()[0];
        let pem = public_key_pem(&k.to_public_key());
        assert_eq!(public_key_from_pem(&pem).unwrap(), k.to_public_key());
        assert_eq!(&private_key_from_pem(&private_key_pem(k)).unwrap(), k);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn round_trip_and_cross_tenant(user in "[a-z][a-z0-9_]{0,8}", ttl in 1u64..100_000, a in 0usize..4, b in 0usize..4, service in any::<bool>()) {
            let keys = test_keys::pool();
            let claims = TokenClaims {
                jti: uuid::Uuid::new_v4().to_string(),
                sub: format!("{user}@t{a}"),
                tenant_id: format!("t{a}"),
                account_type: if service { AccountType::Service } else { AccountType::User },
                target_site: service.then(|| "primary".to_string()),
                exp: 10 + ttl,
                iat: 10,
                iss: "iss".into(),
                token_use: TokenUse::Access,
            };
            prop_assert!(claims.check_invariants().is_ok());
            let token = encode_jwt(&claims, &keys[a]);
            let own: HashMap<String, RsaPublicKey> = [(format!("t{a}"), keys[a].to_public_key())].into();
            prop_assert_eq!(verify(&token, &own, 10).unwrap(), claims);
            // under tenant B's key it must fail unless B's key is A's key
            let swapped: HashMap<String, RsaPublicKey> = [(format!("t{a}"), keys[b].to_public_key())].into();
            prop_assert_eq!(verify(&token, &swapped, 10).is_ok(), a == b);
        }
    }
}
