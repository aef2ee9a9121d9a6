//! In-process bridges from Tokens to the local Security Kernel.

use std::sync::Arc;

use fedsec_core::rbac::{RbacError, RbacService};
use fedsec_core::secrets::{SecretsError, SecretsStore};
use fedsec_core::token::{PasswordValidator, RoleChecker, TokenError, TokenResult};
use fedsec_core::{Caller, UserIdentity};

pub struct RbacRoles(pub Arc<RbacService>);

impl RoleChecker for RbacRoles {
    fn has_role(&self, user: &UserIdentity, role: &str) -> TokenResult<bool> {
        match self.0.has_role(user, role) {
            Ok(held) => Ok(held),
            Err(RbacError::UnknownRole { .. }) => Ok(false),
            Err(e) => Err(TokenError::Unavailable(e.to_string())),
        }
    }
}

/// Validates service passwords against the secrets store as the Tokens
/// service.
pub struct StorePasswords {
    pub store: Arc<SecretsStore>,
}

impl PasswordValidator for StorePasswords {
    fn validate(&self, service: &str, password: &[u8]) -> TokenResult<bool> {
        let caller = Caller::service("tokens", self.store.admin_tenant());
        match self.store.validate_service_password(service, self.store.site(), password, &caller) {
            Ok(ok) => Ok(ok),
            Err(SecretsError::NotFound(_)) => Ok(false),
            Err(e) => Err(TokenError::Unavailable(e.to_string())),
        }
    }
}
