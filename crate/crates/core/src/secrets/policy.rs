//! Category authorization matrix.

use serde::{Deserialize, Serialize};

use super::{SecretCategory, SecretPath};
use crate::identity::Caller;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CallerClass {
    Bootstrap,
    Operator,
    SecurityKernel,
    Tokens,
    Systems,
    Files,
    Jobs,
    OtherService,
    /// The identity named as the path's owner.
    Owner,
    OtherUser,
}

impl CallerClass {
    pub const ALL: [CallerClass; 10] = [
        CallerClass::Bootstrap,
        CallerClass::Operator,
        CallerClass::SecurityKernel,
        CallerClass::Tokens,
        CallerClass::Systems,
        CallerClass::Files,
        CallerClass::Jobs,
        CallerClass::OtherService,
        CallerClass::Owner,
        CallerClass::OtherUser,
    ];
}

/// Ownership wins over service identity.
pub fn classify(caller: &Caller, path: &SecretPath) -> CallerClass {
    match caller {
        Caller::Bootstrap => CallerClass::Bootstrap,
        Caller::Operator { .. } => CallerClass::Operator,
        Caller::User(id) if id.username == path.owner => CallerClass::Owner,
        Caller::User(_) => CallerClass::OtherUser,
        Caller::Service(id) if id.username == path.owner => CallerClass::Owner,
        Caller::Service(id) => match id.username.as_str() {
            "security-kernel" | "sk" => CallerClass::SecurityKernel,
            "tokens" => CallerClass::Tokens,
            "systems" => CallerClass::Systems,
            "files" => CallerClass::Files,
            "jobs" => CallerClass::Jobs,
            _ => CallerClass::OtherService,
        },
    }
}

pub fn allowed(category: SecretCategory, class: CallerClass, access: Access) -> bool {
    use Access::*;
    use CallerClass::*;
    use SecretCategory::*;
    match (category, class, access) {
        (_, Bootstrap, _) => true,
        (_, Operator, _) => false,

        // Validation goes through `validate_service_password`, never a read.
        (ServicePassword, _, _) => false,

        (DbCredential, Owner, Read) => true,
        (DbCredential, _, _) => false,

        (SystemCredential, Systems, _) => true,
        (SystemCredential, Files | Jobs, Read) => true,
        (SystemCredential, _, _) => false,

        (SigningKey, SecurityKernel, _) => true,
        (SigningKey, Tokens, Read) => true,
        (SigningKey, _, _) => false,

        (UserSecret, Owner, _) => true,
        (UserSecret, _, _) => false,
    }
}
