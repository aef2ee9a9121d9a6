//! Core of a multi-site security plane: permission matching, role DAGs,
//! tenant-segregated secrets, per-tenant token signing, the federation
//! registry, request validation, site routing and sharing.

pub mod clock;
pub mod gatekeeper;
pub mod identity;
pub mod perm;
pub mod rbac;
pub mod registry;
pub mod router;
pub mod secrets;
pub mod sharing;
pub mod token;

pub use identity::{Caller, UserIdentity};
