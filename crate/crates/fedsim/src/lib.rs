//! A federation of sites running in one process.
//!
//! Each site gets its own runtime, a services listener carrying the Security
//! Kernel, Tokens, Tenants (primary only) and stub Apps, Systems, Files, Jobs
//! and Authenticator services, and a router listener that routes by tenant
//! host and forwards to the primary with an injected link delay.
//!
//! On top of that sit the scripted scenarios, the gatekeeper validation
//! matrix, the isPermitted load harness, the cross-site penalty measurement
//! and the cross-tenant isolation probe.

pub mod client;
pub mod federation;
pub mod isolation;
pub mod load;
pub mod matrix;
pub mod penalty;
pub mod proxy;
pub mod scenario;
pub mod stubs;
pub mod topology;
pub mod transcript;

use thiserror::Error;

pub use federation::{build_federation, Federation};
pub use topology::Topology;
pub use transcript::{Event, Transcript};

#[derive(Debug, Error)]
pub enum FedsimError {
    #[error("invalid topology: {0}")]
    TopologyInvalid(String),
    #[error("scenario diverged at step {step}: {detail}")]
    ScenarioDivergence { step: usize, detail: String },
    #[error("permission seeding failed: {0}")]
    SeedingFailed(String),
    #[error("site start-up failed: {0}")]
    Startup(String),
    #[error("request failed: {0}")]
    Http(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FedsimError>;
