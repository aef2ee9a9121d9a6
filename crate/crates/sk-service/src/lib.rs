//! HTTP services for one site: the Security Kernel under `/v3/security`,
//! Tokens under `/v3/tokens` and the Tenants registry under `/v3/tenants`.
//!
//! Every authenticated route runs the gatekeeper before its handler; see
//! [`auth::Authenticated`].

pub mod adapters;
pub mod auth;
pub mod envelope;
pub mod sk;
pub mod tenants;
pub mod tokens;

use axum::Router;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use auth::{Authenticated, Gate, HasGate};
pub use envelope::{ApiEnvelope, ApiError, API_VERSION};
pub use sk::{SkState, StartupError};
pub use tenants::TenantsState;
pub use tokens::TokensState;

/// A running listener.
pub struct ServiceHandle {
    pub addr: std::net::SocketAddr,
    task: JoinHandle<()>,
}

impl ServiceHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn abort(&self) {
        self.task.abort();
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Serves `app` on `listener` in a background task. Unknown paths get an
/// envelope 404.
pub fn spawn(listener: TcpListener, app: Router) -> std::io::Result<ServiceHandle> {
    let addr = listener.local_addr()?;
    let app = app.fallback(envelope::not_found);
    let task = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("listener {addr} stopped: {e}");
        }
    });
    Ok(ServiceHandle { addr, task })
}

/// Binds an ephemeral localhost port.
pub async fn spawn_local(app: Router) -> std::io::Result<ServiceHandle> {
    spawn(TcpListener::bind("127.0.0.1:0").await?, app)
}
