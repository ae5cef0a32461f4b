//! Live evaluation sessions over HTTP.
//!
//! Clients create a comparison, post each round of rollout scores as it
//! completes, and poll the evidence traces and verdict. Every accepted
//! request is appended to a JSON-lines event log; on restart the sessions
//! are rebuilt by replaying it through the engine.
//!
//! Routes (all payloads carry `"v": 1`):
//!
//! | method | path | |
//! |---|---|---|
//! | `POST` | `/sessions` | create; body is the session config |
//! | `GET` | `/sessions` | list |
//! | `GET` | `/sessions/{id}` | full state with traces |
//! | `POST` | `/sessions/{id}/trials` | submit one round; honours `Idempotency-Key` |

pub mod api;
pub mod error;
pub mod model;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub use api::{router, SessionRegistry};
pub use error::{Result, SessionError};
pub use model::{AppendResponse, Session, SessionConfig, SessionView};

/// Binds `addr` and serves until Ctrl-C. With `store` set, sessions persist
/// in that file across restarts.
pub async fn serve(addr: SocketAddr, store: Option<PathBuf>) -> Result<()> {
    let registry = match store {
        Some(path) => SessionRegistry::open(path)?,
        None => SessionRegistry::in_memory(),
    };
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving sessions");
    axum::serve(listener, router(Arc::new(registry)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
