//! HTTP gateway: plans each request, dispatches sub-tasks through the
//! commander, merges the result streams and writes NDJSON, optionally gzipped.

mod egress;
mod gateway;
mod http;
mod merge;
mod pool;

pub use egress::{compress_egress, write_record, GzipEgress};
pub use gateway::{
    plan_split, BodyStream, Gateway, GatewayError, GatewayOptions, GatewayStats, RequestPlan, DEFAULT_INFLIGHT,
    DEFAULT_SPLIT_THRESHOLD,
};
pub use http::{accepts_gzip, router, HttpServer, NDJSON};
pub use merge::{merge_streams, MergeError, MergeState};
pub use pool::{BackendPool, RouteGuard};

use serde_json::json;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;
use tracing::debug;

use crate::wire::messages::PongMsg;
use crate::wire::{MessageType, ObjectConnection};

/// Wire-protocol control port: answers `ping` and honours `stop`.
pub async fn serve_control(listener: TcpListener, gateway: Gateway, shutdown: CancellationToken) {
    loop {
        let (stream, _) = tokio::select! {
            _ = shutdown.cancelled() => return,
            accepted = listener.accept() => match accepted {
                Ok(a) => a,
                Err(_) => continue,
            },
        };
        let gateway = gateway.clone();
        let shutdown = shutdown.clone();
        tokio::spawn(async move {
            let mut conn = ObjectConnection::from_stream(stream);
            while let Some(Ok(env)) = conn.recv().await {
                match env.kind {
                    MessageType::Ping => {
                        let pong =
                            PongMsg { role: "frontend".into(), pid: std::process::id(), stats: json!(gateway.stats()) };
                        let _ = conn.send(&env.reply(MessageType::Pong, &pong));
                    }
                    MessageType::Stop => {
                        let _ = conn.send(&env.reply(MessageType::Done, &json!({})));
                        shutdown.cancel();
                    }
                    other => debug!("control port ignores {other}"),
                }
            }
        });
    }
}
