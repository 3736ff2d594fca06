use std::net::SocketAddr;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;
use tracing::info;

use super::egress::compress_egress;
use super::gateway::Gateway;
use crate::registry::QueryParams;

pub const NDJSON: &str = "application/x-ndjson";

pub fn router(gateway: Gateway) -> Router {
    Router::new()
        .route("/api/*usecase", get(api))
        .route("/healthz", get(|| async { "ok" }))
        .route("/stats", get(stats))
        .with_state(gateway)
}

/// True when `Accept-Encoding` lists gzip with a non-zero quality.
pub fn accepts_gzip(headers: &HeaderMap) -> bool {
    headers.get_all(header::ACCEPT_ENCODING).iter().filter_map(|v| v.to_str().ok()).flat_map(|v| v.split(',')).any(
        |item| {
            let mut parts = item.split(';').map(str::trim);
            let coding = parts.next().unwrap_or("");
            let q_zero = parts.any(|p| p.replace(' ', "").parse::<QZero>().is_ok());
            (coding.eq_ignore_ascii_case("gzip") || coding == "*") && !q_zero
        },
    )
}

struct QZero;

impl std::str::FromStr for QZero {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s.strip_prefix("q=").map(str::parse::<f32>) {
            Some(Ok(q)) if q == 0.0 => Ok(QZero),
            _ => Err(()),
        }
    }
}

async fn api(
    State(gateway): State<Gateway>,
    Path(usecase): Path<String>,
    Query(query): Query<QueryParams>,
    headers: HeaderMap,
) -> Response {
    let gzip = accepts_gzip(&headers);
    match gateway.handle(&usecase, &query).await {
        Ok(body) => {
            let mut resp = if gzip {
                Response::new(Body::from_stream(compress_egress(body)))
            } else {
                Response::new(Body::from_stream(body))
            };
            let h = resp.headers_mut();
            h.insert(header::CONTENT_TYPE, HeaderValue::from_static(NDJSON));
            if gzip {
                h.insert(header::CONTENT_ENCODING, HeaderValue::from_static("gzip"));
            }
            h.insert(header::VARY, HeaderValue::from_static("accept-encoding"));
            resp
        }
        Err(e) => {
            let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::BAD_GATEWAY);
            (status, Json(json!({ "error": e.to_string() }))).into_response()
        }
    }
}

async fn stats(State(gateway): State<Gateway>) -> Json<super::GatewayStats> {
    Json(gateway.stats())
}

pub struct HttpServer {
    listener: TcpListener,
    gateway: Gateway,
}

impl HttpServer {
    pub async fn bind(addr: impl tokio::net::ToSocketAddrs, gateway: Gateway) -> std::io::Result<Self> {
        Ok(Self { listener: TcpListener::bind(addr).await?, gateway })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    /// Serves until `shutdown` fires, then lets in-flight responses finish.
    pub async fn run(self, shutdown: CancellationToken) -> std::io::Result<()> {
        info!(addr = %self.local_addr(), "front-end http listening");
        axum::serve(self.listener, router(self.gateway)).with_graceful_shutdown(shutdown.cancelled_owned()).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(v: &'static str) -> HeaderMap {
        let mut m = HeaderMap::new();
        m.insert(header::ACCEPT_ENCODING, HeaderValue::from_static(v));
        m
    }

    #[test]
    fn gzip_negotiation() {
        assert!(accepts_gzip(&h("gzip")));
        assert!(accepts_gzip(&h("deflate, gzip;q=0.5")));
        assert!(accepts_gzip(&h("*")));
        assert!(!accepts_gzip(&h("gzip;q=0")));
        assert!(!accepts_gzip(&h("identity")));
        assert!(!accepts_gzip(&HeaderMap::new()));
    }
}
