//! NDJSON encoding and on-the-fly GZIP for response bodies.

use std::io::Write;

use bytes::Bytes;
use flate2::write::GzEncoder;
use flate2::Compression;
use futures::{Stream, StreamExt};
use serde_json::Value;

/// Appends one record as a single NDJSON line.
pub fn write_record(buf: &mut Vec<u8>, record: &Value) {
    serde_json::to_writer(&mut *buf, record).expect("serializing a Value into memory cannot fail");
    buf.push(b'\n');
}

/// Incremental gzip member: each `push` returns the compressed bytes that can
/// be sent so far, `finish` the remainder including the trailer.
pub struct GzipEgress {
    encoder: GzEncoder<Vec<u8>>,
}

impl Default for GzipEgress {
    fn default() -> Self {
        Self::new()
    }
}

impl GzipEgress {
    pub fn new() -> Self {
        Self { encoder: GzEncoder::new(Vec::new(), Compression::fast()) }
    }

    pub fn push(&mut self, data: &[u8]) -> Bytes {
        self.encoder.write_all(data).expect("in-memory write");
        self.encoder.flush().expect("in-memory flush");
        Bytes::from(std::mem::take(self.encoder.get_mut()))
    }

    pub fn finish(self) -> Bytes {
        Bytes::from(self.encoder.finish().expect("in-memory finish"))
    }
}

/// Compresses a body stream as one gzip member. Errors pass through and end
/// the stream without a trailer, so the client sees a truncated body.
pub fn compress_egress<S, E>(body: S) -> impl Stream<Item = Result<Bytes, E>> + Send
where
    S: Stream<Item = Result<Bytes, E>> + Send + Unpin + 'static,
    E: Send + 'static,
{
    futures::stream::unfold(Some((body, GzipEgress::new())), |state| async move {
        let (mut body, mut gz) = state?;
        loop {
            match body.next().await {
                Some(Ok(data)) => {
                    let out = gz.push(&data);
                    if !out.is_empty() {
                        return Some((Ok(out), Some((body, gz))));
                    }
                }
                Some(Err(e)) => return Some((Err(e), None)),
                None => return Some((Ok(gz.finish()), None)),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use flate2::read::GzDecoder;
    use serde_json::json;
    use std::io::Read;

    fn gunzip(bytes: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        GzDecoder::new(bytes).read_to_end(&mut out).unwrap();
        out
    }

    async fn run(parts: Vec<&'static [u8]>) -> Vec<u8> {
        let input = futures::stream::iter(parts.into_iter().map(|p| Ok::<_, ()>(Bytes::from_static(p))));
        let chunks: Vec<_> = compress_egress(input).collect().await;
        chunks.into_iter().flat_map(|c| c.unwrap().to_vec()).collect()
    }

    #[tokio::test]
    async fn empty_body_is_valid_member() {
        let gz = run(vec![]).await;
        assert!(gz.len() >= 18);
        assert!(gunzip(&gz).is_empty());
    }

    #[tokio::test]
    async fn round_trip_matches_identity() {
        let mut raw = Vec::new();
        for i in 0..2000 {
            write_record(&mut raw, &json!({"i": i, "day": "2012-01-01", "cloudAltitudeKm": null}));
        }
        let leaked: &'static [u8] = Box::leak(raw.clone().into_boxed_slice());
        let gz = run(leaked.chunks(777).collect()).await;
        assert_eq!(gunzip(&gz), raw);
        assert!(gz.len() < raw.len());
    }

    #[test]
    fn record_lines() {
        let mut buf = Vec::new();
        write_record(&mut buf, &json!({"a": 1}));
        write_record(&mut buf, &json!({"b": "x\ny"}));
        assert_eq!(buf, b"{\"a\":1}\n{\"b\":\"x\\ny\"}\n");
    }
}
