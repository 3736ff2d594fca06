//! Length-prefixed JSON frames: encode, split into odd-sized chunks, decode.

use scatterd::wire::messages::ChunkMsg;
use scatterd::wire::{encode_frame, Envelope, FrameDecoder, MessageType, MAX_FRAME_LEN};
use serde_json::json;

fn main() {
    let chunk = ChunkMsg {
        request_id: "req-1".into(),
        subtask_id: "req-1:0".into(),
        seq: 0,
        records: vec![json!({"time": "2024-01-01T00:00:00Z", "altitude": 14.0})],
    };
    let env = Envelope::new(MessageType::Chunk, "req-1", &chunk);
    let mut bytes = encode_frame(&env.to_object()).unwrap().to_vec();
    bytes.extend(encode_frame(&Envelope::empty(MessageType::Ping, "p1").to_object()).unwrap());
    println!("two frames, {} bytes (cap {MAX_FRAME_LEN})", bytes.len());

    let mut decoder = FrameDecoder::new();
    for piece in bytes.chunks(7) {
        for obj in decoder.push(piece).unwrap() {
            let env = Envelope::from_object(obj).unwrap();
            println!("{:<6} id={} payload={}", env.kind.as_str(), env.id, serde_json::to_string(&env.payload).unwrap());
        }
    }

    let mut oversized = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes().to_vec();
    oversized.extend(b"{}");
    println!("oversized frame -> {}", FrameDecoder::new().push(&oversized).unwrap_err());
}
