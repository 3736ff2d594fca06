//! The scheduler's rotation over registered back-ends, in-process and over
//! the wire.

use scatterd::scheduler::{RoundRobinScheduler, SchedulerClient, SchedulerServer};
use tokio_util::sync::CancellationToken;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rr = RoundRobinScheduler::new();
    for port in [7201, 7202, 7203] {
        rr.register_backend("127.0.0.1", port);
    }
    for _ in 0..4 {
        let ids: Vec<String> = rr.allocate(2)?.iter().map(|b| b.addr().endpoint()).collect();
        println!("allocate(2) -> {ids:?}  cursor={}", rr.cursor());
    }

    let server = SchedulerServer::bind("127.0.0.1:0").await?;
    let addr = server.local_addr();
    let stop = CancellationToken::new();
    tokio::spawn(server.run(stop.clone()));

    let client = SchedulerClient::new(addr.to_string());
    client.register("127.0.0.1", 7301).await?;
    client.register("127.0.0.1", 7302).await?;
    let ids = |a: scatterd::wire::messages::AllocationMsg| a.servers.iter().map(|b| b.endpoint()).collect::<Vec<_>>();
    println!("allocate(all) -> {:?}", ids(client.allocate(None).await?));
    client.deregister("127.0.0.1", 7301).await?;
    println!("after deregister -> {:?}", ids(client.allocate(None).await?));
    client.deregister("127.0.0.1", 7302).await?;
    println!("empty -> {}", client.allocate(Some(1)).await.unwrap_err());
    stop.cancel();
    Ok(())
}
