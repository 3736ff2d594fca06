//! Concurrent versus iterative dispatch over simulated back-ends with
//! random latency: where the sub-tasks land and how many ran at once.

use std::sync::Arc;

use futures::StreamExt;
use scatterd::commander::simulated::SimulatedBackends;
use scatterd::commander::{execute, ExecutionOptions, SubtaskDispatcher};
use scatterd::frontend::merge_streams;
use scatterd::registry::{ExecutionMode, SubTask};
use serde_json::json;

async fn run(label: &str, mode: ExecutionMode, options: ExecutionOptions) {
    let sim = SimulatedBackends::new(9, (0, 5));
    let tasks: Vec<SubTask> = (0..60)
        .map(|i| SubTask {
            usecase_name: "sim".into(),
            params: json!({ "records": 1 + i % 4 }),
            subtask_id: format!("{label}:{i}"),
            mode,
        })
        .collect();
    let ids: Vec<String> = tasks.iter().map(|t| t.subtask_id.clone()).collect();
    let inbound = sim.open_request(label);
    let dispatcher: Arc<dyn SubtaskDispatcher> = Arc::new(sim.clone());
    let exec = execute(label, tasks, &SimulatedBackends::addrs(3), options, dispatcher, inbound).unwrap();
    let records = merge_streams(ids, exec.events).filter(|r| futures::future::ready(r.is_ok())).count().await;
    let report = exec.handle.await.unwrap();
    println!("{label}: {records} records, {} completed", report.ledger.completed);
    println!("  per back-end   {:?}", sim.received_per_backend());
    println!("  peak in flight {:?}", sim.peak_running());
}

#[tokio::main]
async fn main() {
    run("concurrent", ExecutionMode::Concurrent, ExecutionOptions::concurrent()).await;
    run("iterative", ExecutionMode::Iterative, ExecutionOptions::iterative(2).audited()).await;
}
