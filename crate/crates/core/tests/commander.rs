use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use serde_json::{json, Value};

use scatterd::commander::simulated::SimulatedBackends;
use scatterd::commander::{execute, ExecutionOptions, ExecutionReport, SubtaskDispatcher};
use scatterd::frontend::{merge_streams, MergeError};
use scatterd::registry::{ExecutionMode, SubTask};

fn subtasks(n: usize, records: u64) -> Vec<SubTask> {
    (0..n)
        .map(|i| SubTask {
            usecase_name: "sim".into(),
            params: json!({ "records": records + (i as u64 % 3) }),
            subtask_id: format!("r:{i}"),
            mode: ExecutionMode::Concurrent,
        })
        .collect()
}

async fn run(
    sim: &SimulatedBackends,
    request_id: &str,
    tasks: Vec<SubTask>,
    servers: usize,
    options: ExecutionOptions,
) -> (Vec<Result<Value, MergeError>>, ExecutionReport) {
    let ids: Vec<String> = tasks.iter().map(|t| t.subtask_id.clone()).collect();
    let inbound = sim.open_request(request_id);
    let dispatcher: Arc<dyn SubtaskDispatcher> = Arc::new(sim.clone());
    let exec = execute(request_id, tasks, &SimulatedBackends::addrs(servers), options, dispatcher, inbound).unwrap();
    let out: Vec<_> = merge_streams(ids, exec.events).collect().await;
    (out, exec.handle.await.unwrap())
}

#[tokio::test]
async fn ten_over_five_servers() {
    let sim = SimulatedBackends::new(1, (100, 100));
    let inbound = sim.open_request("q");
    let dispatcher: Arc<dyn SubtaskDispatcher> = Arc::new(sim.clone());
    let exec = execute(
        "q",
        subtasks(10, 3),
        &SimulatedBackends::addrs(5),
        ExecutionOptions::concurrent(),
        dispatcher,
        inbound,
    )
    .unwrap();
    tokio::time::sleep(Duration::from_millis(30)).await;
    // every dispatch happens before any simulated handler finishes
    assert_eq!(sim.received().len(), 10);
    let per = sim.received_per_backend();
    assert_eq!(per.len(), 5);
    assert!(per.values().all(|&n| n == 2), "{per:?}");
    let ids = (0..10).map(|i| format!("r:{i}"));
    let out: Vec<_> = merge_streams(ids, exec.events).collect().await;
    assert!(out.iter().all(Result::is_ok));
    let report = exec.handle.await.unwrap();
    assert_eq!(report.ledger.completed, 10);
}

#[tokio::test]
async fn one_subtask_leaves_servers_idle() {
    let sim = SimulatedBackends::new(2, (1, 5));
    let (out, report) = run(&sim, "q", subtasks(1, 4), 4, ExecutionOptions::concurrent()).await;
    assert_eq!(out.len(), 4);
    assert_eq!(sim.received().len(), 1);
    assert_eq!(report.ledger.dispatch_total, 1);
}

#[tokio::test]
async fn killed_server_fails_its_subtasks() {
    let sim = SimulatedBackends::new(3, (150, 150));
    let tasks = subtasks(8, 10);
    let ids: Vec<String> = tasks.iter().map(|t| t.subtask_id.clone()).collect();
    let inbound = sim.open_request("q");
    let dispatcher: Arc<dyn SubtaskDispatcher> = Arc::new(sim.clone());
    let exec = execute(
        "q",
        tasks,
        &SimulatedBackends::addrs(4),
        ExecutionOptions::concurrent().audited(),
        dispatcher,
        inbound,
    )
    .unwrap();
    tokio::time::sleep(Duration::from_millis(20)).await;
    sim.kill("sim-1");
    let out: Vec<_> = merge_streams(ids, exec.events).collect().await;
    assert!(matches!(out.last(), Some(Err(MergeError::SubtaskFailed { .. }))));
    let report = exec.handle.await.unwrap();
    // sub-tasks 1 and 5 went to sim-1
    assert_eq!(report.ledger.failed, vec!["r:1".to_string(), "r:5".to_string()]);
    assert_eq!(report.invariant_violations, 0);
}

#[tokio::test]
async fn iterative_bound_and_completeness() {
    let sim = SimulatedBackends::new(4, (0, 4));
    let (out, report) = run(&sim, "q", subtasks(400, 2), 4, ExecutionOptions::iterative(10).audited()).await;
    assert!(out.iter().all(Result::is_ok));
    assert_eq!(report.ledger.completed, 400);
    assert_eq!(report.ledger.dispatch_total, 400);
    assert_eq!(sim.received().len(), 400);
    assert!(report.ledger.peak_in_flight.values().all(|&p| p <= 10), "{:?}", report.ledger.peak_in_flight);
    assert!(sim.peak_running().values().all(|&p| p <= 10));
    assert_eq!(report.invariant_violations, 0);
    assert_eq!(report.protocol_violations, 0);
    // every slot retires exactly once
    assert_eq!(sim.done_per_backend().values().sum::<usize>(), 40);
}

#[tokio::test]
async fn short_queue_retires_spare_slot_immediately() {
    let sim = SimulatedBackends::new(5, (50, 50));
    let inbound = sim.open_request("q");
    let dispatcher: Arc<dyn SubtaskDispatcher> = Arc::new(sim.clone());
    let exec =
        execute("q", subtasks(3, 1), &SimulatedBackends::addrs(4), ExecutionOptions::iterative(1), dispatcher, inbound)
            .unwrap();
    tokio::time::sleep(Duration::from_millis(10)).await;
    assert_eq!(sim.received().len(), 3);
    assert_eq!(sim.done_per_backend(), HashMap::from([("sim-3".to_string(), 1)]));
    let out: Vec<_> = merge_streams((0..3).map(|i| format!("r:{i}")), exec.events).collect().await;
    assert_eq!(out.len(), 1 + 2 + 3);
    let report = exec.handle.await.unwrap();
    assert_eq!(report.ledger.dispatch_total, 3);
}

#[tokio::test]
async fn paradigms_agree_on_results() {
    let mut results = Vec::new();
    for options in [ExecutionOptions::concurrent(), ExecutionOptions::iterative(3)] {
        let sim = SimulatedBackends::new(6, (0, 10));
        let (out, _) = run(&sim, "q", subtasks(25, 7), 3, options).await;
        let mut lines: Vec<String> = out.into_iter().map(|r| r.unwrap().to_string()).collect();
        lines.sort();
        results.push(lines);
    }
    assert_eq!(results[0].len(), 25 * 7 + 8 + 8 * 2);
    assert_eq!(results[0], results[1]);
}

#[tokio::test]
async fn all_servers_lost_fails_the_queue() {
    let sim = SimulatedBackends::new(7, (100, 100));
    let tasks = subtasks(20, 1);
    let ids: Vec<String> = tasks.iter().map(|t| t.subtask_id.clone()).collect();
    let inbound = sim.open_request("q");
    let dispatcher: Arc<dyn SubtaskDispatcher> = Arc::new(sim.clone());
    let exec = execute(
        "q",
        tasks,
        &SimulatedBackends::addrs(2),
        ExecutionOptions::iterative(2).audited(),
        dispatcher,
        inbound,
    )
    .unwrap();
    tokio::time::sleep(Duration::from_millis(10)).await;
    sim.kill("sim-0");
    sim.kill("sim-1");
    let out: Vec<_> = merge_streams(ids, exec.events).collect().await;
    assert!(out.last().unwrap().is_err());
    let report = exec.handle.await.unwrap();
    assert_eq!(report.ledger.terminal, 20);
    assert_eq!(report.ledger.failed.len(), 20);
    assert_eq!(report.invariant_violations, 0);
}
