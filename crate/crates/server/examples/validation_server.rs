//! Starts the HTTP API on an ephemeral port, registers a synthetic dataset
//! and plays an analyst session against it over plain HTTP/1.1.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;

use dpvs::eval::{synth_taxlike_data, taxlike_schema};
use dpvs_server::{router, AppState, ServerConfig, ValidationService};
use serde_json::{json, Value};

fn call(addr: SocketAddr, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
    let payload = body.map(|b| b.to_string()).unwrap_or_default();
    let mut stream = TcpStream::connect(addr).expect("connect");
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )
    .expect("write request");
    let mut raw = String::new();
    stream.read_to_string(&mut raw).expect("read response");
    let status = raw.split_whitespace().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let body = raw.split_once("\r\n\r\n").map(|(_, b)| b).unwrap_or("");
    (status, serde_json::from_str(body).unwrap_or(Value::Null))
}

fn show(label: &str, (status, body): (u16, Value)) {
    println!("{label}\n  {status} {}\n", serde_json::to_string(&body).unwrap());
}

#[tokio::main]
async fn main() {
    let dir = tempfile::tempdir().expect("temp dir");
    let csv = dir.path().join("returns.csv");
    synth_taxlike_data(20_000, 1).expect("synthetic data").write_csv(&csv).expect("write csv");

    let config = ServerConfig { storage_dir: Some(dir.path().join("store")), seed: Some(1), ..ServerConfig::default() };
    let service = ValidationService::open(&config).expect("open service");
    let state = Arc::new(AppState { service, api_token: None });
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router(state)).await });
    println!("serving on {addr}\n");

    let registration = json!({
        "id": "returns",
        "csv_path": csv,
        "schema": taxlike_schema(),
        "total_budget": {"epsilon": 3.0, "delta": 1e-5},
        "min_subset_size": 50
    });
    tokio::task::spawn_blocking(move || {
        show("POST /datasets", call(addr, "POST", "/datasets", Some(&registration)));
        show("GET /datasets/returns/budget", call(addr, "GET", "/datasets/returns/budget", None));
        let mean = json!({"kind": "mean", "column": "income", "method": "NOISYVAR", "epsilon": 0.5});
        show("POST /datasets/returns/preview", call(addr, "POST", "/datasets/returns/preview", Some(&mean)));
        show("mean income, eps 0.5", call(addr, "POST", "/datasets/returns/queries", Some(&mean)));
        let quantiles = json!({"kind": "quantile", "column": "earned_income", "probabilities": [0.25, 0.5, 0.75],
                               "epsilon": 0.5, "filter": [{"column": "age65", "equals": "1"}]});
        show("earned income quartiles, age 65+", call(addr, "POST", "/datasets/returns/queries", Some(&quantiles)));
        let regression = json!({"kind": "regression", "response": "cg_ratio",
                                "numeric": ["marginal_rate", "log_dividends", "log_agi"], "categorical": ["age65"],
                                "mechanism": "analytic-gaussian", "bootstrap_replicates": 200,
                                "epsilon": 1.5, "delta": 1e-6});
        show("regression, eps 1.5", call(addr, "POST", "/datasets/returns/queries", Some(&regression)));
        show("mean income again, spends the rest", call(addr, "POST", "/datasets/returns/queries", Some(&mean)));
        show("over budget", call(addr, "POST", "/datasets/returns/queries", Some(&mean)));
        let tiny = json!({"kind": "histogram", "column": "income", "epsilon": 0.1,
                          "filter": [{"column": "age65", "equals": "2"}]});
        show("unknown level in filter", call(addr, "POST", "/datasets/returns/queries", Some(&tiny)));
        show("GET /datasets/returns/budget", call(addr, "GET", "/datasets/returns/budget", None));
    })
    .await
    .unwrap();
}
