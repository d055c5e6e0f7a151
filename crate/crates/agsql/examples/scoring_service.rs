//! Start the scoring service on an ephemeral port and exercise every
//! endpoint with a plain HTTP client.
//!
//! Run with: `cargo run --example scoring_service`

use agsql::datasets::mini_corpus::write_mini_corpus;
use agsql::service::{serve, ServiceConfig};

fn main() {
    let dir = std::env::temp_dir().join("agsql-service-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let manifest = write_mini_corpus(&dir).expect("corpus materializes");

    let bind = "127.0.0.1:8714".to_string();
    let cfg = ServiceConfig {
        bind: bind.clone(),
        db_root: manifest.db_root.clone(),
        ..ServiceConfig::default()
    };
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().expect("runtime");
        runtime.block_on(serve(cfg)).expect("service runs");
    });
    // Wait for the listener.
    std::thread::sleep(std::time::Duration::from_millis(300));

    let client = reqwest::blocking::Client::new();
    let base = format!("http://{bind}");

    let health: serde_json::Value = client
        .get(format!("{base}/healthz"))
        .send()
        .expect("healthz")
        .json()
        .expect("json");
    println!("healthz       -> {health}");

    let csmr: serde_json::Value = client
        .post(format!("{base}/score/csmr"))
        .json(&serde_json::json!({
            "gold_table": [["a1", "b1"], ["a2", "b2"]],
            "pred_table": [["a1", "b2"], ["a2", "b1"]],
            "alpha": 0.8,
        }))
        .send()
        .expect("csmr")
        .json()
        .expect("json");
    println!("pseudoperfect -> {csmr}");

    let csmr_sql: serde_json::Value = client
        .post(format!("{base}/score/csmr"))
        .json(&serde_json::json!({
            "gold_sql": "SELECT name FROM products WHERE category = 'citrus'",
            "pred_sql": "SELECT name, price FROM products WHERE category = 'citrus'",
            "db_id": "orchard_sales",
        }))
        .send()
        .expect("csmr sql")
        .json()
        .expect("json");
    println!("sql scoring   -> {csmr_sql}");

    let atr: serde_json::Value = client
        .post(format!("{base}/score/atr"))
        .json(&serde_json::json!({ "scores": [1.0, 0.0, 1.0], "preset": "figure" }))
        .send()
        .expect("atr")
        .json()
        .expect("json");
    println!("atr           -> {atr}");

    let advantage: serde_json::Value = client
        .post(format!("{base}/advantage"))
        .json(&serde_json::json!({ "rewards": [0.0, 1.0] }))
        .send()
        .expect("advantage")
        .json()
        .expect("json");
    println!("advantage     -> {advantage}");
}
