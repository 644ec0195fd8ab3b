#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use mhfa_core::gateway::{MockBackend, MockRule};
use mhfa_core::Gateway;
use mhfa_service::api::{router, AppState};
use mhfa_service::state::BundleIndex;
use mhfa_service::store::Store;
use serde_json::Value;

pub const ANALYSIS: &str = "Phase 1: Synthesis\nSteps fell.\nPhase 2: Behavior Analysis\nLess sleep.\nPhase 3: Correlation Analysis\nLow mood with low activity.\nPhase 4: Recommendation\nShort walks.\nPhase 5: Outcome\nOutcome: 1";

pub fn mock(rules: Vec<MockRule>) -> Gateway {
    Gateway::new(MockBackend::new(rules).unwrap())
}

pub fn app(dir: &Path, gateway: Gateway, configure: impl FnOnce(&mut AppState)) -> Arc<AppState> {
    let store = Store::open(dir, 1000).unwrap();
    let mut app = AppState::new(store, gateway, BundleIndex::new(Vec::new()));
    configure(&mut app);
    Arc::new(app)
}

/// Serves the router on an ephemeral port from a background runtime.
pub fn spawn(app: Arc<AppState>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router(app)).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into()
}

pub fn post(url: &str, token: Option<&str>, body: Value) -> (u16, Value) {
    let mut req = agent().post(url);
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    let mut resp = req.send_json(&body).unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

pub fn get(url: &str, token: Option<&str>) -> (u16, Value) {
    let mut req = agent().get(url);
    if let Some(t) = token {
        req = req.header("Authorization", &format!("Bearer {t}"));
    }
    let mut resp = req.call().unwrap();
    let status = resp.status().as_u16();
    (status, resp.body_mut().read_json().unwrap_or(Value::Null))
}

/// A tiny HTTP sink that fails the first `fail_first` requests with 500.
/// Returns its URL, the request counter and the received bodies.
pub fn webhook_sink(fail_first: usize) -> (String, Arc<AtomicUsize>, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/hook", listener.local_addr().unwrap());
    let count = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let (c, b) = (count.clone(), bodies.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap_or(0);
                }
            }
            let mut body = vec![0u8; len];
            let _ = reader.read_exact(&mut body);
            let n = c.fetch_add(1, Ordering::SeqCst) + 1;
            b.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());
            let status = if n <= fail_first { "500 Internal Server Error" } else { "200 OK" };
            let _ = write!(stream, "HTTP/1.1 {status}\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
        }
    });
    (url, count, bodies)
}
