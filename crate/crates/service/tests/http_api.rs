mod common;

use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use common::*;
use mhfa_core::gateway::{FnBackend, MockRule};
use mhfa_core::Gateway;
use mhfa_service::store::replay;
use serde_json::json;

#[test]
fn session_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let base = spawn(app(dir.path(), mock(vec![MockRule::reply("*", "Glad to hear it.")]), |_| {}));

    let (status, created) = post(&format!("{base}/sessions"), None, json!({"participant_id": "p01", "local_hour": 20}));
    assert_eq!(status, 201);
    let id = created["session_id"].as_str().unwrap().to_string();
    assert_eq!(created["turns"], json!([]));

    let (status, fetched) = get(&format!("{base}/sessions/{id}"), None);
    assert_eq!(status, 200);
    assert_eq!(fetched, created);

    let (status, body) = post(&format!("{base}/sessions/{id}/messages"), None, json!({"text": "I slept well"}));
    assert_eq!(status, 200);
    assert_eq!(body["reply"], "Glad to hear it.");
    let turns = body["session"]["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 2);
    assert_eq!(turns[0]["text"], "I slept well");

    let (status, err) = get(&format!("{base}/sessions/nope"), None);
    assert_eq!(status, 404);
    assert_eq!(err["error"], "not_found");
}

#[test]
fn ema_validation_and_same_day_supersede() {
    let dir = tempfile::tempdir().unwrap();
    let base = spawn(app(dir.path(), mock(vec![MockRule::reply("*", "ok")]), |_| {}));
    let url = format!("{base}/ema");

    let (status, ok) = post(&url, None, json!({"participant_id": "p02", "date": "2024-03-05", "indicators": {"phq4": 6, "mood": 2}}));
    assert_eq!(status, 200);
    assert_eq!(ok["week"], 0);

    let (status, err) = post(&url, None, json!({"participant_id": "p02", "date": "2024-03-05", "indicators": {"phq4": 13}}));
    assert_eq!(status, 422);
    assert_eq!(err["field"], "phq4");

    let (status, err) = post(&url, None, json!({"participant_id": "p02", "date": "2024-03-05", "indicators": {"happiness": 3}}));
    assert_eq!(status, 422);
    assert_eq!(err["field"], "happiness");

    let (status, again) = post(&url, None, json!({"participant_id": "p02", "date": "2024-03-05", "indicators": {"mood": 4}}));
    assert_eq!(status, 200);
    let records = again["bundle"]["records"].as_array().unwrap();
    assert_eq!(records.len(), 1);
    let inds = records[0]["indicators"].as_array().unwrap();
    assert_eq!(inds.len(), 1, "later submission replaces the whole day: {inds:?}");
    assert_eq!(inds[0]["value"], 4.0);

    let (status, later) = post(&url, None, json!({"participant_id": "p02", "date": "2024-03-12", "indicators": {"mood": 3}}));
    assert_eq!(status, 200);
    assert_eq!(later["week"], 1);
}

#[test]
fn bearer_token_required_except_health() {
    let dir = tempfile::tempdir().unwrap();
    let base = spawn(app(dir.path(), mock(vec![MockRule::reply("*", "ok")]), |a| {
        a.auth_token = Some("s3cret".into())
    }));
    let (status, body) = post(&format!("{base}/sessions"), None, json!({"participant_id": "p"}));
    assert_eq!(status, 401);
    assert_eq!(body["error"], "unauthorized");
    assert_eq!(post(&format!("{base}/sessions"), Some("wrong"), json!({"participant_id": "p"})).0, 401);
    assert_eq!(get(&format!("{base}/healthz"), None).0, 200);
    assert_eq!(post(&format!("{base}/sessions"), Some("s3cret"), json!({"participant_id": "p"})).0, 201);
}

#[test]
fn at_risk_analysis_fires_webhook_with_retries() {
    let (hook, count, bodies) = webhook_sink(2);
    let dir = tempfile::tempdir().unwrap();
    let base = spawn(app(dir.path(), mock(vec![MockRule::reply("*", ANALYSIS)]), |a| {
        a.webhook_url = Some(hook.clone())
    }));
    assert_eq!(post(&format!("{base}/participants/p03/analyze?week=0"), None, json!({})).0, 404);

    let (status, _) = post(&format!("{base}/ema"), None, json!({"participant_id": "p03", "date": "2024-03-04", "indicators": {"mood": 1, "stress": 5}}));
    assert_eq!(status, 200);
    let (status, report) = post(&format!("{base}/participants/p03/analyze?week=0"), None, json!({}));
    assert_eq!(status, 200, "{report}");
    assert_eq!(report["outcome"], 1);

    let deadline = Instant::now() + Duration::from_secs(10);
    while count.load(Ordering::SeqCst) < 3 && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(20));
    }
    std::thread::sleep(Duration::from_millis(300));
    assert_eq!(count.load(Ordering::SeqCst), 3, "two failures then one success");
    let last: serde_json::Value = serde_json::from_str(bodies.lock().unwrap().last().unwrap()).unwrap();
    assert_eq!(last["event"], "risk_outcome");
    assert_eq!(last["participant_id"], "p03");
    assert_eq!(last["week"], 0);

    let (status, stored) = get(&format!("{base}/participants/p03/weeks/0/report"), None);
    assert_eq!(status, 200);
    assert_eq!(stored["analysis"]["outcome"], 1);
    assert!(stored["report_text"].as_str().unwrap().contains("p03"));
}

fn echo_gateway() -> Gateway {
    Gateway::new(FnBackend::chat("echo", |prompt| format!("heard {} chars", prompt.len())))
}

fn run_sessions(concurrent: bool) -> Vec<Vec<String>> {
    let dir = tempfile::tempdir().unwrap();
    let state = app(dir.path(), echo_gateway(), |_| {});
    let base = spawn(state.clone());
    let ids: Vec<String> = (0..6)
        .map(|i| {
            let (_, s) = post(&format!("{base}/sessions"), None, json!({"participant_id": format!("p{i}"), "local_hour": 9}));
            s["session_id"].as_str().unwrap().to_string()
        })
        .collect();
    let talk = |id: &str| {
        for m in ["morning", "slept badly", "a bit tired"] {
            let (status, _) = post(&format!("{base}/sessions/{id}/messages"), None, json!({"text": m}));
            assert_eq!(status, 200);
        }
    };
    if concurrent {
        std::thread::scope(|s| {
            for id in &ids {
                s.spawn(|| talk(id));
            }
        });
    } else {
        ids.iter().for_each(|id| talk(id));
    }
    let texts = ids
        .iter()
        .map(|id| get(&format!("{base}/sessions/{id}"), None).1["turns"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t["text"].as_str().unwrap().to_string())
            .collect())
        .collect();
    // the in-memory state is exactly what the log replays to
    assert_eq!(replay(dir.path()).unwrap(), *state.store.lock().state());
    texts
}

#[test]
fn concurrent_sessions_match_sequential_and_replay() {
    let seq = run_sessions(false);
    let par = run_sessions(true);
    assert_eq!(seq, par);
    assert!(seq.iter().all(|t| t.len() == 6));
}
