//! Outbound notification when a weekly analysis flags a participant.

use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::state::SessionEvent;

pub const ATTEMPTS: u32 = 3;
const BACKOFF: Duration = Duration::from_millis(200);

/// Body POSTed to the webhook URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPayload {
    /// Always `"risk_outcome"`.
    pub event: String,
    pub participant_id: String,
    pub week: u32,
    pub outcome: u8,
    pub event_id: u64,
    pub generated_at: DateTime<Utc>,
}

impl RiskPayload {
    pub fn new(participant_id: &str, week: u32, event: &SessionEvent) -> Self {
        Self {
            event: "risk_outcome".into(),
            participant_id: participant_id.into(),
            week,
            outcome: 1,
            event_id: event.event_id,
            generated_at: event.timestamp,
        }
    }
}

/// Best-effort delivery: up to three attempts with doubling backoff. Returns
/// the attempt that succeeded.
pub async fn deliver(url: &str, payload: &RiskPayload) -> Result<u32, String> {
    let mut last = String::new();
    for attempt in 1..=ATTEMPTS {
        let url = url.to_string();
        let body = payload.clone();
        let res = tokio::task::spawn_blocking(move || {
            ureq::post(&url)
                .config()
                .timeout_global(Some(Duration::from_secs(5)))
                .build()
                .send_json(&body)
                .map(|_| ())
                .map_err(|e| e.to_string())
        })
        .await
        .map_err(|e| e.to_string())
        .and_then(|r| r);
        match res {
            Ok(()) => return Ok(attempt),
            Err(e) => {
                log::warn!("webhook attempt {attempt}/{ATTEMPTS} failed: {e}");
                last = e;
            }
        }
        if attempt < ATTEMPTS {
            tokio::time::sleep(BACKOFF * 2u32.pow(attempt - 1)).await;
        }
    }
    Err(format!("gave up after {ATTEMPTS} attempts: {last}"))
}
