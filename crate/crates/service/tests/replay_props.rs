use std::io::Write;

use chrono::NaiveDate;
use mhfa_core::analysis::{open_session, Speaker, Turn};
use mhfa_core::cohort::{IndicatorName, MentalIndicator};
use mhfa_core::templates::Scenario;
use mhfa_service::state::{EmaSubmission, EventBody};
use mhfa_service::store::{replay, Store};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Open(u8),
    Message(u8, String),
    Ema(u8, u8, u8),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..4).prop_map(Op::Open),
        (0u8..4, "[a-z ]{1,12}").prop_map(|(s, t)| Op::Message(s, t)),
        (0u8..3, 0u8..14, 1u8..6).prop_map(|(p, d, m)| Op::Ema(p, d, m)),
    ]
}

fn turn(role: Speaker, text: &str) -> Turn {
    Turn { role, text: text.into(), timestamp: chrono::DateTime::UNIX_EPOCH }
}

fn apply(store: &mut Store, op: &Op) {
    let batch = match op {
        Op::Open(p) => {
            let id = store.state().next_session_id();
            let s = open_session(id.clone(), format!("p{p}"), Scenario::MentalHealth, None, None, 12);
            vec![(Some(id), EventBody::SessionOpened(s))]
        }
        Op::Message(s, text) => {
            let ids: Vec<String> = store.state().sessions.keys().cloned().collect();
            if ids.is_empty() {
                return;
            }
            let id = ids[*s as usize % ids.len()].clone();
            vec![
                (Some(id.clone()), EventBody::UserMsg(turn(Speaker::User, text))),
                (Some(id), EventBody::AssistantMsg(turn(Speaker::Assistant, "ok"))),
            ]
        }
        Op::Ema(p, d, m) => {
            let date = NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Duration::days(*d as i64);
            vec![(
                None,
                EventBody::EmaSubmitted(EmaSubmission {
                    participant_id: format!("p{p}"),
                    date,
                    indicators: vec![MentalIndicator::new(IndicatorName::Mood, *m as f64).unwrap()],
                }),
            )]
        }
    };
    store.append(batch).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn replay_reopen_and_torn_tail_agree(ops in prop::collection::vec(op(), 0..25), every in 1u64..8) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path(), every).unwrap();
        for o in &ops {
            apply(&mut store, o);
        }
        let live = store.state().clone();
        drop(store);
        prop_assert_eq!(&replay(dir.path()).unwrap(), &live);

        // a half-written record at the end is dropped on open
        let mut log = std::fs::OpenOptions::new().append(true).open(dir.path().join("events.jsonl")).unwrap();
        log.write_all(br#"{"event_id": 99999, "kind": "user_m"#).unwrap();
        drop(log);
        let reopened = Store::open(dir.path(), every).unwrap();
        prop_assert_eq!(reopened.state(), &live);
    }
}
