mod common;

use std::collections::HashMap;
use std::sync::Arc;

use chrono::Duration;
use common::{manual_clock, platform, ppm};
use loadsafe_core::dataset::ClassLabel;
use loadsafe_service::{Event, ManualClock, Platform, Status};
use proptest::prelude::*;

#[derive(Clone, Debug)]
enum Op {
    Submit(f32),
    Claim(usize),
    Decide { pick: usize, operator: usize, label: usize },
    Advance(i64),
}

const OPERATORS: [&str; 3] = ["ann", "bob", "cy"];

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => prop::sample::select(vec![0.05f32, 0.5, 0.7, 0.9]).prop_map(Op::Submit),
        3 => (0..3usize).prop_map(Op::Claim),
        3 => (0..64usize, 0..3usize, 0..3usize).prop_map(|(pick, operator, label)| Op::Decide { pick, operator, label }),
        1 => (1..400i64).prop_map(Op::Advance),
    ]
}

fn run(p: &Platform, clock: &ManualClock, op: &Op) {
    match op {
        Op::Submit(level) => {
            p.submit_photo(&ppm(*level), None).unwrap();
        }
        Op::Claim(o) => {
            p.claim_next(OPERATORS[*o]).unwrap();
        }
        Op::Decide { pick, operator, label } => {
            let all = p.list_queue(None, None);
            if !all.is_empty() {
                let id = &all[pick % all.len()].id;
                // errors are legitimate outcomes here; state must stay consistent
                let _ = p.post_decision(id, OPERATORS[*operator], ClassLabel::ALL[*label]);
            }
        }
        Op::Advance(s) => clock.advance(Duration::seconds(*s)),
    }
}

fn check_invariants(p: &Platform) {
    let events = p.store().events().unwrap();
    let seqs: Vec<u64> = events.iter().map(|e| e.seq).collect();
    assert_eq!(seqs, (1..=events.len() as u64).collect::<Vec<_>>(), "sequence numbers must be dense");
    let mut decided_events: HashMap<String, usize> = HashMap::new();
    for e in &events {
        if let Event::Decided(d) = &e.event {
            *decided_events.entry(d.submission_id.clone()).or_default() += 1;
        }
    }
    let pending = p.list_queue(Some(Status::PendingReview), None);
    for s in p.list_queue(None, None) {
        match s.status {
            Status::RejectedUnusable => assert!(!pending.iter().any(|q| q.id == s.id)),
            Status::Decided => assert_eq!(decided_events.get(&s.id), Some(&1), "{}", s.id),
            Status::PendingReview => assert!(!decided_events.contains_key(&s.id)),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    /// Stopping after any prefix and restarting reconstructs the state
    /// exactly; continuing afterwards matches an uninterrupted run.
    #[test]
    fn replay_after_any_prefix(ops in prop::collection::vec(op(), 1..=200), cut in any::<prop::sample::Index>()) {
        let cut = cut.index(ops.len() + 1);
        let (dir_a, dir_b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (clock_a, clock_b) = (manual_clock(), manual_clock());

        let uninterrupted = platform(dir_a.path(), clock_a.clone());
        for o in &ops {
            run(&uninterrupted, &clock_a, o);
        }
        check_invariants(&uninterrupted);

        let first = platform(dir_b.path(), clock_b.clone());
        for o in &ops[..cut] {
            run(&first, &clock_b, o);
        }
        let before = first.store().snapshot();
        drop(first);
        let restarted = platform(dir_b.path(), clock_b.clone());
        prop_assert_eq!(&*restarted.store().snapshot(), &*before);
        for o in &ops[cut..] {
            run(&restarted, &clock_b, o);
        }
        prop_assert_eq!(&*restarted.store().snapshot(), &*uninterrupted.store().snapshot());
    }
}

#[test]
fn concurrent_claims_on_one_item() {
    for _ in 0..20 {
        let dir = tempfile::tempdir().unwrap();
        let p = Arc::new(platform(dir.path(), manual_clock()));
        p.submit_photo(&ppm(0.5), None).unwrap();
        let handles: Vec<_> = OPERATORS
            .iter()
            .map(|op| {
                let p = p.clone();
                std::thread::spawn(move || p.claim_next(op).unwrap())
            })
            .collect();
        let got: Vec<_> = handles.into_iter().filter_map(|h| h.join().unwrap()).collect();
        assert_eq!(got.len(), 1);
    }
}

#[test]
fn concurrent_claims_never_share_an_item() {
    let dir = tempfile::tempdir().unwrap();
    let p = Arc::new(platform(dir.path(), manual_clock()));
    for _ in 0..30 {
        p.submit_photo(&ppm(0.5), None).unwrap();
    }
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let p = p.clone();
            std::thread::spawn(move || {
                let op = format!("op{i}");
                let mut mine = vec![];
                // each operator takes items until the queue runs dry, deciding as it goes
                while let Some(s) = p.claim_next(&op).unwrap() {
                    p.post_decision(&s.id, &op, ClassLabel::Safe).unwrap();
                    mine.push(s.id);
                }
                mine
            })
        })
        .collect();
    let mut all: Vec<String> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    assert_eq!(all.len(), 30);
    all.sort();
    all.dedup();
    assert_eq!(all.len(), 30);
}

#[test]
fn two_submissions_get_consecutive_sequence_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = platform(dir.path(), manual_clock());
    let a = p.submit_photo(&ppm(0.5), None).unwrap();
    let b = p.submit_photo(&ppm(0.5), None).unwrap();
    assert_ne!(a.id, b.id);
    let seqs: Vec<u64> = p.store().events().unwrap().iter().map(|e| e.seq).collect();
    assert_eq!(seqs, [1, 2]);
}
