use std::collections::BTreeMap;
use std::sync::Arc;

use colmatch_core::agent::{Agent, Feedback};
use colmatch_core::clock::SteppingClock;
use colmatch_core::ensemble::{CandidateStatus, Decision};
use colmatch_core::provenance::{EventKind, Payload, ProvenanceError};
use colmatch_core::session::{CandidateFilter, Page, CSV_HEADER};
use colmatch_core::synth::{generate_task, random_action, SynthConfig, SynthTask};
use colmatch_core::{Action, CurationSession, Execution, SessionConfig, SessionContext, SessionError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ctx() -> SessionContext {
    SessionContext {
        agent: Arc::new(Agent::offline().with_clock(Arc::new(SteppingClock::new(5_000, 1)))),
        clock: Arc::new(SteppingClock::new(1_000, 10)),
        exec: Execution::Sequential,
    }
}

fn task(seed: u64) -> SynthTask {
    generate_task(&SynthConfig::new(seed, 40, 8))
}

fn session(task: &SynthTask) -> CurationSession {
    session_with(task, SessionConfig::default())
}

fn session_with(task: &SynthTask, config: SessionConfig) -> CurationSession {
    let mut s = CurationSession::create(
        task.source.clone(),
        task.target.clone(),
        config,
        colmatch_core::matchers::MatcherRegistry::builtin(),
        ctx(),
    )
    .unwrap();
    seed_memory(&mut s);
    s
}

/// Explains the top candidate of every source so feedback actions have keys.
fn seed_memory(s: &mut CurationSession) {
    let pairs: Vec<(String, String)> = s
        .candidate_lists()
        .iter()
        .map(|l| (l.source.clone(), l.candidates[0].target.clone()))
        .collect();
    for (src, tgt) in pairs {
        s.candidate_detail(&src, &tgt).unwrap();
    }
}

fn action_of(kind: EventKind, payload: &Payload) -> Action {
    match (kind, payload.clone()) {
        (EventKind::Accept, Payload::Pair { source, target }) => Action::Accept { source, target },
        (EventKind::Reject, Payload::Pair { source, target }) => Action::Reject { source, target },
        (_, Payload::Weights { weights }) => Action::SetWeights { weights },
        (
            _,
            Payload::Thresholds {
                name_threshold,
                value_threshold,
            },
        ) => Action::SetThresholds {
            name_threshold: Some(name_threshold),
            value_threshold: Some(value_threshold),
        },
        (_, Payload::Feedback { key, feedback }) => Action::Feedback { key, feedback },
        (
            _,
            Payload::ValueMapping {
                source,
                target,
                source_value,
                target_value,
            },
        ) => Action::EditValueMapping {
            source,
            target,
            source_value,
            target_value,
        },
        other => panic!("no action for {other:?}"),
    }
}

/// Fresh session with the first `k` recorded events applied forward.
fn replay_prefix(task: &SynthTask, events: &[colmatch_core::provenance::ProvenanceEvent], k: usize) -> CurationSession {
    let mut fresh = session(task);
    for e in &events[..k] {
        fresh.apply_at(action_of(e.kind, &e.payload), e.timestamp_ms).unwrap();
    }
    fresh
}

fn run_random(s: &mut CurationSession, rng: &mut ChaCha8Rng, n: usize) {
    for _ in 0..n {
        let action = random_action(rng, s);
        let before = s.state();
        let cursor = s.timeline().cursor();
        if s.apply(action).is_err() {
            assert_eq!(s.state(), before, "failed action changed state");
            assert_eq!(s.timeline().cursor(), cursor);
        }
    }
}

#[test]
fn accept_then_undo_restores_bits() {
    let t = task(11);
    let mut s = session(&t);
    let before = s.state();
    let list = &s.candidate_lists()[0];
    let c = list
        .candidates
        .iter()
        .find(|c| c.status == CandidateStatus::Suggested)
        .unwrap()
        .clone();
    s.accept(&c.source, &c.target).unwrap();
    assert_eq!(s.status_of(&c.source, &c.target), CandidateStatus::Accepted);
    for other in &s.candidate_list(&c.source).unwrap().candidates {
        if other.target != c.target {
            assert_eq!(other.status, CandidateStatus::Shadowed);
        }
    }
    s.undo().unwrap();
    let after = s.state();
    assert_eq!(after, before);
    for (id, w) in &before.weights.weights {
        assert_eq!(w.to_bits(), after.weights.weights[id].to_bits());
    }
}

#[test]
fn accept_rewards_supporters_by_rank_discount() {
    let t = task(12);
    let mut s = session(&t);
    let c = s
        .candidate_lists()
        .iter()
        .flat_map(|l| &l.candidates)
        .find(|c| c.status == CandidateStatus::Suggested && !c.supported_by.is_empty())
        .unwrap()
        .clone();
    let prior = s.weights().clone();
    s.accept(&c.source, &c.target).unwrap();
    for (id, w) in &s.weights().weights {
        let expected = if c.supported_by.contains(id) {
            (prior.weights[id] + 0.1 * c.ensemble_score * (1.0 / c.rank as f64)).clamp(0.0, 2.0)
        } else {
            prior.weights[id]
        };
        assert_eq!(*w, expected, "{id}");
    }
}

#[test]
fn invalid_transitions_are_rejected() {
    let t = task(13);
    let mut s = session(&t);
    let c = s.candidate_lists()[0].candidates[0].clone();
    if c.status != CandidateStatus::Rejected {
        s.reject(&c.source, &c.target).unwrap();
    }
    let before = s.state();
    assert!(matches!(
        s.accept(&c.source, &c.target),
        Err(SessionError::InvalidTransition { action: "accept", .. })
    ));
    assert!(matches!(
        s.reject(&c.source, &c.target),
        Err(SessionError::InvalidTransition { .. })
    ));
    assert_eq!(s.state(), before);
    assert!(matches!(s.accept("no_such", &c.target), Err(SessionError::UnknownSource(_))));
}

#[test]
fn empty_timeline_bounds() {
    let t = task(14);
    let mut s = session(&t);
    assert!(matches!(s.undo(), Err(SessionError::Provenance(ProvenanceError::NothingToUndo))));
    assert!(matches!(s.redo(), Err(SessionError::Provenance(ProvenanceError::NothingToRedo))));
    assert!(matches!(
        s.jump_to(1),
        Err(SessionError::Provenance(ProvenanceError::UnknownSeq(1)))
    ));
    s.jump_to(0).unwrap();
}

#[test]
fn undo_redo_three_is_identity() {
    let t = task(15);
    let mut s = session(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    run_random(&mut s, &mut rng, 30);
    while s.timeline().cursor() < 3 {
        s.set_weights(BTreeMap::from([("name_fuzzy".to_string(), 0.5 + s.timeline().len() as f64 * 0.01)]))
            .unwrap();
    }
    let before = s.state();
    for _ in 0..3 {
        s.undo().unwrap();
    }
    for _ in 0..3 {
        s.redo().unwrap();
    }
    assert_eq!(s.state(), before);
}

#[test]
fn threshold_change_reruns_easy_detection_and_reverts() {
    let t = task(16);
    let mut s = session(&t);
    let strict = s.easy_matches().matches.clone();
    assert!(!strict.is_empty());
    s.set_thresholds(0.3, 0.3).unwrap();
    assert!(s.easy_matches().matches.len() >= strict.len());
    s.set_thresholds(1.0, 1.0).unwrap();
    assert!(s.easy_matches().matches.is_empty());
    s.jump_to(0).unwrap();
    assert_eq!(s.easy_matches().matches, strict);
}

#[test]
fn rejecting_easy_match_leaves_weights() {
    let t = task(17);
    let mut s = session(&t);
    let easy = s
        .candidate_lists()
        .iter()
        .flat_map(|l| &l.candidates)
        .find(|c| c.status == CandidateStatus::EasyAccepted)
        .unwrap()
        .clone();
    assert_eq!(easy.ensemble_score, 1.0);
    let w = s.weights().clone();
    s.reject(&easy.source, &easy.target).unwrap();
    assert_eq!(s.weights(), &w);
    assert_eq!(s.status_of(&easy.source, &easy.target), CandidateStatus::Rejected);
}

#[test]
fn feedback_is_reverted_by_undo() {
    let t = task(18);
    let mut s = session(&t);
    let key = s.agent().memory_snapshot().entries().next().unwrap().key.clone();
    s.record_feedback(&key, Some(Feedback::Confirmed)).unwrap();
    assert_eq!(s.agent().memory_snapshot().get(&key).unwrap().user_feedback, Some(Feedback::Confirmed));
    s.undo().unwrap();
    assert_eq!(s.agent().memory_snapshot().get(&key).unwrap().user_feedback, None);
    s.redo().unwrap();
    assert_eq!(s.agent().memory_snapshot().get(&key).unwrap().user_feedback, Some(Feedback::Confirmed));
    assert!(s.record_feedback("nobody::nothing", Some(Feedback::Confirmed)).is_err());
}

#[test]
fn value_mapping_edits_stay_one_to_one() {
    let t = task(19);
    let mut s = session(&t);
    let (src, tgt) = s
        .candidate_lists()
        .iter()
        .flat_map(|l| &l.candidates)
        .find(|c| {
            let sv = &s.source().attribute(&c.source).unwrap().profile.unique_values;
            sv.len() >= 2 && s.target().attribute(&c.target).unwrap().values().len() >= 2
        })
        .map(|c| (c.source.clone(), c.target.clone()))
        .unwrap();
    let sv = s.source().attribute(&src).unwrap().profile.unique_values.clone();
    let tv = s.target().attribute(&tgt).unwrap().values().to_vec();
    s.edit_value_mapping(&src, &tgt, &sv[0], Some(&tv[0])).unwrap();
    assert!(s.edit_value_mapping(&src, &tgt, &sv[1], Some(&tv[0])).is_err());
    let m = s.value_mapping(&src, &tgt).unwrap();
    assert!(m.pairs.iter().any(|p| p.source_value == sv[0] && p.target_value == tv[0]));
    let mut seen_s = std::collections::BTreeSet::new();
    let mut seen_t = std::collections::BTreeSet::new();
    for p in &m.pairs {
        assert!(seen_s.insert(&p.source_value));
        assert!(seen_t.insert(&p.target_value));
    }
    s.undo().unwrap();
    let base = colmatch_core::semantics::map_values(&sv, &tv);
    assert_eq!(s.value_mapping(&src, &tgt).unwrap(), base);
}

#[test]
fn filter_matches_linear_scan() {
    let t = task(20);
    let mut s = session(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    run_random(&mut s, &mut rng, 20);
    let all: Vec<_> = s.candidate_lists().iter().flat_map(|l| l.candidates.clone()).collect();
    let filters = [
        CandidateFilter::default(),
        CandidateFilter { query: Some("STAGE".into()), ..Default::default() },
        CandidateFilter { query: Some("a".into()), min_score: Some(0.4), ..Default::default() },
        CandidateFilter { status: Some(CandidateStatus::Shadowed), ..Default::default() },
        CandidateFilter { supercategory: Some("clinical".into()), ..Default::default() },
        CandidateFilter { supercategory: Some("clinical".into()), category: Some("diagnosis".into()), ..Default::default() },
        CandidateFilter { cluster: Some(0), ..Default::default() },
        CandidateFilter { min_score: Some(1.1), ..Default::default() },
    ];
    for f in &filters {
        let mut expected = Vec::new();
        for c in &all {
            let t = s.target().attribute(&c.target).unwrap();
            let mut keep = true;
            if let Some(m) = f.min_score {
                keep &= c.ensemble_score >= m;
            }
            if let Some(st) = f.status {
                keep &= c.status == st;
            }
            if let Some(sc) = &f.supercategory {
                keep &= &t.supercategory == sc;
            }
            if let Some(cat) = &f.category {
                keep &= &t.category == cat;
            }
            if let Some(cl) = f.cluster {
                keep &= s.clusters().clusters[cl].contains(&c.source);
            }
            if let Some(q) = &f.query {
                let q = q.to_lowercase();
                keep &= c.source.to_lowercase().contains(&q) || c.target.to_lowercase().contains(&q);
            }
            if keep {
                expected.push(c.clone());
            }
        }
        assert_eq!(s.filter_candidates(f), expected, "{f:?}");
    }
    assert!(s.filter_candidates(&filters[7]).is_empty());
}

#[test]
fn pagination_five_five_two() {
    let items: Vec<u32> = (0..12).collect();
    let pages: Vec<Page<u32>> = (1..=4).map(|p| Page::of(&items, p, 5).unwrap()).collect();
    assert_eq!(pages[0].items, vec![0, 1, 2, 3, 4]);
    assert_eq!(pages[1].items, vec![5, 6, 7, 8, 9]);
    assert_eq!(pages[2].items, vec![10, 11]);
    assert!(pages[3].items.is_empty());
    assert!(pages.iter().all(|p| p.pages == 3 && p.total == 12));
    assert!(Page::of(&items, 0, 5).is_err());
}

#[test]
fn csv_rows_equal_status_scan() {
    let t = task(21);
    let mut s = session(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    run_random(&mut s, &mut rng, 40);
    let csv = s.export_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let mut expected = 0;
    for sa in &s.source().attributes {
        for ta in &s.target().attributes {
            if matches!(
                s.status_of(&sa.name, &ta.name),
                CandidateStatus::Accepted | CandidateStatus::EasyAccepted
            ) {
                expected += 1;
            }
        }
    }
    assert_eq!(lines.count(), expected);
}

#[test]
fn one_accepted_match_exports_two_lines() {
    let t = task(22);
    let mut s = session_with(&t, SessionConfig { auto_accept_easy: false, ..Default::default() });
    assert_eq!(s.export_csv().lines().count(), 1);
    let c = s.candidate_lists()[0].candidates[0].clone();
    s.accept(&c.source, &c.target).unwrap();
    assert_eq!(s.export_csv().lines().count(), 2);
}

#[test]
fn shadowed_accept_demotes_previous() {
    let t = task(23);
    let mut s = session_with(&t, SessionConfig { auto_accept_easy: false, ..Default::default() });
    let list = s.candidate_lists()[0].clone();
    let (a, b) = (&list.candidates[0], &list.candidates[1]);
    s.accept(&a.source, &a.target).unwrap();
    assert_eq!(s.status_of(&b.source, &b.target), CandidateStatus::Shadowed);
    s.accept(&b.source, &b.target).unwrap();
    assert_eq!(s.status_of(&a.source, &a.target), CandidateStatus::Shadowed);
    assert_eq!(s.decisions().get(&(a.source.clone(), a.target.clone())), None);
    s.undo().unwrap();
    assert_eq!(s.decisions().get(&(a.source.clone(), a.target.clone())), Some(&Decision::Accepted));
}

#[test]
fn ranks_are_contiguous_after_mutations() {
    let t = task(24);
    let mut s = session(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..30 {
        run_random(&mut s, &mut rng, 1);
        for l in s.candidate_lists() {
            let ranks: Vec<usize> = l.candidates.iter().map(|c| c.rank).collect();
            assert_eq!(ranks, (1..=l.candidates.len()).collect::<Vec<_>>());
            for w in l.candidates.windows(2) {
                assert!(w[0].ensemble_score >= w[1].ensemble_score);
            }
        }
    }
}

#[test]
fn identical_inputs_give_identical_lists() {
    let t = task(25);
    let a = session(&t);
    let b = session(&t);
    assert_eq!(a.candidate_lists(), b.candidate_lists());
    let par = CurationSession::create(
        t.source.clone(),
        t.target.clone(),
        SessionConfig::default(),
        colmatch_core::matchers::MatcherRegistry::builtin(),
        SessionContext { exec: Execution::Parallel, ..ctx() },
    )
    .unwrap();
    assert_eq!(a.candidate_lists(), par.candidate_lists());
}

#[test]
fn detail_caches_verdict() {
    let t = task(26);
    let s = session(&t);
    let c = s.candidate_lists()[1].candidates[2].clone();
    let first = s.candidate_detail(&c.source, &c.target).unwrap();
    let second = s.candidate_detail(&c.source, &c.target).unwrap();
    assert!(second.verdict_cached);
    assert_eq!(first.agent_verdict, second.agent_verdict);
    assert!(s.candidate_detail(&c.source, "not_a_target").is_err());
}

#[test]
fn easy_detail_has_unit_score() {
    let t = task(27);
    let s = session(&t);
    let easy = s.easy_matches().matches[0].clone();
    let d = s.candidate_detail(&easy.source, &easy.target).unwrap();
    assert_eq!(d.ensemble_score, 1.0);
    assert!(d.easy);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, .. ProptestConfig::default() })]

    #[test]
    fn every_event_inverts(seed in 0u64..10_000) {
        let t = task(seed % 7 + 100);
        let mut s = session(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..25 {
            let action = random_action(&mut rng, &s);
            if matches!(action, Action::Undo | Action::Redo | Action::JumpTo { .. }) {
                let _ = s.apply(action);
                continue;
            }
            let before = s.state();
            if s.apply(action).is_ok() {
                s.undo().unwrap();
                prop_assert_eq!(&s.state(), &before);
                s.redo().unwrap();
            }
        }
    }

    #[test]
    fn undo_all_jump_and_round_trip(seed in 0u64..10_000, len in 1usize..40) {
        let t = task(seed % 5 + 200);
        let mut s = session(&t);
        let initial = s.state();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        run_random(&mut s, &mut rng, len);

        let export = s.export_json();
        let imported = CurationSession::import_json(export.as_bytes(), ctx()).unwrap();
        prop_assert_eq!(imported.export_json(), export.clone());
        prop_assert_eq!(imported.state(), s.state());

        let events = s.timeline().events().to_vec();
        let cursor = s.timeline().cursor();
        let k = if events.is_empty() { 0 } else { seed as usize % (events.len() + 1) };
        s.jump_to(k as u64).unwrap();
        prop_assert_eq!(s.state(), replay_prefix(&t, &events, k).state());

        s.jump_to(0).unwrap();
        prop_assert_eq!(s.state(), initial);
        s.jump_to(cursor as u64).unwrap();
        prop_assert_eq!(s.export_json(), export);
    }
}

