//! Library results checked against brute-force recomputation.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use colmatch_core::ensemble::{
    generate_candidates, precision_at_k, ranked_lists, EasySet, GroundTruth, MatcherWeights,
};
use colmatch_core::matchers::{detect_easy_matches, MatcherDescriptor, MatcherRegistry, Scorer};
use colmatch_core::model::{parse_target_schema, SourceAttribute, SourceDataset, TargetAttribute, TargetSchema};
use colmatch_core::synth::{generate_task, SynthConfig};
use colmatch_core::{CurationSession, Execution, SessionConfig, SessionContext};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn schema(names: &[&str]) -> TargetSchema {
    let attrs: Vec<serde_json::Value> = names
        .iter()
        .map(|n| serde_json::json!({"name": n, "supercategory": "clinical", "category": "diagnosis", "value_type": "text"}))
        .collect();
    parse_target_schema(serde_json::to_string(&attrs).unwrap().as_bytes()).unwrap()
}

fn source(names: &[&str]) -> SourceDataset {
    SourceDataset::new(
        "src",
        names.iter().map(|n| SourceAttribute::new(*n, vec!["x".into()])).collect(),
    )
    .unwrap()
}

/// Deterministic pseudo-score in [0, 1] for a (salt, source, target) triple.
fn pseudo(salt: u64, s: &str, t: &str) -> f64 {
    let mut h: u64 = 1469598103934665603 ^ salt;
    for b in s.bytes().chain([0u8]).chain(t.bytes()) {
        h = (h ^ b as u64).wrapping_mul(1099511628211);
    }
    (h % 1001) as f64 / 1000.0
}

fn pseudo_registry(salts: &[u64]) -> MatcherRegistry {
    let mut reg = MatcherRegistry::empty();
    for (i, salt) in salts.iter().copied().enumerate() {
        let f = move |s: &SourceAttribute, t: &TargetAttribute| pseudo(salt, &s.name, &t.name);
        let scorer: Arc<dyn Scorer> = Arc::new(f);
        reg.register(MatcherDescriptor::plugin(&format!("m{i}"), "pseudo"), scorer)
            .unwrap();
    }
    reg
}

fn top_k(scores: &[(String, f64)], k: usize) -> Vec<(String, f64)> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

#[test]
fn candidates_equal_exhaustive_scoring() {
    let sources = ["age", "tumor stage", "sex", "site", "grade"];
    let targets = ["a1", "b2", "c3", "d4", "e5", "f6", "g7", "h8"];
    let salts = [3, 17, 29];
    let weights_raw = [1.5, 0.5, 1.0];
    let k = 3;

    let reg = pseudo_registry(&salts);
    let mut weights = MatcherWeights::equal(reg.ids());
    for (i, w) in weights_raw.iter().enumerate() {
        weights.weights.insert(format!("m{i}"), *w);
    }
    let src = source(&sources);
    let tgt = schema(&targets);
    let lists = generate_candidates(&src, &tgt, &reg, &weights, &EasySet::default(), k, Execution::Sequential).unwrap();

    for (si, s) in sources.iter().enumerate() {
        let all: Vec<(String, f64)> = targets
            .iter()
            .map(|t| {
                let num: f64 = salts.iter().zip(weights_raw).map(|(salt, w)| w * pseudo(*salt, s, t)).sum();
                (t.to_string(), num / weights_raw.iter().sum::<f64>())
            })
            .collect();
        let expected = top_k(&all, k);
        let got = &lists[si];
        assert_eq!(got.source, *s);
        assert_eq!(got.candidates.len(), k);
        for (rank, (c, (t, score))) in got.candidates.iter().zip(&expected).enumerate() {
            assert_eq!(&c.target, t);
            assert_eq!(c.rank, rank + 1);
            assert!((c.ensemble_score - score).abs() < 1e-9);
            let supporters: Vec<String> = salts
                .iter()
                .enumerate()
                .filter(|(_, salt)| {
                    let own: Vec<(String, f64)> =
                        targets.iter().map(|t| (t.to_string(), pseudo(**salt, s, t))).collect();
                    top_k(&own, k).iter().any(|(name, _)| name == t)
                })
                .map(|(i, _)| format!("m{i}"))
                .collect();
            assert_eq!(c.supported_by, supporters);
        }
    }
}

#[test]
fn equal_scores_average_and_zero_weight_is_ignored() {
    let mut reg = MatcherRegistry::empty();
    let lo: Arc<dyn Scorer> = Arc::new(|_: &SourceAttribute, _: &TargetAttribute| 0.2);
    let hi: Arc<dyn Scorer> = Arc::new(|_: &SourceAttribute, _: &TargetAttribute| 0.8);
    reg.register(MatcherDescriptor::plugin("lo", "lo"), lo).unwrap();
    reg.register(MatcherDescriptor::plugin("hi", "hi"), hi).unwrap();
    let src = source(&["x"]);
    let tgt = schema(&["y"]);
    let mut w = MatcherWeights::equal(reg.ids());
    let lists = generate_candidates(&src, &tgt, &reg, &w, &EasySet::default(), 1, Execution::Sequential).unwrap();
    assert_eq!(lists[0].candidates[0].ensemble_score, 0.5);
    w.weights.insert("lo".into(), 0.0);
    let lists = generate_candidates(&src, &tgt, &reg, &w, &EasySet::default(), 1, Execution::Sequential).unwrap();
    assert_eq!(lists[0].candidates[0].ensemble_score, 0.8);
}

#[test]
fn weight_change_reorders_like_rescoring() {
    let table: BTreeMap<&str, (f64, f64)> = BTreeMap::from([("p", (0.9, 0.2)), ("q", (0.6, 0.6)), ("r", (0.2, 0.9))]);
    let mut reg = MatcherRegistry::empty();
    let ta = table.clone();
    let a: Arc<dyn Scorer> = Arc::new(move |_: &SourceAttribute, t: &TargetAttribute| ta[t.name.as_str()].0);
    let tb = table.clone();
    let b: Arc<dyn Scorer> = Arc::new(move |_: &SourceAttribute, t: &TargetAttribute| tb[t.name.as_str()].1);
    reg.register(MatcherDescriptor::plugin("a", "a"), a).unwrap();
    reg.register(MatcherDescriptor::plugin("b", "b"), b).unwrap();
    let mut s = CurationSession::create(
        source(&["x"]),
        schema(&["p", "q", "r"]),
        SessionConfig { k: 3, ..Default::default() },
        reg,
        SessionContext::default(),
    )
    .unwrap();
    let order = |s: &CurationSession| -> Vec<String> {
        s.candidate_lists()[0].candidates.iter().map(|c| c.target.clone()).collect()
    };
    assert_eq!(order(&s), ["q", "p", "r"]);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (wa, wb) = (rng.random_range(0..=40) as f64 / 20.0, rng.random_range(1..=40) as f64 / 20.0);
        s.set_weights(BTreeMap::from([("a".into(), wa), ("b".into(), wb)])).unwrap();
        let scored: Vec<(String, f64)> = table
            .iter()
            .map(|(t, (x, y))| (t.to_string(), (wa * x + wb * y) / (wa + wb)))
            .collect();
        let expected: Vec<String> = top_k(&scored, 3).into_iter().map(|(t, _)| t).collect();
        assert_eq!(order(&s), expected, "weights {wa} {wb}");
    }
}

fn dp_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

fn similarity(a: &str, b: &str) -> f64 {
    let n = a.chars().count().max(b.chars().count());
    if n == 0 {
        1.0
    } else {
        1.0 - dp_distance(a, b) as f64 / n as f64
    }
}

fn norm(raw: &str) -> String {
    raw.split(|c: char| !c.is_alphanumeric())
        .filter(|p| !p.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

fn v_oracle(s: &[String], t: &[String]) -> f64 {
    let s: Vec<String> = s.iter().map(|v| norm(v)).filter(|v| !v.is_empty()).collect::<BTreeSet<_>>().into_iter().take(200).collect();
    let t: BTreeSet<String> = t.iter().map(|v| norm(v)).filter(|v| !v.is_empty()).collect();
    if s.is_empty() || t.is_empty() {
        return 0.0;
    }
    s.iter().map(|sv| t.iter().map(|tv| similarity(sv, tv)).fold(0.0, f64::max)).sum::<f64>() / s.len() as f64
}

#[test]
fn easy_matches_equal_exhaustive_pairs() {
    for seed in [1u64, 2, 3, 4, 5] {
        let mut cfg = SynthConfig::new(seed, 60, 10);
        cfg.duplicate_fraction = 0.4;
        let task = generate_task(&cfg);
        let got: BTreeSet<(String, String)> = detect_easy_matches(&task.source, &task.target, 0.9, 0.9)
            .into_iter()
            .map(|m| (m.source, m.target))
            .collect();
        let mut expected = BTreeSet::new();
        for s in &task.source.attributes {
            for t in &task.target.attributes {
                if similarity(&norm(&s.name), &norm(&t.name)) > 0.9
                    && v_oracle(&s.profile.unique_values, t.values()) > 0.9
                {
                    expected.insert((s.name.clone(), t.name.clone()));
                }
            }
        }
        assert_eq!(got, expected, "seed {seed}");
        // A schema attribute without listed values has nothing to compare,
        // so only duplicates of value-bearing targets can be easy.
        let duplicates: Vec<&String> = task
            .derivations
            .iter()
            .filter(|(_, d)| **d == colmatch_core::synth::Derivation::ExactDuplicate)
            .map(|(s, _)| s)
            .collect();
        assert_eq!(duplicates.len(), 4);
        for d in duplicates {
            let pair = (d.clone(), d.clone());
            let has_values = !task.target.attribute(d).unwrap().values().is_empty();
            assert_eq!(got.contains(&pair), has_values, "seed {seed}: {d}");
        }
    }
}

#[test]
fn precision_edge_cases() {
    let src = source(&["a", "b"]);
    let tgt = schema(&["x", "y", "z"]);
    let reg = pseudo_registry(&[5, 6]);
    let w = MatcherWeights::equal(reg.ids());
    let lists = generate_candidates(&src, &tgt, &reg, &w, &EasySet::default(), 3, Execution::Sequential).unwrap();
    let ranked = ranked_lists(&lists);
    let top1 = GroundTruth::new(ranked.iter().map(|(s, l)| (s.clone(), l[0].clone())));
    for k in 1..=3 {
        assert_eq!(precision_at_k(&ranked, &top1, k).unwrap(), 1.0);
    }
    let absent = GroundTruth::new([("a".to_string(), "nowhere".to_string())]);
    assert_eq!(precision_at_k(&ranked, &absent, 3).unwrap(), 0.0);
    assert!(precision_at_k(&ranked, &GroundTruth::default(), 3).is_err());
}
