mod common;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rar_core::rewards::{AuditRecord, DegenerateReason, RewardError, ScoreItem};
use rar_core::verification::mock::{FailingBackend, ScriptedBackend};
use rar_core::verification::{OracleBackend, VerifierBackend};
use rar_core::{EngineConfig, PromptSet, RewardEngine, RewardKind};

use common::{capitals, capitals_entry, engine, oracle, World};

const MIXED: &str =
    "Paris is the capital of France. Berlin is the capital of Germany. Paris is lovely. Madrid is the capital of Italy.";

fn capitals_engine() -> RewardEngine {
    engine(vec![capitals_entry()], oracle(capitals()), 4)
}

fn scripted_engine(outputs: &[&str]) -> (RewardEngine, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::new(outputs.iter().copied()));
    let e = engine(vec![capitals_entry()], backend.clone(), 1);
    (e, backend)
}

#[test]
fn binary_rar_on_the_capitals_fixture() {
    let e = capitals_engine();
    let entry = capitals_entry();
    let ok = e
        .score_binary_rar(&entry, "Paris is the capital of France and has 2.1M residents. Madrid lies on the Manzanares river.")
        .unwrap();
    assert_eq!(ok.value, 1.0);
    assert!(!ok.degenerate);
    assert_eq!(ok.verifier_calls, 1);
    assert!(!ok.evidence_used.is_empty() && ok.evidence_used.len() <= 8);

    let wrong = e.score_binary_rar(&entry, "Paris is the capital of France. Paris has 3.4M residents.").unwrap();
    assert_eq!(wrong.value, 0.0);
    assert_eq!(wrong.verifier_calls, 1);
}

#[test]
fn claim_level_rewards_on_a_mixed_response() {
    let e = capitals_engine();
    let entry = capitals_entry();
    let v = e.score_veriscore(&entry, MIXED).unwrap();
    assert_eq!(v.value, 0.5);
    assert_eq!(v.claim_counts(), Some((2, 1, 1)));
    assert_eq!(v.verifier_calls, 1 + 4);
    assert_eq!(e.score_conflict_only(&entry, MIXED).unwrap().value, 0.75);
    assert_eq!(e.score_binary_veriscore(&entry, MIXED, 0.5).unwrap().value, 1.0);
    assert_eq!(e.score_binary_veriscore(&entry, MIXED, 0.51).unwrap().value, 0.0);
    assert!(e.score_binary_veriscore(&entry, MIXED, 0.0).is_err());

    let all = e
        .score_veriscore(&entry, "Paris is the capital of France. Berlin is the capital of Germany. Madrid is the capital of Spain.")
        .unwrap();
    assert_eq!(all.value, 1.0);
    let none = e
        .score_conflict_only(&entry, "Paris is the capital of Peru. Berlin is the capital of Chile.")
        .unwrap();
    assert_eq!(none.value, 0.0);
}

#[test]
fn two_claims_from_one_sentence() {
    let e = capitals_engine();
    let r = e
        .score_veriscore(&capitals_entry(), "Paris is the capital of France and has 2.1M residents")
        .unwrap();
    let texts: Vec<&str> = r.claims.as_ref().unwrap().iter().map(|c| c.text.as_str()).collect();
    assert_eq!(texts, ["Paris is the capital of France", "Paris has 2.1M residents"]);
    assert_eq!(r.value, 1.0);
}

#[test]
fn zero_claims_defaults() {
    let e = capitals_engine();
    let entry = capitals_entry();
    let v = e.score_veriscore(&entry, "").unwrap();
    assert_eq!((v.value, v.degenerate, v.degenerate_reason), (0.0, true, Some(DegenerateReason::NoClaims)));
    assert_eq!(v.verifier_calls, 1);
    let c = e.score_conflict_only(&entry, "").unwrap();
    assert_eq!((c.value, c.degenerate), (1.0, true));
    assert_eq!(e.score_binary_veriscore(&entry, "", 0.5).unwrap().value, 0.0);
}

#[test]
fn undecidable_binary_defaults_to_one_and_is_not_cached() {
    let (e, backend) = scripted_engine(&["garbage", "garbage", "garbage", r#"{"REASONING":"wrong","SCORE":0}"#]);
    let r = e.score("capitals", "Paris is the capital of France.", RewardKind::BinaryRar).unwrap();
    assert_eq!((r.value, r.degenerate), (1.0, true));
    assert_eq!(r.degenerate_reason, Some(DegenerateReason::Undecidable));
    assert_eq!(r.verifier_calls, 3);
    let again = e.score("capitals", "Paris is the capital of France.", RewardKind::BinaryRar).unwrap();
    assert!(!again.cache_hit);
    assert_eq!(again.value, 0.0);
    assert_eq!(backend.calls(), 4);
}

#[test]
fn rating_values() {
    for (out, value) in [("10", 1.0), ("0", 0.0), ("7", 0.7)] {
        let (e, _) = scripted_engine(&[&format!(r#"{{"REASONING":"r","SCORE":{out}}}"#)]);
        let r = e.score_rating_rar(&capitals_entry(), "Paris.").unwrap();
        assert_eq!(r.value, value);
    }
    let (e, _) = scripted_engine(&["?", "?", "?"]);
    let r = e.score_rating_rar(&capitals_entry(), "Paris.").unwrap();
    assert_eq!((r.value, r.degenerate), (0.5, true));
}

#[test]
fn extraction_output_is_tidied() {
    let (e, backend) = scripted_engine(&[r#"["Paris is big", " Paris is big ", "", "Paris is old"]"#, "supported", "inconclusive"]);
    let r = e.score_veriscore(&capitals_entry(), "Paris is big. Paris is old.").unwrap();
    assert_eq!(r.claims.as_ref().unwrap().len(), 2);
    assert_eq!(r.value, 0.5);
    assert_eq!(backend.calls(), 3);
}

#[test]
fn undecidable_claim_counts_as_inconclusive() {
    let (e, _) = scripted_engine(&[r#"["Paris is big"]"#, "maybe", "hmm", "no idea"]);
    let r = e.score_veriscore(&capitals_entry(), "Paris is big.").unwrap();
    assert_eq!(r.value, 0.0);
    assert_eq!(r.claim_counts(), Some((0, 0, 1)));
    assert_eq!(r.degenerate_reason, Some(DegenerateReason::Undecidable));
}

#[test]
fn unavailable_backend_is_an_error() {
    let e = engine(vec![capitals_entry()], Arc::new(FailingBackend), 1);
    assert!(!e.backend_ready());
    for kind in [RewardKind::BinaryRar, RewardKind::VeriScore] {
        assert!(matches!(e.score("capitals", "Paris.", kind), Err(RewardError::VerifierUnavailable(_))));
    }
    assert_eq!(e.stats().errors, 2);
}

#[test]
fn repeated_item_hits_the_cache() {
    let e = capitals_engine();
    let items = vec![ScoreItem::new("capitals", MIXED); 2];
    let first = e.score_batch(&items[..1], RewardKind::VeriScore);
    let second = e.score_batch(&items[1..], RewardKind::VeriScore);
    let (a, b) = (first[0].as_ref().unwrap(), second[0].as_ref().unwrap());
    assert!(!a.cache_hit && b.cache_hit);
    assert_eq!(b.verifier_calls, 0);
    assert_eq!((a.value, &a.claims, &a.verdicts), (b.value, &b.claims, &b.verdicts));
    let stats = e.stats();
    assert_eq!((stats.scored, stats.cache_hits), (2, 1));
    assert_eq!(stats.verifier_calls["veriscore"], 5);
    assert_eq!(stats.verifier_calls["binary"], 0);
}

#[test]
fn unknown_prompt_fails_in_place() {
    let e = capitals_engine();
    let items = vec![
        ScoreItem::new("capitals", "Berlin is the capital of Germany."),
        ScoreItem::new("nope", "x"),
        ScoreItem::new("capitals", "Berlin is the capital of Spain."),
    ];
    let out = e.score_batch(&items, RewardKind::BinaryRar);
    assert_eq!(out[0].as_ref().unwrap().value, 1.0);
    assert_eq!(out[1].as_ref().unwrap_err(), &RewardError::UnknownPrompt("nope".into()));
    assert_eq!(out[1].as_ref().unwrap_err().code(), "unknown_prompt");
    assert_eq!(out[2].as_ref().unwrap().value, 0.0);
}

fn strip_volatile(mut r: rar_core::RewardResult) -> rar_core::RewardResult {
    r.latency_ms = 0.0;
    r.cache_hit = false;
    r
}

#[test]
fn batch_equals_sequential_over_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let world = World::random(&mut rng);
    let entries = vec![world.entry("w"), capitals_entry()];
    let table = {
        let mut facts = world.table.facts.clone();
        facts.extend(capitals().facts);
        rar_core::verification::FactTable::from_facts(facts)
    };
    let items: Vec<ScoreItem> = (0..8)
        .map(|i| {
            if i % 3 == 0 {
                ScoreItem::new("capitals", MIXED)
            } else {
                ScoreItem::new("w", world.response(&mut rng, 6).response)
            }
        })
        .collect();
    for kind in [RewardKind::BinaryRar, RewardKind::VeriScore, RewardKind::ConflictOnlyVeriScore, RewardKind::RatingRar] {
        let batch_engine = engine(entries.clone(), oracle(table.clone()), 8);
        let seq_engine = engine(entries.clone(), oracle(table.clone()), 1);
        let batch: Vec<_> = batch_engine.score_batch(&items, kind).into_iter().map(|r| strip_volatile(r.unwrap())).collect();
        let seq: Vec<_> = items
            .iter()
            .map(|i| strip_volatile(seq_engine.score(&i.prompt_id, &i.response, kind).unwrap()))
            .collect();
        assert_eq!(batch, seq, "{kind}");
    }
}

#[test]
fn values_stay_in_range() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for case in 0..40 {
        let world = World::random(&mut rng);
        let e = engine(vec![world.entry("w")], oracle(world.table.clone()), 2);
        let response = world.response(&mut rng, 6).response;
        let threshold = rng.random_range(0.05..=1.0);
        for kind in [
            RewardKind::BinaryRar,
            RewardKind::VeriScore,
            RewardKind::binary_veriscore(threshold).unwrap(),
            RewardKind::ConflictOnlyVeriScore,
            RewardKind::RatingRar,
        ] {
            let r = e.score("w", &response, kind).unwrap();
            assert!((0.0..=1.0).contains(&r.value), "case {case} {kind}: {}", r.value);
            if matches!(kind, RewardKind::BinaryRar | RewardKind::BinaryVeriScore { .. }) {
                assert!(r.value == 0.0 || r.value == 1.0);
            }
            if let Some((s, c, i)) = r.claim_counts() {
                let n = (s + c + i) as f64;
                if n > 0.0 && kind == RewardKind::VeriScore {
                    assert!((r.value + c as f64 / n + i as f64 / n - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn extended_by_a_contradiction_scores_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut checked = 0;
    for _ in 0..60 {
        let world = World::random(&mut rng);
        let Some((s, r, v)) = world.triples.first().cloned() else { continue };
        let e = engine(vec![world.entry("w")], oracle(world.table.clone()), 1);
        let case = world.response(&mut rng, 4);
        let wrong = format!("{v}x");
        let pattern = common::RELATIONS.iter().find(|(rel, _)| *rel == r).unwrap().1;
        let sentence = pattern.replace("{subject}", &s).replace("{value}", &wrong);
        let extended = if case.response.is_empty() { format!("{sentence}.") } else { format!("{} {sentence}.", case.response) };
        assert_eq!(e.score("w", &extended, RewardKind::BinaryRar).unwrap().value, 0.0, "{extended}");
        checked += 1;
    }
    assert!(checked > 40);
}

#[test]
fn persistent_cache_and_audit_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = EngineConfig::default();
    config.rewards.cache_path = Some(dir.path().join("cache.jsonl"));
    config.rewards.audit_log = Some(dir.path().join("audit.jsonl"));
    let build = || {
        let backend: Arc<dyn VerifierBackend> = Arc::new(OracleBackend::new(capitals()).unwrap());
        RewardEngine::new(config.clone(), PromptSet::from_entries(vec![capitals_entry()]).unwrap(), backend).unwrap()
    };
    let first = build().score("capitals", MIXED, RewardKind::BinaryRar).unwrap();
    assert!(!first.cache_hit);
    let second = build().score("capitals", MIXED, RewardKind::BinaryRar).unwrap();
    assert!(second.cache_hit);
    assert_eq!(first.value, second.value);

    let log = std::fs::read_to_string(dir.path().join("audit.jsonl")).unwrap();
    let records: Vec<AuditRecord> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0].prompt_id, "capitals");
    assert_eq!(records[0].attempts, 1);
    assert!(records[1].cache_hit);
}

#[test]
fn changed_evidence_misses_the_cache() {
    let e = capitals_engine();
    e.score("capitals", MIXED, RewardKind::BinaryRar).unwrap();
    let mut entry = capitals_entry();
    entry.documents.pop();
    entry.version_hash = rar_core::PrecacheEntry::compute_version_hash(&entry.documents);
    e.replace_promptset(PromptSet::from_entries(vec![entry]).unwrap());
    assert!(!e.score("capitals", MIXED, RewardKind::BinaryRar).unwrap().cache_hit);
}

#[test]
fn max_inflight_caps_concurrent_calls() {
    use rar_core::verification::mock::InstrumentedBackend;
    use std::time::Duration;
    let backend = Arc::new(InstrumentedBackend::new(OracleBackend::new(capitals()).unwrap(), Duration::from_millis(5)));
    let e = engine(vec![capitals_entry()], backend.clone(), 3);
    let items: Vec<ScoreItem> = (0..12).map(|i| ScoreItem::new("capitals", format!("{MIXED} Item {i}."))).collect();
    for r in e.score_batch(&items, RewardKind::VeriScore) {
        r.unwrap();
    }
    assert!(backend.peak_in_flight() <= 3);
    assert!(e.peak_inflight() <= 3);
    assert_eq!(backend.calls(), 12 * 6);
}
