mod common;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use rar_core::datastore::{
    build_precache, clean_document, load_promptset, save_promptset, DatastoreError, PrecacheOutcome,
    PrecachePolicy, RawPage, SCHEMA_VERSION,
};
use rar_core::{Document, PrecacheEntry, PromptSet};

use common::{document, entry, fixture};

fn page(url: &str, html: &str) -> RawPage {
    RawPage {
        url: url.to_string(),
        html: html.to_string(),
        fetched_at: DateTime::<Utc>::UNIX_EPOCH,
    }
}

#[test]
fn wiki_snapshot_matches_golden() {
    let html = std::fs::read_to_string(fixture("wiki_snapshot.html")).unwrap();
    let golden = std::fs::read_to_string(fixture("wiki_snapshot.txt")).unwrap();
    assert_eq!(clean_document(&html).unwrap(), golden);
}

#[test]
fn cleaning_examples() {
    assert_eq!(clean_document("<p>Hello <b>world</b></p>").unwrap(), "Hello world");
    assert_eq!(clean_document("<script>x=1</script><p>A</p>").unwrap(), "A");
    assert!(matches!(
        clean_document("<style>p{}</style><nav>home</nav>"),
        Err(DatastoreError::EmptyAfterCleaning)
    ));
}

#[test]
fn cleaning_is_idempotent_on_the_snapshot() {
    let golden = std::fs::read_to_string(fixture("wiki_snapshot.txt")).unwrap();
    assert_eq!(clean_document(&golden).unwrap(), golden);
}

#[test]
fn curation_examples() {
    let policy = PrecachePolicy::default();
    let clean: Vec<RawPage> = (0..5)
        .map(|i| page(&format!("https://a.example/{i}"), &format!("<p>page {i}</p>")))
        .collect();
    let built = build_precache("p", "q", Some("ref"), &clean, &policy).built().unwrap();
    assert_eq!(built.documents.len(), 5);
    assert_eq!(built.reference_response.as_deref(), Some("ref"));
    assert!(built.has_valid_hash());

    assert!(matches!(
        build_precache("p", "q", None, &clean[..2], &policy),
        PrecacheOutcome::Discarded(d) if d.surviving_documents == 2
    ));

    let mut mixed = clean[..2].to_vec();
    mixed.push(page("https://a.example/s", "<script>var a;</script>"));
    mixed.push(page("https://a.example/f", "<footer>links</footer>"));
    assert!(matches!(
        build_precache("p", "q", None, &mixed, &policy),
        PrecacheOutcome::Discarded(d) if d.surviving_documents == 2
    ));

    assert!(matches!(build_precache("p", "q", None, &[], &policy), PrecacheOutcome::Discarded(_)));
}

#[test]
fn extra_pages_truncate_by_input_order() {
    let pages: Vec<RawPage> = (0..14)
        .map(|i| page(&format!("https://a.example/{i}"), &format!("<p>page {i}</p>")))
        .collect();
    let built = build_precache("p", "q", None, &pages, &PrecachePolicy::default()).built().unwrap();
    assert_eq!(built.documents.len(), 10);
    assert_eq!(built.documents[9].text, "page 9");
}

#[test]
fn version_hash_ignores_document_order() {
    let docs = vec![
        document("https://a.example/1", "one"),
        document("https://a.example/2", "two"),
        document("https://a.example/3", "three"),
    ];
    let mut reversed = docs.clone();
    reversed.reverse();
    let h = PrecacheEntry::compute_version_hash(&docs);
    assert_eq!(h, PrecacheEntry::compute_version_hash(&reversed));
    assert!(h.len() >= 32);

    let mut edited = docs.clone();
    edited[1].text.push('!');
    assert_ne!(h, PrecacheEntry::compute_version_hash(&edited));
}

#[test]
fn empty_set_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.precache.jsonl");
    save_promptset(&PromptSet::new(), &path).unwrap();
    assert!(load_promptset(&path).unwrap().is_empty());
}

#[test]
fn saves_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let set = PromptSet::from_entries(vec![entry("p1", "Who?", &["alpha", "beta", "gamma"])]).unwrap();
    let a = dir.path().join("a.precache.jsonl");
    let b = dir.path().join("b.precache.jsonl");
    save_promptset(&set, &a).unwrap();
    save_promptset(&set, &b).unwrap();
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    save_promptset(&set, &a).unwrap();
    assert_eq!(bytes, std::fs::read(&a).unwrap());
    // no temp file is left behind
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn schema_version_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.precache.jsonl");
    let set = PromptSet::from_entries(vec![entry("p1", "Who?", &["alpha", "beta", "gamma"])]).unwrap();
    save_promptset(&set, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains(&format!("\"schema_version\":{SCHEMA_VERSION}")));

    std::fs::write(&path, text.replace("\"schema_version\":1", "\"schema_version\":7")).unwrap();
    match load_promptset(&path) {
        Err(DatastoreError::SchemaVersionMismatch { line, expected, found }) => {
            assert_eq!((line, expected, found), (1, SCHEMA_VERSION, 7));
        }
        other => panic!("unexpected {other:?}"),
    }

    std::fs::write(&path, text.replace("\"schema_version\":1,", "")).unwrap();
    assert!(load_promptset(&path).is_err());
}

#[test]
fn tampered_hash_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.precache.jsonl");
    let set = PromptSet::from_entries(vec![entry("p1", "Who?", &["alpha", "beta", "gamma"])]).unwrap();
    save_promptset(&set, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"alpha\"", "\"alpha!\"")).unwrap();
    assert!(matches!(load_promptset(&path), Err(DatastoreError::HashMismatch { .. })));
}

#[test]
fn duplicate_prompt_ids_are_rejected() {
    let e = entry("p1", "Who?", &["alpha", "beta", "gamma"]);
    assert!(matches!(
        PromptSet::from_entries(vec![e.clone(), e]),
        Err(DatastoreError::DuplicatePrompt(_))
    ));
}

fn arb_text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 .,'\"\\\\\n\u{e9}\u{4e2d}-]{1,60}"
}

fn arb_document() -> impl Strategy<Value = Document> {
    (arb_text(), 0u32..10_000, any::<u32>(), proptest::option::of(arb_text())).prop_map(
        |(text, n, secs, raw_html)| Document {
            doc_id: rar_core::datastore::doc_id_for_url(&format!("https://r.example/{n}")),
            source_url: format!("https://r.example/{n}"),
            raw_html,
            text,
            fetched_at: Utc.timestamp_opt(secs as i64, 0).unwrap(),
        },
    )
}

fn arb_entry(i: usize) -> impl Strategy<Value = PrecacheEntry> {
    (arb_text(), proptest::option::of(arb_text()), proptest::collection::vec(arb_document(), 3..6)).prop_map(
        move |(prompt_text, reference_response, mut documents)| {
            documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
            documents.dedup_by(|a, b| a.doc_id == b.doc_id);
            PrecacheEntry {
                prompt_id: format!("prompt-{i}"),
                prompt_text,
                reference_response,
                version_hash: PrecacheEntry::compute_version_hash(&documents),
                documents,
            }
        },
    )
}

fn arb_set(n: usize) -> impl Strategy<Value = PromptSet> {
    (0..n)
        .map(arb_entry)
        .collect::<Vec<_>>()
        .prop_map(|entries| PromptSet::from_entries(entries).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn hundred_entry_sets_round_trip(set in arb_set(100)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.precache.jsonl");
        save_promptset(&set, &path).unwrap();
        prop_assert_eq!(load_promptset(&path).unwrap(), set);
    }

    #[test]
    fn curated_entries_never_have_fewer_than_three_documents(
        bodies in proptest::collection::vec(
            prop_oneof!["<p>[a-z ]{1,12}</p>", Just("<script>x</script>".to_string()), Just("<nav> </nav>".to_string())],
            0..8,
        )
    ) {
        let pages: Vec<RawPage> = bodies
            .iter()
            .enumerate()
            .map(|(i, b)| page(&format!("https://c.example/{i}"), b))
            .collect();
        if let PrecacheOutcome::Built(e) = build_precache("p", "q", None, &pages, &PrecachePolicy::default()) {
            prop_assert!(e.documents.len() >= 3);
        }
    }

    #[test]
    fn cleaning_is_idempotent(body in "[a-zA-Z <>/&;pbr]{0,80}") {
        if let Ok(once) = clean_document(&body) {
            prop_assert_eq!(clean_document(&once).unwrap(), once);
        }
    }
}
