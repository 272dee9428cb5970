//! `.precache.jsonl`: one schema-versioned [`PrecacheEntry`] per line.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatastoreError, PrecacheEntry, PromptSet};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct RecordOut<'a> {
    schema_version: u32,
    #[serde(flatten)]
    entry: &'a PrecacheEntry,
}

#[derive(Deserialize)]
struct RecordIn {
    schema_version: u32,
    #[serde(flatten)]
    entry: PrecacheEntry,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

/// Serialize `set` to `writer`. Output is a pure function of the set.
pub fn write_promptset<W: Write>(set: &PromptSet, mut writer: W) -> std::io::Result<()> {
    for entry in set.entries() {
        let line = serde_json::to_string(&RecordOut {
            schema_version: SCHEMA_VERSION,
            entry,
        })?;
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

/// Write `set` to `path` atomically: a sibling temp file renamed into place.
pub fn save_promptset(set: &PromptSet, path: impl AsRef<Path>) -> Result<(), DatastoreError> {
    let path = path.as_ref();
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("jsonl")
    ));
    let file = File::create(&tmp).map_err(|e| DatastoreError::io(&tmp, e))?;
    let mut writer = BufWriter::new(file);
    write_promptset(set, &mut writer).map_err(|e| DatastoreError::io(&tmp, e))?;
    writer
        .into_inner()
        .map_err(|e| DatastoreError::io(&tmp, e.into_error()))?
        .sync_all()
        .map_err(|e| DatastoreError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatastoreError::io(path, e))
}

pub fn load_promptset(path: impl AsRef<Path>) -> Result<PromptSet, DatastoreError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DatastoreError::io(path, e))?;
    let mut set = PromptSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DatastoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let probe: VersionProbe =
            serde_json::from_str(&line).map_err(|e| DatastoreError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        match probe.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(found) => {
                return Err(DatastoreError::SchemaVersionMismatch {
                    line: line_no,
                    expected: SCHEMA_VERSION,
                    found,
                })
            }
            None => {
                return Err(DatastoreError::Malformed {
                    line: line_no,
                    message: "missing schema_version".into(),
                })
            }
        }
        let record: RecordIn =
            serde_json::from_str(&line).map_err(|e| DatastoreError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        debug_assert_eq!(record.schema_version, SCHEMA_VERSION);
        if !record.entry.has_valid_hash() {
            return Err(DatastoreError::HashMismatch(record.entry.prompt_id));
        }
        set.insert(record.entry)?;
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{build_precache, PrecachePolicy, RawPage};
    use chrono::{DateTime, TimeZone, Utc};

    fn entry(id: &str) -> PrecacheEntry {
        let pages: Vec<RawPage> = (0..3)
            .map(|i| RawPage {
                url: format!("https://{id}.example/{i}"),
                html: format!("<p>{id} document {i}</p>"),
                fetched_at: Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, i).unwrap(),
            })
            .collect();
        build_precache(id, "prompt", Some("ref"), &pages, &PrecachePolicy::default())
            .built()
            .unwrap()
    }

    #[test]
    fn empty_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.precache.jsonl");
        save_promptset(&PromptSet::new(), &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"");
        assert!(load_promptset(&path).unwrap().is_empty());
    }

    #[test]
    fn single_entry_file_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let set = PromptSet::from_entries(vec![entry("a")]).unwrap();
        let p1 = dir.path().join("one.precache.jsonl");
        let p2 = dir.path().join("two.precache.jsonl");
        save_promptset(&set, &p1).unwrap();
        save_promptset(&load_promptset(&p1).unwrap(), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        let text = fs::read_to_string(&p1).unwrap();
        assert!(text.starts_with("{\"schema_version\":1,\"prompt_id\":\"a\""));
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.precache.jsonl");
        let mut buf = Vec::new();
        write_promptset(&PromptSet::from_entries(vec![entry("a")]).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"schema_version\":1", "\"schema_version\":7");
        fs::write(&path, text).unwrap();
        assert!(matches!(
            load_promptset(&path),
            Err(DatastoreError::SchemaVersionMismatch { found: 7, line: 1, .. })
        ));
    }

    #[test]
    fn tampered_text_fails_hash_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.precache.jsonl");
        let mut buf = Vec::new();
        write_promptset(&PromptSet::from_entries(vec![entry("a")]).unwrap(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("a document 1", "a document 9");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_promptset(&path), Err(DatastoreError::HashMismatch(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_promptset("/nonexistent/dir/x.jsonl"),
            Err(DatastoreError::Io { .. })
        ));
    }

    #[test]
    fn epoch_timestamps_round_trip() {
        let mut e = entry("b");
        e.documents[0].fetched_at = DateTime::<Utc>::UNIX_EPOCH;
        e.version_hash = PrecacheEntry::compute_version_hash(&e.documents);
        let set = PromptSet::from_entries(vec![e]).unwrap();
        let mut buf = Vec::new();
        write_promptset(&set, &mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.precache.jsonl");
        fs::write(&path, buf).unwrap();
        assert_eq!(load_promptset(&path).unwrap(), set);
    }
}
