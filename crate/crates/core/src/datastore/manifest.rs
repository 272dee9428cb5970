//! Raw-page input: a JSON manifest naming, per prompt, the page files that
//! were fetched for it. Pages live in a sibling `pages/` directory (CLI) or
//! arrive as upload parts (service).

use std::collections::HashSet;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{DatastoreError, RawPage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageManifest {
    pub prompts: Vec<PromptPagesSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPagesSpec {
    pub prompt_id: String,
    pub prompt_text: String,
    #[serde(default)]
    pub reference_response: Option<String>,
    #[serde(default)]
    pub fetched_at: Option<DateTime<Utc>>,
    pub pages: Vec<PageRef>,
}

/// A page file name, optionally with the URL it was fetched from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PageRef {
    File(String),
    Detailed {
        file: String,
        #[serde(default)]
        url: Option<String>,
        #[serde(default)]
        fetched_at: Option<DateTime<Utc>>,
    },
}

impl PageRef {
    pub fn file(&self) -> &str {
        match self {
            Self::File(f) | Self::Detailed { file: f, .. } => f,
        }
    }
}

/// Pages resolved for one prompt, ready for `build_precache`.
#[derive(Debug, Clone)]
pub struct PromptPages {
    pub prompt_id: String,
    pub prompt_text: String,
    pub reference_response: Option<String>,
    pub pages: Vec<RawPage>,
}

impl PageManifest {
    pub fn parse(text: &str) -> Result<Self, DatastoreError> {
        let manifest: Self =
            serde_json::from_str(text).map_err(|e| DatastoreError::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<(), DatastoreError> {
        let mut ids = HashSet::new();
        for prompt in &self.prompts {
            if prompt.prompt_id.trim().is_empty() {
                return Err(DatastoreError::Manifest("empty prompt_id".into()));
            }
            if !ids.insert(prompt.prompt_id.as_str()) {
                return Err(DatastoreError::Manifest(format!(
                    "duplicate prompt_id {:?}",
                    prompt.prompt_id
                )));
            }
            for page in &prompt.pages {
                let file = page.file();
                if file.is_empty() || file.contains("..") || file.starts_with('/') {
                    return Err(DatastoreError::Manifest(format!(
                        "invalid page file name {file:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Resolve every page through `read_page`, which returns the raw bytes of
    /// a page file or `None` when it does not exist.
    pub fn resolve<F>(&self, mut read_page: F) -> Result<Vec<PromptPages>, DatastoreError>
    where
        F: FnMut(&str) -> Result<Option<Vec<u8>>, DatastoreError>,
    {
        let mut out = Vec::with_capacity(self.prompts.len());
        for prompt in &self.prompts {
            let mut pages = Vec::with_capacity(prompt.pages.len());
            for page in &prompt.pages {
                let file = page.file();
                let bytes = read_page(file)?.ok_or_else(|| {
                    DatastoreError::Manifest(format!(
                        "page {file:?} of prompt {:?} not found",
                        prompt.prompt_id
                    ))
                })?;
                let (url, page_time) = match page {
                    PageRef::File(f) => (f.clone(), None),
                    PageRef::Detailed {
                        file,
                        url,
                        fetched_at,
                    } => (url.clone().unwrap_or_else(|| file.clone()), *fetched_at),
                };
                pages.push(RawPage {
                    url,
                    html: String::from_utf8_lossy(&bytes).into_owned(),
                    fetched_at: page_time
                        .or(prompt.fetched_at)
                        .unwrap_or(DateTime::<Utc>::UNIX_EPOCH),
                });
            }
            out.push(PromptPages {
                prompt_id: prompt.prompt_id.clone(),
                prompt_text: prompt.prompt_text.clone(),
                reference_response: prompt.reference_response.clone(),
                pages,
            });
        }
        Ok(out)
    }
}

/// Read a manifest file and its pages from `pages_dir`.
pub fn load_raw_pages(
    manifest_path: impl AsRef<Path>,
    pages_dir: impl AsRef<Path>,
) -> Result<Vec<PromptPages>, DatastoreError> {
    let manifest_path = manifest_path.as_ref();
    let pages_dir = pages_dir.as_ref();
    let text = std::fs::read_to_string(manifest_path)
        .map_err(|e| DatastoreError::io(manifest_path, e))?;
    let manifest = PageManifest::parse(&text)?;
    manifest.resolve(|file| {
        let path = pages_dir.join(file);
        match std::fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(DatastoreError::io(&path, e)),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_page_forms() {
        let m = PageManifest::parse(
            r#"{"prompts":[{"prompt_id":"p1","prompt_text":"q","pages":
                ["a.html",{"file":"b.html","url":"https://b.example/"}]}]}"#,
        )
        .unwrap();
        let resolved = m.resolve(|f| Ok(Some(format!("<p>{f}</p>").into_bytes()))).unwrap();
        assert_eq!(resolved[0].pages[0].url, "a.html");
        assert_eq!(resolved[0].pages[1].url, "https://b.example/");
        assert_eq!(resolved[0].pages[1].fetched_at, DateTime::<Utc>::UNIX_EPOCH);
    }

    #[test]
    fn rejects_duplicates_and_traversal() {
        let dup = r#"{"prompts":[{"prompt_id":"p","prompt_text":"q","pages":[]},
                                 {"prompt_id":"p","prompt_text":"q","pages":[]}]}"#;
        assert!(matches!(PageManifest::parse(dup), Err(DatastoreError::Manifest(_))));
        let bad = r#"{"prompts":[{"prompt_id":"p","prompt_text":"q","pages":["../etc/passwd"]}]}"#;
        assert!(matches!(PageManifest::parse(bad), Err(DatastoreError::Manifest(_))));
        assert!(matches!(PageManifest::parse("{"), Err(DatastoreError::Manifest(_))));
    }

    #[test]
    fn missing_page_is_a_manifest_error() {
        let m = PageManifest::parse(
            r#"{"prompts":[{"prompt_id":"p","prompt_text":"q","pages":["gone.html"]}]}"#,
        )
        .unwrap();
        assert!(matches!(m.resolve(|_| Ok(None)), Err(DatastoreError::Manifest(_))));
    }
}
