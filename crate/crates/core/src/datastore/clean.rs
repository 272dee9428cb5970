//! Rule-based HTML to text cleaning.
//!
//! Rules, applied in document order over the parsed tree:
//!
//! - subtrees of non-visible or boilerplate elements are dropped
//!   (`script`, `style`, `nav`, `header`, `footer`, ... see [`SKIPPED_ELEMENTS`]),
//!   as are elements carrying `hidden` or `aria-hidden="true"`;
//! - block-level elements and `<br>` end the current paragraph;
//! - table cells are separated by a single space;
//! - inside a paragraph, runs of whitespace collapse to one space;
//! - loose text that is not inside any block element keeps its line breaks as
//!   paragraph breaks, which makes cleaning idempotent on already-clean text;
//! - character references are decoded by the parser;
//! - empty paragraphs are dropped and the rest are joined with `\n`.

use ego_tree::iter::Edge;
use scraper::{Html, Node};

use super::DatastoreError;

/// Elements whose whole subtree is removed.
pub const SKIPPED_ELEMENTS: &[&str] = &[
    "script", "style", "noscript", "template", "head", "title", "nav", "header", "footer",
    "aside", "iframe", "svg", "math", "canvas", "object", "embed", "form", "button", "select",
    "option", "textarea",
];

/// Elements that start and end a paragraph.
const BLOCK_ELEMENTS: &[&str] = &[
    "address", "article", "blockquote", "caption", "center", "dd", "details", "dialog", "div",
    "dl", "dt", "fieldset", "figcaption", "figure", "h1", "h2", "h3", "h4", "h5", "h6", "hr",
    "li", "main", "ol", "p", "pre", "section", "summary", "table", "tbody", "tfoot", "thead",
    "tr", "ul",
];

const CELL_ELEMENTS: &[&str] = &["td", "th"];

/// Clean raw HTML into visible paragraph text.
pub fn clean_document(raw_html: &str) -> Result<String, DatastoreError> {
    let html = Html::parse_document(raw_html);
    let mut out = Collector::default();
    let mut skip_depth = 0usize;
    let mut block_depth = 0usize;

    for edge in html.tree.root().traverse() {
        match edge {
            Edge::Open(node) => match node.value() {
                Node::Element(el) => {
                    if skip_depth > 0 || is_skipped(el) {
                        skip_depth += 1;
                        continue;
                    }
                    let name = el.name();
                    if BLOCK_ELEMENTS.contains(&name) {
                        block_depth += 1;
                        out.break_paragraph();
                    } else if name == "br" {
                        out.break_paragraph();
                    } else if CELL_ELEMENTS.contains(&name) {
                        out.push_text(" ");
                    }
                }
                Node::Text(text) if skip_depth == 0 => {
                    if block_depth == 0 {
                        out.push_loose_text(text);
                    } else {
                        out.push_text(text);
                    }
                }
                _ => {}
            },
            Edge::Close(node) => {
                if let Node::Element(el) = node.value() {
                    if skip_depth > 0 {
                        skip_depth -= 1;
                        continue;
                    }
                    let name = el.name();
                    if BLOCK_ELEMENTS.contains(&name) {
                        block_depth -= 1;
                        out.break_paragraph();
                    } else if CELL_ELEMENTS.contains(&name) {
                        out.push_text(" ");
                    }
                }
            }
        }
    }

    let text = out.finish();
    if text.is_empty() {
        Err(DatastoreError::EmptyAfterCleaning)
    } else {
        Ok(text)
    }
}

/// Clean bytes that may not be valid UTF-8; invalid sequences become U+FFFD.
pub fn clean_document_bytes(raw: &[u8]) -> Result<String, DatastoreError> {
    clean_document(&String::from_utf8_lossy(raw))
}

fn is_skipped(el: &scraper::node::Element) -> bool {
    SKIPPED_ELEMENTS.contains(&el.name())
        || el.attr("hidden").is_some()
        || el
            .attr("aria-hidden")
            .is_some_and(|v| v.eq_ignore_ascii_case("true"))
}

#[derive(Default)]
struct Collector {
    current: String,
    paragraphs: Vec<String>,
}

impl Collector {
    fn push_text(&mut self, text: &str) {
        self.current.push_str(text);
    }

    fn push_loose_text(&mut self, text: &str) {
        let mut lines = text.split('\n');
        if let Some(first) = lines.next() {
            self.push_text(first);
        }
        for line in lines {
            self.break_paragraph();
            self.push_text(line);
        }
    }

    fn break_paragraph(&mut self) {
        let para = self.current.split_whitespace().collect::<Vec<_>>().join(" ");
        if !para.is_empty() {
            self.paragraphs.push(para);
        }
        self.current.clear();
    }

    fn finish(mut self) -> String {
        self.break_paragraph();
        self.paragraphs.join("\n")
    }
}
