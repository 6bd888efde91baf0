//! Text normalization ahead of tokenization: emoji-to-shortname rewriting
//! and removal of user mentions and URLs.
//!
//! Patterns are fixed so outputs are stable:
//! - mention: `@` plus one or more of `[A-Za-z0-9_]`, preceded by
//!   start-of-string or whitespace;
//! - URL: `http://` or `https://` plus one or more non-whitespace
//!   characters, excluding a single trailing `.` `,` `!` `?` `)`.
//!
//! Whitespace runs touching a deletion collapse to one space and the result
//! is trimmed; text that cleans down to nothing becomes `[EMPTY]`.

use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::CorpusSplit;
use crate::error::{Error, Result};
use crate::ioutil;
use crate::par;

/// Placeholder returned when cleaning empties a sentence, keeping batches
/// total for encoders that reject empty input.
pub const EMPTY_PLACEHOLDER: &str = "[EMPTY]";

/// Emoji codepoint sequences mapped to lowercase underscore shortnames.
/// Longest sequence wins, so modifier and variation-selector forms take
/// precedence over their prefixes.
#[derive(Debug, Clone)]
pub struct EmojiTable {
    /// Sorted by key byte length, longest first, then lexicographically.
    entries: Vec<(String, String)>,
    /// Leading bytes of keys, for skipping positions that cannot match.
    ascii_leads: [bool; 128],
    has_non_ascii_key: bool,
}

impl EmojiTable {
    pub fn from_entries(pairs: impl IntoIterator<Item = (String, String)>) -> Result<EmojiTable> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (emoji, name) in pairs {
            if emoji.is_empty() {
                return Err(Error::invalid("emoji table: empty emoji key"));
            }
            if name.is_empty() || !name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_') {
                return Err(Error::invalid(format!(
                    "emoji table: name \"{name}\" must match [a-z0-9_]+"
                )));
            }
            entries.push((emoji, name));
        }
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        entries.dedup_by(|a, b| a.0 == b.0);
        let mut ascii_leads = [false; 128];
        let mut has_non_ascii_key = false;
        for (key, _) in &entries {
            let b = key.as_bytes()[0];
            if b < 128 {
                ascii_leads[b as usize] = true;
            } else {
                has_non_ascii_key = true;
            }
        }
        Ok(EmojiTable {
            entries,
            ascii_leads,
            has_non_ascii_key,
        })
    }

    fn from_tsv(content: &str, origin: &Path) -> Result<EmojiTable> {
        let mut pairs = Vec::new();
        for (lineno, line) in ioutil::data_lines(content) {
            let Some((emoji, name)) = line.split_once('\t') else {
                return Err(Error::Malformed {
                    path: origin.to_path_buf(),
                    line: lineno,
                    msg: "expected `emoji\\tname`".to_string(),
                });
            };
            pairs.push((emoji.to_string(), name.to_string()));
        }
        EmojiTable::from_entries(pairs)
    }

    /// Load a two-column `emoji\tname` TSV.
    pub fn from_path(path: &Path) -> Result<EmojiTable> {
        EmojiTable::from_tsv(&ioutil::read_lossy(path)?, path)
    }

    /// The curated table shipped with the crate.
    pub fn bundled() -> &'static EmojiTable {
        static TABLE: OnceLock<EmojiTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            EmojiTable::from_tsv(include_str!("../data/emoji.tsv"), Path::new("bundled"))
                .expect("bundled emoji table is well-formed")
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest table key that prefixes `rest`, if any.
    fn match_at<'t>(&'t self, rest: &str) -> Option<(&'t str, &'t str)> {
        let lead = rest.as_bytes()[0];
        if lead < 128 {
            if !self.ascii_leads[lead as usize] {
                return None;
            }
        } else if !self.has_non_ascii_key {
            return None;
        }
        self.entries
            .iter()
            .find(|(key, _)| rest.starts_with(key.as_str()))
            .map(|(key, name)| (key.as_str(), name.as_str()))
    }
}

/// Replace every maximal emoji sequence found in the table with `:name:`,
/// leaving all other codepoints untouched.
pub fn demojize(text: &str, table: &EmojiTable) -> String {
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < text.len() {
        if let Some((key, name)) = table.match_at(&text[i..]) {
            out.push(':');
            out.push_str(name);
            out.push(':');
            i += key.len();
        } else {
            let ch = text[i..].chars().next().expect("in-bounds char boundary");
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    out
}

fn mention_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@[A-Za-z0-9_]+").expect("valid pattern"))
}

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"https?://\S+").expect("valid pattern"))
}

/// Byte ranges to delete: boundary-checked mentions plus URLs with a single
/// trailing `.` `,` `!` `?` `)` excluded. Overlaps are merged.
fn deletion_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    for m in mention_pattern().find_iter(text) {
        let preceded_ok = text[..m.start()]
            .chars()
            .next_back()
            .is_none_or(char::is_whitespace);
        if preceded_ok {
            ranges.push((m.start(), m.end()));
        }
    }
    for m in url_pattern().find_iter(text) {
        let mut end = m.end();
        if let Some(last) = text[m.start()..end].chars().next_back() {
            if matches!(last, '.' | ',' | '!' | '?' | ')') {
                end -= last.len_utf8();
            }
        }
        ranges.push((m.start(), end));
    }
    ranges.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (start, end) in ranges {
        match merged.last_mut() {
            Some((_, prev_end)) if start <= *prev_end => *prev_end = (*prev_end).max(end),
            _ => merged.push((start, end)),
        }
    }
    merged
}

/// Delete mentions and URLs, collapse whitespace runs that touch a deletion
/// seam to one space, and trim the result.
pub fn strip_mentions_links(text: &str) -> String {
    let ranges = deletion_ranges(text);
    let mut kept = String::with_capacity(text.len());
    let mut seams: Vec<usize> = Vec::new();
    let mut prev = 0;
    for (start, end) in ranges {
        kept.push_str(&text[prev..start]);
        seams.push(kept.len());
        prev = end;
    }
    kept.push_str(&text[prev..]);

    if seams.is_empty() {
        return kept.trim().to_string();
    }

    let mut out = String::with_capacity(kept.len());
    let mut pos = 0;
    while pos < kept.len() {
        let rest = &kept[pos..];
        let ch = rest.chars().next().expect("in-bounds char boundary");
        if ch.is_whitespace() {
            let run_len: usize = rest
                .chars()
                .take_while(|c| c.is_whitespace())
                .map(char::len_utf8)
                .sum();
            let run_end = pos + run_len;
            let touches_seam = seams
                .binary_search_by(|s| {
                    if *s < pos {
                        std::cmp::Ordering::Less
                    } else if *s > run_end {
                        std::cmp::Ordering::Greater
                    } else {
                        std::cmp::Ordering::Equal
                    }
                })
                .is_ok();
            if touches_seam {
                out.push(' ');
            } else {
                out.push_str(&kept[pos..run_end]);
            }
            pos = run_end;
        } else {
            out.push(ch);
            pos += ch.len_utf8();
        }
    }
    out.trim().to_string()
}

/// Hook for extra normalization stages (part-of-speech or masking style
/// rewrites). The shipped pipeline keeps it as the identity.
pub fn normalization_hook(text: String) -> String {
    text
}

/// Full cleaning pass: demojize, strip mentions and URLs, run the hook, and
/// substitute [`EMPTY_PLACEHOLDER`] if nothing is left.
pub fn preprocess(text: &str, table: &EmojiTable) -> String {
    let cleaned = normalization_hook(strip_mentions_links(&demojize(text, table)));
    if cleaned.is_empty() {
        EMPTY_PLACEHOLDER.to_string()
    } else {
        cleaned
    }
}

/// Clean every row of a split, preserving ids, labels, flags, and order.
pub fn preprocess_split(split: &CorpusSplit, table: &EmojiTable) -> CorpusSplit {
    let rows = par::map_ordered(&split.rows, |row| {
        let mut row = row.clone();
        row.text = preprocess(&row.text, table);
        row
    });
    CorpusSplit { rows, ..*split }
}
