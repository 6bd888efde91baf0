//! Shared-task TSV corpora: loading with malformed-row recovery, label
//! distribution statistics, and the prediction file format.
//!
//! Input layouts are tab-separated with an optional header:
//! `sentence_id  sentence  label` (3 columns), or
//! `sentence_id  sentence  label  solved_conflict` (4 columns) when the
//! file carries annotation-confidence flags. Sentences containing literal
//! tabs overflow the expected column count; such rows are recovered by
//! keeping the first field as the id, the trailing field(s) as label (and
//! confidence), and rejoining everything in between as the sentence.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ioutil;

/// Subjectivity label. Serialized forms are exactly `OBJ` and `SUBJ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SubjLabel {
    Obj,
    Subj,
}

impl SubjLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SubjLabel::Obj => "OBJ",
            SubjLabel::Subj => "SUBJ",
        }
    }

    /// Case-sensitive exact match; anything else is not a label.
    pub fn parse(s: &str) -> Option<SubjLabel> {
        match s {
            "OBJ" => Some(SubjLabel::Obj),
            "SUBJ" => Some(SubjLabel::Subj),
            _ => None,
        }
    }
}

impl fmt::Display for SubjLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Language {
    Ar,
    Bg,
    En,
    De,
    It,
    Multi,
}

impl Language {
    pub const ALL: [Language; 6] = [
        Language::Ar,
        Language::Bg,
        Language::En,
        Language::De,
        Language::It,
        Language::Multi,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Language::Ar => "ar",
            Language::Bg => "bg",
            Language::En => "en",
            Language::De => "de",
            Language::It => "it",
            Language::Multi => "multi",
        }
    }

    pub fn from_tag(s: &str) -> Result<Language> {
        Language::ALL
            .into_iter()
            .find(|l| l.tag() == s)
            .ok_or_else(|| Error::UnknownLanguage(s.to_string()))
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Language::Ar => "Arabic",
            Language::Bg => "Bulgarian",
            Language::En => "English",
            Language::De => "German",
            Language::It => "Italian",
            Language::Multi => "Multilingual",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitKind {
    Train,
    Dev,
    Test,
}

impl SplitKind {
    pub fn tag(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Dev => "dev",
            SplitKind::Test => "test",
        }
    }

    pub fn from_tag(s: &str) -> Result<SplitKind> {
        match s {
            "train" => Ok(SplitKind::Train),
            "dev" => Ok(SplitKind::Dev),
            "test" => Ok(SplitKind::Test),
            _ => Err(Error::UnknownSplit(s.to_string())),
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            SplitKind::Train => "Train",
            SplitKind::Dev => "Dev",
            SplitKind::Test => "Test",
        }
    }
}

impl fmt::Display for SplitKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One corpus row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub sentence_id: String,
    pub text: String,
    /// Absent only for unlabeled prediction input.
    pub label: Option<SubjLabel>,
    pub language: Language,
    /// Annotation-confidence flag; carried by the English dataset only.
    pub solved_conflict: Option<bool>,
}

/// Ordered rows of one file, plus how many malformed lines were dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSplit {
    pub split: SplitKind,
    pub language: Language,
    pub rows: Vec<LabeledSentence>,
    pub skipped_count: usize,
}

impl CorpusSplit {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Label counts and 2-decimal percentages for one split.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistributionStats {
    pub total: usize,
    pub obj_count: usize,
    pub subj_count: usize,
    pub obj_pct: f64,
    pub subj_pct: f64,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Column count expected for a layout, and where the label sits in a raw
/// field list of length `n` (label is last, or second to last when a
/// confidence column follows).
fn label_index(n: usize, has_confidence: bool) -> Option<usize> {
    let expected = if has_confidence { 4 } else { 3 };
    if n < expected {
        return None;
    }
    Some(if has_confidence { n - 2 } else { n - 1 })
}

fn parse_confidence(s: &str) -> Option<bool> {
    match s {
        "1" | "true" | "True" => Some(true),
        "0" | "false" | "False" => Some(false),
        _ => None,
    }
}

fn parse_row(
    line: &str,
    language: Language,
    has_confidence: bool,
) -> std::result::Result<LabeledSentence, &'static str> {
    let fields: Vec<&str> = line.split('\t').collect();
    let label_at = match label_index(fields.len(), has_confidence) {
        Some(i) => i,
        None => return Err("too few fields for the declared layout"),
    };
    let label = match SubjLabel::parse(fields[label_at]) {
        Some(l) => l,
        None => return Err("label field is not OBJ/SUBJ"),
    };
    let solved_conflict = if has_confidence {
        match parse_confidence(fields[fields.len() - 1]) {
            Some(b) => Some(b),
            None => return Err("solved_conflict field is not a boolean"),
        }
    } else {
        None
    };
    let text = fields[1..label_at].join("\t");
    if text.trim().is_empty() {
        return Err("empty sentence text");
    }
    Ok(LabeledSentence {
        sentence_id: fields[0].to_string(),
        text,
        label: Some(label),
        language,
        solved_conflict,
    })
}

/// Load a labeled shared-task TSV, recovering rows whose sentence contains
/// literal tabs and dropping rows that cannot be recovered.
///
/// The first line counts as a header exactly when the field at the layout's
/// label position is not a valid label. Invalid UTF-8 byte sequences are
/// replaced, never fatal. Dropped lines are logged with their line number
/// and counted in `skipped_count`.
pub fn load_tsv(
    path: &Path,
    language: Language,
    split: SplitKind,
    has_confidence: bool,
) -> Result<CorpusSplit> {
    if has_confidence && language != Language::En {
        return Err(Error::invalid(
            "solved_conflict column is only defined for English input",
        ));
    }
    let content = ioutil::read_lossy(path)?;
    let mut rows: Vec<LabeledSentence> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut skipped = 0usize;
    let mut data_lines = 0usize;
    let mut first = true;

    for (lineno, line) in ioutil::data_lines(&content) {
        if first {
            first = false;
            let fields: Vec<&str> = line.split('\t').collect();
            let is_header = label_index(fields.len(), has_confidence)
                .map(|i| SubjLabel::parse(fields[i]).is_none())
                .unwrap_or(true);
            if is_header {
                continue;
            }
        }
        data_lines += 1;
        match parse_row(line, language, has_confidence) {
            Ok(row) => {
                if !seen.insert(row.sentence_id.clone()) {
                    return Err(Error::DuplicateId {
                        id: row.sentence_id,
                    });
                }
                rows.push(row);
            }
            Err(reason) => {
                skipped += 1;
                log::warn!("{}:{}: skipped row: {}", path.display(), lineno, reason);
            }
        }
    }

    if data_lines == 0 {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(CorpusSplit {
        split,
        language,
        rows,
        skipped_count: skipped,
    })
}

/// Load an unlabeled prediction-input TSV (`sentence_id  sentence`).
/// The first line counts as a header exactly when its first field is
/// `sentence_id`.
pub fn load_unlabeled_tsv(path: &Path, language: Language, split: SplitKind) -> Result<CorpusSplit> {
    let content = ioutil::read_lossy(path)?;
    let mut rows: Vec<LabeledSentence> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut skipped = 0usize;
    let mut data_lines = 0usize;
    let mut first = true;

    for (lineno, line) in ioutil::data_lines(&content) {
        if first {
            first = false;
            if line.split('\t').next() == Some("sentence_id") {
                continue;
            }
        }
        data_lines += 1;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 || fields[1..].join("\t").trim().is_empty() {
            skipped += 1;
            log::warn!("{}:{}: skipped row: missing sentence text", path.display(), lineno);
            continue;
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { id });
        }
        rows.push(LabeledSentence {
            sentence_id: id,
            text: fields[1..].join("\t"),
            label: None,
            language,
            solved_conflict: None,
        });
    }

    if data_lines == 0 {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(CorpusSplit {
        split,
        language,
        rows,
        skipped_count: skipped,
    })
}

/// Label counts and 2-decimal percentages over the labeled rows.
pub fn stats(split: &CorpusSplit) -> Result<DistributionStats> {
    let mut obj = 0usize;
    let mut subj = 0usize;
    for row in &split.rows {
        match row.label {
            Some(SubjLabel::Obj) => obj += 1,
            Some(SubjLabel::Subj) => subj += 1,
            None => {}
        }
    }
    let total = obj + subj;
    if total == 0 {
        return Err(Error::EmptySplit);
    }
    Ok(DistributionStats {
        total,
        obj_count: obj,
        subj_count: subj,
        obj_pct: round2(100.0 * obj as f64 / total as f64),
        subj_pct: round2(100.0 * subj as f64 / total as f64),
    })
}

/// Write the two-column prediction file: header `sentence_id\tlabel`,
/// UTF-8, LF endings, rows in input order.
pub fn write_predictions<S: AsRef<str>>(ids: &[S], labels: &[SubjLabel], path: &Path) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::LengthMismatch {
            ids: ids.len(),
            labels: labels.len(),
        });
    }
    let mut out = String::from("sentence_id\tlabel\n");
    for (id, label) in ids.iter().zip(labels) {
        out.push_str(id.as_ref());
        out.push('\t');
        out.push_str(label.as_str());
        out.push('\n');
    }
    ioutil::write_atomic(path, out.as_bytes())
}

/// Read a prediction file back as ordered (id, label) pairs.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, SubjLabel)>> {
    let content = ioutil::read_lossy(path)?;
    let mut pairs = Vec::new();
    let mut first = true;
    for (lineno, line) in ioutil::data_lines(&content) {
        let fields: Vec<&str> = line.split('\t').collect();
        let label = fields.last().and_then(|f| SubjLabel::parse(f));
        if first {
            first = false;
            if label.is_none() {
                continue; // header
            }
        }
        match (fields.len(), label) {
            (2, Some(label)) => pairs.push((fields[0].to_string(), label)),
            _ => {
                return Err(Error::Malformed {
                    path: path.to_path_buf(),
                    line: lineno,
                    msg: "expected `sentence_id\\tlabel`".to_string(),
                })
            }
        }
    }
    Ok(pairs)
}

/// Read (id, label) pairs out of any of the supported gold layouts: the
/// 2-column prediction format, the 3-column corpus format (including
/// recovered tab-in-text rows), or the 4-column confidence format. Rows
/// without a recoverable label are dropped.
pub fn read_gold_labels(path: &Path) -> Result<Vec<(String, SubjLabel)>> {
    let content = ioutil::read_lossy(path)?;
    let mut pairs: Vec<(String, SubjLabel)> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut first = true;
    for (_lineno, line) in ioutil::data_lines(&content) {
        let fields: Vec<&str> = line.split('\t').collect();
        let n = fields.len();
        let label = if n >= 2 {
            SubjLabel::parse(fields[n - 1])
                .or_else(|| (n >= 4).then(|| SubjLabel::parse(fields[n - 2])).flatten())
        } else {
            None
        };
        if first {
            first = false;
            if label.is_none() {
                continue; // header
            }
        }
        let Some(label) = label else { continue };
        let id = fields[0].to_string();
        if ids.insert(id.clone(), pairs.len()).is_some() {
            return Err(Error::DuplicateId { id });
        }
        pairs.push((id, label));
    }
    if pairs.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    Ok(pairs)
}

/// Write a split back out in its source layout (used by the preprocess and
/// translate commands and the run dumps). Rows whose text contains literal
/// tabs round-trip through the loader's recovery rule.
pub fn write_split(split: &CorpusSplit, path: &Path) -> Result<()> {
    let has_confidence = split.rows.iter().any(|r| r.solved_conflict.is_some());
    let mut out = String::from(if has_confidence {
        "sentence_id\tsentence\tlabel\tsolved_conflict\n"
    } else {
        "sentence_id\tsentence\tlabel\n"
    });
    for row in &split.rows {
        out.push_str(&row.sentence_id);
        out.push('\t');
        out.push_str(&row.text);
        out.push('\t');
        out.push_str(row.label.map(SubjLabel::as_str).unwrap_or(""));
        if has_confidence {
            out.push('\t');
            out.push_str(if row.solved_conflict == Some(true) { "1" } else { "0" });
        }
        out.push('\n');
    }
    ioutil::write_atomic(path, out.as_bytes())
}
