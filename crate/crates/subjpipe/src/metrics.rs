//! Shared-task evaluation: 2x2 confusion tally with SUBJ as the positive
//! class, per-class and macro precision/recall/F1, accuracy, and the
//! id-joined file scorer.
//!
//! Zero denominators follow the scorer convention P = R = F1 = 0, which
//! keeps every metric total. Macro values are unweighted means over the two
//! classes. File output is fixed-point with 4 decimals; full precision is
//! kept internally.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use crate::corpus::{self, SubjLabel};
use crate::error::{Error, Result};
use crate::ioutil;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// 2x2 tally with SUBJ treated as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp_subj: usize,
    pub fp_subj: usize,
    pub fn_subj: usize,
    pub tn_subj: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp_subj + self.fp_subj + self.fn_subj + self.tn_subj
    }
}

/// The seven reported quantities for one evaluation run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub f1_macro: f64,
    pub p_macro: f64,
    pub r_macro: f64,
    pub f1_subj: f64,
    pub p_subj: f64,
    pub r_subj: f64,
    pub accuracy: f64,
}

pub const METRICS_HEADER: &str = "f1_macro\tp_macro\tr_macro\tf1_subj\tp_subj\tr_subj\taccuracy";

impl MetricsReport {
    pub fn values(&self) -> [f64; 7] {
        [
            self.f1_macro,
            self.p_macro,
            self.r_macro,
            self.f1_subj,
            self.p_subj,
            self.r_subj,
            self.accuracy,
        ]
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = self.values();
        write!(
            f,
            "{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            v[0], v[1], v[2], v[3], v[4], v[5], v[6]
        )
    }
}

#[cfg(feature = "parallel")]
fn add(a: ConfusionMatrix, b: ConfusionMatrix) -> ConfusionMatrix {
    ConfusionMatrix {
        tp_subj: a.tp_subj + b.tp_subj,
        fp_subj: a.fp_subj + b.fp_subj,
        fn_subj: a.fn_subj + b.fn_subj,
        tn_subj: a.tn_subj + b.tn_subj,
    }
}

fn tally(gold: &[SubjLabel], pred: &[SubjLabel]) -> ConfusionMatrix {
    let mut cm = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(pred) {
        match (g, p) {
            (SubjLabel::Subj, SubjLabel::Subj) => cm.tp_subj += 1,
            (SubjLabel::Obj, SubjLabel::Subj) => cm.fp_subj += 1,
            (SubjLabel::Subj, SubjLabel::Obj) => cm.fn_subj += 1,
            (SubjLabel::Obj, SubjLabel::Obj) => cm.tn_subj += 1,
        }
    }
    cm
}

/// Chunk size for the parallel tally; counts are integers, so the
/// chunk-wise reduction is exact regardless of order.
#[cfg(feature = "parallel")]
const TALLY_CHUNK: usize = 16 * 1024;

/// Tally gold/prediction pairs with SUBJ as the positive class.
pub fn confusion(gold: &[SubjLabel], pred: &[SubjLabel]) -> Result<ConfusionMatrix> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch {
            ids: gold.len(),
            labels: pred.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::EmptyBatch);
    }
    #[cfg(feature = "parallel")]
    if gold.len() > TALLY_CHUNK {
        return Ok(gold
            .par_chunks(TALLY_CHUNK)
            .zip(pred.par_chunks(TALLY_CHUNK))
            .map(|(g, p)| tally(g, p))
            .reduce(ConfusionMatrix::default, add));
    }
    Ok(tally(gold, pred))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class precision/recall/F1, macro means, and accuracy.
pub fn report(cm: &ConfusionMatrix) -> MetricsReport {
    let p_subj = ratio(cm.tp_subj, cm.tp_subj + cm.fp_subj);
    let r_subj = ratio(cm.tp_subj, cm.tp_subj + cm.fn_subj);
    let f1_subj = f1(p_subj, r_subj);
    // OBJ as positive: its true positives are SUBJ's true negatives
    let p_obj = ratio(cm.tn_subj, cm.tn_subj + cm.fn_subj);
    let r_obj = ratio(cm.tn_subj, cm.tn_subj + cm.fp_subj);
    let f1_obj = f1(p_obj, r_obj);
    MetricsReport {
        f1_macro: (f1_subj + f1_obj) / 2.0,
        p_macro: (p_subj + p_obj) / 2.0,
        r_macro: (r_subj + r_obj) / 2.0,
        f1_subj,
        p_subj,
        r_subj,
        accuracy: ratio(cm.tp_subj + cm.tn_subj, cm.total()),
    }
}

/// Score a prediction file against a gold file, joining rows by
/// sentence_id. Missing or extra prediction ids are fatal; up to ten
/// offenders of each kind are listed.
pub fn evaluate_files(gold_path: &Path, pred_path: &Path) -> Result<MetricsReport> {
    let gold = corpus::read_gold_labels(gold_path)?;
    let pred_pairs = corpus::read_predictions(pred_path)?;
    let mut pred: HashMap<&str, SubjLabel> = HashMap::with_capacity(pred_pairs.len());
    for (id, label) in &pred_pairs {
        if pred.insert(id.as_str(), *label).is_some() {
            return Err(Error::DuplicateId { id: id.clone() });
        }
    }

    let missing: Vec<&str> = gold
        .iter()
        .filter(|(id, _)| !pred.contains_key(id.as_str()))
        .map(|(id, _)| id.as_str())
        .collect();
    let gold_ids: std::collections::HashSet<&str> = gold.iter().map(|(id, _)| id.as_str()).collect();
    let mut extra: Vec<&str> = pred_pairs
        .iter()
        .map(|(id, _)| id.as_str())
        .filter(|id| !gold_ids.contains(id))
        .collect();
    extra.sort_unstable();
    if !missing.is_empty() || !extra.is_empty() {
        let list = |ids: &[&str]| {
            let shown: Vec<&str> = ids.iter().take(10).copied().collect();
            let more = ids.len().saturating_sub(10);
            if more > 0 {
                format!("{} (+{} more)", shown.join(", "), more)
            } else {
                shown.join(", ")
            }
        };
        let mut parts = Vec::new();
        if !missing.is_empty() {
            parts.push(format!("missing {}: {}", missing.len(), list(&missing)));
        }
        if !extra.is_empty() {
            parts.push(format!("extra {}: {}", extra.len(), list(&extra)));
        }
        return Err(Error::PredictionMismatch(parts.join("; ")));
    }

    let (gold_labels, pred_labels): (Vec<SubjLabel>, Vec<SubjLabel>) = gold
        .iter()
        .map(|(id, g)| (*g, pred[id.as_str()]))
        .unzip();
    Ok(report(&confusion(&gold_labels, &pred_labels)?))
}

/// Write a one-row metrics TSV with the fixed 7-column header.
pub fn write_report_tsv(report: &MetricsReport, path: &Path) -> Result<()> {
    let body = format!("{METRICS_HEADER}\n{report}\n");
    ioutil::write_atomic(path, body.as_bytes())
}

/// Read a metrics TSV produced by [`write_report_tsv`].
pub fn read_report_tsv(path: &Path) -> Result<MetricsReport> {
    let content = ioutil::read_lossy(path)?;
    let malformed = |line: usize, msg: &str| Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut lines = ioutil::data_lines(&content);
    let (lineno, header) = lines.next().ok_or_else(|| malformed(1, "empty file"))?;
    if header != METRICS_HEADER {
        return Err(malformed(lineno, "unexpected header"));
    }
    let (lineno, row) = lines.next().ok_or_else(|| malformed(2, "missing data row"))?;
    let fields: Vec<&str> = row.split('\t').collect();
    if fields.len() != 7 {
        return Err(malformed(lineno, "expected 7 columns"));
    }
    let mut values = [0.0f64; 7];
    for (i, field) in fields.iter().enumerate() {
        values[i] = field
            .parse()
            .map_err(|_| malformed(lineno, "non-numeric value"))?;
    }
    Ok(MetricsReport {
        f1_macro: values[0],
        p_macro: values[1],
        r_macro: values[2],
        f1_subj: values[3],
        p_subj: values[4],
        r_subj: values[5],
        accuracy: values[6],
    })
}
