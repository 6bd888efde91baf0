//! Mapping between the 2-class subjectivity task and a 3-class sentiment
//! head: SUBJ trains against the negative class and OBJ against the
//! positive class, and inference compares only those two logits, leaving
//! the neutral output inert.

use crate::corpus::SubjLabel;
use crate::error::{Error, Result};

/// Output classes of a sentiment head, in canonical index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SentimentClass {
    Negative,
    Neutral,
    Positive,
}

impl SentimentClass {
    pub const ALL: [SentimentClass; 3] = [
        SentimentClass::Negative,
        SentimentClass::Neutral,
        SentimentClass::Positive,
    ];

    pub fn index(self) -> usize {
        match self {
            SentimentClass::Negative => 0,
            SentimentClass::Neutral => 1,
            SentimentClass::Positive => 2,
        }
    }
}

/// 3-class score vector indexed by [`SentimentClass`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SentimentLogits(pub [f64; 3]);

impl SentimentLogits {
    pub fn score(&self, class: SentimentClass) -> f64 {
        self.0[class.index()]
    }

    pub fn one_hot(class: SentimentClass) -> SentimentLogits {
        let mut scores = [0.0; 3];
        scores[class.index()] = 1.0;
        SentimentLogits(scores)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|s| s.is_finite())
    }
}

/// Training target for a subjectivity label.
pub fn to_sentiment(label: SubjLabel) -> SentimentClass {
    match label {
        SubjLabel::Subj => SentimentClass::Negative,
        SubjLabel::Obj => SentimentClass::Positive,
    }
}

/// Decode a head output: SUBJ when the negative logit strictly exceeds the
/// positive one, OBJ otherwise (ties break to the majority class OBJ). The
/// neutral logit carries no subjectivity meaning and is ignored.
pub fn from_logits(logits: &SentimentLogits) -> Result<SubjLabel> {
    if !logits.is_finite() {
        return Err(Error::NonFiniteLogits);
    }
    if logits.score(SentimentClass::Negative) > logits.score(SentimentClass::Positive) {
        Ok(SubjLabel::Subj)
    } else {
        Ok(SubjLabel::Obj)
    }
}
