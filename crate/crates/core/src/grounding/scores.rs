use serde::{Deserialize, Serialize};

use crate::error::GroundingError;

use super::matrix::Matrix;
use super::prompt::PhraseSpanMap;

/// Largest `f64` below 1.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, kept strictly inside (0, 1).
pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// Region-token dot products, `F · Tfeatᵀ` (N×M).
pub fn alignment_logits(f: &Matrix, tfeat: &Matrix) -> Result<Matrix, GroundingError> {
    f.mul_transpose(tfeat)
}

/// `σ(F · Tfeatᵀ)` elementwise.
pub fn alignment_scores(f: &Matrix, tfeat: &Matrix) -> Result<Matrix, GroundingError> {
    Ok(alignment_logits(f, tfeat)?.map(sigmoid))
}

/// Phrase-level targets (N×c) to token-level targets (N×M).
pub fn expand_targets(t: &Matrix, spans: &PhraseSpanMap) -> Result<Matrix, GroundingError> {
    let m = spans.token_count();
    if t.cols() != spans.phrase_count() {
        return Err(GroundingError::ShapeMismatch(format!(
            "target has {} phrase columns, span map has {} phrases",
            t.cols(),
            spans.phrase_count()
        )));
    }
    if !t.is_binary() {
        return Err(GroundingError::ShapeMismatch("target matrix is not binary".into()));
    }
    if let Some(&j) = spans.spans.iter().flatten().find(|&&j| j >= m) {
        return Err(GroundingError::ShapeMismatch(format!(
            "span index {j} out of range for {m} tokens"
        )));
    }
    let mut out = Matrix::zeros(t.rows(), m);
    for i in 0..t.rows() {
        for (k, span) in spans.spans.iter().enumerate() {
            if t.get(i, k) == 1.0 {
                for &j in span {
                    out.set(i, j, 1.0);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl std::str::FromStr for Aggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            _ => Err(format!("unknown aggregation {s:?} (expected mean or max)")),
        }
    }
}

/// Token scores (N×M) to phrase probabilities (N×c).
pub fn aggregate_phrase_probs(
    s: &Matrix,
    spans: &PhraseSpanMap,
    how: Aggregation,
) -> Result<Matrix, GroundingError> {
    if s.cols() != spans.token_count() {
        return Err(GroundingError::ShapeMismatch(format!(
            "score matrix has {} token columns, span map has {}",
            s.cols(),
            spans.token_count()
        )));
    }
    for (k, span) in spans.spans.iter().enumerate() {
        if span.is_empty() {
            return Err(GroundingError::EmptySpan(k));
        }
        if let Some(&j) = span.iter().find(|&&j| j >= s.cols()) {
            return Err(GroundingError::ShapeMismatch(format!("span index {j} out of range")));
        }
    }
    let mut p = Matrix::zeros(s.rows(), spans.phrase_count());
    for i in 0..s.rows() {
        let row = s.row(i);
        for (k, span) in spans.spans.iter().enumerate() {
            let v = match how {
                Aggregation::Mean => span.iter().map(|&j| row[j]).sum::<f64>() / span.len() as f64,
                Aggregation::Max => span.iter().map(|&j| row[j]).fold(f64::NEG_INFINITY, f64::max),
            };
            p.set(i, k, v);
        }
    }
    Ok(p)
}

/// Region features, shared token features and their scores for one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentBundle {
    pub modality: String,
    pub regions: Matrix,
    pub tokens: Matrix,
    pub scores: Matrix,
}

impl AlignmentBundle {
    pub fn new(modality: impl Into<String>, regions: Matrix, tokens: Matrix) -> Result<Self, GroundingError> {
        let scores = alignment_scores(&regions, &tokens)?;
        Ok(AlignmentBundle {
            modality: modality.into(),
            regions,
            tokens,
            scores,
        })
    }

    pub fn phrase_probs(&self, spans: &PhraseSpanMap, how: Aggregation) -> Result<Matrix, GroundingError> {
        aggregate_phrase_probs(&self.scores, spans, how)
    }
}
