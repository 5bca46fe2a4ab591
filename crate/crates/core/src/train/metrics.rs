//! Task scores: span F1/EM and accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub name: String,
    /// In `[0, 1]`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: String,
    pub scores: Vec<Score>,
}

impl TaskMetrics {
    pub fn new(task: &str, scores: &[(&str, f64)]) -> Self {
        TaskMetrics {
            task: task.into(),
            scores: scores
                .iter()
                .map(|&(name, value)| Score { name: name.into(), value })
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.scores.iter().find(|s| s.name == name).map(|s| s.value)
    }

    /// The first score, which each task treats as its headline number.
    pub fn primary(&self) -> &Score {
        &self.scores[0]
    }
}

/// Token-overlap F1 and exact match between inclusive spans, averaged over
/// examples.
pub fn score_span(predictions: &[(usize, usize)], gold: &[(usize, usize)]) -> Result<(f64, f64)> {
    if predictions.len() != gold.len() || gold.is_empty() {
        return Err(Error::Input(format!(
            "{} predictions for {} gold spans",
            predictions.len(),
            gold.len()
        )));
    }
    let (mut f1, mut em) = (0.0, 0.0);
    for (&(ps, pe), &(gs, ge)) in predictions.iter().zip(gold) {
        if ps > pe || gs > ge {
            return Err(Error::Input(format!("reversed span ({ps}, {pe}) or ({gs}, {ge})")));
        }
        let overlap = (pe.min(ge) + 1).saturating_sub(ps.max(gs)) as f64;
        if overlap > 0.0 {
            let precision = overlap / (pe - ps + 1) as f64;
            let recall = overlap / (ge - gs + 1) as f64;
            f1 += 2.0 * precision * recall / (precision + recall);
        }
        if (ps, pe) == (gs, ge) {
            em += 1.0;
        }
    }
    let n = gold.len() as f64;
    Ok((f1 / n, em / n))
}

pub fn accuracy(predictions: &[usize], gold: &[usize]) -> Result<f64> {
    if predictions.len() != gold.len() || gold.is_empty() {
        return Err(Error::Input(format!(
            "{} predictions for {} labels",
            predictions.len(),
            gold.len()
        )));
    }
    let hits = predictions.iter().zip(gold).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / gold.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_scores() {
        assert_eq!(score_span(&[(2, 5)], &[(2, 5)]).unwrap(), (1.0, 1.0));
        assert_eq!(score_span(&[(0, 1)], &[(2, 5)]).unwrap(), (0.0, 0.0));
        let (f1, em) = score_span(&[(3, 5)], &[(2, 5)]).unwrap();
        assert!((f1 - 6.0 / 7.0).abs() < 1e-15);
        assert_eq!(em, 0.0);
        let (f1, em) = score_span(&[(3, 5), (2, 5)], &[(2, 5), (2, 5)]).unwrap();
        assert!((f1 - (6.0 / 7.0 + 1.0) / 2.0).abs() < 1e-15);
        assert_eq!(em, 0.5);
        assert!(score_span(&[(0, 0)], &[]).is_err());
        assert!(score_span(&[(3, 2)], &[(2, 5)]).is_err());
    }

    #[test]
    fn accuracy_counts() {
        assert_eq!(accuracy(&[1, 0, 1, 1], &[1, 1, 1, 1]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 0]).is_err());
    }
}
