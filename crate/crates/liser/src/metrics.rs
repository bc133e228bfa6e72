//! Recall-based evaluation metrics. UAR (unweighted average recall) treats
//! every class equally regardless of support; WAR is plain accuracy.

use serde::{Deserialize, Serialize};
use std::error::Error;
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    Empty,
    OutOfRange { kind: &'static str, value: usize, classes: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::Empty => write!(f, "no prediction pairs to score"),
            MetricsError::OutOfRange { kind, value, classes } => {
                write!(f, "{kind} {value} out of range for {classes} classes")
            }
        }
    }
}

impl Error for MetricsError {}

/// Scores for one evaluation pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// confusion[t][p] = number of items with true class t predicted as p.
    pub confusion: Vec<Vec<usize>>,
    pub uar: f64,
    pub war: f64,
    pub n_items: usize,
}

impl EvalReport {
    /// Build from (truth, prediction) pairs over `k` classes. UAR averages
    /// recall over the classes that actually appear as truth.
    pub fn from_pairs(k: usize, pairs: &[(usize, usize)]) -> Result<Self, MetricsError> {
        if pairs.is_empty() {
            return Err(MetricsError::Empty);
        }
        let mut confusion = vec![vec![0usize; k]; k];
        for &(truth, pred) in pairs {
            if truth >= k {
                return Err(MetricsError::OutOfRange { kind: "true label", value: truth, classes: k });
            }
            if pred >= k {
                return Err(MetricsError::OutOfRange { kind: "prediction", value: pred, classes: k });
            }
            confusion[truth][pred] += 1;
        }
        let mut recall_sum = 0.0;
        let mut populated = 0usize;
        let mut correct = 0usize;
        for (t, row) in confusion.iter().enumerate() {
            let support: usize = row.iter().sum();
            correct += row[t];
            if support > 0 {
                recall_sum += row[t] as f64 / support as f64;
                populated += 1;
            }
        }
        Ok(EvalReport {
            confusion,
            uar: recall_sum / populated as f64,
            war: correct as f64 / pairs.len() as f64,
            n_items: pairs.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_one() {
        let pairs: Vec<(usize, usize)> = (0..12).map(|i| (i % 3, i % 3)).collect();
        let r = EvalReport::from_pairs(3, &pairs).unwrap();
        assert_eq!(r.uar, 1.0);
        assert_eq!(r.war, 1.0);
        assert_eq!(r.confusion[2][2], 4);
        assert_eq!(r.n_items, 12);
    }

    #[test]
    fn hand_case_with_unequal_support() {
        // Class 0: 10 items all correct. Class 1: 30 items, 15 correct.
        let mut pairs = vec![(0, 0); 10];
        pairs.extend(vec![(1, 1); 15]);
        pairs.extend(vec![(1, 0); 15]);
        let r = EvalReport::from_pairs(2, &pairs).unwrap();
        assert!((r.uar - 0.75).abs() < 1e-15, "{}", r.uar);
        assert!((r.war - 0.625).abs() < 1e-15, "{}", r.war);
        assert_eq!(r.confusion, [[10, 0], [15, 15]]);
    }

    #[test]
    fn classes_without_support_do_not_dilute_uar() {
        // Only class 0 ever appears as truth; recall over it alone.
        let r = EvalReport::from_pairs(3, &[(0, 0), (0, 2)]).unwrap();
        assert_eq!(r.uar, 0.5);
        assert_eq!(r.war, 0.5);
    }

    #[test]
    fn matches_a_direct_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = rng.random_range(2..9);
            let n = rng.random_range(1..60);
            let pairs: Vec<(usize, usize)> =
                (0..n).map(|_| (rng.random_range(0..k), rng.random_range(0..k))).collect();
            let r = EvalReport::from_pairs(k, &pairs).unwrap();

            let count = |t: usize, p: usize| pairs.iter().filter(|&&x| x == (t, p)).count();
            let mut recalls = Vec::new();
            for t in 0..k {
                let support = pairs.iter().filter(|&&(x, _)| x == t).count();
                if support > 0 {
                    recalls.push(count(t, t) as f64 / support as f64);
                }
                for p in 0..k {
                    assert_eq!(r.confusion[t][p], count(t, p));
                }
            }
            let uar = recalls.iter().sum::<f64>() / recalls.len() as f64;
            let war = pairs.iter().filter(|&&(t, p)| t == p).count() as f64 / n as f64;
            assert!((r.uar - uar).abs() < 1e-15);
            assert!((r.war - war).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_empty_and_out_of_range() {
        assert_eq!(EvalReport::from_pairs(3, &[]), Err(MetricsError::Empty));
        assert!(EvalReport::from_pairs(2, &[(2, 0)]).is_err());
        assert!(EvalReport::from_pairs(2, &[(0, 2)]).is_err());
    }
}
