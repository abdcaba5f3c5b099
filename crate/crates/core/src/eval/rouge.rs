//! Longest-common-subsequence F-measure.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    /// Component-wise arithmetic mean; zeros for an empty input.
    pub fn mean(scores: &[RougeScore]) -> RougeScore {
        if scores.is_empty() {
            return RougeScore::default();
        }
        let n = scores.len() as f64;
        RougeScore {
            precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
            recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
            f1: scores.iter().map(|s| s.f1).sum::<f64>() / n,
        }
    }
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> RougeScore {
    if hypothesis.is_empty() || reference.is_empty() {
        return RougeScore::default();
    }
    let lcs = lcs_len(hypothesis, reference) as f64;
    let precision = lcs / hypothesis.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScore { precision, recall, f1 }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn examples() {
        let a = words("the cat sat on the mat");
        assert_eq!(rouge_l(&a, &a).f1, 1.0);
        let s = rouge_l(&a, &words("the cat is on the mat"));
        assert!((s.f1 - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(rouge_l(&words("a b"), &words("c d")).f1, 0.0);
        assert_eq!(rouge_l::<&str>(&[], &a), RougeScore::default());
    }
}
