//! Probability vectors over the vocabulary.

use crate::error::{Error, Result};

/// Tolerance used when validating externally supplied distributions.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// A categorical distribution over `M` tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates that `values` lie on the probability simplex (within
    /// [`SIMPLEX_TOL`]).
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values)?;
        Ok(Self(values))
    }

    /// Wraps a softmax output without validation, so that non-finite values
    /// from a diverged model reach the loss checks instead of panicking.
    pub fn from_softmax(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0 / m as f64; m])
    }

    pub fn one_hot(m: usize, k: usize) -> Self {
        let mut v = vec![0.0; m];
        v[k] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest probability; ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl AsRef<[f64]> for ProbVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn check_simplex(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::NotSimplex("empty vector".into()));
    }
    if let Some(bad) = values
        .iter()
        .find(|v| !v.is_finite() || **v < -SIMPLEX_TOL || **v > 1.0 + SIMPLEX_TOL)
    {
        return Err(Error::NotSimplex(format!("entry {bad} outside [0, 1]")));
    }
    let total: f64 = values.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::NotSimplex(format!("entries sum to {total}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ProbVector::new(vec![0.25, 0.75]).is_ok());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.5, 1.5]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn argmax_ties_to_smallest() {
        assert_eq!(ProbVector::uniform(5).argmax(), 0);
        assert_eq!(ProbVector::new(vec![0.1, 0.7, 0.2]).unwrap().argmax(), 1);
    }
}
