//! Span correlation loss: inside each phrase span, the element-wise product
//! of adjacent student distributions should match the teacher's.

use mgsr_autodiff::{Graph, Tensor, Var};

use crate::error::{Error, Result};
use crate::prob::ProbVector;
use crate::spans::{validate_spans, Span};

/// One adjacent-position pair `(row, row + 1)` and its weight in the loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpanPair {
    pub row: usize,
    pub weight: f64,
}

impl SpanPair {
    /// Pairs for one sequence whose positions start at `offset` in the
    /// stacked rows. Each pair is weighted `scale / (n_s · n_si)`.
    pub fn for_sequence(spans: &[Span], seq_len: usize, offset: usize, scale: f64) -> Result<Vec<SpanPair>> {
        if let Err(msg) = validate_spans(spans, Some(seq_len)) {
            return Err(Error::SpanBounds { span: msg, len: seq_len });
        }
        let n_s = spans.len() as f64;
        let mut out = Vec::new();
        for s in spans {
            let w = scale / (n_s * s.len as f64);
            for j in s.start..s.end().saturating_sub(1) {
                out.push(SpanPair {
                    row: offset + j,
                    weight: w,
                });
            }
        }
        Ok(out)
    }
}

/// Σ weight · ‖s_j ∘ s_{j+1} − t_j ∘ t_{j+1}‖₂ over `pairs`, where `student`
/// and `teacher` are `[R, M]` stacks of distributions.
pub fn span_loss_graph(g: &mut Graph, student: Var, teacher: Var, pairs: &[SpanPair]) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(g.constant(Tensor::scalar(0.0)));
    }
    let a: Vec<usize> = pairs.iter().map(|p| p.row).collect();
    let b: Vec<usize> = pairs.iter().map(|p| p.row + 1).collect();
    let hadamard = |g: &mut Graph, x: Var| -> Result<Var> {
        let xa = g.select_rows(x, &a)?;
        let xb = g.select_rows(x, &b)?;
        Ok(g.mul(xa, xb)?)
    };
    let hs = hadamard(g, student)?;
    let ht = hadamard(g, teacher)?;
    let d = g.sub(hs, ht)?;
    let sq = g.square(d)?;
    let norm2 = g.sum(sq, Some(1))?;
    let norm = g.sqrt(norm2)?;
    let w = g.constant(Tensor::from_slice(&pairs.iter().map(|p| p.weight).collect::<Vec<_>>()));
    let weighted = g.mul(norm, w)?;
    Ok(g.sum(weighted, None)?)
}

/// Span loss for one sequence, evaluated directly.
pub fn span_correlation_loss(student_dists: &[ProbVector], teacher_dists: &[ProbVector], spans: &[Span]) -> Result<f64> {
    if student_dists.len() != teacher_dists.len() {
        return Err(Error::LengthMismatch {
            what: "student/teacher sequence",
            left: student_dists.len(),
            right: teacher_dists.len(),
        });
    }
    let pairs = SpanPair::for_sequence(spans, student_dists.len(), 0, 1.0)?;
    let mut total = 0.0;
    for p in pairs {
        let (s0, s1) = (&student_dists[p.row], &student_dists[p.row + 1]);
        let (t0, t1) = (&teacher_dists[p.row], &teacher_dists[p.row + 1]);
        if s0.len() != t0.len() || s1.len() != t1.len() || s0.len() != s1.len() {
            return Err(Error::LengthMismatch {
                what: "distribution width",
                left: s0.len(),
                right: t0.len(),
            });
        }
        let sq: f64 = (0..s0.len())
            .map(|k| {
                let d = s0.values()[k] * s1.values()[k] - t0.values()[k] * t1.values()[k];
                d * d
            })
            .sum();
        total += p.weight * sq.sqrt();
    }
    Ok(total)
}
