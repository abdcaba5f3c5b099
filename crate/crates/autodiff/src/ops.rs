//! Elementwise, reduction and shape operations.
//!
//! Binary elementwise ops accept a right operand whose shape is a suffix of
//! the left operand's shape; it is repeated over the leading axes.

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Op, Var, LOG_FLOOR};
use crate::linalg;
use crate::tensor::{axis_extents, Tensor};

impl Graph {
    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.ends_with(sb) {
            Ok(())
        } else {
            Err(AutodiffError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        self.check_broadcast(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let nb = tb.numel();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, tb.data()[i % nb]))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, op, rg))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Elementwise minimum of two same-shaped tensors.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(AutodiffError::ShapeMismatch {
                op: "minimum",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        self.binary("minimum", a, b, f64::min, Op::Minimum(a, b))
    }

    /// Natural log with inputs below [`LOG_FLOOR`] clamped to it.
    ///
    /// Negative or NaN inputs are rejected.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|x| !(**x >= 0.0)) {
            return Err(if bad.is_nan() {
                AutodiffError::NaN("log")
            } else {
                AutodiffError::NegativeLog(bad)
            });
        }
        self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// Square root; the gradient at exactly zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(&bad) = self.value(a).data().iter().find(|x| !(**x >= 0.0)) {
            return Err(AutodiffError::Invalid(format!("sqrt of {bad}")));
        }
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Copy of `a` that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let value = self.value(a).clone();
        self.constant(value)
    }

    /// Matrix product.
    ///
    /// `a` is `[.., n, k]` (leading axes are flattened into rows) and `b` is
    /// `[k, m]`; or both are rank 3 with equal leading batch size. A rank-1
    /// `a` is treated as a single row.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || AutodiffError::ShapeMismatch {
            op: "matmul",
            left: sa.clone(),
            right: sb.clone(),
        };
        if sa.is_empty() {
            return Err(mismatch());
        }
        let k = *sa.last().unwrap();
        let (batch, n, m, out_shape) = match sb.len() {
            2 => {
                if sb[0] != k {
                    return Err(mismatch());
                }
                let rows: usize = sa[..sa.len() - 1].iter().product();
                let mut out = sa[..sa.len() - 1].to_vec();
                out.push(sb[1]);
                (1, rows, sb[1], out)
            }
            3 => {
                if sa.len() != 3 || sa[0] != sb[0] || sb[1] != k {
                    return Err(mismatch());
                }
                (sa[0], sa[1], sb[2], vec![sa[0], sa[1], sb[2]])
            }
            _ => return Err(mismatch()),
        };
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; batch * n * m];
        for bi in 0..batch {
            let boff = if sb.len() == 3 { bi * k * m } else { 0 };
            linalg::gemm(
                n,
                k,
                m,
                &av[bi * n * k..],
                (k as isize, 1),
                &bv[boff..],
                (m as isize, 1),
                &mut out[bi * n * m..],
                (m as isize, 1),
            );
        }
        let value = Tensor::new(out_shape, out)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(
            value,
            Op::MatMul {
                a,
                b,
                batch,
                n,
                k,
                m,
            },
            rg,
        ))
    }

    fn check_axis(&self, a: Var, axis: usize) -> Result<()> {
        let rank = self.value(a).rank();
        if axis >= rank {
            return Err(AutodiffError::InvalidAxis { axis, rank });
        }
        Ok(())
    }

    /// Sum over one axis (removing it), or over everything when `axis` is `None`.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(a);
        let value = match axis {
            None => Tensor::scalar(t.data().iter().sum()),
            Some(axis) => {
                self.check_axis(a, axis)?;
                let (outer, len, inner) = axis_extents(t.shape(), axis);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            out[o * inner + i] += t.data()[(o * len + l) * inner + i];
                        }
                    }
                }
                let mut shape = t.shape().to_vec();
                shape.remove(axis);
                Tensor::new(shape, out)?
            }
        };
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Sum { a, axis }, rg))
    }

    /// Mean of all elements.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a, None)?;
        self.scale(s, 1.0 / n)
    }

    fn softmax_impl(&mut self, a: Var, axis: usize, log: bool) -> Result<Var> {
        self.check_axis(a, axis)?;
        let t = self.value(a);
        if t.data().iter().any(|x| x.is_nan()) {
            return Err(AutodiffError::NaN(if log { "log_softmax" } else { "softmax" }));
        }
        let (outer, len, inner) = axis_extents(t.shape(), axis);
        let x = t.data();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| (o * len + l) * inner + i;
                let max = (0..len).map(|l| x[at(l)]).fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = (0..len).map(|l| (x[at(l)] - max).exp()).sum();
                let log_denom = denom.ln();
                for l in 0..len {
                    out[at(l)] = if log {
                        x[at(l)] - max - log_denom
                    } else {
                        (x[at(l)] - max).exp() / denom
                    };
                }
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        let rg = self.requires_grad(a);
        let op = if log {
            Op::LogSoftmax { a, axis }
        } else {
            Op::Softmax { a, axis }
        };
        Ok(self.push(value, op, rg))
    }

    /// Numerically stable softmax (max-subtracted) along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, false)
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(a, axis, true)
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(AutodiffError::Invalid("concat of zero tensors".into()));
        };
        self.check_axis(first, axis)?;
        let base = self.shape(first).to_vec();
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(ax, (x, y))| ax == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    left: base,
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(shape, out)?;
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Descending sort along the last axis. The result is detached: no
    /// gradient flows back through the permutation.
    pub fn sort_descending(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data().iter().any(|x| x.is_nan()) {
            return Err(AutodiffError::NaN("sort_descending"));
        }
        let m = t.last_dim();
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(m) {
            row.sort_by(|x, y| y.total_cmp(x));
        }
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.constant(value))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Picks one entry per row along the last axis: `out[r] = a[r, idx[r]]`.
    pub fn gather_last(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let m = t.last_dim();
        let rows = t.numel() / m;
        if idx.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "gather_last",
                left: t.shape().to_vec(),
                right: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(rows);
        for (r, &j) in idx.iter().enumerate() {
            if j >= m {
                return Err(AutodiffError::IndexOutOfRange { index: j, extent: m });
            }
            data.push(t.data()[r * m + j]);
        }
        let mut shape = t.shape().to_vec();
        shape.pop();
        if shape.is_empty() {
            shape.push(1);
        }
        let value = Tensor::new(shape, data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(
            value,
            Op::GatherLast {
                a,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Selects (and possibly repeats) slices along the first axis.
    pub fn select_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 || rows.is_empty() {
            return Err(AutodiffError::Invalid("select_rows needs rank ≥ 1 and rows".into()));
        }
        let n = t.shape()[0];
        let row: usize = t.shape()[1..].iter().product();
        let mut data = Vec::with_capacity(rows.len() * row);
        for &r in rows {
            if r >= n {
                return Err(AutodiffError::IndexOutOfRange { index: r, extent: n });
            }
            data.extend_from_slice(&t.data()[r * row..(r + 1) * row]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = rows.len();
        let value = Tensor::new(shape, data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(
            value,
            Op::SelectRows {
                a,
                rows: rows.to_vec(),
            },
            rg,
        ))
    }

    /// Column `j` of the last axis.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        let rows = self.value(a).numel() / self.value(a).last_dim();
        self.gather_last(a, &vec![j; rows])
    }

    /// Repeats every element `m` times along a new trailing axis.
    pub fn broadcast_last(&mut self, a: Var, m: usize) -> Result<Var> {
        if m == 0 {
            return Err(AutodiffError::InvalidShape(vec![0]));
        }
        let t = self.value(a);
        let data = t
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, m))
            .collect();
        let mut shape = t.shape().to_vec();
        shape.push(m);
        let value = Tensor::new(shape, data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::BroadcastLast { a, m }, rg))
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
