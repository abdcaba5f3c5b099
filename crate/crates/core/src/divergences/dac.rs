//! Distribution-adaptive clipped KL: a small MLP predicts probability bounds
//! `(u, l)` from the teacher and student distributions, and the KL is taken
//! only over teacher classes whose probability falls between them (plus the
//! teacher's most likely class).

use std::fmt;
use std::str::FromStr;

use log::warn;
use mgsr_autodiff::{sigmoid, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::kl_rows;
use crate::data::seeded_rng;
use crate::error::{Error, Result};
use crate::params::{normal_tensor, ParamSet};
use crate::prob::{argmax, ProbVector};

/// Added to the clipped mass before renormalizing, so rows whose selection
/// carries no mass produce zeros instead of NaN.
const RENORM_EPS: f64 = 1e-300;

/// Upper and lower probability bounds, `0 ≤ l ≤ u ≤ 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantilePair {
    pub u: f64,
    pub l: f64,
}

impl QuantilePair {
    /// Clamps `l` into `[0, u]`.
    pub fn new(u: f64, l: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::OutOfRange { name: "u", value: u });
        }
        if l.is_nan() {
            return Err(Error::OutOfRange { name: "l", value: l });
        }
        Ok(Self { u, l: l.clamp(0.0, u) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ClipMode {
    /// 0/1 selection; passes no gradient to the bounds.
    Hard,
    /// Sigmoid window of temperature `tau`; differentiable in the bounds.
    Soft { tau: f64 },
}

serde_via_str!(ClipMode);

impl Default for ClipMode {
    fn default() -> Self {
        ClipMode::Soft { tau: 0.01 }
    }
}

impl ClipMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClipMode::Soft { tau } if !(tau > 0.0 && tau.is_finite()) => {
                Err(Error::OutOfRange { name: "tau", value: tau })
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ClipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClipMode::Hard => f.write_str("hard"),
            ClipMode::Soft { tau } => write!(f, "soft:{tau}"),
        }
    }
}

impl FromStr for ClipMode {
    type Err = String;

    /// `hard`, `soft` (τ = 0.01) or `soft:<tau>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hard" => Ok(ClipMode::Hard),
            "soft" => Ok(ClipMode::default()),
            _ => {
                let tau = s
                    .strip_prefix("soft:")
                    .and_then(|t| t.parse::<f64>().ok())
                    .ok_or_else(|| format!("unknown clip mode {s:?}"))?;
                let mode = ClipMode::Soft { tau };
                mode.validate().map_err(|e| e.to_string())?;
                Ok(mode)
            }
        }
    }
}

/// Which parts of the selection are active: the `[l, u]` probability window
/// and the forced inclusion of the teacher's top class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DacComponents {
    pub high_density: bool,
    pub target: bool,
}

serde_via_str!(DacComponents);

impl Default for DacComponents {
    fn default() -> Self {
        Self {
            high_density: true,
            target: true,
        }
    }
}

impl DacComponents {
    pub fn validate(&self) -> Result<()> {
        if self.high_density || self.target {
            Ok(())
        } else {
            Err(Error::Invalid("at least one DAC component must be enabled".into()))
        }
    }
}

impl fmt::Display for DacComponents {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match (self.high_density, self.target) {
            (true, true) => "both",
            (true, false) => "high-density",
            (false, true) => "target",
            (false, false) => "none",
        })
    }
}

impl FromStr for DacComponents {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (high_density, target) = match s {
            "both" => (true, true),
            "high-density" => (true, false),
            "target" => (false, true),
            _ => return Err(format!("unknown DAC components {s:?}")),
        };
        Ok(Self { high_density, target })
    }
}

/// Result of clipping one teacher distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipSelection {
    /// Classes selected by the hard rule at the same bounds.
    pub indices: Vec<usize>,
    /// Per-class weights in `[0, 1]`; 0/1 in hard mode.
    pub weights: Vec<f64>,
    pub mode: ClipMode,
}

/// MLP mapping `concat(teacher, sort_desc(teacher), student)` to `(u, l)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SubNetwork {
    vocab_size: usize,
    hidden: usize,
    params: ParamSet,
}

impl SubNetwork {
    pub const DEFAULT_HIDDEN: usize = 64;
    /// Initial output biases; start with a wide window (u ≈ 0.95, l ≈ 0.05).
    pub const INIT_BIAS: [f64; 2] = [3.0, -3.0];

    pub fn layout(vocab_size: usize, hidden: usize) -> Vec<(String, Vec<usize>)> {
        let h = hidden;
        vec![
            ("subnet.w1".into(), vec![3 * vocab_size, h]),
            ("subnet.b1".into(), vec![h]),
            ("subnet.w2".into(), vec![h, h]),
            ("subnet.b2".into(), vec![h]),
            ("subnet.w3".into(), vec![h, 2]),
            ("subnet.b3".into(), vec![2]),
        ]
    }

    /// Seeded initialization: weights ~ N(0, 1/fan_in), hidden biases zero.
    pub fn new(vocab_size: usize, hidden: usize, seed: u64) -> Result<Self> {
        Self::check_dims(vocab_size, hidden)?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamSet::new();
        for (name, shape) in Self::layout(vocab_size, hidden) {
            let t = if name == "subnet.b3" {
                Tensor::from_slice(&Self::INIT_BIAS)
            } else if shape.len() == 1 {
                Tensor::zeros(&shape)
            } else {
                normal_tensor(&mut rng, &shape, 1.0 / (shape[0] as f64).sqrt())
            };
            params.push(name, t);
        }
        Ok(Self {
            vocab_size,
            hidden,
            params,
        })
    }

    /// All parameters zero, so both outputs are σ(0) = 0.5.
    pub fn zeroed(vocab_size: usize, hidden: usize) -> Result<Self> {
        Self::check_dims(vocab_size, hidden)?;
        let mut params = ParamSet::new();
        for (name, shape) in Self::layout(vocab_size, hidden) {
            params.push(name, Tensor::zeros(&shape));
        }
        Ok(Self {
            vocab_size,
            hidden,
            params,
        })
    }

    pub fn from_params(vocab_size: usize, hidden: usize, params: ParamSet) -> Result<Self> {
        Self::check_dims(vocab_size, hidden)?;
        let layout = Self::layout(vocab_size, hidden);
        let ok = layout.len() == params.len()
            && layout
                .iter()
                .zip(params.iter())
                .all(|((n, s), (pn, t))| n == pn && s.as_slice() == t.shape());
        if !ok {
            return Err(Error::Checkpoint(format!(
                "sub-network parameters do not match vocab {vocab_size}, hidden {hidden}"
            )));
        }
        Ok(Self {
            vocab_size,
            hidden,
            params,
        })
    }

    fn check_dims(vocab_size: usize, hidden: usize) -> Result<()> {
        if vocab_size == 0 || hidden == 0 {
            return Err(Error::Config("sub-network dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.bind(g, trainable)
    }

    /// Bounds `(u, l)`, each `[N]`, for `[N, M]` teacher and student rows.
    /// The sorted teacher copy carries no gradient.
    pub fn quantiles(&self, g: &mut Graph, vars: &[Var], teacher: Var, student: Var) -> Result<(Var, Var)> {
        let m = self.vocab_size;
        for v in [teacher, student] {
            let shape = g.shape(v);
            if shape.len() != 2 || shape[1] != m {
                return Err(Error::LengthMismatch {
                    what: "sub-network input width",
                    left: shape.last().copied().unwrap_or(0),
                    right: m,
                });
            }
        }
        let sorted = g.sort_descending(teacher)?;
        let x = g.concat(&[teacher, sorted, student], 1)?;
        let mut h = x;
        for layer in 0..2 {
            let z = g.matmul(h, vars[2 * layer])?;
            let z = g.add(z, vars[2 * layer + 1])?;
            h = g.tanh(z)?;
        }
        let z = g.matmul(h, vars[4])?;
        let z = g.add(z, vars[5])?;
        let o = g.sigmoid(z)?;
        let u = g.column(o, 0)?;
        let l = g.column(o, 1)?;
        let l = g.minimum(l, u)?;
        Ok((u, l))
    }
}

/// Predicted bounds for a single position.
pub fn predict_quantiles(subnet: &SubNetwork, teacher: &ProbVector, student: &ProbVector) -> Result<QuantilePair> {
    let mut g = Graph::new();
    let vars = subnet.bind(&mut g, false);
    let (t, s) = row_pair(&mut g, teacher, student)?;
    let (u, l) = subnet.quantiles(&mut g, &vars, t, s)?;
    QuantilePair::new(g.value(u).data()[0], g.value(l).data()[0])
}

fn row_pair(g: &mut Graph, teacher: &ProbVector, student: &ProbVector) -> Result<(Var, Var)> {
    if teacher.len() != student.len() {
        return Err(Error::LengthMismatch {
            what: "distribution pair",
            left: teacher.len(),
            right: student.len(),
        });
    }
    let m = teacher.len();
    let t = g.constant(Tensor::new(vec![1, m], teacher.values().to_vec())?);
    let s = g.constant(Tensor::new(vec![1, m], student.values().to_vec())?);
    Ok((t, s))
}

fn hard_weight(v: f64, q: QuantilePair) -> f64 {
    if q.l <= v && v <= q.u {
        1.0
    } else {
        0.0
    }
}

fn soft_weight(v: f64, q: QuantilePair, tau: f64) -> f64 {
    sigmoid((v - q.l) / tau) * sigmoid((q.u - v) / tau)
}

/// Clip selection with both components active.
pub fn dac_clip(teacher: &ProbVector, q: QuantilePair, mode: ClipMode) -> ClipSelection {
    dac_clip_with(teacher, q, mode, DacComponents::default())
}

pub fn dac_clip_with(teacher: &ProbVector, q: QuantilePair, mode: ClipMode, components: DacComponents) -> ClipSelection {
    let top = teacher.argmax();
    let v = teacher.values();
    let window = |k: usize, f: &dyn Fn(f64) -> f64| {
        if components.target && k == top {
            1.0
        } else if components.high_density {
            f(v[k])
        } else {
            0.0
        }
    };
    let hard: Vec<f64> = (0..v.len()).map(|k| window(k, &|x| hard_weight(x, q))).collect();
    let indices = (0..v.len()).filter(|&k| hard[k] > 0.0).collect();
    let weights = match mode {
        ClipMode::Hard => hard,
        ClipMode::Soft { tau } => (0..v.len())
            .map(|k| window(k, &|x| soft_weight(x, q, tau)))
            .collect(),
    };
    ClipSelection { indices, weights, mode }
}

/// Row-wise clipped KL between `[N, M]` teacher and student tensors.
///
/// `bounds` holds `[N]` vars `(u, l)` and is required when the high-density
/// window is enabled. Both clipped vectors are renormalized before the KL.
pub fn clipped_kl_rows(
    g: &mut Graph,
    teacher: Var,
    student: Var,
    bounds: Option<(Var, Var)>,
    mode: ClipMode,
    components: DacComponents,
) -> Result<Var> {
    mode.validate()?;
    components.validate()?;
    let shape = g.shape(teacher).to_vec();
    if shape.len() != 2 || g.shape(student) != shape.as_slice() {
        return Err(Error::Invalid(format!(
            "clipped KL expects matching [N, M] inputs, got {shape:?} and {:?}",
            g.shape(student)
        )));
    }
    let (n, m) = (shape[0], shape[1]);
    let tops: Vec<usize> = g.value(teacher).data().chunks(m).map(argmax).collect();
    let mut onehot = Tensor::zeros(&[n, m]);
    for (r, &k) in tops.iter().enumerate() {
        onehot.data_mut()[r * m + k] = 1.0;
    }

    let weights = if components.high_density {
        let (u, l) = bounds.ok_or_else(|| Error::Invalid("high-density clipping needs bounds".into()))?;
        let w = match mode {
            ClipMode::Hard => {
                let (tv, uv, lv) = (g.value(teacher), g.value(u), g.value(l));
                let mut w = Tensor::zeros(&[n, m]);
                for r in 0..n {
                    let q = QuantilePair {
                        u: uv.data()[r],
                        l: lv.data()[r],
                    };
                    for k in 0..m {
                        w.data_mut()[r * m + k] = hard_weight(tv.data()[r * m + k], q);
                    }
                }
                g.constant(w)
            }
            ClipMode::Soft { tau } => {
                let ub = g.broadcast_last(u, m)?;
                let lb = g.broadcast_last(l, m)?;
                let below = g.sub(teacher, lb)?;
                let below = g.scale(below, 1.0 / tau)?;
                let a = g.sigmoid(below)?;
                let above = g.sub(ub, teacher)?;
                let above = g.scale(above, 1.0 / tau)?;
                let b = g.sigmoid(above)?;
                g.mul(a, b)?
            }
        };
        if components.target {
            let mut rest = Tensor::full(&[n, m], 1.0);
            for (r, o) in rest.data_mut().iter_mut().zip(onehot.data()) {
                *r -= o;
            }
            let rest = g.constant(rest);
            let oh = g.constant(onehot);
            let w = g.mul(w, rest)?;
            g.add(w, oh)?
        } else {
            w
        }
    } else {
        g.constant(onehot)
    };

    let t_star = renormalize(g, teacher, weights, m)?;
    let s_star = renormalize(g, student, weights, m)?;
    let rows = kl_rows(g, t_star, s_star)?;
    // Entries renormalized below the log floor can leave a row a hair under zero.
    let neg = g.neg(rows)?;
    let zero = g.constant(Tensor::zeros(&[n]));
    let neg = g.minimum(neg, zero)?;
    Ok(g.neg(neg)?)
}

fn renormalize(g: &mut Graph, x: Var, w: Var, m: usize) -> Result<Var> {
    let xw = g.mul(x, w)?;
    let total = g.sum(xw, Some(1))?;
    let total = g.add_scalar(total, RENORM_EPS)?;
    let total = g.broadcast_last(total, m)?;
    Ok(g.div(xw, total)?)
}

/// Clipped KL for one position at given bounds.
pub fn dac_kl_with_quantiles(
    teacher: &ProbVector,
    student: &ProbVector,
    q: QuantilePair,
    mode: ClipMode,
    components: DacComponents,
) -> Result<f64> {
    let mut g = Graph::new();
    let (t, s) = row_pair(&mut g, teacher, student)?;
    let u = g.constant(Tensor::from_slice(&[q.u]));
    let l = g.constant(Tensor::from_slice(&[q.l]));
    let rows = clipped_kl_rows(&mut g, t, s, Some((u, l)), mode, components)?;
    Ok(g.value(rows).data()[0])
}

/// Clipped KL for one position with bounds from `subnet`.
pub fn dac_kl_loss(teacher: &ProbVector, student: &ProbVector, subnet: &SubNetwork, mode: ClipMode) -> Result<f64> {
    let rows = dac_rows_values(&[teacher.clone()], &[student.clone()], subnet, mode)?;
    Ok(rows[0])
}

fn dac_rows_values(
    teachers: &[ProbVector],
    students: &[ProbVector],
    subnet: &SubNetwork,
    mode: ClipMode,
) -> Result<Vec<f64>> {
    let m = subnet.vocab_size();
    let flat = |d: &[ProbVector]| -> Result<Tensor> {
        let mut data = Vec::with_capacity(d.len() * m);
        for p in d {
            if p.len() != m {
                return Err(Error::LengthMismatch {
                    what: "sub-network input width",
                    left: p.len(),
                    right: m,
                });
            }
            data.extend_from_slice(p.values());
        }
        Ok(Tensor::new(vec![d.len(), m], data)?)
    };
    let mut g = Graph::new();
    let vars = subnet.bind(&mut g, false);
    let t = g.constant(flat(teachers)?);
    let s = g.constant(flat(students)?);
    let bounds = subnet.quantiles(&mut g, &vars, t, s)?;
    let rows = clipped_kl_rows(&mut g, t, s, Some(bounds), mode, DacComponents::default())?;
    Ok(g.value(rows).data().to_vec())
}

/// Mean clipped KL over a generated sequence; an empty sequence scores 0.
pub fn dac_kl_sequence(
    teacher_dists: &[ProbVector],
    student_dists: &[ProbVector],
    subnet: &SubNetwork,
    mode: ClipMode,
) -> Result<f64> {
    if teacher_dists.len() != student_dists.len() {
        return Err(Error::LengthMismatch {
            what: "teacher/student sequence",
            left: teacher_dists.len(),
            right: student_dists.len(),
        });
    }
    if teacher_dists.is_empty() {
        warn!("clipped KL over an empty sequence; returning 0");
        return Ok(0.0);
    }
    let rows = dac_rows_values(teacher_dists, student_dists, subnet, mode)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}
