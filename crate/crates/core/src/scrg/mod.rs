//! Sequence correction and re-generation.
//!
//! A student-generated response is scored token by token against the
//! teacher (KL of the student distribution from the teacher's, both
//! conditioned on the student prefix). Among positions where the teacher
//! would have chosen a different token, the one with the largest divergence
//! is replaced by the teacher's token and the student continues from there.

mod policy;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use policy::{
    update_schedule, BatchStats, GenerationPolicy, PolicyKind, ReplayBuffer, Sampler, SamplerConfig,
};

use crate::data::{derive_seed, seeded_rng, Example};
use crate::divergences::forward_kl;
use crate::error::{Error, Result};
use crate::lm::{generate_batch, pick_token, DecodeMode, GenRequest, NextTokenModel};
use crate::prob::ProbVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Student,
    TeacherCorrected,
    Dataset,
    /// Generated by the teacher (sequence-level KD).
    Teacher,
}

/// A response used as distillation input, with per-token origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSample {
    /// Id of the corpus example whose prompt was used.
    pub id: u64,
    pub prompt: Vec<usize>,
    pub tokens: Vec<usize>,
    pub provenance: Vec<Provenance>,
    pub corrected_position: Option<usize>,
    pub per_token_kld: Option<Vec<f64>>,
}

impl GeneratedSample {
    pub fn new(id: u64, prompt: Vec<usize>, tokens: Vec<usize>, tag: Provenance) -> Self {
        let provenance = vec![tag; tokens.len()];
        Self {
            id,
            prompt,
            tokens,
            provenance,
            corrected_position: None,
            per_token_kld: None,
        }
    }

    /// The reference response followed by `eos`.
    pub fn from_example(ex: &Example, eos: usize) -> Self {
        Self::new(ex.id, ex.prompt.clone(), ex.target(eos), Provenance::Dataset)
    }

    pub fn is_corrected(&self) -> bool {
        self.corrected_position.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.provenance.len() != self.tokens.len() {
            return Err(Error::LengthMismatch {
                what: "provenance tags",
                left: self.provenance.len(),
                right: self.tokens.len(),
            });
        }
        let corrected: Vec<usize> = (0..self.tokens.len())
            .filter(|&i| self.provenance[i] == Provenance::TeacherCorrected)
            .collect();
        let consistent = match self.corrected_position {
            None => corrected.is_empty(),
            Some(j) => corrected == [j],
        };
        if !consistent {
            return Err(Error::Invalid(format!(
                "sample {}: corrected_position {:?} disagrees with tags at {corrected:?}",
                self.id, self.corrected_position
            )));
        }
        if let Some(k) = &self.per_token_kld {
            if k.len() != self.tokens.len() {
                return Err(Error::LengthMismatch {
                    what: "per-token KLD",
                    left: k.len(),
                    right: self.tokens.len(),
                });
            }
        }
        Ok(())
    }
}

/// Writes one JSON object per sample.
pub fn write_samples_jsonl(path: &Path, samples: &[GeneratedSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `KL(student_i ‖ teacher_i)` at every position.
pub fn token_kld_profile(student_dists: &[ProbVector], teacher_dists: &[ProbVector]) -> Result<Vec<f64>> {
    if student_dists.len() != teacher_dists.len() {
        return Err(Error::LengthMismatch {
            what: "student/teacher distributions",
            left: student_dists.len(),
            right: teacher_dists.len(),
        });
    }
    student_dists
        .iter()
        .zip(teacher_dists)
        .map(|(s, t)| forward_kl(s, t))
        .collect()
}

/// Position of the largest divergence among positions where the student
/// and teacher tokens differ; ties go to the earliest position.
pub fn detect_error_token(student_tokens: &[usize], teacher_tokens: &[usize], kld: &[f64]) -> Result<Option<usize>> {
    let n = student_tokens.len();
    if teacher_tokens.len() != n || kld.len() != n {
        return Err(Error::LengthMismatch {
            what: "detection inputs",
            left: n,
            right: if teacher_tokens.len() != n { teacher_tokens.len() } else { kld.len() },
        });
    }
    let mut best: Option<usize> = None;
    for i in 0..n {
        if student_tokens[i] != teacher_tokens[i] && best.is_none_or(|b| kld[i] > kld[b]) {
            best = Some(i);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionConfig {
    /// How the teacher's token is chosen at each position.
    pub teacher_mode: DecodeMode,
    /// Decoding of the re-generated suffix.
    pub student_mode: DecodeMode,
    /// Response length limit for the re-generated sample.
    pub max_len: usize,
    pub stop: usize,
    /// Attach the divergence profile of the final sequence.
    pub record_profile: bool,
}

/// Teacher tokens at every position of the student's response, picked from
/// the teacher distributions conditioned on the student prefix.
fn teacher_tokens(dists: &[ProbVector], mode: DecodeMode, seed: u64) -> Result<Vec<usize>> {
    dists
        .iter()
        .enumerate()
        .map(|(i, d)| pick_token(d, mode, &mut seeded_rng(derive_seed(seed, &[1, i as u64]))))
        .collect()
}

/// Corrects and re-generates every sample in one batched pass per model.
/// `seeds[i]` drives all randomness for `samples[i]`. Samples without a
/// mismatch are returned unchanged.
pub fn correct_batch<S, T>(
    student: &S,
    teacher: &T,
    samples: &[GeneratedSample],
    seeds: &[u64],
    cfg: &CorrectionConfig,
) -> Result<Vec<GeneratedSample>>
where
    S: NextTokenModel + ?Sized,
    T: NextTokenModel + ?Sized,
{
    if samples.len() != seeds.len() {
        return Err(Error::LengthMismatch {
            what: "samples/seeds",
            left: samples.len(),
            right: seeds.len(),
        });
    }
    for s in samples {
        s.validate()?;
        if s.prompt.is_empty() {
            return Err(Error::Invalid(format!("sample {} has an empty prompt", s.id)));
        }
    }
    let pairs: Vec<(&[usize], &[usize])> = samples
        .iter()
        .map(|s| (s.prompt.as_slice(), s.tokens.as_slice()))
        .collect();
    let sd = student.response_dists(&pairs)?;
    let td = teacher.response_dists(&pairs)?;

    let mut out: Vec<GeneratedSample> = samples.to_vec();
    let mut regen = Vec::new();
    let mut regen_idx = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let profile = token_kld_profile(&sd[i], &td[i])?;
        let t_tokens = teacher_tokens(&td[i], cfg.teacher_mode, seeds[i])?;
        let Some(j) = detect_error_token(&s.tokens, &t_tokens, &profile)? else {
            continue;
        };
        let mut tokens = s.tokens[..j].to_vec();
        tokens.push(t_tokens[j]);
        let o = &mut out[i];
        o.provenance = s.provenance[..j].to_vec();
        o.provenance.push(Provenance::TeacherCorrected);
        o.corrected_position = Some(j);
        o.per_token_kld = None;
        if t_tokens[j] != cfg.stop {
            regen.push(GenRequest {
                prompt: s.prompt.clone(),
                response_prefix: tokens.clone(),
                max_len: cfg.max_len,
                seed: derive_seed(seeds[i], &[2]),
            });
            regen_idx.push(i);
        }
        o.tokens = tokens;
    }
    let continued = generate_batch(student, &regen, cfg.student_mode, cfg.stop)?;
    for (i, resp) in regen_idx.into_iter().zip(continued) {
        let o = &mut out[i];
        let added = resp.len() - o.tokens.len();
        o.provenance.extend(std::iter::repeat_n(Provenance::Student, added));
        o.tokens = resp;
    }

    if cfg.record_profile {
        let pairs: Vec<(&[usize], &[usize])> = out
            .iter()
            .map(|s| (s.prompt.as_slice(), s.tokens.as_slice()))
            .collect();
        let sd = student.response_dists(&pairs)?;
        let td = teacher.response_dists(&pairs)?;
        for (i, o) in out.iter_mut().enumerate() {
            if o.is_corrected() {
                o.per_token_kld = Some(token_kld_profile(&sd[i], &td[i])?);
            }
        }
    }
    Ok(out)
}

/// Single-sample form of [`correct_batch`].
pub fn correct_and_regenerate<S, T>(
    student: &S,
    teacher: &T,
    sample: &GeneratedSample,
    seed: u64,
    cfg: &CorrectionConfig,
) -> Result<GeneratedSample>
where
    S: NextTokenModel + ?Sized,
    T: NextTokenModel + ?Sized,
{
    Ok(correct_batch(student, teacher, std::slice::from_ref(sample), &[seed], cfg)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detect_examples() {
        let s = [0, 1, 2, 3, 4];
        let t = [0, 1, 9, 3, 9];
        let k = [0.0, 0.0, 0.8, 0.1, 1.2];
        assert_eq!(detect_error_token(&s, &t, &k).unwrap(), Some(4));
        assert_eq!(detect_error_token(&s, &s, &k).unwrap(), None);
        assert_eq!(
            detect_error_token(&[1, 2], &[1, 3], &[5.0, 0.1]).unwrap(),
            Some(1)
        );
        assert!(detect_error_token(&s, &t, &k[..3]).is_err());
    }

    #[test]
    fn ties_pick_first() {
        let k = [0.5, 0.5, 0.5];
        assert_eq!(detect_error_token(&[0, 0, 0], &[1, 1, 1], &k).unwrap(), Some(0));
    }

    #[test]
    fn kld_profile_example() {
        let s = ProbVector::new(vec![0.75, 0.25]).unwrap();
        let t = ProbVector::new(vec![0.5, 0.5]).unwrap();
        let p = token_kld_profile(&[s.clone(), t.clone()], &[t.clone(), t]).unwrap();
        let oracle = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((p[0] - oracle).abs() < 1e-15);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn sample_validation() {
        let mut s = GeneratedSample::new(0, vec![1], vec![2, 3], Provenance::Student);
        assert!(s.validate().is_ok());
        s.corrected_position = Some(1);
        assert!(s.validate().is_err());
        s.provenance[1] = Provenance::TeacherCorrected;
        assert!(s.validate().is_ok());
        s.per_token_kld = Some(vec![0.0]);
        assert!(s.validate().is_err());
    }
}
