mod common;

use common::*;
use mgsr_core::data::Example;
use mgsr_core::lm::{generate, DecodeMode, NextTokenModel, TableLm};
use mgsr_core::scrg::*;
use mgsr_core::ProbVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const M: usize = 4;
const A: usize = 0;
const B: usize = 1;
const X: usize = 2;
const STOP: usize = 3;
const PROMPT: [usize; 1] = [B];

fn greedy_cfg(max_len: usize) -> CorrectionConfig {
    CorrectionConfig {
        teacher_mode: DecodeMode::Greedy,
        student_mode: DecodeMode::Greedy,
        max_len,
        stop: STOP,
        record_profile: false,
    }
}

fn prefixed(resp: &[usize]) -> Vec<usize> {
    let mut p = PROMPT.to_vec();
    p.extend_from_slice(resp);
    p
}

/// Student writes `A B STOP`; the teacher prefers `A X STOP`, disagrees most
/// strongly at position 1 and mildly at position 2.
fn fixture() -> (TableLm, TableLm) {
    let mut s = TableLm::new(M, 8, ProbVector::one_hot(M, STOP)).unwrap();
    s.set_peaked(&prefixed(&[]), A, 0.9).unwrap();
    s.set_peaked(&prefixed(&[A]), B, 0.9).unwrap();
    s.set_peaked(&prefixed(&[A, B]), STOP, 0.9).unwrap();
    s.set_peaked(&prefixed(&[A, X]), STOP, 0.9).unwrap();
    let mut t = TableLm::new(M, 8, ProbVector::one_hot(M, STOP)).unwrap();
    t.set_peaked(&prefixed(&[]), A, 0.9).unwrap();
    t.set_peaked(&prefixed(&[A]), X, 0.9).unwrap();
    t.set_peaked(&prefixed(&[A, B]), B, 0.4).unwrap();
    t.set_peaked(&prefixed(&[A, X]), STOP, 0.9).unwrap();
    (s, t)
}

#[test]
fn worked_fixture_corrects_the_largest_divergence() {
    let (s, t) = fixture();
    let resp = generate(&s, &PROMPT, 6, DecodeMode::Greedy, STOP, 0).unwrap();
    assert_eq!(resp, vec![A, B, STOP]);
    let sample = GeneratedSample::new(0, PROMPT.to_vec(), resp, Provenance::Student);

    let sd = s.response_dists(&[(&PROMPT, &sample.tokens)]).unwrap().remove(0);
    let td = t.response_dists(&[(&PROMPT, &sample.tokens)]).unwrap().remove(0);
    let profile = token_kld_profile(&sd, &td).unwrap();
    assert_eq!(profile[0], 0.0);
    assert!(profile[1] > profile[2] && profile[2] > 0.0);

    let out = correct_and_regenerate(&s, &t, &sample, 11, &greedy_cfg(6)).unwrap();
    assert_eq!(out.corrected_position, Some(1));
    assert_eq!(out.tokens, vec![A, X, STOP]);
    assert_eq!(
        out.provenance,
        vec![Provenance::Student, Provenance::TeacherCorrected, Provenance::Student]
    );
    out.validate().unwrap();
}

#[test]
fn agreement_leaves_sample_unchanged() {
    let (s, _) = fixture();
    let sample = GeneratedSample::new(3, PROMPT.to_vec(), vec![A, B, STOP], Provenance::Student);
    let out = correct_and_regenerate(&s, &s, &sample, 5, &greedy_cfg(6)).unwrap();
    assert_eq!(out, sample);
}

#[test]
fn profile_records_final_sequence() {
    let (s, t) = fixture();
    let sample = GeneratedSample::new(0, PROMPT.to_vec(), vec![A, B, STOP], Provenance::Student);
    let cfg = CorrectionConfig {
        record_profile: true,
        ..greedy_cfg(6)
    };
    let out = correct_and_regenerate(&s, &t, &sample, 1, &cfg).unwrap();
    let profile = out.per_token_kld.as_ref().unwrap();
    assert_eq!(profile.len(), out.tokens.len());
    let sd = s.response_dists(&[(&PROMPT, &out.tokens)]).unwrap().remove(0);
    let td = t.response_dists(&[(&PROMPT, &out.tokens)]).unwrap().remove(0);
    for (i, v) in profile.iter().enumerate() {
        assert!((v - kl_oracle(sd[i].values(), td[i].values())).abs() < 1e-12);
    }
}

fn brute_force_detect(s: &[usize], t: &[usize], k: &[f64]) -> Option<usize> {
    let candidates: Vec<usize> = (0..s.len()).filter(|&i| s[i] != t[i]).collect();
    let top = candidates.iter().map(|&i| k[i]).fold(f64::NEG_INFINITY, f64::max);
    candidates.into_iter().find(|&i| k[i] == top)
}

#[test]
fn detection_matches_brute_force() {
    let mut r = rng(42);
    for _ in 0..1000 {
        let n = r.random_range(1..=6);
        let s: Vec<usize> = (0..n).map(|_| r.random_range(0..M)).collect();
        let t: Vec<usize> = (0..n).map(|_| r.random_range(0..M)).collect();
        // coarse values make ties common
        let k: Vec<f64> = (0..n).map(|_| r.random_range(0..4) as f64 * 0.25).collect();
        assert_eq!(detect_error_token(&s, &t, &k).unwrap(), brute_force_detect(&s, &t, &k));
    }
}

/// A table model with a random distribution after every prefix of the
/// prompt plus up to five response tokens.
fn random_table(r: &mut ChaCha8Rng) -> TableLm {
    let mut lm = TableLm::new(M, 8, ProbVector::uniform(M)).unwrap();
    let mut frontier = vec![PROMPT.to_vec()];
    for _ in 0..6 {
        let mut next = Vec::new();
        for p in frontier {
            lm.set(&p, random_simplex(r, M)).unwrap();
            for tok in 0..M {
                let mut q = p.clone();
                q.push(tok);
                next.push(q);
            }
        }
        frontier = next;
    }
    lm
}

#[test]
fn corrections_preserve_prefix_and_substitute_teacher_token() {
    let mut r = rng(7);
    let mut corrected = 0;
    for case in 0..60u64 {
        let s = random_table(&mut r);
        let t = random_table(&mut r);
        let resp = generate(&s, &PROMPT, 6, DecodeMode::Sample { temperature: 1.0 }, STOP, case).unwrap();
        let sample = GeneratedSample::new(case, PROMPT.to_vec(), resp, Provenance::Student);
        let out = correct_and_regenerate(&s, &t, &sample, case, &greedy_cfg(6)).unwrap();
        out.validate().unwrap();

        let sd = s.response_dists(&[(&PROMPT, &sample.tokens)]).unwrap().remove(0);
        let td = t.response_dists(&[(&PROMPT, &sample.tokens)]).unwrap().remove(0);
        let profile: Vec<f64> = sd.iter().zip(&td).map(|(a, b)| kl_oracle(a.values(), b.values())).collect();
        let teacher_tokens: Vec<usize> = td.iter().map(|d| d.argmax()).collect();
        let expected = brute_force_detect(&sample.tokens, &teacher_tokens, &profile);
        assert_eq!(out.corrected_position, expected);
        match expected {
            None => assert_eq!(out, sample),
            Some(j) => {
                corrected += 1;
                assert_eq!(out.tokens[..j], sample.tokens[..j]);
                assert_eq!(out.tokens[j], teacher_tokens[j]);
                assert!(out.tokens.len() <= 6);
            }
        }
    }
    assert!(corrected > 10, "only {corrected} corrected cases");
}

fn examples() -> Vec<Example> {
    (0..6)
        .map(|i| Example {
            id: i,
            prompt: PROMPT.to_vec(),
            response: vec![A, B],
        })
        .collect()
}

fn sampler(kind: PolicyKind, capacity: usize) -> Sampler {
    Sampler::new(SamplerConfig {
        policy: GenerationPolicy { kind, seed: 99 },
        gen_mode: DecodeMode::Sample { temperature: 1.0 },
        teacher_token_mode: DecodeMode::Greedy,
        max_len: 6,
        eos: STOP,
        buffer_capacity: capacity,
        initial_p_gen: 0.5,
        record_profile: false,
    })
    .unwrap()
}

#[test]
fn mixed_extremes_match_pure_policies() {
    let mut r = rng(3);
    let (s, t) = (random_table(&mut r), random_table(&mut r));
    let ex = examples();
    for step in 0..5 {
        let (fixed, _) = sampler(PolicyKind::FixedDataset, 10).sample_batch(&ex, &s, &t, step).unwrap();
        let (m0, _) = sampler(PolicyKind::Mixed { ratio: 0.0 }, 10).sample_batch(&ex, &s, &t, step).unwrap();
        assert_eq!(fixed, m0);
        let (student, _) = sampler(PolicyKind::Student, 10).sample_batch(&ex, &s, &t, step).unwrap();
        let (m1, _) = sampler(PolicyKind::Mixed { ratio: 1.0 }, 10).sample_batch(&ex, &s, &t, step).unwrap();
        assert_eq!(student, m1);
    }
}

#[test]
fn dataset_samples_end_with_stop() {
    let ex = examples();
    let (s, t) = fixture();
    let (out, stats) = sampler(PolicyKind::FixedDataset, 10).sample_batch(&ex, &s, &t, 0).unwrap();
    assert_eq!(out[0].tokens, vec![A, B, STOP]);
    assert!(out.iter().all(|x| x.provenance.iter().all(|&p| p == Provenance::Dataset)));
    assert_eq!(stats.fresh, 0);
}

#[test]
fn off_policy_buffer_stays_bounded() {
    let mut r = rng(5);
    let (s, t) = (random_table(&mut r), random_table(&mut r));
    let ex = examples();
    let mut sm = sampler(PolicyKind::Scrg { off_policy: true }, 100);
    let mut fallbacks = 0;
    for step in 0..1000 {
        let (_, stats) = sm.sample_batch(&ex[..1], &s, &t, step).unwrap();
        fallbacks += stats.buffer_fallback;
        assert!(sm.buffer().unwrap().len() <= 100);
    }
    assert_eq!(sm.buffer().unwrap().len(), 100);
    assert!(fallbacks <= 1);
}

#[test]
fn sampling_is_reproducible() {
    let mut r = rng(6);
    let (s, t) = (random_table(&mut r), random_table(&mut r));
    let ex = examples();
    for kind in ["student", "teacher", "mixed:0.5", "off", "scrg-on", "scrg-off"] {
        let kind: PolicyKind = kind.parse().unwrap();
        let run = || {
            let mut sm = sampler(kind, 4);
            (0..4).map(|step| sm.sample_batch(&ex, &s, &t, step).unwrap()).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run(), "{kind}");
        assert_eq!(
            serde_json::to_string(&a.iter().map(|x| &x.0).collect::<Vec<_>>()).unwrap(),
            serde_json::to_string(&run().iter().map(|x| &x.0).collect::<Vec<_>>()).unwrap()
        );
    }
}

#[test]
fn scrg_stats_count_corrections() {
    let (s, t) = fixture();
    let ex = examples();
    let mut sm = sampler(PolicyKind::Scrg { off_policy: false }, 10);
    let (out, stats) = sm.sample_batch(&ex, &s, &t, 0).unwrap();
    assert_eq!(stats.corrected, out.iter().filter(|x| x.is_corrected()).count());
    assert!((0.0..=1.0).contains(&stats.corrected_fraction()));
}

#[test]
fn schedule_plateau_rule() {
    let mut b = ReplayBuffer::new(10, 0.5).unwrap();
    assert_eq!(update_schedule(&mut b, &[2.0, 1.5, 1.0]), 0.5);
    b.p_gen = 0.95;
    assert_eq!(update_schedule(&mut b, &[1.0, 1.0]), 1.0);
}

#[test]
fn unknown_policy_names_are_rejected() {
    assert!("mixed:1.5".parse::<PolicyKind>().is_err());
    assert!("greedy".parse::<PolicyKind>().is_err());
}
