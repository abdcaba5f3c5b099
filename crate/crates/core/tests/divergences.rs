mod common;

use common::*;
use mgsr_autodiff::{Graph, Tensor};
use mgsr_core::divergences::*;
use mgsr_core::spans::{Span, SpanKind};
use mgsr_core::ProbVector;
use proptest::prelude::*;
use rand::Rng;

const BASELINES: [Divergence; 7] = [
    Divergence::Fkl,
    Divergence::Rkl,
    Divergence::Skl,
    Divergence::Jsd,
    Divergence::Tvd,
    Divergence::Sfkl,
    Divergence::Srkl,
];

#[test]
fn forward_kl_matches_direct_summation() {
    let p = pv(&[0.75, 0.25]);
    let q = pv(&[0.5, 0.5]);
    let v = forward_kl(&p, &q).unwrap();
    assert!((v - kl_oracle(p.values(), q.values())).abs() < 1e-15);
    assert!((v - 0.1308).abs() < 1e-4);
    let one_hot = pv(&[1.0, 0.0]);
    assert!((forward_kl(&one_hot, &q).unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn every_objective_vanishes_at_equality() {
    let mut r = rng(1);
    for _ in 0..50 {
        let p = random_simplex(&mut r, 7);
        for kind in BASELINES {
            let v = divergence(kind, &p, &p, DivergenceParams::default()).unwrap();
            assert!(v.abs() < 1e-9, "{kind:?} at p = q gave {v}");
        }
    }
}

#[test]
fn baseline_formulas() {
    let mut r = rng(2);
    let params = DivergenceParams::default();
    for _ in 0..100 {
        let p = random_simplex(&mut r, 5);
        let q = random_simplex(&mut r, 5);
        let (pv_, qv) = (p.values(), q.values());
        let f = kl_oracle(pv_, qv);
        let b = kl_oracle(qv, pv_);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12 * (1.0 + b.abs());
        assert!(close(reverse_kl(&p, &q).unwrap(), b));
        assert!(close(symmetric_kl(&p, &q).unwrap(), 0.5 * (f + b)));
        let mix = |w: f64| -> Vec<f64> { pv_.iter().zip(qv).map(|(a, c)| w * a + (1.0 - w) * c).collect() };
        let m = mix(0.5);
        assert!(close(jsd(&p, &q, 0.5).unwrap(), 0.5 * kl_oracle(pv_, &m) + 0.5 * kl_oracle(qv, &m)));
        let tv: f64 = 0.5 * pv_.iter().zip(qv).map(|(a, c)| (a - c).abs()).sum::<f64>();
        assert!(close(tvd(&p, &q).unwrap(), tv));
        assert!(close(skew_forward_kl(&p, &q, params.alpha).unwrap(), kl_oracle(pv_, &mix(params.alpha))));
        let rmix: Vec<f64> = qv.iter().zip(pv_).map(|(c, a)| params.alpha * c + (1.0 - params.alpha) * a).collect();
        assert!(close(skew_reverse_kl(&p, &q, params.alpha).unwrap(), kl_oracle(qv, &rmix)));
    }
}

#[test]
fn jsd_is_symmetric_at_half() {
    let mut r = rng(3);
    for _ in 0..100 {
        let p = random_simplex(&mut r, 6);
        let q = random_simplex(&mut r, 6);
        let a = jsd(&p, &q, 0.5).unwrap();
        let b = jsd(&q, &p, 0.5).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn tvd_of_disjoint_supports_is_one() {
    assert!((tvd(&pv(&[1.0, 0.0]), &pv(&[0.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn parameters_out_of_range_are_rejected() {
    let p = pv(&[0.5, 0.5]);
    assert!(jsd(&p, &p, 0.0).is_err());
    assert!(jsd(&p, &p, 1.0).is_err());
    assert!(skew_forward_kl(&p, &p, 1.5).is_err());
    assert!(skew_reverse_kl(&p, &p, -0.1).is_err());
}

#[test]
fn hard_clip_examples() {
    let t = pv(&[0.5, 0.3, 0.15, 0.05]);
    let sel = dac_clip(&t, QuantilePair::new(0.4, 0.1).unwrap(), ClipMode::Hard);
    assert_eq!(sel.indices, vec![0, 1, 2]);
    let all = dac_clip(&t, QuantilePair::new(1.0, 0.0).unwrap(), ClipMode::Hard);
    assert_eq!(all.indices, vec![0, 1, 2, 3]);
}

#[test]
fn lower_bound_is_clamped_to_upper() {
    let q = QuantilePair::new(0.3, 0.9).unwrap();
    assert_eq!(q.l, 0.3);
    assert!(QuantilePair::new(1.2, 0.0).is_err());
}

#[test]
fn soft_weights_approach_hard_selection() {
    let mut r = rng(4);
    let tau = 1e-4;
    for _ in 0..200 {
        let t = random_simplex(&mut r, 8);
        let u: f64 = r.random_range(0.0..1.0);
        let q = QuantilePair::new(u, r.random_range(0.0..1.0)).unwrap();
        let hard = dac_clip(&t, q, ClipMode::Hard);
        let soft = dac_clip(&t, q, ClipMode::Soft { tau });
        assert_eq!(soft.weights[t.argmax()], 1.0);
        for (k, &v) in t.values().iter().enumerate() {
            if (v - q.l).abs() < 1e-2 || (v - q.u).abs() < 1e-2 {
                continue;
            }
            assert!((soft.weights[k] - hard.weights[k]).abs() < 1e-3);
        }
    }
}

#[test]
fn dac_kl_examples() {
    let t = pv(&[0.5, 0.3, 0.15, 0.05]);
    let s = pv(&[0.4, 0.4, 0.1, 0.1]);
    let keep = [0, 1, 2];
    let oracle = kl_oracle(&renormalized(t.values(), &keep), &renormalized(s.values(), &keep));
    let v = dac_kl_with_quantiles(&t, &s, QuantilePair::new(0.4, 0.1).unwrap(), ClipMode::Hard, DacComponents::default())
        .unwrap();
    assert!((v - oracle).abs() < 1e-12, "{v} vs {oracle}");
    // the renormalized vectors quoted to four places
    let tr = renormalized(t.values(), &keep);
    assert!((tr[0] - 0.5263).abs() < 1e-4 && (tr[2] - 0.1579).abs() < 1e-4);

    let full = dac_kl_with_quantiles(&t, &s, QuantilePair::new(1.0, 0.0).unwrap(), ClipMode::Hard, DacComponents::default())
        .unwrap();
    assert!((full - forward_kl(&t, &s).unwrap()).abs() < 1e-9);
}

#[test]
fn dac_kl_is_zero_when_student_equals_teacher() {
    let mut r = rng(5);
    let net = SubNetwork::new(6, 16, 9).unwrap();
    for _ in 0..20 {
        let t = random_simplex(&mut r, 6);
        let q = QuantilePair::new(r.random_range(0.0..1.0), r.random_range(0.0..1.0)).unwrap();
        for mode in [ClipMode::Hard, ClipMode::Soft { tau: 0.01 }] {
            let v = dac_kl_with_quantiles(&t, &t, q, mode, DacComponents::default()).unwrap();
            assert!(v.abs() < 1e-12);
            assert!(dac_kl_loss(&t, &t, &net, mode).unwrap().abs() < 1e-12);
        }
    }
}

#[test]
fn zeroed_subnet_predicts_one_half() {
    let net = SubNetwork::zeroed(4, 8).unwrap();
    let q = predict_quantiles(&net, &pv(&[0.4, 0.3, 0.2, 0.1]), &ProbVector::uniform(4)).unwrap();
    assert_eq!((q.u, q.l), (0.5, 0.5));
}

#[test]
fn subnet_width_must_match() {
    let net = SubNetwork::new(4, 8, 0).unwrap();
    assert!(predict_quantiles(&net, &ProbVector::uniform(5), &ProbVector::uniform(5)).is_err());
}

#[test]
fn dac_sequence_is_positional_mean() {
    let mut r = rng(6);
    let net = SubNetwork::new(5, 16, 2).unwrap();
    let mode = ClipMode::Soft { tau: 0.01 };
    let ts: Vec<ProbVector> = (0..5).map(|_| random_simplex(&mut r, 5)).collect();
    let ss: Vec<ProbVector> = (0..5).map(|_| random_simplex(&mut r, 5)).collect();
    let single = dac_kl_loss(&ts[0], &ss[0], &net, mode).unwrap();
    assert!((dac_kl_sequence(&ts[..1], &ss[..1], &net, mode).unwrap() - single).abs() < 1e-15);
    let twice = dac_kl_sequence(&[ts[0].clone(), ts[0].clone()], &[ss[0].clone(), ss[0].clone()], &net, mode).unwrap();
    assert!((twice - single).abs() < 1e-15);
    let oracle: f64 = ts.iter().zip(&ss).map(|(t, s)| dac_kl_loss(t, s, &net, mode).unwrap()).sum::<f64>() / 5.0;
    assert!((dac_kl_sequence(&ts, &ss, &net, mode).unwrap() - oracle).abs() < 1e-12);
    assert_eq!(dac_kl_sequence(&[], &[], &net, mode).unwrap(), 0.0);
}

#[test]
fn span_loss_hand_example() {
    let s = [pv(&[0.5, 0.5]), pv(&[0.5, 0.5])];
    let t = [pv(&[1.0, 0.0]), pv(&[1.0, 0.0])];
    let spans = [Span::new(0, 2, SpanKind::Np)];
    let v = span_correlation_loss(&s, &t, &spans).unwrap();
    let oracle = 0.5 * (0.75f64.powi(2) + 0.25f64.powi(2)).sqrt();
    assert!((v - oracle).abs() < 1e-12);
    assert!((v - 0.3953).abs() < 1e-4);
}

#[test]
fn span_loss_degenerate_cases() {
    let mut r = rng(7);
    let s: Vec<ProbVector> = (0..4).map(|_| random_simplex(&mut r, 3)).collect();
    let t: Vec<ProbVector> = (0..4).map(|_| random_simplex(&mut r, 3)).collect();
    let spans = [Span::new(0, 2, SpanKind::Np), Span::new(2, 2, SpanKind::Vp)];
    assert_eq!(span_correlation_loss(&s, &s, &spans).unwrap(), 0.0);
    assert_eq!(span_correlation_loss(&s, &t, &[]).unwrap(), 0.0);
    assert_eq!(span_correlation_loss(&s, &t, &[Span::new(1, 1, SpanKind::Np)]).unwrap(), 0.0);
    assert!(span_correlation_loss(&s, &t, &[Span::new(3, 2, SpanKind::Np)]).is_err());
}

#[test]
fn span_loss_is_symmetric() {
    let mut r = rng(8);
    for _ in 0..100 {
        let s: Vec<ProbVector> = (0..6).map(|_| random_simplex(&mut r, 4)).collect();
        let t: Vec<ProbVector> = (0..6).map(|_| random_simplex(&mut r, 4)).collect();
        let spans = [Span::new(0, 3, SpanKind::Np), Span::new(4, 2, SpanKind::Pp)];
        let a = span_correlation_loss(&s, &t, &spans).unwrap();
        let b = span_correlation_loss(&t, &s, &spans).unwrap();
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn span_weights_follow_span_count_and_length() {
    let spans = [Span::new(0, 3, SpanKind::Np), Span::new(3, 1, SpanKind::Vp)];
    let pairs = SpanPair::for_sequence(&spans, 4, 10, 1.0).unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0], SpanPair { row: 10, weight: 1.0 / 6.0 });
    assert_eq!(pairs[1].row, 11);
}

#[test]
fn sft_examples() {
    let d = [pv(&[0.5, 0.5]), pv(&[0.25, 0.75])];
    let v = sft_loss(&d, &[0, 0]).unwrap();
    assert!((v - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
    assert!((v - 1.0397).abs() < 1e-4);
    assert_eq!(sft_loss(&[pv(&[0.0, 1.0])], &[1]).unwrap(), 0.0);
    assert!(sft_loss(&d, &[0]).is_err());
}

#[test]
fn overall_loss_combines_and_reports_nan() {
    let parts = LossParts { sft: 1.0, dac: 2.0, span: 3.0 };
    assert_eq!(overall_loss(parts, LossWeights::default()).unwrap(), 6.0);
    assert_eq!(overall_loss(parts, LossWeights::new(1.0, 0.0, 0.0).unwrap()).unwrap(), 1.0);
    let bad = LossParts { dac: f64::NAN, ..parts };
    let err = overall_loss(bad, LossWeights::default()).unwrap_err().to_string();
    assert!(err.contains("dac"), "{err}");
    assert!(LossWeights::new(-1.0, 0.0, 0.0).is_err());
}

#[test]
fn graph_rows_agree_with_scalar_divergences() {
    let mut r = rng(9);
    let params = DivergenceParams::default();
    let p: Vec<ProbVector> = (0..4).map(|_| random_simplex(&mut r, 6)).collect();
    let q: Vec<ProbVector> = (0..4).map(|_| random_simplex(&mut r, 6)).collect();
    for kind in BASELINES {
        let mut g = Graph::new();
        let pv_ = g.constant(rows_tensor(&p));
        let qv = g.constant(rows_tensor(&q));
        let rows = divergence_rows(&mut g, kind, pv_, qv, params).unwrap();
        for (i, v) in g.value(rows).data().iter().enumerate() {
            let want = divergence(kind, &p[i], &q[i], params).unwrap();
            assert!((v - want).abs() < 1e-12, "{kind:?}");
        }
    }
}

#[test]
fn gradient_of_sum_is_sum_of_gradients() {
    let mut r = rng(10);
    let t: Vec<ProbVector> = (0..3).map(|_| random_simplex(&mut r, 4)).collect();
    let target = [1usize, 0, 3];
    let x = Tensor::new(vec![3, 4], random_logits(&mut r, 12, 2.0)).unwrap();
    let grad_of = |w: [f64; 3]| -> Vec<f64> {
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let tv = g.constant(rows_tensor(&t));
        let s = g.softmax(xv, 1).unwrap();
        let nll = nll_rows(&mut g, xv, &target).unwrap();
        let sft = g.mean(nll).unwrap();
        let kl = kl_rows(&mut g, tv, s).unwrap();
        let dac = g.mean(kl).unwrap();
        let pairs = SpanPair::for_sequence(&[Span::new(0, 3, SpanKind::Np)], 3, 0, 1.0).unwrap();
        let span = span_loss_graph(&mut g, s, tv, &pairs).unwrap();
        let total = weighted_total(&mut g, [(Some(sft), w[0]), (Some(dac), w[1]), (Some(span), w[2])])
            .unwrap()
            .unwrap();
        g.backward(total).unwrap();
        g.grad(xv).unwrap().data().to_vec()
    };
    let all = grad_of([1.0, 1.0, 1.0]);
    let parts: Vec<Vec<f64>> = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].map(grad_of).to_vec();
    for k in 0..all.len() {
        let sum: f64 = parts.iter().map(|p| p[k]).sum();
        assert!((all[k] - sum).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn divergences_are_non_negative(a in proptest::collection::vec(-4.0f64..4.0, 6), b in proptest::collection::vec(-4.0f64..4.0, 6)) {
        let p = ProbVector::new(softmax(&a)).unwrap();
        let q = ProbVector::new(softmax(&b)).unwrap();
        for kind in BASELINES {
            prop_assert!(divergence(kind, &p, &q, DivergenceParams::default()).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn hard_selection_contains_argmax(a in proptest::collection::vec(-4.0f64..4.0, 6), u in 0.0f64..1.0, l in 0.0f64..1.0) {
        let t = ProbVector::new(softmax(&a)).unwrap();
        let sel = dac_clip(&t, QuantilePair::new(u, l).unwrap(), ClipMode::Hard);
        prop_assert!(sel.indices.contains(&t.argmax()));
    }

    #[test]
    fn predicted_bounds_are_ordered(a in proptest::collection::vec(-4.0f64..4.0, 5), b in proptest::collection::vec(-4.0f64..4.0, 5), seed in 0u64..50) {
        let net = SubNetwork::new(5, 8, seed).unwrap();
        let q = predict_quantiles(&net, &ProbVector::new(softmax(&a)).unwrap(), &ProbVector::new(softmax(&b)).unwrap()).unwrap();
        prop_assert!(0.0 <= q.l && q.l <= q.u && q.u <= 1.0);
    }
}
