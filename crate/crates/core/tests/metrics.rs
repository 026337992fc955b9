mod common;

use bertdesk::metrics::{
    auroc, confidence_interval, entity_f1, extract_spans, multilabel_f1, pearson, spearman, strip_bio, token_f1,
    F1Score, TagSequencePair,
};
use proptest::prelude::*;

fn score_case(case: &common::GoldenCase) -> F1Score {
    let pairs = || -> Vec<TagSequencePair> {
        case.gold.iter().zip(&case.pred).map(|(g, p)| TagSequencePair::new(g, p)).collect()
    };
    match case.kind.as_str() {
        "entity" => entity_f1(&pairs()).unwrap(),
        "token" => token_f1(&pairs()).unwrap(),
        "multilabel" => multilabel_f1(&common::label_sets(&case.pred), &common::label_sets(&case.gold)).unwrap(),
        other => panic!("unknown kind {other}"),
    }
}

#[test]
fn golden_counts() {
    let cases = common::golden_cases();
    assert_eq!(cases.len(), 20);
    for case in &cases {
        let s = score_case(case);
        assert_eq!((s.tp, s.fp, s.fn_), case.counts, "line {}", case.line);
        let (tp, fp, fn_) = case.counts;
        if tp + fp + fn_ == 0 {
            assert!(s.zero_support && s.f1 == 1.0);
        } else {
            let f1 = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
            assert!((s.f1 - f1).abs() < 1e-15, "line {}", case.line);
        }
    }
}

fn direct_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn distinct(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    proptest::sample::subsequence((0..200).collect::<Vec<i32>>(), len)
        .prop_shuffle()
        .prop_map(|v| v.into_iter().map(|i| i as f64 / 8.0).collect())
}

fn tag() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("O".to_string()),
        "[BI]-(PER|LOC|ORG)".prop_map(|s| s),
    ]
}

fn tag_pair() -> impl Strategy<Value = TagSequencePair> {
    (0usize..12).prop_flat_map(|n| {
        (proptest::collection::vec(tag(), n), proptest::collection::vec(tag(), n))
            .prop_map(|(g, p)| TagSequencePair { gold: g, pred: p })
    })
}

/// Label per word from the extracted spans.
fn project(tags: &[String]) -> Vec<String> {
    let mut out = vec!["O".to_string(); tags.len()];
    for s in extract_spans(tags).unwrap() {
        for slot in &mut out[s.start..=s.end] {
            *slot = s.label.clone();
        }
    }
    out
}

proptest! {
    #[test]
    fn auroc_matches_pairwise(
        cases in proptest::collection::vec((0u8..5, any::<bool>()), 2..=12),
    ) {
        let scores: Vec<f64> = cases.iter().map(|c| c.0 as f64 / 4.0).collect();
        let labels: Vec<bool> = cases.iter().map(|c| c.1).collect();
        prop_assume!(labels.contains(&true) && labels.contains(&false));
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), common::pairwise_auroc(&scores, &labels));
    }

    #[test]
    fn f1_symmetric_under_swap(pairs in proptest::collection::vec(tag_pair(), 1..5)) {
        let swapped: Vec<TagSequencePair> = pairs
            .iter()
            .map(|p| TagSequencePair { gold: p.pred.clone(), pred: p.gold.clone() })
            .collect();
        for f in [entity_f1, token_f1] {
            let a = f(&pairs).unwrap();
            let b = f(&swapped).unwrap();
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert_eq!(a.f1, b.f1);
            prop_assert!((0.0..=1.0).contains(&a.f1));
        }
    }

    #[test]
    fn projection_commutes_with_concatenation(
        a in proptest::collection::vec(tag(), 0..10),
        b in proptest::collection::vec(tag(), 0..10),
    ) {
        let joined: Vec<String> = a.iter().chain(&b).cloned().collect();
        let mut parts = strip_bio(&project(&a));
        parts.extend(strip_bio(&project(&b)));
        prop_assert_eq!(strip_bio(&project(&joined)), parts.clone());
        prop_assert_eq!(strip_bio(&joined), parts);
    }

    #[test]
    fn pearson_affine_invariant(
        xy in proptest::collection::vec((-100i32..100, -100i32..100), 3..20),
        scale in 0.01f64..100.0,
        shift in -1e3f64..1e3,
    ) {
        let x: Vec<f64> = xy.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1 as f64).collect();
        let Ok(r) = pearson(&x, &y) else { return Ok(()); };
        let t: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
        prop_assert!((pearson(&t, &y).unwrap() - r).abs() < 1e-12);
        prop_assert!((direct_pearson(&x, &y) - r).abs() < 1e-10);
    }

    #[test]
    fn spearman_monotone_invariant(
        xy in proptest::collection::vec((-50i32..50, -50i32..50), 3..20),
    ) {
        let x: Vec<f64> = xy.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = xy.iter().map(|p| p.1 as f64).collect();
        let Ok(rho) = spearman(&x, &y) else { return Ok(()); };
        let cube: Vec<f64> = x.iter().map(|v| v * v * v + v).collect();
        let exp: Vec<f64> = y.iter().map(|v| (v / 10.0).exp()).collect();
        prop_assert_eq!(spearman(&cube, &exp).unwrap(), rho);
    }

    #[test]
    fn spearman_matches_rank_formula(x in distinct(3..20), y in distinct(3..20)) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter().map(|a| 1.0 + v.iter().filter(|b| *b < a).count() as f64).collect()
        };
        let d2: f64 = rank(x).iter().zip(rank(y)).map(|(a, b)| (a - b).powi(2)).sum();
        let nf = n as f64;
        let want = 1.0 - 6.0 * d2 / (nf * (nf * nf - 1.0));
        prop_assert!((spearman(x, y).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn interval_closed_form(values in proptest::collection::vec(-10.0f64..10.0, 2..30)) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let s = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt();
        let r = confidence_interval("m", &values).unwrap();
        prop_assert!((r.value - mean).abs() < 1e-12);
        prop_assert!((r.half_width.unwrap() - 1.96 * s / n.sqrt()).abs() < 1e-12);
        prop_assert_eq!(r.runs, values.len());
    }
}
