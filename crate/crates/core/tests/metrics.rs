use clickbait_core::metrics::{compute_metrics, MetricsReport};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Counts each confusion cell with its own pass over the data.
fn brute_force(preds: &[f64], labels: &[u8], threshold: f64) -> [usize; 4] {
    let count = |want_pos: bool, want_label: u8| {
        preds
            .iter()
            .zip(labels)
            .filter(|&(&p, &y)| (p >= threshold) == want_pos && y == want_label)
            .count()
    };
    [
        count(true, 1),
        count(true, 0),
        count(false, 0),
        count(false, 1),
    ]
}

fn cells(m: &MetricsReport) -> [usize; 4] {
    [m.tp, m.fp, m.tn, m.fn_]
}

#[test]
fn matches_brute_force_counter() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let preds: Vec<f64> = (0..1000).map(|_| rng.r#gen::<f64>()).collect();
    let labels: Vec<u8> = (0..1000).map(|_| rng.gen_range(0..=1)).collect();
    let m = compute_metrics(&preds, &labels, 0.5).unwrap();
    let [tp, fp, tn, fn_] = brute_force(&preds, &labels, 0.5);
    assert_eq!(cells(&m), [tp, fp, tn, fn_]);
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    assert!((m.precision - precision).abs() < 1e-15);
    assert!((m.recall - recall).abs() < 1e-15);
    assert!((m.f1 - 2.0 * precision * recall / (precision + recall)).abs() < 1e-15);
    assert!((m.accuracy - (tp + tn) as f64 / 1000.0).abs() < 1e-15);
    let mse: f64 = preds
        .iter()
        .zip(&labels)
        .map(|(p, &y)| (p - f64::from(y)).powi(2))
        .sum::<f64>()
        / 1000.0;
    assert!((m.mse - mse).abs() < 1e-12);
}

#[test]
fn threshold_is_inclusive() {
    let m = compute_metrics(&[0.5, 0.4999999], &[1, 1], 0.5).unwrap();
    assert_eq!((m.tp, m.fn_), (1, 1));
}

#[test]
fn zero_denominators_report_zero() {
    let m = compute_metrics(&[0.1, 0.2], &[0, 0], 0.5).unwrap();
    assert_eq!(
        (m.precision, m.recall, m.f1, m.accuracy),
        (0.0, 0.0, 0.0, 1.0)
    );
}

#[test]
fn rejects_bad_input() {
    assert!(compute_metrics(&[], &[], 0.5).is_err());
    assert!(compute_metrics(&[0.1], &[0, 1], 0.5).is_err());
    assert!(compute_metrics(&[0.1], &[2], 0.5).is_err());
}

#[test]
fn monotone_rescaling_keeps_decisions_but_moves_mse() {
    let preds = [0.9, 0.55, 0.51, 0.49, 0.3, 0.05, 0.7, 0.2];
    let labels = [1, 0, 1, 1, 0, 0, 1, 0];
    // squash each side towards the threshold, preserving which side it is on
    let squashed: Vec<f64> = preds.iter().map(|&p| 0.5 + (p - 0.5) * 0.1).collect();
    let a = compute_metrics(&preds, &labels, 0.5).unwrap();
    let b = compute_metrics(&squashed, &labels, 0.5).unwrap();
    assert_eq!(cells(&a), cells(&b));
    assert_eq!((a.f1, a.accuracy), (b.f1, b.accuracy));
    assert_ne!(a.mse, b.mse);
}

#[test]
fn text_and_json_agree_to_six_decimals() {
    let m = compute_metrics(&[0.9, 0.8, 0.7, 0.2, 0.1, 0.6], &[1, 0, 1, 1, 0, 0], 0.5).unwrap();
    let json = m.to_json();
    let text = m.to_text();
    for line in text.lines() {
        let mut parts = line.split_whitespace();
        let (name, value) = (parts.next().unwrap(), parts.next().unwrap());
        let from_json = match name {
            "tp" | "fp" | "tn" | "fn" => json["counts"][name].as_f64().unwrap(),
            _ => json[name].as_f64().unwrap(),
        };
        let expected = match name {
            "tp" | "fp" | "tn" | "fn" => format!("{from_json}"),
            _ => format!("{from_json:.6}"),
        };
        assert_eq!(value, expected, "{name}");
    }
}

proptest! {
    #[test]
    fn permutation_invariant(
        pairs in prop::collection::vec((0.0f64..=1.0, 0u8..=1), 1..200),
        seed in any::<u64>(),
    ) {
        let (preds, labels): (Vec<f64>, Vec<u8>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (sp, sl): (Vec<f64>, Vec<u8>) = shuffled.into_iter().unzip();
        let a = compute_metrics(&preds, &labels, 0.5).unwrap();
        let b = compute_metrics(&sp, &sl, 0.5).unwrap();
        prop_assert_eq!(cells(&a), cells(&b));
        prop_assert_eq!((a.precision, a.recall, a.f1, a.accuracy), (b.precision, b.recall, b.f1, b.accuracy));
        prop_assert!((a.mse - b.mse).abs() < 1e-12);
    }

    #[test]
    fn report_invariants(pairs in prop::collection::vec((0.0f64..=1.0, 0u8..=1), 1..200), t in 0.01f64..0.99) {
        let (preds, labels): (Vec<f64>, Vec<u8>) = pairs.into_iter().unzip();
        let m = compute_metrics(&preds, &labels, t).unwrap();
        prop_assert_eq!(m.total(), preds.len());
        prop_assert_eq!(cells(&m), brute_force(&preds, &labels, t));
        for v in [m.precision, m.recall, m.f1, m.accuracy] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.mse >= 0.0);
        if m.precision + m.recall > 0.0 {
            let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((m.f1 - f1).abs() < 1e-15);
        }
    }
}
