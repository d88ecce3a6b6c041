use umsnet::evaluation::{accuracy, macro_f1, macro_f1_over, ConfusionMatrix};
use umsnet::numerics::RngState;

/// Per-class F1 from counts gathered by scanning every (prediction, label) pair.
fn oracle_f1(pred: &[usize], labels: &[usize], classes: usize) -> Vec<f64> {
    (0..classes)
        .map(|c| {
            let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
            for (&p, &y) in pred.iter().zip(labels) {
                match (p == c, y == c) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fneg += 1,
                    _ => {}
                }
            }
            if tp == 0 {
                0.0
            } else {
                (2 * tp) as f64 / (2 * tp + fp + fneg) as f64
            }
        })
        .collect()
}

#[test]
fn metrics_match_a_brute_force_oracle() {
    let mut rng = RngState::new(42);
    for _ in 0..1000 {
        let classes = 2 + rng.next_u64() as usize % 9;
        let n = 1 + rng.next_u64() as usize % 200;
        let labels: Vec<usize> = (0..n).map(|_| rng.next_u64() as usize % classes).collect();
        let pred: Vec<usize> = (0..n).map(|_| rng.next_u64() as usize % classes).collect();
        let hits = pred.iter().zip(&labels).filter(|(p, y)| p == y).count();
        assert_eq!(accuracy(&pred, &labels).unwrap(), hits as f64 / n as f64);
        let per_class = oracle_f1(&pred, &labels, classes);
        let mean = per_class.iter().sum::<f64>() / classes as f64;
        let (macro_, got) = macro_f1(&pred, &labels, classes).unwrap();
        assert_eq!(got, per_class);
        assert_eq!(macro_, mean);
        let cm = ConfusionMatrix::from_predictions(&pred, &labels, classes).unwrap();
        assert_eq!(cm.accuracy(), cm.trace() as f64 / n as f64);
        assert!(got.iter().all(|f| (0.0..=1.0).contains(f)));
    }
}

#[test]
fn two_of_three_example() {
    let (m, _) = macro_f1_over(&[1, 2, 2], &[1, 1, 2], &[1, 2]).unwrap();
    assert_eq!(m, 2.0 / 3.0);
}

#[test]
fn macro_f1_is_invariant_under_joint_relabelling() {
    let mut rng = RngState::new(7);
    for _ in 0..100 {
        let classes = 2 + rng.next_u64() as usize % 6;
        let labels: Vec<usize> = (0..60).map(|_| rng.next_u64() as usize % classes).collect();
        let pred: Vec<usize> = (0..60).map(|_| rng.next_u64() as usize % classes).collect();
        let mut perm: Vec<usize> = (0..classes).collect();
        rng.shuffle(&mut perm);
        let pl: Vec<usize> = labels.iter().map(|&y| perm[y]).collect();
        let pp: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
        let (a, _) = macro_f1(&pred, &labels, classes).unwrap();
        let (b, _) = macro_f1(&pp, &pl, classes).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn uniform_guessing_scores_one_over_c() {
    const N: usize = 10_000;
    let mut rng = RngState::new(3);
    for classes in [2usize, 5, 10] {
        let labels: Vec<usize> = (0..N).map(|i| i % classes).collect();
        let pred: Vec<usize> = (0..N).map(|_| rng.next_u64() as usize % classes).collect();
        let p = 1.0 / classes as f64;
        let bound = 3.0 * (p * (1.0 - p) / N as f64).sqrt();
        assert!((accuracy(&pred, &labels).unwrap() - p).abs() <= bound);
    }
}

#[test]
fn never_predicted_class_scores_zero() {
    let (m, per) = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
    assert_eq!(per[1], 0.0);
    assert_eq!(m, (2.0 * 2.0 / 6.0) / 2.0);
}

#[test]
fn mismatched_lengths_are_rejected() {
    assert!(accuracy(&[0, 1], &[0]).is_err());
    assert!(macro_f1(&[], &[], 2).is_err());
    assert!(macro_f1(&[3], &[0], 2).is_err());
}
