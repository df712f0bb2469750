mod oracle;

use osteo_core::eval::{classification_report, confusion_matrix, metrics, ConfusionMatrix};
use osteo_core::Rng;

fn random_matrix(rng: &mut Rng, c: usize) -> ConfusionMatrix {
    let mut counts = vec![vec![0u64; c]; c];
    for row in counts.iter_mut() {
        for v in row.iter_mut() {
            // Plenty of zeros so empty rows and columns occur.
            *v = if rng.bernoulli(0.4) { 0 } else { rng.below(50) as u64 };
        }
    }
    if counts.iter().flatten().all(|&v| v == 0) {
        counts[0][0] = 1;
    }
    ConfusionMatrix {
        counts,
        class_names: (0..c).map(|i| format!("c{i}")).collect(),
    }
}

#[test]
fn metrics_match_exact_rationals() {
    let mut rng = Rng::new(77);
    let mut saw_degenerate = false;
    for _ in 0..20 {
        let c = 2 + rng.below(3);
        let cm = random_matrix(&mut rng, c);
        let got = metrics(&cm).unwrap();
        let want = oracle::exact_metrics(&cm.counts);
        for (g, w) in got.classes.iter().zip(&want.per_class) {
            assert!((g.precision - w[0].to_f64()).abs() <= 1e-12);
            assert!((g.recall - w[1].to_f64()).abs() <= 1e-12);
            assert!((g.f1 - w[2].to_f64()).abs() <= 1e-12);
            saw_degenerate |= g.degenerate;
        }
        assert!((got.avg_precision - want.macro_avg[0].to_f64()).abs() <= 1e-12);
        assert!((got.avg_recall - want.macro_avg[1].to_f64()).abs() <= 1e-12);
        assert!((got.avg_f1 - want.macro_avg[2].to_f64()).abs() <= 1e-12);
        assert!((got.accuracy - want.accuracy.to_f64()).abs() <= 1e-12);
    }
    // A forced zero-denominator case.
    let cm = ConfusionMatrix {
        counts: vec![vec![5, 0, 0], vec![2, 0, 0], vec![0, 0, 3]],
        class_names: vec!["a".into(), "b".into(), "c".into()],
    };
    let m = metrics(&cm).unwrap();
    assert_eq!((m.classes[1].precision, m.classes[1].recall, m.classes[1].f1), (0.0, 0.0, 0.0));
    assert!(m.classes[1].degenerate);
    assert!(saw_degenerate || m.classes[1].degenerate);
}

#[test]
fn counting_loop_oracle_and_invariances() {
    let mut rng = Rng::new(5);
    let c = 3;
    let labels: Vec<usize> = (0..50).map(|_| rng.below(c)).collect();
    let preds: Vec<usize> = (0..50).map(|_| rng.below(c)).collect();
    let cm = confusion_matrix(&preds, &labels, &["a", "b", "c"]).unwrap();
    for t in 0..c {
        for p in 0..c {
            let n = labels.iter().zip(&preds).filter(|(&l, &q)| l == t && q == p).count() as u64;
            assert_eq!(cm.counts[t][p], n);
        }
    }
    assert_eq!(cm.total(), 50);

    // Shuffling the pairs changes nothing.
    let mut pairs: Vec<(usize, usize)> = preds.iter().copied().zip(labels.iter().copied()).collect();
    rng.shuffle(&mut pairs);
    let (p2, l2): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    assert_eq!(metrics(&confusion_matrix(&p2, &l2, &["a", "b", "c"]).unwrap()).unwrap(), metrics(&cm).unwrap());

    // Relabeling permutes per-class rows and keeps the summaries.
    let perm = [2, 0, 1];
    let pp: Vec<usize> = preds.iter().map(|&v| perm[v]).collect();
    let pl: Vec<usize> = labels.iter().map(|&v| perm[v]).collect();
    let a = metrics(&cm).unwrap();
    let b = metrics(&confusion_matrix(&pp, &pl, &["a", "b", "c"]).unwrap()).unwrap();
    for k in 0..c {
        assert_eq!(a.classes[k].f1, b.classes[perm[k]].f1);
    }
    assert!((a.avg_f1 - b.avg_f1).abs() < 1e-15);
    assert_eq!(a.accuracy, b.accuracy);
}

#[test]
fn binary_accuracy_is_tp_plus_tn_over_total() {
    let cm = ConfusionMatrix {
        counts: vec![vec![40, 3], vec![7, 50]],
        class_names: vec!["Normal".into(), "Osteoporosis".into()],
    };
    let m = metrics(&cm).unwrap();
    let (tp, tn, fp, fn_) = (cm.true_positives(1), cm.true_negatives(1), cm.false_positives(1), cm.false_negatives(1));
    assert_eq!((tp, tn, fp, fn_), (50, 40, 3, 7));
    assert_eq!(m.accuracy, (tp + tn) as f64 / (tp + tn + fp + fn_) as f64);
}

#[test]
fn report_layouts() {
    let binary = ConfusionMatrix {
        counts: vec![vec![9, 1], vec![1, 9]],
        class_names: vec!["Normal".into(), "Osteoporosis".into()],
    };
    let text = classification_report(&metrics(&binary).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].contains("Precision") && lines[0].contains("Recall") && lines[0].contains("F1-score"));
    assert!(lines[1].starts_with("Normal") && lines[1].contains("90.00"));
    assert!(lines[3].starts_with("macro avg"));
    assert!(lines[4].starts_with("Accuracy") && lines[4].ends_with("90.00"));
    assert!(lines[..4].iter().all(|l| l.len() == lines[0].len()));

    let multi = ConfusionMatrix {
        counts: vec![vec![30, 1, 0], vec![2, 27, 1], vec![0, 0, 29]],
        class_names: vec!["Normal".into(), "Osteopenia".into(), "Osteoporosis".into()],
    };
    let text = classification_report(&metrics(&multi).unwrap());
    assert_eq!(text.lines().count(), 6);
    assert!(text.contains("Osteopenia"));
}
