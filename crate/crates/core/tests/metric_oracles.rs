use foodsec_core::metrics::{pr_curve, roc_auc, roc_curve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<u8>) {
    // a coarse grid on half the instances so tied scores show up
    let coarse = rng.random_bool(0.5);
    loop {
        let s: Vec<f64> = (0..n)
            .map(|_| {
                let v: f64 = rng.random();
                if coarse {
                    (v * 12.0).floor() / 12.0
                } else {
                    v
                }
            })
            .collect();
        let y: Vec<u8> = s.iter().map(|&v| rng.random_bool(0.2 + 0.6 * v) as u8).collect();
        if y.contains(&0) && y.contains(&1) {
            return (s, y);
        }
    }
}

fn pairwise_auc(s: &[f64], y: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for i in 0..s.len() {
        for j in 0..s.len() {
            if y[i] == 1 && y[j] == 0 {
                pairs += 1.0;
                wins += if s[i] > s[j] {
                    1.0
                } else if s[i] == s[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Precision and recall recomputed from scratch at every distinct threshold.
fn per_threshold(s: &[f64], y: &[u8]) -> Vec<(f64, f64, f64)> {
    let mut levels = s.to_vec();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let pos = y.iter().filter(|&&v| v == 1).count() as f64;
    levels
        .into_iter()
        .map(|t| {
            let flagged: Vec<usize> = (0..s.len()).filter(|&i| s[i] >= t).collect();
            let tp = flagged.iter().filter(|&&i| y[i] == 1).count() as f64;
            (t, tp / flagged.len() as f64, tp / pos)
        })
        .collect()
}

#[test]
fn auc_matches_pairwise_enumeration() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=200);
        let (s, y) = random_instance(&mut rng, n);
        let got = roc_auc(&s, &y).unwrap();
        assert!((got - pairwise_auc(&s, &y)).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn average_precision_matches_threshold_enumeration() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let n = rng.random_range(2..=200);
        let (s, y) = random_instance(&mut rng, n);
        let (pts, ap) = pr_curve(&s, &y).unwrap();
        let oracle = per_threshold(&s, &y);
        assert_eq!(pts.len(), oracle.len());
        let mut expected = 0.0;
        let mut prev_recall = 0.0;
        for (pt, &(t, p, r)) in pts.iter().zip(&oracle) {
            assert_eq!(pt.threshold, t);
            assert!((pt.precision - p).abs() < 1e-12 && (pt.recall - r).abs() < 1e-12);
            expected += (r - prev_recall) * p;
            prev_recall = r;
        }
        assert!((ap - expected).abs() < 1e-12, "seed {seed}");
    }
}

#[test]
fn roc_points_match_threshold_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (s, y) = random_instance(&mut rng, 100);
    let pts = roc_curve(&s, &y).unwrap();
    let (pos, neg) = (
        y.iter().filter(|&&v| v == 1).count() as f64,
        y.iter().filter(|&&v| v == 0).count() as f64,
    );
    for pt in &pts[1..] {
        let t = pt.threshold.unwrap();
        let tp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 1).count() as f64;
        let fp = (0..s.len()).filter(|&i| s[i] >= t && y[i] == 0).count() as f64;
        assert!((pt.tpr - tp / pos).abs() < 1e-12 && (pt.fpr - fp / neg).abs() < 1e-12);
    }
    // trapezoids under the step curve equal the rank statistic
    let area: f64 = pts
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    assert!((area - roc_auc(&s, &y).unwrap()).abs() < 1e-12);
}
