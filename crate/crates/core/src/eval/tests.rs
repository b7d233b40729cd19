use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::rng_for;

fn pairwise_auroc(scores: &[f64], pos: &[bool]) -> Option<f64> {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if pos[i] && !pos[j] {
                pairs += 1.0;
                num += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| num / pairs)
}

fn random_instance(seed: u64) -> (Array2<f64>, Vec<usize>, Vec<usize>) {
    let mut rng = rng_for(seed, &[17]);
    let n = rng.random_range(2..=200);
    let k = rng.random_range(2..=5);
    // coarse scores so that ties are common
    let scores = Array2::from_shape_fn((n, k), |_| f64::from(rng.random_range(0..6u8)) / 5.0);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    (scores, labels, preds)
}

#[test]
fn auroc_matches_pairwise_count() {
    for seed in 0..100 {
        let (scores, labels, _) = random_instance(seed);
        let per = auroc_per_class(&scores, &labels).unwrap();
        let mut present = Vec::new();
        for (c, got) in per.iter().enumerate() {
            let col: Vec<f64> = scores.column(c).to_vec();
            let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
            let want = if pos.iter().all(|&p| p) { None } else { pairwise_auroc(&col, &pos) };
            match (got, want) {
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < 1e-12, "seed {seed} class {c}: {a} vs {b}");
                    present.push(b);
                }
                (None, None) => {}
                other => panic!("seed {seed} class {c}: {other:?}"),
            }
        }
        match auroc_macro_ovr(&scores, &labels) {
            Ok(m) => assert!((m - present.iter().sum::<f64>() / present.len() as f64).abs() < 1e-12),
            Err(_) => assert!(present.len() < 2),
        }
    }
}

#[test]
fn auroc_landmarks() {
    let perfect = array![[0.9, 0.1], [0.8, 0.2], [0.1, 0.9], [0.3, 0.7]];
    assert_eq!(auroc_macro_ovr(&perfect, &[0, 0, 1, 1]).unwrap(), 1.0);
    assert_eq!(auroc_macro_ovr(&perfect, &[1, 1, 0, 0]).unwrap(), 0.0);
    let flat = Array2::from_elem((4, 2), 0.5);
    assert_eq!(auroc_macro_ovr(&flat, &[0, 1, 0, 1]).unwrap(), 0.5);
    assert!(auroc_macro_ovr(&flat, &[1, 1, 1, 1]).is_err());
    // class 2 absent from the labels is skipped
    let three = array![[0.9, 0.1, 0.0], [0.1, 0.9, 0.0]];
    assert_eq!(auroc_macro_ovr(&three, &[0, 1]).unwrap(), 1.0);
    let mut nan = flat.clone();
    nan[[0, 0]] = f64::NAN;
    assert!(auroc_macro_ovr(&nan, &[0, 1, 0, 1]).is_err());
}

#[test]
fn f1_and_balanced_accuracy_match_definitions() {
    for seed in 0..100 {
        let (_, labels, preds) = random_instance(seed);
        let mut classes: Vec<usize> = labels.iter().chain(&preds).copied().collect();
        classes.sort_unstable();
        classes.dedup();
        let mut f1s = Vec::new();
        let mut recalls = Vec::new();
        for &c in &classes {
            let tp = labels.iter().zip(&preds).filter(|(y, p)| **y == c && **p == c).count() as f64;
            let predicted = preds.iter().filter(|&&p| p == c).count() as f64;
            let actual = labels.iter().filter(|&&y| y == c).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            f1s.push(if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 });
            if actual > 0.0 {
                recalls.push(recall);
            }
        }
        let f1 = macro_f1(&preds, &labels).unwrap();
        let bacc = balanced_accuracy(&preds, &labels).unwrap();
        assert!((f1 - f1s.iter().sum::<f64>() / f1s.len() as f64).abs() < 1e-12, "seed {seed}");
        assert!((bacc - recalls.iter().sum::<f64>() / recalls.len() as f64).abs() < 1e-12, "seed {seed}");
    }
    assert!(macro_f1(&[], &[]).is_err());
}

fn unit_rows(m: Array2<f64>) -> Array2<f64> {
    let mut m = m;
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

#[test]
fn retrieval_matches_sorted_ranking() {
    for seed in 0..100 {
        let mut rng = rng_for(seed, &[29]);
        let n = rng.random_range(1..=60);
        let d = 3;
        let gen = |rng: &mut rand_chacha::ChaCha8Rng| {
            unit_rows(Array2::from_shape_fn((n, d), |_| f64::from(rng.random_range(1..4u8))))
        };
        let s = gen(&mut rng);
        let t = gen(&mut rng);
        let k = rng.random_range(1..=n);
        let sim = s.dot(&t.t());
        let recall = |sim: &Array2<f64>| {
            let mut hits = 0;
            for i in 0..n {
                let mut order: Vec<usize> = (0..n).collect();
                // stable sort keeps ascending index among equals
                order.sort_by(|&a, &b| sim[[i, b]].partial_cmp(&sim[[i, a]]).unwrap());
                if order[..k].contains(&i) {
                    hits += 1;
                }
            }
            hits as f64 / n as f64
        };
        let (a, b) = retrieval_recall(&s, &t, k).unwrap();
        assert_eq!(a, recall(&sim), "seed {seed}");
        assert_eq!(b, recall(&sim.t().to_owned()), "seed {seed}");
    }
    let s = unit_rows(array![[1.0, 0.0], [0.0, 1.0]]);
    assert_eq!(retrieval_recall(&s, &s, 1).unwrap(), (1.0, 1.0));
    assert!(retrieval_recall(&s, &s, 3).is_err());
    assert!(retrieval_recall(&s, &s, 0).is_err());
}

#[test]
fn retrieval_ties_favor_lower_index() {
    // every similarity equal: only item 0 is ranked first for its own query
    let s = Array2::from_elem((3, 2), std::f64::consts::FRAC_1_SQRT_2);
    let (a, _) = retrieval_recall(&s, &s, 1).unwrap();
    assert!((a - 1.0 / 3.0).abs() < 1e-12);
}

fn lcs_dp(a: &[u32], b: &[u32]) -> usize {
    let mut t = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            t[i][j] = if a[i - 1] == b[j - 1] { t[i - 1][j - 1] + 1 } else { t[i - 1][j].max(t[i][j - 1]) };
        }
    }
    t[a.len()][b.len()]
}

proptest! {
    #[test]
    fn lcs_matches_dp(a in prop::collection::vec(0u32..4, 0..150), b in prop::collection::vec(0u32..4, 0..150)) {
        prop_assert_eq!(lcs_len(&a, &b), lcs_dp(&a, &b));
    }

    #[test]
    fn caption_metrics_bounded(h in "[a-c ]{0,40}", r in "[a-c]{1,3}( [a-c]{1,3}){0,10}") {
        let m = caption_metrics(&h, &r).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.token_f1));
        prop_assert!((0.0..=1.0).contains(&m.rouge_l));
        // ROUGE-L never exceeds unigram overlap
        prop_assert!(m.rouge_l <= m.token_f1 + 1e-12);
        let same = caption_metrics(&r, &r).unwrap();
        prop_assert_eq!(same.token_f1, 1.0);
        prop_assert_eq!(same.rouge_l, 1.0);
    }
}

#[test]
fn caption_metric_values() {
    // hypothesis "a b c d", reference "a c e": overlap 2, LCS 2
    let m = caption_metrics("a b c d", "a c e").unwrap();
    let want = 2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0);
    assert!((m.token_f1 - want).abs() < 1e-12);
    assert!((m.rouge_l - want).abs() < 1e-12);
    // order matters only for ROUGE-L
    let m = caption_metrics("c b a", "a b c").unwrap();
    assert_eq!(m.token_f1, 1.0);
    assert!((m.rouge_l - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(caption_metrics("", "a").unwrap().token_f1, 0.0);
    assert!(caption_metrics("a", "").is_err());
    assert_eq!(lcs_len(&vec![1u8; 130], &vec![1u8; 70]), 70);
}

#[test]
fn class_weights_balance_classes() {
    let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
    let w = class_weights(&labels, 2);
    assert!((w[95] / w[0] - 9.0).abs() < 1e-12);
    let total0: f64 = w[..90].iter().sum();
    let total1: f64 = w[90..].iter().sum();
    assert!((total0 - total1).abs() < 1e-9);
}

/// Damped Newton on the probe objective with a dense Hessian.
fn newton_probe(x: &Array2<f64>, y: &[usize], k: usize, l2: f64) -> LinearProbe {
    let (n, d) = x.dim();
    let p = (d + 1) * k;
    let w = class_weights(y, k);
    let total: f64 = w.iter().sum();
    let mut theta = vec![0.0; p];
    let unpack = |t: &[f64]| LinearProbe {
        w: Array2::from_shape_fn((d, k), |(i, c)| t[i * k + c]),
        b: Array1::from_shape_fn(k, |c| t[d * k + c]),
    };
    let feat = |i: usize, j: usize| if j < d { x[[i, j]] } else { 1.0 };
    for _ in 0..50 {
        let probe = unpack(&theta);
        let (_, g) = probe_objective(&probe, x, y, &w, l2);
        let mut grad: Vec<f64> = g.w.iter().copied().collect();
        grad.extend(g.b.iter());
        let probs = probe.predict_proba(x);
        let mut h = vec![vec![0.0; p]; p];
        for i in 0..n {
            for a in 0..=d {
                for b in 0..=d {
                    let f = feat(i, a) * feat(i, b) * w[i] / total;
                    for c in 0..k {
                        for e in 0..k {
                            let s = probs[[i, c]] * (f64::from(u8::from(c == e)) - probs[[i, e]]);
                            h[a * k + c][b * k + e] += f * s;
                        }
                    }
                }
            }
        }
        for (j, row) in h.iter_mut().enumerate() {
            row[j] += if j < d * k { l2 } else { 1e-10 };
        }
        // Gaussian elimination with partial pivoting
        let mut rhs = grad.clone();
        for col in 0..p {
            let piv = (col..p).max_by(|&a, &b| h[a][col].abs().total_cmp(&h[b][col].abs())).unwrap();
            h.swap(col, piv);
            rhs.swap(col, piv);
            for r in col + 1..p {
                let f = h[r][col] / h[col][col];
                for c in col..p {
                    h[r][c] -= f * h[col][c];
                }
                rhs[r] -= f * rhs[col];
            }
        }
        let mut step = vec![0.0; p];
        for r in (0..p).rev() {
            let s: f64 = (r + 1..p).map(|c| h[r][c] * step[c]).sum();
            step[r] = (rhs[r] - s) / h[r][r];
        }
        for (t, s) in theta.iter_mut().zip(&step) {
            *t -= s;
        }
    }
    unpack(&theta)
}

fn blobs(n: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = rng_for(seed, &[41]);
    let centers = [[1.0, 0.0, 0.2], [-0.5, 0.8, 0.0], [-0.4, -0.9, 0.3]];
    let y: Vec<usize> = (0..n).map(|i| if i % 10 == 0 { 2 } else { i % 2 }).collect();
    let x = Array2::from_shape_fn((n, 3), |(i, j)| centers[y[i]][j] + rng.random_range(-0.9..0.9));
    (x, y)
}

#[test]
fn probe_agrees_with_newton() {
    let (x, y) = blobs(150, 3);
    let cfg = ProbeConfig { l2: 1e-2, max_iter: 20_000, tol: 1e-8 };
    let gd = LinearProbe::fit(&x, &y, 3, &cfg).unwrap();
    let nt = newton_probe(&x, &y, 3, cfg.l2);
    let w = class_weights(&y, 3);
    let (f_gd, _) = probe_objective(&gd, &x, &y, &w, cfg.l2);
    let (f_nt, g_nt) = probe_objective(&nt, &x, &y, &w, cfg.l2);
    assert!(g_nt.w.iter().chain(g_nt.b.iter()).all(|v| v.abs() < 1e-9), "newton did not converge");
    assert!((f_gd - f_nt).abs() < 1e-8, "{f_gd} vs {f_nt}");
    let (test_x, _) = blobs(400, 9);
    let a = gd.predict(&test_x);
    let b = nt.predict(&test_x);
    let agree = a.iter().zip(&b).filter(|(p, q)| p == q).count() as f64 / a.len() as f64;
    assert!(agree >= 0.99, "agreement {agree}");
}

#[test]
fn probe_rejects_degenerate_input() {
    let x = Array2::zeros((3, 2));
    assert!(LinearProbe::fit(&x, &[1, 1, 1], 2, &ProbeConfig::default()).is_err());
    assert!(LinearProbe::fit(&x, &[0, 1], 2, &ProbeConfig::default()).is_err());
    assert!(LinearProbe::fit(&x, &[0, 1, 5], 2, &ProbeConfig::default()).is_err());
}

#[test]
fn few_shot_with_every_example_equals_full_probe() {
    let (x, y) = blobs(60, 5);
    let (tx, ty) = blobs(80, 6);
    let cfg = ProbeConfig::default();
    let full = linear_probe_eval(&x, &y, &tx, &ty, 3, &cfg).unwrap();
    let pts = few_shot_eval(&x, &y, &tx, &ty, 3, &[1000], 2, 0, &cfg).unwrap();
    assert!(pts[0].auroc.iter().all(|&a| a == full.auroc));
    assert_eq!(pts[0].std, 0.0);
    let small = few_shot_eval(&x, &y, &tx, &ty, 3, &[5], 5, 0, &cfg).unwrap();
    assert_eq!(small[0].auroc.len(), 5);
    assert_eq!(few_shot_subset(&y, 3, 5, 0, 0).len(), 15);
    assert_eq!(few_shot_subset(&y, 3, 5, 0, 0), few_shot_subset(&y, 3, 5, 0, 0));
    assert_ne!(few_shot_subset(&y, 3, 5, 0, 0), few_shot_subset(&y, 3, 5, 0, 1));
}

#[test]
fn class_embedding_is_unit_mean() {
    let e = class_embedding_from(&[array![2.0, 0.0], array![0.0, 0.5]]).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    assert!((e[0] - h).abs() < 1e-12 && (e[1] - h).abs() < 1e-12);
    assert!(class_embedding_from(&[array![1.0, 0.0], array![-1.0, 0.0]]).is_err());
    assert!(class_embedding_from(&[]).is_err());
}

#[test]
fn zero_shot_ties_and_scale() {
    let classes = vec!["walk".to_string(), "bike".to_string(), "run".to_string()];
    let emb = array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let zs = ZeroShotClassifier::from_embeddings(classes, emb).unwrap();
    // walk and bike tie: bike sorts first
    assert_eq!(zs.predict(&array![[1.0, 0.0]]).unwrap(), [1]);
    let s = array![[0.3, 0.8], [2.0, 0.1]];
    let scaled = &s * 7.5;
    assert_eq!(zs.predict(&s).unwrap(), zs.predict(&scaled).unwrap());
    assert!(zs.predict(&array![[0.0, 0.0]]).is_err());
    let m = zs.evaluate(&array![[0.1, 1.0], [1.0, 0.0]], &[2, 1]).unwrap();
    assert_eq!(m.balanced_accuracy, 1.0);
}

#[test]
fn report_round_trip() {
    let mut r = EvalReport::new("zeroshot", "abc123");
    r.insert("auroc", 0.75).unwrap();
    r.insert("macro_f1", 0.5).unwrap();
    assert!(r.insert("bad", 1.5).is_err());
    assert!(r.insert("nan", f64::NAN).is_err());
    assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    assert!(r.to_text().contains("auroc     0.7500"));
    assert_eq!(r.to_csv(), "task,metric,value\nzeroshot,auroc,0.75\nzeroshot,macro_f1,0.5\n");
}
