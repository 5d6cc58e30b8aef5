//! Library results checked against independent reference computations.

use embedspread::bnn::{embedding_component_variance, spectral_normalize};
use embedspread::evaluation::roc_auc;
use embedspread::features::{cosine_distance, max_pairwise_distance, mutual_information, predictive_entropy, Metric};
use embedspread::numerics::{softmax, Tensor};
use embedspread::rng;
use proptest::prelude::*;
use rand::Rng as _;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
#[allow(clippy::needless_range_loop)]
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j].powi(2))
            .sum();
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

#[test]
fn spectral_norm_matches_jacobi_oracle() {
    let mut g = rng::seeded(21);
    for _ in 0..20 {
        let (rows, cols) = (g.random_range(2..7), g.random_range(2..7));
        let w: Vec<f64> = (0..rows * cols).map(|_| g.random_range(-1.0..1.0)).collect();
        let gram: Vec<Vec<f64>> = (0..cols)
            .map(|i| (0..cols).map(|j| (0..rows).map(|r| w[r * cols + i] * w[r * cols + j]).sum()).collect())
            .collect();
        let top = jacobi_eigenvalues(gram).into_iter().fold(f64::MIN, f64::max).sqrt();
        let u = vec![1.0 / (rows as f64).sqrt(); rows];
        let step = spectral_normalize(&Tensor::matrix(rows, cols, w.clone()).unwrap(), &u, 500).unwrap();
        assert!((step.sigma - top).abs() < 1e-6 * top, "power iteration {} vs Jacobi {top}", step.sigma);
        for (a, b) in step.weight.data().iter().zip(&w) {
            assert!((a - b / step.sigma).abs() < 1e-12);
        }
    }
}

#[test]
fn component_variance_matches_monte_carlo() {
    let mut g = rng::seeded(5);
    let (out, inp) = (3, 6);
    let w: Vec<f64> = (0..out * inp).map(|_| g.random_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..inp).map(|_| g.random_range(-2.0..2.0)).collect();
    let keep = 0.7;
    let closed =
        embedding_component_variance(&Tensor::matrix(out, inp, w.clone()).unwrap(), &Tensor::vector(x.clone()), keep)
            .unwrap();
    let draws = 200_000;
    for j in 0..out {
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let y: f64 = (0..inp).filter(|_| g.random::<f64>() < keep).map(|i| w[j * inp + i] * x[i]).sum();
            s += y;
            s2 += y * y;
        }
        let mean = s / draws as f64;
        let var = s2 / draws as f64 - mean * mean;
        let c = closed.data()[j];
        assert!((var - c).abs() < 0.02 * c + 1e-3, "component {j}: MC {var} vs closed form {c}");
    }
}

fn brute_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(s, _)| *s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l == 0).map(|(s, _)| *s).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn brute_max(rows: &[Vec<f64>], metric: Metric) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            let d = match metric {
                Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
                Metric::Cosine => {
                    let sa: Vec<f64> = a.iter().map(|x| x + 1e-6).collect();
                    let sb: Vec<f64> = b.iter().map(|x| x + 1e-6).collect();
                    let dot: f64 = sa.iter().zip(&sb).map(|(x, y)| x * y).sum();
                    let na = sa.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = sb.iter().map(|x| x * x).sum::<f64>().sqrt();
                    1.0 - dot / (na * nb)
                }
            };
            best = best.max(d);
        }
    }
    best
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (2usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(prop_oneof![(0u8..6).prop_map(|k| k as f64 / 5.0), -10.0f64..10.0], n),
            prop::collection::vec(0usize..2, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 0;
                l[1] = 1;
                (s, l)
            })
    })
}

fn softmax_rows() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
    (2usize..20, 2usize..8).prop_flat_map(|(t, c)| (Just(t), Just(c), prop::collection::vec(-8.0f64..8.0, t * c)))
}

proptest! {
    #[test]
    fn auc_equals_pair_counting((scores, labels) in labeled_scores()) {
        prop_assert!((roc_auc(&scores, &labels).unwrap() - brute_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_to_monotone_transform((scores, labels) in labeled_scores()) {
        let squashed: Vec<f64> = scores.iter().map(|s| 1.0 / (1.0 + (-s).exp()) * 3.0 + 1.0).collect();
        let a = roc_auc(&scores, &labels).unwrap();
        prop_assert!((a - roc_auc(&squashed, &labels).unwrap()).abs() < 1e-12);
        let flipped: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert!((1.0 - a - roc_auc(&flipped, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn max_distance_equals_enumeration(t in 2usize..10, d in 1usize..6, seed in any::<u64>(), cosine in any::<bool>()) {
        let mut g = rng::seeded(seed);
        let rows: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| g.random_range(-3.0..3.0)).collect()).collect();
        let metric = if cosine { Metric::Cosine } else { Metric::Euclidean };
        let fast = max_pairwise_distance(&Tensor::from_rows(&rows).unwrap(), metric).unwrap();
        prop_assert!((fast - brute_max(&rows, metric)).abs() < 1e-12);
    }

    #[test]
    fn cosine_distance_in_range(u in prop::collection::vec(-5.0f64..5.0, 1..8), seed in any::<u64>()) {
        let mut g = rng::seeded(seed);
        let v: Vec<f64> = u.iter().map(|_| g.random_range(-5.0..5.0)).collect();
        let d = cosine_distance(&u, &v).unwrap();
        prop_assert!((-1e-12..=2.0 + 1e-9).contains(&d));
        prop_assert!(cosine_distance(&u, &u).unwrap().abs() < 1e-9);
    }

    #[test]
    fn information_bounds((t, c, logits) in softmax_rows()) {
        let mut rows = Vec::with_capacity(t * c);
        for chunk in logits.chunks(c) {
            rows.extend(softmax(&Tensor::vector(chunk.to_vec()), 1.0).unwrap().into_data());
        }
        let m = Tensor::matrix(t, c, rows).unwrap();
        let (mi, h) = (mutual_information(&m), predictive_entropy(&m));
        prop_assert!(mi >= -1e-12);
        prop_assert!(mi <= h + 1e-12);
        prop_assert!(h <= (c as f64).ln() + 1e-12);
    }
}
