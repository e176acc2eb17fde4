mod common;

use std::collections::BTreeMap;

use basketvec::linalg::Matrix;
use basketvec::store::EmbeddingTable;
use basketvec::tsne::{
    calibrate_row, export_plot_data, joint_probabilities, kl_divergence, kl_gradient, parse_plot_data, student_t_q,
    tsne, Projection, TsneConfig,
};
use common::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Entropy in nats of `exp(-beta d) / Z`.
fn entropy(d: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let w: Vec<f64> = d.iter().map(|x| (-beta * x).exp()).collect();
    let z: f64 = w.iter().sum();
    let p: Vec<f64> = w.iter().map(|x| x / z).collect();
    let h = -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
    (p, h)
}

#[test]
fn calibration_matches_bisection_oracle() {
    // neighbours at distance 1 and 2
    let d = [1.0, 4.0];
    let target = 1.5f64.ln();
    let (mut lo, mut hi) = (0.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if entropy(&d, mid).1 > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (want, _) = entropy(&d, 0.5 * (lo + hi));
    let got = calibrate_row(&d, 1.5).unwrap();
    assert!(got.converged);
    assert!((got.entropy - target).abs() < 1e-5);
    for (g, w) in got.probs.iter().zip(&want) {
        assert!((g - w).abs() < 1e-4, "{g} vs {w}");
    }
}

fn random_matrix(r: &mut impl Rng, n: usize, d: usize, scale: f64) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| r.random_range(-scale..scale)).collect())
}

#[test]
fn gradient_matches_finite_differences_on_six_points() {
    let mut r = rng(71);
    for _ in 0..20 {
        let x = random_matrix(&mut r, 6, 4, 2.0);
        let p = joint_probabilities(&x, 1.5).unwrap();
        let rows: Vec<Vec<f64>> = p.iter_rows().map(<[f64]>::to_vec).collect();
        let y = random_matrix(&mut r, 6, 2, 2.0);
        let mut flat = y.as_slice().to_vec();
        let numeric = numeric_gradient(&mut flat, 1e-6, |v| {
            tsne_kl_oracle(&rows, &v.chunks(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>())
        });
        assert!(rel_error(kl_gradient(&p, &y, 1.0).as_slice(), &numeric) < 1e-4);
        let pts: Vec<[f64; 2]> = y.as_slice().chunks(2).map(|c| [c[0], c[1]]).collect();
        assert!((kl_divergence(&p, &y) - tsne_kl_oracle(&rows, &pts)).abs() < 1e-10);
    }
}

#[test]
fn p_and_q_are_normalized_and_symmetric() {
    let mut r = rng(72);
    let x = random_matrix(&mut r, 40, 10, 1.0);
    let p = joint_probabilities(&x, 8.0).unwrap();
    let q = student_t_q(&random_matrix(&mut r, 40, 2, 5.0));
    for m in [&p, &q] {
        assert!((m.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for i in 0..40 {
            assert_eq!(m.row(i)[i], 0.0);
            for j in 0..40 {
                assert!((m.row(i)[j] - m.row(j)[i]).abs() < 1e-15);
            }
        }
    }
}

fn two_clusters(dim: usize, n: usize, shift: f64, seed: u64) -> EmbeddingTable {
    let mut r = rng(seed);
    EmbeddingTable::from_rows((0..n as u64).map(|i| {
        let off = if (i as usize) < n / 2 { 0.0 } else { shift };
        let v: Vec<f64> = (0..dim)
            .map(|c| Distribution::<f64>::sample(&StandardNormal, &mut r) + if c == 0 { off } else { 0.0 })
            .collect();
        (i, v)
    }))
    .unwrap()
}

fn separation(p: &Projection) -> (f64, f64) {
    let half = p.coords.len() / 2;
    let centre = |s: &[[f64; 2]]| {
        let n = s.len() as f64;
        [s.iter().map(|c| c[0]).sum::<f64>() / n, s.iter().map(|c| c[1]).sum::<f64>() / n]
    };
    let (a, b) = (&p.coords[..half], &p.coords[half..]);
    let (ca, cb) = (centre(a), centre(b));
    let spread = |s: &[[f64; 2]], c: [f64; 2]| {
        s.iter().map(|x| ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt()).sum::<f64>() / s.len() as f64
    };
    let sep = ((ca[0] - cb[0]).powi(2) + (ca[1] - cb[1]).powi(2)).sqrt();
    (sep, 0.5 * (spread(a, ca) + spread(b, cb)))
}

fn config(seed: u64) -> TsneConfig {
    TsneConfig {
        perplexity: 10.0,
        n_iter: 600,
        seed,
        ..TsneConfig::default()
    }
}

#[test]
fn high_dimensional_clusters_stay_apart() {
    let p = tsne(&two_clusters(100, 80, 8.0, 73), &config(1)).unwrap();
    let (sep, spread) = separation(&p);
    assert!(sep > 3.0 * spread, "separation {sep:.2} spread {spread:.2}");

    // after the exaggeration phase KL falls, give or take small bumps
    let late: Vec<f64> = p.kl_trace.iter().filter(|c| c.iteration >= 250).map(|c| c.kl).collect();
    assert!(late.len() >= 2);
    assert!(late.windows(2).all(|w| w[1] <= w[0] * 1.05), "{late:?}");
    assert!(late.last().unwrap() < late.first().unwrap());
    assert!(p.kl_trace.iter().all(|c| (c.p_sum - 1.0).abs() < 1e-9 && (c.q_sum - 1.0).abs() < 1e-9));
}

#[test]
fn two_dimensional_input_clusters_stay_apart() {
    let p = tsne(&two_clusters(2, 60, 12.0, 74), &config(2)).unwrap();
    let (sep, spread) = separation(&p);
    assert!(sep > 3.0 * spread, "separation {sep:.2} spread {spread:.2}");
}

#[test]
fn same_seed_same_layout() {
    let table = two_clusters(5, 30, 5.0, 75);
    let cfg = TsneConfig { n_iter: 300, perplexity: 5.0, seed: 3, ..Default::default() };
    assert_eq!(tsne(&table, &cfg).unwrap(), tsne(&table, &cfg).unwrap());
    assert_ne!(tsne(&table, &cfg).unwrap().coords, tsne(&table, &TsneConfig { seed: 4, ..cfg }).unwrap().coords);
}

#[test]
fn bad_settings_are_rejected() {
    let table = two_clusters(3, 10, 1.0, 76);
    assert!(tsne(&table, &TsneConfig { perplexity: 5.0, ..Default::default() }).is_err());
    assert!(tsne(&table, &TsneConfig { perplexity: 2.0, n_iter: 0, ..Default::default() }).is_err());
    assert!(tsne(&two_clusters(3, 4, 1.0, 77), &TsneConfig { perplexity: 0.5, ..Default::default() }).is_err());
}

#[test]
fn plot_csv_round_trip() {
    let table = two_clusters(4, 20, 4.0, 78);
    let p = tsne(&table, &TsneConfig { n_iter: 100, perplexity: 4.0, ..Default::default() }).unwrap();
    let labels: BTreeMap<u64, String> = (0..10u64).map(|i| (i, format!("cat,{i}"))).collect();
    let rows = parse_plot_data(&export_plot_data(&p, Some(&labels))).unwrap();
    assert_eq!(rows.len(), 20);
    for (row, (id, c)) in rows.iter().zip(p.ids.iter().zip(&p.coords)) {
        assert_eq!(row.id, *id);
        assert!((row.x - c[0]).abs() < 1e-6 && (row.y - c[1]).abs() < 1e-6);
        assert_eq!(row.label, labels.get(id).cloned().unwrap_or_default());
    }
}
