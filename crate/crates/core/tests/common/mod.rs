//! Oracles and fixtures shared by the integration tests and the acceptance
//! harness. Everything here is written from the formulas directly, without
//! calling the library routine under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use basketvec::corpus::{generate_synthetic, Corpus, SynthSpec, SyntheticCorpus};
use basketvec::efemb::{self, EmbeddingPair, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `log(1 / (1 + e^-x))` by the textbook formula; fine for |x| < 30.
fn log_sigmoid_naive(x: f64) -> f64 {
    -(1.0 + (-x).exp()).ln()
}

/// Bernoulli negative-sampling objective of one (basket, target) pair.
pub fn objective_oracle(
    rho: &[Vec<f64>],
    alpha: &[Vec<f64>],
    items: &[usize],
    target_pos: usize,
    negatives: &[usize],
    lambda: f64,
    mean_pooling: bool,
) -> f64 {
    let d = rho[0].len();
    let n_ctx = items.len() - 1;
    let w = if mean_pooling { 1.0 / n_ctx as f64 } else { 1.0 };
    let mut ctx = vec![0.0; d];
    for (p, &j) in items.iter().enumerate() {
        if p != target_pos {
            for c in 0..d {
                ctx[c] += w * alpha[j][c];
            }
        }
    }
    let t = items[target_pos];
    let mut obj = log_sigmoid_naive(dot(&rho[t], &ctx)) - lambda * dot(&rho[t], &rho[t]);
    for &k in negatives {
        obj += log_sigmoid_naive(-dot(&rho[k], &ctx)) - lambda * dot(&rho[k], &rho[k]);
    }
    obj
}

/// `max_i |a_i - b_i| / max(max|a|, max|b|)`, the block-wise relative error.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|x| x.abs())
        .fold(1e-8, f64::max);
    diff / scale
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_gradient(x: &mut [f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Student-t KL(P || Q) of a 2-D layout, from the definition.
pub fn tsne_kl_oracle(p: &[Vec<f64>], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let w = |i: usize, j: usize| 1.0 / (1.0 + (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2));
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += w(i, j);
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && p[i][j] > 0.0 {
                kl += p[i][j] * (p[i][j] / (w(i, j) / z)).ln();
            }
        }
    }
    kl
}

pub fn default_spec() -> SynthSpec {
    SynthSpec::default()
}

/// Default synthetic corpus trained at D=25 for 10 epochs, single-threaded.
pub struct Planted {
    pub synth: SyntheticCorpus,
    pub pair: EmbeddingPair,
}

pub fn train_planted(spec: &SynthSpec, seed: u64) -> Planted {
    let synth = generate_synthetic(spec).expect("valid spec");
    let config = TrainConfig {
        dim: 25,
        epochs: 10,
        seed,
        ..Default::default()
    };
    let (pair, _) = efemb::train(&synth.corpus, &config).expect("training succeeds");
    Planted { synth, pair }
}

/// Fraction of products whose nearest other product by rho cosine shares
/// the planted category (brute force).
pub fn nn_same_category(pair: &EmbeddingPair, cats: &BTreeMap<u64, usize>) -> f64 {
    let ids = pair.ids();
    let mut hits = 0;
    for &a in ids {
        let ra = pair.rho_of(a).unwrap();
        let mut best = (f64::NEG_INFINITY, u64::MAX);
        for &b in ids {
            if b != a {
                let s = cosine(ra, pair.rho_of(b).unwrap());
                if s > best.0 {
                    best = (s, b);
                }
            }
        }
        if cats[&a] == cats[&best.1] {
            hits += 1;
        }
    }
    hits as f64 / ids.len() as f64
}

/// Mean rho cosine within planted categories and across them.
pub fn intra_inter_cosine(pair: &EmbeddingPair, cats: &BTreeMap<u64, usize>) -> (f64, f64) {
    let ids = pair.ids();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let s = cosine(pair.rho_of(a).unwrap(), pair.rho_of(b).unwrap());
            if cats[&a] == cats[&b] {
                intra += s;
                ni += 1;
            } else {
                inter += s;
                nx += 1;
            }
        }
    }
    (intra / ni as f64, inter / nx as f64)
}

/// Mean `rho_x . alpha_y` over sampled co-purchased ordered pairs and over
/// sampled pairs that never share a trip.
pub fn cooccur_gap(corpus: &Corpus, pair: &EmbeddingPair, samples: usize, seed: u64) -> (f64, f64) {
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    for t in &corpus.trips {
        for &x in &t.items {
            for &y in &t.items {
                if x != y {
                    seen.insert((x, y));
                }
            }
        }
    }
    let mut r = rng(seed);
    let score = |x: u64, y: u64| dot(pair.rho_of(x).unwrap(), pair.alpha_of(y).unwrap());
    let trips: Vec<_> = corpus
        .trips
        .iter()
        .filter(|t| t.items.iter().filter(|p| pair.rho_of(**p).is_some()).count() >= 2)
        .collect();
    let mut co = 0.0;
    for _ in 0..samples {
        let t = trips[r.random_range(0..trips.len())];
        let items: Vec<u64> = t.items.iter().copied().filter(|p| pair.rho_of(*p).is_some()).collect();
        let i = r.random_range(0..items.len());
        let mut j = r.random_range(0..items.len() - 1);
        if j >= i {
            j += 1;
        }
        co += score(items[i], items[j]);
    }
    let ids = pair.ids();
    let (mut non, mut n) = (0.0, 0usize);
    let mut attempts = 0;
    while n < samples && attempts < samples * 1000 {
        attempts += 1;
        let x = ids[r.random_range(0..ids.len())];
        let y = ids[r.random_range(0..ids.len())];
        if x != y && !seen.contains(&(x, y)) {
            non += score(x, y);
            n += 1;
        }
    }
    assert!(n > 0, "every pair co-occurs; no negative pairs to compare");
    (co / samples as f64, non / n as f64)
}

/// Exact k-means optimum over all partitions of `points` into `k` non-empty
/// groups (restricted growth strings).
pub fn brute_force_kmeans(points: &[Vec<f64>], k: usize) -> f64 {
    fn cost(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let d = points[0].len();
        let mut total = 0.0;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().zip(labels).filter(|(_, l)| **l == c).map(|(p, _)| p).collect();
            let mut mean = vec![0.0; d];
            for m in &members {
                for i in 0..d {
                    mean[i] += m[i] / members.len() as f64;
                }
            }
            total += members.iter().map(|m| sq_dist(m, &mean)).sum::<f64>();
        }
        total
    }
    fn rec(points: &[Vec<f64>], k: usize, labels: &mut Vec<usize>, used: usize, best: &mut f64) {
        let n = points.len();
        if labels.len() == n {
            if used == k {
                *best = best.min(cost(points, labels, k));
            }
            return;
        }
        if k - used > n - labels.len() {
            return;
        }
        for c in 0..(used + 1).min(k) {
            labels.push(c);
            rec(points, k, labels, used.max(c + 1), best);
            labels.pop();
        }
    }
    let mut best = f64::INFINITY;
    rec(points, k, &mut Vec::new(), 0, &mut best);
    best
}
