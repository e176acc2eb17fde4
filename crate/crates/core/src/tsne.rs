//! Exact (O(n^2)) t-SNE to two dimensions.

use std::collections::{BTreeMap, HashMap};

use rand_distr::{Distribution, Normal};
use rand::Rng as _;
use rayon::prelude::*;
use serde::Serialize;

use crate::linalg::{squared_euclidean, Matrix};
use crate::seed;
use crate::store::EmbeddingTable;
use crate::{Error, Result};

const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERS: usize = 250;
const MOMENTUM_START: f64 = 0.5;
const MOMENTUM_FINAL: f64 = 0.8;
const MIN_GAIN: f64 = 0.01;
const CHECKPOINT_EVERY: usize = 50;
const CALIBRATION_STEPS: usize = 200;
const CALIBRATION_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iter: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            n_iter: 1000,
            learning_rate: 200.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Checkpoint {
    pub iteration: usize,
    /// KL(P || Q) against the un-exaggerated P.
    pub kl: f64,
    pub p_sum: f64,
    pub q_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub ids: Vec<u64>,
    pub coords: Vec<[f64; 2]>,
    pub kl_trace: Vec<Checkpoint>,
}

/// Result of calibrating one row of conditional probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub beta: f64,
    pub probs: Vec<f64>,
    /// Shannon entropy (nats) of `probs`.
    pub entropy: f64,
    pub converged: bool,
}

/// Conditional distribution `p_j ~ exp(-beta d_j)` and its entropy.
fn conditional(sq_dists: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let min = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let mut probs: Vec<f64> = sq_dists.iter().map(|d| (-beta * (d - min)).exp()).collect();
    let z: f64 = probs.iter().sum();
    let mut weighted = 0.0;
    for (p, d) in probs.iter_mut().zip(sq_dists) {
        *p /= z;
        weighted += *p * (d - min);
    }
    (probs, z.ln() + beta * weighted)
}

/// Binary search for the precision whose conditional distribution over
/// `sq_dists` has perplexity `target_perplexity`.
pub fn calibrate_row(sq_dists: &[f64], target_perplexity: f64) -> Result<Calibration> {
    if sq_dists.len() < 2 || !sq_dists.iter().all(|d| d.is_finite()) {
        return Err(Error::InvalidArgument(
            "perplexity calibration needs at least two finite distances".into(),
        ));
    }
    let target = target_perplexity.ln();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let (mut probs, mut entropy) = conditional(sq_dists, beta);
    let mut converged = false;
    for _ in 0..CALIBRATION_STEPS {
        let diff = entropy - target;
        if diff.abs() < CALIBRATION_TOL {
            converged = true;
            break;
        }
        if diff > 0.0 {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        (probs, entropy) = conditional(sq_dists, beta);
    }
    if !converged && (entropy - target).abs() >= CALIBRATION_TOL {
        log::warn!(
            "perplexity calibration stopped at beta {beta:e} (entropy {entropy:.6}, target {target:.6})"
        );
    }
    Ok(Calibration {
        beta,
        probs,
        entropy,
        converged,
    })
}

/// Symmetrised joint probabilities `(p_j|i + p_i|j) / 2n`, zero diagonal.
pub fn joint_probabilities(points: &Matrix, perplexity: f64) -> Result<Matrix> {
    let n = points.rows();
    let rows: Vec<Result<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| squared_euclidean(points.row(i), points.row(j)))
                .collect();
            let cal = calibrate_row(&d, perplexity)?;
            let mut row = cal.probs;
            row.insert(i, 0.0);
            Ok(row)
        })
        .collect();
    let mut cond = Matrix::zeros(n, n);
    for (i, r) in rows.into_iter().enumerate() {
        cond.row_mut(i).copy_from_slice(&r?);
    }
    let mut p = Matrix::zeros(n, n);
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            p.row_mut(i)[j] = (cond.row(i)[j] + cond.row(j)[i]) * scale;
        }
    }
    Ok(p)
}

#[inline]
fn kernel(y: &Matrix, i: usize, j: usize) -> f64 {
    1.0 / (1.0 + squared_euclidean(y.row(i), y.row(j)))
}

/// Normaliser `Z = sum_{i != j} (1 + |y_i - y_j|^2)^-1`.
fn q_normalizer(y: &Matrix) -> f64 {
    let n = y.rows();
    let partial: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| j != i).map(|j| kernel(y, i, j)).sum())
        .collect();
    partial.iter().sum()
}

/// Student-t joint probabilities of the embedding `y`.
pub fn student_t_q(y: &Matrix) -> Matrix {
    let n = y.rows();
    let z = q_normalizer(y);
    let mut q = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                q.row_mut(i)[j] = kernel(y, i, j) / z;
            }
        }
    }
    q
}

pub fn kl_divergence(p: &Matrix, y: &Matrix) -> f64 {
    let n = y.rows();
    let z = q_normalizer(y);
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && p.row(i)[j] > 0.0)
                .map(|j| {
                    let pij = p.row(i)[j];
                    let qij = (kernel(y, i, j) / z).max(f64::MIN_POSITIVE);
                    pij * (pij / qij).ln()
                })
                .sum()
        })
        .collect();
    terms.iter().sum::<f64>().max(0.0)
}

/// `dKL/dy_i = 4 sum_j (p_ij - q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)`, with
/// `p` scaled by `exaggeration`.
pub fn kl_gradient(p: &Matrix, y: &Matrix, exaggeration: f64) -> Matrix {
    let n = y.rows();
    let d = y.cols();
    let z = q_normalizer(y);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g = vec![0.0; d];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let w = kernel(y, i, j);
                let coef = 4.0 * (exaggeration * p.row(i)[j] - w / z) * w;
                for c in 0..d {
                    g[c] += coef * (y.row(i)[c] - y.row(j)[c]);
                }
            }
            g
        })
        .collect();
    Matrix::from_vec(n, d, rows.concat())
}

/// Adds tiny seeded noise to rows that exactly repeat an earlier row.
fn jitter_duplicates(points: &mut Matrix, rng: &mut seed::Rng) -> usize {
    let scale = 1e-8 * points.as_slice().iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut jittered = 0;
    for i in 0..points.rows() {
        let mut key: Vec<u64> = points.row(i).iter().map(|x| x.to_bits()).collect();
        while seen.contains_key(&key) {
            for x in points.row_mut(i) {
                *x += scale * rng.random_range(-1.0..1.0);
            }
            key = points.row(i).iter().map(|x| x.to_bits()).collect();
            jittered += 1;
        }
        seen.insert(key, i);
    }
    jittered
}

pub fn tsne(points: &EmbeddingTable, config: &TsneConfig) -> Result<Projection> {
    let n = points.len();
    if n < 5 {
        return Err(Error::InvalidArgument(format!("t-SNE needs at least 5 points, got {n}")));
    }
    if config.n_iter == 0 {
        return Err(Error::config("n_iter", "must be at least 1"));
    }
    if !(config.perplexity > 0.0 && config.perplexity < (n as f64 - 1.0) / 3.0) {
        return Err(Error::config(
            "perplexity",
            format!(
                "must be positive and below (n - 1) / 3 = {:.3} for {n} points",
                (n as f64 - 1.0) / 3.0
            ),
        ));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::config("learning_rate", "must be positive"));
    }
    let mut rng = seed::rng(config.seed);
    let mut x = points.matrix().clone();
    let dup = jitter_duplicates(&mut x, &mut rng);
    if dup > 0 {
        log::info!("jittered {dup} duplicate input rows");
    }
    let p = joint_probabilities(&x, config.perplexity)?;
    let p_sum: f64 = p.as_slice().iter().sum();

    let normal = Normal::new(0.0, 1e-4).expect("valid std");
    let mut y = Matrix::from_vec(n, 2, (0..2 * n).map(|_| normal.sample(&mut rng)).collect());
    let mut update = Matrix::zeros(n, 2);
    let mut gains = Matrix::from_vec(n, 2, vec![1.0; 2 * n]);
    let mut trace = Vec::new();

    for iter in 0..config.n_iter {
        let (exaggeration, momentum) = if iter < EXAGGERATION_ITERS {
            (EXAGGERATION, MOMENTUM_START)
        } else {
            (1.0, MOMENTUM_FINAL)
        };
        let grad = kl_gradient(&p, &y, exaggeration);
        for ((g, u), gain) in grad
            .as_slice()
            .iter()
            .zip(update.as_mut_slice())
            .zip(gains.as_mut_slice())
        {
            *gain = if (*g > 0.0) != (*u > 0.0) {
                *gain + 0.2
            } else {
                (*gain * 0.8).max(MIN_GAIN)
            };
            *u = momentum * *u - config.learning_rate * *gain * g;
        }
        for (yv, u) in y.as_mut_slice().iter_mut().zip(update.as_slice()) {
            *yv += u;
        }
        for c in 0..2 {
            let mean = (0..n).map(|i| y.row(i)[c]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| y.row_mut(i)[c] -= mean);
        }
        let done = iter + 1;
        if done % CHECKPOINT_EVERY == 0 || done == config.n_iter {
            let z = q_normalizer(&y);
            let q_sum = (0..n)
                .map(|i| (0..n).filter(|&j| j != i).map(|j| kernel(&y, i, j)).sum::<f64>())
                .sum::<f64>()
                / z;
            trace.push(Checkpoint {
                iteration: done,
                kl: kl_divergence(&p, &y),
                p_sum,
                q_sum,
            });
        }
    }
    if !y.as_slice().iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("t-SNE coordinates diverged".into()));
    }
    Ok(Projection {
        ids: points.ids().to_vec(),
        coords: y.iter_rows().map(|r| [r[0], r[1]]).collect(),
        kl_trace: trace,
    })
}

/// `id,x,y,label` CSV; missing labels are empty.
pub fn export_plot_data(projection: &Projection, labels: Option<&BTreeMap<u64, String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "x", "y", "label"]).expect("in-memory write");
    for (id, [x, y]) in projection.ids.iter().zip(&projection.coords) {
        let label = labels.and_then(|l| l.get(id)).map(String::as_str).unwrap_or("");
        w.write_record([id.to_string(), x.to_string(), y.to_string(), label.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    pub label: String,
}

pub fn parse_plot_data(text: &str) -> Result<Vec<PlotRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::InvalidArgument(format!("plot CSV: {e}")))?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i)
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("plot CSV: bad number {:?}", field(i))))
        };
        out.push(PlotRow {
            id: field(0)
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("plot CSV: bad id {:?}", field(0))))?,
            x: num(1)?,
            y: num(2)?,
            label: field(3).to_string(),
        });
    }
    Ok(out)
}
