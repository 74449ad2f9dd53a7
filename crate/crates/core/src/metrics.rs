//! Support-recovery scores and the nearest-centroid labelling baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{MultichannelSignal, ShapeBank, SparseActivation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl FScore {
    pub fn from_counts(tp: usize, fp: usize, fneg: usize) -> Self {
        // Vacuous ratios count as perfect: no estimates means no false alarm.
        let ratio = |a: usize, b: usize| if a + b == 0 { 1.0 } else { a as f64 / (a + b) as f64 };
        let precision = ratio(tp, fp);
        let recall = ratio(tp, fneg);
        let f = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        FScore {
            precision,
            recall,
            f,
            true_pos: tp,
            false_pos: fp,
            false_neg: fneg,
        }
    }
}

fn neuron_times(a: &SparseActivation) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); a.n_neurons()];
    for s in a.entries() {
        out[s.neuron].push(s.time);
    }
    for v in &mut out {
        v.sort_unstable();
    }
    out
}

/// Precision, recall and F-measure of `est` against `truth`. Spikes of the
/// same neuron match one-to-one when at most `time_tol` samples apart; the
/// time-ordered greedy sweep yields a maximum matching.
pub fn f_measure(est: &SparseActivation, truth: &SparseActivation, time_tol: usize) -> Result<FScore> {
    if est.n_neurons() != truth.n_neurons() || est.n_samples() != truth.n_samples() {
        return Err(Error::Dimension("estimate and truth sizes differ".into()));
    }
    let (e, r) = (neuron_times(est), neuron_times(truth));
    let mut tp = 0;
    for (et, rt) in e.iter().zip(&r) {
        let mut i = 0;
        for &t in rt {
            while i < et.len() && et[i] + time_tol < t {
                i += 1;
            }
            if i < et.len() && et[i] <= t + time_tol {
                tp += 1;
                i += 1;
            }
        }
    }
    Ok(FScore::from_counts(tp, est.len() - tp, truth.len() - tp))
}

/// `1 - ||K * (x - y)||_1 / (||x||_1 + ||y||_1)` with `K` the box kernel of
/// `kernel_support` taps of weight `1 / kernel_support`, convolved along
/// time for every neuron (full convolution). Two empty inputs score 1.
pub fn conv_performance(x: &SparseActivation, y: &SparseActivation, kernel_support: usize) -> Result<f64> {
    if x.n_neurons() != y.n_neurons() || x.n_samples() != y.n_samples() {
        return Err(Error::Dimension("activation sizes differ".into()));
    }
    if kernel_support == 0 {
        return Err(Error::Domain("kernel support must be positive".into()));
    }
    let mass = x.l1_norm() + y.l1_norm();
    if mass == 0.0 {
        return Ok(1.0);
    }
    let s = kernel_support;
    // Per-neuron differences, matched spikes cancelling exactly.
    let mut diff: Vec<((usize, usize), f64)> = x
        .entries()
        .iter()
        .map(|sp| ((sp.neuron, sp.time), sp.amplitude))
        .chain(y.entries().iter().map(|sp| ((sp.neuron, sp.time), -sp.amplitude)))
        .collect();
    diff.sort_by_key(|&(k, _)| k);
    let mut merged: Vec<((usize, usize), f64)> = Vec::with_capacity(diff.len());
    for (k, v) in diff {
        match merged.last_mut() {
            Some((k2, v2)) if *k2 == k => *v2 += v,
            _ => merged.push((k, v)),
        }
    }
    // `total` is `||K * (x - y)||_1` times `s`, except for neurons whose
    // differences share one sign: there the smoothing preserves the l1
    // mass and the sum of `|d|` is used as is.
    let mut total = 0.0;
    let mut exact = 0.0;
    for group in merged.chunk_by(|a, b| a.0 .0 == b.0 .0) {
        let one_sign = group.iter().all(|g| g.1 >= 0.0) || group.iter().all(|g| g.1 <= 0.0);
        if one_sign {
            for g in group {
                exact += g.1.abs();
            }
            continue;
        }
        // piecewise constant between the points where a difference enters
        // (t) or leaves (t + s) the box
        let mut steps: Vec<(usize, f64)> = group
            .iter()
            .flat_map(|&((_, t), d)| [(t, d), (t + s, -d)])
            .collect();
        steps.sort_by_key(|&(t, _)| t);
        let mut level = 0.0;
        let mut i = 0;
        while i < steps.len() {
            let t = steps[i].0;
            while i < steps.len() && steps[i].0 == t {
                level += steps[i].1;
                i += 1;
            }
            if i < steps.len() {
                total += level.abs() * (steps[i].0 - t) as f64;
            }
        }
    }
    Ok(1.0 - (exact + total / s as f64) / mass)
}

/// Label of the template closest, in Frobenius norm, to the `E x l` snippet
/// of `y` starting at each time; ties go to the smaller neuron index.
pub fn nearest_centroid_assign(y: &MultichannelSignal, shapes: &ShapeBank, times: &[usize]) -> Result<Vec<usize>> {
    let (ne, l) = (shapes.n_electrodes(), shapes.shape_len());
    if y.n_electrodes() != ne {
        return Err(Error::Dimension(format!(
            "signal has {} electrodes, shape bank {ne}",
            y.n_electrodes()
        )));
    }
    times
        .iter()
        .map(|&t| {
            if t + l > y.n_samples() {
                return Err(Error::Index(format!(
                    "snippet at {t} overruns the signal of {} samples",
                    y.n_samples()
                )));
            }
            let mut best = (f64::INFINITY, 0);
            for n in 0..shapes.n_neurons() {
                let d: f64 = (0..ne)
                    .map(|e| {
                        y.row(e)[t..t + l]
                            .iter()
                            .zip(shapes.shape(n, e))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                    })
                    .sum();
                if d < best.0 {
                    best = (d, n);
                }
            }
            Ok(best.1)
        })
        .collect()
}

/// `20 log10(max |w| / sigma)`.
pub fn snr_db(shapes: &ShapeBank, sigma: f64) -> f64 {
    20.0 * (shapes.max_abs() / sigma).log10()
}

/// Noise level giving `snr` decibels.
pub fn sigma_for_snr(shapes: &ShapeBank, snr: f64) -> f64 {
    shapes.max_abs() / 10f64.powf(snr / 20.0)
}
