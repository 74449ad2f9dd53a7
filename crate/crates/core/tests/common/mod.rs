//! Dense-matrix oracles and random instance builders shared by the
//! integration tests. Nothing here calls the library's operator code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikelasso::{MultichannelSignal, ShapeBank, SparseActivation, Spike};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random bank; each (neuron, electrode) template is zero with
/// probability `p_zero`, but every neuron keeps one nonzero electrode.
pub fn rand_bank(r: &mut ChaCha8Rng, n: usize, e: usize, l: usize, p_zero: f64) -> ShapeBank {
    let mut data = vec![0.0; n * e * l];
    for ni in 0..n {
        let keep = r.gen_range(0..e);
        for ei in 0..e {
            if ei != keep && r.gen_bool(p_zero) {
                continue;
            }
            for k in 0..l {
                data[(ni * e + ei) * l + k] = r.gen_range(-1.0..1.0);
            }
        }
    }
    ShapeBank::new(n, e, l, data).unwrap()
}

pub fn rand_signal(r: &mut ChaCha8Rng, e: usize, t: usize) -> MultichannelSignal {
    MultichannelSignal::new(e, t, (0..e * t).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `k` distinct random entries with amplitudes bounded away from zero.
pub fn rand_act(r: &mut ChaCha8Rng, n: usize, t: usize, k: usize) -> SparseActivation {
    let mut keys = std::collections::BTreeSet::new();
    while keys.len() < k.min(n * t) {
        keys.insert((r.gen_range(0..n), r.gen_range(0..t)));
    }
    let spikes = keys
        .into_iter()
        .map(|(neuron, time)| Spike {
            neuron,
            time,
            amplitude: r.gen_range(0.2..1.5) * if r.gen_bool(0.5) { 1.0 } else { -1.0 },
        })
        .collect();
    SparseActivation::from_unsorted(n, t, spikes).unwrap()
}

/// Explicit `H` with `E*T` rows (electrode-major) and `N*T` columns
/// (column `n*T + t`).
pub struct DenseH {
    pub h: DMatrix<f64>,
    pub n: usize,
    pub t: usize,
}

impl DenseH {
    pub fn new(shapes: &ShapeBank, t_len: usize) -> Self {
        let (n, e, l) = (shapes.n_neurons(), shapes.n_electrodes(), shapes.shape_len());
        let mut h = DMatrix::zeros(e * t_len, n * t_len);
        for ni in 0..n {
            for t in 0..t_len {
                for ei in 0..e {
                    let w = &shapes.data()[(ni * e + ei) * l..(ni * e + ei + 1) * l];
                    for (k, &v) in w.iter().enumerate() {
                        if t + k < t_len {
                            h[(ei * t_len + t + k, ni * t_len + t)] = v;
                        }
                    }
                }
            }
        }
        DenseH { h, n, t: t_len }
    }

    pub fn col(&self, n: usize, t: usize) -> usize {
        n * self.t + t
    }

    pub fn vec_act(&self, a: &SparseActivation) -> DVector<f64> {
        let mut v = DVector::zeros(self.n * self.t);
        for s in a.entries() {
            v[self.col(s.neuron, s.time)] = s.amplitude;
        }
        v
    }

    pub fn forward(&self, a: &SparseActivation) -> DVector<f64> {
        &self.h * self.vec_act(a)
    }

    pub fn adjoint(&self, y: &MultichannelSignal) -> DVector<f64> {
        self.h.transpose() * DVector::from_column_slice(y.data())
    }

    pub fn gram(&self, n: usize, t: usize, n2: usize, t2: usize) -> f64 {
        self.h.column(self.col(n, t)).dot(&self.h.column(self.col(n2, t2)))
    }

    pub fn objective(&self, y: &MultichannelSignal, a: &DVector<f64>, lambda: f64) -> f64 {
        let r = DVector::from_column_slice(y.data()) - &self.h * a;
        r.norm_squared() + 2.0 * lambda * a.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// `(max violation, argmax over zero coordinates, max support deviation)`.
    pub fn kkt(&self, y: &MultichannelSignal, a: &SparseActivation, lambda: f64) -> (f64, (usize, usize), f64) {
        let av = self.vec_act(a);
        let g = self.h.transpose() * (DVector::from_column_slice(y.data()) - &self.h * &av);
        let (mut viol, mut dev, mut best, mut arg) = (0.0f64, 0.0f64, f64::NEG_INFINITY, (0, 0));
        for n in 0..self.n {
            for t in 0..self.t {
                let (gv, x) = (g[self.col(n, t)], av[self.col(n, t)]);
                if x == 0.0 {
                    if gv.abs() > best {
                        best = gv.abs();
                        arg = (n, t);
                    }
                    viol = viol.max(gv.abs() - lambda);
                } else {
                    dev = dev.max((gv - lambda * x.signum()).abs());
                }
            }
        }
        (viol, arg, dev)
    }
}

/// Exact Lasso minimizer over the columns `cols` by enumerating every sign
/// pattern in `{-1, 0, +1}^|cols|`, solving the equality-constrained least
/// squares on each and keeping the sign-consistent one with least objective.
pub fn sign_pattern_qp(dh: &DenseH, y: &MultichannelSignal, cols: &[(usize, usize)], lambda: f64) -> (Vec<f64>, f64) {
    let m = cols.len();
    let yv = DVector::from_column_slice(y.data());
    let mut best = (vec![0.0; m], f64::INFINITY);
    for code in 0..3usize.pow(m as u32) {
        let mut signs = vec![0i32; m];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = (c % 3) as i32 - 1;
            c /= 3;
        }
        let active: Vec<usize> = (0..m).filter(|&i| signs[i] != 0).collect();
        let mut x = vec![0.0; m];
        if !active.is_empty() {
            let hs = DMatrix::from_fn(dh.h.nrows(), active.len(), |r, j| {
                let (n, t) = cols[active[j]];
                dh.h[(r, dh.col(n, t))]
            });
            let g = hs.transpose() * &hs;
            let rhs = hs.transpose() * &yv - DVector::from_iterator(active.len(), active.iter().map(|&i| lambda * signs[i] as f64));
            let Some(sol) = g.lu().solve(&rhs) else { continue };
            if active.iter().zip(sol.iter()).any(|(&i, &v)| v * signs[i] as f64 <= 0.0) {
                continue;
            }
            for (j, &i) in active.iter().enumerate() {
                x[i] = sol[j];
            }
        }
        let mut full = DVector::zeros(dh.n * dh.t);
        for (i, &(n, t)) in cols.iter().enumerate() {
            full[dh.col(n, t)] = x[i];
        }
        let f = dh.objective(y, &full, lambda);
        if f < best.1 {
            best = (x, f);
        }
    }
    best
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
