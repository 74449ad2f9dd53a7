//! Lasso on a fixed set of columns, and KKT optimality certificates.
//!
//! Objective: `||y - H a||^2 + 2 lambda ||a||_1`. A point is optimal iff
//! `h_j^T (y - H a) = lambda sign(a_j)` on the support and
//! `|h_j^T (y - H a)| <= lambda` elsewhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{adjoint_apply, forward_model, gram_band, GramBand, SignalSegment};
use crate::signal::{MultichannelSignal, ShapeBank, SparseActivation, Spike, Window};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LassoConfig {
    pub lambda: f64,
    /// Outer tolerance: the working set stops once every inactive
    /// correlation is below `lambda + kkt_tol`.
    pub kkt_tol: f64,
    pub inner_tol: f64,
    pub max_inner_iters: usize,
    pub max_outer_activations: usize,
}

impl LassoConfig {
    /// `inner_tol` defaults to `1e-3 * kkt_tol`.
    pub fn new(lambda: f64, kkt_tol: f64) -> Result<Self> {
        let cfg = LassoConfig {
            lambda,
            kkt_tol,
            inner_tol: 1e-3 * kkt_tol,
            max_inner_iters: 50_000,
            max_outer_activations: 1_000_000,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Outer tolerance relative to the largest template energy.
    pub fn default_kkt_tol(c_upper: f64) -> f64 {
        1e-6 * c_upper
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.lambda) {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !positive(self.kkt_tol) || !positive(self.inner_tol) {
            return Err(Error::Config("tolerances must be > 0".into()));
        }
        if self.max_inner_iters == 0 || self.max_outer_activations == 0 {
            return Err(Error::Config("iteration budgets must be >= 1".into()));
        }
        Ok(())
    }
}

/// Proximal operator of `tau * |.|`.
#[inline]
pub fn soft_threshold(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// `max (|g| - lambda)_+` over zero coordinates in scope.
    pub max_violation: f64,
    /// Zero coordinate with the largest `|g|` (smallest index on ties).
    pub argmax_index: (usize, usize),
    pub support_sign_ok: bool,
    pub max_support_deviation: f64,
}

impl KktReport {
    pub fn passes(&self, cfg: &LassoConfig) -> bool {
        self.max_violation <= cfg.kkt_tol && self.support_sign_ok
    }
}

/// Certificate for `a_hat` computed from `g = H^T (y - H a_hat)`.
pub fn kkt_check(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    a_hat: &SparseActivation,
    cfg: &LassoConfig,
    scope: Option<Window>,
) -> Result<KktReport> {
    let t_len = y.n_samples();
    let fitted = forward_model(shapes, a_hat, t_len)?;
    let residual = y.sub(&fitted)?;
    let g = adjoint_apply(shapes, &residual)?;
    let scope = scope.unwrap_or(Window::full(t_len));
    if scope.end > t_len {
        return Err(Error::Index(format!("scope end {} beyond T = {t_len}", scope.end)));
    }
    let dense = a_hat.to_dense();
    let lambda = cfg.lambda;
    let mut report = KktReport {
        max_violation: 0.0,
        argmax_index: (0, scope.start),
        support_sign_ok: true,
        max_support_deviation: 0.0,
    };
    let mut best = f64::NEG_INFINITY;
    for n in 0..shapes.n_neurons() {
        for t in scope.start..scope.end {
            let gv = g.get(n, t);
            let a = dense[n * t_len + t];
            if a == 0.0 {
                if gv.abs() > best {
                    best = gv.abs();
                    report.argmax_index = (n, t);
                }
                report.max_violation = report.max_violation.max(gv.abs() - lambda);
            } else {
                let dev = (gv - lambda * a.signum()).abs();
                report.max_support_deviation = report.max_support_deviation.max(dev);
                if dev > cfg.inner_tol {
                    report.support_sign_ok = false;
                }
            }
        }
    }
    Ok(report)
}

/// `||y - H a||^2 + 2 lambda ||a||_1`.
pub fn objective(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    a: &SparseActivation,
    lambda: f64,
) -> Result<f64> {
    let fitted = forward_model(shapes, a, y.n_samples())?;
    Ok(y.sub(&fitted)?.frobenius_sq() + 2.0 * lambda * a.l1_norm())
}

/// Symmetric sparse matrix in CSR form (both triangles stored).
#[derive(Debug, Clone)]
pub(crate) struct SparseSym {
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl SparseSym {
    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.val[p] * x[self.col[p]];
            }
            *o = acc;
        }
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        let cols = &self.col[self.row_ptr[i]..self.row_ptr[i + 1]];
        match cols.binary_search(&j) {
            Ok(p) => self.val[self.row_ptr[i] + p],
            Err(_) => 0.0,
        }
    }

    fn diag(&self, i: usize) -> f64 {
        self.get(i, i)
    }
}

/// Lasso restricted to columns `cols`, reduced to its Gram form:
/// `||r||^2 - 2 b^T a + a^T G a + 2 lambda ||a||_1` with `G = H_J^T H_J`,
/// `b = H_J^T r`. Only rows under the columns' supports enter `b` and `G`.
#[derive(Debug, Clone)]
pub(crate) struct Subproblem {
    /// `(neuron, time)`, sorted by `(time, neuron)`.
    pub cols: Vec<(usize, usize)>,
    pub gram: SparseSym,
    pub b: Vec<f64>,
    pub target_norm_sq: f64,
    shape_len: usize,
}

/// Sorts columns by `(time, neuron)`, which makes `G` banded.
pub(crate) fn time_major(cols: &mut [(usize, usize)]) {
    cols.sort_by_key(|&(n, t)| (t, n));
}

impl Subproblem {
    /// Builds `G` from a pairwise entry function over columns closer than `l`.
    pub fn build(
        mut cols: Vec<(usize, usize)>,
        shape_len: usize,
        target_norm_sq: f64,
        column_dot: impl Fn(usize, usize) -> f64,
        entry: impl Fn((usize, usize), (usize, usize)) -> f64,
    ) -> Subproblem {
        time_major(&mut cols);
        let m = cols.len();
        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut col = Vec::new();
        let mut val = Vec::new();
        row_ptr.push(0);
        let mut lo = 0;
        for i in 0..m {
            let ti = cols[i].1;
            while cols[lo].1 + shape_len <= ti {
                lo += 1;
            }
            let mut j = lo;
            while j < m && cols[j].1 < ti + shape_len {
                let v = entry(cols[i], cols[j]);
                if v != 0.0 || i == j {
                    col.push(j);
                    val.push(v);
                }
                j += 1;
            }
            row_ptr.push(col.len());
        }
        let b = cols.iter().map(|&(n, t)| column_dot(n, t)).collect();
        Subproblem {
            cols,
            gram: SparseSym { row_ptr, col, val },
            b,
            target_norm_sq,
            shape_len,
        }
    }

    /// Columns of the convolutional operator against a signal segment.
    pub fn from_operator(
        shapes: &ShapeBank,
        band: &GramBand,
        target: &SignalSegment,
        cols: Vec<(usize, usize)>,
    ) -> Subproblem {
        let t_len = target.total_samples;
        Subproblem::build(
            cols,
            shapes.shape_len(),
            target.norm_sq(),
            |n, t| target.column_dot(shapes, n, t),
            |(n, t), (n2, t2)| band.entry(shapes, n, t, n2, t2, t_len),
        )
    }

    fn smooth(&self, x: &[f64], gx: &[f64]) -> f64 {
        x.iter()
            .zip(gx)
            .zip(&self.b)
            .map(|((xi, gi), bi)| xi * (gi - 2.0 * bi))
            .sum()
    }

    fn value(&self, x: &[f64], gx: &[f64], lambda: f64) -> f64 {
        self.target_norm_sq
            + self.smooth(x, gx)
            + 2.0 * lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    /// Restricted KKT deviation.
    fn deviation(&self, x: &[f64], gx: &[f64], lambda: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..x.len() {
            let c = self.b[j] - gx[j];
            let d = if x[j] != 0.0 {
                (c - lambda * x[j].signum()).abs()
            } else {
                (c.abs() - lambda).max(0.0)
            };
            worst = worst.max(d);
        }
        worst
    }

    /// Largest eigenvalue of `G` by power iteration.
    fn max_eigenvalue(&self, iters: usize, tol: f64) -> f64 {
        let m = self.cols.len();
        let mut v = vec![1.0 / (m as f64).sqrt(); m];
        let mut gv = vec![0.0; m];
        let mut estimate: f64 = (0..m).map(|i| self.gram.diag(i)).fold(0.0, f64::max);
        for _ in 0..iters {
            self.gram.mul(&v, &mut gv);
            let norm = gv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            let prev = estimate;
            estimate = estimate.max(norm);
            for (vi, gi) in v.iter_mut().zip(&gv) {
                *vi = gi / norm;
            }
            if (norm - prev).abs() <= tol * norm {
                break;
            }
        }
        estimate
    }

    /// Exact minimizer on the sign pattern `theta` (active where nonzero).
    fn sign_solve(&self, theta: &[f64], lambda: f64) -> Option<Vec<f64>> {
        let active: Vec<usize> = (0..theta.len()).filter(|&j| theta[j] != 0.0).collect();
        let mut out = vec![0.0; theta.len()];
        if active.is_empty() {
            return Some(out);
        }
        let rhs: Vec<f64> = active.iter().map(|&j| self.b[j] - lambda * theta[j]).collect();
        let times: Vec<usize> = active.iter().map(|&j| self.cols[j].1).collect();
        let chol = SkylineCholesky::factor(&times, self.shape_len, |i, j| {
            self.gram.get(active[i], active[j])
        })?;
        for (k, z) in chol.solve(&rhs).into_iter().enumerate() {
            if !z.is_finite() {
                return None;
            }
            out[active[k]] = z;
        }
        Some(out)
    }

    /// Feature-sign search from `x`: exact solves on the current sign
    /// pattern, a line search over the zero crossings towards each solve,
    /// and activation of the worst KKT violator once the active part is
    /// optimal. The objective never increases. Returns the solution once its
    /// restricted KKT deviation is at most `tol`.
    fn polish(&self, x: &[f64], lambda: f64, tol: f64, max_steps: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        let m = x.len();
        let mut x = x.to_vec();
        let mut gx = vec![0.0; m];
        self.gram.mul(&x, &mut gx);
        let mut fx = self.value(&x, &gx, lambda);
        let mut theta: Vec<f64> = x.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
        let mut gp = vec![0.0; m];
        for _ in 0..max_steps {
            let z = self.sign_solve(&theta, lambda)?;
            // Candidates: z, then every point on [x, z] where a nonzero
            // coordinate of x reaches zero.
            let mut cands: Vec<(f64, Option<usize>)> = (0..m)
                .filter(|&j| x[j] != 0.0 && x[j] * z[j] <= 0.0)
                .map(|j| (x[j] / (x[j] - z[j]), Some(j)))
                .filter(|&(s, _)| s > 0.0 && s < 1.0)
                .collect();
            cands.push((1.0, None));
            let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
            for (s, zeroed) in cands {
                let mut p: Vec<f64> = (0..m).map(|j| x[j] + s * (z[j] - x[j])).collect();
                if let Some(j) = zeroed {
                    p[j] = 0.0;
                }
                self.gram.mul(&p, &mut gp);
                let fp = self.value(&p, &gp, lambda);
                if best.as_ref().map_or(true, |b| fp < b.2) {
                    best = Some((p, gp.clone(), fp));
                }
            }
            let (p, g, fp) = best.expect("at least one candidate");
            let moved = fp < fx;
            if moved {
                x = p;
                gx = g;
                fx = fp;
            }
            let mut changed = false;
            for j in 0..m {
                let t = if x[j] == 0.0 { 0.0 } else { x[j].signum() };
                changed |= t != theta[j];
                theta[j] = t;
            }
            let active_ok = (0..m)
                .filter(|&j| x[j] != 0.0)
                .all(|j| (self.b[j] - gx[j] - lambda * x[j].signum()).abs() <= tol);
            if !active_ok {
                if !moved && !changed {
                    return None;
                }
                continue;
            }
            let mut worst = (tol, None);
            for j in (0..m).filter(|&j| x[j] == 0.0) {
                let v = (self.b[j] - gx[j]).abs() - lambda;
                if v > worst.0 {
                    worst = (v, Some(j));
                }
            }
            match worst.1 {
                None => return Some((x, gx)),
                Some(j) => theta[j] = (self.b[j] - gx[j]).signum(),
            }
        }
        None
    }
}

/// Result of a reduced solve.
#[derive(Debug, Clone)]
pub(crate) struct SubSolution {
    /// Aligned with `Subproblem::cols`.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub deviation: f64,
    pub residual_norm: f64,
}

impl SubSolution {
    fn done(values: Vec<f64>, iterations: usize) -> Self {
        SubSolution {
            values,
            iterations,
            converged: true,
            deviation: 0.0,
            residual_norm: 0.0,
        }
    }

    /// Turns a non-converged solve into a convergence error.
    pub fn into_result(self, cols: &[(usize, usize)], n_neurons: usize, n_samples: usize) -> Result<Self> {
        if self.converged {
            return Ok(self);
        }
        let last = to_activation(cols, &self.values, n_neurons, n_samples)?;
        Err(Error::Convergence {
            iterations: self.iterations,
            deviation: self.deviation,
            residual_norm: self.residual_norm,
            last: Box::new(last),
        })
    }
}

/// Accelerated proximal gradient with function-value restart, step `1/L`
/// from power iteration plus backtracking, and a sign-pattern polish every
/// few iterations. Returns once the restricted KKT deviation is at most
/// `cfg.inner_tol`.
pub(crate) fn solve_reduced(sub: &Subproblem, warm: &[f64], cfg: &LassoConfig) -> Result<SubSolution> {
    const POLISH_EVERY: usize = 10;
    let m = sub.cols.len();
    let lambda = cfg.lambda;
    debug_assert_eq!(warm.len(), m);
    let mut x = warm.to_vec();
    let mut gx = vec![0.0; m];
    sub.gram.mul(&x, &mut gx);
    let mut fx = sub.value(&x, &gx, lambda);

    let polish_steps = 4 * m + 20;
    if sub.deviation(&x, &gx, lambda) <= cfg.inner_tol {
        return Ok(SubSolution::done(x, 0));
    }
    if let Some((p, _)) = sub.polish(&x, lambda, cfg.inner_tol, polish_steps) {
        return Ok(SubSolution::done(p, 0));
    }

    let mut lipschitz = 2.0 * sub.max_eigenvalue(20, 1e-6);
    if lipschitz <= 0.0 {
        // G = 0 only when every column is empty, which the type invariants exclude.
        return Err(Error::Invalid("reduced Gram matrix is zero".into()));
    }
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut theta = 1.0f64;
    let mut x_new = vec![0.0; m];
    let mut g_new = vec![0.0; m];
    let mut last_support: Vec<bool> = x.iter().map(|v| *v != 0.0).collect();

    for it in 1..=cfg.max_inner_iters {
        let smooth_y = sub.smooth(&y, &gy);
        loop {
            let step = 1.0 / lipschitz;
            for j in 0..m {
                let grad = 2.0 * (gy[j] - sub.b[j]);
                x_new[j] = soft_threshold(y[j] - step * grad, 2.0 * lambda * step);
            }
            sub.gram.mul(&x_new, &mut g_new);
            let smooth_new = sub.smooth(&x_new, &g_new);
            let mut lin = 0.0;
            let mut dist = 0.0;
            for j in 0..m {
                let d = x_new[j] - y[j];
                lin += 2.0 * (gy[j] - sub.b[j]) * d;
                dist += d * d;
            }
            let bound = smooth_y + lin + 0.5 * lipschitz * dist;
            if smooth_new <= bound + 1e-12 * (smooth_y.abs() + 1.0) {
                break;
            }
            lipschitz *= 2.0;
        }
        let f_new = sub.value(&x_new, &g_new, lambda);
        if f_new > fx {
            // restart from the last accepted point
            theta = 1.0;
            y.copy_from_slice(&x);
            gy.copy_from_slice(&gx);
            continue;
        }
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        let beta = (theta - 1.0) / theta_next;
        for j in 0..m {
            y[j] = x_new[j] + beta * (x_new[j] - x[j]);
            gy[j] = g_new[j] + beta * (g_new[j] - gx[j]);
        }
        theta = theta_next;
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut gx, &mut g_new);
        fx = f_new;

        if sub.deviation(&x, &gx, lambda) <= cfg.inner_tol {
            return Ok(SubSolution::done(x, it));
        }
        let support: Vec<bool> = x.iter().map(|v| *v != 0.0).collect();
        let stable = support == last_support;
        last_support = support;
        if stable && it % POLISH_EVERY == 0 {
            if let Some((p, _)) = sub.polish(&x, lambda, cfg.inner_tol, polish_steps) {
                return Ok(SubSolution::done(p, it));
            }
        }
    }
    let deviation = sub.deviation(&x, &gx, lambda);
    let residual_norm = (sub.target_norm_sq + sub.smooth(&x, &gx)).max(0.0).sqrt();
    Ok(SubSolution {
        values: x,
        iterations: cfg.max_inner_iters,
        converged: false,
        deviation,
        residual_norm,
    })
}

/// Profile (skyline) Cholesky for matrices whose nonzeros sit within a
/// time band of width `l` after sorting by time.
struct SkylineCholesky {
    first: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl SkylineCholesky {
    fn factor(times: &[usize], shape_len: usize, entry: impl Fn(usize, usize) -> f64) -> Option<Self> {
        let m = times.len();
        let mut first = vec![0; m];
        let mut lo = 0;
        for i in 0..m {
            while times[lo] + shape_len <= times[i] {
                lo += 1;
            }
            first[i] = lo;
        }
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(m);
        for i in 0..m {
            let fi = first[i];
            let mut row = vec![0.0; i - fi + 1];
            for j in fi..=i {
                let fj = first[j];
                let start = fi.max(fj);
                let mut acc = entry(i, j);
                if j == i {
                    for k in fi..i {
                        acc -= row[k - fi] * row[k - fi];
                    }
                } else {
                    for k in start..j {
                        acc -= row[k - fi] * rows[j][k - fj];
                    }
                }
                if j == i {
                    let a_ii = entry(i, i);
                    if acc <= 1e-12 * a_ii.abs() || !acc.is_finite() {
                        return None;
                    }
                    row[j - fi] = acc.sqrt();
                } else {
                    row[j - fi] = acc / rows[j][j - fj];
                }
            }
            rows.push(row);
        }
        Some(SkylineCholesky { first, rows })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let m = rhs.len();
        let mut z = rhs.to_vec();
        for i in 0..m {
            let fi = self.first[i];
            let mut acc = z[i];
            for k in fi..i {
                acc -= self.rows[i][k - fi] * z[k];
            }
            z[i] = acc / self.rows[i][i - fi];
        }
        for i in (0..m).rev() {
            z[i] /= self.rows[i][i - self.first[i]];
            let zi = z[i];
            let fi = self.first[i];
            for k in fi..i {
                z[k] -= self.rows[i][k - fi] * zi;
            }
        }
        z
    }
}

/// Collects a reduced solution back into a sparse activation.
pub(crate) fn to_activation(
    cols: &[(usize, usize)],
    values: &[f64],
    n_neurons: usize,
    n_samples: usize,
) -> Result<SparseActivation> {
    let entries = cols
        .iter()
        .zip(values)
        .filter(|(_, v)| **v != 0.0)
        .map(|(&(neuron, time), &amplitude)| Spike {
            neuron,
            time,
            amplitude,
        })
        .collect();
    SparseActivation::from_unsorted(n_neurons, n_samples, entries)
}

/// Solves the Lasso restricted to the columns `working_set`, starting from
/// `warm_start` (whose support must lie inside the working set).
pub fn solve_subproblem(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    working_set: &[(usize, usize)],
    cfg: &LassoConfig,
    warm_start: &SparseActivation,
) -> Result<SparseActivation> {
    cfg.validate()?;
    if working_set.is_empty() {
        return Err(Error::Invalid("empty working set".into()));
    }
    if y.n_electrodes() != shapes.n_electrodes() {
        return Err(Error::Dimension("signal and shape bank electrode counts differ".into()));
    }
    let t_len = y.n_samples();
    let mut cols = working_set.to_vec();
    for &(n, t) in &cols {
        if n >= shapes.n_neurons() || t >= t_len {
            return Err(Error::Index(format!("working-set column ({n}, {t}) out of range")));
        }
    }
    time_major(&mut cols);
    if cols.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Invalid("duplicate working-set column".into()));
    }
    let band = gram_band(shapes);
    let seg = SignalSegment::copy_from(y, 0, t_len);
    let sub = Subproblem::from_operator(shapes, &band, &seg, cols);
    let mut warm = vec![0.0; sub.cols.len()];
    for s in warm_start.entries() {
        match sub.cols.binary_search_by_key(&(s.time, s.neuron), |&(n, t)| (t, n)) {
            Ok(i) => warm[i] = s.amplitude,
            Err(_) => {
                return Err(Error::Invalid(format!(
                    "warm start entry ({}, {}) outside the working set",
                    s.neuron, s.time
                )))
            }
        }
    }
    let sol = solve_reduced(&sub, &warm, cfg)?.into_result(&sub.cols, shapes.n_neurons(), t_len)?;
    to_activation(&sub.cols, &sol.values, shapes.n_neurons(), t_len)
}
