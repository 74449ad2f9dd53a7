//! The convolutional operator `H`, its adjoint, and the banded Gram structure.
//!
//! Column `h_{n,t}` of `H` is the template of neuron `n` pushed to start at
//! sample `t` on every electrode, truncated at the end of the signal.

use crate::error::{Error, Result};
use crate::signal::{DenseActivation, MultichannelSignal, ShapeBank, SparseActivation, Window};

const BLOCK: usize = 1024;

/// `out[i] += sum_k w[k] * r[i + k]` for every `i + k < r.len()`.
fn correlate_into(out: &mut [f64], w: &[f64], r: &[f64]) {
    let n = out.len();
    let mut b0 = 0;
    while b0 < n {
        let b1 = (b0 + BLOCK).min(n);
        for (k, &wk) in w.iter().enumerate() {
            if wk == 0.0 {
                continue;
            }
            let hi = b1.min(r.len().saturating_sub(k));
            if hi <= b0 {
                continue;
            }
            let src = &r[b0 + k..hi + k];
            for (o, s) in out[b0..hi].iter_mut().zip(src) {
                *o += wk * s;
            }
        }
        b0 = b1;
    }
}

/// Noiseless recording `sum_n W_n * a_n`.
pub fn forward_model(
    shapes: &ShapeBank,
    act: &SparseActivation,
    n_samples: usize,
) -> Result<MultichannelSignal> {
    if act.n_neurons() != shapes.n_neurons() {
        return Err(Error::Dimension(format!(
            "activation has {} neurons, shape bank {}",
            act.n_neurons(),
            shapes.n_neurons()
        )));
    }
    if act.n_samples() != n_samples {
        return Err(Error::Dimension(format!(
            "activation spans {} samples, requested {n_samples}",
            act.n_samples()
        )));
    }
    let mut seg = SignalSegment::zeros(shapes.n_electrodes(), 0, n_samples, n_samples);
    seg.add_spikes(shapes, act.entries().iter().map(|s| (s.neuron, s.time, s.amplitude)), 1.0);
    MultichannelSignal::new(shapes.n_electrodes(), n_samples, seg.data)
}

/// `H^T r`: correlation of the residual with every pushed template.
pub fn adjoint_apply(shapes: &ShapeBank, r: &MultichannelSignal) -> Result<DenseActivation> {
    if r.n_electrodes() != shapes.n_electrodes() {
        return Err(Error::Dimension(format!(
            "signal has {} electrodes, shape bank {}",
            r.n_electrodes(),
            shapes.n_electrodes()
        )));
    }
    let t_len = r.n_samples();
    let mut g = DenseActivation::zeros(shapes.n_neurons(), t_len);
    for (n, row) in g.data.chunks_mut(t_len).enumerate() {
        for e in 0..shapes.n_electrodes() {
            correlate_into(row, shapes.shape(n, e), r.row(e));
        }
    }
    Ok(g)
}

/// Mutable view of rows `[start, start + len)` of an `E x T` recording.
///
/// Owns its data so window solves can work on a local copy.
#[derive(Debug, Clone)]
pub struct SignalSegment {
    pub start: usize,
    pub len: usize,
    pub n_electrodes: usize,
    pub total_samples: usize,
    pub data: Vec<f64>,
}

impl SignalSegment {
    /// Copies samples `[start, end)` of `y`.
    pub fn copy_from(y: &MultichannelSignal, start: usize, end: usize) -> SignalSegment {
        let end = end.min(y.n_samples());
        let len = end.saturating_sub(start);
        let mut data = Vec::with_capacity(len * y.n_electrodes());
        for e in 0..y.n_electrodes() {
            data.extend_from_slice(&y.row(e)[start..end]);
        }
        SignalSegment {
            start,
            len,
            n_electrodes: y.n_electrodes(),
            total_samples: y.n_samples(),
            data,
        }
    }

    pub fn zeros(n_electrodes: usize, start: usize, end: usize, total_samples: usize) -> SignalSegment {
        let len = end.min(total_samples).saturating_sub(start);
        SignalSegment {
            start,
            len,
            n_electrodes,
            total_samples,
            data: vec![0.0; n_electrodes * len],
        }
    }

    pub fn end(&self) -> usize {
        self.start + self.len
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.data[e * self.len..(e + 1) * self.len]
    }

    /// Adds `scale * amp * h_{n,t}` for every `(n, t, amp)`, clipped to the segment.
    pub fn add_spikes(
        &mut self,
        shapes: &ShapeBank,
        spikes: impl IntoIterator<Item = (usize, usize, f64)>,
        scale: f64,
    ) {
        let (start, end, len) = (self.start, self.end(), self.len);
        for (n, t, amp) in spikes {
            let c = scale * amp;
            let lo = t.max(start);
            let hi = (t + shapes.shape_len()).min(end);
            if lo >= hi {
                continue;
            }
            for e in 0..self.n_electrodes {
                let w = shapes.shape(n, e);
                let row = &mut self.data[e * len..(e + 1) * len];
                for s in lo..hi {
                    row[s - start] += c * w[s - t];
                }
            }
        }
    }

    /// `h_{n,t}^T r` restricted to the rows held by the segment.
    pub fn column_dot(&self, shapes: &ShapeBank, n: usize, t: usize) -> f64 {
        let lo = t.max(self.start);
        let hi = (t + shapes.shape_len()).min(self.end());
        if lo >= hi {
            return 0.0;
        }
        let mut acc = 0.0;
        for e in 0..self.n_electrodes {
            let w = shapes.shape(n, e);
            let row = self.row(e);
            for s in lo..hi {
                acc += w[s - t] * row[s - self.start];
            }
        }
        acc
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Correlations `h_{n,t}^T r` for `t` in `window`, neuron-major.
    ///
    /// The segment must hold every row reached by the window's columns,
    /// i.e. `[window.start, min(window.end + l - 1, T))`.
    pub fn adjoint(&self, shapes: &ShapeBank, window: Window) -> Result<Vec<f64>> {
        let reach = (window.end + shapes.shape_len() - 1).min(self.total_samples);
        if window.start < self.start || reach > self.end() {
            return Err(Error::Index(format!(
                "segment [{}, {}) does not cover window [{}, {}) plus template reach",
                self.start,
                self.end(),
                window.start,
                window.end
            )));
        }
        let w_len = window.len();
        let mut g = vec![0.0; shapes.n_neurons() * w_len];
        let offset = window.start - self.start;
        for (n, out) in g.chunks_mut(w_len).enumerate() {
            for e in 0..self.n_electrodes {
                let row = &self.row(e)[offset..];
                correlate_into(out, shapes.shape(n, e), row);
            }
        }
        Ok(g)
    }
}

/// Shift-invariant Gram entries `h_{n,t}^T h_{n',t+lag}` for `|lag| < l`.
#[derive(Debug, Clone)]
pub struct GramBand {
    n_neurons: usize,
    shape_len: usize,
    /// `[n][n'][lag + l - 1]`
    cross_corr: Vec<f64>,
}

impl GramBand {
    pub fn shape_len(&self) -> usize {
        self.shape_len
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    /// Interior entry; zero for `|lag| >= l`.
    #[inline]
    pub fn get(&self, n: usize, n2: usize, lag: isize) -> f64 {
        let l = self.shape_len as isize;
        if lag <= -l || lag >= l {
            return 0.0;
        }
        let width = 2 * self.shape_len - 1;
        self.cross_corr[(n * self.n_neurons + n2) * width + (lag + l - 1) as usize]
    }

    pub fn diag(&self, n: usize) -> f64 {
        self.get(n, n, 0)
    }

    /// Exact `G_{(n,t),(n',t')}` on a signal of `n_samples`, falling back to
    /// direct computation when a template overhangs the right border.
    pub fn entry(
        &self,
        shapes: &ShapeBank,
        n: usize,
        t: usize,
        n2: usize,
        t2: usize,
        n_samples: usize,
    ) -> f64 {
        let l = self.shape_len;
        if t.abs_diff(t2) >= l {
            return 0.0;
        }
        if t + l <= n_samples && t2 + l <= n_samples {
            self.get(n, n2, t2 as isize - t as isize)
        } else {
            bordered_overlap(shapes, n, t, n2, t2, n_samples)
        }
    }
}

/// Builds the band once per shape bank: `O(N^2 E l^2)`.
pub fn gram_band(shapes: &ShapeBank) -> GramBand {
    let (nn, l) = (shapes.n_neurons(), shapes.shape_len());
    let width = 2 * l - 1;
    let mut cross_corr = vec![0.0; nn * nn * width];
    for n in 0..nn {
        for n2 in 0..nn {
            let base = (n * nn + n2) * width;
            for lag in -(l as isize - 1)..(l as isize) {
                let mut acc = 0.0;
                for e in 0..shapes.n_electrodes() {
                    let (w, w2) = (shapes.shape(n, e), shapes.shape(n2, e));
                    // sample s = k = lag + j
                    for (k, wk) in w.iter().enumerate() {
                        let j = k as isize - lag;
                        if j >= 0 && (j as usize) < l {
                            acc += wk * w2[j as usize];
                        }
                    }
                }
                cross_corr[base + (lag + l as isize - 1) as usize] = acc;
            }
        }
    }
    GramBand {
        n_neurons: nn,
        shape_len: l,
        cross_corr,
    }
}

fn bordered_overlap(shapes: &ShapeBank, n: usize, t: usize, n2: usize, t2: usize, n_samples: usize) -> f64 {
    let l = shapes.shape_len();
    let lo = t.max(t2);
    let hi = (t + l).min(t2 + l).min(n_samples);
    let mut acc = 0.0;
    for e in 0..shapes.n_electrodes() {
        let (w, w2) = (shapes.shape(n, e), shapes.shape(n2, e));
        for s in lo..hi {
            acc += w[s - t] * w2[s - t2];
        }
    }
    acc
}

/// Exact Gram entry between truncated columns, valid at the signal borders.
pub fn gram_entry_bordered(
    shapes: &ShapeBank,
    n: usize,
    t: usize,
    n2: usize,
    t2: usize,
    n_samples: usize,
) -> Result<f64> {
    if n >= shapes.n_neurons() || n2 >= shapes.n_neurons() {
        return Err(Error::Index(format!("neuron index ({n}, {n2}) >= {}", shapes.n_neurons())));
    }
    if t >= n_samples || t2 >= n_samples {
        return Err(Error::Index(format!("time index ({t}, {t2}) >= {n_samples}")));
    }
    Ok(bordered_overlap(shapes, n, t, n2, t2, n_samples))
}
