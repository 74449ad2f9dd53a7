//! Core data types: shape banks, multichannel signals, sparse activations
//! and temporal windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Action-potential templates, stored `[neuron][electrode][sample]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeBank {
    n_neurons: usize,
    n_electrodes: usize,
    shape_len: usize,
    data: Vec<f64>,
}

impl ShapeBank {
    pub fn new(
        n_neurons: usize,
        n_electrodes: usize,
        shape_len: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if n_neurons == 0 || n_electrodes == 0 || shape_len == 0 {
            return Err(Error::Invalid(format!(
                "shape bank needs N, E, l >= 1 (got {n_neurons}, {n_electrodes}, {shape_len})"
            )));
        }
        if data.len() != n_neurons * n_electrodes * shape_len {
            return Err(Error::Dimension(format!(
                "shape data has {} values, expected {}",
                data.len(),
                n_neurons * n_electrodes * shape_len
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite shape value at flat index {i}")));
        }
        let bank = ShapeBank {
            n_neurons,
            n_electrodes,
            shape_len,
            data,
        };
        for n in 0..n_neurons {
            if (0..n_electrodes).all(|e| bank.shape(n, e).iter().all(|&v| v == 0.0)) {
                return Err(Error::Invalid(format!(
                    "neuron {n} has an all-zero template and is unobservable"
                )));
            }
        }
        Ok(bank)
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn n_electrodes(&self) -> usize {
        self.n_electrodes
    }

    pub fn shape_len(&self) -> usize {
        self.shape_len
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Template of neuron `n` on electrode `e`.
    #[inline]
    pub fn shape(&self, n: usize, e: usize) -> &[f64] {
        let start = (n * self.n_electrodes + e) * self.shape_len;
        &self.data[start..start + self.shape_len]
    }

    pub fn is_zero(&self, n: usize, e: usize) -> bool {
        self.shape(n, e).iter().all(|&v| v == 0.0)
    }

    /// Lag-0 energy `sum_e ||w_{n,e}||^2`.
    pub fn energy(&self, n: usize) -> f64 {
        (0..self.n_electrodes)
            .map(|e| self.shape(n, e).iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Restriction to a subset of neurons and electrodes, in the given order.
    pub fn restrict(&self, neurons: &[usize], electrodes: &[usize]) -> Result<ShapeBank> {
        let mut data = Vec::with_capacity(neurons.len() * electrodes.len() * self.shape_len);
        for &n in neurons {
            for &e in electrodes {
                data.extend_from_slice(self.shape(n, e));
            }
        }
        ShapeBank::new(neurons.len(), electrodes.len(), self.shape_len, data)
    }
}

/// Recording `Y`, `E x T`, row-major by electrode.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSignal {
    n_electrodes: usize,
    n_samples: usize,
    data: Vec<f64>,
}

impl MultichannelSignal {
    pub fn new(n_electrodes: usize, n_samples: usize, data: Vec<f64>) -> Result<Self> {
        if n_electrodes == 0 || n_samples == 0 {
            return Err(Error::Invalid("signal needs E, T >= 1".into()));
        }
        if data.len() != n_electrodes * n_samples {
            return Err(Error::Dimension(format!(
                "signal data has {} values, expected {}",
                data.len(),
                n_electrodes * n_samples
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite sample at flat index {i}")));
        }
        Ok(MultichannelSignal {
            n_electrodes,
            n_samples,
            data,
        })
    }

    pub fn zeros(n_electrodes: usize, n_samples: usize) -> Self {
        MultichannelSignal {
            n_electrodes,
            n_samples,
            data: vec![0.0; n_electrodes * n_samples],
        }
    }

    pub fn n_electrodes(&self) -> usize {
        self.n_electrodes
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.data[e * self.n_samples..(e + 1) * self.n_samples]
    }

    pub fn row_mut(&mut self, e: usize) -> &mut [f64] {
        &mut self.data[e * self.n_samples..(e + 1) * self.n_samples]
    }

    #[inline]
    pub fn get(&self, e: usize, t: usize) -> f64 {
        self.data[e * self.n_samples + t]
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn select_rows(&self, electrodes: &[usize]) -> MultichannelSignal {
        let mut data = Vec::with_capacity(electrodes.len() * self.n_samples);
        for &e in electrodes {
            data.extend_from_slice(self.row(e));
        }
        MultichannelSignal {
            n_electrodes: electrodes.len(),
            n_samples: self.n_samples,
            data,
        }
    }

    pub fn sub(&self, other: &MultichannelSignal) -> Result<MultichannelSignal> {
        if self.n_electrodes != other.n_electrodes || self.n_samples != other.n_samples {
            return Err(Error::Dimension("signal shapes differ".into()));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(MultichannelSignal { data, ..*self })
    }
}

/// One nonzero coordinate of an activation vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spike {
    pub neuron: usize,
    pub time: usize,
    pub amplitude: f64,
}

/// Sparse activation vector `a`, entries sorted by `(neuron, time)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseActivation {
    n_neurons: usize,
    n_samples: usize,
    entries: Vec<Spike>,
}

impl SparseActivation {
    pub fn empty(n_neurons: usize, n_samples: usize) -> Self {
        SparseActivation {
            n_neurons,
            n_samples,
            entries: Vec::new(),
        }
    }

    /// Validates an already sorted, duplicate-free list of nonzero entries.
    pub fn new(n_neurons: usize, n_samples: usize, entries: Vec<Spike>) -> Result<Self> {
        for (i, s) in entries.iter().enumerate() {
            if s.neuron >= n_neurons || s.time >= n_samples {
                return Err(Error::Index(format!(
                    "entry ({}, {}) outside {n_neurons} x {n_samples}",
                    s.neuron, s.time
                )));
            }
            if s.amplitude == 0.0 || !s.amplitude.is_finite() {
                return Err(Error::Invalid(format!(
                    "entry ({}, {}) has amplitude {}",
                    s.neuron, s.time, s.amplitude
                )));
            }
            if i > 0 {
                let p = &entries[i - 1];
                if (p.neuron, p.time) >= (s.neuron, s.time) {
                    return Err(Error::Invalid(format!(
                        "entries not strictly sorted at ({}, {})",
                        s.neuron, s.time
                    )));
                }
            }
        }
        Ok(SparseActivation {
            n_neurons,
            n_samples,
            entries,
        })
    }

    /// Sorts the input, drops zeros and sums duplicate coordinates.
    pub fn from_unsorted(
        n_neurons: usize,
        n_samples: usize,
        mut entries: Vec<Spike>,
    ) -> Result<Self> {
        entries.sort_by_key(|s| (s.neuron, s.time));
        let mut merged: Vec<Spike> = Vec::with_capacity(entries.len());
        for s in entries {
            match merged.last_mut() {
                Some(last) if last.neuron == s.neuron && last.time == s.time => {
                    last.amplitude += s.amplitude
                }
                _ => merged.push(s),
            }
        }
        merged.retain(|s| s.amplitude != 0.0);
        SparseActivation::new(n_neurons, n_samples, merged)
    }

    pub fn n_neurons(&self) -> usize {
        self.n_neurons
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn entries(&self) -> &[Spike] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, neuron: usize, time: usize) -> f64 {
        self.entries
            .binary_search_by_key(&(neuron, time), |s| (s.neuron, s.time))
            .map(|i| self.entries[i].amplitude)
            .unwrap_or(0.0)
    }

    /// Support as `(neuron, time)` pairs in storage order.
    pub fn support(&self) -> Vec<(usize, usize)> {
        self.entries.iter().map(|s| (s.neuron, s.time)).collect()
    }

    pub fn l1_norm(&self) -> f64 {
        self.entries.iter().map(|s| s.amplitude.abs()).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_neurons * self.n_samples];
        for s in &self.entries {
            out[s.neuron * self.n_samples + s.time] = s.amplitude;
        }
        out
    }

    /// Vectorized `a` (neuron-major) back to sparse form; exact zeros dropped.
    pub fn from_dense(n_neurons: usize, n_samples: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != n_neurons * n_samples {
            return Err(Error::Dimension("dense activation length".into()));
        }
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, &v)| Spike {
                neuron: i / n_samples,
                time: i % n_samples,
                amplitude: v,
            })
            .collect();
        SparseActivation::new(n_neurons, n_samples, entries)
    }

    /// Entries with time inside `window`.
    pub fn restrict_to(&self, window: Window) -> SparseActivation {
        let entries = self
            .entries
            .iter()
            .filter(|s| window.contains(s.time))
            .copied()
            .collect();
        SparseActivation { entries, ..*self }
    }

    /// Renames neurons via `map[local] = global` into an `n_neurons`-wide vector.
    pub fn reindex(&self, map: &[usize], n_neurons: usize) -> Result<SparseActivation> {
        let entries = self
            .entries
            .iter()
            .map(|s| Spike {
                neuron: map[s.neuron],
                ..*s
            })
            .collect();
        SparseActivation::from_unsorted(n_neurons, self.n_samples, entries)
    }

    /// Largest absolute amplitude difference, counting missing entries as zero.
    pub fn max_abs_diff(&self, other: &SparseActivation) -> f64 {
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.entries, &other.entries);
        let mut worst: f64 = 0.0;
        while i < a.len() || j < b.len() {
            let ka = a.get(i).map(|s| (s.neuron, s.time));
            let kb = b.get(j).map(|s| (s.neuron, s.time));
            match (ka, kb) {
                (Some(x), Some(y)) if x == y => {
                    worst = worst.max((a[i].amplitude - b[j].amplitude).abs());
                    i += 1;
                    j += 1;
                }
                (Some(x), Some(y)) if x < y => {
                    worst = worst.max(a[i].amplitude.abs());
                    i += 1;
                }
                (Some(_), None) => {
                    worst = worst.max(a[i].amplitude.abs());
                    i += 1;
                }
                _ => {
                    worst = worst.max(b[j].amplitude.abs());
                    j += 1;
                }
            }
        }
        worst
    }
}

/// Dense `N x T` array, neuron-major (e.g. correlations `H^T r`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseActivation {
    pub n_neurons: usize,
    pub n_samples: usize,
    pub data: Vec<f64>,
}

impl DenseActivation {
    pub fn zeros(n_neurons: usize, n_samples: usize) -> Self {
        DenseActivation {
            n_neurons,
            n_samples,
            data: vec![0.0; n_neurons * n_samples],
        }
    }

    #[inline]
    pub fn get(&self, n: usize, t: usize) -> f64 {
        self.data[n * self.n_samples + t]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.n_samples..(n + 1) * self.n_samples]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Half-open temporal interval `[start, end)` of sample indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub end: usize,
}

impl Window {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::Invalid(format!("empty window [{start}, {end})")));
        }
        Ok(Window { start, end })
    }

    /// Window covering the whole signal.
    pub fn full(n_samples: usize) -> Self {
        Window {
            start: 0,
            end: n_samples,
        }
    }

    /// Converts 1-based inclusive bounds `[[first, last]]`.
    pub fn from_inclusive_one_based(first: usize, last: usize) -> Result<Self> {
        if first == 0 {
            return Err(Error::Invalid("one-based window starts at 1".into()));
        }
        Window::new(first - 1, last)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    #[inline]
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end
    }
}
