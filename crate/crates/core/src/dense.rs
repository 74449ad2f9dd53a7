//! Explicit `ET x NT` design matrix, used by the naive working set and the
//! global solver baselines.

use crate::error::{Error, Result};
use crate::signal::ShapeBank;

/// Default cap on the materialized matrix: 2 GiB.
pub const DEFAULT_MEMORY_CAP: u64 = 2 << 30;

/// Bytes needed for a dense `H` of `E*T x N*T` doubles.
pub fn dense_bytes(n_electrodes: usize, n_neurons: usize, n_samples: usize) -> u128 {
    8 * (n_electrodes as u128) * (n_samples as u128) * (n_neurons as u128) * (n_samples as u128)
}

/// Column-major `H`; column `n * T + t` is `h_{n,t}` in electrode-major row order.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub n_neurons: usize,
    pub n_electrodes: usize,
    pub n_samples: usize,
    data: Vec<f64>,
}

impl DenseOperator {
    pub fn build(shapes: &ShapeBank, n_samples: usize, memory_cap: u64) -> Result<Self> {
        let (nn, ne, l) = (shapes.n_neurons(), shapes.n_electrodes(), shapes.shape_len());
        let need = dense_bytes(ne, nn, n_samples);
        if need > memory_cap as u128 {
            return Err(Error::Capacity(format!(
                "dense operator needs {need} bytes, cap is {memory_cap}"
            )));
        }
        let rows = ne * n_samples;
        let mut data = vec![0.0; rows * nn * n_samples];
        for n in 0..nn {
            for t in 0..n_samples {
                let col = &mut data[(n * n_samples + t) * rows..(n * n_samples + t + 1) * rows];
                for e in 0..ne {
                    let w = shapes.shape(n, e);
                    for k in 0..l.min(n_samples - t) {
                        col[e * n_samples + t + k] = w[k];
                    }
                }
            }
        }
        Ok(DenseOperator {
            n_neurons: nn,
            n_electrodes: ne,
            n_samples,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.n_electrodes * self.n_samples
    }

    pub fn column(&self, n: usize, t: usize) -> &[f64] {
        let rows = self.rows();
        let c = n * self.n_samples + t;
        &self.data[c * rows..(c + 1) * rows]
    }

    pub fn column_dot(&self, n: usize, t: usize, v: &[f64]) -> f64 {
        self.column(n, t).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// `v += scale * h_{n,t}`
    pub fn axpy(&self, n: usize, t: usize, scale: f64, v: &mut [f64]) {
        for (o, c) in v.iter_mut().zip(self.column(n, t)) {
            *o += scale * c;
        }
    }
}
