//! Spatial decomposition: neurons that never share an active electrode
//! give decoupled Lasso problems.

use std::io::Write;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::LassoConfig;
use crate::pool::map_ordered;
use crate::signal::{MultichannelSignal, ShapeBank, SparseActivation, Spike};
use crate::sliding::solve_sliding;
use crate::working_set::{solve_working_set, Variant};

/// Neurons `n` and `n2` are independent when no electrode carries a nonzero
/// template for both.
pub fn neuron_independence(shapes: &ShapeBank, n: usize, n2: usize) -> bool {
    (0..shapes.n_electrodes()).all(|e| shapes.is_zero(n, e) || shapes.is_zero(n2, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub neurons: Vec<usize>,
    pub electrodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterPartition {
    pub clusters: Vec<Cluster>,
    /// Amplitude at or below which a template was treated as zero.
    #[serde(default)]
    pub threshold: f64,
}

impl ClusterPartition {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Cluster index of every neuron.
    pub fn labels(&self, n_neurons: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n_neurons];
        for (c, cl) in self.clusters.iter().enumerate() {
            for &n in &cl.neurons {
                out[n] = c;
            }
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.neurons.len()).collect()
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Connected components of the shared-electrode graph.
pub fn cluster_neurons(shapes: &ShapeBank) -> ClusterPartition {
    cluster_neurons_with_threshold(shapes, 0.0)
}

/// As [`cluster_neurons`], treating templates with `|w| <= threshold` on an
/// electrode as absent there.
pub fn cluster_neurons_with_threshold(shapes: &ShapeBank, threshold: f64) -> ClusterPartition {
    let (nn, ne) = (shapes.n_neurons(), shapes.n_electrodes());
    let active = |n: usize, e: usize| shapes.shape(n, e).iter().any(|v| v.abs() > threshold);
    let mut uf = UnionFind::<usize>::new(nn);
    for e in 0..ne {
        let mut first = None;
        for n in 0..nn {
            if active(n, e) {
                match first {
                    None => first = Some(n),
                    Some(f) => {
                        uf.union(f, n);
                    }
                }
            }
        }
    }
    let labels = uf.into_labeling();
    let mut by_root: Vec<Option<usize>> = vec![None; nn];
    let mut clusters: Vec<Cluster> = Vec::new();
    for n in 0..nn {
        let c = *by_root[labels[n]].get_or_insert_with(|| {
            clusters.push(Cluster {
                neurons: Vec::new(),
                electrodes: Vec::new(),
            });
            clusters.len() - 1
        });
        clusters[c].neurons.push(n);
    }
    for cl in &mut clusters {
        cl.electrodes = (0..ne)
            .filter(|&e| cl.neurons.iter().any(|&n| active(n, e)))
            .collect();
    }
    ClusterPartition {
        clusters,
        threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterSolver {
    Sliding,
    WorkingSet,
}

/// Solves every cluster of the exact partition separately and merges.
pub fn solve_clustered(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    cfg: &LassoConfig,
    solver: ClusterSolver,
) -> Result<SparseActivation> {
    solve_partitioned(shapes, y, cfg, solver, &cluster_neurons(shapes), 1)
}

/// Solves the restricted problem of each cluster of `partition` on up to
/// `workers` threads.
pub fn solve_partitioned(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    cfg: &LassoConfig,
    solver: ClusterSolver,
    partition: &ClusterPartition,
    workers: usize,
) -> Result<SparseActivation> {
    let (nn, t_len) = (shapes.n_neurons(), y.n_samples());
    if y.n_electrodes() != shapes.n_electrodes() {
        return Err(Error::Dimension(format!(
            "signal has {} electrodes, shape bank {}",
            y.n_electrodes(),
            shapes.n_electrodes()
        )));
    }
    let labels = partition.labels(nn);
    if labels.iter().any(|&c| c == usize::MAX)
        || partition.clusters.iter().map(|c| c.neurons.len()).sum::<usize>() != nn
    {
        return Err(Error::Invalid("partition does not cover every neuron exactly once".into()));
    }

    let solve_one = |c: usize| -> Result<Vec<Spike>> {
        let cl = &partition.clusters[c];
        if cl.electrodes.is_empty() {
            return Ok(Vec::new());
        }
        let sub_shapes = shapes.restrict(&cl.neurons, &cl.electrodes)?;
        let sub_y = y.select_rows(&cl.electrodes);
        let sol = match solver {
            ClusterSolver::Sliding => solve_sliding(&sub_shapes, &sub_y, cfg)?.solution,
            ClusterSolver::WorkingSet => {
                solve_working_set(&sub_shapes, &sub_y, cfg, None, Variant::Convolutional, None)?.0
            }
        };
        Ok(sol.reindex(&cl.neurons, nn)?.entries().to_vec())
    };
    let wrap = |c: usize, r: Result<Vec<Spike>>| {
        r.map_err(|e| Error::InCluster {
            cluster: c,
            source: Box::new(e),
        })
    };

    let results = map_ordered(partition.clusters.len(), workers, solve_one);
    let mut spikes = Vec::new();
    for (c, r) in results.into_iter().enumerate() {
        spikes.extend(wrap(c, r)?);
    }
    SparseActivation::from_unsorted(nn, t_len, spikes)
}
