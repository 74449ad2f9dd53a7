//! Greedy working-set Lasso: repeatedly activate the coordinate with the
//! largest KKT violation and re-solve the Lasso on the active columns.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dense::{DenseOperator, DEFAULT_MEMORY_CAP};
use crate::error::{Error, Result};
use crate::lasso::{solve_reduced, to_activation, LassoConfig, Subproblem};
use crate::operator::{gram_band, GramBand, SignalSegment};
use crate::signal::{MultichannelSignal, ShapeBank, SparseActivation, Spike, Window};

/// How correlations and reduced problems are computed. Both variants
/// return the same solution; only cost differs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Materializes the dense design matrix.
    Naive,
    /// Works through direct convolutions and the Gram band.
    Convolutional,
}

#[derive(Debug, Clone)]
pub struct WorkingSetOutput {
    /// Full-length solution (coordinates outside the scope are carried over
    /// from the warm start unchanged).
    pub solution: SparseActivation,
    /// Working set `J`, including members that ended at zero.
    pub working_set: Vec<(usize, usize)>,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
}

/// Reusable solver bound to one shape bank.
#[derive(Debug, Clone)]
pub struct WorkingSetSolver<'a> {
    shapes: &'a ShapeBank,
    band: GramBand,
    variant: Variant,
    memory_cap: u64,
}

impl<'a> WorkingSetSolver<'a> {
    pub fn new(shapes: &'a ShapeBank, variant: Variant) -> Self {
        WorkingSetSolver {
            shapes,
            band: gram_band(shapes),
            variant,
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }

    pub fn with_memory_cap(mut self, bytes: u64) -> Self {
        self.memory_cap = bytes;
        self
    }

    pub fn band(&self) -> &GramBand {
        &self.band
    }

    pub fn shapes(&self) -> &ShapeBank {
        self.shapes
    }

    /// Optimizes the coordinates with time in `scope` (default: all),
    /// holding warm-start entries outside the scope fixed.
    pub fn solve(
        &self,
        y: &MultichannelSignal,
        cfg: &LassoConfig,
        scope: Option<Window>,
        warm_start: Option<&SparseActivation>,
    ) -> Result<WorkingSetOutput> {
        cfg.validate()?;
        let shapes = self.shapes;
        let t_len = y.n_samples();
        if y.n_electrodes() != shapes.n_electrodes() {
            return Err(Error::Dimension(format!(
                "signal has {} electrodes, shape bank {}",
                y.n_electrodes(),
                shapes.n_electrodes()
            )));
        }
        let scope = scope.unwrap_or(Window::full(t_len));
        if scope.is_empty() || scope.end > t_len {
            return Err(Error::Index(format!(
                "scope [{}, {}) not within [0, {t_len})",
                scope.start, scope.end
            )));
        }
        let empty = SparseActivation::empty(shapes.n_neurons(), t_len);
        let warm = warm_start.unwrap_or(&empty);
        if warm.n_neurons() != shapes.n_neurons() || warm.n_samples() != t_len {
            return Err(Error::Dimension("warm start dimensions".into()));
        }
        let (inside, outside): (Vec<Spike>, Vec<Spike>) =
            warm.entries().iter().partition(|s| scope.contains(s.time));
        let mut state = match self.variant {
            Variant::Convolutional => Backend::conv(self, y, scope, &outside),
            Variant::Naive => Backend::naive(self, y, scope, &outside)?,
        };
        let out = greedy_loop(&mut state, shapes, cfg, scope, &inside, t_len);
        let merge = |sol: &SparseActivation| -> Result<SparseActivation> {
            let mut entries = outside.clone();
            entries.extend_from_slice(sol.entries());
            SparseActivation::from_unsorted(shapes.n_neurons(), t_len, entries)
        };
        match out {
            Ok(mut o) => {
                o.solution = merge(&o.solution)?;
                Ok(o)
            }
            Err(Error::Budget { reason, partial }) => Err(Error::Budget {
                reason,
                partial: Box::new(merge(&partial)?),
            }),
            Err(e) => Err(e),
        }
    }
}

/// Working set over the whole signal (or `scope`).
pub fn solve_working_set(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    cfg: &LassoConfig,
    scope: Option<Window>,
    variant: Variant,
    warm_start: Option<&SparseActivation>,
) -> Result<(SparseActivation, Vec<(usize, usize)>)> {
    let out = WorkingSetSolver::new(shapes, variant).solve(y, cfg, scope, warm_start)?;
    Ok((out.solution, out.working_set))
}

/// Per-variant arithmetic for one scoped solve.
enum Backend<'s, 'a> {
    Conv {
        solver: &'s WorkingSetSolver<'a>,
        /// `y` minus fixed contributions, rows the scope's columns reach.
        target: SignalSegment,
    },
    Naive {
        dense: DenseOperator,
        /// `y` minus fixed contributions, vectorized electrode-major.
        target: Vec<f64>,
    },
}

impl<'s, 'a> Backend<'s, 'a> {
    fn conv(
        solver: &'s WorkingSetSolver<'a>,
        y: &MultichannelSignal,
        scope: Window,
        fixed: &[Spike],
    ) -> Self {
        let l = solver.shapes.shape_len();
        let hi = (scope.end + l - 1).min(y.n_samples());
        let mut target = SignalSegment::copy_from(y, scope.start, hi);
        target.add_spikes(
            solver.shapes,
            fixed
                .iter()
                .filter(|s| s.time + l > scope.start && s.time < hi)
                .map(|s| (s.neuron, s.time, s.amplitude)),
            -1.0,
        );
        Backend::Conv { solver, target }
    }

    fn naive(
        solver: &'s WorkingSetSolver<'a>,
        y: &MultichannelSignal,
        _scope: Window,
        fixed: &[Spike],
    ) -> Result<Self> {
        let dense = DenseOperator::build(solver.shapes, y.n_samples(), solver.memory_cap)?;
        let mut target = y.data().to_vec();
        for s in fixed {
            dense.axpy(s.neuron, s.time, -s.amplitude, &mut target);
        }
        Ok(Backend::Naive { dense, target })
    }

    /// Correlations with the current residual for every `t` in `scope`,
    /// neuron-major.
    fn correlations(
        &self,
        shapes: &ShapeBank,
        scope: Window,
        cols: &[(usize, usize)],
        values: &[f64],
    ) -> Result<Vec<f64>> {
        match self {
            Backend::Conv { target, .. } => {
                let mut residual = target.clone();
                residual.add_spikes(
                    shapes,
                    cols.iter().zip(values).map(|(&(n, t), &a)| (n, t, a)),
                    -1.0,
                );
                residual.adjoint(shapes, scope)
            }
            Backend::Naive { dense, target } => {
                let mut residual = target.clone();
                for (&(n, t), &a) in cols.iter().zip(values) {
                    if a != 0.0 {
                        dense.axpy(n, t, -a, &mut residual);
                    }
                }
                let mut g = Vec::with_capacity(shapes.n_neurons() * scope.len());
                for n in 0..shapes.n_neurons() {
                    for t in scope.start..scope.end {
                        g.push(dense.column_dot(n, t, &residual));
                    }
                }
                Ok(g)
            }
        }
    }

    fn subproblem(&self, shapes: &ShapeBank, cols: Vec<(usize, usize)>) -> Subproblem {
        match self {
            Backend::Conv { solver, target } => {
                Subproblem::from_operator(shapes, &solver.band, target, cols)
            }
            Backend::Naive { dense, target } => Subproblem::build(
                cols,
                shapes.shape_len(),
                target.iter().map(|v| v * v).sum(),
                |n, t| dense.column_dot(n, t, target),
                |(n, t), (n2, t2)| dense.column_dot(n, t, dense.column(n2, t2)),
            ),
        }
    }
}

fn greedy_loop(
    backend: &mut Backend<'_, '_>,
    shapes: &ShapeBank,
    cfg: &LassoConfig,
    scope: Window,
    warm_inside: &[Spike],
    t_len: usize,
) -> Result<WorkingSetOutput> {
    let nn = shapes.n_neurons();
    // J in (time, neuron) order, aligned with `values`
    let mut cols: Vec<(usize, usize)> = warm_inside.iter().map(|s| (s.neuron, s.time)).collect();
    let mut values: Vec<f64> = Vec::new();
    let mut in_set: HashSet<(usize, usize)> = cols.iter().copied().collect();
    let mut inner_iterations = 0;

    let resolve = |cols: Vec<(usize, usize)>,
                       warm: &[(usize, usize, f64)],
                       inner_iterations: &mut usize|
     -> Result<(Vec<(usize, usize)>, Vec<f64>)> {
        let sub = backend.subproblem(shapes, cols);
        let mut x0 = vec![0.0; sub.cols.len()];
        for &(n, t, a) in warm {
            if let Ok(i) = sub.cols.binary_search_by_key(&(t, n), |&(n, t)| (t, n)) {
                x0[i] = a;
            }
        }
        let sol = solve_reduced(&sub, &x0, cfg)?.into_result(&sub.cols, nn, t_len)?;
        *inner_iterations += sol.iterations;
        Ok((sub.cols, sol.values))
    };

    if !cols.is_empty() {
        let warm: Vec<(usize, usize, f64)> =
            warm_inside.iter().map(|s| (s.neuron, s.time, s.amplitude)).collect();
        let (c, v) = resolve(cols, &warm, &mut inner_iterations)?;
        cols = c;
        values = v;
    }

    let mut outer = 0;
    loop {
        let g = backend.correlations(shapes, scope, &cols, &values)?;
        let w_len = scope.len();
        let mut best: Option<((usize, usize), f64)> = None;
        for n in 0..nn {
            for (i, &gv) in g[n * w_len..(n + 1) * w_len].iter().enumerate() {
                let t = scope.start + i;
                if best.map_or(true, |(_, b)| gv.abs() > b) && !in_set.contains(&(n, t)) {
                    best = Some(((n, t), gv.abs()));
                }
            }
        }
        let Some((j0, gmax)) = best else { break };
        if gmax < cfg.lambda + cfg.kkt_tol {
            break;
        }
        if outer >= cfg.max_outer_activations {
            let partial = to_activation(&cols, &values, nn, t_len)?;
            return Err(Error::Budget {
                reason: format!("{outer} activations without meeting the KKT tolerance"),
                partial: Box::new(partial),
            });
        }
        outer += 1;
        in_set.insert(j0);
        let warm: Vec<(usize, usize, f64)> = cols
            .iter()
            .zip(&values)
            .map(|(&(n, t), &a)| (n, t, a))
            .collect();
        let mut next = cols.clone();
        next.push(j0);
        let (c, v) = resolve(next, &warm, &mut inner_iterations)?;
        cols = c;
        values = v;
    }
    let solution = to_activation(&cols, &values, nn, t_len)?;
    let mut working_set = cols;
    working_set.sort_unstable();
    Ok(WorkingSetOutput {
        solution,
        working_set,
        outer_iterations: outer,
        inner_iterations,
    })
}

/// Single accelerated proximal-gradient solve over all `N*T` coordinates
/// using a precomputed dense `H` (no working set).
pub fn solve_global(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    cfg: &LassoConfig,
    memory_cap: u64,
) -> Result<SparseActivation> {
    cfg.validate()?;
    let t_len = y.n_samples();
    if y.n_electrodes() != shapes.n_electrodes() {
        return Err(Error::Dimension("signal and shape bank electrode counts differ".into()));
    }
    let dense = DenseOperator::build(shapes, t_len, memory_cap)?;
    let target = y.data();
    let cols: Vec<(usize, usize)> = (0..shapes.n_neurons())
        .flat_map(|n| (0..t_len).map(move |t| (n, t)))
        .collect();
    let sub = Subproblem::build(
        cols,
        shapes.shape_len(),
        y.frobenius_sq(),
        |n, t| dense.column_dot(n, t, target),
        |(n, t), (n2, t2)| dense.column_dot(n, t, dense.column(n2, t2)),
    );
    let x0 = vec![0.0; sub.cols.len()];
    let sol = solve_reduced(&sub, &x0, cfg)?.into_result(&sub.cols, shapes.n_neurons(), t_len)?;
    to_activation(&sub.cols, &sol.values, shapes.n_neurons(), t_len)
}
