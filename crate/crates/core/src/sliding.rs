//! Online sliding-window working set.
//!
//! A window of `4l` samples is solved with the working set; depending on
//! where the support lands the window is finalized and moved on, extended
//! to the right, or merged with the previous finalized window. Finalized
//! windows hold no support in their last `2l` samples, which makes their
//! solutions independent of everything to the right, so the concatenated
//! result solves the whole Lasso.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso::LassoConfig;
use crate::signal::{MultichannelSignal, ShapeBank, SparseActivation, Spike, Window};
use crate::working_set::{Variant, WorkingSetSolver};

/// Where a window's support sits relative to its guard zones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SupportClass {
    /// Inside `[start + l, end - 2l)`: the window is an independent problem.
    Independent,
    /// Some activation in the first `l` samples.
    TouchesLeft,
    /// Some activation in the last `2l` samples.
    TouchesRight,
}

/// Classifies the activation times `support` of window `window`.
///
/// The left guard is waived at `start == 0` and the right guard at
/// `end == n_samples`.
pub fn classify_support(
    support: &[usize],
    window: Window,
    shape_len: usize,
    n_samples: usize,
) -> SupportClass {
    let left_guard = if window.start == 0 { 0 } else { shape_len };
    let lo = window.start + left_guard;
    let hi = if window.end >= n_samples {
        window.end
    } else {
        window.end.saturating_sub(2 * shape_len)
    };
    if support.iter().all(|&t| lo <= t && t < hi) {
        SupportClass::Independent
    } else if support.iter().any(|&t| t < lo) {
        SupportClass::TouchesLeft
    } else {
        SupportClass::TouchesRight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowAction {
    SolvedIndependent,
    Extended,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub window_start: usize,
    pub window_end: usize,
    pub action: WindowAction,
    pub support_size: usize,
    pub inner_iters: usize,
    pub wall_ns: u64,
}

/// Every window transition, in execution order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WindowTrace {
    pub records: Vec<TraceRecord>,
}

impl WindowTrace {
    pub fn count(&self, action: WindowAction) -> usize {
        self.records.iter().filter(|r| r.action == action).count()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlidingOptions {
    /// Longest window allowed before giving up; default `T`.
    pub max_window_len: Option<usize>,
    pub variant: Variant,
}

impl Default for SlidingOptions {
    fn default() -> Self {
        SlidingOptions {
            max_window_len: None,
            variant: Variant::Convolutional,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SlidingOutput {
    pub solution: SparseActivation,
    /// Finalized windows, ordered by start.
    pub windows: Vec<Window>,
    pub trace: WindowTrace,
}

/// Sliding-window working set over the whole recording.
pub fn solve_sliding(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    cfg: &LassoConfig,
) -> Result<SlidingOutput> {
    solve_sliding_with(shapes, y, cfg, SlidingOptions::default())
}

pub fn solve_sliding_with(
    shapes: &ShapeBank,
    y: &MultichannelSignal,
    cfg: &LassoConfig,
    opts: SlidingOptions,
) -> Result<SlidingOutput> {
    cfg.validate()?;
    let t_len = y.n_samples();
    let l = shapes.shape_len();
    let nn = shapes.n_neurons();
    let max_len = opts.max_window_len.unwrap_or(t_len).max(1);
    let solver = WorkingSetSolver::new(shapes, opts.variant);

    // Solutions of finalized windows, in window order.
    let mut finalized: Vec<(Window, Vec<Spike>)> = Vec::new();
    let mut trace = WindowTrace::default();
    let mut window = Window {
        start: 0,
        end: (4 * l).min(t_len),
    };
    // Warm start for the current window.
    let mut current: Vec<Spike> = Vec::new();

    loop {
        let started = Instant::now();
        // Only the previous finalized window can reach into this one.
        let mut context: Vec<Spike> = finalized
            .last()
            .map(|(_, s)| s.iter().filter(|s| s.time + l > window.start).copied().collect())
            .unwrap_or_default();
        context.extend_from_slice(&current);
        let warm = SparseActivation::from_unsorted(nn, t_len, context)?;
        let out = solver
            .solve(y, cfg, Some(window), Some(&warm))
            .map_err(|e| Error::InWindow {
                start: window.start,
                end: window.end,
                source: Box::new(e),
            })?;
        current = out
            .solution
            .entries()
            .iter()
            .filter(|s| window.contains(s.time))
            .copied()
            .collect();
        let times: Vec<usize> = current.iter().map(|s| s.time).collect();
        let class = classify_support(&times, window, l, t_len);
        let action = match class {
            SupportClass::Independent => WindowAction::SolvedIndependent,
            SupportClass::TouchesLeft => WindowAction::Merged,
            SupportClass::TouchesRight => WindowAction::Extended,
        };
        trace.records.push(TraceRecord {
            window_start: window.start,
            window_end: window.end,
            action,
            support_size: current.len(),
            inner_iters: out.inner_iterations,
            wall_ns: started.elapsed().as_nanos().max(1) as u64,
        });
        match class {
            SupportClass::Independent => {
                let done = window.end >= t_len;
                let end = window.end;
                finalized.push((window, std::mem::take(&mut current)));
                if done {
                    break;
                }
                window = Window {
                    start: end - l,
                    end: (end + 3 * l).min(t_len),
                };
            }
            SupportClass::TouchesLeft => {
                let (prev, prev_spikes) = finalized
                    .pop()
                    .expect("left guard is waived for windows starting at 0");
                let mut merged = prev_spikes;
                merged.extend(current.drain(..));
                current = merged;
                window = Window {
                    start: prev.start,
                    end: window.end,
                };
            }
            SupportClass::TouchesRight => {
                debug_assert!(window.end < t_len);
                window = Window {
                    start: window.start,
                    end: (window.end + l).min(t_len),
                };
            }
        }
        if window.len() > max_len {
            let mut spikes: Vec<Spike> = finalized.iter().flat_map(|(_, s)| s.iter().copied()).collect();
            spikes.extend_from_slice(&current);
            return Err(Error::Budget {
                reason: format!(
                    "window [{}, {}) grew past the maximum length {max_len}",
                    window.start, window.end
                ),
                partial: Box::new(SparseActivation::from_unsorted(nn, t_len, spikes)?),
            });
        }
    }

    let windows = finalized.iter().map(|(w, _)| *w).collect();
    let spikes = finalized.into_iter().flat_map(|(_, s)| s).collect();
    Ok(SlidingOutput {
        solution: SparseActivation::from_unsorted(nn, t_len, spikes)?,
        windows,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_examples() {
        let l = 30;
        // one-based [[1, 120]] is [0, 120); one-based time 60 is sample 59
        let w = Window::from_inclusive_one_based(1, 120).unwrap();
        assert_eq!(classify_support(&[59], w, l, 10_000), SupportClass::Independent);
        assert_eq!(classify_support(&[99], w, l, 10_000), SupportClass::TouchesRight);
        assert_eq!(classify_support(&[], w, l, 10_000), SupportClass::Independent);
        // left guard waived at the start of the signal
        assert_eq!(classify_support(&[9], w, l, 10_000), SupportClass::Independent);
        let shifted = Window::new(90, 210).unwrap();
        assert_eq!(classify_support(&[99], shifted, l, 10_000), SupportClass::TouchesLeft);
        assert_eq!(classify_support(&[149], shifted, l, 10_000), SupportClass::Independent);
        assert_eq!(classify_support(&[150], shifted, l, 10_000), SupportClass::TouchesRight);
        // right guard waived at the end of the signal
        assert_eq!(classify_support(&[200], shifted, l, 210), SupportClass::Independent);
        assert_eq!(classify_support(&[95, 200], shifted, l, 10_000), SupportClass::TouchesLeft);
    }

    #[test]
    fn zero_signal_slides_to_the_end() {
        let shapes = ShapeBank::new(1, 1, 5, vec![1.0, 0.5, 0.1, -0.2, -0.1]).unwrap();
        let y = MultichannelSignal::zeros(1, 200);
        let cfg = LassoConfig::new(0.1, 1e-6).unwrap();
        let out = solve_sliding(&shapes, &y, &cfg).unwrap();
        assert!(out.solution.is_empty());
        assert!(out
            .trace
            .records
            .iter()
            .all(|r| r.action == WindowAction::SolvedIndependent));
        assert_eq!(out.windows.first().unwrap().start, 0);
        assert_eq!(out.windows.last().unwrap().end, 200);
    }

    #[test]
    fn short_signal_is_one_window() {
        let shapes = ShapeBank::new(1, 1, 5, vec![1.0, 0.5, 0.1, -0.2, -0.1]).unwrap();
        let y = MultichannelSignal::new(1, 7, vec![0.0, 1.0, 0.5, 0.1, -0.2, -0.1, 0.0]).unwrap();
        let cfg = LassoConfig::new(0.1, 1e-6).unwrap();
        let out = solve_sliding(&shapes, &y, &cfg).unwrap();
        assert_eq!(out.windows, vec![Window { start: 0, end: 7 }]);
        assert!(out.solution.get(0, 1) > 0.8);
    }

    #[test]
    fn trace_jsonl_has_one_line_per_record() {
        let shapes = ShapeBank::new(1, 1, 3, vec![1.0, 0.5, 0.1]).unwrap();
        let y = MultichannelSignal::zeros(1, 50);
        let cfg = LassoConfig::new(0.1, 1e-6).unwrap();
        let out = solve_sliding(&shapes, &y, &cfg).unwrap();
        let mut buf = Vec::new();
        out.trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), out.trace.records.len());
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["window_start", "window_end", "action", "support_size", "inner_iters", "wall_ns"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
    }
}
