//! Synthetic ground truth: templates, refractory spike trains and noise.
//!
//! Every draw is a pure function of the configuration and its seed. Each
//! generation step reads its own ChaCha8 stream so changing, say, the
//! noise level leaves the spike train untouched.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::forward_model;
use crate::signal::{MultichannelSignal, ShapeBank, SparseActivation, Spike};

/// Identifier of the generator behind every draw.
pub const RNG_ID: &str = "ChaCha8Rng(rand_chacha 0.3, seed_from_u64, per-stage streams)";

const STREAM_SHAPES: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Distance at which the gain of a free-floating neuron halves.
const NEAR_FIELD: f64 = 1.5;
const DELAY_PER_UNIT: f64 = 3.0;

fn near_field_gain(d: f64) -> f64 {
    1.0 / (1.0 + (d / NEAR_FIELD).powi(2))
}

/// Electrode lattice and neuron placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Lattice pitch `delta`.
    pub pitch: f64,
    /// Detection radius `r0`.
    pub radius: f64,
    /// Poisson intensity of neurons per unit area.
    pub intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_neurons: usize,
    pub n_electrodes: usize,
    pub n_samples: usize,
    pub shape_len: usize,
    /// Aggregate spike probability per sample, shared by all neurons.
    pub firing_prob: f64,
    pub noise_sigma: f64,
    pub amplitude_range: (f64, f64),
    pub geometry: Option<Geometry>,
    pub seed: u64,
    /// Fraction of firing events that hit two distinct neurons at once.
    pub sync_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_neurons: 5,
            n_electrodes: 4,
            n_samples: 100_000,
            shape_len: 30,
            firing_prob: 0.01,
            noise_sigma: 0.05,
            amplitude_range: (0.8, 1.2),
            geometry: None,
            seed: 0,
            sync_fraction: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_neurons == 0 || self.n_electrodes == 0 || self.n_samples == 0 || self.shape_len == 0 {
            return bad("N, E, T and l must all be positive".into());
        }
        if !(self.firing_prob > 0.0 && self.firing_prob <= 0.5) {
            return bad(format!("firing_prob {} outside (0, 1/2]", self.firing_prob));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma {} must be finite and nonnegative", self.noise_sigma));
        }
        let (lo, hi) = self.amplitude_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("amplitude_range [{lo}, {hi}] must satisfy 0 < lo <= hi"));
        }
        if !(0.0..=1.0).contains(&self.sync_fraction) {
            return bad(format!("sync_fraction {} outside [0, 1]", self.sync_fraction));
        }
        if let Some(g) = &self.geometry {
            if lattice_side(self.n_electrodes).is_none() {
                return bad(format!(
                    "a lattice needs a square electrode count, got {}",
                    self.n_electrodes
                ));
            }
            if !(g.pitch > 0.0 && g.radius >= 0.0 && g.intensity > 0.0) {
                return bad("geometry needs pitch > 0, radius >= 0, intensity > 0".into());
            }
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

fn lattice_side(e: usize) -> Option<usize> {
    let s = (e as f64).sqrt().round() as usize;
    (s * s == e).then_some(s)
}

/// One firing event before refractory erasure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time: usize,
    pub first: usize,
    pub second: Option<usize>,
}

/// Raw events: a Bernoulli(p) draw per sample, each event assigned to a
/// uniform neuron, and with probability `sync_fraction` also to a second,
/// distinct one.
pub fn draw_events(cfg: &SimConfig) -> Result<Vec<Event>> {
    cfg.validate()?;
    Ok(draw_events_with(cfg, &mut cfg.rng(STREAM_TRAIN)))
}

fn draw_events_with(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<Event> {
    let nn = cfg.n_neurons;
    let mut out = Vec::new();
    for t in 0..cfg.n_samples {
        if !rng.gen_bool(cfg.firing_prob) {
            continue;
        }
        let first = rng.gen_range(0..nn);
        let second = if nn >= 2 && cfg.sync_fraction > 0.0 && rng.gen_bool(cfg.sync_fraction) {
            let mut s = rng.gen_range(0..nn - 1);
            if s >= first {
                s += 1;
            }
            Some(s)
        } else {
            None
        };
        out.push(Event { time: t, first, second });
    }
    out
}

/// Ground-truth activations. Events hitting a neuron that fired within
/// the last `l` samples are erased whole, so same-neuron spikes are at
/// least `l + 1` apart and a synchronized event always lands on exactly
/// two neurons.
pub fn gen_spike_train(cfg: &SimConfig) -> Result<SparseActivation> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_TRAIN);
    let events = draw_events_with(cfg, &mut rng);
    let (lo, hi) = cfg.amplitude_range;
    let l = cfg.shape_len;
    let mut last: Vec<Option<usize>> = vec![None; cfg.n_neurons];
    let free = |last: &[Option<usize>], n: usize, t: usize| last[n].map_or(true, |p| t - p > l);
    let mut spikes = Vec::new();
    for ev in events {
        let ok = free(&last, ev.first, ev.time) && ev.second.map_or(true, |s| free(&last, s, ev.time));
        if !ok {
            continue;
        }
        for n in std::iter::once(ev.first).chain(ev.second) {
            last[n] = Some(ev.time);
            spikes.push(Spike {
                neuron: n,
                time: ev.time,
                amplitude: if lo == hi { lo } else { rng.gen_range(lo..=hi) },
            });
        }
    }
    SparseActivation::from_unsorted(cfg.n_neurons, cfg.n_samples, spikes)
}

/// Biphasic template: a positive Gaussian bump followed by a wider,
/// shallower negative one, scaled so its peak magnitude is 1.
fn biphasic(l: usize, delay: f64, width: f64, asym: f64, depth: f64) -> Vec<f64> {
    let c = 0.3 * l as f64 + delay;
    let c2 = c + 2.0 * width;
    let w2 = width * asym;
    let raw: Vec<f64> = (0..l)
        .map(|k| {
            let x = k as f64;
            (-(x - c).powi(2) / (2.0 * width * width)).exp()
                - depth * (-(x - c2).powi(2) / (2.0 * w2 * w2)).exp()
        })
        .collect();
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    raw.into_iter().map(|v| v / peak).collect()
}

/// Width, asymmetry and depth of one biphasic waveform.
#[derive(Debug, Clone, Copy)]
struct WaveParams {
    width: f64,
    asym: f64,
    depth: f64,
}

impl WaveParams {
    fn draw(l: usize, rng: &mut ChaCha8Rng) -> Self {
        WaveParams {
            width: rng.gen_range(l as f64 / 45.0..l as f64 / 30.0).max(0.5),
            asym: rng.gen_range(3.0..5.0),
            depth: rng.gen_range(0.5..0.8),
        }
    }

    fn wave(self, l: usize, delay: f64) -> Vec<f64> {
        biphasic(l, delay, self.width, self.asym, self.depth)
    }
}

/// Shapes, plus neuron and electrode coordinates for lattice draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDraw {
    pub shapes: ShapeBank,
    pub neuron_positions: Option<Vec<(f64, f64)>>,
    pub electrode_positions: Option<Vec<(f64, f64)>>,
    /// Neurons placed by the Poisson process but seen by no electrode.
    pub dropped_neurons: usize,
}

/// Random templates. Without geometry the electrodes sit on a unit circle
/// and every neuron, placed in its own angular sector of the disk, reaches
/// all of them with a distance-decayed gain and a per-electrode waveform
/// delayed by distance; the largest gain is 1. With geometry the
/// neuron count comes from the Poisson placement and `cfg.n_neurons` is
/// ignored.
pub fn gen_shapes(cfg: &SimConfig) -> Result<ShapeDraw> {
    cfg.validate()?;
    let mut rng = cfg.rng(STREAM_SHAPES);
    let (ne, l) = (cfg.n_electrodes, cfg.shape_len);
    match cfg.geometry {
        None => {
            let mut data = Vec::with_capacity(cfg.n_neurons * ne * l);
            // Electrodes on the unit circle, neurons in the outer annulus.
            let electrodes: Vec<(f64, f64)> = (0..ne)
                .map(|e| {
                    let a = std::f64::consts::TAU * e as f64 / ne as f64;
                    (a.cos(), a.sin())
                })
                .collect();
            let nn = cfg.n_neurons;
            for n in 0..nn {
                // one angular sector per neuron keeps the footprints apart
                let r = rng.gen_range(0.25..1.0f64).sqrt();
                let a = std::f64::consts::TAU * (n as f64 + rng.gen::<f64>()) / nn as f64;
                let (x, y) = (r * a.cos(), r * a.sin());
                let dist: Vec<f64> = electrodes.iter().map(|&(ex, ey)| (ex - x).hypot(ey - y)).collect();
                let gmax = dist.iter().map(|&d| near_field_gain(d)).fold(0.0, f64::max);
                // a waveform per electrode, later on farther electrodes
                for &d in &dist {
                    let wave = WaveParams::draw(l, &mut rng).wave(l, (DELAY_PER_UNIT * d).round());
                    let g = near_field_gain(d) / gmax;
                    data.extend(wave.iter().map(|v| g * v));
                }
            }
            Ok(ShapeDraw {
                shapes: ShapeBank::new(cfg.n_neurons, ne, l, data)?,
                neuron_positions: None,
                electrode_positions: None,
                dropped_neurons: 0,
            })
        }
        Some(g) => {
            let side = lattice_side(ne).expect("validated");
            let lo = -g.pitch / 2.0;
            let span = side as f64 * g.pitch;
            let mean = g.intensity * span * span;
            let count = Poisson::new(mean)
                .map_err(|e| Error::Config(format!("Poisson intensity: {e}")))?
                .sample(&mut rng) as usize;
            let positions: Vec<(f64, f64)> = (0..count)
                .map(|_| (lo + rng.gen::<f64>() * span, lo + rng.gen::<f64>() * span))
                .collect();
            gen_shapes_with(cfg, &positions, &mut rng)
        }
    }
}

/// Lattice templates for neurons at fixed `positions`; the lattice
/// electrode `e` sits at `((e % side) * pitch, (e / side) * pitch)`.
pub fn gen_shapes_at(cfg: &SimConfig, positions: &[(f64, f64)]) -> Result<ShapeDraw> {
    cfg.validate()?;
    if cfg.geometry.is_none() {
        return Err(Error::Config("explicit neuron positions need a geometry".into()));
    }
    gen_shapes_with(cfg, positions, &mut cfg.rng(STREAM_SHAPES))
}

fn gen_shapes_with(cfg: &SimConfig, positions: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Result<ShapeDraw> {
    let g = cfg.geometry.expect("geometry");
    let (ne, l) = (cfg.n_electrodes, cfg.shape_len);
    let side = lattice_side(ne).ok_or_else(|| Error::Config("electrode count is not square".into()))?;
    let electrodes: Vec<(f64, f64)> = (0..ne)
        .map(|e| ((e % side) as f64 * g.pitch, (e / side) as f64 * g.pitch))
        .collect();
    let mut data = Vec::new();
    let mut kept = Vec::new();
    for &(x, y) in positions {
        let wave = WaveParams::draw(l, rng).wave(l, 0.0);
        let gains: Vec<f64> = electrodes
            .iter()
            .map(|&(ex, ey)| {
                let d = ((x - ex).powi(2) + (y - ey).powi(2)).sqrt();
                if d > g.radius {
                    0.0
                } else {
                    1.0 / (1.0 + (d / g.pitch).powi(2))
                }
            })
            .collect();
        if gains.iter().all(|&v| v == 0.0) {
            continue;
        }
        for gain in gains {
            data.extend(wave.iter().map(|v| gain * v));
        }
        kept.push((x, y));
    }
    if kept.is_empty() {
        return Err(Error::Config("no neuron lies within the detection radius of an electrode".into()));
    }
    Ok(ShapeDraw {
        shapes: ShapeBank::new(kept.len(), ne, l, data)?,
        dropped_neurons: positions.len() - kept.len(),
        neuron_positions: Some(kept),
        electrode_positions: Some(electrodes),
    })
}

/// `y_clean + xi`, `xi` i.i.d. `N(0, sigma^2)`.
pub fn add_noise(y_clean: &MultichannelSignal, sigma: f64, seed: u64) -> Result<MultichannelSignal> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("noise sigma {sigma} must be finite and nonnegative")));
    }
    let mut y = y_clean.clone();
    if sigma == 0.0 {
        return Ok(y);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_NOISE);
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Domain(e.to_string()))?;
    for v in y.data_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(y)
}

/// A complete draw.
#[derive(Debug, Clone)]
pub struct Instance {
    pub config: SimConfig,
    pub shapes: ShapeDraw,
    pub truth: SparseActivation,
    pub clean: MultichannelSignal,
    pub signal: MultichannelSignal,
}

/// Shapes, then a spike train for the drawn neurons, then the noisy signal.
pub fn simulate(cfg: &SimConfig) -> Result<Instance> {
    let shapes = gen_shapes(cfg)?;
    let mut train_cfg = cfg.clone();
    train_cfg.n_neurons = shapes.shapes.n_neurons();
    let truth = gen_spike_train(&train_cfg)?;
    let clean = forward_model(&shapes.shapes, &truth, cfg.n_samples)?;
    let signal = add_noise(&clean, cfg.noise_sigma, cfg.seed)?;
    Ok(Instance {
        config: train_cfg,
        shapes,
        truth,
        clean,
        signal,
    })
}

/// Lengths `last - first + 1` of the maximal runs of spike times (across
/// neurons) whose consecutive gaps are at most `eta`.
pub fn measure_temporal_overlaps(act: &SparseActivation, eta: usize) -> Vec<usize> {
    let mut times: Vec<usize> = act.entries().iter().map(|s| s.time).collect();
    times.sort_unstable();
    times.dedup();
    let mut out = Vec::new();
    let mut iter = times.into_iter();
    let Some(mut first) = iter.next() else {
        return out;
    };
    let mut prev = first;
    for t in iter {
        if t - prev > eta {
            out.push(prev - first + 1);
            first = t;
        }
        prev = t;
    }
    out.push(prev - first + 1);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            n_neurons: 3,
            n_electrodes: 4,
            n_samples: 5_000,
            shape_len: 20,
            firing_prob: 0.02,
            seed: 7,
            ..SimConfig::default()
        }
    }

    #[test]
    fn refractory_holds() {
        for sync in [0.0, 0.5, 1.0] {
            let cfg = SimConfig { sync_fraction: sync, ..small() };
            let a = gen_spike_train(&cfg).unwrap();
            assert!(!a.is_empty());
            for n in 0..cfg.n_neurons {
                let ts: Vec<usize> = a.entries().iter().filter(|s| s.neuron == n).map(|s| s.time).collect();
                assert!(ts.windows(2).all(|w| w[1] - w[0] >= cfg.shape_len + 1));
            }
        }
    }

    #[test]
    fn full_sync_pairs_every_time() {
        let cfg = SimConfig { sync_fraction: 1.0, ..small() };
        let a = gen_spike_train(&cfg).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for s in a.entries() {
            *counts.entry(s.time).or_insert(0) += 1;
        }
        assert!(counts.values().all(|&c| c == 2));
    }

    #[test]
    fn no_sync_never_shares() {
        let a = gen_spike_train(&small()).unwrap();
        let mut ts: Vec<usize> = a.entries().iter().map(|s| s.time).collect();
        let n = ts.len();
        ts.sort_unstable();
        ts.dedup();
        assert_eq!(ts.len(), n);
    }

    #[test]
    fn amplitudes_in_range() {
        let a = gen_spike_train(&small()).unwrap();
        assert!(a.entries().iter().all(|s| (0.8..=1.2).contains(&s.amplitude)));
    }

    #[test]
    fn deterministic() {
        let a = simulate(&small()).unwrap();
        let b = simulate(&small()).unwrap();
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.signal, b.signal);
        let c = simulate(&SimConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.truth, c.truth);
    }

    #[test]
    fn noise_zero_is_identity() {
        let y = simulate(&SimConfig { noise_sigma: 0.0, ..small() }).unwrap();
        assert_eq!(y.clean, y.signal);
        assert_eq!(add_noise(&y.clean, 0.0, 3).unwrap(), y.clean);
    }

    #[test]
    fn lattice_requires_square() {
        let cfg = SimConfig {
            n_electrodes: 5,
            geometry: Some(Geometry { pitch: 1.0, radius: 1.0, intensity: 1.0 }),
            ..small()
        };
        assert!(matches!(gen_shapes(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn lattice_zeros_far_electrodes() {
        let cfg = SimConfig {
            n_electrodes: 9,
            geometry: Some(Geometry { pitch: 1.0, radius: 0.4, intensity: 1.0 }),
            ..small()
        };
        let d = gen_shapes_at(&cfg, &[(0.0, 0.0), (2.1, 2.0), (9.0, 9.0)]).unwrap();
        assert_eq!(d.dropped_neurons, 1);
        let s = &d.shapes;
        assert_eq!(s.n_neurons(), 2);
        assert!(!s.is_zero(0, 0));
        assert!((1..9).all(|e| s.is_zero(0, e)));
        assert!(!s.is_zero(1, 8));
        assert!((0..8).all(|e| s.is_zero(1, e)));
    }

    #[test]
    fn overlaps_definition() {
        let mk = |ts: &[usize]| {
            SparseActivation::from_unsorted(
                2,
                1000,
                ts.iter().map(|&t| Spike { neuron: 0, time: t, amplitude: 1.0 }).collect(),
            )
            .unwrap()
        };
        assert_eq!(measure_temporal_overlaps(&mk(&[5]), 8), vec![1]);
        assert_eq!(measure_temporal_overlaps(&mk(&[5, 14]), 8), vec![1, 1]);
        assert_eq!(measure_temporal_overlaps(&mk(&[5, 13]), 8), vec![9]);
        assert_eq!(measure_temporal_overlaps(&mk(&[5, 13, 40, 41]), 8), vec![9, 2]);
        assert!(measure_temporal_overlaps(&mk(&[]), 8).is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { firing_prob: 0.6, ..small() }.validate().is_err());
        assert!(SimConfig { amplitude_range: (1.2, 0.8), ..small() }.validate().is_err());
        assert!(SimConfig { noise_sigma: -1.0, ..small() }.validate().is_err());
        assert!(SimConfig { sync_fraction: 1.5, ..small() }.validate().is_err());
        assert!(small().validate().is_ok());
    }
}
