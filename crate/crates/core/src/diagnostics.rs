//! Shape-correlation parameters, the noise correlation quantile and the
//! resulting admissible range for `lambda`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{gram_band, GramBand};
use crate::signal::ShapeBank;

/// `(epsilon, rho, c_lower, c_upper)` read off the interior Gram band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionParams {
    /// Largest cross-neuron Gram magnitude; 0 for a single neuron.
    pub epsilon: f64,
    /// Largest `|G(n, n, lag)| / G(n, n, 0)` over nonzero lags.
    pub rho: f64,
    pub c_lower: f64,
    pub c_upper: f64,
}

pub fn assumption_params(shapes: &ShapeBank) -> AssumptionParams {
    params_from_band(&gram_band(shapes))
}

pub fn params_from_band(band: &GramBand) -> AssumptionParams {
    let (nn, l) = (band.n_neurons(), band.shape_len() as isize);
    let mut p = AssumptionParams {
        epsilon: 0.0,
        rho: 0.0,
        c_lower: f64::INFINITY,
        c_upper: 0.0,
    };
    for n in 0..nn {
        let d = band.diag(n);
        p.c_lower = p.c_lower.min(d);
        p.c_upper = p.c_upper.max(d);
        for lag in (1 - l)..l {
            if lag != 0 {
                p.rho = p.rho.max(band.get(n, n, lag).abs() / d);
            }
            for n2 in (0..nn).filter(|&n2| n2 != n) {
                p.epsilon = p.epsilon.max(band.get(n, n2, lag).abs());
            }
        }
    }
    p
}

/// `sqrt(2 sigma^2 c_upper ln(2 N T / alpha))`.
pub fn noise_quantile(sigma: f64, c_upper: f64, n_neurons: usize, n_samples: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")));
    }
    if !(sigma >= 0.0 && c_upper > 0.0) || n_neurons == 0 || n_samples == 0 {
        return Err(Error::Domain(format!(
            "noise quantile needs sigma >= 0, c_upper > 0, N, T >= 1 (got {sigma}, {c_upper}, {n_neurons}, {n_samples})"
        )));
    }
    let arg = 2.0 * n_neurons as f64 * n_samples as f64 / alpha;
    Ok((2.0 * sigma * sigma * c_upper * arg.ln()).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRange {
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub feasible: bool,
    pub reason: Option<String>,
}

/// Admissible `lambda` given the shape parameters, the noise quantile, a
/// bound `boundary_sup` on true amplitudes at window boundaries and the
/// smallest true amplitude `a_min`.
pub fn lambda_range(
    p: &AssumptionParams,
    z_alpha: f64,
    n_script: f64,
    boundary_sup: f64,
    a_min: f64,
) -> Result<LambdaRange> {
    if !(boundary_sup >= 0.0 && a_min > 0.0 && z_alpha >= 0.0 && n_script >= 0.0) {
        return Err(Error::Domain(format!(
            "lambda range needs boundary_sup >= 0, a_min > 0, z_alpha >= 0, n_script >= 0 (got {boundary_sup}, {a_min}, {z_alpha}, {n_script})"
        )));
    }
    let AssumptionParams {
        epsilon: eps,
        rho,
        c_lower: cl,
        c_upper: cu,
    } = *p;
    let denom = cl - 2.0 * rho * cu - 4.0 * eps * n_script;
    if denom <= 0.0 {
        return Ok(LambdaRange {
            lambda_min: None,
            lambda_max: None,
            feasible: false,
            reason: Some(format!(
                "c_lower = {cl} does not exceed 2 rho c_upper + 4 epsilon N = {}",
                cl - denom
            )),
        });
    }
    let leak = 2.0 * (rho * cu + eps * n_script) * boundary_sup;
    let lambda_min = (cl + 2.0 * rho * cu) / denom * (z_alpha + leak);
    let lambda_max = a_min * (cl - 2.0 * eps * n_script) - z_alpha - leak;
    let feasible = lambda_min < lambda_max;
    Ok(LambdaRange {
        lambda_min: Some(lambda_min),
        lambda_max: Some(lambda_max),
        feasible,
        reason: (!feasible).then(|| format!("lambda_min {lambda_min} >= lambda_max {lambda_max}")),
    })
}

/// Inputs echoed next to the computed quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub epsilon: f64,
    pub rho: f64,
    pub c_lower: f64,
    pub c_upper: f64,
    pub z_alpha: f64,
    pub lambda_min: Option<f64>,
    pub lambda_max: Option<f64>,
    pub feasible: bool,
    pub reason: Option<String>,
    pub n_script: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub n_neurons: usize,
    pub n_samples: usize,
    pub boundary_sup: f64,
    pub a_min: f64,
}

/// Inputs of [`assumption_report`]; `n_script` defaults to `N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportInputs {
    pub sigma: f64,
    pub alpha: f64,
    pub n_samples: usize,
    pub boundary_sup: f64,
    pub a_min: f64,
    pub n_script: Option<f64>,
}

pub fn assumption_report(shapes: &ShapeBank, inputs: &ReportInputs) -> Result<AssumptionReport> {
    let p = assumption_params(shapes);
    let nn = shapes.n_neurons();
    let n_script = inputs.n_script.unwrap_or(nn as f64);
    let z_alpha = noise_quantile(inputs.sigma, p.c_upper, nn, inputs.n_samples, inputs.alpha)?;
    let range = lambda_range(&p, z_alpha, n_script, inputs.boundary_sup, inputs.a_min)?;
    Ok(AssumptionReport {
        epsilon: p.epsilon,
        rho: p.rho,
        c_lower: p.c_lower,
        c_upper: p.c_upper,
        z_alpha,
        lambda_min: range.lambda_min,
        lambda_max: range.lambda_max,
        feasible: range.feasible,
        reason: range.reason,
        n_script,
        sigma: inputs.sigma,
        alpha: inputs.alpha,
        n_neurons: nn,
        n_samples: inputs.n_samples,
        boundary_sup: inputs.boundary_sup,
        a_min: inputs.a_min,
    })
}

impl AssumptionReport {
    pub fn params(&self) -> AssumptionParams {
        AssumptionParams {
            epsilon: self.epsilon,
            rho: self.rho,
            c_lower: self.c_lower,
            c_upper: self.c_upper,
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self).map_err(|e| Error::Format(e.to_string()))
    }
}
