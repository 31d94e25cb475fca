//! Empirical tightness diagnostics: frequencies of large moduli of
//! continuity across a family of jump scales.

use serde::{Deserialize, Serialize};

use crate::linalg::norm;
use crate::paths::modulus;
use crate::{Error, Result};

use super::SrbmPathBundle;

/// Minimum family size accepted by [`tightness_report`].
pub const MIN_SCALES: usize = 3;
pub const MIN_PATHS: usize = 100;

/// Per-path statistics, so that bundles need not be kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathModuli {
    /// `w_T(W, λ)` for each requested `λ`.
    pub w: Vec<f64>,
    /// `w_T(Y, λ)` for each requested `λ`.
    pub y: Vec<f64>,
    pub sup_w: f64,
}

impl PathModuli {
    pub fn measure(bundle: &SrbmPathBundle, horizon: f64, lambdas: &[f64]) -> Result<Self> {
        Ok(Self {
            w: lambdas
                .iter()
                .map(|l| modulus(&bundle.w, horizon, *l))
                .collect::<Result<_>>()?,
            y: lambdas
                .iter()
                .map(|l| modulus(&bundle.y, horizon, *l))
                .collect::<Result<_>>()?,
            sup_w: bundle.w.points().map(norm).fold(0.0, f64::max),
        })
    }
}

/// Wilson score interval at 95% for `hits` out of `n`.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054f64;
    let n = n as f64;
    let p = hits as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub delta: f64,
    pub lambda: f64,
    pub paths: usize,
    /// Frequency of `w_T(W, λ) ≥ ε`.
    pub w_freq: f64,
    pub w_interval: (f64, f64),
    /// Frequency of `w_T(Y, λ) ≥ ε`.
    pub y_freq: f64,
    pub y_interval: (f64, f64),
    /// Frequency of `sup ‖W‖ > M`.
    pub sup_freq: f64,
    pub sup_interval: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessTable {
    pub horizon: f64,
    pub eps: f64,
    pub sup_bound: f64,
    pub rows: Vec<TightnessRow>,
    /// For each `λ`, the `W` frequency never rises from one scale to the next
    /// by more than the two Wilson intervals allow.
    pub nonincreasing: bool,
}

/// `family[n] = (δ^n, moduli of each path)`, with `δ^n` decreasing and the
/// moduli measured at `lambdas`.
pub fn tightness_report(
    family: &[(f64, Vec<PathModuli>)],
    horizon: f64,
    lambdas: &[f64],
    eps: f64,
    sup_bound: f64,
) -> Result<TightnessTable> {
    if family.len() < MIN_SCALES {
        return Err(Error::InsufficientData(format!(
            "{} jump scales given, at least {MIN_SCALES} needed",
            family.len()
        )));
    }
    if let Some((delta, paths)) = family.iter().find(|(_, p)| p.len() < MIN_PATHS) {
        return Err(Error::InsufficientData(format!(
            "{} paths at delta = {delta}, at least {MIN_PATHS} needed",
            paths.len()
        )));
    }
    let mut rows = Vec::new();
    for (delta, paths) in family {
        for (li, lambda) in lambdas.iter().enumerate() {
            let n = paths.len();
            let count = |f: &dyn Fn(&PathModuli) -> bool| paths.iter().filter(|p| f(p)).count();
            let w_hits = count(&|p| p.w[li] >= eps);
            let y_hits = count(&|p| p.y[li] >= eps);
            let sup_hits = count(&|p| p.sup_w > sup_bound);
            rows.push(TightnessRow {
                delta: *delta,
                lambda: *lambda,
                paths: n,
                w_freq: w_hits as f64 / n as f64,
                w_interval: wilson_interval(w_hits, n),
                y_freq: y_hits as f64 / n as f64,
                y_interval: wilson_interval(y_hits, n),
                sup_freq: sup_hits as f64 / n as f64,
                sup_interval: wilson_interval(sup_hits, n),
            });
        }
    }
    let per = lambdas.len();
    let nonincreasing = (0..per).all(|li| {
        rows.iter()
            .skip(li)
            .step_by(per)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|p| p[1].w_interval.0 <= p[0].w_interval.1)
    });
    Ok(TightnessTable {
        horizon,
        eps,
        sup_bound,
        rows,
        nonincreasing,
    })
}
