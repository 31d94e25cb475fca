//! Grid-indexed paths and the functionals used by the scheme.
//!
//! A [`VectorPath`] is right-continuous and piecewise constant between grid
//! times, with `x(0-) = 0`. Continuous-time suprema become maxima over grid
//! points.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::geometry::DomainSpec;
use crate::linalg::{check_dim, diameter, dist, norm};
use crate::rng::{increment_stream, initial_stream, CounterRng};
use crate::{Error, Result};

/// Relative tolerance used to match a requested time to a grid time.
const TIME_TOL: f64 = 1e-9;
/// Draws of the uniform initial law before giving up.
const MAX_REJECTIONS: u64 = 100_000;

/// `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridFile", into = "GridFile")]
pub struct TimeGrid {
    times: Vec<f64>,
    step: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum GridFile {
    Uniform { horizon: f64, steps: usize },
    Explicit { times: Vec<f64> },
}

impl TryFrom<GridFile> for TimeGrid {
    type Error = Error;

    fn try_from(f: GridFile) -> Result<Self> {
        match f {
            GridFile::Uniform { horizon, steps } => Self::uniform(horizon, steps),
            GridFile::Explicit { times } => Self::new(times),
        }
    }
}

impl From<TimeGrid> for GridFile {
    fn from(g: TimeGrid) -> Self {
        match g.step {
            Some(_) => GridFile::Uniform {
                horizon: g.horizon(),
                steps: g.steps(),
            },
            None => GridFile::Explicit { times: g.times },
        }
    }
}

impl TimeGrid {
    /// `N` equal steps on `[0, T]`; `t_k = k T / N` exactly at the ends.
    pub fn uniform(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidPath(format!(
                "uniform grid needs T > 0 and N >= 1, got T = {horizon}, N = {steps}"
            )));
        }
        let times = (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect();
        Ok(Self {
            times,
            step: Some(horizon / steps as f64),
        })
    }

    /// Uniform grid of step `dt`; `T / dt` must be an integer up to rounding.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        let n = horizon / dt;
        let steps = n.round();
        if !(dt > 0.0) || (n - steps).abs() > 1e-6 * n.max(1.0) || steps < 1.0 {
            return Err(Error::InvalidPath(format!("dt = {dt} does not divide T = {horizon}")));
        }
        Self::uniform(horizon, steps as usize)
    }

    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 || times[0] != 0.0 {
            return Err(Error::InvalidPath("grid needs t_0 = 0 and at least one step".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::InvalidPath("grid times must be strictly increasing".into()));
        }
        Ok(Self { times, step: None })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, k: usize) -> f64 {
        self.times[k]
    }

    /// Number of steps `N`.
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.steps()]
    }

    /// The step if the grid is uniform.
    pub fn uniform_step(&self) -> Option<f64> {
        self.step
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    fn slack(&self) -> f64 {
        TIME_TOL * self.horizon()
    }

    /// Index of the grid time equal to `t`, up to a relative `1e-9`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = self.index_at_or_before(t)?;
        if (self.times[k] - t).abs() <= self.slack() {
            return Some(k);
        }
        (k + 1 < self.times.len() && (self.times[k + 1] - t).abs() <= self.slack()).then_some(k + 1)
    }

    /// Largest `k` with `t_k ≤ t` (within the slack), `None` before zero.
    pub fn index_at_or_before(&self, t: f64) -> Option<usize> {
        let t = t + self.slack();
        if t < 0.0 {
            return None;
        }
        if let Some(h) = self.step {
            let k = ((t / h).floor() as usize).min(self.steps());
            // correct a possible off-by-one from rounding in t / h
            let k = if self.times[k] > t { k - 1 } else { k };
            return Some(if k < self.steps() && self.times[k + 1] <= t { k + 1 } else { k });
        }
        Some(self.times.partition_point(|s| *s <= t) - 1)
    }
}

/// A right-continuous, piecewise-constant `R^d`-valued path on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorPath {
    grid: Arc<TimeGrid>,
    dim: usize,
    values: Vec<f64>,
}

impl VectorPath {
    /// `values` holds `N + 1` consecutive `d`-vectors.
    pub fn new(grid: Arc<TimeGrid>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidPath("path dimension must be positive".into()));
        }
        check_dim(dim * grid.times.len(), values.len())?;
        Ok(Self { grid, dim, values })
    }

    pub fn from_fn(grid: Arc<TimeGrid>, dim: usize, mut f: impl FnMut(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(dim * grid.times.len());
        for &t in &grid.times {
            let v = f(t);
            check_dim(dim, v.len())?;
            values.extend_from_slice(&v);
        }
        Self::new(grid, dim, values)
    }

    pub fn constant(grid: Arc<TimeGrid>, value: &[f64]) -> Result<Self> {
        Self::from_fn(grid, value.len(), |_| value.to_vec())
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Number of stored points, `N + 1`.
    pub fn len(&self) -> usize {
        self.grid.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn value_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// `x(t)` under the right-continuous convention.
    pub fn value_at(&self, t: f64) -> Result<&[f64]> {
        let k = self
            .grid
            .index_at_or_before(t)
            .ok_or_else(|| Error::InvalidPath(format!("time {t} precedes the grid")))?;
        Ok(self.value(k))
    }

    /// `x(t_k -)`, with `x(0-) = 0`.
    pub fn value_before(&self, k: usize) -> Vec<f64> {
        if k == 0 {
            vec![0.0; self.dim]
        } else {
            self.value(k - 1).to_vec()
        }
    }

    /// `Δx(t_k) = x(t_k) - x(t_k -)`.
    pub fn jump(&self, k: usize) -> Vec<f64> {
        let before = self.value_before(k);
        self.value(k).iter().zip(&before).map(|(a, b)| a - b).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Coordinate `i` as a scalar path.
    pub fn component(&self, i: usize) -> Result<VectorPath> {
        if i >= self.dim {
            return Err(Error::IndexOutOfRange {
                index: i,
                count: self.dim,
            });
        }
        Self::new(self.grid.clone(), 1, self.points().map(|p| p[i]).collect())
    }

    /// Every `stride`-th grid value, on the matching coarser grid; `stride`
    /// must divide `N`.
    pub fn subsample(&self, stride: usize) -> Result<VectorPath> {
        let n = self.grid.steps();
        if stride == 0 || !n.is_multiple_of(stride) {
            return Err(Error::InvalidPath(format!("stride {stride} does not divide N = {n}")));
        }
        let grid = match self.grid.uniform_step() {
            Some(_) => TimeGrid::uniform(self.grid.horizon(), n / stride)?,
            None => TimeGrid::new(self.grid.times().iter().step_by(stride).copied().collect())?,
        };
        let values = (0..=n)
            .step_by(stride)
            .flat_map(|k| self.value(k).iter().copied())
            .collect();
        VectorPath::new(Arc::new(grid), self.dim, values)
    }

    /// `sup_t |x(t) - y(t)|` over the common grid.
    pub fn sup_distance(&self, other: &VectorPath) -> Result<f64> {
        if self.grid != other.grid && *self.grid != *other.grid {
            return Err(Error::GridMismatch);
        }
        check_dim(self.dim, other.dim)?;
        Ok(self
            .points()
            .zip(other.points())
            .map(|(a, b)| dist(a, b))
            .fold(0.0, f64::max))
    }

    fn index(&self, t: f64, what: &str) -> Result<usize> {
        self.grid
            .index_of(t)
            .ok_or_else(|| Error::InvalidPath(format!("{what} {t} is not a grid time")))
    }
}

/// Initial law of the driving motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialLaw {
    Point { value: Vec<f64> },
    /// Uniform over the box, restricted to `Ḡ` by rejection when sampled
    /// against a domain.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
}

/// Drift, covariance and initial law of a Brownian motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ParamsFile", into = "ParamsFile")]
pub struct BrownianParams {
    drift: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    initial: InitialLaw,
    /// Lower Cholesky factor, row-major.
    factor: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    drift: Vec<f64>,
    covariance: Vec<Vec<f64>>,
    initial: InitialLaw,
}

impl TryFrom<ParamsFile> for BrownianParams {
    type Error = Error;

    fn try_from(f: ParamsFile) -> Result<Self> {
        Self::new(f.drift, f.covariance, f.initial)
    }
}

impl From<BrownianParams> for ParamsFile {
    fn from(p: BrownianParams) -> Self {
        Self {
            drift: p.drift,
            covariance: p.covariance,
            initial: p.initial,
        }
    }
}

impl BrownianParams {
    pub fn new(drift: Vec<f64>, covariance: Vec<Vec<f64>>, initial: InitialLaw) -> Result<Self> {
        let d = drift.len();
        if d == 0 || drift.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPath("drift must be a nonempty finite vector".into()));
        }
        check_dim(d, covariance.len())?;
        for row in &covariance {
            check_dim(d, row.len())?;
        }
        for i in 0..d {
            for j in 0..i {
                if (covariance[i][j] - covariance[j][i]).abs() > 1e-12 {
                    return Err(Error::NotPositiveDefinite);
                }
            }
        }
        match &initial {
            InitialLaw::Point { value } => check_dim(d, value.len())?,
            InitialLaw::UniformBox { lo, hi } => {
                check_dim(d, lo.len())?;
                check_dim(d, hi.len())?;
                if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                    return Err(Error::InvalidPath("initial box needs lo <= hi".into()));
                }
            }
        }
        let m = DMatrix::from_fn(d, d, |i, j| covariance[i][j]);
        let chol = m.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let factor = (0..d * d).map(|k| l[(k / d, k % d)]).collect();
        Ok(Self {
            drift,
            covariance,
            initial,
            factor,
        })
    }

    /// Standard Brownian motion started at `x0`, with drift `mu`.
    pub fn standard(mu: Vec<f64>, x0: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self::new(mu, cov, InitialLaw::Point { value: x0 })
    }

    pub fn dimension(&self) -> usize {
        self.drift.len()
    }

    pub fn drift(&self) -> &[f64] {
        &self.drift
    }

    pub fn covariance(&self) -> &[Vec<f64>] {
        &self.covariance
    }

    pub fn initial(&self) -> &InitialLaw {
        &self.initial
    }

    pub fn with_initial(&self, initial: InitialLaw) -> Result<Self> {
        Self::new(self.drift.clone(), self.covariance.clone(), initial)
    }
}

/// Streams the increments of one path without storing it.
#[derive(Clone, Debug)]
pub struct IncrementSampler {
    params: BrownianParams,
    rng: CounterRng,
    xi: Vec<f64>,
}

impl IncrementSampler {
    pub fn new(params: &BrownianParams, seed: u64, path: u64) -> Self {
        let d = params.dimension();
        Self {
            params: params.clone(),
            rng: CounterRng::new(seed, increment_stream(path), d),
            xi: vec![0.0; d],
        }
    }

    /// Writes `X(t_{k+1}) - X(t_k) = μ dt + Λ ξ_k √dt` into `out`.
    pub fn increment(&mut self, step: u64, dt: f64, out: &mut [f64]) {
        let d = self.xi.len();
        self.rng.normals(step, &mut self.xi);
        let s = dt.sqrt();
        for i in 0..d {
            let row = &self.params.factor[i * d..i * d + i + 1];
            let noise: f64 = row.iter().zip(&self.xi).map(|(l, z)| l * z).sum();
            out[i] = self.params.drift[i] * dt + noise * s;
        }
    }

    /// A draw of the initial law, restricted to `region` when given.
    pub fn initial(&self, seed: u64, path: u64, region: Option<&DomainSpec>) -> Result<Vec<f64>> {
        match &self.params.initial {
            InitialLaw::Point { value } => Ok(value.clone()),
            InitialLaw::UniformBox { lo, hi } => {
                let d = lo.len();
                let mut rng = CounterRng::new(seed, initial_stream(path), d);
                let mut u = vec![0.0; d];
                for attempt in 0..MAX_REJECTIONS {
                    rng.uniforms(attempt, &mut u);
                    let x: Vec<f64> = (0..d).map(|i| lo[i] + (hi[i] - lo[i]) * u[i]).collect();
                    match region {
                        Some(dom) if !dom.in_closure(&x, 0.0) => continue,
                        _ => return Ok(x),
                    }
                }
                Err(Error::InvalidSampling(
                    "initial box barely meets the domain; rejection sampling gave up".into(),
                ))
            }
        }
    }
}

/// Path `path` of the Brownian motion on `grid`; a pure function of
/// `(params, grid, seed, path)`.
pub fn sample_brownian(params: &BrownianParams, grid: &Arc<TimeGrid>, seed: u64, path: u64) -> Result<VectorPath> {
    sample_brownian_in(params, grid, seed, path, None)
}

/// As [`sample_brownian`], with the uniform initial law restricted to `Ḡ`.
pub fn sample_brownian_in(
    params: &BrownianParams,
    grid: &Arc<TimeGrid>,
    seed: u64,
    path: u64,
    region: Option<&DomainSpec>,
) -> Result<VectorPath> {
    let d = params.dimension();
    let mut sampler = IncrementSampler::new(params, seed, path);
    let mut values = Vec::with_capacity(d * grid.times.len());
    let mut x = sampler.initial(seed, path, region)?;
    values.extend_from_slice(&x);
    let mut inc = vec![0.0; d];
    for k in 0..grid.steps() {
        sampler.increment(k as u64, grid.dt(k), &mut inc);
        for (xi, di) in x.iter_mut().zip(&inc) {
            *xi += di;
        }
        values.extend_from_slice(&x);
    }
    VectorPath::new(grid.clone(), d, values)
}

/// `Osc(x, [s, t]) = max ‖x(v) - x(u)‖` over grid times `s ≤ u < v ≤ t`.
pub fn oscillation(path: &VectorPath, s: f64, t: f64) -> Result<f64> {
    if !(s < t) {
        return Err(Error::InvalidPath(format!("oscillation needs s < t, got [{s}, {t}]")));
    }
    let (a, b) = (path.index(s, "start")?, path.index(t, "end")?);
    Ok(oscillation_idx(path, a, b))
}

/// Oscillation over grid indices `a..=b`.
pub fn oscillation_idx(path: &VectorPath, a: usize, b: usize) -> f64 {
    let pts: Vec<&[f64]> = (a..=b).map(|k| path.value(k)).collect();
    diameter(&pts)
}

/// The modulus `w_T(x, λ)`: the largest oscillation over windows
/// `[t_k, t_k + λ] ⊆ [0, T]` starting at grid times.
pub fn modulus(path: &VectorPath, horizon: f64, lambda: f64) -> Result<f64> {
    let grid = path.grid();
    if !(horizon > 0.0 && horizon <= grid.horizon() + grid.slack()) {
        return Err(Error::InvalidPath(format!("horizon {horizon} is outside the grid")));
    }
    if !(lambda > 0.0 && lambda < horizon) {
        return Err(Error::InvalidPath(format!("window {lambda} must lie in (0, {horizon})")));
    }
    let last = grid
        .index_at_or_before(horizon)
        .expect("positive horizon");
    let mut best = 0.0f64;
    if path.dimension() == 1 {
        // sliding-window extrema over indices [k, end(k)], end nondecreasing
        let mut max_q = std::collections::VecDeque::new();
        let mut min_q = std::collections::VecDeque::new();
        let mut end = 0usize;
        for k in 0..=last {
            if grid.time(k) + lambda > horizon + grid.slack() {
                break;
            }
            let stop = grid.index_at_or_before(grid.time(k) + lambda).unwrap().min(last);
            while end <= stop {
                let v = path.value(end)[0];
                while max_q.back().is_some_and(|&j: &usize| path.value(j)[0] <= v) {
                    max_q.pop_back();
                }
                max_q.push_back(end);
                while min_q.back().is_some_and(|&j: &usize| path.value(j)[0] >= v) {
                    min_q.pop_back();
                }
                min_q.push_back(end);
                end += 1;
            }
            while max_q.front().is_some_and(|&j| j < k) {
                max_q.pop_front();
            }
            while min_q.front().is_some_and(|&j| j < k) {
                min_q.pop_front();
            }
            let hi = path.value(*max_q.front().unwrap())[0];
            let lo = path.value(*min_q.front().unwrap())[0];
            best = best.max(hi - lo);
        }
        return Ok(best);
    }
    for k in 0..=last {
        if grid.time(k) + lambda > horizon + grid.slack() {
            break;
        }
        let stop = grid.index_at_or_before(grid.time(k) + lambda).unwrap().min(last);
        best = best.max(oscillation_idx(path, k, stop));
    }
    Ok(best)
}

/// `V(x)(t) = ‖x(0)‖ + Σ ‖x(t_{k+1}) - x(t_k)‖` over grid steps up to `t`.
pub fn total_variation(path: &VectorPath, t: f64) -> Result<f64> {
    let end = path.index(t, "time")?;
    Ok(total_variation_idx(path, end))
}

pub fn total_variation_idx(path: &VectorPath, end: usize) -> f64 {
    let mut v = norm(path.value(0));
    for k in 0..end {
        v += dist(path.value(k), path.value(k + 1));
    }
    v
}

/// `∫_{(0,t]} f(φ(s)) dχ(s) = Σ_{0 < t_k ≤ t} f(φ(t_k)) (χ(t_k) - χ(t_{k-1}))`.
///
/// Right-endpoint evaluation, so a jump of `χ` at `t_k` is weighted by
/// `f(φ(t_k))`.
pub fn stieltjes_integral(
    f: impl Fn(&[f64]) -> f64,
    phi: &VectorPath,
    chi: &VectorPath,
    t: f64,
) -> Result<f64> {
    if phi.grid != chi.grid && *phi.grid != *chi.grid {
        return Err(Error::GridMismatch);
    }
    if chi.dimension() != 1 {
        return Err(Error::InvalidPath("integrator must be scalar".into()));
    }
    let end = phi
        .grid
        .index_at_or_before(t)
        .ok_or_else(|| Error::InvalidPath(format!("time {t} precedes the grid")))?;
    let mut total = 0.0;
    for k in 1..=end {
        let step = chi.value(k)[0] - chi.value(k - 1)[0];
        if step < 0.0 {
            return Err(Error::InvalidPath(format!(
                "integrator decreases by {} at t = {}",
                -step,
                phi.grid.time(k)
            )));
        }
        if step != 0.0 {
            total += f(phi.value(k)) * step;
        }
    }
    Ok(total)
}
