//! The δ-jump approximation of an SRBM and the diagnostics built on it.
//!
//! The state `W` follows the increments of the driving path `X` while it
//! stays inside `G`. When a step would leave `G` (or end within `hit_tol` of
//! `∂G`), the first crossing along the straight segment becomes a hit point
//! `x`, and `W` jumps by `λ Σ c_i γ^i(x)` with `λ = min(m(x)/2, δ)`. The
//! pushing process `Y_i` grows by `c_i λ` at that event, so
//! `W = X + Σ_events Σ_i γ^i(hit) ΔY_i` holds by construction.

mod certificate;
mod perturb;
mod tightness;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{DomainSpec, Location, SurfacePatch};
use crate::linalg::{check_dim, dot, norm};
use crate::paths::{sample_brownian_in, BrownianParams, TimeGrid, VectorPath};
use crate::reflection::{solve_weights_c, ReflectionField, WeightOutcome};
use crate::{Error, Result};

pub use certificate::{
    check_certificate, pi_function, CertificateContext, CertificateReport, Hypotheses, TubeFunction,
    Verdict,
};
pub use perturb::{inject_perturbations, AlphaShape, BetaStep, PerturbationSpec, PerturbedBundle};
pub use tightness::{tightness_report, wilson_interval, PathModuli, TightnessRow, TightnessTable};

/// Iterations of the reach bisection.
const REACH_BISECTIONS: usize = 40;
/// Interior samples per candidate reach.
const REACH_SAMPLES: usize = 8;
/// Halvings of `λ` allowed when a jump would leave `G`.
const LANDING_HALVINGS: usize = 10;
/// Events considered when reporting the reach near an accumulation.
const RECENT_EVENTS: usize = 100;
const CROSSING_BISECTIONS: usize = 200;

fn default_m_cap() -> f64 {
    1.0
}

/// Discretization choices of one scheme run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    /// Jump scale `δ`.
    pub delta: f64,
    pub grid: TimeGrid,
    /// Cap on the interior reach `m(x)`.
    #[serde(default = "default_m_cap")]
    pub m_cap: f64,
    /// Boundary detection tolerance; the domain's `ε_bd` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_tol: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Event budget; `100 N` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_jumps: Option<usize>,
    /// Faces whose gauge is at most this band join the active set of a push;
    /// `hit_tol` when absent. Must lie in `[hit_tol, δ]`. A wider band keeps
    /// `m` bounded below near corners with oblique fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active_tol: Option<f64>,
}

impl SchemeConfig {
    pub fn new(delta: f64, grid: TimeGrid, seed: u64) -> Self {
        Self {
            delta,
            grid,
            m_cap: default_m_cap(),
            hit_tol: None,
            seed,
            max_jumps: None,
            active_tol: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta = {} must be positive", self.delta));
        }
        if !(self.m_cap > 0.0) {
            return bad(format!("m_cap = {} must be positive", self.m_cap));
        }
        if let Some(t) = self.hit_tol {
            if !(t > 0.0) {
                return bad(format!("hit_tol = {t} must be positive"));
            }
        }
        if let Some(t) = self.active_tol {
            if !(t > 0.0 && t <= self.delta) {
                return bad(format!("active_tol = {t} must lie in (0, delta]"));
            }
        }
        if self.max_jumps == Some(0) {
            return bad("max_jumps must be positive".into());
        }
        Ok(())
    }
}

/// A single push at a hit point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub active: Vec<usize>,
    pub weights: Vec<f64>,
    /// `g = Σ c_i γ^i(x)`.
    pub direction: Vec<f64>,
    /// The interior reach `m(x)`.
    pub reach: f64,
    pub lambda: f64,
    /// `λ g`.
    pub vector: Vec<f64>,
}

/// One event of the jump log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// Grid index `k` with the event time in `(t_{k-1}, t_k]`; `0` for a
    /// start on the boundary.
    pub index: usize,
    /// Position of the hit along the step, in `[0, 1]`.
    pub fraction: f64,
    pub hit: Vec<f64>,
    pub active: Vec<usize>,
    pub weights: Vec<f64>,
    pub lambda: f64,
    pub reach: f64,
}

impl JumpEvent {
    /// `ΔY_i = c_i λ` for the active `i`.
    pub fn increments(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.active
            .iter()
            .zip(&self.weights)
            .map(|(i, c)| (*i, c * self.lambda))
    }
}

/// Output of one scheme run on one driving path.
#[derive(Clone, Debug, PartialEq)]
pub struct SrbmPathBundle {
    pub w: VectorPath,
    pub x: VectorPath,
    /// One coordinate per patch, nondecreasing, `Y(0-) = 0`.
    pub y: VectorPath,
    /// Events in time order.
    pub events: Vec<JumpEvent>,
    pub delta: f64,
    pub hit_tol: f64,
}

impl SrbmPathBundle {
    pub fn grid(&self) -> &Arc<TimeGrid> {
        self.w.grid()
    }

    /// Events whose time lies in `(t_{k-1}, t_k]`.
    pub fn events_at(&self, k: usize) -> &[JumpEvent] {
        let lo = self.events.partition_point(|e| e.index < k);
        let hi = self.events.partition_point(|e| e.index <= k);
        &self.events[lo..hi]
    }

    /// `max_k ‖W(t_k) - X(t_k) - Σ_{events ≤ t_k} Σ_i γ^i(hit) ΔY_i‖`, with the
    /// directions recomputed from the field.
    pub fn reconstruction_error(&self, domain: &DomainSpec, field: &ReflectionField) -> Result<f64> {
        let d = self.w.dimension();
        let mut push = vec![0.0; d];
        let mut worst = 0.0f64;
        let mut next = 0;
        for k in 0..self.w.len() {
            while next < self.events.len() && self.events[next].index == k {
                let e = &self.events[next];
                for (i, dy) in e.increments() {
                    let g = field.gamma(domain, i, &e.hit)?;
                    for (p, gi) in push.iter_mut().zip(&g) {
                        *p += gi * dy;
                    }
                }
                next += 1;
            }
            let err: f64 = (0..d)
                .map(|j| {
                    let r = self.w.value(k)[j] - self.x.value(k)[j] - push[j];
                    r * r
                })
                .sum::<f64>()
                .sqrt();
            worst = worst.max(err);
        }
        Ok(worst)
    }

    /// Largest single-event increment `Σ_i ΔY_i`.
    pub fn max_event_increment(&self) -> f64 {
        self.events
            .iter()
            .map(|e| e.increments().map(|(_, v)| v).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// Halfspace data for the exact crossing and reach formulas.
#[derive(Clone, Debug)]
struct Planes {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

impl Planes {
    fn of(domain: &DomainSpec) -> Option<Self> {
        if !domain.is_polyhedral() {
            return None;
        }
        let (normals, offsets) = domain
            .patches()
            .iter()
            .map(|p| match p {
                SurfacePatch::Halfspace { normal, offset } => (normal.clone(), *offset),
                _ => unreachable!("checked polyhedral"),
            })
            .unzip();
        Some(Self { normals, offsets })
    }
}

fn min_gauge(domain: &DomainSpec, x: &[f64]) -> f64 {
    domain
        .patches()
        .iter()
        .map(|p| p.gauge_unchecked(x))
        .fold(f64::INFINITY, f64::min)
}

fn is_open_interior(domain: &DomainSpec, x: &[f64]) -> bool {
    min_gauge(domain, x) > 0.0
}

/// `m(x)`: the largest `λ ≤ m_cap` such that `x + λ' g ∈ G` for every
/// sampled `λ' ∈ (0, λ]`. Exact for halfspaces.
fn interior_reach(domain: &DomainSpec, planes: Option<&Planes>, x: &[f64], g: &[f64], m_cap: f64) -> f64 {
    if let Some(pl) = planes {
        let mut reach = m_cap;
        for (n, b) in pl.normals.iter().zip(&pl.offsets) {
            let slope = dot(n, g);
            if slope < 0.0 {
                reach = reach.min(((dot(n, x) - b) / -slope).max(0.0));
            }
        }
        return reach;
    }
    let mut y = vec![0.0; x.len()];
    let mut clear = |len: f64| {
        (1..=REACH_SAMPLES).all(|j| {
            let s = len * j as f64 / REACH_SAMPLES as f64;
            for (k, yk) in y.iter_mut().enumerate() {
                *yk = x[k] + s * g[k];
            }
            is_open_interior(domain, &y)
        })
    };
    if clear(m_cap) {
        return m_cap;
    }
    let (mut lo, mut hi) = (0.0, m_cap);
    for _ in 0..REACH_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if clear(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// The push at a boundary point: active set at `hit_tol`, max-margin weights
/// `c`, reach, and `λ = min(m/2, δ)`, halved while the landing point is
/// outside `G`.
pub fn compute_jump(
    domain: &DomainSpec,
    field: &ReflectionField,
    x_hit: &[f64],
    delta: f64,
    m_cap: f64,
    hit_tol: f64,
) -> Result<Jump> {
    check_dim(domain.dimension(), x_hit.len())?;
    let tols = Tolerances {
        hit: hit_tol,
        active: hit_tol,
    };
    jump_at(domain, field, Planes::of(domain).as_ref(), x_hit, delta, m_cap, tols)
}

#[derive(Clone, Copy, Debug)]
struct Tolerances {
    hit: f64,
    active: f64,
}

fn jump_at(
    domain: &DomainSpec,
    field: &ReflectionField,
    planes: Option<&Planes>,
    x: &[f64],
    delta: f64,
    m_cap: f64,
    tols: Tolerances,
) -> Result<Jump> {
    if !matches!(domain.classify_with_tol(x, tols.hit), Location::Boundary(_)) {
        return Err(Error::NotOnBoundary {
            patch: None,
            gauge: min_gauge(domain, x),
        });
    }
    let active: Vec<usize> = (0..domain.num_patches())
        .filter(|i| domain.patches()[*i].gauge_unchecked(x) <= tols.active)
        .collect();
    let normals = active
        .iter()
        .map(|i| domain.normal_at(*i, x))
        .collect::<Result<Vec<_>>>()?;
    let gammas = field.gammas(domain, &active, x)?;
    let weights = match solve_weights_c(&normals, &gammas)? {
        WeightOutcome::Feasible(m) => m.weights,
        WeightOutcome::Infeasible(m) => {
            return Err(Error::WeightsInfeasible {
                point: x.to_vec(),
                active,
                level: m.level,
            })
        }
    };
    let d = x.len();
    let direction: Vec<f64> = (0..d)
        .map(|k| weights.iter().zip(&gammas).map(|(c, g)| c * g[k]).sum())
        .collect();
    let reach = interior_reach(domain, planes, x, &direction, m_cap);
    let mut lambda = (0.5 * reach).min(delta);
    let mut landing: Vec<f64> = (0..d).map(|k| x[k] + lambda * direction[k]).collect();
    let mut halvings = 0;
    while !(lambda > 0.0 && is_open_interior(domain, &landing)) {
        if halvings == LANDING_HALVINGS || lambda == 0.0 {
            return Err(Error::JumpNotInterior { point: x.to_vec() });
        }
        lambda *= 0.5;
        halvings += 1;
        for k in 0..d {
            landing[k] = x[k] + lambda * direction[k];
        }
    }
    Ok(Jump {
        vector: direction.iter().map(|g| g * lambda).collect(),
        active,
        weights,
        direction,
        reach,
        lambda,
    })
}

/// The scheme bound to a domain, field and configuration.
#[derive(Clone, Debug)]
pub struct Simulator {
    domain: DomainSpec,
    field: ReflectionField,
    cfg: SchemeConfig,
    grid: Arc<TimeGrid>,
    hit_tol: f64,
    active_tol: f64,
    max_jumps: usize,
    planes: Option<Planes>,
}

impl Simulator {
    pub fn new(domain: &DomainSpec, field: &ReflectionField, cfg: &SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        field.validate_for(domain)?;
        let grid = Arc::new(cfg.grid.clone());
        let hit_tol = cfg.hit_tol.unwrap_or(domain.boundary_tol());
        let active_tol = cfg.active_tol.unwrap_or(hit_tol);
        if active_tol < hit_tol {
            return Err(Error::InvalidConfig(format!(
                "active_tol = {active_tol} is below hit_tol = {hit_tol}"
            )));
        }
        Ok(Self {
            domain: domain.clone(),
            field: field.clone(),
            hit_tol,
            active_tol,
            max_jumps: cfg.max_jumps.unwrap_or(100 * grid.steps()),
            planes: Planes::of(domain),
            grid,
            cfg: cfg.clone(),
        })
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    pub fn hit_tol(&self) -> f64 {
        self.hit_tol
    }

    pub fn active_tol(&self) -> f64 {
        self.active_tol
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn field(&self) -> &ReflectionField {
        &self.field
    }

    /// Samples the driving path `path` from the configured seed and runs it.
    pub fn simulate(&self, params: &BrownianParams, path: u64) -> Result<SrbmPathBundle> {
        check_dim(self.domain.dimension(), params.dimension())?;
        let x = sample_brownian_in(params, &self.grid, self.cfg.seed, path, Some(&self.domain))?;
        self.run(&x)
    }

    /// Runs the scheme on a given driving path, which must live on the
    /// configured grid.
    pub fn run(&self, x: &VectorPath) -> Result<SrbmPathBundle> {
        let d = self.domain.dimension();
        check_dim(d, x.dimension())?;
        if **x.grid() != *self.grid {
            return Err(Error::GridMismatch);
        }
        let patches = self.domain.num_patches();
        let n = self.grid.steps();
        let mut w = Vec::with_capacity(d * (n + 1));
        let mut y = Vec::with_capacity(patches * (n + 1));
        let mut events: Vec<JumpEvent> = Vec::new();
        let mut push = vec![0.0; d];
        let mut y_now = vec![0.0; patches];

        let x0 = x.value(0);
        let g0 = min_gauge(&self.domain, x0);
        if g0 < -self.hit_tol {
            return Err(Error::InvalidConfig(format!(
                "initial point {x0:?} lies outside the closure"
            )));
        }
        let mut pos = x0.to_vec();
        if g0 <= self.hit_tol {
            self.push_at(0, 0.0, &pos.clone(), &mut push, &mut y_now, &mut events)?;
            for k in 0..d {
                pos[k] = x0[k] + push[k];
            }
        }
        w.extend_from_slice(&pos);
        y.extend_from_slice(&y_now);

        let mut start = vec![0.0; d];
        let mut end = vec![0.0; d];
        let mut probe = vec![0.0; d];
        for k in 1..=n {
            let (xa, xb) = (x.value(k - 1), x.value(k));
            // the step is the segment s ↦ X(t_{k-1}) + s ΔX + push
            let mut s0 = 0.0;
            start.copy_from_slice(&pos);
            loop {
                for j in 0..d {
                    end[j] = xb[j] + push[j];
                }
                if min_gauge(&self.domain, &end) > self.hit_tol {
                    pos.copy_from_slice(&end);
                    break;
                }
                let rel = self.crossing(&start, &end, &mut probe);
                let s = s0 + rel * (1.0 - s0);
                let hit: Vec<f64> = if rel == 1.0 {
                    end.clone()
                } else {
                    (0..d).map(|j| start[j] + rel * (end[j] - start[j])).collect()
                };
                self.push_at(k, s, &hit, &mut push, &mut y_now, &mut events)?;
                for j in 0..d {
                    // interpolated driving path plus the updated push
                    start[j] = xa[j] + s * (xb[j] - xa[j]) + push[j];
                }
                s0 = s;
            }
            w.extend_from_slice(&pos);
            y.extend_from_slice(&y_now);
        }
        Ok(SrbmPathBundle {
            w: VectorPath::new(self.grid.clone(), d, w)?,
            x: x.clone(),
            y: VectorPath::new(self.grid.clone(), patches, y)?,
            events,
            delta: self.cfg.delta,
            hit_tol: self.hit_tol,
        })
    }

    /// First point of `[start, end]` within `hit_tol` of `∂G`, as a fraction
    /// of the segment. `end` is known to be within the band or outside.
    fn crossing(&self, start: &[f64], end: &[f64], probe: &mut [f64]) -> f64 {
        let tol = self.hit_tol;
        if let Some(pl) = &self.planes {
            let mut best = 1.0f64;
            for (nrm, b) in pl.normals.iter().zip(&pl.offsets) {
                let (p0, p1) = (dot(nrm, start) - b, dot(nrm, end) - b);
                if p1 > tol {
                    continue;
                }
                let rel = if p0 <= tol {
                    0.0
                } else if p1 > 0.0 {
                    1.0
                } else {
                    p0 / (p0 - p1)
                };
                best = best.min(rel);
            }
            return best;
        }
        let f = |p: &[f64]| min_gauge(&self.domain, p);
        if f(start) <= tol {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..CROSSING_BISECTIONS {
            for j in 0..probe.len() {
                probe[j] = start[j] + hi * (end[j] - start[j]);
            }
            if f(probe) >= -tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            for j in 0..probe.len() {
                probe[j] = start[j] + mid * (end[j] - start[j]);
            }
            if f(probe) > tol {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    fn push_at(
        &self,
        index: usize,
        fraction: f64,
        hit: &[f64],
        push: &mut [f64],
        y_now: &mut [f64],
        events: &mut Vec<JumpEvent>,
    ) -> Result<()> {
        if events.len() >= self.max_jumps {
            let recent_min_reach = events
                .iter()
                .rev()
                .take(RECENT_EVENTS)
                .map(|e| e.reach)
                .fold(f64::INFINITY, f64::min);
            return Err(Error::AccumulationSuspected {
                events: events.len(),
                recent_min_reach,
            });
        }
        let jump = jump_at(
            &self.domain,
            &self.field,
            self.planes.as_ref(),
            hit,
            self.cfg.delta,
            self.cfg.m_cap,
            Tolerances {
                hit: self.hit_tol,
                active: self.active_tol,
            },
        )?;
        for (p, v) in push.iter_mut().zip(&jump.vector) {
            *p += v;
        }
        for (i, c) in jump.active.iter().zip(&jump.weights) {
            y_now[*i] += c * jump.lambda;
        }
        events.push(JumpEvent {
            index,
            fraction,
            hit: hit.to_vec(),
            active: jump.active,
            weights: jump.weights,
            lambda: jump.lambda,
            reach: jump.reach,
        });
        Ok(())
    }
}

/// One run of path `0` under `cfg.seed`.
pub fn simulate(
    domain: &DomainSpec,
    field: &ReflectionField,
    params: &BrownianParams,
    cfg: &SchemeConfig,
) -> Result<SrbmPathBundle> {
    Simulator::new(domain, field, cfg)?.simulate(params, 0)
}

/// `sup_t dist(W(t), Ḡ)` measured by the most negative gauge, and the
/// largest `dist(hit, ∂G_i)` over events incrementing `Y_i`.
pub fn containment_and_complementarity(
    bundle: &SrbmPathBundle,
    domain: &DomainSpec,
    face_distance: impl Fn(usize, &[f64]) -> Result<f64>,
) -> Result<(f64, f64)> {
    let outside = bundle
        .w
        .points()
        .map(|p| (-min_gauge(domain, p)).max(0.0))
        .fold(0.0, f64::max);
    let mut far = 0.0f64;
    for e in &bundle.events {
        for (i, dy) in e.increments() {
            if dy > 0.0 {
                far = far.max(face_distance(i, &e.hit)?);
            }
        }
    }
    Ok((outside, far))
}

pub(crate) fn sup_norm(a: &VectorPath) -> f64 {
    a.points().map(norm).fold(0.0, f64::max)
}
