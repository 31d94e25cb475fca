//! The oscillation certificate on a window `[s, t]`.
//!
//! Given the audited constants, a window passes its hypotheses when the
//! event-resolved path stays in a ball of radius `ρ`, every push is at most
//! `δ` per coordinate and happens within `δ` of its face, and
//! `D(Π(Osc(x) + δ)) < ρ/2`. Under those hypotheses `Osc(w)` and `Osc(y)`
//! are bounded by `Π(Osc(x) + δ)`; a failure of that bound is a violation.
//!
//! The scheme pushes with `γ` evaluated at the hit point while the bound is
//! stated for `γ` evaluated at the post-jump point, so the certificate runs on
//! `x_eff = w - Σ γ(post) Δy`, which equals `X` for constant fields.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::{
    check_a2, A2Outcome, BoundaryModel, DomainSpec, HalfspaceSystem, SamplingConfig, TubeDepth,
};
use crate::linalg::{diameter, dist, norm};
use crate::polyhedron::hoffman_constant;
use crate::reflection::{audit_boundary, rho0, ReflectionField};
use crate::{Error, Result};

use super::SrbmPathBundle;

/// Slack allowed in the two oscillation bounds before a violation is declared.
const VIOLATION_SLACK: f64 = 1e-9;
/// Tolerance of the windowed reconstruction check.
const RECONSTRUCTION_TOL: f64 = 1e-9;
/// Fraction of the audited margin used as `a`.
const MARGIN_FACTOR: f64 = 0.9;

/// `Π(u) = Π_I(u)` with `Π_0(u) = u` and
/// `Π_m = Π_{m-1} + (I+2)u + (1 + 4/a)(D(Π_{m-1} + (I+2)u) + 2u)`.
///
/// Infinite values propagate: a sum with `∞` is `∞` and `D(∞) = ∞`.
pub fn pi_function(u: f64, faces: usize, a: f64, d: impl Fn(f64) -> f64) -> Result<f64> {
    if !(u > 0.0) {
        return Err(Error::InvalidConfig(format!("Π needs u > 0, got {u}")));
    }
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidConfig(format!("Π needs a in (0, 1), got {a}")));
    }
    if faces == 0 {
        return Err(Error::InvalidConfig("Π needs at least one face".into()));
    }
    let step = (faces + 2) as f64 * u;
    let mut pi = u;
    for _ in 0..faces {
        let arg = pi + step;
        let depth = if arg.is_infinite() { f64::INFINITY } else { d(arg) };
        pi = arg + (1.0 + 4.0 / a) * (depth + 2.0 * u);
        if pi.is_infinite() || pi.is_nan() {
            return Ok(f64::INFINITY);
        }
    }
    Ok(pi)
}

/// A nondecreasing upper bound for `D(r)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TubeFunction {
    /// `D(r) ≤ slope · r`.
    Linear { slope: f64 },
    /// Values at increasing radii. Between radii the next value up is used;
    /// below the first radius the largest ratio `D/r` in the table is used;
    /// beyond the last radius the bound is infinite.
    Table { radii: Vec<f64>, depths: Vec<f64> },
    Unbounded,
}

impl TubeFunction {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Self::Linear { slope } => slope * r,
            Self::Unbounded => f64::INFINITY,
            Self::Table { radii, depths } => {
                let k = radii.partition_point(|q| *q < r);
                if k == radii.len() {
                    return f64::INFINITY;
                }
                if k == 0 {
                    let ratio = radii
                        .iter()
                        .zip(depths)
                        .map(|(q, v)| v / q)
                        .fold(0.0, f64::max);
                    return ratio * r;
                }
                depths[k]
            }
        }
    }

    /// From the tube depths at `r = 2^{-k}`, `k = 1..=cfg.hoffman_levels`:
    /// the exact Hoffman slope for polyhedra, a table otherwise.
    pub fn estimate(domain: &DomainSpec, cfg: &SamplingConfig) -> Result<Self> {
        let rows: Vec<(f64, TubeDepth)> = if domain.is_polyhedral() {
            let est = hoffman_constant(domain, cfg)?;
            if let TubeDepth::Finite(slope) = est.constant {
                return Ok(Self::Linear { slope });
            }
            est.table.into_iter().map(|r| (r.r, r.depth)).collect()
        } else {
            (1..=cfg.hoffman_levels)
                .map(|k| {
                    let r = 0.5f64.powi(k as i32);
                    crate::geometry::estimate_d(domain, r, cfg).map(|v| (r, v))
                })
                .collect::<Result<_>>()?
        };
        let mut radii = Vec::new();
        let mut depths = Vec::new();
        // ascending radius; stop at the first unbounded value
        for (r, v) in rows.into_iter().rev() {
            match v {
                TubeDepth::Finite(v) => {
                    radii.push(r);
                    depths.push(depths.last().map_or(v, |p: &f64| p.max(v)));
                }
                TubeDepth::Unbounded => break,
            }
        }
        Ok(if radii.is_empty() {
            Self::Unbounded
        } else {
            Self::Table { radii, depths }
        })
    }
}

enum FaceDistances {
    Exact(HalfspaceSystem),
    Sampled(Box<BoundaryModel>),
}

/// Audited constants shared by all certificates of a run.
#[derive(Clone)]
pub struct CertificateContext {
    pub faces: usize,
    /// Margin `a`, a fixed fraction of the audited infimum.
    pub a: f64,
    pub lipschitz: f64,
    pub rho0: f64,
    /// `R̂(a/4)`, infinite for polyhedra.
    pub a2_radius: f64,
    pub tube: TubeFunction,
    /// `ρ`, half of `min{ρ_0/4, R̂(a/4)/4}`; may be infinite.
    pub rho: f64,
    /// The certificate's `δ`: twice the scheme's jump scale, which bounds both
    /// the single push and the post-jump distance to the face.
    pub delta: f64,
    pub hit_tol: f64,
    distances: Arc<FaceDistances>,
}

impl std::fmt::Debug for CertificateContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CertificateContext")
            .field("faces", &self.faces)
            .field("a", &self.a)
            .field("lipschitz", &self.lipschitz)
            .field("rho", &self.rho)
            .field("delta", &self.delta)
            .finish_non_exhaustive()
    }
}

impl CertificateContext {
    /// Audits the boundary, the cone condition and the tube function.
    pub fn from_audit(
        domain: &DomainSpec,
        field: &ReflectionField,
        cfg: &SamplingConfig,
        scheme_delta: f64,
        hit_tol: f64,
    ) -> Result<Self> {
        let audit = audit_boundary(domain, field, cfg)?;
        if !audit.passed {
            let (point, active) = audit
                .failure
                .map(|f| (f.point, f.active))
                .unwrap_or_default();
            return Err(Error::WeightsInfeasible {
                point,
                active,
                level: audit.level,
            });
        }
        let a = (MARGIN_FACTOR * audit.level).min(MARGIN_FACTOR);
        let a2_radius = if domain.is_polyhedral() {
            f64::INFINITY
        } else {
            match check_a2(domain, a / 4.0, cfg)? {
                A2Outcome::Holds { radius, .. } => radius,
                A2Outcome::Violation(_) => 0.0,
            }
        };
        let tube = TubeFunction::estimate(domain, cfg)?;
        Self::new(domain, cfg, a, audit.lipschitz, a2_radius, tube, scheme_delta, hit_tol)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        domain: &DomainSpec,
        cfg: &SamplingConfig,
        a: f64,
        lipschitz: f64,
        a2_radius: f64,
        tube: TubeFunction,
        scheme_delta: f64,
        hit_tol: f64,
    ) -> Result<Self> {
        let r0 = rho0(a, lipschitz);
        let distances = match HalfspaceSystem::from_domain(domain)? {
            Some(sys) => FaceDistances::Exact(sys),
            None => FaceDistances::Sampled(Box::new(BoundaryModel::build(domain, cfg)?)),
        };
        Ok(Self {
            faces: domain.num_patches(),
            a,
            lipschitz,
            rho0: r0,
            a2_radius,
            tube,
            rho: 0.5 * (r0 / 4.0).min(a2_radius / 4.0),
            delta: 2.0 * scheme_delta,
            hit_tol,
            distances: Arc::new(distances),
        })
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    fn face_distance(&self, i: usize, x: &[f64]) -> f64 {
        match &*self.distances {
            FaceDistances::Exact(sys) => sys.distance(x, 1 << i),
            FaceDistances::Sampled(m) => m.joint_distance(1 << i, x),
        }
    }

    pub fn pi(&self, u: f64) -> Result<f64> {
        pi_function(u, self.faces, self.a, |r| self.tube.eval(r))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Verified,
    HypothesisNotMet,
    #[serde(rename = "VIOLATION")]
    Violation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypotheses {
    /// `0 < δ < ρ/2`.
    pub scale: bool,
    /// The window stays in `B_ρ(x_0) ∩ U_δ(G)`.
    pub localized: bool,
    /// `w - x - Σ γ dy` is constant on the window.
    pub reconstruction: bool,
    pub y_nonnegative: bool,
    /// Nondecreasing with every push at most `δ` per coordinate.
    pub y_increments: bool,
    /// Every push of `y_i` happens within `δ` of `∂G_i ∩ ∂G`.
    pub complementarity: bool,
    /// `D(Π(Osc(x) + δ)) < ρ/2`.
    pub tube: bool,
}

impl Hypotheses {
    pub fn all(&self) -> bool {
        self.scale
            && self.localized
            && self.reconstruction
            && self.y_nonnegative
            && self.y_increments
            && self.complementarity
            && self.tube
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub window: [f64; 2],
    /// `None` when unbounded.
    pub rho: Option<f64>,
    pub x0: Vec<f64>,
    pub delta: f64,
    pub osc_w: f64,
    pub osc_x: f64,
    pub osc_y: f64,
    /// `Π(Osc(x) + δ)`, `None` when infinite.
    pub pi: Option<f64>,
    pub hypotheses: Hypotheses,
    pub verdict: Verdict,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

struct Vertex {
    w: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
}

/// Evaluates the certificate on the window `[s, t]` of grid times.
pub fn check_certificate(
    bundle: &SrbmPathBundle,
    s: f64,
    t: f64,
    ctx: &CertificateContext,
    domain: &DomainSpec,
    field: &ReflectionField,
) -> Result<CertificateReport> {
    let grid = bundle.grid();
    let (Some(a), Some(b)) = (grid.index_of(s), grid.index_of(t)) else {
        return Err(Error::InvalidPath(format!("window [{s}, {t}] is not on the grid")));
    };
    if a >= b {
        return Err(Error::InvalidPath(format!("empty window [{s}, {t}]")));
    }
    let d = bundle.w.dimension();
    let w_s = bundle.w.value(a).to_vec();
    let x_s = bundle.x.value(a).to_vec();
    // x_eff(u) = w(u) - w(s) + x(s) - Σ_{(s,u]} γ(post) Δy
    let mut post_push = vec![0.0; d];
    let mut hit_push = vec![0.0; d];
    let x_eff = |w: &[f64], push: &[f64]| -> Vec<f64> {
        (0..d).map(|j| w[j] - w_s[j] + x_s[j] - push[j]).collect()
    };
    let mut vertices = vec![Vertex {
        w: w_s.clone(),
        x: x_s.clone(),
        y: bundle.y.value(a).to_vec(),
    }];
    let mut increments_ok = true;
    let mut complementarity = true;
    let mut reconstruction = 0.0f64;
    let mut y_now = bundle.y.value(a).to_vec();
    for k in a + 1..=b {
        for e in bundle.events_at(k) {
            vertices.push(Vertex {
                w: e.hit.clone(),
                x: x_eff(&e.hit, &post_push),
                y: y_now.clone(),
            });
            let mut post = e.hit.clone();
            let mut incs = Vec::with_capacity(e.active.len());
            for (i, dy) in e.increments() {
                let g = field.gamma(domain, i, &e.hit)?;
                for j in 0..d {
                    post[j] += g[j] * dy;
                    hit_push[j] += g[j] * dy;
                }
                incs.push((i, dy));
            }
            for (i, dy) in incs {
                if !(dy >= 0.0 && dy <= ctx.delta) {
                    increments_ok = false;
                }
                y_now[i] += dy;
                if dy > 0.0 && !(ctx.face_distance(i, &post) < ctx.delta) {
                    complementarity = false;
                }
                let g = field.gamma(domain, i, &post)?;
                for j in 0..d {
                    post_push[j] += g[j] * dy;
                }
            }
            vertices.push(Vertex {
                x: x_eff(&post, &post_push),
                w: post,
                y: y_now.clone(),
            });
        }
        let w_k = bundle.w.value(k);
        let x_k = bundle.x.value(k);
        let residual: f64 = (0..d)
            .map(|j| {
                let r = (w_k[j] - w_s[j]) - (x_k[j] - x_s[j]) - hit_push[j];
                r * r
            })
            .sum::<f64>()
            .sqrt();
        reconstruction = reconstruction.max(residual);
        y_now = bundle.y.value(k).to_vec();
        vertices.push(Vertex {
            w: w_k.to_vec(),
            x: x_eff(w_k, &post_push),
            y: y_now.clone(),
        });
    }

    let ws: Vec<&[f64]> = vertices.iter().map(|v| v.w.as_slice()).collect();
    let xs: Vec<&[f64]> = vertices.iter().map(|v| v.x.as_slice()).collect();
    let monotone = vertices
        .windows(2)
        .all(|p| p[0].y.iter().zip(&p[1].y).all(|(u, v)| v >= u));
    let osc_y = if monotone {
        // componentwise nondecreasing: the endpoints realize the diameter
        dist(&vertices[0].y, &vertices[vertices.len() - 1].y)
    } else {
        let ys: Vec<&[f64]> = vertices.iter().map(|v| v.y.as_slice()).collect();
        diameter(&ys)
    };
    let osc_w = diameter(&ws);
    let osc_x = diameter(&xs);

    let centroid: Vec<f64> = (0..d)
        .map(|j| ws.iter().map(|p| p[j]).sum::<f64>() / ws.len() as f64)
        .collect();
    let x0 = if domain.in_closure(&centroid, ctx.hit_tol) {
        centroid
    } else {
        ws.iter()
            .min_by(|p, q| dist(p, &centroid).total_cmp(&dist(q, &centroid)))
            .expect("window has vertices")
            .to_vec()
    };
    let radius = ws.iter().map(|p| dist(p, &x0)).fold(0.0, f64::max);

    let pi = ctx.pi(osc_x + ctx.delta)?;
    let hypotheses = Hypotheses {
        scale: ctx.delta > 0.0 && ctx.delta < 0.5 * ctx.rho,
        localized: radius < ctx.rho && ws.iter().all(|p| domain.in_closure(p, ctx.hit_tol)),
        reconstruction: reconstruction <= RECONSTRUCTION_TOL * (1.0 + norm(&w_s)),
        y_nonnegative: vertices[0].y.iter().all(|v| *v >= 0.0),
        y_increments: monotone && increments_ok,
        complementarity,
        tube: ctx.tube.eval(pi) < 0.5 * ctx.rho,
    };
    let verdict = if !hypotheses.all() {
        Verdict::HypothesisNotMet
    } else if osc_w > pi + VIOLATION_SLACK || osc_y > pi + VIOLATION_SLACK {
        Verdict::Violation
    } else {
        Verdict::Verified
    };
    Ok(CertificateReport {
        window: [grid.time(a), grid.time(b)],
        rho: finite(ctx.rho),
        x0,
        delta: ctx.delta,
        osc_w,
        osc_x,
        osc_y,
        pi: finite(pi),
        hypotheses,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pi_examples() {
        let id = |r: f64| r;
        assert!((pi_function(1.0, 1, 0.5, id).unwrap() - 58.0).abs() < 1e-12);
        for k in 1..=20 {
            let u = 0.5f64.powi(k);
            assert!((pi_function(u, 1, 0.5, id).unwrap() / u - 58.0).abs() < 1e-9);
        }
        assert_eq!(pi_function(0.1, 2, 0.3, |_| f64::INFINITY).unwrap(), f64::INFINITY);
        assert!(pi_function(0.0, 1, 0.5, id).is_err());
        assert!(pi_function(1.0, 1, 1.5, id).is_err());
    }

    #[test]
    fn tube_table_is_conservative() {
        let t = TubeFunction::Table {
            radii: vec![0.125, 0.25, 0.5],
            depths: vec![0.2, 0.3, 0.9],
        };
        assert_eq!(t.eval(0.25), 0.3);
        assert_eq!(t.eval(0.3), 0.9);
        assert_eq!(t.eval(0.6), f64::INFINITY);
        // largest ratio in the table is 0.9 / 0.5
        assert!((t.eval(0.0625) - 0.1125).abs() < 1e-15);
        assert_eq!(TubeFunction::Unbounded.eval(1e-9), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn pi_is_monotone_and_dominates_u(
            u in 1e-9f64..10.0,
            f in 1.0f64..4.0,
            faces in 1usize..6,
            a in 0.05f64..0.95,
            c in 0.0f64..5.0,
        ) {
            let d = |r: f64| c * r;
            let lo = pi_function(u, faces, a, d).unwrap();
            let hi = pi_function(u * f, faces, a, d).unwrap();
            prop_assert!(lo >= u);
            prop_assert!(hi >= lo);
        }
    }
}
