//! Face distances, the tube functional `D(r)` and the boundary cone test.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::faces::{HalfspaceSystem, EXACT_FACE_LIMIT};
use super::sampling::{face_points, Grid, NearestIndex, PointCloud};
use super::{ActiveSet, DomainSpec, SamplingConfig, SurfacePatch};
use crate::linalg::{check_dim, dist, dot, normalized};
use crate::{Error, Result};

/// Value of the tube functional; `Unbounded` stands for `+∞`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TubeDepth {
    Finite(f64),
    Unbounded,
}

impl TubeDepth {
    pub fn value(&self) -> f64 {
        match self {
            Self::Finite(v) => *v,
            Self::Unbounded => f64::INFINITY,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, Self::Unbounded)
    }
}

/// A sampled point of `∂G` with its active set at `ε_bd`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundarySample {
    pub point: Vec<f64>,
    pub active: ActiveSet,
}

/// Sampled (or, for polyhedra, exact) description of the faces
/// `∂G_J ∩ ∂G` at one resolution, reused across queries.
pub struct BoundaryModel {
    domain: DomainSpec,
    h: f64,
    max_points: usize,
    exact: Option<HalfspaceSystem>,
    faces: Vec<PointCloud>,
    face_index: Vec<NearestIndex>,
    /// Samples of `F_J` for `|J| ≥ 2`, indexed by mask.
    joint: Vec<Option<(PointCloud, NearestIndex)>>,
    /// Lower bound factor: `dist(x, ∂G_i) ≥ |ψ_i(x)| / gauge_lip[i]` in the box.
    gauge_lip: Vec<f64>,
}

impl BoundaryModel {
    pub fn build(domain: &DomainSpec, cfg: &SamplingConfig) -> Result<Self> {
        cfg.validate()?;
        let count = domain.num_patches();
        if count > EXACT_FACE_LIMIT {
            return Err(Error::TooManyFaces {
                count,
                limit: EXACT_FACE_LIMIT,
            });
        }
        let h = cfg.resolution;
        let exact = HalfspaceSystem::from_domain(domain)?;
        let faces: Vec<PointCloud> = (0..count)
            .map(|i| face_points(domain, i, h, cfg.max_points))
            .collect::<Result<_>>()?;
        let face_index = faces.iter().map(NearestIndex::build).collect();
        let mut model = Self {
            domain: domain.clone(),
            h,
            max_points: cfg.max_points,
            exact,
            faces,
            face_index,
            joint: Vec::new(),
            gauge_lip: domain
                .patches()
                .iter()
                .map(|p| gauge_lipschitz(p, domain))
                .collect(),
        };
        model.joint = (0..1u64 << count)
            .into_par_iter()
            .map(|mask| {
                if mask.count_ones() < 2 {
                    return None;
                }
                let cloud = model.joint_samples(mask);
                let index = NearestIndex::build(&cloud);
                Some((cloud, index))
            })
            .collect();
        Ok(model)
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn resolution(&self) -> f64 {
        self.h
    }

    pub fn is_exact(&self) -> bool {
        self.exact.is_some()
    }

    /// Number of samples of `∂G_i ∩ ∂G`.
    pub fn face_sample_count(&self, i: usize) -> usize {
        self.faces[i].len()
    }

    /// `F_J` nonempty: by LP for polyhedra, by sampling otherwise.
    pub fn face_nonempty(&self, mask: u64) -> bool {
        match &self.exact {
            Some(sys) => sys.face_nonempty(mask),
            None => {
                if mask.count_ones() == 1 {
                    !self.faces[mask.trailing_zeros() as usize].is_empty()
                } else {
                    self.joint[mask as usize]
                        .as_ref()
                        .is_some_and(|(c, _)| !c.is_empty())
                }
            }
        }
    }

    /// `dist(x, ∩_{j∈J} (∂G_j ∩ ∂G))`, `+∞` for an empty intersection.
    pub fn joint_distance(&self, mask: u64, x: &[f64]) -> f64 {
        match &self.exact {
            Some(sys) => sys.distance(x, mask),
            None => {
                if mask.count_ones() == 1 {
                    self.face_index[mask.trailing_zeros() as usize].distance(x)
                } else {
                    self.joint[mask as usize]
                        .as_ref()
                        .map_or(f64::INFINITY, |(_, idx)| idx.distance(x))
                }
            }
        }
    }

    pub fn face_distance(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.domain.patch(i)?;
        check_dim(self.domain.dimension(), x.len())?;
        Ok(self.joint_distance(1 << i, x))
    }

    fn joint_samples(&self, mask: u64) -> PointCloud {
        let d = self.domain.dimension();
        let mut out = PointCloud::new(d);
        let members: Vec<usize> = (0..self.domain.num_patches())
            .filter(|i| mask >> i & 1 == 1)
            .collect();
        let seed_face = &self.faces[members[0]];
        match &self.exact {
            Some(sys) => {
                if !sys.face_nonempty(mask) {
                    return out;
                }
                for p in seed_face.iter() {
                    if let Some((z, _)) = sys.project(p, mask) {
                        if self.domain.sampling_box().contains(&z, 1e-12) {
                            out.push(&z);
                        }
                    }
                }
                if out.is_empty() {
                    if let Ok(Some(z)) = sys.face_point_lp(mask) {
                        if self.domain.sampling_box().contains(&z, 1e-12) {
                            out.push(&z);
                        }
                    }
                }
            }
            None => {
                let patches = self.domain.patches();
                for p in seed_face.iter() {
                    let near = members[1..].iter().all(|j| {
                        let g = patches[*j].gradient_unchecked(p);
                        let scale = crate::linalg::norm(&g).max(1.0);
                        patches[*j].gauge_unchecked(p).abs() <= 2.0 * self.h * scale
                    });
                    if !near {
                        continue;
                    }
                    if let Some(z) = self.newton_onto(p, &members) {
                        out.push(&z);
                    }
                }
            }
        }
        out.dedup(self.h / 4.0);
        out
    }

    /// Gauss-Newton projection onto `{ψ_j = 0, j ∈ members}` starting at `p`.
    fn newton_onto(&self, p: &[f64], members: &[usize]) -> Option<Vec<f64>> {
        let patches = self.domain.patches();
        let tol = self.domain.boundary_tol();
        let mut z = p.to_vec();
        let d = z.len();
        for _ in 0..50 {
            let r = DVector::from_iterator(
                members.len(),
                members.iter().map(|j| patches[*j].gauge_unchecked(&z)),
            );
            if r.amax() <= 1e-3 * tol {
                let ok = self.domain.sampling_box().contains(&z, 1e-12)
                    && self.domain.in_closure(&z, tol);
                return ok.then_some(z);
            }
            let jac = DMatrix::from_fn(members.len(), d, |a, k| {
                patches[members[a]].gradient_unchecked(&z)[k]
            });
            let gram = &jac * jac.transpose();
            let mu = gram.pseudo_inverse(1e-14).ok()? * r;
            let step = jac.transpose() * mu;
            for (zk, sk) in z.iter_mut().zip(step.iter()) {
                *zk -= sk;
            }
            if dist(&z, p) > 4.0 * self.h {
                return None;
            }
        }
        None
    }

    /// Sampled boundary points: every face sample plus every intersection
    /// sample, each with its active set.
    pub fn boundary_samples(&self) -> Vec<BoundarySample> {
        let mut out = Vec::new();
        let clouds = self
            .faces
            .iter()
            .chain(self.joint.iter().flatten().map(|(c, _)| c));
        for cloud in clouds {
            for p in cloud.iter() {
                if let Some(active) = self.domain.classify(p).active() {
                    out.push(BoundarySample {
                        point: p.to_vec(),
                        active: active.clone(),
                    });
                }
            }
        }
        out
    }

    /// `D̂(r)` over the grid of the sampling box, without the box-doubling test.
    pub fn tube_depth(&self, r: f64) -> Result<TubeDepth> {
        if !(r > 0.0) {
            return Err(Error::InvalidSampling(format!("tube radius {r} must be positive")));
        }
        let grid = Grid::over(self.domain.sampling_box(), self.h, self.max_points)?;
        let d = self.domain.dimension();
        let patches = self.domain.patches();
        let (depth, unbounded) = (0..grid.len())
            .into_par_iter()
            .with_min_len(1024)
            .map_init(
                || vec![0.0; d],
                |x, idx| {
                    grid.point(idx, x);
                    let mut tubes = 0u64;
                    for (i, p) in patches.iter().enumerate() {
                        if p.gauge_unchecked(x).abs() < r * self.gauge_lip[i]
                            && self.joint_distance(1 << i, x) < r
                        {
                            tubes |= 1 << i;
                        }
                    }
                    let mut best = 0.0f64;
                    let mut sub = tubes;
                    while sub != 0 {
                        if !self.face_nonempty(sub) {
                            return (best, true);
                        }
                        best = best.max(self.joint_distance(sub, x));
                        sub = (sub - 1) & tubes;
                    }
                    (best, false)
                },
            )
            .reduce(|| (0.0, false), |a, b| (a.0.max(b.0), a.1 || b.1));
        Ok(if unbounded || depth.is_infinite() {
            TubeDepth::Unbounded
        } else {
            TubeDepth::Finite(depth)
        })
    }
}

/// Upper bound of `|∇ψ|` over the sampling box.
fn gauge_lipschitz(p: &SurfacePatch, domain: &DomainSpec) -> f64 {
    let b = domain.sampling_box();
    let xmax = b.lo[0].abs().max(b.hi[0].abs());
    match p {
        SurfacePatch::Halfspace { .. }
        | SurfacePatch::BallInterior { .. }
        | SurfacePatch::BallExterior { .. } => 1.0,
        SurfacePatch::Cusp2d { alpha } => (1.0 + (alpha * xmax.powf(alpha - 1.0)).powi(2)).sqrt(),
        SurfacePatch::GaussianRoof2d => (1.0 + (-1.0f64).exp()).sqrt(),
    }
}

/// `dist(x, ∂G_i ∩ ∂G)`; exact for all-halfspace domains, an upper-biased
/// sample estimate otherwise. `+∞` when the face has no point in the box.
pub fn face_distance(domain: &DomainSpec, i: usize, x: &[f64], cfg: &SamplingConfig) -> Result<f64> {
    check_dim(domain.dimension(), x.len())?;
    domain.patch(i)?;
    if let Some(sys) = HalfspaceSystem::from_domain(domain)? {
        return Ok(sys.distance(x, 1 << i));
    }
    cfg.validate()?;
    let cloud = face_points(domain, i, cfg.resolution, cfg.max_points)?;
    Ok(NearestIndex::build(&cloud).distance(x))
}

/// `D̂(r)`, the sup over nonempty `J` and grid points in the joint `r`-tube of
/// the faces of the distance to their intersection.
///
/// Curved domains are re-evaluated on the doubled sampling box; growth by more
/// than a factor two is reported as `Unbounded`.
pub fn estimate_d(domain: &DomainSpec, r: f64, cfg: &SamplingConfig) -> Result<TubeDepth> {
    let model = BoundaryModel::build(domain, cfg)?;
    let inner = model.tube_depth(r)?;
    if domain.is_polyhedral() {
        return Ok(inner);
    }
    let TubeDepth::Finite(inner) = inner else {
        return Ok(TubeDepth::Unbounded);
    };
    let wide = domain.with_sampling_box(domain.sampling_box().doubled())?;
    let outer = BoundaryModel::build(&wide, cfg)?.tube_depth(r)?;
    Ok(match outer {
        TubeDepth::Finite(v) if v <= 2.0 * inner + cfg.resolution => TubeDepth::Finite(inner),
        _ => TubeDepth::Unbounded,
    })
}

/// A sampled pair violating the cone inequality at face `face`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A2Witness {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub face: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum A2Outcome {
    /// The inequality holds for every sampled pair closer than `radius`;
    /// `nearest` is the violating pair that fixes the radius, if any.
    Holds {
        radius: f64,
        nearest: Option<A2Witness>,
    },
    /// Violations occur at distances the resolution cannot separate from 0.
    Violation(A2Witness),
}

/// Searches sampled pairs `x ∈ ∂G_i ∩ ∂G`, `y ∈ ∂G` for
/// `<n^i(x), y - x> < -ε |y - x|`.
///
/// Restricting `y` to `∂G` loses nothing: the nearest point of `Ḡ` inside the
/// open violation cone at `x` always lies on `∂G`.
pub fn check_a2(domain: &DomainSpec, eps: f64, cfg: &SamplingConfig) -> Result<A2Outcome> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidSampling(format!("cone parameter {eps} must lie in (0, 1)")));
    }
    if domain.is_polyhedral() {
        return Ok(A2Outcome::Holds {
            radius: f64::INFINITY,
            nearest: None,
        });
    }
    cfg.validate()?;
    let h = cfg.resolution;
    let faces: Vec<PointCloud> = (0..domain.num_patches())
        .map(|i| face_points(domain, i, h, cfg.max_points))
        .collect::<Result<_>>()?;
    let all: Vec<&[f64]> = faces.iter().flat_map(|c| c.iter()).collect();
    let candidates: Vec<(usize, &[f64])> = faces
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.iter().map(move |p| (i, p)))
        .collect();
    let best = candidates
        .par_iter()
        .filter_map(|(i, x)| {
            let grad = domain.patches()[*i].gradient_unchecked(x);
            let n = normalized(&grad, super::SINGULAR_GRADIENT)?;
            let mut local: Option<(f64, &[f64])> = None;
            for y in &all {
                let dxy = dist(x, y);
                if dxy == 0.0 || local.is_some_and(|(b, _)| dxy >= b) {
                    continue;
                }
                let v: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
                if dot(&n, &v) < -eps * dxy {
                    local = Some((dxy, y));
                }
            }
            local.map(|(dxy, y)| A2Witness {
                x: x.to_vec(),
                y: y.to_vec(),
                face: *i,
                distance: dxy,
            })
        })
        .min_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.face.cmp(&b.face))
                .then(a.x.partial_cmp(&b.x).unwrap_or(std::cmp::Ordering::Equal))
        });
    Ok(match best {
        None => A2Outcome::Holds {
            radius: f64::INFINITY,
            nearest: None,
        },
        Some(w) if w.distance <= 2.0 * h => A2Outcome::Violation(w),
        Some(w) => A2Outcome::Holds {
            radius: w.distance,
            nearest: Some(w),
        },
    })
}
