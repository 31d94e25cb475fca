//! Piecewise-smooth domains `G = ∩ G_i`.
//!
//! Each patch `G_i` is described by a gauge `ψ_i` with `G_i = {ψ_i > 0}` and
//! `∂G_i = {ψ_i = 0}`. Boundary membership is decided with a tolerance
//! `ε_bd`, so an "active set" is always relative to that tolerance.
//!
//! The tube functional `D(r)` and the cone condition on the boundary are
//! estimated by deterministic grid sampling inside the domain's sampling box;
//! all-halfspace domains use exact projections instead of boundary samples.

mod faces;
mod functionals;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::linalg::{check_dim, dist, norm, normalized};
use crate::{Error, Result};

pub use functionals::{
    check_a2, estimate_d, face_distance, A2Outcome, A2Witness, BoundaryModel, BoundarySample,
    TubeDepth,
};
pub(crate) use faces::HalfspaceSystem;
pub(crate) use sampling::Grid;

/// Gradients shorter than this are treated as vanishing.
pub const SINGULAR_GRADIENT: f64 = 1e-14;

/// One smooth piece of the domain description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SurfacePatch {
    /// `{x : <n, x> > offset}` with a unit normal `n`.
    Halfspace { normal: Vec<f64>, offset: f64 },
    /// Open ball `{|x - c| < radius}`.
    BallInterior { center: Vec<f64>, radius: f64 },
    /// Complement of the closed ball, `{|x - c| > radius}`.
    BallExterior { center: Vec<f64>, radius: f64 },
    /// Planar cusp region `{(x, y) : y < |x|^alpha}`, `1 < alpha < 2`.
    Cusp2d { alpha: f64 },
    /// Planar region below the Gaussian bump, `{(x, y) : y < exp(-x^2 / 2)}`.
    GaussianRoof2d,
}

impl SurfacePatch {
    /// Dimension implied by the parameters.
    pub fn dimension(&self) -> usize {
        match self {
            Self::Halfspace { normal, .. } => normal.len(),
            Self::BallInterior { center, .. } | Self::BallExterior { center, .. } => center.len(),
            Self::Cusp2d { .. } | Self::GaussianRoof2d => 2,
        }
    }

    pub fn is_halfspace(&self) -> bool {
        matches!(self, Self::Halfspace { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDomain(msg));
        match self {
            Self::Halfspace { normal, offset } => {
                if normal.is_empty() || !offset.is_finite() {
                    return bad("halfspace needs a nonempty normal and a finite offset".into());
                }
                let n = norm(normal);
                if !n.is_finite() || (n - 1.0).abs() > 1e-12 {
                    return bad(format!("halfspace normal has norm {n}, expected 1"));
                }
            }
            Self::BallInterior { center, radius } | Self::BallExterior { center, radius } => {
                if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
                    return bad("ball center must be a nonempty finite vector".into());
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return bad(format!("ball radius {radius} must be positive"));
                }
            }
            Self::Cusp2d { alpha } => {
                if !(*alpha > 1.0 && *alpha < 2.0) {
                    return bad(format!("cusp exponent {alpha} must lie in (1, 2)"));
                }
            }
            Self::GaussianRoof2d => {}
        }
        Ok(())
    }

    /// The gauge `ψ(x)`; the caller guarantees the dimension.
    pub(crate) fn gauge_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Self::Halfspace { normal, offset } => crate::linalg::dot(normal, x) - offset,
            Self::BallInterior { center, radius } => radius - dist(x, center),
            Self::BallExterior { center, radius } => dist(x, center) - radius,
            Self::Cusp2d { alpha } => x[0].abs().powf(*alpha) - x[1],
            Self::GaussianRoof2d => (-0.5 * x[0] * x[0]).exp() - x[1],
        }
    }

    /// `∇ψ(x)`; zero where the gauge is not differentiable.
    pub(crate) fn gradient_unchecked(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Self::Halfspace { normal, .. } => normal.clone(),
            Self::BallInterior { center, .. } | Self::BallExterior { center, .. } => {
                let r = dist(x, center);
                let sign = if matches!(self, Self::BallInterior { .. }) {
                    -1.0
                } else {
                    1.0
                };
                if r == 0.0 {
                    vec![0.0; x.len()]
                } else {
                    x.iter().zip(center).map(|(a, c)| sign * (a - c) / r).collect()
                }
            }
            Self::Cusp2d { alpha } => {
                let t = x[0];
                let dx = if t == 0.0 {
                    0.0
                } else {
                    alpha * t.abs().powf(alpha - 1.0) * t.signum()
                };
                vec![dx, -1.0]
            }
            Self::GaussianRoof2d => vec![-x[0] * (-0.5 * x[0] * x[0]).exp(), -1.0],
        }
    }
}

/// `ψ(x)` for a single patch: positive inside, zero on the surface, negative
/// outside the closure.
pub fn signed_gauge(patch: &SurfacePatch, x: &[f64]) -> Result<f64> {
    check_dim(patch.dimension(), x.len())?;
    Ok(patch.gauge_unchecked(x))
}

/// Inward unit normal `∇ψ / |∇ψ|` at a point within `tol` of the surface.
pub fn unit_normal(patch: &SurfacePatch, x: &[f64], tol: f64) -> Result<Vec<f64>> {
    normal_impl(patch, None, x, Some(tol))
}

fn normal_impl(
    patch: &SurfacePatch,
    index: Option<usize>,
    x: &[f64],
    tol: Option<f64>,
) -> Result<Vec<f64>> {
    check_dim(patch.dimension(), x.len())?;
    if let Some(tol) = tol {
        let g = patch.gauge_unchecked(x);
        if g.abs() > tol {
            return Err(Error::NotOnBoundary {
                patch: index,
                gauge: g,
            });
        }
    }
    normalized(&patch.gradient_unchecked(x), SINGULAR_GRADIENT).ok_or_else(|| {
        Error::SingularPoint {
            patch: index,
            point: x.to_vec(),
        }
    })
}

/// Sorted patch indices whose gauges vanish up to the tolerance in use.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActiveSet(Vec<usize>);

impl ActiveSet {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_subset(&self, other: &ActiveSet) -> bool {
        self.0.iter().all(|i| other.contains(*i))
    }
}

/// Position of a point relative to `G` at a given tolerance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Location {
    Interior,
    Boundary(ActiveSet),
    Exterior,
}

impl Location {
    pub fn active(&self) -> Option<&ActiveSet> {
        match self {
            Self::Boundary(a) => Some(a),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SamplingBox {
    pub fn diameter(&self) -> f64 {
        dist(&self.lo, &self.hi)
    }

    pub fn contains(&self, x: &[f64], slack: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *v >= l - slack && *v <= h + slack)
    }

    /// The box with the same center and twice the side lengths.
    pub fn doubled(&self) -> Self {
        let (lo, hi) = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| {
                let (c, w) = (0.5 * (l + h), h - l);
                (c - w, c + w)
            })
            .unzip();
        Self { lo, hi }
    }
}

/// A validated domain description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainFile", into = "DomainFile")]
pub struct DomainSpec {
    dimension: usize,
    patches: Vec<SurfacePatch>,
    sampling_box: SamplingBox,
    interior_witness: Vec<f64>,
    boundary_tol: f64,
}

/// On-disk form; `boundary_tol` defaults to `1e-9` times the box diameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainFile {
    dimension: usize,
    patches: Vec<SurfacePatch>,
    sampling_box: SamplingBox,
    interior_witness: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    boundary_tol: Option<f64>,
}

impl TryFrom<DomainFile> for DomainSpec {
    type Error = Error;

    fn try_from(f: DomainFile) -> Result<Self> {
        DomainSpec::new(
            f.dimension,
            f.patches,
            f.sampling_box,
            f.interior_witness,
            f.boundary_tol,
        )
    }
}

impl From<DomainSpec> for DomainFile {
    fn from(d: DomainSpec) -> Self {
        Self {
            dimension: d.dimension,
            patches: d.patches,
            sampling_box: d.sampling_box,
            interior_witness: d.interior_witness,
            boundary_tol: Some(d.boundary_tol),
        }
    }
}

impl DomainSpec {
    pub fn new(
        dimension: usize,
        patches: Vec<SurfacePatch>,
        sampling_box: SamplingBox,
        interior_witness: Vec<f64>,
        boundary_tol: Option<f64>,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidDomain(msg));
        if dimension == 0 {
            return bad("dimension must be at least 1".into());
        }
        if patches.is_empty() {
            return bad("at least one patch is required".into());
        }
        if patches.len() > 63 {
            return bad("at most 63 patches are supported".into());
        }
        for (i, p) in patches.iter().enumerate() {
            p.validate()?;
            if p.dimension() != dimension {
                return bad(format!(
                    "patch {i} has dimension {}, domain has {dimension}",
                    p.dimension()
                ));
            }
        }
        let b = &sampling_box;
        if b.lo.len() != dimension || b.hi.len() != dimension {
            return bad("sampling box corners must have the domain dimension".into());
        }
        if b.lo
            .iter()
            .zip(&b.hi)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h))
        {
            return bad("sampling box must satisfy lo < hi with finite corners".into());
        }
        check_dim(dimension, interior_witness.len())?;
        if let Some((i, g)) = patches
            .iter()
            .map(|p| p.gauge_unchecked(&interior_witness))
            .enumerate()
            .find(|(_, g)| !(*g > 0.0))
        {
            return bad(format!(
                "interior witness has gauge {g} for patch {i}, expected > 0"
            ));
        }
        let boundary_tol = boundary_tol.unwrap_or(1e-9 * b.diameter());
        if !(boundary_tol.is_finite() && boundary_tol > 0.0) {
            return bad(format!("boundary tolerance {boundary_tol} must be positive"));
        }
        Ok(Self {
            dimension,
            patches,
            sampling_box,
            interior_witness,
            boundary_tol,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn patches(&self) -> &[SurfacePatch] {
        &self.patches
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patch(&self, i: usize) -> Result<&SurfacePatch> {
        self.patches.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            count: self.patches.len(),
        })
    }

    pub fn sampling_box(&self) -> &SamplingBox {
        &self.sampling_box
    }

    pub fn interior_witness(&self) -> &[f64] {
        &self.interior_witness
    }

    pub fn boundary_tol(&self) -> f64 {
        self.boundary_tol
    }

    pub fn is_polyhedral(&self) -> bool {
        self.patches.iter().all(SurfacePatch::is_halfspace)
    }

    /// Same domain with another sampling box; the tolerance is kept.
    pub fn with_sampling_box(&self, sampling_box: SamplingBox) -> Result<Self> {
        Self::new(
            self.dimension,
            self.patches.clone(),
            sampling_box,
            self.interior_witness.clone(),
            Some(self.boundary_tol),
        )
    }

    pub fn gauge(&self, i: usize, x: &[f64]) -> Result<f64> {
        check_dim(self.dimension, x.len())?;
        Ok(self.patch(i)?.gauge_unchecked(x))
    }

    /// Inward unit normal of patch `i` at `x`, without a boundary test.
    pub fn normal_at(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        normal_impl(self.patch(i)?, Some(i), x, None)
    }

    /// Inward unit normal of patch `i` at a point within `ε_bd` of `∂G_i`.
    pub fn unit_normal(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        normal_impl(self.patch(i)?, Some(i), x, Some(self.boundary_tol))
    }

    pub fn classify(&self, x: &[f64]) -> Location {
        self.classify_with_tol(x, self.boundary_tol)
    }

    pub fn classify_with_tol(&self, x: &[f64], tol: f64) -> Location {
        let mut active = Vec::new();
        for (i, p) in self.patches.iter().enumerate() {
            let g = p.gauge_unchecked(x);
            if g < -tol || g.is_nan() {
                return Location::Exterior;
            }
            if g <= tol {
                active.push(i);
            }
        }
        if active.is_empty() {
            Location::Interior
        } else {
            Location::Boundary(ActiveSet(active))
        }
    }

    /// True when `x` lies in the closed domain up to `tol`.
    pub fn in_closure(&self, x: &[f64], tol: f64) -> bool {
        self.patches.iter().all(|p| p.gauge_unchecked(x) >= -tol)
    }
}

/// Free-function form of [`DomainSpec::classify`].
pub fn classify(domain: &DomainSpec, x: &[f64]) -> Result<Location> {
    check_dim(domain.dimension, x.len())?;
    Ok(domain.classify(x))
}

/// Resolution and budget for the sampling-based estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Grid step `h`; boundary samples and tube grids both use it.
    pub resolution: f64,
    /// Width of the band around `∂G` used by the Lipschitz estimate.
    pub lipschitz_band: f64,
    /// Number of dyadic radii `2^-k` used by the Hoffman ratio table.
    pub hoffman_levels: usize,
    /// Upper bound on the number of grid points of one sweep.
    pub max_points: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            resolution: 2e-3,
            lipschitz_band: 0.1,
            hoffman_levels: 6,
            max_points: 50_000_000,
        }
    }
}

impl SamplingConfig {
    pub fn with_resolution(resolution: f64) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::InvalidSampling(format!(
                "resolution {} must be positive",
                self.resolution
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn quadrant() -> DomainSpec {
        DomainSpec::new(
            2,
            vec![
                SurfacePatch::Halfspace {
                    normal: vec![1.0, 0.0],
                    offset: 0.0,
                },
                SurfacePatch::Halfspace {
                    normal: vec![0.0, 1.0],
                    offset: 0.0,
                },
            ],
            SamplingBox {
                lo: vec![-1.0, -1.0],
                hi: vec![1.0, 1.0],
            },
            vec![0.5, 0.5],
            Some(1e-9),
        )
        .unwrap()
    }

    #[test]
    fn gauge_examples() {
        let h = SurfacePatch::Halfspace {
            normal: vec![1.0, 0.0],
            offset: 0.0,
        };
        assert_eq!(signed_gauge(&h, &[2.0, 0.0]).unwrap(), 2.0);
        let be = SurfacePatch::BallExterior {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert_eq!(signed_gauge(&be, &[1.0, 0.0]).unwrap(), 0.0);
        let cusp = SurfacePatch::Cusp2d { alpha: 1.5 };
        assert!((signed_gauge(&cusp, &[1.0, 0.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            signed_gauge(&cusp, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn normal_examples() {
        let h = SurfacePatch::Halfspace {
            normal: vec![1.0, 0.0],
            offset: 0.0,
        };
        assert_eq!(unit_normal(&h, &[0.0, 7.0], 1e-9).unwrap(), vec![1.0, 0.0]);
        let be = SurfacePatch::BallExterior {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        assert_eq!(unit_normal(&be, &[1.0, 0.0], 1e-9).unwrap(), vec![1.0, 0.0]);
        let cusp = SurfacePatch::Cusp2d { alpha: 1.5 };
        let n = unit_normal(&cusp, &[1.0, 1.0], 1e-9).unwrap();
        let s = 3.25f64.sqrt();
        assert!((n[0] - 1.5 / s).abs() < 1e-15 && (n[1] + 1.0 / s).abs() < 1e-15);
    }

    #[test]
    fn normal_errors() {
        let h = SurfacePatch::Halfspace {
            normal: vec![1.0, 0.0],
            offset: 0.0,
        };
        assert!(matches!(
            unit_normal(&h, &[0.5, 0.0], 1e-9),
            Err(Error::NotOnBoundary { .. })
        ));
        let tiny = SurfacePatch::BallInterior {
            center: vec![0.0, 0.0],
            radius: 1e-12,
        };
        assert!(matches!(
            unit_normal(&tiny, &[0.0, 0.0], 1e-9),
            Err(Error::SingularPoint { .. })
        ));
    }

    #[test]
    fn classify_examples() {
        let q = quadrant();
        assert_eq!(q.classify(&[0.5, 0.5]), Location::Interior);
        assert_eq!(
            q.classify(&[0.0, 0.0]),
            Location::Boundary(ActiveSet::new(vec![0, 1]))
        );
        assert_eq!(
            q.classify(&[1.0, 0.0]),
            Location::Boundary(ActiveSet::new(vec![1]))
        );
        assert_eq!(q.classify(&[-0.1, 0.5]), Location::Exterior);
    }

    #[test]
    fn validation_rejects_bad_input() {
        let p = |n: Vec<f64>| SurfacePatch::Halfspace {
            normal: n,
            offset: 0.0,
        };
        let bx = SamplingBox {
            lo: vec![-1.0, -1.0],
            hi: vec![1.0, 1.0],
        };
        assert!(DomainSpec::new(2, vec![p(vec![1.0, 1.0])], bx.clone(), vec![1.0, 1.0], None).is_err());
        assert!(DomainSpec::new(2, vec![p(vec![1.0, 0.0])], bx.clone(), vec![-1.0, 0.0], None).is_err());
        assert!(DomainSpec::new(2, vec![], bx.clone(), vec![1.0, 0.0], None).is_err());
        assert!(DomainSpec::new(
            2,
            vec![SurfacePatch::Cusp2d { alpha: 2.0 }],
            bx.clone(),
            vec![0.0, -1.0],
            None
        )
        .is_err());
        assert!(DomainSpec::new(
            2,
            vec![SurfacePatch::BallInterior {
                center: vec![0.0, 0.0],
                radius: 0.0
            }],
            bx,
            vec![0.0, 0.0],
            None
        )
        .is_err());
    }

    #[test]
    fn json_round_trip_and_default_tolerance() {
        let text = r#"{"dimension": 2,
            "patches": [{"kind": "halfspace", "normal": [1, 0], "offset": 0},
                        {"kind": "cusp2d", "alpha": 1.5},
                        {"kind": "gaussian-roof2d"}],
            "sampling_box": {"lo": [-1, -1], "hi": [2, 3]},
            "interior_witness": [0.5, 0.1]}"#;
        let d: DomainSpec = serde_json::from_str(text).unwrap();
        assert!((d.boundary_tol() - 1e-9 * 5.0).abs() < 1e-24);
        let back: DomainSpec = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn witness_is_validated_on_load() {
        let text = r#"{"dimension": 1,
            "patches": [{"kind": "halfspace", "normal": [1], "offset": 0}],
            "sampling_box": {"lo": [-1], "hi": [1]},
            "interior_witness": [-0.5]}"#;
        assert!(serde_json::from_str::<DomainSpec>(text).is_err());
    }
}
