//! Reflection fields `γ^i` and the spanning conditions on them.
//!
//! At a boundary point with active set `I(x)`, the weights `c` put a convex
//! combination of the reflection directions strictly inside every active
//! face, and the dual weights `b` do the same for the normals against the
//! reflection directions. Both are max-margin linear programs over the
//! probability simplex.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{BoundaryModel, BoundarySample, DomainSpec, Grid, SamplingConfig};
use crate::linalg::{check_dim, dist, dot, norm, normalized};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::{Error, Result};

/// Largest active set accepted by the M-matrix construction.
pub const MAX_M_MATRIX_ORDER: usize = 8;

/// One patch's reflection field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FieldComponent {
    /// A fixed direction, normalized on load.
    Constant { direction: Vec<f64> },
    /// The inward normal rotated clockwise by `angle` radians. Nonzero
    /// angles are planar only.
    RotateNormal { angle: f64 },
    /// `x ↦ (A x + v) / |A x + v|`.
    Affine { matrix: Vec<Vec<f64>>, shift: Vec<f64> },
}

/// The fields `γ^1, ..., γ^I`, one per patch, with an optional declared
/// Lipschitz constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FieldFile", into = "FieldFile")]
pub struct ReflectionField {
    fields: Vec<FieldComponent>,
    lipschitz: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldFile {
    fields: Vec<FieldComponent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lipschitz: Option<f64>,
}

impl TryFrom<FieldFile> for ReflectionField {
    type Error = Error;

    fn try_from(f: FieldFile) -> Result<Self> {
        Self::new(f.fields, f.lipschitz)
    }
}

impl From<ReflectionField> for FieldFile {
    fn from(f: ReflectionField) -> Self {
        Self {
            fields: f.fields,
            lipschitz: f.lipschitz,
        }
    }
}

impl ReflectionField {
    pub fn new(fields: Vec<FieldComponent>, lipschitz: Option<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidField(m));
        if fields.is_empty() {
            return bad("at least one field is required".into());
        }
        let mut fields = fields;
        for (i, f) in fields.iter_mut().enumerate() {
            match f {
                FieldComponent::Constant { direction } => match normalized(direction, 1e-300) {
                    Some(u) if u.iter().all(|v| v.is_finite()) => *direction = u,
                    _ => return bad(format!("field {i}: constant direction must be nonzero")),
                },
                FieldComponent::RotateNormal { angle } => {
                    if !angle.is_finite() {
                        return bad(format!("field {i}: rotation angle must be finite"));
                    }
                }
                FieldComponent::Affine { matrix, shift } => {
                    let d = shift.len();
                    if d == 0 || matrix.len() != d || matrix.iter().any(|row| row.len() != d) {
                        return bad(format!("field {i}: affine map must be square of size {d}"));
                    }
                }
            }
        }
        if let Some(l) = lipschitz {
            if !(l.is_finite() && l >= 0.0) {
                return bad(format!("declared Lipschitz constant {l} must be nonnegative"));
            }
        }
        Ok(Self { fields, lipschitz })
    }

    /// Constant fields, one direction per patch.
    pub fn constant(directions: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            directions
                .into_iter()
                .map(|direction| FieldComponent::Constant { direction })
                .collect(),
            None,
        )
    }

    /// `γ^i = n^i` on every patch.
    pub fn normal(patches: usize) -> Self {
        Self {
            fields: vec![FieldComponent::RotateNormal { angle: 0.0 }; patches],
            lipschitz: None,
        }
    }

    pub fn components(&self) -> &[FieldComponent] {
        &self.fields
    }

    pub fn declared_lipschitz(&self) -> Option<f64> {
        self.lipschitz
    }

    pub fn is_constant(&self) -> bool {
        self.fields
            .iter()
            .all(|f| matches!(f, FieldComponent::Constant { .. }))
    }

    /// Checks that the field fits the domain: one component per patch and
    /// matching dimensions.
    pub fn validate_for(&self, domain: &DomainSpec) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidField(m));
        if self.fields.len() != domain.num_patches() {
            return bad(format!(
                "{} fields for {} patches",
                self.fields.len(),
                domain.num_patches()
            ));
        }
        let d = domain.dimension();
        for (i, f) in self.fields.iter().enumerate() {
            match f {
                FieldComponent::Constant { direction } if direction.len() != d => {
                    return bad(format!("field {i} has dimension {}", direction.len()))
                }
                FieldComponent::RotateNormal { angle } if d != 2 && *angle != 0.0 => {
                    return bad(format!("field {i}: rotate-normal needs dimension 2"))
                }
                FieldComponent::Affine { shift, .. } if shift.len() != d => {
                    return bad(format!("field {i} has dimension {}", shift.len()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// `γ^i(x)`, unit length.
    pub fn gamma(&self, domain: &DomainSpec, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(domain.dimension(), x.len())?;
        let field = self.fields.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            count: self.fields.len(),
        })?;
        match field {
            FieldComponent::Constant { direction } => Ok(direction.clone()),
            FieldComponent::RotateNormal { angle } => {
                let n = domain.normal_at(i, x)?;
                if *angle == 0.0 {
                    return Ok(n);
                }
                if n.len() != 2 {
                    return Err(Error::InvalidField("rotate-normal needs dimension 2".into()));
                }
                let (s, c) = angle.sin_cos();
                let v = [n[0] * c + n[1] * s, -n[0] * s + n[1] * c];
                // rotation preserves length; renormalize against rounding
                let l = norm(&v);
                Ok(vec![v[0] / l, v[1] / l])
            }
            FieldComponent::Affine { matrix, shift } => {
                let v: Vec<f64> = matrix
                    .iter()
                    .zip(shift)
                    .map(|(row, s)| dot(row, x) + s)
                    .collect();
                normalized(&v, 1e-300).ok_or_else(|| Error::ZeroDirection {
                    index: i,
                    point: x.to_vec(),
                })
            }
        }
    }

    /// All `γ^i(x)` for `i` in `active`.
    pub fn gammas(&self, domain: &DomainSpec, active: &[usize], x: &[f64]) -> Result<Vec<Vec<f64>>> {
        active.iter().map(|i| self.gamma(domain, *i, x)).collect()
    }
}

/// Free-function form of [`ReflectionField::gamma`].
pub fn gamma(field: &ReflectionField, domain: &DomainSpec, i: usize, x: &[f64]) -> Result<Vec<f64>> {
    field.gamma(domain, i, x)
}

/// `L̂`: the largest difference quotient of any `γ^i` between neighbouring
/// grid points of `Ḡ` in the band of width `cfg.lipschitz_band` around `∂G`.
pub fn estimate_lipschitz(field: &ReflectionField, domain: &DomainSpec, cfg: &SamplingConfig) -> Result<f64> {
    field.validate_for(domain)?;
    if field.is_constant() {
        return Ok(0.0);
    }
    cfg.validate()?;
    let grid = Grid::over(domain.sampling_box(), cfg.resolution, cfg.max_points)?;
    let d = domain.dimension();
    let tol = domain.boundary_tol();
    let band = cfg.lipschitz_band;
    let offsets: Vec<Vec<isize>> = (1..1usize << d)
        .map(|bits| (0..d).map(|k| (bits >> k & 1) as isize).collect())
        .collect();
    let in_band = |x: &[f64]| {
        domain.in_closure(x, tol)
            && domain
                .patches()
                .iter()
                .any(|p| p.gauge_unchecked(x).abs() <= band)
    };
    let best = (0..grid.len())
        .into_par_iter()
        .with_min_len(1024)
        .map_init(
            || (vec![0.0; d], vec![0.0; d]),
            |(x, y), idx| {
                grid.point(idx, x);
                if !in_band(x) {
                    return 0.0;
                }
                let mut best = 0.0f64;
                for off in &offsets {
                    let Some(j) = grid.neighbour(idx, off) else {
                        continue;
                    };
                    grid.point(j, y);
                    if !in_band(y) {
                        continue;
                    }
                    let step = dist(x, y);
                    for i in 0..domain.num_patches() {
                        if let (Ok(gx), Ok(gy)) = (field.gamma(domain, i, x), field.gamma(domain, i, y)) {
                            best = best.max(dist(&gx, &gy) / step);
                        }
                    }
                }
                best
            },
        )
        .reduce(|| 0.0, f64::max);
    Ok(best)
}

/// `ρ_0 = a / (4L)`, infinite for constant fields.
pub fn rho0(a: f64, lipschitz: f64) -> f64 {
    if lipschitz == 0.0 {
        f64::INFINITY
    } else {
        a / (4.0 * lipschitz)
    }
}

/// A point of the simplex and the margin it attains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMargin {
    pub level: f64,
    pub weights: Vec<f64>,
}

/// Result of a max-margin weight problem: feasible exactly when the optimal
/// level is positive. The infeasible branch carries the optimal weights as a
/// certificate that no level above `level <= 0` is reachable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightOutcome {
    Feasible(MaxMargin),
    Infeasible(MaxMargin),
}

impl WeightOutcome {
    pub fn margin(&self) -> &MaxMargin {
        match self {
            Self::Feasible(m) | Self::Infeasible(m) => m,
        }
    }

    pub fn level(&self) -> f64 {
        self.margin().level
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, Self::Feasible(_))
    }

    fn from_margin(m: MaxMargin, threshold: f64) -> Self {
        if m.level > threshold {
            Self::Feasible(m)
        } else {
            Self::Infeasible(m)
        }
    }
}

/// `max_{c ∈ simplex} min_r Σ_k m[r][k] c_k`.
///
/// Two columns are solved in closed form over the breakpoints of the
/// piecewise-linear objective; larger games go through the simplex method.
/// The returned level is re-evaluated from the returned weights.
pub(crate) fn max_min_simplex(m: &[Vec<f64>]) -> Result<MaxMargin> {
    let k = m[0].len();
    let eval = |c: &[f64]| {
        m.iter()
            .map(|row| dot(row, c))
            .fold(f64::INFINITY, f64::min)
    };
    let weights = match k {
        1 => vec![1.0],
        2 => {
            // f_r(t) = t m[r][0] + (1 - t) m[r][1]
            let mut cands = vec![1.0, 0.0];
            for (a, ra) in m.iter().enumerate() {
                for rb in &m[a + 1..] {
                    let (sa, sb) = (ra[0] - ra[1], rb[0] - rb[1]);
                    if (sa - sb).abs() > 1e-300 {
                        let t = (rb[1] - ra[1]) / (sa - sb);
                        if (0.0..=1.0).contains(&t) {
                            cands.push(t);
                        }
                    }
                }
            }
            let mut best = (f64::NEG_INFINITY, 1.0);
            for t in cands {
                let v = eval(&[t, 1.0 - t]);
                if v > best.0 + 1e-15 {
                    best = (v, t);
                }
            }
            vec![best.1, 1.0 - best.1]
        }
        _ => {
            let mut lp = LinearProgram::new(k + 1, true);
            let mut obj = vec![0.0; k + 1];
            obj[k] = 1.0;
            lp.objective(&obj);
            for v in 0..k {
                lp.bound(v, 0.0, f64::INFINITY);
            }
            let mut sum = vec![1.0; k + 1];
            sum[k] = 0.0;
            lp.row(sum, Cmp::Eq, 1.0);
            for row in m {
                let mut coeffs = row.clone();
                coeffs.push(-1.0);
                lp.row(coeffs, Cmp::Ge, 0.0);
            }
            match lp.solve()? {
                LpOutcome::Optimal { x, .. } => {
                    let mut c: Vec<f64> = x[..k].iter().map(|v| v.max(0.0)).collect();
                    let s: f64 = c.iter().sum();
                    c.iter_mut().for_each(|v| *v /= s);
                    c
                }
                other => return Err(Error::Lp(format!("weight program returned {other:?}"))),
            }
        }
    };
    Ok(MaxMargin {
        level: eval(&weights),
        weights,
    })
}

fn check_lists(normals: &[Vec<f64>], gammas: &[Vec<f64>]) -> Result<()> {
    if normals.is_empty() {
        return Err(Error::InvalidField("empty active set".into()));
    }
    check_dim(normals.len(), gammas.len())?;
    let d = normals[0].len();
    for v in normals.iter().chain(gammas) {
        check_dim(d, v.len())?;
    }
    Ok(())
}

/// Maximizes `a` over `c` in the simplex subject to
/// `<Σ_i c_i γ_i, n_j> ≥ a` for every `j`.
pub fn solve_weights_c(normals: &[Vec<f64>], gammas: &[Vec<f64>]) -> Result<WeightOutcome> {
    check_lists(normals, gammas)?;
    let m: Vec<Vec<f64>> = normals
        .iter()
        .map(|n| gammas.iter().map(|g| dot(g, n)).collect())
        .collect();
    Ok(WeightOutcome::from_margin(max_min_simplex(&m)?, 0.0))
}

/// Which diagonal-dominance condition to test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimeCondition {
    /// `b_i <n_i, γ_i> ≥ a + Σ_{j≠i} b_j |<n_j, γ_i>|`
    NormalWeights,
    /// `c_i <γ_i, n_i> ≥ a + Σ_{j≠i} c_j |<γ_j, n_i>|`
    ReflectionWeights,
}

/// `g[i][j] = <n_i, γ_j>`.
pub fn inner_products(normals: &[Vec<f64>], gammas: &[Vec<f64>]) -> Vec<Vec<f64>> {
    normals
        .iter()
        .map(|n| gammas.iter().map(|g| dot(n, g)).collect())
        .collect()
}

/// Row coefficients of the dominance condition, linear in the weights.
fn prime_rows(g: &[Vec<f64>], cond: PrimeCondition) -> Vec<Vec<f64>> {
    let k = g.len();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| match (cond, i == j) {
                    (_, true) => g[i][i],
                    (PrimeCondition::NormalWeights, false) => -g[j][i].abs(),
                    (PrimeCondition::ReflectionWeights, false) => -g[i][j].abs(),
                })
                .collect()
        })
        .collect()
}

/// Per-row slacks of the dominance condition, computed from the inner
/// product matrix `g[i][j] = <n_i, γ_j>`.
pub fn prime_slacks(g: &[Vec<f64>], level: f64, weights: &[f64], cond: PrimeCondition) -> Vec<f64> {
    prime_rows(g, cond)
        .iter()
        .map(|row| dot(row, weights) - level)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimeCheck {
    pub pass: bool,
    pub slacks: Vec<f64>,
}

pub fn check_a5prime(
    normals: &[Vec<f64>],
    gammas: &[Vec<f64>],
    level: f64,
    weights: &[f64],
    cond: PrimeCondition,
) -> Result<PrimeCheck> {
    check_lists(normals, gammas)?;
    check_dim(normals.len(), weights.len())?;
    let slacks = prime_slacks(&inner_products(normals, gammas), level, weights, cond);
    Ok(PrimeCheck {
        pass: slacks.iter().all(|s| *s >= 0.0),
        slacks,
    })
}

/// Best level of the reflection-weight dominance condition.
pub fn solve_weights_c_prime(normals: &[Vec<f64>], gammas: &[Vec<f64>]) -> Result<WeightOutcome> {
    check_lists(normals, gammas)?;
    let rows = prime_rows(&inner_products(normals, gammas), PrimeCondition::ReflectionWeights);
    Ok(WeightOutcome::from_margin(max_min_simplex(&rows)?, 0.0))
}

/// Dual weights from the M-matrix construction.
///
/// With `A_ii = <n_i, γ_i>` and `A_ij = -|<n_i, γ_j>|`, the matrix
/// `A - (a/2) E` (`E` all ones) must be a nonsingular M-matrix; then
/// `(Aᵀ - (a/2) E) b̃ = 1` has a positive solution and `b = b̃ / Σ b̃` meets
/// the normal-weight dominance condition at level `a/2`.
pub fn solve_weights_b(normals: &[Vec<f64>], gammas: &[Vec<f64>], level: f64) -> Result<MaxMargin> {
    check_lists(normals, gammas)?;
    let g = inner_products(normals, gammas);
    let k = g.len();
    let a: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { g[i][i] } else { -g[i][j].abs() })
                .collect()
        })
        .collect();
    m_matrix_weights(&a, level)
}

/// The construction of [`solve_weights_b`] for an explicit Z-matrix `A`.
pub fn m_matrix_weights(a: &[Vec<f64>], level: f64) -> Result<MaxMargin> {
    let k = a.len();
    if k == 0 || a.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidField("M-matrix input must be square and nonempty".into()));
    }
    if k > MAX_M_MATRIX_ORDER {
        return Err(Error::TooManyFaces {
            count: k,
            limit: MAX_M_MATRIX_ORDER,
        });
    }
    if !(level > 0.0) {
        return Err(Error::InvalidField(format!("level {level} must be positive")));
    }
    let half = 0.5 * level;
    let m = DMatrix::from_fn(k, k, |i, j| a[i][j] - half);
    for i in 0..k {
        for j in 0..k {
            if i != j && m[(i, j)] > 0.0 {
                return Err(Error::NotMMatrix {
                    order: 0,
                    value: m[(i, j)],
                });
            }
        }
    }
    for order in 1..=k {
        let minor = m.view((0, 0), (order, order)).into_owned().determinant();
        if !(minor > 0.0) {
            return Err(Error::NotMMatrix {
                order,
                value: minor,
            });
        }
    }
    let rhs = nalgebra::DVector::from_element(k, 1.0);
    let bt = m
        .transpose()
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotMMatrix { order: k, value: 0.0 })?;
    let s: f64 = bt.iter().sum();
    Ok(MaxMargin {
        level: half,
        weights: bt.iter().map(|v| v / s).collect(),
    })
}

/// Location where the spanning condition fails.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A5Failure {
    pub point: Vec<f64>,
    pub active: Vec<usize>,
    pub reflection_level: f64,
    pub normal_level: f64,
    pub reflection_weights: Vec<f64>,
}

/// Sampled audit of the spanning condition over `∂G`.
///
/// All values are sampled evidence at `resolution`, not a proof about the
/// whole boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct A5Report {
    pub samples: usize,
    pub resolution: f64,
    /// Infimum over samples of the optimal `a` for the reflection weights `c`.
    pub reflection_level: f64,
    /// Infimum over samples of the optimal `a` for the normal weights `b`.
    pub normal_level: f64,
    /// `min(reflection_level, normal_level)`.
    pub level: f64,
    pub worst_point: Option<BoundarySample>,
    pub failure: Option<A5Failure>,
    /// Samples where the reflection-weight dominance condition holds.
    pub dominance_points: usize,
    /// Among those, samples where the M-matrix dual weights were found and
    /// pass their check.
    pub dual_successes: usize,
    pub lipschitz: f64,
    pub rho0: f64,
    /// Radius of the neighbourhood in which the margins are re-evaluated.
    pub locality_radius: f64,
    /// Smallest margin seen at perturbed points, to be compared with `a/2`.
    pub locality_margin: f64,
    pub locality_ok: bool,
    pub passed: bool,
}

struct SampleAudit {
    sample: BoundarySample,
    c: MaxMargin,
    b: MaxMargin,
    dominance: bool,
    dual_ok: bool,
}

/// Runs both weight programs at every boundary sample, then re-evaluates the
/// margins of the sample's own weights at nearby points.
pub fn audit_boundary(domain: &DomainSpec, field: &ReflectionField, cfg: &SamplingConfig) -> Result<A5Report> {
    field.validate_for(domain)?;
    let model = BoundaryModel::build(domain, cfg)?;
    let samples = model.boundary_samples();
    let audits: Vec<SampleAudit> = samples
        .into_par_iter()
        .map(|sample| {
            let active = sample.active.indices();
            let normals: Vec<Vec<f64>> = active
                .iter()
                .map(|i| domain.normal_at(*i, &sample.point))
                .collect::<Result<_>>()?;
            let gammas = field.gammas(domain, active, &sample.point)?;
            let c = solve_weights_c(&normals, &gammas)?.margin().clone();
            let b = solve_weights_c(&gammas, &normals)?.margin().clone();
            let prime = solve_weights_c_prime(&normals, &gammas)?;
            let dominance = prime.is_feasible();
            let dual_ok = dominance
                && solve_weights_b(&normals, &gammas, prime.level()).is_ok_and(|w| {
                    let g = inner_products(&normals, &gammas);
                    prime_slacks(&g, w.level, &w.weights, PrimeCondition::NormalWeights)
                        .iter()
                        .all(|s| *s >= -1e-12)
                });
            Ok(SampleAudit {
                sample,
                c,
                b,
                dominance,
                dual_ok,
            })
        })
        .collect::<Result<_>>()?;

    let mut reflection_level = f64::INFINITY;
    let mut normal_level = f64::INFINITY;
    let mut worst: Option<(f64, &SampleAudit)> = None;
    for au in &audits {
        reflection_level = reflection_level.min(au.c.level);
        normal_level = normal_level.min(au.b.level);
        let lv = au.c.level.min(au.b.level);
        if worst.is_none_or(|(w, _)| lv < w) {
            worst = Some((lv, au));
        }
    }
    let failure = worst.filter(|(lv, _)| !(*lv > 0.0)).map(|(_, au)| A5Failure {
        point: au.sample.point.clone(),
        active: au.sample.active.indices().to_vec(),
        reflection_level: au.c.level,
        normal_level: au.b.level,
        reflection_weights: au.c.weights.clone(),
    });
    let level = reflection_level.min(normal_level);
    let lipschitz = match field.declared_lipschitz() {
        Some(l) => l,
        None => estimate_lipschitz(field, domain, cfg)?,
    };
    let r0 = if level > 0.0 { rho0(level, lipschitz) } else { 0.0 };
    let radius = r0.min(domain.sampling_box().diameter());

    let locality_margin = if level > 0.0 && !audits.is_empty() {
        audits
            .par_iter()
            .map(|au| locality_margin(domain, field, au, radius))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    } else {
        f64::NEG_INFINITY
    };
    let locality_ok = locality_margin >= 0.5 * level - 1e-12;
    let dominance_points = audits.iter().filter(|a| a.dominance).count();
    let dual_successes = audits.iter().filter(|a| a.dual_ok).count();
    Ok(A5Report {
        samples: audits.len(),
        resolution: cfg.resolution,
        reflection_level,
        normal_level,
        level,
        worst_point: worst.map(|(_, a)| a.sample.clone()),
        passed: failure.is_none() && level > 0.0 && !audits.is_empty(),
        failure,
        dominance_points,
        dual_successes,
        lipschitz,
        rho0: r0,
        locality_radius: radius,
        locality_margin,
        locality_ok,
    })
}

/// Minimum over stencil points `y` within `radius` of the sample of the two
/// localized margins built from the sample's weights.
fn locality_margin(domain: &DomainSpec, field: &ReflectionField, au: &SampleAudit, radius: f64) -> Result<f64> {
    let x = &au.sample.point;
    let active = au.sample.active.indices();
    let d = x.len();
    let mut best = f64::INFINITY;
    let mut stencil = Vec::with_capacity(4 * d);
    for k in 0..d {
        for s in [radius, 0.5 * radius, -0.5 * radius, -radius] {
            let mut y = x.clone();
            y[k] += 0.999 * s;
            stencil.push(y);
        }
    }
    for y in &stencil {
        let (Ok(normals), Ok(gammas)) = (
            active
                .iter()
                .map(|i| domain.normal_at(*i, y))
                .collect::<Result<Vec<_>>>(),
            field.gammas(domain, active, y),
        ) else {
            continue;
        };
        let combo_g: Vec<f64> = (0..d)
            .map(|k| au.c.weights.iter().zip(&gammas).map(|(c, g)| c * g[k]).sum())
            .collect();
        let combo_n: Vec<f64> = (0..d)
            .map(|k| au.b.weights.iter().zip(&normals).map(|(b, n)| b * n[k]).sum())
            .collect();
        for (n, g) in normals.iter().zip(&gammas) {
            best = best.min(dot(&combo_g, n)).min(dot(&combo_n, g));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SamplingBox, SurfacePatch};

    fn e(i: usize, d: usize) -> Vec<f64> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    fn halfspace(n: Vec<f64>) -> SurfacePatch {
        SurfacePatch::Halfspace {
            normal: n,
            offset: 0.0,
        }
    }

    fn quadrant() -> DomainSpec {
        DomainSpec::new(
            2,
            vec![halfspace(e(0, 2)), halfspace(e(1, 2))],
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
    fn gamma_examples() {
        let q = quadrant();
        let c = ReflectionField::constant(vec![vec![2.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(c.gamma(&q, 0, &[0.0, 5.0]).unwrap(), vec![1.0, 0.0]);
        let rot0 = ReflectionField::new(vec![FieldComponent::RotateNormal { angle: 0.0 }; 2], None).unwrap();
        assert_eq!(rot0.gamma(&q, 1, &[3.0, 0.0]).unwrap(), vec![0.0, 1.0]);
        let rot = ReflectionField::new(
            vec![FieldComponent::RotateNormal {
                angle: std::f64::consts::FRAC_PI_4
            }; 2],
            None,
        )
        .unwrap();
        let g = rot.gamma(&q, 1, &[3.0, 0.0]).unwrap();
        let h = 0.5f64.sqrt();
        assert!((g[0] - h).abs() < 1e-15 && (g[1] - h).abs() < 1e-15);
    }

    #[test]
    fn affine_zero_vector_is_an_error() {
        let q = quadrant();
        let f = ReflectionField::new(
            vec![
                FieldComponent::Affine {
                    matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
                    shift: vec![0.0, 0.0]
                };
                2
            ],
            None,
        )
        .unwrap();
        assert!(matches!(f.gamma(&q, 0, &[0.0, 0.0]), Err(Error::ZeroDirection { .. })));
        let g = f.gamma(&q, 0, &[0.0, 3.0]).unwrap();
        assert_eq!(g, vec![0.0, 1.0]);
    }

    #[test]
    fn rho0_examples() {
        assert_eq!(rho0(0.5, 1.0), 0.125);
        assert_eq!(rho0(0.5, 0.0), f64::INFINITY);
        assert!((rho0(0.4, 2.0) - 0.05).abs() < 1e-17);
    }

    #[test]
    fn weights_c_examples() {
        let n = vec![e(0, 2), e(1, 2)];
        let w = solve_weights_c(&n, &n).unwrap();
        assert!(w.is_feasible());
        assert!((w.level() - 0.5).abs() < 1e-15);
        assert_eq!(w.margin().weights, vec![0.5, 0.5]);

        let single = solve_weights_c(&[e(0, 3)], &[e(0, 3)]).unwrap();
        assert_eq!(single.margin().weights, vec![1.0]);
        assert_eq!(single.level(), 1.0);

        let tangential = vec![vec![0.0, -1.0], vec![-1.0, 0.0]];
        let bad = solve_weights_c(&n, &tangential).unwrap();
        assert!(!bad.is_feasible());
        assert!((bad.level() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn weights_c_lp_path_matches_closed_form_on_three_faces() {
        let n = vec![e(0, 3), e(1, 3), e(2, 3)];
        let w = solve_weights_c(&n, &n).unwrap();
        assert!((w.level() - 1.0 / 3.0).abs() < 1e-9);
        for c in &w.margin().weights {
            assert!((c - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn weights_b_examples() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let b = m_matrix_weights(&id, 0.5).unwrap();
        assert!((b.weights[0] - 0.5).abs() < 1e-15 && (b.weights[1] - 0.5).abs() < 1e-15);
        assert_eq!(b.level, 0.25);

        let b1 = solve_weights_b(&[e(0, 2)], &[e(0, 2)], 1.0).unwrap();
        assert_eq!(b1.weights, vec![1.0]);

        let a = vec![vec![1.0, -0.9], vec![-0.9, 1.0]];
        let b = m_matrix_weights(&a, 0.05).unwrap();
        assert!((b.weights[0] - 0.5).abs() < 1e-12);

        let singular = vec![vec![1.0, -1.0], vec![-1.0, 1.0]];
        assert!(matches!(
            m_matrix_weights(&singular, 0.1),
            Err(Error::NotMMatrix { order: 2, .. })
        ));
    }

    #[test]
    fn prime_examples() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = prime_slacks(&id, 0.4, &[0.5, 0.5], PrimeCondition::NormalWeights);
        assert!(s.iter().all(|v| (v - 0.1).abs() < 1e-15));
        let s = prime_slacks(&id, 0.1, &[1.0, 0.0], PrimeCondition::NormalWeights);
        assert!(s[0] > 0.0 && s[1] < 0.0);
        let a = vec![vec![1.0, -0.2], vec![-0.2, 1.0]];
        let s = prime_slacks(&a, 0.3, &[0.5, 0.5], PrimeCondition::NormalWeights);
        assert!(s.iter().all(|v| (v - 0.1).abs() < 1e-15));
        let chk = check_a5prime(&[e(0, 2), e(1, 2)], &[e(0, 2), e(1, 2)], 0.4, &[0.5, 0.5], PrimeCondition::ReflectionWeights).unwrap();
        assert!(chk.pass);
    }

    #[test]
    fn quadrant_audit() {
        let q = quadrant();
        let cfg = SamplingConfig::with_resolution(0.05);
        let rep = audit_boundary(&q, &ReflectionField::normal(2), &cfg).unwrap();
        assert!(rep.passed);
        assert!((rep.level - 0.5).abs() < 1e-12);
        assert_eq!(rep.worst_point.unwrap().active.len(), 2);
        assert_eq!(rep.lipschitz, 0.0);
        assert_eq!(rep.rho0, f64::INFINITY);
        assert!(rep.locality_ok);

        let tangential = ReflectionField::constant(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        let rep = audit_boundary(&q, &tangential, &cfg).unwrap();
        assert!(!rep.passed);
        let f = rep.failure.unwrap();
        assert_eq!(f.active, vec![0, 1]);
    }

    #[test]
    fn disc_audit_level_one() {
        let disc = DomainSpec::new(
            2,
            vec![SurfacePatch::BallInterior {
                center: vec![0.0, 0.0],
                radius: 1.0,
            }],
            SamplingBox {
                lo: vec![-1.2, -1.2],
                hi: vec![1.2, 1.2],
            },
            vec![0.0, 0.0],
            None,
        )
        .unwrap();
        let rep = audit_boundary(&disc, &ReflectionField::normal(1), &SamplingConfig::with_resolution(0.01)).unwrap();
        assert!((rep.level - 1.0).abs() < 1e-12);
        assert!(rep.passed);
    }

    #[test]
    fn lipschitz_of_radial_field_on_annulus() {
        let annulus = DomainSpec::new(
            2,
            vec![
                SurfacePatch::BallInterior {
                    center: vec![0.0, 0.0],
                    radius: 2.0,
                },
                SurfacePatch::BallExterior {
                    center: vec![0.0, 0.0],
                    radius: 1.0,
                },
            ],
            SamplingBox {
                lo: vec![-2.1, -2.1],
                hi: vec![2.1, 2.1],
            },
            vec![1.5, 0.0],
            None,
        )
        .unwrap();
        let radial = FieldComponent::Affine {
            matrix: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            shift: vec![0.0, 0.0],
        };
        let f = ReflectionField::new(vec![radial.clone(), radial], None).unwrap();
        let cfg = SamplingConfig {
            resolution: 0.005,
            lipschitz_band: 1.0,
            ..SamplingConfig::default()
        };
        let l = estimate_lipschitz(&f, &annulus, &cfg).unwrap();
        assert!((l - 1.0).abs() < 0.1, "{l}");
    }

    #[test]
    fn rotate_normal_on_halfspace_has_zero_lipschitz() {
        let q = quadrant();
        let f = ReflectionField::new(vec![FieldComponent::RotateNormal { angle: 0.3 }; 2], None).unwrap();
        assert_eq!(estimate_lipschitz(&f, &q, &SamplingConfig::with_resolution(0.02)).unwrap(), 0.0);
    }
}
