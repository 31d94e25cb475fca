//! Reference reflection maps with known solutions: the one-sided Skorokhod
//! map on the half line, and the fixed-point map on the orthant for
//! reflection matrices `R = I - Q` with `Q ≥ 0` and spectral radius below
//! one. Both run on the scheme's grid so comparisons need no interpolation.

use serde::{Deserialize, Serialize};

use crate::linalg::check_dim;
use crate::paths::VectorPath;
use crate::scheme::SrbmPathBundle;
use crate::{Error, Result};

/// Default stopping tolerance of the orthant iteration.
pub const ORTHANT_TOL: f64 = 1e-10;
/// Largest accepted spectral radius estimate of `Q`.
const MAX_SPECTRAL_RADIUS: f64 = 1.0 - 1e-6;
const POWER_STEPS: usize = 1000;

/// `(w, y)` with `w = x + R y`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reflected {
    pub w: VectorPath,
    pub y: VectorPath,
}

/// `y(t) = max(0, max_{s≤t} -x(s))`, `w = x + y`.
pub fn skorokhod_1d(x: &VectorPath) -> Result<Reflected> {
    if x.dimension() != 1 {
        return Err(Error::Oracle("the half-line map takes a scalar path".into()));
    }
    if x.value(0)[0] < 0.0 {
        return Err(Error::Oracle(format!("x(0) = {} is negative", x.value(0)[0])));
    }
    let mut run = 0.0f64;
    let mut y = Vec::with_capacity(x.len());
    let mut w = Vec::with_capacity(x.len());
    for p in x.points() {
        run = run.max(-p[0]);
        y.push(run);
        w.push(p[0] + run);
    }
    Ok(Reflected {
        w: VectorPath::new(x.grid().clone(), 1, w)?,
        y: VectorPath::new(x.grid().clone(), 1, y)?,
    })
}

/// `R = I - Q` on the orthant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct OrthantReflection {
    r: Vec<Vec<f64>>,
    spectral_radius: f64,
}

impl TryFrom<Vec<Vec<f64>>> for OrthantReflection {
    type Error = Error;

    fn try_from(r: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(r)
    }
}

impl From<OrthantReflection> for Vec<Vec<f64>> {
    fn from(o: OrthantReflection) -> Self {
        o.r
    }
}

impl OrthantReflection {
    /// Requires a unit diagonal, nonpositive off-diagonal entries, and an
    /// estimated spectral radius of `Q = I - R` below `1 - 1e-6`.
    pub fn new(r: Vec<Vec<f64>>) -> Result<Self> {
        let d = r.len();
        if d == 0 || r.iter().any(|row| row.len() != d) {
            return Err(Error::Oracle("reflection matrix must be square and nonempty".into()));
        }
        for i in 0..d {
            if (r[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::Oracle(format!("R[{i}][{i}] = {} must be 1", r[i][i])));
            }
            for j in 0..d {
                if i != j && !(r[i][j] <= 0.0) {
                    return Err(Error::Oracle(format!("Q = I - R is negative at ({i}, {j})")));
                }
            }
        }
        let spectral_radius = spectral_radius_estimate(&r);
        if !(spectral_radius < MAX_SPECTRAL_RADIUS) {
            return Err(Error::Oracle(format!(
                "spectral radius of Q is about {spectral_radius}, not below one"
            )));
        }
        Ok(Self { r, spectral_radius })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            r: (0..d)
                .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
                .collect(),
            spectral_radius: 0.0,
        }
    }

    pub fn dimension(&self) -> usize {
        self.r.len()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.r
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// `10 d ⌈log(1/tol) / log(1/σ̂)⌉`, at least `10 d`.
    pub fn iteration_budget(&self, tol: f64) -> usize {
        let d = self.dimension();
        let per = if self.spectral_radius <= 0.0 {
            1.0
        } else {
            ((1.0 / tol).ln() / (1.0 / self.spectral_radius).ln()).ceil().max(1.0)
        };
        10 * d * per as usize
    }
}

/// `‖Q^k 1‖_∞^{1/k}` for `Q = I - R` after [`POWER_STEPS`] normalized power
/// steps; for `Q ≥ 0` this is an upper estimate converging to the spectral
/// radius.
fn spectral_radius_estimate(r: &[Vec<f64>]) -> f64 {
    let d = r.len();
    let q = |i: usize, j: usize| if i == j { 1.0 - r[i][j] } else { -r[i][j] };
    let mut v = vec![1.0; d];
    let mut log_growth = 0.0;
    for _ in 0..POWER_STEPS {
        let next: Vec<f64> = (0..d).map(|i| (0..d).map(|j| q(i, j) * v[j]).sum()).collect();
        let size = next.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if size == 0.0 {
            return 0.0;
        }
        log_growth += size.ln();
        v = next.iter().map(|x| x / size).collect();
    }
    (log_growth / POWER_STEPS as f64).exp()
}

/// One application of the fixed-point map:
/// `y_i(t) = max(0, max_{s≤t}(-x_i(s) - Σ_{j≠i} R_ij y_j(s)))`.
pub fn orthant_step(x: &VectorPath, r: &OrthantReflection, y: &VectorPath) -> Result<VectorPath> {
    let d = r.dimension();
    check_dim(d, x.dimension())?;
    check_dim(d, y.dimension())?;
    if **x.grid() != **y.grid() {
        return Err(Error::GridMismatch);
    }
    let m = r.matrix();
    let mut run = vec![0.0f64; d];
    let mut out = Vec::with_capacity(d * x.len());
    for k in 0..x.len() {
        let (xk, yk) = (x.value(k), y.value(k));
        for i in 0..d {
            let mut v = -xk[i];
            for j in 0..d {
                if j != i {
                    v -= m[i][j] * yk[j];
                }
            }
            run[i] = run[i].max(v);
        }
        out.extend_from_slice(&run);
    }
    VectorPath::new(x.grid().clone(), d, out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrthantSolution {
    pub w: VectorPath,
    pub y: VectorPath,
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub last_change: f64,
    /// Every iterate dominated the previous one componentwise.
    pub monotone: bool,
}

/// Iterates [`orthant_step`] from `y = 0` until the sup-norm change drops
/// below `tol`; `iters` defaults to the matrix's iteration budget.
pub fn orthant_map(x: &VectorPath, r: &OrthantReflection, iters: Option<usize>, tol: f64) -> Result<OrthantSolution> {
    let d = r.dimension();
    check_dim(d, x.dimension())?;
    if x.value(0).iter().any(|v| *v < 0.0) {
        return Err(Error::Oracle("x(0) must lie in the orthant".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Oracle(format!("tolerance {tol} must be positive")));
    }
    let budget = iters.unwrap_or_else(|| r.iteration_budget(tol));
    let mut y = VectorPath::new(x.grid().clone(), d, vec![0.0; d * x.len()])?;
    let mut monotone = true;
    let mut last_change = f64::INFINITY;
    for it in 1..=budget {
        let next = orthant_step(x, r, &y)?;
        let mut change = 0.0f64;
        for (a, b) in next.values().iter().zip(y.values()) {
            change = change.max((a - b).abs());
            if *a < b - 1e-12 {
                monotone = false;
            }
        }
        y = next;
        last_change = change;
        if change < tol {
            let m = r.matrix();
            let mut w = x.clone();
            for k in 0..w.len() {
                let yk = y.value(k).to_vec();
                for i in 0..d {
                    w.value_mut(k)[i] += (0..d).map(|j| m[i][j] * yk[j]).sum::<f64>();
                }
            }
            return Ok(OrthantSolution {
                w,
                y,
                iterations: it,
                last_change,
                monotone,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: budget,
        last_change,
    })
}

/// Sup-norm gaps between a scheme run and a reference solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// `max_k ‖W(t_k) - w(t_k)‖`.
    pub w: f64,
    /// `max_k |Y_i(t_k) - y_i(t_k)|` per coordinate, when dimensions match.
    pub y: Option<Vec<f64>>,
}

pub fn compare(bundle: &SrbmPathBundle, oracle_w: &VectorPath, oracle_y: Option<&VectorPath>) -> Result<Gap> {
    let w = bundle.w.sup_distance(oracle_w)?;
    let y = match oracle_y {
        Some(oy) if oy.dimension() == bundle.y.dimension() => {
            if **oy.grid() != **bundle.grid() {
                return Err(Error::GridMismatch);
            }
            Some(
                (0..oy.dimension())
                    .map(|i| {
                        bundle
                            .y
                            .points()
                            .zip(oy.points())
                            .map(|(a, b)| (a[i] - b[i]).abs())
                            .fold(0.0, f64::max)
                    })
                    .collect(),
            )
        }
        _ => None,
    };
    Ok(Gap { w, y })
}
