//! Exact face geometry of an intersection of halfspaces.
//!
//! A face `F_J = {<n_j, x> = β_j (j ∈ J), <n_l, x> ≥ β_l (all l)}` is a convex
//! polyhedron. The Euclidean projection onto it is the projection onto the
//! affine hull of its optimal active set, so enumerating every superset
//! `S ⊇ J`, projecting onto `{<n_s, x> = β_s, s ∈ S}` and keeping the nearest
//! feasible candidate is exact.

use nalgebra::DMatrix;

use super::{DomainSpec, SurfacePatch};
use crate::linalg::{dist, dot};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::Result;

/// Largest number of halfspaces handled by subset enumeration.
pub(crate) const EXACT_FACE_LIMIT: usize = 12;

/// Feasibility slack used by the face LPs.
pub(crate) const FACE_LP_TOL: f64 = 1e-9;

struct AffineProjector {
    rows: Vec<usize>,
    /// `Aᵀ (A Aᵀ)⁺`, stored column-major as `d × |rows|`.
    lift: DMatrix<f64>,
}

pub(crate) struct HalfspaceSystem {
    d: usize,
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    projectors: Vec<Option<AffineProjector>>,
    nonempty: Vec<bool>,
}

impl HalfspaceSystem {
    /// `None` for domains with curved patches or too many faces.
    pub fn from_domain(domain: &DomainSpec) -> Result<Option<Self>> {
        if !domain.is_polyhedral() || domain.num_patches() > EXACT_FACE_LIMIT {
            return Ok(None);
        }
        let (normals, offsets) = domain
            .patches()
            .iter()
            .map(|p| match p {
                SurfacePatch::Halfspace { normal, offset } => (normal.clone(), *offset),
                _ => unreachable!("checked polyhedral"),
            })
            .unzip();
        Self::new(normals, offsets).map(Some)
    }

    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        let d = normals[0].len();
        let count = normals.len();
        assert!(count <= EXACT_FACE_LIMIT);
        let masks = 1usize << count;
        let mut projectors = Vec::with_capacity(masks);
        for mask in 0..masks {
            let rows: Vec<usize> = (0..count).filter(|i| mask >> i & 1 == 1).collect();
            if rows.is_empty() {
                projectors.push(None);
                continue;
            }
            let a = DMatrix::from_fn(rows.len(), d, |r, c| normals[rows[r]][c]);
            let gram = &a * a.transpose();
            let lift = gram
                .pseudo_inverse(1e-12)
                .ok()
                .map(|pinv| a.transpose() * pinv);
            projectors.push(lift.map(|lift| AffineProjector { rows, lift }));
        }
        let mut sys = Self {
            d,
            normals,
            offsets,
            projectors,
            nonempty: Vec::new(),
        };
        sys.nonempty = (0..masks)
            .map(|m| sys.face_nonempty_lp(m as u64))
            .collect::<Result<_>>()?;
        Ok(sys)
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    /// Feasibility of `F_J` by linear programming.
    pub fn face_nonempty_lp(&self, mask: u64) -> Result<bool> {
        Ok(self.face_point_lp(mask)?.is_some())
    }

    /// Some point of `F_J`, if it is nonempty.
    pub fn face_point_lp(&self, mask: u64) -> Result<Option<Vec<f64>>> {
        let mut lp = LinearProgram::new(self.d, false);
        for (i, (n, b)) in self.normals.iter().zip(&self.offsets).enumerate() {
            if mask >> i & 1 == 1 {
                lp.row(n.clone(), Cmp::Eq, *b);
            } else {
                lp.row(n.clone(), Cmp::Ge, b - FACE_LP_TOL);
            }
        }
        Ok(match lp.solve()? {
            LpOutcome::Optimal { x, .. } => Some(x),
            LpOutcome::Unbounded => Some(vec![0.0; self.d]),
            LpOutcome::Infeasible => None,
        })
    }

    pub fn face_nonempty(&self, mask: u64) -> bool {
        self.nonempty[mask as usize]
    }

    fn min_slack(&self, z: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, b)| dot(n, z) - b)
            .fold(f64::INFINITY, f64::min)
    }

    /// Nearest point of `F_J` to `x` and its distance; `None` if `F_J = ∅`.
    pub fn project(&self, x: &[f64], mask: u64) -> Option<(Vec<f64>, f64)> {
        if !self.face_nonempty(mask) {
            return None;
        }
        let full = (1u64 << self.len()) - 1;
        let tol = 1e-9 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max));
        let mut best: Option<(Vec<f64>, f64)> = None;
        if mask == 0 && self.min_slack(x) >= -tol {
            return Some((x.to_vec(), 0.0));
        }
        // supersets of `mask`, excluding the empty set
        let mut s = if mask == 0 { 1 } else { mask };
        while s <= full {
            if let Some(z) = self.affine_projection(x, s, tol) {
                if self.min_slack(&z) >= -tol {
                    let dz = dist(x, &z);
                    if best.as_ref().is_none_or(|(_, bd)| dz < *bd) {
                        best = Some((z, dz));
                    }
                }
            }
            s = (s + 1) | mask;
        }
        best
    }

    pub fn distance(&self, x: &[f64], mask: u64) -> f64 {
        self.project(x, mask).map_or(f64::INFINITY, |(_, d)| d)
    }

    fn affine_projection(&self, x: &[f64], mask: u64, tol: f64) -> Option<Vec<f64>> {
        let proj = self.projectors[mask as usize].as_ref()?;
        let resid: Vec<f64> = proj
            .rows
            .iter()
            .map(|r| dot(&self.normals[*r], x) - self.offsets[*r])
            .collect();
        let mut z = x.to_vec();
        for (c, rv) in resid.iter().enumerate() {
            for (k, zk) in z.iter_mut().enumerate() {
                *zk -= proj.lift[(k, c)] * rv;
            }
        }
        // an inconsistent equality system has no affine hull to land on
        let consistent = proj
            .rows
            .iter()
            .all(|r| (dot(&self.normals[*r], &z) - self.offsets[*r]).abs() <= tol);
        consistent.then_some(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadrant() -> HalfspaceSystem {
        HalfspaceSystem::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0, 0.0]).unwrap()
    }

    #[test]
    fn quadrant_face_distances() {
        let q = quadrant();
        assert!((q.distance(&[1.0, 1.0], 0b01) - 1.0).abs() < 1e-15);
        assert!((q.distance(&[1.0, -1.0], 0b01) - 2f64.sqrt()).abs() < 1e-15);
        assert!((q.distance(&[3.0, 4.0], 0b11) - 5.0).abs() < 1e-15);
        assert_eq!(q.distance(&[0.0, 2.0], 0b01), 0.0);
        assert_eq!(q.distance(&[0.3, 0.2], 0), 0.0);
        assert!((q.distance(&[-1.0, 0.5], 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn slab_faces_are_disjoint() {
        let slab = HalfspaceSystem::new(vec![vec![1.0], vec![-1.0]], vec![0.0, -1.0]).unwrap();
        assert!(slab.face_nonempty(0b01));
        assert!(slab.face_nonempty(0b10));
        assert!(!slab.face_nonempty(0b11));
        assert_eq!(slab.distance(&[0.5], 0b11), f64::INFINITY);
    }

    #[test]
    fn projection_matches_brute_force_on_a_wedge() {
        let s = 30f64.to_radians().sin();
        let c = 30f64.to_radians().cos();
        let w = HalfspaceSystem::new(vec![vec![s, -c], vec![s, c]], vec![0.0, 0.0]).unwrap();
        // brute force along the ray of face 0: points t (c, s), t >= 0
        for x in [[0.3, 0.9], [-0.5, 0.2], [1.0, -1.0], [0.2, 0.05]] {
            let brute = (0..200_000)
                .map(|k| {
                    let t = k as f64 * 1e-5;
                    dist(&x, &[t * c, t * s])
                })
                .fold(f64::INFINITY, f64::min);
            assert!((w.distance(&x, 0b01) - brute).abs() < 1e-5, "{x:?}");
        }
    }
}
