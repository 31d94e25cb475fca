//! Deterministic point sets: box grids, parametric boundary samples and a
//! nearest-neighbour index over them.
//!
//! Every sampler is anchored at the lower box corner with power-of-two
//! subdivisions, so halving the resolution yields a superset of samples.

use kiddo::{ImmutableKdTree, SquaredEuclidean};

use super::{DomainSpec, SamplingBox, SurfacePatch};
use crate::{Error, Result};

/// Regular grid `lo + k h` over a box, flattened in row-major order.
#[derive(Clone, Debug)]
pub(crate) struct Grid {
    lo: Vec<f64>,
    h: f64,
    counts: Vec<usize>,
    len: usize,
}

impl Grid {
    pub fn over(b: &SamplingBox, h: f64, max_points: usize) -> Result<Self> {
        let counts: Vec<usize> = b
            .lo
            .iter()
            .zip(&b.hi)
            .map(|(l, u)| ((u - l) / h + 1e-9).floor() as usize + 1)
            .collect();
        let len = counts
            .iter()
            .try_fold(1usize, |acc, c| acc.checked_mul(*c))
            .filter(|n| *n <= max_points)
            .ok_or_else(|| {
                Error::InvalidSampling(format!(
                    "resolution {h} needs more than {max_points} grid points"
                ))
            })?;
        Ok(Self {
            lo: b.lo.clone(),
            h,
            counts,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    #[cfg(test)]
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn point(&self, mut idx: usize, out: &mut [f64]) {
        for k in (0..self.counts.len()).rev() {
            let c = idx % self.counts[k];
            idx /= self.counts[k];
            out[k] = self.lo[k] + c as f64 * self.h;
        }
    }

    /// Flat index of the neighbour shifted by `offset` grid steps, if inside.
    pub fn neighbour(&self, idx: usize, offset: &[isize]) -> Option<usize> {
        let mut rem = idx;
        let mut coords = vec![0usize; self.counts.len()];
        for k in (0..self.counts.len()).rev() {
            coords[k] = rem % self.counts[k];
            rem /= self.counts[k];
        }
        let mut flat = 0usize;
        for k in 0..self.counts.len() {
            let c = coords[k] as isize + offset[k];
            if c < 0 || c as usize >= self.counts[k] {
                return None;
            }
            flat = flat * self.counts[k] + c as usize;
        }
        Some(flat)
    }
}

/// Flat storage for a set of points of one dimension.
#[derive(Clone, Debug, Default)]
pub(crate) struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, p: &[f64]) {
        debug_assert_eq!(p.len(), self.dim);
        self.data.extend_from_slice(p);
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// Removes points that agree after rounding to a lattice of size `q`.
    pub fn dedup(&mut self, q: f64) {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.data.len());
        for p in self.data.chunks_exact(self.dim) {
            let key: Vec<i64> = p.iter().map(|v| (v / q).round() as i64).collect();
            if seen.insert(key) {
                out.extend_from_slice(p);
            }
        }
        self.data = out;
    }
}

/// Exact nearest-neighbour queries; k-d trees for `d <= 3`, a scan otherwise.
pub(crate) enum NearestIndex {
    Empty,
    D1(ImmutableKdTree<f64, 1>),
    D2(ImmutableKdTree<f64, 2>),
    D3(ImmutableKdTree<f64, 3>),
    Scan(PointCloud),
}

fn arrays<const K: usize>(cloud: &PointCloud) -> Vec<[f64; K]> {
    cloud
        .iter()
        .map(|p| {
            let mut a = [0.0; K];
            a.copy_from_slice(p);
            a
        })
        .collect()
}

impl NearestIndex {
    pub fn build(cloud: &PointCloud) -> Self {
        if cloud.is_empty() {
            return Self::Empty;
        }
        let tree_err = "k-d tree construction";
        match cloud.dim {
            1 => Self::D1(ImmutableKdTree::new_from_slice(&arrays::<1>(cloud)).expect(tree_err)),
            2 => Self::D2(ImmutableKdTree::new_from_slice(&arrays::<2>(cloud)).expect(tree_err)),
            3 => Self::D3(ImmutableKdTree::new_from_slice(&arrays::<3>(cloud)).expect(tree_err)),
            _ => Self::Scan(cloud.clone()),
        }
    }

    /// Distance to the nearest stored point and its index; `None` when empty.
    pub fn nearest(&self, x: &[f64]) -> Option<(f64, usize)> {
        macro_rules! query {
            ($tree:expr, $k:literal) => {{
                let mut q = [0.0; $k];
                q.copy_from_slice(x);
                let r = $tree.query(&q).nearest_one::<SquaredEuclidean<f64>>().execute();
                Some((r.distance.sqrt(), r.item as usize))
            }};
        }
        match self {
            Self::Empty => None,
            Self::D1(t) => query!(t, 1),
            Self::D2(t) => query!(t, 2),
            Self::D3(t) => query!(t, 3),
            Self::Scan(c) => c
                .iter()
                .enumerate()
                .map(|(k, p)| (crate::linalg::dist(p, x), k))
                .min_by(|a, b| a.0.total_cmp(&b.0)),
        }
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.nearest(x).map_or(f64::INFINITY, |(d, _)| d)
    }
}

/// `2^ceil(log2(x))`, at least 1.
fn dyadic_count(x: f64) -> usize {
    if x <= 1.0 {
        1
    } else {
        1usize << (x.log2().ceil() as u32).min(40)
    }
}

/// Points of the surface `∂G_i` inside the sampling box at spacing about `h`.
pub(crate) fn patch_surface_points(
    patch: &SurfacePatch,
    b: &SamplingBox,
    h: f64,
    max_points: usize,
) -> Result<PointCloud> {
    let d = patch.dimension();
    let mut cloud = PointCloud::new(d);
    let slack = 1e-12 * (1.0 + b.diameter());
    let keep = |p: &[f64], cloud: &mut PointCloud| {
        if b.contains(p, slack) {
            cloud.push(p);
        }
    };
    match patch {
        SurfacePatch::Halfspace { normal, offset } => {
            let k = (0..d)
                .max_by(|a, c| normal[*a].abs().total_cmp(&normal[*c].abs()))
                .unwrap_or(0);
            if d == 1 {
                keep(&[offset / normal[0]], &mut cloud);
            } else {
                let others: Vec<usize> = (0..d).filter(|j| *j != k).collect();
                let sub = SamplingBox {
                    lo: others.iter().map(|j| b.lo[*j]).collect(),
                    hi: others.iter().map(|j| b.hi[*j]).collect(),
                };
                let grid = Grid::over(&sub, h, max_points)?;
                let mut q = vec![0.0; d - 1];
                let mut p = vec![0.0; d];
                for idx in 0..grid.len() {
                    grid.point(idx, &mut q);
                    let mut rest = *offset;
                    for (j, v) in others.iter().zip(&q) {
                        p[*j] = *v;
                        rest -= normal[*j] * v;
                    }
                    p[k] = rest / normal[k];
                    keep(&p, &mut cloud);
                }
            }
        }
        SurfacePatch::BallInterior { center, radius } | SurfacePatch::BallExterior { center, radius } => {
            let (c, r) = (center, *radius);
            match d {
                1 => {
                    keep(&[c[0] - r], &mut cloud);
                    keep(&[c[0] + r], &mut cloud);
                }
                2 => {
                    let n = dyadic_count(std::f64::consts::TAU * r / h);
                    for k in 0..n {
                        let t = std::f64::consts::TAU * k as f64 / n as f64;
                        keep(&[c[0] + r * t.cos(), c[1] + r * t.sin()], &mut cloud);
                    }
                }
                3 => {
                    let n_lat = dyadic_count(std::f64::consts::PI * r / h);
                    for j in 0..=n_lat {
                        let phi = std::f64::consts::PI * j as f64 / n_lat as f64;
                        let n_lon = dyadic_count(std::f64::consts::TAU * r * phi.sin() / h);
                        for k in 0..n_lon {
                            let t = std::f64::consts::TAU * k as f64 / n_lon as f64;
                            keep(
                                &[
                                    c[0] + r * phi.sin() * t.cos(),
                                    c[1] + r * phi.sin() * t.sin(),
                                    c[2] + r * phi.cos(),
                                ],
                                &mut cloud,
                            );
                        }
                    }
                }
                _ => {
                    // radial projection of the grid points in a shell of width h
                    let grid = Grid::over(b, h, max_points)?;
                    let mut p = vec![0.0; d];
                    for idx in 0..grid.len() {
                        grid.point(idx, &mut p);
                        let rho = crate::linalg::dist(&p, c);
                        if rho > 0.0 && (rho - r).abs() <= h {
                            let q: Vec<f64> =
                                p.iter().zip(c).map(|(v, ci)| ci + (v - ci) * r / rho).collect();
                            keep(&q, &mut cloud);
                        }
                    }
                }
            }
        }
        SurfacePatch::Cusp2d { .. } | SurfacePatch::GaussianRoof2d => {
            let n = ((b.hi[0] - b.lo[0]) / h + 1e-9).floor() as usize + 1;
            if n > max_points {
                return Err(Error::InvalidSampling(format!(
                    "resolution {h} needs more than {max_points} samples"
                )));
            }
            for k in 0..n {
                let x = b.lo[0] + k as f64 * h;
                let y = match patch {
                    SurfacePatch::Cusp2d { alpha } => x.abs().powf(*alpha),
                    _ => (-0.5 * x * x).exp(),
                };
                keep(&[x, y], &mut cloud);
            }
        }
    }
    Ok(cloud)
}

/// Samples of `∂G_i ∩ ∂G`: surface points of patch `i` that lie in `Ḡ`.
pub(crate) fn face_points(domain: &DomainSpec, i: usize, h: f64, max_points: usize) -> Result<PointCloud> {
    let surface = patch_surface_points(&domain.patches()[i], domain.sampling_box(), h, max_points)?;
    let mut cloud = PointCloud::new(domain.dimension());
    let tol = domain.boundary_tol();
    for p in surface.iter() {
        if domain.in_closure(p, tol) {
            cloud.push(p);
        }
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_nested_under_halving() {
        let b = SamplingBox {
            lo: vec![-1.0, 0.0],
            hi: vec![1.0, 0.5],
        };
        let coarse = Grid::over(&b, 0.25, 1000).unwrap();
        let fine = Grid::over(&b, 0.125, 1000).unwrap();
        assert_eq!(coarse.counts(), &[9, 3]);
        assert_eq!(fine.counts(), &[17, 5]);
        let mut p = [0.0; 2];
        coarse.point(coarse.len() - 1, &mut p);
        assert_eq!(p, [1.0, 0.5]);
        let mut q = [0.0; 2];
        fine.point(2 * 5 + 2, &mut q);
        coarse.point(3 + 1, &mut p);
        assert_eq!(p, q);
    }

    #[test]
    fn grid_neighbours() {
        let b = SamplingBox {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        };
        let g = Grid::over(&b, 0.5, 100).unwrap();
        assert_eq!(g.neighbour(0, &[1, 1]), Some(4));
        assert_eq!(g.neighbour(0, &[-1, 0]), None);
        assert_eq!(g.neighbour(8, &[0, 1]), None);
    }

    #[test]
    fn circle_samples_lie_on_circle_and_nest() {
        let p = SurfacePatch::BallInterior {
            center: vec![0.5, -0.5],
            radius: 0.7,
        };
        let b = SamplingBox {
            lo: vec![-1.0, -2.0],
            hi: vec![2.0, 1.0],
        };
        let coarse = patch_surface_points(&p, &b, 0.01, 1 << 20).unwrap();
        let fine = patch_surface_points(&p, &b, 0.005, 1 << 20).unwrap();
        assert_eq!(fine.len(), 2 * coarse.len());
        for q in fine.iter() {
            assert!(p.gauge_unchecked(q).abs() < 1e-14);
        }
        let idx = NearestIndex::build(&fine);
        for q in coarse.iter() {
            assert!(idx.distance(q) < 1e-15);
        }
    }

    #[test]
    fn nearest_matches_scan() {
        let mut cloud = PointCloud::new(2);
        for k in 0..500 {
            let t = k as f64 * 0.731;
            cloud.push(&[t.sin() * 2.0, (0.3 * t).cos()]);
        }
        let tree = NearestIndex::build(&cloud);
        let scan = NearestIndex::Scan(cloud.clone());
        for k in 0..50 {
            let q = [k as f64 * 0.07 - 1.5, 0.9 - k as f64 * 0.03];
            assert!((tree.distance(&q) - scan.distance(&q)).abs() < 1e-14);
        }
        assert_eq!(NearestIndex::build(&PointCloud::new(2)).distance(&[0.0, 0.0]), f64::INFINITY);
    }
}
