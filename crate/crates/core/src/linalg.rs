//! Small dense vector helpers on `&[f64]`.
//!
//! Points in this crate are plain slices; dimensions are small (usually 1 to
//! 3) and vary at run time, so fixed-size nalgebra types do not fit.

use crate::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[inline]
pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// `a + s * b`
#[inline]
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

#[inline]
pub fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| s * x).collect()
}

/// Returns `a / |a|`, or `None` when `|a|` is below `floor`.
pub fn normalized(a: &[f64], floor: f64) -> Option<Vec<f64>> {
    let n = norm(a);
    if n.is_finite() && n > floor {
        Some(scale(a, 1.0 / n))
    } else {
        None
    }
}

pub fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

/// Diameter of a point set, max over pairs of `|p - q|`.
///
/// Exact for every dimension: 1-D uses the extrema, 2-D reduces to the convex
/// hull first, higher dimensions compare all pairs.
pub fn diameter(points: &[&[f64]]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    match points[0].len() {
        1 => {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                    (lo.min(p[0]), hi.max(p[0]))
                });
            hi - lo
        }
        2 => {
            let hull = convex_hull_2d(points);
            pairwise_max(&hull)
        }
        _ => pairwise_max(points),
    }
}

fn pairwise_max(points: &[&[f64]]) -> f64 {
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max(dist(p, q));
        }
    }
    best
}

/// Andrew's monotone chain; collinear points are dropped.
fn convex_hull_2d<'a>(points: &[&'a [f64]]) -> Vec<&'a [f64]> {
    let mut pts: Vec<&[f64]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| a[0] == b[0] && a[1] == b[1]);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &[f64], a: &[f64], b: &[f64]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<&[f64]> = Vec::with_capacity(2 * pts.len());
    for p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    // the upper chain may not pop into the lower one
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diameter_matches_pairwise_in_2d() {
        let raw: Vec<Vec<f64>> = (0..200)
            .map(|k| {
                let t = k as f64 * 0.37;
                vec![t.sin() * (1.0 + 0.1 * t.cos()), (1.7 * t).cos()]
            })
            .collect();
        let pts: Vec<&[f64]> = raw.iter().map(|v| v.as_slice()).collect();
        assert!((diameter(&pts) - pairwise_max(&pts)).abs() < 1e-15);
    }

    #[test]
    fn diameter_degenerate_sets() {
        let a = [1.0, 2.0];
        assert_eq!(diameter(&[&a]), 0.0);
        assert_eq!(diameter(&[&a, &a, &a]), 0.0);
        let b = [4.0, 6.0];
        assert!((diameter(&[&a, &b, &a]) - 5.0).abs() < 1e-15);
        let line = [[-4.7, 0.0], [0.0, 0.0], [3.6, 0.0], [0.0, 0.0]];
        let pts: Vec<&[f64]> = line.iter().map(|p| p.as_slice()).collect();
        assert!((diameter(&pts) - 8.3).abs() < 1e-12);
    }

    #[test]
    fn normalized_rejects_tiny() {
        assert!(normalized(&[1e-20, 0.0], 1e-14).is_none());
        let v = normalized(&[3.0, 4.0], 1e-14).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }
}
