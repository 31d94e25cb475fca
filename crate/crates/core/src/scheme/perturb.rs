//! Controlled perturbations of a bundle: an additive error `α` on `W`, a
//! piecewise-constant error `β` on `Y`, and directions evaluated at a point
//! displaced by `η`.

use serde::{Deserialize, Serialize};

use crate::geometry::DomainSpec;
use crate::linalg::check_dim;
use crate::paths::{total_variation_idx, VectorPath};
use crate::reflection::ReflectionField;
use crate::rng::CounterRng;
use crate::{Error, Result};

use super::{sup_norm, SrbmPathBundle};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlphaShape {
    #[default]
    None,
    Constant { value: Vec<f64> },
    /// `α(t) = amplitude · sin(2π frequency t)`.
    Sinusoid { amplitude: Vec<f64>, frequency: f64 },
    /// Independent uniforms on `[-amplitude, amplitude]` per coordinate and
    /// grid time.
    Noise { amplitude: f64, seed: u64 },
}

/// `β` jumps by `height` at `time` (right-continuous).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaStep {
    pub time: f64,
    pub height: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationSpec {
    pub alpha: AlphaShape,
    pub beta: Vec<BetaStep>,
    /// Upper bound on the total variation of `β`; checked when present.
    pub declared_variation: Option<f64>,
    /// `η`: directions are evaluated at `x + η e_1`.
    pub wobble: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerturbedBundle {
    pub bundle: SrbmPathBundle,
    /// Realized `sup_t ‖α(t)‖`.
    pub alpha_sup: f64,
    /// Realized total variation of `β` on `[0, T]`.
    pub beta_variation: f64,
}

fn alpha_path(spec: &AlphaShape, template: &VectorPath) -> Result<Option<VectorPath>> {
    let grid = template.grid().clone();
    let d = template.dimension();
    Ok(match spec {
        AlphaShape::None => None,
        AlphaShape::Constant { value } => {
            check_dim(d, value.len())?;
            Some(VectorPath::constant(grid, value)?)
        }
        AlphaShape::Sinusoid { amplitude, frequency } => {
            check_dim(d, amplitude.len())?;
            let w = std::f64::consts::TAU * frequency;
            Some(VectorPath::from_fn(grid, d, |t| {
                amplitude.iter().map(|a| a * (w * t).sin()).collect()
            })?)
        }
        AlphaShape::Noise { amplitude, seed } => {
            let mut rng = CounterRng::new(*seed, 0, d);
            let mut u = vec![0.0; d];
            let mut values = Vec::with_capacity(d * template.len());
            for k in 0..template.len() {
                rng.uniforms(k as u64, &mut u);
                values.extend(u.iter().map(|v| amplitude * (2.0 * v - 1.0)));
            }
            Some(VectorPath::new(grid, d, values)?)
        }
    })
}

/// `(W + α, X', Y + β)` with `X'` chosen so that
/// `W + α = X' + Σ γ^{i,η} Δ(Y + β)` at every grid time, where `γ^{i,η}(x) =
/// γ^i(x + η e_1)`. `β` jumps are pushed along the directions at the
/// perturbed state.
pub fn inject_perturbations(
    bundle: &SrbmPathBundle,
    spec: &PerturbationSpec,
    domain: &DomainSpec,
    field: &ReflectionField,
) -> Result<PerturbedBundle> {
    let d = bundle.w.dimension();
    let faces = bundle.y.dimension();
    let grid = bundle.grid().clone();
    if !(spec.wobble >= 0.0 && spec.wobble.is_finite()) {
        return Err(Error::InvalidPerturbation(format!("wobble {} must be nonnegative", spec.wobble)));
    }
    let mut beta = vec![0.0; faces * grid.times().len()];
    for step in &spec.beta {
        check_dim(faces, step.height.len())?;
        let k = grid
            .index_at_or_before(step.time)
            .filter(|_| step.time <= grid.horizon())
            .ok_or_else(|| Error::InvalidPerturbation(format!("beta step at {} is off the grid", step.time)))?;
        for row in beta.chunks_exact_mut(faces).skip(k) {
            for (b, h) in row.iter_mut().zip(&step.height) {
                *b += h;
            }
        }
    }
    let beta = VectorPath::new(grid.clone(), faces, beta)?;
    let beta_variation = total_variation_idx(&beta, beta.len() - 1);
    if let Some(declared) = spec.declared_variation {
        if beta_variation > declared + 1e-9 {
            return Err(Error::InvalidPerturbation(format!(
                "beta has variation {beta_variation}, above the declared {declared}"
            )));
        }
    }

    let alpha = alpha_path(&spec.alpha, &bundle.w)?;
    let alpha_sup = alpha.as_ref().map_or(0.0, sup_norm);

    let mut w = bundle.w.clone();
    let mut x = bundle.x.clone();
    let mut y = bundle.y.clone();
    if let Some(al) = &alpha {
        for k in 0..w.len() {
            for j in 0..d {
                w.value_mut(k)[j] += al.value(k)[j];
                x.value_mut(k)[j] += al.value(k)[j];
            }
        }
    }
    let shift = |p: &[f64]| {
        let mut q = p.to_vec();
        q[0] += spec.wobble;
        q
    };
    // correction to X: Σ over pushes of (γ used by the scheme - γ^{i,η})
    let mut correction = vec![0.0; d];
    let mut next = 0;
    let any_beta = !spec.beta.is_empty();
    for k in 0..w.len() {
        if spec.wobble > 0.0 {
            while next < bundle.events.len() && bundle.events[next].index == k {
                let e = &bundle.events[next];
                let moved = shift(&e.hit);
                for (i, dy) in e.increments() {
                    let g0 = field.gamma(domain, i, &e.hit)?;
                    let g1 = field.gamma(domain, i, &moved)?;
                    for j in 0..d {
                        correction[j] += (g0[j] - g1[j]) * dy;
                    }
                }
                next += 1;
            }
        }
        if any_beta {
            let before = beta.value_before(k);
            let at = shift(w.value(k));
            for i in 0..faces {
                let db = beta.value(k)[i] - before[i];
                if db != 0.0 {
                    let g = field.gamma(domain, i, &at)?;
                    for j in 0..d {
                        correction[j] -= g[j] * db;
                    }
                }
                y.value_mut(k)[i] += beta.value(k)[i];
            }
        }
        if spec.wobble > 0.0 || any_beta {
            for j in 0..d {
                x.value_mut(k)[j] += correction[j];
            }
        }
    }
    Ok(PerturbedBundle {
        bundle: SrbmPathBundle {
            w,
            x,
            y,
            events: bundle.events.clone(),
            delta: bundle.delta,
            hit_tol: bundle.hit_tol,
        },
        alpha_sup,
        beta_variation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SamplingBox, SurfacePatch};
    use crate::paths::{BrownianParams, TimeGrid};
    use crate::scheme::{simulate, SchemeConfig};

    fn quadrant_run(field: &ReflectionField) -> (DomainSpec, SrbmPathBundle) {
        let dom = DomainSpec::new(
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
                hi: vec![2.0, 2.0],
            },
            vec![0.5, 0.5],
            Some(1e-9),
        )
        .unwrap();
        let params = BrownianParams::standard(vec![-1.0, -0.5], vec![0.1, 0.1]).unwrap();
        let cfg = SchemeConfig::new(1e-2, TimeGrid::uniform(1.0, 200).unwrap(), 9);
        let b = simulate(&dom, field, &params, &cfg).unwrap();
        (dom, b)
    }

    /// `max_k ‖W - X - Σ γ ΔY‖` with every `Y` increment (events and `β`
    /// steps) pushed along the field at the given displacement.
    fn constant_field_residual(b: &SrbmPathBundle, gammas: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..b.w.len() {
            let (w, x, y) = (b.w.value(k), b.x.value(k), b.y.value(k));
            for j in 0..w.len() {
                let push: f64 = gammas.iter().zip(y).map(|(g, yi)| g[j] * yi).sum();
                worst = worst.max((w[j] - x[j] - push).abs());
            }
        }
        worst
    }

    #[test]
    fn zero_spec_is_identity() {
        let field = ReflectionField::normal(2);
        let (dom, b) = quadrant_run(&field);
        let p = inject_perturbations(&b, &PerturbationSpec::default(), &dom, &field).unwrap();
        assert_eq!(p.bundle, b);
        assert_eq!(p.alpha_sup, 0.0);
        assert_eq!(p.beta_variation, 0.0);
    }

    #[test]
    fn constant_alpha_shifts_w() {
        let field = ReflectionField::normal(2);
        let (dom, b) = quadrant_run(&field);
        let spec = PerturbationSpec {
            alpha: AlphaShape::Constant { value: vec![0.3, -0.4] },
            ..Default::default()
        };
        let p = inject_perturbations(&b, &spec, &dom, &field).unwrap();
        assert!((p.alpha_sup - 0.5).abs() < 1e-15);
        for k in 0..b.w.len() {
            assert!((p.bundle.w.value(k)[0] - b.w.value(k)[0] - 0.3).abs() < 1e-15);
            assert!((p.bundle.w.value(k)[1] - b.w.value(k)[1] + 0.4).abs() < 1e-15);
        }
        assert_eq!(p.bundle.y, b.y);
    }

    #[test]
    fn beta_step_keeps_the_identity() {
        let field = ReflectionField::constant(vec![vec![1.0, 0.2], vec![-0.1, 1.0]]).unwrap();
        let gammas: Vec<Vec<f64>> = (0..2).map(|i| field.gamma(&quadrant_run(&field).0, i, &[0.0, 0.0]).unwrap()).collect();
        let (dom, b) = quadrant_run(&field);
        assert!(constant_field_residual(&b, &gammas) < 1e-12);
        let spec = PerturbationSpec {
            alpha: AlphaShape::Sinusoid {
                amplitude: vec![0.01, 0.02],
                frequency: 3.0,
            },
            beta: vec![BetaStep {
                time: 0.5,
                height: vec![0.25, 0.0],
            }],
            declared_variation: Some(0.25),
            wobble: 0.0,
        };
        let p = inject_perturbations(&b, &spec, &dom, &field).unwrap();
        assert!((p.beta_variation - 0.25).abs() < 1e-12);
        let peak = 0.01 * 5f64.sqrt();
        assert!(p.alpha_sup <= peak * (1.0 + 1e-12) && p.alpha_sup > 0.99 * peak);
        assert!(constant_field_residual(&p.bundle, &gammas) < 1e-12);
        let k = b.grid().index_of(0.5).unwrap();
        assert!((p.bundle.y.value(k)[0] - b.y.value(k)[0] - 0.25).abs() < 1e-15);
        assert_eq!(p.bundle.y.value(k - 1), b.y.value(k - 1));

        let over = PerturbationSpec {
            declared_variation: Some(0.1),
            ..spec
        };
        assert!(matches!(
            inject_perturbations(&b, &over, &dom, &field),
            Err(Error::InvalidPerturbation(_))
        ));
    }

    #[test]
    fn noise_alpha_is_bounded_and_seeded() {
        let field = ReflectionField::normal(2);
        let (dom, b) = quadrant_run(&field);
        let spec = PerturbationSpec {
            alpha: AlphaShape::Noise {
                amplitude: 0.05,
                seed: 4,
            },
            ..Default::default()
        };
        let p = inject_perturbations(&b, &spec, &dom, &field).unwrap();
        let q = inject_perturbations(&b, &spec, &dom, &field).unwrap();
        assert_eq!(p, q);
        assert!(p.alpha_sup <= 0.05 * 2f64.sqrt() && p.alpha_sup > 0.0);
    }

    #[test]
    fn wobble_keeps_the_identity_with_displaced_directions() {
        let field = ReflectionField::normal(2);
        let (dom, b) = quadrant_run(&field);
        let spec = PerturbationSpec {
            wobble: 0.05,
            ..Default::default()
        };
        let p = inject_perturbations(&b, &spec, &dom, &field).unwrap();
        // halfspace normals do not depend on the point, so nothing moves
        assert!(p.bundle.x.sup_distance(&b.x).unwrap() < 1e-15);
        assert!(matches!(
            inject_perturbations(&b, &PerturbationSpec { wobble: -1.0, ..Default::default() }, &dom, &field),
            Err(Error::InvalidPerturbation(_))
        ));
    }
}
