//! Named fixtures, so manifests can say `{"preset": "quadrant"}`.

use srbm_core::geometry::{DomainSpec, SamplingBox, SurfacePatch};
use srbm_core::reflection::{FieldComponent, ReflectionField};

use crate::CliError;

pub const DOMAIN_PRESETS: &[&str] = &["halfline", "quadrant", "disc", "cusp2d", "gaussian-roof2d"];
pub const FIELD_PRESETS: &[&str] = &["normal", "disc-oblique", "quadrant-tangential"];

fn halfspace(normal: Vec<f64>) -> SurfacePatch {
    SurfacePatch::Halfspace { normal, offset: 0.0 }
}

pub fn domain(name: &str) -> Result<DomainSpec, CliError> {
    let (dim, patches, lo, hi, witness) = match name {
        "halfline" => (1, vec![halfspace(vec![1.0])], vec![-1.0], vec![4.0], vec![1.0]),
        "quadrant" => (
            2,
            vec![halfspace(vec![1.0, 0.0]), halfspace(vec![0.0, 1.0])],
            vec![-1.0, -1.0],
            vec![3.0, 3.0],
            vec![1.0, 1.0],
        ),
        "disc" => (
            2,
            vec![SurfacePatch::BallInterior { center: vec![0.0, 0.0], radius: 1.0 }],
            vec![-1.2, -1.2],
            vec![1.2, 1.2],
            vec![0.0, 0.0],
        ),
        "cusp2d" => (
            2,
            vec![SurfacePatch::Cusp2d { alpha: 1.5 }],
            vec![-1.0, -1.0],
            vec![1.0, 1.0],
            vec![0.0, -0.5],
        ),
        // the floor and the roof never meet, but their tubes do
        "gaussian-roof2d" => (
            2,
            vec![SurfacePatch::GaussianRoof2d, halfspace(vec![0.0, 1.0])],
            vec![-3.0, -0.5],
            vec![3.0, 1.5],
            vec![0.0, 0.5],
        ),
        other => {
            return Err(CliError::Usage(format!(
                "unknown domain preset {other:?}; known: {}",
                DOMAIN_PRESETS.join(", ")
            )))
        }
    };
    DomainSpec::new(dim, patches, SamplingBox { lo, hi }, witness, None).map_err(CliError::Input)
}

pub fn field(name: &str, domain: &DomainSpec) -> Result<ReflectionField, CliError> {
    let patches = domain.num_patches();
    let field = match name {
        "normal" => Ok(ReflectionField::normal(patches)),
        "disc-oblique" => ReflectionField::new(vec![FieldComponent::RotateNormal { angle: 0.3 }; patches], None),
        "quadrant-tangential" => ReflectionField::constant(vec![vec![0.0, -1.0], vec![-1.0, 0.0]]),
        other => {
            return Err(CliError::Usage(format!(
                "unknown field preset {other:?}; known: {}",
                FIELD_PRESETS.join(", ")
            )))
        }
    }
    .map_err(CliError::Input)?;
    field.validate_for(domain).map_err(CliError::Input)?;
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for d in DOMAIN_PRESETS {
            let dom = domain(d).unwrap();
            assert!(field("normal", &dom).is_ok());
        }
        assert!(field("disc-oblique", &domain("disc").unwrap()).is_ok());
        assert!(field("quadrant-tangential", &domain("quadrant").unwrap()).is_ok());
        assert!(field("quadrant-tangential", &domain("halfline").unwrap()).is_err());
        assert!(matches!(domain("torus"), Err(CliError::Usage(_))));
    }
}
