//! The run manifest: what to simulate and how, in one JSON file.
//!
//! Domain and field entries accept a preset (`{"preset": "quadrant"}`), a
//! path relative to the manifest, or the object inline.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use srbm_core::geometry::{DomainSpec, SamplingConfig};
use srbm_core::paths::{BrownianParams, TimeGrid};
use srbm_core::reflection::ReflectionField;
use srbm_core::scheme::SchemeConfig;

use crate::{presets, CliError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Check,
    Simulate,
    Converge,
    Certify,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Check => "check",
            Self::Simulate => "simulate",
            Self::Converge => "converge",
            Self::Certify => "certify",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub preset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Preset(Preset),
    File(PathBuf),
    Inline(T),
}

fn default_field() -> Source<ReflectionField> {
    Source::Preset(Preset {
        preset: "normal".into(),
    })
}

fn default_paths() -> usize {
    100
}

fn default_bins() -> usize {
    50
}

fn default_radii() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}

/// One level of a refinement sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepLevel {
    pub delta: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckOptions {
    /// Radii of the `D̂` sweep.
    pub radii: Vec<f64>,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self { radii: default_radii() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    /// Window lengths, each in `(0, T]`.
    pub windows: Vec<f64>,
    /// Offset between consecutive window starts; half the window when absent.
    pub stride: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TightnessOptions {
    pub lambdas: Vec<f64>,
    pub eps: f64,
    pub sup_bound: f64,
}

impl Default for TightnessOptions {
    fn default() -> Self {
        Self {
            lambdas: vec![0.01, 0.05, 0.1],
            eps: 0.5,
            sup_bound: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// When present, must agree with the subcommand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub domain: Source<DomainSpec>,
    #[serde(default = "default_field")]
    pub field: Source<ReflectionField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<BrownianParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sweep: Vec<SweepLevel>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    /// Per-path CSV dumps written by `simulate`; `min(paths, 10)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_paths: Option<usize>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub check: CheckOptions,
    #[serde(default)]
    pub certify: CertifyOptions,
    #[serde(default)]
    pub tightness: TightnessOptions,
}

/// A manifest with its sources resolved.
#[derive(Clone, Debug)]
pub struct LoadedManifest {
    /// The file as written, embedded in every report.
    pub raw: Value,
    pub manifest: RunManifest,
    pub domain: DomainSpec,
    pub field: ReflectionField,
    pub base_dir: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(Value, T), CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: Value = serde_json::from_str(&text).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = T::deserialize(&raw).map_err(|source| CliError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    Ok((raw, parsed))
}

impl LoadedManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let (raw, manifest): (Value, RunManifest) = read_json(path)?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let domain = match &manifest.domain {
            Source::Preset(p) => presets::domain(&p.preset)?,
            Source::File(f) => read_json::<DomainSpec>(&base_dir.join(f))?.1,
            Source::Inline(d) => d.clone(),
        };
        let field = match &manifest.field {
            Source::Preset(p) => presets::field(&p.preset, &domain)?,
            Source::File(f) => read_json::<ReflectionField>(&base_dir.join(f))?.1,
            Source::Inline(f) => f.clone(),
        };
        field.validate_for(&domain).map_err(CliError::Input)?;
        Ok(Self {
            raw,
            manifest,
            domain,
            field,
            base_dir,
        })
    }

    /// Checks what `mode` needs from the manifest.
    pub fn validate(&self, mode: Mode) -> Result<(), CliError> {
        let m = &self.manifest;
        let usage = |msg: String| Err(CliError::Usage(msg));
        if let Some(declared) = m.mode {
            if declared != mode {
                return usage(format!(
                    "manifest is for {:?}, not {:?}",
                    declared.name(),
                    mode.name()
                ));
            }
        }
        if mode == Mode::Check {
            if m.check.radii.iter().any(|r| !(*r > 0.0)) {
                return usage("check radii must be positive".into());
            }
            return Ok(());
        }
        let Some(params) = &m.params else {
            return usage(format!("{} needs \"params\"", mode.name()));
        };
        if params.dimension() != self.domain.dimension() {
            return usage(format!(
                "params have dimension {}, the domain {}",
                params.dimension(),
                self.domain.dimension()
            ));
        }
        let Some(scheme) = &m.scheme else {
            return usage(format!("{} needs \"scheme\"", mode.name()));
        };
        if m.paths == 0 {
            return usage("paths must be positive".into());
        }
        let horizon = scheme.grid.horizon();
        match mode {
            Mode::Converge => {
                if m.sweep.is_empty() {
                    return usage("converge needs a nonempty \"sweep\"".into());
                }
                if m.sweep.windows(2).any(|w| !(w[1].delta < w[0].delta)) {
                    return usage("sweep deltas must be strictly decreasing".into());
                }
                let steps = self.sweep_steps()?;
                let finest = *steps.iter().max().expect("nonempty");
                if let Some(n) = steps.iter().find(|n| finest % **n != 0) {
                    return usage(format!("sweep grid with {n} steps does not divide the finest grid ({finest})"));
                }
            }
            Mode::Certify => {
                if m.certify.windows.is_empty() {
                    return usage("certify needs window lengths".into());
                }
                for w in &m.certify.windows {
                    if !(*w > 0.0 && *w <= horizon * (1.0 + 1e-12)) {
                        return usage(format!("window {w} must lie in (0, T = {horizon}]"));
                    }
                }
                if scheme.grid.uniform_step().is_none() {
                    return usage("certify needs a uniform grid".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Steps of each sweep level on `[0, T]`.
    pub fn sweep_steps(&self) -> Result<Vec<usize>, CliError> {
        let horizon = self.scheme()?.grid.horizon();
        self.manifest
            .sweep
            .iter()
            .map(|l| {
                if !(l.delta > 0.0) {
                    return Err(CliError::Usage(format!("sweep delta {} must be positive", l.delta)));
                }
                TimeGrid::with_step(horizon, l.dt)
                    .map(|g| g.steps())
                    .map_err(CliError::Input)
            })
            .collect()
    }

    pub fn params(&self) -> Result<&BrownianParams, CliError> {
        self.manifest
            .params
            .as_ref()
            .ok_or_else(|| CliError::Usage("missing \"params\"".into()))
    }

    pub fn scheme(&self) -> Result<&SchemeConfig, CliError> {
        self.manifest
            .scheme
            .as_ref()
            .ok_or_else(|| CliError::Usage("missing \"scheme\"".into()))
    }

    /// The `--seed` flag wins over the manifest, which wins over the scheme.
    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.manifest.seed)
            .or(self.manifest.scheme.as_ref().map(|s| s.seed))
            .unwrap_or(0)
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.manifest.output) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.base_dir.join(p),
            (None, None) => self.base_dir.join("out"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn presets_files_and_inline_sources() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "line.json",
            r#"{"dimension": 1, "patches": [{"kind": "halfspace", "normal": [1.0], "offset": 0.0}],
                "sampling_box": {"lo": [-1.0], "hi": [2.0]}, "interior_witness": [1.0]}"#,
        );
        let from_file = write(dir.path(), "a.json", r#"{"domain": "line.json"}"#);
        let m = LoadedManifest::load(&from_file).unwrap();
        assert_eq!(m.domain.dimension(), 1);
        assert_eq!(m.field, ReflectionField::normal(1));
        let preset = write(dir.path(), "b.json", r#"{"domain": {"preset": "quadrant"}, "field": {"preset": "quadrant-tangential"}}"#);
        assert_eq!(LoadedManifest::load(&preset).unwrap().domain.num_patches(), 2);
        let inline = write(
            dir.path(),
            "c.json",
            r#"{"domain": {"dimension": 1, "patches": [{"kind": "halfspace", "normal": [1.0], "offset": 0.5}],
                "sampling_box": {"lo": [-1.0], "hi": [2.0]}, "interior_witness": [1.0]},
                "field": {"fields": [{"kind": "constant", "direction": [2.0]}]}}"#,
        );
        let m = LoadedManifest::load(&inline).unwrap();
        assert!(m.field.is_constant());
    }

    #[test]
    fn validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad = write(dir.path(), "bad.json", r#"{"domain": {"preset": "halfline"}, "typo": 1}"#);
        assert!(matches!(LoadedManifest::load(&bad), Err(CliError::Parse { .. })));
        let missing = dir.path().join("none.json");
        assert!(matches!(LoadedManifest::load(&missing), Err(CliError::Io { .. })));

        let base = r#""domain": {"preset": "halfline"},
            "params": {"drift": [0.0], "covariance": [[1.0]], "initial": {"kind": "point", "value": [0.0]}},
            "scheme": {"delta": 0.01, "grid": {"horizon": 1.0, "steps": 100}}"#;
        let long = write(dir.path(), "long.json", &format!(r#"{{{base}, "certify": {{"windows": [0.5, 2.0]}}}}"#));
        let m = LoadedManifest::load(&long).unwrap();
        assert!(matches!(m.validate(Mode::Certify), Err(CliError::Usage(_))));
        assert!(m.validate(Mode::Simulate).is_ok());

        let sweep = write(
            dir.path(),
            "sweep.json",
            &format!(r#"{{{base}, "sweep": [{{"delta": 0.01, "dt": 0.001}}, {{"delta": 0.02, "dt": 0.0005}}]}}"#),
        );
        assert!(matches!(LoadedManifest::load(&sweep).unwrap().validate(Mode::Converge), Err(CliError::Usage(_))));
        let coprime = write(
            dir.path(),
            "coprime.json",
            &format!(r#"{{{base}, "sweep": [{{"delta": 0.01, "dt": 0.25}}, {{"delta": 0.005, "dt": 0.2}}]}}"#),
        );
        assert!(LoadedManifest::load(&coprime).unwrap().validate(Mode::Converge).is_err());

        let wrong_mode = write(dir.path(), "mode.json", &format!(r#"{{"mode": "check", {base}}}"#));
        assert!(LoadedManifest::load(&wrong_mode).unwrap().validate(Mode::Simulate).is_err());
    }

    #[test]
    fn seed_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "s.json",
            r#"{"domain": {"preset": "halfline"}, "seed": 5, "scheme": {"delta": 0.01, "grid": {"horizon": 1.0, "steps": 10}, "seed": 9}}"#,
        );
        let m = LoadedManifest::load(&p).unwrap();
        assert_eq!(m.seed(Some(1)), 1);
        assert_eq!(m.seed(None), 5);
    }
}
