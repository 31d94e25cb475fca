//! The four run modes. Each writes its reports into the output directory
//! before returning, so a failing run still leaves its evidence on disk.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;
use srbm_core::geometry::{check_a2, estimate_d, A2Outcome, DomainSpec, SurfacePatch, TubeDepth};
use srbm_core::oracle::{compare, orthant_map, skorokhod_1d, Gap, OrthantReflection, ORTHANT_TOL};
use srbm_core::paths::{sample_brownian_in, TimeGrid, VectorPath};
use srbm_core::polyhedron::{HoffmanEstimate, Polyhedron, SpanningReport};
use srbm_core::reflection::{audit_boundary, A5Report, FieldComponent, ReflectionField};
use srbm_core::scheme::{
    check_certificate, tightness_report, CertificateContext, CertificateReport, PathModuli, SchemeConfig,
    Simulator, SrbmPathBundle, TightnessTable, TubeFunction, Verdict,
};

use crate::manifest::{LoadedManifest, Mode};
use crate::output::{create_dir, histogram, median, quantile, write_json, Table};
use crate::{CliError, VERSION};

/// Command-line switches shared by all modes.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub force: bool,
    pub tightness_only: bool,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn prepare(m: &LoadedManifest, opts: &Options, mode: Mode) -> Result<PathBuf, CliError> {
    m.validate(mode)?;
    let out = m.output_dir(opts.out.as_deref());
    create_dir(&out)?;
    Ok(out)
}

fn scheme_config(m: &LoadedManifest, opts: &Options) -> Result<SchemeConfig, CliError> {
    let mut cfg = m.scheme()?.clone();
    cfg.seed = m.seed(opts.seed);
    Ok(cfg)
}

/// Provenance block embedded in every report.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub manifest: Value,
    pub domain: DomainSpec,
    pub field: ReflectionField,
}

impl Provenance {
    fn of(m: &LoadedManifest) -> Self {
        Self {
            version: VERSION,
            manifest: m.raw.clone(),
            domain: m.domain.clone(),
            field: m.field.clone(),
        }
    }
}

// ---------------------------------------------------------------- check

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionResult {
    pub name: &'static str,
    pub status: Status,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Margins {
    /// Audited spanning margin.
    pub a: f64,
    pub lipschitz: f64,
    /// `None` when infinite.
    pub rho0: Option<f64>,
    /// Cone radius at `ε = a/4`; `None` when unbounded or not evaluated.
    pub a2_radius: Option<f64>,
    pub hoffman: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TubeRow {
    pub r: f64,
    pub depth: TubeDepth,
}

#[derive(Clone, Debug, Serialize)]
pub struct PolyhedronReport {
    pub maximal_faces: Vec<Vec<usize>>,
    pub simple: bool,
    /// Absent for position-dependent fields.
    pub spanning: Option<SpanningReport>,
    pub hoffman: HoffmanEstimate,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub passed: bool,
    pub assumptions: Vec<AssumptionResult>,
    pub margins: Margins,
    pub cone: Option<A2Outcome>,
    pub tube: Vec<TubeRow>,
    pub audit: A5Report,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polyhedron: Option<PolyhedronReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub polyhedron_error: Option<String>,
}

impl CheckReport {
    pub fn status(&self, name: &str) -> Option<Status> {
        self.assumptions.iter().find(|a| a.name == name).map(|a| a.status)
    }
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Directions of a field that does not depend on position on a polyhedron.
fn constant_gammas(domain: &DomainSpec, field: &ReflectionField) -> Option<Vec<Vec<f64>>> {
    let fixed = field
        .components()
        .iter()
        .all(|c| !matches!(c, FieldComponent::Affine { .. }));
    if !fixed || !domain.is_polyhedral() {
        return None;
    }
    let x = domain.interior_witness();
    (0..domain.num_patches())
        .map(|i| field.gamma(domain, i, x).ok())
        .collect()
}

fn polyhedron_report(
    domain: &DomainSpec,
    field: &ReflectionField,
    m: &LoadedManifest,
) -> srbm_core::Result<PolyhedronReport> {
    let poly = Polyhedron::from_domain(domain)?;
    let maximal_faces = poly.enumerate_maximal()?.into_iter().map(|f| f.indices).collect();
    let spanning = match constant_gammas(domain, field) {
        Some(g) => Some(poly.check_assumption_5_1(&g)?),
        None => None,
    };
    Ok(PolyhedronReport {
        maximal_faces,
        simple: poly.is_simple()?,
        spanning,
        hoffman: poly.hoffman_constant(domain, &m.manifest.sampling)?,
    })
}

/// Runs every assumption check and writes `check.json`.
pub fn run_check(m: &LoadedManifest, opts: &Options) -> Result<CheckReport, CliError> {
    let out = prepare(m, opts, Mode::Check)?;
    check_into(m, &out)
}

fn check_into(m: &LoadedManifest, out: &Path) -> Result<CheckReport, CliError> {
    let (domain, field) = (&m.domain, &m.field);
    let cfg = &m.manifest.sampling;
    let mut assumptions = vec![AssumptionResult {
        name: "domain",
        status: Status::Pass,
        detail: format!("{} patches in dimension {}", domain.num_patches(), domain.dimension()),
    }];

    let audit = audit_boundary(domain, field, cfg).map_err(CliError::Input)?;
    let a = audit.level;

    let cone = if a > 0.0 && a < 4.0 {
        Some(check_a2(domain, a / 4.0, cfg).map_err(CliError::Input)?)
    } else {
        None
    };
    let a2_radius = match &cone {
        Some(A2Outcome::Holds { radius, .. }) => finite(*radius),
        _ => None,
    };
    assumptions.push(match &cone {
        None => AssumptionResult {
            name: "cone-condition",
            status: Status::Skipped,
            detail: "no positive spanning margin to set the cone parameter".into(),
        },
        Some(A2Outcome::Holds { radius, .. }) => AssumptionResult {
            name: "cone-condition",
            status: Status::Pass,
            detail: format!("holds at eps = {} within radius {radius}", a / 4.0),
        },
        Some(A2Outcome::Violation(w)) => AssumptionResult {
            name: "cone-condition",
            status: Status::Fail,
            detail: format!("violated on face {} at {:?}", w.face, w.x),
        },
    });

    let tube: Vec<TubeRow> = m
        .manifest
        .check
        .radii
        .iter()
        .map(|r| estimate_d(domain, *r, cfg).map(|depth| TubeRow { r: *r, depth }))
        .collect::<Result<_, _>>()
        .map_err(CliError::Input)?;
    let unbounded: Vec<f64> = tube.iter().filter(|t| t.depth.is_unbounded()).map(|t| t.r).collect();
    assumptions.push(AssumptionResult {
        name: "tube-depth",
        status: if unbounded.is_empty() { Status::Pass } else { Status::Fail },
        detail: if unbounded.is_empty() {
            "finite at every radius".into()
        } else {
            format!("unbounded at r = {unbounded:?}")
        },
    });

    assumptions.push(AssumptionResult {
        name: "field-lipschitz",
        status: if audit.lipschitz.is_finite() { Status::Pass } else { Status::Fail },
        detail: format!("estimated constant {}", audit.lipschitz),
    });

    assumptions.push(AssumptionResult {
        name: "spanning",
        status: if audit.passed { Status::Pass } else { Status::Fail },
        detail: match &audit.failure {
            None => format!("margin {a} over {} samples", audit.samples),
            Some(f) => format!(
                "fails at {:?} on patches {:?} (level {})",
                f.point, f.active, f.reflection_level
            ),
        },
    });

    let (polyhedron, polyhedron_error) = if domain.is_polyhedral() {
        match polyhedron_report(domain, field, m) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    if let Some(p) = &polyhedron {
        if let Some(s) = &p.spanning {
            let bad: Vec<&Vec<usize>> = s
                .faces
                .iter()
                .filter(|f| !(f.normal_combination.holds && f.reflection_combination.holds))
                .map(|f| &f.indices)
                .collect();
            assumptions.push(AssumptionResult {
                name: "polyhedral-spanning",
                status: if s.holds { Status::Pass } else { Status::Fail },
                detail: if bad.is_empty() {
                    format!("holds on {} maximal faces", s.faces.len())
                } else {
                    format!("fails on face sets {bad:?}")
                },
            });
        }
    }

    let passed = assumptions.iter().all(|a| a.status != Status::Fail);
    let report = CheckReport {
        provenance: Provenance::of(m),
        passed,
        margins: Margins {
            a,
            lipschitz: audit.lipschitz,
            rho0: finite(audit.rho0),
            a2_radius,
            hoffman: polyhedron.as_ref().and_then(|p| finite(p.hoffman.constant.value())),
        },
        assumptions,
        cone,
        tube,
        audit,
        polyhedron,
        polyhedron_error,
    };
    write_json(&out.join("check.json"), &report)?;
    if !passed {
        let failed: Vec<String> = report
            .assumptions
            .iter()
            .filter(|a| a.status == Status::Fail)
            .map(|a| format!("{}: {}", a.name, a.detail))
            .collect();
        return Err(CliError::Assumption(failed.join("; ")));
    }
    Ok(report)
}

// ------------------------------------------------------------- simulate

#[derive(Clone, Debug, Serialize)]
pub struct SimulateSummary {
    pub paths: usize,
    pub seed: u64,
    pub horizon: f64,
    pub w_terminal_mean: Vec<f64>,
    /// Unbiased sample variance.
    pub w_terminal_variance: Vec<f64>,
    pub y_terminal_mean: Vec<f64>,
    pub events_total: usize,
    pub events_max: usize,
    /// `max(0, -min_i ψ_i(W))` over every grid point of every path.
    pub max_exterior_gauge: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    #[serde(flatten)]
    provenance: Provenance,
    params: &'a srbm_core::paths::BrownianParams,
    scheme: &'a SchemeConfig,
    seed: u64,
    hit_tol: f64,
    active_tol: f64,
    paths: usize,
    dump_paths: usize,
    checked: bool,
}

struct PathStats {
    w_end: Vec<f64>,
    y_end: Vec<f64>,
    events: usize,
    exterior: f64,
    dump: Option<String>,
}

fn exterior_gauge(domain: &DomainSpec, w: &VectorPath) -> f64 {
    w.points()
        .map(|p| {
            (0..domain.num_patches())
                .filter_map(|i| domain.gauge(i, p).ok())
                .fold(f64::INFINITY, f64::min)
        })
        .map(|g| (-g).max(0.0))
        .fold(0.0, f64::max)
}

fn path_csv(b: &SrbmPathBundle) -> String {
    let (d, faces) = (b.w.dimension(), b.y.dimension());
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("X_{j}")));
    header.extend((1..=d).map(|j| format!("W_{j}")));
    header.extend((1..=faces).map(|i| format!("Y_{i}")));
    let mut t = Table::new(&header);
    let mut row = Vec::with_capacity(1 + 2 * d + faces);
    for (k, time) in b.grid().times().iter().enumerate() {
        row.clear();
        row.push(*time);
        row.extend_from_slice(b.x.value(k));
        row.extend_from_slice(b.w.value(k));
        row.extend_from_slice(b.y.value(k));
        t.row(&row);
    }
    t.into_string()
}

/// Simulates the configured number of paths and writes the per-path CSVs,
/// `metadata.json`, `summary.json`, `terminal.csv` and
/// `terminal_histogram.csv`.
pub fn run_simulate(m: &LoadedManifest, opts: &Options) -> Result<SimulateSummary, CliError> {
    let out = prepare(m, opts, Mode::Simulate)?;
    if !opts.force {
        check_into(m, &out)?;
    }
    let cfg = scheme_config(m, opts)?;
    let params = m.params()?;
    let sim = Simulator::new(&m.domain, &m.field, &cfg).map_err(CliError::Input)?;
    let paths = m.manifest.paths;
    let dump = m.manifest.dump_paths.unwrap_or(10).min(paths);

    let stats: Vec<PathStats> = (0..paths)
        .into_par_iter()
        .map(|p| {
            let b = sim.simulate(params, p as u64).map_err(CliError::from_run)?;
            let n = b.grid().steps();
            Ok(PathStats {
                w_end: b.w.value(n).to_vec(),
                y_end: b.y.value(n).to_vec(),
                events: b.events.len(),
                exterior: exterior_gauge(&m.domain, &b.w),
                dump: (p < dump).then(|| path_csv(&b)),
            })
        })
        .collect::<Result<_, CliError>>()?;

    let paths_dir = out.join("paths");
    create_dir(&paths_dir)?;
    for (p, s) in stats.iter().enumerate() {
        if let Some(text) = &s.dump {
            let path = paths_dir.join(format!("path_{p:05}.csv"));
            std::fs::write(&path, text).map_err(crate::output::io_err(&path))?;
        }
    }

    let d = m.domain.dimension();
    let faces = m.domain.num_patches();
    let n = paths as f64;
    let mean = |f: &dyn Fn(&PathStats) -> f64| stats.iter().map(f).sum::<f64>() / n;
    let w_mean: Vec<f64> = (0..d).map(|j| mean(&|s| s.w_end[j])).collect();
    let w_var: Vec<f64> = (0..d)
        .map(|j| {
            if paths < 2 {
                return 0.0;
            }
            stats.iter().map(|s| (s.w_end[j] - w_mean[j]).powi(2)).sum::<f64>() / (n - 1.0)
        })
        .collect();
    let summary = SimulateSummary {
        paths,
        seed: cfg.seed,
        horizon: cfg.grid.horizon(),
        w_terminal_mean: w_mean,
        w_terminal_variance: w_var,
        y_terminal_mean: (0..faces).map(|i| mean(&|s| s.y_end[i])).collect(),
        events_total: stats.iter().map(|s| s.events).sum(),
        events_max: stats.iter().map(|s| s.events).max().unwrap_or(0),
        max_exterior_gauge: stats.iter().map(|s| s.exterior).fold(0.0, f64::max),
    };

    let mut header = vec!["path".to_string()];
    header.extend((1..=d).map(|j| format!("W_{j}")));
    header.extend((1..=faces).map(|i| format!("Y_{i}")));
    let mut terminal = Table::new(&header);
    for (p, s) in stats.iter().enumerate() {
        terminal.row((p, &s.w_end, &s.y_end));
    }
    terminal.write(&out.join("terminal.csv"))?;

    let mut hist = Table::new(&["coordinate", "bin_lo", "bin_hi", "count"]);
    for j in 0..d {
        let values: Vec<f64> = stats.iter().map(|s| s.w_end[j]).collect();
        for (lo, hi, c) in histogram(&values, m.manifest.histogram_bins) {
            hist.row((j + 1, lo, hi, c));
        }
    }
    hist.write(&out.join("terminal_histogram.csv"))?;

    write_json(
        &out.join("metadata.json"),
        &Metadata {
            provenance: Provenance::of(m),
            params,
            scheme: &cfg,
            seed: cfg.seed,
            hit_tol: sim.hit_tol(),
            active_tol: sim.active_tol(),
            paths,
            dump_paths: dump,
            checked: !opts.force,
        },
    )?;
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

// ------------------------------------------------------------- converge

/// A closed-form reference applicable to the domain and field.
#[derive(Clone, Debug)]
pub enum Oracle {
    Halfline,
    /// Patch `i` is `{x_{coord[i]} > 0}`; `Y_i` enters the orthant map
    /// scaled by `scale[i] = γ^i_{coord[i]}`.
    Orthant {
        coord: Vec<usize>,
        scale: Vec<f64>,
        reflection: OrthantReflection,
    },
}

impl Oracle {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Halfline => "skorokhod-1d",
            Self::Orthant { .. } => "orthant-map",
        }
    }

    /// Finds the oracle for `(domain, field)` or says why there is none.
    pub fn detect(domain: &DomainSpec, field: &ReflectionField) -> Result<Self, String> {
        let d = domain.dimension();
        if domain.num_patches() != d {
            return Err("the domain is not an orthant".into());
        }
        let mut coord = Vec::with_capacity(d);
        for p in domain.patches() {
            let SurfacePatch::Halfspace { normal, offset } = p else {
                return Err("the domain has a curved patch".into());
            };
            let axis = normal.iter().position(|v| (v - 1.0).abs() < 1e-12);
            let clean = *offset == 0.0 && normal.iter().filter(|v| v.abs() > 1e-12).count() == 1;
            match axis {
                Some(c) if clean && !coord.contains(&c) => coord.push(c),
                _ => return Err("the domain is not an orthant".into()),
            }
        }
        let gammas = constant_gammas(domain, field).ok_or("the field depends on position")?;
        if d == 1 && gammas[0][0] > 0.0 {
            return Ok(Self::Halfline);
        }
        let scale: Vec<f64> = (0..d).map(|i| gammas[i][coord[i]]).collect();
        if scale.iter().any(|s| !(*s > 0.0)) {
            return Err("a reflection direction is tangent to its face".into());
        }
        let mut r = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                r[j][coord[i]] = gammas[i][j] / scale[i];
            }
        }
        let reflection = OrthantReflection::new(r).map_err(|e| e.to_string())?;
        Ok(Self::Orthant {
            coord,
            scale,
            reflection,
        })
    }

    /// Gap between a scheme run and the oracle on the run's driving path.
    pub fn gap(&self, bundle: &SrbmPathBundle) -> srbm_core::Result<Gap> {
        match self {
            Self::Halfline => {
                let r = skorokhod_1d(&bundle.x)?;
                compare(bundle, &r.w, Some(&r.y))
            }
            Self::Orthant {
                coord,
                scale,
                reflection,
            } => {
                let sol = orthant_map(&bundle.x, reflection, None, ORTHANT_TOL)?;
                let faces = coord.len();
                let mut y = Vec::with_capacity(sol.y.values().len());
                for p in sol.y.points() {
                    y.extend((0..faces).map(|i| p[coord[i]] / scale[i]));
                }
                let y = VectorPath::new(sol.y.grid().clone(), faces, y)?;
                compare(bundle, &sol.w, Some(&y))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergeRow {
    pub delta: f64,
    pub dt: f64,
    pub steps: usize,
    pub paths: usize,
    pub median_gap: f64,
    pub p95_gap: f64,
    pub median_y_gap: Vec<f64>,
    /// Per-path `W` gaps in path order.
    #[serde(skip)]
    pub gaps: Vec<f64>,
    #[serde(skip)]
    pub y_gaps: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergeReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub oracle: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reflection_matrix: Option<Vec<Vec<f64>>>,
    pub seed: u64,
    pub rows: Vec<ConvergeRow>,
    /// The median gap decreases strictly down the sweep.
    pub strictly_decreasing: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TightnessReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub seed: u64,
    pub table: TightnessTable,
}

#[derive(Clone, Debug)]
pub enum ConvergeOutcome {
    Gaps(ConvergeReport),
    Tightness(TightnessReport),
}

/// Runs every sweep level on matched driving paths: each level sees the
/// finest level's path for the same seed, subsampled to its own grid.
fn sweep<T: Send>(
    m: &LoadedManifest,
    cfg: &SchemeConfig,
    measure: impl Fn(&SrbmPathBundle) -> Result<T, CliError> + Sync,
) -> Result<Vec<Vec<T>>, CliError> {
    let horizon = cfg.grid.horizon();
    let steps = m.sweep_steps()?;
    let finest = *steps.iter().max().expect("validated nonempty");
    let fine_grid = Arc::new(TimeGrid::uniform(horizon, finest).map_err(CliError::Input)?);
    let sims: Vec<Simulator> = m
        .manifest
        .sweep
        .iter()
        .zip(&steps)
        .map(|(level, n)| {
            let mut c = cfg.clone();
            c.delta = level.delta;
            c.grid = TimeGrid::uniform(horizon, *n)?;
            Simulator::new(&m.domain, &m.field, &c)
        })
        .collect::<Result<_, _>>()
        .map_err(CliError::Input)?;
    let params = m.params()?;
    let per_path: Vec<Vec<T>> = (0..m.manifest.paths)
        .into_par_iter()
        .map(|p| {
            let fine = sample_brownian_in(params, &fine_grid, cfg.seed, p as u64, Some(&m.domain))
                .map_err(CliError::Input)?;
            sims.iter()
                .zip(&steps)
                .map(|(sim, n)| {
                    let x = fine.subsample(finest / n).map_err(CliError::Input)?;
                    let b = sim.run(&x).map_err(CliError::from_run)?;
                    measure(&b)
                })
                .collect()
        })
        .collect::<Result<_, CliError>>()?;
    // transpose to level-major
    let levels = steps.len();
    let mut by_level: Vec<Vec<T>> = (0..levels).map(|_| Vec::with_capacity(per_path.len())).collect();
    for row in per_path {
        for (l, v) in row.into_iter().enumerate() {
            by_level[l].push(v);
        }
    }
    Ok(by_level)
}

/// Gap table against the oracle, or with `--tightness-only` the modulus
/// frequency table.
pub fn run_converge(m: &LoadedManifest, opts: &Options) -> Result<ConvergeOutcome, CliError> {
    let out = prepare(m, opts, Mode::Converge)?;
    let cfg = scheme_config(m, opts)?;
    let horizon = cfg.grid.horizon();
    let steps = m.sweep_steps()?;

    if opts.tightness_only {
        let t = &m.manifest.tightness;
        let moduli = sweep(m, &cfg, |b| {
            PathModuli::measure(b, horizon, &t.lambdas).map_err(CliError::Input)
        })?;
        let family: Vec<(f64, Vec<PathModuli>)> = m
            .manifest
            .sweep
            .iter()
            .map(|l| l.delta)
            .zip(moduli)
            .collect();
        let table = tightness_report(&family, horizon, &t.lambdas, t.eps, t.sup_bound).map_err(CliError::Input)?;
        let mut csv = Table::new(&[
            "delta", "lambda", "paths", "w_freq", "w_lo", "w_hi", "y_freq", "y_lo", "y_hi", "sup_freq", "sup_lo",
            "sup_hi",
        ]);
        for r in &table.rows {
            csv.row((
                r.delta,
                r.lambda,
                r.paths,
                r.w_freq,
                r.w_interval.0,
                r.w_interval.1,
                r.y_freq,
                r.y_interval.0,
                r.y_interval.1,
                r.sup_freq,
                r.sup_interval.0,
                r.sup_interval.1,
            ));
        }
        csv.write(&out.join("tightness.csv"))?;
        let report = TightnessReport {
            provenance: Provenance::of(m),
            seed: cfg.seed,
            table,
        };
        write_json(&out.join("tightness.json"), &report)?;
        return Ok(ConvergeOutcome::Tightness(report));
    }

    let oracle = Oracle::detect(&m.domain, &m.field)
        .map_err(|why| CliError::Usage(format!("no oracle applies ({why}); use --tightness-only")))?;
    let gaps = sweep(m, &cfg, |b| oracle.gap(b).map_err(CliError::from_run))?;
    let faces = m.domain.num_patches();
    let rows: Vec<ConvergeRow> = m
        .manifest
        .sweep
        .iter()
        .zip(&steps)
        .zip(gaps)
        .map(|((level, n), gaps)| {
            let w: Vec<f64> = gaps.iter().map(|g| g.w).collect();
            let y: Vec<Vec<f64>> = gaps.iter().map(|g| g.y.clone().unwrap_or_default()).collect();
            ConvergeRow {
                delta: level.delta,
                dt: horizon / *n as f64,
                steps: *n,
                paths: w.len(),
                median_gap: median(&w),
                p95_gap: quantile(&w, 0.95),
                median_y_gap: (0..faces)
                    .map(|i| median(&y.iter().map(|g| g[i]).collect::<Vec<_>>()))
                    .collect(),
                gaps: w,
                y_gaps: y,
            }
        })
        .collect();

    let mut header: Vec<String> = ["delta", "dt", "paths", "median_gap", "p95_gap"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=faces).map(|i| format!("median_y_gap_{i}")));
    let mut csv = Table::new(&header);
    for r in &rows {
        csv.row((r.delta, r.dt, r.paths, r.median_gap, r.p95_gap, &r.median_y_gap));
    }
    csv.write(&out.join("converge.csv"))?;

    let report = ConvergeReport {
        provenance: Provenance::of(m),
        oracle: oracle.name(),
        reflection_matrix: match &oracle {
            Oracle::Orthant { reflection, .. } => Some(reflection.matrix().to_vec()),
            Oracle::Halfline => None,
        },
        seed: cfg.seed,
        strictly_decreasing: rows.windows(2).all(|w| w[1].median_gap < w[0].median_gap),
        rows,
    };
    write_json(&out.join("converge.json"), &report)?;
    Ok(ConvergeOutcome::Gaps(report))
}

// -------------------------------------------------------------- certify

#[derive(Clone, Debug, Default, Serialize)]
pub struct HypothesisFailures {
    pub scale: usize,
    pub localized: usize,
    pub reconstruction: usize,
    pub y_nonnegative: usize,
    pub y_increments: usize,
    pub complementarity: usize,
    pub tube: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContextSummary {
    pub a: f64,
    pub lipschitz: f64,
    pub rho0: Option<f64>,
    pub a2_radius: Option<f64>,
    pub rho: Option<f64>,
    pub delta: f64,
    pub tube: TubeFunction,
}

#[derive(Clone, Debug, Serialize)]
pub struct ViolationRecord {
    pub path: usize,
    pub report: CertificateReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertifySummary {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub seed: u64,
    pub paths: usize,
    pub context: ContextSummary,
    pub windows: usize,
    pub verified: usize,
    pub hypothesis_not_met: usize,
    #[serde(rename = "VIOLATION")]
    pub violation: usize,
    /// Among windows with unmet hypotheses, how often each one failed.
    pub failed_hypotheses: HypothesisFailures,
    pub violations: Vec<ViolationRecord>,
}

fn steps_of(len: f64, dt: f64, what: &str) -> Result<usize, CliError> {
    let k = (len / dt).round();
    if k < 1.0 || (k * dt - len).abs() > 1e-9 * len.max(dt) {
        return Err(CliError::Usage(format!("{what} {len} is not a multiple of dt = {dt}")));
    }
    Ok(k as usize)
}

/// Slides every configured window over every path and tallies verdicts into
/// `certify.json`.
pub fn run_certify(m: &LoadedManifest, opts: &Options) -> Result<CertifySummary, CliError> {
    let out = prepare(m, opts, Mode::Certify)?;
    let cfg = scheme_config(m, opts)?;
    let params = m.params()?;
    let sim = Simulator::new(&m.domain, &m.field, &cfg).map_err(CliError::Input)?;
    let ctx = CertificateContext::from_audit(&m.domain, &m.field, &m.manifest.sampling, cfg.delta, sim.hit_tol())
        .map_err(|e| match e {
            srbm_core::Error::WeightsInfeasible { point, active, level } => CliError::Assumption(format!(
                "spanning fails at {point:?} on patches {active:?} (level {level})"
            )),
            other => CliError::Input(other),
        })?;

    let grid = sim.grid().clone();
    let dt = grid.uniform_step().expect("validated uniform");
    let n = grid.steps();
    let mut spans = Vec::new();
    for len in &m.manifest.certify.windows {
        let k = steps_of(*len, dt, "window")?.min(n);
        let stride = steps_of(m.manifest.certify.stride.unwrap_or(len / 2.0).max(dt), dt, "stride")?;
        let mut a = 0;
        while a + k <= n {
            spans.push((a, a + k));
            a += stride;
        }
    }

    let reports: Vec<Vec<CertificateReport>> = (0..m.manifest.paths)
        .into_par_iter()
        .map(|p| {
            let b = sim.simulate(params, p as u64).map_err(CliError::from_run)?;
            spans
                .iter()
                .map(|(a, c)| {
                    check_certificate(&b, grid.time(*a), grid.time(*c), &ctx, &m.domain, &m.field)
                        .map_err(CliError::Input)
                })
                .collect()
        })
        .collect::<Result<_, CliError>>()?;

    let mut failures = HypothesisFailures::default();
    let (mut verified, mut unmet) = (0, 0);
    let mut violations = Vec::new();
    for (p, path) in reports.into_iter().enumerate() {
        for r in path {
            match r.verdict {
                Verdict::Verified => verified += 1,
                Verdict::Violation => violations.push(ViolationRecord { path: p, report: r }),
                Verdict::HypothesisNotMet => {
                    unmet += 1;
                    let h = r.hypotheses;
                    failures.scale += usize::from(!h.scale);
                    failures.localized += usize::from(!h.localized);
                    failures.reconstruction += usize::from(!h.reconstruction);
                    failures.y_nonnegative += usize::from(!h.y_nonnegative);
                    failures.y_increments += usize::from(!h.y_increments);
                    failures.complementarity += usize::from(!h.complementarity);
                    failures.tube += usize::from(!h.tube);
                }
            }
        }
    }
    let summary = CertifySummary {
        provenance: Provenance::of(m),
        seed: cfg.seed,
        paths: m.manifest.paths,
        context: ContextSummary {
            a: ctx.a,
            lipschitz: ctx.lipschitz,
            rho0: finite(ctx.rho0),
            a2_radius: finite(ctx.a2_radius),
            rho: finite(ctx.rho),
            delta: ctx.delta,
            tube: ctx.tube.clone(),
        },
        windows: verified + unmet + violations.len(),
        verified,
        hypothesis_not_met: unmet,
        violation: violations.len(),
        failed_hypotheses: failures,
        violations,
    };
    write_json(&out.join("certify.json"), &summary)?;
    if summary.violation > 0 {
        return Err(CliError::Violation(summary.violation));
    }
    Ok(summary)
}
