//! Convex polyhedra `Ḡ = {x : <n^i, x> ≥ β_i}`: face lattice, maximal index
//! sets, simplicity, the spanning conditions for constant reflection fields,
//! and the linear tube bound `D(u) ≤ C u`.
//!
//! Every decision here is a small linear program; strict inequalities are
//! handled by maximizing a margin and accepting above [`STRICT_MARGIN`].

use serde::{Deserialize, Serialize};

use crate::geometry::{BoundaryModel, DomainSpec, SamplingConfig, SurfacePatch, TubeDepth};
use crate::linalg::{check_dim, dot, norm};
use crate::lp::{Cmp, LinearProgram, LpOutcome};
use crate::reflection::{max_min_simplex, MaxMargin};
use crate::{Error, Result};

/// Subset enumeration limit.
pub const MAX_FACES: usize = 20;
/// Tolerance of the containment and feasibility programs.
pub const CONTAINMENT_TOL: f64 = 1e-9;
/// Margins at or below this are not strictly positive.
pub const STRICT_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
}

/// A nonempty face `F_K` and whether `K` is maximal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceSet {
    pub indices: Vec<usize>,
    pub nonempty: bool,
    pub maximal: bool,
}

impl FaceSet {
    pub fn mask(&self) -> u64 {
        self.indices.iter().fold(0, |m, i| m | 1 << i)
    }
}

/// The JSON face-lattice report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceLattice {
    pub dimension: usize,
    pub faces: usize,
    /// Every `K` with `F_K` nonempty, in increasing bitmask order.
    pub sets: Vec<FaceSet>,
    pub simple: bool,
}

impl FaceLattice {
    pub fn maximal(&self) -> impl Iterator<Item = &FaceSet> {
        self.sets.iter().filter(|f| f.maximal)
    }
}

fn indices(mask: u64) -> Vec<usize> {
    (0..64).filter(|i| mask >> i & 1 == 1).collect()
}

impl Polyhedron {
    /// Validates unit normals, nonemptiness, and minimality of the
    /// description. Duplicates and redundant rows are rejected by index.
    pub fn new(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidPolyhedron(m));
        if normals.is_empty() {
            return bad("at least one halfspace is required".into());
        }
        check_dim(normals.len(), offsets.len())?;
        let d = normals[0].len();
        if d == 0 {
            return bad("dimension must be positive".into());
        }
        for (i, n) in normals.iter().enumerate() {
            check_dim(d, n.len())?;
            if (norm(n) - 1.0).abs() > 1e-12 {
                return bad(format!("normal {i} is not a unit vector"));
            }
            if !offsets[i].is_finite() {
                return bad(format!("offset {i} is not finite"));
            }
        }
        for i in 0..normals.len() {
            for j in i + 1..normals.len() {
                let same = normals[i]
                    .iter()
                    .zip(&normals[j])
                    .all(|(a, b)| (a - b).abs() <= 1e-12)
                    && (offsets[i] - offsets[j]).abs() <= 1e-12;
                if same {
                    return bad(format!("halfspaces {i} and {j} are duplicates"));
                }
            }
        }
        let p = Self { normals, offsets };
        if p.feasible_point(0, &[])?.is_none() {
            return bad("the closure is empty".into());
        }
        for i in 0..p.len() {
            if p.is_redundant(i)? {
                return Err(Error::RedundantConstraint(i));
            }
        }
        Ok(p)
    }

    /// The halfspace patches of an all-halfspace domain.
    pub fn from_domain(domain: &DomainSpec) -> Result<Self> {
        let mut normals = Vec::new();
        let mut offsets = Vec::new();
        for p in domain.patches() {
            match p {
                SurfacePatch::Halfspace { normal, offset } => {
                    normals.push(normal.clone());
                    offsets.push(*offset);
                }
                _ => return Err(Error::InvalidPolyhedron("domain has a curved patch".into())),
            }
        }
        Self::new(normals, offsets)
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.normals[0].len()
    }

    pub fn normals(&self) -> &[Vec<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// A point with `<n^i, x> = β_i` for `i ∈ K` and `≥ β_j` elsewhere, skipping
    /// the rows in `skip`.
    fn feasible_point(&self, mask: u64, skip: &[usize]) -> Result<Option<Vec<f64>>> {
        let mut lp = LinearProgram::new(self.dimension(), false);
        self.face_rows(&mut lp, mask, skip, CONTAINMENT_TOL);
        Ok(match lp.solve()? {
            LpOutcome::Optimal { x, .. } => Some(x),
            LpOutcome::Unbounded => Some(vec![0.0; self.dimension()]),
            LpOutcome::Infeasible => None,
        })
    }

    fn face_rows(&self, lp: &mut LinearProgram, mask: u64, skip: &[usize], slack: f64) {
        for (i, (n, b)) in self.normals.iter().zip(&self.offsets).enumerate() {
            if skip.contains(&i) {
                continue;
            }
            if mask >> i & 1 == 1 {
                lp.row(n.clone(), Cmp::Eq, *b);
            } else {
                lp.row(n.clone(), Cmp::Ge, b - slack);
            }
        }
    }

    /// Row `i` is redundant when the others already force `<n^i, x> ≥ β_i`.
    fn is_redundant(&self, i: usize) -> Result<bool> {
        let mut lp = LinearProgram::new(self.dimension(), false);
        lp.objective(&self.normals[i]);
        self.face_rows(&mut lp, 0, &[i], 0.0);
        Ok(match lp.solve()? {
            LpOutcome::Optimal { value, .. } => value >= self.offsets[i] - CONTAINMENT_TOL,
            LpOutcome::Unbounded => false,
            LpOutcome::Infeasible => true,
        })
    }

    fn check_mask(&self, mask: u64) -> Result<()> {
        if self.len() < 64 && mask >> self.len() != 0 {
            return Err(Error::IndexOutOfRange {
                index: 63 - mask.leading_zeros() as usize,
                count: self.len(),
            });
        }
        Ok(())
    }

    /// Whether `F_K = ∩_{i∈K} F_i` is nonempty, by LP feasibility.
    pub fn face_nonempty(&self, k: &[usize]) -> Result<bool> {
        let mask = k.iter().fold(0u64, |m, i| m | 1 << i);
        self.check_mask(mask)?;
        Ok(self.feasible_point(mask, &[])?.is_some())
    }

    /// Whether row `j` is tight on all of `F_K`: `max_{F_K} <n^j, x> ≤ β_j`.
    fn tight_on_face(&self, mask: u64, j: usize) -> Result<bool> {
        let mut lp = LinearProgram::new(self.dimension(), true);
        lp.objective(&self.normals[j]);
        self.face_rows(&mut lp, mask, &[], 0.0);
        Ok(match lp.solve()? {
            LpOutcome::Optimal { value, .. } => value <= self.offsets[j] + CONTAINMENT_TOL,
            LpOutcome::Unbounded => false,
            LpOutcome::Infeasible => true,
        })
    }

    /// Whether a nonempty `F_K` differs from every `F_K̄`, `K̄ ⊋ K`.
    ///
    /// `F_K̄ ⊆ F_K` always, so equality for some strict superset is the same
    /// as some `j ∉ K` being tight on all of `F_K`.
    fn is_maximal_mask(&self, mask: u64, nonempty: impl Fn(u64) -> bool) -> Result<bool> {
        for j in 0..self.len() {
            if mask >> j & 1 == 1 {
                continue;
            }
            // an empty F_{K∪j} inside a nonempty F_K means j is not tight
            if !nonempty(mask | 1 << j) {
                continue;
            }
            if self.tight_on_face(mask, j)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// All nonempty faces with their maximality flags.
    pub fn face_lattice(&self) -> Result<FaceLattice> {
        let count = self.len();
        if count > MAX_FACES {
            return Err(Error::TooManyFaces {
                count,
                limit: MAX_FACES,
            });
        }
        let total = 1usize << count;
        let mut nonempty = vec![false; total];
        nonempty[0] = true;
        for mask in 1..total {
            // subsets are visited first; supersets of empty faces are empty
            let sub_ok = (0..count)
                .filter(|i| mask >> i & 1 == 1)
                .all(|i| nonempty[mask & !(1 << i)]);
            nonempty[mask] = sub_ok && self.feasible_point(mask as u64, &[])?.is_some();
        }
        let mut sets = Vec::new();
        for mask in 1..total {
            if !nonempty[mask] {
                continue;
            }
            let maximal = self.is_maximal_mask(mask as u64, |m| nonempty[m as usize])?;
            sets.push(FaceSet {
                indices: indices(mask as u64),
                nonempty: true,
                maximal,
            });
        }
        let simple = sets.iter().all(|f| f.maximal);
        Ok(FaceLattice {
            dimension: self.dimension(),
            faces: count,
            sets,
            simple,
        })
    }

    pub fn enumerate_maximal(&self) -> Result<Vec<FaceSet>> {
        Ok(self.face_lattice()?.maximal().cloned().collect())
    }

    /// `Ḡ` is simple iff every `K` with nonempty `F_K` is maximal.
    pub fn is_simple(&self) -> Result<bool> {
        Ok(self.face_lattice()?.simple)
    }

    /// Recomputes the flags of one set with fresh programs.
    pub fn verify_face_set(&self, set: &FaceSet) -> Result<bool> {
        let mask = set.mask();
        self.check_mask(mask)?;
        let nonempty = self.feasible_point(mask, &[])?.is_some();
        let maximal = nonempty
            && self.is_maximal_mask(mask, |m| {
                self.feasible_point(m, &[]).ok().flatten().is_some()
            })?;
        Ok(nonempty == set.nonempty && maximal == set.maximal)
    }

    /// The two positive-combination conditions at every maximal `K` for
    /// constant unit reflection directions.
    pub fn check_assumption_5_1(&self, gammas: &[Vec<f64>]) -> Result<SpanningReport> {
        check_dim(self.len(), gammas.len())?;
        for g in gammas {
            check_dim(self.dimension(), g.len())?;
            if (norm(g) - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidField("reflection directions must be unit vectors".into()));
            }
        }
        let mut faces = Vec::new();
        for set in self.enumerate_maximal()? {
            let n: Vec<&[f64]> = set.indices.iter().map(|i| self.normals[*i].as_slice()).collect();
            let g: Vec<&[f64]> = set.indices.iter().map(|i| gammas[*i].as_slice()).collect();
            faces.push(KReport {
                normal_combination: positive_combination(&n, &g)?,
                reflection_combination: positive_combination(&g, &n)?,
                indices: set.indices,
            });
        }
        let holds = faces
            .iter()
            .all(|f| f.normal_combination.holds && f.reflection_combination.holds);
        Ok(SpanningReport { faces, holds })
    }

    /// `Ĉ = max_k D̂(2^{-k}) / 2^{-k}` on the domain's sampling box.
    pub fn hoffman_constant(&self, domain: &DomainSpec, cfg: &SamplingConfig) -> Result<HoffmanEstimate> {
        let same = Polyhedron::from_domain(domain)?;
        if same != *self {
            return Err(Error::InvalidPolyhedron(
                "sampling domain does not describe this polyhedron".into(),
            ));
        }
        hoffman_constant(domain, cfg)
    }
}

/// One strict positive-combination program:
/// `max a` over `w` in the simplex with `<Σ_i w_i u_i, v_j> ≥ a` for all `j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub holds: bool,
    pub margin: f64,
    pub weights: Vec<f64>,
    /// When the condition fails: weights `y` in the simplex with
    /// `<u_i, Σ_j y_j v_j> ≤ margin ≤ 0` for every `i`, so no positive
    /// combination of the `u_i` has positive inner product with every `v_j`.
    pub certificate: Option<Vec<f64>>,
}

fn positive_combination(u: &[&[f64]], v: &[&[f64]]) -> Result<ConditionOutcome> {
    let game: Vec<Vec<f64>> = v.iter().map(|vj| u.iter().map(|ui| dot(ui, vj)).collect()).collect();
    let MaxMargin { level, weights } = max_min_simplex(&game)?;
    let holds = level > STRICT_MARGIN;
    let certificate = if holds {
        None
    } else {
        // the dual game: min over y of max_i Σ_j y_j <u_i, v_j>
        let dual: Vec<Vec<f64>> = (0..u.len())
            .map(|i| game.iter().map(|row| -row[i]).collect())
            .collect();
        Some(max_min_simplex(&dual)?.weights)
    };
    Ok(ConditionOutcome {
        holds,
        margin: level,
        weights,
        certificate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KReport {
    pub indices: Vec<usize>,
    /// `∃ b > 0` with `<Σ b_i n^i, γ^j> > 0` for `j ∈ K`.
    pub normal_combination: ConditionOutcome,
    /// `∃ c > 0` with `<Σ c_i γ^i, n^j> > 0` for `j ∈ K`.
    pub reflection_combination: ConditionOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanningReport {
    pub faces: Vec<KReport>,
    pub holds: bool,
}

impl SpanningReport {
    pub fn face(&self, indices: &[usize]) -> Option<&KReport> {
        self.faces.iter().find(|f| f.indices == indices)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoffmanRow {
    pub r: f64,
    pub depth: TubeDepth,
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoffmanEstimate {
    pub constant: TubeDepth,
    pub table: Vec<HoffmanRow>,
}

/// Ratio table of `D̂(r)/r` for `r = 2^{-1}, ..., 2^{-K}` with
/// `K = cfg.hoffman_levels`.
pub fn hoffman_constant(domain: &DomainSpec, cfg: &SamplingConfig) -> Result<HoffmanEstimate> {
    if !domain.is_polyhedral() {
        return Err(Error::InvalidPolyhedron("domain has a curved patch".into()));
    }
    let model = BoundaryModel::build(domain, cfg)?;
    let mut table = Vec::new();
    let mut best = Some(0.0f64);
    for k in 1..=cfg.hoffman_levels {
        let r = 0.5f64.powi(k as i32);
        let depth = model.tube_depth(r)?;
        let ratio = match depth {
            TubeDepth::Finite(v) => Some(v / r),
            TubeDepth::Unbounded => None,
        };
        best = match (best, ratio) {
            (Some(b), Some(q)) => Some(b.max(q)),
            _ => None,
        };
        table.push(HoffmanRow { r, depth, ratio });
    }
    Ok(HoffmanEstimate {
        constant: best.map_or(TubeDepth::Unbounded, TubeDepth::Finite),
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::SamplingBox;
    use proptest::prelude::*;

    fn poly(rows: &[(&[f64], f64)]) -> Polyhedron {
        Polyhedron::new(
            rows.iter().map(|(n, _)| n.to_vec()).collect(),
            rows.iter().map(|(_, b)| *b).collect(),
        )
        .unwrap()
    }

    fn quadrant() -> Polyhedron {
        poly(&[(&[1.0, 0.0], 0.0), (&[0.0, 1.0], 0.0)])
    }

    fn pyramid() -> Polyhedron {
        let s = 0.5f64.sqrt();
        poly(&[
            (&[s, 0.0, s], 0.0),
            (&[-s, 0.0, s], 0.0),
            (&[0.0, s, s], 0.0),
            (&[0.0, -s, s], 0.0),
        ])
    }

    fn sets(v: &[FaceSet]) -> Vec<Vec<usize>> {
        v.iter().map(|f| f.indices.clone()).collect()
    }

    #[test]
    fn face_nonempty_examples() {
        let q = quadrant();
        assert!(q.face_nonempty(&[0, 1]).unwrap());
        assert!(q.face_nonempty(&[0]).unwrap());
        let slab = poly(&[(&[1.0], 0.0), (&[-1.0], -1.0)]);
        assert!(!slab.face_nonempty(&[0, 1]).unwrap());
        assert!(q.face_nonempty(&[2]).is_err());
    }

    #[test]
    fn load_rejects_bad_descriptions() {
        assert!(matches!(
            Polyhedron::new(vec![vec![1.0], vec![1.0]], vec![0.0, 0.0]),
            Err(Error::InvalidPolyhedron(_))
        ));
        assert!(matches!(
            Polyhedron::new(vec![vec![1.0], vec![1.0]], vec![0.0, 1.0]),
            Err(Error::RedundantConstraint(0))
        ));
        assert!(matches!(
            Polyhedron::new(vec![vec![1.0], vec![-1.0]], vec![1.0, 0.0]),
            Err(Error::InvalidPolyhedron(_))
        ));
        // x ≥ 0, y ≥ 0, x + y ≥ 0 (the last one is implied)
        let s = 0.5f64.sqrt();
        assert!(matches!(
            Polyhedron::new(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]], vec![0.0; 3]),
            Err(Error::RedundantConstraint(2))
        ));
    }

    #[test]
    fn maximal_sets() {
        assert_eq!(sets(&quadrant().enumerate_maximal().unwrap()), vec![vec![0], vec![1], vec![0, 1]]);
        assert_eq!(sets(&poly(&[(&[1.0], 0.0)]).enumerate_maximal().unwrap()), vec![vec![0]]);
        let got = sets(&pyramid().enumerate_maximal().unwrap());
        let want: Vec<Vec<usize>> = vec![
            vec![0],
            vec![1],
            vec![2],
            vec![0, 2],
            vec![1, 2],
            vec![3],
            vec![0, 3],
            vec![1, 3],
            vec![0, 1, 2, 3],
        ];
        assert_eq!(got, want);
    }

    #[test]
    fn simplicity() {
        assert!(quadrant().is_simple().unwrap());
        let square = poly(&[
            (&[1.0, 0.0], 0.0),
            (&[-1.0, 0.0], -1.0),
            (&[0.0, 1.0], 0.0),
            (&[0.0, -1.0], -1.0),
        ]);
        assert!(square.is_simple().unwrap());
        assert!(!pyramid().is_simple().unwrap());
    }

    #[test]
    fn lattice_flags_reverify() {
        let p = pyramid();
        let lattice = p.face_lattice().unwrap();
        for set in &lattice.sets {
            assert!(p.verify_face_set(set).unwrap(), "{set:?}");
        }
        let empty = FaceSet {
            indices: vec![0, 1],
            nonempty: true,
            maximal: false,
        };
        assert!(p.verify_face_set(&empty).unwrap());
    }

    #[test]
    fn spanning_examples() {
        let q = quadrant();
        let normal = q.check_assumption_5_1(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!(normal.holds);
        let corner = normal.face(&[0, 1]).unwrap();
        assert!((corner.reflection_combination.margin - 0.5).abs() < 1e-12);
        assert!((corner.normal_combination.margin - 0.5).abs() < 1e-12);

        let tangential = q.check_assumption_5_1(&[vec![0.0, -1.0], vec![-1.0, 0.0]]).unwrap();
        assert!(!tangential.holds);
        let corner = tangential.face(&[0, 1]).unwrap();
        assert!(!corner.reflection_combination.holds);
        let y = corner.reflection_combination.certificate.as_ref().unwrap();
        // <γ^i, Σ y_j n^j> ≤ 0 for both i
        let combo = [y[0], y[1]];
        assert!(dot(&[0.0, -1.0], &combo) <= 1e-12 && dot(&[-1.0, 0.0], &combo) <= 1e-12);

        let s = 0.5f64.sqrt();
        let diag = q.check_assumption_5_1(&[vec![s, s], vec![s, s]]).unwrap();
        let corner = diag.face(&[0, 1]).unwrap();
        assert!(corner.reflection_combination.holds);
        assert!((corner.reflection_combination.margin - s).abs() < 1e-12);
    }

    fn domain(p: &Polyhedron, lo: f64, hi: f64, witness: Vec<f64>) -> DomainSpec {
        let d = p.dimension();
        DomainSpec::new(
            d,
            p.normals()
                .iter()
                .zip(p.offsets())
                .map(|(n, b)| SurfacePatch::Halfspace {
                    normal: n.clone(),
                    offset: *b,
                })
                .collect(),
            SamplingBox {
                lo: vec![lo; d],
                hi: vec![hi; d],
            },
            witness,
            None,
        )
        .unwrap()
    }

    fn constant(est: &HoffmanEstimate) -> f64 {
        est.constant.value()
    }

    #[test]
    fn hoffman_examples() {
        let cfg = SamplingConfig::with_resolution(2e-3);
        let q = quadrant();
        let c = constant(&q.hoffman_constant(&domain(&q, -1.0, 1.0, vec![0.5, 0.5]), &cfg).unwrap());
        assert!((c / 2f64.sqrt() - 1.0).abs() < 0.05, "{c}");

        let h = poly(&[(&[0.0, 1.0], 0.0)]);
        let c = constant(&h.hoffman_constant(&domain(&h, -1.0, 1.0, vec![0.0, 0.5]), &cfg).unwrap());
        assert!((c - 1.0).abs() < 0.05, "{c}");

        // wedge of opening 60° symmetric about the positive x axis
        let (s, c30) = (0.5, 3f64.sqrt() / 2.0);
        let w = poly(&[(&[s, c30], 0.0), (&[s, -c30], 0.0)]);
        let c = constant(&w.hoffman_constant(&domain(&w, -1.2, 1.2, vec![0.5, 0.0]), &cfg).unwrap());
        assert!((c / 2.0 - 1.0).abs() < 0.1, "{c}");
    }

    #[test]
    fn hoffman_on_thin_slab_is_unbounded() {
        let slab = poly(&[(&[1.0], 0.0), (&[-1.0], -0.5)]);
        let est = hoffman_constant(&domain(&slab, -1.0, 1.5, vec![0.25]), &SamplingConfig::with_resolution(1e-3)).unwrap();
        assert!(est.constant.is_unbounded());
        assert!(est.table[0].ratio.is_none());
        let last = est.table.last().unwrap().ratio.unwrap();
        assert!((last - 1.0).abs() < 0.05, "{last}");
    }

    fn unit(angle: f64) -> Vec<f64> {
        vec![angle.cos(), angle.sin()]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        // on a simple polyhedron the two combination conditions hold together
        #[test]
        fn simple_polyhedra_satisfy_both_or_neither(
            which in 0usize..2,
            angles in proptest::collection::vec(0.0f64..std::f64::consts::TAU, 4),
        ) {
            let (p, k) = match which {
                0 => (quadrant(), 2),
                _ => (poly(&[
                    (&[1.0, 0.0], 0.0),
                    (&[-1.0, 0.0], -1.0),
                    (&[0.0, 1.0], 0.0),
                    (&[0.0, -1.0], -1.0),
                ]), 4),
            };
            let gammas: Vec<Vec<f64>> = angles[..k].iter().map(|a| unit(*a)).collect();
            let rep = p.check_assumption_5_1(&gammas).unwrap();
            let sa = rep.faces.iter().all(|f| f.normal_combination.holds);
            let sb = rep.faces.iter().all(|f| f.reflection_combination.holds);
            prop_assert_eq!(sa, sb);
        }
    }
}
