//! δ-refinement against the one-sided reflection map, on matched driving
//! paths: each seed's path is sampled once at the finest step and
//! subsampled to the coarser grid.

use srbm_core::geometry::{DomainSpec, SamplingBox, SurfacePatch};
use srbm_core::oracle::{compare, orthant_map, skorokhod_1d, OrthantReflection, ORTHANT_TOL};
use srbm_core::paths::{sample_brownian, BrownianParams, TimeGrid};
use srbm_core::reflection::ReflectionField;
use srbm_core::scheme::{SchemeConfig, Simulator};

use std::sync::Arc;

fn halfline() -> DomainSpec {
    DomainSpec::new(
        1,
        vec![SurfacePatch::Halfspace { normal: vec![1.0], offset: 0.0 }],
        SamplingBox { lo: vec![-1.0], hi: vec![4.0] },
        vec![1.0],
        Some(1e-9),
    )
    .unwrap()
}

#[test]
fn halving_delta_and_quartering_dt_shrinks_the_gap() {
    let dom = halfline();
    let field = ReflectionField::normal(1);
    let params = BrownianParams::standard(vec![0.0], vec![0.0]).unwrap();
    let fine_grid = Arc::new(TimeGrid::uniform(1.0, 4000).unwrap());
    let coarse = Simulator::new(&dom, &field, &SchemeConfig::new(1e-2, TimeGrid::uniform(1.0, 1000).unwrap(), 0)).unwrap();
    let fine = Simulator::new(&dom, &field, &SchemeConfig::new(5e-3, TimeGrid::uniform(1.0, 4000).unwrap(), 0)).unwrap();
    let mut better = 0;
    for seed in 0..100u64 {
        let x_fine = sample_brownian(&params, &fine_grid, seed, 0).unwrap();
        let x_coarse = x_fine.subsample(4).unwrap();
        let gap = |sim: &Simulator, x| {
            let b = sim.run(x).unwrap();
            let o = skorokhod_1d(x).unwrap();
            compare(&b, &o.w, Some(&o.y)).unwrap().w
        };
        if gap(&fine, &x_fine) < gap(&coarse, &x_coarse) {
            better += 1;
        }
    }
    assert!(better >= 90, "finer run closer on {better}/100 seeds");
}

#[test]
fn identity_reflection_decouples_on_the_quadrant() {
    let dom = DomainSpec::new(
        2,
        vec![
            SurfacePatch::Halfspace { normal: vec![1.0, 0.0], offset: 0.0 },
            SurfacePatch::Halfspace { normal: vec![0.0, 1.0], offset: 0.0 },
        ],
        SamplingBox { lo: vec![-1.0, -1.0], hi: vec![3.0, 3.0] },
        vec![1.0, 1.0],
        Some(1e-9),
    )
    .unwrap();
    let field = ReflectionField::normal(2);
    let line = halfline();
    let line_field = ReflectionField::normal(1);
    // a corner start splits the first push between the faces (weights sum to
    // one), so the fixture starts inside
    let params = BrownianParams::standard(vec![0.0, 0.0], vec![0.3, 0.3]).unwrap();
    let cfg = SchemeConfig::new(1e-2, TimeGrid::uniform(1.0, 1000).unwrap(), 5);
    let sim = Simulator::new(&dom, &field, &cfg).unwrap();
    let line_sim = Simulator::new(&line, &line_field, &cfg).unwrap();
    for seed in 0..20 {
        let x = sample_brownian(&params, sim.grid(), seed, 0).unwrap();
        let b = sim.run(&x).unwrap();
        let o = orthant_map(&x, &OrthantReflection::identity(2), None, ORTHANT_TOL).unwrap();
        assert!(b.events.iter().all(|e| e.active.len() == 1));
        let gap = compare(&b, &o.w, Some(&o.y)).unwrap().y.unwrap();
        for (i, gap_i) in gap.iter().enumerate() {
            let xi = x.component(i).unwrap();
            let bi = line_sim.run(&xi).unwrap();
            let oi = skorokhod_1d(&xi).unwrap();
            let gi = compare(&bi, &oi.w, Some(&oi.y)).unwrap().y.unwrap()[0];
            assert!((gap_i - gi).abs() <= 1e-12, "coordinate {i}: {gap_i} vs {gi}");
        }
    }
}
