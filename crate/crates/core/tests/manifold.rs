mod common;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::gaussian;
use sparlow::linalg::symmetrize;
use sparlow::manifold::{
    grassmann_transport, project_tangent, retract, transport, Dictionary, ProductPoint, Projector,
    TangentPair,
};

fn point(seed: u64, m: usize, r: usize, l: usize) -> ProductPoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = Dictionary::normalized(gaussian(&mut rng, m, r)).unwrap();
    let basis = gaussian(&mut rng, r, l).qr().q();
    ProductPoint::new(dict, Projector::from_basis(&basis).unwrap()).unwrap()
}

fn raw_direction(seed: u64, m: usize, r: usize) -> TangentPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    TangentPair {
        dict_dir: gaussian(&mut rng, m, r),
        proj_dir: symmetrize(&gaussian(&mut rng, r, r)),
    }
}

fn assert_on_manifold(p: &ProductPoint, l: usize) {
    for c in p.dict.matrix().column_iter() {
        assert!((c.norm() - 1.0).abs() <= 1e-12);
    }
    let pm = p.proj.matrix();
    assert!((pm - pm.transpose()).norm() <= 1e-12);
    assert!((pm * pm - pm).norm() <= 1e-10);
    assert!((pm.trace() - l as f64).abs() <= 1e-10);
}

fn tangency(p: &ProductPoint, v: &TangentPair) -> f64 {
    let d = p.dict.matrix();
    let radial = (0..d.ncols())
        .map(|i| d.column(i).dot(&v.dict_dir.column(i)).abs())
        .fold(0.0, f64::max);
    let pm = p.proj.matrix();
    let q = DMatrix::identity(pm.nrows(), pm.nrows()) - pm;
    let inner = (pm * &v.proj_dir * pm).norm() + (&q * &v.proj_dir * &q).norm();
    radial.max(inner)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn retraction_stays_on_manifold(seed in 0u64..10_000, m in 2usize..7, r in 2usize..7, t in -2.0f64..2.0) {
        let l = 1 + (seed as usize) % (r - 1);
        let p = point(seed, m, r, l);
        let dir = project_tangent(&p, &raw_direction(seed, m, r));
        if let Ok(q) = retract(&p, &dir, t) {
            assert_on_manifold(&q, l);
        }
    }

    #[test]
    fn tangent_projection_is_idempotent(seed in 0u64..10_000, m in 2usize..7, r in 2usize..7) {
        let l = 1 + (seed as usize) % (r - 1);
        let p = point(seed, m, r, l);
        let once = project_tangent(&p, &raw_direction(seed, m, r));
        let twice = project_tangent(&p, &once);
        prop_assert!(tangency(&p, &once) <= 1e-10);
        prop_assert!((once.dict_dir - twice.dict_dir).norm() <= 1e-12);
        prop_assert!((once.proj_dir - twice.proj_dir).norm() <= 1e-12);
    }

    #[test]
    fn retraction_matches_direction_to_first_order(seed in 0u64..10_000, m in 2usize..6, r in 3usize..6) {
        let p = point(seed, m, r, 2);
        let dir = project_tangent(&p, &raw_direction(seed, m, r));
        let h = 1e-6;
        let q = retract(&p, &dir, h).unwrap();
        let dd = (q.dict.matrix() - p.dict.matrix()) / h - &dir.dict_dir;
        let dp = (q.proj.matrix() - p.proj.matrix()) / h - &dir.proj_dir;
        let scale = dir.norm().max(1.0);
        prop_assert!(dd.norm() <= 1e-4 * scale);
        prop_assert!(dp.norm() <= 1e-4 * scale);
    }

    #[test]
    fn grassmann_transport_is_tangent(seed in 0u64..10_000, r in 3usize..7, t in -1.0f64..1.0) {
        let p = point(seed, 3, r, 1 + (seed as usize) % (r - 1));
        let dir = project_tangent(&p, &raw_direction(seed, 3, r));
        let moved = project_tangent(&p, &raw_direction(seed + 1, 3, r));
        let q = retract(&p, &dir, t).unwrap();
        let psi = grassmann_transport(&p.proj, &dir.proj_dir, t, &moved.proj_dir).unwrap();
        let v = TangentPair { dict_dir: DMatrix::zeros(3, r), proj_dir: psi };
        prop_assert!(tangency(&q, &v) <= 1e-9);
    }
}

#[test]
fn transport_at_zero_step_is_identity() {
    let p = point(3, 4, 5, 2);
    let dir = project_tangent(&p, &raw_direction(3, 4, 5));
    let moved = project_tangent(&p, &raw_direction(4, 4, 5));
    let out = transport(&p, &dir, 0.0, &moved).unwrap();
    assert!((&out.proj_dir - &moved.proj_dir).norm() <= 1e-12);
    let back = project_tangent(&p, &out);
    assert!((back.dict_dir - &moved.dict_dir).norm() <= 1e-12);
}
