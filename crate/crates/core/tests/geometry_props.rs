//! Property tests for the sphere target and torus grid invariants.

use alpha_flow::geometry::{dot, norm, MapField, SphereTarget, TorusGrid};
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, 3)
        .prop_filter("away from origin", |v| norm(v) > 1e-3)
}

fn unit3() -> impl Strategy<Value = Vec<f64>> {
    vec3().prop_map(|v| {
        let n = norm(&v);
        v.iter().map(|x| x / n).collect()
    })
}

fn tangent_at(p: &[f64], raw: &[f64]) -> Vec<f64> {
    let c = dot(p, raw);
    raw.iter().zip(p).map(|(r, u)| r - c * u).collect()
}

proptest! {
    #[test]
    fn projection_is_idempotent_and_unit(v in vec3()) {
        let target = SphereTarget::new(3).unwrap();
        let p = target.project(&v).unwrap();
        prop_assert!((norm(&p) - 1.0).abs() < 1e-12);
        let pp = target.project(&p).unwrap();
        for (a, b) in p.iter().zip(&pp) {
            prop_assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn second_fundamental_form_is_normal(p in unit3(), x in vec3(), y in vec3()) {
        let target = SphereTarget::new(3).unwrap();
        let xt = tangent_at(&p, &x);
        let yt = tangent_at(&p, &y);
        let a = target.second_fundamental_form(&p, &xt, &yt).unwrap();
        // A(p)(x, y) = (x . y) p points along the normal: its tangential
        // part vanishes
        let tang = tangent_at(&p, &a);
        prop_assert!(norm(&tang) <= 1e-12 * (1.0 + norm(&a)));
        prop_assert!((dot(&a, &p) - dot(&xt, &yt)).abs() < 1e-10);
    }

    #[test]
    fn exp_log_round_trip(p in unit3(), raw in vec3()) {
        let target = SphereTarget::new(3).unwrap();
        let mut v = tangent_at(&p, &raw);
        let n = norm(&v);
        // stay strictly inside the injectivity radius
        if n >= 3.0 {
            let s = 2.9 / n;
            for x in &mut v {
                *x *= s;
            }
        }
        let n = norm(&v).min(3.0);
        prop_assume!(n > 1e-6 && n < std::f64::consts::PI - 1e-3);
        let q = target.exp_point(&p, &v).unwrap();
        let w = target.log_point(&p, &q).unwrap();
        for (a, b) in v.iter().zip(&w) {
            prop_assert!((a - b).abs() < 1e-10, "exp/log mismatch: {v:?} vs {w:?}");
        }
    }

    #[test]
    fn geodesic_distances_are_additive(p in unit3(), q in unit3(), s in 0.0f64..1.0) {
        let target = SphereTarget::new(3).unwrap();
        let d = target.distance(&p, &q);
        prop_assume!(d > 1e-6 && d < std::f64::consts::PI - 1e-3);
        let mid = target.geodesic(&p, &q, s).unwrap();
        let d1 = target.distance(&p, &mid);
        let d2 = target.distance(&mid, &q);
        prop_assert!((d1 + d2 - d).abs() < 1e-9);
        prop_assert!((d1 - s * d).abs() < 1e-9);
    }

    #[test]
    fn torus_displacement_is_antisymmetric(
        nx in 8usize..64,
        side in 0.5f64..8.0,
        ai in 0usize..64, aj in 0usize..64,
        bi in 0usize..64, bj in 0usize..64,
    ) {
        let grid = TorusGrid::new(nx, side).unwrap();
        let a = (ai % nx, aj % nx);
        let b = (bi % nx, bj % nx);
        let d_ab = grid.displacement(a, b);
        let d_ba = grid.displacement(b, a);
        let h = grid.spacing();
        for (x, y) in d_ab.iter().zip(&d_ba) {
            // antisymmetric up to the wrap tie at exactly half the torus,
            // where both directions are valid
            let wrapped = (x + y).abs().min((x + y).abs() - side).abs();
            prop_assert!(wrapped < 1e-12 * side || (x + y).abs() % side < 1e-9);
            prop_assert!(x.abs() <= side / 2.0 + 1e-12);
        }
        prop_assert!((grid.distance(a, b) - grid.distance(b, a)).abs() < 1e-12);
        // displacement is consistent with positions modulo the torus
        let pa = grid.position(a.0, a.1);
        let pb = grid.position(b.0, b.1);
        for c in 0..2 {
            let raw = pb[c] - pa[c];
            let diff = (raw - d_ab[c]) / side;
            prop_assert!((diff - diff.round()).abs() < 1e-9);
        }
        let _ = h;
    }

    #[test]
    fn map_field_nodes_stay_on_sphere(seedx in 0.0f64..10.0, seedy in 0.0f64..10.0) {
        let grid = TorusGrid::new(16, 1.0).unwrap();
        let f = MapField::from_fn(grid, 3, |x, y| {
            vec![(x * seedx).cos(), (y * seedy).sin() + 0.3, 1.0]
        })
        .unwrap();
        prop_assert!(f.max_radial_deviation() < 1e-12);
    }
}
