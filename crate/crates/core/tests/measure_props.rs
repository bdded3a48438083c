use proptest::prelude::*;

use shl_core::capacity::{self, CapacityProblem, SolverParams};
use shl_core::grid::{self, mollify, HessianStencil};
use shl_core::hessmeasure::{hessian_measure, Current, HessOptions};
use shl_core::lelong::{nu_classic_ladder, nu_m_ladder, Normalization};
use shl_core::potential::{self, newton_convolve};
use shl_core::superalgebra::{factorial, mixed_pairing, FormValue};
use shl_core::{Grid, MollifierSpec, ScalarField, Stencil};

fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `½xᵀ(A + I)x` with `A` small enough to keep the field convex.
fn convex_field(g: &Grid, v: &[f64]) -> ScalarField {
    ScalarField::from_fn(g, |x| 0.5 * norm2(x) + 0.2 * (v[0] * x[0] * x[0] + v[1] * x[1] * x[2] + v[2] * x[0] * x[2]) + 0.05 * v[3] * x[1].powi(4))
}

fn bump(g: &Grid, c: &[f64], r: f64) -> Vec<f64> {
    (0..g.len())
        .map(|i| {
            let s = grid::dist2(&g.point(i), c) / (r * r);
            if s < 1.0 {
                (1.0 - s).powi(3)
            } else {
                0.0
            }
        })
        .collect()
}

fn opts() -> HessOptions {
    HessOptions { check_convexity: false, ..Default::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn hessian_measure_symmetric_and_multilinear(a in prop::collection::vec(-1.0f64..1.0, 4), b in prop::collection::vec(-1.0f64..1.0, 4), c in prop::collection::vec(-1.0f64..1.0, 4), s in 0.1f64..2.0) {
        let g = Grid::cube(3, 9, 1.0).unwrap();
        let t = Current::unit(&g);
        let (u, v, w) = (convex_field(&g, &a), convex_field(&g, &b), convex_field(&g, &c));
        let uv = hessian_measure(&t, 3, &[u.clone(), v.clone()], &opts()).unwrap().measure;
        let vu = hessian_measure(&t, 3, &[v.clone(), u.clone()], &opts()).unwrap().measure;
        let combo = ScalarField::from_values(&g, u.values.iter().zip(&w.values).map(|(x, y)| x + s * y).collect());
        let lin = hessian_measure(&t, 3, &[combo, v.clone()], &opts()).unwrap().measure;
        let wv = hessian_measure(&t, 3, &[w, v], &opts()).unwrap().measure;
        for i in 0..g.len() {
            let scale = 1.0 + uv.density[i].abs() + s * wv.density[i].abs();
            prop_assert!((uv.density[i] - vu.density[i]).abs() <= 1e-12 * scale);
            prop_assert!((lin.density[i] - uv.density[i] - s * wv.density[i]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn hessian_measure_is_positive(a in prop::collection::vec(-1.0f64..1.0, 4), m in 1usize..=3) {
        let g = Grid::cube(3, 9, 1.0).unwrap();
        let u = convex_field(&g, &a);
        let res = hessian_measure(&Current::unit(&g), m, &vec![u; m], &HessOptions::default()).unwrap();
        prop_assert!(res.measure.density.iter().all(|d| *d >= -1e-12));
    }

    #[test]
    fn hessian_current_matches_mixed_pairing(a in prop::collection::vec(-1.0f64..1.0, 4), b in prop::collection::vec(-1.0f64..1.0, 4), m in 2usize..=3) {
        let g = Grid::cube(3, 9, 1.0).unwrap();
        let w = convex_field(&g, &a);
        let u = convex_field(&g, &b);
        let t = Current::from_hessian(&w, &vec![1.0; g.len()], Stencil::Second).unwrap();
        let res = hessian_measure(&t, m, &vec![u.clone(); m - 1], &opts()).unwrap();
        let hs = HessianStencil::new(&g, Stencil::Second);
        for i in (0..g.len()).filter(|&i| res.mask.get(i)) {
            let mut mats = vec![hs.at(&w.values, i)];
            mats.extend(std::iter::repeat(hs.at(&u.values, i)).take(m - 1));
            let direct = factorial(3) * mixed_pairing(&mats).unwrap();
            prop_assert!((res.measure.density[i] - direct).abs() <= 1e-10 * (1.0 + direct.abs()), "{} vs {direct}", res.measure.density[i]);
        }
    }

    #[test]
    fn potential_commutes_with_mollification(cx in -0.15f64..0.15, r in 0.25f64..0.4, scale in 0.2f64..0.3) {
        let g = Grid::cube(3, 15, 1.0).unwrap();
        let rho = ScalarField::from_values(&g, bump(&g, &[cx, 0.0, 0.0], r));
        let spec = MollifierSpec::with_scale(scale);
        let smooth: Vec<f64> = mollify(&rho, spec).unwrap().values.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
        let first = newton_convolve(&g, &smooth).unwrap();
        let second = mollify(&ScalarField::from_values(&g, newton_convolve(&g, &rho.values).unwrap()), spec).unwrap();
        let peak = first.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in (0..g.len()).filter(|&i| second.mask.get(i)) {
            prop_assert!((first[i] - second.values[i]).abs() <= 1e-10 * peak);
        }
    }

    #[test]
    fn scaling_law_on_smooth_weights(lambda in 0.2f64..4.0, c in prop::collection::vec(-0.3f64..0.3, 2)) {
        let g = Grid::cube(3, 17, 1.0).unwrap();
        let t = Current::unit(&g);
        let phi = ScalarField::from_fn(&g, |x| 0.5 * norm2(x) + 0.1 * c[0] * x[0] * x[1] + 0.1 * c[1] * x[2] * x[2] - 1.0);
        let psi = phi.scale(lambda);
        let levels = [-0.7, -0.8, -0.9];
        let lv: Vec<f64> = levels.iter().map(|l| lambda * l).collect();
        for m in 1..=3 {
            let a = nu_m_ladder(&t, &phi, m, &levels, Normalization::Plain, &HessOptions::default()).unwrap();
            let b = nu_m_ladder(&t, &psi, m, &lv, Normalization::Plain, &HessOptions::default()).unwrap();
            let lq = lambda.powi(m as i32);
            for (x, y) in a.values.iter().zip(&b.values) {
                prop_assert!((y - lq * x).abs() <= 1e-10 * (lq * x).abs(), "m={m}: {y} vs {}", lq * x);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn potential_is_weakly_negative(cx in -0.1f64..0.1, seed in any::<u64>()) {
        let g = Grid::cube(3, 13, 1.0).unwrap();
        let t = Current::from_form(&g, &FormValue::beta(3), &bump(&g, &[cx, 0.0, 0.0], 0.6)).unwrap();
        let eta = potential::cutoff(&g, &[0.0; 3], 0.3, 0.7);
        let pot = potential::local_potential(&t, &eta, seed).unwrap();
        prop_assert!(pot.audit.passed, "{:?}", pot.audit);
    }

    #[test]
    fn larger_obstacle_larger_solution(c1 in 0.05f64..0.5, frac in 0.1f64..0.9) {
        let g = Grid::cube(3, 14, 1.0).unwrap();
        let u = ScalarField::from_fn(&g, |x| -1.5 + 0.3 * norm2(x));
        let base = CapacityProblem::ball_in_ball(&g, &[0.0; 3], 0.3, 0.95, 1, Some(u.clone()), SolverParams::default()).unwrap();
        let ladder = vec![u.map(|v| v + c1), u.map(|v| v + frac * c1)];
        let rep = capacity::extremal_ladder_check(&base, &ladder).unwrap();
        prop_assert_eq!(rep.violations, 0);
        prop_assert!(rep.caps_nondecreasing, "{:?}", rep.caps);
    }

    #[test]
    fn sup_route_never_exceeds_extremal(s in 0.25f64..0.4) {
        let g = Grid::cube(3, 20, 1.0).unwrap();
        let p = CapacityProblem::ball_in_ball(&g, &[0.0; 3], s, 0.95, 1, None, SolverParams::default()).unwrap();
        let rep = capacity::cap_mu(&p).unwrap();
        prop_assert!(rep.route_gap >= -1e-9, "{:?}", rep);
    }
}

#[test]
fn smooth_current_classic_number_vanishes_linearly() {
    // T = β∧(smooth density), n = 3, p = 2: ν(r) ~ C·r.
    let g = Grid::cube(3, 33, 1.0).unwrap();
    let dens: Vec<f64> = (0..g.len()).map(|i| 1.0 + 0.2 * g.point(i)[0]).collect();
    let t = Current::from_form(&g, &FormValue::beta(3), &dens).unwrap();
    let lad = nu_classic_ladder(&t, &[0.0; 3], &[0.6, 0.3]).unwrap();
    let ratio = lad.values[1] / lad.values[0];
    assert!((ratio - 0.5).abs() <= 0.08, "{ratio}");
}

#[test]
fn zero_lelong_current_has_zero_potential_number() {
    // Bidimension (1,1) in ℝ³, so ν_U(r) = O(r) for a smooth current.
    let g = Grid::cube(3, 17, 1.0).unwrap();
    let t = Current::from_form(&g, &FormValue::beta(3).pow(2), &bump(&g, &[0.0; 3], 0.8)).unwrap();
    let eta = potential::cutoff(&g, &[0.0; 3], 0.3, 0.75);
    let pot = potential::local_potential(&t, &eta, 3).unwrap();
    let lad = potential::potential_lelong_ladder(&pot, &[0.0; 3], &[0.4, 0.2, 0.1], 4).unwrap();
    assert!(lad.values.windows(2).all(|w| w[1].abs() < w[0].abs()), "{lad:?}");
    assert!(lad.limit.abs() <= 2.0 * lad.uncertainty, "{lad:?}");
}

