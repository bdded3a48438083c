use proptest::prelude::*;

use shl_core::grid::{self, hessian_dd, laplacian, mollify, stencil_mask, Measure};
use shl_core::mconvex::{self, is_m_convex, max_combine, WeightSpec};
use shl_core::superalgebra::SymMatrix;
use shl_core::{Grid, Mask, MollifierSpec, ScalarField, Stencil};

fn quad(g: &Grid, a: &SymMatrix, b: &[f64], c: f64) -> ScalarField {
    ScalarField::from_fn(g, |x| {
        let n = x.len();
        let mut s = c;
        for i in 0..n {
            s += b[i] * x[i];
            for j in 0..n {
                s += 0.5 * a.get(i, j) * x[i] * x[j];
            }
        }
        s
    })
}

fn sym3() -> impl Strategy<Value = SymMatrix> {
    prop::collection::vec(-1.0f64..1.0, 6).prop_map(|v| {
        let mut a = SymMatrix::zeros(3);
        let mut k = 0;
        for i in 0..3 {
            for j in i..3 {
                a.set(i, j, v[k]);
                k += 1;
            }
        }
        a
    })
}

fn bump(g: &Grid, c: &[f64], r: f64) -> ScalarField {
    ScalarField::from_fn(g, |x| {
        let s = grid::dist2(x, c) / (r * r);
        if s < 1.0 {
            (1.0 - s).powi(4)
        } else {
            0.0
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hessian_exact_on_quadratics(a in sym3(), b in prop::collection::vec(-1.0f64..1.0, 3), c in -1.0f64..1.0) {
        let g = Grid::cube(3, 9, 1.0).unwrap();
        let u = quad(&g, &a, &b, c);
        let h = hessian_dd(&u).unwrap();
        let inner = stencil_mask(&u, Stencil::Second);
        for i in (0..g.len()).filter(|&i| inner.get(i)) {
            let d = h.get(i).add_scaled(&a, -1.0).norm_inf();
            prop_assert!(d <= 1e-11, "node {i}: {d}");
        }
    }

    #[test]
    // Support plus two mollifier radii stays inside the eroded band: |c| + r + 2·scale ≤ 1 - h.
    fn mollify_preserves_integral(cx in -0.07f64..0.07, cy in -0.07f64..0.07, r in 0.2f64..0.3, scale in 0.15f64..0.25) {
        let g = Grid::cube(3, 21, 1.0).unwrap();
        let u = bump(&g, &[cx, cy, 0.0], r);
        let v = mollify(&u, MollifierSpec::with_scale(scale)).unwrap();
        let before: f64 = u.values.iter().sum();
        let after: f64 = v.values.iter().filter(|x| x.is_finite()).sum();
        prop_assert!((before - after).abs() <= 1e-12 * before, "{before} vs {after}");
    }

    #[test]
    fn integrate_is_additive(dens in prop::collection::vec(-1.0f64..1.0, 125), split in prop::collection::vec(0u8..3, 125)) {
        let g = Grid::cube(3, 5, 1.0).unwrap();
        let mu = Measure { grid: g.clone(), density: dens, atoms: vec![] };
        let a = Mask(split.iter().map(|s| *s == 0).collect());
        let b = Mask(split.iter().map(|s| *s == 1).collect());
        let whole = grid::integrate(&mu, &a.or(&b));
        let parts = grid::integrate(&mu, &a) + grid::integrate(&mu, &b);
        prop_assert!((whole - parts).abs() <= 1e-15 * 125.0 * g.cell_volume());
    }

    #[test]
    fn summation_by_parts(a in sym3(), cx in -0.2f64..0.2, r in 0.3f64..0.6) {
        let g = Grid::cube(3, 17, 1.0).unwrap();
        let chi = bump(&g, &[cx, 0.0, 0.0], r);
        let u = quad(&g, &a, &[0.0; 3], 0.0);
        let (lu, lc) = (laplacian(&u), laplacian(&chi));
        let mut s = 0.0;
        let mut scale = 0.0;
        for i in 0..g.len() {
            if lu.values[i].is_finite() && lc.values[i].is_finite() {
                s += chi.values[i] * lu.values[i] - u.values[i] * lc.values[i];
                scale += (chi.values[i] * lu.values[i]).abs();
            }
        }
        prop_assert!(s.abs() <= 1e-10 * (1.0 + scale), "{s}");
    }

    #[test]
    fn convexity_verdicts_are_nested(a in sym3(), shift in -0.5f64..1.0) {
        let g = Grid::cube(3, 7, 1.0).unwrap();
        let a = a.add_scaled(&SymMatrix::identity(3), shift);
        let u = quad(&g, &a, &[0.0; 3], 0.0);
        for m in 2..=3 {
            if is_m_convex(&u, m, 1e-9).unwrap().passed {
                prop_assert!(is_m_convex(&u, m - 1, 1e-9).unwrap().passed);
            }
        }
    }

    #[test]
    fn max_of_subharmonic_fields_is_subharmonic(a in sym3(), b in sym3(), off in -0.5f64..0.5) {
        let g = Grid::cube(3, 9, 1.0).unwrap();
        let lift = |m: &SymMatrix| {
            let tr = (0..3).map(|i| m.get(i, i)).sum::<f64>();
            m.add_scaled(&SymMatrix::identity(3), (-tr / 3.0).max(0.0) + 0.05)
        };
        let u = quad(&g, &lift(&a), &[0.3, 0.0, 0.0], 0.0);
        let v = quad(&g, &lift(&b), &[0.0, -0.2, 0.0], off);
        prop_assert!(is_m_convex(&u, 1, 1e-9).unwrap().passed && is_m_convex(&v, 1, 1e-9).unwrap().passed);
        let w = max_combine(&u, &v).unwrap();
        prop_assert!(is_m_convex(&w, 1, 1e-9).unwrap().passed);
    }

    #[test]
    fn mollify_keeps_convexity_verdict(a in sym3(), c4 in 0.0f64..1.0, m in 1usize..=3) {
        let g = Grid::cube(3, 17, 1.0).unwrap();
        let a = a.add_scaled(&SymMatrix::identity(3), 1.0);
        prop_assume!(shl_core::superalgebra::is_m_positive_form(&a, m, 0.0));
        let base = quad(&g, &a, &[0.0; 3], 0.0);
        let quartic = ScalarField::from_fn(&g, |x| c4 * x[0].powi(4));
        let u = ScalarField::from_values(&g, base.values.iter().zip(&quartic.values).map(|(p, q)| p + q).collect());
        prop_assume!(is_m_convex(&u, m, 1e-3).unwrap().passed);
        let v = mollify(&u, MollifierSpec::with_scale(0.3)).unwrap();
        prop_assert!(is_m_convex(&v, m, 1e-3).unwrap().passed);
    }

    #[test]
    fn weight_sigma_identity(case in 0usize..3, x in prop::collection::vec(0.2f64..0.9, 4), signs in prop::collection::vec(any::<bool>(), 4)) {
        let (n, m) = [(3, 1), (4, 1), (4, 2)][case];
        let w = WeightSpec::new(n, m, vec![0.0; n]).unwrap();
        let p: Vec<f64> = x[..n].iter().zip(&signs).map(|(v, s)| if *s { *v } else { -*v }).collect();
        for s in 0..=m {
            let rep = mconvex::weight_sigma_identity_check(&w, s, &[p.clone()], 1e-4).unwrap();
            prop_assert!(rep.max_rel_err_analytic <= 1e-10, "s={s}: {}", rep.max_rel_err_analytic);
            prop_assert!(rep.max_rel_err_discrete <= 1e-5, "s={s}: {}", rep.max_rel_err_discrete);
        }
    }
}
