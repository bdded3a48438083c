use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shl_core::superalgebra::{
    is_m_positive_form, mixed_pairing, mixed_pairing_generic, sigma_pairing, sigma_pairing_generic, wedge, FormValue, MultiIndex, SymMatrix,
};

fn sym(n: usize, v: &[f64]) -> SymMatrix {
    let mut a = SymMatrix::zeros(n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            a.set(i, j, v[k]);
            k += 1;
        }
    }
    a
}

fn sym_strategy() -> impl Strategy<Value = SymMatrix> {
    (2usize..=4).prop_flat_map(|n| prop::collection::vec(-2.0f64..2.0, n * (n + 1) / 2).prop_map(move |v| sym(n, &v)))
}

/// Random form with every term of bidegree `(p, q)`.
fn random_form(rng: &mut ChaCha8Rng, n: usize, p: usize, q: usize) -> FormValue {
    let ks = MultiIndex::all_of_size(n, p);
    let ls = MultiIndex::all_of_size(n, q);
    let mut f = FormValue::zero(n);
    for _ in 0..3 {
        let k = ks[rng.gen_range(0..ks.len())];
        let l = ls[rng.gen_range(0..ls.len())];
        f.add_term(k, l, rng.gen_range(-1.0..1.0));
    }
    f
}

fn terms(f: &FormValue) -> Vec<(u16, u16, f64)> {
    let mut v: Vec<_> = f.terms().filter(|t| t.2 != 0.0).map(|(k, l, c)| (k.0, l.0, c)).collect();
    v.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    v
}

proptest! {
    #[test]
    fn wedge_is_graded_commutative(seed in any::<u64>(), n in 2usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (pa, qa) = (rng.gen_range(0..=n / 2), rng.gen_range(0..=n / 2));
        let (pb, qb) = (rng.gen_range(0..=n - pa), rng.gen_range(0..=n - qa));
        let a = random_form(&mut rng, n, pa, qa);
        let b = random_form(&mut rng, n, pb, qb);
        let sign = if ((pa + qa) * (pb + qb)) % 2 == 0 { 1.0 } else { -1.0 };
        let ab = wedge(&a, &b).unwrap();
        let ba = wedge(&b, &a).unwrap().scale(sign);
        let diff = ab.add(&ba.scale(-1.0)).unwrap();
        prop_assert!(diff.max_abs() <= 1e-14 * (1.0 + ab.max_abs()), "{}", diff.max_abs());
    }

    #[test]
    fn symmetric_one_forms_commute_exactly(a in sym_strategy(), seed in any::<u64>()) {
        let n = a.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = (0..n * (n + 1) / 2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b = sym(n, &v);
        let (fa, fb) = (FormValue::from_matrix(&a), FormValue::from_matrix(&b));
        prop_assert_eq!(terms(&wedge(&fa, &fb).unwrap()), terms(&wedge(&fb, &fa).unwrap()));
    }

    #[test]
    fn sigma_fast_path_matches_engine(a in sym_strategy(), j in 1usize..=4) {
        let j = j.min(a.dim());
        let fast = sigma_pairing(&a, j).unwrap();
        let slow = sigma_pairing_generic(&a, j).unwrap();
        prop_assert!((fast - slow).abs() <= 1e-12 * (1.0 + a.norm_inf().powi(j as i32)), "{fast} vs {slow}");
    }

    #[test]
    fn mixed_pairing_is_multilinear(seed in any::<u64>(), n in 2usize..=4, s in -2.0f64..2.0, t in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.gen_range(1..=n);
        let slot = rng.gen_range(0..k);
        let mut draw = || sym(n, &(0..n * (n + 1) / 2).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let mats: Vec<SymMatrix> = (0..k).map(|_| draw()).collect();
        let b = draw();
        let mut combo = mats.clone();
        combo[slot] = mats[slot].scale(s).add_scaled(&b, t);
        let mut with_b = mats.clone();
        with_b[slot] = b;
        let lhs = mixed_pairing(&combo).unwrap();
        let rhs = s * mixed_pairing(&mats).unwrap() + t * mixed_pairing(&with_b).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * 8.0, "{lhs} vs {rhs}");
        let generic = mixed_pairing_generic(&combo).unwrap();
        prop_assert!((lhs - generic).abs() <= 1e-12 * 8.0);
    }

    #[test]
    fn positivity_cones_are_nested(a in sym_strategy(), shift in -1.0f64..2.0) {
        let a = a.add_scaled(&SymMatrix::identity(a.dim()), shift);
        for m in 2..=a.dim() {
            if is_m_positive_form(&a, m, 1e-12) {
                prop_assert!(is_m_positive_form(&a, m - 1, 1e-12));
            }
        }
    }
}
