//! Fixtures shared by the benches in `benches/`.

use shl_core::{Grid, ScalarField, SymMatrix};

pub fn convex_field(n: usize, nodes: usize) -> ScalarField {
    let g = Grid::cube(n, nodes, 1.0).expect("grid");
    ScalarField::from_fn(&g, |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>() + 0.1 * x[0].powi(4))
}

pub fn bump_density(g: &Grid, r: f64) -> Vec<f64> {
    (0..g.len())
        .map(|i| {
            let s = g.point(i).iter().map(|v| v * v).sum::<f64>() / (r * r);
            if s < 1.0 {
                (1.0 - s).powi(3)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn matrix(n: usize) -> SymMatrix {
    let mut a = SymMatrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            a.set(i, j, 0.1 * (i + 2 * j) as f64 / n as f64);
        }
    }
    a
}
