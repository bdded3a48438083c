//! Uniform Cartesian grids on boxes, scalar fields with validity masks and
//! isolated poles, finite-difference Hessians, mollification, measures and
//! the text file formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::numeric::NeumaierSum;
use crate::superalgebra::SymMatrix;
use crate::{Error, Result};

/// Upper bound on total node count.
pub const NODE_BUDGET: usize = 40_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    n: usize,
    shape: Vec<usize>,
    origin: Vec<f64>,
    h: f64,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(shape: Vec<usize>, origin: Vec<f64>, h: f64) -> Result<Self> {
        let n = shape.len();
        if !(1..=4).contains(&n) {
            return Err(Error::invalid(format!("grid dimension {n} outside 1..=4")));
        }
        if origin.len() != n {
            return Err(Error::DimensionMismatch(origin.len(), n));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid("spacing must be positive"));
        }
        if shape.iter().any(|&s| s < 5) {
            return Err(Error::invalid("each axis needs at least 5 nodes"));
        }
        let total: usize = shape.iter().product();
        if total > NODE_BUDGET {
            return Err(Error::invalid(format!("{total} nodes exceed budget {NODE_BUDGET}")));
        }
        let mut strides = vec![1; n];
        for d in (0..n.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * shape[d + 1];
        }
        Ok(Grid { n, shape, origin, h, strides })
    }

    /// `nodes^n` grid on `[−half_width, half_width]^n`.
    pub fn cube(n: usize, nodes: usize, half_width: f64) -> Result<Self> {
        let h = 2.0 * half_width / (nodes as f64 - 1.0);
        Grid::new(vec![nodes; n], vec![-half_width; n], h)
    }

    /// Grid with integer-offset nodes `origin + k·h` where the centre node sits at
    /// `center`; `nodes` must be odd so the centre is a node.
    pub fn centered(n: usize, nodes: usize, h: f64, center: &[f64]) -> Result<Self> {
        if nodes % 2 == 0 {
            return Err(Error::invalid("centred grids need an odd node count"));
        }
        let half = (nodes / 2) as f64 * h;
        Grid::new(vec![nodes; n], center.iter().map(|c| c - half).collect(), h)
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.n as i32)
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    pub fn coords_into(&self, mut idx: usize, out: &mut [usize]) {
        for d in 0..self.n {
            out[d] = idx / self.strides[d];
            idx %= self.strides[d];
        }
    }

    pub fn coords(&self, idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.n];
        self.coords_into(idx, &mut c);
        c
    }

    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.n];
        self.point_into(idx, &mut p);
        p
    }

    pub fn point_into(&self, mut idx: usize, out: &mut [f64]) {
        for d in 0..self.n {
            let c = idx / self.strides[d];
            idx %= self.strides[d];
            out[d] = self.origin[d] + c as f64 * self.h;
        }
    }

    /// Distance (in nodes, ∞-norm) from the box boundary.
    pub fn boundary_depth(&self, idx: usize) -> usize {
        let mut depth = usize::MAX;
        let mut rem = idx;
        for d in 0..self.n {
            let c = rem / self.strides[d];
            rem %= self.strides[d];
            depth = depth.min(c).min(self.shape[d] - 1 - c);
        }
        depth
    }

    /// Nearest node to a point, if the point lies inside the box.
    pub fn nearest_node(&self, p: &[f64]) -> Option<usize> {
        let mut idx = 0;
        for d in 0..self.n {
            let c = ((p[d] - self.origin[d]) / self.h).round();
            if c < 0.0 || c > (self.shape[d] - 1) as f64 {
                return None;
            }
            idx += c as usize * self.strides[d];
        }
        Some(idx)
    }

    pub fn contains_point(&self, p: &[f64]) -> bool {
        (0..self.n).all(|d| p[d] >= self.origin[d] && p[d] <= self.origin[d] + (self.shape[d] - 1) as f64 * self.h)
    }

    /// Linear offset of an integer displacement; caller guarantees it stays in range.
    pub fn offset(&self, disp: &[isize]) -> isize {
        disp.iter().zip(&self.strides).map(|(k, s)| k * *s as isize).sum()
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self == other
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::invalid("fields live on different grids"))
        }
    }
}

/// Node set as a boolean per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask(pub Vec<bool>);

impl Mask {
    pub fn full(g: &Grid) -> Self {
        Mask(vec![true; g.len()])
    }

    pub fn empty(g: &Grid) -> Self {
        Mask(vec![false; g.len()])
    }

    pub fn from_fn(g: &Grid, f: impl Fn(&[f64]) -> bool + Sync) -> Self {
        Mask((0..g.len()).into_par_iter().map(|i| f(&g.point(i))).collect())
    }

    /// Euclidean ball (closed at the boundary up to roundoff).
    pub fn ball(g: &Grid, center: &[f64], r: f64) -> Self {
        Self::from_fn(g, |p| dist2(p, center) < r * r)
    }

    /// Nodes at ∞-distance ≥ `depth` from the box boundary.
    pub fn interior(g: &Grid, depth: usize) -> Self {
        Mask((0..g.len()).map(|i| g.boundary_depth(i) >= depth).collect())
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b).count()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn and(&self, o: &Mask) -> Mask {
        Mask(self.0.iter().zip(&o.0).map(|(a, b)| *a && *b).collect())
    }

    pub fn or(&self, o: &Mask) -> Mask {
        Mask(self.0.iter().zip(&o.0).map(|(a, b)| *a || *b).collect())
    }

    pub fn and_not(&self, o: &Mask) -> Mask {
        Mask(self.0.iter().zip(&o.0).map(|(a, b)| *a && !*b).collect())
    }

    pub fn not(&self) -> Mask {
        Mask(self.0.iter().map(|a| !a).collect())
    }

    pub fn is_subset_of(&self, o: &Mask) -> bool {
        self.0.iter().zip(&o.0).all(|(a, b)| !*a || *b)
    }

    /// Keeps nodes whose whole set of displacements lies in the mask and the grid.
    pub fn erode(&self, g: &Grid, disps: &[Vec<isize>]) -> Mask {
        let reach = disps.iter().flat_map(|d| d.iter().map(|k| k.unsigned_abs())).max().unwrap_or(0);
        let offs: Vec<isize> = disps.iter().map(|d| g.offset(d)).collect();
        Mask(
            (0..g.len())
                .into_par_iter()
                .map(|i| self.0[i] && g.boundary_depth(i) >= reach && offs.iter().all(|&o| self.0[(i as isize + o) as usize]))
                .collect(),
        )
    }

    /// Dilation by an ∞-ball of `r` nodes.
    pub fn dilate(&self, g: &Grid, r: usize) -> Mask {
        let disps = cube_offsets(g.dim(), r as isize);
        let mut out = self.clone();
        let mut c = vec![0usize; g.dim()];
        for i in 0..g.len() {
            if !self.0[i] {
                continue;
            }
            g.coords_into(i, &mut c);
            for d in &disps {
                let ok = (0..g.dim()).all(|k| {
                    let v = c[k] as isize + d[k];
                    v >= 0 && (v as usize) < g.shape()[k]
                });
                if ok {
                    out.0[(i as isize + g.offset(d)) as usize] = true;
                }
            }
        }
        out
    }
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// All integer displacements in `[−r, r]^n`.
pub fn cube_offsets(n: usize, r: isize) -> Vec<Vec<isize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|v| {
                (-r..=r).map(move |k| {
                    let mut w = v.clone();
                    w.push(k);
                    w
                })
            })
            .collect();
    }
    out
}

/// Grid-sampled real function with validity mask. Pole nodes carry `−∞`, are
/// excluded from the mask, and store a finite cell-average value used
/// whenever the field is convolved.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub mask: Mask,
    pub poles: Vec<(usize, f64)>,
}

impl ScalarField {
    pub fn from_fn(g: &Grid, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let values: Vec<f64> = (0..g.len()).into_par_iter().map(|i| f(&g.point(i))).collect();
        Self::from_values(g, values)
    }

    /// Wraps raw values; finite entries are valid, `−∞` entries become poles
    /// (filled with the smallest finite axis neighbour), NaN is masked off.
    pub fn from_values(g: &Grid, values: Vec<f64>) -> Self {
        let mask = Mask(values.iter().map(|v| v.is_finite()).collect());
        let mut poles = vec![];
        let mut c = vec![0usize; g.dim()];
        for (i, v) in values.iter().enumerate() {
            if *v == f64::NEG_INFINITY {
                g.coords_into(i, &mut c);
                let mut fill = f64::INFINITY;
                for d in 0..g.dim() {
                    for s in [-1isize, 1] {
                        let k = c[d] as isize + s;
                        if k >= 0 && (k as usize) < g.shape()[d] {
                            let j = (i as isize + s * g.strides()[d] as isize) as usize;
                            if values[j].is_finite() {
                                fill = fill.min(values[j]);
                            }
                        }
                    }
                }
                poles.push((i, if fill.is_finite() { fill } else { 0.0 }));
            }
        }
        ScalarField { grid: g.clone(), values, mask, poles }
    }

    pub fn constant(g: &Grid, c: f64) -> Self {
        Self::from_values(g, vec![c; g.len()])
    }

    pub fn with_mask(mut self, mask: &Mask) -> Self {
        self.mask = self.mask.and(mask);
        self
    }

    pub fn is_pole(&self, i: usize) -> bool {
        self.poles.iter().any(|(p, _)| *p == i)
    }

    pub fn has_poles(&self) -> bool {
        !self.poles.is_empty()
    }

    /// Value used inside convolutions: the pole fill at poles, NaN off-mask.
    pub fn convolution_values(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.values.iter().zip(&self.mask.0).map(|(x, m)| if *m { *x } else { f64::NAN }).collect();
        for &(i, f) in &self.poles {
            v[i] = f;
        }
        v
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> ScalarField {
        let mut out = self.clone();
        out.values.par_iter_mut().for_each(|v| {
            if v.is_finite() {
                *v = f(*v)
            }
        });
        for p in out.poles.iter_mut() {
            p.1 = f(p.1);
        }
        out
    }

    pub fn scale(&self, s: f64) -> ScalarField {
        self.map(|v| s * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().zip(&self.mask.0).filter(|(_, m)| **m).fold(0.0, |a, (v, _)| a.max(v.abs()))
    }

    pub fn max_abs_on(&self, region: &Mask) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.mask.0[*i] && region.0[*i])
            .fold(0.0, |a, (_, v)| a.max(v.abs()))
    }
}

/// Finite-difference stencil order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum Stencil {
    /// Central second differences, 4-point cross for mixed terms; radius 1.
    Second,
    /// Fourth-order central differences; radius 2.
    Fourth,
}

impl Stencil {
    pub fn radius(self) -> usize {
        match self {
            Stencil::Second => 1,
            Stencil::Fourth => 2,
        }
    }

    /// Displacements read by the stencil.
    pub fn displacements(self, n: usize) -> Vec<Vec<isize>> {
        let steps: &[isize] = match self {
            Stencil::Second => &[-1, 1],
            Stencil::Fourth => &[-2, -1, 1, 2],
        };
        let mut out = vec![vec![0; n]];
        for i in 0..n {
            for &a in steps {
                let mut d = vec![0; n];
                d[i] = a;
                out.push(d);
                for j in i + 1..n {
                    for &b in steps {
                        let mut d = vec![0; n];
                        d[i] = a;
                        d[j] = b;
                        out.push(d);
                    }
                }
            }
        }
        out
    }
}

/// Precomputed stencil tables for fast per-node Hessians.
#[derive(Clone, Debug)]
pub struct HessianStencil {
    n: usize,
    stencil: Stencil,
    strides: Vec<isize>,
    h2: f64,
}

impl HessianStencil {
    pub fn new(g: &Grid, stencil: Stencil) -> Self {
        HessianStencil { n: g.dim(), stencil, strides: g.strides().iter().map(|s| *s as isize).collect(), h2: g.spacing() * g.spacing() }
    }

    /// Hessian at node `i` from raw values; caller guarantees the stencil fits.
    #[inline]
    pub fn at(&self, v: &[f64], i: usize) -> SymMatrix {
        let n = self.n;
        let mut m = SymMatrix::zeros(n);
        let at = |o: isize| v[(i as isize + o) as usize];
        let c = v[i];
        match self.stencil {
            Stencil::Second => {
                for a in 0..n {
                    let sa = self.strides[a];
                    m.set(a, a, (at(sa) - 2.0 * c + at(-sa)) / self.h2);
                    for b in a + 1..n {
                        let sb = self.strides[b];
                        let val = (at(sa + sb) - at(sa - sb) - at(-sa + sb) + at(-sa - sb)) / (4.0 * self.h2);
                        m.set(a, b, val);
                    }
                }
            }
            Stencil::Fourth => {
                let d1w = [(1isize, 8.0), (-1, -8.0), (2, -1.0), (-2, 1.0)];
                for a in 0..n {
                    let sa = self.strides[a];
                    let diag = (-at(2 * sa) + 16.0 * at(sa) - 30.0 * c + 16.0 * at(-sa) - at(-2 * sa)) / (12.0 * self.h2);
                    m.set(a, a, diag);
                    for b in a + 1..n {
                        let sb = self.strides[b];
                        let mut acc = 0.0;
                        for (ka, wa) in d1w {
                            for (kb, wb) in d1w {
                                acc += wa * wb * at(ka * sa + kb * sb);
                            }
                        }
                        m.set(a, b, acc / (144.0 * self.h2));
                    }
                }
            }
        }
        m
    }
}

/// Per-node symmetric matrices, packed upper triangles.
#[derive(Clone, Debug)]
pub struct MatrixField {
    pub grid: Grid,
    pub mask: Mask,
    data: Vec<SymMatrix>,
}

impl MatrixField {
    pub fn get(&self, i: usize) -> &SymMatrix {
        &self.data[i]
    }

    pub fn iter_masked(&self) -> impl Iterator<Item = (usize, &SymMatrix)> {
        self.data.iter().enumerate().filter(move |(i, _)| self.mask.0[*i])
    }
}

/// Output mask of a stencil applied to `u`.
pub fn stencil_mask(u: &ScalarField, stencil: Stencil) -> Mask {
    u.mask.erode(&u.grid, &stencil.displacements(u.grid.dim()))
}

/// Discrete `dd^#` of a function: its finite-difference Hessian.
pub fn hessian_dd(u: &ScalarField) -> Result<MatrixField> {
    hessian_with(u, Stencil::Second)
}

pub fn hessian_with(u: &ScalarField, stencil: Stencil) -> Result<MatrixField> {
    let g = &u.grid;
    let mask = stencil_mask(u, stencil);
    if mask.count() == 0 {
        return Err(Error::invalid("mask too small for the Hessian stencil"));
    }
    let hs = HessianStencil::new(g, stencil);
    let n = g.dim();
    let data = (0..g.len())
        .into_par_iter()
        .map(|i| if mask.0[i] { hs.at(&u.values, i) } else { SymMatrix::zeros(n) })
        .collect();
    Ok(MatrixField { grid: g.clone(), mask, data })
}

/// Discrete Laplacian (second-order), zero off the eroded mask.
pub fn laplacian(u: &ScalarField) -> ScalarField {
    let g = &u.grid;
    let mask = stencil_mask(u, Stencil::Second);
    let h2 = g.spacing() * g.spacing();
    let strides = g.strides().to_vec();
    let vals: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            if !mask.0[i] {
                return f64::NAN;
            }
            let c = u.values[i];
            strides.iter().map(|s| u.values[i + s] + u.values[i - s] - 2.0 * c).sum::<f64>() / h2
        })
        .collect();
    ScalarField { grid: g.clone(), values: vals, mask, poles: vec![] }
}

/// Radial `(1−|x|²)³` bump at a length scale.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct MollifierSpec {
    pub scale: f64,
}

impl MollifierSpec {
    /// Level `j` of the family `χ_j(x) = j^n χ(jx)`: scale `1/j`.
    pub fn level(j: f64) -> Self {
        MollifierSpec { scale: 1.0 / j }
    }

    pub fn with_scale(scale: f64) -> Self {
        MollifierSpec { scale }
    }

    fn profile(t2: f64) -> f64 {
        if t2 >= 1.0 {
            0.0
        } else {
            let s = 1.0 - t2;
            s * s * s
        }
    }

    /// Displacements and normalized weights.
    pub fn kernel(&self, g: &Grid) -> Result<Vec<(Vec<isize>, f64)>> {
        let r = (self.scale / g.spacing()).floor() as isize;
        if r < 1 {
            return Err(Error::invalid("mollifier radius is below one node"));
        }
        if g.shape().iter().any(|&s| s as isize <= 2 * r) {
            return Err(Error::invalid("mollifier kernel larger than the grid"));
        }
        let mut out = vec![];
        let mut total = 0.0;
        for d in cube_offsets(g.dim(), r) {
            let t2: f64 = d.iter().map(|k| (*k as f64 * g.spacing() / self.scale).powi(2)).sum();
            let w = Self::profile(t2);
            if w > 0.0 {
                total += w;
                out.push((d, w));
            }
        }
        for e in out.iter_mut() {
            e.1 /= total;
        }
        Ok(out)
    }
}

/// Discrete convolution with the normalized bump. Poles enter through their
/// cell-average fill; the output is finite on the eroded mask.
pub fn mollify(u: &ScalarField, spec: MollifierSpec) -> Result<ScalarField> {
    let g = &u.grid;
    let kernel = spec.kernel(g)?;
    let disps: Vec<Vec<isize>> = kernel.iter().map(|(d, _)| d.clone()).collect();
    let mut valid = u.mask.clone();
    for &(i, _) in &u.poles {
        valid.0[i] = true;
    }
    let out_mask = valid.erode(g, &disps);
    let src = u.convolution_values();
    let taps: Vec<(isize, f64)> = kernel.iter().map(|(d, w)| (g.offset(d), *w)).collect();
    let values: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            if !out_mask.0[i] {
                return f64::NAN;
            }
            let mut acc = 0.0;
            for &(o, w) in &taps {
                acc += w * src[(i as isize + o) as usize];
            }
            acc
        })
        .collect();
    Ok(ScalarField { grid: g.clone(), values, mask: out_mask, poles: vec![] })
}

/// Signed grid measure: density per node (times `h^n`) plus point atoms.
#[derive(Clone, Debug)]
pub struct Measure {
    pub grid: Grid,
    pub density: Vec<f64>,
    pub atoms: Vec<(Vec<f64>, f64)>,
}

impl Measure {
    pub fn zero(g: &Grid) -> Self {
        Measure { grid: g.clone(), density: vec![0.0; g.len()], atoms: vec![] }
    }

    pub fn from_density(g: &Grid, density: Vec<f64>) -> Self {
        Measure { grid: g.clone(), density, atoms: vec![] }
    }

    pub fn total_mass(&self) -> f64 {
        integrate(self, &Mask::full(&self.grid))
    }
}

/// `Σ density·h^n` over region nodes plus atoms whose nearest node is in the
/// region; lexicographic order, compensated.
pub fn integrate(mu: &Measure, region: &Mask) -> f64 {
    let mut s = NeumaierSum::default();
    for (d, m) in mu.density.iter().zip(&region.0) {
        if *m && d.is_finite() {
            s.add(*d);
        }
    }
    let mut total = s.value() * mu.grid.cell_volume();
    for (p, w) in &mu.atoms {
        if let Some(i) = mu.grid.nearest_node(p) {
            if region.0[i] {
                total += w;
            }
        }
    }
    total
}

/// Same as [`integrate`] with the region given as a predicate on points;
/// atoms are tested at their exact position.
pub fn integrate_where(mu: &Measure, pred: impl Fn(&[f64]) -> bool + Sync) -> f64 {
    let g = &mu.grid;
    let region = Mask::from_fn(g, |p| pred(p));
    let mut s = NeumaierSum::default();
    for (d, m) in mu.density.iter().zip(&region.0) {
        if *m && d.is_finite() {
            s.add(*d);
        }
    }
    let mut total = s.value() * g.cell_volume();
    for (p, w) in &mu.atoms {
        if pred(p) {
            total += w;
        }
    }
    total
}

/// Multilinear interpolation; `None` if the point leaves the grid or a corner
/// is off the mask.
pub fn interpolate(u: &ScalarField, x: &[f64]) -> Option<f64> {
    let g = &u.grid;
    let n = g.dim();
    let mut base = vec![0usize; n];
    let mut frac = vec![0.0; n];
    for d in 0..n {
        let t = (x[d] - g.origin()[d]) / g.spacing();
        if !(t >= 0.0 && t <= (g.shape()[d] - 1) as f64) {
            return None;
        }
        let b = (t.floor() as usize).min(g.shape()[d] - 2);
        base[d] = b;
        frac[d] = t - b as f64;
    }
    let i0 = g.index(&base);
    let mut acc = 0.0;
    for corner in 0..(1usize << n) {
        let mut w = 1.0;
        let mut idx = i0;
        for d in 0..n {
            if corner & (1 << d) != 0 {
                w *= frac[d];
                idx += g.strides()[d];
            } else {
                w *= 1.0 - frac[d];
            }
        }
        if w == 0.0 {
            continue;
        }
        if !u.mask.0[idx] {
            return None;
        }
        acc += w * u.values[idx];
    }
    Some(acc)
}

/// `{φ < r}` on the field's mask, poles included.
pub fn pseudo_ball_mask(phi: &ScalarField, r: f64) -> Mask {
    let mut m = Mask(phi.values.iter().zip(&phi.mask.0).map(|(v, ok)| *ok && *v < r).collect());
    for &(i, _) in &phi.poles {
        m.0[i] = true;
    }
    m
}

fn write_header(s: &mut String, g: &Grid) {
    let join = |v: Vec<String>| v.join(",");
    let _ = writeln!(s, "sfield v1");
    let _ = writeln!(s, "n={}", g.dim());
    let _ = writeln!(s, "shape={}", join(g.shape().iter().map(|x| x.to_string()).collect()));
    let _ = writeln!(s, "origin={}", join(g.origin().iter().map(|x| x.to_string()).collect()));
    let _ = writeln!(s, "spacing={}", g.spacing());
}

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

/// Renders a field: masked-off nodes as `nan`, poles as `-inf`.
pub fn field_to_string(u: &ScalarField) -> String {
    let mut s = String::new();
    write_header(&mut s, &u.grid);
    for (i, v) in u.values.iter().enumerate() {
        if u.mask.0[i] || *v == f64::NEG_INFINITY {
            s.push_str(&fmt_f64(*v));
        } else {
            s.push_str("nan");
        }
        s.push('\n');
    }
    s
}

pub fn mask_to_string(g: &Grid, m: &Mask) -> String {
    let mut s = String::new();
    write_header(&mut s, g);
    for b in &m.0 {
        s.push_str(if *b { "1\n" } else { "0\n" });
    }
    s
}

pub fn measure_to_string(mu: &Measure) -> String {
    let mut s = String::new();
    write_header(&mut s, &mu.grid);
    s.push_str("kind=measure\n");
    for d in &mu.density {
        s.push_str(&fmt_f64(*d));
        s.push('\n');
    }
    for (p, w) in &mu.atoms {
        let coords: Vec<String> = p.iter().map(|x| fmt_f64(*x)).collect();
        let _ = writeln!(s, "atom {} {}", coords.join(","), fmt_f64(*w));
    }
    s
}

struct Parsed {
    grid: Grid,
    kind_measure: bool,
    values: Vec<f64>,
    atoms: Vec<(Vec<f64>, f64)>,
}

fn parse_list<T: std::str::FromStr>(line: usize, s: &str) -> Result<Vec<T>> {
    s.split(',').map(|t| t.trim().parse::<T>().map_err(|_| Error::Parse { line, msg: format!("bad list entry `{t}`") })).collect()
}

fn parse_sfield(text: &str) -> Result<Parsed> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let mut next = |what: &str| lines.next().ok_or_else(|| Error::Parse { line: 0, msg: format!("missing {what}") });
    let (ln, magic) = next("magic")?;
    if magic != "sfield v1" {
        return Err(Error::Parse { line: ln, msg: "expected `sfield v1`".into() });
    }
    let mut kv = |key: &str| -> Result<(usize, String)> {
        let (ln, l) = next(key)?;
        let (k, v) = l.split_once('=').ok_or_else(|| Error::Parse { line: ln, msg: format!("expected {key}=") })?;
        if k.trim() != key {
            return Err(Error::Parse { line: ln, msg: format!("expected {key}=, found {k}") });
        }
        Ok((ln, v.trim().to_string()))
    };
    let (ln_n, n) = kv("n")?;
    let n: usize = n.parse().map_err(|_| Error::Parse { line: ln_n, msg: "bad dimension".into() })?;
    let (ln_s, shape) = kv("shape")?;
    let shape: Vec<usize> = parse_list(ln_s, &shape)?;
    let (ln_o, origin) = kv("origin")?;
    let origin: Vec<f64> = parse_list(ln_o, &origin)?;
    let (ln_h, h) = kv("spacing")?;
    let h: f64 = h.parse().map_err(|_| Error::Parse { line: ln_h, msg: "bad spacing".into() })?;
    if shape.len() != n {
        return Err(Error::Parse { line: ln_s, msg: "shape length differs from n".into() });
    }
    let grid = Grid::new(shape, origin, h)?;
    let mut kind_measure = false;
    let mut values = Vec::with_capacity(grid.len());
    let mut atoms = vec![];
    for (ln, l) in lines {
        if l == "kind=measure" {
            kind_measure = true;
            continue;
        }
        if let Some(rest) = l.strip_prefix("atom ") {
            let mut parts = rest.split_whitespace();
            let p = parse_list(ln, parts.next().unwrap_or(""))?;
            let w: f64 = parts.next().and_then(|w| w.parse().ok()).ok_or_else(|| Error::Parse { line: ln, msg: "bad atom weight".into() })?;
            if p.len() != n {
                return Err(Error::Parse { line: ln, msg: "atom dimension mismatch".into() });
            }
            atoms.push((p, w));
            continue;
        }
        let v: f64 = l.parse().map_err(|_| Error::Parse { line: ln, msg: format!("bad value `{l}`") })?;
        values.push(v);
    }
    if values.len() != grid.len() {
        return Err(Error::Parse { line: 0, msg: format!("expected {} values, found {}", grid.len(), values.len()) });
    }
    Ok(Parsed { grid, kind_measure, values, atoms })
}

pub fn field_from_str(text: &str) -> Result<ScalarField> {
    let p = parse_sfield(text)?;
    Ok(ScalarField::from_values(&p.grid, p.values))
}

pub fn mask_from_str(text: &str) -> Result<(Grid, Mask)> {
    let p = parse_sfield(text)?;
    Ok((p.grid, Mask(p.values.iter().map(|v| *v != 0.0).collect())))
}

pub fn measure_from_str(text: &str) -> Result<Measure> {
    let p = parse_sfield(text)?;
    if !p.kind_measure {
        return Err(Error::Parse { line: 0, msg: "missing kind=measure".into() });
    }
    Ok(Measure { grid: p.grid, density: p.values, atoms: p.atoms })
}

pub fn write_field(path: &Path, u: &ScalarField) -> Result<()> {
    Ok(fs::write(path, field_to_string(u))?)
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    field_from_str(&fs::read_to_string(path)?)
}

pub fn write_mask(path: &Path, g: &Grid, m: &Mask) -> Result<()> {
    Ok(fs::write(path, mask_to_string(g, m))?)
}

pub fn read_mask(path: &Path) -> Result<(Grid, Mask)> {
    mask_from_str(&fs::read_to_string(path)?)
}

pub fn write_measure(path: &Path, mu: &Measure) -> Result<()> {
    Ok(fs::write(path, measure_to_string(mu))?)
}

pub fn read_measure(path: &Path) -> Result<Measure> {
    measure_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid2() -> Grid {
        Grid::cube(2, 21, 1.0).unwrap()
    }

    #[test]
    fn hessian_exact_on_quadratics() {
        let g = grid2();
        let u = ScalarField::from_fn(&g, |p| 0.5 * (p[0] * p[0] + p[1] * p[1]));
        for st in [Stencil::Second, Stencil::Fourth] {
            let hf = hessian_with(&u, st).unwrap();
            for (_, m) in hf.iter_masked() {
                assert!((m.get(0, 0) - 1.0).abs() < 1e-11 && (m.get(1, 1) - 1.0).abs() < 1e-11 && m.get(0, 1).abs() < 1e-11);
            }
        }
        let b = ScalarField::from_fn(&g, |p| p[0] * p[1]);
        let hf = hessian_dd(&b).unwrap();
        for (_, m) in hf.iter_masked() {
            assert!((m.get(0, 1) - 1.0).abs() < 1e-12 && m.get(0, 0).abs() < 1e-12);
        }
        let a = ScalarField::from_fn(&g, |p| 3.0 * p[0] - p[1] + 2.0);
        assert!(hessian_dd(&a).unwrap().iter_masked().all(|(_, m)| m.norm_inf() < 1e-11));
    }

    #[test]
    fn hessian_mask_erodes_by_radius() {
        let g = grid2();
        let u = ScalarField::constant(&g, 1.0);
        assert_eq!(hessian_dd(&u).unwrap().mask.count(), 19 * 19);
        assert_eq!(hessian_with(&u, Stencil::Fourth).unwrap().mask.count(), 17 * 17);
    }

    #[test]
    fn mollify_constant_and_abs() {
        let g = Grid::cube(2, 81, 1.0).unwrap();
        let c = mollify(&ScalarField::constant(&g, 2.5), MollifierSpec::with_scale(0.1)).unwrap();
        assert!(c.values.iter().zip(&c.mask.0).filter(|(_, m)| **m).all(|(v, _)| (v - 2.5).abs() < 1e-14));
        let u = ScalarField::from_fn(&g, |p| (p[0] * p[0] + p[1] * p[1]).sqrt());
        let eps = 0.1;
        let m = mollify(&u, MollifierSpec::with_scale(eps)).unwrap();
        for i in 0..g.len() {
            if m.mask.0[i] {
                assert!(m.values[i] >= u.values[i] - 1e-12);
                assert!(m.values[i] - u.values[i] <= eps);
            }
        }
    }

    #[test]
    fn kernel_rejects_subnode_scale() {
        let g = grid2();
        assert!(MollifierSpec::with_scale(0.05).kernel(&g).is_err());
        assert!(MollifierSpec::with_scale(5.0).kernel(&g).is_err());
    }

    #[test]
    fn integrate_examples() {
        let g = Grid::cube(2, 201, 1.0).unwrap();
        let full = Measure::from_density(&g, vec![1.0; g.len()]);
        // Node-sum of the constant over the closed box counts boundary nodes fully.
        let expect = (201.0 * g.spacing()).powi(2);
        assert!((full.total_mass() - expect).abs() < 1e-10);
        let ball = Measure::from_density(&g, Mask::ball(&g, &[0.0, 0.0], 1.0).0.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect());
        assert!((ball.total_mass() / std::f64::consts::PI - 1.0).abs() < 0.01);
        let mut at = Measure::zero(&g);
        at.atoms.push((vec![0.1, 0.2], 3.5));
        assert_eq!(integrate(&at, &Mask::ball(&g, &[0.0, 0.0], 0.5)), 3.5);
        assert_eq!(integrate(&at, &Mask::ball(&g, &[0.9, 0.9], 0.05)), 0.0);
    }

    #[test]
    fn pseudo_ball_is_euclidean_ball_for_square_norm() {
        let g = grid2();
        let phi = ScalarField::from_fn(&g, |p| p[0] * p[0] + p[1] * p[1]);
        assert_eq!(pseudo_ball_mask(&phi, 0.25), Mask::ball(&g, &[0.0, 0.0], 0.5));
        assert_eq!(pseudo_ball_mask(&phi, 0.0).count(), 0);
    }

    #[test]
    fn field_round_trip() {
        let g = Grid::new(vec![5, 6], vec![-0.3, 0.1], 0.1).unwrap();
        let mut u = ScalarField::from_fn(&g, |p| (p[0] * 7.1).sin() / 3.0 + p[1]);
        u.values[7] = f64::NEG_INFINITY;
        let u = ScalarField::from_values(&g, u.values);
        let back = field_from_str(&field_to_string(&u)).unwrap();
        assert_eq!(back.grid, g);
        for (a, b) in u.values.iter().zip(&back.values) {
            assert!(a == b);
        }
        assert_eq!(back.poles.len(), 1);
        let m = Mask::ball(&g, &[0.0, 0.3], 0.2);
        assert_eq!(mask_from_str(&mask_to_string(&g, &m)).unwrap().1, m);
        let mut mu = Measure::from_density(&g, u.values.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect());
        mu.atoms.push((vec![0.0, 0.2], 1.25));
        let back = measure_from_str(&measure_to_string(&mu)).unwrap();
        assert_eq!(back.density, mu.density);
        assert_eq!(back.atoms, mu.atoms);
    }

    #[test]
    fn parse_errors_report_lines() {
        let err = field_from_str("sfield v1\nn=2\nshape=5,5\norigin=0,0\nspacing=oops\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{err}");
    }
}
