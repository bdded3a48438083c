//! m-convexity on grids: Γ_m membership of discrete Hessians, the sup
//! closure, the fundamental weights φ_m and class certificates.
//!
//! A field is declared m-convex when every discrete Hessian on its eroded
//! mask lies in the closed Γ_m cone. Subharmonicity is not tested
//! separately: for m ≥ 1 it is the `j = 1` condition.

use serde::Serialize;

use crate::grid::{self, HessianStencil, Mask, ScalarField, Stencil};
use crate::hessmeasure::{self, Current, HessOptions};
use crate::numeric::{cube_average_log, cube_average_power};
use crate::superalgebra::{binomial, sigma_k_minors, SymMatrix};
use crate::{Error, Grid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Regime {
    /// `m < n/2`: `−1/((n/m−2)|x−a|^{n/m−2})`
    Sub,
    /// `m = n/2`: `log|x−a|`
    Log,
    /// `m > n/2`: `|x−a|²`
    Quad,
}

/// The weight `φ_m` with pole `a`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightSpec {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
}

impl WeightSpec {
    pub fn new(n: usize, m: usize, a: Vec<f64>) -> Result<Self> {
        if m == 0 || m > n {
            return Err(Error::invalid(format!("level m={m} outside 1..={n}")));
        }
        if a.len() != n {
            return Err(Error::DimensionMismatch(a.len(), n));
        }
        Ok(WeightSpec { n, m, a })
    }

    pub fn regime(&self) -> Regime {
        match (2 * self.m).cmp(&self.n) {
            std::cmp::Ordering::Less => Regime::Sub,
            std::cmp::Ordering::Equal => Regime::Log,
            std::cmp::Ordering::Greater => Regime::Quad,
        }
    }

    /// `q = n/m`.
    fn q(&self) -> f64 {
        self.n as f64 / self.m as f64
    }

    /// Radial profile `f(r)`.
    pub fn profile(&self, r: f64) -> f64 {
        match self.regime() {
            Regime::Sub => {
                let q = self.q();
                if r == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -r.powf(2.0 - q) / (q - 2.0)
                }
            }
            Regime::Log => r.ln(),
            Regime::Quad => r * r,
        }
    }

    /// Inverse of the profile on its range.
    pub fn profile_inverse(&self, level: f64) -> f64 {
        match self.regime() {
            Regime::Sub => {
                let q = self.q();
                (-(q - 2.0) * level).powf(1.0 / (2.0 - q))
            }
            Regime::Log => level.exp(),
            Regime::Quad => level.max(0.0).sqrt(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.profile(grid::dist2(x, &self.a).sqrt())
    }

    /// Analytic Hessian `f''·r̂r̂ᵀ + (f'/r)(I − r̂r̂ᵀ)` off the pole.
    pub fn hessian(&self, x: &[f64]) -> SymMatrix {
        let n = self.n;
        let d: Vec<f64> = x.iter().zip(&self.a).map(|(a, b)| a - b).collect();
        let r = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let (f1_over_r, f2) = match self.regime() {
            Regime::Quad => (2.0, 2.0),
            _ => {
                let q = self.q();
                let t = r.powf(-q);
                (t, (1.0 - q) * t)
            }
        };
        let mut h = SymMatrix::zeros(n);
        for i in 0..n {
            for j in i..n {
                let rr = if r > 0.0 { d[i] * d[j] / (r * r) } else { 0.0 };
                let id = if i == j { 1.0 } else { 0.0 };
                h.set(i, j, f2 * rr + f1_over_r * (id - rr));
            }
        }
        h
    }

    /// Closed form of `(dd^#φ)^s∧β^{n−s}` relative to `β^n` off the pole.
    pub fn sigma_closed_form(&self, s: usize, x: &[f64]) -> f64 {
        let r = grid::dist2(x, &self.a).sqrt();
        match self.regime() {
            Regime::Quad => 2f64.powi(s as i32),
            _ => (1.0 - s as f64 / self.m as f64) * r.powf(-(self.n as f64) * s as f64 / self.m as f64),
        }
    }

    /// Value assigned to the pole cell in convolutions: the cell average of φ.
    pub fn pole_cell_value(&self, h: f64) -> f64 {
        match self.regime() {
            Regime::Sub => {
                let q = self.q();
                -cube_average_power(self.n, 2.0 - q, h) / (q - 2.0)
            }
            Regime::Log => cube_average_log(self.n, h),
            Regime::Quad => cube_average_power(self.n, 2.0, h),
        }
    }

    /// `weight m=<m> n=<n> a=<x1,...,xn>`
    pub fn to_text(&self) -> String {
        let a: Vec<String> = self.a.iter().map(|v| format!("{v:?}")).collect();
        format!("weight m={} n={} a={}", self.m, self.n, a.join(","))
    }

    pub fn from_text(s: &str) -> Result<Self> {
        let body = s.trim().strip_prefix("weight").unwrap_or(s).trim();
        let (mut m, mut n, mut a) = (None, None, None);
        for part in body.split(|c: char| c.is_whitespace() || c == ';') {
            if part.is_empty() {
                continue;
            }
            let (k, v) = part.split_once('=').ok_or_else(|| Error::invalid(format!("bad weight token `{part}`")))?;
            match k {
                "m" => m = v.parse().ok(),
                "n" => n = v.parse().ok(),
                "a" => a = v.split(',').map(|t| t.parse::<f64>().ok()).collect::<Option<Vec<_>>>(),
                _ => return Err(Error::invalid(format!("unknown weight key `{k}`"))),
            }
        }
        let (m, n, a) = (m.ok_or_else(|| Error::invalid("weight needs m"))?, n.ok_or_else(|| Error::invalid("weight needs n"))?, a.ok_or_else(|| Error::invalid("weight needs a"))?);
        WeightSpec::new(n, m, a)
    }
}

/// Samples `φ_m`; a pole at a node is flagged and carries its cell average.
pub fn weight_field(w: &WeightSpec, g: &Grid) -> Result<ScalarField> {
    if w.n != g.dim() {
        return Err(Error::DimensionMismatch(w.n, g.dim()));
    }
    let h = g.spacing();
    let inside = (0..g.dim()).all(|d| w.a[d] > g.origin()[d] + 0.5 * h && w.a[d] < g.origin()[d] + (g.shape()[d] as f64 - 1.5) * h);
    if !inside {
        return Err(Error::invalid("pole must lie strictly inside the box"));
    }
    let mut f = ScalarField::from_fn(g, |p| w.eval(p));
    if let Some(i) = g.nearest_node(&w.a) {
        if grid::dist2(&g.point(i), &w.a).sqrt() < 1e-9 * h && w.regime() != Regime::Quad {
            f.values[i] = f64::NEG_INFINITY;
            f.mask.0[i] = false;
            f.poles = vec![(i, w.pole_cell_value(h))];
        }
    }
    Ok(f)
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityReport {
    pub s: usize,
    pub samples: usize,
    pub max_rel_err_analytic: f64,
    pub max_rel_err_discrete: f64,
    pub step: f64,
}

/// Compares `σ_s` pairings of the analytic and the finite-difference Hessian
/// of `φ_m` against the closed form at the sample points.
pub fn weight_sigma_identity_check(w: &WeightSpec, s: usize, samples: &[Vec<f64>], step: f64) -> Result<IdentityReport> {
    if s > w.m {
        return Err(Error::invalid("identity needs s ≤ m"));
    }
    if w.regime() == Regime::Quad {
        return Err(Error::invalid("identity applies to the sub and log regimes"));
    }
    let n = w.n;
    let mut ea: f64 = 0.0;
    let mut ed: f64 = 0.0;
    for x in samples {
        let exact = w.sigma_closed_form(s, x);
        let scale = w.sigma_closed_form(0, x).max(grid::dist2(x, &w.a).sqrt().powf(-(n as f64) * s as f64 / w.m as f64));
        let pa = pairing(&w.hessian(x), s);
        let pd = pairing(&fd_hessian(&|p| w.eval(p), x, step), s);
        ea = ea.max((pa - exact).abs() / scale);
        ed = ed.max((pd - exact).abs() / scale);
    }
    Ok(IdentityReport { s, samples: samples.len(), max_rel_err_analytic: ea, max_rel_err_discrete: ed, step })
}

fn pairing(a: &SymMatrix, s: usize) -> f64 {
    sigma_k_minors(a, s) / binomial(a.dim(), s)
}

/// Central-difference Hessian of a function at a point.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> SymMatrix {
    let n = x.len();
    let mut m = SymMatrix::zeros(n);
    let at = |d: &[(usize, f64)]| {
        let mut p = x.to_vec();
        for &(i, s) in d {
            p[i] += s;
        }
        f(&p)
    };
    let c = f(x);
    for i in 0..n {
        m.set(i, i, (at(&[(i, h)]) - 2.0 * c + at(&[(i, -h)])) / (h * h));
        for j in i + 1..n {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)])) / (4.0 * h * h);
            m.set(i, j, v);
        }
    }
    m
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub m: usize,
    pub passed: bool,
    pub checked: usize,
    pub worst_node: Option<usize>,
    pub worst_order: usize,
    /// Most negative `σ_j/C(n,j)` relative to `(1+‖H‖∞)^j`.
    pub worst_value: f64,
}

/// Γ_m test of the discrete Hessian at every node of the eroded mask.
/// `tol` is relative: node passes when `σ_j/C(n,j) ≥ −tol·(1+‖H‖∞)^j`.
pub fn is_m_convex(u: &ScalarField, m: usize, tol: f64) -> Result<ConvexityReport> {
    is_m_convex_with(u, m, tol, Stencil::Second, None)
}

pub fn is_m_convex_with(u: &ScalarField, m: usize, tol: f64, stencil: Stencil, region: Option<&Mask>) -> Result<ConvexityReport> {
    let g = &u.grid;
    let n = g.dim();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("level m={m} outside 1..={n}")));
    }
    let mut mask = grid::stencil_mask(u, stencil);
    if let Some(r) = region {
        mask = mask.and(r);
    }
    if mask.count() == 0 {
        return Err(Error::invalid("empty interior"));
    }
    let hs = HessianStencil::new(g, stencil);
    use rayon::prelude::*;
    let worst: Vec<(f64, usize)> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            if !mask.0[i] {
                return (f64::INFINITY, 0);
            }
            let h = hs.at(&u.values, i);
            let s = 1.0 + h.norm_inf();
            let mut w = (f64::INFINITY, 0);
            for j in 1..=m {
                let v = pairing(&h, j) / s.powi(j as i32);
                if v < w.0 {
                    w = (v, j);
                }
            }
            w
        })
        .collect();
    let mut best = (f64::INFINITY, 0usize, None);
    for (i, (v, j)) in worst.iter().enumerate() {
        if *v < best.0 {
            best = (*v, *j, Some(i));
        }
    }
    Ok(ConvexityReport { m, passed: best.0 >= -tol, checked: mask.count(), worst_node: best.2, worst_order: best.1, worst_value: best.0 })
}

/// Pointwise maximum on the common mask.
pub fn max_combine(u: &ScalarField, v: &ScalarField) -> Result<ScalarField> {
    u.grid.check_same(&v.grid)?;
    let mut values = Vec::with_capacity(u.values.len());
    let mut mask = Vec::with_capacity(u.values.len());
    let pu: std::collections::HashMap<usize, f64> = u.poles.iter().copied().collect();
    let pv: std::collections::HashMap<usize, f64> = v.poles.iter().copied().collect();
    let mut poles = vec![];
    for i in 0..u.values.len() {
        let a_ok = u.mask.0[i] || pu.contains_key(&i);
        let b_ok = v.mask.0[i] || pv.contains_key(&i);
        let val = u.values[i].max(v.values[i]);
        values.push(val);
        let ok = a_ok && b_ok;
        if ok && val == f64::NEG_INFINITY {
            poles.push((i, pu[&i].max(pv[&i])));
            mask.push(false);
        } else {
            mask.push(ok && val.is_finite());
        }
    }
    Ok(ScalarField { grid: u.grid.clone(), values, mask: Mask(mask), poles })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ClassTag {
    E0m,
    Fm,
    Em,
}

#[derive(Clone, Debug)]
pub struct ClassCertificate {
    pub tag: ClassTag,
    pub sequence: Vec<ScalarField>,
    pub mass_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub tag: ClassTag,
    pub valid: bool,
    pub bounded: bool,
    pub boundary_ok: bool,
    pub decreasing: bool,
    pub limit_gap: f64,
    pub masses: Vec<f64>,
    pub notes: Vec<String>,
}

/// Nodes of the mask within `width` nodes of its complement or the box edge.
pub fn boundary_band(g: &Grid, mask: &Mask, width: usize) -> Mask {
    let disps = grid::cube_offsets(g.dim(), width as isize);
    mask.and_not(&mask.erode(g, &disps))
}

fn lipschitz_estimate(u: &ScalarField) -> f64 {
    let g = &u.grid;
    let mut lip: f64 = 0.0;
    let mut c = vec![0usize; g.dim()];
    for i in 0..g.len() {
        if !u.mask.0[i] {
            continue;
        }
        g.coords_into(i, &mut c);
        for d in 0..g.dim() {
            if c[d] + 1 < g.shape()[d] {
                let j = i + g.strides()[d];
                if u.mask.0[j] {
                    lip = lip.max((u.values[j] - u.values[i]).abs() / g.spacing());
                }
            }
        }
    }
    lip
}

fn total_mass(u: &ScalarField, m: usize) -> Result<f64> {
    let t = Current::unit(&u.grid);
    let opts = HessOptions { check_convexity: false, ..HessOptions::default() };
    let us = vec![u.clone(); m];
    let r = hessmeasure::hessian_measure(&t, m, &us, &opts)?;
    Ok(r.measure.total_mass())
}

/// Discrete check of the class conditions. The boundary limit uses a two-node
/// band and threshold `10·h·Lip`.
pub fn check_certificate(c: &ClassCertificate, u: &ScalarField, m: usize) -> Result<CertificateReport> {
    for f in &c.sequence {
        u.grid.check_same(&f.grid)?;
    }
    let g = &u.grid;
    let mut notes = vec![];
    let bounded = !u.has_poles() && u.values.iter().zip(&u.mask.0).all(|(v, ok)| !*ok || v.is_finite());
    let band = boundary_band(g, &u.mask, 2);
    let eps = 10.0 * g.spacing() * lipschitz_estimate(u).max(1e-12);
    let boundary_ok = u.max_abs_on(&band) <= eps;
    let mut decreasing = true;
    for w in c.sequence.windows(2) {
        let common = w[0].mask.and(&w[1].mask);
        if (0..g.len()).any(|i| common.0[i] && w[1].values[i] > w[0].values[i] + 1e-12 * (1.0 + w[0].values[i].abs())) {
            decreasing = false;
        }
    }
    if !decreasing {
        notes.push("sequence is not pointwise decreasing".into());
    }
    let mut masses = vec![];
    for f in &c.sequence {
        masses.push(total_mass(f, m)?);
    }
    let limit_region = match c.tag {
        ClassTag::Em => u.mask.erode(g, &grid::cube_offsets(g.dim(), 2)),
        _ => u.mask.clone(),
    };
    let limit_gap = match c.sequence.last() {
        Some(last) => (0..g.len())
            .filter(|&i| limit_region.0[i] && last.mask.0[i])
            .map(|i| (last.values[i] - u.values[i]).abs())
            .fold(0.0, f64::max),
        None => 0.0,
    };
    let valid = match c.tag {
        ClassTag::E0m => {
            let mass = total_mass(u, m)?;
            masses.push(mass);
            if !bounded {
                notes.push("field is unbounded".into());
            }
            if !boundary_ok {
                notes.push(format!("boundary band exceeds ε = {eps:.3e}"));
            }
            bounded && boundary_ok && mass.is_finite() && mass.abs() <= c.mass_bound
        }
        ClassTag::Fm | ClassTag::Em => {
            let within = masses.iter().all(|v| v.abs() <= c.mass_bound);
            if !within {
                notes.push("mass bound violated".into());
            }
            decreasing && within && limit_gap <= eps.max(1e-9)
        }
    };
    Ok(CertificateReport { tag: c.tag, valid, bounded, boundary_ok, decreasing, limit_gap, masses, notes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_formulas() {
        let w = WeightSpec::new(4, 2, vec![0.0; 4]).unwrap();
        assert_eq!(w.regime(), Regime::Log);
        assert!((w.eval(&[2.0, 0.0, 0.0, 0.0]) - 2f64.ln()).abs() < 1e-15);
        let w1 = WeightSpec::new(4, 1, vec![0.0; 4]).unwrap();
        assert!((w1.eval(&[2.0, 0.0, 0.0, 0.0]) + 1.0 / 8.0).abs() < 1e-15);
        let wq = WeightSpec::new(2, 2, vec![0.0; 2]).unwrap();
        assert_eq!(wq.regime(), Regime::Quad);
        assert!((wq.eval(&[1.0, 2.0]) - 5.0).abs() < 1e-15);
        for w in [&w, &w1] {
            let lv = w.profile(0.7);
            assert!((w.profile_inverse(lv) - 0.7).abs() < 1e-13);
        }
    }

    #[test]
    fn weight_text_round_trip() {
        let w = WeightSpec::new(4, 2, vec![0.0, 0.5, -1.0, 0.25]).unwrap();
        assert_eq!(WeightSpec::from_text(&w.to_text()).unwrap(), w);
    }

    #[test]
    fn identity_examples() {
        let w = WeightSpec::new(4, 2, vec![0.0; 4]).unwrap();
        let x = [1.0, 0.0, 0.0, 0.0];
        assert!((pairing(&w.hessian(&x), 1) - 0.5).abs() < 1e-14);
        assert!(pairing(&w.hessian(&x), 2).abs() < 1e-14);
        assert!((w.sigma_closed_form(0, &x) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sample_convexity_examples() {
        let g = Grid::cube(2, 21, 1.0).unwrap();
        let q = ScalarField::from_fn(&g, |p| 0.5 * (p[0] * p[0] + p[1] * p[1]));
        assert!(is_m_convex(&q, 2, 1e-10).unwrap().passed);
        let saddle = ScalarField::from_fn(&g, |p| p[0] * p[0] - p[1] * p[1]);
        assert!(is_m_convex(&saddle, 1, 1e-10).unwrap().passed);
        let r = is_m_convex(&saddle, 2, 1e-10).unwrap();
        assert!(!r.passed && r.worst_order == 2);
    }
}
