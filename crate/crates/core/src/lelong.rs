//! Lelong numbers: classical ball ratios, m-generalized numbers along level
//! ladders, the reweighting and comparison identities, and direct images
//! under coordinate projections.

use serde::Serialize;

use crate::grid::{self, Mask, Measure, ScalarField};
use crate::hessmeasure::{hessian_measure, Current, HessOptions};
use crate::mconvex::{weight_field, Regime, WeightSpec};
use crate::numeric::NeumaierSum;
use crate::superalgebra::{wedge, FormValue, MultiIndex};
use crate::{Error, Grid, Result};

/// Values `ν(r)` along a ladder of levels ordered from shallow to deep.
#[derive(Clone, Debug, Serialize)]
pub struct LelongLadder {
    pub levels: Vec<f64>,
    pub masses: Vec<f64>,
    pub values: Vec<f64>,
    pub limit: f64,
    pub uncertainty: f64,
    /// `r ↦ ν(r)` non-decreasing, i.e. values non-increasing down the ladder.
    pub monotone: bool,
}

impl LelongLadder {
    pub fn new(levels: Vec<f64>, masses: Vec<f64>, values: Vec<f64>) -> Self {
        let (limit, uncertainty) = extrapolate(&values);
        let monotone = values.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(w[1].abs()));
        LelongLadder { levels, masses, values, limit, uncertainty, monotone }
    }

    /// `r,mass,nu` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("r,mass,nu\n");
        for ((r, m), v) in self.levels.iter().zip(&self.masses).zip(&self.values) {
            s.push_str(&format!("{r:?},{m:?},{v:?}\n"));
        }
        s
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({ "limit": self.limit, "uncertainty": self.uncertainty, "monotone": self.monotone })
    }
}

/// Aitken/Richardson limit of a ladder and its uncertainty `|v_k − v_{k−1}|`.
///
/// The geometric rate is estimated from the last three values; it is only
/// trusted when it lies in `(0, 3/4]`, otherwise the last value is kept.
pub fn extrapolate(v: &[f64]) -> (f64, f64) {
    match v.len() {
        0 => (f64::NAN, f64::INFINITY),
        1 => (v[0], f64::INFINITY),
        2 => (v[1], (v[1] - v[0]).abs()),
        k => {
            let (a, b, c) = (v[k - 3], v[k - 2], v[k - 1]);
            let unc = (c - b).abs();
            let d0 = b - a;
            let d1 = c - b;
            if d0 != 0.0 {
                let rho = d1 / d0;
                if rho > 0.0 && rho <= 0.75 {
                    return (c + d1 * rho / (1.0 - rho), unc);
                }
            }
            (c, unc)
        }
    }
}

fn check_ball_inside(g: &Grid, a: &[f64], r: f64) -> Result<()> {
    if a.len() != g.dim() {
        return Err(Error::DimensionMismatch(a.len(), g.dim()));
    }
    for d in 0..g.dim() {
        let lo = g.origin()[d];
        let hi = lo + (g.shape()[d] - 1) as f64 * g.spacing();
        if a[d] - r < lo || a[d] + r > hi {
            return Err(Error::invalid(format!("ball of radius {r} around {a:?} leaves the box")));
        }
    }
    Ok(())
}

fn check_decreasing_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::invalid("empty ladder"));
    }
    if levels.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("ladder levels must decrease strictly"));
    }
    Ok(())
}

/// `ν_T(a,r) = r^{−p} ∫_{𝔹(a,r)} T∧β^p`.
pub fn nu_classic(t: &Current, a: &[f64], r: f64) -> Result<f64> {
    Ok(nu_classic_ladder(t, a, &[r])?.values[0])
}

pub fn nu_classic_ladder(t: &Current, a: &[f64], radii: &[f64]) -> Result<LelongLadder> {
    check_decreasing_levels(radii)?;
    check_ball_inside(&t.grid, a, radii[0])?;
    let trace = t.trace_measure();
    let masses: Vec<f64> = radii.iter().map(|&r| grid::integrate(&trace, &Mask::ball(&t.grid, a, r))).collect();
    let values = masses.iter().zip(radii).map(|(m, r)| m / r.powi(t.p as i32)).collect();
    Ok(LelongLadder::new(radii.to_vec(), masses, values))
}

/// Normalization of `ν_T^m(φ, r)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Normalization {
    /// Plain pseudo-ball mass (weights tending to −∞).
    Plain,
    /// `μ^q / r^{(n/2m)q}` with `μ = 1 − n/(2m)`, for non-negative weights
    /// with levels tending to 0.
    Quad,
}

impl Normalization {
    fn factor(self, n: usize, m: usize, q: usize, r: f64) -> f64 {
        match self {
            Normalization::Plain => 1.0,
            Normalization::Quad => {
                let mu = 1.0 - n as f64 / (2.0 * m as f64);
                mu.powi(q as i32) / r.powf(n as f64 / (2.0 * m as f64) * q as f64)
            }
        }
    }
}

fn arity(t: &Current, m: usize) -> Result<usize> {
    let n = t.dim();
    if m == 0 || m > n {
        return Err(Error::invalid(format!("level m={m} outside 1..={n}")));
    }
    if m + t.p < n {
        return Err(Error::invalid("arity m+p−n is negative"));
    }
    Ok(m + t.p - n)
}

/// Nodes carrying `T`: coefficient support plus atom nodes.
fn carrier(t: &Current) -> Mask {
    let mut s = t.support();
    for (p, _, _) in &t.atoms {
        if let Some(i) = t.grid.nearest_node(p) {
            s.0[i] = true;
        }
    }
    s
}

/// Semi-exhaustive proxy: the shallowest pseudo-ball, met with the carrier of
/// `T`, must sit inside the region where the measure is computable.
fn check_semi_exhaustive(t: &Current, phi: &ScalarField, level: f64, computable: &Mask) -> Result<()> {
    let ball = grid::pseudo_ball_mask(phi, level).and(&carrier(t));
    let outside = ball.and_not(computable).count();
    if outside > 0 {
        return Err(Error::invalid(format!(
            "weight is not semi-exhaustive at level {level}: {outside} pseudo-ball nodes leave the computable region"
        )));
    }
    Ok(())
}

fn ladder_from_measure(t: &Current, mu: &Measure, phi: &ScalarField, m: usize, q: usize, levels: &[f64], norm: Normalization) -> LelongLadder {
    let n = t.dim();
    let masses: Vec<f64> = levels.iter().map(|&r| grid::integrate(mu, &grid::pseudo_ball_mask(phi, r))).collect();
    let values = masses.iter().zip(levels).map(|(mass, &r)| mass * norm.factor(n, m, q, r)).collect();
    LelongLadder::new(levels.to_vec(), masses, values)
}

/// `ν_T^m(φ, r)` down a ladder of levels: the measure
/// `T∧β^{n−m}∧(dd^#φ)^{m+p−n}` is computed once and integrated over each
/// pseudo-ball `{φ < r}`.
pub fn nu_m_ladder(t: &Current, phi: &ScalarField, m: usize, levels: &[f64], norm: Normalization, opts: &HessOptions) -> Result<LelongLadder> {
    t.grid.check_same(&phi.grid)?;
    check_decreasing_levels(levels)?;
    let q = arity(t, m)?;
    let factors = vec![phi.clone(); q];
    let res = hessian_measure(t, m, &factors, opts)?;
    check_semi_exhaustive(t, phi, levels[0], &res.mask)?;
    Ok(ladder_from_measure(t, &res.measure, phi, m, q, levels, norm))
}

pub fn nu_m(t: &Current, phi: &ScalarField, m: usize, r: f64, norm: Normalization, opts: &HessOptions) -> Result<f64> {
    Ok(nu_m_ladder(t, phi, m, &[r], norm, opts)?.values[0])
}

/// Ladder for the fundamental weight `φ_m` given by radii; levels are the
/// profile values (`|x−a|²` levels in the quadratic regime).
pub fn nu_m_weight(t: &Current, w: &WeightSpec, radii: &[f64], opts: &HessOptions) -> Result<LelongLadder> {
    check_decreasing_levels(radii)?;
    let phi = weight_field(w, &t.grid)?;
    let levels: Vec<f64> = radii.iter().map(|&r| w.profile(r)).collect();
    let norm = if w.regime() == Regime::Quad { Normalization::Quad } else { Normalization::Plain };
    nu_m_ladder(t, &phi, w.m, &levels, norm, opts)
}

/// `p!Θ_T(a,t)/t^{n(m+p−n)/m}` with `p!Θ_T(a,t) = ∫_{𝔹(a,t)} T∧β^p`.
pub fn m_lelong_point(t: &Current, a: &[f64], m: usize, ts: &[f64]) -> Result<LelongLadder> {
    let q = arity(t, m)?;
    if q == 0 {
        return Err(Error::invalid("degenerate arity: the exponent n(m+p−n)/m vanishes"));
    }
    check_decreasing_levels(ts)?;
    check_ball_inside(&t.grid, a, ts[0])?;
    let e = (t.dim() * q) as f64 / m as f64;
    let trace = t.trace_measure();
    let masses: Vec<f64> = ts.iter().map(|&r| grid::integrate(&trace, &Mask::ball(&t.grid, a, r))).collect();
    let values = masses.iter().zip(ts).map(|(mass, r)| mass / r.powf(e)).collect();
    Ok(LelongLadder::new(ts.to_vec(), masses, values))
}

/// Convex increasing reparametrizations used by [`reweight_check`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Chi {
    Identity,
    Affine { slope: f64, offset: f64 },
    /// `x ↦ e^{rate·x}`
    Exp { rate: f64 },
}

impl Chi {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Chi::Identity => x,
            Chi::Affine { slope, offset } => slope * x + offset,
            Chi::Exp { rate } => (rate * x).exp(),
        }
    }

    pub fn left_derivative(&self, x: f64) -> f64 {
        match *self {
            Chi::Identity => 1.0,
            Chi::Affine { slope, .. } => slope,
            Chi::Exp { rate } => rate * (rate * x).exp(),
        }
    }

    /// `identity`, `affine:<slope>,<offset>` or `exp:<rate>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "identity" {
            return Ok(Chi::Identity);
        }
        let bad = || Error::invalid(format!("cannot parse chi `{s}`"));
        if let Some(rest) = s.strip_prefix("affine:") {
            let (a, b) = rest.split_once(',').ok_or_else(bad)?;
            return Ok(Chi::Affine { slope: a.trim().parse().map_err(|_| bad())?, offset: b.trim().parse().map_err(|_| bad())? });
        }
        if let Some(rest) = s.strip_prefix("exp:") {
            return Ok(Chi::Exp { rate: rest.trim().parse().map_err(|_| bad())? });
        }
        Err(bad())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ReweightReport {
    pub levels: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    pub rel_gap: Vec<f64>,
    pub max_rel_gap: f64,
}

fn check_convex_increasing(chi: &dyn Fn(f64) -> f64, lo: f64, hi: f64) -> Result<()> {
    let k = 64;
    let step = (hi - lo) / k as f64;
    if !(step > 0.0) {
        return Ok(());
    }
    let v: Vec<f64> = (0..=k).map(|i| chi(lo + i as f64 * step)).collect();
    let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs())).max(1e-300);
    for i in 1..k {
        if v[i + 1] - 2.0 * v[i] + v[i - 1] < -1e-10 * scale {
            return Err(Error::invalid(format!("chi is not convex near {}", lo + i as f64 * step)));
        }
    }
    if v.windows(2).any(|w| w[1] < w[0] - 1e-12 * scale) {
        return Err(Error::invalid("chi is not increasing"));
    }
    Ok(())
}

/// Both sides of `∫_{φ<r} T∧β^{n−m}∧(dd^#χ∘φ)^q = χ'(r−0)^q ν_T^m(φ,r)`.
/// A weight with poles is mollified first and both sides use the same
/// smoothed weight and its sublevel sets.
pub fn reweight_check(
    t: &Current,
    phi: &ScalarField,
    m: usize,
    chi: &(dyn Fn(f64) -> f64 + Sync),
    chi_left: &dyn Fn(f64) -> f64,
    levels: &[f64],
    opts: &HessOptions,
) -> Result<ReweightReport> {
    t.grid.check_same(&phi.grid)?;
    check_decreasing_levels(levels)?;
    let q = arity(t, m)?;
    let smooth = if phi.has_poles() {
        let spec = opts.mollifier.ok_or_else(|| Error::invalid("weights with poles need a mollifier scale"))?;
        grid::mollify(phi, spec)?
    } else {
        phi.clone()
    };
    let lo = smooth.values.iter().zip(&smooth.mask.0).filter(|(_, m)| **m).fold(f64::INFINITY, |a, (v, _)| a.min(*v));
    check_convex_increasing(chi, lo, levels[0])?;
    let composed = smooth.map(chi);
    let inner = HessOptions { mollifier: None, ..opts.clone() };
    let mu_chi = hessian_measure(t, m, &vec![composed; q], &inner)?;
    let mu_phi = hessian_measure(t, m, &vec![smooth.clone(); q], &inner)?;
    check_semi_exhaustive(t, &smooth, levels[0], &mu_chi.mask.and(&mu_phi.mask))?;
    let mut lhs = vec![];
    let mut rhs = vec![];
    for &r in levels {
        let ball = grid::pseudo_ball_mask(&smooth, r);
        lhs.push(grid::integrate(&mu_chi.measure, &ball));
        rhs.push(chi_left(r).powi(q as i32) * grid::integrate(&mu_phi.measure, &ball));
    }
    let rel_gap: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)).collect();
    let max_rel_gap = rel_gap.iter().cloned().fold(0.0, f64::max);
    Ok(ReweightReport { levels: levels.to_vec(), lhs, rhs, rel_gap, max_rel_gap })
}

#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    /// `max ψ/φ` over the deepest pseudo-ball of `φ` on the carrier of `T`.
    pub l: f64,
    pub exponent: usize,
    pub nu_phi: LelongLadder,
    pub nu_psi: LelongLadder,
    /// `l^q ν(φ)`
    pub bound: f64,
    /// Combined ladder uncertainty on the scale of `bound`.
    pub uncertainty: f64,
    pub holds: bool,
    /// `|ν(ψ) − l^q ν(φ)| / |l^q ν(φ)|`
    pub equality_gap: f64,
}

/// Checks `ν(ψ) ≤ l^q ν(φ)` with `q = m+p−n`.
#[allow(clippy::too_many_arguments)]
pub fn compare_weights(
    t: &Current,
    phi: &ScalarField,
    psi: &ScalarField,
    m: usize,
    levels_phi: &[f64],
    levels_psi: &[f64],
    norm: Normalization,
    opts: &HessOptions,
) -> Result<ComparisonReport> {
    let q = arity(t, m)?;
    let nu_phi = nu_m_ladder(t, phi, m, levels_phi, norm, opts)?;
    let nu_psi = nu_m_ladder(t, psi, m, levels_psi, norm, opts)?;
    let deep = grid::pseudo_ball_mask(phi, *levels_phi.last().expect("non-empty")).and(&carrier(t));
    let mut l = f64::NEG_INFINITY;
    for i in 0..t.grid.len() {
        if !deep.0[i] || phi.is_pole(i) || psi.is_pole(i) || !phi.mask.0[i] || !psi.mask.0[i] {
            continue;
        }
        if phi.values[i] >= 0.0 {
            return Err(Error::invalid("φ must be negative on its deepest pseudo-ball"));
        }
        l = l.max(psi.values[i] / phi.values[i]);
    }
    if !l.is_finite() || l <= 0.0 {
        return Err(Error::invalid("ratio ψ/φ is not a finite positive number on the deepest shell"));
    }
    let lq = l.powi(q as i32);
    let bound = lq * nu_phi.limit;
    let uncertainty = nu_psi.uncertainty + lq * nu_phi.uncertainty;
    let holds = nu_psi.limit <= bound + uncertainty + 1e-12 * bound.abs();
    let equality_gap = (nu_psi.limit - bound).abs() / bound.abs().max(f64::MIN_POSITIVE);
    Ok(ComparisonReport { l, exponent: q, nu_phi, nu_psi, bound, uncertainty, holds, equality_gap })
}

/// Base grid of the projection forgetting the last `k` axes.
pub fn base_grid(g: &Grid, k: usize) -> Result<Grid> {
    let n = g.dim();
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("projection needs 1 ≤ k < {n}")));
    }
    Grid::new(g.shape()[..n - k].to_vec(), g.origin()[..n - k].to_vec(), g.spacing())
}

/// Sign relating `dx_{K∪F}∧dξ_{L∪F}` on ℝⁿ to `dx_K∧dξ_L` on the base under
/// integration along the fiber axes `F`.
fn fiber_sign(n: usize, k: usize, key: (MultiIndex, MultiIndex)) -> f64 {
    let base_n = n - k;
    let fiber = MultiIndex(((1u32 << n) - (1u32 << base_n)) as u16);
    let bk = MultiIndex(key.0 .0 & !fiber.0);
    let bl = MultiIndex(key.1 .0 & !fiber.0);
    let ck = bk.complement(base_n);
    let cl = bl.complement(base_n);
    let axes: Vec<usize> = (0..base_n).collect();
    let comp = FormValue::monomial(base_n, ck, cl, 1.0);
    let total = wedge(&FormValue::monomial(n, key.0, key.1, 1.0), &comp.embed(n, &axes).expect("dims")).expect("dims").top_coefficient();
    let base = wedge(&FormValue::monomial(base_n, bk, bl, 1.0), &comp).expect("dims").top_coefficient();
    total / base
}

/// Direct image `π_*T` under the projection forgetting the last `k` axes.
pub fn project_current(t: &Current, k: usize) -> Result<Current> {
    let g = &t.grid;
    let n = g.dim();
    let base = base_grid(g, k)?;
    let base_n = n - k;
    let fiber = MultiIndex(((1u32 << n) - (1u32 << base_n)) as u16);
    let fiber_len: usize = g.shape()[base_n..].iter().product();
    let mut c = vec![0usize; n];
    for v in t.coeffs.values() {
        for (i, x) in v.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::invalid("current has undefined coefficients"));
            }
            if *x != 0.0 {
                g.coords_into(i, &mut c);
                if (base_n..n).any(|d| c[d] == 0 || c[d] == g.shape()[d] - 1) {
                    return Err(Error::invalid("support is not compact in the fiber directions"));
                }
            }
        }
    }
    let hk = g.spacing().powi(k as i32);
    let mut out = Current::zero(&base, t.p);
    for (&(kk, ll), v) in &t.coeffs {
        if kk.0 & fiber.0 != fiber.0 || ll.0 & fiber.0 != fiber.0 {
            continue;
        }
        let sign = fiber_sign(n, k, (kk, ll));
        let dens: Vec<f64> = v
            .chunks(fiber_len)
            .map(|chunk| {
                let mut s = NeumaierSum::default();
                for x in chunk {
                    s.add(*x);
                }
                sign * hk * s.value()
            })
            .collect();
        let key = (MultiIndex(kk.0 & !fiber.0), MultiIndex(ll.0 & !fiber.0));
        match out.coeffs.get_mut(&key) {
            Some(acc) => acc.iter_mut().zip(&dens).for_each(|(a, d)| *a += d),
            None => {
                out.coeffs.insert(key, dens);
            }
        }
    }
    for (pos, form, w) in &t.atoms {
        let mut f = FormValue::zero(base_n);
        for (kk, ll, cf) in form.terms() {
            if kk.0 & fiber.0 == fiber.0 && ll.0 & fiber.0 == fiber.0 {
                f.add_term(MultiIndex(kk.0 & !fiber.0), MultiIndex(ll.0 & !fiber.0), cf * fiber_sign(n, k, (kk, ll)));
            }
        }
        out.atoms.push((pos[..base_n].to_vec(), f, *w));
    }
    Ok(out)
}

/// `⟨T, α⟩ = ∫ T∧α` for a test form of complementary bidegree.
pub fn pairing(t: &Current, alpha: &dyn Fn(&[f64]) -> FormValue) -> Result<f64> {
    Ok(pairing_with_scale(t, alpha)?.0)
}

/// `⟨T, α⟩` together with `∫ |T∧α|`, the scale against which cancellation is judged.
pub fn pairing_with_scale(t: &Current, alpha: &dyn Fn(&[f64]) -> FormValue) -> Result<(f64, f64)> {
    let g = &t.grid;
    let mut s = NeumaierSum::default();
    let mut a = NeumaierSum::default();
    let mut x = vec![0.0; g.dim()];
    for i in 0..g.len() {
        let f = t.form_at(i);
        if f.is_zero() {
            continue;
        }
        if f.terms().any(|(_, _, c)| !c.is_finite()) {
            return Err(Error::invalid("current has undefined coefficients"));
        }
        g.point_into(i, &mut x);
        let v = wedge(&f, &alpha(&x))?.top_coefficient();
        s.add(v);
        a.add(v.abs());
    }
    let (mut total, mut scale) = (s.value() * g.cell_volume(), a.value() * g.cell_volume());
    for (p, f, w) in &t.atoms {
        let v = w * wedge(f, &alpha(p))?.top_coefficient();
        total += v;
        scale += v.abs();
    }
    Ok((total, scale))
}

/// Pullback of a constant-coefficient base form along the projection.
pub fn pullback(alpha: &FormValue, n: usize) -> Result<FormValue> {
    let axes: Vec<usize> = (0..alpha.dim()).collect();
    alpha.embed(n, &axes)
}

#[derive(Clone, Debug, Serialize)]
pub struct AdjointReport {
    /// `(⟨π_*T, α⟩, ⟨T, π^*α⟩)` per test form.
    pub pairs: Vec<(f64, f64)>,
    /// Largest `|lhs − rhs| / ∫|T∧π^*α|`.
    pub max_rel_err: f64,
}

/// `⟨π_*T, α⟩ = ⟨T, π^*α⟩` on the supplied base test forms.
pub fn adjoint_check(t: &Current, k: usize, alphas: &[&dyn Fn(&[f64]) -> FormValue]) -> Result<AdjointReport> {
    let n = t.dim();
    let proj = project_current(t, k)?;
    let mut pairs = vec![];
    let mut max_rel_err: f64 = 0.0;
    for alpha in alphas {
        let lhs = pairing(&proj, *alpha)?;
        let lifted = |x: &[f64]| pullback(&alpha(&x[..n - k]), n).expect("dims");
        let (rhs, abs) = pairing_with_scale(t, &lifted)?;
        let scale = abs.max(1e-300);
        max_rel_err = max_rel_err.max((lhs - rhs).abs() / scale);
        pairs.push((lhs, rhs));
    }
    Ok(AdjointReport { pairs, max_rel_err })
}

/// `ψ∘π` on the total grid for a pole-free base field.
pub fn lift_field(psi: &ScalarField, g: &Grid) -> Result<ScalarField> {
    let k = g.dim() - psi.grid.dim();
    let base = base_grid(g, k)?;
    base.check_same(&psi.grid)?;
    if psi.has_poles() {
        return Err(Error::invalid("lift a smoothed weight; poles do not survive the product structure"));
    }
    let fiber_len: usize = g.shape()[g.dim() - k..].iter().product();
    let values = (0..g.len()).map(|i| if psi.mask.0[i / fiber_len] { psi.values[i / fiber_len] } else { f64::NAN }).collect();
    Ok(ScalarField::from_values(g, values))
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportReport {
    /// `ν^{m−k}_{π_*T}(ψ, r)`
    pub base: LelongLadder,
    /// `ν^m_T(ψ∘π, r)`
    pub total: LelongLadder,
    /// `∫_{ψ∘π<r} T∧(dd^#ψ∘π)^{m+p−n}∧(π^*β')^{n−m}` per level.
    pub pulled: Vec<f64>,
    /// `max |base − pulled| / max |pulled|`
    pub pulled_rel_gap: f64,
    pub max_gap: f64,
    pub uncertainty: f64,
}

/// Two-sided ladder for `ν^{m−k}_{π_*T}(ψ) = ν^m_T(ψ∘π)`.
///
/// Pushing forward only moves `(π^*β')^{n−m}` across, not `β^{n−m}`, so the
/// base ladder equals `pulled` exactly; `total` agrees with it only where
/// `T∧β'' = 0`, `β''` being the fiber part of `β`.
pub fn transport_check(t: &Current, k: usize, psi: &ScalarField, m: usize, levels: &[f64], opts: &HessOptions) -> Result<TransportReport> {
    if m <= k {
        return Err(Error::invalid("base level m−k must be at least 1"));
    }
    let proj = project_current(t, k)?;
    let lifted = lift_field(psi, &t.grid)?;
    let base = nu_m_ladder(&proj, psi, m - k, levels, Normalization::Plain, opts)?;
    let total = nu_m_ladder(t, &lifted, m, levels, Normalization::Plain, opts)?;
    let pulled = pulled_masses(t, k, &lifted, m, levels, opts.stencil)?;
    let peak = pulled.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
    let pulled_rel_gap = base.values.iter().zip(&pulled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak;
    let max_gap = base.values.iter().zip(&total.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let uncertainty = base.uncertainty.max(total.uncertainty);
    Ok(TransportReport { base, total, pulled, pulled_rel_gap, max_gap, uncertainty })
}

fn pulled_masses(t: &Current, k: usize, phi: &ScalarField, m: usize, levels: &[f64], stencil: grid::Stencil) -> Result<Vec<f64>> {
    let g = &t.grid;
    let n = g.dim();
    let q = arity(t, m)?;
    if !t.atoms.is_empty() {
        return Err(Error::Unsupported("transport check with atoms".into()));
    }
    let axes: Vec<usize> = (0..n - k).collect();
    let bp = FormValue::beta(n - k).embed(n, &axes)?.pow(n - m);
    let hs = grid::HessianStencil::new(g, stencil);
    let mask = t.valid_mask().and(&grid::stencil_mask(phi, stencil));
    let mut dens = vec![0.0; g.len()];
    for (i, d) in dens.iter_mut().enumerate() {
        let f = t.form_at(i);
        if !mask.0[i] || f.is_zero() {
            continue;
        }
        let mut s = wedge(&f, &bp)?;
        let dd = FormValue::from_matrix(&hs.at(&phi.values, i));
        for _ in 0..q {
            s = wedge(&s, &dd)?;
        }
        *d = s.top_coefficient();
    }
    let mu = Measure { grid: g.clone(), density: dens, atoms: vec![] };
    Ok(levels.iter().map(|&r| grid::integrate(&mu, &grid::pseudo_ball_mask(phi, r))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::unit_ball_volume;
    use crate::superalgebra::factorial;

    #[test]
    fn unit_current_classic_number() {
        let g = Grid::cube(2, 81, 1.0).unwrap();
        let v = nu_classic(&Current::unit(&g), &[0.0, 0.0], 0.8).unwrap();
        // ∫_{𝔹(r)} β² = 2!·π·r², so ν = 2π.
        assert!((v / (2.0 * std::f64::consts::PI) - 1.0).abs() < 0.02, "{v}");
    }

    #[test]
    fn ball_leaving_box_rejected() {
        let g = Grid::cube(2, 21, 1.0).unwrap();
        assert!(nu_classic(&Current::unit(&g), &[0.5, 0.0], 0.8).is_err());
    }

    #[test]
    fn extrapolation_of_linear_ladder_vanishes() {
        let v: Vec<f64> = (0..5).map(|k| 3.0 * 0.5f64.powi(k)).collect();
        let (lim, unc) = extrapolate(&v);
        assert!(lim.abs() < 1e-12);
        assert!((unc - 3.0 * 0.0625).abs() < 1e-12);
    }

    #[test]
    fn unit_current_point_number_is_constant() {
        let g = Grid::cube(3, 41, 1.0).unwrap();
        let lad = m_lelong_point(&Current::unit(&g), &[0.0; 3], 1, &[0.9, 0.8, 0.7]).unwrap();
        let exact = factorial(3) * unit_ball_volume(3);
        for v in &lad.values {
            assert!((v / exact - 1.0).abs() < 0.05, "{v} vs {exact}");
        }
    }

    #[test]
    fn chi_parsing() {
        assert_eq!(Chi::parse("exp:2").unwrap(), Chi::Exp { rate: 2.0 });
        assert_eq!(Chi::parse("affine:2,1").unwrap(), Chi::Affine { slope: 2.0, offset: 1.0 });
        assert!(Chi::parse("cube").is_err());
    }

    #[test]
    fn projection_of_box_indicator() {
        let g = Grid::cube(3, 11, 1.0).unwrap();
        let dens: Vec<f64> = (0..g.len()).map(|i| if g.point(i)[2].abs() < 0.5 { 1.0 } else { 0.0 }).collect();
        let form = FormValue::monomial(3, MultiIndex::from_axes(&[2]).unwrap(), MultiIndex::from_axes(&[2]).unwrap(), 1.0);
        let t = Current::from_form(&g, &form, &dens).unwrap();
        let pt = project_current(&t, 1).unwrap();
        assert!(pt.is_scalar());
        // Nodes at z = −0.4..0.4: five of them, spacing 0.2.
        for v in &pt.coeffs.values().next().unwrap()[..] {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_rejects_fiber_boundary_support() {
        let g = Grid::cube(2, 9, 1.0).unwrap();
        assert!(project_current(&Current::unit(&g), 1).is_err());
    }
}
