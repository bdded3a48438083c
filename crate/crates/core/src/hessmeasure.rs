//! The measure `T∧β^{n−m}∧dd^#u_1∧…∧dd^#u_k` on a grid.
//!
//! Densities are superintegral densities: the coefficient of the top-degree
//! form relative to `dx_1∧dξ_1∧…∧dx_n∧dξ_n`, so `T = 1`, `u = |x|²/2`
//! gives `n!` (that is, 1 in the `β^n` pairing normalization).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{self, HessianStencil, Mask, Measure, MollifierSpec, ScalarField, Stencil};
use crate::mconvex;
use crate::numeric::NeumaierSum;
use crate::superalgebra::{self, factorial, mixed_sigma, sigma_k_minors, wedge, FormValue, MultiIndex, SymMatrix};
use crate::{Error, Grid, Result};

/// Order-zero `(p,p)`-current: coefficient densities of bidegree `(n−p, n−p)`
/// plus point atoms.
#[derive(Clone, Debug)]
pub struct Current {
    pub grid: Grid,
    pub p: usize,
    pub coeffs: BTreeMap<(MultiIndex, MultiIndex), Vec<f64>>,
    pub atoms: Vec<(Vec<f64>, FormValue, f64)>,
}

impl Current {
    /// `T = 1`, bidimension `(n,n)`.
    pub fn unit(g: &Grid) -> Self {
        Self::scalar(g, vec![1.0; g.len()])
    }

    pub fn scalar(g: &Grid, density: Vec<f64>) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert((MultiIndex::empty(), MultiIndex::empty()), density);
        Current { grid: g.clone(), p: g.dim(), coeffs, atoms: vec![] }
    }

    pub fn zero(g: &Grid, p: usize) -> Self {
        Current { grid: g.clone(), p, coeffs: BTreeMap::new(), atoms: vec![] }
    }

    /// `density(x) · form` for a constant symmetric form of bidegree `(n−p,n−p)`.
    pub fn from_form(g: &Grid, form: &FormValue, density: &[f64]) -> Result<Self> {
        let n = g.dim();
        let (q, q2) = form.bidegree().unwrap_or((0, 0));
        if q != q2 || form.dim() != n {
            return Err(Error::invalid("current needs a (q,q)-form of the grid dimension"));
        }
        let mut t = Current::zero(g, n - q);
        for (k, l, c) in form.terms() {
            t.coeffs.insert((k, l), density.iter().map(|d| c * d).collect());
        }
        Ok(t)
    }

    /// `density(x)·(dd^# w)(x)` for a field `w`, using its discrete Hessian.
    pub fn from_hessian(w: &ScalarField, density: &[f64], stencil: Stencil) -> Result<Self> {
        let g = &w.grid;
        let n = g.dim();
        let hf = grid::hessian_with(w, stencil)?;
        let mut t = Current::zero(g, n - 1);
        for i in 0..n {
            for j in 0..n {
                let v: Vec<f64> = (0..g.len()).map(|x| if hf.mask.0[x] { density[x] * hf.get(x).get(i, j) } else { f64::NAN }).collect();
                t.coeffs.insert((MultiIndex(1 << i), MultiIndex(1 << j)), v);
            }
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn bidegree(&self) -> usize {
        self.dim() - self.p
    }

    pub fn is_scalar(&self) -> bool {
        self.p == self.dim() && self.coeffs.keys().all(|(k, l)| k.is_empty() && l.is_empty())
    }

    pub fn form_at(&self, i: usize) -> FormValue {
        let mut f = FormValue::zero(self.dim());
        for ((k, l), v) in &self.coeffs {
            f.add_term(*k, *l, v[i]);
        }
        f
    }

    /// Nodes where every coefficient is finite.
    pub fn valid_mask(&self) -> Mask {
        Mask((0..self.grid.len()).map(|i| self.coeffs.values().all(|v| v[i].is_finite())).collect())
    }

    /// Nodes where some coefficient is non-zero.
    pub fn support(&self) -> Mask {
        Mask((0..self.grid.len()).map(|i| self.coeffs.values().any(|v| v[i] != 0.0 && !v[i].is_nan())).collect())
    }

    pub fn mollify(&self, spec: MollifierSpec) -> Result<Current> {
        let mut out = Current::zero(&self.grid, self.p);
        for (key, v) in &self.coeffs {
            let f = ScalarField::from_values(&self.grid, v.clone());
            let m = grid::mollify(&f, spec)?;
            out.coeffs.insert(*key, m.values);
        }
        out.atoms = self.atoms.clone();
        Ok(out)
    }

    /// Trace measure `T∧β^p`.
    pub fn trace_measure(&self) -> Measure {
        let n = self.dim();
        let bp = FormValue::beta(n).pow(self.p);
        let table: Vec<((MultiIndex, MultiIndex), f64)> = self
            .coeffs
            .keys()
            .map(|&(k, l)| {
                let c = wedge(&FormValue::monomial(n, k, l, 1.0), &bp).expect("dims").top_coefficient();
                ((k, l), c)
            })
            .collect();
        let density = (0..self.grid.len())
            .map(|i| table.iter().map(|(key, c)| c * self.coeffs[key][i]).sum())
            .collect();
        let atoms = self.atoms.iter().map(|(p, f, w)| (p.clone(), w * wedge(f, &bp).expect("dims").top_coefficient())).collect();
        Measure { grid: self.grid.clone(), density, atoms }
    }
}

/// Options for [`hessian_measure`].
#[derive(Clone, Debug)]
pub struct HessOptions {
    pub stencil: Stencil,
    /// Finest mollifier for fields with poles.
    pub mollifier: Option<MollifierSpec>,
    /// Coarse level scale = `ladder_factor ×` fine scale.
    pub ladder_factor: f64,
    pub check_convexity: bool,
    /// Relative Γ_m tolerance for the factor check (finite-difference aware).
    pub convexity_tol: f64,
    pub audit_trials: usize,
    pub seed: u64,
}

impl Default for HessOptions {
    fn default() -> Self {
        HessOptions { stencil: Stencil::Second, mollifier: None, ladder_factor: 1.5, check_convexity: true, convexity_tol: 1e-3, audit_trials: 32, seed: 7 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HessDiagnostics {
    pub scales: Vec<f64>,
    pub masses: Vec<f64>,
    pub cauchy_gap: f64,
}

#[derive(Clone, Debug)]
pub struct HessResult {
    pub measure: Measure,
    pub mask: Mask,
    pub diagnostics: HessDiagnostics,
}

/// Pointwise evaluator of the measure density for fixed `(T, m, k)`.
struct DensityKernel {
    n: usize,
    scalar_t: bool,
    fill: usize,
    /// `T`-monomial ∧ `β^{n−m}` expansions, for the general path.
    t_times_beta: Vec<((MultiIndex, MultiIndex), FormValue)>,
}

impl DensityKernel {
    fn new(t: &Current, m: usize, k: usize) -> Result<Self> {
        let n = t.dim();
        let p = t.p;
        if m == 0 || m > n {
            return Err(Error::invalid(format!("level m={m} outside 1..={n}")));
        }
        if m + p < n {
            return Err(Error::invalid("arity m+p−n is negative"));
        }
        let arity = m + p - n;
        if k > arity {
            return Err(Error::invalid(format!("{k} factors exceed arity {arity}")));
        }
        let bnm = FormValue::beta(n).pow(n - m);
        let t_times_beta = t.coeffs.keys().map(|&(a, b)| ((a, b), wedge(&FormValue::monomial(n, a, b, 1.0), &bnm).expect("dims"))).collect();
        Ok(DensityKernel { n, scalar_t: t.is_scalar(), fill: arity - k, t_times_beta })
    }

    /// Density at a node given `T`'s coefficients there and the factor Hessians.
    fn eval(&self, tcoef: &[f64], hs: &[SymMatrix]) -> f64 {
        let n = self.n;
        if self.scalar_t {
            let mut mats: Vec<SymMatrix> = hs.to_vec();
            for _ in 0..self.fill {
                mats.push(SymMatrix::identity(n));
            }
            let kk = mats.len();
            let sig = if kk == 0 { 1.0 } else if mats.iter().all(|m| m == &mats[0]) { sigma_k_minors(&mats[0], kk) } else { mixed_sigma(&mats) };
            // α_1∧…∧α_k∧β^{n−k} = (σ/C(n,k))·β^n and β^n has density n!.
            let nk = superalgebra::binomial(n, kk);
            return tcoef[0] * factorial(n) * sig / nk;
        }
        let mut s = FormValue::zero(n);
        for (c, (_, f)) in tcoef.iter().zip(&self.t_times_beta) {
            if *c != 0.0 {
                s = s.add(&f.scale(*c)).expect("dims");
            }
        }
        for hm in hs {
            s = wedge(&s, &FormValue::from_matrix(hm)).expect("dims");
        }
        if self.fill > 0 {
            s = wedge(&s, &FormValue::beta(n).pow(self.fill)).expect("dims");
        }
        s.top_coefficient()
    }
}

/// Evaluates the measure on fields that are already finite on their masks.
pub(crate) fn measure_on_smooth(t: &Current, m: usize, us: &[ScalarField], stencil: Stencil, weight: Option<&ScalarField>) -> Result<(Measure, Mask)> {
    let g = &t.grid;
    let k = us.len();
    let kernel = DensityKernel::new(t, m, k)?;
    let mut mask = t.valid_mask();
    for u in us {
        g.check_same(&u.grid)?;
        mask = mask.and(&grid::stencil_mask(u, stencil));
    }
    if let Some(w) = weight {
        mask = mask.and(&w.mask);
    }
    let hs = HessianStencil::new(g, stencil);
    let keys: Vec<&Vec<f64>> = t.coeffs.values().collect();
    let density: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            if !mask.0[i] {
                return 0.0;
            }
            let tc: Vec<f64> = keys.iter().map(|v| v[i]).collect();
            if tc.iter().all(|c| *c == 0.0) {
                return 0.0;
            }
            let mats: Vec<SymMatrix> = us.iter().map(|u| hs.at(&u.values, i)).collect();
            let d = kernel.eval(&tc, &mats);
            match weight {
                Some(w) => d * w.values[i],
                None => d,
            }
        })
        .collect();
    let mut atoms = vec![];
    for (p, form, wgt) in &t.atoms {
        if let Some(i) = g.nearest_node(p) {
            if us.iter().all(|u| grid::stencil_mask(u, stencil).0[i]) {
                let mut s = wedge(form, &FormValue::beta(g.dim()).pow(g.dim() - m))?;
                for u in us {
                    s = wedge(&s, &FormValue::from_matrix(&hs.at(&u.values, i)))?;
                }
                if kernel.fill > 0 {
                    s = wedge(&s, &FormValue::beta(g.dim()).pow(kernel.fill))?;
                }
                atoms.push((p.clone(), wgt * s.top_coefficient()));
            }
        }
    }
    Ok((Measure { grid: g.clone(), density, atoms }, mask))
}

fn check_factors(us: &[ScalarField], m: usize, opts: &HessOptions) -> Result<()> {
    if !opts.check_convexity {
        return Ok(());
    }
    for (idx, u) in us.iter().enumerate() {
        let rep = mconvex::is_m_convex_with(u, m, opts.convexity_tol, opts.stencil, None)?;
        if !rep.passed {
            return Err(Error::invalid(format!(
                "factor {idx} is not {m}-convex: σ_{} = {:.3e} (relative) at node {:?}",
                rep.worst_order, rep.worst_value, rep.worst_node
            )));
        }
    }
    Ok(())
}

fn audit_base(t: &Current, m: usize, opts: &HessOptions) -> Result<()> {
    if t.is_scalar() {
        if t.coeffs.values().next().map(|v| v.iter().any(|x| *x < 0.0)).unwrap_or(false) {
            return Err(Error::invalid("T∧β^{n−m} fails the positivity audit (negative density)"));
        }
        return Ok(());
    }
    let n = t.dim();
    let bnm = FormValue::beta(n).pow(n - m);
    // Audit the nodes carrying the largest coefficients.
    let mut nodes: Vec<(f64, usize)> = (0..t.grid.len()).map(|i| (t.form_at(i).max_abs(), i)).filter(|(v, _)| v.is_finite() && *v > 0.0).collect();
    nodes.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, i) in nodes.iter().take(4) {
        let f = wedge(&t.form_at(i), &bnm)?;
        let rep = superalgebra::weak_positivity_audit(&f, opts.audit_trials, opts.seed)?;
        if !rep.passed {
            return Err(Error::invalid(format!("T∧β^{{n−m}} fails the positivity audit at node {i}")));
        }
    }
    Ok(())
}

/// `T∧β^{n−m}∧dd^#u_1∧…∧dd^#u_k`. Fields with poles are mollified at two
/// scales; the finer level is returned and both masses are recorded.
pub fn hessian_measure(t: &Current, m: usize, us: &[ScalarField], opts: &HessOptions) -> Result<HessResult> {
    audit_base(t, m, opts)?;
    let has_poles = us.iter().any(|u| u.has_poles());
    if !has_poles {
        check_factors(us, m, opts)?;
        let (measure, mask) = measure_on_smooth(t, m, us, opts.stencil, None)?;
        let mass = measure.total_mass();
        return Ok(HessResult { measure, mask, diagnostics: HessDiagnostics { scales: vec![0.0], masses: vec![mass], cauchy_gap: 0.0 } });
    }
    let fine = opts.mollifier.ok_or_else(|| Error::invalid("fields with poles need a mollifier scale"))?;
    let coarse = MollifierSpec::with_scale(fine.scale * opts.ladder_factor);
    let mut masses = vec![];
    let mut last = None;
    for spec in [coarse, fine] {
        let smooth: Vec<ScalarField> = us.iter().map(|u| if u.has_poles() { grid::mollify(u, spec) } else { Ok(u.clone()) }).collect::<Result<_>>()?;
        check_factors(&smooth, m, opts)?;
        let (measure, mask) = measure_on_smooth(t, m, &smooth, opts.stencil, None)?;
        masses.push(measure.total_mass());
        last = Some((measure, mask));
    }
    let (measure, mask) = last.expect("two levels");
    let gap = (masses[1] - masses[0]).abs() / masses[1].abs().max(f64::MIN_POSITIVE);
    Ok(HessResult { measure, mask, diagnostics: HessDiagnostics { scales: vec![coarse.scale, fine.scale], masses, cauchy_gap: gap } })
}

/// Same measure restricted to a region, mass only; streams over nodes so very
/// large grids never hold a matrix field.
pub fn region_mass(t: &Current, m: usize, us: &[ScalarField], stencil: Stencil, region: &Mask) -> Result<f64> {
    let (mu, mask) = measure_on_smooth(t, m, us, stencil, None)?;
    let missing = region.and_not(&mask).count();
    if missing > 0 {
        return Err(Error::invalid(format!("{missing} region nodes lie outside the stencil mask")));
    }
    Ok(grid::integrate(&mu, region))
}

#[derive(Clone, Debug, Serialize)]
pub struct ClnReport {
    pub ratio: f64,
    pub scaled_ratio: f64,
    pub scale_invariant: bool,
    pub mass_k: f64,
    pub sup_norms: Vec<f64>,
    pub base_mass_l: f64,
}

fn abs_mass(mu: &Measure, region: &Mask) -> f64 {
    let mut s = NeumaierSum::default();
    for (d, m) in mu.density.iter().zip(&region.0) {
        if *m {
            s.add(d.abs());
        }
    }
    s.value() * mu.grid.cell_volume()
}

/// Ratio `‖T∧β^{n−m}∧dd^#u…‖_K / (Π‖u_i‖_{L∞(L)}·‖T∧β^{n−m}‖_L)`.
pub fn cln_audit(t: &Current, m: usize, us: &[ScalarField], k_mask: &Mask, l_mask: &Mask, opts: &HessOptions) -> Result<ClnReport> {
    let g = &t.grid;
    let inner_l = l_mask.erode(g, &Stencil::Second.displacements(g.dim()));
    if !k_mask.is_subset_of(&inner_l) {
        return Err(Error::invalid("K must lie in the interior of L"));
    }
    let ratio_of = |fields: &[ScalarField]| -> Result<(f64, f64, Vec<f64>, f64)> {
        let r = hessian_measure(t, m, fields, opts)?;
        let mass_k = abs_mass(&r.measure, k_mask);
        let sups: Vec<f64> = fields.iter().map(|u| u.max_abs_on(l_mask)).collect();
        let (base, _) = measure_on_smooth(t, m, &[], opts.stencil, None)?;
        let base_l = abs_mass(&base, l_mask);
        let denom: f64 = sups.iter().product::<f64>() * base_l;
        Ok((mass_k / denom, mass_k, sups, base_l))
    };
    let (ratio, mass_k, sup_norms, base_mass_l) = ratio_of(us)?;
    let mut scaled = us.to_vec();
    if let Some(first) = scaled.first_mut() {
        *first = first.scale(2.0);
    }
    let (scaled_ratio, _, _, _) = ratio_of(&scaled)?;
    let scale_invariant = (scaled_ratio - ratio).abs() <= 1e-10 * ratio.abs().max(1e-300);
    Ok(ClnReport { ratio, scaled_ratio, scale_invariant, mass_k, sup_norms, base_mass_l })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    /// `masses[probe][level]`
    pub masses: Vec<Vec<f64>>,
    pub weighted_masses: Vec<Vec<f64>>,
    pub monotone: Vec<bool>,
    pub cauchy_gap: Vec<f64>,
    pub weighted_cauchy_gap: Vec<f64>,
}

pub(crate) fn check_decreasing(seq: &[ScalarField]) -> Result<()> {
    for (j, w) in seq.windows(2).enumerate() {
        w[0].grid.check_same(&w[1].grid)?;
        let common = w[0].mask.and(&w[1].mask);
        let bad = (0..w[0].values.len()).find(|&i| common.0[i] && w[1].values[i] > w[0].values[i] + 1e-12 * (1.0 + w[0].values[i].abs()));
        if let Some(i) = bad {
            return Err(Error::invalid(format!("ladder increases between levels {j} and {} at node {i}", j + 1)));
        }
    }
    Ok(())
}

fn is_monotone(v: &[f64]) -> bool {
    let up = v.windows(2).all(|w| w[1] >= w[0] - 1e-12 * w[0].abs());
    let down = v.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs());
    up || down
}

fn rel_gap(v: &[f64]) -> f64 {
    match v.len() {
        0 | 1 => 0.0,
        l => (v[l - 1] - v[l - 2]).abs() / v[l - 1].abs().max(f64::MIN_POSITIVE),
    }
}

/// Masses of the measure along decreasing ladders (`ladders[i][j]` is factor
/// `i` at level `j`), plus the variant weighted by the first factor.
pub fn convergence_harness(t: &Current, m: usize, ladders: &[Vec<ScalarField>], probes: &[Mask], opts: &HessOptions) -> Result<ConvergenceReport> {
    let levels = ladders.first().map(|l| l.len()).unwrap_or(0);
    if ladders.iter().any(|l| l.len() != levels) {
        return Err(Error::invalid("ladders differ in length"));
    }
    for l in ladders {
        check_decreasing(l)?;
    }
    let mut masses = vec![vec![]; probes.len()];
    let mut weighted = vec![vec![]; probes.len()];
    for j in 0..levels {
        let us: Vec<ScalarField> = ladders.iter().map(|l| l[j].clone()).collect();
        let r = hessian_measure(t, m, &us, opts)?;
        let w = if us.is_empty() {
            None
        } else {
            let (mu, _) = measure_on_smooth(t, m, &us[1..], opts.stencil, Some(&us[0]))?;
            Some(mu)
        };
        for (pi, probe) in probes.iter().enumerate() {
            masses[pi].push(grid::integrate(&r.measure, probe));
            if let Some(mu) = &w {
                weighted[pi].push(grid::integrate(mu, probe));
            }
        }
    }
    Ok(ConvergenceReport {
        monotone: masses.iter().map(|v| is_monotone(v)).collect(),
        cauchy_gap: masses.iter().map(|v| rel_gap(v)).collect(),
        weighted_cauchy_gap: weighted.iter().map(|v| rel_gap(v)).collect(),
        masses,
        weighted_masses: weighted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_current_quadratic_density() {
        let g = Grid::cube(3, 9, 1.0).unwrap();
        let u = ScalarField::from_fn(&g, |p| 0.5 * p.iter().map(|x| x * x).sum::<f64>());
        for m in 1..=3 {
            let r = hessian_measure(&Current::unit(&g), m, &vec![u.clone(); m], &HessOptions::default()).unwrap();
            for i in 0..g.len() {
                if r.mask.0[i] {
                    assert!((r.measure.density[i] - 6.0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn empty_product_is_trace() {
        let g = Grid::cube(3, 7, 1.0).unwrap();
        let form = FormValue::from_matrix(&SymMatrix::diag(&[1.0, 2.0, 0.5]));
        let t = Current::from_form(&g, &form, &vec![1.0; g.len()]).unwrap();
        let r = hessian_measure(&t, 3, &[], &HessOptions::default()).unwrap();
        let tr = t.trace_measure();
        for i in 0..g.len() {
            assert!((r.measure.density[i] - tr.density[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn arity_violation_rejected() {
        let g = Grid::cube(2, 7, 1.0).unwrap();
        let u = ScalarField::from_fn(&g, |p| p[0] * p[0]);
        assert!(hessian_measure(&Current::unit(&g), 1, &[u.clone(), u], &HessOptions::default()).is_err());
    }
}
