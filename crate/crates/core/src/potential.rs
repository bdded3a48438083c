//! Local potentials of currents: Newton-kernel convolution of the coefficient
//! densities against the mixed expansion of `β^{n−1}(x−y, ξ−ζ)`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::grid::{self, HessianStencil, Mask, MollifierSpec, ScalarField, Stencil};
use crate::hessmeasure::{self, check_decreasing, Current, HessOptions};
use crate::lelong::LelongLadder;
use crate::numeric::{cube_average_power, unit_ball_volume, NeumaierSum};
use crate::superalgebra::{apply_j, factorial, wedge, weak_positivity_audit, FormValue, MultiIndex};
use crate::{Error, Grid, Result};

type Key = (MultiIndex, MultiIndex);

/// `h(x) = −c_n|x|^{2−n}` sampled on lattice displacements, with the
/// self-cell replaced by its cube average.
#[derive(Clone, Debug)]
pub struct NewtonKernel {
    pub n: usize,
    pub c_n: f64,
    pub h: f64,
    /// Indexed by the squared lattice distance.
    table: Vec<f64>,
}

impl NewtonKernel {
    pub fn new(g: &Grid) -> Result<Self> {
        let n = g.dim();
        if n < 3 {
            return Err(Error::Unsupported("Newton kernels need n ≥ 3 (n = 2 is logarithmic)".into()));
        }
        let c_n = 1.0 / ((n as f64 - 2.0) * unit_ball_volume(n));
        let h = g.spacing();
        let max_d2: usize = g.shape().iter().map(|s| (s - 1) * (s - 1)).sum();
        let mut table: Vec<f64> = (0..=max_d2).map(|d2| -c_n * (d2 as f64).sqrt().powf(2.0 - n as f64) * h.powf(2.0 - n as f64)).collect();
        table[0] = -c_n * cube_average_power(n, 2.0 - n as f64, h);
        Ok(NewtonKernel { n, c_n, h, table })
    }

    /// Kernel value at a lattice displacement of squared length `d2`.
    #[inline]
    pub fn at_d2(&self, d2: usize) -> f64 {
        self.table[d2]
    }

    /// Mass of `Δh`: `(n−2)c_n|S^{n−1}| = n` with the stated `c_n`.
    pub fn delta_mass(&self) -> f64 {
        (self.n as f64 - 2.0) * self.c_n * self.n as f64 * unit_ball_volume(self.n)
    }

    /// Point value `h(x)` for `x ≠ 0`.
    pub fn value(&self, x: &[f64]) -> f64 {
        -self.c_n * x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(2.0 - self.n as f64)
    }
}

/// Source nodes with several density channels, convolved in one pass.
struct Sources {
    coords: Vec<Vec<i32>>,
    /// `values[s * channels + c]`
    values: Vec<f64>,
    channels: usize,
}

impl Sources {
    fn gather(g: &Grid, channels: &[Vec<f64>]) -> Self {
        let nc = channels.len();
        let mut coords = vec![];
        let mut values = vec![];
        let mut c = vec![0usize; g.dim()];
        for i in 0..g.len() {
            if channels.iter().any(|ch| ch[i] != 0.0) {
                g.coords_into(i, &mut c);
                coords.push(c.iter().map(|&v| v as i32).collect());
                values.extend(channels.iter().map(|ch| ch[i]));
            }
        }
        Sources { coords, values, channels: nc }
    }

    /// `out[c][i] = Σ_s h^n K(x_i − y_s) v_c(y_s)`
    fn convolve(&self, g: &Grid, k: &NewtonKernel) -> Vec<Vec<f64>> {
        let nc = self.channels;
        let vol = g.cell_volume();
        let n = g.dim();
        let per_node: Vec<Vec<f64>> = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut c = vec![0usize; n];
                g.coords_into(i, &mut c);
                let mut acc = vec![0.0; nc];
                for (s, ys) in self.coords.iter().enumerate() {
                    let mut d2 = 0i64;
                    for d in 0..n {
                        let e = (c[d] as i32 - ys[d]) as i64;
                        d2 += e * e;
                    }
                    let kv = k.at_d2(d2 as usize);
                    let vals = &self.values[s * nc..(s + 1) * nc];
                    for (a, v) in acc.iter_mut().zip(vals) {
                        *a += kv * v;
                    }
                }
                acc.iter().map(|a| a * vol).collect()
            })
            .collect();
        (0..nc).map(|ch| per_node.iter().map(|v| v[ch]).collect()).collect()
    }
}

/// `Σ_y h^n K(x−y) ρ(y)` on every node.
pub fn newton_convolve(g: &Grid, density: &[f64]) -> Result<Vec<f64>> {
    let k = NewtonKernel::new(g)?;
    Ok(Sources::gather(g, &[density.to_vec()]).convolve(g, &k).pop().expect("one channel"))
}

/// For each output coefficient of `U`, the source coefficients of `T` and
/// the constants they enter with.
fn expansion(n: usize, source_keys: &[Key]) -> Result<BTreeMap<Key, Vec<(Key, f64)>>> {
    let big = 2 * n;
    let mut b = FormValue::zero(big);
    for i in 0..n {
        let dx = FormValue::dx(big, i).add(&FormValue::dx(big, n + i).scale(-1.0))?;
        let dxi = FormValue::dxi(big, i).add(&FormValue::dxi(big, n + i).scale(-1.0))?;
        b = b.add(&wedge(&dx, &dxi)?)?;
    }
    let bpow = b.pow(n - 1);
    let ymask: u16 = (((1u32 << big) - 1) as u16) & !(((1u32 << n) - 1) as u16);
    let xmask: u16 = ((1u32 << n) - 1) as u16;
    let mut vol_y = FormValue::one(big);
    for i in 0..n {
        vol_y = wedge(&vol_y, &wedge(&FormValue::dx(big, n + i), &FormValue::dxi(big, n + i))?)?;
    }
    let mut rows: BTreeMap<Key, Vec<(Key, f64)>> = BTreeMap::new();
    for &(k, l) in source_keys {
        let src = FormValue::monomial(big, MultiIndex(k.0 << n), MultiIndex(l.0 << n), 1.0);
        let prod = wedge(&src, &bpow)?;
        for (a, bb, c) in prod.terms() {
            if a.0 & ymask != ymask || bb.0 & ymask != ymask {
                continue;
            }
            let out = (MultiIndex(a.0 & xmask), MultiIndex(bb.0 & xmask));
            let sign = wedge(&FormValue::monomial(big, out.0, out.1, 1.0), &vol_y)?.coeff(a, bb);
            rows.entry(out).or_default().push(((k, l), c / sign));
        }
    }
    Ok(rows)
}

/// `u = top(U∧β^{p+1})/(p+1)!` weights per coefficient of `U`.
fn trace_weights(n: usize, p1: usize, keys: impl Iterator<Item = Key>) -> Vec<(Key, f64)> {
    let bp = FormValue::beta(n).pow(p1);
    keys.map(|(a, b)| ((a, b), wedge(&FormValue::monomial(n, a, b, 1.0), &bp).expect("dims").top_coefficient() / factorial(p1))).collect()
}

/// Smooth radial cutoff: 1 on `|x−c| ≤ r_in`, 0 on `|x−c| ≥ r_out`.
pub fn cutoff(g: &Grid, center: &[f64], r_in: f64, r_out: f64) -> ScalarField {
    let bump = |t: f64| if t <= 0.0 { 0.0 } else { (-1.0 / t).exp() };
    ScalarField::from_fn(g, |p| {
        let r = grid::dist2(p, center).sqrt();
        let s = (r_out - r) / (r_out - r_in);
        let a = bump(s);
        a / (a + bump(1.0 - s))
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NegativityAudit {
    pub nodes: usize,
    pub trials: usize,
    /// Largest sampled pairing of `U` with a strongly positive test form.
    pub max_pairing: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct PotentialResult {
    /// `U`, bidimension `(p+1,p+1)`.
    pub u: Current,
    /// Diagonal trace `Σ σ_{|I|} U_II`.
    pub trace: ScalarField,
    pub eta: ScalarField,
    /// Nodes where `η ≡ 1`.
    pub inner: Mask,
    pub audit: NegativityAudit,
}

/// `η·T` densities with atoms deposited on their nearest nodes.
fn cutoff_densities(t: &Current, eta: &ScalarField) -> Result<BTreeMap<Key, Vec<f64>>> {
    let g = &t.grid;
    g.check_same(&eta.grid)?;
    if t.dim() < 3 {
        return Err(Error::Unsupported("local potentials need n ≥ 3".into()));
    }
    if eta.values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("cutoff must take values in [0, 1]"));
    }
    let mut out: BTreeMap<Key, Vec<f64>> = t.coeffs.iter().map(|(k, v)| (*k, v.iter().zip(&eta.values).map(|(a, e)| if *e == 0.0 { 0.0 } else { a * e }).collect())).collect();
    for (pos, form, w) in &t.atoms {
        let i = g.nearest_node(pos).ok_or_else(|| Error::invalid("atom outside the grid"))?;
        for (k, l, c) in form.terms() {
            out.entry((k, l)).or_insert_with(|| vec![0.0; g.len()])[i] += w * c * eta.values[i] / g.cell_volume();
        }
    }
    for v in out.values() {
        for (i, x) in v.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::invalid("η·T has undefined coefficients"));
            }
            if *x != 0.0 && g.boundary_depth(i) == 0 {
                return Err(Error::invalid("η·T is not compactly supported in the box"));
            }
        }
    }
    Ok(out)
}

fn audit_negativity(u: &Current, samples: usize, trials: usize, seed: u64) -> Result<NegativityAudit> {
    let g = &u.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_pairing = f64::NEG_INFINITY;
    let mut passed = true;
    let nodes = samples.min(g.len());
    for s in 0..nodes {
        let i = rng.gen_range(0..g.len());
        let f = u.form_at(i);
        let sym = f.add(&apply_j(&f))?.scale(-0.5);
        if sym.is_zero() {
            continue;
        }
        let rep = weak_positivity_audit(&sym, trials, seed.wrapping_add(s as u64))?;
        max_pairing = max_pairing.max(-rep.min_pairing);
        passed &= rep.passed;
    }
    Ok(NegativityAudit { nodes, trials, max_pairing, passed })
}

/// `U(η,T)` with its trace and a sampled weak-negativity audit.
pub fn local_potential(t: &Current, eta: &ScalarField, seed: u64) -> Result<PotentialResult> {
    let g = &t.grid;
    let n = g.dim();
    if t.p == 0 || t.p >= n {
        return Err(Error::invalid(format!("local potentials need 1 ≤ p ≤ n−1, got p={}", t.p)));
    }
    let dens = cutoff_densities(t, eta)?;
    let kernel = NewtonKernel::new(g)?;
    let keys: Vec<Key> = dens.keys().cloned().collect();
    let rows = expansion(n, &keys)?;
    // Convolve whichever side has fewer channels.
    let coeff_fields: BTreeMap<Key, Vec<f64>> = if rows.len() <= keys.len() {
        let channels: Vec<Vec<f64>> = rows
            .values()
            .map(|terms| (0..g.len()).map(|i| terms.iter().map(|(k, c)| c * dens[k][i]).sum()).collect())
            .collect();
        let conv = Sources::gather(g, &channels).convolve(g, &kernel);
        rows.keys().cloned().zip(conv).collect()
    } else {
        let channels: Vec<Vec<f64>> = keys.iter().map(|k| dens[k].clone()).collect();
        let conv = Sources::gather(g, &channels).convolve(g, &kernel);
        let by_key: BTreeMap<Key, &Vec<f64>> = keys.iter().cloned().zip(conv.iter()).collect();
        rows.iter()
            .map(|(out, terms)| (*out, (0..g.len()).map(|i| terms.iter().map(|(k, c)| c * by_key[k][i]).sum()).collect()))
            .collect()
    };
    let mut u = Current::zero(g, t.p + 1);
    u.coeffs = coeff_fields;
    let weights = trace_weights(n, t.p + 1, u.coeffs.keys().cloned());
    let trace_vals: Vec<f64> = (0..g.len()).map(|i| weights.iter().map(|(k, w)| w * u.coeffs[k][i]).sum()).collect();
    let trace = ScalarField::from_values(g, trace_vals);
    let inner = Mask(eta.values.iter().map(|v| *v == 1.0).collect());
    let audit = audit_negativity(&u, 16, 16, seed)?;
    Ok(PotentialResult { u, trace, eta: eta.clone(), inner, audit })
}

/// `((n−p)(n−1)!/p!) ∫ η(y) h(x−y) T∧β^p(y)` by a single convolution.
pub fn trace_potential(t: &Current, eta: &ScalarField) -> Result<ScalarField> {
    let g = &t.grid;
    let n = g.dim();
    let p = t.p;
    if p == 0 || p >= n {
        return Err(Error::invalid("trace potentials need 1 ≤ p ≤ n−1"));
    }
    let dens = cutoff_densities(t, eta)?;
    let mut cut = Current::zero(g, p);
    cut.coeffs = dens;
    let tr = cut.trace_measure();
    let c = (n - p) as f64 * factorial(n - 1) / factorial(p);
    let conv = newton_convolve(g, &tr.density)?;
    Ok(ScalarField::from_values(g, conv.into_iter().map(|v| c * v).collect()))
}

#[derive(Clone, Debug)]
pub struct ResidualResult {
    /// Discrete `dd^#U`, bidimension `(p,p)`.
    pub dd_u: Current,
    /// `dd^#U − η·T`
    pub residual: Current,
    /// Least-squares `κ` in `dd^#U ≈ κ·η·T` on the inner region.
    pub kappa: f64,
    /// `dd^#U − κ·η·T`
    pub fitted_residual: Current,
    /// Inner region eroded by the stencil.
    pub region: Mask,
}

impl ResidualResult {
    /// Coefficientwise sup-norm of a residual on the region.
    pub fn sup_norm(&self, fitted: bool) -> f64 {
        let r = if fitted { &self.fitted_residual } else { &self.residual };
        r.coeffs.values().flat_map(|v| v.iter().zip(&self.region.0).filter(|(_, m)| **m).map(|(x, _)| x.abs())).fold(0.0, f64::max)
    }
}

/// `dd^#U − η·T` on the inner region.
pub fn residual(t: &Current, eta: &ScalarField, pot: &PotentialResult, stencil: Stencil) -> Result<ResidualResult> {
    let g = &t.grid;
    let n = g.dim();
    let dens = cutoff_densities(t, eta)?;
    let region = pot.inner.erode(g, &stencil.displacements(n));
    if region.count() == 0 {
        return Err(Error::invalid("inner region vanishes after erosion by the stencil"));
    }
    let hs = HessianStencil::new(g, stencil);
    let mut dd: BTreeMap<Key, Vec<f64>> = BTreeMap::new();
    for (&(a, b), vals) in &pot.u.coeffs {
        let hess: Vec<Option<crate::SymMatrix>> = (0..g.len()).into_par_iter().map(|i| if region.0[i] { Some(hs.at(vals, i)) } else { None }).collect();
        for i in 0..n {
            for j in 0..n {
                let f = wedge(&FormValue::monomial(n, MultiIndex(1 << i), MultiIndex(1 << j), 1.0), &FormValue::monomial(n, a, b, 1.0))?;
                for (k, l, c) in f.terms() {
                    let dst = dd.entry((k, l)).or_insert_with(|| vec![0.0; g.len()]);
                    for (x, hm) in hess.iter().enumerate() {
                        if let Some(hm) = hm {
                            dst[x] += c * hm.get(i, j);
                        }
                    }
                }
            }
        }
    }
    let mut num = NeumaierSum::default();
    let mut den = NeumaierSum::default();
    for (key, v) in &dd {
        if let Some(s) = dens.get(key) {
            for x in 0..g.len() {
                if region.0[x] {
                    num.add(v[x] * s[x]);
                    den.add(s[x] * s[x]);
                }
            }
        }
    }
    let kappa = if den.value() > 0.0 { num.value() / den.value() } else { f64::NAN };
    let build = |scale: f64| -> Current {
        let mut r = Current::zero(g, t.p);
        let keys: std::collections::BTreeSet<Key> = dd.keys().chain(dens.keys()).cloned().collect();
        for key in keys {
            let v: Vec<f64> = (0..g.len())
                .map(|x| {
                    if !region.0[x] {
                        return 0.0;
                    }
                    dd.get(&key).map_or(0.0, |d| d[x]) - scale * dens.get(&key).map_or(0.0, |s| s[x])
                })
                .collect();
            r.coeffs.insert(key, v);
        }
        r
    };
    let mut dd_u = Current::zero(g, t.p);
    dd_u.coeffs = dd.clone();
    let residual = build(1.0);
    let fitted_residual = build(if kappa.is_finite() { kappa } else { 0.0 });
    Ok(ResidualResult { dd_u, residual, kappa, fitted_residual, region })
}

#[derive(Clone, Debug, Serialize)]
pub struct ProductReport {
    /// `masses[probe][level]` of `U_j∧dd^#v_1^j∧…∧β^{p+1−q}`.
    pub potential_masses: Vec<Vec<f64>>,
    /// Same products with `T_j = (η·T)∗χ_j`.
    pub current_masses: Vec<Vec<f64>>,
    /// `T_j` products weighted by the first ladder.
    pub weighted_masses: Vec<Vec<f64>>,
    pub potential_gap: Vec<f64>,
    pub current_gap: Vec<f64>,
    pub weighted_gap: Vec<f64>,
}

fn last_gap(v: &[f64]) -> f64 {
    match v.len() {
        0 | 1 => 0.0,
        l => (v[l - 1] - v[l - 2]).abs() / v[l - 1].abs().max(f64::MIN_POSITIVE),
    }
}

/// Masses of `U_j∧dd^#v_1^j∧…∧dd^#v_q^j` (and the `T_j` companions) over
/// probes; `scales[j]` is the mollifier of level `j` (`None` keeps `U`).
pub fn potential_product_harness(
    t: &Current,
    pot: &PotentialResult,
    ladders: &[Vec<ScalarField>],
    scales: &[Option<MollifierSpec>],
    probes: &[Mask],
    opts: &HessOptions,
) -> Result<ProductReport> {
    let levels = scales.len();
    if ladders.iter().any(|l| l.len() != levels) {
        return Err(Error::invalid("ladders and scales differ in length"));
    }
    for l in ladders {
        check_decreasing(l)?;
    }
    let q = ladders.len();
    if q > pot.u.p {
        return Err(Error::invalid("too many factors for the bidimension of U"));
    }
    let n = t.dim();
    let dens = cutoff_densities(t, &pot.eta)?;
    let mut cut = Current::zero(&t.grid, t.p);
    cut.coeffs = dens;
    let mut out = ProductReport {
        potential_masses: vec![vec![]; probes.len()],
        current_masses: vec![vec![]; probes.len()],
        weighted_masses: vec![vec![]; probes.len()],
        potential_gap: vec![],
        current_gap: vec![],
        weighted_gap: vec![],
    };
    for j in 0..levels {
        let (uj, tj) = match scales[j] {
            Some(s) => (pot.u.mollify(s)?, cut.mollify(s)?),
            None => (pot.u.clone(), cut.clone()),
        };
        let vs: Vec<ScalarField> = ladders.iter().map(|l| l[j].clone()).collect();
        let (mu_u, _) = hessmeasure::measure_on_smooth(&uj, n, &vs, opts.stencil, None)?;
        let t_factors: Vec<ScalarField> = if q <= t.p { vs.clone() } else { vs[..t.p].to_vec() };
        let (mu_t, _) = hessmeasure::measure_on_smooth(&tj, n, &t_factors, opts.stencil, None)?;
        let mu_w = match vs.first() {
            Some(v0) => Some(hessmeasure::measure_on_smooth(&tj, n, &t_factors[1.min(t_factors.len())..], opts.stencil, Some(v0))?.0),
            None => None,
        };
        for (pi, probe) in probes.iter().enumerate() {
            out.potential_masses[pi].push(grid::integrate(&mu_u, probe));
            out.current_masses[pi].push(grid::integrate(&mu_t, probe));
            if let Some(mu) = &mu_w {
                out.weighted_masses[pi].push(grid::integrate(mu, probe));
            }
        }
    }
    out.potential_gap = out.potential_masses.iter().map(|v| last_gap(v)).collect();
    out.current_gap = out.current_masses.iter().map(|v| last_gap(v)).collect();
    out.weighted_gap = out.weighted_masses.iter().map(|v| last_gap(v)).collect();
    Ok(out)
}

/// `ν_U(x₀, r) = r^{−(p+1)} ∫_{𝔹(x₀,r)} U∧β^{p+1}` from the trace field,
/// integrated on a sub-lattice of spacing `r/sub` (multilinear interpolation),
/// so every radius sees the same relative quadrature.
pub fn potential_lelong_ladder(pot: &PotentialResult, x0: &[f64], radii: &[f64], sub: usize) -> Result<LelongLadder> {
    let g = &pot.trace.grid;
    let n = g.dim();
    let p1 = pot.u.p;
    if radii.windows(2).any(|w| w[1] >= w[0]) || radii.is_empty() {
        return Err(Error::invalid("radii must decrease strictly"));
    }
    let sub = sub.max(2) as i64;
    let mut masses = vec![];
    let mut values = vec![];
    for &r in radii {
        let step = r / sub as f64;
        let mut acc = NeumaierSum::default();
        let mut idx = vec![-sub; n];
        let mut x = vec![0.0; n];
        'outer: loop {
            let d2: i64 = idx.iter().map(|k| k * k).sum();
            if d2 < sub * sub {
                for d in 0..n {
                    x[d] = x0[d] + idx[d] as f64 * step;
                }
                let v = grid::interpolate(&pot.trace, &x).ok_or_else(|| Error::invalid("Lelong ball leaves the trace field"))?;
                acc.add(v);
            }
            let mut d = 0;
            loop {
                if d == n {
                    break 'outer;
                }
                idx[d] += 1;
                if idx[d] <= sub {
                    break;
                }
                idx[d] = -sub;
                d += 1;
            }
        }
        let mass = factorial(p1) * acc.value() * step.powi(n as i32);
        masses.push(mass);
        values.push(mass / r.powi(p1 as i32));
    }
    Ok(LelongLadder::new(radii.to_vec(), masses, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(g: &Grid, r: f64) -> Vec<f64> {
        (0..g.len())
            .map(|i| {
                let s = grid::dist2(&g.point(i), &vec![0.0; g.dim()]) / (r * r);
                if s < 1.0 {
                    (1.0 - s).powi(3)
                } else {
                    0.0
                }
            })
            .collect()
    }

    #[test]
    fn two_dimensions_unsupported() {
        let g = Grid::cube(2, 9, 1.0).unwrap();
        assert!(matches!(NewtonKernel::new(&g), Err(Error::Unsupported(_))));
    }

    #[test]
    fn zero_current_zero_potential() {
        let g = Grid::cube(3, 9, 1.0).unwrap();
        let eta = cutoff(&g, &[0.0; 3], 0.3, 0.8);
        let t = Current::from_form(&g, &FormValue::beta(3), &vec![0.0; g.len()]).unwrap();
        let r = local_potential(&t, &eta, 1).unwrap();
        assert!(r.trace.values.iter().all(|v| *v == 0.0));
        assert!(r.u.coeffs.values().all(|v| v.iter().all(|x| *x == 0.0)));
    }

    #[test]
    fn dual_path_trace_matches() {
        let g = Grid::cube(3, 11, 1.0).unwrap();
        let eta = cutoff(&g, &[0.0; 3], 0.3, 0.7);
        let form = FormValue::from_matrix(&crate::SymMatrix::from_rows(3, &[2.0, 0.3, 0.0, 0.3, 1.0, 0.1, 0.0, 0.1, 1.5]).unwrap());
        let t = Current::from_form(&g, &form, &bump(&g, 0.8)).unwrap();
        let pot = local_potential(&t, &eta, 3).unwrap();
        let tr = trace_potential(&t, &eta).unwrap();
        let scale = tr.max_abs();
        for i in 0..g.len() {
            assert!((pot.trace.values[i] - tr.values[i]).abs() <= 1e-10 * scale);
        }
        assert!(pot.audit.passed);
    }

    #[test]
    fn kernel_laplacian_integrates_to_one() {
        let g = Grid::cube(3, 41, 1.0).unwrap();
        let chi = MollifierSpec::with_scale(0.2).kernel(&g).unwrap();
        let mut src = vec![0.0; g.len()];
        let c = g.index(&[20, 20, 20]);
        for (d, w) in &chi {
            src[(c as isize + g.offset(d)) as usize] = w / g.cell_volume();
        }
        let conv = newton_convolve(&g, &src).unwrap();
        let lap = grid::laplacian(&ScalarField::from_values(&g, conv));
        let inner = Mask::ball(&g, &[0.0; 3], 0.5);
        let total: f64 = (0..g.len()).filter(|&i| inner.0[i]).map(|i| lap.values[i]).sum::<f64>() * g.cell_volume();
        let k = NewtonKernel::new(&g).unwrap();
        assert!((k.delta_mass() - 3.0).abs() < 1e-12);
        assert!((total / k.delta_mass() - 1.0).abs() < 1e-3, "{total}");
    }
}
