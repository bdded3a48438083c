//! Exact pointwise algebra of superforms over the generators
//! `dx_1..dx_n, dξ_1..dξ_n`.
//!
//! A monomial is stored in canonical order `dx_K ∧ dξ_L` with `K` and `L`
//! increasing. Index sets are bitmasks, so dimensions up to 8 are supported,
//! which covers the doubled `(x, y)` space used by the potential engine in n ≤ 4.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Error, Result};

pub const MAX_DIM: usize = 8;

/// Strictly increasing set of axis indices, stored as a bitmask (bit `i` = axis `i`, 0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MultiIndex(pub u16);

impl MultiIndex {
    pub fn empty() -> Self {
        MultiIndex(0)
    }

    pub fn from_axes(axes: &[usize]) -> Result<Self> {
        let mut bits = 0u16;
        let mut last: Option<usize> = None;
        for &a in axes {
            if a >= MAX_DIM {
                return Err(Error::invalid(format!("axis {a} out of range")));
            }
            if let Some(l) = last {
                if a <= l {
                    return Err(Error::invalid("multi-index entries must be strictly increasing"));
                }
            }
            bits |= 1 << a;
            last = Some(a);
        }
        Ok(MultiIndex(bits))
    }

    pub fn full(n: usize) -> Self {
        MultiIndex(((1u32 << n) - 1) as u16)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, axis: usize) -> bool {
        self.0 & (1 << axis) != 0
    }

    pub fn axes(self) -> Vec<usize> {
        (0..MAX_DIM).filter(|&i| self.contains(i)).collect()
    }

    pub fn complement(self, n: usize) -> Self {
        MultiIndex(!self.0 & Self::full(n).0)
    }

    /// All index sets of size `k` in `0..n`, in increasing bitmask order.
    pub fn all_of_size(n: usize, k: usize) -> Vec<MultiIndex> {
        (0u32..(1 << n))
            .filter(|b| b.count_ones() as usize == k)
            .map(|b| MultiIndex(b as u16))
            .collect()
    }
}

/// Number of pairs `(i in a, j in b)` with `i > j`, i.e. the sign parity of
/// concatenating two sorted generator runs.
fn inversions(a: u16, b: u16) -> u32 {
    let mut count = 0;
    let mut bb = b;
    while bb != 0 {
        let j = bb.trailing_zeros();
        let above = if j + 1 >= 16 { 0 } else { a & !((1u16 << (j + 1)) - 1) };
        count += above.count_ones();
        bb &= bb - 1;
    }
    count
}

/// Product of two canonical monomials; `None` when a generator repeats.
pub fn monomial_product(a: (MultiIndex, MultiIndex), b: (MultiIndex, MultiIndex)) -> Option<(f64, (MultiIndex, MultiIndex))> {
    let ((ka, la), (kb, lb)) = (a, b);
    if ka.0 & kb.0 != 0 || la.0 & lb.0 != 0 {
        return None;
    }
    let mut parity = la.len() * kb.len();
    parity += inversions(ka.0, kb.0) as usize;
    parity += inversions(la.0, lb.0) as usize;
    let sign = if parity % 2 == 0 { 1.0 } else { -1.0 };
    Some((sign, (MultiIndex(ka.0 | kb.0), MultiIndex(la.0 | lb.0))))
}

/// Sign convention `σ_k = (−1)^{k(k−1)/2}`.
pub fn sigma_sign(k: usize) -> f64 {
    if (k * k.saturating_sub(1) / 2) % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Sparse superform with constant coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct FormValue {
    dim: usize,
    coeffs: BTreeMap<(MultiIndex, MultiIndex), f64>,
}

impl FormValue {
    pub fn zero(dim: usize) -> Self {
        assert!(dim >= 1 && dim <= MAX_DIM, "dimension {dim} unsupported");
        FormValue { dim, coeffs: BTreeMap::new() }
    }

    pub fn one(dim: usize) -> Self {
        Self::monomial(dim, MultiIndex::empty(), MultiIndex::empty(), 1.0)
    }

    pub fn monomial(dim: usize, k: MultiIndex, l: MultiIndex, c: f64) -> Self {
        let mut f = Self::zero(dim);
        f.add_term(k, l, c);
        f
    }

    /// `dx_i` (0-based axis).
    pub fn dx(dim: usize, i: usize) -> Self {
        Self::monomial(dim, MultiIndex(1 << i), MultiIndex::empty(), 1.0)
    }

    /// `dξ_i` (0-based axis).
    pub fn dxi(dim: usize, i: usize) -> Self {
        Self::monomial(dim, MultiIndex::empty(), MultiIndex(1 << i), 1.0)
    }

    /// `β = Σ dx_i ∧ dξ_i`.
    pub fn beta(dim: usize) -> Self {
        let mut f = Self::zero(dim);
        for i in 0..dim {
            f.add_term(MultiIndex(1 << i), MultiIndex(1 << i), 1.0);
        }
        f
    }

    /// `dx_1∧dξ_1∧…∧dx_n∧dξ_n = β^n/n!`.
    pub fn volume(dim: usize) -> Self {
        let full = MultiIndex::full(dim);
        Self::monomial(dim, full, full, sigma_sign(dim))
    }

    /// Symmetric (1,1)-form `α_A = Σ A_ij dx_i ∧ dξ_j`.
    pub fn from_matrix(a: &SymMatrix) -> Self {
        let n = a.dim();
        let mut f = Self::zero(n);
        for i in 0..n {
            for j in 0..n {
                f.add_term(MultiIndex(1 << i), MultiIndex(1 << j), a.get(i, j));
            }
        }
        f
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add_term(&mut self, k: MultiIndex, l: MultiIndex, c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.coeffs.entry((k, l)).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.coeffs.remove(&(k, l));
        }
    }

    pub fn coeff(&self, k: MultiIndex, l: MultiIndex) -> f64 {
        self.coeffs.get(&(k, l)).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (MultiIndex, MultiIndex, f64)> + '_ {
        self.coeffs.iter().map(|(&(k, l), &c)| (k, l, c))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Bidegree when homogeneous; `None` for the zero form or mixed degrees.
    pub fn bidegree(&self) -> Option<(usize, usize)> {
        let mut it = self.coeffs.keys().map(|(k, l)| (k.len(), l.len()));
        let first = it.next()?;
        if it.all(|d| d == first) {
            Some(first)
        } else {
            None
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut f = Self::zero(self.dim);
        for (k, l, c) in self.terms() {
            f.add_term(k, l, s * c);
        }
        f
    }

    pub fn add(&self, other: &FormValue) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch(self.dim, other.dim));
        }
        let mut f = self.clone();
        for (k, l, c) in other.terms() {
            f.add_term(k, l, c);
        }
        Ok(f)
    }

    pub fn wedge(&self, other: &FormValue) -> Result<Self> {
        wedge(self, other)
    }

    pub fn pow(&self, k: usize) -> Self {
        let mut acc = Self::one(self.dim);
        for _ in 0..k {
            acc = wedge(&acc, self).expect("same dimension");
        }
        acc
    }

    /// Coefficient relative to `dx_1∧dξ_1∧…∧dx_n∧dξ_n`; this is the
    /// superintegral density of a top-degree form.
    pub fn top_coefficient(&self) -> f64 {
        let full = MultiIndex::full(self.dim);
        self.coeff(full, full) * sigma_sign(self.dim)
    }

    /// `max |coefficient|`.
    pub fn max_abs(&self) -> f64 {
        self.coeffs.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// Symmetric when `coeffs(K,L) = coeffs(L,K)` for all keys.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.terms().all(|(k, l, c)| (self.coeff(l, k) - c).abs() <= tol * (1.0 + c.abs()))
    }

    /// Maps `(K, L)` monomials to new dimension via an axis map (used to embed
    /// forms in a larger space).
    pub fn embed(&self, new_dim: usize, axis_map: &[usize]) -> Result<Self> {
        let remap = |m: MultiIndex| -> MultiIndex {
            let mut b = 0u16;
            for a in m.axes() {
                b |= 1 << axis_map[a];
            }
            MultiIndex(b)
        };
        let mut out = Self::zero(new_dim);
        for (k, l, c) in self.terms() {
            // Rebuild each monomial generator by generator so the sign follows
            // the new ordering.
            let mut term = Self::monomial(new_dim, MultiIndex::empty(), MultiIndex::empty(), c);
            for a in k.axes() {
                term = wedge(&term, &Self::dx(new_dim, axis_map[a]))?;
            }
            for a in l.axes() {
                term = wedge(&term, &Self::dxi(new_dim, axis_map[a]))?;
            }
            debug_assert!(term.terms().all(|(kk, ll, _)| kk == remap(k) && ll == remap(l)));
            for (kk, ll, cc) in term.terms() {
                out.add_term(kk, ll, cc);
            }
        }
        Ok(out)
    }
}

impl fmt::Display for FormValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.coeffs.is_empty() {
            return write!(f, "0");
        }
        let render = |m: MultiIndex| m.axes().iter().map(|a| (a + 1).to_string()).collect::<Vec<_>>().join(",");
        let mut first = true;
        for (k, l, c) in self.terms() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c} * dx_{{{}}}^dxi_{{{}}}", render(k), render(l))?;
        }
        Ok(())
    }
}

/// Wedge product; total degree above `2n` yields the zero form.
pub fn wedge(a: &FormValue, b: &FormValue) -> Result<FormValue> {
    if a.dim != b.dim {
        return Err(Error::DimensionMismatch(a.dim, b.dim));
    }
    // Contributions are summed per key in sorted order, so the result does not
    // depend on operand order and α∧β = β∧α holds bit for bit for even forms.
    let mut parts = Vec::with_capacity(a.coeffs.len() * b.coeffs.len());
    for (ka, la, ca) in a.terms() {
        for (kb, lb, cb) in b.terms() {
            if let Some((s, key)) = monomial_product((ka, la), (kb, lb)) {
                parts.push((key, s * (ca * cb)));
            }
        }
    }
    parts.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut out = FormValue::zero(a.dim);
    let mut i = 0;
    while i < parts.len() {
        let key = parts[i].0;
        let mut acc = 0.0;
        while i < parts.len() && parts[i].0 == key {
            acc += parts[i].1;
            i += 1;
        }
        out.add_term(key.0, key.1, acc);
    }
    Ok(out)
}

/// `J(α) = (−1)^q Σ α_KL dξ_K ∧ dx_L` on each `(p,q)` component.
pub fn apply_j(a: &FormValue) -> FormValue {
    let mut out = FormValue::zero(a.dim);
    for (k, l, c) in a.terms() {
        let (p, q) = (k.len(), l.len());
        // dξ_K ∧ dx_L = (−1)^{pq} dx_L ∧ dξ_K
        let parity = q + p * q;
        let s = if parity % 2 == 0 { 1.0 } else { -1.0 };
        out.add_term(l, k, s * c);
    }
    out
}

/// Dense symmetric matrix, stored as the upper triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    n: usize,
    upper: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, upper: vec![0.0; n * (n + 1) / 2] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from a full row-major array, symmetrizing `(A + Aᵀ)/2`.
    pub fn from_rows(n: usize, a: &[f64]) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::invalid("matrix entry count does not match dimension"));
        }
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in i..n {
                m.set(i, j, 0.5 * (a[i * n + j] + a[j * n + i]));
            }
        }
        Ok(m)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + j
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.idx(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.upper[k] = v;
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = self.get(i, j);
            }
        }
        a
    }

    pub fn add_scaled(&self, other: &SymMatrix, s: f64) -> SymMatrix {
        let mut m = self.clone();
        for (a, b) in m.upper.iter_mut().zip(&other.upper) {
            *a += s * b;
        }
        m
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix { n: self.n, upper: self.upper.iter().map(|v| v * s).collect() }
    }

    /// Max absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// Eigenvalues in increasing order (cyclic Jacobi).
    pub fn eigenvalues(&self) -> Vec<f64> {
        jacobi_eigenvalues(self)
    }
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm is below
/// `1e-13` relative to the matrix norm.
pub fn jacobi_eigenvalues(m: &SymMatrix) -> Vec<f64> {
    let n = m.dim();
    let mut a = m.to_dense();
    let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i * n + j] * a[i * n + j]).sum::<f64>().sqrt();
        if off <= 1e-13 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|i| i as f64).product()
}

/// Elementary symmetric polynomials `e_0..e_n` of the given values.
pub fn elementary_symmetric(values: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; values.len() + 1];
    e[0] = 1.0;
    for (i, &v) in values.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            e[k] += v * e[k - 1];
        }
    }
    e
}

/// Determinant of a small dense matrix by Gaussian elimination with partial pivoting.
pub fn det_dense(a: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for c in 0..n {
        let mut piv = c;
        for r in c + 1..n {
            if a[r * n + c].abs() > a[piv * n + c].abs() {
                piv = r;
            }
        }
        if a[piv * n + c] == 0.0 {
            return 0.0;
        }
        if piv != c {
            for k in 0..n {
                a.swap(c * n + k, piv * n + k);
            }
            det = -det;
        }
        let d = a[c * n + c];
        det *= d;
        for r in c + 1..n {
            let f = a[r * n + c] / d;
            if f != 0.0 {
                for k in c..n {
                    a[r * n + k] -= f * a[c * n + k];
                }
            }
        }
    }
    det
}

/// `σ_k` of the eigenvalues computed as the sum of `k×k` principal minors.
/// Polynomial in the entries, so it is exact up to roundoff and needs no
/// eigen-solve; used on hot paths.
pub fn sigma_k_minors(a: &SymMatrix, k: usize) -> f64 {
    let n = a.dim();
    if k == 0 {
        return 1.0;
    }
    if k > n {
        return 0.0;
    }
    let mut total = 0.0;
    let mut buf = [0.0f64; 64];
    for set in MultiIndex::all_of_size(n, k) {
        let ax = set.axes();
        for (r, &i) in ax.iter().enumerate() {
            for (c, &j) in ax.iter().enumerate() {
                buf[r * k + c] = a.get(i, j);
            }
        }
        total += det_dense(&mut buf[..k * k], k);
    }
    total
}

/// Coefficient `c` in `α_A^j ∧ β^{n−j} = c·β^n`, via the eigenvalue fast path
/// `σ_j(λ(A)) / C(n,j)`.
pub fn sigma_pairing(a: &SymMatrix, j: usize) -> Result<f64> {
    let n = a.dim();
    if j == 0 || j > n {
        return Err(Error::invalid(format!("pairing order {j} outside 1..={n}")));
    }
    let e = elementary_symmetric(&a.eigenvalues());
    Ok(e[j] / binomial(n, j))
}

/// The same coefficient computed by expanding the wedge product in the engine.
pub fn sigma_pairing_generic(a: &SymMatrix, j: usize) -> Result<f64> {
    let n = a.dim();
    if j == 0 || j > n {
        return Err(Error::invalid(format!("pairing order {j} outside 1..={n}")));
    }
    let alpha = FormValue::from_matrix(a);
    let beta = FormValue::beta(n);
    let lhs = wedge(&alpha.pow(j), &beta.pow(n - j))?;
    Ok(lhs.top_coefficient() / beta.pow(n).top_coefficient())
}

/// Coefficient of `α_1∧…∧α_k∧β^{n−k}` relative to `β^n`, computed by
/// polarizing `A ↦ σ_k(A)/C(n,k)`.
pub fn mixed_pairing(mats: &[SymMatrix]) -> Result<f64> {
    let k = mats.len();
    let n = match mats.first() {
        Some(m) => m.dim(),
        None => return Ok(1.0),
    };
    if mats.iter().any(|m| m.dim() != n) {
        return Err(Error::invalid("mixed pairing arguments differ in dimension"));
    }
    if k > n {
        return Err(Error::invalid(format!("mixed pairing arity {k} exceeds dimension {n}")));
    }
    Ok(mixed_sigma(mats) / binomial(n, k))
}

/// Polarization of `σ_k`: `(1/k!) Σ_{S⊆[k]} (−1)^{k−|S|} σ_k(Σ_{i∈S} A_i)`.
pub fn mixed_sigma(mats: &[SymMatrix]) -> f64 {
    let k = mats.len();
    if k == 0 {
        return 1.0;
    }
    let n = mats[0].dim();
    if mats.iter().all(|m| m == &mats[0]) {
        return sigma_k_minors(&mats[0], k);
    }
    let mut total = 0.0;
    for s in 1u32..(1 << k) {
        let mut sum = SymMatrix::zeros(n);
        for (i, m) in mats.iter().enumerate() {
            if s & (1 << i) != 0 {
                sum = sum.add_scaled(m, 1.0);
            }
        }
        let sign = if (k - s.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * sigma_k_minors(&sum, k);
    }
    total / factorial(k)
}

/// Engine expansion of `α_1∧…∧α_k∧β^{n−k}` relative to `β^n`.
pub fn mixed_pairing_generic(mats: &[SymMatrix]) -> Result<f64> {
    let n = mats.first().map(|m| m.dim()).ok_or_else(|| Error::invalid("empty argument list"))?;
    let k = mats.len();
    if k > n || mats.iter().any(|m| m.dim() != n) {
        return Err(Error::invalid("mixed pairing arguments inconsistent"));
    }
    let beta = FormValue::beta(n);
    let mut acc = beta.pow(n - k);
    for m in mats {
        acc = wedge(&acc, &FormValue::from_matrix(m))?;
    }
    Ok(acc.top_coefficient() / beta.pow(n).top_coefficient())
}

/// Default scale-aware positivity floor.
pub fn default_tol(a: &SymMatrix) -> f64 {
    1e-10 * (1.0 + a.norm_inf())
}

/// Closed `Γ_m` membership: `sigma_pairing(A, j) ≥ −tol` for `j = 1..m`.
pub fn is_m_positive_form(a: &SymMatrix, m: usize, tol: f64) -> bool {
    let n = a.dim();
    let m = m.min(n);
    let e = elementary_symmetric(&a.eigenvalues());
    (1..=m).all(|j| e[j] / binomial(n, j) >= -tol)
}

#[derive(Clone, Debug, Serialize)]
pub struct PositivityAudit {
    pub trials: usize,
    pub min_pairing: f64,
    pub first_violation: Option<usize>,
    /// `true` only as sampling evidence; a violation is a certificate of non-positivity.
    pub passed: bool,
}

/// Pairs a symmetric `(p,p)`-form with random strongly positive test forms
/// `Π (a_i a_iᵀ)-forms` of complementary degree and records the minimum.
pub fn weak_positivity_audit(v: &FormValue, trials: usize, seed: u64) -> Result<PositivityAudit> {
    let n = v.dim();
    let p = match v.bidegree() {
        Some((p, q)) if p == q => p,
        None if v.is_zero() => 0,
        _ => return Err(Error::invalid("audit needs a (p,p)-form")),
    };
    if !v.is_symmetric(1e-12) {
        return Err(Error::invalid("audit needs a symmetric form"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_pairing = f64::INFINITY;
    let mut first_violation = None;
    let scale = v.max_abs().max(1.0);
    for t in 0..trials {
        let mut test = FormValue::one(n);
        for _ in 0..(n - p) {
            let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut r1 = SymMatrix::zeros(n);
            for i in 0..n {
                for j in i..n {
                    r1.set(i, j, a[i] * a[j]);
                }
            }
            test = wedge(&test, &FormValue::from_matrix(&r1))?;
        }
        let val = wedge(v, &test)?.top_coefficient();
        if val < min_pairing {
            min_pairing = val;
        }
        if val < -1e-12 * scale && first_violation.is_none() {
            first_violation = Some(t);
        }
    }
    Ok(PositivityAudit { trials, min_pairing, first_violation, passed: first_violation.is_none() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_generator_vanishes() {
        let a = FormValue::dx(3, 0);
        assert!(wedge(&a, &a).unwrap().is_zero());
    }

    #[test]
    fn beta_squared_in_two_dims() {
        let b = FormValue::beta(2);
        let b2 = b.pow(2);
        assert_eq!(b2.top_coefficient(), 2.0);
    }

    #[test]
    fn beta_power_top_is_factorial() {
        for n in 1..=4 {
            assert_eq!(FormValue::beta(n).pow(n).top_coefficient(), factorial(n));
        }
    }

    #[test]
    fn j_on_generators() {
        assert_eq!(apply_j(&FormValue::dx(2, 0)), FormValue::dxi(2, 0));
        assert_eq!(apply_j(&FormValue::dxi(2, 0)), FormValue::dx(2, 0).scale(-1.0));
        assert_eq!(apply_j(&FormValue::beta(3)), FormValue::beta(3));
    }

    #[test]
    fn pairing_examples() {
        assert!((sigma_pairing(&SymMatrix::diag(&[2.0, 0.0]), 1).unwrap() - 1.0).abs() < 1e-14);
        assert!((sigma_pairing(&SymMatrix::diag(&[1.0, 2.0, 3.0]), 2).unwrap() - 11.0 / 3.0).abs() < 1e-13);
        assert!((sigma_pairing_generic(&SymMatrix::diag(&[1.0, 2.0, 3.0]), 2).unwrap() - 11.0 / 3.0).abs() < 1e-13);
        let m = mixed_pairing(&[SymMatrix::diag(&[1.0, 0.0]), SymMatrix::diag(&[0.0, 1.0])]).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        let g = mixed_pairing_generic(&[SymMatrix::diag(&[1.0, 0.0]), SymMatrix::diag(&[0.0, 1.0])]).unwrap();
        assert!((g - 0.5).abs() < 1e-15);
        assert!(sigma_pairing(&SymMatrix::identity(3), 0).is_err());
    }

    #[test]
    fn positivity_examples() {
        assert!(is_m_positive_form(&SymMatrix::identity(4), 4, 1e-12));
        assert!(!is_m_positive_form(&SymMatrix::diag(&[1.0, -2.0]), 2, 1e-12));
        assert!(is_m_positive_form(&SymMatrix::diag(&[1.0, -0.5]), 1, 1e-12));
    }

    #[test]
    fn audit_examples() {
        let b = FormValue::beta(3);
        assert!(weak_positivity_audit(&b, 50, 1).unwrap().passed);
        let neg = weak_positivity_audit(&b.scale(-1.0), 5, 1).unwrap();
        assert_eq!(neg.first_violation, Some(0));
        let a = FormValue::from_matrix(&SymMatrix::diag(&[1.0, -3.0]));
        assert!(!weak_positivity_audit(&a, 200, 3).unwrap().passed);
    }

    #[test]
    fn render_text() {
        let f = FormValue::monomial(2, MultiIndex(1), MultiIndex(2), 2.5);
        assert_eq!(f.to_string(), "2.5 * dx_{1}^dxi_{2}");
    }
}
