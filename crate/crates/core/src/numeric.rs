//! Small numerical helpers: compensated sums, Gauss-Legendre rules and
//! cube averages of radial singular functions.

/// Neumaier-compensated running sum. Order-dependent by design: callers feed
/// values in lexicographic node order to keep results bit-stable.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = NeumaierSum::default();
    for v in it {
        s.add(v);
    }
    s.value()
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` (Newton on the Legendre recurrence).
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    let legendre = |z: f64| {
        let (mut p0, mut p1) = (1.0, z);
        for j in 2..=k {
            let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
            p0 = p1;
            p1 = p2;
        }
        if k == 1 {
            (z, 1.0)
        } else {
            (p1, p0)
        }
    };
    let mut x = vec![0.0; k];
    let mut w = vec![0.0; k];
    for i in 0..k {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (pk, pkm1) = legendre(z);
            let dp = k as f64 * (z * pk - pkm1) / (z * z - 1.0);
            let dz = pk / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (pk, pkm1) = legendre(z);
        let dp = k as f64 * (z * pk - pkm1) / (z * z - 1.0);
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Tensor Gauss-Legendre integral of `f` over the box `[lo, hi]`.
pub fn box_integral(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], k: usize) -> f64 {
    let n = lo.len();
    let (gx, gw) = gauss_legendre(k);
    let mut idx = vec![0usize; n];
    let mut pt = vec![0.0; n];
    let mut acc = NeumaierSum::default();
    let jac: f64 = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).product();
    loop {
        let mut w = jac;
        for d in 0..n {
            pt[d] = 0.5 * (lo[d] + hi[d]) + 0.5 * (hi[d] - lo[d]) * gx[idx[d]];
            w *= gw[idx[d]];
        }
        acc.add(w * f(&pt));
        let mut d = 0;
        loop {
            if d == n {
                return acc.value();
            }
            idx[d] += 1;
            if idx[d] < k {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Integral of `f` over the shell `[0,1]^n \ [0,1/2]^n`, split into the
/// `2^n − 1` dyadic boxes so the integrand is smooth on each.
fn unit_shell_integral(n: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let mut total = 0.0;
    for mask in 1u32..(1 << n) {
        let lo: Vec<f64> = (0..n).map(|d| if mask & (1 << d) != 0 { 0.5 } else { 0.0 }).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + 0.5).collect();
        total += box_integral(f, &lo, &hi, 16);
    }
    total
}

/// Average of `|x|^d` over the cube of side `h` centred at the origin
/// (`d > −n`), via the self-similar split `I = J + 2^{−(n+d)} I`.
pub fn cube_average_power(n: usize, d: f64, h: f64) -> f64 {
    assert!(n as f64 + d > 0.0, "non-integrable exponent");
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let j = unit_shell_integral(n, &|x| norm(x).powf(d));
    // I over [0,1]^n; the cube [−1/2,1/2]^n is 2^n copies of [0,1/2]^n.
    let i_unit = j / (1.0 - 2f64.powf(-(n as f64 + d)));
    let half_orthant = 2f64.powf(-(n as f64 + d)) * i_unit;
    let avg_unit_cube = 2f64.powi(n as i32) * half_orthant;
    avg_unit_cube * h.powf(d)
}

/// Average of `log|x|` over the cube of side `h` centred at the origin.
pub fn cube_average_log(n: usize, h: f64) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let j = unit_shell_integral(n, &|x| norm(x).ln());
    // L = ∫_{[0,1]^n} log|x|; L = J + 2^{−n}(L + log(1/2)).
    let l = (j - 2f64.powi(-(n as i32)) * std::f64::consts::LN_2) / (1.0 - 2f64.powi(-(n as i32)));
    // Average over [0,1/2]^n: 2^n ∫_{[0,1/2]^n} = L + log(1/2).
    let avg_unit_cube = l - std::f64::consts::LN_2;
    avg_unit_cube + h.ln()
}

/// Volume of the unit ball in ℝⁿ.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * 2.0 * std::f64::consts::PI / n as f64,
    }
}

/// Surface area of the unit sphere in ℝⁿ.
pub fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(6);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(10)).sum();
        assert!((s - 2.0 / 11.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cube_average_of_square_norm() {
        // |x|^2 averages to n/12 over the unit cube.
        for n in 2..=4 {
            let a = cube_average_power(n, 2.0, 1.0);
            assert!((a - n as f64 / 12.0).abs() < 1e-12, "{n}: {a}");
        }
    }

    #[test]
    fn cube_average_singular_in_two_dims() {
        // Independent oracle: polar-split integral of 1/|x| over [0,1/2]^2 is ln(1+√2).
        let a = cube_average_power(2, -1.0, 1.0);
        let exact = 4.0 * (1.0f64 + 2f64.sqrt()).ln();
        assert!((a - exact).abs() < 1e-10, "{a} vs {exact}");
    }

    #[test]
    fn cube_average_log_in_one_dim_matches_closed_form() {
        // ∫_{-1/2}^{1/2} ln|x| dx = ln(1/2) − 1.
        let a = cube_average_log(1, 1.0);
        assert!((a - (0.5f64.ln() - 1.0)).abs() < 1e-12, "{a}");
        let b = cube_average_log(1, 0.1);
        assert!((b - (0.05f64.ln() - 1.0)).abs() < 1e-12, "{b}");
    }

    #[test]
    fn ball_volumes() {
        assert!((unit_ball_volume(2) - std::f64::consts::PI).abs() < 1e-15);
        assert!((unit_ball_volume(4) - std::f64::consts::PI.powi(2) / 2.0).abs() < 1e-14);
    }
}
