//! Ordered-loss weights.
//!
//! For a data set of `n` samples, mini-batches of size `s` drawn uniformly
//! without replacement and the top `q` batch members (by loss) selected,
//! `γ_j` is the probability that the sample ranked `j`-th by loss ends up in
//! the selected set:
//!
//! ```text
//! γ_j = Σ_{l=0}^{q-1} C(j-1, l) · C(n-j, s-l-1) / C(n, s)
//! ```
//!
//! Weights are computed exactly as integer numerators over the common
//! denominator `C(n, s)` and rounded to `f64` once. For `n` above
//! [`EXACT_LIMIT`] a log-space floating path is used instead and the result is
//! flagged approximate.
//!
//! As `n → ∞` with `j/n = z`, `n·γ_j` approaches
//! `γ(z) = Σ_{l<q} z^l (1-z)^{s-l-1} s!/(l!(s-l-1)!)`, and `1 - γ(z)/s` is the
//! CDF of `Beta(q, s-q)`.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use statrs::function::beta::ln_beta;
use statrs::function::factorial::ln_binomial;

use crate::error::{invalid, Result};

/// Largest `n` for which [`gamma_weights_auto`] and [`gamma_rescaled_curve`]
/// use exact arithmetic.
pub const EXACT_LIMIT: usize = 10_000;

/// Validates `1 ≤ q ≤ s ≤ n`.
pub fn check_nsq(n: usize, s: usize, q: usize) -> Result<()> {
    if q == 0 || q > s || s > n {
        return Err(invalid(format!(
            "need 1 <= q <= s <= n, got n={n}, s={s}, q={q}"
        )));
    }
    Ok(())
}

/// Exact weights as numerators over a shared denominator `C(n, s)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactGamma {
    pub numerators: Vec<BigUint>,
    pub denominator: BigUint,
}

impl ExactGamma {
    /// `γ_{j}` as a reduced rational, `j` 1-based.
    pub fn rational(&self, j: usize) -> BigRational {
        BigRational::new(
            BigInt::from(self.numerators[j - 1].clone()),
            BigInt::from(self.denominator.clone()),
        )
    }
}

/// The weights `γ_1..γ_n` for a tuple `(n, s, q)`.
///
/// Slices are 0-based: entry `j - 1` holds `γ_j`.
#[derive(Debug, Clone)]
pub struct GammaWeights {
    n: usize,
    s: usize,
    q: usize,
    exact: Option<ExactGamma>,
    approx: Vec<f64>,
}

impl GammaWeights {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn q(&self) -> usize {
        self.q
    }

    /// Floating weights, exact values rounded to nearest when available.
    pub fn approx(&self) -> &[f64] {
        &self.approx
    }

    /// `None` for weights produced by the log-space path.
    pub fn exact(&self) -> Option<&ExactGamma> {
        self.exact.as_ref()
    }

    pub fn is_approximate(&self) -> bool {
        self.exact.is_none()
    }

    /// All exact weights as reduced rationals.
    pub fn exact_rationals(&self) -> Option<Vec<BigRational>> {
        self.exact
            .as_ref()
            .map(|e| (1..=self.n).map(|j| e.rational(j)).collect())
    }

    /// Replaces the floating weights. Only meant for negative controls in the
    /// verification suite; the exact part is dropped.
    pub fn with_corrupted_approx(mut self, f: impl FnOnce(&mut [f64])) -> Self {
        f(&mut self.approx);
        self.exact = None;
        self
    }
}

/// Exact `γ_j` for `j = 1..n`.
pub fn gamma_weights(n: usize, s: usize, q: usize) -> Result<GammaWeights> {
    check_nsq(n, s, q)?;
    let exact = exact_numerators(n, s, q);
    let den = BigInt::from(exact.denominator.clone());
    let approx = exact
        .numerators
        .iter()
        .map(|num| {
            if num.is_zero() {
                0.0
            } else {
                BigRational::new(BigInt::from(num.clone()), den.clone())
                    .to_f64()
                    .unwrap_or(f64::NAN)
            }
        })
        .collect();
    Ok(GammaWeights {
        n,
        s,
        q,
        exact: Some(exact),
        approx,
    })
}

/// Log-space floating `γ_j`, flagged approximate. Relative accuracy is
/// limited by `ln Γ` at magnitude `n`, roughly `1e-9` at `n = 10^5`.
pub fn gamma_weights_approx(n: usize, s: usize, q: usize) -> Result<GammaWeights> {
    check_nsq(n, s, q)?;
    let ln_total = ln_binomial(n as u64, s as u64);
    let approx = (1..=n)
        .map(|j| {
            let above = j - 1;
            let below = n - j;
            (0..q)
                .filter(|&l| l <= above && s - l - 1 <= below)
                .map(|l| {
                    (ln_binomial(above as u64, l as u64)
                        + ln_binomial(below as u64, (s - l - 1) as u64)
                        - ln_total)
                        .exp()
                })
                .fold(0.0, |acc, v| acc + v)
        })
        .collect();
    Ok(GammaWeights {
        n,
        s,
        q,
        exact: None,
        approx,
    })
}

/// Exact up to [`EXACT_LIMIT`], log-space beyond.
pub fn gamma_weights_auto(n: usize, s: usize, q: usize) -> Result<GammaWeights> {
    if n <= EXACT_LIMIT {
        gamma_weights(n, s, q)
    } else {
        gamma_weights_approx(n, s, q)
    }
}

fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// Walks `j = 1..n` keeping `C(j-1, l)` for `l < q` (Pascal's rule) and
/// `C(n-j, m)` for `m ∈ [s-q, s-1]` (downward multiplicative update).
fn exact_numerators(n: usize, s: usize, q: usize) -> ExactGamma {
    let m_lo = s - q;
    // upper[l] = C(j-1, l)
    let mut upper: Vec<BigUint> = (0..q)
        .map(|l| if l == 0 { BigUint::from(1u32) } else { BigUint::zero() })
        .collect();
    // lower[m - m_lo] = C(n-j, m)
    let mut lower: Vec<BigUint> = (m_lo..s).map(|m| binomial(n - 1, m)).collect();

    let mut numerators = Vec::with_capacity(n);
    for j in 1..=n {
        let mut num = BigUint::zero();
        for (l, u) in upper.iter().enumerate() {
            if u.is_zero() {
                continue;
            }
            let b = &lower[s - 1 - l - m_lo];
            if !b.is_zero() {
                num += u * b;
            }
        }
        numerators.push(num);

        if j == n {
            break;
        }
        // C(j, l) = C(j-1, l) + C(j-1, l-1)
        for l in (1..q).rev() {
            let (head, tail) = upper.split_at_mut(l);
            tail[0] += &head[l - 1];
        }
        // C(N-1, m) = C(N, m)·(N-m)/N with N = n-j ≥ 1
        let big_n = n - j;
        for (offset, b) in lower.iter_mut().enumerate() {
            let m = m_lo + offset;
            if b.is_zero() {
                continue;
            }
            if m >= big_n {
                b.set_zero();
            } else {
                *b *= big_n - m;
                *b /= big_n;
            }
        }
    }
    ExactGamma {
        numerators,
        denominator: binomial(n, s),
    }
}

/// Limit profile `γ(z)` of `n·γ_{zn}`; requires `1 ≤ q < s`.
///
/// For `q = s` every rescaled weight equals `s` exactly; that case is
/// rejected here rather than extrapolated.
pub fn gamma_asymptotic(z: f64, s: usize, q: usize) -> Result<f64> {
    if q == 0 || q > s {
        return Err(invalid(format!("need 1 <= q <= s, got s={s}, q={q}")));
    }
    if q == s {
        return Err(invalid(format!(
            "q = s = {s}: the Beta(q, s-q) form is undefined; the rescaled weights are the constant {s}"
        )));
    }
    if !(z > 0.0 && z < 1.0) {
        return Err(invalid(format!("z must lie in (0, 1), got {z}")));
    }
    // term_l = s·C(s-1, l)·z^l·(1-z)^{s-1-l}, accumulated in log space
    let ln_z = z.ln();
    let ln_1mz = (-z).ln_1p();
    let mut ln_term = (s as f64).ln() + (s - 1) as f64 * ln_1mz;
    let mut total = ln_term.exp();
    for l in 0..q - 1 {
        ln_term += ((s - 1 - l) as f64 / (l + 1) as f64).ln() + ln_z - ln_1mz;
        total += ln_term.exp();
    }
    Ok(total)
}

/// Regularized incomplete beta function `I_z(a, b)`, the CDF of `Beta(a, b)`.
///
/// Continued fraction (modified Lentz) on the side of `a/(a+b)` where it
/// converges fastest, with `I_z(a,b) = 1 - I_{1-z}(b,a)` on the other side.
pub fn beta_cdf(z: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(invalid(format!("shape parameters must be positive, got a={a}, b={b}")));
    }
    if !(0.0..=1.0).contains(&z) {
        return Err(invalid(format!("z must lie in [0, 1], got {z}")));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    if z == 1.0 {
        return Ok(1.0);
    }
    let ln_front = a * z.ln() + b * (-z).ln_1p() - ln_beta(a, b);
    if z <= a / (a + b) {
        Ok(ln_front.exp() * beta_continued_fraction(z, a, b) / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_continued_fraction(1.0 - z, b, a) / b)
    }
}

fn beta_continued_fraction(z: f64, a: f64, b: f64) -> f64 {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * z / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * z / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * z / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Rescaled weights `n·γ_j` on the grid `z_j = j/n`, `j = 1..n`.
///
/// Between grid points the curve is linear; below `1/n` it is held at the
/// first value. The last grid point is `z = 1`.
#[derive(Debug, Clone)]
pub struct GammaCurve {
    pub z_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub approximate: bool,
}

impl GammaCurve {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linear interpolation between grid points.
    pub fn interpolate(&self, z: f64) -> f64 {
        let n = self.values.len();
        let pos = z * n as f64;
        if pos <= 1.0 {
            return self.values[0];
        }
        if pos >= n as f64 {
            return self.values[n - 1];
        }
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        // grid index lo-1 holds z = lo/n
        self.values[lo - 1] * (1.0 - frac) + self.values[lo] * frac
    }

    /// `n·γ_{⌈zn⌉}`, the step-function reading of the curve.
    pub fn value_at_ceil(&self, z: f64) -> f64 {
        let n = self.values.len();
        let j = ((z * n as f64).ceil() as usize).clamp(1, n);
        self.values[j - 1]
    }
}

pub fn gamma_rescaled_curve(n: usize, s: usize, q: usize) -> Result<GammaCurve> {
    let weights = gamma_weights_auto(n, s, q)?;
    let nf = n as f64;
    Ok(GammaCurve {
        z_grid: (1..=n).map(|j| j as f64 / nf).collect(),
        values: weights.approx().iter().map(|g| g * nf).collect(),
        approximate: weights.is_approximate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn rationals(n: usize, s: usize, q: usize) -> Vec<BigRational> {
        gamma_weights(n, s, q).unwrap().exact_rationals().unwrap()
    }

    fn ratio(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn small_tuples_match_enumerated_values() {
        assert_eq!(
            rationals(4, 2, 1),
            vec![ratio(1, 2), ratio(1, 3), ratio(1, 6), ratio(0, 1)]
        );
        assert_eq!(rationals(3, 3, 2), vec![ratio(1, 1), ratio(1, 1), ratio(0, 1)]);
        assert_eq!(
            rationals(5, 3, 2),
            vec![ratio(3, 5), ratio(3, 5), ratio(1, 2), ratio(3, 10), ratio(0, 1)]
        );
    }

    #[test]
    fn q_equal_s_is_uniform() {
        for g in rationals(10, 4, 4) {
            assert_eq!(g, ratio(4, 10));
        }
    }

    #[test]
    fn invalid_tuples_rejected() {
        assert!(gamma_weights(3, 4, 1).is_err());
        assert!(gamma_weights(5, 3, 4).is_err());
        assert!(gamma_weights(5, 3, 0).is_err());
    }

    #[test]
    fn sum_is_q_for_a_larger_tuple() {
        let w = gamma_weights(300, 40, 7).unwrap();
        let sum: BigRational = w.exact_rationals().unwrap().into_iter().sum();
        assert_eq!(sum, BigRational::from_integer(7.into()));
        let fsum: f64 = w.approx().iter().sum();
        assert!((fsum - 7.0).abs() < 1e-12);
    }

    #[test]
    fn log_path_agrees_with_exact() {
        let exact = gamma_weights(2000, 10, 3).unwrap();
        let approx = gamma_weights_approx(2000, 10, 3).unwrap();
        assert!(approx.is_approximate());
        for (e, a) in exact.approx().iter().zip(approx.approx()) {
            assert!((e - a).abs() <= 1e-10 * e.max(1e-300) + 1e-300, "{e} vs {a}");
        }
    }

    #[test]
    fn asymptotic_edges() {
        let near_zero = gamma_asymptotic(1e-12, 10, 3).unwrap();
        assert!((near_zero - 10.0).abs() < 1e-6);
        let near_one = gamma_asymptotic(0.999999, 10, 3).unwrap();
        assert!(near_one.abs() < 1e-4);
        assert!(gamma_asymptotic(0.5, 10, 10).is_err());
        assert!(gamma_asymptotic(0.0, 10, 3).is_err());
    }

    #[test]
    fn asymptotic_matches_beta_cdf() {
        let v = gamma_asymptotic(0.3, 10, 3).unwrap();
        let i = beta_cdf(0.3, 3.0, 7.0).unwrap();
        assert!((1.0 - v / 10.0 - i).abs() < 1e-12);
    }

    #[test]
    fn beta_cdf_closed_forms() {
        for &z in &[0.0, 0.1, 0.37, 0.5, 0.9, 1.0] {
            assert!((beta_cdf(z, 1.0, 1.0).unwrap() - z).abs() < 1e-14);
        }
        for k in [1.0, 2.0, 5.5, 30.0, 200.0] {
            assert!((beta_cdf(0.5, k, k).unwrap() - 0.5).abs() < 1e-12);
        }
        // I_z(a, 1) = z^a
        assert!((beta_cdf(0.7, 3.0, 1.0).unwrap() - 0.7f64.powi(3)).abs() < 1e-14);
        assert!(beta_cdf(0.5, 0.0, 1.0).is_err());
        assert!(beta_cdf(1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn rescaled_curve_values() {
        let c = gamma_rescaled_curve(4, 2, 1).unwrap();
        let expect = [2.0, 4.0 / 3.0, 2.0 / 3.0, 0.0];
        for (v, e) in c.values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-15);
        }
        assert_eq!(c.z_grid, vec![0.25, 0.5, 0.75, 1.0]);
        assert!((c.interpolate(0.625) - 1.0).abs() < 1e-15);
        assert_eq!(c.value_at_ceil(0.3), 4.0 / 3.0);

        let flat = gamma_rescaled_curve(12, 5, 5).unwrap();
        assert!(flat.values.iter().all(|v| (v - 5.0).abs() < 1e-13));
    }

    #[test]
    fn binomial_small_values() {
        assert_eq!(binomial(10, 3), BigUint::from(120u32));
        assert_eq!(binomial(3, 5), BigUint::zero());
        assert!(binomial(0, 0).is_one());
    }
}
