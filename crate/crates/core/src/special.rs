//! Numerically careful primitives shared by the rate formulas.
//!
//! Everything here works on small dense problems (dimensions of a handful of
//! cooperating nodes), so the routines favour accuracy and sign bookkeeping
//! over asymptotic speed.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEFFS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural logarithm of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("log_gamma requires x > 0, got {x}")));
    }
    Ok(ln_gamma_positive(x))
}

/// `ln Γ(n)` for a positive integer argument.
pub(crate) fn ln_gamma_int(n: usize) -> f64 {
    debug_assert!(n >= 1);
    ln_gamma_positive(n as f64)
}

fn ln_gamma_positive(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the Lanczos sum in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma_positive(1.0 - x);
    }
    // Small integers are exact through the factorial table.
    if x <= 30.0 && x.fract() == 0.0 {
        let n = x as usize;
        return (2..n).map(|k| (k as f64).ln()).sum();
    }
    let z = x - 1.0;
    let mut acc = LANCZOS_COEFFS[0];
    for (i, c) in LANCZOS_COEFFS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    correction: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.correction += (self.sum - t) + value;
        } else {
            self.correction += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.correction
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for v in iter {
            s.add(v);
        }
        s
    }
}

/// Term values and total of a finite hypergeometric sum at one argument.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminatingSeries {
    pub coefficients: Vec<f64>,
    pub value: f64,
}

impl TerminatingSeries {
    /// Evaluates the polynomial with coefficients `poly` at `x`, keeping the
    /// individual terms.
    pub fn evaluate(poly: &[f64], x: f64) -> Self {
        let mut power = 1.0;
        let mut terms = Vec::with_capacity(poly.len());
        for &c in poly {
            terms.push(c * power);
            power *= x;
        }
        let value = terms.iter().copied().collect::<CompensatedSum>().value();
        TerminatingSeries {
            coefficients: terms,
            value,
        }
    }
}

/// Polynomial coefficients of `2F0(M-K+1, -K; ; -x)` in powers of `x`.
///
/// The series has `K + 1` terms. Coefficients come from the term ratio
/// `(M-K+1+l)(K-l)/(l+1)` rather than individual gamma evaluations.
pub fn hyp2f0_coefficients(m: usize, k: usize) -> Result<Vec<f64>> {
    if k < 1 || m < k {
        return Err(Error::Domain(format!(
            "2F0 series needs M >= K >= 1, got M={m}, K={k}"
        )));
    }
    let a = (m - k + 1) as f64;
    let mut coeffs = Vec::with_capacity(k + 1);
    let mut c = 1.0;
    coeffs.push(c);
    for l in 0..k {
        let lf = l as f64;
        c *= (a + lf) * (k - l) as f64 / (lf + 1.0);
        coeffs.push(c);
    }
    Ok(coeffs)
}

/// Polynomial coefficients of `3F1(1, 1, -M; K-M+1; -x)` or, when `shifted`,
/// of `3F1(2, 2, 1-M; K-M+2; -x)`.
///
/// The unshifted series has `M + 1` terms and the shifted one `M`.
pub fn hyp3f1_coefficients(m: usize, k: usize, shifted: bool) -> Result<Vec<f64>> {
    if m < 1 || k <= m {
        return Err(Error::Domain(format!(
            "3F1 series needs K > M >= 1, got M={m}, K={k}"
        )));
    }
    let (num, neg, den, len) = if shifted {
        (2.0, m - 1, (k - m + 2) as f64, m)
    } else {
        (1.0, m, (k - m + 1) as f64, m + 1)
    };
    let mut coeffs = Vec::with_capacity(len);
    let mut c = 1.0;
    coeffs.push(c);
    for l in 0..len - 1 {
        let lf = l as f64;
        c *= (num + lf) * (num + lf) * (neg - l) as f64 / ((den + lf) * (lf + 1.0));
        coeffs.push(c);
    }
    Ok(coeffs)
}

/// `2F0(M-K+1, -K; ; -x)` as a finite sum.
pub fn hyp2f0_terminating(m: usize, k: usize, x: f64) -> Result<f64> {
    Ok(hyp2f0_series(m, k, x)?.value)
}

pub fn hyp2f0_series(m: usize, k: usize, x: f64) -> Result<TerminatingSeries> {
    check_argument(x)?;
    Ok(TerminatingSeries::evaluate(&hyp2f0_coefficients(m, k)?, x))
}

/// `3F1(1, 1, -M; K-M+1; -x)`, or the shifted `3F1(2, 2, 1-M; K-M+2; -x)`.
pub fn hyp3f1_terminating(m: usize, k: usize, x: f64, shifted: bool) -> Result<f64> {
    Ok(hyp3f1_series(m, k, x, shifted)?.value)
}

pub fn hyp3f1_series(m: usize, k: usize, x: f64, shifted: bool) -> Result<TerminatingSeries> {
    check_argument(x)?;
    Ok(TerminatingSeries::evaluate(
        &hyp3f1_coefficients(m, k, shifted)?,
        x,
    ))
}

fn check_argument(x: f64) -> Result<()> {
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "terminating series argument must be finite and >= 0, got {x}"
        )));
    }
    Ok(())
}

/// Complete homogeneous symmetric polynomials of growing node prefixes.
///
/// Returns `table` with `table[r][d] = h_d(x_1, ..., x_r)` for
/// `r = 0..=nodes.len()` and `d = 0..=max_degree`. These are the divided
/// differences of the monomial `t^(d + r - 1)` over the first `r` nodes, and
/// stay well defined when nodes coincide.
pub fn complete_homogeneous(nodes: &[f64], max_degree: usize) -> Vec<Vec<f64>> {
    let mut table = Vec::with_capacity(nodes.len() + 1);
    let mut row = vec![0.0; max_degree + 1];
    row[0] = 1.0;
    table.push(row);
    for &x in nodes {
        let prev = table.last().unwrap();
        let mut cur = vec![0.0; max_degree + 1];
        cur[0] = 1.0;
        for d in 1..=max_degree {
            cur[d] = prev[d] + x * cur[d - 1];
        }
        table.push(cur);
    }
    table
}

/// Extends a complete homogeneous row `h_d(X)` by one more node.
pub(crate) fn extend_homogeneous(row: &[f64], x: f64) -> Vec<f64> {
    let mut out = vec![0.0; row.len()];
    out[0] = row[0];
    for d in 1..row.len() {
        out[d] = row[d] + x * out[d - 1];
    }
    out
}

/// A determinant carried as sign and log-magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    /// `1.0`, `-1.0`, or `0.0` for a singular matrix.
    pub sign: f64,
    /// `ln |det|`; `-inf` for a singular matrix.
    pub log_abs: f64,
}

impl LogDet {
    pub const ZERO: LogDet = LogDet {
        sign: 0.0,
        log_abs: f64::NEG_INFINITY,
    };

    pub fn value(&self) -> f64 {
        self.sign * self.log_abs.exp()
    }
}

/// Vandermonde determinant `prod_{j<k} (a_k - a_j)` in sign/log form.
pub fn vandermonde_log(a: &[f64]) -> LogDet {
    let mut sign = 1.0;
    let mut log_abs = 0.0;
    for k in 0..a.len() {
        for j in 0..k {
            let d = a[k] - a[j];
            if d == 0.0 {
                return LogDet::ZERO;
            }
            if d < 0.0 {
                sign = -sign;
            }
            log_abs += d.abs().ln();
        }
    }
    LogDet { sign, log_abs }
}

/// Vandermonde determinant `det[a_i^(j-1)]`. Exactly `0.0` on repeated entries.
pub fn vandermonde_det(a: &[f64]) -> f64 {
    let v = vandermonde_log(a);
    if v.sign == 0.0 {
        0.0
    } else {
        v.value()
    }
}

/// Log-determinant by LU with partial pivoting after row and column
/// equilibration.
pub fn log_det(mat: &DMatrix<f64>) -> Result<LogDet> {
    if !mat.is_square() {
        return Err(Error::Domain(format!(
            "determinant of a {}x{} matrix",
            mat.nrows(),
            mat.ncols()
        )));
    }
    let n = mat.nrows();
    if n == 0 {
        return Ok(LogDet {
            sign: 1.0,
            log_abs: 0.0,
        });
    }
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let mut a = mat.clone();
    let mut log_scale = 0.0;
    for i in 0..n {
        let s = a.row(i).amax();
        if s == 0.0 {
            return Ok(LogDet::ZERO);
        }
        a.row_mut(i).scale_mut(1.0 / s);
        log_scale += s.ln();
    }
    for j in 0..n {
        let s = a.column(j).amax();
        if s == 0.0 {
            return Ok(LogDet::ZERO);
        }
        a.column_mut(j).scale_mut(1.0 / s);
        log_scale += s.ln();
    }
    let mut sign = 1.0;
    let mut log_abs = log_scale;
    for col in 0..n {
        let (piv_off, piv_val) = a
            .view((col, col), (n - col, 1))
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |best, (i, v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            });
        if piv_val == 0.0 {
            return Ok(LogDet::ZERO);
        }
        let piv = col + piv_off;
        if piv != col {
            a.swap_rows(piv, col);
            sign = -sign;
        }
        let d = a[(col, col)];
        if d < 0.0 {
            sign = -sign;
        }
        log_abs += d.abs().ln();
        for r in col + 1..n {
            let f = a[(r, col)] / d;
            if f != 0.0 {
                for c in col + 1..n {
                    let v = a[(col, c)];
                    a[(r, c)] -= f * v;
                }
            }
        }
    }
    Ok(LogDet { sign, log_abs })
}

/// Determinant of `mat` together with the `(a, b)` minors for every `a` in
/// `rows` and `b` in `cols`.
///
/// The minor `(a, b)` is the determinant of `mat` with row `a` and column `b`
/// removed. Entry `(i, j)` of the returned matrix holds the minor for
/// `(rows[i], cols[j])`.
pub fn det_and_minors(
    mat: &DMatrix<f64>,
    rows: &[usize],
    cols: &[usize],
) -> Result<(f64, DMatrix<f64>)> {
    if !mat.is_square() {
        return Err(Error::Domain(format!(
            "minors of a {}x{} matrix",
            mat.nrows(),
            mat.ncols()
        )));
    }
    let n = mat.nrows();
    if let Some(bad) = rows.iter().chain(cols).find(|&&i| i >= n) {
        return Err(Error::Domain(format!(
            "minor index {bad} out of range for {n}x{n} matrix"
        )));
    }
    let det = log_det(mat)?.value();
    let mut minors = DMatrix::zeros(rows.len(), cols.len());
    for (i, &a) in rows.iter().enumerate() {
        let without_row = mat.clone().remove_row(a);
        for (j, &b) in cols.iter().enumerate() {
            let sub = without_row.clone().remove_column(b);
            minors[(i, j)] = log_det(&sub)?.value();
        }
    }
    Ok((det, minors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Generic Pochhammer-form evaluation of a terminating pFq at `z`, summed
    /// term by term from the defining series.
    fn pochhammer_series(a: &[f64], b: &[f64], z: f64) -> f64 {
        let poch = |x: f64, n: usize| (0..n).map(|i| x + i as f64).product::<f64>();
        let fact = |n: usize| (1..=n).map(|i| i as f64).product::<f64>();
        let mut total = 0.0;
        for n in 0..64 {
            let num: f64 = a.iter().map(|&x| poch(x, n)).product();
            if num == 0.0 && n > 0 {
                break;
            }
            let den: f64 = b.iter().map(|&x| poch(x, n)).product();
            total += num / den * z.powi(n as i32) / fact(n);
        }
        total
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn log_gamma_examples() {
        assert_eq!(log_gamma(1.0).unwrap(), 0.0);
        assert_eq!(log_gamma(2.0).unwrap(), 0.0);
        assert!(rel(log_gamma(11.0).unwrap(), 3_628_800f64.ln()) < 1e-13);
        assert!(log_gamma(0.0).is_err());
        assert!(log_gamma(-1.5).is_err());
    }

    #[test]
    fn log_gamma_matches_log_factorial_up_to_200() {
        let mut log_fact = 0.0;
        for n in 1..=200usize {
            // ln Γ(n+1) = ln n!
            log_fact += (n as f64).ln();
            let v = log_gamma(n as f64 + 1.0).unwrap();
            assert!(rel(v, log_fact) < 1e-13, "n={n}: {v} vs {log_fact}");
        }
    }

    #[test]
    fn log_gamma_half_integers() {
        let sqrt_pi_ln = 0.5 * std::f64::consts::PI.ln();
        assert!((log_gamma(0.5).unwrap() - sqrt_pi_ln).abs() < 1e-14);
        // Γ(5/2) = 3√π/4
        let expected = (0.75f64).ln() + sqrt_pi_ln;
        assert!((log_gamma(2.5).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn hyp2f0_examples() {
        assert_eq!(hyp2f0_terminating(3, 2, 0.0).unwrap(), 1.0);
        for x in [0.0, 0.3, 2.0, 17.0] {
            assert!((hyp2f0_terminating(1, 1, x).unwrap() - (1.0 + x)).abs() < 1e-14);
        }
        let oracle = pochhammer_series(&[3.0, -2.0], &[], -0.5);
        assert!(rel(hyp2f0_terminating(4, 2, 0.5).unwrap(), oracle) < 1e-12);
        assert_eq!(hyp2f0_series(4, 2, 0.5).unwrap().coefficients.len(), 3);
        assert!(hyp2f0_terminating(1, 2, 0.5).is_err());
    }

    #[test]
    fn hyp3f1_examples() {
        assert_eq!(hyp3f1_terminating(1, 2, 0.0, false).unwrap(), 1.0);
        for x in [0.1, 1.0, 9.0] {
            let v = hyp3f1_terminating(1, 2, x, false).unwrap();
            assert!((v - (1.0 + x / 2.0)).abs() < 1e-14);
        }
        let a = hyp3f1_terminating(2, 5, 1.3, false).unwrap();
        let b = hyp3f1_terminating(2, 5, 1.3, true).unwrap();
        assert!((a - b).abs() > 1e-3);
        assert_eq!(hyp3f1_series(3, 5, 1.0, false).unwrap().coefficients.len(), 4);
        assert_eq!(hyp3f1_series(3, 5, 1.0, true).unwrap().coefficients.len(), 3);
        assert!(hyp3f1_terminating(2, 2, 0.5, false).is_err());
    }

    #[test]
    fn series_agree_with_pochhammer_oracle_on_grid() {
        for m in 1..=8usize {
            for k in 1..=8usize {
                for x in [0.01, 0.1, 1.0, 10.0] {
                    if m >= k {
                        let v = hyp2f0_terminating(m, k, x).unwrap();
                        let o = pochhammer_series(&[(m - k + 1) as f64, -(k as f64)], &[], -x);
                        assert!(rel(v, o) < 1e-12, "2F0 M={m} K={k} x={x}: {v} vs {o}");
                    }
                    if k > m {
                        let mf = m as f64;
                        let kf = k as f64;
                        let v = hyp3f1_terminating(m, k, x, false).unwrap();
                        let o = pochhammer_series(&[1.0, 1.0, -mf], &[kf - mf + 1.0], -x);
                        assert!(rel(v, o) < 1e-12, "3F1 M={m} K={k} x={x}");
                        let v = hyp3f1_terminating(m, k, x, true).unwrap();
                        let o = pochhammer_series(&[2.0, 2.0, 1.0 - mf], &[kf - mf + 2.0], -x);
                        assert!(rel(v, o) < 1e-12, "shifted 3F1 M={m} K={k} x={x}");
                    }
                }
            }
        }
    }

    #[test]
    fn closed_form_sums_match_gamma_form() {
        // Compare with the explicit gamma-ratio finite sums.
        let lg = |n: usize| log_gamma(n as f64).unwrap();
        for (m, k, x) in [(5usize, 3usize, 0.7f64), (8, 8, 2.5), (4, 1, 3.0)] {
            let direct: f64 = (0..=k)
                .map(|l| {
                    (lg(m - k + l + 1) + lg(k + 1) - lg(m - k + 1) - lg(k + 1 - l) - lg(l + 1)).exp()
                        * x.powi(l as i32)
                })
                .sum();
            assert!(rel(hyp2f0_terminating(m, k, x).unwrap(), direct) < 1e-12);
        }
        for (m, k, x) in [(2usize, 5usize, 1.3f64), (3, 4, 0.2), (1, 7, 6.0)] {
            let direct: f64 = (0..=m)
                .map(|l| {
                    (lg(l + 1) + lg(m + 1) + lg(k - m + 1) - lg(k - m + l + 1) - lg(m + 1 - l)).exp()
                        * x.powi(l as i32)
                })
                .sum();
            assert!(rel(hyp3f1_terminating(m, k, x, false).unwrap(), direct) < 1e-12);
        }
    }

    #[test]
    fn shifted_series_is_scaled_derivative() {
        // d/dx 3F1(1,1,-M;K-M+1;-x) = M/(K-M+1) * 3F1(2,2,1-M;K-M+2;-x)
        for (m, k, x) in [(2usize, 5usize, 1.3f64), (3, 4, 0.4), (1, 3, 2.0)] {
            let h = 1e-5;
            let fd = (hyp3f1_terminating(m, k, x + h, false).unwrap()
                - hyp3f1_terminating(m, k, x - h, false).unwrap())
                / (2.0 * h);
            let s = hyp3f1_terminating(m, k, x, true).unwrap() * m as f64 / (k - m + 1) as f64;
            assert!(rel(s, fd) < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn series_increase_in_x(m in 1usize..8, k in 1usize..8, x in 0.0f64..20.0, dx in 1e-3f64..5.0) {
            if m >= k {
                prop_assert!(hyp2f0_terminating(m, k, x + dx).unwrap() > hyp2f0_terminating(m, k, x).unwrap());
            } else {
                prop_assert!(hyp3f1_terminating(m, k, x + dx, false).unwrap() > hyp3f1_terminating(m, k, x, false).unwrap());
            }
        }

        #[test]
        fn compensated_sum_of_polynomial_matches_value(coeffs in proptest::collection::vec(0.0f64..10.0, 1..8), x in 0.0f64..3.0) {
            let s = TerminatingSeries::evaluate(&coeffs, x);
            let horner = coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
            prop_assert!((s.value - horner).abs() <= 1e-12 * horner.abs().max(1.0));
        }
    }

    #[test]
    fn vandermonde_examples() {
        assert_eq!(vandermonde_det(&[3.0]), 1.0);
        assert_eq!(vandermonde_det(&[1.0, 2.0]), 1.0);
        assert_eq!(vandermonde_det(&[1.0, 2.0, 4.0]), 6.0);
        assert_eq!(vandermonde_det(&[1.0, 2.0, 1.0]), 0.0);
        assert_eq!(vandermonde_det(&[2.0, 1.0]), -1.0);
    }

    #[test]
    fn vandermonde_matches_power_matrix() {
        let a = [0.3f64, 1.1, 2.4, 3.9, 5.2];
        let m = DMatrix::from_fn(5, 5, |i, j| a[i].powi(j as i32));
        let direct = m.determinant();
        assert!(rel(vandermonde_det(&a), direct) < 1e-10);
    }

    #[test]
    fn homogeneous_table_is_divided_difference_of_monomials() {
        // h_d(x1, x2) = divided difference of t^(d+1) over {x1, x2}.
        let t = complete_homogeneous(&[1.5, 0.4], 4);
        for d in 0..4 {
            let p = (d + 1) as i32;
            let dd = (1.5f64.powi(p) - 0.4f64.powi(p)) / (1.5 - 0.4);
            assert!(rel(t[2][d], dd) < 1e-14);
        }
        // Coincident nodes give the derivative.
        let t = complete_homogeneous(&[2.0, 2.0], 3);
        assert!(rel(t[2][2], 3.0 * 4.0) < 1e-14);
        let ext = extend_homogeneous(&t[1], 2.0);
        assert_eq!(ext, t[2]);
    }

    #[test]
    fn log_det_matches_dense_determinant() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, -1.0, 0.5, 1e3, 4.0, -2.0, 0.1, 0.2, 7e-3]);
        let ld = log_det(&m).unwrap();
        assert!(rel(ld.value(), m.determinant()) < 1e-12);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(log_det(&singular).unwrap().sign, 0.0);
        assert!(log_det(&DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn det_and_minors_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let (d, minors) = det_and_minors(&id, &[0, 1, 2], &[0, 1, 2]).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((minors[(i, j)] - expected).abs() < 1e-15);
            }
        }
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let (d, minors) = det_and_minors(&m, &[0, 1], &[0, 1]).unwrap();
        assert!((d + 2.0).abs() < 1e-14);
        let expected = [[4.0, 3.0], [2.0, 1.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((minors[(i, j)] - expected[i][j]).abs() < 1e-14);
            }
        }
        assert!(det_and_minors(&DMatrix::zeros(2, 3), &[0], &[0]).is_err());
        assert!(det_and_minors(&m, &[2], &[0]).is_err());
    }

    #[test]
    fn laplace_expansion_reproduces_determinant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let m = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-2.0..2.0));
        let all: Vec<usize> = (0..5).collect();
        let (det, minors) = det_and_minors(&m, &all, &all).unwrap();
        for i in 0..5 {
            let expansion: f64 = (0..5)
                .map(|j| {
                    let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    s * m[(i, j)] * minors[(i, j)]
                })
                .sum();
            assert!(rel(expansion, det) < 1e-10);
        }
        assert!(rel(det, m.determinant()) < 1e-10);
    }
}
