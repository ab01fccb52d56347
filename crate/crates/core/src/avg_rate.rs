//! Bob's rate `f_B`, the Haar-averaged closed form `f~_E` of the
//! eavesdropper rate, their gradients, and Monte Carlo oracles.
//!
//! The closed form is a ratio of a structured determinant to Vandermonde
//! determinants in `sigma` and `gamma`. Dividing each column by the
//! `sigma`-Vandermonde and each power-series row by the `gamma`-Vandermonde
//! turns every entry into divided differences, i.e. complete homogeneous
//! symmetric polynomials of node prefixes. The resulting matrix has the same
//! determinant as the ratio, stays bounded when nodes coincide and needs no
//! tie perturbation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{standard_complex_normal, CMatrix, MainChannel};
use crate::error::{Error, Result};
use crate::rng::{chunk_source, RandomSource};
use crate::scenario::EveGainProfile;
use crate::special::{
    complete_homogeneous, det_and_minors, extend_homogeneous, hyp2f0_coefficients,
    hyp3f1_coefficients, ln_gamma_int, log_det,
};

/// Relative zero threshold for powers, scaled by `max(gamma_e, 1)`.
pub const ZERO_THRESHOLD: f64 = 1e-9;

/// Monte Carlo trials per parallel chunk.
const MC_CHUNK: usize = 1 << 14;

/// Signal and artificial-noise powers per eigen-direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub gamma_s: Vec<f64>,
    pub gamma_a: Vec<f64>,
    /// The sum-power budget the allocation was checked against.
    pub budget: f64,
}

impl PowerAllocation {
    pub fn new(gamma_s: Vec<f64>, gamma_a: Vec<f64>, budget: f64) -> Result<Self> {
        if gamma_s.len() != gamma_a.len() {
            return Err(Error::Precondition(format!(
                "signal and noise vectors have lengths {} and {}",
                gamma_s.len(),
                gamma_a.len()
            )));
        }
        if !(budget >= 0.0) || !budget.is_finite() {
            return Err(Error::Precondition(format!("budget must be >= 0, got {budget}")));
        }
        if gamma_s.iter().chain(&gamma_a).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Precondition("powers must be finite and non-negative".into()));
        }
        let total: f64 = gamma_s.iter().chain(&gamma_a).sum();
        if total > budget * (1.0 + 1e-9) {
            return Err(Error::Precondition(format!(
                "total power {total} exceeds budget {budget}"
            )));
        }
        Ok(PowerAllocation { gamma_s, gamma_a, budget })
    }

    pub fn zeros(k: usize, budget: f64) -> Self {
        PowerAllocation { gamma_s: vec![0.0; k], gamma_a: vec![0.0; k], budget }
    }

    pub fn len(&self) -> usize {
        self.gamma_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma_s.is_empty()
    }

    /// `gamma_s + gamma_a`.
    pub fn total(&self) -> Vec<f64> {
        self.gamma_s.iter().zip(&self.gamma_a).map(|(s, a)| s + a).collect()
    }

    pub fn total_power(&self) -> f64 {
        self.gamma_s.iter().chain(&self.gamma_a).sum()
    }
}

/// A power vector with near-zero entries snapped to zero and its
/// descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveGamma {
    /// Values in their original (eigen-direction) order.
    pub values: Vec<f64>,
    /// `order[i]` is the original index of the `i`-th largest value.
    pub order: Vec<usize>,
    /// Number of entries above the zero threshold.
    pub active_count: usize,
}

impl EffectiveGamma {
    /// Snaps entries below `1e-9 * max(gamma_e, 1)` to zero.
    pub fn new(values: &[f64], gamma_e: f64) -> Result<Self> {
        Self::with_threshold(values, ZERO_THRESHOLD * gamma_e.max(1.0))
    }

    pub fn with_threshold(values: &[f64], threshold: f64) -> Result<Self> {
        let mut snapped = Vec::with_capacity(values.len());
        for &v in values {
            if !v.is_finite() || v < -threshold {
                return Err(Error::Domain(format!("power {v} is negative or non-finite")));
            }
            snapped.push(if v < threshold { 0.0 } else { v });
        }
        let mut order: Vec<usize> = (0..snapped.len()).collect();
        order.sort_by(|&a, &b| snapped[b].total_cmp(&snapped[a]).then(a.cmp(&b)));
        let active_count = snapped.iter().filter(|v| **v > 0.0).count();
        Ok(EffectiveGamma { values: snapped, order, active_count })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values in descending order.
    pub fn sorted(&self) -> Vec<f64> {
        self.order.iter().map(|&i| self.values[i]).collect()
    }

    /// The strictly positive values in descending order.
    pub fn active(&self) -> Vec<f64> {
        self.order[..self.active_count].iter().map(|&i| self.values[i]).collect()
    }
}

/// Which closed form applies for `K` transmit nodes, `M` eavesdropper
/// antennas and `n` active powers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `n = 0`: the rate is zero.
    Silent,
    /// `M >= K >= n`: the `2F0` form.
    AntennaRich,
    /// `K > M >= n`: the `3F1` form.
    AntennaPoor,
    /// `K > n > M`: the bordered `3F1` form of size `K + n - M`.
    AntennaPoorHighRank,
}

impl Regime {
    pub fn classify(k: usize, m: usize, n: usize) -> Regime {
        if n == 0 {
            Regime::Silent
        } else if m >= k {
            Regime::AntennaRich
        } else if n <= m {
            Regime::AntennaPoor
        } else {
            Regime::AntennaPoorHighRank
        }
    }
}

/// Structured determinant representation of `E_{W,U} det(...)` for one set of
/// active power nodes.
struct ClosedForm {
    regime: Regime,
    k: usize,
    m: usize,
    nodes: Vec<f64>,
    hs: Vec<Vec<f64>>,
    hg: Vec<Vec<f64>>,
    coeffs: Vec<f64>,
    log_const: f64,
    sign: f64,
}

impl ClosedForm {
    /// `nodes` are the powers treated as active (zeros allowed as confluent
    /// nodes); `sigma` the per-node average gains.
    fn new(nodes: &[f64], sigma: &[f64], m: usize) -> Result<Self> {
        let k = sigma.len();
        let n = nodes.len();
        if n == 0 || n > k {
            return Err(Error::Precondition(format!("{n} active nodes for K = {k}")));
        }
        let regime = Regime::classify(k, m, n);
        let lg = ln_gamma_int;
        let (coeffs, log_const, sign) = match regime {
            Regime::AntennaRich => {
                let c = (k - n..k)
                    .map(|j| lg(k + 1 - j) + lg(j + 1) + lg(m - k + 1) - lg(k + 1) - lg(m - k + j + 1))
                    .sum();
                (hyp2f0_coefficients(m, k)?, c, 1.0)
            }
            Regime::AntennaPoor => {
                let c = (k - n..k)
                    .map(|j| lg(k + 1 - j) + lg(j + 1) - lg(m + 1) - lg(m + j + 1 - k))
                    .sum::<f64>()
                    - n as f64 * lg(k - m + 1);
                (hyp3f1_coefficients(m, k, false)?, c, 1.0)
            }
            Regime::AntennaPoorHighRank => {
                let c = (n - m..n)
                    .map(|j| lg(n + 1 - j) + lg(k - n + j + 1) - lg(k - m + 1) - lg(m + j + 1 - n))
                    .sum::<f64>()
                    - m as f64 * lg(m + 1);
                let sign = if ((k - m) * (n - m)) % 2 == 0 { 1.0 } else { -1.0 };
                (hyp3f1_coefficients(m, k, false)?, c, sign)
            }
            Regime::Silent => unreachable!("n >= 1 checked above"),
        };
        let degree = 2 * k + m + 2;
        Ok(ClosedForm {
            regime,
            k,
            m,
            nodes: nodes.to_vec(),
            hs: complete_homogeneous(sigma, degree),
            hg: complete_homogeneous(nodes, degree),
            coeffs,
            log_const,
            sign,
        })
    }

    fn n(&self) -> usize {
        self.nodes.len()
    }

    fn size(&self) -> usize {
        match self.regime {
            Regime::AntennaPoorHighRank => self.k + self.n() - self.m,
            _ => self.k,
        }
    }

    /// Rows that do not depend on `gamma`.
    fn top_rows(&self) -> usize {
        match self.regime {
            Regime::AntennaPoorHighRank => self.k - self.m,
            _ => self.k - self.n(),
        }
    }

    /// Left border width (columns with only `gamma` entries).
    fn border(&self) -> usize {
        match self.regime {
            Regime::AntennaPoorHighRank => self.n() - self.m,
            _ => 0,
        }
    }

    /// `h_d(sigma_0..sigma_j)`, zero for negative `d`.
    fn hs(&self, j: usize, d: isize) -> f64 {
        if d < 0 {
            0.0
        } else {
            self.hs[j + 1][d as usize]
        }
    }

    /// One `gamma` row, with `hg(d)` standing for `h_d(g_0..g_r)` or its
    /// derivative.
    fn gamma_row(&self, r: usize, hg: &dyn Fn(isize) -> f64) -> Vec<f64> {
        let (k, m, n) = (self.k as isize, self.m as isize, self.n() as isize);
        let r = r as isize;
        let mut row = Vec::with_capacity(self.size());
        for c in 0..self.border() as isize {
            row.push(hg(c - r));
        }
        for j in 0..self.k {
            let ji = j as isize;
            let entry = match self.regime {
                Regime::AntennaRich => (k - n..=k)
                    .map(|l| self.coeffs[l as usize] * hg(l - (k - n) - r) * self.hs(j, l - ji))
                    .sum(),
                Regime::AntennaPoor => (m - n..=m)
                    .map(|l| self.coeffs[l as usize] * hg(l - (m - n) - r) * self.hs(j, k - m + l - ji))
                    .sum(),
                Regime::AntennaPoorHighRank => (0..=m)
                    .map(|l| self.coeffs[l as usize] * hg(n - m + l - r) * self.hs(j, k - m + l - ji))
                    .sum(),
                Regime::Silent => 0.0,
            };
            row.push(entry);
        }
        row
    }

    fn matrix(&self) -> DMatrix<f64> {
        let size = self.size();
        let top = self.top_rows();
        let border = self.border();
        let mut a = DMatrix::zeros(size, size);
        for i in 0..top {
            for j in 0..self.k {
                a[(i, border + j)] = self.hs(j, i as isize - j as isize);
            }
        }
        for r in 0..self.n() {
            let table = &self.hg[r + 1];
            let hg = |d: isize| if d < 0 { 0.0 } else { table[d as usize] };
            for (c, v) in self.gamma_row(r, &hg).into_iter().enumerate() {
                a[(top + r, c)] = v;
            }
        }
        a
    }

    /// Derivative of the matrix with respect to node `q`.
    fn derivative(&self, q: usize) -> DMatrix<f64> {
        let size = self.size();
        let top = self.top_rows();
        let mut da = DMatrix::zeros(size, size);
        for r in q..self.n() {
            // d h_d(g_0..g_r) / d g_q = h_{d-1}(g_0..g_r, g_q).
            let ext = extend_homogeneous(&self.hg[r + 1], self.nodes[q]);
            let hg = |d: isize| if d < 1 { 0.0 } else { ext[d as usize - 1] };
            for (c, v) in self.gamma_row(r, &hg).into_iter().enumerate() {
                da[(top + r, c)] = v;
            }
        }
        da
    }

    fn log_value(&self) -> Result<f64> {
        let det = log_det(&self.matrix())?;
        if self.sign * det.sign <= 0.0 {
            return Err(Error::Numeric(format!(
                "closed-form determinant has the wrong sign ({:?}, n = {}, K = {}, M = {})",
                self.regime,
                self.n(),
                self.k,
                self.m
            )));
        }
        Ok(self.log_const + det.log_abs)
    }

    /// `d log E det / d node_q` for every node, by Jacobi's formula with the
    /// cofactors of the equilibrated matrix.
    fn gradient(&self) -> Result<Vec<f64>> {
        let a = self.matrix();
        let size = a.nrows();
        let top = self.top_rows();
        let mut row_scale = vec![1.0; size];
        let mut col_scale = vec![1.0; size];
        for (i, s) in row_scale.iter_mut().enumerate() {
            *s = a.row(i).amax();
        }
        for (j, s) in col_scale.iter_mut().enumerate() {
            *s = (0..size).map(|i| (a[(i, j)] / row_scale[i]).abs()).fold(0.0, f64::max);
        }
        if row_scale.iter().chain(&col_scale).any(|s| !(*s > 0.0)) {
            return Err(Error::Numeric("closed-form matrix has a zero line".into()));
        }
        let scaled = |m: &DMatrix<f64>| {
            DMatrix::from_fn(size, size, |i, j| m[(i, j)] / (row_scale[i] * col_scale[j]))
        };
        let a_eq = scaled(&a);
        let rows: Vec<usize> = (top..size).collect();
        let cols: Vec<usize> = (0..size).collect();
        let (det, minors) = det_and_minors(&a_eq, &rows, &cols)?;
        if !(self.sign * det > 0.0) || !det.is_finite() {
            return Err(Error::Numeric("closed-form matrix is numerically singular".into()));
        }
        let mut grad = Vec::with_capacity(self.n());
        for q in 0..self.n() {
            let da = scaled(&self.derivative(q));
            let mut acc = 0.0;
            for (ri, &i) in rows.iter().enumerate() {
                for j in 0..size {
                    let cof = if (i + j) % 2 == 0 { minors[(ri, j)] } else { -minors[(ri, j)] };
                    acc += da[(i, j)] * cof;
                }
            }
            grad.push(acc / det);
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite closed-form gradient".into()));
        }
        Ok(grad)
    }
}

fn check_sigma(sigma: &[f64], k: usize) -> Result<()> {
    if sigma.len() != k {
        return Err(Error::Precondition(format!(
            "sigma row has length {}, expected {k}",
            sigma.len()
        )));
    }
    if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Precondition("sigma entries must be positive and finite".into()));
    }
    Ok(())
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::Precondition("eavesdropper needs at least one antenna".into()));
    }
    Ok(())
}

/// `f_B(gamma) = sum_k log(1 + (gamma_b / gamma_e) lambda_k gamma_k)`.
pub fn f_b(gamma: &[f64], lambda: &[f64], gamma_b: f64, gamma_e: f64) -> Result<f64> {
    if gamma.len() != lambda.len() {
        return Err(Error::Precondition(format!(
            "gamma has length {}, lambda {}",
            gamma.len(),
            lambda.len()
        )));
    }
    let ratio = gamma_b / gamma_e;
    Ok(gamma.iter().zip(lambda).map(|(g, l)| (ratio * l * g).ln_1p()).sum())
}

/// Component-wise `gamma_b lambda_i / (gamma_e + gamma_b lambda_i gamma_i)`.
pub fn grad_f_b(gamma: &[f64], lambda: &[f64], gamma_b: f64, gamma_e: f64) -> Result<Vec<f64>> {
    if gamma.len() != lambda.len() {
        return Err(Error::Precondition("gamma and lambda lengths differ".into()));
    }
    Ok(gamma
        .iter()
        .zip(lambda)
        .map(|(g, l)| gamma_b * l / (gamma_e + gamma_b * l * g))
        .collect())
}

/// `f~_E(gamma) = log E_{W,U} det(I + W S^{1/2} U G U^H S^{1/2} W^H)` by the
/// regime-matched closed form.
pub fn f_tilde_e(gamma: &EffectiveGamma, sigma: &[f64], m_eve: usize) -> Result<f64> {
    check_m(m_eve)?;
    check_sigma(sigma, gamma.len())?;
    if gamma.active_count == 0 {
        return Ok(0.0);
    }
    ClosedForm::new(&gamma.active(), sigma, m_eve)?.log_value()
}

/// Convenience wrapper taking raw powers.
pub fn f_tilde_e_values(values: &[f64], sigma: &[f64], m_eve: usize, gamma_e: f64) -> Result<f64> {
    f_tilde_e(&EffectiveGamma::new(values, gamma_e)?, sigma, m_eve)
}

/// Regime used by [`f_tilde_e`] for this input.
pub fn regime_of(gamma: &EffectiveGamma, m_eve: usize) -> Regime {
    Regime::classify(gamma.len(), m_eve, gamma.active_count)
}

/// Gradient of `f~_E` in the original coordinate order.
#[derive(Debug, Clone, PartialEq)]
pub struct EveGradient {
    pub values: Vec<f64>,
    /// Set when the closed form was singular and finite differences were used.
    pub fallback: bool,
}

/// Gradient of `f~_E`. Active coordinates use the regime-matched matrix,
/// inactive ones the full-rank matrix with zero nodes, which is the analytic
/// continuation across the boundary.
pub fn grad_f_tilde_e(gamma: &EffectiveGamma, sigma: &[f64], m_eve: usize) -> Result<EveGradient> {
    check_m(m_eve)?;
    let k = gamma.len();
    check_sigma(sigma, k)?;
    match closed_form_gradient(gamma, sigma, m_eve) {
        Ok(values) => Ok(EveGradient { values, fallback: false }),
        Err(Error::Numeric(_)) => Ok(EveGradient {
            values: finite_difference_gradient(gamma, sigma, m_eve)?,
            fallback: true,
        }),
        Err(e) => Err(e),
    }
}

fn closed_form_gradient(gamma: &EffectiveGamma, sigma: &[f64], m: usize) -> Result<Vec<f64>> {
    let k = gamma.len();
    let n = gamma.active_count;
    let mut out = vec![0.0; k];
    // Node q of a closed form sits at sorted position q; the sigma columns are
    // in original order, so the node's gain is irrelevant to the mapping.
    if n > 0 {
        let grad = ClosedForm::new(&gamma.active(), sigma, m)?.gradient()?;
        for (q, g) in grad.into_iter().enumerate() {
            out[gamma.order[q]] = g;
        }
    }
    if n < k {
        let full = ClosedForm::new(&gamma.sorted(), sigma, m)?;
        let base = full.gradient()?;
        for (q, g) in base.into_iter().enumerate().skip(n) {
            out[gamma.order[q]] = g;
        }
    }
    Ok(out)
}

fn finite_difference_gradient(gamma: &EffectiveGamma, sigma: &[f64], m: usize) -> Result<Vec<f64>> {
    let scale = gamma.values.iter().copied().fold(1.0, f64::max);
    let base = f_tilde_e(gamma, sigma, m)?;
    let eval = |v: &[f64]| -> Result<f64> {
        f_tilde_e(&EffectiveGamma::with_threshold(v, 0.0)?, sigma, m)
    };
    let mut out = Vec::with_capacity(gamma.len());
    for i in 0..gamma.len() {
        let mut v = gamma.values.clone();
        let h = 1e-6 * scale;
        if v[i] > h {
            v[i] += h;
            let up = eval(&v)?;
            v[i] -= 2.0 * h;
            let down = eval(&v)?;
            out.push((up - down) / (2.0 * h));
        } else {
            v[i] += h;
            out.push((eval(&v)? - base) / h);
        }
    }
    Ok(out)
}

/// `R~_E = f~_E(gamma_s + gamma_a) - f~_E(gamma_a)` at one location.
pub fn rate_eve_diff(alloc: &PowerAllocation, sigma: &[f64], m_eve: usize) -> Result<f64> {
    let with_signal = f_tilde_e(&EffectiveGamma::new(&alloc.total(), alloc.budget)?, sigma, m_eve)?;
    let noise_only = f_tilde_e(&EffectiveGamma::new(&alloc.gamma_a, alloc.budget)?, sigma, m_eve)?;
    Ok(with_signal - noise_only)
}

/// Rates entering the secrecy objective, in nats/s/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePair {
    /// `f_B(gamma_s + gamma_a) - f_B(gamma_a)`.
    pub rate_bob: f64,
    /// `f~_E(gamma_s + gamma_a) - f~_E(gamma_a)` per location.
    pub rate_eve_per_loc: Vec<f64>,
    /// `rate_bob - max(rate_eve_per_loc)`.
    pub secrecy: f64,
}

impl RatePair {
    /// Index of the worst-case location.
    pub fn worst_location(&self) -> usize {
        self.rate_eve_per_loc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

/// Secrecy objective with `f_E` replaced by its closed-form approximation.
pub fn secrecy_objective(
    alloc: &PowerAllocation,
    chan: &MainChannel,
    eve: &EveGainProfile,
    m_eve: usize,
    gamma_b: f64,
    gamma_e: f64,
) -> Result<RatePair> {
    if eve.locations() == 0 {
        return Err(Error::Precondition("no eavesdropper locations".into()));
    }
    let total = alloc.total();
    let rate_bob = f_b(&total, &chan.lambda, gamma_b, gamma_e)? - f_b(&alloc.gamma_a, &chan.lambda, gamma_b, gamma_e)?;
    let with_signal = EffectiveGamma::new(&total, gamma_e)?;
    let noise_only = EffectiveGamma::new(&alloc.gamma_a, gamma_e)?;
    let rate_eve_per_loc = eve
        .rows()
        .iter()
        .map(|sigma| Ok(f_tilde_e(&with_signal, sigma, m_eve)? - f_tilde_e(&noise_only, sigma, m_eve)?))
        .collect::<Result<Vec<f64>>>()?;
    let worst = rate_eve_per_loc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RatePair { rate_bob, rate_eve_per_loc, secrecy: rate_bob - worst })
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
}

/// Running moments that merge associatively.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1.0;
        let d = x - self.mean;
        self.mean += d / self.count;
        self.m2 += d * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0.0 {
            return other;
        }
        if other.count == 0.0 {
            return self;
        }
        let count = self.count + other.count;
        let d = other.mean - self.mean;
        Moments {
            count,
            mean: self.mean + d * other.count / count,
            m2: self.m2 + other.m2 + d * d * self.count * other.count / count,
        }
    }

    fn estimate(&self) -> Estimate {
        let std_error = if self.count > 1.0 {
            (self.m2 / (self.count - 1.0) / self.count).sqrt()
        } else {
            0.0
        };
        Estimate { mean: self.mean, std_error }
    }
}

/// Runs `trials` independent draws split into seeded chunks and merges the
/// per-chunk moments in chunk order, so the result depends only on `master`.
fn chunked_moments<const N: usize, F>(trials: usize, master: u64, draw: F) -> [Moments; N]
where
    F: Fn(&mut RandomSource, &mut Workspace) -> [f64; N] + Sync,
{
    let chunks = trials.div_ceil(MC_CHUNK);
    let parts: Vec<[Moments; N]> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_source(master, c as u64);
            let mut ws = Workspace::default();
            let len = MC_CHUNK.min(trials - c * MC_CHUNK);
            let mut acc = [Moments::default(); N];
            for _ in 0..len {
                let x = draw(&mut rng, &mut ws);
                for (a, v) in acc.iter_mut().zip(x) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();
    parts.into_iter().fold([Moments::default(); N], |mut total, p| {
        for (t, v) in total.iter_mut().zip(p) {
            *t = t.merge(v);
        }
        total
    })
}

/// Scratch buffers for the Monte Carlo kernels. Matrices are row-major.
#[derive(Default)]
struct Workspace {
    u: Vec<Complex64>,
    w: Vec<Complex64>,
    x: Vec<Complex64>,
    g: Vec<Complex64>,
}

/// Fills `u` (k x k, row-major) with a Haar unitary: modified Gram-Schmidt on
/// Ginibre columns, which leaves `R` with a positive diagonal.
fn haar_into(k: usize, rng: &mut RandomSource, u: &mut Vec<Complex64>) {
    u.clear();
    u.extend((0..k * k).map(|_| standard_complex_normal(rng)));
    for c in 0..k {
        for p in 0..c {
            let mut dot = Complex64::ZERO;
            for r in 0..k {
                dot += u[r * k + p].conj() * u[r * k + c];
            }
            for r in 0..k {
                let v = u[r * k + p];
                u[r * k + c] -= dot * v;
            }
        }
        let norm = (0..k).map(|r| u[r * k + c].norm_sqr()).sum::<f64>().sqrt();
        for r in 0..k {
            u[r * k + c] /= norm;
        }
    }
}

/// `log det(I + X^H X)` for `X = W diag(sqrt(sigma)) U diag(sqrt(gamma))`,
/// restricted to the active columns of `gamma`, through a Cholesky factor.
fn log_det_kernel(
    m: usize,
    k: usize,
    root_sigma: &[f64],
    active: &[(usize, f64)],
    u: &[Complex64],
    ws_w: &mut Vec<Complex64>,
    ws_x: &mut Vec<Complex64>,
    ws_g: &mut Vec<Complex64>,
    rng: &mut RandomSource,
) -> f64 {
    let n = active.len();
    ws_w.clear();
    ws_w.extend((0..m * k).map(|_| standard_complex_normal(rng)));
    ws_x.clear();
    ws_x.resize(m * n, Complex64::ZERO);
    for r in 0..m {
        for (c, &(col, root_g)) in active.iter().enumerate() {
            let mut acc = Complex64::ZERO;
            for t in 0..k {
                acc += ws_w[r * k + t] * (root_sigma[t] * u[t * k + col]);
            }
            ws_x[r * n + c] = acc * root_g;
        }
    }
    ws_g.clear();
    ws_g.resize(n * n, Complex64::ZERO);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = if i == j { Complex64::ONE } else { Complex64::ZERO };
            for r in 0..m {
                acc += ws_x[r * n + i] * ws_x[r * n + j].conj();
            }
            ws_g[i * n + j] = acc;
        }
    }
    // In-place Cholesky of the lower triangle.
    let mut log_det = 0.0;
    for j in 0..n {
        let mut d = ws_g[j * n + j].re;
        for p in 0..j {
            d -= ws_g[j * n + p].norm_sqr();
        }
        let l = d.sqrt();
        log_det += 2.0 * l.ln();
        ws_g[j * n + j] = Complex64::new(l, 0.0);
        for i in j + 1..n {
            let mut acc = ws_g[i * n + j];
            for p in 0..j {
                acc -= ws_g[i * n + p] * ws_g[j * n + p].conj();
            }
            ws_g[i * n + j] = acc / l;
        }
    }
    log_det
}

fn active_columns(values: &[f64]) -> Vec<(usize, f64)> {
    values
        .iter()
        .enumerate()
        .filter(|(_, g)| **g > 0.0)
        .map(|(i, g)| (i, g.sqrt()))
        .collect()
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::Precondition("at least one Monte Carlo trial is needed".into()));
    }
    Ok(())
}

fn flatten(v1: &CMatrix) -> Vec<Complex64> {
    let k = v1.nrows();
    (0..k * k).map(|i| v1[(i / k, i % k)]).collect()
}

/// `E_W log det(I + W S^{1/2} V1 G V1^H S^{1/2} W^H)` with `V1` fixed.
pub fn f_e_exact_mc(
    gamma: &EffectiveGamma,
    sigma: &[f64],
    v1: &CMatrix,
    m_eve: usize,
    trials: usize,
    rng: &mut RandomSource,
) -> Result<Estimate> {
    check_m(m_eve)?;
    check_trials(trials)?;
    let k = gamma.len();
    check_sigma(sigma, k)?;
    if v1.shape() != (k, k) {
        return Err(Error::Precondition(format!("V1 must be {k}x{k}")));
    }
    let master: u64 = rng.random();
    if gamma.active_count == 0 {
        return Ok(Estimate { mean: 0.0, std_error: 0.0 });
    }
    let root_sigma: Vec<f64> = sigma.iter().map(|s| s.sqrt()).collect();
    let active = active_columns(&gamma.values);
    let u = flatten(v1);
    let [m] = chunked_moments(trials, master, |rng, ws| {
        [log_det_kernel(m_eve, k, &root_sigma, &active, &u, &mut ws.w, &mut ws.x, &mut ws.g, rng)]
    });
    Ok(m.estimate())
}

/// Paired estimate of the exact eavesdropper rate difference
/// `R_E = f_E(gamma_s + gamma_a; V1) - f_E(gamma_a; V1)`, using the same `W`
/// for both terms.
pub fn rate_eve_exact_mc(
    alloc: &PowerAllocation,
    sigma: &[f64],
    v1: &CMatrix,
    m_eve: usize,
    trials: usize,
    rng: &mut RandomSource,
) -> Result<Estimate> {
    check_m(m_eve)?;
    check_trials(trials)?;
    let k = alloc.len();
    check_sigma(sigma, k)?;
    if v1.shape() != (k, k) {
        return Err(Error::Precondition(format!("V1 must be {k}x{k}")));
    }
    let master: u64 = rng.random();
    let with_signal = EffectiveGamma::new(&alloc.total(), alloc.budget)?;
    let noise_only = EffectiveGamma::new(&alloc.gamma_a, alloc.budget)?;
    let root_sigma: Vec<f64> = sigma.iter().map(|s| s.sqrt()).collect();
    let act_total = active_columns(&with_signal.values);
    let act_noise = active_columns(&noise_only.values);
    let u = flatten(v1);
    let [m] = chunked_moments(trials, master, |rng, ws| {
        // Same W for both terms: draw once, replay through a cloned stream.
        let mut replay = rng.clone();
        let a = log_det_kernel(m_eve, k, &root_sigma, &act_total, &u, &mut ws.w, &mut ws.x, &mut ws.g, rng);
        let b = if act_noise.is_empty() {
            0.0
        } else {
            log_det_kernel(m_eve, k, &root_sigma, &act_noise, &u, &mut ws.w, &mut ws.x, &mut ws.g, &mut replay)
        };
        [a - b]
    });
    Ok(m.estimate())
}

/// Monte Carlo estimates over Haar `U` and Rayleigh `W` of both
/// `E det(I + W S^{1/2} U G U^H S^{1/2} W^H)` and `E log det(...)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarAverage {
    pub det: Estimate,
    pub log_det: Estimate,
}

impl HaarAverage {
    /// `log` of the mean determinant with a delta-method standard error.
    pub fn log_mean_det(&self) -> Estimate {
        Estimate {
            mean: self.det.mean.ln(),
            std_error: self.det.std_error / self.det.mean,
        }
    }
}

/// Monte Carlo oracle for the closed form: averages over `W` and Haar `U`.
pub fn f_tilde_e_mc(
    gamma: &EffectiveGamma,
    sigma: &[f64],
    m_eve: usize,
    trials: usize,
    rng: &mut RandomSource,
) -> Result<HaarAverage> {
    check_m(m_eve)?;
    check_trials(trials)?;
    let k = gamma.len();
    check_sigma(sigma, k)?;
    let master: u64 = rng.random();
    if gamma.active_count == 0 {
        let one = Estimate { mean: 1.0, std_error: 0.0 };
        return Ok(HaarAverage { det: one, log_det: Estimate { mean: 0.0, std_error: 0.0 } });
    }
    let root_sigma: Vec<f64> = sigma.iter().map(|s| s.sqrt()).collect();
    let active = active_columns(&gamma.values);
    let [det, log] = chunked_moments(trials, master, |rng, ws| {
        haar_into(k, rng, &mut ws.u);
        let l = log_det_kernel(m_eve, k, &root_sigma, &active, &ws.u, &mut ws.w, &mut ws.x, &mut ws.g, rng);
        [l.exp(), l]
    });
    Ok(HaarAverage { det: det.estimate(), log_det: log.estimate() })
}

/// `E_{W,U} det(...)` by its elementary symmetric expansion
/// `sum_k M!/(M-k)! e_k(sigma) e_k(gamma) / C(K, k)`.
///
/// This is an independent route to the same expectation, used to cross-check
/// the structured closed form.
pub fn expected_det_by_symmetric_sums(gamma: &[f64], sigma: &[f64], m_eve: usize) -> Result<f64> {
    let k = gamma.len();
    check_sigma(sigma, k)?;
    let elementary = |v: &[f64]| {
        let mut e = vec![0.0; k + 1];
        e[0] = 1.0;
        for &x in v {
            for d in (1..=k).rev() {
                e[d] += x * e[d - 1];
            }
        }
        e
    };
    let es = elementary(sigma);
    let eg = elementary(gamma);
    let mut total = 0.0;
    let mut falling = 1.0;
    let mut binom = 1.0;
    for d in 0..=k.min(m_eve) {
        if d > 0 {
            falling *= (m_eve + 1 - d) as f64;
            binom *= (k + 1 - d) as f64 / d as f64;
        }
        total += falling * es[d] * eg[d] / binom;
    }
    Ok(total)
}

fn elementary_symmetric(v: &[f64], degree: usize) -> Vec<f64> {
    let mut e = vec![0.0; degree + 1];
    e[0] = 1.0;
    for &x in v {
        for d in (1..=degree).rev() {
            e[d] += x * e[d - 1];
        }
    }
    e
}

/// Log of the Haar-averaged determinant with its gradient and Hessian in
/// `gamma`, from the multi-affine symmetric-sum form. Smooth on the whole
/// closed orthant, including at zero powers.
pub fn log_expected_det_derivatives(gamma: &[f64], sigma: &[f64], m_eve: usize) -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
    let k = gamma.len();
    check_sigma(sigma, k)?;
    if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::Domain(format!("powers must be finite and >= 0, got {gamma:?}")));
    }
    let top = k.min(m_eve);
    let es = elementary_symmetric(sigma, k);
    // weight[d] multiplies e_d(gamma).
    let mut weight = vec![0.0; top + 1];
    let mut falling = 1.0;
    let mut binom = 1.0;
    for d in 0..=top {
        if d > 0 {
            falling *= (m_eve + 1 - d) as f64;
            binom *= (k + 1 - d) as f64 / d as f64;
        }
        weight[d] = falling * es[d] / binom;
    }
    let poly = |v: &[f64], shift: usize| -> f64 {
        let e = elementary_symmetric(v, top);
        (shift..=top).map(|d| weight[d] * e[d - shift]).sum()
    };
    let value = poly(gamma, 0);
    if !(value > 0.0) || !value.is_finite() {
        return Err(Error::Numeric(format!("expected determinant {value} is not positive")));
    }
    let without = |skip: &[usize]| -> Vec<f64> {
        gamma.iter().enumerate().filter(|(i, _)| !skip.contains(i)).map(|(_, g)| *g).collect()
    };
    let first: Vec<f64> = (0..k).map(|j| poly(&without(&[j]), 1)).collect();
    let mut hess = DMatrix::<f64>::zeros(k, k);
    for j in 0..k {
        for l in 0..k {
            let second = if j == l || top < 2 { 0.0 } else { poly(&without(&[j, l]), 2) };
            hess[(j, l)] = second / value - first[j] * first[l] / (value * value);
        }
    }
    let grad = first.iter().map(|f| f / value).collect();
    Ok((value.ln(), grad, hess))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{builtin_h1, sample_haar_unitary};
    use crate::rng::from_seed;
    use crate::special::vandermonde_log;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn eg(v: &[f64]) -> EffectiveGamma {
        EffectiveGamma::new(v, 10.0).unwrap()
    }

    fn oracle(g: &[f64], s: &[f64], m: usize) -> f64 {
        expected_det_by_symmetric_sums(g, s, m).unwrap().ln()
    }

    fn random_point(rng: &mut RandomSource, k: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
        let sigma: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..3.0)).collect();
        let mut gamma: Vec<f64> = (0..k).map(|i| if i < n { rng.random_range(0.1..5.0) } else { 0.0 }).collect();
        // Shuffle so zeros are not always trailing.
        for i in (1..k).rev() {
            let j = rng.random_range(0..=i);
            gamma.swap(i, j);
        }
        (gamma, sigma)
    }

    /// The closed form as a raw ratio of determinants with explicit
    /// Vandermonde denominators; only usable for well-separated inputs.
    fn raw_ratio_form(g: &[f64], s: &[f64], m: usize) -> f64 {
        let k = s.len();
        let ge = eg(g);
        let ga = ge.active();
        let n = ga.len();
        let lg = |x: usize| ln_gamma_int(x);
        let vs = vandermonde_log(s);
        let vg = vandermonde_log(&ga);
        let det = |rows: Vec<Vec<f64>>| {
            let d = rows.len();
            log_det(&DMatrix::from_fn(d, d, |i, j| rows[i][j])).unwrap()
        };
        if m >= k {
            let c = hyp2f0_coefficients(m, k).unwrap();
            let mut rows: Vec<Vec<f64>> = (0..k - n).map(|i| s.iter().map(|x| x.powi(i as i32)).collect()).collect();
            for &gi in &ga {
                rows.push(s.iter().map(|&x| crate::special::TerminatingSeries::evaluate(&c, x * gi).value).collect());
            }
            let d = det(rows);
            let cst: f64 = (k - n..k).map(|j| lg(k + 1 - j) + lg(j + 1) + lg(m - k + 1) - lg(k + 1) - lg(m - k + j + 1)).sum();
            let pg: f64 = ga.iter().map(|x| (k - n) as f64 * x.ln()).sum();
            return cst + d.log_abs - vs.log_abs - vg.log_abs - pg;
        }
        let dcoef = hyp3f1_coefficients(m, k, false).unwrap();
        let f = |x: f64| crate::special::TerminatingSeries::evaluate(&dcoef, x).value;
        if n <= m {
            let mut rows: Vec<Vec<f64>> = (0..k - n).map(|i| s.iter().map(|x| x.powi(i as i32)).collect()).collect();
            for &gi in &ga {
                rows.push(s.iter().map(|&x| x.powi((k - m) as i32) * f(x * gi)).collect());
            }
            let d = det(rows);
            let cst: f64 = (k - n..k).map(|j| lg(k + 1 - j) + lg(j + 1) - lg(m + 1) - lg(m + j + 1 - k)).sum::<f64>() - n as f64 * lg(k - m + 1);
            let pg: f64 = ga.iter().map(|x| (n as f64 - m as f64) * x.ln()).sum();
            return cst + d.log_abs + pg - vs.log_abs - vg.log_abs;
        }
        let mut rows: Vec<Vec<f64>> = (0..k - m)
            .map(|i| {
                let mut r = vec![0.0; n - m];
                r.extend(s.iter().map(|x| x.powi(i as i32)));
                r
            })
            .collect();
        for &gi in &ga {
            let mut r: Vec<f64> = (0..n - m).map(|c| gi.powi(c as i32)).collect();
            r.extend(s.iter().map(|&x| gi.powi((n - m) as i32) * x.powi((k - m) as i32) * f(x * gi)));
            rows.push(r);
        }
        let d = det(rows);
        let cst: f64 = (n - m..n).map(|j| lg(n + 1 - j) + lg(k - n + j + 1) - lg(k - m + 1) - lg(m + j + 1 - n)).sum::<f64>() - m as f64 * lg(m + 1);
        cst + d.log_abs - vs.log_abs - vg.log_abs
    }

    #[test]
    fn f_b_examples() {
        assert_eq!(f_b(&[0.0, 0.0], &[1.0, 2.0], 10.0, 10.0).unwrap(), 0.0);
        let e1 = std::f64::consts::E - 1.0;
        assert!((f_b(&[e1], &[1.0], 5.0, 5.0).unwrap() - 1.0).abs() < 1e-15);
        let (g, l) = ([0.3, 1.7, 2.2], [2.5, 0.8, 0.1]);
        let diag = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 + 2.0 * l[i] * g[i] } else { 0.0 });
        let direct = log_det(&diag).unwrap().log_abs;
        assert!((f_b(&g, &l, 20.0, 10.0).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn grad_f_b_examples() {
        let l = [2.0, 0.5, 0.0];
        let g0 = grad_f_b(&[0.0; 3], &l, 20.0, 10.0).unwrap();
        assert_eq!(g0, vec![4.0, 1.0, 0.0]);
        let g = [0.4, 1.1, 0.7];
        let grad = grad_f_b(&g, &l, 20.0, 10.0).unwrap();
        for i in 0..3 {
            let h = 1e-5 * g[i].max(1.0);
            let mut up = g;
            let mut dn = g;
            up[i] += h;
            dn[i] -= h;
            let fd = (f_b(&up, &l, 20.0, 10.0).unwrap() - f_b(&dn, &l, 20.0, 10.0).unwrap()) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1e-12) + 1e-12);
        }
    }

    #[test]
    fn effective_gamma_threshold_and_order() {
        let e = EffectiveGamma::new(&[0.5, 1e-12, 2.0, 0.0], 10.0).unwrap();
        assert_eq!(e.active_count, 2);
        assert_eq!(e.values[1], 0.0);
        assert_eq!(e.order[0], 2);
        assert_eq!(e.sorted(), vec![2.0, 0.5, 0.0, 0.0]);
        let mut seen = e.order.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        assert!(EffectiveGamma::new(&[-1.0], 10.0).is_err());
    }

    #[test]
    fn silent_and_single_node_cases() {
        assert_eq!(f_tilde_e(&eg(&[0.0, 0.0]), &[1.0, 2.0], 2).unwrap(), 0.0);
        for m in 1..=8 {
            let (g, s) = (1.7, 0.6);
            let expected = (1.0 + g * s * m as f64).ln();
            assert!((f_tilde_e(&eg(&[g]), &[s], m).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn regime_dispatch() {
        assert_eq!(regime_of(&eg(&[0.0, 0.0]), 2), Regime::Silent);
        assert_eq!(regime_of(&eg(&[1.0, 2.0]), 2), Regime::AntennaRich);
        assert_eq!(regime_of(&eg(&[1.0, 0.0, 0.0]), 2), Regime::AntennaPoor);
        assert_eq!(regime_of(&eg(&[1.0, 2.0, 0.0]), 1), Regime::AntennaPoorHighRank);
    }

    #[test]
    fn matches_symmetric_sum_expansion() {
        let mut rng = from_seed(17);
        // The structured determinant loses digits as K grows.
        let tol = [0.0, 1e-12, 1e-12, 1e-11, 1e-9, 1e-6, 1e-4];
        for k in 1..=6 {
            for m in 1..=8 {
                for t in 0..10 {
                    let n = 1 + t % k;
                    let (g, s) = random_point(&mut rng, k, n);
                    let got = f_tilde_e(&eg(&g), &s, m).unwrap();
                    let want = oracle(&g, &s, m);
                    let err = (got - want).abs() / want.abs().max(1.0);
                    assert!(err < tol[k], "K={k} M={m} n={n}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn matches_raw_ratio_form_on_separated_inputs() {
        let mut rng = from_seed(3);
        for k in 1..=4 {
            for m in 1..=5 {
                for n in 1..=k {
                    let sigma: Vec<f64> = (0..k).map(|i| 0.4 + 0.7 * i as f64 + rng.random_range(0.0..0.1)).collect();
                    let gamma: Vec<f64> = (0..k).map(|i| if i < n { 0.5 + 1.1 * i as f64 } else { 0.0 }).collect();
                    let got = f_tilde_e(&eg(&gamma), &sigma, m).unwrap();
                    let raw = raw_ratio_form(&gamma, &sigma, m);
                    assert!((got - raw).abs() < 1e-7, "K={k} M={m} n={n}: {got} vs {raw}");
                }
            }
        }
    }

    #[test]
    fn ties_and_repeated_gains() {
        let s = [1.3, 1.3, 0.7];
        let g = [2.0, 2.0, 0.0];
        for m in 1..=4 {
            let got = f_tilde_e(&eg(&g), &s, m).unwrap();
            assert!((got - oracle(&g, &s, m)).abs() < 1e-9);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = from_seed(29);
        for k in 1..=4 {
            for m in 1..=5 {
                for n in 0..=k {
                    let (g, s) = random_point(&mut rng, k, n);
                    let e = eg(&g);
                    let grad = grad_f_tilde_e(&e, &s, m).unwrap();
                    assert!(!grad.fallback);
                    for i in 0..k {
                        let h = 1e-5 * g[i].max(1.0);
                        // The symmetric-sum oracle is a polynomial, so a
                        // central difference is valid at zero coordinates too.
                        let mut up = g.clone();
                        let mut dn = g.clone();
                        up[i] += h;
                        dn[i] -= h;
                        let fd = (oracle(&up, &s, m) - oracle(&dn, &s, m)) / (2.0 * h);
                        let tol = 1e-6 * fd.abs().max(1e-3);
                        assert!((grad.values[i] - fd).abs() < tol, "K={k} M={m} n={n} i={i}: {} vs {fd}", grad.values[i]);
                    }
                }
            }
        }
    }

    #[test]
    fn single_node_gradient() {
        for m in 1..=5 {
            let (g, s) = (0.8, 1.9);
            let grad = grad_f_tilde_e(&eg(&[g]), &[s], m).unwrap();
            let want = s * m as f64 / (1.0 + g * s * m as f64);
            assert!((grad.values[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rate_eve_diff_examples() {
        let alloc = PowerAllocation::new(vec![0.0, 0.0], vec![1.0, 2.0], 10.0).unwrap();
        assert!(rate_eve_diff(&alloc, &[0.5, 1.5], 2).unwrap().abs() < 1e-12);
        let alloc = PowerAllocation::new(vec![3.0], vec![0.0], 10.0).unwrap();
        let want = (1.0 + 3.0 * 0.4 * 3.0f64).ln();
        assert!((rate_eve_diff(&alloc, &[0.4], 3).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn allocation_validation() {
        assert!(PowerAllocation::new(vec![5.0], vec![5.1], 10.0).is_err());
        assert!(PowerAllocation::new(vec![-0.1], vec![0.0], 10.0).is_err());
        assert!(PowerAllocation::new(vec![1.0], vec![0.0, 0.0], 10.0).is_err());
        assert!(PowerAllocation::new(vec![5.0], vec![5.0], 10.0).is_ok());
    }

    #[test]
    fn secrecy_objective_examples() {
        let chan = MainChannel::from_matrix(builtin_h1()).unwrap();
        let eve = EveGainProfile { sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 1.0, 1.2]) };
        let zero = PowerAllocation::zeros(2, 10.0);
        let r = secrecy_objective(&zero, &chan, &eve, 2, 10.0, 10.0).unwrap();
        assert_eq!(r.secrecy, 0.0);

        let alloc = PowerAllocation::new(vec![4.0, 1.0], vec![1.0, 2.0], 10.0).unwrap();
        let r = secrecy_objective(&alloc, &chan, &eve, 2, 10.0, 10.0).unwrap();
        let per: Vec<f64> = eve.rows().iter().map(|s| rate_eve_diff(&alloc, s, 2).unwrap()).collect();
        assert_eq!(r.rate_eve_per_loc, per);
        assert!((r.secrecy - (r.rate_bob - per[0].max(per[1]))).abs() < 1e-15);
        let single = EveGainProfile { sigma: eve.sigma.rows(1, 1).into_owned() };
        let r1 = secrecy_objective(&alloc, &chan, &single, 2, 10.0, 10.0).unwrap();
        assert!((r1.secrecy - (r1.rate_bob - per[1])).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_matches_closed_form_small() {
        let mut rng = from_seed(101);
        let cases: [(&[f64], &[f64], usize); 3] =
            [(&[2.0, 1.0], &[1.0, 0.5], 2), (&[1.5, 0.7, 0.0], &[0.9, 1.4, 0.6], 1), (&[1.0, 0.5, 0.2], &[0.9, 1.4, 0.6], 2)];
        for (g, s, m) in cases {
            let e = eg(g);
            let mc = f_tilde_e_mc(&e, s, m, 200_000, &mut rng).unwrap().log_mean_det();
            let cf = f_tilde_e(&e, s, m).unwrap();
            assert!((mc.mean - cf).abs() < 4.0 * mc.std_error, "{} vs {cf} ({})", mc.mean, mc.std_error);
        }
    }

    #[test]
    fn jensen_direction() {
        let mut rng = from_seed(55);
        let e = eg(&[2.0, 1.0, 0.5]);
        let s = [1.0, 0.4, 2.0];
        let mc = f_tilde_e_mc(&e, &s, 2, 100_000, &mut rng).unwrap();
        let cf = f_tilde_e(&e, &s, 2).unwrap();
        assert!(cf + 3.0 * mc.log_det.std_error >= mc.log_det.mean);
    }

    #[test]
    fn exact_mc_single_node_quadrature() {
        // E log(1 + g s X) with X ~ Gamma(M, 1), by Gauss-Laguerre-free
        // trapezoid quadrature on a fine grid.
        let (g, s, m) = (1.5, 0.8, 3usize);
        let density = |x: f64| x.powi(m as i32 - 1) * (-x).exp() / 2.0;
        let step = 1e-3;
        let quad: f64 = (1..60_000).map(|i| {
            let x = i as f64 * step;
            (1.0 + g * s * x).ln() * density(x) * step
        }).sum();
        let mut rng = from_seed(77);
        let v1 = sample_haar_unitary(1, &mut rng).unwrap();
        let est = f_e_exact_mc(&eg(&[g]), &[s], &v1, m, 200_000, &mut rng).unwrap();
        assert!((est.mean - quad).abs() < 3.0 * est.std_error, "{} vs {quad}", est.mean);
        let zero = f_e_exact_mc(&eg(&[0.0]), &[s], &v1, m, 10, &mut rng).unwrap();
        assert_eq!(zero, Estimate { mean: 0.0, std_error: 0.0 });
    }

    #[test]
    fn paired_rate_matches_separate_estimates() {
        let chan = MainChannel::from_matrix(builtin_h1()).unwrap();
        let alloc = PowerAllocation::new(vec![3.0, 1.0], vec![0.5, 2.0], 10.0).unwrap();
        let s = [1.0, 0.7];
        let paired = rate_eve_exact_mc(&alloc, &s, &chan.v1, 2, 100_000, &mut from_seed(4)).unwrap();
        let a = f_e_exact_mc(&eg(&alloc.total()), &s, &chan.v1, 2, 100_000, &mut from_seed(5)).unwrap();
        let b = f_e_exact_mc(&eg(&alloc.gamma_a), &s, &chan.v1, 2, 100_000, &mut from_seed(6)).unwrap();
        let se = (a.std_error.powi(2) + b.std_error.powi(2) + paired.std_error.powi(2)).sqrt();
        assert!((paired.mean - (a.mean - b.mean)).abs() < 4.0 * se);
        assert!(paired.std_error < a.std_error);
    }

    #[test]
    fn monte_carlo_is_seed_deterministic() {
        let e = eg(&[1.0, 2.0]);
        let a = f_tilde_e_mc(&e, &[1.0, 0.5], 2, 40_000, &mut from_seed(9)).unwrap();
        let b = f_tilde_e_mc(&e, &[1.0, 0.5], 2, 40_000, &mut from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn haar_kernel_is_unitary() {
        let mut rng = from_seed(1);
        let mut u = Vec::new();
        haar_into(5, &mut rng, &mut u);
        let m = CMatrix::from_fn(5, 5, |r, c| u[r * 5 + c]);
        assert!(crate::channel::unitarity_error(&m) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn permutation_invariance(k in 1usize..5, m in 1usize..5, seed in 0u64..1000) {
            let mut rng = from_seed(seed);
            let (g, s) = random_point(&mut rng, k, 1 + (seed as usize) % k);
            let base = f_tilde_e(&eg(&g), &s, m).unwrap();
            let mut p = g.clone();
            p.rotate_left(1);
            let rotated = f_tilde_e(&eg(&p), &s, m).unwrap();
            prop_assert!((base - rotated).abs() < 1e-9);
        }

        #[test]
        fn monotone_in_gamma_and_sigma(k in 1usize..5, m in 1usize..5, seed in 0u64..1000, i in 0usize..4) {
            let mut rng = from_seed(seed);
            let (g, s) = random_point(&mut rng, k, k);
            let i = i % k;
            let base = f_tilde_e(&eg(&g), &s, m).unwrap();
            let mut g2 = g.clone();
            g2[i] += 0.3;
            prop_assert!(f_tilde_e(&eg(&g2), &s, m).unwrap() >= base - 1e-12);
            let mut s2 = s.clone();
            s2[i] += 0.3;
            prop_assert!(f_tilde_e(&eg(&g), &s2, m).unwrap() >= base - 1e-12);
        }
    }

    #[test]
    fn zero_power_continuity() {
        let mut rng = from_seed(8);
        for k in 2..=4 {
            for m in 1..=4 {
                for n in 1..=k {
                    let (mut g, s) = random_point(&mut rng, k, k);
                    g.sort_by(|a, b| b.total_cmp(a));
                    for x in g.iter_mut().skip(n) {
                        *x = 0.0;
                    }
                    let at_zero = f_tilde_e(&eg(&g), &s, m).unwrap();
                    if n < k {
                        g[n] = 1e-5;
                        let near = f_tilde_e(&eg(&g), &s, m).unwrap();
                        assert!((near - at_zero).abs() < 1e-4);
                    }
                }
            }
        }
    }

    #[test]
    fn noise_term_derivatives_match_closed_form_and_differences() {
        let mut rng = from_seed(41);
        for k in 1..=5 {
            for m in 1..=3 {
                for n in 0..=k {
                    let (gamma, sigma) = random_point(&mut rng, k, n);
                    let (value, grad, hess) = log_expected_det_derivatives(&gamma, &sigma, m).unwrap();
                    let closed = f_tilde_e(&eg(&gamma), &sigma, m).unwrap();
                    assert!((value - closed).abs() <= 1e-5 * closed.abs().max(1.0), "k={k} m={m}: {value} vs {closed}");
                    let h = 1e-5;
                    for j in 0..k {
                        let mut up = gamma.clone();
                        up[j] += h;
                        let (vu, gu, _) = log_expected_det_derivatives(&up, &sigma, m).unwrap();
                        let fd = (vu - value) / h;
                        assert!((fd - grad[j]).abs() <= 1e-4 * fd.abs().max(1e-2), "grad k={k} m={m} j={j}");
                        for l in 0..k {
                            let fd2 = (gu[l] - grad[l]) / h;
                            assert!((fd2 - hess[(l, j)]).abs() <= 1e-3 * fd2.abs().max(1e-2), "hess k={k} m={m}");
                        }
                    }
                    let eig = hess.symmetric_eigen().eigenvalues;
                    assert!(eig.max() <= 1e-9, "log expected det not concave: {eig:?}");
                }
            }
        }
    }
}
