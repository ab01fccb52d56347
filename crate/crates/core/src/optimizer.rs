//! Power optimization: water-filling, the surrogate of the secrecy objective,
//! the concave sub-problem, the iterative outer loop and an exhaustive
//! lattice search used as a baseline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::avg_rate::{
    f_b, f_tilde_e, f_tilde_e_values, grad_f_b, grad_f_tilde_e, log_expected_det_derivatives, secrecy_objective,
    EffectiveGamma, PowerAllocation,
};
use crate::channel::MainChannel;
use crate::error::{Error, Result};
use crate::scenario::EveGainProfile;

/// Default stopping threshold of the outer loop, nats/s/Hz.
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Default outer iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 50;
/// Default duality-gap target of the sub-problem solver.
pub const DEFAULT_SUBPROBLEM_TOL: f64 = 1e-8;
/// Hard cap on lattice points visited by [`exhaustive_search`].
pub const EXHAUSTIVE_CAP: u128 = 100_000_000;

/// Water-filling powers and whether the channel was degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFilling {
    pub powers: Vec<f64>,
    /// All eigenvalues were zero; the powers are a uniform split.
    pub degenerate: bool,
}

/// Maximizes `sum_k log(1 + (gamma_b / gamma_e) lambda_k p_k)` subject to
/// `p >= 0`, `sum p <= budget`.
pub fn water_filling(lambda: &[f64], gamma_b: f64, gamma_e: f64, budget: f64) -> Result<WaterFilling> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::Precondition(format!("budget must be >= 0, got {budget}")));
    }
    let k = lambda.len();
    if k == 0 {
        return Err(Error::Precondition("no eigen-directions".into()));
    }
    let ratio = gamma_b / gamma_e;
    let gains: Vec<f64> = lambda.iter().map(|l| ratio * l).collect();
    if gains.iter().all(|g| *g <= 0.0) {
        return Ok(WaterFilling { powers: vec![budget / k as f64; k], degenerate: true });
    }
    let mut order: Vec<usize> = (0..k).filter(|&i| gains[i] > 0.0).collect();
    order.sort_by(|&a, &b| gains[b].total_cmp(&gains[a]));
    // Largest active set whose water level clears every member's floor.
    let mut level = 0.0;
    let mut inverse_sum = 0.0;
    for (p, &i) in order.iter().enumerate() {
        let candidate = (budget + inverse_sum + 1.0 / gains[i]) / (p + 1) as f64;
        if candidate <= 1.0 / gains[i] {
            break;
        }
        inverse_sum += 1.0 / gains[i];
        level = candidate;
    }
    let powers = (0..k)
        .map(|i| if gains[i] > 0.0 { (level - 1.0 / gains[i]).max(0.0) } else { 0.0 })
        .collect();
    Ok(WaterFilling { powers, degenerate: false })
}

/// How the eavesdropper's noise-only term `f~_E,i(a)` enters the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    /// Linearized at the expansion point along with every other term.
    Affine,
    /// Kept exact. Being concave, it makes the surrogate a global lower
    /// bound of the secrecy objective, so the outer loop ascends monotonically.
    #[default]
    ExactNoise,
}

/// The secrecy objective linearized at an expansion point:
/// `f_B(s + a) - [f_B(a0) + gB.(a - a0)] - max_i [c_i + p_i.(s + a) - q_i.a]`
/// for [`SurrogateKind::Affine`], with `q_i.a` replaced by
/// `f~_E,i(a) - f~_E,i(a0) + q_i.a0` for [`SurrogateKind::ExactNoise`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub kind: SurrogateKind,
    pub expansion_point: PowerAllocation,
    pub lambda: Vec<f64>,
    pub gamma_b: f64,
    pub gamma_e: f64,
    /// `f_B(a0)`.
    pub f_b_at_gamma_a: f64,
    /// `grad f_B(a0)`.
    pub grad_b_at_gamma_a: Vec<f64>,
    /// `f~_E,i(s0 + a0)` per location.
    pub f_e_at_total: Vec<f64>,
    /// `f~_E,i(a0)` per location.
    pub f_e_at_gamma_a: Vec<f64>,
    /// `grad f~_E,i(s0 + a0)` per location.
    pub grad_e_at_total: Vec<Vec<f64>>,
    /// `grad f~_E,i(a0)` per location.
    pub grad_e_at_gamma_a: Vec<Vec<f64>>,
    /// Eavesdropper gain row per location.
    pub sigma: Vec<Vec<f64>>,
    pub m_eve: usize,
    /// Set when any gradient fell back to finite differences.
    pub used_fallback: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl SurrogateModel {
    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn locations(&self) -> usize {
        self.f_e_at_total.len()
    }

    /// Location `i` term as `c_i + p_i.(s + a) - q_i.a`; returns `(c_i, p_i, q_i)`.
    pub fn location_affine(&self, i: usize) -> (f64, &[f64], &[f64]) {
        let t0 = self.expansion_point.total();
        let a0 = &self.expansion_point.gamma_a;
        let p = &self.grad_e_at_total[i];
        let q = &self.grad_e_at_gamma_a[i];
        let c = self.f_e_at_total[i] - dot(p, &t0) - self.f_e_at_gamma_a[i] + dot(q, a0);
        (c, p, q)
    }

    /// Bob's linearized term as `b0 + gB.a`; returns `b0`.
    pub fn bob_offset(&self) -> f64 {
        self.f_b_at_gamma_a - dot(&self.grad_b_at_gamma_a, &self.expansion_point.gamma_a)
    }

    pub fn evaluate(&self, gamma_s: &[f64], gamma_a: &[f64]) -> Result<f64> {
        let total: Vec<f64> = gamma_s.iter().zip(gamma_a).map(|(s, a)| s + a).collect();
        let bob = f_b(&total, &self.lambda, self.gamma_b, self.gamma_e)?
            - self.bob_offset()
            - dot(&self.grad_b_at_gamma_a, gamma_a);
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.locations() {
            let (c, p, q) = self.location_affine(i);
            let noise = match self.kind {
                SurrogateKind::Affine => dot(q, gamma_a),
                SurrogateKind::ExactNoise => {
                    f_tilde_e_values(gamma_a, &self.sigma[i], self.m_eve, self.gamma_e)? - self.f_e_at_gamma_a[i]
                        + dot(q, &self.expansion_point.gamma_a)
                }
            };
            worst = worst.max(c + dot(p, &total) - noise);
        }
        Ok(bob - worst)
    }

    pub fn evaluate_allocation(&self, alloc: &PowerAllocation) -> Result<f64> {
        self.evaluate(&alloc.gamma_s, &alloc.gamma_a)
    }
}

/// Linearizes the secrecy objective at `point`.
pub fn build_surrogate(
    point: &PowerAllocation,
    chan: &MainChannel,
    eve: &EveGainProfile,
    m_eve: usize,
    gamma_b: f64,
    gamma_e: f64,
) -> Result<SurrogateModel> {
    build_surrogate_of(SurrogateKind::Affine, point, chan, eve, m_eve, gamma_b, gamma_e)
}

/// As [`build_surrogate`] with a choice of noise-term treatment.
pub fn build_surrogate_of(
    kind: SurrogateKind,
    point: &PowerAllocation,
    chan: &MainChannel,
    eve: &EveGainProfile,
    m_eve: usize,
    gamma_b: f64,
    gamma_e: f64,
) -> Result<SurrogateModel> {
    let k = chan.k_tx();
    if point.len() != k || eve.sigma.ncols() != k {
        return Err(Error::Precondition("allocation, channel and gains disagree on K".into()));
    }
    let total = point.total();
    let with_signal = EffectiveGamma::new(&total, gamma_e)?;
    let noise_only = EffectiveGamma::new(&point.gamma_a, gamma_e)?;
    let per_location: Vec<Result<(f64, f64, Vec<f64>, Vec<f64>, bool)>> = eve
        .rows()
        .par_iter()
        .map(|sigma| {
            let gt = grad_f_tilde_e(&with_signal, sigma, m_eve)?;
            let ga = grad_f_tilde_e(&noise_only, sigma, m_eve)?;
            Ok((
                f_tilde_e(&with_signal, sigma, m_eve)?,
                f_tilde_e(&noise_only, sigma, m_eve)?,
                gt.values,
                ga.values,
                gt.fallback || ga.fallback,
            ))
        })
        .collect();
    let mut model = SurrogateModel {
        kind,
        expansion_point: point.clone(),
        lambda: chan.lambda.clone(),
        gamma_b,
        gamma_e,
        f_b_at_gamma_a: f_b(&point.gamma_a, &chan.lambda, gamma_b, gamma_e)?,
        grad_b_at_gamma_a: grad_f_b(&point.gamma_a, &chan.lambda, gamma_b, gamma_e)?,
        f_e_at_total: Vec::new(),
        f_e_at_gamma_a: Vec::new(),
        grad_e_at_total: Vec::new(),
        grad_e_at_gamma_a: Vec::new(),
        sigma: eve.rows(),
        m_eve,
        used_fallback: false,
    };
    for entry in per_location {
        let (ft, fa, gt, ga, fallback) = entry?;
        model.f_e_at_total.push(ft);
        model.f_e_at_gamma_a.push(fa);
        model.grad_e_at_total.push(gt);
        model.grad_e_at_gamma_a.push(ga);
        model.used_fallback |= fallback;
    }
    Ok(model)
}

/// Solution of one concave sub-problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSolution {
    pub allocation: PowerAllocation,
    /// Surrogate value at `allocation`.
    pub value: f64,
    /// Certified bound on the distance to the sub-problem optimum.
    pub duality_gap: f64,
}

/// Linear constraint `a.x + b >= 0` over `x = (s, a, tau)`.
struct Constraint {
    coef: Vec<(usize, f64)>,
    offset: f64,
}

impl Constraint {
    fn slack(&self, x: &[f64]) -> f64 {
        self.offset + self.coef.iter().map(|(i, c)| c * x[*i]).sum::<f64>()
    }
}

/// Maximizes the surrogate over `{s, a >= 0, sum(s + a) <= budget}`.
///
/// The max-over-locations term is moved into an epigraph variable `tau` and
/// the resulting smooth concave program is solved by a log-barrier
/// interior-point method with Newton centering. The returned duality gap
/// `constraints / t` bounds the suboptimality.
pub fn solve_subproblem(model: &SurrogateModel, budget: f64, tol: f64) -> Result<SubproblemSolution> {
    solve_subproblem_within(model, budget, tol, None)
}

/// As [`solve_subproblem`], additionally keeping every coordinate of
/// `(s, a)` within `radius` of the expansion point when a radius is given.
pub fn solve_subproblem_within(
    model: &SurrogateModel,
    budget: f64,
    tol: f64,
    radius: Option<f64>,
) -> Result<SubproblemSolution> {
    if !(budget >= 0.0) || !budget.is_finite() {
        return Err(Error::Precondition(format!("budget must be >= 0, got {budget}")));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be > 0, got {tol}")));
    }
    let k = model.k();
    if budget == 0.0 {
        let allocation = PowerAllocation::zeros(k, 0.0);
        let value = model.evaluate_allocation(&allocation)?;
        return Ok(SubproblemSolution { allocation, value, duality_gap: 0.0 });
    }
    let dim = 2 * k + 1;
    let tau = 2 * k;
    let ratio = model.gamma_b / model.gamma_e;
    let gb = &model.grad_b_at_gamma_a;

    if let Some(r) = radius {
        if !(r > 0.0) {
            return Err(Error::Precondition(format!("radius must be > 0, got {r}")));
        }
    }
    let center: Vec<f64> = model.expansion_point.gamma_s.iter().chain(&model.expansion_point.gamma_a).copied().collect();
    let lower: Vec<f64> = center.iter().map(|c| radius.map_or(0.0, |r| (c - r).max(0.0))).collect();
    let upper: Vec<f64> = center.iter().map(|c| radius.map_or(budget, |r| (c + r).min(budget))).collect();

    let mut constraints: Vec<Constraint> = (0..2 * k)
        .map(|i| Constraint { coef: vec![(i, 1.0)], offset: -lower[i] })
        .collect();
    constraints.push(Constraint { coef: (0..2 * k).map(|i| (i, -1.0)).collect(), offset: budget });
    // Location epigraphs. Affine ones are linear; with the exact noise term
    // the slack is `tau - c_i - p_i.(s + a) + f~_E,i(a)`, concave in `x`.
    let mut curved: Vec<(f64, &[f64], &[f64])> = Vec::new();
    for i in 0..model.locations() {
        let (c, p, q) = model.location_affine(i);
        match model.kind {
            SurrogateKind::Affine => {
                let mut coef = vec![(tau, 1.0)];
                for j in 0..k {
                    coef.push((j, -p[j]));
                    coef.push((k + j, q[j] - p[j]));
                }
                constraints.push(Constraint { coef, offset: -c });
            }
            SurrogateKind::ExactNoise => {
                let t0 = model.expansion_point.total();
                curved.push((model.f_e_at_total[i] - dot(p, &t0), p, &model.sigma[i]));
            }
        }
    }
    let linear_locations = 2 * k + 1..constraints.len();
    if radius.is_some() {
        for (i, hi) in upper.iter().enumerate() {
            constraints.push(Constraint { coef: vec![(i, -1.0)], offset: *hi });
        }
    }
    let m_c = (constraints.len() + curved.len()) as f64;
    let m_eve = model.m_eve;
    // Slack of a curved location with its gradient and Hessian in `a`.
    let curved_slack = |x: &[f64], (c, p, sigma): (f64, &[f64], &[f64])| -> Result<(f64, Vec<f64>, DMatrix<f64>)> {
        let (value, grad, hess) = log_expected_det_derivatives(&x[k..2 * k], sigma, m_eve)?;
        let total: f64 = (0..k).map(|j| p[j] * (x[j] + x[k + j])).sum();
        Ok((x[tau] - c - total + value, grad, hess))
    };

    let objective = |x: &[f64]| -> f64 {
        let mut v = -x[tau];
        for j in 0..k {
            v += (ratio * model.lambda[j] * (x[j] + x[k + j])).ln_1p() - gb[j] * x[k + j];
        }
        v
    };
    let barrier = |x: &[f64], t: f64| -> Option<f64> {
        let mut f = -t * objective(x);
        for con in &constraints {
            let s = con.slack(x);
            if !(s > 0.0) {
                return None;
            }
            f -= s.ln();
        }
        if x[k..2 * k].iter().any(|a| *a < 0.0) {
            return None;
        }
        for &loc in &curved {
            let s = curved_slack(x, loc).ok()?.0;
            if !(s > 0.0) {
                return None;
            }
            f -= s.ln();
        }
        Some(f)
    };

    // Strictly feasible start: a point of the box between its lower corner
    // and center, pulled back far enough to leave budget slack.
    let mut x = vec![0.0; dim];
    let width: f64 = upper.iter().zip(&lower).map(|(h, l)| h - l).sum();
    let room = budget - lower.iter().sum::<f64>();
    let theta = if width > 0.0 { (0.5 * room / width).min(0.25) } else { 0.0 };
    for i in 0..2 * k {
        x[i] = lower[i] + theta * (upper[i] - lower[i]);
    }
    x[tau] = 0.0;
    let mut worst = constraints[linear_locations].iter().map(|c| -c.slack(&x)).fold(f64::NEG_INFINITY, f64::max);
    for &loc in &curved {
        worst = worst.max(-curved_slack(&x, loc)?.0);
    }
    x[tau] = worst + 1.0;

    let mut t = 1.0;
    let mut newton_steps = 0usize;
    const MAX_NEWTON: usize = 10_000;
    loop {
        // Centering; a self-concordant barrier needs few steps, and the cap
        // guards against rounding-level oscillation at large t.
        for _ in 0..200 {
            newton_steps += 1;
            if newton_steps > MAX_NEWTON {
                return Err(Error::NoConvergence {
                    iterations: newton_steps,
                    detail: format!("sub-problem barrier at t = {t:e}, best iterate {x:?}"),
                });
            }
            let mut grad = DVector::<f64>::zeros(dim);
            let mut hess = DMatrix::<f64>::zeros(dim, dim);
            grad[tau] += t;
            for j in 0..k {
                let g = ratio * model.lambda[j];
                let u = 1.0 + g * (x[j] + x[k + j]);
                let w = g / u;
                let d = t * w * w;
                grad[j] -= t * w;
                grad[k + j] -= t * (w - gb[j]);
                hess[(j, j)] += d;
                hess[(j, k + j)] += d;
                hess[(k + j, j)] += d;
                hess[(k + j, k + j)] += d;
            }
            for con in &constraints {
                let s = con.slack(&x);
                for &(i, ci) in &con.coef {
                    grad[i] -= ci / s;
                    for &(l, cl) in &con.coef {
                        hess[(i, l)] += ci * cl / (s * s);
                    }
                }
            }
            for &loc in &curved {
                let (s, ga, ha) = curved_slack(&x, loc)?;
                let p = loc.1;
                let mut g = vec![0.0; dim];
                g[tau] = 1.0;
                for j in 0..k {
                    g[j] = -p[j];
                    g[k + j] = ga[j] - p[j];
                }
                for i in 0..dim {
                    grad[i] -= g[i] / s;
                    for l in 0..dim {
                        hess[(i, l)] += g[i] * g[l] / (s * s);
                    }
                }
                for i in 0..k {
                    for l in 0..k {
                        hess[(k + i, k + l)] -= ha[(i, l)] / s;
                    }
                }
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => hess
                    .lu()
                    .solve(&(-&grad))
                    .ok_or_else(|| Error::Numeric("singular barrier Hessian".into()))?,
            };
            let decrement = -grad.dot(&step);
            if !decrement.is_finite() {
                return Err(Error::Numeric("non-finite Newton step in sub-problem".into()));
            }
            if decrement / 2.0 <= 1e-10 {
                break;
            }
            let f0 = barrier(&x, t).expect("iterate is strictly feasible");
            let mut alpha = 1.0;
            let mut moved = false;
            while alpha > 1e-14 {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + alpha * di).collect();
                if let Some(f) = barrier(&trial, t) {
                    if f <= f0 - 0.25 * alpha * decrement {
                        x = trial;
                        moved = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !moved {
                // Rounding floor of the barrier value: treat as centered.
                break;
            }
        }
        if m_c / t <= tol {
            break;
        }
        t *= 20.0;
    }

    let gamma_s = x[..k].iter().map(|v| v.max(0.0)).collect();
    let gamma_a = x[k..2 * k].iter().map(|v| v.max(0.0)).collect();
    let allocation = PowerAllocation::new(gamma_s, gamma_a, budget)?;
    let value = model.evaluate_allocation(&allocation)?;
    Ok(SubproblemSolution { allocation, value, duality_gap: m_c / t })
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub allocation: PowerAllocation,
    /// Surrogate optimum of this iteration (the initial point's exact value
    /// for iteration 0).
    pub surrogate: f64,
    /// Secrecy objective with the closed-form eavesdropper rate.
    pub secrecy: f64,
    /// Neighborhood radius the sub-problem was solved in (`None` for the
    /// start point or an unrestricted solve).
    pub radius: Option<f64>,
}

/// History of the outer loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationTrace {
    /// Entry 0 is the water-filling start; entry `k` the `k`-th sub-problem.
    pub iterates: Vec<TraceEntry>,
    /// Sub-problems solved.
    pub iterations: usize,
    pub converged: bool,
    pub epsilon: f64,
    /// Set when the last surrogate improvement was negative.
    pub negative_improvement: bool,
    /// Set when any surrogate used finite-difference gradients.
    pub used_fallback: bool,
}

impl OptimizationTrace {
    pub fn last(&self) -> &TraceEntry {
        self.iterates.last().expect("trace always holds the start point")
    }

    /// `[R_s]^+` at the final iterate.
    pub fn final_rate(&self) -> f64 {
        self.last().secrecy.max(0.0)
    }

    pub fn surrogate_values(&self) -> Vec<f64> {
        self.iterates.iter().map(|e| e.surrogate).collect()
    }

    /// Whether surrogate values never drop by more than `slack`.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.iterates.windows(2).all(|w| w[1].surrogate >= w[0].surrogate - slack)
    }
}

/// Outer-loop failure carrying the iterations completed so far.
#[derive(Debug, thiserror::Error)]
#[error("optimization aborted after {} iterations: {error}", partial.iterations)]
pub struct OptimizeError {
    pub partial: OptimizationTrace,
    #[source]
    pub error: Error,
}

/// Options of the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizeOptions {
    pub epsilon: f64,
    pub max_iters: usize,
    pub subproblem_tol: f64,
    pub surrogate: SurrogateKind,
    /// Restrict each sub-problem to a neighborhood of its expansion point,
    /// halving the radius from the full budget until the surrogate optimum
    /// does not overstate the secrecy objective by more than
    /// `overshoot_tol`. When off, every sub-problem uses the whole budget set.
    pub neighborhood: bool,
    pub overshoot_tol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            subproblem_tol: DEFAULT_SUBPROBLEM_TOL,
            surrogate: SurrogateKind::default(),
            neighborhood: true,
            overshoot_tol: 1e-6,
        }
    }
}

/// Smallest neighborhood radius tried, relative to the budget.
const MIN_RELATIVE_RADIUS: f64 = 1e-9;

/// Iterates surrogate construction and sub-problem solution from the
/// water-filling start until the surrogate improves by at most `epsilon`.
pub fn optimize(
    chan: &MainChannel,
    eve: &EveGainProfile,
    m_eve: usize,
    gamma_b: f64,
    gamma_e: f64,
    options: OptimizeOptions,
) -> std::result::Result<OptimizationTrace, OptimizeError> {
    let mut trace = OptimizationTrace {
        iterates: Vec::new(),
        iterations: 0,
        converged: false,
        epsilon: options.epsilon,
        negative_improvement: false,
        used_fallback: false,
    };
    macro_rules! bail {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(OptimizeError { partial: trace, error }),
            }
        };
    }
    if !(options.epsilon > 0.0) {
        bail!(Err(Error::Precondition(format!("epsilon must be > 0, got {}", options.epsilon))));
    }
    let k = chan.k_tx();
    let wf = bail!(water_filling(&chan.lambda, gamma_b, gamma_e, gamma_e));
    let start = bail!(PowerAllocation::new(wf.powers, vec![0.0; k], gamma_e));
    let start_rate = bail!(secrecy_objective(&start, chan, eve, m_eve, gamma_b, gamma_e)).secrecy;
    trace.iterates.push(TraceEntry { allocation: start, surrogate: start_rate, secrecy: start_rate, radius: None });

    while trace.iterations < options.max_iters {
        let current = trace.last().clone();
        let model =
            bail!(build_surrogate_of(options.surrogate, &current.allocation, chan, eve, m_eve, gamma_b, gamma_e));
        trace.used_fallback |= model.used_fallback;
        let mut radius = if options.neighborhood { Some(gamma_e) } else { None };
        let (solution, secrecy) = loop {
            let solution = bail!(solve_subproblem_within(&model, gamma_e, options.subproblem_tol, radius));
            let secrecy =
                bail!(secrecy_objective(&solution.allocation, chan, eve, m_eve, gamma_b, gamma_e)).secrecy;
            match radius {
                Some(r) if solution.value > secrecy + options.overshoot_tol && r > MIN_RELATIVE_RADIUS * gamma_e => {
                    radius = Some(0.5 * r);
                }
                _ => break (solution, secrecy),
            }
        };
        trace.iterations += 1;
        let improvement = solution.value - current.surrogate;
        trace.iterates.push(TraceEntry { allocation: solution.allocation, surrogate: solution.value, secrecy, radius });
        if improvement <= options.epsilon {
            trace.negative_improvement = improvement < 0.0;
            trace.converged = true;
            break;
        }
    }
    Ok(trace)
}

/// Best lattice point of an exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub allocation: PowerAllocation,
    pub rate: f64,
    pub points: u128,
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul(n - i) / (i + 1);
    }
    r
}

/// Number of `(s, a)` lattice points with step `budget / grid` for `k` nodes.
pub fn lattice_size(k: usize, grid: usize) -> u128 {
    binomial((grid + 2 * k) as u128, (2 * k) as u128)
}

/// Visits every `(s, a)` with entries on the grid `budget * i / grid` and
/// `sum(s + a) <= budget`, and returns the best closed-form secrecy rate.
///
/// The eavesdropper and Bob terms only depend on `s + a` and `a`, so they are
/// tabulated once over the `k`-dimensional lattice and combined pairwise.
pub fn exhaustive_search(
    chan: &MainChannel,
    eve: &EveGainProfile,
    m_eve: usize,
    gamma_b: f64,
    gamma_e: f64,
    grid: usize,
) -> Result<SearchResult> {
    let k = chan.k_tx();
    if grid == 0 {
        return Err(Error::Precondition("grid must be >= 1".into()));
    }
    let points = lattice_size(k, grid);
    let table_len = ((grid + 1) as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if points > EXHAUSTIVE_CAP || table_len > EXHAUSTIVE_CAP {
        return Err(Error::Refused(format!(
            "exhaustive search over {points} lattice points exceeds the cap of {EXHAUSTIVE_CAP}"
        )));
    }
    let step = gamma_e / grid as f64;
    let radix = grid + 1;
    let table_len = table_len as usize;
    let decode = |mut idx: usize| {
        let mut v = vec![0usize; k];
        for d in v.iter_mut() {
            *d = idx % radix;
            idx /= radix;
        }
        v
    };
    let on_simplex: Vec<usize> = (0..table_len).filter(|&i| decode(i).iter().sum::<usize>() <= grid).collect();
    let locations = eve.locations();
    // Per lattice vector: f_B and each location's f~_E.
    let rows = eve.rows();
    let evaluated: Vec<(usize, f64, Vec<f64>)> = on_simplex
        .par_iter()
        .map(|&idx| {
            let v: Vec<f64> = decode(idx).iter().map(|&i| i as f64 * step).collect();
            let g = EffectiveGamma::new(&v, gamma_e)?;
            let fe = rows.iter().map(|s| f_tilde_e(&g, s, m_eve)).collect::<Result<Vec<f64>>>()?;
            Ok((idx, f_b(&v, &chan.lambda, gamma_b, gamma_e)?, fe))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut fb = vec![f64::NAN; table_len];
    let mut fe = vec![f64::NAN; table_len * locations];
    for (idx, b, e) in evaluated {
        fb[idx] = b;
        fe[idx * locations..(idx + 1) * locations].copy_from_slice(&e);
    }

    // For each total t, visit every a <= t componentwise.
    let best = on_simplex
        .par_iter()
        .map(|&t_idx| {
            let t = decode(t_idx);
            let mut best = (f64::NEG_INFINITY, 0usize);
            let mut a = vec![0usize; k];
            loop {
                let a_idx = a.iter().rev().fold(0, |acc, &d| acc * radix + d);
                let mut worst = f64::NEG_INFINITY;
                for i in 0..locations {
                    worst = worst.max(fe[t_idx * locations + i] - fe[a_idx * locations + i]);
                }
                let rate = fb[t_idx] - fb[a_idx] - worst;
                if rate > best.0 {
                    best = (rate, a_idx);
                }
                // Next a in the box [0, t].
                let mut d = 0;
                while d < k {
                    if a[d] < t[d] {
                        a[d] += 1;
                        break;
                    }
                    a[d] = 0;
                    d += 1;
                }
                if d == k {
                    break;
                }
            }
            (best.0, t_idx, best.1)
        })
        .reduce(
            || (f64::NEG_INFINITY, 0, 0),
            |x, y| if y.0 > x.0 || (y.0 == x.0 && (y.1, y.2) < (x.1, x.2)) { y } else { x },
        );
    let t = decode(best.1);
    let a = decode(best.2);
    let gamma_a: Vec<f64> = a.iter().map(|&i| i as f64 * step).collect();
    let gamma_s: Vec<f64> = t.iter().zip(&a).map(|(&ti, &ai)| (ti - ai) as f64 * step).collect();
    let allocation = PowerAllocation::new(gamma_s, gamma_a, gamma_e)?;
    Ok(SearchResult { allocation, rate: best.0, points })
}

/// Derivative-free local refinement of the closed-form secrecy rate: a
/// compass search over coordinate moves and pairwise power transfers,
/// halving the step until it falls below `min_step`.
pub fn refine_allocation(
    start: &PowerAllocation,
    chan: &MainChannel,
    eve: &EveGainProfile,
    m_eve: usize,
    gamma_b: f64,
    gamma_e: f64,
    initial_step: f64,
    min_step: f64,
) -> Result<SearchResult> {
    let k = start.len();
    let dim = 2 * k;
    let budget = start.budget;
    let pack = |al: &PowerAllocation| -> Vec<f64> { al.gamma_s.iter().chain(&al.gamma_a).copied().collect() };
    let rate = |x: &[f64]| -> Result<Option<f64>> {
        if x.iter().any(|v| *v < 0.0) || x.iter().sum::<f64>() > budget {
            return Ok(None);
        }
        let al = PowerAllocation::new(x[..k].to_vec(), x[k..].to_vec(), budget)?;
        Ok(Some(secrecy_objective(&al, chan, eve, m_eve, gamma_b, gamma_e)?.secrecy))
    };
    let mut x = pack(start);
    let mut best = rate(&x)?.ok_or_else(|| Error::Precondition("start point infeasible".into()))?;
    let mut step = initial_step;
    let mut evaluations: u128 = 1;
    while step >= min_step {
        let mut improved = false;
        let mut moves: Vec<(usize, Option<usize>, f64)> = Vec::new();
        for i in 0..dim {
            moves.push((i, None, step));
            moves.push((i, None, -step));
            for j in 0..dim {
                if i != j {
                    moves.push((i, Some(j), step));
                }
            }
        }
        for (i, j, h) in moves {
            let mut y = x.clone();
            y[i] += h;
            if let Some(j) = j {
                y[j] -= h;
            }
            // Clip tiny overshoots of the budget from rounding.
            let total: f64 = y.iter().sum();
            if total > budget && total - budget < 1e-12 * budget {
                y[i] -= total - budget;
            }
            evaluations += 1;
            if let Some(r) = rate(&y)? {
                if r > best + 1e-12 {
                    best = r;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    let allocation = PowerAllocation::new(x[..k].to_vec(), x[k..].to_vec(), budget)?;
    Ok(SearchResult { allocation, rate: best, points: evaluations })
}
