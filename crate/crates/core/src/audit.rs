//! Worst-case outer-iteration bounds for the augmented Lagrangian method and
//! checks of solver traces against them.
//!
//! Problem constants are estimated by sampling the box, so they are lower
//! bounds of the true suprema; the bounds computed from them are therefore
//! necessary (not sufficient) versions of the worst-case results.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outer::{tolerance_schedule, OuterIterate, SolveReport, SolverOptions};
use crate::problem::{infeasibility_scaled, projected_gradient, Evaluator, ProblemSpec, ScalingFactors};

/// Sampled problem constants on the scaled problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemConstants {
    /// Bound on `max(||h||_inf, ||V||_inf)`.
    pub c_big: f64,
    /// Bound on `||Jh|| ||lambda|| + ||Jg|| ||mu||`.
    pub c_lips: f64,
    /// Bound on `||grad f||`.
    pub c_f: f64,
    pub sample_count: usize,
    pub is_estimate: bool,
}

/// Multiplier box used for the constant estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultiplierBounds {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mu_max: f64,
}

impl From<&SolverOptions> for MultiplierBounds {
    fn from(o: &SolverOptions) -> Self {
        Self {
            lambda_min: o.lambda_min,
            lambda_max: o.lambda_max,
            mu_max: o.mu_max,
        }
    }
}

impl MultiplierBounds {
    fn lambda_norm_bound(&self, m: usize) -> f64 {
        (m as f64).sqrt() * self.lambda_min.abs().max(self.lambda_max.abs())
    }

    fn mu_norm_bound(&self, p: usize) -> f64 {
        (p as f64).sqrt() * self.mu_max
    }
}

/// Tolerances, penalty data and work-model constants of the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub delta: f64,
    pub delta_low: f64,
    pub epsilon: f64,
    /// Floor of the subproblem tolerance schedule.
    pub eps_opt: f64,
    pub n_eps: u64,
    pub rho1: f64,
    pub rho_bar: f64,
    pub rho_big_threshold: f64,
    pub gamma: f64,
    pub tau: f64,
    pub mu_max: f64,
    pub c_inner: f64,
    pub q: f64,
    pub v: f64,
}

impl BoundInputs {
    /// Inputs for auditing a finished run.
    ///
    /// `delta` is `100 * eps_feas`: the stopping test measures unscaled
    /// feasibility while the bounds live on the scaled problem, and scaling
    /// factors never exceed 100.
    ///
    /// `epsilon` is `4 * eps_opt` so that the quarter tolerance required by the
    /// reliable bound is still reachable by the subproblem schedule.
    pub fn for_run(report: &SolveReport, opts: &SolverOptions) -> Result<Self> {
        let epsilon = 4.0 * opts.eps_opt;
        let n_eps = first_k_below(epsilon, opts.eps_opt)
            .ok_or_else(|| Error::Contract("epsilon is below the tolerance floor".into()))?;
        let delta = 100.0 * opts.eps_feas;
        Ok(Self {
            delta,
            delta_low: (delta * 1e-2).max(opts.eps_opt * 4.0),
            epsilon,
            eps_opt: opts.eps_opt,
            n_eps,
            rho1: report.rho1,
            rho_bar: report.trace.iter().map(|t| t.rho).fold(report.rho1, f64::max),
            rho_big_threshold: opts.rho_big,
            gamma: opts.gamma,
            tau: opts.tau,
            mu_max: opts.mu_max,
            c_inner: 1.0,
            q: 1.0,
            v: 0.0,
        })
    }
}

/// First outer iteration whose subproblem tolerance is at most `target`.
pub fn first_k_below(target: f64, eps_opt: f64) -> Option<u64> {
    if target < eps_opt {
        return None;
    }
    (1..=1000u64).find(|&k| tolerance_schedule(k, eps_opt) <= target)
}

/// Nonnegative integer count `ceil(log(ratio) / log(base))`. Results within
/// 1e-9 (relative) of an integer are taken as that integer so that exact
/// powers such as `log(100)/log(10)` do not round up.
pub fn log_ratio_count(ratio: f64, base: f64) -> u64 {
    let x = ratio.ln() / base.ln();
    if x.is_nan() || x <= 0.0 {
        return 0;
    }
    if x.is_infinite() {
        return u64::MAX;
    }
    let r = x.round();
    let c = if (x - r).abs() <= 1e-9 * x.max(1.0) { r } else { x.ceil() };
    c as u64
}

fn combine(n: u64, a: u64, b: u64) -> u64 {
    n.saturating_add(a.saturating_mul(b))
}

/// Outer iterations needed when the penalty stays below `rho_bar`.
pub fn outer_bound_bounded_rho(bi: &BoundInputs, pc: &ProblemConstants) -> u64 {
    combine(
        bi.n_eps,
        log_ratio_count(bi.rho_bar / bi.rho1, bi.gamma),
        log_ratio_count(bi.delta / pc.c_big, bi.tau),
    )
}

/// Outer iterations after which either an approximate KKT point was found or the penalty reached `rho_big`.
pub fn outer_bound_rho_big(bi: &BoundInputs, pc: &ProblemConstants) -> u64 {
    combine(
        bi.n_eps,
        log_ratio_count(bi.rho_big_threshold / bi.rho1, bi.gamma),
        log_ratio_count(bi.delta / pc.c_big, bi.tau),
    )
}

/// Penalty level beyond which the iterates are either approximately KKT or
/// approximately stationary for the infeasibility.
pub fn rho_max(bi: &BoundInputs, pc: &ProblemConstants) -> f64 {
    1f64.max(4.0 * pc.c_lips / bi.delta_low)
        .max(bi.mu_max / bi.delta)
        .max(4.0 * pc.c_f / bi.delta_low)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliableBound {
    /// `None` when the tolerance schedule never gets below `min(epsilon, delta_low) / 4`.
    pub n_low: Option<u64>,
    pub bound: Option<u64>,
    pub rho_max: f64,
}

/// Bound without any assumption on the penalty growth.
pub fn outer_bound_reliable(bi: &BoundInputs, pc: &ProblemConstants) -> ReliableBound {
    let rho_max = rho_max(bi, pc);
    let n_low = first_k_below(bi.epsilon.min(bi.delta_low) / 4.0, bi.eps_opt);
    let bound = n_low.map(|n| {
        combine(
            n,
            log_ratio_count(bi.delta / pc.c_big, bi.tau),
            log_ratio_count(rho_max / bi.rho1, bi.gamma),
        )
    });
    ReliableBound { n_low, bound, rho_max }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkVariant {
    /// Subproblem work `c_inner * eps^-q`.
    FixedRho,
    /// Subproblem work `c_inner * rho^v * eps^-q`.
    RhoPower,
}

/// Total inner work for `outer_count` outer iterations.
pub fn inner_work_bound(bi: &BoundInputs, outer_count: u64, variant: WorkVariant, eps_min: f64, rho_max: f64) -> f64 {
    let base = bi.c_inner * eps_min.powf(-bi.q) * outer_count as f64;
    match variant {
        WorkVariant::FixedRho => base,
        WorkVariant::RhoPower => base * rho_max.powf(bi.v),
    }
}

/// Smallest subproblem tolerance used up to outer iteration `horizon`.
pub fn eps_min_within(horizon: u64, eps_opt: f64) -> f64 {
    tolerance_schedule(horizon.max(1), eps_opt)
}

/// Samples the box uniformly and records the largest constants seen.
pub fn estimate_constants(
    spec: &ProblemSpec,
    scaling: &ScalingFactors,
    bounds: &MultiplierBounds,
    rho1: f64,
    sample_count: usize,
    seed: u64,
) -> Result<ProblemConstants> {
    if !spec.has_finite_box() {
        return Err(Error::UnsupportedDomain("constant estimates need a finite box".into()));
    }
    let eval = Evaluator::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (spec.lower(), spec.upper());
    let lam_norm = bounds.lambda_norm_bound(spec.m());
    let mu_norm = bounds.mu_norm_bound(spec.p());
    let (mut c_big, mut c_lips, mut c_f) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..sample_count.max(1) {
        let x = DVector::from_fn(spec.n(), |i, _| {
            if lo[i] < hi[i] {
                rng.gen_range(lo[i]..=hi[i])
            } else {
                lo[i]
            }
        });
        let s = ScaledDerivatives::at(&eval, scaling, &x)?;
        c_f = c_f.max(s.grad_f.norm());
        c_lips = c_lips.max(s.jh_norm * lam_norm + s.jg_norm * mu_norm);
        let mut big = s.h.amax();
        for &g in s.g.iter() {
            let vb = if g > 0.0 { g } else { (-g).min(bounds.mu_max / rho1) };
            big = big.max(vb);
        }
        c_big = c_big.max(big);
    }
    Ok(ProblemConstants {
        c_big,
        c_lips,
        c_f,
        sample_count: sample_count.max(1),
        is_estimate: true,
    })
}

struct ScaledDerivatives {
    grad_f: DVector<f64>,
    h: DVector<f64>,
    g: DVector<f64>,
    jh_norm: f64,
    jg_norm: f64,
}

fn spectral_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    if m.is_empty() {
        0.0
    } else {
        m.clone().svd(false, false).singular_values.max()
    }
}

impl ScaledDerivatives {
    fn at(eval: &Evaluator<'_>, sc: &ScalingFactors, x: &DVector<f64>) -> Result<Self> {
        let mut jh = eval.eq_jacobian(x)?;
        let mut jg = eval.ineq_jacobian(x)?;
        for (r, s) in sc.s_h.iter().enumerate() {
            jh.row_mut(r).scale_mut(*s);
        }
        for (r, s) in sc.s_g.iter().enumerate() {
            jg.row_mut(r).scale_mut(*s);
        }
        let h = eval.equalities(x)?;
        let g = eval.inequalities(x)?;
        Ok(Self {
            grad_f: eval.gradient(x)? * sc.s_f,
            h: DVector::from_iterator(h.len(), h.iter().zip(&sc.s_h).map(|(a, b)| a * b)),
            g: DVector::from_iterator(g.len(), g.iter().zip(&sc.s_g).map(|(a, b)| a * b)),
            jh_norm: spectral_norm(&jh),
            jg_norm: spectral_norm(&jg),
        })
    }
}

/// `lhs - rhs` of the shifted-infeasibility inequality at one sample
/// (nonpositive when it holds):
/// `||P(x - grad phi) - x|| <= ||P(x - grad phi_shift) - x|| + 2 c_lips / rho`
/// with `phi = ||h||^2 + ||g_+||^2` and
/// `phi_shift = ||h + lambda/rho||^2 + ||(g + mu/rho)_+||^2` on the scaled problem.
pub fn shifted_infeasibility_gap(
    spec: &ProblemSpec,
    scaling: &ScalingFactors,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
    rho: f64,
    c_lips: f64,
) -> Result<f64> {
    let eval = Evaluator::new(spec);
    let plain = infeasibility_scaled(&eval, scaling, x)?.grad_phi;
    let mut jh = eval.eq_jacobian(x)?;
    let mut jg = eval.ineq_jacobian(x)?;
    let h = eval.equalities(x)?;
    let g = eval.inequalities(x)?;
    let hs = DVector::from_fn(h.len(), |j, _| scaling.s_h[j] * h[j] + lambda[j] / rho);
    let gs = DVector::from_fn(g.len(), |j, _| (scaling.s_g[j] * g[j] + mu[j] / rho).max(0.0));
    for (r, s) in scaling.s_h.iter().enumerate() {
        jh.row_mut(r).scale_mut(*s);
    }
    for (r, s) in scaling.s_g.iter().enumerate() {
        jg.row_mut(r).scale_mut(*s);
    }
    let shifted = (jh.transpose() * hs + jg.transpose() * gs) * 2.0;
    let lhs = projected_gradient(x, &plain, spec.lower(), spec.upper()).norm();
    let rhs = projected_gradient(x, &shifted, spec.lower(), spec.upper()).norm() + 2.0 * c_lips / rho;
    Ok(lhs - rhs)
}

/// Counts trace iterates where `max(||h||, ||V||) <= delta` holds but one of
/// its consequences (feasibility within `delta`, inactive multipliers for
/// clearly slack inequalities) fails.
pub fn feasibility_implication_violations(trace: &[OuterIterate], deltas: &[f64]) -> usize {
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let mut violations = 0;
    for it in trace {
        let measure = sup(&it.h).max(sup(&it.v));
        for &delta in deltas {
            if measure > delta {
                continue;
            }
            let gplus = it.g.iter().fold(0.0f64, |a, &x| a.max(x));
            let slack_ok = it.g.iter().zip(&it.mu_plus).all(|(&g, &m)| g >= -delta || m == 0.0);
            if sup(&it.h) > delta || gplus > delta || !slack_ok {
                violations += 1;
            }
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The guaranteed event was not reached, but the run was shorter than the bound.
    Inconclusive,
    /// A hypothesis of the bound does not hold for these inputs.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub bound: Option<f64>,
    /// Outer iteration (or inner work) at which the guaranteed event first occurred.
    pub observed: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub constants: ProblemConstants,
    /// `c_big` after raising it to the largest measure seen on the trace.
    pub c_big_effective: f64,
    pub inputs: BoundInputs,
    pub checks: Vec<BoundCheck>,
    pub feasibility_implication_violations: usize,
    pub shifted_infeasibility_samples: usize,
    pub shifted_infeasibility_violations: usize,
    /// Some iterate was approximately stationary for the infeasibility while infeasible.
    pub infeasible_stationary_seen: bool,
}

impl AuditReport {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| c.verdict == Verdict::Fail).count()
            + self.feasibility_implication_violations
            + self.shifted_infeasibility_violations
    }
}

fn approx_kkt(it: &OuterIterate, epsilon: f64, delta: f64) -> bool {
    let h = it.h.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let gplus = it.g.iter().fold(0.0f64, |a, &x| a.max(x));
    let slack = it.g.iter().zip(&it.mu_plus).all(|(&g, &m)| g >= -delta || m == 0.0);
    it.lagrangian_pg <= epsilon && h <= delta && gplus <= delta && slack
}

fn infeasible_stationary(it: &OuterIterate, delta: f64, delta_low: f64) -> bool {
    let h = it.h.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let gplus = it.g.iter().fold(0.0f64, |a, &x| a.max(x));
    it.infeas_pg <= delta_low && h.max(gplus) > delta
}

fn verdict(first: Option<u64>, bound: Option<u64>, trace_len: u64) -> Verdict {
    match (first, bound) {
        (_, None) => Verdict::NotApplicable,
        (Some(k), Some(b)) => {
            if k <= b {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        (None, Some(b)) => {
            if trace_len >= b {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            }
        }
    }
}

/// Audits a finished run against the outer and inner bounds.
pub fn audit_run(spec: &ProblemSpec, report: &SolveReport, pc: &ProblemConstants, bi: &BoundInputs) -> Result<AuditReport> {
    let trace = &report.trace;
    let observed_big = trace.iter().map(|t| t.feas_measure).fold(0.0, f64::max);
    let c_big = pc.c_big.max(observed_big);
    let pce = ProblemConstants { c_big, ..*pc };
    let len = trace.len() as u64;
    let inner_upto = |k: u64| trace.iter().take(k as usize).map(|t| t.inner_iterations).sum::<u64>() as f64;
    let mut checks = Vec::new();

    let first_kkt = trace.iter().find(|t| approx_kkt(t, bi.epsilon, bi.delta)).map(|t| t.k);
    let b1 = outer_bound_bounded_rho(bi, &pce);
    let bounded_ok = trace.iter().all(|t| t.rho <= bi.rho_bar);
    checks.push(BoundCheck {
        name: "bounded_penalty".into(),
        bound: Some(b1 as f64),
        observed: first_kkt.map(|k| k as f64),
        verdict: if bounded_ok {
            verdict(first_kkt, Some(b1), len)
        } else {
            Verdict::NotApplicable
        },
    });
    let eps_min = eps_min_within(b1, bi.eps_opt);
    let w1 = inner_work_bound(bi, b1, WorkVariant::FixedRho, eps_min, bi.rho_bar);
    checks.push(BoundCheck {
        name: "inner_work_bounded_penalty".into(),
        bound: Some(w1),
        observed: first_kkt.map(inner_upto),
        verdict: match (bounded_ok, first_kkt) {
            (false, _) => Verdict::NotApplicable,
            (true, Some(k)) if inner_upto(k) <= w1 => Verdict::Pass,
            (true, Some(_)) => Verdict::Fail,
            (true, None) => Verdict::Inconclusive,
        },
    });

    let first_big = trace
        .iter()
        .find(|t| approx_kkt(t, bi.epsilon, bi.delta) || t.rho >= bi.rho_big_threshold)
        .map(|t| t.k)
        .or_else(|| (report.rho_final >= bi.rho_big_threshold).then_some(len + 1));
    let b2 = outer_bound_rho_big(bi, &pce);
    checks.push(BoundCheck {
        name: "penalty_cap".into(),
        bound: Some(b2 as f64),
        observed: first_big.map(|k| k as f64),
        verdict: verdict(first_big, Some(b2), len),
    });

    let rel = outer_bound_reliable(bi, &pce);
    let first_rel = trace
        .iter()
        .find(|t| approx_kkt(t, bi.epsilon, bi.delta) || infeasible_stationary(t, bi.delta, bi.delta_low))
        .map(|t| t.k);
    checks.push(BoundCheck {
        name: "reliable_infeasibility".into(),
        bound: rel.bound.map(|b| b as f64),
        observed: first_rel.map(|k| k as f64),
        verdict: if bi.delta_low < bi.delta {
            verdict(first_rel, rel.bound, len)
        } else {
            Verdict::NotApplicable
        },
    });
    let w3 = rel.bound.map(|b| inner_work_bound(bi, b, WorkVariant::RhoPower, eps_min_within(b, bi.eps_opt), rel.rho_max));
    checks.push(BoundCheck {
        name: "inner_work_penalty_power".into(),
        bound: w3,
        observed: first_rel.map(inner_upto),
        verdict: match (w3, first_rel) {
            (None, _) => Verdict::NotApplicable,
            (Some(w), Some(k)) if inner_upto(k) <= w => Verdict::Pass,
            (Some(_), Some(_)) => Verdict::Fail,
            (Some(_), None) => Verdict::Inconclusive,
        },
    });

    let deltas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
    let implication = feasibility_implication_violations(trace, &deltas);
    let mut samples = 0;
    let mut shift_violations = 0;
    for it in trace {
        let x = DVector::from_column_slice(&it.x);
        let lam = DVector::from_column_slice(&it.lambda_bar);
        let mu = DVector::from_column_slice(&it.mu_bar);
        // the tightest constant valid for the multipliers actually used
        let c_lips = multiplier_lips(spec, &report.scaling, &x, &lam, &mu)?;
        samples += 1;
        if shifted_infeasibility_gap(spec, &report.scaling, &x, &lam, &mu, it.rho, c_lips)? > 1e-12 {
            shift_violations += 1;
        }
    }

    Ok(AuditReport {
        constants: *pc,
        c_big_effective: c_big,
        inputs: *bi,
        checks,
        feasibility_implication_violations: implication,
        shifted_infeasibility_samples: samples,
        shifted_infeasibility_violations: shift_violations,
        infeasible_stationary_seen: trace.iter().any(|t| infeasible_stationary(t, bi.delta, bi.delta_low)),
    })
}

/// `||Jh|| ||lambda|| + ||Jg|| ||mu||` at one point of the scaled problem.
pub fn multiplier_lips(
    spec: &ProblemSpec,
    scaling: &ScalingFactors,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: &DVector<f64>,
) -> Result<f64> {
    let eval = Evaluator::new(spec);
    let s = ScaledDerivatives::at(&eval, scaling, x)?;
    Ok(s.jh_norm * lambda.norm() + s.jg_norm * mu.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outer::solve;
    use nalgebra::{dvector, DMatrix};

    fn inputs() -> BoundInputs {
        BoundInputs {
            delta: 1.0,
            delta_low: 0.1,
            epsilon: 1e-8,
            eps_opt: 1e-8,
            n_eps: 3,
            rho1: 1.0,
            rho_bar: 1.0,
            rho_big_threshold: 1e20,
            gamma: 10.0,
            tau: 0.5,
            mu_max: 1e16,
            c_inner: 1.0,
            q: 2.0,
            v: 0.0,
        }
    }

    fn constants(c_big: f64, c_lips: f64, c_f: f64) -> ProblemConstants {
        ProblemConstants {
            c_big,
            c_lips,
            c_f,
            sample_count: 0,
            is_estimate: false,
        }
    }

    #[test]
    fn bounded_rho_examples() {
        let pc = constants(16.0, 0.0, 0.0);
        assert_eq!(outer_bound_bounded_rho(&inputs(), &pc), 3);
        let bi = BoundInputs {
            rho_bar: 100.0,
            ..inputs()
        };
        assert_eq!(outer_bound_bounded_rho(&bi, &pc), 3 + 2 * 4);
        assert_eq!(outer_bound_bounded_rho(&bi, &constants(1.0, 0.0, 0.0)), 3);
    }

    #[test]
    fn rho_big_mirrors_bounded_rho() {
        let pc = constants(16.0, 0.0, 0.0);
        let bi = BoundInputs {
            rho_big_threshold: 100.0,
            ..inputs()
        };
        assert_eq!(outer_bound_rho_big(&bi, &pc), 11);
        assert_eq!(outer_bound_rho_big(&bi, &constants(1.0, 0.0, 0.0)), 3);
        let equal = BoundInputs {
            rho_big_threshold: 1.0,
            ..inputs()
        };
        assert_eq!(outer_bound_rho_big(&equal, &pc), 3);
    }

    #[test]
    fn rho_max_examples() {
        let bi = inputs();
        assert_eq!(rho_max(&bi, &constants(1.0, 1.0, 1.0)), 1e16);
        let bi = BoundInputs {
            delta_low: 0.4,
            mu_max: 0.0,
            ..inputs()
        };
        assert_eq!(rho_max(&bi, &constants(1.0, 0.0, 1.0)), 10.0);
        let mut last = 0.0;
        for dl in [0.5, 0.1, 1e-2, 1e-4, 1e-8] {
            let r = rho_max(&BoundInputs { delta_low: dl, mu_max: 0.0, ..inputs() }, &constants(1.0, 1.0, 1.0));
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn reliable_bound_uses_quarter_tolerance() {
        let bi = BoundInputs {
            epsilon: 1e-4,
            delta_low: 0.1,
            mu_max: 0.0,
            ..inputs()
        };
        let r = outer_bound_reliable(&bi, &constants(1.0, 0.0, 1.0));
        // first k with eps_k <= 2.5e-5 is k = 2
        assert_eq!(r.n_low, Some(2));
        assert_eq!(r.bound, Some(2));
        let floor = BoundInputs {
            epsilon: 1e-8,
            ..bi
        };
        assert_eq!(outer_bound_reliable(&floor, &constants(1.0, 0.0, 1.0)).bound, None);
    }

    #[test]
    fn inner_work_examples() {
        let bi = inputs();
        assert_eq!(inner_work_bound(&bi, 5, WorkVariant::FixedRho, 1e-2, 7.0), 5e4);
        assert_eq!(
            inner_work_bound(&bi, 5, WorkVariant::RhoPower, 1e-2, 7.0),
            inner_work_bound(&bi, 5, WorkVariant::FixedRho, 1e-2, 7.0)
        );
        let q0 = BoundInputs { q: 0.0, v: 1.0, ..inputs() };
        assert_eq!(inner_work_bound(&q0, 5, WorkVariant::FixedRho, 1e-2, 7.0), 5.0);
        assert_eq!(inner_work_bound(&q0, 5, WorkVariant::RhoPower, 1e-2, 7.0), 35.0);
    }

    #[test]
    fn bounds_are_monotone() {
        let grid = [1.0, 2.0, 10.0, 1e3, 1e8];
        for w in grid.windows(2) {
            let lo = BoundInputs { rho_bar: w[0], ..inputs() };
            let hi = BoundInputs { rho_bar: w[1], ..inputs() };
            let pc = constants(50.0, 1.0, 1.0);
            assert!(outer_bound_bounded_rho(&lo, &pc) <= outer_bound_bounded_rho(&hi, &pc));
            assert!(
                outer_bound_bounded_rho(&hi, &constants(w[0], 1.0, 1.0))
                    <= outer_bound_bounded_rho(&hi, &constants(w[1], 1.0, 1.0))
            );
            let d_small = BoundInputs { delta: 1.0 / w[1], rho_bar: 1e4, ..inputs() };
            let d_big = BoundInputs { delta: 1.0 / w[0], rho_bar: 1e4, ..inputs() };
            assert!(outer_bound_bounded_rho(&d_big, &pc) <= outer_bound_bounded_rho(&d_small, &pc));
        }
        for w in [0.1, 0.3, 0.5, 0.7, 0.9].windows(2) {
            let pc = constants(50.0, 1.0, 1.0);
            let a = BoundInputs { tau: w[0], rho_bar: 1e4, ..inputs() };
            let b = BoundInputs { tau: w[1], rho_bar: 1e4, ..inputs() };
            assert!(outer_bound_bounded_rho(&a, &pc) <= outer_bound_bounded_rho(&b, &pc));
        }
    }

    #[test]
    fn tolerant_ceiling() {
        assert_eq!(log_ratio_count(100.0, 10.0), 2);
        assert_eq!(log_ratio_count(1e20 / 10.0, 10.0), 19);
        assert_eq!(log_ratio_count(101.0, 10.0), 3);
        assert_eq!(log_ratio_count(1.0 / 16.0, 0.5), 4);
        assert_eq!(log_ratio_count(2.0, 0.5), 0);
        assert_eq!(log_ratio_count(0.5, 10.0), 0);
    }

    fn linear_box(n: usize, c: Vec<f64>) -> ProblemSpec {
        let cg = DVector::from_vec(c);
        let cf = cg.clone();
        ProblemSpec::new(vec![-1.0; n], vec![1.0; n]).unwrap().with_objective(
            move |x: &DVector<f64>| cf.dot(x),
            move |_: &DVector<f64>| cg.clone(),
            move |_: &DVector<f64>| DMatrix::zeros(n, n),
        )
    }

    #[test]
    fn constants_examples() {
        let spec = linear_box(2, vec![3.0, 4.0]);
        let sc = ScalingFactors::identity(0, 0);
        let mb = MultiplierBounds {
            lambda_min: -1.0,
            lambda_max: 1.0,
            mu_max: 1.0,
        };
        let pc = estimate_constants(&spec, &sc, &mb, 1.0, 10, 1).unwrap();
        assert_eq!(pc.c_f, 5.0);
        assert_eq!(pc.c_lips, 0.0);
        assert_eq!(pc.c_big, 0.0);

        let spec = ProblemSpec::new(vec![-1.0], vec![1.0]).unwrap().with_equalities(
            1,
            |x: &DVector<f64>| dvector![x[0]],
            |_: &DVector<f64>| DMatrix::from_element(1, 1, 1.0),
            |_: &DVector<f64>, _| DMatrix::zeros(1, 1),
        );
        let pc = estimate_constants(&spec, &ScalingFactors::identity(1, 0), &mb, 1.0, 5000, 2).unwrap();
        assert!(pc.c_big > 0.99 && pc.c_big <= 1.0);
        assert_eq!(pc.c_lips, 1.0);

        assert!(matches!(
            estimate_constants(&ProblemSpec::unbounded(1), &ScalingFactors::identity(0, 0), &mb, 1.0, 5, 0),
            Err(Error::UnsupportedDomain(_))
        ));
    }

    fn p1() -> ProblemSpec {
        ProblemSpec::new(vec![-10.0; 2], vec![10.0; 2])
            .unwrap()
            .with_objective(
                |x: &DVector<f64>| x[0] + x[1],
                |_: &DVector<f64>| dvector![1.0, 1.0],
                |_: &DVector<f64>| DMatrix::zeros(2, 2),
            )
            .with_equalities(
                1,
                |x: &DVector<f64>| dvector![x.norm_squared() - 2.0],
                |x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]),
                |_: &DVector<f64>, _| DMatrix::identity(2, 2) * 2.0,
            )
    }

    #[test]
    fn audit_p1_passes() {
        let spec = p1();
        let opts = SolverOptions::default();
        let report = solve(&spec, &[0.5, 0.2], &opts).unwrap();
        let bi = BoundInputs::for_run(&report, &opts).unwrap();
        assert_eq!(bi.rho_bar, bi.rho1);
        let pc = estimate_constants(&spec, &report.scaling, &(&opts).into(), report.rho1, 200, 3).unwrap();
        let audit = audit_run(&spec, &report, &pc, &bi).unwrap();
        assert_eq!(audit.checks[0].verdict, Verdict::Pass, "{audit:#?}");
        assert_eq!(audit.failures(), 0, "{audit:#?}");
    }

    #[test]
    fn audit_flags_synthetic_violation() {
        let spec = p1();
        let opts = SolverOptions::default();
        let mut report = solve(&spec, &[0.5, 0.2], &opts).unwrap();
        // pad the trace with non-converged iterates beyond the bound
        let mut bad = report.trace[0].clone();
        bad.lagrangian_pg = 1.0;
        report.trace = (1..=20).map(|k| OuterIterate { k, ..bad.clone() }).collect();
        let bi = BoundInputs::for_run(&report, &opts).unwrap();
        let pc = estimate_constants(&spec, &report.scaling, &(&opts).into(), report.rho1, 50, 3).unwrap();
        let audit = audit_run(&spec, &report, &pc, &bi).unwrap();
        assert_eq!(audit.checks[0].verdict, Verdict::Fail);
    }

    #[test]
    fn implication_counter_catches_inconsistent_records() {
        let spec = p1();
        let report = solve(&spec, &[0.5, 0.2], &SolverOptions::default()).unwrap();
        let deltas = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
        assert_eq!(feasibility_implication_violations(&report.trace, &deltas), 0);
        let mut it = report.trace[0].clone();
        it.h = vec![0.0];
        it.v = vec![0.0];
        it.g = vec![-1.0];
        it.mu_plus = vec![1.0];
        assert!(feasibility_implication_violations(&[it], &deltas) > 0);
    }
}
