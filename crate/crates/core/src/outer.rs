//! Safeguarded augmented Lagrangian outer iterations.
//!
//! Each outer iteration minimizes the augmented Lagrangian of the scaled
//! problem over the box, forms first-order multiplier estimates, and then
//! decides whether to stop, raise the penalty, and keep or reset the
//! multiplier estimates.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::accel::{accelerate, AccelKind, AccelOptions, KktPoint, KktResiduals};
use crate::box_solver::{minimize_box, BoxOptions, BoxProblem, HessianModel, StopReason};
use crate::error::{Error, Result};
use crate::lagrangian::{ALContext, ALSubproblem, HessianMode, MultiplierState};
use crate::linalg::SymMatrix;
use crate::problem::{
    compute_scaling, infeasibility, infeasibility_scaled, project_box, projected_gradient, sup_norm, EvalCounters,
    Evaluator, InfeasibilityReport, ProblemSpec, ScalingFactors,
};

/// Outer-loop parameters. Defaults are the published settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub eps_feas: f64,
    pub eps_opt: f64,
    pub eps_compl: f64,
    pub rho_big: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mu_max: f64,
    pub gamma: f64,
    pub tau: f64,
    pub scale: bool,
    pub max_outer_iterations: u64,
    pub max_inner_failures: u32,
    pub accel_enabled: bool,
    pub hessian_mode: HessianMode,
    /// Subproblem solver settings; `epsilon` is overwritten by the tolerance schedule.
    pub box_options: BoxOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            eps_feas: 1e-8,
            eps_opt: 1e-8,
            eps_compl: 1e-8,
            rho_big: 1e20,
            lambda_min: -1e16,
            lambda_max: 1e16,
            mu_max: 1e16,
            gamma: 10.0,
            tau: 0.5,
            scale: true,
            max_outer_iterations: 100,
            max_inner_failures: 3,
            accel_enabled: false,
            hessian_mode: HessianMode::Auto,
            box_options: BoxOptions::default(),
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let ok = self.eps_feas > 0.0
            && self.eps_opt > 0.0
            && self.eps_compl > 0.0
            && self.gamma > 1.0
            && self.tau > 0.0
            && self.tau < 1.0
            && self.lambda_min <= 0.0
            && self.lambda_max >= 0.0
            && self.mu_max >= 0.0
            && self.rho_big > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid solver options: {self:?}")))
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            feas: self.eps_feas,
            opt: self.eps_opt,
            compl: self.eps_compl,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub feas: f64,
    pub opt: f64,
    pub compl: f64,
}

impl Tolerances {
    /// Same test at half the number of digits.
    pub fn half_precision(self) -> Self {
        Self {
            feas: self.feas.sqrt(),
            opt: self.opt.sqrt(),
            compl: self.compl.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    KktSuccess,
    AccelSuccess,
    PenaltyTooBig,
    InnerFailures,
    IterLimit,
    InfeasibleStationary,
}

impl SolveStatus {
    pub fn is_success(self) -> bool {
        matches!(self, Self::KktSuccess | Self::AccelSuccess)
    }
}

/// Record of one outer iteration. Constraint quantities are scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterIterate {
    pub k: u64,
    pub rho: f64,
    pub eps_k: f64,
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
    pub v: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub mu_bar: Vec<f64>,
    pub lambda_plus: Vec<f64>,
    pub mu_plus: Vec<f64>,
    /// `max(||h||_inf, ||V||_inf)`.
    pub feas_measure: f64,
    /// Sup-norm of the projected gradient of the squared infeasibility.
    pub infeas_pg: f64,
    /// Sup-norm of the projected gradient of the Lagrangian at `lambda_plus`, `mu_plus`.
    pub lagrangian_pg: f64,
    pub inner_stop: StopReason,
    pub inner_iterations: u64,
    /// Subproblem objective at each inner iterate.
    pub inner_phi: Vec<f64>,
    pub inner_points: Vec<Vec<f64>>,
    pub accel: Option<AccelKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreSummary {
    pub x: Vec<f64>,
    pub phi: f64,
    pub infeasibility: f64,
    pub gp_supnorm: f64,
    pub stop_reason: StopReason,
    pub certified_infeasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Multipliers of the original (unscaled) constraints.
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub objective: f64,
    pub residuals: KktResiduals,
    pub counters: EvalCounters,
    pub scaling: ScalingFactors,
    pub rho1: f64,
    pub rho_final: f64,
    pub outer_iterations: u64,
    pub trace: Vec<OuterIterate>,
    pub accel_saved: Option<KktPoint>,
    pub restore: Option<RestoreSummary>,
}

/// Result of the stopping test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktCheck {
    pub satisfied: bool,
    pub residuals: KktResiduals,
}

const RHO1_MIN: f64 = 1e-8;
const RHO1_MAX: f64 = 1e8;

/// Initial penalty from the scaled objective and infeasibility at `x0`.
pub fn initial_penalty(eval: &Evaluator<'_>, scaling: &ScalingFactors, x0: &DVector<f64>) -> Result<f64> {
    let f = scaling.s_f * eval.objective(x0)?;
    let infeas = infeasibility_scaled(eval, scaling, x0)?.phi;
    Ok((10.0 * (f.abs() / infeas.max(1.0)).max(1.0)).clamp(RHO1_MIN, RHO1_MAX))
}

/// Subproblem tolerance at outer iteration `k` (starting at 1).
pub fn tolerance_schedule(k: u64, eps_opt: f64) -> f64 {
    // dividing by an exact power of ten avoids drift from repeated 0.1 products
    let steps = k.saturating_sub(1).min(400) as i32;
    eps_opt.max(eps_opt.sqrt() / 10f64.powi(steps))
}

/// Keeps `rho` when the feasibility measure dropped enough, else multiplies by `gamma`.
pub fn update_penalty(k: u64, rho: f64, current: f64, previous: Option<f64>, gamma: f64, tau: f64) -> f64 {
    match previous {
        _ if k == 1 => rho,
        Some(prev) if current <= tau * prev => rho,
        None => rho,
        _ => rho * gamma,
    }
}

/// Carries the first-order multipliers over when all lie within bounds; otherwise resets both to zero.
pub fn safeguard(lambda_plus: &DVector<f64>, mu_plus: &DVector<f64>, opts: &SolverOptions) -> MultiplierState {
    let mut state = MultiplierState {
        lambda_bar: lambda_plus.clone(),
        mu_bar: mu_plus.clone(),
        lambda_min: opts.lambda_min,
        lambda_max: opts.lambda_max,
        mu_max: opts.mu_max,
    };
    if !state.in_bounds() {
        state.lambda_bar.fill(0.0);
        state.mu_bar.fill(0.0);
    }
    state
}

/// Stopping test: unscaled feasibility, scaled projected Lagrangian gradient
/// and scaled min-complementarity. `lambda_plus`, `mu_plus` are multipliers of
/// the scaled problem.
pub fn kkt_stop_check(
    eval: &Evaluator<'_>,
    scaling: &ScalingFactors,
    x: &DVector<f64>,
    lambda_plus: &DVector<f64>,
    mu_plus: &DVector<f64>,
    tol: &Tolerances,
) -> Result<KktCheck> {
    let spec = eval.spec();
    let feas = infeasibility(eval, x)?.sup();
    let mut grad = eval.gradient(x)? * scaling.s_f;
    if spec.m() > 0 {
        let w = DVector::from_iterator(spec.m(), lambda_plus.iter().zip(&scaling.s_h).map(|(l, s)| l * s));
        grad += eval.eq_jacobian(x)?.transpose() * w;
    }
    let mut compl = f64::NEG_INFINITY;
    if spec.p() > 0 {
        let w = DVector::from_iterator(spec.p(), mu_plus.iter().zip(&scaling.s_g).map(|(m, s)| m * s));
        grad += eval.ineq_jacobian(x)?.transpose() * w;
        let g = eval.inequalities(x)?;
        for j in 0..spec.p() {
            compl = compl.max((-scaling.s_g[j] * g[j]).min(mu_plus[j]));
        }
    }
    let opt = sup_norm(&projected_gradient(x, &grad, spec.lower(), spec.upper()));
    let compl = compl.max(0.0);
    Ok(KktCheck {
        satisfied: feas <= tol.feas && opt <= tol.opt && compl <= tol.compl,
        residuals: KktResiduals {
            feasibility: feas,
            optimality: opt,
            complementarity: compl,
        },
    })
}

/// Squared infeasibility `||h||^2 + ||g_+||^2` of the unscaled constraints.
pub struct FeasibilityProblem<'a> {
    pub eval: &'a Evaluator<'a>,
}

impl BoxProblem for FeasibilityProblem<'_> {
    fn lower(&self) -> &DVector<f64> {
        self.eval.spec().lower()
    }

    fn upper(&self) -> &DVector<f64> {
        self.eval.spec().upper()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let h = self.eval.equalities(x)?;
        let g = self.eval.inequalities(x)?;
        Ok(h.norm_squared() + g.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>())
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(infeasibility(self.eval, x)?.grad_phi)
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<HessianModel> {
        let spec = self.eval.spec();
        let mut hess = SymMatrix::zeros(spec.n());
        let h = self.eval.equalities(x)?;
        let jh = self.eval.eq_jacobian(x)?;
        for j in 0..spec.m() {
            hess.add_outer(2.0, &jh.row(j).transpose());
            if h[j] != 0.0 {
                hess.add_scaled(2.0 * h[j], &self.eval.eq_hessian(x, j)?);
            }
        }
        let g = self.eval.inequalities(x)?;
        if g.iter().any(|&v| v > 0.0) {
            let jg = self.eval.ineq_jacobian(x)?;
            for j in 0..spec.p() {
                if g[j] > 0.0 {
                    hess.add_outer(2.0, &jg.row(j).transpose());
                    hess.add_scaled(2.0 * g[j], &self.eval.ineq_hessian(x, j)?);
                }
            }
        }
        Ok(HessianModel::Dense(hess))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestoreResult {
    pub x: DVector<f64>,
    pub report: InfeasibilityReport,
    pub gp_supnorm: f64,
    pub stop_reason: StopReason,
}

/// Minimizes the squared infeasibility over the box from `x_start`.
pub fn restore_feasibility(eval: &Evaluator<'_>, x_start: &DVector<f64>, box_options: &BoxOptions) -> Result<RestoreResult> {
    let res = minimize_box(&FeasibilityProblem { eval }, x_start, box_options)?;
    eval.tally(|c| {
        c.inner_iterations += res.iterations;
        c.factorizations += res.trace.factorizations;
    });
    let report = infeasibility(eval, &res.x_final)?;
    Ok(RestoreResult {
        x: res.x_final,
        report,
        gp_supnorm: res.gp_supnorm,
        stop_reason: res.stop_reason,
    })
}

fn unscale(v: &DVector<f64>, s: &[f64], s_f: f64) -> Vec<f64> {
    v.iter().zip(s).map(|(a, b)| a * b / s_f).collect()
}

fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Runs the augmented Lagrangian method on `spec` from `x0`.
pub fn solve(spec: &ProblemSpec, x0: &[f64], opts: &SolverOptions) -> Result<SolveReport> {
    opts.validate()?;
    if x0.len() != spec.n() {
        return Err(Error::Contract(format!("starting point has {} entries, problem has {}", x0.len(), spec.n())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("starting point must be finite".into()));
    }
    let eval = Evaluator::new(spec);
    let tol = opts.tolerances();
    let accel_opts = AccelOptions {
        eps_feas: opts.eps_feas,
        eps_opt: opts.eps_opt,
        eps_compl: opts.eps_compl,
        ..AccelOptions::default()
    };
    let mut x = project_box(&DVector::from_column_slice(x0), spec.lower(), spec.upper());
    let scaling = compute_scaling(&eval, &x, opts.scale)?;
    let rho1 = initial_penalty(&eval, &scaling, &x)?;
    let mut rho = rho1;
    let mut mults = MultiplierState::zeros(spec.m(), spec.p(), opts.lambda_min, opts.lambda_max, opts.mu_max);
    // first-order multipliers of the previous iteration
    let mut lambda_k = DVector::zeros(spec.m());
    let mut mu_k = DVector::zeros(spec.p());
    let mut eps_k = tolerance_schedule(1, opts.eps_opt);
    let mut prev_measure = None;
    let mut failures = 0u32;
    let mut trace = Vec::new();
    let mut accel_saved = None;

    let finish = |status, x: DVector<f64>, lam: &DVector<f64>, mu: &DVector<f64>, residuals, trace, rho_final, saved, restore| -> Result<SolveReport> {
        let objective = eval.objective(&x)?;
        let n_outer = eval.counters().outer_iterations;
        Ok(SolveReport {
            status,
            objective,
            lambda: unscale(lam, &scaling.s_h, scaling.s_f),
            mu: unscale(mu, &scaling.s_g, scaling.s_f),
            x: to_vec(&x),
            residuals,
            counters: eval.counters(),
            scaling: scaling.clone(),
            rho1,
            rho_final,
            outer_iterations: n_outer,
            trace,
            accel_saved: saved,
            restore,
        })
    };

    let mut status = SolveStatus::IterLimit;
    for k in 1..=opts.max_outer_iterations {
        eval.tally(|c| c.outer_iterations += 1);
        let mut accel_kind = None;
        if opts.accel_enabled {
            let close = kkt_stop_check(&eval, &scaling, &x, &lambda_k, &mu_k, &tol.half_precision())?.satisfied;
            let start = KktPoint::with_bound_multipliers(
                &eval,
                to_vec(&x),
                unscale(&lambda_k, &scaling.s_h, scaling.s_f),
                unscale(&mu_k, &scaling.s_g, scaling.s_f),
            )?;
            let out = accelerate(&eval, &start, &accel_opts, close)?;
            accel_kind = Some(out.kind);
            match out.kind {
                AccelKind::Success => {
                    let pt = out.point;
                    let xa = DVector::from_column_slice(&pt.x);
                    let objective = eval.objective(&xa)?;
                    return Ok(SolveReport {
                        status: SolveStatus::AccelSuccess,
                        x: pt.x.clone(),
                        lambda: pt.lambda.clone(),
                        mu: pt.mu.clone(),
                        objective,
                        residuals: out.residuals,
                        counters: eval.counters(),
                        scaling: scaling.clone(),
                        rho1,
                        rho_final: rho,
                        outer_iterations: k,
                        trace,
                        accel_saved: Some(pt),
                        restore: None,
                    });
                }
                AccelKind::SavedButFar => accel_saved = Some(out.point),
                _ => {}
            }
        }

        let ctx = ALContext::new(&eval, &scaling, rho, &mults)?;
        let sub = ALSubproblem {
            ctx,
            mode: opts.hessian_mode,
        };
        let box_opts = BoxOptions {
            epsilon: eps_k,
            ..opts.box_options.clone()
        };
        let res = minimize_box(&sub, &x, &box_opts)?;
        eval.tally(|c| {
            c.inner_iterations += res.iterations;
            c.factorizations += res.trace.factorizations;
        });
        x = res.x_final;
        let (lam_plus, mu_plus) = ctx.first_order_multipliers(&x)?;
        let v = ctx.compute_v(&x)?;
        let h = DVector::from_iterator(spec.m(), eval.equalities(&x)?.iter().zip(&scaling.s_h).map(|(a, b)| a * b));
        let g = DVector::from_iterator(spec.p(), eval.inequalities(&x)?.iter().zip(&scaling.s_g).map(|(a, b)| a * b));
        let measure = sup_norm(&h).max(sup_norm(&v));
        let check = kkt_stop_check(&eval, &scaling, &x, &lam_plus, &mu_plus, &tol)?;
        let infeas = infeasibility_scaled(&eval, &scaling, &x)?;
        trace.push(OuterIterate {
            k,
            rho,
            eps_k,
            x: to_vec(&x),
            h: to_vec(&h),
            g: to_vec(&g),
            v: to_vec(&v),
            lambda_bar: to_vec(&mults.lambda_bar),
            mu_bar: to_vec(&mults.mu_bar),
            lambda_plus: to_vec(&lam_plus),
            mu_plus: to_vec(&mu_plus),
            feas_measure: measure,
            infeas_pg: sup_norm(&projected_gradient(&x, &infeas.grad_phi, spec.lower(), spec.upper())),
            lagrangian_pg: check.residuals.optimality,
            inner_stop: res.stop_reason,
            inner_iterations: res.iterations,
            inner_phi: res.trace.phi.clone(),
            inner_points: res.trace.points.clone(),
            accel: accel_kind,
        });
        if check.satisfied {
            return finish(SolveStatus::KktSuccess, x, &lam_plus, &mu_plus, check.residuals, trace, rho, accel_saved, None);
        }

        failures = if res.stop_reason.converged() { 0 } else { failures + 1 };
        lambda_k = lam_plus.clone();
        mu_k = mu_plus.clone();
        if failures >= opts.max_inner_failures {
            status = SolveStatus::InnerFailures;
            break;
        }
        let rho_next = update_penalty(k, rho, measure, prev_measure, opts.gamma, opts.tau);
        prev_measure = Some(measure);
        mults = safeguard(&lam_plus, &mu_plus, opts);
        eps_k = tolerance_schedule(k + 1, opts.eps_opt);
        rho = rho_next;
        if rho >= opts.rho_big {
            status = SolveStatus::PenaltyTooBig;
            break;
        }
    }

    // Unsuccessful exit: look for a point that is at least less infeasible.
    let restore_opts = BoxOptions {
        epsilon: opts.eps_opt,
        ..opts.box_options.clone()
    };
    let restored = restore_feasibility(&eval, &x, &restore_opts)?;
    let current = infeasibility(&eval, &x)?.sup();
    let restored_infeas = restored.report.sup();
    let certified = restored.gp_supnorm <= opts.eps_opt.sqrt() && restored_infeas > opts.eps_feas;
    if certified {
        status = SolveStatus::InfeasibleStationary;
    }
    let summary = RestoreSummary {
        x: to_vec(&restored.x),
        phi: restored.report.phi,
        infeasibility: restored_infeas,
        gp_supnorm: restored.gp_supnorm,
        stop_reason: restored.stop_reason,
        certified_infeasible: certified,
    };
    if restored_infeas < current {
        x = restored.x;
    }
    let ctx = ALContext::new(&eval, &scaling, rho.min(opts.rho_big), &mults)?;
    let (lam, mu) = ctx.first_order_multipliers(&x)?;
    let check = kkt_stop_check(&eval, &scaling, &x, &lam, &mu, &tol)?;
    finish(status, x, &lam, &mu, check.residuals, trace, rho, accel_saved, Some(summary))
}
