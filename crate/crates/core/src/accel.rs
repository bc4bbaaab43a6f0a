//! Undamped semismooth Newton on the min-function KKT system of the
//! original (unscaled) problem, used to jump to a KKT point once the outer
//! iterations are close.
//!
//! Unknowns are stacked as `[x, lambda, mu, nu_lower, nu_upper]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{sup_norm, Evaluator};

/// Primal-dual point of the KKT system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktPoint {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu_lower: Vec<f64>,
    pub nu_upper: Vec<f64>,
}

impl KktPoint {
    /// Bound multipliers chosen to cancel the Lagrangian gradient at `x`.
    pub fn with_bound_multipliers(eval: &Evaluator<'_>, x: Vec<f64>, lambda: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        let n = x.len();
        let mut pt = Self {
            x,
            lambda,
            mu,
            nu_lower: vec![0.0; n],
            nu_upper: vec![0.0; n],
        };
        let g = lagrangian_gradient(eval, &pt)?;
        pt.nu_lower = g.iter().map(|v| v.max(0.0)).collect();
        pt.nu_upper = g.iter().map(|v| (-v).max(0.0)).collect();
        Ok(pt)
    }

    fn to_vector(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len() * 3 + self.lambda.len() + self.mu.len(),
            self.x
                .iter()
                .chain(&self.lambda)
                .chain(&self.mu)
                .chain(&self.nu_lower)
                .chain(&self.nu_upper)
                .copied(),
        )
    }

    fn from_vector(v: &DVector<f64>, n: usize, m: usize, p: usize) -> Self {
        let s = v.as_slice();
        Self {
            x: s[..n].to_vec(),
            lambda: s[n..n + m].to_vec(),
            mu: s[n + m..n + m + p].to_vec(),
            nu_lower: s[n + m + p..2 * n + m + p].to_vec(),
            nu_upper: s[2 * n + m + p..].to_vec(),
        }
    }

    fn check_dims(&self, eval: &Evaluator<'_>) -> Result<()> {
        let spec = eval.spec();
        let n = spec.n();
        if self.x.len() != n
            || self.lambda.len() != spec.m()
            || self.mu.len() != spec.p()
            || self.nu_lower.len() != n
            || self.nu_upper.len() != n
        {
            return Err(Error::Contract("KKT point dimensions do not match the problem".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccelKind {
    Success,
    DiscardWrongInertia,
    DiscardIterLimit,
    SavedButFar,
}

/// Feasibility, stationarity and complementarity residuals of the unscaled problem.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub feasibility: f64,
    pub optimality: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelOptions {
    pub eps_feas: f64,
    pub eps_opt: f64,
    pub eps_compl: f64,
    pub max_iterations: usize,
    /// Newton matrices with a larger 1-norm condition number are rejected.
    pub condition_limit: f64,
}

impl Default for AccelOptions {
    fn default() -> Self {
        Self {
            eps_feas: 1e-8,
            eps_opt: 1e-8,
            eps_compl: 1e-8,
            max_iterations: 10,
            condition_limit: 1e12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelOutcome {
    pub kind: AccelKind,
    pub point: KktPoint,
    pub residuals: KktResiduals,
    /// Newton steps taken.
    pub iterations: usize,
    /// Euclidean norm of the system residual at the start and after each step.
    pub residual_history: Vec<f64>,
}

fn lagrangian_gradient(eval: &Evaluator<'_>, pt: &KktPoint) -> Result<DVector<f64>> {
    let x = DVector::from_column_slice(&pt.x);
    let mut g = eval.gradient(&x)?;
    if !pt.lambda.is_empty() {
        g += eval.eq_jacobian(&x)?.transpose() * DVector::from_column_slice(&pt.lambda);
    }
    if !pt.mu.is_empty() {
        g += eval.ineq_jacobian(&x)?.transpose() * DVector::from_column_slice(&pt.mu);
    }
    Ok(g)
}

/// Stacked residual of the semismooth KKT system (order `3n + m + p`).
pub fn kkt_residual(eval: &Evaluator<'_>, pt: &KktPoint) -> Result<DVector<f64>> {
    pt.check_dims(eval)?;
    let spec = eval.spec();
    let (n, m, p) = (spec.n(), spec.m(), spec.p());
    let x = DVector::from_column_slice(&pt.x);
    let grad = lagrangian_gradient(eval, pt)?;
    let h = eval.equalities(&x)?;
    let g = eval.inequalities(&x)?;
    let mut r = DVector::zeros(3 * n + m + p);
    for i in 0..n {
        r[i] = grad[i] - pt.nu_lower[i] + pt.nu_upper[i];
        r[n + m + p + i] = (pt.x[i] - spec.lower()[i]).min(pt.nu_lower[i]);
        r[2 * n + m + p + i] = (spec.upper()[i] - pt.x[i]).min(pt.nu_upper[i]);
    }
    for j in 0..m {
        r[n + j] = h[j];
    }
    for j in 0..p {
        r[n + m + j] = (-g[j]).min(pt.mu[j]);
    }
    Ok(r)
}

/// One element of the generalized Jacobian of [`kkt_residual`]. Each min row
/// differentiates its strictly smaller argument; ties take the multiplier.
pub fn kkt_jacobian(eval: &Evaluator<'_>, pt: &KktPoint) -> Result<DMatrix<f64>> {
    pt.check_dims(eval)?;
    let spec = eval.spec();
    let (n, m, p) = (spec.n(), spec.m(), spec.p());
    let x = DVector::from_column_slice(&pt.x);
    let dim = 3 * n + m + p;
    let (cl, cmu, cnl, cnu) = (n, n + m, n + m + p, 2 * n + m + p);
    let mut jac = DMatrix::zeros(dim, dim);

    let mut hl = eval.hessian(&x)?;
    for j in 0..m {
        if pt.lambda[j] != 0.0 {
            hl += eval.eq_hessian(&x, j)? * pt.lambda[j];
        }
    }
    for j in 0..p {
        if pt.mu[j] != 0.0 {
            hl += eval.ineq_hessian(&x, j)? * pt.mu[j];
        }
    }
    jac.view_mut((0, 0), (n, n)).copy_from(&hl);
    let jh = eval.eq_jacobian(&x)?;
    let jg = eval.ineq_jacobian(&x)?;
    let g = eval.inequalities(&x)?;
    jac.view_mut((0, cl), (n, m)).copy_from(&jh.transpose());
    jac.view_mut((0, cmu), (n, p)).copy_from(&jg.transpose());
    for i in 0..n {
        jac[(i, cnl + i)] = -1.0;
        jac[(i, cnu + i)] = 1.0;
    }
    jac.view_mut((n, 0), (m, n)).copy_from(&jh);
    for j in 0..p {
        let row = n + m + j;
        if -g[j] < pt.mu[j] {
            for c in 0..n {
                jac[(row, c)] = -jg[(j, c)];
            }
        } else {
            jac[(row, cmu + j)] = 1.0;
        }
    }
    for i in 0..n {
        let row = cnl + i;
        if pt.x[i] - spec.lower()[i] < pt.nu_lower[i] {
            jac[(row, i)] = 1.0;
        } else {
            jac[(row, cnl + i)] = 1.0;
        }
        let row = cnu + i;
        if spec.upper()[i] - pt.x[i] < pt.nu_upper[i] {
            jac[(row, i)] = -1.0;
        } else {
            jac[(row, cnu + i)] = 1.0;
        }
    }
    Ok(jac)
}

/// Residuals of the approximate KKT conditions used as the acceleration target.
///
/// Complementarity is measured as the largest `|min(slack, multiplier)|`, so
/// negative multipliers count against it as well.
pub fn kkt_residuals(eval: &Evaluator<'_>, pt: &KktPoint) -> Result<KktResiduals> {
    pt.check_dims(eval)?;
    let spec = eval.spec();
    let x = DVector::from_column_slice(&pt.x);
    let h = eval.equalities(&x)?;
    let g = eval.inequalities(&x)?;
    let mut feas = sup_norm(&h);
    let mut compl = 0.0f64;
    for j in 0..g.len() {
        feas = feas.max(g[j]);
        compl = compl.max((-g[j]).min(pt.mu[j]).abs());
    }
    for i in 0..pt.x.len() {
        let (l, u) = (spec.lower()[i], spec.upper()[i]);
        feas = feas.max(l - pt.x[i]).max(pt.x[i] - u);
        compl = compl
            .max((pt.x[i] - l).min(pt.nu_lower[i]).abs())
            .max((u - pt.x[i]).min(pt.nu_upper[i]).abs());
    }
    let grad = lagrangian_gradient(eval, pt)?;
    let opt = grad
        .iter()
        .zip(pt.nu_lower.iter().zip(&pt.nu_upper))
        .fold(0.0f64, |a, (g, (nl, nu))| a.max((g - nl + nu).abs()));
    Ok(KktResiduals {
        feasibility: feas.max(0.0),
        optimality: opt,
        complementarity: compl,
    })
}

fn meets(r: &KktResiduals, opts: &AccelOptions) -> bool {
    r.feasibility <= opts.eps_feas && r.optimality <= opts.eps_opt && r.complementarity <= opts.eps_compl
}

/// Runs at most `max_iterations` pure Newton steps from `start`.
///
/// `start_is_close` says whether the outer iterate the start was built from
/// already satisfies the stopping test at half precision; it decides between
/// `Success` and `SavedButFar` when the target is reached.
pub fn accelerate(eval: &Evaluator<'_>, start: &KktPoint, opts: &AccelOptions, start_is_close: bool) -> Result<AccelOutcome> {
    start.check_dims(eval)?;
    let spec = eval.spec();
    let (n, m, p) = (spec.n(), spec.m(), spec.p());
    let mut pt = start.clone();
    let mut history = Vec::new();
    let reached = |kind_if_close: bool| {
        if kind_if_close {
            AccelKind::Success
        } else {
            AccelKind::SavedButFar
        }
    };
    let discard = |pt: KktPoint, kind, iterations, history, residuals| AccelOutcome {
        kind,
        point: pt,
        residuals,
        iterations,
        residual_history: history,
    };

    let mut residuals = match kkt_residuals(eval, &pt) {
        Ok(r) => r,
        Err(Error::Evaluation { .. }) => {
            return Ok(discard(pt, AccelKind::DiscardIterLimit, 0, history, KktResiduals::default()));
        }
        Err(e) => return Err(e),
    };
    for it in 0..=opts.max_iterations {
        let step = (|| -> Result<Option<DVector<f64>>> {
            let f = kkt_residual(eval, &pt)?;
            history.push(f.norm());
            if meets(&residuals, opts) || it == opts.max_iterations {
                return Ok(None);
            }
            let jac = kkt_jacobian(eval, &pt)?;
            let lu = jac.clone().lu();
            let Some(inv) = lu.try_inverse() else {
                return Err(Error::Singular {
                    positive: 0,
                    negative: 0,
                    zero: 1,
                });
            };
            let cond = jac.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max)
                * inv.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max);
            if !(cond <= opts.condition_limit) {
                return Err(Error::Singular {
                    positive: 0,
                    negative: 0,
                    zero: 1,
                });
            }
            Ok(Some(inv * (-f)))
        })();
        let delta = match step {
            Ok(Some(d)) => d,
            Ok(None) => {
                let kind = if meets(&residuals, opts) {
                    reached(start_is_close)
                } else {
                    AccelKind::DiscardIterLimit
                };
                return Ok(discard(pt, kind, it, history, residuals));
            }
            Err(Error::Singular { .. }) => {
                return Ok(discard(pt, AccelKind::DiscardWrongInertia, it, history, residuals));
            }
            Err(Error::Evaluation { .. }) => {
                return Ok(discard(pt, AccelKind::DiscardIterLimit, it, history, residuals));
            }
            Err(e) => return Err(e),
        };
        pt = KktPoint::from_vector(&(pt.to_vector() + delta), n, m, p);
        residuals = match kkt_residuals(eval, &pt) {
            Ok(r) => r,
            Err(Error::Evaluation { .. }) => {
                return Ok(discard(pt, AccelKind::DiscardIterLimit, it + 1, history, residuals));
            }
            Err(e) => return Err(e),
        };
    }
    unreachable!("loop returns on its last pass")
}
