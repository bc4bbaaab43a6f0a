//! Augmented Lagrangian of the scaled problem and the derived multiplier quantities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::box_solver::{BoxProblem, HessianModel};
use crate::error::{Error, Result};
use crate::linalg::SymMatrix;
use crate::problem::{Evaluator, ScalingFactors};

/// Safeguarded multiplier estimates used inside the penalty terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierState {
    pub lambda_bar: DVector<f64>,
    pub mu_bar: DVector<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub mu_max: f64,
}

impl MultiplierState {
    pub fn zeros(m: usize, p: usize, lambda_min: f64, lambda_max: f64, mu_max: f64) -> Self {
        Self {
            lambda_bar: DVector::zeros(m),
            mu_bar: DVector::zeros(p),
            lambda_min,
            lambda_max,
            mu_max,
        }
    }

    pub fn in_bounds(&self) -> bool {
        self.lambda_bar.iter().all(|&v| v >= self.lambda_min && v <= self.lambda_max)
            && self.mu_bar.iter().all(|&v| (0.0..=self.mu_max).contains(&v))
    }
}

/// How the subproblem Newton systems are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Pick per evaluation by comparing system sizes.
    #[default]
    Auto,
    /// Always the explicit Hessian `W + rho J^T J`.
    Direct,
    /// Always the augmented system with the `-I/rho` block.
    Augmented,
}

/// Whether the explicit Hessian is preferred for `n` variables and `rows`
/// penalized constraints: its dense fill `n^2` against the augmented order squared.
pub fn prefers_direct(n: usize, rows: usize) -> bool {
    rows == 0 || n * n < (n + rows) * (n + rows)
}

/// Penalty parameter and multiplier estimates attached to a problem.
#[derive(Clone, Copy)]
pub struct ALContext<'a> {
    pub eval: &'a Evaluator<'a>,
    pub scaling: &'a ScalingFactors,
    pub rho: f64,
    pub multipliers: &'a MultiplierState,
}

/// Scaled constraint values at a point.
struct Scaled {
    h: DVector<f64>,
    g: DVector<f64>,
}

fn scale(v: DVector<f64>, s: &[f64]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().zip(s).map(|(a, b)| a * b))
}

impl<'a> ALContext<'a> {
    pub fn new(
        eval: &'a Evaluator<'a>,
        scaling: &'a ScalingFactors,
        rho: f64,
        multipliers: &'a MultiplierState,
    ) -> Result<Self> {
        let spec = eval.spec();
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::Contract(format!("penalty parameter must be positive, got {rho}")));
        }
        if multipliers.lambda_bar.len() != spec.m()
            || multipliers.mu_bar.len() != spec.p()
            || scaling.s_h.len() != spec.m()
            || scaling.s_g.len() != spec.p()
        {
            return Err(Error::Contract("multiplier or scaling dimensions do not match the problem".into()));
        }
        Ok(Self {
            eval,
            scaling,
            rho,
            multipliers,
        })
    }

    fn constraints(&self, x: &DVector<f64>) -> Result<Scaled> {
        Ok(Scaled {
            h: scale(self.eval.equalities(x)?, &self.scaling.s_h),
            g: scale(self.eval.inequalities(x)?, &self.scaling.s_g),
        })
    }

    fn multipliers_from(&self, c: &Scaled) -> (DVector<f64>, DVector<f64>) {
        let lam = &self.multipliers.lambda_bar + &c.h * self.rho;
        let mu = (&self.multipliers.mu_bar + &c.g * self.rho).map(|v| if v > 0.0 { v } else { 0.0 });
        (lam, mu)
    }

    fn active_from(&self, c: &Scaled) -> Vec<usize> {
        (0..c.g.len())
            .filter(|&j| self.multipliers.mu_bar[j] + self.rho * c.g[j] > 0.0)
            .collect()
    }

    /// Augmented Lagrangian value.
    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let c = self.constraints(x)?;
        let f = self.scaling.s_f * self.eval.objective(x)?;
        let rho = self.rho;
        let eq: f64 = c
            .h
            .iter()
            .zip(self.multipliers.lambda_bar.iter())
            .map(|(h, l)| (h + l / rho).powi(2))
            .sum();
        let ineq: f64 = c
            .g
            .iter()
            .zip(self.multipliers.mu_bar.iter())
            .map(|(g, m)| (g + m / rho).max(0.0).powi(2))
            .sum();
        Ok(f + 0.5 * rho * (eq + ineq))
    }

    /// `(lambda_bar + rho h, (mu_bar + rho g)_+)` with scaled constraints.
    pub fn first_order_multipliers(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        Ok(self.multipliers_from(&self.constraints(x)?))
    }

    /// `min(-g, mu_bar / rho)` componentwise, scaled.
    pub fn compute_v(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let g = self.constraints(x)?.g;
        Ok(DVector::from_iterator(
            g.len(),
            g.iter()
                .zip(self.multipliers.mu_bar.iter())
                .map(|(g, m)| (-g).min(m / self.rho)),
        ))
    }

    /// Inequalities whose penalty term is switched on.
    pub fn active_set(&self, x: &DVector<f64>) -> Result<Vec<usize>> {
        Ok(self.active_from(&self.constraints(x)?))
    }

    /// Gradient through the first-order multipliers.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let c = self.constraints(x)?;
        let (lam, mu) = self.multipliers_from(&c);
        let mut grad = self.eval.gradient(x)? * self.scaling.s_f;
        if !lam.is_empty() {
            let wh = scale(lam, &self.scaling.s_h);
            grad += self.eval.eq_jacobian(x)?.transpose() * wh;
        }
        if !mu.is_empty() {
            let wg = scale(mu, &self.scaling.s_g);
            grad += self.eval.ineq_jacobian(x)?.transpose() * wg;
        }
        Ok(grad)
    }

    /// `(W, J)` where `W` is the Hessian of the Lagrangian at the first-order
    /// multipliers and `J` stacks scaled equality and active inequality gradients.
    fn blocks(&self, x: &DVector<f64>) -> Result<(SymMatrix, DMatrix<f64>)> {
        let spec = self.eval.spec();
        let n = spec.n();
        let c = self.constraints(x)?;
        let (lam, mu) = self.multipliers_from(&c);
        let active = self.active_from(&c);

        let mut w = SymMatrix::symmetrize(&(self.eval.hessian(x)? * self.scaling.s_f));
        let rows = spec.m() + active.len();
        let mut jac = DMatrix::zeros(rows, n);
        if spec.m() > 0 {
            let jh = self.eval.eq_jacobian(x)?;
            for j in 0..spec.m() {
                let s = self.scaling.s_h[j];
                if lam[j] != 0.0 {
                    w.add_scaled(lam[j] * s, &self.eval.eq_hessian(x, j)?);
                }
                jac.row_mut(j).copy_from(&(jh.row(j) * s));
            }
        }
        if !active.is_empty() {
            let jg = self.eval.ineq_jacobian(x)?;
            for (r, &j) in active.iter().enumerate() {
                let s = self.scaling.s_g[j];
                if mu[j] != 0.0 {
                    w.add_scaled(mu[j] * s, &self.eval.ineq_hessian(x, j)?);
                }
                jac.row_mut(spec.m() + r).copy_from(&(jg.row(j) * s));
            }
        }
        Ok((w, jac))
    }

    /// Explicit Hessian `W + rho J^T J`.
    pub fn hessian(&self, x: &DVector<f64>) -> Result<SymMatrix> {
        let (mut w, jac) = self.blocks(x)?;
        if jac.nrows() > 0 {
            w.add_scaled(self.rho, &(jac.transpose() * &jac));
        }
        Ok(w)
    }

    /// `[[W, J^T], [J, -I/rho]]`.
    pub fn augmented_system_matrix(&self, x: &DVector<f64>) -> Result<SymMatrix> {
        let (w, jac) = self.blocks(x)?;
        let n = w.order();
        let r = jac.nrows();
        let mut k = SymMatrix::zeros(n + r);
        for j in 0..n {
            for i in j..n {
                k.set(i, j, w.get(i, j));
            }
        }
        for a in 0..r {
            for j in 0..n {
                k.set(n + a, j, jac[(a, j)]);
            }
            k.set(n + a, n + a, -1.0 / self.rho);
        }
        Ok(k)
    }

    /// Second-order model in the form selected by `mode`.
    pub fn hessian_model(&self, x: &DVector<f64>, mode: HessianMode) -> Result<HessianModel> {
        let (mut w, jac) = self.blocks(x)?;
        let augmented = match mode {
            HessianMode::Direct => false,
            HessianMode::Augmented => jac.nrows() > 0,
            HessianMode::Auto => !prefers_direct(w.order(), jac.nrows()),
        };
        if augmented {
            return Ok(HessianModel::Augmented { w, jac, rho: self.rho });
        }
        if jac.nrows() > 0 {
            w.add_scaled(self.rho, &(jac.transpose() * &jac));
        }
        Ok(HessianModel::Dense(w))
    }
}

/// The box-constrained subproblem of minimizing the augmented Lagrangian.
pub struct ALSubproblem<'a> {
    pub ctx: ALContext<'a>,
    pub mode: HessianMode,
}

impl BoxProblem for ALSubproblem<'_> {
    fn lower(&self) -> &DVector<f64> {
        self.ctx.eval.spec().lower()
    }

    fn upper(&self) -> &DVector<f64> {
        self.ctx.eval.spec().upper()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.ctx.value(x)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.ctx.gradient(x)
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<HessianModel> {
        self.ctx.hessian_model(x, self.mode)
    }
}
