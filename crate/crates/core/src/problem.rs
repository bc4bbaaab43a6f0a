//! Problem definition: objective, equality and inequality constraints, box bounds.
//!
//! A [`ProblemSpec`] describes
//!
//! ```text
//! minimize f(x)  subject to  h(x) = 0,  g(x) <= 0,  lower <= x <= upper
//! ```
//!
//! through user callbacks. All evaluation goes through an [`Evaluator`], which
//! checks shapes and finiteness on every call and counts evaluations for the
//! solve that owns it.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type IndexedMatrixFn = Arc<dyn Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync>;

/// Callbacks for a family of constraints `c(x)` (either `h` or `g`).
#[derive(Clone)]
struct ConstraintBlock {
    count: usize,
    values: VectorFn,
    jacobian: MatrixFn,
    hessian: IndexedMatrixFn,
}

impl ConstraintBlock {
    fn empty(n: usize) -> Self {
        Self {
            count: 0,
            values: Arc::new(|_| DVector::zeros(0)),
            jacobian: Arc::new(move |_| DMatrix::zeros(0, n)),
            hessian: Arc::new(move |_, _| DMatrix::zeros(n, n)),
        }
    }
}

/// A nonlinear program with box bounds. Infinite bounds mark absent constraints.
#[derive(Clone)]
pub struct ProblemSpec {
    n: usize,
    lower: DVector<f64>,
    upper: DVector<f64>,
    f: ScalarFn,
    grad_f: VectorFn,
    hess_f: MatrixFn,
    eq: ConstraintBlock,
    ineq: ConstraintBlock,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("n", &self.n)
            .field("m", &self.eq.count)
            .field("p", &self.ineq.count)
            .field("lower", &self.lower.as_slice())
            .field("upper", &self.upper.as_slice())
            .finish()
    }
}

impl ProblemSpec {
    /// Creates a problem with the given box and a zero objective.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Contract(format!(
                "bound lengths differ: {} vs {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l > u || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::Contract(format!("invalid bounds at {i}: [{l}, {u}]")));
            }
        }
        let n = lower.len();
        Ok(Self {
            n,
            lower: DVector::from_vec(lower),
            upper: DVector::from_vec(upper),
            f: Arc::new(|_| 0.0),
            grad_f: Arc::new(move |_| DVector::zeros(n)),
            hess_f: Arc::new(move |_| DMatrix::zeros(n, n)),
            eq: ConstraintBlock::empty(n),
            ineq: ConstraintBlock::empty(n),
        })
    }

    /// A problem with `n` free variables.
    pub fn unbounded(n: usize) -> Self {
        Self::new(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
            .expect("infinite bounds are always valid")
    }

    pub fn with_objective(
        mut self,
        f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        hess: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.f = Arc::new(f);
        self.grad_f = Arc::new(grad);
        self.hess_f = Arc::new(hess);
        self
    }

    /// Equality constraints `h(x) = 0`. `jac` returns the `m x n` Jacobian and
    /// `hess(x, j)` the Hessian of `h_j`.
    pub fn with_equalities(
        mut self,
        m: usize,
        h: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        hess: impl Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.eq = ConstraintBlock {
            count: m,
            values: Arc::new(h),
            jacobian: Arc::new(jac),
            hessian: Arc::new(hess),
        };
        self
    }

    /// Inequality constraints `g(x) <= 0`, same callback layout as equalities.
    pub fn with_inequalities(
        mut self,
        p: usize,
        g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        hess: impl Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.ineq = ConstraintBlock {
            count: p,
            values: Arc::new(g),
            jacobian: Arc::new(jac),
            hessian: Arc::new(hess),
        };
        self
    }

    /// Same callbacks on a different box.
    pub fn with_bounds(&self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != self.n {
            return Err(Error::Contract("bound length does not match n".into()));
        }
        let fresh = Self::new(lower, upper)?;
        Ok(Self {
            lower: fresh.lower,
            upper: fresh.upper,
            ..self.clone()
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.eq.count
    }

    pub fn p(&self) -> usize {
        self.ineq.count
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn has_finite_box(&self) -> bool {
        self.lower.iter().chain(self.upper.iter()).all(|v| v.is_finite())
    }
}

/// Evaluation counts for one solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounters {
    pub objective: u64,
    pub gradient: u64,
    pub hessian: u64,
    pub constraints: u64,
    pub jacobian: u64,
    pub constraint_hessians: u64,
    pub inner_iterations: u64,
    pub outer_iterations: u64,
    pub factorizations: u64,
}

/// Validating, counting front end to a [`ProblemSpec`].
pub struct Evaluator<'a> {
    spec: &'a ProblemSpec,
    counters: Cell<EvalCounters>,
}

fn point_of(x: &DVector<f64>) -> Vec<f64> {
    x.iter().copied().collect()
}

fn check_finite<'s>(what: &'static str, x: &DVector<f64>, mut values: impl Iterator<Item = &'s f64>) -> Result<()> {
    if values.all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation {
            what,
            point: point_of(x),
            detail: "non-finite value".into(),
        })
    }
}

fn check_shape(what: &'static str, x: &DVector<f64>, got: (usize, usize), expected: (usize, usize)) -> Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(Error::Evaluation {
            what,
            point: point_of(x),
            detail: format!("returned shape {got:?}, expected {expected:?}"),
        })
    }
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Self {
        Self {
            spec,
            counters: Cell::new(EvalCounters::default()),
        }
    }

    pub fn spec(&self) -> &'a ProblemSpec {
        self.spec
    }

    pub fn counters(&self) -> EvalCounters {
        self.counters.get()
    }

    pub(crate) fn tally(&self, update: impl FnOnce(&mut EvalCounters)) {
        let mut c = self.counters.get();
        update(&mut c);
        self.counters.set(c);
    }

    fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.spec.n {
            return Err(Error::Contract(format!(
                "point has dimension {}, expected {}",
                x.len(),
                self.spec.n
            )));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_point(x)?;
        self.tally(|c| c.objective += 1);
        let v = (self.spec.f)(x);
        check_finite("objective", x, std::iter::once(&v))?;
        Ok(v)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        self.tally(|c| c.gradient += 1);
        let v = (self.spec.grad_f)(x);
        check_shape("objective gradient", x, (v.len(), 1), (self.spec.n, 1))?;
        check_finite("objective gradient", x, v.iter())?;
        Ok(v)
    }

    pub fn hessian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        self.tally(|c| c.hessian += 1);
        let v = (self.spec.hess_f)(x);
        check_shape("objective Hessian", x, v.shape(), (self.spec.n, self.spec.n))?;
        check_finite("objective Hessian", x, v.iter())?;
        Ok(v)
    }

    fn block_values(&self, block: &ConstraintBlock, what: &'static str, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_point(x)?;
        if block.count == 0 {
            return Ok(DVector::zeros(0));
        }
        self.tally(|c| c.constraints += 1);
        let v = (block.values)(x);
        check_shape(what, x, (v.len(), 1), (block.count, 1))?;
        check_finite(what, x, v.iter())?;
        Ok(v)
    }

    fn block_jacobian(&self, block: &ConstraintBlock, what: &'static str, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        if block.count == 0 {
            return Ok(DMatrix::zeros(0, self.spec.n));
        }
        self.tally(|c| c.jacobian += 1);
        let v = (block.jacobian)(x);
        check_shape(what, x, v.shape(), (block.count, self.spec.n))?;
        check_finite(what, x, v.iter())?;
        Ok(v)
    }

    fn block_hessian(
        &self,
        block: &ConstraintBlock,
        what: &'static str,
        x: &DVector<f64>,
        j: usize,
    ) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        if j >= block.count {
            return Err(Error::Contract(format!("{what}: index {j} out of range")));
        }
        self.tally(|c| c.constraint_hessians += 1);
        let v = (block.hessian)(x, j);
        check_shape(what, x, v.shape(), (self.spec.n, self.spec.n))?;
        check_finite(what, x, v.iter())?;
        Ok(v)
    }

    pub fn equalities(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.block_values(&self.spec.eq, "equality constraints", x)
    }

    pub fn eq_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.block_jacobian(&self.spec.eq, "equality Jacobian", x)
    }

    pub fn eq_hessian(&self, x: &DVector<f64>, j: usize) -> Result<DMatrix<f64>> {
        self.block_hessian(&self.spec.eq, "equality Hessian", x, j)
    }

    pub fn inequalities(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.block_values(&self.spec.ineq, "inequality constraints", x)
    }

    pub fn ineq_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.block_jacobian(&self.spec.ineq, "inequality Jacobian", x)
    }

    pub fn ineq_hessian(&self, x: &DVector<f64>, j: usize) -> Result<DMatrix<f64>> {
        self.block_hessian(&self.spec.ineq, "inequality Hessian", x, j)
    }
}

/// Euclidean projection onto `[lower, upper]`, componentwise median.
pub fn project_box(v: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    assert!(
        v.len() == lower.len() && v.len() == upper.len(),
        "project_box: dimension mismatch"
    );
    DVector::from_iterator(
        v.len(),
        v.iter()
            .zip(lower.iter().zip(upper.iter()))
            .map(|(&vi, (&l, &u))| vi.max(l).min(u)),
    )
}

/// `P(x - grad) - x`.
pub fn projected_gradient(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    project_box(&(x - grad), lower, upper) - x
}

pub fn in_box(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> bool {
    x.iter()
        .zip(lower.iter().zip(upper.iter()))
        .all(|(&v, (&l, &u))| l <= v && v <= u)
}

pub(crate) fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Multiplicative factors applied to the objective and each constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFactors {
    pub s_f: f64,
    pub s_h: Vec<f64>,
    pub s_g: Vec<f64>,
    pub enabled: bool,
}

impl ScalingFactors {
    pub fn identity(m: usize, p: usize) -> Self {
        Self {
            s_f: 1.0,
            s_h: vec![1.0; m],
            s_g: vec![1.0; p],
            enabled: false,
        }
    }
}

const SCALE_FLOOR: f64 = 1e-8;

fn scale_for(grad_sup: f64) -> f64 {
    SCALE_FLOOR.max(100.0 / grad_sup.max(1.0))
}

/// Gradient-based scaling computed once at the initial guess.
pub fn compute_scaling(eval: &Evaluator<'_>, x0: &DVector<f64>, enabled: bool) -> Result<ScalingFactors> {
    let spec = eval.spec();
    if !enabled {
        return Ok(ScalingFactors::identity(spec.m(), spec.p()));
    }
    let grad = eval.gradient(x0)?;
    let jh = eval.eq_jacobian(x0)?;
    let jg = eval.ineq_jacobian(x0)?;
    let row_sup = |j: &DMatrix<f64>, r: usize| j.row(r).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(ScalingFactors {
        s_f: scale_for(sup_norm(&grad)),
        s_h: (0..spec.m()).map(|r| scale_for(row_sup(&jh, r))).collect(),
        s_g: (0..spec.p()).map(|r| scale_for(row_sup(&jg, r))).collect(),
        enabled: true,
    })
}

/// Constraint violation summary and the gradient of `||h||^2 + ||g_+||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityReport {
    pub h_supnorm: f64,
    pub gplus_supnorm: f64,
    pub phi: f64,
    pub grad_phi: DVector<f64>,
}

impl InfeasibilityReport {
    pub fn sup(&self) -> f64 {
        self.h_supnorm.max(self.gplus_supnorm)
    }
}

/// Infeasibility of the original (unscaled) constraints.
pub fn infeasibility(eval: &Evaluator<'_>, x: &DVector<f64>) -> Result<InfeasibilityReport> {
    let spec = eval.spec();
    infeasibility_scaled(eval, &ScalingFactors::identity(spec.m(), spec.p()), x)
}

/// Infeasibility of the constraints multiplied by their scaling factors.
pub fn infeasibility_scaled(
    eval: &Evaluator<'_>,
    scaling: &ScalingFactors,
    x: &DVector<f64>,
) -> Result<InfeasibilityReport> {
    let h = eval.equalities(x)?;
    let g = eval.inequalities(x)?;
    let jh = eval.eq_jacobian(x)?;
    let jg = eval.ineq_jacobian(x)?;
    let hs = DVector::from_iterator(h.len(), h.iter().zip(&scaling.s_h).map(|(v, s)| v * s));
    let gp = DVector::from_iterator(g.len(), g.iter().zip(&scaling.s_g).map(|(v, s)| (v * s).max(0.0)));
    // d/dx ||s*c||^2 = 2 * J^T diag(s) (s*c)
    let wh = DVector::from_iterator(hs.len(), hs.iter().zip(&scaling.s_h).map(|(v, s)| v * s));
    let wg = DVector::from_iterator(gp.len(), gp.iter().zip(&scaling.s_g).map(|(v, s)| v * s));
    let grad_phi = (jh.transpose() * wh + jg.transpose() * wg) * 2.0;
    Ok(InfeasibilityReport {
        h_supnorm: sup_norm(&hs),
        gplus_supnorm: sup_norm(&gp),
        phi: hs.norm_squared() + gp.norm_squared(),
        grad_phi,
    })
}

/// Largest relative discrepancy between analytic derivatives and centered differences.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DerivativeCheck {
    pub gradient: f64,
    pub hessian: f64,
    pub eq_jacobian: f64,
    pub eq_hessians: f64,
    pub ineq_jacobian: f64,
    pub ineq_hessians: f64,
}

impl DerivativeCheck {
    pub fn worst(&self) -> f64 {
        [
            self.gradient,
            self.hessian,
            self.eq_jacobian,
            self.eq_hessians,
            self.ineq_jacobian,
            self.ineq_hessians,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn rel_err(analytic: f64, approx: f64) -> f64 {
    (analytic - approx).abs() / approx.abs().max(1.0)
}

fn max_rel_err(analytic: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(approx.iter())
        .fold(0.0, |acc, (&a, &b)| acc.max(rel_err(a, b)))
}

/// Centered differences with absolute floor 1 in the relative error.
fn central_columns<F>(x: &DVector<f64>, step: f64, rows: usize, mut eval: F) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut out = DMatrix::zeros(rows, n);
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += step;
        xm[i] -= step;
        let col = (eval(&xp)? - eval(&xm)?) / (2.0 * step);
        out.set_column(i, &col);
    }
    Ok(out)
}

/// Compares every analytic derivative callback against centered differences.
pub fn fd_check_derivatives(eval: &Evaluator<'_>, x: &DVector<f64>, step: f64) -> Result<DerivativeCheck> {
    let spec = eval.spec();
    if !(step > 0.0) {
        return Err(Error::Contract("finite-difference step must be positive".into()));
    }
    let fits = x
        .iter()
        .zip(spec.lower().iter().zip(spec.upper().iter()))
        .all(|(&v, (&l, &u))| l <= v - step && v + step <= u);
    if !fits {
        return Err(Error::Contract("point too close to the box for centered differences".into()));
    }
    let n = spec.n();
    let mut report = DerivativeCheck::default();

    let fd_grad = central_columns(x, step, 1, |y| Ok(DVector::from_element(1, eval.objective(y)?)))?;
    let grad = eval.gradient(x)?;
    report.gradient = max_rel_err(&DMatrix::from_row_slice(1, n, grad.as_slice()), &fd_grad);

    let fd_hess = central_columns(x, step, n, |y| eval.gradient(y))?;
    report.hessian = max_rel_err(&eval.hessian(x)?, &fd_hess);

    let fd_jh = central_columns(x, step, spec.m(), |y| eval.equalities(y))?;
    report.eq_jacobian = max_rel_err(&eval.eq_jacobian(x)?, &fd_jh);
    for j in 0..spec.m() {
        let fd = central_columns(x, step, n, |y| Ok(eval.eq_jacobian(y)?.row(j).transpose()))?;
        report.eq_hessians = report.eq_hessians.max(max_rel_err(&eval.eq_hessian(x, j)?, &fd));
    }

    let fd_jg = central_columns(x, step, spec.p(), |y| eval.inequalities(y))?;
    report.ineq_jacobian = max_rel_err(&eval.ineq_jacobian(x)?, &fd_jg);
    for j in 0..spec.p() {
        let fd = central_columns(x, step, n, |y| Ok(eval.ineq_jacobian(y)?.row(j).transpose()))?;
        report.ineq_hessians = report.ineq_hessians.max(max_rel_err(&eval.ineq_hessian(x, j)?, &fd));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn one_d_h_and_g() -> ProblemSpec {
        ProblemSpec::new(vec![-10.0], vec![10.0])
            .unwrap()
            .with_equalities(1, |x| dvector![x[0]], |_| DMatrix::from_element(1, 1, 1.0), |_, _| DMatrix::zeros(1, 1))
            .with_inequalities(
                1,
                |x| dvector![x[0] - 1.0],
                |_| DMatrix::from_element(1, 1, 1.0),
                |_, _| DMatrix::zeros(1, 1),
            )
    }

    #[test]
    fn projection_examples() {
        let l = dvector![0.0, 0.0];
        let u = dvector![1.0, 1.0];
        assert_eq!(project_box(&dvector![2.0, -2.0], &l, &u), dvector![1.0, 0.0]);
        assert_eq!(project_box(&dvector![0.3, 0.7], &l, &u), dvector![0.3, 0.7]);
        assert_eq!(project_box(&l, &l, &u), l);
    }

    #[test]
    fn infinite_bounds_are_absent() {
        let l = dvector![f64::NEG_INFINITY];
        let u = dvector![f64::INFINITY];
        assert_eq!(project_box(&dvector![-1e300], &l, &u), dvector![-1e300]);
    }

    #[test]
    fn infeasibility_examples() {
        let only_h = ProblemSpec::new(vec![-10.0], vec![10.0]).unwrap().with_equalities(
            1,
            |x| dvector![x[0]],
            |_| DMatrix::from_element(1, 1, 1.0),
            |_, _| DMatrix::zeros(1, 1),
        );
        let r = infeasibility(&Evaluator::new(&only_h), &dvector![2.0]).unwrap();
        assert_eq!(r.phi, 4.0);
        assert_eq!(r.grad_phi, dvector![4.0]);

        let only_g = ProblemSpec::new(vec![-10.0], vec![10.0]).unwrap().with_inequalities(
            1,
            |x| dvector![x[0] - 1.0],
            |_| DMatrix::from_element(1, 1, 1.0),
            |_, _| DMatrix::zeros(1, 1),
        );
        let r = infeasibility(&Evaluator::new(&only_g), &dvector![0.0]).unwrap();
        assert_eq!(r.phi, 0.0);
        assert_eq!(r.grad_phi, dvector![0.0]);
        assert_eq!(r.sup(), 0.0);

        let both = one_d_h_and_g();
        let r = infeasibility(&Evaluator::new(&both), &dvector![3.0]).unwrap();
        assert_eq!(r.phi, 13.0);
        assert_eq!(r.grad_phi, dvector![10.0]);
        assert_eq!(r.h_supnorm, 3.0);
        assert_eq!(r.gplus_supnorm, 2.0);
    }

    #[test]
    fn scaling_formula() {
        let spec = ProblemSpec::unbounded(2).with_objective(
            |x| 1000.0 * x[0] + 0.5 * x[1],
            |_| dvector![1000.0, 0.5],
            |_| DMatrix::zeros(2, 2),
        );
        let eval = Evaluator::new(&spec);
        let s = compute_scaling(&eval, &dvector![0.0, 0.0], true).unwrap();
        assert!((s.s_f - 0.1).abs() < 1e-15);

        let flat = ProblemSpec::unbounded(1).with_objective(|x| 0.5 * x[0], |_| dvector![0.5], |_| DMatrix::zeros(1, 1));
        let s = compute_scaling(&Evaluator::new(&flat), &dvector![0.0], true).unwrap();
        assert_eq!(s.s_f, 100.0);

        let s = compute_scaling(&eval, &dvector![0.0, 0.0], false).unwrap();
        assert_eq!(s, ScalingFactors::identity(0, 0));
    }

    #[test]
    fn scaling_respects_floor() {
        let steep = ProblemSpec::unbounded(1).with_objective(|x| 1e12 * x[0], |_| dvector![1e12], |_| DMatrix::zeros(1, 1));
        let s = compute_scaling(&Evaluator::new(&steep), &dvector![0.0], true).unwrap();
        assert_eq!(s.s_f, 1e-8);
    }

    #[test]
    fn non_finite_callback_is_rejected() {
        let spec = ProblemSpec::unbounded(1).with_objective(|x| 1.0 / x[0], |_| dvector![f64::NAN], |_| DMatrix::zeros(1, 1));
        let eval = Evaluator::new(&spec);
        assert!(matches!(eval.objective(&dvector![0.0]), Err(Error::Evaluation { .. })));
        assert!(matches!(eval.gradient(&dvector![1.0]), Err(Error::Evaluation { .. })));
        assert_eq!(eval.counters().objective, 1);
        assert_eq!(eval.counters().gradient, 1);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let spec = ProblemSpec::unbounded(2).with_objective(|_| 0.0, |_| dvector![1.0], |_| DMatrix::zeros(2, 2));
        assert!(Evaluator::new(&spec).gradient(&dvector![0.0, 0.0]).is_err());
    }

    #[test]
    fn bad_bounds_rejected() {
        assert!(ProblemSpec::new(vec![1.0], vec![0.0]).is_err());
        assert!(ProblemSpec::new(vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn fd_checker_examples() {
        let quad = ProblemSpec::new(vec![-5.0], vec![5.0]).unwrap().with_objective(
            |x| x[0] * x[0],
            |x| dvector![2.0 * x[0]],
            |_| DMatrix::from_element(1, 1, 2.0),
        );
        let r = fd_check_derivatives(&Evaluator::new(&quad), &dvector![1.0], 1e-6).unwrap();
        assert!(r.gradient <= 1e-6, "{r:?}");

        let linear_h = ProblemSpec::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap().with_equalities(
            1,
            |x| dvector![3.0 * x[0] - 2.0 * x[1] + 1.0],
            |_| DMatrix::from_row_slice(1, 2, &[3.0, -2.0]),
            |_, _| DMatrix::zeros(2, 2),
        );
        let r = fd_check_derivatives(&Evaluator::new(&linear_h), &dvector![0.5, 0.25], 1e-3).unwrap();
        assert!(r.eq_jacobian <= 1e-10, "{r:?}");

        // gradient callback off by a factor of two
        let wrong = ProblemSpec::new(vec![-5.0], vec![5.0]).unwrap().with_objective(
            |x| x[0] * x[0],
            |x| dvector![4.0 * x[0]],
            |_| DMatrix::from_element(1, 1, 2.0),
        );
        let r = fd_check_derivatives(&Evaluator::new(&wrong), &dvector![1.0], 1e-6).unwrap();
        assert!((r.gradient - 1.0).abs() < 1e-6, "{r:?}");
    }

    #[test]
    fn fd_checker_requires_interior_point() {
        let spec = ProblemSpec::new(vec![0.0], vec![1.0]).unwrap();
        assert!(fd_check_derivatives(&Evaluator::new(&spec), &dvector![0.0], 1e-6).is_err());
    }

    proptest! {
        #[test]
        fn projection_idempotent_and_nonexpansive(
            a in proptest::collection::vec(-10.0f64..10.0, 4),
            b in proptest::collection::vec(-10.0f64..10.0, 4),
            lo in proptest::collection::vec(-5.0f64..0.0, 4),
            width in proptest::collection::vec(0.0f64..5.0, 4),
        ) {
            let l = DVector::from_vec(lo.clone());
            let u = DVector::from_iterator(4, lo.iter().zip(&width).map(|(l, w)| l + w));
            let a = DVector::from_vec(a);
            let b = DVector::from_vec(b);
            let pa = project_box(&a, &l, &u);
            prop_assert_eq!(project_box(&pa, &l, &u), pa.clone());
            prop_assert!(in_box(&pa, &l, &u));
            let pb = project_box(&b, &l, &u);
            prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-12);
        }

        #[test]
        fn scaling_factors_in_range(gx in -1e12f64..1e12, gy in -1e-3f64..1e-3) {
            let spec = ProblemSpec::unbounded(2).with_objective(
                move |x| gx * x[0] + gy * x[1],
                move |_| dvector![gx, gy],
                |_| DMatrix::zeros(2, 2),
            ).with_equalities(1, move |x| dvector![gy * x[0]], move |_| DMatrix::from_row_slice(1, 2, &[gy, 0.0]), |_, _| DMatrix::zeros(2, 2));
            let s = compute_scaling(&Evaluator::new(&spec), &dvector![0.0, 0.0], true).unwrap();
            for v in std::iter::once(s.s_f).chain(s.s_h.iter().copied()) {
                prop_assert!((1e-8..=100.0).contains(&v));
            }
        }
    }
}
