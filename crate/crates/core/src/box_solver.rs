//! Active-set Newton / spectral projected gradient solver for
//! `minimize phi(x) subject to lower <= x <= upper`.
//!
//! Each iteration either stays in the current face of the box (Newton with
//! inertia correction, projected line search and extrapolation) or leaves it
//! with a spectral projected gradient step. The choice depends on how much of
//! the projected gradient lives on the free variables.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{factorize, Factorization, Inertia, SymMatrix};
use crate::problem::{project_box, projected_gradient, sup_norm};

/// Smallest step the backtracking loops may try before giving up.
pub const LINE_SEARCH_FLOOR: f64 = 1e-30;

/// Shifts beyond `sigma_max * SIGMA_BREAKDOWN_FACTOR` are treated as breakdown.
const SIGMA_BREAKDOWN_FACTOR: f64 = 1e10;

/// Second-order information for a box problem.
#[derive(Debug, Clone)]
pub enum HessianModel {
    /// The Hessian itself.
    Dense(SymMatrix),
    /// Hessian given implicitly as `w + rho * jac^T jac` and solved through
    /// the augmented matrix `[[w, jac^T], [jac, -I/rho]]`.
    Augmented {
        w: SymMatrix,
        jac: DMatrix<f64>,
        rho: f64,
    },
}

impl HessianModel {
    pub fn order(&self) -> usize {
        match self {
            Self::Dense(h) => h.order(),
            Self::Augmented { w, .. } => w.order(),
        }
    }

    /// Restriction to the variables in `idx`.
    pub fn reduce(&self, idx: &[usize]) -> Self {
        match self {
            Self::Dense(h) => Self::Dense(h.select(idx)),
            Self::Augmented { w, jac, rho } => Self::Augmented {
                w: w.select(idx),
                jac: jac.select_columns(idx),
                rho: *rho,
            },
        }
    }

    /// The Hessian as an explicit matrix.
    pub fn to_dense(&self) -> SymMatrix {
        match self {
            Self::Dense(h) => h.clone(),
            Self::Augmented { w, jac, rho } => {
                let mut h = w.clone();
                h.add_scaled(*rho, &(jac.transpose() * jac));
                h
            }
        }
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        match self {
            Self::Dense(h) => h.max_abs_diagonal(),
            Self::Augmented { w, jac, rho } => (0..w.order())
                .map(|i| (w.get(i, i) + rho * jac.column(i).norm_squared()).abs())
                .fold(0.0, f64::max),
        }
    }

    fn shifted_system(&self, sigma: f64) -> SymMatrix {
        match self {
            Self::Dense(h) => h.shifted(sigma),
            Self::Augmented { w, jac, rho } => {
                let n = w.order();
                let r = jac.nrows();
                let mut k = SymMatrix::zeros(n + r);
                for j in 0..n {
                    for i in j..n {
                        k.set(i, j, w.get(i, j));
                    }
                    k.add(j, j, sigma);
                }
                for a in 0..r {
                    for j in 0..n {
                        k.set(n + a, j, jac[(a, j)]);
                    }
                    k.set(n + a, n + a, -1.0 / rho);
                }
                k
            }
        }
    }

    /// Inertia of the system matrix when the implied Hessian is positive definite.
    fn positive_definite_inertia(&self) -> Inertia {
        match self {
            Self::Dense(h) => Inertia {
                positive: h.order(),
                negative: 0,
                zero: 0,
            },
            Self::Augmented { w, jac, .. } => Inertia {
                positive: w.order(),
                negative: jac.nrows(),
                zero: 0,
            },
        }
    }

    fn solve(&self, fac: &Factorization, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::Dense(_) => fac.solve(rhs),
            Self::Augmented { w, jac, .. } => {
                let n = w.order();
                let mut full = DVector::zeros(n + jac.nrows());
                full.rows_mut(0, n).copy_from(rhs);
                Ok(fac.solve(&full)?.rows(0, n).into_owned())
            }
        }
    }
}

/// Objective and derivatives over a box.
pub trait BoxProblem {
    fn lower(&self) -> &DVector<f64>;
    fn upper(&self) -> &DVector<f64>;
    fn value(&self, x: &DVector<f64>) -> Result<f64>;
    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn hessian(&self, x: &DVector<f64>) -> Result<HessianModel>;
}

type BoxValue = Box<dyn Fn(&DVector<f64>) -> f64>;
type BoxGradient = Box<dyn Fn(&DVector<f64>) -> DVector<f64>>;
type BoxHessian = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64>>;

/// [`BoxProblem`] from plain closures.
pub struct ClosureProblem {
    lower: DVector<f64>,
    upper: DVector<f64>,
    value: BoxValue,
    gradient: BoxGradient,
    hessian: BoxHessian,
}

impl ClosureProblem {
    pub fn new(
        lower: DVector<f64>,
        upper: DVector<f64>,
        value: impl Fn(&DVector<f64>) -> f64 + 'static,
        gradient: impl Fn(&DVector<f64>) -> DVector<f64> + 'static,
        hessian: impl Fn(&DVector<f64>) -> DMatrix<f64> + 'static,
    ) -> Self {
        Self {
            lower,
            upper,
            value: Box::new(value),
            gradient: Box::new(gradient),
            hessian: Box::new(hessian),
        }
    }
}

impl BoxProblem for ClosureProblem {
    fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let v = (self.value)(x);
        if v.is_nan() {
            return Err(Error::Evaluation {
                what: "box objective",
                point: x.iter().copied().collect(),
                detail: "NaN".into(),
            });
        }
        Ok(v)
    }

    fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok((self.gradient)(x))
    }

    fn hessian(&self, x: &DVector<f64>) -> Result<HessianModel> {
        Ok(HessianModel::Dense(SymMatrix::symmetrize(&(self.hessian)(x))))
    }
}

/// Parameters of the box solver. Defaults are the published settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxOptions {
    pub phi_target: f64,
    /// Face is kept while `||g_I|| >= r ||g_P||`.
    pub r: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub gamma_armijo: f64,
    pub beta: f64,
    /// Newton steps longer than `eta * max(1, ||x||)` trigger extra shifting.
    pub eta: f64,
    pub lambda_spg_min: f64,
    pub lambda_spg_max: f64,
    pub sigma_small: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub h_lo: f64,
    pub h_hi: f64,
    pub t_ext_max: u32,
    pub epsilon: f64,
    pub k_max: u64,
    pub window_a: u64,
    pub window_b: u64,
    pub window_c: u64,
    pub stall_window: u64,
}

impl Default for BoxOptions {
    fn default() -> Self {
        Self {
            phi_target: -1e12,
            r: 0.1,
            tau1: 0.1,
            tau2: 0.9,
            gamma_armijo: 1e-4,
            beta: 0.5,
            eta: 1e4,
            lambda_spg_min: 1e-16,
            lambda_spg_max: 1e16,
            sigma_small: 1e-8,
            sigma_min: 1e-8,
            sigma_max: 1e16,
            h_lo: 1e-8,
            h_hi: 1e8,
            t_ext_max: 20,
            epsilon: 1e-8,
            k_max: 50_000,
            window_a: 100,
            window_b: 5_000,
            window_c: 10_000,
            stall_window: 3,
        }
    }
}

impl BoxOptions {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.r > 0.0
            && self.r <= 1.0
            && self.tau1 > 0.0
            && self.tau1 <= 0.5
            && self.tau2 >= 0.5
            && self.tau2 < 1.0
            && self.gamma_armijo > 0.0
            && self.gamma_armijo < 1.0
            && self.beta > 0.0
            && self.beta < 1.0
            && self.eta > 0.0
            && self.lambda_spg_min > 0.0
            && self.lambda_spg_min < self.lambda_spg_max
            && self.sigma_small > 0.0
            && self.sigma_min > 0.0
            && self.sigma_min <= self.sigma_max
            && self.h_lo > 0.0
            && self.h_lo < self.h_hi
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid box options: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "small_gP")]
    SmallGp,
    #[serde(rename = "history_a")]
    HistoryA,
    #[serde(rename = "history_b")]
    HistoryB,
    #[serde(rename = "history_c")]
    HistoryC,
    #[serde(rename = "target_reached")]
    TargetReached,
    #[serde(rename = "iter_limit")]
    IterLimit,
    #[serde(rename = "stalled_best")]
    StalledBest,
}

impl StopReason {
    /// Whether the subproblem met its tolerance (or the objective target).
    pub fn converged(self) -> bool {
        matches!(self, Self::SmallGp | Self::TargetReached)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IterationKind {
    /// Newton step inside the face; `system_order` is the order of the reduced Hessian.
    Newton { free: usize, system_order: usize },
    /// Leaving-face spectral projected gradient step.
    Spg,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoxTrace {
    /// Objective at `x^0, x^1, ..., x^k`.
    pub phi: Vec<f64>,
    /// The iterates matching `phi`.
    pub points: Vec<Vec<f64>>,
    pub kinds: Vec<IterationKind>,
    pub factorizations: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxResult {
    pub x_final: DVector<f64>,
    pub phi_final: f64,
    pub gp_supnorm: f64,
    pub iterations: u64,
    pub stop_reason: StopReason,
    pub sigma_ini_state: Option<f64>,
    /// The starting point was outside the box and got projected.
    pub projected_start: bool,
    pub trace: BoxTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTag {
    AtLower,
    AtUpper,
    Free,
}

/// Which bounds are active at a point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceSignature(pub Vec<FaceTag>);

impl FaceSignature {
    pub fn at(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Self {
        Self(
            x.iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(&v, (&l, &u))| {
                    if v <= l {
                        FaceTag::AtLower
                    } else if v >= u {
                        FaceTag::AtUpper
                    } else {
                        FaceTag::Free
                    }
                })
                .collect(),
        )
    }

    pub fn free_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == FaceTag::Free)
            .map(|(i, _)| i)
            .collect()
    }
}

/// `g_P(x) = P(x - grad) - x`.
pub fn continuous_projected_gradient(
    grad: &DVector<f64>,
    x: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> DVector<f64> {
    projected_gradient(x, grad, lower, upper)
}

/// `g_P` restricted to the free variables of `face`.
pub fn internal_gradient(gp: &DVector<f64>, face: &FaceSignature) -> DVector<f64> {
    DVector::from_iterator(
        gp.len(),
        gp.iter()
            .zip(&face.0)
            .map(|(&v, t)| if *t == FaceTag::Free { v } else { 0.0 }),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonDirection {
    pub d: DVector<f64>,
    pub sigma: f64,
    pub sigma_ini_next: f64,
    pub factorizations: u64,
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Newton direction on the free variables with inertia correction.
///
/// `sigma_ini` is the carried shift seed (`None` before its first use).
pub fn newton_direction(
    hbar: &HessianModel,
    gbar: &DVector<f64>,
    xbar: &DVector<f64>,
    opts: &BoxOptions,
    sigma_ini: Option<f64>,
) -> Result<NewtonDirection> {
    let mut factorizations = 0;
    let mut factor = |sigma: f64| -> Result<(Factorization, bool)> {
        factorizations += 1;
        let fac = factorize(&hbar.shifted_system(sigma))?;
        let pd = fac.inertia() == hbar.positive_definite_inertia();
        Ok((fac, pd))
    };
    let seed = || {
        let h = clamp(hbar.max_abs_diagonal(), opts.h_lo, opts.h_hi);
        clamp(opts.sigma_small * h, opts.sigma_min, opts.sigma_max)
    };
    let rhs = -gbar;

    let (fac, pd) = factor(0.0)?;
    if pd {
        let d = hbar.solve(&fac, &rhs)?;
        let base = sigma_ini.unwrap_or_else(seed);
        return Ok(NewtonDirection {
            d,
            sigma: 0.0,
            sigma_ini_next: clamp(0.5 * base, opts.sigma_min, opts.sigma_max),
            factorizations,
        });
    }

    let limit = opts.sigma_max * SIGMA_BREAKDOWN_FACTOR;
    let mut sigma = sigma_ini.unwrap_or_else(seed);
    let mut fac = loop {
        let (fac, pd) = factor(sigma)?;
        if pd {
            break fac;
        }
        sigma *= 10.0;
        if sigma > limit {
            return Err(Error::NumericalBreakdown(format!(
                "inertia correction exceeded shift {limit:e}"
            )));
        }
    };
    let mut d = hbar.solve(&fac, &rhs)?;
    let cap = opts.eta * xbar.norm().max(1.0);
    while d.norm() > cap {
        sigma *= 10.0;
        if sigma > limit {
            return Err(Error::NumericalBreakdown(format!(
                "step-length shifting exceeded shift {limit:e}"
            )));
        }
        fac = factor(sigma)?.0;
        d = hbar.solve(&fac, &rhs)?;
    }
    Ok(NewtonDirection {
        d,
        sigma,
        sigma_ini_next: clamp(0.5 * sigma, opts.sigma_min, opts.sigma_max),
        factorizations,
    })
}

/// Quadratic interpolation step with the `[tau1 t, tau2 t]` safeguard.
pub fn safeguarded_quadratic_step(phi_x: f64, phi_trial: f64, slope: f64, t: f64, tau1: f64, tau2: f64) -> f64 {
    let denom = 2.0 * (phi_trial - phi_x - t * slope);
    if denom == 0.0 || !denom.is_finite() {
        return 0.5 * t;
    }
    let t_temp = -slope * t * t / denom;
    if t_temp >= tau1 * t && t_temp <= tau2 * t {
        t_temp
    } else {
        0.5 * t
    }
}

/// Best point among all objective evaluations of one iteration.
#[derive(Debug, Default)]
struct Trials {
    best: Option<(DVector<f64>, f64)>,
}

impl Trials {
    fn record(&mut self, x: &DVector<f64>, phi: f64) {
        match &self.best {
            Some((_, b)) if *b <= phi => {}
            _ => self.best = Some((x.clone(), phi)),
        }
    }
}

/// Evaluates and logs a trial point.
fn trial_value<P: BoxProblem + ?Sized>(problem: &P, x: &DVector<f64>, trials: &mut Trials) -> Result<f64> {
    let v = problem.value(x)?;
    trials.record(x, v);
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchOutcome {
    /// `P(x + d)` gave simple decrease; continue with extrapolation.
    ProjectedAccept,
    /// Armijo point accepted at the full or boundary step; continue with extrapolation.
    GotoExtrapolation,
    /// Armijo point accepted after backtracking.
    GotoNextIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchResult {
    pub x_next: DVector<f64>,
    pub phi_next: f64,
    pub t: f64,
    pub outcome: LineSearchOutcome,
}

/// Largest `alpha` with `x + alpha d` inside the box, and the blocking index.
fn max_feasible_step(x: &DVector<f64>, d: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> (f64, Option<usize>) {
    let mut best = (f64::INFINITY, None);
    for i in 0..x.len() {
        let a = if d[i] < 0.0 {
            (lower[i] - x[i]) / d[i]
        } else if d[i] > 0.0 {
            (upper[i] - x[i]) / d[i]
        } else {
            continue;
        };
        if a < best.0 {
            best = (a, Some(i));
        }
    }
    best
}

/// Armijo backtracking from step `t`, shared by the Newton and SPG iterations.
#[allow(clippy::too_many_arguments)]
fn backtrack<P: BoxProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    phi_x: f64,
    slope: f64,
    d: &DVector<f64>,
    mut t: f64,
    mut x_trial: DVector<f64>,
    opts: &BoxOptions,
    trials: &mut Trials,
) -> Result<(f64, DVector<f64>, f64)> {
    let mut phi_trial = trial_value(problem, &x_trial, trials)?;
    while phi_trial > opts.phi_target && phi_trial > phi_x + t * opts.gamma_armijo * slope {
        t = safeguarded_quadratic_step(phi_x, phi_trial, slope, t, opts.tau1, opts.tau2);
        if t < LINE_SEARCH_FLOOR {
            return Err(Error::LineSearch {
                floor: LINE_SEARCH_FLOOR,
            });
        }
        x_trial = project_box(&(x + d * t), problem.lower(), problem.upper());
        phi_trial = trial_value(problem, &x_trial, trials)?;
    }
    Ok((t, x_trial, phi_trial))
}

/// Line search along a Newton direction, with the projected full step tried
/// first when `x + d` leaves the box.
pub fn line_search_projected<P: BoxProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    phi_x: f64,
    grad_x: &DVector<f64>,
    d: &DVector<f64>,
    opts: &BoxOptions,
) -> Result<LineSearchResult> {
    line_search_logged(problem, x, phi_x, grad_x, d, opts, &mut Trials::default())
}

fn line_search_logged<P: BoxProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    phi_x: f64,
    grad_x: &DVector<f64>,
    d: &DVector<f64>,
    opts: &BoxOptions,
    trials: &mut Trials,
) -> Result<LineSearchResult> {
    let (lower, upper) = (problem.lower(), problem.upper());
    let slope = grad_x.dot(d);
    if !(slope < 0.0) {
        return Err(Error::LineSearch {
            floor: LINE_SEARCH_FLOOR,
        });
    }
    let (alpha_max, blocking) = max_feasible_step(x, d, lower, upper);

    if alpha_max < 1.0 {
        let x_trial = project_box(&(x + d), lower, upper);
        let phi_trial = trial_value(problem, &x_trial, trials)?;
        if phi_trial <= opts.phi_target || phi_trial <= phi_x {
            return Ok(LineSearchResult {
                x_next: x_trial,
                phi_next: phi_trial,
                t: 1.0,
                outcome: LineSearchOutcome::ProjectedAccept,
            });
        }
    }

    let t0 = alpha_max.min(1.0);
    let mut start = x + d * t0;
    if alpha_max <= 1.0 {
        if let Some(i) = blocking {
            start[i] = if d[i] < 0.0 { lower[i] } else { upper[i] };
        }
    }
    let start = project_box(&start, lower, upper);
    let (t, x_trial, phi_trial) = backtrack(problem, x, phi_x, slope, d, t0, start, opts, trials)?;

    let extrapolate = t == alpha_max
        || (t == 1.0 && problem.gradient(&x_trial)?.dot(d) > opts.beta * slope);
    Ok(LineSearchResult {
        x_next: x_trial,
        phi_next: phi_trial,
        t,
        outcome: if extrapolate {
            LineSearchOutcome::GotoExtrapolation
        } else {
            LineSearchOutcome::GotoNextIter
        },
    })
}

/// Doubles the accepted step (through projections) while the objective keeps decreasing.
pub fn extrapolate<P: BoxProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    x_trial: &DVector<f64>,
    phi_trial: f64,
    opts: &BoxOptions,
) -> Result<(DVector<f64>, f64)> {
    extrapolate_logged(problem, x, x_trial, phi_trial, opts, &mut Trials::default())
}

fn extrapolate_logged<P: BoxProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    x_trial: &DVector<f64>,
    phi_trial: f64,
    opts: &BoxOptions,
    trials: &mut Trials,
) -> Result<(DVector<f64>, f64)> {
    let (lower, upper) = (problem.lower(), problem.upper());
    let step = x_trial - x;
    let point = |t: u32| project_box(&(x + &step * 2f64.powi(t as i32)), lower, upper);
    let mut t = 1u32;
    let mut x_ref = x_trial.clone();
    let mut phi_ref = phi_trial;
    while t <= opts.t_ext_max && phi_ref > opts.phi_target {
        let x_ext = point(t);
        if x_ext == x_ref {
            break;
        }
        let phi_ext = trial_value(problem, &x_ext, trials)?;
        if !(phi_ext < phi_ref) {
            break;
        }
        t += 1;
        x_ref = x_ext;
        phi_ref = phi_ext;
    }
    Ok((x_ref, phi_ref))
}

/// Spectral steplength, clamped into `[lambda_spg_min, lambda_spg_max]`.
///
/// `history` is `(x^k - x^{k-1}, grad^k - grad^{k-1})` when a previous iterate exists.
pub fn spectral_steplength(
    x: &DVector<f64>,
    gp: &DVector<f64>,
    history: Option<(&DVector<f64>, &DVector<f64>)>,
    opts: &BoxOptions,
) -> f64 {
    let raw = match history {
        Some((dx, dg)) if dx.dot(dg) > 0.0 => dx.norm_squared() / dx.dot(dg),
        _ => (x.norm() / gp.norm()).max(1.0),
    };
    clamp(raw, opts.lambda_spg_min, opts.lambda_spg_max)
}

/// Leaving-face SPG iteration. `prev` holds the previous iterate and its gradient.
pub fn spg_step<P: BoxProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    phi_x: f64,
    grad_x: &DVector<f64>,
    prev: Option<(&DVector<f64>, &DVector<f64>)>,
    opts: &BoxOptions,
) -> Result<(DVector<f64>, f64)> {
    spg_logged(problem, x, phi_x, grad_x, prev, opts, &mut Trials::default())
}

fn spg_logged<P: BoxProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    phi_x: f64,
    grad_x: &DVector<f64>,
    prev: Option<(&DVector<f64>, &DVector<f64>)>,
    opts: &BoxOptions,
    trials: &mut Trials,
) -> Result<(DVector<f64>, f64)> {
    let (lower, upper) = (problem.lower(), problem.upper());
    let gp = projected_gradient(x, grad_x, lower, upper);
    if gp.iter().all(|&v| v == 0.0) {
        return Err(Error::Contract("spg_step called at a stationary point".into()));
    }
    let diffs = prev.map(|(xp, gp_prev)| (x - xp, grad_x - gp_prev));
    let lambda = spectral_steplength(x, &gp, diffs.as_ref().map(|(a, b)| (a, b)), opts);
    let x_trial = project_box(&(x - grad_x * lambda), lower, upper);
    let d = &x_trial - x;
    let slope = grad_x.dot(&d);
    let (_, x_next, phi_next) = backtrack(problem, x, phi_x, slope, &d, 1.0, x_trial, opts, trials)?;
    Ok((x_next, phi_next))
}

enum Step {
    Newton { free: usize, system_order: usize },
    Spg,
}

struct State {
    x: DVector<f64>,
    phi: f64,
    grad: DVector<f64>,
    gp: DVector<f64>,
}

fn evaluate<P: BoxProblem + ?Sized>(problem: &P, x: DVector<f64>, phi: f64) -> Result<State> {
    let grad = problem.gradient(&x)?;
    let gp = projected_gradient(&x, &grad, problem.lower(), problem.upper());
    Ok(State { x, phi, grad, gp })
}

/// Minimizes `problem` over its box starting from `x0`.
pub fn minimize_box<P: BoxProblem + ?Sized>(problem: &P, x0: &DVector<f64>, opts: &BoxOptions) -> Result<BoxResult> {
    opts.validate()?;
    let (lower, upper) = (problem.lower().clone(), problem.upper().clone());
    if x0.len() != lower.len() {
        return Err(Error::Contract("minimize_box: starting point has wrong dimension".into()));
    }
    let start = project_box(x0, &lower, &upper);
    let projected_start = &start != x0;

    let phi0 = problem.value(&start)?;
    let mut state = evaluate(problem, start, phi0)?;
    let mut prev: Option<(DVector<f64>, DVector<f64>)> = None;
    let mut sigma_ini: Option<f64> = None;
    let mut trace = BoxTrace::default();

    let thresholds = [
        opts.epsilon.sqrt(),
        opts.epsilon.powf(0.25),
        opts.epsilon.powf(0.125),
    ];
    let windows = [opts.window_a, opts.window_b, opts.window_c];
    let mut runs = [0u64; 3];
    let mut best_phi = f64::INFINITY;
    let mut k_best = 0u64;
    let mut k = 0u64;

    let stop_reason = loop {
        let gp_norm = sup_norm(&state.gp);
        trace.phi.push(state.phi);
        trace.points.push(state.x.iter().copied().collect());
        for (run, thr) in runs.iter_mut().zip(thresholds) {
            *run = if gp_norm < thr { *run + 1 } else { 0 };
        }
        if state.phi < best_phi {
            best_phi = state.phi;
            k_best = k;
        }

        if gp_norm <= opts.epsilon {
            break StopReason::SmallGp;
        }
        if state.phi <= opts.phi_target {
            break StopReason::TargetReached;
        }
        if runs[0] >= windows[0] {
            break StopReason::HistoryA;
        }
        if runs[1] >= windows[1] {
            break StopReason::HistoryB;
        }
        if runs[2] >= windows[2] {
            break StopReason::HistoryC;
        }
        if k >= opts.k_max {
            break StopReason::IterLimit;
        }
        if k - k_best > opts.stall_window {
            break StopReason::StalledBest;
        }

        let face = FaceSignature::at(&state.x, &lower, &upper);
        let gi = internal_gradient(&state.gp, &face);
        let mut trials = Trials::default();

        let attempt: Result<(DVector<f64>, f64, Step)> = (|| {
            if sup_norm(&gi) >= opts.r * gp_norm {
                let free = face.free_indices();
                let model = problem.hessian(&state.x)?.reduce(&free);
                let gbar = DVector::from_iterator(free.len(), free.iter().map(|&i| state.grad[i]));
                let xbar = DVector::from_iterator(free.len(), free.iter().map(|&i| state.x[i]));
                match newton_direction(&model, &gbar, &xbar, opts, sigma_ini) {
                    Ok(nd) => {
                        trace.factorizations += nd.factorizations;
                        sigma_ini = Some(nd.sigma_ini_next);
                        let mut d = DVector::zeros(state.x.len());
                        for (pos, &i) in free.iter().enumerate() {
                            d[i] = nd.d[pos];
                        }
                        let ls = line_search_logged(problem, &state.x, state.phi, &state.grad, &d, opts, &mut trials)?;
                        let (x_next, phi_next) = match ls.outcome {
                            LineSearchOutcome::GotoNextIter => (ls.x_next, ls.phi_next),
                            _ => extrapolate_logged(problem, &state.x, &ls.x_next, ls.phi_next, opts, &mut trials)?,
                        };
                        return Ok((
                            x_next,
                            phi_next,
                            Step::Newton {
                                free: free.len(),
                                system_order: model.order(),
                            },
                        ));
                    }
                    // Degenerate curvature: leave through a gradient step instead.
                    Err(Error::NumericalBreakdown(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            let history = prev.as_ref().map(|(a, b)| (a, b));
            let (x_next, phi_next) = spg_logged(problem, &state.x, state.phi, &state.grad, history, opts, &mut trials)?;
            Ok((x_next, phi_next, Step::Spg))
        })();

        let (mut x_next, mut phi_next, failed) = match attempt {
            Ok((x, phi, step)) => {
                trace.kinds.push(match step {
                    Step::Newton { free, system_order } => IterationKind::Newton { free, system_order },
                    Step::Spg => IterationKind::Spg,
                });
                (x, phi, false)
            }
            Err(Error::LineSearch { .. }) => (state.x.clone(), state.phi, true),
            Err(e) => return Err(e),
        };
        if let Some((xb, pb)) = trials.best.take() {
            if pb < phi_next {
                x_next = xb;
                phi_next = pb;
            }
        }
        if failed {
            let moved = phi_next < state.phi;
            if moved {
                state = evaluate(problem, x_next, phi_next)?;
                k += 1;
                trace.phi.push(state.phi);
                trace.points.push(state.x.iter().copied().collect());
            }
            break StopReason::StalledBest;
        }

        let next = evaluate(problem, x_next, phi_next)?;
        let old = std::mem::replace(&mut state, next);
        prev = Some((old.x, old.grad));
        k += 1;
    };

    Ok(BoxResult {
        gp_supnorm: sup_norm(&state.gp),
        x_final: state.x,
        phi_final: state.phi,
        iterations: k,
        stop_reason,
        sigma_ini_state: sigma_ini,
        projected_start,
        trace,
    })
}
