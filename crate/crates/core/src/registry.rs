//! Built-in test problems with starting points and, where available, exact solutions.

use std::fmt;
use std::sync::Arc;

use nalgebra::{dvector, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::accel::{kkt_residual, KktPoint};
use crate::error::Result;
use crate::problem::{Evaluator, ProblemSpec};
use crate::qp_oracle::BoxQp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Unconstrained,
    Bound,
    Feasibility,
    Nlp,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Where the values come from.
    pub note: String,
}

#[derive(Clone)]
pub struct RegistryEntry {
    pub name: String,
    pub category: Category,
    pub x0: Vec<f64>,
    pub known: Option<KnownSolution>,
    builder: Arc<dyn Fn() -> ProblemSpec + Send + Sync>,
}

impl fmt::Debug for RegistryEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RegistryEntry")
            .field("name", &self.name)
            .field("category", &self.category)
            .field("x0", &self.x0)
            .field("known", &self.known)
            .finish_non_exhaustive()
    }
}

impl RegistryEntry {
    fn new(
        name: &str,
        category: Category,
        x0: Vec<f64>,
        known: Option<KnownSolution>,
        builder: impl Fn() -> ProblemSpec + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.to_string(),
            category,
            x0,
            known,
            builder: Arc::new(builder),
        }
    }

    pub fn spec(&self) -> ProblemSpec {
        (self.builder)()
    }

    /// Sup-norm of the KKT residual at the known solution, if there is one.
    pub fn validate(&self) -> Result<Option<f64>> {
        let Some(k) = &self.known else { return Ok(None) };
        let spec = self.spec();
        let eval = Evaluator::new(&spec);
        let pt = KktPoint::with_bound_multipliers(&eval, k.x.clone(), k.lambda.clone(), k.mu.clone())?;
        Ok(Some(kkt_residual(&eval, &pt)?.amax()))
    }
}

fn known(x: &[f64], objective: f64, lambda: &[f64], mu: &[f64], note: &str) -> Option<KnownSolution> {
    Some(KnownSolution {
        x: x.to_vec(),
        objective,
        lambda: lambda.to_vec(),
        mu: mu.to_vec(),
        note: note.to_string(),
    })
}

fn const_matrix(rows: usize, cols: usize, v: &[f64]) -> impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static {
    let m = DMatrix::from_row_slice(rows, cols, v);
    move |_| m.clone()
}

fn zero_hessian(n: usize) -> impl Fn(&DVector<f64>, usize) -> DMatrix<f64> + Send + Sync + 'static {
    move |_, _| DMatrix::zeros(n, n)
}

/// `min x1 + x2` on the circle of radius `sqrt(2)`.
pub fn p1() -> ProblemSpec {
    ProblemSpec::new(vec![-10.0; 2], vec![10.0; 2])
        .expect("valid box")
        .with_objective(|x: &DVector<f64>| x[0] + x[1], |_: &DVector<f64>| dvector![1.0, 1.0], |_: &DVector<f64>| {
            DMatrix::zeros(2, 2)
        })
        .with_equalities(
            1,
            |x: &DVector<f64>| dvector![x.norm_squared() - 2.0],
            |x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]),
            |_: &DVector<f64>, _| DMatrix::identity(2, 2) * 2.0,
        )
}

/// `min (x - 2)^2` subject to `x <= 1`.
pub fn p2() -> ProblemSpec {
    ProblemSpec::new(vec![-10.0], vec![10.0])
        .expect("valid box")
        .with_objective(
            |x: &DVector<f64>| (x[0] - 2.0).powi(2),
            |x: &DVector<f64>| dvector![2.0 * (x[0] - 2.0)],
            |_: &DVector<f64>| DMatrix::from_element(1, 1, 2.0),
        )
        .with_inequalities(1, |x: &DVector<f64>| dvector![x[0] - 1.0], const_matrix(1, 1, &[1.0]), zero_hessian(1))
}

/// Incompatible equalities `x = 0`, `x = 1`; the least-squares point is 0.5.
pub fn p3() -> ProblemSpec {
    ProblemSpec::new(vec![-10.0], vec![10.0]).expect("valid box").with_equalities(
        2,
        |x: &DVector<f64>| dvector![x[0], x[0] - 1.0],
        const_matrix(2, 1, &[1.0, 1.0]),
        zero_hessian(1),
    )
}

/// P1 with its equality listed twice (rank-deficient Jacobian).
pub fn p1_duplicated() -> ProblemSpec {
    ProblemSpec::new(vec![-10.0; 2], vec![10.0; 2])
        .expect("valid box")
        .with_objective(|x: &DVector<f64>| x[0] + x[1], |_: &DVector<f64>| dvector![1.0, 1.0], |_: &DVector<f64>| {
            DMatrix::zeros(2, 2)
        })
        .with_equalities(
            2,
            |x: &DVector<f64>| {
                let c = x.norm_squared() - 2.0;
                dvector![c, c]
            },
            |x: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[2.0 * x[0], 2.0 * x[1], 2.0 * x[0], 2.0 * x[1]]),
            |_: &DVector<f64>, _| DMatrix::identity(2, 2) * 2.0,
        )
}

fn rosenbrock(lower: Vec<f64>, upper: Vec<f64>) -> ProblemSpec {
    ProblemSpec::new(lower, upper).expect("valid box").with_objective(
        |x: &DVector<f64>| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2),
        |x: &DVector<f64>| {
            let r = x[1] - x[0] * x[0];
            dvector![-400.0 * x[0] * r - 2.0 * (1.0 - x[0]), 200.0 * r]
        },
        |x: &DVector<f64>| {
            let h11 = 1200.0 * x[0] * x[0] - 400.0 * x[1] + 2.0;
            let h12 = -400.0 * x[0];
            DMatrix::from_row_slice(2, 2, &[h11, h12, h12, 200.0])
        },
    )
}

/// `min 0.5 ||x - c||^2` with `c` outside the unit box in two coordinates.
pub fn bound_quadratic() -> ProblemSpec {
    let c = dvector![2.0, -3.0, 0.5];
    let (cf, cg) = (c.clone(), c);
    ProblemSpec::new(vec![-1.0; 3], vec![1.0; 3]).expect("valid box").with_objective(
        move |x: &DVector<f64>| 0.5 * (x - &cf).norm_squared(),
        move |x: &DVector<f64>| x - &cg,
        |_: &DVector<f64>| DMatrix::identity(3, 3),
    )
}

/// Two crossing lines; feasibility only.
pub fn feasibility_lines() -> ProblemSpec {
    ProblemSpec::new(vec![-5.0; 2], vec![5.0; 2]).expect("valid box").with_equalities(
        2,
        |x: &DVector<f64>| dvector![x[0] + x[1] - 1.0, x[0] - x[1]],
        const_matrix(2, 2, &[1.0, 1.0, 1.0, -1.0]),
        zero_hessian(2),
    )
}

/// Distance from (2, 2) to the disk of radius `sqrt(2)`.
pub fn disk() -> ProblemSpec {
    ProblemSpec::new(vec![-5.0; 2], vec![5.0; 2])
        .expect("valid box")
        .with_objective(
            |x: &DVector<f64>| (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2),
            |x: &DVector<f64>| dvector![2.0 * (x[0] - 2.0), 2.0 * (x[1] - 2.0)],
            |_: &DVector<f64>| DMatrix::identity(2, 2) * 2.0,
        )
        .with_inequalities(
            1,
            |x: &DVector<f64>| dvector![x.norm_squared() - 2.0],
            |x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]),
            |_: &DVector<f64>, _| DMatrix::identity(2, 2) * 2.0,
        )
}

/// `min (1 - x1)^2` subject to `10 (x2 - x1^2) = 0`.
pub fn parabola_equality() -> ProblemSpec {
    ProblemSpec::new(vec![-10.0; 2], vec![10.0; 2])
        .expect("valid box")
        .with_objective(
            |x: &DVector<f64>| (1.0 - x[0]).powi(2),
            |x: &DVector<f64>| dvector![-2.0 * (1.0 - x[0]), 0.0],
            |_: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]),
        )
        .with_equalities(
            1,
            |x: &DVector<f64>| dvector![10.0 * (x[1] - x[0] * x[0])],
            |x: &DVector<f64>| DMatrix::from_row_slice(1, 2, &[-20.0 * x[0], 10.0]),
            |_: &DVector<f64>, _| DMatrix::from_row_slice(2, 2, &[-20.0, 0.0, 0.0, 0.0]),
        )
}

/// The four-variable test with a product inequality and a sphere equality.
pub fn hs071() -> ProblemSpec {
    ProblemSpec::new(vec![1.0; 4], vec![5.0; 4])
        .expect("valid box")
        .with_objective(
            |x: &DVector<f64>| x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2],
            |x: &DVector<f64>| {
                let s = x[0] + x[1] + x[2];
                dvector![x[3] * (x[0] + s), x[0] * x[3], x[0] * x[3] + 1.0, x[0] * s]
            },
            |x: &DVector<f64>| {
                let d = 2.0 * x[0] + x[1] + x[2];
                #[rustfmt::skip]
                let v = [
                    2.0 * x[3], x[3], x[3], d,
                    x[3], 0.0, 0.0, x[0],
                    x[3], 0.0, 0.0, x[0],
                    d, x[0], x[0], 0.0,
                ];
                DMatrix::from_row_slice(4, 4, &v)
            },
        )
        .with_equalities(
            1,
            |x: &DVector<f64>| dvector![x.norm_squared() - 40.0],
            |x: &DVector<f64>| DMatrix::from_row_slice(1, 4, &[2.0 * x[0], 2.0 * x[1], 2.0 * x[2], 2.0 * x[3]]),
            |_: &DVector<f64>, _| DMatrix::identity(4, 4) * 2.0,
        )
        .with_inequalities(
            1,
            |x: &DVector<f64>| dvector![25.0 - x[0] * x[1] * x[2] * x[3]],
            |x: &DVector<f64>| {
                DMatrix::from_row_slice(
                    1,
                    4,
                    &[-x[1] * x[2] * x[3], -x[0] * x[2] * x[3], -x[0] * x[1] * x[3], -x[0] * x[1] * x[2]],
                )
            },
            |x: &DVector<f64>, _| {
                #[rustfmt::skip]
                let v = [
                    0.0, x[2] * x[3], x[1] * x[3], x[1] * x[2],
                    x[2] * x[3], 0.0, x[0] * x[3], x[0] * x[2],
                    x[1] * x[3], x[0] * x[3], 0.0, x[0] * x[1],
                    x[1] * x[2], x[0] * x[2], x[0] * x[1], 0.0,
                ];
                -DMatrix::from_row_slice(4, 4, &v)
            },
        )
}

/// Sizes of the random box QPs.
pub const QP_SIZES: [usize; 5] = [3, 4, 5, 6, 8];

/// The `index`-th random box QP for a given seed.
pub fn random_qp(seed: u64, index: usize) -> BoxQp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(1000).wrapping_add(index as u64));
    BoxQp::random(QP_SIZES[index % QP_SIZES.len()], &mut rng)
}

/// All built-in problems; `seed` drives the random QPs.
pub fn registry(seed: u64) -> Vec<RegistryEntry> {
    use Category::*;
    let mut out = vec![
        RegistryEntry::new("P1", Nlp, vec![0.5, 0.2], known(&[-1.0, -1.0], -2.0, &[0.5], &[], "analytic"), p1),
        RegistryEntry::new("P2", Nlp, vec![0.0], known(&[1.0], 1.0, &[], &[2.0], "analytic"), p2),
        RegistryEntry::new("P3", Infeasible, vec![5.0], None, p3),
        RegistryEntry::new(
            "P1_duplicated",
            Nlp,
            vec![0.5, 0.2],
            known(&[-1.0, -1.0], -2.0, &[0.25, 0.25], &[], "analytic; multipliers not unique"),
            p1_duplicated,
        ),
        RegistryEntry::new(
            "bound_quadratic",
            Bound,
            vec![0.0; 3],
            known(&[1.0, -1.0, 0.5], 2.5, &[], &[], "projection of the center onto the box"),
            bound_quadratic,
        ),
        RegistryEntry::new(
            "rosenbrock_box",
            Bound,
            vec![-1.2, 1.0],
            known(&[0.5, 0.25], 0.25, &[], &[], "analytic; upper bound on x1 active"),
            || rosenbrock(vec![-2.0, -2.0], vec![0.5, 2.0]),
        ),
        RegistryEntry::new(
            "rosenbrock",
            Unconstrained,
            vec![-1.2, 1.0],
            known(&[1.0, 1.0], 0.0, &[], &[], "analytic"),
            || rosenbrock(vec![-10.0, -10.0], vec![10.0, 10.0]),
        ),
        RegistryEntry::new(
            "feasibility_lines",
            Feasibility,
            vec![3.0, -2.0],
            known(&[0.5, 0.5], 0.0, &[0.0, 0.0], &[], "unique feasible point"),
            feasibility_lines,
        ),
        RegistryEntry::new("disk", Nlp, vec![0.0, 0.0], known(&[1.0, 1.0], 2.0, &[], &[1.0], "analytic"), disk),
        RegistryEntry::new(
            "parabola_equality",
            Nlp,
            vec![-1.2, 1.0],
            known(&[1.0, 1.0], 0.0, &[0.0], &[], "analytic"),
            parabola_equality,
        ),
        RegistryEntry::new("hs071", Nlp, vec![1.0, 5.0, 5.0, 1.0], None, hs071),
    ];
    for i in 0..QP_SIZES.len() {
        let qp = random_qp(seed, i);
        let (x, f) = qp.brute_force();
        out.push(RegistryEntry::new(
            &format!("qp_{i}"),
            Bound,
            vec![0.0; qp.n()],
            known(x.as_slice(), f, &[], &[], "active-set enumeration"),
            move || qp.to_spec(),
        ));
    }
    out
}

pub fn find(name: &str, seed: u64) -> Option<RegistryEntry> {
    registry(seed).into_iter().find(|e| e.name == name)
}
