//! Random convex box-constrained quadratics and an exact brute-force solver.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::problem::ProblemSpec;

/// `min 0.5 x'Qx + c'x` subject to `lower <= x <= upper`, with `Q` positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxQp {
    /// `Q = A'A + 0.1 I` with uniform entries; box around the origin.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let q = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
        let lower = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..-0.2));
        let upper = DVector::from_fn(n, |_, _| rng.gen_range(0.2..1.5));
        Self { q, c, lower, upper }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }

    pub fn to_spec(&self) -> ProblemSpec {
        let (qf, cf) = (self.q.clone(), self.c.clone());
        let (qg, cg) = (self.q.clone(), self.c.clone());
        let qh = self.q.clone();
        ProblemSpec::new(self.lower.iter().copied().collect(), self.upper.iter().copied().collect())
            .expect("random box is ordered")
            .with_objective(
                move |x: &DVector<f64>| 0.5 * x.dot(&(&qf * x)) + cf.dot(x),
                move |x: &DVector<f64>| &qg * x + &cg,
                move |_: &DVector<f64>| qh.clone(),
            )
    }

    /// Global minimizer found by enumerating all `3^n` assignments of each
    /// variable to {lower, free, upper} and keeping the KKT-consistent one
    /// with the lowest value.
    pub fn brute_force(&self) -> (DVector<f64>, f64) {
        let n = self.n();
        let tol = 1e-10;
        let mut best: Option<(DVector<f64>, f64)> = None;
        let total = 3usize.pow(n as u32);
        for code in 0..total {
            let mut pattern = vec![0u8; n];
            let mut c = code;
            for slot in pattern.iter_mut() {
                *slot = (c % 3) as u8;
                c /= 3;
            }
            let Some(x) = self.solve_pattern(&pattern) else { continue };
            let ok_box = (0..n).all(|i| x[i] >= self.lower[i] - tol && x[i] <= self.upper[i] + tol);
            if !ok_box {
                continue;
            }
            let g = self.gradient(&x);
            let ok_sign = (0..n).all(|i| match pattern[i] {
                0 => g[i] >= -1e-9,
                2 => g[i] <= 1e-9,
                _ => true,
            });
            if !ok_sign {
                continue;
            }
            let x = DVector::from_fn(n, |i, _| x[i].clamp(self.lower[i], self.upper[i]));
            let f = self.value(&x);
            if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
                best = Some((x, f));
            }
        }
        best.expect("a convex box QP always has a KKT point")
    }

    /// 0 = at lower, 1 = free, 2 = at upper.
    fn solve_pattern(&self, pattern: &[u8]) -> Option<DVector<f64>> {
        let n = self.n();
        let mut x = DVector::zeros(n);
        let free: Vec<usize> = (0..n).filter(|&i| pattern[i] == 1).collect();
        for i in 0..n {
            match pattern[i] {
                0 => x[i] = self.lower[i],
                2 => x[i] = self.upper[i],
                _ => {}
            }
        }
        if free.is_empty() {
            return Some(x);
        }
        let qff = DMatrix::from_fn(free.len(), free.len(), |a, b| self.q[(free[a], free[b])]);
        let rhs = DVector::from_fn(free.len(), |a, _| {
            let i = free[a];
            -self.c[i] - (0..n).filter(|&j| pattern[j] != 1).map(|j| self.q[(i, j)] * x[j]).sum::<f64>()
        });
        let sol = qff.cholesky()?.solve(&rhs);
        for (a, &i) in free.iter().enumerate() {
            x[i] = sol[a];
        }
        Some(x)
    }
}
