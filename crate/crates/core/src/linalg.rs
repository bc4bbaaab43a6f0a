//! Dense symmetric indefinite factorization with inertia.
//!
//! `P^T M P = L D L^T` with unit lower-triangular `L` and block-diagonal `D`
//! (1x1 and 2x2 blocks), using Bunch-Kaufman partial pivoting. The inertia
//! is read off the blocks of `D`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which a pivot eigenvalue counts as zero.
pub const ZERO_PIVOT_TOL: f64 = 1e-12;

/// Bunch-Kaufman pivot growth constant, (1 + sqrt(17)) / 8.
const BK_ALPHA: f64 = 0.640_388_203_202_208_4;

/// Symmetric matrix. Stored densely; symmetry holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        Self {
            data: DMatrix::zeros(order, order),
        }
    }

    pub fn identity(order: usize) -> Self {
        Self {
            data: DMatrix::identity(order, order),
        }
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        Self {
            data: DMatrix::from_diagonal(&DVector::from_column_slice(d)),
        }
    }

    /// Builds from the lower triangle of `m`; the strict upper triangle is ignored.
    pub fn from_lower(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix::from_lower: matrix must be square");
        let n = m.nrows();
        let mut data = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                data[(i, j)] = m[(i, j)];
                data[(j, i)] = m[(i, j)];
            }
        }
        Self { data }
    }

    /// Averages `m` with its transpose.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix::symmetrize: matrix must be square");
        Self {
            data: (m + m.transpose()) * 0.5,
        }
    }

    pub fn order(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    /// Adds `v` to entries (i, j) and (j, i) (once on the diagonal).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[(i, j)] += v;
        if i != j {
            self.data[(j, i)] += v;
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[(i, j)] = v;
        self.data[(j, i)] = v;
    }

    /// `self += alpha * v v^T`.
    pub fn add_outer(&mut self, alpha: f64, v: &DVector<f64>) {
        self.data.ger(alpha, v, v, 1.0);
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, alpha: f64, other: &DMatrix<f64>) {
        assert_eq!(other.shape(), self.data.shape());
        for j in 0..self.order() {
            for i in j..self.order() {
                let v = 0.5 * (other[(i, j)] + other[(j, i)]) * alpha;
                self.data[(i, j)] += v;
                if i != j {
                    self.data[(j, i)] += v;
                }
            }
        }
    }

    pub fn shifted(&self, sigma: f64) -> Self {
        let mut out = self.clone();
        for i in 0..self.order() {
            out.data[(i, i)] += sigma;
        }
        out
    }

    /// Principal submatrix on `idx`.
    pub fn select(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        Self {
            data: DMatrix::from_fn(k, k, |i, j| self.data[(idx[i], idx[j])]),
        }
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        self.data.diagonal().iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.data * v
    }
}

/// Counts of positive, negative and zero eigenvalues.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone, Copy)]
enum Pivot {
    One(f64),
    Two([f64; 3]),
}

/// Result of [`factorize`].
#[derive(Debug, Clone)]
pub struct Factorization {
    order: usize,
    perm: Vec<usize>,
    l: DMatrix<f64>,
    // pivot blocks in order; a Two occupies two consecutive positions
    blocks: Vec<Pivot>,
    inertia: Inertia,
}

fn classify(v: f64, tol: f64, inertia: &mut Inertia) {
    if v.abs() <= tol {
        inertia.zero += 1;
    } else if v > 0.0 {
        inertia.positive += 1;
    } else {
        inertia.negative += 1;
    }
}

fn swap_symmetric(a: &mut DMatrix<f64>, p: usize, q: usize) {
    if p != q {
        a.swap_rows(p, q);
        a.swap_columns(p, q);
    }
}

/// Symmetric indefinite factorization with Bunch-Kaufman pivoting.
pub fn factorize(m: &SymMatrix) -> Result<Factorization> {
    let n = m.order();
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("factorize: non-finite matrix entry".into()));
    }
    let scale = m.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = ZERO_PIVOT_TOL * scale;

    let mut a = m.data.clone();
    let mut l = DMatrix::<f64>::identity(n, n);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut blocks = Vec::with_capacity(n);
    let mut inertia = Inertia {
        positive: 0,
        negative: 0,
        zero: 0,
    };

    let mut k = 0;
    while k < n {
        let absakk = a[(k, k)].abs();
        let (imax, colmax) = ((k + 1)..n).fold((k, 0.0f64), |(im, cm), i| {
            let v = a[(i, k)].abs();
            if v > cm {
                (i, v)
            } else {
                (im, cm)
            }
        });

        if absakk.max(colmax) == 0.0 {
            // Column is identically zero: 1x1 zero pivot, nothing to eliminate.
            classify(0.0, tol, &mut inertia);
            blocks.push(Pivot::One(0.0));
            k += 1;
            continue;
        }

        let (kp, kstep) = if absakk >= BK_ALPHA * colmax {
            (k, 1)
        } else {
            let rowmax = (k..n)
                .filter(|&j| j != imax)
                .fold(0.0f64, |acc, j| acc.max(a[(imax, j)].abs()));
            if absakk * rowmax >= BK_ALPHA * colmax * colmax {
                (k, 1)
            } else if a[(imax, imax)].abs() >= BK_ALPHA * rowmax {
                (imax, 1)
            } else {
                (imax, 2)
            }
        };

        let kk = k + kstep - 1;
        if kp != kk {
            swap_symmetric(&mut a, kk, kp);
            perm.swap(kk, kp);
            for c in 0..k {
                l.swap((kk, c), (kp, c));
            }
        }

        if kstep == 1 {
            let d = a[(k, k)];
            classify(d, tol, &mut inertia);
            blocks.push(Pivot::One(d));
            if d != 0.0 {
                for i in (k + 1)..n {
                    l[(i, k)] = a[(i, k)] / d;
                }
                for j in (k + 1)..n {
                    let ljd = l[(j, k)] * d;
                    if ljd == 0.0 {
                        continue;
                    }
                    for i in j..n {
                        a[(i, j)] -= l[(i, k)] * ljd;
                        a[(j, i)] = a[(i, j)];
                    }
                }
            }
        } else {
            let d11 = a[(k, k)];
            let d21 = a[(k + 1, k)];
            let d22 = a[(k + 1, k + 1)];
            // eigenvalues of the 2x2 block
            let mean = 0.5 * (d11 + d22);
            let rad = (0.25 * (d11 - d22).powi(2) + d21 * d21).sqrt();
            classify(mean + rad, tol, &mut inertia);
            classify(mean - rad, tol, &mut inertia);
            blocks.push(Pivot::Two([d11, d21, d22]));

            let det = d11 * d22 - d21 * d21;
            for i in (k + 2)..n {
                let (ai1, ai2) = (a[(i, k)], a[(i, k + 1)]);
                l[(i, k)] = (ai1 * d22 - ai2 * d21) / det;
                l[(i, k + 1)] = (ai2 * d11 - ai1 * d21) / det;
            }
            for j in (k + 2)..n {
                let (aj1, aj2) = (a[(j, k)], a[(j, k + 1)]);
                for i in j..n {
                    a[(i, j)] -= l[(i, k)] * aj1 + l[(i, k + 1)] * aj2;
                    a[(j, i)] = a[(i, j)];
                }
            }
        }
        k += kstep;
    }

    Ok(Factorization {
        order: n,
        perm,
        l,
        blocks,
        inertia,
    })
}

impl Factorization {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    pub fn is_positive_definite(&self) -> bool {
        self.inertia.positive == self.order
    }

    /// Solves `M x = b`. Fails when the factorization has zero pivots.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if self.inertia.zero > 0 {
            return Err(Error::Singular {
                positive: self.inertia.positive,
                negative: self.inertia.negative,
                zero: self.inertia.zero,
            });
        }
        if b.len() != self.order {
            return Err(Error::Contract("solve: right-hand side has wrong length".into()));
        }
        let n = self.order;
        let mut y = DVector::from_iterator(n, self.perm.iter().map(|&p| b[p]));
        // L y = b
        for j in 0..n {
            let yj = y[j];
            if yj != 0.0 {
                for i in (j + 1)..n {
                    y[i] -= self.l[(i, j)] * yj;
                }
            }
        }
        // D z = y
        let mut k = 0;
        for block in &self.blocks {
            match *block {
                Pivot::One(d) => {
                    y[k] /= d;
                    k += 1;
                }
                Pivot::Two([d11, d21, d22]) => {
                    let det = d11 * d22 - d21 * d21;
                    let (y1, y2) = (y[k], y[k + 1]);
                    y[k] = (d22 * y1 - d21 * y2) / det;
                    y[k + 1] = (d11 * y2 - d21 * y1) / det;
                    k += 2;
                }
            }
        }
        // L^T w = z
        for j in (0..n).rev() {
            let mut s = y[j];
            for i in (j + 1)..n {
                s -= self.l[(i, j)] * y[i];
            }
            y[j] = s;
        }
        let mut x = DVector::zeros(n);
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        Ok(x)
    }
}

pub fn solve_factored(f: &Factorization, b: &DVector<f64>) -> Result<DVector<f64>> {
    f.solve(b)
}

pub fn is_positive_definite(f: &Factorization) -> bool {
    f.is_positive_definite()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, SymmetricEigen};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eigen_inertia(m: &DMatrix<f64>, tol: f64) -> Inertia {
        let eig = SymmetricEigen::new(m.clone());
        let mut out = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for &v in eig.eigenvalues.iter() {
            classify(v, tol, &mut out);
        }
        out
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> SymMatrix {
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        SymMatrix::symmetrize(&raw)
    }

    #[test]
    fn identity_and_diagonal_inertia() {
        let f = factorize(&SymMatrix::identity(3)).unwrap();
        assert_eq!(f.inertia(), Inertia { positive: 3, negative: 0, zero: 0 });
        assert!(f.is_positive_definite());

        let f = factorize(&SymMatrix::from_diagonal(&[1.0, -1.0])).unwrap();
        assert_eq!(f.inertia(), Inertia { positive: 1, negative: 1, zero: 0 });

        let f = factorize(&SymMatrix::from_diagonal(&[1.0, 0.0])).unwrap();
        assert_eq!(f.inertia().zero, 1);
        assert!(!is_positive_definite(&f));
        assert!(matches!(f.solve(&dvector![1.0, 1.0]), Err(Error::Singular { .. })));
    }

    #[test]
    fn diagonal_and_identity_solves() {
        let f = factorize(&SymMatrix::identity(3)).unwrap();
        assert_eq!(f.solve(&dvector![1.0, 2.0, 3.0]).unwrap(), dvector![1.0, 2.0, 3.0]);
        let f = factorize(&SymMatrix::from_diagonal(&[2.0, 4.0])).unwrap();
        assert_eq!(solve_factored(&f, &dvector![2.0, 8.0]).unwrap(), dvector![1.0, 2.0]);
    }

    #[test]
    fn zero_diagonal_needs_two_by_two_pivot() {
        let m = SymMatrix::from_lower(&DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]));
        let f = factorize(&m).unwrap();
        assert_eq!(f.inertia(), Inertia { positive: 1, negative: 1, zero: 0 });
        let x = f.solve(&dvector![3.0, 5.0]).unwrap();
        assert!((x - dvector![5.0, 3.0]).norm() < 1e-15);
    }

    #[test]
    fn non_finite_rejected() {
        let m = SymMatrix::from_diagonal(&[1.0, f64::NAN]);
        assert!(factorize(&m).is_err());
    }

    #[test]
    fn random_inertia_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=5 {
            for _ in 0..20 {
                let m = random_symmetric(&mut rng, n);
                let f = factorize(&m).unwrap();
                assert_eq!(f.inertia(), eigen_inertia(m.as_matrix(), 1e-9), "{m:?}");
            }
        }
    }

    #[test]
    fn spd_solve_matches_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let b = DMatrix::from_fn(6, 6, |_, _| rng.gen_range(-1.0..1.0));
            let spd = SymMatrix::symmetrize(&(&b * b.transpose() + DMatrix::identity(6, 6)));
            let rhs = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
            let inv = spd.as_matrix().clone().try_inverse().unwrap();
            let expected = inv * &rhs;
            let f = factorize(&spd).unwrap();
            assert!(f.is_positive_definite());
            let x = f.solve(&rhs).unwrap();
            assert!((x - expected).norm() <= 1e-8 * rhs.norm());
        }
    }

    #[test]
    fn shift_above_smallest_eigenvalue_gives_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_symmetric(&mut rng, 5);
        let lmin = SymmetricEigen::new(m.as_matrix().clone()).eigenvalues.min();
        assert!(lmin < 0.0);
        let sigma = lmin.abs() * (1.0 + 1e-6);
        assert!(factorize(&m.shifted(sigma)).unwrap().is_positive_definite());
        assert!(!factorize(&m.shifted(lmin.abs() * 0.9)).unwrap().is_positive_definite());
    }

    proptest! {
        #[test]
        fn inertia_matches_eigen_oracle(seed in any::<u64>(), n in 1usize..=20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_symmetric(&mut rng, n);
            let eig = SymmetricEigen::new(m.as_matrix().clone());
            // keep away from ambiguous near-zero eigenvalues
            prop_assume!(eig.eigenvalues.iter().all(|v| v.abs() > 1e-6));
            let f = factorize(&m).unwrap();
            prop_assert_eq!(f.inertia(), eigen_inertia(m.as_matrix(), 0.0));
            let b = DVector::from_fn(n, |i, _| (i as f64).sin());
            let x = f.solve(&b).unwrap();
            let cond = eig.eigenvalues.amax() / eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
            prop_assume!(cond < 1e8);
            prop_assert!((m.mul_vec(&x) - &b).norm() <= 1e-8 * b.norm());
        }

        #[test]
        fn sylvester_shift(seed in any::<u64>(), n in 1usize..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_symmetric(&mut rng, n);
            let lmin = SymmetricEigen::new(m.as_matrix().clone()).eigenvalues.min();
            let sigma = lmin.abs() * 1.001 + 1e-9;
            prop_assert_eq!(factorize(&m.shifted(sigma)).unwrap().inertia().negative, 0);
        }
    }
}
