//! Simplex-constrained least squares: `min_p |M p - v|` subject to
//! `p >= 0`, `sum p = 1`.
//!
//! This is the evaluation kernel of the model scores: every candidate
//! Q-matrix and every item-parameter probe reduces to one of these solves,
//! so the solver is built for many small dense problems. The method is
//! accelerated projected gradient (FISTA) on the squared objective with
//! exact sort-based simplex projection, a Lipschitz step from the largest
//! squared singular value (power iteration, warm-cached across related
//! solves), restart on non-monotone objective, and step halving if the
//! Lipschitz estimate proves too small.
//!
//! A converged solution always carries a KKT certificate: the gradient
//! `w = 2 Mᵀ(Mp - v)` is constant on the support within [`KKT_TOL`] and no
//! coordinate is more than [`KKT_TOL`] below that level.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ItemParams, QMatrix};
use crate::moments::MomentVector;
use crate::tmatrix::{self, MomentMatrix};

/// Projected-gradient-norm stopping threshold.
pub const PG_TOL: f64 = 1e-9;
/// Relative objective-change stopping threshold (stall detection).
pub const REL_OBJ_TOL: f64 = 1e-12;
/// KKT certificate tolerance on the gradient.
pub const KKT_TOL: f64 = 1e-6;
/// Coordinates above this mass count as support for the KKT certificate.
pub const SUPPORT_EPS: f64 = 1e-8;

/// Result of one simplex-constrained least-squares solve.
#[derive(Clone, Debug)]
pub struct SimplexLsq {
    /// Feasible minimizer (on the simplex). When the matrix has linearly
    /// dependent columns the minimizer may be one point of an optimal face;
    /// only the residual is contractual in that case.
    pub p: Vec<f64>,
    /// Euclidean norm `|M p - v|` recomputed from the returned `p`.
    pub residual: f64,
    /// Gradient-step iterations performed.
    pub iterations: usize,
    /// False when the iteration cap was reached before the KKT certificate
    /// passed; the best iterate is still returned.
    pub converged: bool,
}

/// Reusable solver workspace. Reusing one solver across related solves
/// (same matrix shape, slowly changing entries) keeps the power-iteration
/// estimate warm and avoids reallocation.
#[derive(Debug, Default)]
pub struct SimplexSolver {
    singular_vec: Vec<f64>,
    sort_buf: Vec<f64>,
}

impl SimplexSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Solves `min_p |m p - v|` over the simplex, optionally warm-started.
    pub fn solve(&mut self, m: &DMatrix<f64>, v: &[f64], warm: Option<&[f64]>) -> Result<SimplexLsq> {
        let rows = m.nrows();
        let n = m.ncols();
        if n == 0 {
            return Err(Error::Empty { what: "matrix columns" });
        }
        if v.len() != rows {
            return Err(Error::DimensionMismatch {
                context: "simplex least squares (rhs length vs rows)",
                expected: rows,
                actual: v.len(),
            });
        }
        if m.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { context: "simplex least squares input" });
        }

        let rhs = DVector::from_column_slice(v);
        // mtv = Mᵀ v, fixed over the solve.
        let mut mtv = DVector::zeros(n);
        mtv.gemv_tr(1.0, m, &rhs, 0.0);

        let mut x = DVector::from_element(n, 1.0 / n as f64);
        if let Some(w) = warm {
            if w.len() == n && w.iter().all(|x| x.is_finite()) {
                x.copy_from_slice(w);
            }
        }
        self.project(&mut x);

        let mut lipschitz = self.estimate_lipschitz(m);
        if lipschitz <= f64::MIN_POSITIVE {
            // Zero matrix: every feasible point is optimal.
            let residual = rhs.norm();
            return Ok(SimplexLsq {
                p: x.as_slice().to_vec(),
                residual,
                iterations: 0,
                converged: true,
            });
        }

        let cap = (50.0 * n as f64 * (rows.max(1) as f64).sqrt()).ceil() as usize;
        let cap = cap.max(64);

        let mut work_rows = DVector::zeros(rows);
        let mut grad = DVector::zeros(n);
        let mut y = x.clone();
        let mut x_new = DVector::zeros(n);
        let mut probe = DVector::zeros(n);
        let mut theta: f64 = 1.0;

        // h(x) = |Mx - v|^2, gradient 2 Mᵀ(Mx - v) = 2 (MᵀM x - mtv).
        let mut objective = |xv: &DVector<f64>, wr: &mut DVector<f64>| -> f64 {
            wr.gemv(1.0, m, xv, 0.0);
            *wr -= &rhs;
            wr.norm_squared()
        };
        let mut h_x = objective(&x, &mut work_rows);

        let mut iterations = 0usize;
        let mut converged = false;
        let mut step = 1.0 / lipschitz;

        while iterations < cap {
            iterations += 1;

            // Gradient step from the extrapolated point.
            work_rows.gemv(1.0, m, &y, 0.0);
            grad.gemv_tr(2.0, m, &work_rows, 0.0);
            grad.axpy(-2.0, &mtv, 1.0);
            x_new.copy_from(&y);
            x_new.axpy(-step, &grad, 1.0);
            self.project(&mut x_new);
            let mut h_new = objective(&x_new, &mut work_rows);

            if h_new > h_x {
                // Non-monotone: drop momentum and retry from x.
                theta = 1.0;
                y.copy_from(&x);
                work_rows.gemv(1.0, m, &x, 0.0);
                grad.gemv_tr(2.0, m, &work_rows, 0.0);
                grad.axpy(-2.0, &mtv, 1.0);
                x_new.copy_from(&x);
                x_new.axpy(-step, &grad, 1.0);
                self.project(&mut x_new);
                h_new = objective(&x_new, &mut work_rows);
                if h_new > h_x {
                    // A plain projected-gradient step increased the
                    // objective, so the Lipschitz estimate is too small.
                    lipschitz *= 2.0;
                    step = 1.0 / lipschitz;
                    continue;
                }
            }

            let rel_change = (h_x - h_new).abs() / h_new.abs().max(1e-300);

            // y = x_new + momentum (x_new - x), with x still the previous
            // accepted iterate.
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let momentum = (theta - 1.0) / theta_next;
            y.copy_from(&x_new);
            y.axpy(-momentum, &x, 1.0 + momentum);
            x.copy_from(&x_new);
            h_x = h_new;
            theta = theta_next;

            // Stopping: projected-gradient norm at the accepted iterate, or
            // an objective stall. Either way the KKT certificate must pass.
            work_rows.gemv(1.0, m, &x, 0.0);
            work_rows -= &rhs;
            grad.gemv_tr(2.0, m, &work_rows, 0.0);
            probe.copy_from(&x);
            probe.axpy(-step, &grad, 1.0);
            self.project(&mut probe);
            probe -= &x;
            let pg_norm = probe.norm() / step;
            if pg_norm <= PG_TOL || rel_change <= REL_OBJ_TOL {
                if kkt_certificate(x.as_slice(), grad.as_slice(), KKT_TOL) {
                    converged = true;
                    break;
                }
            }
        }

        work_rows.gemv(1.0, m, &x, 0.0);
        work_rows -= &rhs;
        let residual = work_rows.norm();
        Ok(SimplexLsq {
            p: x.as_slice().to_vec(),
            residual,
            iterations,
            converged,
        })
    }

    /// Largest squared singular value of `m` via power iteration on `MᵀM`,
    /// warm-started from the previous call when shapes match. A small
    /// overshoot factor compensates for truncation; underestimates are
    /// caught by the step-halving safeguard in the main loop.
    fn estimate_lipschitz(&mut self, m: &DMatrix<f64>) -> f64 {
        let n = m.ncols();
        let warm = self.singular_vec.len() == n
            && self.singular_vec.iter().all(|x| x.is_finite())
            && self.singular_vec.iter().map(|x| x * x).sum::<f64>() > 1e-12;
        let mut v = if warm {
            DVector::from_column_slice(&self.singular_vec)
        } else {
            DVector::from_element(n, (1.0 / n as f64).sqrt())
        };
        let iters = if warm { 4 } else { 24 };
        let mut w = DVector::zeros(m.nrows());
        let mut z = DVector::zeros(n);
        for _ in 0..iters {
            w.gemv(1.0, m, &v, 0.0);
            z.gemv_tr(1.0, m, &w, 0.0);
            let norm = z.norm();
            if norm <= f64::MIN_POSITIVE {
                return 0.0;
            }
            v.copy_from(&z);
            v /= norm;
        }
        self.singular_vec.clear();
        self.singular_vec.extend_from_slice(v.as_slice());
        w.gemv(1.0, m, &v, 0.0);
        w.norm_squared() * 1.05
    }

    /// Exact Euclidean projection onto the probability simplex
    /// (sort-based).
    fn project(&mut self, x: &mut DVector<f64>) {
        let n = x.len();
        self.sort_buf.clear();
        self.sort_buf.extend(x.iter().copied());
        self.sort_buf.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
        let mut cumsum = 0.0;
        let mut tau = 0.0;
        for (i, &u) in self.sort_buf.iter().enumerate() {
            cumsum += u;
            let candidate = (cumsum - 1.0) / (i + 1) as f64;
            if u - candidate > 0.0 {
                tau = candidate;
            } else {
                break;
            }
        }
        for xi in x.iter_mut() {
            *xi = (*xi - tau).max(0.0);
        }
        // Guard against accumulated rounding: renormalize the positive part.
        let s: f64 = x.iter().sum();
        if s > 0.0 && (s - 1.0).abs() > 1e-15 {
            *x /= s;
        }
        if s <= 0.0 {
            x.fill(1.0 / n as f64);
        }
    }
}

/// KKT stationarity for `min |Mp - v|^2` on the simplex: with gradient `w`,
/// there is a multiplier level `lambda` such that every coordinate sits at
/// or above `lambda - tol` and support coordinates sit within `tol` of it.
pub fn kkt_certificate(p: &[f64], grad: &[f64], tol: f64) -> bool {
    let support: Vec<usize> = (0..p.len()).filter(|&j| p[j] > SUPPORT_EPS).collect();
    if support.is_empty() {
        return false;
    }
    let lambda: f64 = support.iter().map(|&j| grad[j]).sum::<f64>() / support.len() as f64;
    grad.iter().all(|&w| w >= lambda - tol)
        && support.iter().all(|&j| (grad[j] - lambda).abs() <= tol)
}

/// One-shot solve without workspace reuse.
pub fn min_residual(m: &DMatrix<f64>, v: &[f64]) -> Result<SimplexLsq> {
    SimplexSolver::new().solve(m, v, None)
}

/// The model score: minimal Euclidean distance between the moment vector
/// and the image of the simplex under the moment matrix of `q`. AND moments
/// score against the T-matrix, OR moments against the U-matrix.
pub fn score(q: &QMatrix, params: &ItemParams, moments: &MomentVector) -> Result<f64> {
    let mat = MomentMatrix::build(moments.kind(), q, params, moments.combos())?;
    Ok(min_residual(mat.matrix(), moments.values())?.residual)
}

/// As [`score`], but also returns the minimizing distribution.
pub fn score_with_solution(
    q: &QMatrix,
    params: &ItemParams,
    moments: &MomentVector,
) -> Result<(f64, SimplexLsq)> {
    let mat = MomentMatrix::build(moments.kind(), q, params, moments.combos())?;
    let sol = min_residual(mat.matrix(), moments.values())?;
    Ok((sol.residual, sol))
}

pub(crate) fn build_matrix_for(
    q: &QMatrix,
    params: &ItemParams,
    moments: &MomentVector,
) -> Result<MomentMatrix> {
    MomentMatrix::build(moments.kind(), q, params, moments.combos())
}

#[allow(unused_imports)]
pub(crate) use tmatrix::fill_moment_matrix;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use crate::moments;
    use crate::tmatrix::ComboSet;
    use approx::assert_abs_diff_eq;

    #[test]
    fn feasible_rhs_is_reproduced() {
        let m = DMatrix::identity(2, 2);
        let sol = min_residual(&m, &[0.3, 0.7]).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.p[0], 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.p[1], 0.7, epsilon = 1e-8);
        assert!(sol.residual < 1e-8);
    }

    #[test]
    fn infeasible_rhs_projects_onto_simplex() {
        let m = DMatrix::identity(2, 2);
        let sol = min_residual(&m, &[1.0, 1.0]).unwrap();
        assert!(sol.converged);
        assert_abs_diff_eq!(sol.p[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.p[1], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.residual, (0.5f64).sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn consistent_moment_system_reaches_zero_residual() {
        // v = T p* for a feasible p*: the residual must vanish even though
        // the minimizer itself may be non-unique (T has a zero column).
        let q = QMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let params = ItemParams::noise_free(3);
        let combos = ComboSet::up_to_order(3, 1).unwrap();
        let t = MomentMatrix::build(Model::Dina, &q, &params, &combos).unwrap();
        let p_star = [0.1, 0.2, 0.3, 0.4];
        let v = t.apply(&p_star).unwrap();
        let sol = min_residual(t.matrix(), &v).unwrap();
        assert!(sol.converged);
        assert!(sol.residual < 1e-8, "residual {}", sol.residual);
        let fitted = t.apply(&sol.p).unwrap();
        for (a, b) in fitted.iter().zip(&v) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7);
        }
    }

    #[test]
    fn returned_residual_matches_recomputation() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, 0.2, 0.9, 0.7, 0.1]);
        let v = [0.4, 0.6, 0.2];
        let sol = min_residual(&m, &v).unwrap();
        let p = DVector::from_column_slice(&sol.p);
        let recomputed = (&m * &p - DVector::from_column_slice(&v)).norm();
        assert_abs_diff_eq!(sol.residual, recomputed, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = DMatrix::from_row_slice(1, 2, &[f64::NAN, 1.0]);
        assert!(min_residual(&m, &[0.5]).is_err());
        let m = DMatrix::identity(2, 2);
        assert!(min_residual(&m, &[0.5]).is_err());
    }

    #[test]
    fn fuzz_feasibility_and_kkt() {
        let mut state = 2024u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut solver = SimplexSolver::new();
        for trial in 0..1000 {
            let rows = 1 + (next() * 12.0) as usize;
            let cols = 1 + (next() * 7.0) as usize;
            let m = DMatrix::from_fn(rows, cols, |_, _| next());
            let v: Vec<f64> = (0..rows).map(|_| next() * 1.5).collect();
            let sol = solver.solve(&m, &v, None).unwrap();
            assert!(sol.converged, "trial {trial} did not converge");
            let sum: f64 = sol.p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10, "sum {sum}");
            assert!(sol.p.iter().all(|&x| x >= -1e-12));
            // Independent KKT recheck.
            let pv = DVector::from_column_slice(&sol.p);
            let r = &m * &pv - DVector::from_column_slice(&v);
            let grad = 2.0 * m.transpose() * r;
            assert!(
                kkt_certificate(&sol.p, grad.as_slice(), KKT_TOL),
                "KKT failed on trial {trial}"
            );
        }
    }

    #[test]
    fn oracle_grid_agreement_small() {
        // Coarse full-grid oracle on 3-column instances.
        let mut state = 7u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..20 {
            let rows = 2 + (next() * 5.0) as usize;
            let m = DMatrix::from_fn(rows, 3, |_, _| next());
            let v: Vec<f64> = (0..rows).map(|_| next()).collect();
            let sol = min_residual(&m, &v).unwrap();
            let mut best = f64::INFINITY;
            let steps = 100usize;
            for i in 0..=steps {
                for j in 0..=(steps - i) {
                    let kq = steps - i - j;
                    let p = [
                        i as f64 / steps as f64,
                        j as f64 / steps as f64,
                        kq as f64 / steps as f64,
                    ];
                    let r = (0..rows)
                        .map(|rr| {
                            let pred: f64 = (0..3).map(|c| m[(rr, c)] * p[c]).sum();
                            (pred - v[rr]).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt();
                    best = best.min(r);
                }
            }
            assert!(
                sol.residual <= best + 1e-9,
                "solver {} worse than grid {}",
                sol.residual,
                best
            );
            assert!(best - sol.residual <= 2e-2, "grid gap too large");
        }
    }

    #[test]
    fn monotone_in_extra_rows() {
        // Adding combination rows cannot decrease the score.
        let q = QMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let params = ItemParams::new(vec![0.9, 0.8, 0.85], vec![0.15, 0.2, 0.1]).unwrap();
        let rows: Vec<Vec<u8>> = (0..40)
            .map(|i| vec![(i % 2) as u8, ((i / 2) % 2) as u8, ((i / 3) % 2) as u8])
            .collect();
        let r = crate::model::ResponseMatrix::from_rows(&rows).unwrap();
        let c1 = ComboSet::up_to_order(3, 1).unwrap();
        let c2 = ComboSet::saturated(3).unwrap();
        let s1 = score(&q, &params, &moments::and_moments(&r, &c1).unwrap()).unwrap();
        let s2 = score(&q, &params, &moments::and_moments(&r, &c2).unwrap()).unwrap();
        assert!(s1 <= s2 + 1e-10);
    }

    #[test]
    fn collapsed_separation_gives_constant_fit() {
        // With c = g = gamma the matrix rows are constant, so the fitted
        // value of each row is fixed at gamma^|S| regardless of p.
        let q = QMatrix::from_rows(&[vec![1, 0], vec![0, 1], vec![1, 1]]).unwrap();
        let gamma = 0.4;
        let params = ItemParams::constant(3, gamma, gamma).unwrap();
        let combos = ComboSet::saturated(3).unwrap();
        let rows: Vec<Vec<u8>> = (0..16)
            .map(|i| vec![(i % 2) as u8, ((i / 4) % 2) as u8, ((i / 2) % 2) as u8])
            .collect();
        let r = crate::model::ResponseMatrix::from_rows(&rows).unwrap();
        let mv = moments::and_moments(&r, &combos).unwrap();
        let expected: f64 = combos
            .subsets()
            .iter()
            .zip(mv.values())
            .map(|(&s, &val)| (gamma.powi(s.count_ones() as i32) - val).powi(2))
            .sum::<f64>()
            .sqrt();
        let got = score(&q, &params, &mv).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-9);
    }

    #[test]
    fn convexity_along_feasible_segments() {
        let mut state = 5150u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let rows = 2 + (next() * 6.0) as usize;
            let cols = 2 + (next() * 5.0) as usize;
            let m = DMatrix::from_fn(rows, cols, |_, _| next());
            let v: Vec<f64> = (0..rows).map(|_| next()).collect();
            let rand_simplex = |next: &mut dyn FnMut() -> f64| {
                let mut p: Vec<f64> = (0..cols).map(|_| -(next().max(1e-12)).ln()).collect();
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|x| *x /= s);
                p
            };
            let a = rand_simplex(&mut next);
            let b = rand_simplex(&mut next);
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let res = |p: &[f64]| {
                (0..rows)
                    .map(|rr| {
                        let pred: f64 = (0..cols).map(|c| m[(rr, c)] * p[c]).sum();
                        (pred - v[rr]).powi(2)
                    })
                    .sum::<f64>()
                    .sqrt()
            };
            assert!(res(&mid) <= res(&a).max(res(&b)) + 1e-12);
        }
    }

    #[test]
    fn warm_start_converges_to_same_residual() {
        let m = DMatrix::from_row_slice(4, 3, &[
            0.2, 0.8, 0.4, 0.9, 0.1, 0.5, 0.3, 0.3, 0.7, 0.6, 0.2, 0.2,
        ]);
        let v = [0.5, 0.4, 0.45, 0.35];
        let cold = min_residual(&m, &v).unwrap();
        let mut solver = SimplexSolver::new();
        let warm = solver.solve(&m, &v, Some(&cold.p)).unwrap();
        assert_abs_diff_eq!(cold.residual, warm.residual, epsilon = 1e-9);
        assert!(warm.iterations <= cold.iterations);
    }
}
