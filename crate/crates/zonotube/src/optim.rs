//! Uniform contract for the linear and convex-quadratic programs solved by
//! the rest of the crate.
//!
//! Problems are stated with dense constraint blocks (`A x <= b`, `A_e x = b_e`,
//! per-variable bounds) and handed to Clarabel. Statuses are collapsed to the
//! four outcomes the callers act on; `Infeasible` is only reported when the
//! solver produces an infeasibility certificate, never from iteration counts.

use crate::config::Tolerances;
use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("dimension mismatch in {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("quadratic cost not symmetric (max asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("solver setup failed: {0}")]
    Setup(String),
}

/// Outcome classification for a solve call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(self) -> bool {
        self == SolveStatus::Optimal
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::NumericalFailure => "numerical-failure",
        };
        f.write_str(s)
    }
}

/// Result of [`solve_lp`] / [`solve_qp`].
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub objective: f64,
    pub dual_objective: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

impl SolveResult {
    fn failed(n: usize) -> Self {
        Self {
            status: SolveStatus::NumericalFailure,
            x: DVector::zeros(n),
            objective: f64::NAN,
            dual_objective: f64::NAN,
            primal_residual: f64::NAN,
            dual_residual: f64::NAN,
        }
    }
}

/// `min cost . x` subject to `ineq.0 x <= ineq.1`, `eq.0 x = eq.1`, and
/// optional per-variable bounds.
#[derive(Debug, Clone, Default)]
pub struct LpProblem {
    pub cost: DVector<f64>,
    pub ineq: Option<(DMatrix<f64>, DVector<f64>)>,
    pub eq: Option<(DMatrix<f64>, DVector<f64>)>,
    /// Per-variable `(lower, upper)` bounds; `None` means unbounded on that side.
    pub bounds: Option<Vec<(Option<f64>, Option<f64>)>>,
}

impl LpProblem {
    pub fn new(cost: DVector<f64>) -> Self {
        Self {
            cost,
            ..Default::default()
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        validate_blocks(self.num_vars(), &self.cost, &self.ineq, &self.eq, &self.bounds)
    }
}

/// `min x' hessian x + linear . x` over the same constraint blocks as
/// [`LpProblem`]. `hessian` must be symmetric positive semidefinite.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub ineq: Option<(DMatrix<f64>, DVector<f64>)>,
    pub eq: Option<(DMatrix<f64>, DVector<f64>)>,
    pub bounds: Option<Vec<(Option<f64>, Option<f64>)>>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Result<Self, OptimError> {
        if hessian.nrows() != hessian.ncols() || hessian.nrows() != linear.len() {
            return Err(OptimError::DimensionMismatch("quadratic cost".into()));
        }
        let asym = (&hessian - hessian.transpose()).abs().max();
        if asym > 1e-10 {
            return Err(OptimError::NotSymmetric(asym));
        }
        Ok(Self {
            hessian,
            linear,
            ineq: None,
            eq: None,
            bounds: None,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        validate_blocks(self.num_vars(), &self.linear, &self.ineq, &self.eq, &self.bounds)
    }

    /// Eigenvalue-floor PSD check (used by tests, not the hot path).
    pub fn validate_psd(&self) -> Result<(), OptimError> {
        let sym = (&self.hessian + self.hessian.transpose()) * 0.5;
        let eig = sym.symmetric_eigenvalues();
        let min = eig.min();
        if min < -1e-8 {
            return Err(OptimError::Setup(format!(
                "hessian not PSD (min eigenvalue {min:.3e})"
            )));
        }
        Ok(())
    }
}

fn validate_blocks(
    n: usize,
    cost: &DVector<f64>,
    ineq: &Option<(DMatrix<f64>, DVector<f64>)>,
    eq: &Option<(DMatrix<f64>, DVector<f64>)>,
    bounds: &Option<Vec<(Option<f64>, Option<f64>)>>,
) -> Result<(), OptimError> {
    if !cost.iter().all(|v| v.is_finite()) {
        return Err(OptimError::NonFinite("cost".into()));
    }
    for (name, block) in [("ineq", ineq), ("eq", eq)] {
        if let Some((a, b)) = block {
            if a.ncols() != n || a.nrows() != b.len() {
                return Err(OptimError::DimensionMismatch(name.into()));
            }
            if !b.iter().all(|v| v.is_finite()) || !a.iter().all(|v| v.is_finite()) {
                return Err(OptimError::NonFinite(name.into()));
            }
        }
    }
    if let Some(bs) = bounds {
        if bs.len() != n {
            return Err(OptimError::DimensionMismatch("bounds".into()));
        }
    }
    Ok(())
}

fn settings(tol: &Tolerances) -> DefaultSettings<f64> {
    DefaultSettings {
        verbose: false,
        tol_feas: tol.solver_primal,
        tol_gap_abs: tol.solver_dual,
        tol_gap_rel: tol.solver_dual,
        ..DefaultSettings::default()
    }
}

struct Assembled {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

/// Stack the constraint blocks in Clarabel's row order: equalities first
/// (zero cone), then inequalities and bounds (nonnegative cone).
fn assemble(
    n: usize,
    ineq: &Option<(DMatrix<f64>, DVector<f64>)>,
    eq: &Option<(DMatrix<f64>, DVector<f64>)>,
    bounds: &Option<Vec<(Option<f64>, Option<f64>)>>,
) -> Assembled {
    let mut rows: Vec<usize> = Vec::new();
    let mut cols: Vec<usize> = Vec::new();
    let mut vals: Vec<f64> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut row = 0usize;

    let push_dense = |mat: &DMatrix<f64>,
                          rhs: &DVector<f64>,
                          row: &mut usize,
                          rows: &mut Vec<usize>,
                          cols: &mut Vec<usize>,
                          vals: &mut Vec<f64>,
                          b: &mut Vec<f64>| {
        for r in 0..mat.nrows() {
            for c in 0..mat.ncols() {
                let v = mat[(r, c)];
                if v != 0.0 {
                    rows.push(*row + r);
                    cols.push(c);
                    vals.push(v);
                }
            }
            b.push(rhs[r]);
        }
        *row += mat.nrows();
    };

    let mut n_eq = 0usize;
    if let Some((a_e, b_e)) = eq {
        push_dense(a_e, b_e, &mut row, &mut rows, &mut cols, &mut vals, &mut b);
        n_eq = a_e.nrows();
    }
    if let Some((a_i, b_i)) = ineq {
        push_dense(a_i, b_i, &mut row, &mut rows, &mut cols, &mut vals, &mut b);
    }
    if let Some(bs) = bounds {
        for (j, (lo, hi)) in bs.iter().enumerate() {
            if let Some(hi) = hi {
                rows.push(row);
                cols.push(j);
                vals.push(1.0);
                b.push(*hi);
                row += 1;
            }
            if let Some(lo) = lo {
                rows.push(row);
                cols.push(j);
                vals.push(-1.0);
                b.push(-*lo);
                row += 1;
            }
        }
    }
    let n_ineq = row - n_eq;
    let a = CscMatrix::new_from_triplets(row, n, rows, cols, vals);
    let mut cones = Vec::new();
    if n_eq > 0 {
        cones.push(SupportedConeT::ZeroConeT(n_eq));
    }
    if n_ineq > 0 {
        cones.push(SupportedConeT::NonnegativeConeT(n_ineq));
    }
    Assembled { a, b, cones }
}

fn run_solver(
    p_mat: &CscMatrix<f64>,
    q: &[f64],
    asm: &Assembled,
    tol: &Tolerances,
) -> SolveResult {
    let n = q.len();
    let solver = DefaultSolver::new(p_mat, q, &asm.a, &asm.b, &asm.cones, settings(tol));
    let mut solver = match solver {
        Ok(s) => s,
        Err(_) => return SolveResult::failed(n),
    };
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved => SolveStatus::Optimal,
        SolverStatus::AlmostSolved => {
            // Accept reduced accuracy only when the residuals stay within the
            // coarse acceptance slack.
            if sol.r_prim <= tol.acceptance && sol.r_dual <= tol.acceptance {
                SolveStatus::Optimal
            } else {
                SolveStatus::NumericalFailure
            }
        }
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericalFailure,
    };
    SolveResult {
        status,
        x: DVector::from_column_slice(&sol.x),
        objective: sol.obj_val,
        dual_objective: sol.obj_val_dual,
        primal_residual: sol.r_prim,
        dual_residual: sol.r_dual,
    }
}

/// Solve a linear program with the default tolerance profile.
pub fn solve_lp(p: &LpProblem) -> SolveResult {
    solve_lp_with(p, &Tolerances::DEFAULT)
}

pub fn solve_lp_with(p: &LpProblem, tol: &Tolerances) -> SolveResult {
    if p.validate().is_err() {
        return SolveResult::failed(p.num_vars());
    }
    let n = p.num_vars();
    let p_mat = CscMatrix::new_from_triplets(n, n, vec![], vec![], vec![]);
    let asm = assemble(n, &p.ineq, &p.eq, &p.bounds);
    run_solver(&p_mat, p.cost.as_slice(), &asm, tol)
}

/// Solve a convex quadratic program with the default tolerance profile.
pub fn solve_qp(p: &QpProblem) -> SolveResult {
    solve_qp_with(p, &Tolerances::DEFAULT)
}

pub fn solve_qp_with(p: &QpProblem, tol: &Tolerances) -> SolveResult {
    if p.validate().is_err() {
        return SolveResult::failed(p.num_vars());
    }
    let n = p.num_vars();
    // Clarabel minimizes x'(P/2)x + q'x, our convention is x'Hx + f'x.
    let mut rows = Vec::new();
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let v = 2.0 * p.hessian[(r, c)];
            if v != 0.0 {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
    }
    let p_mat = CscMatrix::new_from_triplets(n, n, rows, cols, vals);
    let asm = assemble(n, &p.ineq, &p.eq, &p.bounds);
    run_solver(&p_mat, p.linear.as_slice(), &asm, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lp_box_minimum() {
        let mut p = LpProblem::new(dvector![1.0]);
        p.bounds = Some(vec![(Some(0.0), Some(1.0))]);
        let r = solve_lp(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.x[0], 0.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.objective, 0.0, epsilon = 1e-7);
    }

    #[test]
    fn lp_single_active_facet() {
        let mut p = LpProblem::new(dvector![-1.0]);
        p.ineq = Some((dmatrix![1.0; -1.0], dvector![3.0, 0.0]));
        let r = solve_lp(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.x[0], 3.0, epsilon = 1e-7);
    }

    #[test]
    fn lp_infeasible_is_certified() {
        let mut p = LpProblem::new(dvector![1.0]);
        p.ineq = Some((dmatrix![1.0; -1.0], dvector![-1.0, -1.0]));
        let r = solve_lp(&p);
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn lp_unbounded() {
        let p = LpProblem::new(dvector![-1.0]);
        let r = solve_lp(&p);
        assert_eq!(r.status, SolveStatus::Unbounded);
    }

    /// Brute-force oracle: enumerate all vertex candidates of {Ax <= b} from
    /// n-row subsets and take the best feasible objective.
    fn lp_vertex_oracle(cost: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        let n = cost.len();
        let q = a.nrows();
        let mut best = f64::INFINITY;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let mut sub = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                sub.set_row(k, &a.row(i));
                rhs[k] = b[i];
            }
            if let Some(sol) = sub.lu().solve(&rhs) {
                let feas = (a * &sol - b).iter().all(|v| *v <= 1e-9);
                if feas {
                    best = best.min(cost.dot(&sol));
                }
            }
            // next combination
            let mut k = n;
            loop {
                if k == 0 {
                    return best;
                }
                k -= 1;
                if idx[k] < q - (n - k) {
                    idx[k] += 1;
                    for j in k + 1..n {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break;
                }
            }
        }
    }

    #[test]
    fn lp_random_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let n = 5;
            let q = 8;
            // Rows with random directions; rhs positive so the origin is feasible
            // and the polytope bounded by adding a surrounding box.
            let mut a = DMatrix::zeros(q + 2 * n, n);
            let mut b = DVector::zeros(q + 2 * n);
            for r in 0..q {
                for c in 0..n {
                    a[(r, c)] = rng.gen_range(-1.0..1.0);
                }
                b[r] = rng.gen_range(0.2..1.0);
            }
            for i in 0..n {
                a[(q + i, i)] = 1.0;
                b[q + i] = 1.0;
                a[(q + n + i, i)] = -1.0;
                b[q + n + i] = 1.0;
            }
            let cost = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
            let mut p = LpProblem::new(cost.clone());
            p.ineq = Some((a.clone(), b.clone()));
            let r = solve_lp(&p);
            assert_eq!(r.status, SolveStatus::Optimal);
            let oracle = lp_vertex_oracle(&cost, &a, &b);
            assert_abs_diff_eq!(r.objective, oracle, epsilon = 1e-6);
        }
    }

    #[test]
    fn lp_duality_gap_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 4;
            let mut a = DMatrix::zeros(6 + 2 * n, n);
            let mut b = DVector::zeros(6 + 2 * n);
            for r in 0..6 {
                for c in 0..n {
                    a[(r, c)] = rng.gen_range(-1.0..1.0);
                }
                b[r] = rng.gen_range(0.1..1.0);
            }
            for i in 0..n {
                a[(6 + i, i)] = 1.0;
                b[6 + i] = 2.0;
                a[(6 + n + i, i)] = -1.0;
                b[6 + n + i] = 2.0;
            }
            let mut p = LpProblem::new(DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)));
            p.ineq = Some((a, b));
            let r = solve_lp(&p);
            assert_eq!(r.status, SolveStatus::Optimal);
            assert!((r.objective - r.dual_objective).abs() <= 1e-6);
        }
    }

    #[test]
    fn lp_deterministic_across_runs() {
        let mut p = LpProblem::new(dvector![1.0, -2.0]);
        p.ineq = Some((
            dmatrix![1.0, 1.0; -1.0, 2.0; 0.5, -1.0],
            dvector![2.0, 1.0, 1.5],
        ));
        p.bounds = Some(vec![(Some(-3.0), Some(3.0)), (Some(-3.0), Some(3.0))]);
        let r1 = solve_lp(&p);
        let r2 = solve_lp(&p);
        assert_eq!(r1.status, r2.status);
        assert_eq!(r1.objective.to_bits(), r2.objective.to_bits());
        assert_eq!(r1.x, r2.x);
    }

    #[test]
    fn qp_active_bound() {
        let mut p = QpProblem::new(dmatrix![1.0], dvector![0.0]).unwrap();
        p.bounds = Some(vec![(Some(1.0), None)]);
        let r = solve_qp(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn qp_projection_identity() {
        // min ||x - c||^2 = x'Ix - 2c'x + const
        let c = dvector![0.3, -1.2, 0.7];
        let p = QpProblem::new(DMatrix::identity(3, 3), -2.0 * c.clone()).unwrap();
        let r = solve_qp(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        for i in 0..3 {
            assert_abs_diff_eq!(r.x[i], c[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn qp_random_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // 2-D box with a random PSD objective; dense grid as the oracle.
        let m = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let h = &m * m.transpose() + DMatrix::identity(2, 2) * 0.1;
        // Linear term chosen so the unconstrained optimum sits inside the
        // polytope; the grid error is then second order in the spacing.
        let target = dvector![0.1, -0.15];
        let f = -2.0 * &h * &target;
        let mut p = QpProblem::new(h.clone(), f.clone()).unwrap();
        p.ineq = Some((
            dmatrix![1.0, 1.0; -1.0, 0.0; 0.0, -1.0; 1.0, -0.5],
            dvector![1.0, 0.8, 0.8, 0.9],
        ));
        let r = solve_qp(&p);
        assert_eq!(r.status, SolveStatus::Optimal);
        let (a, b) = p.ineq.clone().unwrap();
        let mut best = f64::INFINITY;
        let steps = 400;
        for i in 0..=steps {
            for j in 0..=steps {
                let x = dvector![
                    -0.8 + 1.8 * i as f64 / steps as f64,
                    -0.8 + 1.8 * j as f64 / steps as f64
                ];
                if (&a * &x - &b).iter().all(|v| *v <= 1e-12) {
                    let val = (x.transpose() * &h * &x)[(0, 0)] + f.dot(&x);
                    best = best.min(val);
                }
            }
        }
        assert!((r.objective - best).abs() <= 1e-4, "{} vs {}", r.objective, best);
    }

    #[test]
    fn qp_rejects_asymmetric_hessian() {
        let err = QpProblem::new(dmatrix![1.0, 0.5; 0.0, 1.0], dvector![0.0, 0.0]);
        assert!(err.is_err());
    }

    #[test]
    fn qp_psd_floor() {
        let p = QpProblem::new(dmatrix![1.0, 0.0; 0.0, -1.0], dvector![0.0, 0.0]).unwrap();
        assert!(p.validate_psd().is_err());
    }
}
