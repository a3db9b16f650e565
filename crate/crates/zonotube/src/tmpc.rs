//! Nominal tube MPC: facet-wise constraint tightening, terminal ingredients
//! (regulator fixed point plus the maximal constraint-admissible invariant
//! set), the horizon quadratic program, and the applied control law.

use crate::optim::{solve_qp, QpProblem, SolveStatus};
use crate::setops::{Polytope, SetError, VertexCap};
use crate::tubegain::{GainParam, TubeGainError, TubeState};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TmpcError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("weight matrix not positive definite: {0}")]
    BadWeight(String),
    #[error("invariant-set iteration did not converge within {0} steps")]
    InvariantSetCap(usize),
    #[error("terminal set is empty")]
    EmptyTerminalSet,
    #[error("regulator fixed point did not converge")]
    RiccatiDivergence,
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Tube(#[from] TubeGainError),
    #[error("no admissible initial nominal state")]
    NoInitialNominal,
}

/// Horizon, weights, and the nominal model.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub n_horizon: usize,
    pub q_weight: DMatrix<f64>,
    pub r_weight: DMatrix<f64>,
    pub nominal_a: DMatrix<f64>,
    pub nominal_b: DMatrix<f64>,
}

impl MpcConfig {
    pub fn new(
        n_horizon: usize,
        q_weight: DMatrix<f64>,
        r_weight: DMatrix<f64>,
        nominal_a: DMatrix<f64>,
        nominal_b: DMatrix<f64>,
    ) -> Result<Self, TmpcError> {
        assert!(n_horizon >= 1, "horizon must be at least 1");
        let check_pd = |m: &DMatrix<f64>, name: &str| -> Result<(), TmpcError> {
            let sym = (m + m.transpose()) * 0.5;
            let eig = sym.symmetric_eigenvalues();
            if eig.min() <= 0.0 {
                return Err(TmpcError::BadWeight(format!(
                    "{name} min eigenvalue {:.3e}",
                    eig.min()
                )));
            }
            Ok(())
        };
        check_pd(&q_weight, "Q")?;
        check_pd(&r_weight, "R")?;
        Ok(Self {
            n_horizon,
            q_weight,
            r_weight,
            nominal_a,
            nominal_b,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.nominal_a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.nominal_b.ncols()
    }
}

/// Tighten the admissible state set by the tube's facet supports.
pub fn tighten_state(x_set: &Polytope, tube: &TubeState) -> Result<Polytope, TmpcError> {
    let q = x_set.num_facets();
    let tube_poly = tube.polytope();
    let mut h = x_set.h_vec().clone();
    for j in 0..q {
        let d = x_set.h_mat().row(j).transpose();
        h[j] -= tube_poly.support(&d)?;
    }
    Ok(Polytope::new(x_set.h_mat().clone(), h)?)
}

/// Tighten the admissible input set by the ancillary action over the tube:
/// `s_j = max over e in E of H_u^j U0 V_K e`.
pub fn tighten_input(
    u_set: &Polytope,
    u0: &DMatrix<f64>,
    v_k: &DMatrix<f64>,
    tube: &TubeState,
) -> Result<Polytope, TmpcError> {
    let k = u0 * v_k;
    let tube_poly = tube.polytope();
    let mut h = u_set.h_vec().clone();
    for j in 0..u_set.num_facets() {
        let d = (u_set.h_mat().row(j) * &k).transpose();
        h[j] -= tube_poly.support(&d)?;
    }
    Ok(Polytope::new(u_set.h_mat().clone(), h)?)
}

/// Infinite-horizon regulator fixed point: cost matrix `P` and gain `K`
/// (so `u = K x`), computed by iterating the standard recursion.
pub fn dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), TmpcError> {
    let mut p = q.clone();
    for _ in 0..200_000 {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let gram_inv = gram
            .clone()
            .try_inverse()
            .ok_or(TmpcError::RiccatiDivergence)?;
        let apb = a.transpose() * &p * b;
        let p_next = q + a.transpose() * &p * a - &apb * &gram_inv * apb.transpose();
        let diff = (&p_next - &p).amax();
        p = p_next;
        if !diff.is_finite() {
            return Err(TmpcError::RiccatiDivergence);
        }
        if diff <= 1e-12 * (1.0 + p.amax()) {
            let gram = r + b.transpose() * &p * b;
            let k = -(gram
                .try_inverse()
                .ok_or(TmpcError::RiccatiDivergence)?
                * b.transpose()
                * &p
                * a);
            return Ok((p, k));
        }
    }
    Err(TmpcError::RiccatiDivergence)
}

/// Maximal constraint-admissible invariant set of `x+ = A_cl x` inside the
/// constraint polytope, by iterating one-step preimages with redundancy
/// pruning until no new facet survives.
pub fn max_invariant_set(
    a_cl: &DMatrix<f64>,
    constraints: &Polytope,
    iter_cap: usize,
) -> Result<Polytope, TmpcError> {
    let mut h_rows = constraints.h_mat().clone();
    let mut h_vec = constraints.h_vec().clone();
    let mut a_pow = a_cl.clone();
    for _ in 0..iter_cap {
        let current = Polytope::new(h_rows.clone(), h_vec.clone())?;
        if current.is_empty()? {
            return Err(TmpcError::EmptyTerminalSet);
        }
        let cand_h = constraints.h_mat() * &a_pow;
        let mut new_rows: Vec<usize> = Vec::new();
        for r in 0..cand_h.nrows() {
            let d = cand_h.row(r).transpose();
            if d.amax() <= 1e-12 {
                continue;
            }
            let sup = current.support(&d)?;
            if sup > constraints.h_vec()[r] + 1e-9 {
                new_rows.push(r);
            }
        }
        if new_rows.is_empty() {
            return Ok(current);
        }
        let old_q = h_rows.nrows();
        let mut h2 = DMatrix::zeros(old_q + new_rows.len(), h_rows.ncols());
        let mut b2 = DVector::zeros(old_q + new_rows.len());
        h2.rows_mut(0, old_q).copy_from(&h_rows);
        b2.rows_mut(0, old_q).copy_from(&h_vec);
        for (i, &r) in new_rows.iter().enumerate() {
            h2.row_mut(old_q + i).copy_from(&cand_h.row(r));
            b2[old_q + i] = constraints.h_vec()[r];
        }
        h_rows = h2;
        h_vec = b2;
        a_pow = &a_pow * a_cl;
    }
    Err(TmpcError::InvariantSetCap(iter_cap))
}

/// Terminal gain, terminal cost matrix, and terminal invariant set.
#[derive(Debug, Clone)]
pub struct TerminalIngredients {
    pub k_t: DMatrix<f64>,
    pub p_t: DMatrix<f64>,
    pub t_set: Polytope,
}

impl TerminalIngredients {
    /// Verify positive invariance and the cost-decrease condition on the
    /// terminal set's vertices (diagnostics and tests).
    pub fn verify(&self, cfg: &MpcConfig, cap: &VertexCap) -> Result<(), String> {
        let a_cl = &cfg.nominal_a + &cfg.nominal_b * &self.k_t;
        let verts = self
            .t_set
            .vertices(cap)
            .map_err(|e| format!("vertex enumeration failed: {e}"))?;
        for v in &verts {
            let next = &a_cl * v;
            if !self.t_set.contains(&next) {
                return Err("terminal set not invariant on a vertex".into());
            }
            let vt = (v.transpose() * &self.p_t * v)[(0, 0)];
            let vt_next = (next.transpose() * &self.p_t * &next)[(0, 0)];
            let u = &self.k_t * v;
            let stage = (v.transpose() * &cfg.q_weight * v)[(0, 0)]
                + (u.transpose() * &cfg.r_weight * &u)[(0, 0)];
            if vt_next > vt - stage + 1e-7 * (1.0 + vt) {
                return Err(format!(
                    "terminal cost decrease violated: {vt_next} > {vt} - {stage}"
                ));
            }
        }
        Ok(())
    }
}

/// Terminal ingredients from the regulator fixed point and the maximal
/// invariant set inside the tightened constraints.
pub fn terminal_ingredients(
    cfg: &MpcConfig,
    x_tight: &Polytope,
    u_tight: &Polytope,
    iter_cap: usize,
) -> Result<TerminalIngredients, TmpcError> {
    let (p_t, k_t) = dare(
        &cfg.nominal_a,
        &cfg.nominal_b,
        &cfg.q_weight,
        &cfg.r_weight,
    )?;
    let a_cl = &cfg.nominal_a + &cfg.nominal_b * &k_t;
    // State rows plus input rows mapped through the terminal law.
    let qx = x_tight.num_facets();
    let qu = u_tight.num_facets();
    let n = cfg.state_dim();
    let mut h = DMatrix::zeros(qx + qu, n);
    let mut b = DVector::zeros(qx + qu);
    h.rows_mut(0, qx).copy_from(x_tight.h_mat());
    b.rows_mut(0, qx).copy_from(x_tight.h_vec());
    h.rows_mut(qx, qu).copy_from(&(u_tight.h_mat() * &k_t));
    b.rows_mut(qx, qu).copy_from(u_tight.h_vec());
    let constraints = Polytope::new(h, b)?;
    let t_set = max_invariant_set(&a_cl, &constraints, iter_cap)?;
    if t_set.is_empty()? {
        return Err(TmpcError::EmptyTerminalSet);
    }
    Ok(TerminalIngredients { k_t, p_t, t_set })
}

/// Nominal plan returned by the horizon QP.
#[derive(Debug, Clone)]
pub struct MpcSolution {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub objective: f64,
    pub status: SolveStatus,
}

impl MpcSolution {
    fn empty(status: SolveStatus) -> Self {
        Self {
            states: Vec::new(),
            inputs: Vec::new(),
            objective: f64::NAN,
            status,
        }
    }

    /// Worst dynamics-consistency residual along the plan.
    pub fn dynamics_residual(&self, cfg: &MpcConfig) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.inputs.len() {
            let pred = &cfg.nominal_a * &self.states[k] + &cfg.nominal_b * &self.inputs[k];
            worst = worst.max((&self.states[k + 1] - pred).amax());
        }
        worst
    }
}

/// Solve the horizon QP: stage costs plus terminal cost over the nominal
/// dynamics, tightened constraints for every stage, and the terminal set
/// membership at the horizon end. Infeasibility is a first-class outcome.
pub fn solve_tmpc(
    cfg: &MpcConfig,
    x_tight: &Polytope,
    u_tight: &Polytope,
    terminal: &TerminalIngredients,
    x_init: &DVector<f64>,
) -> MpcSolution {
    let n = cfg.state_dim();
    let m = cfg.input_dim();
    let nh = cfg.n_horizon;
    let nx = n * (nh + 1);
    let total = nx + m * nh;
    let xi = |k: usize, i: usize| k * n + i;
    let ui = |k: usize, j: usize| nx + k * m + j;

    // Quadratic cost: stage Q/R blocks plus the terminal cost matrix.
    let mut hess = DMatrix::zeros(total, total);
    for k in 0..nh {
        for i in 0..n {
            for j in 0..n {
                hess[(xi(k, i), xi(k, j))] = cfg.q_weight[(i, j)];
            }
        }
        for i in 0..m {
            for j in 0..m {
                hess[(ui(k, i), ui(k, j))] = cfg.r_weight[(i, j)];
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            hess[(xi(nh, i), xi(nh, j))] = terminal.p_t[(i, j)];
        }
    }

    // Equalities: anchor plus dynamics.
    let n_eq = n + n * nh;
    let mut a_eq = DMatrix::zeros(n_eq, total);
    let mut b_eq = DVector::zeros(n_eq);
    for i in 0..n {
        a_eq[(i, xi(0, i))] = 1.0;
        b_eq[i] = x_init[i];
    }
    for k in 0..nh {
        for i in 0..n {
            let row = n + k * n + i;
            a_eq[(row, xi(k + 1, i))] = 1.0;
            for j in 0..n {
                a_eq[(row, xi(k, j))] -= cfg.nominal_a[(i, j)];
            }
            for j in 0..m {
                a_eq[(row, ui(k, j))] -= cfg.nominal_b[(i, j)];
            }
        }
    }

    // Inequalities: tightened state and input constraints for stages
    // 0..N-1 and the terminal rows at stage N.
    let qx = x_tight.num_facets();
    let qu = u_tight.num_facets();
    let qt = terminal.t_set.num_facets();
    let n_in = nh * (qx + qu) + qt;
    let mut a_in = DMatrix::zeros(n_in, total);
    let mut b_in = DVector::zeros(n_in);
    let mut row = 0;
    for k in 0..nh {
        for r in 0..qx {
            for j in 0..n {
                a_in[(row, xi(k, j))] = x_tight.h_mat()[(r, j)];
            }
            b_in[row] = x_tight.h_vec()[r];
            row += 1;
        }
        for r in 0..qu {
            for j in 0..m {
                a_in[(row, ui(k, j))] = u_tight.h_mat()[(r, j)];
            }
            b_in[row] = u_tight.h_vec()[r];
            row += 1;
        }
    }
    for r in 0..qt {
        for j in 0..n {
            a_in[(row, xi(nh, j))] = terminal.t_set.h_mat()[(r, j)];
        }
        b_in[row] = terminal.t_set.h_vec()[r];
        row += 1;
    }

    let mut qp = match QpProblem::new(hess, DVector::zeros(total)) {
        Ok(qp) => qp,
        Err(_) => return MpcSolution::empty(SolveStatus::NumericalFailure),
    };
    qp.eq = Some((a_eq, b_eq));
    qp.ineq = Some((a_in, b_in));
    let res = solve_qp(&qp);
    if res.status != SolveStatus::Optimal {
        return MpcSolution::empty(res.status);
    }
    let states = (0..=nh)
        .map(|k| DVector::from_fn(n, |i, _| res.x[xi(k, i)]))
        .collect();
    let inputs = (0..nh)
        .map(|k| DVector::from_fn(m, |j, _| res.x[ui(k, j)]))
        .collect();
    MpcSolution {
        states,
        inputs,
        objective: res.objective,
        status: SolveStatus::Optimal,
    }
}

/// Applied input `u = ubar*(first) + U0 V_K e`; warns when the error sits
/// outside the tube but still evaluates the law.
pub fn control_input(
    sol: &MpcSolution,
    gain: &GainParam,
    e: &DVector<f64>,
    tube: &TubeState,
) -> DVector<f64> {
    if !tube.contains(e, 1e-9) {
        log::warn!("error outside the tube when applying ancillary feedback");
    }
    &sol.inputs[0] + &gain.k * e
}

/// Default initial nominal state: the measured state itself (so the initial
/// error is zero, which every tube contains).
pub fn choose_initial_nominal(x0: &DVector<f64>, tube: &TubeState) -> DVector<f64> {
    debug_assert!(tube.contains(&DVector::zeros(x0.len()), 1e-12));
    x0.clone()
}

/// Nearest admissible initial nominal state: minimize `|xbar - x0|_inf`
/// subject to `x0 - xbar` inside the tube and `xbar` inside the tightened
/// state set. Accepts boundary starts the plain choice cannot handle.
pub fn feasible_initial_nominal(
    x0: &DVector<f64>,
    tube: &TubeState,
    x_tight: &Polytope,
) -> Result<DVector<f64>, TmpcError> {
    use crate::optim::{solve_lp, LpProblem};
    let n = x0.len();
    // Variables: [xbar (n); t].
    let qe = tube.num_facets();
    let qx = x_tight.num_facets();
    let rows = 2 * n + qe + qx;
    let mut a = DMatrix::zeros(rows, n + 1);
    let mut b = DVector::zeros(rows);
    for i in 0..n {
        a[(i, i)] = 1.0;
        a[(i, n)] = -1.0;
        b[i] = x0[i];
        a[(n + i, i)] = -1.0;
        a[(n + i, n)] = -1.0;
        b[n + i] = -x0[i];
    }
    for r in 0..qe {
        for j in 0..n {
            a[(2 * n + r, j)] = -tube.h_mat()[(r, j)];
        }
        b[2 * n + r] = tube.h_vec()[r] - (tube.h_mat().row(r) * x0)[(0, 0)];
    }
    for r in 0..qx {
        for j in 0..n {
            a[(2 * n + qe + r, j)] = x_tight.h_mat()[(r, j)];
        }
        b[2 * n + qe + r] = x_tight.h_vec()[r];
    }
    let mut cost = DVector::zeros(n + 1);
    cost[n] = 1.0;
    let mut p = LpProblem::new(cost);
    p.ineq = Some((a, b));
    let res = solve_lp(&p);
    if res.status != SolveStatus::Optimal {
        return Err(TmpcError::NoInitialNominal);
    }
    Ok(res.x.rows(0, n).into_owned())
}
