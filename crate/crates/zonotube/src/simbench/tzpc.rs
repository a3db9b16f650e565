//! Fixed-gain, fixed-tube zonotopic predictive control baseline.
//!
//! The gain is the regulator gain for the nominal model; the tube is the
//! fixed point of the facet recursion `h <- P h + offsets`, where the
//! offsets collect the worst-case open-loop mismatch over the whole
//! operating region plus the disturbance bound, and `P` comes from one
//! contraction program solved with the gain frozen.

use super::{
    hash_matrix, prepare_scenario, ControllerKind, RunLog, RunSummary, ScenarioConfig,
    SimError, StepRecord,
};
use crate::optim::{solve_lp, LpProblem, SolveStatus};
use crate::setops::{Polytope, SetError, VertexCap};
use crate::sysid::PriorMode;
use crate::tmpc::{
    dare, feasible_initial_nominal, solve_tmpc, terminal_ingredients, tighten_input,
    tighten_state, MpcConfig, TmpcError,
};
use crate::tubegain::{facet_y, open_loop_mismatch_bound, TubeGainError, TubeState};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TzpcError {
    #[error("frozen-gain contraction program infeasible")]
    FrozenLpInfeasible,
    #[error("fixed-point tube recursion diverged")]
    DivergentRecursion,
    #[error("fixed tube has a non-positive facet")]
    DegenerateTube,
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Tube(#[from] TubeGainError),
    #[error(transparent)]
    Tmpc(#[from] TmpcError),
    #[error("solver failure in {0}")]
    SolverFailure(String),
}

/// Fixed-gain, fixed-tube controller pieces.
#[derive(Debug, Clone)]
pub struct TzpcController {
    pub k_fix: DMatrix<f64>,
    pub v_k_fix: DMatrix<f64>,
    pub h_fix: DVector<f64>,
    pub p_fix: DMatrix<f64>,
    pub offsets: DVector<f64>,
    pub tube: TubeState,
}

/// Fixed point of `h <- P h + offsets` from zero, or an error when the
/// recursion fails to settle within the cap.
pub fn fixed_point_tube(
    p_mat: &DMatrix<f64>,
    offsets: &DVector<f64>,
    cap: usize,
    tol: f64,
) -> Result<DVector<f64>, TzpcError> {
    let mut h = DVector::zeros(offsets.len());
    let scale = 1.0 + offsets.amax();
    for _ in 0..cap {
        let next = p_mat * &h + offsets;
        let diff = (&next - &h).amax();
        h = next;
        if h.amax() > 1e6 * scale {
            return Err(TzpcError::DivergentRecursion);
        }
        if diff <= tol {
            return Ok(h);
        }
    }
    Err(TzpcError::DivergentRecursion)
}

/// Build the fixed-tube baseline from data-only model sets.
///
/// `mol_blocks` are the refined open-loop mismatch generator blocks,
/// `zw` the disturbance zonotope used for the facet bound, and `x_set` /
/// `u_set` the full admissible sets whose product the mismatch is maximized
/// over.
#[allow(clippy::too_many_arguments)]
pub fn build_tzpc(
    h_mat: &DMatrix<f64>,
    x1: &DMatrix<f64>,
    c_w: &DMatrix<f64>,
    x0_data: &DMatrix<f64>,
    d0_pinv: &DMatrix<f64>,
    nominal_a: &DMatrix<f64>,
    nominal_b: &DMatrix<f64>,
    mol_blocks: &[DMatrix<f64>],
    zw: &crate::setops::Zonotope,
    x_set: &Polytope,
    u_set: &Polytope,
    q_weight: &DMatrix<f64>,
    r_weight: &DMatrix<f64>,
) -> Result<TzpcController, TzpcError> {
    let n = nominal_a.nrows();
    let q = h_mat.nrows();
    let (_, k_fix) = dare(nominal_a, nominal_b, q_weight, r_weight)?;
    // Batch-consistent representation of the frozen gain: the least-norm
    // solution of D0 V = [I; K].
    let m = nominal_b.ncols();
    let mut target = DMatrix::zeros(n + m, n);
    target
        .view_mut((0, 0), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    target.view_mut((n, 0), (m, n)).copy_from(&k_fix);
    let v_k_fix = d0_pinv * &target;
    let param_resid = (x0_data * &v_k_fix - DMatrix::identity(n, n)).amax();
    if param_resid > 1e-6 {
        return Err(TzpcError::SolverFailure(format!(
            "gain parametrization residual {param_resid:.3e}"
        )));
    }

    let y = facet_y(h_mat, zw);
    let xu = x_set.cartesian_product(u_set);
    let f_bound = open_loop_mismatch_bound(h_mat, mol_blocks, &xu, &VertexCap::default())?;
    let hch = h_mat * zw.center();
    let offsets = DVector::from_fn(q, |j, _| hch[j] + f_bound[j] + y[j]);

    // One contraction program with the gain frozen: the mismatch and
    // model-uncertainty terms are replaced by the region-wide offsets.
    // Variables: P (q*q) | lambda.
    let h_ref = x_set.h_vec();
    let np = q * q;
    let total = np + 1;
    let mut a_in = DMatrix::zeros(q, total);
    let mut b_in = DVector::zeros(q);
    for j in 0..q {
        for k in 0..q {
            a_in[(j, j * q + k)] = h_ref[k];
        }
        a_in[(j, np)] = -h_ref[j];
        b_in[j] = -offsets[j];
    }
    let m_cl = h_mat * ((x1 - c_w) * &v_k_fix);
    let mut a_eq = DMatrix::zeros(q * n, total);
    let mut b_eq = DVector::zeros(q * n);
    for j in 0..q {
        for c in 0..n {
            let row = j * n + c;
            for k in 0..q {
                a_eq[(row, j * q + k)] = h_mat[(k, c)];
            }
            b_eq[row] = m_cl[(j, c)];
        }
    }
    let mut bounds: Vec<(Option<f64>, Option<f64>)> = vec![(Some(0.0), None); np];
    bounds.push((Some(1e-3), Some(1.0 - 1e-6)));
    let mut cost = DVector::zeros(total);
    cost[np] = 1.0;
    let mut lp = LpProblem::new(cost);
    lp.ineq = Some((a_in, b_in));
    lp.eq = Some((a_eq, b_eq));
    lp.bounds = Some(bounds);
    let res = solve_lp(&lp);
    let p_fix = match res.status {
        SolveStatus::Optimal => DMatrix::from_fn(q, q, |j, k| res.x[j * q + k].max(0.0)),
        SolveStatus::Infeasible => return Err(TzpcError::FrozenLpInfeasible),
        other => {
            return Err(TzpcError::SolverFailure(format!(
                "frozen-gain program status {other}"
            )))
        }
    };
    let h_fix = fixed_point_tube(&p_fix, &offsets, 100, 1e-8)?;
    if h_fix.min() <= 0.0 {
        return Err(TzpcError::DegenerateTube);
    }
    let tube = TubeState::new(h_mat.clone(), h_fix.clone())?;
    Ok(TzpcController {
        k_fix,
        v_k_fix,
        h_fix,
        p_fix,
        offsets,
        tube,
    })
}

/// Fixed-tube closed loop sharing the elastic runner's batch, seeds, and
/// logging format.
pub fn simulate_tzpc(cfg: &ScenarioConfig) -> Result<RunLog, SimError> {
    assert_eq!(cfg.controller, ControllerKind::Tzpc);
    // The baseline refines the open-loop set from data alone.
    let mut data_cfg = cfg.clone();
    data_cfg.prior = PriorMode::DataOnly;
    let mut setup = prepare_scenario(&data_cfg)?;
    let target = cfg.target_vec();
    let x_set = setup.x_set.clone();

    let mol_blocks: Vec<DMatrix<f64>> = setup.sets.mol_c.blocks().to_vec();
    let mut summary = RunSummary {
        feasible_at_t0: false,
        steps_completed: 0,
        violations: 0,
        broken: false,
        min_target_distance: f64::INFINITY,
        lambda_bar: None,
        steady_state_residual: setup.steady_state_residual,
    };
    let controller = match build_tzpc(
        x_set.h_mat(),
        setup.batch.x1(),
        setup.sets.mw_t.center(),
        setup.batch.x0(),
        setup.batch.d0_pinv(),
        &setup.sets.nominal_a,
        &setup.sets.nominal_b,
        &mol_blocks,
        &setup.zw,
        &setup.x_set,
        &setup.u_set,
        &(DMatrix::identity(3, 3) * cfg.q_scale),
        &(DMatrix::identity(4, 4) * cfg.r_scale),
    ) {
        Ok(c) => c,
        Err(e) => {
            log::debug!("baseline construction failed: {e}");
            return Ok(RunLog {
                config: cfg.clone(),
                warmup: vec![],
                steps: vec![],
                summary,
            });
        }
    };

    let mpc_cfg = MpcConfig::new(
        cfg.horizon,
        DMatrix::identity(3, 3) * cfg.q_scale,
        DMatrix::identity(4, 4) * cfg.r_scale,
        setup.sets.nominal_a.clone(),
        setup.sets.nominal_b.clone(),
    )?;
    let x_tight = tighten_state(&setup.x_shifted, &controller.tube)?;
    let u_tight = tighten_input(
        &setup.u_shifted,
        setup.batch.u0(),
        &controller.v_k_fix,
        &controller.tube,
    )?;
    if x_tight.h_vec().min() <= 1e-9 || u_tight.h_vec().min() <= 1e-9 {
        return Ok(RunLog {
            config: cfg.clone(),
            warmup: vec![],
            steps: vec![],
            summary,
        });
    }
    let Ok(terminal) = terminal_ingredients(&mpc_cfg, &x_tight, &u_tight, 50) else {
        return Ok(RunLog {
            config: cfg.clone(),
            warmup: vec![],
            steps: vec![],
            summary,
        });
    };
    let x0_shifted = &cfg.x0_vec() - &target;
    let Ok(mut anchor) = feasible_initial_nominal(&x0_shifted, &controller.tube, &x_tight)
    else {
        return Ok(RunLog {
            config: cfg.clone(),
            warmup: vec![],
            steps: vec![],
            summary,
        });
    };

    let mut steps = Vec::new();
    let bounds = crate::tubegain::FacetBounds {
        y: facet_y(x_set.h_mat(), &setup.zw).iter().copied().collect(),
        l: vec![0.0; controller.h_fix.len()],
        z: controller.offsets.iter().copied().collect(),
    };
    for t in 0..cfg.steps {
        let sol = solve_tmpc(&mpc_cfg, &x_tight, &u_tight, &terminal, &anchor);
        if sol.status != SolveStatus::Optimal {
            if t == 0 {
                return Ok(RunLog {
                    config: cfg.clone(),
                    warmup: vec![],
                    steps,
                    summary,
                });
            }
            summary.broken = true;
            break;
        }
        if t == 0 {
            summary.feasible_at_t0 = true;
        }
        let x_now = setup.plant.state.clone();
        let e = &(&x_now - &target) - &anchor;
        let v_rel = crate::tubegain::lyapunov_value(&e, &controller.tube);
        let u = &sol.inputs[0] + &setup.u_ss + &controller.k_fix * &e;
        if !setup.x_set.contains(&x_now) || !setup.u_set.contains(&u) {
            summary.violations += 1;
        }
        summary.min_target_distance = summary
            .min_target_distance
            .min((&x_now - &target).norm());
        setup.plant.step(&u, &mut setup.rng);
        steps.push(StepRecord {
            t,
            x: x_now.iter().copied().collect(),
            u: u.iter().copied().collect(),
            x_plan: sol
                .states
                .iter()
                .map(|s| (s + &target).iter().copied().collect())
                .collect(),
            u_plan: sol
                .inputs
                .iter()
                .map(|s| (s + &setup.u_ss).iter().copied().collect())
                .collect(),
            h_e: controller.h_fix.iter().copied().collect(),
            lambda: 1.0,
            rho: 0.0,
            lyapunov: v_rel,
            cost: sol.objective,
            lp_status: SolveStatus::Optimal,
            qp_status_initial: sol.status,
            qp_status: sol.status,
            frozen: true,
            certified: true,
            gain_held: false,
            qp_frozen: false,
            bounds: bounds.clone(),
            v_k_hash: hash_matrix(&controller.v_k_fix),
        });
        summary.steps_completed = t + 1;
        anchor = &setup.sets.nominal_a * &sol.states[0] + &setup.sets.nominal_b * &sol.inputs[0];
    }
    Ok(RunLog {
        config: cfg.clone(),
        warmup: vec![],
        steps,
        summary,
    })
}
