//! Closed-loop simulation benchmark: the mecanum-robot plant, scenario
//! configuration, the alternating tube-MPC loop, the fixed-tube baseline,
//! Monte-Carlo feasibility sweeps, and run verification.

mod monitor;
mod sweep;
mod tzpc;

pub use monitor::{lyapunov_monitor, verify_runlog, MonitorReport, VerifyCheck};
pub use sweep::{run_feasibility_sweep, sweep_to_csv, SweepPoint, SweepRow};
pub use tzpc::{build_tzpc, fixed_point_tube, simulate_tzpc, TzpcController, TzpcError};

use crate::optim::SolveStatus;
use crate::setops::{concat_disturbance, Polytope, VertexCap, Zonotope};
use crate::sysid::{
    build_model_sets, build_prior_from_offline, collect_batch, DataBatch, ExcitationConfig,
    ModelSets, PriorMode, PriorSet, SysIdError,
};
use crate::tmpc::{
    feasible_initial_nominal, solve_tmpc, terminal_ingredients, tighten_input, tighten_state,
    MpcConfig, TerminalIngredients, TmpcError,
};
use crate::tubegain::{
    build_pdw, lyapunov_value, update_tube, FacetBounds, TubeGainContext, TubeGainError,
    TubeGainOptions, TubeGainOutcome, TubeGainSolution, TubeState,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    SysId(#[from] SysIdError),
    #[error(transparent)]
    Tube(#[from] TubeGainError),
    #[error(transparent)]
    Tmpc(#[from] TmpcError),
    #[error(transparent)]
    Set(#[from] crate::setops::SetError),
    #[error("baseline construction failed: {0}")]
    Baseline(#[from] TzpcError),
    #[error("configuration error: {0}")]
    Config(String),
}

// ---------------------------------------------------------------------------
// Plant
// ---------------------------------------------------------------------------

/// Simulated ground-truth plant `x+ = A x + B u + w`, `w` drawn from a
/// zonotope.
#[derive(Debug, Clone)]
pub struct Plant {
    pub a_true: DMatrix<f64>,
    pub b_true: DMatrix<f64>,
    pub zw_true: Zonotope,
    pub state: DVector<f64>,
}

impl Plant {
    pub fn new(
        a_true: DMatrix<f64>,
        b_true: DMatrix<f64>,
        zw_true: Zonotope,
        state: DVector<f64>,
    ) -> Self {
        Self {
            a_true,
            b_true,
            zw_true,
            state,
        }
    }

    /// Advance one step with a freshly sampled disturbance; returns the
    /// applied disturbance.
    pub fn step<R: Rng + ?Sized>(&mut self, u: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let w = self.zw_true.sample(rng);
        self.state = &self.a_true * &self.state + &self.b_true * u + &w;
        w
    }

    pub fn theta(&self) -> DMatrix<f64> {
        let n = self.a_true.nrows();
        let m = self.b_true.ncols();
        let mut th = DMatrix::zeros(n, n + m);
        th.columns_mut(0, n).copy_from(&self.a_true);
        th.columns_mut(n, m).copy_from(&self.b_true);
        th
    }
}

// Mecanum platform constants: wheel radius and half-spacing sum, in meters.
const WHEEL_RADIUS: f64 = 0.05;
const HALF_SPACING_SUM: f64 = 0.13484 + 0.085;

/// Discrete kinematic model of the mecanum platform for a sampling time:
/// identity state matrix and the wheel-mixing input matrix.
pub fn rosbot_model(ts: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    assert!(ts > 0.0, "sampling time must be positive");
    let l = HALF_SPACING_SUM;
    let pattern =
        DMatrix::from_row_slice(3, 4, &[l, l, l, l, l, -l, l, -l, 1.0, -1.0, -1.0, 1.0]);
    let a = DMatrix::identity(3, 3);
    let b = pattern * (WHEEL_RADIUS * ts / (4.0 * l));
    (a, b)
}

/// Base disturbance directions of the robot scenario, scaled by the noise
/// factor.
pub fn rosbot_disturbance(alpha: f64) -> Zonotope {
    let g = DMatrix::from_row_slice(3, 2, &[0.05, 0.08, 0.01, 0.06, 0.03, -0.01]) * alpha;
    Zonotope::new(DVector::zeros(3), g).expect("valid disturbance zonotope")
}

/// Admissible state box: planar position within 4 m, yaw within pi/2.
pub fn rosbot_state_set() -> Polytope {
    Polytope::box_from_halfwidths(&DVector::from_vec(vec![
        4.0,
        4.0,
        std::f64::consts::FRAC_PI_2,
    ]))
}

/// Admissible input box: wheel rates within 100 rad/s.
pub fn rosbot_input_set() -> Polytope {
    Polytope::box_from_halfwidths(&DVector::from_element(4, 100.0))
}

/// Disturbance zonotope of the offline prior experiment.
pub fn rosbot_prior_disturbance() -> Zonotope {
    let g = DMatrix::from_row_slice(3, 2, &[0.03, -0.01, -0.04, 0.05, -0.01, 0.0]);
    Zonotope::new(DVector::from_vec(vec![1.0, -1.0, 0.0]), g).expect("valid prior disturbance")
}

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

/// Which controller a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Elastic,
    Tzpc,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ControllerKind::Elastic => "elastic",
            ControllerKind::Tzpc => "tzpc",
        })
    }
}

/// Feasibility event counted by sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeasibilityMetric {
    /// Initial tube-gain program and initial horizon program both solvable.
    T0,
    /// Additionally every later step stays solvable with zero violations.
    WholeRun,
}

/// Full description of one closed-loop scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(rename = "T")]
    pub t_len: usize,
    pub alpha: f64,
    pub prior: PriorMode,
    pub controller: ControllerKind,
    pub x0: Vec<f64>,
    pub target_state: Vec<f64>,
    pub seed: u64,
    pub steps: usize,
    pub sigma: f64,
    pub ts: f64,
    pub horizon: usize,
    #[serde(rename = "Q_scale")]
    pub q_scale: f64,
    #[serde(rename = "R_scale")]
    pub r_scale: f64,
    #[serde(rename = "terminal.recompute_ratio")]
    pub terminal_recompute_ratio: f64,
    pub excitation_fraction: f64,
    /// Offline batch length used to build the prior.
    pub offline_len: usize,
    /// Cap on tube-sizing iterations before the first horizon solve.
    pub warmup_cap: usize,
    /// Fraction of each facet budget reserved for mismatch fluctuation when
    /// shrinking the tube.
    pub shrink_headroom: f64,
    /// Relative floor on the tube scaling (guards noiseless runs against
    /// shrinking below floating-point noise).
    pub tube_floor_ratio: f64,
    pub lambda_min: f64,
    pub feasibility: FeasibilityMetric,
}

impl ScenarioConfig {
    /// Robot case-study defaults: noisy batch of 20, noise factor 0.7,
    /// boundary start steered to the near-corner target.
    pub fn rosbot_default() -> Self {
        Self {
            t_len: 20,
            alpha: 0.7,
            prior: PriorMode::DataPrior,
            controller: ControllerKind::Elastic,
            x0: vec![4.0, 4.0, std::f64::consts::FRAC_PI_2],
            target_state: vec![-3.5, -3.5, -std::f64::consts::FRAC_PI_4],
            seed: 7,
            steps: 60,
            sigma: 1.0,
            ts: 0.5,
            horizon: 10,
            q_scale: 20.0,
            r_scale: 0.1,
            terminal_recompute_ratio: 0.5,
            excitation_fraction: 1.0,
            offline_len: 17,
            warmup_cap: 30,
            shrink_headroom: 0.5,
            tube_floor_ratio: 1e-7,
            lambda_min: 1e-3,
            feasibility: FeasibilityMetric::T0,
        }
    }

    /// Sweep defaults: regulation to the origin, one closed-loop step (the
    /// feasibility statistic then isolates the initial programs).
    pub fn sweep_default() -> Self {
        Self {
            target_state: vec![0.0, 0.0, 0.0],
            steps: 1,
            ..Self::rosbot_default()
        }
    }

    pub fn x0_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }

    pub fn target_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.target_state.clone())
    }
}

// ---------------------------------------------------------------------------
// Run log
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmupRecord {
    pub iter: usize,
    pub lp_status: SolveStatus,
    pub lambda_applied: f64,
    pub h_e: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    /// Nominal plan in true coordinates.
    pub x_plan: Vec<Vec<f64>>,
    pub u_plan: Vec<Vec<f64>>,
    /// Tube scaling used by this step's horizon program.
    pub h_e: Vec<f64>,
    /// Contraction factor applied to produce the next tube.
    pub lambda: f64,
    pub rho: f64,
    /// Tube-relative Lyapunov value of the step's error.
    #[serde(with = "nan_as_null")]
    pub lyapunov: f64,
    #[serde(with = "nan_as_null")]
    pub cost: f64,
    pub lp_status: SolveStatus,
    /// Horizon-program status before any freeze fallback.
    pub qp_status_initial: SolveStatus,
    pub qp_status: SolveStatus,
    /// No tube shrink was applied this step.
    pub frozen: bool,
    /// The applied gain carries a certificate valid for this step's pair.
    pub certified: bool,
    /// Fallback applied the tightening gain instead of the fresh one.
    pub gain_held: bool,
    /// The freeze fallback re-solved the horizon program.
    pub qp_frozen: bool,
    pub bounds: FacetBounds,
    pub v_k_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub feasible_at_t0: bool,
    pub steps_completed: usize,
    pub violations: usize,
    pub broken: bool,
    #[serde(with = "nan_as_null")]
    pub min_target_distance: f64,
    /// Largest contraction factor over non-frozen steps.
    pub lambda_bar: Option<f64>,
    pub steady_state_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunLog {
    pub config: ScenarioConfig,
    pub warmup: Vec<WarmupRecord>,
    pub steps: Vec<StepRecord>,
    pub summary: RunSummary,
}

impl RunLog {
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(self)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    /// Plot-ready CSV: state, input, nominal anchor, tube scalings per step.
    pub fn trajectory_csv(&self) -> String {
        let mut out = String::new();
        let n = self.config.x0.len();
        let q = self.steps.first().map(|s| s.h_e.len()).unwrap_or(2 * n);
        let m = self.steps.first().map(|s| s.u.len()).unwrap_or(0);
        let mut header: Vec<String> = vec!["t".into()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=n).map(|i| format!("xnom{i}")));
        header.extend((1..=q).map(|i| format!("h_e{i}")));
        header.extend(["lambda".into(), "lyapunov".into(), "frozen".into()]);
        out.push_str(&header.join(","));
        out.push('\n');
        for s in &self.steps {
            let mut row: Vec<String> = vec![s.t.to_string()];
            row.extend(s.x.iter().map(|v| v.to_string()));
            row.extend(s.u.iter().map(|v| v.to_string()));
            let anchor = s.x_plan.first().cloned().unwrap_or_else(|| vec![f64::NAN; n]);
            row.extend(anchor.iter().map(|v| v.to_string()));
            row.extend(s.h_e.iter().map(|v| v.to_string()));
            row.push(s.lambda.to_string());
            row.push(s.lyapunov.to_string());
            row.push((s.frozen as u8).to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Non-finite floats serialize as null instead of breaking the JSON schema.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

fn hash_matrix(m: &DMatrix<f64>) -> String {
    // FNV-1a over the entry bit patterns; enough to spot gain changes in logs.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in m.iter() {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

// ---------------------------------------------------------------------------
// Scenario assembly
// ---------------------------------------------------------------------------

/// Everything a controller needs, built deterministically from a scenario
/// seed: plant, data batch, model sets, and shifted admissible sets.
pub struct ScenarioSetup {
    pub plant: Plant,
    pub batch: DataBatch,
    pub sets: ModelSets,
    pub x_set: Polytope,
    pub u_set: Polytope,
    /// Admissible sets shifted so the target is the origin.
    pub x_shifted: Polytope,
    pub u_shifted: Polytope,
    pub u_ss: DVector<f64>,
    pub steady_state_residual: f64,
    pub zw: Zonotope,
    pub rng: ChaCha8Rng,
}

/// Build the plant, collect the batch (and the offline prior batch when the
/// mode needs one), and assemble all model sets.
pub fn prepare_scenario(cfg: &ScenarioConfig) -> Result<ScenarioSetup, SimError> {
    let (a_true, b_true) = rosbot_model(cfg.ts);
    let zw = rosbot_disturbance(cfg.alpha);
    let x_set = rosbot_state_set();
    let u_set = rosbot_input_set();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let excitation = ExcitationConfig {
        fraction: cfg.excitation_fraction,
        retry_cap: 20,
    };

    let prior = match cfg.prior {
        PriorMode::DataPrior => {
            let zwp = rosbot_prior_disturbance();
            let offline = collect_batch(
                &a_true,
                &b_true,
                &zwp,
                &DVector::zeros(3),
                &Polytope::box_from_halfwidths(&DVector::from_element(4, 5.0)),
                cfg.offline_len,
                &ExcitationConfig {
                    fraction: 1.0,
                    retry_cap: 20,
                },
                &mut rng,
            )?;
            let mwp_t = concat_disturbance(&zwp, offline.len())?;
            Some(build_prior_from_offline(&offline, &mwp_t)?)
        }
        PriorMode::Exact => {
            let mut th = DMatrix::zeros(3, 7);
            th.columns_mut(0, 3).copy_from(&a_true);
            th.columns_mut(3, 4).copy_from(&b_true);
            Some(PriorSet::exact(th)?)
        }
        _ => None,
    };

    let batch = collect_batch(
        &a_true,
        &b_true,
        &zw,
        &DVector::zeros(3),
        &u_set,
        cfg.t_len,
        &excitation,
        &mut rng,
    )?;
    let sets = build_model_sets(&batch, &zw, cfg.prior, prior.as_ref())?;

    let target = cfg.target_vec();
    // Nominal steady-state input for the shifted origin; exactness logged.
    let rhs = (DMatrix::identity(3, 3) - &sets.nominal_a) * &target;
    let u_ss = sets
        .nominal_b
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .unwrap_or_else(|_| DVector::zeros(4));
    let steady_state_residual = (&sets.nominal_b * &u_ss - &rhs).amax();
    if steady_state_residual > 1e-9 {
        log::warn!("no exact steady-state input: residual {steady_state_residual:.3e}");
    }
    let x_shifted = x_set.shift(&target);
    let u_shifted = u_set.shift(&u_ss);
    let plant = Plant::new(a_true, b_true, zw.clone(), cfg.x0_vec());
    Ok(ScenarioSetup {
        plant,
        batch,
        sets,
        x_set,
        u_set,
        x_shifted,
        u_shifted,
        u_ss,
        steady_state_residual,
        zw,
        rng,
    })
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

#[derive(Clone)]
struct TightenedSets {
    x_tight: Polytope,
    u_tight: Polytope,
}

fn tightened(
    setup: &ScenarioSetup,
    tube: &TubeState,
    v_k: &DMatrix<f64>,
) -> Result<TightenedSets, SimError> {
    let x_tight = tighten_state(&setup.x_shifted, tube)?;
    let u_tight = tighten_input(&setup.u_shifted, setup.batch.u0(), v_k, tube)?;
    Ok(TightenedSets { x_tight, u_tight })
}

fn sets_nonempty(t: &TightenedSets) -> bool {
    t.x_tight.h_vec().min() > 1e-9 && t.u_tight.h_vec().min() > 1e-9
}

/// Smallest factor keeping the facet budgets within the shrink headroom:
/// below it, disturbance and mismatch terms consume more than
/// `1 - headroom` of the budget.
fn headroom_floor(y: &DVector<f64>, z: &[f64], h: &DVector<f64>, headroom: f64) -> f64 {
    let mut lam = 0.0f64;
    for j in 0..h.len() {
        lam = lam.max((y[j] + z[j]) / ((1.0 - headroom) * h[j]));
    }
    lam.min(1.0)
}

/// Largest ratio of tube support to budget over the state facets and, when a
/// gain is known, the ancillary-action facets: above one the tightened sets
/// of the horizon program would be empty.
fn fit_ratio(
    setup: &ScenarioSetup,
    tube: &TubeState,
    gain_k: Option<&DMatrix<f64>>,
    margin: f64,
) -> f64 {
    let tube_poly = tube.polytope();
    let mut need = 0.0f64;
    for j in 0..setup.x_shifted.num_facets() {
        let sup = tube_poly
            .support(&setup.x_shifted.h_mat().row(j).transpose())
            .unwrap_or(f64::INFINITY);
        need = need.max(sup / (margin * setup.x_shifted.h_vec()[j]));
    }
    if let Some(k) = gain_k {
        for j in 0..setup.u_shifted.num_facets() {
            let d = (setup.u_shifted.h_mat().row(j) * k).transpose();
            let sup = tube_poly.support(&d).unwrap_or(f64::INFINITY);
            need = need.max(sup / (margin * setup.u_shifted.h_vec()[j]));
        }
    }
    need
}

/// Run the configured closed loop for a scenario. Structured statuses only;
/// infeasibility ends the run with an honest summary, never a panic.
pub fn simulate_closed_loop(cfg: &ScenarioConfig) -> Result<RunLog, SimError> {
    match cfg.controller {
        ControllerKind::Elastic => simulate_elastic(cfg),
        ControllerKind::Tzpc => simulate_tzpc(cfg),
    }
}

fn simulate_elastic(cfg: &ScenarioConfig) -> Result<RunLog, SimError> {
    let mut setup = prepare_scenario(cfg)?;
    let target = cfg.target_vec();
    let pdw = build_pdw(&setup.sets.mdw, &VertexCap::default())?;
    let ctx = TubeGainContext::new(
        setup.x_set.h_mat(),
        &setup.batch,
        &setup.sets.mdw,
        pdw,
        &setup.zw,
    )?;
    let mpc_cfg = MpcConfig::new(
        cfg.horizon,
        DMatrix::identity(3, 3) * cfg.q_scale,
        DMatrix::identity(4, 4) * cfg.r_scale,
        setup.sets.nominal_a.clone(),
        setup.sets.nominal_b.clone(),
    )?;

    let mut warmup = Vec::new();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut summary = RunSummary {
        feasible_at_t0: false,
        steps_completed: 0,
        violations: 0,
        broken: false,
        min_target_distance: f64::INFINITY,
        lambda_bar: None,
        steady_state_residual: setup.steady_state_residual,
    };
    let bail = |warmup: Vec<WarmupRecord>, steps: Vec<StepRecord>, summary: RunSummary| RunLog {
        config: cfg.clone(),
        warmup,
        steps,
        summary,
    };

    // ---- tube warm-up with the bootstrap pair (measured state, zero input) ----
    let x0_true = cfg.x0_vec();
    let z_boot = ctx.facet_z(&x0_true, &DVector::zeros(4))?;
    let mut tube = TubeState::initial(&setup.x_set)?;
    let floor_scale = cfg.tube_floor_ratio * tube.h_vec().max();
    let margin = 0.92;
    let lp_opts = TubeGainOptions {
        sigma: cfg.sigma,
        lambda_min: cfg.lambda_min,
        ..TubeGainOptions::default()
    };
    let mut gain_sol: Option<Box<TubeGainSolution>> = None;
    let mut lp0_optimal = false;
    for it in 0..cfg.warmup_cap {
        if let Some(sol) = &gain_sol {
            // Stop once the tube fits both the state budgets and the
            // ancillary-action budgets of the current gain.
            if fit_ratio(&setup, &tube, Some(&sol.gain.k), margin) <= 1.0 {
                break;
            }
        }
        match ctx.solve_with_z(&tube, &z_boot, &lp_opts)? {
            TubeGainOutcome::Optimal(sol) => {
                if it == 0 {
                    lp0_optimal = true;
                }
                // Shrink only as far as the horizon program needs.
                let need = fit_ratio(&setup, &tube, Some(&sol.gain.k), margin);
                let lam_eff = sol
                    .lambda
                    .max(if need > 1.0 { 1.0 / need } else { 1.0 })
                    .min(1.0 - 1e-12);
                tube = update_tube(&tube, lam_eff)?;
                warmup.push(WarmupRecord {
                    iter: it,
                    lp_status: SolveStatus::Optimal,
                    lambda_applied: lam_eff,
                    h_e: tube.h_vec().iter().copied().collect(),
                });
                gain_sol = Some(sol);
            }
            TubeGainOutcome::Infeasible { .. } => {
                warmup.push(WarmupRecord {
                    iter: it,
                    lp_status: SolveStatus::Infeasible,
                    lambda_applied: 1.0,
                    h_e: tube.h_vec().iter().copied().collect(),
                });
                break;
            }
        }
        if tube.h_vec().max() < floor_scale {
            break;
        }
    }
    let Some(mut gain_sol) = gain_sol else {
        return Ok(bail(warmup, steps, summary));
    };

    let mut tight = tightened(&setup, &tube, &gain_sol.gain.v_k)?;
    if !sets_nonempty(&tight) {
        return Ok(bail(warmup, steps, summary));
    }
    let Ok(mut terminal) = terminal_ingredients(&mpc_cfg, &tight.x_tight, &tight.u_tight, 50)
    else {
        return Ok(bail(warmup, steps, summary));
    };
    let mut tube_at_terminal = tube.h_vec().max();

    // Initial nominal anchor (boundary starts need the tube offset).
    let x0_shifted = &x0_true - &target;
    let Ok(mut anchor) = feasible_initial_nominal(&x0_shifted, &tube, &tight.x_tight) else {
        return Ok(bail(warmup, steps, summary));
    };

    let mut qp0_optimal = false;
    let mut prev: Option<(TubeState, Box<TubeGainSolution>, TightenedSets, TerminalIngredients)> =
        None;
    for t in 0..cfg.steps {
        // ---- horizon program with the current tube and gain ----
        let mut sol_mpc = solve_tmpc(&mpc_cfg, &tight.x_tight, &tight.u_tight, &terminal, &anchor);
        let qp_status_initial = sol_mpc.status;
        let mut qp_frozen = false;
        if sol_mpc.status != SolveStatus::Optimal && t > 0 {
            // Freeze fallback: restore the previous tube, gain, and terminal
            // ingredients once, then re-solve.
            if let Some((tube_p, sol_p, tight_p, term_p)) = prev.take() {
                tube = tube_p;
                gain_sol = sol_p;
                tight = tight_p;
                terminal = term_p;
                qp_frozen = true;
                sol_mpc = solve_tmpc(&mpc_cfg, &tight.x_tight, &tight.u_tight, &terminal, &anchor);
            }
        }
        if sol_mpc.status != SolveStatus::Optimal {
            steps.push(StepRecord {
                t,
                x: setup.plant.state.iter().copied().collect(),
                u: vec![],
                x_plan: vec![],
                u_plan: vec![],
                h_e: tube.h_vec().iter().copied().collect(),
                lambda: 1.0,
                rho: gain_sol.gain.rho,
                lyapunov: f64::NAN,
                cost: f64::NAN,
                lp_status: SolveStatus::Optimal,
                qp_status_initial,
                qp_status: sol_mpc.status,
                frozen: true,
                certified: false,
                gain_held: false,
                qp_frozen,
                bounds: gain_sol.bounds.clone(),
                v_k_hash: hash_matrix(&gain_sol.gain.v_k),
            });
            if t > 0 {
                summary.broken = true;
            }
            return Ok(bail(warmup, steps, summary));
        }
        if t == 0 {
            qp0_optimal = true;
            summary.feasible_at_t0 = lp0_optimal && qp0_optimal;
        }

        let x_now = setup.plant.state.clone();
        let e = &(&x_now - &target) - &anchor;
        let v_rel = lyapunov_value(&e, &tube);
        let h_e_record: Vec<f64> = tube.h_vec().iter().copied().collect();
        let pair_x = &sol_mpc.states[0] + &target;
        let pair_u = &sol_mpc.inputs[0] + &setup.u_ss;

        // ---- tube-gain program with the fresh pair ----
        let z_fresh = ctx.facet_z(&pair_x, &pair_u)?;
        let mut lp_status = SolveStatus::Optimal;
        let mut frozen = false;
        let mut certified = true;
        let mut fresh: Option<Box<TubeGainSolution>> = None;
        match ctx.solve_with_z(&tube, &z_fresh, &lp_opts)? {
            TubeGainOutcome::Optimal(sol) => fresh = Some(sol),
            TubeGainOutcome::Infeasible { .. } => {
                // Invariance-mode retry keeps the step certified at factor 1.
                match ctx.solve_with_z(&tube, &z_fresh, &TubeGainOptions::invariance(cfg.sigma))? {
                    TubeGainOutcome::Optimal(sol) => {
                        fresh = Some(sol);
                        frozen = true;
                    }
                    TubeGainOutcome::Infeasible { .. } => {
                        lp_status = SolveStatus::Infeasible;
                        frozen = true;
                        certified = ctx.certificate_holds(&tube, &gain_sol, &z_fresh, 1e-7);
                    }
                }
            }
        }

        let mut gain_held = false;
        if let Some(sol) = fresh {
            // The horizon program tightened inputs with the previous gain;
            // verify the fresh gain pointwise before applying it.
            let u_try = &sol_mpc.inputs[0] + &setup.u_ss + &sol.gain.k * &e;
            if setup.u_set.contains(&u_try) {
                gain_sol = sol;
            } else {
                gain_held = true;
                certified = ctx.certificate_holds(&tube, &gain_sol, &z_fresh, 1e-7);
            }
        }

        // ---- apply the input and step the plant ----
        let u = &sol_mpc.inputs[0] + &setup.u_ss + &gain_sol.gain.k * &e;
        if !setup.x_set.contains(&x_now) || !setup.u_set.contains(&u) {
            summary.violations += 1;
        }
        summary.min_target_distance = summary
            .min_target_distance
            .min((&x_now - &target).norm());
        setup.plant.step(&u, &mut setup.rng);

        // ---- tube update with headroom and floor policies ----
        prev = Some((
            tube.clone(),
            gain_sol.clone(),
            tight.clone(),
            terminal.clone(),
        ));
        let mut lambda_applied = 1.0;
        if !frozen && lp_status == SolveStatus::Optimal {
            let lam_head = headroom_floor(
                ctx.facet_y(),
                &gain_sol.bounds.z,
                tube.h_vec(),
                cfg.shrink_headroom,
            );
            let mut lam_eff = gain_sol.lambda.max(lam_head).min(1.0);
            if (tube.h_vec().max() * lam_eff) < floor_scale {
                lam_eff = 1.0;
            }
            if lam_eff < 1.0 {
                let tube_next = update_tube(&tube, lam_eff)?;
                let tight_next = tightened(&setup, &tube_next, &gain_sol.gain.v_k)?;
                if sets_nonempty(&tight_next) {
                    tube = tube_next;
                    tight = tight_next;
                    lambda_applied = lam_eff;
                } else {
                    frozen = true;
                }
            } else {
                frozen = true;
            }
        }
        if frozen || lambda_applied >= 1.0 {
            // Refresh the input tightening for the possibly-new gain.
            let tight_next = tightened(&setup, &tube, &gain_sol.gain.v_k)?;
            if sets_nonempty(&tight_next) {
                tight = tight_next;
            }
        }

        // Recompute terminal ingredients once the tube shrank enough; a
        // smaller tube only enlarges the tightened sets, so the old set
        // stays valid in between.
        if tube.h_vec().max() < cfg.terminal_recompute_ratio * tube_at_terminal {
            if let Ok(t_new) = terminal_ingredients(&mpc_cfg, &tight.x_tight, &tight.u_tight, 50) {
                terminal = t_new;
                tube_at_terminal = tube.h_vec().max();
            }
        }

        if !frozen {
            summary.lambda_bar = Some(summary.lambda_bar.unwrap_or(0.0).max(lambda_applied));
        }
        steps.push(StepRecord {
            t,
            x: x_now.iter().copied().collect(),
            u: u.iter().copied().collect(),
            x_plan: sol_mpc
                .states
                .iter()
                .map(|s| (s + &target).iter().copied().collect())
                .collect(),
            u_plan: sol_mpc
                .inputs
                .iter()
                .map(|s| (s + &setup.u_ss).iter().copied().collect())
                .collect(),
            h_e: h_e_record,
            lambda: if frozen { 1.0 } else { lambda_applied },
            rho: gain_sol.gain.rho,
            lyapunov: v_rel,
            cost: sol_mpc.objective,
            lp_status,
            qp_status_initial,
            qp_status: sol_mpc.status,
            frozen,
            certified,
            gain_held,
            qp_frozen,
            bounds: gain_sol.bounds.clone(),
            v_k_hash: hash_matrix(&gain_sol.gain.v_k),
        });
        summary.steps_completed = t + 1;

        // The nominal anchor propagates through the nominal dynamics.
        anchor =
            &setup.sets.nominal_a * &sol_mpc.states[0] + &setup.sets.nominal_b * &sol_mpc.inputs[0];
    }
    summary.feasible_at_t0 = lp0_optimal && qp0_optimal;
    Ok(RunLog {
        config: cfg.clone(),
        warmup,
        steps,
        summary,
    })
}

/// Single seeded run exporting the trajectory, nominal plan, and tube
/// scalings (the phase-portrait artifact).
pub fn run_phase_portrait(cfg: &ScenarioConfig) -> Result<(RunLog, String), SimError> {
    let log = simulate_closed_loop(cfg)?;
    let csv = log.trajectory_csv();
    Ok((log, csv))
}
