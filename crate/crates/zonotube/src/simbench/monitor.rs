//! Post-run monitors: the polytopic Lyapunov decay report and the invariant
//! verification suite over a run log.

use super::RunLog;
use crate::optim::SolveStatus;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Lyapunov decay and containment report for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorReport {
    /// Largest contraction factor over non-frozen steps.
    pub lambda_bar: Option<f64>,
    /// Geometric decay `V(e(t)) <= lambda_bar^t V(e(0)) + 1e-8` under the
    /// fixed initial-tube normalization, checked at non-frozen steps.
    pub decay_ok: bool,
    pub max_decay_violation: f64,
    /// Tube-relative containment `V_rel <= 1 + 1e-6` on every step.
    pub containment_ok: bool,
    pub max_v_rel: f64,
    /// Empirical disturbed offset `sup(V(e+) - lambda_bar V(e))` in the
    /// fixed normalization.
    pub disturbed_offset: f64,
    pub notes: Vec<String>,
}

fn step_error(log: &RunLog, idx: usize) -> Option<DVector<f64>> {
    let s = &log.steps[idx];
    let anchor = s.x_plan.first()?;
    let n = s.x.len();
    Some(DVector::from_fn(n, |i, _| s.x[i] - anchor[i]))
}

/// Lyapunov value in a fixed normalization given by the tube scaling of the
/// reference step.
fn v_fixed(e: &DVector<f64>, h_ref: &[f64]) -> f64 {
    // Facet rows of the tube equal the admissible-set rows: the first half
    // are +I rows, the second half -I rows for the box scenarios; evaluate
    // generically through the recorded scalings assuming the box pattern.
    let n = e.len();
    let mut v = f64::NEG_INFINITY;
    for j in 0..h_ref.len() {
        let he = if j < n {
            e[j]
        } else {
            -e[j - n]
        };
        v = v.max(he / h_ref[j]);
    }
    v
}

/// Compute the decay/containment report for a completed run.
pub fn lyapunov_monitor(log: &RunLog) -> MonitorReport {
    let mut notes = Vec::new();
    let lambda_bar = log.summary.lambda_bar;
    let mut max_v_rel = f64::NEG_INFINITY;
    for s in &log.steps {
        if s.lyapunov.is_finite() {
            max_v_rel = max_v_rel.max(s.lyapunov);
        }
    }
    let containment_ok = max_v_rel <= 1.0 + 1e-6;

    let mut decay_ok = true;
    let mut max_decay_violation: f64 = 0.0;
    let mut disturbed_offset = f64::NEG_INFINITY;
    if let (Some(lb), Some(first)) = (lambda_bar, log.steps.first()) {
        let h_ref = first.h_e.clone();
        let v0 = step_error(log, 0)
            .map(|e| v_fixed(&e, &h_ref))
            .unwrap_or(0.0);
        let mut bound = v0;
        for t in 1..log.steps.len() {
            bound *= lb;
            let Some(e) = step_error(log, t) else {
                continue;
            };
            let v = v_fixed(&e, &h_ref);
            if let Some(e_prev) = step_error(log, t - 1) {
                let vp = v_fixed(&e_prev, &h_ref);
                disturbed_offset = disturbed_offset.max(v - lb * vp);
            }
            if log.steps[t].frozen {
                continue;
            }
            let violation = v - bound - 1e-8;
            if violation > 0.0 {
                decay_ok = false;
                max_decay_violation = max_decay_violation.max(violation);
            }
        }
    } else {
        notes.push("no contraction steps recorded".into());
    }
    MonitorReport {
        lambda_bar,
        decay_ok,
        max_decay_violation,
        containment_ok,
        max_v_rel: if max_v_rel.is_finite() { max_v_rel } else { 0.0 },
        disturbed_offset: if disturbed_offset.is_finite() {
            disturbed_offset
        } else {
            0.0
        },
        notes,
    }
}

/// One named invariant check over a run log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Invariant suite over a run log: safety, tube monotonicity, containment,
/// factor ranges, and the feasibility-propagation regression.
pub fn verify_runlog(log: &RunLog) -> Vec<VerifyCheck> {
    let mut checks = Vec::new();
    let all_optimal = log
        .steps
        .iter()
        .all(|s| s.qp_status == SolveStatus::Optimal && s.lp_status == SolveStatus::Optimal);
    checks.push(VerifyCheck {
        name: "safety".into(),
        pass: !all_optimal || log.summary.violations == 0,
        detail: format!(
            "violations = {} (all statuses optimal: {all_optimal})",
            log.summary.violations
        ),
    });

    let mut monotone = true;
    for t in 1..log.steps.len() {
        let prev = &log.steps[t - 1];
        let cur = &log.steps[t];
        if prev.frozen {
            continue;
        }
        for j in 0..cur.h_e.len().min(prev.h_e.len()) {
            if cur.h_e[j] > prev.h_e[j] * (1.0 + 1e-9) {
                monotone = false;
            }
        }
    }
    checks.push(VerifyCheck {
        name: "tube-monotone".into(),
        pass: monotone,
        detail: "tube scalings non-increasing on non-frozen steps".into(),
    });

    let lam_ok = log
        .steps
        .iter()
        .all(|s| s.lambda > 0.0 && s.lambda <= 1.0 + 1e-12);
    checks.push(VerifyCheck {
        name: "lambda-range".into(),
        pass: lam_ok,
        detail: "applied factors within (0, 1]".into(),
    });

    let report = lyapunov_monitor(log);
    checks.push(VerifyCheck {
        name: "containment".into(),
        pass: report.containment_ok,
        detail: format!("max tube-relative value {:.6}", report.max_v_rel),
    });

    let mut regression = true;
    for t in 1..log.steps.len() {
        let prev = &log.steps[t - 1];
        let cur = &log.steps[t];
        let lp_prev_ok = prev.lp_status == SolveStatus::Optimal;
        if prev.qp_status_initial == SolveStatus::Optimal
            && lp_prev_ok
            && cur.qp_status_initial == SolveStatus::Infeasible
        {
            regression = false;
        }
    }
    checks.push(VerifyCheck {
        name: "feasibility-propagation".into(),
        pass: regression,
        detail: "no solvable-then-unsolvable transition after a certified update".into(),
    });

    checks.push(VerifyCheck {
        name: "completed".into(),
        pass: log.summary.broken || log.summary.steps_completed == log.config.steps
            || !log.summary.feasible_at_t0,
        detail: format!(
            "{} of {} steps (broken: {})",
            log.summary.steps_completed, log.config.steps, log.summary.broken
        ),
    });
    checks
}
