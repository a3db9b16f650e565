//! Monte-Carlo feasibility sweeps over noise levels and data lengths.
//!
//! Each grid point runs independent scenarios with fresh seeds; workers run
//! in a dedicated thread pool capped by `ZONOTUBE_WORKERS`. Results are
//! deterministic for a fixed base seed regardless of thread scheduling.

use super::{simulate_closed_loop, ControllerKind, FeasibilityMetric, ScenarioConfig};
use crate::sysid::PriorMode;
use serde::{Deserialize, Serialize};

/// One cell of the sweep grid.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepPoint {
    pub t_len: usize,
    pub alpha: f64,
    pub controller: ControllerKind,
    pub prior: PriorMode,
}

impl SweepPoint {
    pub fn method_name(&self) -> String {
        match self.controller {
            ControllerKind::Tzpc => "tzpc".to_string(),
            ControllerKind::Elastic => format!("elastic_{}", self.prior),
        }
    }
}

/// Aggregated result for one grid cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    #[serde(rename = "T")]
    pub t_len: usize,
    pub alpha: f64,
    pub feasible_pct: f64,
    pub runs: usize,
}

fn run_is_feasible(cfg: &ScenarioConfig) -> bool {
    match simulate_closed_loop(cfg) {
        Ok(log) => match cfg.feasibility {
            FeasibilityMetric::T0 => log.summary.feasible_at_t0,
            FeasibilityMetric::WholeRun => {
                log.summary.feasible_at_t0
                    && !log.summary.broken
                    && log.summary.violations == 0
                    && log.summary.steps_completed == cfg.steps
            }
        },
        Err(_) => false,
    }
}

/// Number of workers: explicit override, then the environment cap, then the
/// available parallelism.
pub fn worker_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| {
            std::env::var("ZONOTUBE_WORKERS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1)
}

/// Run `runs` scenarios per grid point and report feasibility percentages.
pub fn run_feasibility_sweep(
    base: &ScenarioConfig,
    grid: &[SweepPoint],
    runs: usize,
    workers: Option<usize>,
) -> Vec<SweepRow> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(workers))
        .build()
        .expect("worker pool");
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..runs).map(move |r| (g, r)))
        .collect();
    use rayon::prelude::*;
    let outcomes: Vec<bool> = pool.install(|| {
        jobs.par_iter()
            .map(|&(g, r)| {
                let point = grid[g];
                let mut cfg = base.clone();
                cfg.t_len = point.t_len;
                cfg.alpha = point.alpha;
                cfg.controller = point.controller;
                cfg.prior = point.prior;
                // Independent batches and disturbance streams per repetition,
                // shared across methods at the same repetition index.
                cfg.seed = base
                    .seed
                    .wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                run_is_feasible(&cfg)
            })
            .collect()
    });
    grid.iter()
        .enumerate()
        .map(|(g, point)| {
            let ok = (0..runs).filter(|r| outcomes[g * runs + r]).count();
            SweepRow {
                method: point.method_name(),
                t_len: point.t_len,
                alpha: point.alpha,
                feasible_pct: 100.0 * ok as f64 / runs.max(1) as f64,
                runs,
            }
        })
        .collect()
}

/// Fixed-header CSV for sweep results.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("method,T,alpha,feasible_pct,runs\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method, r.t_len, r.alpha, r.feasible_pct, r.runs
        ));
    }
    out
}
