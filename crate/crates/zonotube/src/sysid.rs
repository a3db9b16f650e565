//! Input–state data batches and the model/disturbance set constructions.
//!
//! From a short excitation experiment the module builds: the horizon
//! concatenation of the disturbance set, the open-loop model set consistent
//! with data, its refinement by the data-consistency constraint and by prior
//! knowledge, the intersected disturbance set, the refined open-loop set (and
//! nominal model as its center), and gain-parametrized closed-loop sets.

use crate::setops::{
    concat_disturbance, ConstrainedMatrixZonotope, ConstraintBlocks, MatrixZonotope, Polytope,
    SetError, Zonotope,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SysIdError {
    #[error("batch too short: T = {t_len} but need at least n + m + 1 = {min}")]
    TooShort { t_len: usize, min: usize },
    #[error("data matrix rank deficient after {0} attempts")]
    RankDeficient(usize),
    #[error("inconsistent noise model: refined disturbance set is empty")]
    InconsistentNoiseModel,
    #[error("prior contradicts data: intersected disturbance set is empty")]
    PriorContradiction,
    #[error("gain parametrization violated: |X0 V_K - I| = {0:.3e}")]
    GainParametrization(f64),
    #[error("malformed batch file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Set(#[from] SetError),
}

/// Singular-value cutoff for rank decisions, relative to the largest value.
const SV_CUTOFF: f64 = 1e-10;

/// One excitation experiment: states, shifted states, inputs, the stacked
/// data matrix, its right pseudoinverse, and a kernel basis.
#[derive(Debug, Clone)]
pub struct DataBatch {
    x0: DMatrix<f64>,
    x1: DMatrix<f64>,
    u0: DMatrix<f64>,
    d0: DMatrix<f64>,
    d0_pinv: DMatrix<f64>,
    d0_kernel: DMatrix<f64>,
}

impl DataBatch {
    /// Assemble a batch from raw matrices, computing the pseudoinverse and
    /// kernel basis with a rank-revealing SVD. Fails when the stacked data
    /// matrix does not have full row rank.
    pub fn new(
        x0: DMatrix<f64>,
        x1: DMatrix<f64>,
        u0: DMatrix<f64>,
    ) -> Result<Self, SysIdError> {
        let n = x0.nrows();
        let m = u0.nrows();
        let t_len = x0.ncols();
        assert_eq!(x1.shape(), (n, t_len), "X1 shape");
        assert_eq!(u0.ncols(), t_len, "U0 length");
        let mut d0 = DMatrix::zeros(n + m, t_len);
        d0.rows_mut(0, n).copy_from(&x0);
        d0.rows_mut(n, m).copy_from(&u0);
        let svd = d0.clone().svd(true, true);
        let smax = svd.singular_values.max();
        let rank = svd
            .singular_values
            .iter()
            .filter(|s| **s > SV_CUTOFF * smax)
            .count();
        if rank < n + m {
            return Err(SysIdError::RankDeficient(1));
        }
        let d0_pinv = svd
            .pseudo_inverse(SV_CUTOFF * smax)
            .expect("svd computed");
        // Kernel basis from the trailing right-singular vectors. The data
        // matrix is wide, so pad it square to get the full right basis.
        let mut padded = DMatrix::zeros(t_len, t_len);
        padded.rows_mut(0, n + m).copy_from(&d0);
        let svd_full = padded.svd(false, true);
        let v_t = svd_full.v_t.as_ref().expect("v_t requested");
        let kdim = t_len - rank;
        let mut kernel = DMatrix::zeros(t_len, kdim);
        for (j, row) in (rank..t_len).enumerate() {
            kernel.column_mut(j).copy_from(&v_t.row(row).transpose());
        }
        Ok(Self {
            x0,
            x1,
            u0,
            d0,
            d0_pinv,
            d0_kernel: kernel,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.x0.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.u0.nrows()
    }

    pub fn len(&self) -> usize {
        self.x0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn x0(&self) -> &DMatrix<f64> {
        &self.x0
    }

    pub fn x1(&self) -> &DMatrix<f64> {
        &self.x1
    }

    pub fn u0(&self) -> &DMatrix<f64> {
        &self.u0
    }

    pub fn d0(&self) -> &DMatrix<f64> {
        &self.d0
    }

    pub fn d0_pinv(&self) -> &DMatrix<f64> {
        &self.d0_pinv
    }

    pub fn d0_kernel(&self) -> &DMatrix<f64> {
        &self.d0_kernel
    }

    /// CSV export: header `x1..xn,u1..um`, one row per time step (the final
    /// state row carries empty input fields).
    pub fn to_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wtr = csv::Writer::from_writer(w);
        let n = self.state_dim();
        let m = self.input_dim();
        let mut header = Vec::new();
        for i in 0..n {
            header.push(format!("x{}", i + 1));
        }
        for j in 0..m {
            header.push(format!("u{}", j + 1));
        }
        wtr.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec: Vec<String> = (0..n).map(|i| self.x0[(i, k)].to_string()).collect();
            rec.extend((0..m).map(|j| self.u0[(j, k)].to_string()));
            wtr.write_record(&rec)?;
        }
        let last = self.len() - 1;
        let mut rec: Vec<String> = (0..n).map(|i| self.x1[(i, last)].to_string()).collect();
        rec.extend(std::iter::repeat(String::new()).take(m));
        wtr.write_record(&rec)?;
        wtr.flush()?;
        Ok(())
    }

    /// CSV import matching [`DataBatch::to_csv`].
    pub fn from_csv<R: std::io::Read>(
        r: R,
        state_dim: usize,
        input_dim: usize,
    ) -> Result<Self, SysIdError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut states: Vec<DVector<f64>> = Vec::new();
        let mut inputs: Vec<Option<DVector<f64>>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SysIdError::BadFile(e.to_string()))?;
            let mut x = DVector::zeros(state_dim);
            for i in 0..state_dim {
                x[i] = rec
                    .get(i)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| SysIdError::BadFile(format!("bad state field {i}")))?;
            }
            let u_fields: Vec<Option<f64>> = (0..input_dim)
                .map(|j| {
                    rec.get(state_dim + j)
                        .filter(|s| !s.is_empty())
                        .and_then(|s| s.parse().ok())
                })
                .collect();
            let u = if u_fields.iter().all(Option::is_some) {
                Some(DVector::from_fn(input_dim, |j, _| u_fields[j].unwrap()))
            } else {
                None
            };
            states.push(x);
            inputs.push(u);
        }
        let t_len = states.len().saturating_sub(1);
        if t_len == 0 {
            return Err(SysIdError::BadFile("need at least two state rows".into()));
        }
        let mut x0 = DMatrix::zeros(state_dim, t_len);
        let mut x1 = DMatrix::zeros(state_dim, t_len);
        let mut u0 = DMatrix::zeros(input_dim, t_len);
        for k in 0..t_len {
            x0.column_mut(k).copy_from(&states[k]);
            x1.column_mut(k).copy_from(&states[k + 1]);
            let u = inputs[k]
                .as_ref()
                .ok_or_else(|| SysIdError::BadFile(format!("missing input at step {k}")))?;
            u0.column_mut(k).copy_from(u);
        }
        DataBatch::new(x0, x1, u0)
    }
}

/// Excitation policy: i.i.d. uniform inputs over the input set scaled by
/// `fraction`, re-drawn wholesale until the data matrix has full row rank.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExcitationConfig {
    pub fraction: f64,
    pub retry_cap: usize,
}

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            fraction: 0.5,
            retry_cap: 20,
        }
    }
}

/// Excite `x+ = A x + B u + w` from `x_start` and collect a batch of length
/// `t_len`. Disturbances are drawn from `zw_true`.
#[allow(clippy::too_many_arguments)]
pub fn collect_batch<R: Rng + ?Sized>(
    a_true: &DMatrix<f64>,
    b_true: &DMatrix<f64>,
    zw_true: &Zonotope,
    x_start: &DVector<f64>,
    input_set: &Polytope,
    t_len: usize,
    excitation: &ExcitationConfig,
    rng: &mut R,
) -> Result<DataBatch, SysIdError> {
    let n = a_true.nrows();
    let m = b_true.ncols();
    if t_len < n + m + 1 {
        return Err(SysIdError::TooShort {
            t_len,
            min: n + m + 1,
        });
    }
    let input_box = input_set.interval_enclosure()?;
    for _attempt in 0..excitation.retry_cap {
        let mut x0 = DMatrix::zeros(n, t_len);
        let mut x1 = DMatrix::zeros(n, t_len);
        let mut u0 = DMatrix::zeros(m, t_len);
        let mut x = x_start.clone();
        for k in 0..t_len {
            let u = DVector::from_fn(m, |j, _| {
                let lo = excitation.fraction * input_box.lower()[j];
                let hi = excitation.fraction * input_box.upper()[j];
                rng.gen_range(lo..=hi)
            });
            let w = zw_true.sample(rng);
            x0.column_mut(k).copy_from(&x);
            u0.column_mut(k).copy_from(&u);
            x = a_true * &x + b_true * &u + w;
            x1.column_mut(k).copy_from(&x);
        }
        if let Ok(batch) = DataBatch::new(x0, x1, u0) {
            return Ok(batch);
        }
    }
    Err(SysIdError::RankDeficient(excitation.retry_cap))
}

/// Open-loop model set consistent with data alone:
/// center `(X1 - C_w) D0+`, blocks `-G_w^i D0+`.
pub fn open_loop_set(
    batch: &DataBatch,
    mw_t: &MatrixZonotope,
) -> Result<MatrixZonotope, SysIdError> {
    let shifted = MatrixZonotope::new(
        batch.x1() - mw_t.center(),
        mw_t.blocks().iter().map(|g| -g).collect(),
    )?;
    Ok(shifted.block_right_multiply(batch.d0_pinv())?)
}

/// Refine the concatenated disturbance set with the data-consistency
/// constraint `sum_i (G_w^i D0_perp) z_i = (X1 - C_w) D0_perp`.
pub fn refine_disturbance_data(
    batch: &DataBatch,
    mw_t: &MatrixZonotope,
) -> Result<ConstrainedMatrixZonotope, SysIdError> {
    if batch.d0_kernel().ncols() == 0 {
        // Kernel empty (T = n + m): the consistency constraint is vacuous.
        log::warn!("data kernel is empty; disturbance refinement is vacuous");
        return Ok(ConstrainedMatrixZonotope::from_matrix_zonotope(mw_t));
    }
    let a_blocks: Vec<DMatrix<f64>> = mw_t
        .blocks()
        .iter()
        .map(|g| g * batch.d0_kernel())
        .collect();
    let b = (batch.x1() - mw_t.center()) * batch.d0_kernel();
    let cons = ConstraintBlocks::new(a_blocks, b)?;
    ConstrainedMatrixZonotope::new(mw_t.center().clone(), mw_t.blocks().to_vec(), cons).map_err(
        |e| match e {
            SetError::Empty(_) => SysIdError::InconsistentNoiseModel,
            other => SysIdError::Set(other),
        },
    )
}

/// Prior knowledge on the parameter matrix as a constrained matrix zonotope.
#[derive(Debug, Clone)]
pub struct PriorSet(pub ConstrainedMatrixZonotope);

impl PriorSet {
    /// Prior that pins the parameter matrix exactly (used by the `exact`
    /// prior mode in simulations).
    pub fn exact(theta: DMatrix<f64>) -> Result<Self, SysIdError> {
        Ok(Self(ConstrainedMatrixZonotope::new(
            theta,
            Vec::new(),
            ConstraintBlocks::none(0),
        )?))
    }
}

/// Disturbance realizations consistent with the prior:
/// center `X1 - C_th D0`, blocks `-(G_th^i D0)`, prior constraints kept.
pub fn prior_disturbance_set(
    batch: &DataBatch,
    prior: &PriorSet,
) -> Result<ConstrainedMatrixZonotope, SysIdError> {
    let blocks: Vec<DMatrix<f64>> = prior
        .0
        .blocks()
        .iter()
        .map(|g| -(g * batch.d0()))
        .collect();
    let center = batch.x1() - prior.0.center() * batch.d0();
    Ok(ConstrainedMatrixZonotope::new(
        center,
        blocks,
        prior.0.constraints().clone(),
    )?)
}

/// Intersect the data-refined and prior-consistent disturbance sets. An empty
/// intersection signals that the prior contradicts the observed data.
pub fn intersect_disturbance(
    mw: &ConstrainedMatrixZonotope,
    md: &ConstrainedMatrixZonotope,
) -> Result<ConstrainedMatrixZonotope, SysIdError> {
    mw.intersect(md).map_err(|e| match e {
        SetError::Empty(_) => SysIdError::PriorContradiction,
        other => SysIdError::Set(other),
    })
}

/// Refined open-loop model set and the nominal pair read off its center.
pub fn refined_open_loop_set(
    batch: &DataBatch,
    mdw: &ConstrainedMatrixZonotope,
) -> Result<(ConstrainedMatrixZonotope, DMatrix<f64>, DMatrix<f64>), SysIdError> {
    let blocks: Vec<DMatrix<f64>> = mdw
        .blocks()
        .iter()
        .map(|g| -(g * batch.d0_pinv()))
        .collect();
    let center = (batch.x1() - mdw.center()) * batch.d0_pinv();
    let n = batch.state_dim();
    let m = batch.input_dim();
    let nominal_a = center.columns(0, n).into_owned();
    let nominal_b = center.columns(n, m).into_owned();
    let set = ConstrainedMatrixZonotope::new(center, blocks, mdw.constraints().clone())?;
    Ok((set, nominal_a, nominal_b))
}

/// Closed-loop model set for the gain parametrization `K = U0 V_K`,
/// `X0 V_K = I`.
pub fn closed_loop_set(
    batch: &DataBatch,
    mdw: &ConstrainedMatrixZonotope,
    v_k: &DMatrix<f64>,
) -> Result<ConstrainedMatrixZonotope, SysIdError> {
    let n = batch.state_dim();
    let resid = (batch.x0() * v_k - DMatrix::identity(n, n)).amax();
    if resid > 1e-6 {
        return Err(SysIdError::GainParametrization(resid));
    }
    let blocks: Vec<DMatrix<f64>> = mdw.blocks().iter().map(|g| -(g * v_k)).collect();
    let center = (batch.x1() - mdw.center()) * v_k;
    Ok(ConstrainedMatrixZonotope::new(
        center,
        blocks,
        mdw.constraints().clone(),
    )?)
}

/// Build a prior from an offline batch under its own disturbance model
/// (the concatenated matrix zonotope `mwp_t`): the prior is the offline
/// batch's refined open-loop set.
pub fn build_prior_from_offline(
    offline: &DataBatch,
    mwp_t: &MatrixZonotope,
) -> Result<PriorSet, SysIdError> {
    let mw_off = refine_disturbance_data(offline, mwp_t)?;
    let (set, _, _) = refined_open_loop_set(offline, &mw_off)?;
    Ok(PriorSet(set))
}

/// How the disturbance set is refined before building model sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// No refinement: the concatenated disturbance set is used as-is.
    None,
    /// Data-consistency constraint only.
    DataOnly,
    /// Data-consistency intersected with prior knowledge.
    DataPrior,
    /// Prior pinning the true parameters (simulation diagnostics).
    Exact,
}

impl std::fmt::Display for PriorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            PriorMode::None => "none",
            PriorMode::DataOnly => "data_only",
            PriorMode::DataPrior => "data_prior",
            PriorMode::Exact => "exact",
        };
        f.write_str(s)
    }
}

/// Every model set a controller needs, bundled.
#[derive(Debug, Clone)]
pub struct ModelSets {
    pub mw_t: MatrixZonotope,
    pub mw: ConstrainedMatrixZonotope,
    pub md: Option<ConstrainedMatrixZonotope>,
    pub mdw: ConstrainedMatrixZonotope,
    pub mol_c: ConstrainedMatrixZonotope,
    pub nominal_a: DMatrix<f64>,
    pub nominal_b: DMatrix<f64>,
}

/// Assemble the full chain of model sets for the requested refinement mode.
pub fn build_model_sets(
    batch: &DataBatch,
    zw: &Zonotope,
    mode: PriorMode,
    prior: Option<&PriorSet>,
) -> Result<ModelSets, SysIdError> {
    let mw_t = concat_disturbance(zw, batch.len())?;
    let mw = refine_disturbance_data(batch, &mw_t)?;
    let (md, mdw) = match mode {
        PriorMode::None => (
            None,
            ConstrainedMatrixZonotope::from_matrix_zonotope(&mw_t),
        ),
        PriorMode::DataOnly => (None, mw.clone()),
        PriorMode::DataPrior | PriorMode::Exact => {
            let prior = prior.expect("prior required for prior-aware modes");
            let md = prior_disturbance_set(batch, prior)?;
            let mdw = intersect_disturbance(&mw, &md)?;
            (Some(md), mdw)
        }
    };
    let (mol_c, nominal_a, nominal_b) = refined_open_loop_set(batch, &mdw)?;
    Ok(ModelSets {
        mw_t,
        mw,
        md,
        mdw,
        mol_c,
        nominal_a,
        nominal_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn simple_plant() -> (DMatrix<f64>, DMatrix<f64>) {
        (dmatrix![0.9, 0.1; 0.0, 0.8], dmatrix![0.5; 1.0])
    }

    fn input_box(hw: f64, m: usize) -> Polytope {
        Polytope::box_from_halfwidths(&DVector::from_element(m, hw))
    }

    fn noisy_batch(seed: u64, t_len: usize) -> (DataBatch, Zonotope, DMatrix<f64>, DMatrix<f64>) {
        let (a, b) = simple_plant();
        let gh = dmatrix![0.05, 0.08; 0.01, 0.06];
        let zw = Zonotope::new(DVector::zeros(2), gh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = collect_batch(
            &a,
            &b,
            &zw,
            &DVector::zeros(2),
            &input_box(2.0, 1),
            t_len,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        (batch, zw, a, b)
    }

    fn theta_of(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut theta = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
        theta.columns_mut(0, a.ncols()).copy_from(a);
        theta.columns_mut(a.ncols(), b.ncols()).copy_from(b);
        theta
    }

    #[test]
    fn collect_rejects_short_batches() {
        let (a, b) = simple_plant();
        let zw = Zonotope::singleton(DVector::zeros(2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = collect_batch(
            &a,
            &b,
            &zw,
            &DVector::zeros(2),
            &input_box(1.0, 1),
            3, // n + m = 3: kernel would be empty
            &ExcitationConfig::default(),
            &mut rng,
        );
        assert!(matches!(err, Err(SysIdError::TooShort { .. })));
    }

    #[test]
    fn noiseless_scalar_dynamics_identity() {
        // x+ = 0.5 x + u with three random inputs and no noise.
        let a = dmatrix![0.5];
        let b = dmatrix![1.0];
        let zw = Zonotope::singleton(DVector::zeros(1));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = collect_batch(
            &a,
            &b,
            &zw,
            &dvector![1.0],
            &input_box(1.0, 1),
            3,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let resid = (batch.x1() - (dmatrix![0.5] * batch.x0() + batch.u0())).amax();
        assert_abs_diff_eq!(resid, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn pinv_and_kernel_identities() {
        let (batch, _, _, _) = noisy_batch(7, 12);
        let nm = batch.state_dim() + batch.input_dim();
        let id = batch.d0() * batch.d0_pinv();
        assert_abs_diff_eq!((id - DMatrix::identity(nm, nm)).amax(), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!((batch.d0() * batch.d0_kernel()).amax(), 0.0, epsilon = 1e-8);
        assert_eq!(batch.d0_kernel().ncols(), batch.len() - nm);
    }

    #[test]
    fn open_loop_set_recovers_truth_noiseless() {
        let (a, b) = simple_plant();
        let zw = Zonotope::singleton(DVector::zeros(2));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = collect_batch(
            &a,
            &b,
            &zw,
            &DVector::zeros(2),
            &input_box(2.0, 1),
            8,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mol = open_loop_set(&batch, &mw_t).unwrap();
        assert_abs_diff_eq!((mol.center() - theta_of(&a, &b)).amax(), 0.0, epsilon = 1e-9);
        for g in mol.blocks() {
            assert!(g.amax() <= 1e-9);
        }
    }

    #[test]
    fn open_loop_constant_disturbance_cancels() {
        // Zero generators but a known constant disturbance center: the
        // center term cancels exactly in (X1 - C_w) D0+.
        let (a, b) = simple_plant();
        let c_w = dvector![0.4, -0.2];
        let zw = Zonotope::new(c_w.clone(), DMatrix::zeros(2, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = collect_batch(
            &a,
            &b,
            &zw,
            &DVector::zeros(2),
            &input_box(2.0, 1),
            9,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mol = open_loop_set(&batch, &mw_t).unwrap();
        assert_abs_diff_eq!((mol.center() - theta_of(&a, &b)).amax(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn truth_is_member_of_open_loop_set() {
        let (batch, zw, a, b) = noisy_batch(8, 14);
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mol = open_loop_set(&batch, &mw_t).unwrap();
        assert!(mol.contains_matrix(&theta_of(&a, &b)));
    }

    #[test]
    fn data_refinement_keeps_true_disturbance() {
        let (batch, zw, a, b) = noisy_batch(9, 14);
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mw = refine_disturbance_data(&batch, &mw_t).unwrap();
        let w_true = batch.x1() - &a * batch.x0() - &b * batch.u0();
        assert!(mw.contains_matrix(&w_true));
        // Kernel identity for sampled members: (X1 - W) D0_perp = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let w = mw.sample(&mut rng).unwrap();
            let proj = (batch.x1() - &w) * batch.d0_kernel();
            assert!(proj.amax() <= 1e-6, "kernel residual {}", proj.amax());
        }
    }

    #[test]
    fn vacuous_refinement_when_kernel_empty() {
        // Hand-built batch with T = n + m (kernel dimension zero).
        let (a, b) = simple_plant();
        let zw = Zonotope::new(DVector::zeros(2), dmatrix![0.1, 0.0; 0.0, 0.1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t_len = 3;
        let mut x0 = DMatrix::zeros(2, t_len);
        let mut x1 = DMatrix::zeros(2, t_len);
        let mut u0 = DMatrix::zeros(1, t_len);
        let mut x = dvector![1.0, -1.0];
        for k in 0..t_len {
            let u = dvector![rng.gen_range(-1.0..1.0)];
            x0.column_mut(k).copy_from(&x);
            u0.column_mut(k).copy_from(&u);
            x = &a * &x + &b * &u + zw.sample(&mut rng);
            x1.column_mut(k).copy_from(&x);
        }
        let batch = DataBatch::new(x0, x1, u0).unwrap();
        let mw_t = concat_disturbance(&zw, t_len).unwrap();
        let mw = refine_disturbance_data(&batch, &mw_t).unwrap();
        assert!(mw.constraints().is_empty());
        assert_eq!(mw.num_blocks(), mw_t.num_blocks());
    }

    #[test]
    fn noiseless_zero_model_gives_singleton() {
        let (a, b) = simple_plant();
        let zw = Zonotope::singleton(DVector::zeros(2));
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch = collect_batch(
            &a,
            &b,
            &zw,
            &DVector::zeros(2),
            &input_box(2.0, 1),
            8,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mw = refine_disturbance_data(&batch, &mw_t).unwrap();
        assert_eq!(mw.num_blocks(), 0);
        assert!(mw.contains_matrix(&DMatrix::zeros(2, 8)));
    }

    #[test]
    fn exact_prior_pins_disturbance() {
        let (batch, _, a, b) = noisy_batch(13, 12);
        let theta = theta_of(&a, &b);
        let prior = PriorSet::exact(theta.clone()).unwrap();
        let md = prior_disturbance_set(&batch, &prior).unwrap();
        let w_true = batch.x1() - &theta * batch.d0();
        assert_eq!(md.num_blocks(), 0);
        assert!(md.contains_matrix(&w_true));
    }

    #[test]
    fn intersection_keeps_truth_and_nests() {
        let (batch, zw, a, b) = noisy_batch(14, 14);
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mw = refine_disturbance_data(&batch, &mw_t).unwrap();
        // Generic prior built from a separate offline batch of the same plant.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let zwp =
            Zonotope::new(dvector![0.2, -0.1], dmatrix![0.03, -0.01; -0.04, 0.05]).unwrap();
        let offline = collect_batch(
            &a,
            &b,
            &zwp,
            &DVector::zeros(2),
            &input_box(1.0, 1),
            10,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mwp_t = concat_disturbance(&zwp, offline.len()).unwrap();
        let prior = build_prior_from_offline(&offline, &mwp_t).unwrap();
        let theta = theta_of(&a, &b);
        assert!(prior.0.contains_matrix(&theta), "prior must contain truth");
        let md = prior_disturbance_set(&batch, &prior).unwrap();
        let mdw = intersect_disturbance(&mw, &md).unwrap();
        let w_true = batch.x1() - &theta * batch.d0();
        assert!(mw.contains_matrix(&w_true));
        assert!(md.contains_matrix(&w_true));
        assert!(mdw.contains_matrix(&w_true));
        // Nesting at membership level: members of the intersection belong to
        // both parents.
        for _ in 0..30 {
            let w = mdw.sample(&mut rng).unwrap();
            assert!(mw.contains_matrix(&w));
            assert!(md.contains_matrix(&w));
        }
    }

    #[test]
    fn refined_open_loop_contains_truth_and_nests_in_unrefined() {
        let (batch, zw, a, b) = noisy_batch(16, 14);
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mw = refine_disturbance_data(&batch, &mw_t).unwrap();
        let (mol_c, _, _) = refined_open_loop_set(&batch, &mw).unwrap();
        assert!(mol_c.contains_matrix(&theta_of(&a, &b)));
        let mol = open_loop_set(&batch, &mw_t).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let x = mol_c.sample(&mut rng).unwrap();
            assert!(mol.contains_matrix(&x));
        }
    }

    #[test]
    fn closed_loop_set_contains_true_closed_loop() {
        let (batch, zw, a, b) = noisy_batch(18, 14);
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mw = refine_disturbance_data(&batch, &mw_t).unwrap();
        // Valid V_K: least-norm solution of D0 V = [I; K].
        let k = dmatrix![0.1, -0.2];
        let mut target = DMatrix::zeros(3, 2);
        target
            .view_mut((0, 0), (2, 2))
            .copy_from(&DMatrix::identity(2, 2));
        target.view_mut((2, 0), (1, 2)).copy_from(&k);
        let v_k = batch.d0_pinv() * &target;
        let mcl = closed_loop_set(&batch, &mw, &v_k).unwrap();
        let a_cl = &a + &b * &k;
        assert!(mcl.contains_matrix(&a_cl));
        assert_eq!(v_k.nrows(), batch.len());
        assert_eq!(v_k.ncols(), 2);
    }

    #[test]
    fn closed_loop_singleton_when_noiseless() {
        let (a, b) = simple_plant();
        let zw0 = Zonotope::singleton(DVector::zeros(2));
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let batch = collect_batch(
            &a,
            &b,
            &zw0,
            &DVector::zeros(2),
            &input_box(2.0, 1),
            8,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mw_t = concat_disturbance(&zw0, 8).unwrap();
        let mw = refine_disturbance_data(&batch, &mw_t).unwrap();
        let k = dmatrix![0.05, -0.1];
        let mut target = DMatrix::zeros(3, 2);
        target
            .view_mut((0, 0), (2, 2))
            .copy_from(&DMatrix::identity(2, 2));
        target.view_mut((2, 0), (1, 2)).copy_from(&k);
        let v_k = batch.d0_pinv() * &target;
        let mcl = closed_loop_set(&batch, &mw, &v_k).unwrap();
        assert_eq!(mcl.num_blocks(), 0);
        assert_abs_diff_eq!((mcl.center() - (&a + &b * &k)).amax(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn gain_parametrization_violation_rejected() {
        let (batch, zw, _, _) = noisy_batch(20, 12);
        let mw_t = concat_disturbance(&zw, batch.len()).unwrap();
        let mw = refine_disturbance_data(&batch, &mw_t).unwrap();
        let bad_v = DMatrix::zeros(batch.len(), 2);
        assert!(matches!(
            closed_loop_set(&batch, &mw, &bad_v),
            Err(SysIdError::GainParametrization(_))
        ));
    }

    #[test]
    fn prior_builder_deterministic() {
        let (a, b) = simple_plant();
        let zwp = Zonotope::new(dvector![0.1, 0.0], dmatrix![0.02, 0.0; 0.0, 0.02]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let offline = collect_batch(
            &a,
            &b,
            &zwp,
            &DVector::zeros(2),
            &input_box(1.0, 1),
            9,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let mwp_t = concat_disturbance(&zwp, offline.len()).unwrap();
        let p1 = build_prior_from_offline(&offline, &mwp_t).unwrap();
        let p2 = build_prior_from_offline(&offline, &mwp_t).unwrap();
        assert_eq!(p1.0.center(), p2.0.center());
    }

    #[test]
    fn noiseless_exact_prior_collapses_everything() {
        let (a, b) = simple_plant();
        let zw = Zonotope::singleton(DVector::zeros(2));
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let batch = collect_batch(
            &a,
            &b,
            &zw,
            &DVector::zeros(2),
            &input_box(2.0, 1),
            8,
            &ExcitationConfig::default(),
            &mut rng,
        )
        .unwrap();
        let theta = theta_of(&a, &b);
        let prior = PriorSet::exact(theta.clone()).unwrap();
        let sets = build_model_sets(&batch, &zw, PriorMode::Exact, Some(&prior)).unwrap();
        assert_abs_diff_eq!((&sets.nominal_a - &a).amax(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!((&sets.nominal_b - &b).amax(), 0.0, epsilon = 1e-9);
        for g in sets.mol_c.blocks() {
            assert!(g.amax() <= 1e-9);
        }
    }

    #[test]
    fn csv_roundtrip() {
        let (batch, _, _, _) = noisy_batch(23, 10);
        let mut buf = Vec::new();
        batch.to_csv(&mut buf).unwrap();
        let back = DataBatch::from_csv(&buf[..], 2, 1).unwrap();
        assert_abs_diff_eq!((back.x0() - batch.x0()).amax(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((back.x1() - batch.x1()).amax(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((back.u0() - batch.u0()).amax(), 0.0, epsilon = 1e-12);
    }
}
