//! Tube–gain co-design: facet bounds over the disturbance coefficient
//! polytope, the contraction linear program, the tube update, the one-step
//! error set used as a containment oracle, the polytopic Lyapunov function,
//! and the closed-loop versus open-loop facet-bound comparison.
//!
//! The contraction LP certifies, for the current tube `E = {H_e e <= h_e}`,
//! a gain `V_K` and factor `lambda` such that every admissible one-step error
//! lands in `lambda * E`. The model-uncertainty term is bounded per data
//! column: with `m_jk` the largest facet-j response of uncertainty column `k`
//! and `b` the per-coordinate tube bounds, the term
//! `sum_k m_jk sum_c |V_kc| b_c` is linear in the decision variables and
//! dominates the true contribution for every coefficient in the polytope.
//! The reported `rho` bounds the entrywise absolute sum of `V_K` (hence also
//! its row-sum norm), which keeps the reported `rho * l` product a valid
//! upper bound on the model-uncertainty term.

use crate::config::Tolerances;
use crate::optim::{solve_lp, LpProblem, SolveStatus};
use crate::setops::{
    ConstrainedMatrixZonotope, ConstrainedZonotope, IntervalBox, Polytope, SetError, VertexCap,
    Zonotope,
};
use crate::sysid::DataBatch;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TubeGainError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("tube scaling must stay positive (facet {0})")]
    NonPositiveTube(usize),
    #[error("contraction factor {0} outside (0, 1]")]
    BadLambda(f64),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("solver failure in {0}")]
    SolverFailure(String),
}

// ---------------------------------------------------------------------------
// Tube state
// ---------------------------------------------------------------------------

/// Error tube `P(H_e, h_e)` with its last contraction factor and the
/// infinity-norm bound of its members.
#[derive(Debug, Clone)]
pub struct TubeState {
    h_mat: DMatrix<f64>,
    h_vec: DVector<f64>,
    lambda: f64,
    m_e: f64,
    coord_bounds: DVector<f64>,
}

impl TubeState {
    /// Initial tube equal to the admissible state set.
    pub fn initial(x_set: &Polytope) -> Result<Self, TubeGainError> {
        Self::new(x_set.h_mat().clone(), x_set.h_vec().clone())
    }

    pub fn new(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Result<Self, TubeGainError> {
        for j in 0..h_vec.len() {
            if h_vec[j] <= 0.0 {
                return Err(TubeGainError::NonPositiveTube(j));
            }
        }
        let poly = Polytope::new(h_mat.clone(), h_vec.clone())?;
        let encl = poly.interval_enclosure()?;
        let coord_bounds = encl.abs_bounds();
        let m_e = coord_bounds.max();
        Ok(Self {
            h_mat,
            h_vec,
            lambda: 1.0,
            m_e,
            coord_bounds,
        })
    }

    pub fn h_mat(&self) -> &DMatrix<f64> {
        &self.h_mat
    }

    pub fn h_vec(&self) -> &DVector<f64> {
        &self.h_vec
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn m_e(&self) -> f64 {
        self.m_e
    }

    /// Per-coordinate magnitude bounds of the tube's interval enclosure.
    pub fn coord_bounds(&self) -> &DVector<f64> {
        &self.coord_bounds
    }

    pub fn num_facets(&self) -> usize {
        self.h_vec.len()
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn polytope(&self) -> Polytope {
        Polytope::new(self.h_mat.clone(), self.h_vec.clone()).expect("tube state is valid")
    }

    pub fn contains(&self, e: &DVector<f64>, tol: f64) -> bool {
        (&self.h_mat * e - &self.h_vec).iter().all(|v| *v <= tol)
    }
}

/// Scale the tube by `lambda` and recompute its interval bounds.
pub fn update_tube(tube: &TubeState, lambda: f64) -> Result<TubeState, TubeGainError> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(TubeGainError::BadLambda(lambda));
    }
    let mut next = TubeState::new(tube.h_mat.clone(), &tube.h_vec * lambda)?;
    next.lambda = lambda;
    Ok(next)
}

// ---------------------------------------------------------------------------
// Coefficient polytope
// ---------------------------------------------------------------------------

/// The time-invariant coefficient polytope `{b : A b = B (vectorized),
/// ||b||_inf <= 1}` of the refined disturbance set, stored with an affine
/// null-space parametrization for fast support queries, an interior point for
/// hit-and-run sampling, and (when small enough) a cached vertex list.
#[derive(Debug, Clone)]
pub struct CoeffPolytope {
    dim: usize,
    eq_mat: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    eq_tol: f64,
    particular: DVector<f64>,
    nullspace: DMatrix<f64>,
    interior: DVector<f64>,
    vertices: Option<Vec<DVector<f64>>>,
}

impl CoeffPolytope {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn reduced_dim(&self) -> usize {
        self.nullspace.ncols()
    }

    pub fn cached_vertices(&self) -> Option<&[DVector<f64>]> {
        self.vertices.as_deref()
    }

    pub fn contains(&self, beta: &DVector<f64>, tol: &Tolerances) -> bool {
        if beta.amax() > 1.0 + tol.acceptance {
            return false;
        }
        if self.eq_mat.nrows() == 0 {
            return true;
        }
        let resid = (&self.eq_mat * beta - &self.eq_rhs).amax();
        resid <= self.eq_tol.max(tol.emptiness * (1.0 + self.eq_rhs.amax()))
    }

    /// `max d . b` over the polytope: cached-vertex maximum when available,
    /// otherwise an LP in the reduced coordinates.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64, TubeGainError> {
        if let Some(verts) = &self.vertices {
            return Ok(verts
                .iter()
                .map(|v| d.dot(v))
                .fold(f64::NEG_INFINITY, f64::max));
        }
        let nd = self.reduced_dim();
        if nd == 0 {
            return Ok(d.dot(&self.particular));
        }
        let s = self.dim;
        // max (N'd) . t  s.t.  -1 - b0 <= N t <= 1 - b0
        let cost = -(self.nullspace.transpose() * d);
        let mut a = DMatrix::zeros(2 * s, nd);
        let mut b = DVector::zeros(2 * s);
        a.rows_mut(0, s).copy_from(&self.nullspace);
        a.rows_mut(s, s).copy_from(&(-&self.nullspace));
        for i in 0..s {
            b[i] = 1.0 - self.particular[i];
            b[s + i] = 1.0 + self.particular[i];
        }
        let mut p = LpProblem::new(cost);
        p.ineq = Some((a, b));
        let res = solve_lp(&p);
        match res.status {
            SolveStatus::Optimal => {
                Ok(d.dot(&self.particular) + d.dot(&(&self.nullspace * res.x)))
            }
            _ => Err(TubeGainError::SolverFailure("coefficient support".into())),
        }
    }

    /// `max_b |d . b|` over the polytope (two support queries).
    pub fn abs_support(&self, d: &DVector<f64>) -> Result<f64, TubeGainError> {
        let plus = self.support(d)?;
        let minus = self.support(&(-d))?;
        Ok(plus.max(minus).max(0.0))
    }

    /// Feasibility-restoration sample: draw a cube point and project it onto
    /// the polytope in the infinity norm.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, TubeGainError> {
        let nd = self.reduced_dim();
        if nd == 0 {
            return Ok(self.particular.clone());
        }
        let draw = DVector::from_fn(self.dim, |_, _| rng.gen_range(-1.0..=1.0));
        // Projection in reduced coordinates: min t over |b0 + N s - draw| <= t,
        // |b0 + N s| <= 1.
        let sdim = self.dim;
        let nv = nd + 1;
        let mut cost = DVector::zeros(nv);
        cost[nd] = 1.0;
        let mut a = DMatrix::zeros(4 * sdim, nv);
        let mut b = DVector::zeros(4 * sdim);
        for i in 0..sdim {
            for j in 0..nd {
                let v = self.nullspace[(i, j)];
                a[(i, j)] = v;
                a[(sdim + i, j)] = -v;
                a[(2 * sdim + i, j)] = v;
                a[(3 * sdim + i, j)] = -v;
            }
            a[(i, nd)] = -1.0;
            a[(sdim + i, nd)] = -1.0;
            b[i] = draw[i] - self.particular[i];
            b[sdim + i] = self.particular[i] - draw[i];
            b[2 * sdim + i] = 1.0 - self.particular[i];
            b[3 * sdim + i] = 1.0 + self.particular[i];
        }
        let mut p = LpProblem::new(cost);
        p.ineq = Some((a, b));
        let res = solve_lp(&p);
        if res.status != SolveStatus::Optimal {
            return Err(TubeGainError::SolverFailure(
                "coefficient projection".into(),
            ));
        }
        Ok(&self.particular + &self.nullspace * res.x.rows(0, nd).into_owned())
    }

    /// Start a hit-and-run walk at the interior point.
    pub fn walker(&self) -> PdwWalker {
        PdwWalker {
            t_current: DVector::zeros(self.reduced_dim()),
        }
    }

    /// One hit-and-run step in reduced coordinates; returns a member.
    pub fn hit_and_run<R: Rng + ?Sized>(
        &self,
        walker: &mut PdwWalker,
        rng: &mut R,
    ) -> DVector<f64> {
        let nd = self.reduced_dim();
        if nd == 0 {
            return self.particular.clone();
        }
        let mut dir = DVector::from_fn(nd, |_, _| rng.gen_range(-1.0f64..=1.0));
        let norm = dir.norm();
        if norm < 1e-12 {
            dir[0] = 1.0;
        } else {
            dir /= norm;
        }
        let ndir = &self.nullspace * &dir;
        let base = &self.interior + &self.nullspace * &walker.t_current;
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for i in 0..self.dim {
            let g = ndir[i];
            if g.abs() > 1e-14 {
                let a = (-1.0 - base[i]) / g;
                let b = (1.0 - base[i]) / g;
                lo = lo.max(a.min(b));
                hi = hi.min(a.max(b));
            }
        }
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return base;
        }
        let step = rng.gen_range(lo..=hi);
        walker.t_current += dir * step;
        &self.interior + &self.nullspace * &walker.t_current
    }
}

/// Mutable state of a hit-and-run walk over a [`CoeffPolytope`].
#[derive(Debug, Clone)]
pub struct PdwWalker {
    t_current: DVector<f64>,
}

/// Build the coefficient polytope of a refined disturbance set, caching
/// vertices of the reduced polytope when the enumeration cap allows.
pub fn build_pdw(
    mdw: &ConstrainedMatrixZonotope,
    cap: &VertexCap,
) -> Result<CoeffPolytope, TubeGainError> {
    let s = mdw.num_blocks();
    let (eq_mat, eq_rhs) = mdw.constraints().vectorized();
    let eq_tol = mdw.eq_tol();
    if s == 0 {
        // Singleton coefficient space: one empty member.
        return Ok(CoeffPolytope {
            dim: 0,
            eq_mat: DMatrix::zeros(0, 0),
            eq_rhs: DVector::zeros(0),
            eq_tol,
            particular: DVector::zeros(0),
            nullspace: DMatrix::zeros(0, 0),
            interior: DVector::zeros(0),
            vertices: Some(vec![DVector::zeros(0)]),
        });
    }
    let (particular, nullspace) = if eq_mat.nrows() == 0 {
        (DVector::zeros(s), DMatrix::identity(s, s))
    } else {
        let svd = eq_mat.clone().svd(true, true);
        let smax = svd.singular_values.max().max(1e-300);
        let rank = svd
            .singular_values
            .iter()
            .filter(|v| **v > 1e-10 * smax)
            .count();
        let particular = svd
            .solve(&eq_rhs, 1e-10 * smax)
            .map_err(|e| TubeGainError::SolverFailure(e.to_string()))?;
        let nd = s - rank;
        let mut nullspace = DMatrix::zeros(s, nd);
        if eq_mat.nrows() >= s {
            let v_t = svd.v_t.as_ref().expect("v_t requested");
            for (j, row) in (rank..s).enumerate() {
                nullspace.column_mut(j).copy_from(&v_t.row(row).transpose());
            }
        } else {
            // Wide system: pad square so the full right basis is available.
            let mut padded = DMatrix::zeros(s, s);
            padded.rows_mut(0, eq_mat.nrows()).copy_from(&eq_mat);
            let svd_full = padded.svd(false, true);
            let v_t_full = svd_full.v_t.as_ref().expect("v_t requested");
            for (j, row) in (rank..s).enumerate() {
                nullspace
                    .column_mut(j)
                    .copy_from(&v_t_full.row(row).transpose());
            }
        }
        (particular, nullspace)
    };
    // Interior point: minimize the cube norm over the affine slice.
    let nd = nullspace.ncols();
    let interior = if nd == 0 || eq_mat.nrows() == 0 {
        if eq_mat.nrows() == 0 {
            DVector::zeros(s)
        } else {
            particular.clone()
        }
    } else {
        let mut cost = DVector::zeros(nd + 1);
        cost[nd] = 1.0;
        let mut a = DMatrix::zeros(2 * s, nd + 1);
        let mut b = DVector::zeros(2 * s);
        for i in 0..s {
            for j in 0..nd {
                a[(i, j)] = nullspace[(i, j)];
                a[(s + i, j)] = -nullspace[(i, j)];
            }
            a[(i, nd)] = -1.0;
            a[(s + i, nd)] = -1.0;
            b[i] = -particular[i];
            b[s + i] = particular[i];
        }
        let mut p = LpProblem::new(cost);
        p.ineq = Some((a, b));
        let res = solve_lp(&p);
        if res.status == SolveStatus::Optimal {
            &particular + &nullspace * res.x.rows(0, nd).into_owned()
        } else {
            particular.clone()
        }
    };
    // Vertex cache for the reduced polytope when under the cap.
    let vertices = if nd <= cap.max_dim && nd > 0 {
        let mut h = DMatrix::zeros(2 * s, nd);
        let mut hb = DVector::zeros(2 * s);
        h.rows_mut(0, s).copy_from(&nullspace);
        h.rows_mut(s, s).copy_from(&(-&nullspace));
        for i in 0..s {
            hb[i] = 1.0 - particular[i];
            hb[s + i] = 1.0 + particular[i];
        }
        match Polytope::new(h, hb).and_then(|p| p.vertices(cap)) {
            Ok(tverts) if !tverts.is_empty() && tverts.len() <= 4096 => Some(
                tverts
                    .iter()
                    .map(|t| &particular + &nullspace * t)
                    .collect(),
            ),
            _ => None,
        }
    } else if nd == 0 {
        Some(vec![particular.clone()])
    } else {
        None
    };
    Ok(CoeffPolytope {
        dim: s,
        eq_mat,
        eq_rhs,
        eq_tol,
        particular,
        nullspace,
        interior,
        vertices,
    })
}

// ---------------------------------------------------------------------------
// Facet bounds
// ---------------------------------------------------------------------------

/// Disturbance facet bound `y_j = sum_i |H_e^j G_h^i|` (exact for zonotopes).
pub fn facet_y(h_mat: &DMatrix<f64>, zw: &Zonotope) -> DVector<f64> {
    let hg = h_mat * zw.generators();
    DVector::from_fn(h_mat.nrows(), |j, _| {
        (0..hg.ncols()).map(|i| hg[(j, i)].abs()).sum()
    })
}

/// Per-facet row matrices `R_j` with row `i` equal to `H_e^j G_dw^i`.
fn facet_row_matrices(
    h_mat: &DMatrix<f64>,
    mdw: &ConstrainedMatrixZonotope,
) -> Vec<DMatrix<f64>> {
    let q = h_mat.nrows();
    let s = mdw.num_blocks();
    let t_len = mdw.shape().1;
    (0..q)
        .map(|j| {
            let hrow = h_mat.row(j);
            let mut r = DMatrix::zeros(s, t_len);
            for (i, g) in mdw.blocks().iter().enumerate() {
                let prod = hrow * g;
                r.row_mut(i).copy_from(&prod);
            }
            r
        })
        .collect()
}

/// Per-coordinate uncertainty maxima
/// `m_jk = max_b |sum_i b_i (H_e^j G_dw^i)_k|`
/// via two support queries per facet and coordinate.
pub fn facet_coord_max(
    h_mat: &DMatrix<f64>,
    mdw: &ConstrainedMatrixZonotope,
    pdw: &CoeffPolytope,
) -> Result<DMatrix<f64>, TubeGainError> {
    let r_mats = facet_row_matrices(h_mat, mdw);
    facet_coord_max_from_rows(&r_mats, pdw)
}

fn facet_coord_max_from_rows(
    r_mats: &[DMatrix<f64>],
    pdw: &CoeffPolytope,
) -> Result<DMatrix<f64>, TubeGainError> {
    let q = r_mats.len();
    let t_len = if q > 0 { r_mats[0].ncols() } else { 0 };
    let mut m = DMatrix::zeros(q, t_len);
    for (j, r) in r_mats.iter().enumerate() {
        for k in 0..t_len {
            let d = r.column(k).into_owned();
            if d.len() == 0 || d.amax() == 0.0 {
                continue;
            }
            m[(j, k)] = pdw.abs_support(&d)?;
        }
    }
    Ok(m)
}

/// Closed-loop model-uncertainty facet bound `l_j = M_e * max_k m_jk`.
pub fn facet_l(
    h_mat: &DMatrix<f64>,
    mdw: &ConstrainedMatrixZonotope,
    pdw: &CoeffPolytope,
    m_e: f64,
) -> Result<DVector<f64>, TubeGainError> {
    let m = facet_coord_max(h_mat, mdw, pdw)?;
    Ok(DVector::from_fn(m.nrows(), |j, _| {
        m_e * (0..m.ncols()).map(|k| m[(j, k)]).fold(0.0, f64::max)
    }))
}

/// Open-loop mismatch facet bound at the nominal pair:
/// `z_j = max_b |sum_i b_i H_e^j G_dw^i v|` with `v = D0+ [xbar; ubar]`.
pub fn facet_z(
    h_mat: &DMatrix<f64>,
    mdw: &ConstrainedMatrixZonotope,
    pdw: &CoeffPolytope,
    batch: &DataBatch,
    xbar: &DVector<f64>,
    ubar: &DVector<f64>,
) -> Result<DVector<f64>, TubeGainError> {
    let r_mats = facet_row_matrices(h_mat, mdw);
    let mut xu = DVector::zeros(xbar.len() + ubar.len());
    xu.rows_mut(0, xbar.len()).copy_from(xbar);
    xu.rows_mut(xbar.len(), ubar.len()).copy_from(ubar);
    let v = batch.d0_pinv() * xu;
    facet_z_from_rows(&r_mats, pdw, &v)
}

fn facet_z_from_rows(
    r_mats: &[DMatrix<f64>],
    pdw: &CoeffPolytope,
    v: &DVector<f64>,
) -> Result<DVector<f64>, TubeGainError> {
    let mut z = DVector::zeros(r_mats.len());
    for (j, r) in r_mats.iter().enumerate() {
        let d = r * v;
        if d.len() == 0 || d.amax() == 0.0 {
            continue;
        }
        z[j] = pdw.abs_support(&d)?;
    }
    Ok(z)
}

// ---------------------------------------------------------------------------
// Tube-gain LP
// ---------------------------------------------------------------------------

/// Ancillary gain parametrization and its certificates.
#[derive(Debug, Clone)]
pub struct GainParam {
    /// `T x n` parametrization with `X0 V_K = I`.
    pub v_k: DMatrix<f64>,
    /// Realized feedback gain `K = U0 V_K`.
    pub k: DMatrix<f64>,
    /// Entrywise absolute-sum bound on `V_K` (also bounds the row-sum norm).
    pub rho: f64,
    /// Facet-wise dual multipliers with `P H_e = H_e (X1 - C_dw) V_K`.
    pub p_dual: DMatrix<f64>,
}

/// Facet bounds entering the contraction constraint.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FacetBounds {
    pub y: Vec<f64>,
    pub l: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TubeGainSolution {
    pub gain: GainParam,
    pub lambda: f64,
    pub bounds: FacetBounds,
}

#[derive(Debug, Clone)]
pub enum TubeGainOutcome {
    Optimal(Box<TubeGainSolution>),
    Infeasible { bounds: FacetBounds },
}

impl TubeGainOutcome {
    pub fn is_optimal(&self) -> bool {
        matches!(self, TubeGainOutcome::Optimal(_))
    }
}

/// Options for the contraction LP.
#[derive(Debug, Clone, Copy)]
pub struct TubeGainOptions {
    pub sigma: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Fix the contraction factor (used by the invariance-mode re-solve).
    pub lambda_fixed: Option<f64>,
}

impl Default for TubeGainOptions {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            lambda_min: 1e-3,
            lambda_max: 1.0 - 1e-6,
            lambda_fixed: None,
        }
    }
}

impl TubeGainOptions {
    pub fn with_sigma(sigma: f64) -> Self {
        Self {
            sigma,
            ..Self::default()
        }
    }

    /// Invariance mode: certify the tube as invariant (`lambda = 1`) rather
    /// than contractive.
    pub fn invariance(sigma: f64) -> Self {
        Self {
            sigma,
            lambda_fixed: Some(1.0),
            ..Self::default()
        }
    }
}

/// Precomputed per-scenario quantities for repeated tube-gain solves.
pub struct TubeGainContext {
    h_mat: DMatrix<f64>,
    c_h: DVector<f64>,
    y: DVector<f64>,
    r_mats: Vec<DMatrix<f64>>,
    coord_max: DMatrix<f64>,
    /// `H_e (X1 - C_dw)`.
    h_x1c: DMatrix<f64>,
    x0: DMatrix<f64>,
    u0: DMatrix<f64>,
    d0_pinv: DMatrix<f64>,
    pub pdw: CoeffPolytope,
}

impl TubeGainContext {
    pub fn new(
        h_mat: &DMatrix<f64>,
        batch: &DataBatch,
        mdw: &ConstrainedMatrixZonotope,
        pdw: CoeffPolytope,
        zw: &Zonotope,
    ) -> Result<Self, TubeGainError> {
        let r_mats = facet_row_matrices(h_mat, mdw);
        let coord_max = facet_coord_max_from_rows(&r_mats, &pdw)?;
        let y = facet_y(h_mat, zw);
        let h_x1c = h_mat * (batch.x1() - mdw.center());
        Ok(Self {
            h_mat: h_mat.clone(),
            c_h: zw.center().clone(),
            y,
            r_mats,
            coord_max,
            h_x1c,
            x0: batch.x0().clone(),
            u0: batch.u0().clone(),
            d0_pinv: batch.d0_pinv().clone(),
            pdw,
        })
    }

    pub fn facet_y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn coord_max(&self) -> &DMatrix<f64> {
        &self.coord_max
    }

    /// `l` bound for a given tube magnitude.
    pub fn facet_l(&self, m_e: f64) -> DVector<f64> {
        DVector::from_fn(self.coord_max.nrows(), |j, _| {
            m_e * (0..self.coord_max.ncols())
                .map(|k| self.coord_max[(j, k)])
                .fold(0.0, f64::max)
        })
    }

    /// `z` bound at a nominal pair.
    pub fn facet_z(
        &self,
        xbar: &DVector<f64>,
        ubar: &DVector<f64>,
    ) -> Result<DVector<f64>, TubeGainError> {
        let mut xu = DVector::zeros(xbar.len() + ubar.len());
        xu.rows_mut(0, xbar.len()).copy_from(xbar);
        xu.rows_mut(xbar.len(), ubar.len()).copy_from(ubar);
        let v = &self.d0_pinv * xu;
        facet_z_from_rows(&self.r_mats, &self.pdw, &v)
    }

    /// Check whether an existing solution still certifies the tube under a
    /// fresh mismatch bound `z` (used after the nominal pair moves).
    pub fn certificate_holds(
        &self,
        tube: &TubeState,
        sol: &TubeGainSolution,
        z: &DVector<f64>,
        slack_tol: f64,
    ) -> bool {
        let q = tube.num_facets();
        let b = tube.coord_bounds();
        let s_abs = sol.gain.v_k.map(f64::abs);
        let wrow = &s_abs * b;
        for j in 0..q {
            let model: f64 = (0..self.coord_max.ncols())
                .map(|k| self.coord_max[(j, k)] * wrow[k])
                .sum();
            let lhs = (sol.gain.p_dual.row(j) * tube.h_vec())[(0, 0)]
                + (self.h_mat.row(j) * &self.c_h)[(0, 0)]
                + model
                + z[j]
                + self.y[j];
            if lhs > sol.lambda * tube.h_vec()[j] + slack_tol {
                return false;
            }
        }
        true
    }

    /// Solve the contraction LP for the current tube and nominal pair.
    pub fn solve(
        &self,
        tube: &TubeState,
        xbar: &DVector<f64>,
        ubar: &DVector<f64>,
        opts: &TubeGainOptions,
    ) -> Result<TubeGainOutcome, TubeGainError> {
        let z = self.facet_z(xbar, ubar)?;
        self.solve_with_z(tube, &z, opts)
    }

    pub fn solve_with_z(
        &self,
        tube: &TubeState,
        z: &DVector<f64>,
        opts: &TubeGainOptions,
    ) -> Result<TubeGainOutcome, TubeGainError> {
        let q = tube.num_facets();
        let n = tube.dim();
        let t_len = self.x0.ncols();
        let h = tube.h_vec();
        let b = tube.coord_bounds();
        let bounds = FacetBounds {
            y: self.y.iter().copied().collect(),
            l: self.facet_l(tube.m_e()).iter().copied().collect(),
            z: z.iter().copied().collect(),
        };

        // Variable layout: P (q*q, row-major) | V (T*n, row-major) |
        // S (T*n) | rho | lambda.
        let np = q * q;
        let nv = t_len * n;
        let total = np + 2 * nv + 2;
        let ip = |j: usize, k: usize| j * q + k;
        let iv = |r: usize, c: usize| np + r * n + c;
        let is = |r: usize, c: usize| np + nv + r * n + c;
        let irho = np + 2 * nv;
        let ilam = np + 2 * nv + 1;

        let n_ineq = q + 2 * nv + 1;
        let mut a_in = DMatrix::zeros(n_ineq, total);
        let mut b_in = DVector::zeros(n_ineq);
        // Facet rows:
        // P h + sum_kc m_jk b_c S_kc - lam h_j <= -(H c_h)_j - z_j - y_j
        for j in 0..q {
            for k in 0..q {
                a_in[(j, ip(j, k))] = h[k];
            }
            for k in 0..t_len {
                let mjk = self.coord_max[(j, k)];
                if mjk != 0.0 {
                    for c in 0..n {
                        a_in[(j, is(k, c))] = mjk * b[c];
                    }
                }
            }
            a_in[(j, ilam)] = -h[j];
            b_in[j] = -(self.h_mat.row(j) * &self.c_h)[(0, 0)] - z[j] - self.y[j];
        }
        // |V| <= S
        for r in 0..t_len {
            for c in 0..n {
                let row1 = q + r * n + c;
                let row2 = q + nv + r * n + c;
                a_in[(row1, iv(r, c))] = 1.0;
                a_in[(row1, is(r, c))] = -1.0;
                a_in[(row2, iv(r, c))] = -1.0;
                a_in[(row2, is(r, c))] = -1.0;
            }
        }
        // entrywise sum of S <= rho
        let rho_row = q + 2 * nv;
        for r in 0..t_len {
            for c in 0..n {
                a_in[(rho_row, is(r, c))] = 1.0;
            }
        }
        a_in[(rho_row, irho)] = -1.0;

        // Equalities: P H_e = H_e (X1 - C_dw) V  and  X0 V = I.
        let n_eq = q * n + n * n;
        let mut a_eq = DMatrix::zeros(n_eq, total);
        let mut b_eq = DVector::zeros(n_eq);
        for j in 0..q {
            for c in 0..n {
                let row = j * n + c;
                for k in 0..q {
                    a_eq[(row, ip(j, k))] = self.h_mat[(k, c)];
                }
                for r in 0..t_len {
                    a_eq[(row, iv(r, c))] -= self.h_x1c[(j, r)];
                }
            }
        }
        for i in 0..n {
            for c in 0..n {
                let row = q * n + i * n + c;
                for r in 0..t_len {
                    a_eq[(row, iv(r, c))] = self.x0[(i, r)];
                }
                b_eq[row] = if i == c { 1.0 } else { 0.0 };
            }
        }

        let mut var_bounds: Vec<(Option<f64>, Option<f64>)> = Vec::with_capacity(total);
        var_bounds.extend(std::iter::repeat((Some(0.0), None)).take(np));
        var_bounds.extend(std::iter::repeat((None, None)).take(nv));
        var_bounds.extend(std::iter::repeat((Some(0.0), None)).take(nv));
        var_bounds.push((Some(0.0), None));
        match opts.lambda_fixed {
            Some(l) => var_bounds.push((Some(l), Some(l))),
            None => var_bounds.push((Some(opts.lambda_min), Some(opts.lambda_max))),
        }

        let mut cost = DVector::zeros(total);
        cost[irho] = 1.0;
        cost[ilam] = opts.sigma;

        let mut p = LpProblem::new(cost);
        p.ineq = Some((a_in, b_in));
        p.eq = Some((a_eq, b_eq));
        p.bounds = Some(var_bounds);
        let res = solve_lp(&p);
        match res.status {
            SolveStatus::Optimal => {
                let x = res.x;
                let p_dual = DMatrix::from_fn(q, q, |j, k| x[ip(j, k)].max(0.0));
                let v_k = DMatrix::from_fn(t_len, n, |r, c| x[iv(r, c)]);
                let k = &self.u0 * &v_k;
                let lambda = x[ilam];
                Ok(TubeGainOutcome::Optimal(Box::new(TubeGainSolution {
                    gain: GainParam {
                        v_k,
                        k,
                        rho: x[irho],
                        p_dual,
                    },
                    lambda,
                    bounds,
                })))
            }
            SolveStatus::Infeasible => Ok(TubeGainOutcome::Infeasible { bounds }),
            other => Err(TubeGainError::SolverFailure(format!(
                "tube-gain LP ended with status {other}"
            ))),
        }
    }
}

/// One-shot tube-gain solve building its own context (hot loops keep a
/// [`TubeGainContext`] instead).
#[allow(clippy::too_many_arguments)]
pub fn solve_tube_gain(
    tube: &TubeState,
    batch: &DataBatch,
    mdw: &ConstrainedMatrixZonotope,
    pdw: &CoeffPolytope,
    zw: &Zonotope,
    xbar: &DVector<f64>,
    ubar: &DVector<f64>,
    sigma: f64,
) -> Result<TubeGainOutcome, TubeGainError> {
    let ctx = TubeGainContext::new(tube.h_mat(), batch, mdw, pdw.clone(), zw)?;
    ctx.solve(tube, xbar, ubar, &TubeGainOptions::with_sigma(sigma))
}

// ---------------------------------------------------------------------------
// One-step error set
// ---------------------------------------------------------------------------

/// The constrained zonotope containing the next error for a given current
/// error, nominal pair, and gain. Coefficients are `[b; b; eta]` with the two
/// `b` blocks tied by explicit equality rows.
pub fn error_set_next(
    e: &DVector<f64>,
    xbar: &DVector<f64>,
    ubar: &DVector<f64>,
    gain: &GainParam,
    batch: &DataBatch,
    mdw: &ConstrainedMatrixZonotope,
    zw: &Zonotope,
) -> Result<ConstrainedZonotope, TubeGainError> {
    let n = e.len();
    let s_c = mdw.num_blocks();
    let s_w = zw.num_generators();
    let ve = &gain.v_k * e;
    let mut xu = DVector::zeros(xbar.len() + ubar.len());
    xu.rows_mut(0, xbar.len()).copy_from(xbar);
    xu.rows_mut(xbar.len(), ubar.len()).copy_from(ubar);
    let v = batch.d0_pinv() * xu;

    let mut gens = DMatrix::zeros(n, 2 * s_c + s_w);
    for (i, g) in mdw.blocks().iter().enumerate() {
        gens.column_mut(i).copy_from(&(-(g * &ve)));
        gens.column_mut(s_c + i).copy_from(&(-(g * &v)));
    }
    gens.columns_mut(2 * s_c, s_w).copy_from(zw.generators());
    let center = (batch.x1() - mdw.center()) * &ve + zw.center();

    let (avec, bvec) = mdw.constraints().vectorized();
    let rc = avec.nrows();
    let rows = 2 * rc + s_c;
    let mut eq_a = DMatrix::zeros(rows, 2 * s_c + s_w);
    let mut eq_b = DVector::zeros(rows);
    if rc > 0 {
        eq_a.view_mut((0, 0), (rc, s_c)).copy_from(&avec);
        eq_b.rows_mut(0, rc).copy_from(&bvec);
        eq_a.view_mut((rc, s_c), (rc, s_c)).copy_from(&avec);
        eq_b.rows_mut(rc, rc).copy_from(&bvec);
    }
    // Shared-coefficient ties between the two blocks.
    for i in 0..s_c {
        eq_a[(2 * rc + i, i)] = 1.0;
        eq_a[(2 * rc + i, s_c + i)] = -1.0;
    }
    Ok(ConstrainedZonotope::new(gens, center, eq_a, eq_b)?)
}

/// Evaluate the next error directly from sampled coefficients, bypassing the
/// constrained-zonotope assembly (used by the Monte-Carlo containment
/// oracle).
pub struct ErrorStepEvaluator<'a> {
    mdw: &'a ConstrainedMatrixZonotope,
    x1c_v: DMatrix<f64>,
    v: DVector<f64>,
    zw: &'a Zonotope,
    v_k: &'a DMatrix<f64>,
}

impl<'a> ErrorStepEvaluator<'a> {
    pub fn new(
        gain: &'a GainParam,
        batch: &DataBatch,
        mdw: &'a ConstrainedMatrixZonotope,
        zw: &'a Zonotope,
        xbar: &DVector<f64>,
        ubar: &DVector<f64>,
    ) -> Self {
        let mut xu = DVector::zeros(xbar.len() + ubar.len());
        xu.rows_mut(0, xbar.len()).copy_from(xbar);
        xu.rows_mut(xbar.len(), ubar.len()).copy_from(ubar);
        let v = batch.d0_pinv() * xu;
        let x1c_v = (batch.x1() - mdw.center()) * &gain.v_k;
        Self {
            mdw,
            x1c_v,
            v,
            zw,
            v_k: &gain.v_k,
        }
    }

    /// Next error for current error `e`, disturbance coefficients `beta`, and
    /// disturbance cube point `eta`.
    pub fn step(
        &self,
        e: &DVector<f64>,
        beta: &DVector<f64>,
        eta: &DVector<f64>,
    ) -> DVector<f64> {
        let ve = self.v_k * e;
        let mut out = &self.x1c_v * e + self.zw.center() + self.zw.generators() * eta;
        for (i, g) in self.mdw.blocks().iter().enumerate() {
            if beta[i] != 0.0 {
                out -= (g * &ve) * beta[i];
                out -= (g * &self.v) * beta[i];
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Lyapunov value and facet comparison
// ---------------------------------------------------------------------------

/// Polytopic Lyapunov value `max_j H_e^j e / h_e^j`.
pub fn lyapunov_value(e: &DVector<f64>, tube: &TubeState) -> f64 {
    let he = tube.h_mat() * e;
    (0..tube.num_facets())
        .map(|j| he[j] / tube.h_vec()[j])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Closed-loop versus open-loop facet-bound comparison.
#[derive(Debug, Clone)]
pub struct GammaComparison {
    pub gamma_cl: DVector<f64>,
    pub gamma_ol: DVector<f64>,
    /// `gamma_cl[j] < gamma_ol[j]` per facet.
    pub facet_condition: Vec<bool>,
}

/// Worst-case open-loop mismatch contribution per facet:
/// `F_j = max over vertices of X x U of sum_i |H_e^j G_ol^i v|` with
/// `G_ol^i` the extreme open-loop mismatch blocks. Falls back to per-block
/// support queries when the product polytope's vertex enumeration exceeds
/// the cap.
pub fn open_loop_mismatch_bound(
    h_mat: &DMatrix<f64>,
    mol_blocks: &[DMatrix<f64>],
    xu_set: &Polytope,
    cap: &VertexCap,
) -> Result<DVector<f64>, TubeGainError> {
    let q = h_mat.nrows();
    let mut f = DVector::zeros(q);
    match xu_set.vertices(cap) {
        Ok(verts) if !verts.is_empty() => {
            for j in 0..q {
                let rows: Vec<DVector<f64>> = mol_blocks
                    .iter()
                    .map(|g| (h_mat.row(j) * g).transpose())
                    .collect();
                let mut best = 0.0f64;
                for v in &verts {
                    let tot: f64 = rows.iter().map(|r| r.dot(v).abs()).sum();
                    best = best.max(tot);
                }
                f[j] = best;
            }
        }
        _ => {
            // Decoupled per-block bound via support LPs over X x U.
            for j in 0..q {
                let mut tot = 0.0;
                for g in mol_blocks {
                    let d = (h_mat.row(j) * g).transpose();
                    let plus = xu_set.support(&d)?;
                    let minus = xu_set.support(&(-&d))?;
                    tot += plus.max(minus).max(0.0);
                }
                f[j] = tot;
            }
        }
    }
    Ok(f)
}

/// Compare the closed-loop facet bounds at the current nominal pair with the
/// open-loop bounds over the whole operating region. Diagnostic only.
#[allow(clippy::too_many_arguments)]
pub fn gamma_compare(
    tube: &TubeState,
    mdw: &ConstrainedMatrixZonotope,
    pdw: &CoeffPolytope,
    batch: &DataBatch,
    zw: &Zonotope,
    x_set: &Polytope,
    u_set: &Polytope,
    xbar: &DVector<f64>,
    ubar: &DVector<f64>,
    gain: &GainParam,
) -> Result<GammaComparison, TubeGainError> {
    let h_mat = tube.h_mat();
    let y = facet_y(h_mat, zw);
    let l = facet_l(h_mat, mdw, pdw, tube.m_e())?;
    let z = facet_z(h_mat, mdw, pdw, batch, xbar, ubar)?;
    let hch = h_mat * zw.center();
    let mol_blocks: Vec<DMatrix<f64>> = mdw
        .blocks()
        .iter()
        .map(|g| -(g * batch.d0_pinv()))
        .collect();
    let xu = x_set.cartesian_product(u_set);
    let f = open_loop_mismatch_bound(h_mat, &mol_blocks, &xu, &VertexCap::default())?;
    let q = tube.num_facets();
    let gamma_cl = DVector::from_fn(q, |j, _| hch[j] + gain.rho * l[j] + z[j] + y[j]);
    let gamma_ol = DVector::from_fn(q, |j, _| hch[j] + f[j] + y[j]);
    let facet_condition = (0..q).map(|j| gamma_cl[j] < gamma_ol[j]).collect();
    Ok(GammaComparison {
        gamma_cl,
        gamma_ol,
        facet_condition,
    })
}

/// Validate a returned solution against the LP's structural identities
/// (used by tests and the run verifier).
pub fn check_solution_invariants(
    ctx: &TubeGainContext,
    tube: &TubeState,
    sol: &TubeGainSolution,
    tol: f64,
) -> Result<(), String> {
    let n = tube.dim();
    let x0v = &ctx.x0 * &sol.gain.v_k;
    let resid = (&x0v - DMatrix::identity(n, n)).amax();
    if resid > tol {
        return Err(format!("X0 V_K deviates from identity by {resid:.3e}"));
    }
    let ph = &sol.gain.p_dual * &ctx.h_mat;
    let rhs = &ctx.h_x1c * &sol.gain.v_k;
    let dual_resid = (&ph - &rhs).amax();
    if dual_resid > tol {
        return Err(format!("dual identity residual {dual_resid:.3e}"));
    }
    if sol.gain.p_dual.min() < -1e-9 {
        return Err("negative dual entry".into());
    }
    let row_sum_norm = (0..sol.gain.v_k.nrows())
        .map(|r| {
            (0..sol.gain.v_k.ncols())
                .map(|c| sol.gain.v_k[(r, c)].abs())
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    if sol.gain.rho + 1e-9 < row_sum_norm {
        return Err(format!(
            "rho {} below the row-sum norm {row_sum_norm}",
            sol.gain.rho
        ));
    }
    Ok(())
}

/// Interval box of a tube (convenience for monitors).
pub fn tube_interval(tube: &TubeState) -> Result<IntervalBox, TubeGainError> {
    Ok(tube.polytope().interval_enclosure()?)
}

#[cfg(test)]
mod tests;
