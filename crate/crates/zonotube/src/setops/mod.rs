//! Set representations and set computations.
//!
//! Zonotopes and constrained (matrix) zonotopes carry all model and
//! disturbance uncertainty; H-polytopes carry admissible sets and tube
//! cross-sections. Constrained sets are certified nonempty at construction
//! via a feasibility LP on their coefficient polytope, and every sampling
//! routine returns points that pass the membership check.

mod json;

use crate::config::Tolerances;
use crate::optim::{solve_lp, LpProblem, SolveStatus};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SetError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(String),
    #[error("empty set: coefficient polytope infeasible (slack {0:.3e})")]
    Empty(f64),
    #[error("polytope unbounded in the queried direction")]
    Unbounded,
    #[error("vertex enumeration cap exceeded (dim {dim}, combinations {combinations})")]
    VertexCapExceeded { dim: usize, combinations: u128 },
    #[error("solver failure during {0}")]
    SolverFailure(String),
}

fn check_finite(name: &str, it: impl Iterator<Item = f64>) -> Result<(), SetError> {
    for v in it {
        if !v.is_finite() {
            return Err(SetError::NonFinite(name.into()));
        }
    }
    Ok(())
}

/// Minimum infinity-norm slack of `M z = v` over `||z||_inf <= 1`.
///
/// Returns the optimal slack; the system counts as satisfiable when the slack
/// is at most the emptiness tolerance (scaled by the right-hand side).
pub(crate) fn equality_slack(m: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64, SetError> {
    let (r, s) = (m.nrows(), m.ncols());
    if r == 0 {
        return Ok(0.0);
    }
    // Variables: [z (s); slack (1)]
    let mut cost = DVector::zeros(s + 1);
    cost[s] = 1.0;
    let mut a = DMatrix::zeros(2 * r, s + 1);
    let mut b = DVector::zeros(2 * r);
    for i in 0..r {
        for j in 0..s {
            a[(i, j)] = m[(i, j)];
            a[(r + i, j)] = -m[(i, j)];
        }
        a[(i, s)] = -1.0;
        a[(r + i, s)] = -1.0;
        b[i] = v[i];
        b[r + i] = -v[i];
    }
    let mut bounds = vec![(Some(-1.0), Some(1.0)); s];
    bounds.push((Some(0.0), None));
    let mut p = LpProblem::new(cost);
    p.ineq = Some((a, b));
    p.bounds = Some(bounds);
    let res = solve_lp(&p);
    if res.status != SolveStatus::Optimal {
        return Err(SetError::SolverFailure("equality slack LP".into()));
    }
    Ok(res.objective.max(0.0))
}

/// Nearest box-and-equality-feasible point to `draw` in the infinity norm.
fn project_coefficients(
    m: &DMatrix<f64>,
    v: &DVector<f64>,
    eq_tol: f64,
    draw: &DVector<f64>,
) -> Result<DVector<f64>, SetError> {
    let (r, s) = (m.nrows(), m.ncols());
    // Variables: [z (s); t (1)], minimize t with |z - draw| <= t.
    let mut cost = DVector::zeros(s + 1);
    cost[s] = 1.0;
    let rows = 2 * s + 2 * r;
    let mut a = DMatrix::zeros(rows, s + 1);
    let mut b = DVector::zeros(rows);
    for j in 0..s {
        a[(j, j)] = 1.0;
        a[(j, s)] = -1.0;
        b[j] = draw[j];
        a[(s + j, j)] = -1.0;
        a[(s + j, s)] = -1.0;
        b[s + j] = -draw[j];
    }
    for i in 0..r {
        for j in 0..s {
            a[(2 * s + i, j)] = m[(i, j)];
            a[(2 * s + r + i, j)] = -m[(i, j)];
        }
        b[2 * s + i] = v[i] + eq_tol;
        b[2 * s + r + i] = -v[i] + eq_tol;
    }
    let mut bounds = vec![(Some(-1.0), Some(1.0)); s];
    bounds.push((Some(0.0), None));
    let mut p = LpProblem::new(cost);
    p.ineq = Some((a, b));
    p.bounds = Some(bounds);
    let res = solve_lp(&p);
    if res.status != SolveStatus::Optimal {
        return Err(SetError::Empty(f64::NAN));
    }
    Ok(res.x.rows(0, s).into_owned())
}

/// Maximize `d . z` over `{z : M z = v (within eq_tol), ||z||_inf <= 1}`.
fn coefficient_support(
    m: &DMatrix<f64>,
    v: &DVector<f64>,
    eq_tol: f64,
    d: &DVector<f64>,
) -> Result<f64, SetError> {
    let (r, s) = (m.nrows(), m.ncols());
    let mut p = LpProblem::new(-d.clone());
    if r > 0 {
        let mut a = DMatrix::zeros(2 * r, s);
        let mut b = DVector::zeros(2 * r);
        for i in 0..r {
            for j in 0..s {
                a[(i, j)] = m[(i, j)];
                a[(r + i, j)] = -m[(i, j)];
            }
            b[i] = v[i] + eq_tol;
            b[r + i] = -v[i] + eq_tol;
        }
        p.ineq = Some((a, b));
    }
    p.bounds = Some(vec![(Some(-1.0), Some(1.0)); s]);
    let res = solve_lp(&p);
    match res.status {
        SolveStatus::Optimal => Ok(-res.objective),
        SolveStatus::Infeasible => Err(SetError::Empty(f64::NAN)),
        _ => Err(SetError::SolverFailure("coefficient support LP".into())),
    }
}

fn scaled_tol(v: &DVector<f64>, tol: f64) -> f64 {
    tol * (1.0 + v.amax())
}

// ---------------------------------------------------------------------------
// Zonotope
// ---------------------------------------------------------------------------

/// `{c + G z : ||z||_inf <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self, SetError> {
        if generators.nrows() != center.len() {
            return Err(SetError::DimensionMismatch(format!(
                "generators {}x{} vs center dim {}",
                generators.nrows(),
                generators.ncols(),
                center.len()
            )));
        }
        check_finite("zonotope", center.iter().chain(generators.iter()).copied())?;
        Ok(Self { center, generators })
    }

    /// Singleton `{c}`.
    pub fn singleton(center: DVector<f64>) -> Self {
        let n = center.len();
        Self {
            center,
            generators: DMatrix::zeros(n, 0),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope, SetError> {
        if self.dim() != other.dim() {
            return Err(SetError::DimensionMismatch("minkowski sum".into()));
        }
        let mut g = DMatrix::zeros(self.dim(), self.num_generators() + other.num_generators());
        g.columns_mut(0, self.num_generators())
            .copy_from(&self.generators);
        g.columns_mut(self.num_generators(), other.num_generators())
            .copy_from(&other.generators);
        Ok(Zonotope {
            center: &self.center + &other.center,
            generators: g,
        })
    }

    /// Image under `x -> M x`.
    pub fn linear_map(&self, m: &DMatrix<f64>) -> Result<Zonotope, SetError> {
        if m.ncols() != self.dim() {
            return Err(SetError::DimensionMismatch("linear map".into()));
        }
        Ok(Zonotope {
            center: m * &self.center,
            generators: m * &self.generators,
        })
    }

    /// Exact support function `d'c + ||G'd||_1`.
    pub fn support(&self, d: &DVector<f64>) -> f64 {
        let gt_d = self.generators.transpose() * d;
        d.dot(&self.center) + gt_d.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_with(x, &Tolerances::DEFAULT)
    }

    pub fn contains_with(&self, x: &DVector<f64>, tol: &Tolerances) -> bool {
        let v = x - &self.center;
        match equality_slack(&self.generators, &v) {
            Ok(s) => s <= scaled_tol(&v, tol.emptiness),
            Err(_) => false,
        }
    }

    /// `c + G z` with `z` uniform on the coefficient cube.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.num_generators(), |_, _| rng.gen_range(-1.0..=1.0));
        &self.center + &self.generators * z
    }

    /// Scaled copy `{c + a G z}` (center kept).
    pub fn scale_generators(&self, a: f64) -> Zonotope {
        Zonotope {
            center: self.center.clone(),
            generators: &self.generators * a,
        }
    }
}

// ---------------------------------------------------------------------------
// Constrained zonotope
// ---------------------------------------------------------------------------

/// `{c + G z : A z = b, ||z||_inf <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedZonotope {
    generators: DMatrix<f64>,
    center: DVector<f64>,
    eq_a: DMatrix<f64>,
    eq_b: DVector<f64>,
    /// Slack certified at construction; reused as the equality tolerance
    /// when sampling so that samples always pass membership.
    eq_slack: f64,
}

impl ConstrainedZonotope {
    pub fn new(
        generators: DMatrix<f64>,
        center: DVector<f64>,
        eq_a: DMatrix<f64>,
        eq_b: DVector<f64>,
    ) -> Result<Self, SetError> {
        Self::with_tol(generators, center, eq_a, eq_b, &Tolerances::DEFAULT)
    }

    pub fn with_tol(
        generators: DMatrix<f64>,
        center: DVector<f64>,
        eq_a: DMatrix<f64>,
        eq_b: DVector<f64>,
        tol: &Tolerances,
    ) -> Result<Self, SetError> {
        if generators.nrows() != center.len() {
            return Err(SetError::DimensionMismatch("generators vs center".into()));
        }
        if eq_a.nrows() != eq_b.len() || (eq_a.nrows() > 0 && eq_a.ncols() != generators.ncols()) {
            return Err(SetError::DimensionMismatch("equality block".into()));
        }
        check_finite(
            "constrained zonotope",
            center
                .iter()
                .chain(generators.iter())
                .chain(eq_a.iter())
                .chain(eq_b.iter())
                .copied(),
        )?;
        let slack = equality_slack(&eq_a, &eq_b)?;
        if slack > scaled_tol(&eq_b, tol.emptiness) {
            return Err(SetError::Empty(slack));
        }
        Ok(Self {
            generators,
            center,
            eq_a,
            eq_b,
            eq_slack: slack,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    pub fn eq_a(&self) -> &DMatrix<f64> {
        &self.eq_a
    }

    pub fn eq_b(&self) -> &DVector<f64> {
        &self.eq_b
    }

    fn eq_tol(&self) -> f64 {
        (2.0 * self.eq_slack).max(1e-10 * (1.0 + self.eq_b.amax()))
    }

    /// Support function via an LP over the coefficient polytope; falls back to
    /// the closed zonotope formula when no equalities are present.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64, SetError> {
        if self.eq_a.nrows() == 0 {
            let gt_d = self.generators.transpose() * d;
            return Ok(d.dot(&self.center) + gt_d.iter().map(|v| v.abs()).sum::<f64>());
        }
        let dir = self.generators.transpose() * d;
        let val = coefficient_support(&self.eq_a, &self.eq_b, self.eq_tol(), &dir)?;
        Ok(d.dot(&self.center) + val)
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_with(x, &Tolerances::DEFAULT)
    }

    pub fn contains_with(&self, x: &DVector<f64>, tol: &Tolerances) -> bool {
        // Feasibility of [G; A] z = [x - c; b] over the cube, with the slack
        // on the generator rows scaled to the point's magnitude.
        let s = self.num_generators();
        let rows = self.dim() + self.eq_a.nrows();
        let mut m = DMatrix::zeros(rows, s);
        let mut v = DVector::zeros(rows);
        m.rows_mut(0, self.dim()).copy_from(&self.generators);
        v.rows_mut(0, self.dim()).copy_from(&(x - &self.center));
        if self.eq_a.nrows() > 0 {
            m.rows_mut(self.dim(), self.eq_a.nrows()).copy_from(&self.eq_a);
            v.rows_mut(self.dim(), self.eq_a.nrows()).copy_from(&self.eq_b);
        }
        match equality_slack(&m, &v) {
            Ok(slack) => slack <= scaled_tol(&v, tol.emptiness),
            Err(_) => false,
        }
    }

    /// Draw a uniform cube point and project it onto the coefficient polytope.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>, SetError> {
        let draw = DVector::from_fn(self.num_generators(), |_, _| rng.gen_range(-1.0..=1.0));
        let z = project_coefficients(&self.eq_a, &self.eq_b, self.eq_tol(), &draw)?;
        Ok(&self.center + &self.generators * z)
    }

    /// Sample a feasible coefficient vector rather than a point.
    pub fn sample_coefficients<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<DVector<f64>, SetError> {
        let draw = DVector::from_fn(self.num_generators(), |_, _| rng.gen_range(-1.0..=1.0));
        project_coefficients(&self.eq_a, &self.eq_b, self.eq_tol(), &draw)
    }

    pub fn point_from_coefficients(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.generators * z
    }
}

// ---------------------------------------------------------------------------
// Matrix zonotope
// ---------------------------------------------------------------------------

/// `{C + sum_i G_i z_i : ||z||_inf <= 1}` with matrix-valued generators.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixZonotope {
    center: DMatrix<f64>,
    blocks: Vec<DMatrix<f64>>,
}

impl MatrixZonotope {
    pub fn new(center: DMatrix<f64>, blocks: Vec<DMatrix<f64>>) -> Result<Self, SetError> {
        for (i, b) in blocks.iter().enumerate() {
            if b.shape() != center.shape() {
                return Err(SetError::DimensionMismatch(format!(
                    "generator block {i} is {}x{}, center {}x{}",
                    b.nrows(),
                    b.ncols(),
                    center.nrows(),
                    center.ncols()
                )));
            }
        }
        check_finite(
            "matrix zonotope",
            center.iter().chain(blocks.iter().flatten()).copied(),
        )?;
        Ok(Self { center, blocks })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.center.shape()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn center(&self) -> &DMatrix<f64> {
        &self.center
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    /// Right-multiply the center and every generator block by `q`.
    pub fn block_right_multiply(&self, q: &DMatrix<f64>) -> Result<MatrixZonotope, SetError> {
        if q.nrows() != self.center.ncols() {
            return Err(SetError::DimensionMismatch("block right multiply".into()));
        }
        Ok(MatrixZonotope {
            center: &self.center * q,
            blocks: self.blocks.iter().map(|g| g * q).collect(),
        })
    }

    /// Column-stacked coefficient system `[vec(G_1) ... vec(G_s)] z = vec(X - C)`.
    fn coefficient_system(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let (n, m) = self.shape();
        let rows = n * m;
        let mut mssys = DMatrix::zeros(rows, self.blocks.len());
        for (i, g) in self.blocks.iter().enumerate() {
            mssys.column_mut(i).copy_from_slice(g.as_slice());
        }
        let diff = x - &self.center;
        let v = DVector::from_column_slice(diff.as_slice());
        (mssys, v)
    }

    pub fn contains_matrix(&self, x: &DMatrix<f64>) -> bool {
        self.contains_matrix_with(x, &Tolerances::DEFAULT)
    }

    pub fn contains_matrix_with(&self, x: &DMatrix<f64>, tol: &Tolerances) -> bool {
        if x.shape() != self.shape() {
            return false;
        }
        let (m, v) = self.coefficient_system(x);
        match equality_slack(&m, &v) {
            Ok(s) => s <= scaled_tol(&v, tol.emptiness),
            Err(_) => false,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let mut x = self.center.clone();
        for g in &self.blocks {
            x += g * rng.gen_range(-1.0..=1.0);
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Constrained matrix zonotope
// ---------------------------------------------------------------------------

/// Block equality pair `sum_i A_i z_i = B` shared by a set of coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlocks {
    a_blocks: Vec<DMatrix<f64>>,
    b: DMatrix<f64>,
}

impl ConstraintBlocks {
    pub fn new(a_blocks: Vec<DMatrix<f64>>, b: DMatrix<f64>) -> Result<Self, SetError> {
        for (i, a) in a_blocks.iter().enumerate() {
            if a.shape() != b.shape() {
                return Err(SetError::DimensionMismatch(format!(
                    "constraint block {i} is {}x{}, rhs {}x{}",
                    a.nrows(),
                    a.ncols(),
                    b.nrows(),
                    b.ncols()
                )));
            }
        }
        Ok(Self { a_blocks, b })
    }

    pub fn none(num_coefficients: usize) -> Self {
        Self {
            a_blocks: vec![DMatrix::zeros(0, 0); num_coefficients],
            b: DMatrix::zeros(0, 0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.b.nrows() * self.b.ncols() == 0
    }

    pub fn a_blocks(&self) -> &[DMatrix<f64>] {
        &self.a_blocks
    }

    pub fn rhs(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Column-stacked scalar system: row count `n_c * m_c`, one column per
    /// coefficient.
    pub fn vectorized(&self) -> (DMatrix<f64>, DVector<f64>) {
        if self.is_empty() {
            return (
                DMatrix::zeros(0, self.a_blocks.len()),
                DVector::zeros(0),
            );
        }
        let rows = self.b.nrows() * self.b.ncols();
        let mut m = DMatrix::zeros(rows, self.a_blocks.len());
        for (i, a) in self.a_blocks.iter().enumerate() {
            m.column_mut(i).copy_from_slice(a.as_slice());
        }
        (m, DVector::from_column_slice(self.b.as_slice()))
    }

    /// Stack two constraint groups acting on the same coefficient vector,
    /// zero-padding block widths so the block rows align.
    pub fn stack(groups: Vec<ConstraintBlocks>) -> Result<ConstraintBlocks, SetError> {
        let groups: Vec<_> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        if groups.is_empty() {
            return Ok(ConstraintBlocks::none(0));
        }
        let s = groups[0].a_blocks.len();
        for g in &groups {
            if g.a_blocks.len() != s {
                return Err(SetError::DimensionMismatch(
                    "constraint groups disagree on coefficient count".into(),
                ));
            }
        }
        let m_c = groups.iter().map(|g| g.b.ncols()).max().unwrap();
        let n_c: usize = groups.iter().map(|g| g.b.nrows()).sum();
        let mut b = DMatrix::zeros(n_c, m_c);
        let mut a_blocks = vec![DMatrix::zeros(n_c, m_c); s];
        let mut row = 0;
        for g in &groups {
            let (r, c) = g.b.shape();
            b.view_mut((row, 0), (r, c)).copy_from(&g.b);
            for (i, a) in g.a_blocks.iter().enumerate() {
                a_blocks[i].view_mut((row, 0), (r, c)).copy_from(a);
            }
            row += r;
        }
        ConstraintBlocks::new(a_blocks, b)
    }
}

/// Matrix zonotope whose coefficients additionally satisfy block equalities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedMatrixZonotope {
    center: DMatrix<f64>,
    blocks: Vec<DMatrix<f64>>,
    constraints: ConstraintBlocks,
    eq_slack: f64,
}

impl ConstrainedMatrixZonotope {
    pub fn new(
        center: DMatrix<f64>,
        blocks: Vec<DMatrix<f64>>,
        constraints: ConstraintBlocks,
    ) -> Result<Self, SetError> {
        Self::with_tol(center, blocks, constraints, &Tolerances::DEFAULT)
    }

    pub fn with_tol(
        center: DMatrix<f64>,
        blocks: Vec<DMatrix<f64>>,
        constraints: ConstraintBlocks,
        tol: &Tolerances,
    ) -> Result<Self, SetError> {
        for (i, g) in blocks.iter().enumerate() {
            if g.shape() != center.shape() {
                return Err(SetError::DimensionMismatch(format!(
                    "generator block {i}"
                )));
            }
        }
        if !constraints.is_empty() && constraints.a_blocks.len() != blocks.len() {
            return Err(SetError::DimensionMismatch(
                "constraint blocks vs generator blocks".into(),
            ));
        }
        check_finite(
            "constrained matrix zonotope",
            center.iter().chain(blocks.iter().flatten()).copied(),
        )?;
        let (m, v) = constraints.vectorized();
        let slack = if m.nrows() == 0 {
            0.0
        } else {
            equality_slack(&m, &v)?
        };
        if slack > scaled_tol(&v, tol.emptiness) {
            return Err(SetError::Empty(slack));
        }
        Ok(Self {
            center,
            blocks,
            constraints,
            eq_slack: slack,
        })
    }

    /// Unconstrained view of a plain matrix zonotope.
    pub fn from_matrix_zonotope(mz: &MatrixZonotope) -> Self {
        Self {
            center: mz.center.clone(),
            blocks: mz.blocks.clone(),
            constraints: ConstraintBlocks::none(mz.blocks.len()),
            eq_slack: 0.0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.center.shape()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn center(&self) -> &DMatrix<f64> {
        &self.center
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn constraints(&self) -> &ConstraintBlocks {
        &self.constraints
    }

    pub fn eq_tol(&self) -> f64 {
        let scale = if self.constraints.is_empty() {
            1.0
        } else {
            1.0 + self.constraints.b.amax()
        };
        (2.0 * self.eq_slack).max(1e-10 * scale)
    }

    pub fn block_right_multiply(&self, q: &DMatrix<f64>) -> Result<Self, SetError> {
        if q.nrows() != self.center.ncols() {
            return Err(SetError::DimensionMismatch("block right multiply".into()));
        }
        Ok(Self {
            center: &self.center * q,
            blocks: self.blocks.iter().map(|g| g * q).collect(),
            constraints: self.constraints.clone(),
            eq_slack: self.eq_slack,
        })
    }

    pub fn contains_matrix(&self, x: &DMatrix<f64>) -> bool {
        self.contains_matrix_with(x, &Tolerances::DEFAULT)
    }

    pub fn contains_matrix_with(&self, x: &DMatrix<f64>, tol: &Tolerances) -> bool {
        if x.shape() != self.shape() {
            return false;
        }
        let (n, mm) = self.shape();
        let (mc, vc) = self.constraints.vectorized();
        let rows = n * mm + mc.nrows();
        let mut m = DMatrix::zeros(rows, self.blocks.len());
        let mut v = DVector::zeros(rows);
        for (i, g) in self.blocks.iter().enumerate() {
            m.view_mut((0, i), (n * mm, 1)).copy_from_slice(g.as_slice());
        }
        let diff = x - &self.center;
        v.rows_mut(0, n * mm).copy_from_slice(diff.as_slice());
        if mc.nrows() > 0 {
            m.rows_mut(n * mm, mc.nrows()).copy_from(&mc);
            v.rows_mut(n * mm, mc.nrows()).copy_from(&vc);
        }
        match equality_slack(&m, &v) {
            Ok(s) => s <= scaled_tol(&v, tol.emptiness),
            Err(_) => false,
        }
    }

    /// Draw coefficients uniformly and restore feasibility by projection.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DMatrix<f64>, SetError> {
        let z = self.sample_coefficients(rng)?;
        Ok(self.point_from_coefficients(&z))
    }

    pub fn sample_coefficients<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<DVector<f64>, SetError> {
        let draw = DVector::from_fn(self.num_blocks(), |_, _| rng.gen_range(-1.0..=1.0));
        let (m, v) = self.constraints.vectorized();
        project_coefficients(&m, &v, self.eq_tol(), &draw)
    }

    pub fn point_from_coefficients(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut x = self.center.clone();
        for (i, g) in self.blocks.iter().enumerate() {
            x += g * z[i];
        }
        x
    }

    /// Intersection of two constrained matrix zonotopes over a fresh stacked
    /// coefficient vector `[z1; z2]`:
    /// generators `[G1 0]`, center `C1`, and equality rows
    /// `A1 z1 = B1`, `A2 z2 = B2`, `sum G1 z1 - sum G2 z2 = C2 - C1`.
    pub fn intersect(&self, other: &Self) -> Result<Self, SetError> {
        if self.shape() != other.shape() {
            return Err(SetError::DimensionMismatch("intersection".into()));
        }
        let (n, m) = self.shape();
        let s1 = self.num_blocks();
        let s2 = other.num_blocks();
        let mut blocks = Vec::with_capacity(s1 + s2);
        blocks.extend(self.blocks.iter().cloned());
        blocks.extend(std::iter::repeat(DMatrix::zeros(n, m)).take(s2));

        let mut groups = Vec::new();
        if !self.constraints.is_empty() {
            let bc = self.constraints.b.shape();
            let mut a = Vec::with_capacity(s1 + s2);
            a.extend(self.constraints.a_blocks.iter().cloned());
            a.extend(std::iter::repeat(DMatrix::zeros(bc.0, bc.1)).take(s2));
            groups.push(ConstraintBlocks::new(a, self.constraints.b.clone())?);
        }
        if !other.constraints.is_empty() {
            let bc = other.constraints.b.shape();
            let mut a = Vec::with_capacity(s1 + s2);
            a.extend(std::iter::repeat(DMatrix::zeros(bc.0, bc.1)).take(s1));
            a.extend(other.constraints.a_blocks.iter().cloned());
            groups.push(ConstraintBlocks::new(a, other.constraints.b.clone())?);
        }
        // Matching rows tie the two representations of the same member.
        let mut a = Vec::with_capacity(s1 + s2);
        a.extend(self.blocks.iter().cloned());
        a.extend(other.blocks.iter().map(|g| -g));
        groups.push(ConstraintBlocks::new(a, &other.center - &self.center)?);

        let constraints = ConstraintBlocks::stack(groups)?;
        Self::new(self.center.clone(), blocks, constraints)
    }
}

/// Matrix zonotope of horizon-length disturbance sequences: block
/// `(j-1)*s_w + i` places generator column `i` of `zw` in sequence column `j`.
pub fn concat_disturbance(zw: &Zonotope, t_len: usize) -> Result<MatrixZonotope, SetError> {
    if t_len == 0 {
        return Err(SetError::DimensionMismatch(
            "concatenation length must be at least 1".into(),
        ));
    }
    let n = zw.dim();
    let sw = zw.num_generators();
    let mut center = DMatrix::zeros(n, t_len);
    for j in 0..t_len {
        center.column_mut(j).copy_from(zw.center());
    }
    let mut blocks = Vec::with_capacity(t_len * sw);
    for j in 0..t_len {
        for i in 0..sw {
            let mut g = DMatrix::zeros(n, t_len);
            g.column_mut(j).copy_from(&zw.generators().column(i));
            blocks.push(g);
        }
    }
    MatrixZonotope::new(center, blocks)
}

// ---------------------------------------------------------------------------
// Polytope
// ---------------------------------------------------------------------------

/// `{x : H x <= h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    h_mat: DMatrix<f64>,
    h_vec: DVector<f64>,
}

/// Caps for exact vertex enumeration; beyond them callers must fall back to
/// LP-based support queries.
#[derive(Debug, Clone, Copy)]
pub struct VertexCap {
    pub max_dim: usize,
    pub max_combinations: u128,
}

impl Default for VertexCap {
    fn default() -> Self {
        Self {
            max_dim: 12,
            max_combinations: 200_000,
        }
    }
}

impl Polytope {
    pub fn new(h_mat: DMatrix<f64>, h_vec: DVector<f64>) -> Result<Self, SetError> {
        if h_mat.nrows() != h_vec.len() {
            return Err(SetError::DimensionMismatch("H rows vs h".into()));
        }
        check_finite("polytope", h_mat.iter().chain(h_vec.iter()).copied())?;
        Ok(Self { h_mat, h_vec })
    }

    /// Axis-aligned box `{|x_i| <= half_widths_i}` as `[I; -I]` rows.
    pub fn box_from_halfwidths(half_widths: &DVector<f64>) -> Self {
        let n = half_widths.len();
        let mut h = DMatrix::zeros(2 * n, n);
        let mut b = DVector::zeros(2 * n);
        for i in 0..n {
            h[(i, i)] = 1.0;
            h[(n + i, i)] = -1.0;
            b[i] = half_widths[i];
            b[n + i] = half_widths[i];
        }
        Self { h_mat: h, h_vec: b }
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn num_facets(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn h_mat(&self) -> &DMatrix<f64> {
        &self.h_mat
    }

    pub fn h_vec(&self) -> &DVector<f64> {
        &self.h_vec
    }

    /// Shifted copy `{x : H x <= h - H d}` (the set translated by `-d`).
    pub fn shift(&self, d: &DVector<f64>) -> Polytope {
        Polytope {
            h_mat: self.h_mat.clone(),
            h_vec: &self.h_vec - &self.h_mat * d,
        }
    }

    /// Scaled copy `P(H, a h)`.
    pub fn scale(&self, a: f64) -> Polytope {
        Polytope {
            h_mat: self.h_mat.clone(),
            h_vec: &self.h_vec * a,
        }
    }

    /// Cartesian product ordering `self` coordinates first.
    pub fn cartesian_product(&self, other: &Polytope) -> Polytope {
        let (n1, n2) = (self.dim(), other.dim());
        let (q1, q2) = (self.num_facets(), other.num_facets());
        let mut h = DMatrix::zeros(q1 + q2, n1 + n2);
        h.view_mut((0, 0), (q1, n1)).copy_from(&self.h_mat);
        h.view_mut((q1, n1), (q2, n2)).copy_from(&other.h_mat);
        let mut b = DVector::zeros(q1 + q2);
        b.rows_mut(0, q1).copy_from(&self.h_vec);
        b.rows_mut(q1, q2).copy_from(&other.h_vec);
        Polytope { h_mat: h, h_vec: b }
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.contains_with(x, &Tolerances::DEFAULT)
    }

    pub fn contains_with(&self, x: &DVector<f64>, tol: &Tolerances) -> bool {
        let r = &self.h_mat * x - &self.h_vec;
        r.iter().all(|v| *v <= tol.acceptance)
    }

    pub fn is_empty(&self) -> Result<bool, SetError> {
        let mut p = LpProblem::new(DVector::zeros(self.dim()));
        p.ineq = Some((self.h_mat.clone(), self.h_vec.clone()));
        let res = solve_lp(&p);
        match res.status {
            SolveStatus::Optimal => Ok(false),
            SolveStatus::Infeasible => Ok(true),
            _ => Err(SetError::SolverFailure("emptiness LP".into())),
        }
    }

    /// `max d.x` over the polytope via one LP.
    pub fn support(&self, d: &DVector<f64>) -> Result<f64, SetError> {
        if d.len() != self.dim() {
            return Err(SetError::DimensionMismatch("support direction".into()));
        }
        let mut p = LpProblem::new(-d.clone());
        p.ineq = Some((self.h_mat.clone(), self.h_vec.clone()));
        let res = solve_lp(&p);
        match res.status {
            SolveStatus::Optimal => Ok(-res.objective),
            SolveStatus::Unbounded => Err(SetError::Unbounded),
            SolveStatus::Infeasible => Err(SetError::Empty(f64::NAN)),
            _ => Err(SetError::SolverFailure("support LP".into())),
        }
    }

    /// Per-coordinate min/max via 2n support LPs.
    pub fn interval_enclosure(&self) -> Result<IntervalBox, SetError> {
        let n = self.dim();
        let mut lower = DVector::zeros(n);
        let mut upper = DVector::zeros(n);
        for i in 0..n {
            let mut d = DVector::zeros(n);
            d[i] = 1.0;
            upper[i] = self.support(&d)?;
            d[i] = -1.0;
            lower[i] = -self.support(&d)?;
        }
        Ok(IntervalBox::new(lower, upper)?)
    }

    /// `max_i max(|lower_i|, |upper_i|)` of the interval enclosure.
    pub fn inf_norm_bound(&self) -> Result<f64, SetError> {
        let b = self.interval_enclosure()?;
        Ok(b.inf_norm())
    }

    /// Exact vertex enumeration by active-set combinations, deduplicated at
    /// 1e-9. Errors when the configured cap is exceeded.
    pub fn vertices(&self, cap: &VertexCap) -> Result<Vec<DVector<f64>>, SetError> {
        let n = self.dim();
        let q = self.num_facets();
        let combos = binomial(q as u128, n as u128);
        if n > cap.max_dim || combos > cap.max_combinations {
            return Err(SetError::VertexCapExceeded {
                dim: n,
                combinations: combos,
            });
        }
        if q < n {
            return Err(SetError::Unbounded);
        }
        let mut verts: Vec<DVector<f64>> = Vec::new();
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let mut sub = DMatrix::zeros(n, n);
            let mut rhs = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                sub.set_row(k, &self.h_mat.row(i));
                rhs[k] = self.h_vec[i];
            }
            if let Some(v) = sub.lu().solve(&rhs) {
                if v.iter().all(|x| x.is_finite()) {
                    let feas = (&self.h_mat * &v - &self.h_vec)
                        .iter()
                        .all(|r| *r <= 1e-9);
                    if feas && !verts.iter().any(|w| (w - &v).amax() <= 1e-9) {
                        verts.push(v);
                    }
                }
            }
            // advance combination
            let mut k = n;
            let done = loop {
                if k == 0 {
                    break true;
                }
                k -= 1;
                if idx[k] < q - (n - k) {
                    idx[k] += 1;
                    for j in k + 1..n {
                        idx[j] = idx[j - 1] + 1;
                    }
                    break false;
                }
            };
            if done {
                break;
            }
        }
        Ok(verts)
    }

    /// Rejection sampling from the interval enclosure (tube cross-sections are
    /// box-like, so acceptance is high); errs out after `max_tries`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        max_tries: usize,
    ) -> Result<DVector<f64>, SetError> {
        let b = self.interval_enclosure()?;
        for _ in 0..max_tries {
            let x = DVector::from_fn(self.dim(), |i, _| {
                rng.gen_range(b.lower()[i]..=b.upper()[i])
            });
            if (&self.h_mat * &x - &self.h_vec).iter().all(|r| *r <= 0.0) {
                return Ok(x);
            }
        }
        Err(SetError::SolverFailure(
            "rejection sampling exhausted".into(),
        ))
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

// ---------------------------------------------------------------------------
// Interval box
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl IntervalBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, SetError> {
        if lower.len() != upper.len() {
            return Err(SetError::DimensionMismatch("interval box".into()));
        }
        for i in 0..lower.len() {
            if lower[i] > upper[i] + 1e-12 {
                return Err(SetError::DimensionMismatch(format!(
                    "interval box order violated at {i}: {} > {}",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        (0..self.lower.len())
            .all(|i| x[i] >= self.lower[i] - tol && x[i] <= self.upper[i] + tol)
    }

    /// Per-coordinate magnitude bound `max(|lower_i|, |upper_i|)`.
    pub fn abs_bounds(&self) -> DVector<f64> {
        DVector::from_fn(self.lower.len(), |i, _| {
            self.lower[i].abs().max(self.upper[i].abs())
        })
    }

    pub fn inf_norm(&self) -> f64 {
        self.abs_bounds().max()
    }
}
