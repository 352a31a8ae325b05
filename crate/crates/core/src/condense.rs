//! MPC problem builders.
//!
//! Four formulations of the same finite-horizon problem
//!
//! ```text
//! min Σ_{k=0}^{T−1} ‖x_k − x_g‖²_Q + ‖u_k − u_g‖²_R + ‖x_T − x_g‖²_Q
//! s.t. x_{k+1} = A_d x_k + B_d u_k + w_d,  u_min ≤ u_k ≤ u_max
//! ```
//!
//! `Large` keeps states as decision variables with dynamics as sparse
//! equality rows; `Small` eliminates them through `x = S u + v`. The
//! parameterized variants replace the per-step inputs by knot values.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::DiscreteLinearModel;
use crate::error::{check_dim, invalid, Error, Result};
use crate::param::KnotSchedule;
use crate::qp::{CscMatrix, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSpec {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    x_goal: DVector<f64>,
    u_goal: DVector<f64>,
    u_min: DVector<f64>,
    u_max: DVector<f64>,
    x_min: Option<DVector<f64>>,
    x_max: Option<DVector<f64>>,
    horizon: usize,
    model: DiscreteLinearModel,
}

impl MpcSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        x_goal: DVector<f64>,
        u_goal: DVector<f64>,
        u_min: DVector<f64>,
        u_max: DVector<f64>,
        horizon: usize,
        model: DiscreteLinearModel,
    ) -> Result<Self> {
        let n = model.state_dim();
        let m = model.input_dim();
        check_dim("Q rows", n, q.nrows())?;
        check_dim("Q columns", n, q.ncols())?;
        check_dim("R rows", m, r.nrows())?;
        check_dim("R columns", m, r.ncols())?;
        check_dim("x_goal", n, x_goal.len())?;
        check_dim("u_goal", m, u_goal.len())?;
        check_dim("u_min", m, u_min.len())?;
        check_dim("u_max", m, u_max.len())?;
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        if (&q - q.transpose()).amax() > 1e-9 {
            return Err(invalid("Q", "must be symmetric"));
        }
        let min_eig = q.clone().symmetric_eigen().eigenvalues.min();
        if min_eig < -1e-9 * q.amax().max(1.0) {
            return Err(invalid("Q", "must be positive semidefinite"));
        }
        if (&r - r.transpose()).amax() > 1e-9 || r.clone().cholesky().is_none() {
            return Err(invalid("R", "must be symmetric positive definite"));
        }
        if (0..m).any(|i| !(u_min[i] <= u_max[i])) {
            return Err(invalid("u_min", "must not exceed u_max"));
        }
        Ok(Self {
            q,
            r,
            x_goal,
            u_goal,
            u_min,
            u_max,
            x_min: None,
            x_max: None,
            horizon,
            model,
        })
    }

    /// State bounds, enforced by the large formulations on `x_1 … x_T`.
    pub fn with_state_bounds(mut self, x_min: DVector<f64>, x_max: DVector<f64>) -> Result<Self> {
        let n = self.state_dim();
        check_dim("x_min", n, x_min.len())?;
        check_dim("x_max", n, x_max.len())?;
        if (0..n).any(|i| !(x_min[i] <= x_max[i])) {
            return Err(invalid("x_min", "must not exceed x_max"));
        }
        self.x_min = Some(x_min);
        self.x_max = Some(x_max);
        Ok(self)
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn x_goal(&self) -> &DVector<f64> {
        &self.x_goal
    }

    pub fn u_goal(&self) -> &DVector<f64> {
        &self.u_goal
    }

    pub fn u_min(&self) -> &DVector<f64> {
        &self.u_min
    }

    pub fn u_max(&self) -> &DVector<f64> {
        &self.u_max
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn model(&self) -> &DiscreteLinearModel {
        &self.model
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    pub fn set_model(&mut self, model: DiscreteLinearModel) -> Result<()> {
        check_dim("model state", self.state_dim(), model.state_dim())?;
        check_dim("model input", self.input_dim(), model.input_dim())?;
        self.model = model;
        Ok(())
    }

    pub fn set_goal(&mut self, x_goal: DVector<f64>) -> Result<()> {
        check_dim("x_goal", self.state_dim(), x_goal.len())?;
        self.x_goal = x_goal;
        Ok(())
    }

    pub fn set_horizon(&mut self, horizon: usize) -> Result<()> {
        if horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        self.horizon = horizon;
        Ok(())
    }

    fn has_finite_state_bounds(&self) -> bool {
        let finite =
            |b: &Option<DVector<f64>>| b.as_ref().is_some_and(|v| v.iter().any(|x| x.is_finite()));
        finite(&self.x_min) || finite(&self.x_max)
    }

    /// `(x − x_g)ᵀQ(x − x_g) + (u − u_g)ᵀR(u − u_g)`
    pub fn stage_cost(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.state_cost(x) + {
            let e = u - &self.u_goal;
            e.dot(&(&self.r * &e))
        }
    }

    pub fn state_cost(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.x_goal;
        e.dot(&(&self.q * &e))
    }
}

/// Stacked predictions `[x_1; …; x_T] = S z + v`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrices {
    pub s: DMatrix<f64>,
    pub v: DVector<f64>,
}

pub fn prediction_matrices(
    model: &DiscreteLinearModel,
    horizon: usize,
    x0: &DVector<f64>,
) -> Result<PredictionMatrices> {
    let sched = KnotSchedule::full(horizon)?;
    let s = param_prediction(model, &sched);
    let v = free_response(model, horizon, x0)?;
    Ok(PredictionMatrices { s, v })
}

/// `v_i = A_d v_{i−1} + w_d` with `v_{−1} = x_0`.
fn free_response(
    model: &DiscreteLinearModel,
    horizon: usize,
    x0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = model.state_dim();
    check_dim("x0", n, x0.len())?;
    let mut v = DVector::zeros(n * horizon);
    let mut prev = x0.clone();
    for i in 0..horizon {
        let mut next = model.w.clone();
        next.gemv(1.0, &model.a, &prev, 1.0);
        v.rows_mut(i * n, n).copy_from(&next);
        prev = next;
    }
    Ok(v)
}

/// `S_param`: block row `i` is `A_d` times block row `i−1` plus `B_d`
/// spread over the knots by the interpolation weights of step `i`.
fn param_prediction(model: &DiscreteLinearModel, sched: &KnotSchedule) -> DMatrix<f64> {
    let n = model.state_dim();
    let m = model.input_dim();
    let t = sched.horizon();
    let p = sched.knots();
    let cols = m * p;
    let mut s = DMatrix::zeros(n * t, cols);
    for i in 0..t {
        if i > 0 {
            // only knots up to the current step can be populated
            let ic_prev = sched.coeffs(i - 1).expect("step in horizon");
            let width = m * (ic_prev.idx2 + 1);
            let prev = s.view((n * (i - 1), 0), (n, width)).into_owned();
            let next = &model.a * prev;
            s.view_mut((n * i, 0), (n, width)).copy_from(&next);
        }
        let ic = sched.coeffs(i).expect("step in horizon");
        for (idx, w) in [(ic.idx1, 1.0 - ic.c), (ic.idx2, ic.c)] {
            if w != 0.0 {
                let mut block = s.view_mut((n * i, m * idx), (n, m));
                block += &model.b * w;
            }
        }
    }
    s
}

/// `S_param = S · (W ⊗ I_m)`, used for cross-checks.
pub fn param_prediction_matrices(
    model: &DiscreteLinearModel,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
) -> Result<PredictionMatrices> {
    let s = param_prediction(model, sched);
    let v = free_response(model, sched.horizon(), x0)?;
    Ok(PredictionMatrices { s, v })
}

/// `W ⊗ I_m`: maps stacked knots to stacked per-step inputs.
pub fn expansion_matrix(sched: &KnotSchedule, m: usize) -> DMatrix<f64> {
    let w = sched.weight_matrix();
    let mut e = DMatrix::zeros(sched.horizon() * m, sched.knots() * m);
    for k in 0..sched.horizon() {
        for j in 0..sched.knots() {
            let v = w[(k, j)];
            if v != 0.0 {
                for c in 0..m {
                    e[(k * m + c, j * m + c)] = v;
                }
            }
        }
    }
    e
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    Large,
    Small,
    LargeParam { knots: usize },
    SmallParam { knots: usize },
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Large => "large",
            Formulation::Small => "small",
            Formulation::LargeParam { .. } => "large_param",
            Formulation::SmallParam { .. } => "small_param",
        }
    }

    pub fn schedule(&self, horizon: usize) -> Result<KnotSchedule> {
        match *self {
            Formulation::Large | Formulation::Small => KnotSchedule::full(horizon),
            Formulation::LargeParam { knots } | Formulation::SmallParam { knots } => {
                KnotSchedule::new(horizon, knots)
            }
        }
    }

    pub fn build(&self, spec: &MpcSpec, x0: &DVector<f64>) -> Result<QpProblem> {
        match *self {
            Formulation::Large => build_large(spec, x0),
            Formulation::Small => build_small(spec, x0),
            Formulation::LargeParam { .. } => {
                build_large_param(spec, &self.schedule(spec.horizon())?, x0)
            }
            Formulation::SmallParam { .. } => {
                build_small_param(spec, &self.schedule(spec.horizon())?, x0)
            }
        }
    }

    /// Offset of the first input (or first knot) inside the decision vector.
    pub fn input_offset(&self, spec: &MpcSpec) -> usize {
        match self {
            Formulation::Large | Formulation::LargeParam { .. } => {
                spec.state_dim() * (spec.horizon() + 1)
            }
            Formulation::Small | Formulation::SmallParam { .. } => 0,
        }
    }
}

pub fn build_large(spec: &MpcSpec, x0: &DVector<f64>) -> Result<QpProblem> {
    build_large_impl(spec, &KnotSchedule::full(spec.horizon())?, x0)
}

pub fn build_large_param(
    spec: &MpcSpec,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
) -> Result<QpProblem> {
    check_schedule(spec, sched)?;
    build_large_impl(spec, sched, x0)
}

pub fn build_small(spec: &MpcSpec, x0: &DVector<f64>) -> Result<QpProblem> {
    build_small_impl(spec, &KnotSchedule::full(spec.horizon())?, x0)
}

pub fn build_small_param(
    spec: &MpcSpec,
    sched: &KnotSchedule,
    x0: &DVector<f64>,
) -> Result<QpProblem> {
    check_schedule(spec, sched)?;
    build_small_impl(spec, sched, x0)
}

fn check_schedule(spec: &MpcSpec, sched: &KnotSchedule) -> Result<()> {
    check_dim("schedule horizon", spec.horizon(), sched.horizon())
}

/// Input cost on knots: `(W⊗I)ᵀ R_big (W⊗I) = (WᵀW) ⊗ R` and the matching
/// linear term `−(1ᵀW)_j R u_g`.
fn knot_input_cost(spec: &MpcSpec, sched: &KnotSchedule) -> (DMatrix<f64>, DVector<f64>) {
    let m = spec.input_dim();
    let p = sched.knots();
    let w = sched.weight_matrix();
    let wtw = w.transpose() * &w;
    let colsum = w.row_sum();
    let rug = &spec.r * &spec.u_goal;
    let mut pr = DMatrix::zeros(m * p, m * p);
    let mut qr = DVector::zeros(m * p);
    for a in 0..p {
        for b in 0..p {
            if wtw[(a, b)] != 0.0 {
                pr.view_mut((a * m, b * m), (m, m))
                    .copy_from(&(&spec.r * wtw[(a, b)]));
            }
        }
        qr.rows_mut(a * m, m).copy_from(&(-&rug * colsum[a]));
    }
    (pr, qr)
}

fn build_large_impl(spec: &MpcSpec, sched: &KnotSchedule, x0: &DVector<f64>) -> Result<QpProblem> {
    let n = spec.state_dim();
    let m = spec.input_dim();
    let t = spec.horizon();
    let p = sched.knots();
    check_dim("x0", n, x0.len())?;
    let nx = n * (t + 1);
    let nu = m * p;
    let one = nx + nu;
    let nvar = one + 1;
    let model = spec.model();

    let mut pt: Vec<(usize, usize, f64)> = Vec::new();
    let mut qv = DVector::zeros(nvar);
    let qxg = &spec.q * &spec.x_goal;
    for k in 0..=t {
        for j in 0..n {
            for i in 0..n {
                let v = spec.q[(i, j)];
                if v != 0.0 {
                    pt.push((k * n + i, k * n + j, v));
                }
            }
        }
        qv.rows_mut(k * n, n).copy_from(&(-&qxg));
    }
    let (pr, qr) = knot_input_cost(spec, sched);
    for j in 0..nu {
        for i in 0..nu {
            let v = pr[(i, j)];
            if v != 0.0 {
                pt.push((nx + i, nx + j, v));
            }
        }
    }
    qv.rows_mut(nx, nu).copy_from(&qr);
    let pmat = CscMatrix::from_triplets(nvar, nvar, &pt);

    let state_rows = if spec.x_min.is_some() || spec.x_max.is_some() {
        n * t
    } else {
        0
    };
    let nrows = nx + 1 + nu + state_rows;
    let mut at: Vec<(usize, usize, f64)> = Vec::new();
    let mut lb = DVector::zeros(nrows);
    let mut ub = DVector::zeros(nrows);
    for i in 0..n {
        at.push((i, i, -1.0));
        lb[i] = -x0[i];
        ub[i] = -x0[i];
    }
    for k in 0..t {
        let row = n * (k + 1);
        for i in 0..n {
            for j in 0..n {
                at.push((row + i, k * n + j, model.a[(i, j)]));
            }
            at.push((row + i, (k + 1) * n + i, -1.0));
            at.push((row + i, one, model.w[i]));
        }
        let ic = sched.coeffs(k)?;
        for (idx, w) in [(ic.idx1, 1.0 - ic.c), (ic.idx2, ic.c)] {
            if idx == ic.idx2 && ic.idx1 == ic.idx2 && w == 0.0 {
                continue;
            }
            for i in 0..n {
                for j in 0..m {
                    at.push((row + i, nx + idx * m + j, w * model.b[(i, j)]));
                }
            }
        }
    }
    at.push((nx, one, 1.0));
    lb[nx] = 1.0;
    ub[nx] = 1.0;
    for kk in 0..p {
        for j in 0..m {
            let row = nx + 1 + kk * m + j;
            at.push((row, nx + kk * m + j, 1.0));
            lb[row] = spec.u_min[j];
            ub[row] = spec.u_max[j];
        }
    }
    if state_rows > 0 {
        for k in 1..=t {
            for i in 0..n {
                let row = nx + 1 + nu + (k - 1) * n + i;
                at.push((row, k * n + i, 1.0));
                lb[row] = spec.x_min.as_ref().map_or(f64::NEG_INFINITY, |v| v[i]);
                ub[row] = spec.x_max.as_ref().map_or(f64::INFINITY, |v| v[i]);
            }
        }
    }
    let amat = CscMatrix::from_triplets(nrows, nvar, &at);

    let offset = (t + 1) as f64 * spec.x_goal.dot(&qxg)
        + t as f64 * spec.u_goal.dot(&(&spec.r * &spec.u_goal));
    Ok(QpProblem::new(pmat, qv, amat, lb, ub)?.with_offset(offset))
}

fn build_small_impl(spec: &MpcSpec, sched: &KnotSchedule, x0: &DVector<f64>) -> Result<QpProblem> {
    if spec.has_finite_state_bounds() {
        return Err(Error::Config(
            "state bounds are only supported by the large formulations".into(),
        ));
    }
    let n = spec.state_dim();
    let m = spec.input_dim();
    let t = spec.horizon();
    let nu = m * sched.knots();
    check_dim("x0", n, x0.len())?;
    let s = param_prediction(spec.model(), sched);
    let v = free_response(spec.model(), t, x0)?;

    // Q_big S and Q_big (v − x_g), block row by block row
    let mut qs = DMatrix::zeros(n * t, nu);
    let mut err = DVector::zeros(n * t);
    let mut qerr = DVector::zeros(n * t);
    for i in 0..t {
        let e = v.rows(i * n, n) - &spec.x_goal;
        qerr.rows_mut(i * n, n).copy_from(&(&spec.q * &e));
        err.rows_mut(i * n, n).copy_from(&e);
        let block = &spec.q * s.rows(i * n, n);
        qs.rows_mut(i * n, n).copy_from(&block);
    }
    let (pr, qr) = knot_input_cost(spec, sched);
    let mut p = pr;
    p.gemm_tr(1.0, &s, &qs, 1.0);
    // symmetrize away rounding noise
    let p = (&p + p.transpose()) * 0.5;
    let mut q = qr;
    q.gemv_tr(1.0, &s, &qerr, 1.0);

    let a = CscMatrix::identity(nu);
    let mut lb = DVector::zeros(nu);
    let mut ub = DVector::zeros(nu);
    for k in 0..sched.knots() {
        lb.rows_mut(k * m, m).copy_from(&spec.u_min);
        ub.rows_mut(k * m, m).copy_from(&spec.u_max);
    }
    let offset = err.dot(&qerr)
        + t as f64 * spec.u_goal.dot(&(&spec.r * &spec.u_goal))
        + spec.state_cost(x0);
    Ok(QpProblem::new(CscMatrix::from_dense(&p, 0.0), q, a, lb, ub)?.with_offset(offset))
}

pub fn extract_first_input(
    sol: &QpSolution,
    formulation: &Formulation,
    spec: &MpcSpec,
) -> Result<DVector<f64>> {
    if sol.status != QpStatus::Solved {
        return Err(Error::Unsolved(sol.status));
    }
    let m = spec.input_dim();
    let off = formulation.input_offset(spec);
    if sol.z.len() < off + m {
        return Err(Error::DimensionMismatch {
            what: "solution length",
            expected: off + m,
            actual: sol.z.len(),
        });
    }
    Ok(sol.z.rows(off, m).into_owned())
}

/// The full `T×m` input sequence implied by a solution.
pub fn extract_inputs(
    sol: &QpSolution,
    formulation: &Formulation,
    spec: &MpcSpec,
) -> Result<DMatrix<f64>> {
    if sol.status != QpStatus::Solved {
        return Err(Error::Unsolved(sol.status));
    }
    let m = spec.input_dim();
    let sched = formulation.schedule(spec.horizon())?;
    let off = formulation.input_offset(spec);
    let nu = m * sched.knots();
    if sol.z.len() < off + nu {
        return Err(Error::DimensionMismatch {
            what: "solution length",
            expected: off + nu,
            actual: sol.z.len(),
        });
    }
    let knots =
        crate::param::KnotTrajectory::from_flat(sol.z.rows(off, nu).as_slice(), sched.knots(), m)?;
    crate::param::expand(&knots, &sched)
}
