//! Convex QP solver for `min zᵀPz + 2qᵀz  s.t.  lb ≤ A z ≤ ub`.
//!
//! ADMM operator splitting with over-relaxation and Ruiz equilibration.
//! Problems above a density threshold are handled with a dense Cholesky of
//! the reduced system; sparse problems factor the quasi-definite KKT matrix
//! with a cached symbolic LDLᵀ. Once the active set settles the solver solves
//! the equality-constrained KKT system directly and keeps that point if it
//! satisfies the optimality conditions.

mod csc;
mod ldl;

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

pub use csc::CscMatrix;
pub use ldl::{min_degree, LdlFactor, LdlSymbolic};

use crate::error::{check_dim, invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QpStatus {
    Solved,
    MaxIters,
    PrimalInfeasible,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIters => "max_iters",
            QpStatus::PrimalInfeasible => "primal_infeasible",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSettings {
    pub max_iters: usize,
    /// Absolute primal residual tolerance.
    pub eps_prim: f64,
    /// Absolute dual residual tolerance.
    pub eps_dual: f64,
    /// Relative tolerance added on top of the absolute ones.
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    /// Initial step size penalty.
    pub rho: f64,
    /// Rescale `rho` every `adapt_every` iterations when primal and dual
    /// residuals are out of balance. The symbolic factorization is kept; only
    /// the numeric factorization is refreshed.
    pub adaptive_rho: bool,
    pub adapt_every: usize,
    pub sigma: f64,
    pub alpha: f64,
    pub polish: bool,
    pub scaling_iters: usize,
    /// Residuals are evaluated every `check_every` iterations.
    pub check_every: usize,
    /// Fraction of nonzeros above which the dense path is used.
    pub dense_threshold: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            eps_prim: 1e-6,
            eps_dual: 1e-6,
            eps_rel: 0.0,
            eps_infeasible: 1e-5,
            rho: 0.1,
            adaptive_rho: true,
            adapt_every: 25,
            sigma: 1e-6,
            alpha: 1.6,
            polish: true,
            scaling_iters: 10,
            check_every: 5,
            dense_threshold: 0.25,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        for (name, v) in [
            ("eps_prim", self.eps_prim),
            ("eps_dual", self.eps_dual),
            ("eps_infeasible", self.eps_infeasible),
            ("rho", self.rho),
            ("sigma", self.sigma),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(self.eps_rel.is_finite() && self.eps_rel >= 0.0) {
            return Err(invalid("eps_rel", "must be finite and >= 0"));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(invalid("alpha", "must lie in (0, 2)"));
        }
        if self.check_every == 0 {
            return Err(invalid("check_every", "must be at least 1"));
        }
        if self.adapt_every == 0 {
            return Err(invalid("adapt_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// `min zᵀPz + 2qᵀz + offset  s.t.  lb ≤ A z ≤ ub`. Infinite bounds are allowed;
/// equality rows have `lb = ub`. The offset never affects the minimizer and is
/// excluded from [`QpSolution::objective`].
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    p: CscMatrix,
    q: DVector<f64>,
    a: CscMatrix,
    lb: DVector<f64>,
    ub: DVector<f64>,
    offset: f64,
}

impl QpProblem {
    pub fn new(
        p: CscMatrix,
        q: DVector<f64>,
        a: CscMatrix,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self> {
        let d = q.len();
        check_dim("P rows", d, p.nrows())?;
        check_dim("P columns", d, p.ncols())?;
        check_dim("A columns", d, a.ncols())?;
        let r = a.nrows();
        check_dim("lb length", r, lb.len())?;
        check_dim("ub length", r, ub.len())?;
        if p.values()
            .iter()
            .chain(q.iter())
            .chain(a.values())
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("qp data"));
        }
        if lb.iter().chain(ub.iter()).any(|v| v.is_nan()) {
            return Err(Error::NonFinite("qp bounds"));
        }
        if let Some(i) = (0..r).find(|&i| lb[i] > ub[i]) {
            return Err(invalid(
                "bounds",
                format!("row {i} has lb {} > ub {}", lb[i], ub[i]),
            ));
        }
        if !p.is_symmetric(1e-9) {
            return Err(invalid("P", "must be symmetric"));
        }
        Ok(Self {
            p,
            q,
            a,
            lb,
            ub,
            offset: 0.0,
        })
    }

    pub fn from_dense(
        p: &DMatrix<f64>,
        q: DVector<f64>,
        a: &DMatrix<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self> {
        Self::new(
            CscMatrix::from_dense(p, 0.0),
            q,
            CscMatrix::from_dense(a, 0.0),
            lb,
            ub,
        )
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn p(&self) -> &CscMatrix {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn a(&self) -> &CscMatrix {
        &self.a
    }

    pub fn lb(&self) -> &DVector<f64> {
        &self.lb
    }

    pub fn ub(&self) -> &DVector<f64> {
        &self.ub
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn num_vars(&self) -> usize {
        self.q.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    /// `zᵀPz + 2qᵀz`
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        let mut pz = vec![0.0; z.len()];
        self.p.mul_vec(z.as_slice(), &mut pz);
        z.iter().zip(&pz).map(|(a, b)| a * b).sum::<f64>() + 2.0 * self.q.dot(z)
    }

    /// Objective including the constant offset.
    pub fn full_objective(&self, z: &DVector<f64>) -> f64 {
        self.objective(z) + self.offset
    }

    pub fn density(&self) -> f64 {
        let d = self.num_vars() as f64;
        let r = self.num_constraints() as f64;
        let cells = d * d + r * d;
        if cells == 0.0 {
            0.0
        } else {
            (self.p.nnz() + self.a.nnz()) as f64 / cells
        }
    }

    /// Infinity norm of the bound violation of `A z`.
    pub fn primal_residual(&self, z: &DVector<f64>) -> f64 {
        let mut az = vec![0.0; self.num_constraints()];
        self.a.mul_vec(z.as_slice(), &mut az);
        az.iter()
            .enumerate()
            .map(|(i, &v)| (v.clamp(self.lb[i], self.ub[i]) - v).abs())
            .fold(0.0, f64::max)
    }

    /// `‖2Pz + 2q + Aᵀλ‖∞`
    pub fn dual_residual(&self, z: &DVector<f64>, dual: &DVector<f64>) -> f64 {
        let d = self.num_vars();
        let mut g = vec![0.0; d];
        self.p.mul_vec(z.as_slice(), &mut g);
        let mut aty = vec![0.0; d];
        self.a.tmul_vec(dual.as_slice(), &mut aty);
        (0..d)
            .map(|j| (2.0 * g[j] + 2.0 * self.q[j] + aty[j]).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub z: DVector<f64>,
    pub dual: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Multipliers `λ` with `2Pz + 2q + Aᵀλ = 0` at the optimum; positive on
    /// active upper bounds and negative on active lower bounds.
    pub dual: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    /// `zᵀPz + 2qᵀz`, without the problem offset.
    pub objective: f64,
    pub prim_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
    /// Wall-clock seconds spent inside the solver.
    pub solve_time: f64,
}

impl QpSolution {
    pub fn warm_start(&self) -> WarmStart {
        WarmStart {
            z: self.z.clone(),
            dual: self.dual.clone(),
        }
    }

    pub fn is_solved(&self) -> bool {
        self.status == QpStatus::Solved
    }
}

/// One-shot convenience wrapper around [`QpSolver`].
pub fn solve_qp(
    prob: &QpProblem,
    warm: Option<&WarmStart>,
    settings: &QpSettings,
) -> Result<QpSolution> {
    QpSolver::new(settings.clone())?.solve(prob, warm)
}

/// Solver instance. Keeps the symbolic factorization of the last sparse
/// problem so repeated solves with an unchanged pattern skip the ordering.
#[derive(Debug, Clone)]
pub struct QpSolver {
    settings: QpSettings,
    cache: Option<SymbolicCache>,
}

#[derive(Debug, Clone)]
struct SymbolicCache {
    p: CscMatrix,
    a: CscMatrix,
    sym: LdlSymbolic,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Result<Self> {
        settings.validate()?;
        Ok(Self {
            settings,
            cache: None,
        })
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    pub fn solve(&mut self, prob: &QpProblem, warm: Option<&WarmStart>) -> Result<QpSolution> {
        let start = Instant::now();
        if let Some(w) = warm {
            check_dim("warm start primal", prob.num_vars(), w.z.len())?;
            check_dim("warm start dual", prob.num_constraints(), w.dual.len())?;
        }
        let mut sol = if prob.num_vars() == 0 {
            trivial_solution(prob)?
        } else {
            self.run(prob, warm)?
        };
        sol.objective = prob.objective(&sol.z);
        sol.solve_time = start.elapsed().as_secs_f64();
        Ok(sol)
    }

    fn run(&mut self, prob: &QpProblem, warm: Option<&WarmStart>) -> Result<QpSolution> {
        let s = self.settings.clone();
        let s = &s;
        let sc = Scaled::new(prob, s.scaling_iters);
        let d = sc.d;
        let r = sc.r;
        let mut rho_base = s.rho;
        let mut rho = row_penalties(&sc, rho_base);

        let dense = prob.density() > s.dense_threshold;
        let mut backend = if dense {
            Backend::dense(&sc, s.sigma, &rho)?
        } else {
            let sym = self.symbolic_for(&sc);
            Backend::sparse(&sc, &sym, s.sigma, &rho)?
        };

        let mut x = vec![0.0; d];
        let mut z = vec![0.0; r];
        let mut y = vec![0.0; r];
        if let Some(w) = warm {
            for j in 0..d {
                x[j] = w.z[j] / sc.dvec[j];
            }
            sc.a.mul_vec(&x, &mut z);
            for i in 0..r {
                z[i] = z[i].clamp(sc.l[i], sc.u[i]);
                y[i] = w.dual[i] * sc.c / sc.evec[i];
            }
        }

        let mut xt = vec![0.0; d];
        let mut zt = vec![0.0; r];
        let mut x_prev = vec![0.0; d];
        let mut z_prev = vec![0.0; r];
        let mut dy = vec![0.0; r];
        let mut rhs = vec![0.0; d + r];
        let mut last_sig: Option<Vec<i8>> = None;
        let mut failed_sig: Option<Vec<i8>> = None;
        let mut status = QpStatus::MaxIters;
        let mut iterations = s.max_iters;
        let mut polished = None;

        for it in 1..=s.max_iters {
            x_prev.copy_from_slice(&x);
            z_prev.copy_from_slice(&z);
            backend.step(&sc, s.sigma, &rho, &x, &z, &y, &mut rhs, &mut xt, &mut zt);
            for j in 0..d {
                x[j] = s.alpha * xt[j] + (1.0 - s.alpha) * x_prev[j];
            }
            for i in 0..r {
                let zr = s.alpha * zt[i] + (1.0 - s.alpha) * z_prev[i];
                let zn = (zr + y[i] / rho[i]).clamp(sc.l[i], sc.u[i]);
                dy[i] = rho[i] * (zr - zn);
                y[i] += dy[i];
                z[i] = zn;
            }

            if it % s.check_every != 0 && it != s.max_iters {
                continue;
            }
            let (prim, dual, eps_p, eps_d) = sc.residuals(&x, &z, &y, s);
            if prim <= eps_p && dual <= eps_d {
                status = QpStatus::Solved;
                iterations = it;
                if s.polish {
                    let sig = sc.active_set(&z, &y);
                    polished = polish(&sc, &mut backend, &sig, s);
                }
                break;
            }
            if sc.certifies_infeasibility(&dy, s.eps_infeasible) {
                status = QpStatus::PrimalInfeasible;
                iterations = it;
                break;
            }
            if s.adaptive_rho && it % s.adapt_every == 0 {
                let ratio = sc.rho_ratio(&x, &z, &y);
                let proposed = (rho_base * ratio).clamp(1e-6, 1e6);
                if proposed > 5.0 * rho_base || proposed < 0.2 * rho_base {
                    rho_base = proposed;
                    rho = row_penalties(&sc, rho_base);
                    backend.refactor(&sc, s.sigma, &rho)?;
                }
            }
            if s.polish && it % 25 == 0 {
                let sig = sc.active_set(&z, &y);
                let stable = last_sig.as_ref() == Some(&sig);
                let retried = failed_sig.as_ref() == Some(&sig);
                if stable && !retried {
                    if let Some(p) = polish(&sc, &mut backend, &sig, s) {
                        status = QpStatus::Solved;
                        iterations = it;
                        polished = Some(p);
                        break;
                    }
                    failed_sig = Some(sig.clone());
                }
                last_sig = Some(sig);
            }
        }

        let is_polished = polished.is_some();
        let (zu, yu) = match polished {
            Some(p) => (p.z, p.dual),
            None => sc.unscale(&x, &y),
        };
        let prim_residual = prob.primal_residual(&zu);
        let dual_residual = prob.dual_residual(&zu, &yu);
        Ok(QpSolution {
            z: zu,
            dual: yu,
            status,
            iterations,
            objective: 0.0,
            prim_residual,
            dual_residual,
            polished: is_polished,
            solve_time: 0.0,
        })
    }

    fn symbolic_for(&mut self, sc: &Scaled) -> LdlSymbolic {
        if let Some(c) = &self.cache {
            if c.p.same_pattern(&sc.p) && c.a.same_pattern(&sc.a) {
                return c.sym.clone();
            }
        }
        let coords = kkt_coords(&sc.p, &sc.a);
        let sym = LdlSymbolic::analyze(sc.d + sc.r, &coords);
        self.cache = Some(SymbolicCache {
            p: sc.p.clone(),
            a: sc.a.clone(),
            sym: sym.clone(),
        });
        sym
    }
}

fn trivial_solution(prob: &QpProblem) -> Result<QpSolution> {
    let r = prob.num_constraints();
    let feasible = (0..r).all(|i| prob.lb[i] <= 0.0 && prob.ub[i] >= 0.0);
    Ok(QpSolution {
        z: DVector::zeros(0),
        dual: DVector::zeros(r),
        status: if feasible {
            QpStatus::Solved
        } else {
            QpStatus::PrimalInfeasible
        },
        iterations: 0,
        objective: 0.0,
        prim_residual: 0.0,
        dual_residual: 0.0,
        polished: false,
        solve_time: 0.0,
    })
}

/// Equality rows are stiffened and free rows relaxed relative to `rho`.
fn row_penalties(sc: &Scaled, rho: f64) -> Vec<f64> {
    (0..sc.r)
        .map(|i| {
            let (l, u) = (sc.l[i], sc.u[i]);
            if l == u {
                rho * 1e3
            } else if l == f64::NEG_INFINITY && u == f64::INFINITY {
                1e-6
            } else {
                rho
            }
        })
        .collect()
}

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;

fn clamp_norm(v: f64) -> f64 {
    if v < MIN_SCALING {
        1.0
    } else {
        v.min(MAX_SCALING)
    }
}

/// Equilibrated copy of the problem with the objective doubled, so the
/// optimality condition reads `P̄x + q̄ + Āᵀy = 0`.
struct Scaled {
    d: usize,
    r: usize,
    p: CscMatrix,
    q: Vec<f64>,
    a: CscMatrix,
    l: Vec<f64>,
    u: Vec<f64>,
    dvec: Vec<f64>,
    evec: Vec<f64>,
    c: f64,
    /// Unscaled doubled problem, for residuals and polish checks.
    p_orig: CscMatrix,
    q_orig: Vec<f64>,
    a_orig: CscMatrix,
    l_orig: Vec<f64>,
    u_orig: Vec<f64>,
}

impl Scaled {
    fn new(prob: &QpProblem, iters: usize) -> Self {
        let d = prob.num_vars();
        let r = prob.num_constraints();
        let mut p = prob.p.clone();
        p.values_mut().iter_mut().for_each(|v| *v *= 2.0);
        let q: Vec<f64> = prob.q.iter().map(|v| 2.0 * v).collect();
        let p_orig = p.clone();
        let q_orig = q.clone();
        let a_orig = prob.a.clone();
        let mut a = prob.a.clone();
        let mut q = q;
        let mut dvec = vec![1.0; d];
        let mut evec = vec![1.0; r];
        let mut c = 1.0;

        for _ in 0..iters {
            let pn = p.col_inf_norms();
            let an = a.col_inf_norms();
            let dd: Vec<f64> = (0..d)
                .map(|j| 1.0 / clamp_norm(pn[j].max(an[j])).sqrt())
                .collect();
            let rn = a.row_inf_norms();
            let ee: Vec<f64> = rn.iter().map(|&v| 1.0 / clamp_norm(v).sqrt()).collect();
            p.scale(&dd, &dd);
            a.scale(&ee, &dd);
            for j in 0..d {
                q[j] *= dd[j];
                dvec[j] *= dd[j];
            }
            for i in 0..r {
                evec[i] *= ee[i];
            }
            let pn = p.col_inf_norms();
            let mean = if d > 0 {
                pn.iter().sum::<f64>() / d as f64
            } else {
                0.0
            };
            let qn = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let gamma = 1.0 / clamp_norm(mean.max(qn));
            p.values_mut().iter_mut().for_each(|v| *v *= gamma);
            q.iter_mut().for_each(|v| *v *= gamma);
            c *= gamma;
        }

        let l: Vec<f64> = (0..r).map(|i| prob.lb[i] * evec[i]).collect();
        let u: Vec<f64> = (0..r).map(|i| prob.ub[i] * evec[i]).collect();
        Self {
            d,
            r,
            p,
            q,
            a,
            l,
            u,
            dvec,
            evec,
            c,
            p_orig,
            q_orig,
            a_orig,
            l_orig: prob.lb.iter().copied().collect(),
            u_orig: prob.ub.iter().copied().collect(),
        }
    }

    fn unscale(&self, x: &[f64], y: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let z = DVector::from_fn(self.d, |j, _| x[j] * self.dvec[j]);
        let dual = DVector::from_fn(self.r, |i, _| y[i] * self.evec[i] / self.c);
        (z, dual)
    }

    /// Unscaled residuals and their thresholds.
    fn residuals(&self, x: &[f64], z: &[f64], y: &[f64], s: &QpSettings) -> (f64, f64, f64, f64) {
        let mut ax = vec![0.0; self.r];
        self.a.mul_vec(x, &mut ax);
        let mut prim = 0.0f64;
        let mut ax_n = 0.0f64;
        let mut z_n = 0.0f64;
        for i in 0..self.r {
            let e = self.evec[i];
            prim = prim.max(((ax[i] - z[i]) / e).abs());
            ax_n = ax_n.max((ax[i] / e).abs());
            z_n = z_n.max((z[i] / e).abs());
        }
        let mut px = vec![0.0; self.d];
        self.p.mul_vec(x, &mut px);
        let mut aty = vec![0.0; self.d];
        self.a.tmul_vec(y, &mut aty);
        let mut dual = 0.0f64;
        let (mut px_n, mut aty_n, mut q_n) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..self.d {
            let k = 1.0 / (self.c * self.dvec[j]);
            dual = dual.max(((px[j] + self.q[j] + aty[j]) * k).abs());
            px_n = px_n.max((px[j] * k).abs());
            aty_n = aty_n.max((aty[j] * k).abs());
            q_n = q_n.max((self.q[j] * k).abs());
        }
        let eps_p = s.eps_prim + s.eps_rel * ax_n.max(z_n);
        let eps_d = s.eps_dual + s.eps_rel * px_n.max(aty_n).max(q_n);
        (prim, dual, eps_p, eps_d)
    }

    /// `sqrt((‖r_prim‖ / scale_prim) / (‖r_dual‖ / scale_dual))` in scaled space.
    fn rho_ratio(&self, x: &[f64], z: &[f64], y: &[f64]) -> f64 {
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let mut ax = vec![0.0; self.r];
        self.a.mul_vec(x, &mut ax);
        let prim = ax
            .iter()
            .zip(z)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let prim_scale = inf(&ax).max(inf(z));
        let mut px = vec![0.0; self.d];
        self.p.mul_vec(x, &mut px);
        let mut aty = vec![0.0; self.d];
        self.a.tmul_vec(y, &mut aty);
        let dual = (0..self.d).fold(0.0f64, |m, j| m.max((px[j] + self.q[j] + aty[j]).abs()));
        let dual_scale = inf(&px).max(inf(&aty)).max(inf(&self.q));
        let rp = prim / (prim_scale + 1e-10);
        let rd = dual / (dual_scale + 1e-10);
        (rp / (rd + 1e-10)).sqrt()
    }

    fn certifies_infeasibility(&self, dy_scaled: &[f64], eps: f64) -> bool {
        if self.r == 0 {
            return false;
        }
        let dy: Vec<f64> = (0..self.r)
            .map(|i| dy_scaled[i] * self.evec[i] / self.c)
            .collect();
        let norm = dy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm < 1e-12 {
            return false;
        }
        let mut support = 0.0;
        for i in 0..self.r {
            let v = dy[i];
            if v.abs() <= 1e-9 * norm {
                continue;
            }
            let bound = if v > 0.0 {
                self.u_orig[i]
            } else {
                self.l_orig[i]
            };
            if !bound.is_finite() {
                return false;
            }
            support += bound * v;
        }
        if support >= -eps * norm {
            return false;
        }
        let mut aty = vec![0.0; self.d];
        self.a_orig.tmul_vec(&dy, &mut aty);
        aty.iter().all(|v| v.abs() <= eps * norm)
    }

    /// Row status: 2 equality, 1 upper active, −1 lower active, 0 inactive.
    fn active_set(&self, z: &[f64], y: &[f64]) -> Vec<i8> {
        (0..self.r)
            .map(|i| {
                if self.l[i] == self.u[i] {
                    2
                } else if z[i] - self.l[i] < -y[i] {
                    -1
                } else if self.u[i] - z[i] < y[i] {
                    1
                } else {
                    0
                }
            })
            .collect()
    }
}

fn kkt_coords(p: &CscMatrix, a: &CscMatrix) -> Vec<(usize, usize)> {
    let d = p.ncols();
    let r = a.nrows();
    let mut c = Vec::with_capacity(p.nnz() + a.nnz() + d + r);
    for j in 0..d {
        c.extend(p.col(j).filter(|&(i, _)| i <= j).map(|(i, _)| (i, j)));
    }
    c.extend((0..d).map(|j| (j, j)));
    for j in 0..d {
        c.extend(a.col(j).map(|(i, _)| (j, d + i)));
    }
    c.extend((0..r).map(|i| (d + i, d + i)));
    c
}

/// Values aligned with [`kkt_coords`]: `[[P + diag_x·I, Aᵀ], [A, −diag_y]]`,
/// with constraint rows optionally masked out of `A`.
fn kkt_values(
    p: &CscMatrix,
    a: &CscMatrix,
    diag_x: f64,
    row_mask: Option<&[bool]>,
    diag_y: &[f64],
) -> Vec<f64> {
    let d = p.ncols();
    let mut v = Vec::with_capacity(p.nnz() + a.nnz() + d + diag_y.len());
    for j in 0..d {
        v.extend(p.col(j).filter(|&(i, _)| i <= j).map(|(_, x)| x));
    }
    v.extend(std::iter::repeat_n(diag_x, d));
    for j in 0..d {
        v.extend(a.col(j).map(|(i, x)| match row_mask {
            Some(m) if !m[i] => 0.0,
            _ => x,
        }));
    }
    v.extend(diag_y.iter().map(|&e| -e));
    v
}

enum Backend {
    Dense {
        chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
        p: DMatrix<f64>,
        work: DVector<f64>,
    },
    Sparse {
        sym: LdlSymbolic,
        factor: LdlFactor,
    },
}

impl Backend {
    fn dense(sc: &Scaled, sigma: f64, rho: &[f64]) -> Result<Self> {
        let p = sc.p.to_dense();
        let mut m = p.clone();
        for j in 0..sc.d {
            m[(j, j)] += sigma;
        }
        let rows = sc.a.transpose();
        for i in 0..sc.r {
            let entries: Vec<(usize, f64)> = rows.col(i).collect();
            for &(j, aj) in &entries {
                for &(k, ak) in &entries {
                    m[(j, k)] += rho[i] * aj * ak;
                }
            }
        }
        let chol = m
            .cholesky()
            .ok_or_else(|| invalid("P", "reduced system is not positive definite"))?;
        Ok(Backend::Dense {
            chol,
            p,
            work: DVector::zeros(sc.d),
        })
    }

    fn sparse(sc: &Scaled, sym: &LdlSymbolic, sigma: f64, rho: &[f64]) -> Result<Self> {
        let inv: Vec<f64> = rho.iter().map(|r| 1.0 / r).collect();
        let vals = kkt_values(&sc.p, &sc.a, sigma, None, &inv);
        let factor = sym
            .factor(&vals)
            .ok_or_else(|| invalid("P", "KKT system could not be factored"))?;
        Ok(Backend::Sparse {
            sym: sym.clone(),
            factor,
        })
    }

    fn refactor(&mut self, sc: &Scaled, sigma: f64, rho: &[f64]) -> Result<()> {
        *self = match self {
            Backend::Dense { .. } => Backend::dense(sc, sigma, rho)?,
            Backend::Sparse { sym, .. } => Backend::sparse(sc, sym, sigma, rho)?,
        };
        Ok(())
    }

    /// Solves the ADMM linear system for `(x̃, z̃)`.
    #[allow(clippy::too_many_arguments)]
    fn step(
        &mut self,
        sc: &Scaled,
        sigma: f64,
        rho: &[f64],
        x: &[f64],
        z: &[f64],
        y: &[f64],
        rhs: &mut [f64],
        xt: &mut [f64],
        zt: &mut [f64],
    ) {
        let (d, r) = (sc.d, sc.r);
        match self {
            Backend::Dense { chol, work, .. } => {
                for i in 0..r {
                    rhs[d + i] = rho[i] * z[i] - y[i];
                }
                sc.a.tmul_vec(&rhs[d..d + r], work.as_mut_slice());
                for j in 0..d {
                    work[j] += sigma * x[j] - sc.q[j];
                }
                chol.solve_mut(work);
                xt.copy_from_slice(work.as_slice());
                sc.a.mul_vec(xt, zt);
            }
            Backend::Sparse { factor, .. } => {
                for j in 0..d {
                    rhs[j] = sigma * x[j] - sc.q[j];
                }
                for i in 0..r {
                    rhs[d + i] = z[i] - y[i] / rho[i];
                }
                factor.solve(rhs);
                xt.copy_from_slice(&rhs[..d]);
                for i in 0..r {
                    zt[i] = z[i] + (rhs[d + i] - y[i]) / rho[i];
                }
            }
        }
    }
}

struct Polished {
    z: DVector<f64>,
    dual: DVector<f64>,
}

const POLISH_DELTA: f64 = 1e-9;
const REFINE_STEPS: usize = 5;

/// Solves the KKT system of the equality problem implied by `sig` and accepts
/// the point only if it is primal feasible, dual feasible and has multipliers
/// of the right sign.
fn polish(sc: &Scaled, backend: &mut Backend, sig: &[i8], s: &QpSettings) -> Option<Polished> {
    let active: Vec<bool> = sig.iter().map(|&v| v != 0).collect();
    let target: Vec<f64> = (0..sc.r)
        .map(|i| match sig[i] {
            -1 | 2 => sc.l[i],
            1 => sc.u[i],
            _ => 0.0,
        })
        .collect();
    let (x, y) = match backend {
        Backend::Sparse { sym, .. } => polish_sparse(sc, sym, &active, &target)?,
        Backend::Dense { p, .. } => polish_dense(sc, p, &active, &target)?,
    };
    if x.iter().chain(&y).any(|v| !v.is_finite()) {
        return None;
    }
    let (z, dual) = sc.unscale(&x, &y);

    let mut az = vec![0.0; sc.r];
    sc.a_orig.mul_vec(z.as_slice(), &mut az);
    let prim = (0..sc.r)
        .map(|i| (az[i].clamp(sc.l_orig[i], sc.u_orig[i]) - az[i]).abs())
        .fold(0.0, f64::max);
    let mut g = vec![0.0; sc.d];
    sc.p_orig.mul_vec(z.as_slice(), &mut g);
    let mut aty = vec![0.0; sc.d];
    sc.a_orig.tmul_vec(dual.as_slice(), &mut aty);
    let dres = (0..sc.d)
        .map(|j| (g[j] + sc.q_orig[j] + aty[j]).abs())
        .fold(0.0, f64::max);
    let sign_ok = (0..sc.r).all(|i| match sig[i] {
        1 => dual[i] >= -s.eps_dual,
        -1 => dual[i] <= s.eps_dual,
        _ => true,
    });
    (prim <= s.eps_prim && dres <= s.eps_dual && sign_ok).then_some(Polished { z, dual })
}

fn polish_sparse(
    sc: &Scaled,
    sym: &LdlSymbolic,
    active: &[bool],
    target: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let (d, r) = (sc.d, sc.r);
    let reg: Vec<f64> = active
        .iter()
        .map(|&a| if a { POLISH_DELTA } else { 1.0 })
        .collect();
    let vals = kkt_values(&sc.p, &sc.a, POLISH_DELTA, Some(active), &reg);
    let mut factor = sym.factor(&vals)?;
    let exact: Vec<f64> = active.iter().map(|&a| if a { 0.0 } else { 1.0 }).collect();

    let mut b = vec![0.0; d + r];
    for j in 0..d {
        b[j] = -sc.q[j];
    }
    for i in 0..r {
        b[d + i] = if active[i] { target[i] } else { 0.0 };
    }
    let mut sol = b.clone();
    factor.solve(&mut sol);

    let mut ym = vec![0.0; r];
    let mut ax = vec![0.0; r];
    let mut px = vec![0.0; d];
    let mut aty = vec![0.0; d];
    let mut res = vec![0.0; d + r];
    for _ in 0..REFINE_STEPS {
        let (xs, ys) = sol.split_at(d);
        for i in 0..r {
            ym[i] = if active[i] { ys[i] } else { 0.0 };
        }
        sc.p.mul_vec(xs, &mut px);
        sc.a.tmul_vec(&ym, &mut aty);
        sc.a.mul_vec(xs, &mut ax);
        for j in 0..d {
            res[j] = b[j] - (px[j] + aty[j]);
        }
        for i in 0..r {
            let axi = if active[i] { ax[i] } else { 0.0 };
            res[d + i] = b[d + i] - (axi - exact[i] * ys[i]);
        }
        factor.solve(&mut res);
        for (s, c) in sol.iter_mut().zip(&res) {
            *s += c;
        }
    }
    let (xs, ys) = sol.split_at(d);
    let y = (0..r)
        .map(|i| if active[i] { ys[i] } else { 0.0 })
        .collect();
    Some((xs.to_vec(), y))
}

fn polish_dense(
    sc: &Scaled,
    p: &DMatrix<f64>,
    active: &[bool],
    target: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let (d, r) = (sc.d, sc.r);
    let rows = sc.a.transpose();
    // fast path when every active row bounds a single variable
    let mut fixed: Vec<Option<(usize, f64)>> = vec![None; d];
    let mut singletons = true;
    for i in (0..r).filter(|&i| active[i]) {
        let mut entries = rows.col(i).filter(|&(_, v)| v != 0.0);
        match (entries.next(), entries.next()) {
            (Some((j, v)), None) if fixed[j].is_none() => fixed[j] = Some((i, v)),
            _ => {
                singletons = false;
                break;
            }
        }
    }
    let q = DVector::from_column_slice(&sc.q);

    if singletons {
        let mut x = DVector::zeros(d);
        for j in 0..d {
            if let Some((i, v)) = fixed[j] {
                x[j] = target[i] / v;
            }
        }
        let free: Vec<usize> = (0..d).filter(|&j| fixed[j].is_none()).collect();
        if !free.is_empty() {
            let pff = p.select_rows(&free).select_columns(&free);
            let rhs = DVector::from_iterator(
                free.len(),
                free.iter().map(|&j| -q[j] - (p.row(j) * &x)[0]),
            );
            let mut reg = pff.clone();
            for k in 0..free.len() {
                reg[(k, k)] += POLISH_DELTA;
            }
            let chol = reg.cholesky()?;
            let mut xf = chol.solve(&rhs);
            for _ in 0..REFINE_STEPS {
                let res = &rhs - &pff * &xf;
                xf += chol.solve(&res);
            }
            for (k, &j) in free.iter().enumerate() {
                x[j] = xf[k];
            }
        }
        let grad = p * &x + &q;
        let mut y = vec![0.0; r];
        for j in 0..d {
            if let Some((i, v)) = fixed[j] {
                y[i] = -grad[j] / v;
            }
        }
        return Some((x.as_slice().to_vec(), y));
    }

    let act: Vec<usize> = (0..r).filter(|&i| active[i]).collect();
    let na = act.len();
    let a_act = DMatrix::from_fn(na, d, |k, j| sc.a.get(act[k], j));
    let n = d + na;
    let mut k_true = DMatrix::zeros(n, n);
    k_true.view_mut((0, 0), (d, d)).copy_from(p);
    k_true.view_mut((d, 0), (na, d)).copy_from(&a_act);
    k_true
        .view_mut((0, d), (d, na))
        .copy_from(&a_act.transpose());
    let mut k_reg = k_true.clone();
    for j in 0..d {
        k_reg[(j, j)] += POLISH_DELTA;
    }
    for k in 0..na {
        k_reg[(d + k, d + k)] -= POLISH_DELTA;
    }
    let lu = k_reg.lu();
    let mut b = DVector::zeros(n);
    b.rows_mut(0, d).copy_from(&(-&q));
    for (k, &i) in act.iter().enumerate() {
        b[d + k] = target[i];
    }
    let mut sol = lu.solve(&b)?;
    for _ in 0..REFINE_STEPS {
        let res = &b - &k_true * &sol;
        sol += lu.solve(&res)?;
    }
    let mut y = vec![0.0; r];
    for (k, &i) in act.iter().enumerate() {
        y[i] = sol[d + k];
    }
    Some((sol.rows(0, d).as_slice().to_vec(), y))
}
