//! Plant models, linearization and discretization.
//!
//! Every plant exposes its state as `x = [q; q̇]` and its input as joint
//! torques. The N-link chain carries a point mass at the distal end of each
//! link; joint angles are relative, so link `i` points along the absolute
//! angle `φ_i = q_0 + … + q_i` measured from the hanging-down direction.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, invalid, Error, Result};

/// Continuous-time plant `ẋ = f(x, u)`.
pub trait Plant: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Point mass at the end of the link (kg).
    pub mass: f64,
    /// Massless link length (m).
    pub length: f64,
    /// Viscous joint damping (N·m·s/rad).
    pub damping: f64,
    /// Gravitational acceleration (m/s²). Zero gives a linear plant.
    pub gravity: f64,
}

impl PendulumParams {
    pub fn new(mass: f64, length: f64, damping: f64, gravity: f64) -> Result<Self> {
        let p = Self {
            mass,
            length,
            damping,
            gravity,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        positive("mass", self.mass)?;
        positive("length", self.length)?;
        non_negative("damping", self.damping)?;
        non_negative("gravity", self.gravity)
    }

    pub fn inertia(&self) -> f64 {
        self.mass * self.length * self.length
    }

    /// `q̈ = (τ − b q̇ − m g l sin q) / (m l²)`
    pub fn accel(&self, q: f64, qd: f64, tau: f64) -> f64 {
        (tau - self.damping * qd - self.mass * self.gravity * self.length * q.sin())
            / self.inertia()
    }

    /// Kinetic plus potential energy, with the potential datum at `q = 0`.
    pub fn total_energy(&self, q: f64, qd: f64) -> f64 {
        0.5 * self.inertia() * qd * qd + self.mass * self.gravity * self.length * (1.0 - q.cos())
    }
}

pub fn pendulum_accel(params: &PendulumParams, q: f64, qd: f64, tau: f64) -> f64 {
    params.accel(q, qd, tau)
}

impl Plant for PendulumParams {
    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("pendulum state", 2, x.len())?;
        check_dim("pendulum input", 1, u.len())?;
        Ok(DVector::from_vec(vec![x[1], self.accel(x[0], x[1], u[0])]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManipulatorState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl ManipulatorState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Result<Self> {
        check_dim("joint velocities", q.len(), qd.len())?;
        Ok(Self { q, qd })
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let qd = DVector::zeros(q.len());
        Self { q, qd }
    }

    pub fn from_state(x: &DVector<f64>) -> Result<Self> {
        if x.len() % 2 != 0 {
            return Err(invalid("state", "length must be even ([q; q̇])"));
        }
        let n = x.len() / 2;
        Ok(Self {
            q: x.rows(0, n).into_owned(),
            qd: x.rows(n, n).into_owned(),
        })
    }

    pub fn to_state(&self) -> DVector<f64> {
        let n = self.q.len();
        let mut x = DVector::zeros(2 * n);
        x.rows_mut(0, n).copy_from(&self.q);
        x.rows_mut(n, n).copy_from(&self.qd);
        x
    }
}

/// Planar serial chain of point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct NLinkParams {
    masses: Vec<f64>,
    lengths: Vec<f64>,
    pub damping: f64,
    pub gravity: f64,
    /// Multiplies the whole inertia matrix. Only controller models use
    /// values other than 1.
    pub inertia_scale: f64,
}

impl NLinkParams {
    pub const DEFAULT_MASS: f64 = 1.0;
    pub const DEFAULT_LENGTH: f64 = 0.25;
    pub const DEFAULT_DAMPING: f64 = 0.01;

    pub fn new(masses: Vec<f64>, lengths: Vec<f64>, damping: f64, gravity: f64) -> Result<Self> {
        if masses.is_empty() {
            return Err(invalid("links", "at least one link is required"));
        }
        check_dim("link lengths", masses.len(), lengths.len())?;
        for &m in &masses {
            positive("mass", m)?;
        }
        for &l in &lengths {
            positive("length", l)?;
        }
        non_negative("damping", damping)?;
        non_negative("gravity", gravity)?;
        Ok(Self {
            masses,
            lengths,
            damping,
            gravity,
            inertia_scale: 1.0,
        })
    }

    /// `links` identical links with 1 kg, 0.25 m, b = 0.01 in a horizontal plane.
    pub fn uniform(links: usize) -> Result<Self> {
        Self::new(
            vec![Self::DEFAULT_MASS; links],
            vec![Self::DEFAULT_LENGTH; links],
            Self::DEFAULT_DAMPING,
            0.0,
        )
    }

    pub fn links(&self) -> usize {
        self.masses.len()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Absolute link angles and, per link, the unit direction `e(φ)` and its
    /// derivative `e'(φ)`.
    fn link_frames(&self, q: &[f64]) -> (Vec<f64>, Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let mut phi = Vec::with_capacity(q.len());
        let mut acc = 0.0;
        for &qi in q {
            acc += qi;
            phi.push(acc);
        }
        let dir = phi.iter().map(|p| [p.sin(), -p.cos()]).collect();
        let tan = phi.iter().map(|p| [p.cos(), p.sin()]).collect();
        (phi, dir, tan)
    }

    /// Column `j` of the position Jacobian of mass `i`, for `j <= i`:
    /// `Σ_{l=j..=i} L_l e'(φ_l)`. Returned as `jac[i][j]`.
    fn jacobians(&self, tan: &[[f64; 2]]) -> Vec<Vec<[f64; 2]>> {
        let n = self.links();
        let mut jac = vec![vec![[0.0; 2]; n]; n];
        for i in 0..n {
            let mut sum = [0.0; 2];
            for j in (0..=i).rev() {
                sum[0] += self.lengths[j] * tan[j][0];
                sum[1] += self.lengths[j] * tan[j][1];
                jac[i][j] = sum;
            }
        }
        jac
    }

    pub fn mass_matrix(&self, q: &[f64]) -> Result<DMatrix<f64>> {
        check_dim("joint angles", self.links(), q.len())?;
        let n = self.links();
        let (_, _, tan) = self.link_frames(q);
        let jac = self.jacobians(&tan);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let mi = self.masses[i];
            for j in 0..=i {
                for k in 0..=j {
                    let v = mi * (jac[i][j][0] * jac[i][k][0] + jac[i][j][1] * jac[i][k][1]);
                    m[(j, k)] += v;
                }
            }
        }
        for j in 0..n {
            for k in 0..j {
                m[(k, j)] = m[(j, k)];
            }
        }
        m *= self.inertia_scale;
        Ok(m)
    }

    /// Centrifugal/Coriolis torques `C(q, q̇)` and gravity torques.
    fn bias_torques(&self, q: &[f64], qd: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let n = self.links();
        let (_, dir, tan) = self.link_frames(q);
        let jac = self.jacobians(&tan);
        let mut phid = 0.0;
        let mut coriolis = DVector::zeros(n);
        let mut gravity = DVector::zeros(n);
        // velocity-product acceleration of each mass: −Σ_{l<=i} L_l φ̇_l² e(φ_l)
        let mut accel = [0.0; 2];
        for i in 0..n {
            phid += qd[i];
            let s = self.lengths[i] * phid * phid;
            accel[0] -= s * dir[i][0];
            accel[1] -= s * dir[i][1];
            let mi = self.masses[i];
            for j in 0..=i {
                coriolis[j] += mi * (jac[i][j][0] * accel[0] + jac[i][j][1] * accel[1]);
                gravity[j] += mi * self.gravity * jac[i][j][1];
            }
        }
        (coriolis, gravity)
    }

    /// `q̈ = M(q)⁻¹ (τ − C(q, q̇) − b q̇ − τ_grav)`
    pub fn accel(&self, state: &ManipulatorState, tau: &[f64]) -> Result<DVector<f64>> {
        let n = self.links();
        check_dim("joint angles", n, state.q.len())?;
        check_dim("joint torques", n, tau.len())?;
        let m = self.mass_matrix(state.q.as_slice())?;
        let (c, g) = self.bias_torques(state.q.as_slice(), state.qd.as_slice());
        let rhs = DVector::from_column_slice(tau) - c - &state.qd * self.damping - g;
        let chol = m
            .cholesky()
            .ok_or_else(|| Error::SingularInertia(state.q.iter().copied().collect()))?;
        Ok(chol.solve(&rhs))
    }

    /// Position of each point mass in the plane.
    pub fn positions(&self, q: &[f64]) -> Vec<[f64; 2]> {
        let (_, dir, _) = self.link_frames(q);
        let mut p = [0.0; 2];
        dir.iter()
            .zip(&self.lengths)
            .map(|(d, l)| {
                p[0] += l * d[0];
                p[1] += l * d[1];
                p
            })
            .collect()
    }

    /// Kinetic plus potential energy; potential is zero with every link hanging down.
    pub fn total_energy(&self, state: &ManipulatorState) -> Result<f64> {
        let m = self.mass_matrix(state.q.as_slice())?;
        let kinetic = 0.5 * state.qd.dot(&(&m * &state.qd));
        let mut reach = 0.0;
        let potential: f64 = self
            .positions(state.q.as_slice())
            .iter()
            .zip(self.masses.iter().zip(&self.lengths))
            .map(|(p, (mass, len))| {
                reach += len;
                mass * self.gravity * (p[1] + reach)
            })
            .sum();
        Ok(kinetic + potential)
    }
}

pub fn nlink_mass_matrix(params: &NLinkParams, q: &[f64]) -> Result<DMatrix<f64>> {
    params.mass_matrix(q)
}

pub fn nlink_accel(
    params: &NLinkParams,
    state: &ManipulatorState,
    tau: &[f64],
) -> Result<DVector<f64>> {
    params.accel(state, tau)
}

impl Plant for NLinkParams {
    fn state_dim(&self) -> usize {
        2 * self.links()
    }

    fn input_dim(&self) -> usize {
        self.links()
    }

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("manipulator state", self.state_dim(), x.len())?;
        let state = ManipulatorState::from_state(x)?;
        let qdd = self.accel(&state, u.as_slice())?;
        let n = self.links();
        let mut dx = DVector::zeros(2 * n);
        dx.rows_mut(0, n).copy_from(&state.qd);
        dx.rows_mut(n, n).copy_from(&qdd);
        Ok(dx)
    }
}

/// `ẋ = A x + B u + w`
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousLinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DVector<f64>,
}

impl ContinuousLinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        check_dim("A columns", n, a.ncols())?;
        check_dim("B rows", n, b.nrows())?;
        check_dim("w length", n, w.len())?;
        Ok(Self { a, b, w })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

impl Plant for ContinuousLinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("linear model state", self.state_dim(), x.len())?;
        check_dim("linear model input", self.input_dim(), u.len())?;
        Ok(&self.a * x + &self.b * u + &self.w)
    }
}

/// `x_{k+1} = A_d x_k + B_d u_k + w_d`
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DVector<f64>,
    pub dt: f64,
}

impl DiscreteLinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, w: DVector<f64>, dt: f64) -> Result<Self> {
        let n = a.nrows();
        check_dim("A_d columns", n, a.ncols())?;
        check_dim("B_d rows", n, b.nrows())?;
        check_dim("w_d length", n, w.len())?;
        positive("dt", dt)?;
        Ok(Self { a, b, w, dt })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut next = self.w.clone();
        next.gemv(1.0, &self.a, x, 1.0);
        next.gemv(1.0, &self.b, u, 1.0);
        next
    }

    /// States `x_0 … x_T` for inputs `u_0 … u_{T−1}`.
    pub fn rollout(&self, x0: &DVector<f64>, inputs: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0.clone());
        for u in inputs {
            let next = self.step(states.last().expect("non-empty"), u);
            states.push(next);
        }
        states
    }
}

pub fn step(model: &DiscreteLinearModel, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    model.step(x, u)
}

pub fn rollout(
    model: &DiscreteLinearModel,
    x0: &DVector<f64>,
    inputs: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    model.rollout(x0, inputs)
}

/// Default central-difference step for [`linearize`].
pub const LINEARIZE_EPS: f64 = 1e-6;

/// Affine model of `plant` about `(x0, u0)` from central differences. The
/// residual is folded into `w` so the model is exact at the operating point.
pub fn linearize<P: Plant + ?Sized>(
    plant: &P,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    eps: f64,
) -> Result<ContinuousLinearModel> {
    positive("eps", eps)?;
    let n = plant.state_dim();
    let m = plant.input_dim();
    check_dim("linearization state", n, x0.len())?;
    check_dim("linearization input", m, u0.len())?;

    let f0 = finite(plant.derivative(x0, u0)?, "plant at operating point")?;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, m);
    let mut xp = x0.clone();
    for j in 0..n {
        xp[j] = x0[j] + eps;
        let hi = plant.derivative(&xp, u0)?;
        xp[j] = x0[j] - eps;
        let lo = plant.derivative(&xp, u0)?;
        xp[j] = x0[j];
        a.set_column(j, &((hi - lo) / (2.0 * eps)));
    }
    let mut up = u0.clone();
    for j in 0..m {
        up[j] = u0[j] + eps;
        let hi = plant.derivative(x0, &up)?;
        up[j] = u0[j] - eps;
        let lo = plant.derivative(x0, &up)?;
        up[j] = u0[j];
        b.set_column(j, &((hi - lo) / (2.0 * eps)));
    }
    let a = finite(a, "state jacobian")?;
    let b = finite(b, "input jacobian")?;
    let w = f0 - &a * x0 - &b * u0;
    ContinuousLinearModel::new(a, b, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Discretization {
    Euler,
    /// Zero-order hold through the matrix exponential.
    #[default]
    Exact,
}

pub fn discretize(
    model: &ContinuousLinearModel,
    dt: f64,
    method: Discretization,
) -> Result<DiscreteLinearModel> {
    positive("dt", dt)?;
    let n = model.state_dim();
    let m = model.input_dim();
    match method {
        Discretization::Euler => DiscreteLinearModel::new(
            DMatrix::identity(n, n) + &model.a * dt,
            &model.b * dt,
            &model.w * dt,
            dt,
        ),
        Discretization::Exact => {
            // exp([[A, B, w], [0, 0, 0]] dt) = [[A_d, B_d, w_d], [0, I, 0]]
            let size = n + m + 1;
            let mut aug = DMatrix::zeros(size, size);
            aug.view_mut((0, 0), (n, n)).copy_from(&(&model.a * dt));
            aug.view_mut((0, n), (n, m)).copy_from(&(&model.b * dt));
            aug.view_mut((0, n + m), (n, 1)).copy_from(&(&model.w * dt));
            let e = finite(aug.exp(), "matrix exponential")?;
            DiscreteLinearModel::new(
                e.view((0, 0), (n, n)).into_owned(),
                e.view((0, n), (n, m)).into_owned(),
                e.view((0, n + m), (n, 1)).column(0).into_owned(),
                dt,
            )
        }
    }
}

pub fn rk4_step<P: Plant + ?Sized>(
    plant: &P,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let k1 = plant.derivative(x, u)?;
    let k2 = plant.derivative(&(x + &k1 * (0.5 * h)), u)?;
    let k3 = plant.derivative(&(x + &k2 * (0.5 * h)), u)?;
    let k4 = plant.derivative(&(x + &k3 * h), u)?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    finite(next, "plant integration")
}

/// Holds `u` constant for `duration` seconds using `substeps` RK4 steps.
pub fn integrate<P: Plant + ?Sized>(
    plant: &P,
    x: &DVector<f64>,
    u: &DVector<f64>,
    duration: f64,
    substeps: usize,
) -> Result<DVector<f64>> {
    let substeps = substeps.max(1);
    let h = duration / substeps as f64;
    let mut state = x.clone();
    for _ in 0..substeps {
        state = rk4_step(plant, &state, u, h)?;
    }
    Ok(state)
}

/// A plant the toolkit knows how to perturb and configure.
#[derive(Debug, Clone, PartialEq)]
pub enum Robot {
    Pendulum(PendulumParams),
    NLink(NLinkParams),
    Linear(ContinuousLinearModel),
}

impl Robot {
    pub fn joints(&self) -> usize {
        match self {
            Robot::Pendulum(_) => 1,
            Robot::NLink(p) => p.links(),
            Robot::Linear(m) => m.state_dim() / 2,
        }
    }

    pub fn total_energy(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            Robot::Pendulum(p) => {
                check_dim("pendulum state", 2, x.len())?;
                Ok(p.total_energy(x[0], x[1]))
            }
            Robot::NLink(p) => p.total_energy(&ManipulatorState::from_state(x)?),
            Robot::Linear(_) => Err(invalid("robot", "energy is undefined for a linear model")),
        }
    }
}

pub fn total_energy(robot: &Robot, x: &DVector<f64>) -> Result<f64> {
    robot.total_energy(x)
}

impl Plant for Robot {
    fn state_dim(&self) -> usize {
        match self {
            Robot::Pendulum(p) => p.state_dim(),
            Robot::NLink(p) => p.state_dim(),
            Robot::Linear(m) => Plant::state_dim(m),
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Robot::Pendulum(p) => p.input_dim(),
            Robot::NLink(p) => p.input_dim(),
            Robot::Linear(m) => Plant::input_dim(m),
        }
    }

    fn derivative(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Robot::Pendulum(p) => p.derivative(x, u),
            Robot::NLink(p) => p.derivative(x, u),
            Robot::Linear(m) => m.derivative(x, u),
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and >= 0, got {v}")))
    }
}

fn finite<T: AsRef<[f64]>>(v: T, what: &'static str) -> Result<T> {
    if v.as_ref().iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::NonFinite(what))
    }
}
