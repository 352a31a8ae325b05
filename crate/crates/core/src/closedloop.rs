//! Receding-horizon control of a nonlinear plant and the metrics used to
//! compare controllers.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::condense::{extract_first_input, Formulation, MpcSpec};
use crate::dynamics::{
    discretize, integrate, linearize, Discretization, PendulumParams, Plant, Robot, LINEARIZE_EPS,
};
use crate::empc::{solve_empc, EmpcSettings, Population};
use crate::error::{check_dim, invalid, Error, Result};
use crate::qp::{QpSettings, QpSolver, WarmStart};

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    Large,
    Small,
    LargeParam {
        knots: usize,
    },
    SmallParam {
        knots: usize,
    },
    Empc {
        knots: usize,
        settings: EmpcSettings,
    },
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Empc { .. } => "empc",
            other => other.formulation().expect("convex controller").name(),
        }
    }

    pub fn knots(&self) -> Option<usize> {
        match self {
            ControllerKind::Large | ControllerKind::Small => None,
            ControllerKind::LargeParam { knots }
            | ControllerKind::SmallParam { knots }
            | ControllerKind::Empc { knots, .. } => Some(*knots),
        }
    }

    /// The QP formulation, or `None` for EMPC.
    pub fn formulation(&self) -> Option<Formulation> {
        match self {
            ControllerKind::Large => Some(Formulation::Large),
            ControllerKind::Small => Some(Formulation::Small),
            ControllerKind::LargeParam { knots } => Some(Formulation::LargeParam { knots: *knots }),
            ControllerKind::SmallParam { knots } => Some(Formulation::SmallParam { knots: *knots }),
            ControllerKind::Empc { .. } => None,
        }
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if let Some(p) = self.knots() {
            if p == 0 || p > horizon {
                return Err(invalid(
                    "knots",
                    format!("must lie in 1..={horizon}, got {p}"),
                ));
            }
        }
        if let ControllerKind::Empc { settings, .. } = self {
            settings.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSettings {
    pub duration: f64,
    pub rate: f64,
    /// RK4 steps per control period.
    pub substeps: usize,
    pub qp: QpSettings,
}

impl Default for LoopSettings {
    fn default() -> Self {
        Self {
            duration: 10.0,
            rate: 100.0,
            substeps: 10,
            qp: QpSettings::default(),
        }
    }
}

impl LoopSettings {
    pub fn steps(&self) -> Result<usize> {
        if !(self.duration > 0.0
            && self.rate > 0.0
            && self.duration.is_finite()
            && self.rate.is_finite())
        {
            return Err(invalid("duration/rate", "must be finite and positive"));
        }
        let h = self.duration * self.rate;
        let steps = h.round();
        if (h - steps).abs() > 1e-9 * h.max(1.0) {
            return Err(invalid(
                "duration/rate",
                format!("duration·rate = {h} is not an integer"),
            ));
        }
        Ok(steps as usize)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// `H + 1` states, starting at `x0`.
    pub states: Vec<DVector<f64>>,
    /// `H` applied inputs.
    pub inputs: Vec<DVector<f64>>,
    /// Optimizer time per step (s).
    pub opt_times: Vec<f64>,
    /// Optimizer plus problem construction time per step (s).
    pub total_times: Vec<f64>,
    /// Steps whose solve failed and held the previous input.
    pub failed_steps: Vec<usize>,
    pub x_goal: DVector<f64>,
    pub rate: f64,
}

impl SimResult {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    /// Samples of state component `j`.
    pub fn component(&self, j: usize) -> Vec<f64> {
        self.states.iter().map(|x| x[j]).collect()
    }
}

/// Relinearizes `model` at every step, solves with `controller`, and applies
/// the first input to `plant` for one period. `template` supplies weights,
/// bounds and horizon; its model and goal are replaced.
pub fn run_closed_loop(
    plant: &dyn Plant,
    model: &dyn Plant,
    controller: &ControllerKind,
    template: &MpcSpec,
    x0: &DVector<f64>,
    x_goal: &DVector<f64>,
    settings: &LoopSettings,
) -> Result<SimResult> {
    let steps = settings.steps()?;
    let dt = settings.dt();
    let n = plant.state_dim();
    let m = plant.input_dim();
    check_dim("controller model state", n, model.state_dim())?;
    check_dim("controller model input", m, model.input_dim())?;
    check_dim("spec state", n, template.state_dim())?;
    check_dim("spec input", m, template.input_dim())?;
    check_dim("x0", n, x0.len())?;
    controller.validate(template.horizon())?;

    let mut spec = template.clone();
    spec.set_goal(x_goal.clone())?;
    let formulation = controller.formulation();
    let sched = match controller {
        ControllerKind::Empc { knots, .. } => {
            Some(crate::param::KnotSchedule::new(template.horizon(), *knots)?)
        }
        _ => None,
    };
    let mut solver = QpSolver::new(settings.qp.clone())?;
    let mut warm: Option<WarmStart> = None;
    let mut population: Option<Population> = None;
    let zero_u = DVector::zeros(m);
    let mut last_u = DVector::zeros(m);

    let mut result = SimResult {
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps),
        opt_times: Vec::with_capacity(steps),
        total_times: Vec::with_capacity(steps),
        failed_steps: Vec::new(),
        x_goal: x_goal.clone(),
        rate: settings.rate,
    };
    let mut x = x0.clone();
    result.states.push(x.clone());
    for step in 0..steps {
        let lin = linearize(model, &x, &zero_u, LINEARIZE_EPS)?;
        spec.set_model(discretize(&lin, dt, Discretization::Exact)?)?;
        let (u, opt, total) = match (&formulation, controller) {
            (Some(form), _) => {
                let start = Instant::now();
                let prob = form.build(&spec, &x)?;
                let sol = solver.solve(&prob, warm.as_ref())?;
                let total = start.elapsed().as_secs_f64();
                let u = extract_first_input(&sol, form, &spec).ok();
                warm = Some(sol.warm_start());
                (u, sol.solve_time, total)
            }
            (None, ControllerKind::Empc { settings: es, .. }) => {
                let start = Instant::now();
                let sched = sched.as_ref().expect("schedule for evolutionary control");
                let (u, pop) = solve_empc(&spec, sched, &x, es, population.take())?;
                population = Some(pop);
                let t = start.elapsed().as_secs_f64();
                (Some(u), t, t)
            }
            (None, _) => unreachable!("only the evolutionary controller lacks a formulation"),
        };
        match u {
            Some(u) => last_u = u,
            None => result.failed_steps.push(step),
        }
        result.opt_times.push(opt);
        result.total_times.push(total);
        x = integrate(plant, &x, &last_u, dt, settings.substeps)?;
        result.inputs.push(last_u.clone());
        result.states.push(x.clone());
    }
    Ok(result)
}

/// Stage cost summed over the realized trajectory, with a zero input padding
/// the final state. The goal comes from `result`, the weights from `spec`.
pub fn actual_cost(result: &SimResult, spec: &MpcSpec) -> Result<f64> {
    if result.states.is_empty() {
        return Err(invalid("result", "empty state trace"));
    }
    let mut s = spec.clone();
    s.set_goal(result.x_goal.clone())?;
    let zero = DVector::zeros(spec.input_dim());
    Ok(result
        .states
        .iter()
        .enumerate()
        .map(|(i, x)| s.stage_cost(x, result.inputs.get(i).unwrap_or(&zero)))
        .sum())
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den == 0.0 {
        if num == 0.0 {
            return Ok(1.0);
        }
        return Err(Error::NonFinite("cost ratio with zero baseline"));
    }
    Ok(num / den)
}

pub fn cost_ratio(test: &SimResult, baseline: &SimResult, spec: &MpcSpec) -> Result<f64> {
    ratio(actual_cost(test, spec)?, actual_cost(baseline, spec)?)
}

pub fn normalized_cost(
    with_error: &SimResult,
    without_error: &SimResult,
    spec: &MpcSpec,
) -> Result<f64> {
    cost_ratio(with_error, without_error, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorTarget {
    PendulumMassLength,
    InertiaMatrix,
}

/// A copy of `robot` with modeling error injected, for use inside a
/// controller only.
pub fn apply_error_multiplier(
    robot: &Robot,
    multiplier: f64,
    target: ErrorTarget,
) -> Result<Robot> {
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(invalid(
            "multiplier",
            format!("must be positive, got {multiplier}"),
        ));
    }
    match (robot, target) {
        (Robot::Pendulum(p), ErrorTarget::PendulumMassLength) => {
            Ok(Robot::Pendulum(PendulumParams::new(
                p.mass * multiplier,
                p.length * multiplier,
                p.damping,
                p.gravity,
            )?))
        }
        (Robot::NLink(p), ErrorTarget::InertiaMatrix) => {
            let mut q = p.clone();
            q.inertia_scale *= multiplier;
            Ok(Robot::NLink(q))
        }
        _ => Err(invalid(
            "error target",
            format!("{target:?} does not apply to this robot"),
        )),
    }
}

/// The target for a robot's natural modeling error.
pub fn default_error_target(robot: &Robot) -> Option<ErrorTarget> {
    match robot {
        Robot::Pendulum(_) => Some(ErrorTarget::PendulumMassLength),
        Robot::NLink(_) => Some(ErrorTarget::InertiaMatrix),
        Robot::Linear(_) => None,
    }
}

fn progress(x: f64, start: f64, goal: f64) -> f64 {
    (x - start) / (goal - start)
}

/// Time of the first 90% crossing of the step from `start` to `goal`,
/// interpolated between samples. `None` if never reached or if the step is
/// empty.
pub fn rise_time(trace: &[f64], start: f64, goal: f64, rate: f64) -> Option<f64> {
    if goal == start {
        return None;
    }
    let i = trace
        .iter()
        .position(|&x| progress(x, start, goal) >= 0.9)?;
    if i == 0 {
        return Some(0.0);
    }
    let a = progress(trace[i - 1], start, goal);
    let b = progress(trace[i], start, goal);
    let frac = if b > a {
        ((0.9 - a) / (b - a)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Some((i as f64 - 1.0 + frac) / rate)
}

pub fn percent_overshoot(trace: &[f64], start: f64, goal: f64) -> f64 {
    let span = goal - start;
    if span == 0.0 {
        return 0.0;
    }
    let peak = trace
        .iter()
        .map(|&x| (x - goal) * span.signum())
        .fold(0.0f64, f64::max);
    peak / span.abs() * 100.0
}

/// Trapezoidal `∫ (t − t0)|cmd − x| dt` over samples whose time lies in the
/// window.
pub fn itae(trace: &[f64], command: &[f64], rate: f64, window: (f64, f64)) -> Result<f64> {
    check_dim("command trace", trace.len(), command.len())?;
    let (t0, t1) = window;
    let tol = 1e-9 / rate;
    let pts: Vec<(f64, f64)> = trace
        .iter()
        .zip(command)
        .enumerate()
        .map(|(i, (x, c))| (i as f64 / rate, (c - x).abs()))
        .filter(|(t, _)| *t >= t0 - tol && *t <= t1 + tol)
        .map(|(t, e)| (t, (t - t0) * e))
        .collect();
    Ok(pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum())
}

/// Box-plot statistics with whiskers at the furthest samples within
/// 1.5·IQR of the box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_lo: f64,
    pub whisker_hi: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `None` for an empty sample.
pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile(&v, 0.25);
    let q3 = quantile(&v, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    Some(Summary {
        count: v.len(),
        median: quantile(&v, 0.5),
        q1,
        q3,
        whisker_lo: *v.iter().find(|&&x| x >= lo_fence).unwrap_or(&v[0]),
        whisker_hi: *v
            .iter()
            .rev()
            .find(|&&x| x <= hi_fence)
            .unwrap_or(&v[v.len() - 1]),
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    summarize(values).map(|s| s.median)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub actual_cost: f64,
    /// Median over moving joints; `None` when the median joint never rose.
    pub rise_time: Option<f64>,
    pub percent_overshoot: f64,
    pub itae: f64,
    pub opt_time: Summary,
    pub total_time: Summary,
    pub failures: usize,
}

/// Metrics over the position coordinates (the first `joints` states), with
/// the whole run as the ITAE window.
pub fn metrics(result: &SimResult, spec: &MpcSpec, joints: usize) -> Result<MetricsReport> {
    if result.inputs.is_empty() {
        return Err(invalid("result", "no control steps"));
    }
    let start = &result.states[0];
    let duration = result.steps() as f64 / result.rate;
    let mut rises = Vec::new();
    let mut overs = Vec::new();
    let mut itaes = Vec::new();
    for j in 0..joints {
        let trace = result.component(j);
        let goal = result.x_goal[j];
        let cmd = vec![goal; trace.len()];
        itaes.push(itae(&trace, &cmd, result.rate, (0.0, duration))?);
        if goal != start[j] {
            rises.push(rise_time(&trace, start[j], goal, result.rate).unwrap_or(f64::INFINITY));
            overs.push(percent_overshoot(&trace, start[j], goal));
        }
    }
    Ok(MetricsReport {
        actual_cost: actual_cost(result, spec)?,
        rise_time: median(&rises).filter(|r| r.is_finite()),
        percent_overshoot: median(&overs).unwrap_or(0.0),
        itae: median(&itaes).unwrap_or(0.0),
        opt_time: summarize(&result.opt_times).expect("nonempty"),
        total_time: summarize(&result.total_times).expect("nonempty"),
        failures: result.failed_steps.len(),
    })
}

/// Underdamped pendulum used for robustness runs.
pub fn underdamped_pendulum() -> PendulumParams {
    PendulumParams {
        mass: 1.0,
        length: 1.0,
        damping: 0.05,
        gravity: 9.81,
    }
}

/// Same pendulum without gravity, which makes the dynamics linear.
pub fn linear_pendulum() -> PendulumParams {
    PendulumParams {
        gravity: 0.0,
        ..underdamped_pendulum()
    }
}

pub const PENDULUM_TORQUE_LIMIT: f64 = 20.0;
pub const NLINK_TORQUE_LIMIT: f64 = 2.0;

/// Q = diag(10 per position, 0.1 per velocity), R = 0.01·I.
pub fn default_weights(joints: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut q = vec![10.0; joints];
    q.extend(std::iter::repeat_n(0.1, joints));
    (
        DMatrix::from_diagonal(&DVector::from_vec(q)),
        DMatrix::identity(joints, joints) * 0.01,
    )
}

pub fn torque_limit(robot: &Robot) -> f64 {
    match robot {
        Robot::NLink(_) => NLINK_TORQUE_LIMIT,
        _ => PENDULUM_TORQUE_LIMIT,
    }
}

/// Default weights and torque limits for `robot`, with a placeholder model
/// and goal that [`run_closed_loop`] replaces.
pub fn default_spec(robot: &Robot, horizon: usize, rate: f64) -> Result<MpcSpec> {
    let joints = robot.joints();
    let n = robot.state_dim();
    let m = robot.input_dim();
    let (q, r) = default_weights(joints);
    let lin = linearize(robot, &DVector::zeros(n), &DVector::zeros(m), LINEARIZE_EPS)?;
    let model = discretize(&lin, 1.0 / rate, Discretization::Exact)?;
    let limit = torque_limit(robot);
    MpcSpec::new(
        q,
        r,
        DVector::zeros(n),
        DVector::zeros(m),
        DVector::from_element(m, -limit),
        DVector::from_element(m, limit),
        horizon,
        model,
    )
}
