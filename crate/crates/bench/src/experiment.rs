//! Runs an [`ExperimentConfig`] and produces one record per trial and
//! controller.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use knotmpc::closedloop::{
    actual_cost, apply_error_multiplier, default_error_target, default_spec, linear_pendulum,
    metrics, run_closed_loop, underdamped_pendulum, ControllerKind, SimResult,
};
use knotmpc::condense::MpcSpec;
use knotmpc::dynamics::{
    discretize, linearize, Discretization, NLinkParams, Plant, Robot, LINEARIZE_EPS,
};
use knotmpc::empc::solve_empc;
use knotmpc::param::KnotSchedule;
use knotmpc::qp::QpSolver;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, RobotKind, Variant};
use crate::error::Result;
use crate::record::{join_angles, write_csv_file, TrialRecord};
use crate::timing::{time_direct, time_solver, Timing};

pub fn make_robot(kind: RobotKind, links: usize) -> Result<Robot> {
    Ok(match kind {
        RobotKind::Pendulum => Robot::Pendulum(underdamped_pendulum()),
        RobotKind::LinearPendulum => Robot::Pendulum(linear_pendulum()),
        RobotKind::Nlink => Robot::NLink(NLinkParams::uniform(links)?),
    })
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one `(links, trial)` cell.
pub fn trial_seed(seed: u64, links: usize, trial: usize) -> u64 {
    mix(mix(seed, links as u64 + 1), trial as u64 + 1)
}

/// Start and goal at rest with joint angles uniform in [−π, π].
pub fn sample_start_goal(seed: u64, joints: usize) -> (DVector<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x0 = DVector::zeros(2 * joints);
    let mut xg = DVector::zeros(2 * joints);
    for j in 0..joints {
        x0[j] = rng.random_range(-PI..=PI);
    }
    for j in 0..joints {
        xg[j] = rng.random_range(-PI..=PI);
    }
    (x0, xg)
}

struct Cell {
    links: usize,
    trial: usize,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    let cells: Vec<Cell> = cfg
        .links
        .iter()
        .flat_map(|&links| (0..cfg.trials).map(move |trial| Cell { links, trial }))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .expect("thread pool");
    let rows: Vec<Vec<TrialRecord>> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(cfg, c))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(rows.into_iter().flatten().collect())
}

/// Runs the experiment and writes `<dir>/<name>.csv`.
pub fn run_experiment_to(
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<(Vec<TrialRecord>, PathBuf)> {
    let records = run_experiment(cfg)?;
    let path = dir.join(format!("{}.csv", cfg.name));
    write_csv_file(&path, &records)?;
    Ok((records, path))
}

fn base_record(
    cfg: &ExperimentConfig,
    cell: &Cell,
    horizon: usize,
    v: &ControllerKind,
    x0: &DVector<f64>,
    xg: &DVector<f64>,
    joints: usize,
) -> TrialRecord {
    let generations = match v {
        ControllerKind::Empc { settings, .. } => Some(settings.generations),
        _ => None,
    };
    TrialRecord {
        experiment: cfg.name.clone(),
        kind: cfg.kind.name().into(),
        robot: cfg.robot.name().into(),
        links: cell.links,
        trial: cell.trial,
        horizon,
        controller: v.name().into(),
        knots: v.knots(),
        generations,
        start: join_angles(&x0.as_slice()[..joints]),
        goal: join_angles(&xg.as_slice()[..joints]),
        ..TrialRecord::default()
    }
}

fn run_cell(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<TrialRecord>> {
    let robot = make_robot(cfg.robot, cell.links)?;
    let seed = trial_seed(cfg.seed, cell.links, cell.trial);
    let (x0, xg) = sample_start_goal(seed, robot.joints());
    if cfg.kind.closed_loop() {
        closed_loop_cell(cfg, cell, &robot, seed, &x0, &xg)
    } else {
        timing_cell(cfg, cell, &robot, seed, &x0, &xg)
    }
}

struct Run {
    result: SimResult,
    cost: f64,
}

fn simulate(
    cfg: &ExperimentConfig,
    robot: &Robot,
    model: &Robot,
    controller: &ControllerKind,
    spec: &MpcSpec,
    x0: &DVector<f64>,
    xg: &DVector<f64>,
) -> Result<Run> {
    let result = run_closed_loop(robot, model, controller, spec, x0, xg, &cfg.loop_settings())?;
    let cost = actual_cost(&result, spec)?;
    Ok(Run { result, cost })
}

fn fill_closed_loop(rec: &mut TrialRecord, run: &Run, spec: &MpcSpec, joints: usize) -> Result<()> {
    let m = metrics(&run.result, spec, joints)?;
    rec.actual_cost = Some(run.cost);
    rec.rise_time = m.rise_time;
    rec.overshoot_pct = Some(m.percent_overshoot);
    rec.itae = Some(m.itae);
    rec.final_error =
        Some((run.result.states.last().expect("nonempty") - &run.result.x_goal).norm());
    rec.steps = run.result.steps();
    rec.failures = m.failures;
    rec.opt_time_median = m.opt_time.median;
    rec.opt_time_q1 = m.opt_time.q1;
    rec.opt_time_q3 = m.opt_time.q3;
    rec.total_time_median = m.total_time.median;
    rec.total_time_q1 = m.total_time.q1;
    rec.total_time_q3 = m.total_time.q3;
    Ok(())
}

fn closed_loop_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    robot: &Robot,
    seed: u64,
    x0: &DVector<f64>,
    xg: &DVector<f64>,
) -> Result<Vec<TrialRecord>> {
    let joints = robot.joints();
    let inputs = robot.input_dim();
    let mut rows = Vec::new();
    let baseline = if cfg.kind.has_baseline() {
        let spec = default_spec(robot, cfg.baseline_horizon(), cfg.rate)?;
        Some(simulate(cfg, robot, robot, &cfg.baseline_controller(), &spec, x0, xg)?.cost)
    } else {
        None
    };
    for &t in &cfg.horizons {
        let spec = default_spec(robot, t, cfg.rate)?;
        for Variant { kind } in cfg.variants(t, inputs, seed) {
            let nominal = simulate(cfg, robot, robot, &kind, &spec, x0, xg)?;
            if cfg.kind == ExperimentKind::Robustness {
                let target = default_error_target(robot).expect("validated robot");
                for &mult in &cfg.multipliers {
                    let run = if mult == 1.0 {
                        None
                    } else {
                        let model = apply_error_multiplier(robot, mult, target)?;
                        Some(simulate(cfg, robot, &model, &kind, &spec, x0, xg)?)
                    };
                    let run = run.as_ref().unwrap_or(&nominal);
                    let mut rec = base_record(cfg, cell, t, &kind, x0, xg, joints);
                    rec.multiplier = Some(mult);
                    fill_closed_loop(&mut rec, run, &spec, joints)?;
                    rec.normalized_cost = Some(ratio(run.cost, nominal.cost));
                    rows.push(rec);
                }
            } else {
                let mut rec = base_record(cfg, cell, t, &kind, x0, xg, joints);
                fill_closed_loop(&mut rec, &nominal, &spec, joints)?;
                rec.cost_ratio = baseline.map(|b| ratio(nominal.cost, b));
                rows.push(rec);
            }
        }
    }
    Ok(rows)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 && num == 0.0 {
        1.0
    } else {
        num / den
    }
}

fn timing_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    robot: &Robot,
    seed: u64,
    x0: &DVector<f64>,
    xg: &DVector<f64>,
) -> Result<Vec<TrialRecord>> {
    let joints = robot.joints();
    let m = robot.input_dim();
    let lin = linearize(robot, x0, &DVector::zeros(m), LINEARIZE_EPS)?;
    let model = discretize(&lin, 1.0 / cfg.rate, Discretization::Exact)?;
    let mut rows = Vec::new();
    for &t in &cfg.horizons {
        let mut spec = default_spec(robot, t, cfg.rate)?;
        spec.set_model(model.clone())?;
        spec.set_goal(xg.clone())?;
        for Variant { kind } in cfg.variants(t, m, seed) {
            let mut rec = base_record(cfg, cell, t, &kind, x0, xg, joints);
            let timing: Timing = match (&kind, kind.formulation()) {
                (_, Some(form)) => {
                    let mut solver = QpSolver::new(cfg.qp.settings())?;
                    let (sol, timing) = time_solver(
                        || form.build(&spec, x0),
                        |p| solver.solve(p, None).map(|s| (s, p.offset())),
                    )?;
                    let (sol, offset) = sol;
                    rec.status = Some(sol.status.to_string());
                    rec.iterations = Some(sol.iterations);
                    rec.objective = Some(sol.objective + offset);
                    rec.failures = usize::from(!sol.is_solved());
                    timing
                }
                (ControllerKind::Empc { knots, settings }, None) => {
                    let sched = KnotSchedule::new(t, *knots)?;
                    let ((_, pop), timing) =
                        time_direct(|| solve_empc(&spec, &sched, x0, settings, None))?;
                    rec.status = Some("generations".into());
                    rec.iterations = Some(settings.generations);
                    rec.objective = Some(pop.best_cost());
                    timing
                }
                _ => unreachable!("convex controllers have a formulation"),
            };
            rec.steps = 1;
            rec.opt_time_median = timing.opt;
            rec.opt_time_q1 = timing.opt;
            rec.opt_time_q3 = timing.opt;
            rec.total_time_median = timing.total;
            rec.total_time_q1 = timing.total;
            rec.total_time_q3 = timing.total;
            rows.push(rec);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ControllerName, EmpcConfig};

    fn tiny(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            name: "tiny".into(),
            kind,
            trials: 2,
            horizons: vec![10],
            knots: vec![2, 3],
            duration: 0.2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn sampling_is_keyed_and_at_rest() {
        let (a, b) = sample_start_goal(trial_seed(5, 3, 0), 3);
        let (c, _) = sample_start_goal(trial_seed(5, 3, 1), 3);
        assert_eq!(
            sample_start_goal(trial_seed(5, 3, 0), 3),
            (a.clone(), b.clone())
        );
        assert_ne!(a, c);
        assert!(a
            .iter()
            .take(3)
            .chain(b.iter().take(3))
            .all(|v| v.abs() <= PI));
        assert!(a.iter().skip(3).chain(b.iter().skip(3)).all(|&v| v == 0.0));
    }

    #[test]
    fn single_trial_single_controller_gives_one_row() {
        let cfg = ExperimentConfig {
            trials: 1,
            knots: vec![3],
            ..tiny(ExperimentKind::ParamSweep)
        };
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(
            (r.controller.as_str(), r.knots, r.steps),
            ("small_param", Some(3), 20)
        );
        assert!(r.cost_ratio.unwrap() > 0.0);
    }

    #[test]
    fn robustness_normalizes_against_nominal() {
        let cfg = ExperimentConfig {
            multipliers: vec![0.7, 1.0, 1.3],
            controllers: vec![ControllerName::Small],
            ..tiny(ExperimentKind::Robustness)
        };
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 3);
        for r in &rows {
            if r.multiplier == Some(1.0) {
                assert_eq!(r.normalized_cost, Some(1.0));
            }
            assert!(r.normalized_cost.unwrap() > 0.0);
        }
    }

    #[test]
    fn timing_rows_cover_links_and_controllers() {
        let cfg = ExperimentConfig {
            robot: RobotKind::Nlink,
            links: vec![1, 2],
            controllers: vec![
                ControllerName::Large,
                ControllerName::SmallParam,
                ControllerName::Empc,
            ],
            knots: vec![3],
            empc: EmpcConfig {
                num_sims: 32,
                num_parents: 4,
                ..EmpcConfig::default()
            },
            ..tiny(ExperimentKind::SolveTimeScaling)
        };
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 3);
        for r in &rows {
            assert!(r.total_time_median >= r.opt_time_median);
            if r.controller == "empc" {
                assert_eq!(r.total_time_median, r.opt_time_median);
            } else {
                assert_eq!(r.status.as_deref(), Some("solved"));
            }
        }
    }
}
