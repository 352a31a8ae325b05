//! Built-in experiment configurations, one per figure or table of interest.

use crate::config::{
    BaselineConfig, ControllerName, EmpcConfig, ExperimentConfig, ExperimentKind, RobotKind,
};
use crate::error::{BenchError, Result};

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> ExperimentConfig,
}

impl Preset {
    pub fn config(&self) -> ExperimentConfig {
        ExperimentConfig {
            name: self.name.into(),
            ..(self.build)()
        }
    }
}

const SWEEP_KNOTS: [usize; 7] = [1, 2, 3, 4, 8, 16, 50];
const SHORT_HORIZONS: [usize; 6] = [5, 10, 20, 30, 40, 50];
const PENDULUM_MULTIPLIERS: [f64; 11] = [0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5];

fn param_sweep(robot: RobotKind, links: usize, baseline: ControllerName) -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::ParamSweep,
        robot,
        links: vec![links],
        horizons: vec![50],
        knots: SWEEP_KNOTS.to_vec(),
        controllers: vec![if baseline == ControllerName::Large {
            ControllerName::LargeParam
        } else {
            ControllerName::SmallParam
        }],
        baseline: BaselineConfig {
            controller: baseline,
            ..BaselineConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn horizon_sweep(robot: RobotKind, links: usize, traditional: ControllerName) -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::HorizonSweep,
        robot,
        links: vec![links],
        horizons: SHORT_HORIZONS.to_vec(),
        controllers: vec![traditional],
        baseline: BaselineConfig {
            controller: traditional,
            knots: None,
            horizon: Some(50),
        },
        ..ExperimentConfig::default()
    }
}

fn solve_times(horizon: usize) -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::SolveTimeScaling,
        robot: RobotKind::Nlink,
        links: (1..=13).collect(),
        horizons: vec![horizon],
        knots: vec![5],
        controllers: vec![
            ControllerName::Large,
            ControllerName::Small,
            ControllerName::LargeParam,
            ControllerName::SmallParam,
        ],
        ..ExperimentConfig::default()
    }
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "param_sweep_linear",
        description: "cost ratio vs knot count, pendulum without gravity, T=50 against a full-run horizon",
        build: || param_sweep(RobotKind::LinearPendulum, 1, ControllerName::Small),
    },
    Preset {
        name: "param_sweep_pendulum",
        description: "cost ratio vs knot count, pendulum with gravity",
        build: || param_sweep(RobotKind::Pendulum, 1, ControllerName::Small),
    },
    Preset {
        name: "param_sweep_nlink",
        description: "cost ratio vs knot count, six-link arm",
        build: || param_sweep(RobotKind::Nlink, 6, ControllerName::Large),
    },
    Preset {
        name: "horizon_sweep_linear",
        description: "traditional MPC cost vs horizon, relative to T=50, pendulum without gravity",
        build: || horizon_sweep(RobotKind::LinearPendulum, 1, ControllerName::Small),
    },
    Preset {
        name: "horizon_sweep_pendulum",
        description: "traditional MPC cost vs horizon, relative to T=50, pendulum with gravity",
        build: || horizon_sweep(RobotKind::Pendulum, 1, ControllerName::Small),
    },
    Preset {
        name: "horizon_sweep_nlink",
        description: "traditional MPC cost vs horizon, relative to T=50, six-link arm",
        build: || horizon_sweep(RobotKind::Nlink, 6, ControllerName::Large),
    },
    Preset {
        name: "robustness_pendulum",
        description: "normalized cost, rise time and overshoot vs error multiplier on mass and length",
        build: || ExperimentConfig {
            kind: ExperimentKind::Robustness,
            robot: RobotKind::Pendulum,
            knots: vec![2, 4, 8],
            multipliers: PENDULUM_MULTIPLIERS.to_vec(),
            controllers: vec![ControllerName::Small, ControllerName::SmallParam],
            duration: 3.0,
            ..ExperimentConfig::default()
        },
    },
    Preset {
        name: "robustness_nlink",
        description: "normalized cost vs error multiplier on the inertia matrix, six-link arm",
        build: || ExperimentConfig {
            kind: ExperimentKind::Robustness,
            robot: RobotKind::Nlink,
            links: vec![6],
            knots: vec![2, 4, 8],
            multipliers: vec![0.5, 0.7, 0.9, 1.0, 1.1, 1.3, 1.5],
            controllers: vec![ControllerName::Large, ControllerName::LargeParam],
            duration: 3.0,
            ..ExperimentConfig::default()
        },
    },
    Preset {
        name: "solve_times_t50",
        description: "optimization and total MPC times for 1 to 13 links, T=50, p=5",
        build: || solve_times(50),
    },
    Preset {
        name: "solve_times_t100",
        description: "optimization and total MPC times for 1 to 13 links, T=100, p=5",
        build: || solve_times(100),
    },
    Preset {
        name: "empc_solve_times",
        description: "EMPC against convex solvers for 1 to 13 links, T=100, p=3",
        build: || ExperimentConfig {
            kind: ExperimentKind::SolveTimeScaling,
            robot: RobotKind::Nlink,
            links: (1..=13).collect(),
            horizons: vec![100],
            knots: vec![3],
            controllers: vec![ControllerName::Large, ControllerName::SmallParam, ControllerName::Empc],
            ..ExperimentConfig::default()
        },
    },
    Preset {
        name: "closedloop_empc",
        description: "10 s closed loop, six-link arm, EMPC with 1 and 3 generations vs convex parameterized MPC",
        build: || ExperimentConfig {
            kind: ExperimentKind::ClosedloopComparison,
            robot: RobotKind::Nlink,
            links: vec![6],
            horizons: vec![100],
            knots: vec![3],
            controllers: vec![ControllerName::SmallParam, ControllerName::Empc],
            baseline: BaselineConfig {
                controller: ControllerName::SmallParam,
                knots: Some(3),
                horizon: Some(100),
            },
            trials: 10,
            duration: 10.0,
            empc: EmpcConfig {
                generations: vec![1, 3],
                ..EmpcConfig::default()
            },
            ..ExperimentConfig::default()
        },
    },
];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    PRESETS
        .iter()
        .find(|p| p.name == name)
        .map(Preset::config)
        .ok_or_else(|| BenchError::UnknownPreset(name.into()))
}
