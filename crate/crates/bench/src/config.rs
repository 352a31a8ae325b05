//! Experiment configuration, read from TOML.

use std::path::Path;

use knotmpc::closedloop::{ControllerKind, LoopSettings};
use knotmpc::empc::EmpcSettings;
use knotmpc::qp::QpSettings;
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    ParamSweep,
    HorizonSweep,
    Robustness,
    SolveTimeScaling,
    ClosedloopComparison,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ParamSweep => "param_sweep",
            ExperimentKind::HorizonSweep => "horizon_sweep",
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::SolveTimeScaling => "solve_time_scaling",
            ExperimentKind::ClosedloopComparison => "closedloop_comparison",
        }
    }

    /// Whether trials run the closed loop rather than single solves.
    pub fn closed_loop(self) -> bool {
        self != ExperimentKind::SolveTimeScaling
    }

    /// Whether rows carry a ratio against a baseline controller.
    pub fn has_baseline(self) -> bool {
        matches!(
            self,
            ExperimentKind::ParamSweep
                | ExperimentKind::HorizonSweep
                | ExperimentKind::ClosedloopComparison
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotKind {
    /// Underdamped pendulum under gravity.
    Pendulum,
    /// The same pendulum with gravity removed.
    LinearPendulum,
    /// Planar chain of identical links.
    Nlink,
}

impl RobotKind {
    pub fn name(self) -> &'static str {
        match self {
            RobotKind::Pendulum => "pendulum",
            RobotKind::LinearPendulum => "linear_pendulum",
            RobotKind::Nlink => "nlink",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerName {
    Large,
    Small,
    LargeParam,
    SmallParam,
    Empc,
}

impl ControllerName {
    pub fn name(self) -> &'static str {
        match self {
            ControllerName::Large => "large",
            ControllerName::Small => "small",
            ControllerName::LargeParam => "large_param",
            ControllerName::SmallParam => "small_param",
            ControllerName::Empc => "empc",
        }
    }

    pub fn uses_knots(self) -> bool {
        matches!(
            self,
            ControllerName::LargeParam | ControllerName::SmallParam | ControllerName::Empc
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpcConfig {
    pub num_sims: usize,
    pub num_parents: usize,
    /// Each entry is a separate EMPC controller variant.
    pub generations: Vec<usize>,
    pub mutation_prob: f64,
    pub crossover_prob: f64,
    /// Same for every input channel; omitted means 0.2·(u_max − u_min).
    pub sigma_base: Option<f64>,
    pub d_ref: f64,
}

impl Default for EmpcConfig {
    fn default() -> Self {
        let d = EmpcSettings::default();
        Self {
            num_sims: d.num_sims,
            num_parents: d.num_parents,
            generations: vec![d.generations],
            mutation_prob: d.mutation_prob,
            crossover_prob: d.crossover_prob,
            sigma_base: None,
            d_ref: d.d_ref,
        }
    }
}

impl EmpcConfig {
    pub fn settings(&self, generations: usize, inputs: usize, seed: u64) -> EmpcSettings {
        EmpcSettings {
            num_sims: self.num_sims,
            num_parents: self.num_parents,
            generations,
            seed,
            mutation_prob: self.mutation_prob,
            crossover_prob: self.crossover_prob,
            sigma_base: self.sigma_base.map(|s| vec![s; inputs]),
            d_ref: self.d_ref,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpConfig {
    pub max_iters: usize,
    pub eps_prim: f64,
    pub eps_dual: f64,
    pub polish: bool,
    pub adaptive_rho: bool,
}

impl Default for QpConfig {
    fn default() -> Self {
        let d = QpSettings::default();
        Self {
            max_iters: d.max_iters,
            eps_prim: d.eps_prim,
            eps_dual: d.eps_dual,
            polish: d.polish,
            adaptive_rho: d.adaptive_rho,
        }
    }
}

impl QpConfig {
    pub fn settings(&self) -> QpSettings {
        QpSettings {
            max_iters: self.max_iters,
            eps_prim: self.eps_prim,
            eps_dual: self.eps_dual,
            polish: self.polish,
            adaptive_rho: self.adaptive_rho,
            ..QpSettings::default()
        }
    }
}

/// Reference controller for cost ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub controller: ControllerName,
    pub knots: Option<usize>,
    /// Defaults to the run length in steps.
    pub horizon: Option<usize>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            controller: ControllerName::Small,
            knots: None,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub robot: RobotKind,
    /// Link counts; pendulums use `[1]`.
    pub links: Vec<usize>,
    pub horizons: Vec<usize>,
    pub knots: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub controllers: Vec<ControllerName>,
    pub baseline: BaselineConfig,
    pub trials: usize,
    pub seed: u64,
    /// Seconds of closed-loop control per trial.
    pub duration: f64,
    pub rate: f64,
    pub substeps: usize,
    pub workers: usize,
    pub empc: EmpcConfig,
    pub qp: QpConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            kind: ExperimentKind::ParamSweep,
            robot: RobotKind::Pendulum,
            links: vec![1],
            horizons: vec![50],
            knots: vec![3],
            multipliers: vec![1.0],
            controllers: vec![ControllerName::SmallParam],
            baseline: BaselineConfig::default(),
            trials: 20,
            seed: 1,
            duration: 1.0,
            rate: 100.0,
            substeps: 10,
            workers: 1,
            empc: EmpcConfig::default(),
            qp: QpConfig::default(),
        }
    }
}

fn field(name: &'static str, message: impl Into<String>) -> BenchError {
    BenchError::Config {
        field: name.into(),
        message: message.into(),
    }
}

fn nonempty<T>(name: &'static str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        return Err(field(name, "must not be empty"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::ConfigIo {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(field(
                "name",
                "must be nonempty and use only letters, digits, '_' or '-'",
            ));
        }
        nonempty("links", &self.links)?;
        nonempty("horizons", &self.horizons)?;
        nonempty("knots", &self.knots)?;
        nonempty("multipliers", &self.multipliers)?;
        nonempty("controllers", &self.controllers)?;
        nonempty("empc.generations", &self.empc.generations)?;
        if self.trials == 0 {
            return Err(field("trials", "must be at least 1"));
        }
        if self.workers == 0 {
            return Err(field("workers", "must be at least 1"));
        }
        match self.robot {
            RobotKind::Pendulum | RobotKind::LinearPendulum => {
                if self.links != [1] {
                    return Err(field("links", "pendulums have exactly one link"));
                }
            }
            RobotKind::Nlink => {
                if self.links.iter().any(|&l| l == 0) {
                    return Err(field("links", "link counts must be positive"));
                }
            }
        }
        if self.horizons.iter().any(|&t| t == 0) {
            return Err(field("horizons", "horizons must be positive"));
        }
        if self.knots.iter().any(|&p| p == 0) {
            return Err(field("knots", "knot counts must be positive"));
        }
        if self
            .multipliers
            .iter()
            .any(|&m| !(m.is_finite() && m > 0.0))
        {
            return Err(field("multipliers", "multipliers must be positive"));
        }
        if self.multipliers.len() > 1 && self.kind != ExperimentKind::Robustness {
            return Err(field(
                "multipliers",
                "only robustness experiments sweep multipliers",
            ));
        }
        if self.kind == ExperimentKind::Robustness && self.robot == RobotKind::LinearPendulum {
            return Err(field(
                "robot",
                "robustness needs a robot with inertial parameters",
            ));
        }
        if self.empc.generations.iter().any(|&g| g == 0) {
            return Err(field("empc.generations", "must be at least 1"));
        }
        if self.substeps == 0 {
            return Err(field("substeps", "must be at least 1"));
        }
        self.loop_settings()
            .steps()
            .map_err(|e| field("duration", e.to_string()))?;
        if self.baseline.controller.uses_knots() && self.baseline.knots.is_none() {
            return Err(field(
                "baseline.knots",
                "required for a parameterized baseline",
            ));
        }
        if self.baseline.controller == ControllerName::Empc {
            return Err(field(
                "baseline.controller",
                "the baseline must be a convex controller",
            ));
        }
        if self.baseline.horizon == Some(0) {
            return Err(field("baseline.horizon", "must be positive"));
        }
        self.qp
            .settings()
            .validate()
            .map_err(|e| field("qp", e.to_string()))?;
        for &g in &self.empc.generations {
            self.empc
                .settings(g, 1, self.seed)
                .validate()
                .map_err(|e| field("empc", e.to_string()))?;
        }
        Ok(())
    }

    pub fn loop_settings(&self) -> LoopSettings {
        LoopSettings {
            duration: self.duration,
            rate: self.rate,
            substeps: self.substeps,
            qp: self.qp.settings(),
        }
    }

    /// Run length in control steps.
    pub fn run_steps(&self) -> usize {
        self.loop_settings().steps().expect("validated")
    }

    pub fn baseline_horizon(&self) -> usize {
        self.baseline.horizon.unwrap_or_else(|| self.run_steps())
    }

    pub fn baseline_controller(&self) -> ControllerKind {
        controller_kind(
            self.baseline.controller,
            self.baseline.knots.unwrap_or(1),
            None,
        )
    }

    /// Controller variants at horizon `t`. Knot counts above `t` are skipped.
    pub fn variants(&self, t: usize, inputs: usize, seed: u64) -> Vec<Variant> {
        let mut out = Vec::new();
        for &c in &self.controllers {
            if !c.uses_knots() {
                out.push(Variant::new(controller_kind(c, 1, None)));
                continue;
            }
            for &p in self.knots.iter().filter(|&&p| p <= t) {
                if c == ControllerName::Empc {
                    for &g in &self.empc.generations {
                        let s = self.empc.settings(g, inputs, seed);
                        out.push(Variant::new(controller_kind(c, p, Some(s))));
                    }
                } else {
                    out.push(Variant::new(controller_kind(c, p, None)));
                }
            }
        }
        out
    }
}

/// One controller configuration within an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub kind: ControllerKind,
}

impl Variant {
    fn new(kind: ControllerKind) -> Self {
        Self { kind }
    }

    pub fn generations(&self) -> Option<usize> {
        match &self.kind {
            ControllerKind::Empc { settings, .. } => Some(settings.generations),
            _ => None,
        }
    }
}

pub fn controller_kind(
    name: ControllerName,
    knots: usize,
    empc: Option<EmpcSettings>,
) -> ControllerKind {
    match name {
        ControllerName::Large => ControllerKind::Large,
        ControllerName::Small => ControllerKind::Small,
        ControllerName::LargeParam => ControllerKind::LargeParam { knots },
        ControllerName::SmallParam => ControllerKind::SmallParam { knots },
        ControllerName::Empc => ControllerKind::Empc {
            knots,
            settings: empc.unwrap_or_default(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = ExperimentConfig::from_toml(
            r#"
            name = "tiny"
            kind = "solve_time_scaling"
            robot = "nlink"
            links = [2, 3]
            controllers = ["large", "empc"]

            [empc]
            num_sims = 64
            num_parents = 8
            "#,
        )
        .unwrap();
        assert_eq!(cfg.links, vec![2, 3]);
        assert_eq!(cfg.horizons, vec![50]);
        assert_eq!(cfg.empc.generations, vec![1]);
    }

    #[test]
    fn errors_name_the_field() {
        let cases = [
            ("trials = 0", "trials"),
            ("links = []", "links"),
            ("robot = \"pendulum\"\nlinks = [2]", "links"),
            ("duration = 0.015", "duration"),
            (
                "baseline = { controller = \"small_param\" }",
                "baseline.knots",
            ),
            ("multipliers = [1.0, 0.5]", "multipliers"),
            ("[empc]\nnum_parents = 2048", "empc"),
        ];
        for (text, name) in cases {
            match ExperimentConfig::from_toml(text) {
                Err(BenchError::Config { field, .. }) => assert_eq!(field, name, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(matches!(
            ExperimentConfig::from_toml("bogus = 1"),
            Err(BenchError::Parse(_))
        ));
    }

    #[test]
    fn variants_expand_knots_and_generations() {
        let cfg = ExperimentConfig {
            controllers: vec![
                ControllerName::Small,
                ControllerName::SmallParam,
                ControllerName::Empc,
            ],
            knots: vec![2, 8, 64],
            empc: EmpcConfig {
                generations: vec![1, 3],
                ..EmpcConfig::default()
            },
            ..ExperimentConfig::default()
        };
        let v = cfg.variants(50, 1, 0);
        let names: Vec<_> = v
            .iter()
            .map(|v| (v.kind.name(), v.kind.knots(), v.generations()))
            .collect();
        assert_eq!(
            names,
            vec![
                ("small", None, None),
                ("small_param", Some(2), None),
                ("small_param", Some(8), None),
                ("empc", Some(2), Some(1)),
                ("empc", Some(2), Some(3)),
                ("empc", Some(8), Some(1)),
                ("empc", Some(8), Some(3)),
            ]
        );
    }
}
