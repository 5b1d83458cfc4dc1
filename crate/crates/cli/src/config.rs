//! Scenario configuration: one TOML or JSON file with a section per concern.
//! Every section has defaults for the reference scenario, and unknown keys
//! are rejected.

use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};

use cspez_core::eval::GridSpec;
use cspez_core::planner::{InitialGuess, PlanProblem, Region, SolverOptions};
use cspez_core::surrogate::{Hyper, ParameterRanges};
use cspez_core::{Method, PursuerBelief};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Root seed; every random stream is derived from it.
    pub seed: u64,
    pub workers: usize,
    pub belief: PursuerBelief,
    pub evader: EvaderConfig,
    pub grid: GridSpec,
    pub eval: EvalConfig,
    pub surrogate: SurrogateConfig,
    pub planner: PlannerConfig,
}

/// Evader heading and speed used for grids.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaderConfig {
    pub heading: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub thresholds: Vec<f64>,
    /// Monte Carlo samples per baseline estimate.
    pub mc_n: usize,
    /// Number of Latin hypercube test configurations for `compare` and
    /// `trace-bins`.
    pub n_test: usize,
    pub bins: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateConfig {
    /// Labelled configurations, before the train/validation split.
    pub n: usize,
    pub mc_n: usize,
    pub ranges: ParameterRanges,
    pub hyper: Hyper,
    /// Trained model used by the `nn` method.
    pub model: Option<PathBuf>,
    /// Labelled data used by `train`; generated on the fly when absent.
    pub dataset: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    pub evader_speed: f64,
    pub turn_rate_bounds: [f64; 2],
    pub curvature_bound: f64,
    pub region: Region,
    pub method: Method,
    pub epsilon: f64,
    pub n_ctrl: usize,
    pub degree: usize,
    pub n_samples: usize,
    pub initial_tf_factor: f64,
    pub speed_band: f64,
    pub initial_guess: InitialGuess,
    pub solver: SolverOptions,
    /// Methods run by `table2`.
    pub table_methods: Vec<Method>,
    /// Post-hoc validation: Monte Carlo samples and sampling factor.
    pub validate_mc_n: usize,
    pub validate_factor: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 1,
            belief: PursuerBelief::new([0.0, 0.0, FRAC_PI_4, 0.2, 1.0, 2.0], [[0.025, 0.04], [0.04, 0.1]], 0.2, 0.005, 0.1, 0.3)
                .expect("reference belief is valid"),
            evader: EvaderConfig::default(),
            grid: GridSpec::default(),
            eval: EvalConfig::default(),
            surrogate: SurrogateConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

impl Default for EvaderConfig {
    fn default() -> Self {
        Self { heading: 0.0, speed: 1.0 }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Linear, Method::Quadratic],
            thresholds: vec![0.01, 0.05, 0.25, 0.5],
            mc_n: 10_000,
            n_test: 20_000,
            bins: 20,
        }
    }
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            n: 60_000,
            mc_n: 10_000,
            ranges: ParameterRanges::default(),
            // 50k training and 10k validation configurations.
            hyper: Hyper {
                val_fraction: 1.0 / 6.0,
                ..Hyper::default()
            },
            model: None,
            dataset: None,
        }
    }
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            start: [-4.0, -4.0],
            goal: [4.0, 4.0],
            evader_speed: 1.0,
            turn_rate_bounds: [-1.0, 1.0],
            curvature_bound: 0.2,
            region: Region {
                min: [-5.0, -5.0],
                max: [5.0, 5.0],
            },
            method: Method::Linear,
            epsilon: 0.05,
            n_ctrl: 8,
            degree: 3,
            n_samples: 100,
            initial_tf_factor: 1.3,
            speed_band: 1e-4,
            initial_guess: InitialGuess::default(),
            solver: SolverOptions::default(),
            table_methods: vec![Method::Linear, Method::Quadratic, Method::Nn],
            validate_mc_n: 10_000,
            validate_factor: 4,
        }
    }
}

impl ScenarioConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?
        };
        let mut cfg = cfg;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.check()?;
        Ok(cfg)
    }

    /// Relative model and dataset paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.surrogate.model, &mut self.surrogate.dataset].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn check(&self) -> Result<(), String> {
        self.surrogate.ranges.validate().map_err(|e| e.to_string())?;
        if self.eval.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err("eval.thresholds must lie in (0, 1]".into());
        }
        if self.eval.bins < 2 {
            return Err("eval.bins must be at least 2".into());
        }
        if self.eval.mc_n == 0 || self.planner.validate_mc_n == 0 {
            return Err("Monte Carlo sample counts must be positive".into());
        }
        if !(self.evader.speed > 0.0) {
            return Err("evader.speed must be positive".into());
        }
        self.plan_problem(self.planner.method, self.planner.epsilon)
            .validate()
            .map_err(|e| format!("planner: {e}"))
    }

    pub fn plan_problem(&self, method: Method, epsilon: f64) -> PlanProblem {
        let p = &self.planner;
        PlanProblem {
            start: p.start,
            goal: p.goal,
            evader_speed: p.evader_speed,
            turn_rate_bounds: p.turn_rate_bounds,
            curvature_bound: p.curvature_bound,
            region: p.region,
            belief: self.belief,
            method,
            epsilon,
            n_ctrl: p.n_ctrl,
            degree: p.degree,
            n_samples: p.n_samples,
            initial_tf_factor: p.initial_tf_factor,
            speed_band: p.speed_band,
            initial_guess: p.initial_guess,
            solver: p.solver,
        }
    }
}
