//! Run configuration.
//!
//! Loaded from a TOML document; every field has a default, and CLI flags
//! override file values. A fully resolved copy is written next to every
//! run's outputs.
//!
//! ```toml
//! methods = ["bandit_ucb", "uniform"]
//! rounds = 250          # K
//! segments = 1          # J
//! horizon = 3           # H
//! seeds = [0, 1, 2]
//! radius = 2.9          # task filter; `tasks = [..]` takes precedence
//! zo_perturbations = 5  # m
//! data_dir = "data"
//! out_dir = "runs/latest"
//! jobs = 0              # 0 = all cores
//! policy = "surrogate"  # or "external:<shell command>"
//!
//! [env]      # step_radius, stop_bonus, proximity_threshold, bonus_discount, max_steps
//! [demo]     # episodes, noise, top_pct, stride, seed
//! [bandit]   # lambda, ucb_alpha, epsilon, thompson_sigma, bounds = { min, max }
//! [rollout]  # context_len, initial_rtg
//! [external] # step_timeout_ms, max_idle
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cmab::{BanditConfig, RewardBounds, Strategy};
use crate::demo::DemoConfig;
use crate::env::{EnvConfig, Task};
use crate::error::{Error, Result};
use crate::io_util;
use crate::policy::{ExternalPolicyConfig, RolloutConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Uniform,
    BanditUcb,
    BanditEps,
    BanditThompson,
    GaussianHc,
    ZoRanksgd,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Uniform,
        Method::BanditUcb,
        Method::BanditEps,
        Method::BanditThompson,
        Method::GaussianHc,
        Method::ZoRanksgd,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Uniform => "uniform",
            Method::BanditUcb => "bandit_ucb",
            Method::BanditEps => "bandit_eps",
            Method::BanditThompson => "bandit_thompson",
            Method::GaussianHc => "gaussian_hc",
            Method::ZoRanksgd => "zo_ranksgd",
        }
    }

    pub fn is_bandit(self) -> bool {
        matches!(
            self,
            Method::BanditUcb | Method::BanditEps | Method::BanditThompson
        )
    }

    /// Works in token space rather than picking pool segments.
    pub fn is_token_space(self) -> bool {
        matches!(self, Method::GaussianHc | Method::ZoRanksgd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label() == s.trim())
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected one of {})",
                    Method::ALL.map(Method::label).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditSettings {
    pub lambda: f64,
    pub ucb_alpha: f64,
    pub epsilon: f64,
    pub thompson_sigma: f64,
    pub bounds: RewardBounds,
}

impl Default for BanditSettings {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            ucb_alpha: 1.0,
            epsilon: 0.1,
            thompson_sigma: 0.5,
            bounds: RewardBounds::default(),
        }
    }
}

impl BanditSettings {
    pub fn for_method(&self, method: Method) -> Option<BanditConfig> {
        let strategy = match method {
            Method::BanditUcb => Strategy::Ucb {
                alpha: self.ucb_alpha,
            },
            Method::BanditEps => Strategy::EpsGreedy {
                epsilon: self.epsilon,
            },
            Method::BanditThompson => Strategy::Thompson {
                sigma: self.thompson_sigma,
            },
            _ => return None,
        };
        Some(BanditConfig {
            strategy,
            lambda: self.lambda,
            bounds: self.bounds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PolicySpec {
    Surrogate,
    External(String),
}

impl FromStr for PolicySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "surrogate" {
            Ok(PolicySpec::Surrogate)
        } else if let Some(cmd) = s.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                return Err(Error::Config("`external:` needs a command".into()));
            }
            Ok(PolicySpec::External(cmd.to_string()))
        } else {
            Err(Error::Config(format!(
                "unknown policy `{s}` (expected `surrogate` or `external:<cmd>`)"
            )))
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Surrogate => f.write_str("surrogate"),
            PolicySpec::External(cmd) => write!(f, "external:{cmd}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub methods: Vec<Method>,
    pub rounds: usize,
    pub segments: usize,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub radius: Option<f64>,
    pub tasks: Option<Vec<usize>>,
    pub zo_perturbations: usize,
    /// Expected return of the scripted expert; the regret reference.
    pub regret_reference: f64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub jobs: usize,
    pub policy: String,
    pub env: EnvConfig,
    pub demo: DemoConfig,
    pub bandit: BanditSettings,
    pub rollout: RolloutConfig,
    pub external: ExternalPolicyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::BanditUcb],
            rounds: 250,
            segments: 1,
            horizon: 3,
            seeds: vec![0, 1, 2],
            radius: Some(2.9),
            tasks: None,
            zo_perturbations: 5,
            regret_reference: 10.0,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/latest"),
            jobs: 0,
            policy: "surrogate".into(),
            env: EnvConfig::default(),
            demo: DemoConfig::default(),
            bandit: BanditSettings::default(),
            rollout: RolloutConfig::default(),
            external: ExternalPolicyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&io_util::read_to_string(path)?)
    }

    /// Parses `text` and, where the document sets no seed, falls back to
    /// `seed` for both the tuning seeds and the demonstration seed.
    pub fn from_toml_with_seed(text: &str, seed: Option<u64>) -> Result<Self> {
        let mut cfg = Self::from_toml(text)?;
        let Some(seed) = seed else {
            return Ok(cfg);
        };
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if !table.contains_key("seeds") {
            cfg.seeds = vec![seed];
        }
        let demo_seed = table
            .get("demo")
            .and_then(|d| d.as_table())
            .is_some_and(|d| d.contains_key("seed"));
        if !demo_seed {
            cfg.demo.seed = seed;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() {
            return bad("no methods selected".into());
        }
        if self.rounds == 0 {
            return bad("rounds (K) must be at least 1".into());
        }
        if self.segments == 0 || self.horizon == 0 {
            return bad("segments (J) and horizon (H) must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.zo_perturbations < 2 {
            return bad("zo_perturbations (m) must be at least 2".into());
        }
        if self.demo.stride == Some(0) {
            return bad("demo.stride must be at least 1".into());
        }
        self.env.validate()?;
        for m in &self.methods {
            if let Some(b) = self.bandit.for_method(*m) {
                b.validate()?;
            }
        }
        self.policy_spec()?;
        self.task_list()?;
        Ok(())
    }

    pub fn policy_spec(&self) -> Result<PolicySpec> {
        self.policy.parse()
    }

    pub fn stride(&self) -> usize {
        self.demo.stride.unwrap_or(self.horizon)
    }

    /// Selected tasks: the explicit list if given, else the radius filter,
    /// else all 60.
    pub fn task_list(&self) -> Result<Vec<Task>> {
        if let Some(ids) = &self.tasks {
            return ids.iter().map(|&id| Task::from_id(id)).collect();
        }
        let tasks = match self.radius {
            Some(r) => Task::with_radius(r),
            None => Task::all(),
        };
        if tasks.is_empty() {
            return Err(Error::Config(format!(
                "radius filter {:?} matches no task",
                self.radius
            )));
        }
        Ok(tasks)
    }

    /// Episodes one (method, task, seed) cell consumes.
    pub fn episodes_per_cell(&self, method: Method) -> usize {
        match method {
            Method::ZoRanksgd => self.rounds * self.zo_perturbations,
            _ => self.rounds,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        c.validate().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = RunConfig::from_toml(
            "methods = [\"zo_ranksgd\", \"uniform\"]\nsegments = 4\n[env]\nmax_steps = 60\n[bandit]\nepsilon = 0.2\n",
        )
        .unwrap();
        assert_eq!(c.methods, vec![Method::ZoRanksgd, Method::Uniform]);
        assert_eq!(c.segments, 4);
        assert_eq!(c.env.max_steps, 60);
        assert_eq!(c.env.step_radius, 0.1);
        assert_eq!(c.bandit.epsilon, 0.2);
        assert_eq!(c.rounds, 250);
    }

    #[test]
    fn seed_fallback_only_fills_gaps() {
        let c = RunConfig::from_toml_with_seed("rounds = 5\n", Some(42)).unwrap();
        assert_eq!(c.seeds, vec![42]);
        assert_eq!(c.demo.seed, 42);
        let c = RunConfig::from_toml_with_seed("seeds = [1, 2]\n[demo]\nseed = 7\n", Some(42)).unwrap();
        assert_eq!(c.seeds, vec![1, 2]);
        assert_eq!(c.demo.seed, 7);
        let c = RunConfig::from_toml_with_seed("", None).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn bad_values_rejected() {
        assert!(RunConfig::from_toml("methods = [\"nope\"]").is_err());
        let c = RunConfig {
            rounds: 0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            policy: "magic".into(),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn method_and_policy_parsing() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
        }
        assert_eq!("surrogate".parse::<PolicySpec>().unwrap(), PolicySpec::Surrogate);
        assert_eq!(
            "external:python3 pdt.py".parse::<PolicySpec>().unwrap(),
            PolicySpec::External("python3 pdt.py".into())
        );
        assert!("external:".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn task_selection() {
        let c = RunConfig::default();
        assert_eq!(c.task_list().unwrap().len(), 20);
        let c = RunConfig {
            tasks: Some(vec![3, 59]),
            ..RunConfig::default()
        };
        let ids: Vec<usize> = c.task_list().unwrap().iter().map(|t| t.task_id).collect();
        assert_eq!(ids, vec![3, 59]);
        let c = RunConfig {
            radius: None,
            ..RunConfig::default()
        };
        assert_eq!(c.task_list().unwrap().len(), 60);
    }

    #[test]
    fn budget_per_cell() {
        let c = RunConfig::default();
        assert_eq!(c.episodes_per_cell(Method::ZoRanksgd), 1250);
        assert_eq!(c.episodes_per_cell(Method::GaussianHc), 250);
    }
}
