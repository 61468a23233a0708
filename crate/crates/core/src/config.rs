//! Run configuration, loaded from TOML and overridden by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guiding_agent::RunSettings;
use crate::inference::ProviderConfig;
use crate::model::AbstractionLevel;
use crate::testing::TestPlan;
use crate::toolchain::ToolchainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Full,
    SourceOnly,
    IrOnly,
    AssemblyOnly,
    Portfolio,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Full,
        Mode::SourceOnly,
        Mode::IrOnly,
        Mode::AssemblyOnly,
        Mode::Portfolio,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::SourceOnly => "source-only",
            Mode::IrOnly => "ir-only",
            Mode::AssemblyOnly => "assembly-only",
            Mode::Portfolio => "portfolio",
        }
    }

    /// Levels whose agents are available. Portfolio runs use one level per
    /// session, so it returns all three here.
    pub fn agent_levels(self) -> Vec<AbstractionLevel> {
        match self {
            Mode::Full | Mode::Portfolio => vec![
                AbstractionLevel::source(),
                AbstractionLevel::ir(),
                AbstractionLevel::assembly(),
            ],
            Mode::SourceOnly => vec![AbstractionLevel::source()],
            Mode::IrOnly => vec![AbstractionLevel::ir()],
            Mode::AssemblyOnly => vec![AbstractionLevel::assembly()],
        }
    }

    pub fn single_level(level: &AbstractionLevel) -> Option<Mode> {
        match level.ordinal {
            1 => Some(Mode::SourceOnly),
            2 => Some(Mode::IrOnly),
            3 => Some(Mode::AssemblyOnly),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                format!(
                    "unknown mode {s:?}; expected one of {}",
                    Mode::ALL.map(|m| m.as_str()).join(", ")
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Budget 6, the fixed-budget comparison scale.
    Small,
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "small" => Ok(Preset::Small),
            other => Err(format!("unknown preset {other:?}; expected small")),
        }
    }
}

fn d_budget() -> u64 {
    18
}
fn d_two() -> u32 {
    2
}
fn d_wall() -> f64 {
    3600.0
}
fn d_compiler_cap() -> u32 {
    20
}
fn d_malformed_cap() -> u32 {
    5
}
fn d_attempts() -> u32 {
    3
}
fn d_mode() -> Mode {
    Mode::Full
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_budget")]
    pub budget: u64,
    #[serde(default = "d_two")]
    pub samples: u32,
    #[serde(default = "d_two")]
    pub refine: u32,
    #[serde(default = "d_mode")]
    pub mode: Mode,
    /// Seconds.
    #[serde(default = "d_wall")]
    pub wall_clock_limit: f64,
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    #[serde(default = "d_compiler_cap")]
    pub compiler_call_cap: u32,
    #[serde(default = "d_malformed_cap")]
    pub malformed_cap: u32,
    #[serde(default = "d_attempts")]
    pub script_attempts: u32,
    /// Use this input generator instead of asking the model for one.
    #[serde(default)]
    pub test_script: Option<PathBuf>,
    #[serde(default)]
    pub provider: ProviderConfig,
    #[serde(default)]
    pub toolchain: ToolchainConfig,
    #[serde(default)]
    pub test_plan: TestPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            budget: d_budget(),
            samples: d_two(),
            refine: d_two(),
            mode: d_mode(),
            wall_clock_limit: d_wall(),
            run_dir: None,
            compiler_call_cap: d_compiler_cap(),
            malformed_cap: d_malformed_cap(),
            script_attempts: d_attempts(),
            test_script: None,
            provider: ProviderConfig::default(),
            toolchain: ToolchainConfig::default(),
            test_plan: TestPlan::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Flag values that override the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub budget: Option<u64>,
    pub samples: Option<u32>,
    pub refine: Option<u32>,
    pub mode: Option<Mode>,
    pub model: Option<String>,
    pub run_dir: Option<PathBuf>,
    pub wall_clock: Option<f64>,
    pub preset: Option<Preset>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Presets apply first, explicit flags after them.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(Preset::Small) = o.preset {
            self.budget = 6;
        }
        if let Some(b) = o.budget {
            self.budget = b;
        }
        if let Some(n) = o.samples {
            self.samples = n;
        }
        if let Some(k) = o.refine {
            self.refine = k;
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
        if let Some(m) = &o.model {
            self.provider.model_id = m.clone();
        }
        if let Some(d) = &o.run_dir {
            self.run_dir = Some(d.clone());
        }
        if let Some(w) = o.wall_clock {
            self.wall_clock_limit = w;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.samples < 1 {
            return bad("samples (n) must be at least 1".into());
        }
        if self.refine < 1 {
            return bad("refine (k) must be at least 1".into());
        }
        if !(self.wall_clock_limit > 0.0) {
            return bad("wall_clock_limit must be positive".into());
        }
        if self.malformed_cap < 1 || self.compiler_call_cap < 1 {
            return bad("call caps must be at least 1".into());
        }
        if self.script_attempts < 1 {
            return bad("script_attempts must be at least 1".into());
        }
        self.test_plan.validate().map_err(ConfigError::Invalid)?;
        self.provider.validate().map_err(ConfigError::Invalid)?;
        Ok(())
    }

    pub fn settings(&self, budget: u64) -> RunSettings {
        RunSettings {
            budget,
            n: self.samples,
            k: self.refine,
            wall_clock: std::time::Duration::from_secs_f64(self.wall_clock_limit),
            compiler_call_cap: self.compiler_call_cap,
            malformed_cap: self.malformed_cap,
            ..RunSettings::default()
        }
    }
}

/// Splits `b` into three shares, handing the remainder out one unit at a
/// time starting from the first level.
pub fn portfolio_shares(b: u64) -> [u64; 3] {
    let base = b / 3;
    let rem = b % 3;
    let mut out = [base; 3];
    for share in out.iter_mut().take(rem as usize) {
        *share += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.budget, c.samples, c.refine), (18, 2, 2));
        assert_eq!(c.wall_clock_limit, 3600.0);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::default();
        c.mode = Mode::IrOnly;
        c.test_script = Some("gen.py".into());
        let text = c.to_toml();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml(), text);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = RunConfig::from_toml("budget = 4\nmode = \"source-only\"\n").unwrap();
        assert_eq!(c.budget, 4);
        assert_eq!(c.mode, Mode::SourceOnly);
        assert_eq!(c.samples, 2);
        assert!(RunConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn k_zero_rejected() {
        let c = RunConfig {
            refine: 0,
            ..RunConfig::default()
        };
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn overrides_and_preset() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            preset: Some(Preset::Small),
            ..Default::default()
        });
        assert_eq!(c.budget, 6);
        c.apply(&Overrides {
            preset: Some(Preset::Small),
            budget: Some(9),
            model: Some("m".into()),
            ..Default::default()
        });
        assert_eq!(c.budget, 9);
        assert_eq!(c.provider.model_id, "m");
    }

    #[test]
    fn shares() {
        assert_eq!(portfolio_shares(18), [6, 6, 6]);
        assert_eq!(portfolio_shares(2), [1, 1, 0]);
        assert_eq!(portfolio_shares(7), [3, 2, 2]);
        assert_eq!(portfolio_shares(0), [0, 0, 0]);
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!("everything".parse::<Mode>().is_err());
    }
}
