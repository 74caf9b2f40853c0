//! Run configuration: one TOML document plus `LCSIM_*` environment
//! overrides.
//!
//! An override `LCSIM_A__B=v` sets key `b` of table `a`; the value is read
//! as a TOML value when it parses as one and as a string otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::planner::GuideSpec;
use crate::policy::PolicyAssignment;
use crate::rl_env::EnvConfig;
use crate::sim::SimConfig;

pub const ENV_PREFIX: &str = "LCSIM_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    /// The message carries the line and column of the offending entry.
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("override {key}: {message}")]
    Override { key: String, message: String },
    #[error("{path}: field `{field}`: {message}")]
    Invalid { path: PathBuf, field: &'static str, message: String },
}

/// Plan regeneration settings for planner-driven runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerRun {
    /// Seconds between plan regenerations.
    pub replan_interval: f64,
    /// Sampler levels used at run time.
    pub levels: usize,
}

impl Default for PlannerRun {
    fn default() -> Self {
        PlannerRun {
            replan_interval: 1.0,
            levels: 16,
        }
    }
}

fn default_duration() -> f64 {
    9.0
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: PathBuf,
    /// Simulated seconds per rollout.
    #[serde(default = "default_duration")]
    pub duration: f64,
    /// Overrides the scenario tick when set.
    #[serde(default)]
    pub tick: Option<f64>,
    #[serde(default)]
    pub policy: PolicyAssignment,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub guide: GuideSpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub planner: PlannerRun,
    #[serde(default)]
    pub env: EnvConfig,
    /// Write one SVG per tick under `frames/`.
    #[serde(default)]
    pub render: bool,
}

impl RunConfig {
    /// Reads `path`, applies `LCSIM_*` variables from the process
    /// environment and validates.
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        Self::load_with(path, std::env::vars())
    }

    /// As [`RunConfig::load`] with explicit override variables; entries
    /// without the prefix are ignored.
    pub fn load_with(path: &Path, vars: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut cfg = Self::parse(&text, path, vars)?;
        cfg.resolve_paths(base);
        cfg.validate(path)?;
        Ok(cfg)
    }

    /// Parses without touching the file system. `origin` only labels errors.
    pub fn parse(text: &str, origin: &Path, vars: impl IntoIterator<Item = (String, String)>) -> Result<RunConfig, ConfigError> {
        let parse_err = |e: toml::de::Error| ConfigError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string().trim_end().to_string(),
        };
        let mut overrides: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        if overrides.is_empty() {
            return toml::from_str(text).map_err(parse_err);
        }
        let mut table: toml::Table = text.parse().map_err(parse_err)?;
        overrides.sort();
        for (key, value) in overrides {
            apply_override(&mut table, &key, &value)?;
        }
        // positions in later errors refer to the merged document
        let merged = toml::to_string(&table).map_err(|e| ConfigError::Override {
            key: "*".into(),
            message: e.to_string(),
        })?;
        toml::from_str(&merged).map_err(parse_err)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.scenario);
        if let Some(c) = &mut self.checkpoint {
            fix(c);
        }
        fix(&mut self.output);
    }

    /// Checks referenced files and numeric fields.
    pub fn validate(&self, origin: &Path) -> Result<(), ConfigError> {
        let invalid = |field, message: String| ConfigError::Invalid {
            path: origin.to_path_buf(),
            field,
            message,
        };
        if !self.scenario.is_file() {
            return Err(invalid("scenario", format!("{} does not exist", self.scenario.display())));
        }
        if let Some(c) = &self.checkpoint {
            if !c.is_file() {
                return Err(invalid("checkpoint", format!("{} does not exist", c.display())));
            }
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(invalid("duration", "must be positive".into()));
        }
        if let Some(tick) = self.tick {
            if !(tick > 0.0 && tick.is_finite()) {
                return Err(invalid("tick", "must be positive".into()));
            }
            let ratio = self.duration / tick;
            if (ratio - ratio.round()).abs() > 1e-6 {
                return Err(invalid("duration", format!("{} is not a multiple of tick {tick}", self.duration)));
            }
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "need at least one seed".into()));
        }
        self.sim.validate().map_err(|e| invalid("sim", e.to_string()))?;
        self.guide.validate().map_err(|e| invalid("guide", e.to_string()))?;
        if !(self.planner.replan_interval > 0.0) || self.planner.levels == 0 {
            return Err(invalid("planner", "replan_interval and levels must be positive".into()));
        }
        self.env.validate().map_err(|e| invalid("env", e.to_string()))?;
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let err = |message: String| ConfigError::Override {
        key: key.to_string(),
        message,
    };
    let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
    if path.iter().any(String::is_empty) {
        return Err(err("empty key segment".into()));
    }
    let parsed = parse_value(value);
    let (last, parents) = path.split_last().expect("split yields one segment");
    let mut cur = table;
    for seg in parents {
        let entry = cur
            .entry(seg.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| err(format!("`{seg}` is not a table")))?;
    }
    cur.insert(last.clone(), parsed);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyKind;
    use crate::scenario::AgentId;

    fn parse(text: &str, vars: &[(&str, &str)]) -> Result<RunConfig, ConfigError> {
        RunConfig::parse(
            text,
            Path::new("run.toml"),
            vars.iter().map(|(k, v)| (k.to_string(), v.to_string())),
        )
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse("scenario = \"a.lcs.json\"\n", &[]).unwrap();
        assert_eq!(c.duration, 9.0);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.policy, PolicyAssignment::default());
    }

    #[test]
    fn policy_overrides_by_agent_id() {
        let c = parse(
            "scenario = \"a\"\n[policy]\ndefault = \"lane_idm\"\n[policy.overrides]\n3 = \"external\"\n",
            &[],
        )
        .unwrap();
        assert_eq!(c.policy.for_agent(AgentId(3)), PolicyKind::External);
        assert_eq!(c.policy.for_agent(AgentId(4)), PolicyKind::LaneIdm);
    }

    #[test]
    fn env_overrides_apply() {
        let c = parse(
            "scenario = \"a\"\nduration = 5.0\n",
            &[
                ("LCSIM_DURATION", "12.5"),
                ("LCSIM_SIM__HISTORY_LEN", "20"),
                ("LCSIM_OUTPUT", "elsewhere"),
                ("HOME", "/root"),
            ],
        )
        .unwrap();
        assert_eq!(c.duration, 12.5);
        assert_eq!(c.sim.history_len, 20);
        assert_eq!(c.output, PathBuf::from("elsewhere"));
    }

    #[test]
    fn errors_name_field_and_position() {
        let e = parse("scenario = \"a\"\nduration = \"long\"\n", &[]).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("duration") && msg.contains("line"), "{msg}");
        let e = parse("scenario = \"a\"\nbogus = 1\n", &[]).unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        let e = parse("scenario = \n", &[]).unwrap_err();
        assert!(e.to_string().contains("line 1"), "{e}");
    }

    #[test]
    fn validation_checks_files_and_tick_multiple() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("s.lcs.json"), "{}").unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "scenario = \"s.lcs.json\"\nduration = 1.05\ntick = 0.1\n").unwrap();
        let e = RunConfig::load_with(&path, []).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { field: "duration", .. }), "{e}");
        std::fs::write(&path, "scenario = \"s.lcs.json\"\nduration = 1.0\ntick = 0.1\n").unwrap();
        let c = RunConfig::load_with(&path, []).unwrap();
        assert_eq!(c.scenario, dir.path().join("s.lcs.json"));
        std::fs::write(&path, "scenario = \"missing.lcs.json\"\n").unwrap();
        let e = RunConfig::load_with(&path, []).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { field: "scenario", .. }), "{e}");
    }
}
