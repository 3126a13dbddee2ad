//! Run configuration in a plain `key = value` text format.
//!
//! Grammar, one statement per line:
//!
//! ```text
//! # comment (also allowed after a value)
//! [section]            # prefixes following keys with `section.`
//! key = value          # dotted keys are allowed inside or outside sections
//! ```
//!
//! Lists are comma-separated (`train.net.encoder = 128,128,128`). Every key
//! may appear at most once; unknown keys are rejected. Unset keys keep their
//! defaults. [`RunConfig::to_text`] writes the fully resolved config, which
//! parses back to the same value.

use std::collections::HashSet;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::baselines::{default_lambda, AgentKind, ObservationMode};
use crate::env::{EnvConfig, TaskVariant};
use crate::error::{Error, Result};
use crate::hacman::{EvalSettings, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub variant: TaskVariant,
    pub train: TrainConfig,
    pub agent: AgentKind,
    pub observation: ObservationMode,
    /// Distance-penalty weight for the persistent-gripper baseline; `None` picks the mode default.
    pub lambda: Option<f64>,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub eval_every_steps: usize,
    pub eval_episodes: usize,
    /// `None` derives the evaluation seed from `seed`.
    pub eval_seed: Option<u64>,
    /// Stop training once a periodic evaluation reaches this success rate.
    pub stop_at_success: Option<f64>,
    pub wall_time: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            variant: TaskVariant::EASY,
            train: TrainConfig::default(),
            agent: AgentKind::Hacman,
            observation: ObservationMode::PointCloud,
            lambda: None,
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            eval_every_steps: 5_000,
            eval_episodes: 100,
            eval_seed: None,
            stop_at_success: None,
            wall_time: false,
        }
    }
}

macro_rules! scalar_fields {
    ($cb:ident!($($args:tt)*)) => {
        $cb!($($args)*;
            "seed" => seed,
            "env.bin_half_extent" => env.bin_half_extent,
            "env.action_scale" => env.action_scale,
            "env.action_repeat" => env.action_repeat,
            "env.precontact_offset" => env.precontact_offset,
            "env.max_episode_steps" => env.max_episode_steps,
            "env.success_threshold" => env.success_threshold,
            "env.n_object_points" => env.n_object_points,
            "env.n_background_points" => env.n_background_points,
            "env.push_translation_gain" => env.push_translation_gain,
            "env.object_scale_min" => env.object_scale_min,
            "env.object_scale_max" => env.object_scale_max,
            "env.object_voxel" => env.object_voxel,
            "env.background_voxel" => env.background_voxel,
            "env.object_spacing" => env.object_spacing,
            "env.background_spacing" => env.background_spacing,
            "train.discount" => train.discount,
            "train.batch_size" => train.batch_size,
            "train.learning_rate" => train.learning_rate,
            "train.initial_random_steps" => train.initial_random_steps,
            "train.critic_updates_per_env_step" => train.critic_updates_per_env_step,
            "train.actor_updates_per_env_step" => train.actor_updates_per_env_step,
            "train.target_updates_per_env_step" => train.target_updates_per_env_step,
            "train.location_temperature" => train.location_temperature,
            "train.polyak_tau" => train.polyak_tau,
            "train.exploration_noise" => train.exploration_noise,
            "train.target_noise" => train.target_noise,
            "train.target_noise_clip" => train.target_noise_clip,
            "train.total_env_steps" => train.total_env_steps,
            "train.replay_capacity" => train.replay_capacity,
            "train.net.input_scale" => train.net.input_scale,
            "eval.every_steps" => eval_every_steps,
            "eval.episodes" => eval_episodes,
            "metrics.wall_time" => wall_time,
        )
    };
}

macro_rules! set_scalar {
    ($cfg:ident, $key:ident, $value:ident; $($k:literal => $($f:ident).+),* $(,)?) => {
        match $key {
            $($k => {
                $cfg.$($f).+ = parse_value($k, $value)?;
                return Ok(());
            })*
            _ => {}
        }
    };
}

macro_rules! list_scalar {
    ($cfg:ident, $out:ident; $($k:literal => $($f:ident).+),* $(,)?) => {
        $($out.push(($k, $cfg.$($f).+.to_string()));)*
    };
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse::<T>()
        .map_err(|e| Error::config(key, format!("invalid value `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if value.trim().is_empty() {
        return Ok(vec![]);
    }
    value.split(',').map(|v| parse_value(key, v.trim())).collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn opt_to_string<T: Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), |x| x.to_string())
}

fn parse_opt<T: FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    if value == none {
        Ok(None)
    } else {
        parse_value(key, value).map(Some)
    }
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let cfg = self;
        scalar_fields!(set_scalar!(cfg, key, value));
        match key {
            "variant" => cfg.variant = parse_value(key, value)?,
            "agent.kind" => {
                cfg.agent = value
                    .parse()
                    .map_err(|_| Error::config(key, format!("unknown agent kind `{value}`")))?
            }
            "agent.observation" => cfg.observation = parse_value(key, value)?,
            "agent.lambda" => cfg.lambda = parse_opt(key, value, "default")?,
            "env.push_rotation_gain" => cfg.env.push_rotation_gain = parse_opt(key, value, "auto")?,
            "train.target_clamp" => {
                let v: Vec<f64> = parse_list(key, value)?;
                if v.len() != 2 {
                    return Err(Error::config(key, "expected `low,high`"));
                }
                cfg.train.target_clamp = (v[0], v[1]);
            }
            "train.net.encoder" => cfg.train.net.encoder = parse_list(key, value)?,
            "train.net.head" => cfg.train.net.head = parse_list(key, value)?,
            "out_dir" => cfg.out_dir = PathBuf::from(value),
            "eval.seed" => cfg.eval_seed = parse_opt(key, value, "auto")?,
            "eval.stop_at_success" => cfg.stop_at_success = parse_opt(key, value, "never")?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let cfg = self;
        let mut out = vec![
            ("agent.kind", cfg.agent.to_string()),
            ("agent.observation", cfg.observation.to_string()),
            ("agent.lambda", opt_to_string(&cfg.lambda, "default")),
            ("variant", cfg.variant.to_string()),
            ("out_dir", cfg.out_dir.display().to_string()),
            ("env.push_rotation_gain", opt_to_string(&cfg.env.push_rotation_gain, "auto")),
            (
                "train.target_clamp",
                format!("{},{}", cfg.train.target_clamp.0, cfg.train.target_clamp.1),
            ),
            ("train.net.encoder", join(&cfg.train.net.encoder)),
            ("train.net.head", join(&cfg.train.net.head)),
            ("eval.seed", opt_to_string(&cfg.eval_seed, "auto")),
            ("eval.stop_at_success", opt_to_string(&cfg.stop_at_success, "never")),
        ];
        scalar_fields!(list_scalar!(cfg, out));
        out
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = HashSet::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::config(line, format!("line {}: unterminated section header", n + 1)))?
                    .trim();
                section = if name.is_empty() { String::new() } else { format!("{name}.") };
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected `key = value`", n + 1)))?;
            let key = format!("{section}{}", k.trim());
            if !seen.insert(key.clone()) {
                return Err(Error::config(key, format!("line {}: duplicate key", n + 1)));
            }
            cfg.set(&key, v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(|e| Error::config("env", e.to_string()))?;
        self.train.validate()?;
        if let AgentKind::Baseline(b) = self.agent {
            if self.observation == ObservationMode::State && !b.is_global() {
                return Err(Error::config("agent.observation", format!("state observations require a global baseline, not {b:?}")));
            }
        } else if self.observation == ObservationMode::State {
            return Err(Error::config("agent.observation", "hacman requires point_cloud"));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::config("agent.lambda", "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn resolved_lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| default_lambda(self.observation))
    }

    pub fn eval_settings(&self, threads: usize) -> EvalSettings {
        EvalSettings {
            every_steps: self.eval_every_steps,
            episodes: self.eval_episodes,
            seed: self.eval_seed.unwrap_or(self.seed.wrapping_add(1_000_003)),
            threads,
        }
    }
}
