//! Experiment configuration: one flat `key = value` file covering the
//! environment, generation, training and rollout settings.

use std::fmt::Write as _;

use sfdqn_core::eval_harness::RolloutConfig;
use sfdqn_core::qnet::NetworkArch;
use sfdqn_core::rl_core::DEFAULT_CLASS_EPSILON;
use sfdqn_core::sim_world::{parse_kv, EnvConfig};
use sfdqn_core::trainer::TrainConfig;
use sfdqn_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub n_units: usize,
    pub class_epsilon: f64,
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub rollout: RolloutConfig,
    /// Write every k-th rollout frame as PGM (0 disables).
    pub dump_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            n_units: 12_000,
            class_epsilon: DEFAULT_CLASS_EPSILON,
            train: TrainConfig::default(),
            train_fraction: 0.9,
            split_seed: 0,
            rollout: RolloutConfig::default(),
            dump_every: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        Ok(cfg)
    }

    /// Applies one setting; keys not listed here are environment keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "n_units" => self.n_units = parse(key, value)?,
            "class_epsilon" => self.class_epsilon = parse(key, value)?,
            "steps" => self.train.steps = parse(key, value)?,
            "units_per_step" => self.train.units_per_step = parse(key, value)?,
            "sync_interval" => self.train.sync_interval = parse(key, value)?,
            "checkpoint_interval" => self.train.checkpoint_interval = parse(key, value)?,
            "gamma" => self.train.gamma = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "train_seed" => self.train.seed = parse(key, value)?,
            "arch" => self.train.arch = NetworkArch::from_name(value)?,
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "rollout_steps" => self.rollout.steps = parse(key, value)?,
            "warmup" => self.rollout.warmup = parse(key, value)?,
            "rollout_drift" => self.rollout.drift = parse(key, value)?,
            "dump_every" => self.dump_every = parse(key, value)?,
            _ => self.env.set(key, value)?,
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        if !(self.class_epsilon >= 0.0) {
            return Err(Error::Config("class_epsilon must be non-negative".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if !self.rollout.drift.is_finite() {
            return Err(Error::Config("rollout_drift must be finite".into()));
        }
        Ok(())
    }

    /// Every setting, environment keys first, in `key = value` syntax.
    pub fn to_kv_string(&self) -> String {
        let mut s = self.env.to_kv_string();
        let t = &self.train;
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("n_units", self.n_units.to_string());
        put("class_epsilon", format!("{:?}", self.class_epsilon));
        put("steps", t.steps.to_string());
        put("units_per_step", t.units_per_step.to_string());
        put("sync_interval", t.sync_interval.to_string());
        put("checkpoint_interval", t.checkpoint_interval.to_string());
        put("gamma", format!("{:?}", t.gamma));
        put("lr", format!("{:?}", t.lr));
        put("train_seed", t.seed.to_string());
        put("arch", t.arch.variant.name().to_string());
        put("train_fraction", format!("{:?}", self.train_fraction));
        put("split_seed", self.split_seed.to_string());
        put("rollout_steps", self.rollout.steps.to_string());
        put("warmup", self.rollout.warmup.to_string());
        put("rollout_drift", format!("{:?}", self.rollout.drift));
        put("dump_every", self.dump_every.to_string());
        s
    }

    /// Network architecture with input scales matched to the environment.
    pub fn resolved_arch(&self) -> NetworkArch {
        self.train
            .arch
            .clone()
            .with_input_scales(self.env.limits.max.abs(), self.env.delta)
    }
}
