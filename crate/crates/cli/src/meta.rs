//! JSON sidecar written next to every generated dataset.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};

use sfdqn_core::behavior_policy::DATASET_VERSION;
use sfdqn_core::eval_harness::EvalContext;
use sfdqn_core::rl_core::{ActionClasses, ActionEffectClass, ActionId, ContactBand};
use sfdqn_core::sim_world::EnvConfig;
use sfdqn_core::tactile_image::TactileImage;

pub const SIDECAR_NAME: &str = "dataset.json";
pub const BACKGROUND_NAME: &str = "background.pgm";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandJson {
    pub cr_min: f64,
    pub cr_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub action: u8,
    pub d3: i8,
    pub d4: i8,
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format: String,
    pub version: u16,
    pub n_units: usize,
    pub seed: u64,
    /// Hex rendering of the u64 stored in the dataset header.
    pub env_config_hash: String,
    /// Resolved environment configuration in `key = value` syntax.
    pub env_config: String,
    pub tau: u8,
    pub band: BandJson,
    pub class_epsilon: f64,
    pub action_classes: Vec<ClassEntry>,
    /// Background frame, relative to the sidecar's directory.
    pub background_pgm: String,
}

impl DatasetSidecar {
    pub fn new(env: &EnvConfig, n_units: usize, seed: u64, class_epsilon: f64, classes: &ActionClasses) -> Self {
        Self {
            format: "SFDQN-DS".into(),
            version: DATASET_VERSION,
            n_units,
            seed,
            env_config_hash: format!("{:016x}", env.hash()),
            env_config: env.to_kv_string(),
            tau: env.tau,
            band: BandJson {
                cr_min: env.band.cr_min,
                cr_max: env.band.cr_max,
            },
            class_epsilon,
            action_classes: ActionId::ALL
                .iter()
                .map(|&a| {
                    let (d3, d4) = a.deltas();
                    ClassEntry {
                        action: a.index() as u8,
                        d3,
                        d4,
                        class: classes.class_of(a).tag().into(),
                    }
                })
                .collect(),
            background_pgm: BACKGROUND_NAME.into(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).with_context(|| format!("opening sidecar {}", path.display()))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| {
            anyhow!(sfdqn_core::Error::Config(format!("invalid sidecar {}: {e}", path.display())))
        })
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        Ok(EnvConfig::parse(&self.env_config)?)
    }

    pub fn classes(&self) -> Result<ActionClasses> {
        let mut table = [ActionEffectClass::Unchanged; 9];
        if self.action_classes.len() != 9 {
            return Err(sfdqn_core::Error::Config("sidecar must list 9 action classes".into()).into());
        }
        for e in &self.action_classes {
            let slot = table
                .get_mut(e.action as usize)
                .ok_or_else(|| sfdqn_core::Error::Config(format!("action {} out of range", e.action)))?;
            *slot = e.class.parse()?;
        }
        Ok(ActionClasses::new(table)?)
    }

    pub fn band(&self) -> Result<ContactBand> {
        Ok(ContactBand::new(self.band.cr_min, self.band.cr_max)?)
    }

    pub fn background_path(&self, sidecar_path: &Path) -> PathBuf {
        sidecar_path.parent().unwrap_or(Path::new(".")).join(&self.background_pgm)
    }

    pub fn background(&self, sidecar_path: &Path) -> Result<TactileImage> {
        let path = self.background_path(sidecar_path);
        let file = fs::File::open(&path).with_context(|| format!("opening background {}", path.display()))?;
        Ok(TactileImage::read_pgm(BufReader::new(file))?)
    }

    pub fn eval_context(&self, sidecar_path: &Path) -> Result<EvalContext> {
        Ok(EvalContext {
            background: self.background(sidecar_path)?,
            tau: self.tau,
            band: self.band()?,
            classes: self.classes()?,
        })
    }
}
