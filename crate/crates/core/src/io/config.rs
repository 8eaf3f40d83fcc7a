//! JSON run configuration. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featnet::NetConfig;
use crate::gram::LossConfig;
use crate::stylize::OptimizeConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub content: Option<PathBuf>,
    pub style: Option<PathBuf>,
    pub pastiche: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub net: NetConfig,
    pub loss: LossConfig,
    pub optimize: OptimizeConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let tags = self.net.tap_tags();
        for t in self.loss.taps() {
            if !tags.contains(&t) {
                return Err(Error::Config(format!("tap {t} is not declared by the network architecture")));
            }
        }
        Ok(())
    }

    /// Optimization settings with the run's loss configuration attached.
    pub fn optimize_config(&self) -> OptimizeConfig {
        OptimizeConfig {
            loss: self.loss.clone(),
            ..self.optimize.clone()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
