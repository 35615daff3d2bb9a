//! JSON run configuration shared by the command-line tools.
//!
//! ```json
//! {
//!   "out_dir": "runs/demo",
//!   "trainer": { "n_workers": 1, "total_decision_steps": 50000, "lr": 0.001 },
//!   "generator": { "width": 25, "height": 25, "n_agents": 4, "n_hubs": 4 },
//!   "comm": { "episodes": 100000 }
//! }
//! ```
//!
//! Every section is optional and unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comm::CommConfig;
use crate::error::{Error, Result};
use crate::gen::GeneratorParams;
use crate::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub trainer: TrainerConfig,
    /// Used by `gen-env`; training takes its environments from the curriculum.
    #[serde(default)]
    pub generator: Option<GeneratorParams>,
    #[serde(default)]
    pub comm: CommConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        if let Some(g) = &self.generator {
            g.validate()?;
        }
        self.comm.validate()
    }

    /// Pretty JSON with every default filled in.
    pub fn resolved_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let c = RunConfig::from_json("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.trainer.n_workers, 8);
    }

    #[test]
    fn resolved_copy_round_trips() {
        let c = RunConfig::from_json(
            r#"{"out_dir":"x","trainer":{"lr":0.002,"seed":7},"generator":{"width":10,"height":10,"n_agents":2,"n_hubs":2},"comm":{"episodes":10}}"#,
        )
        .unwrap();
        let back = RunConfig::from_json(&c.resolved_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.trainer.lr, 0.002);
    }

    #[test]
    fn unknown_keys_rejected_at_every_level() {
        for bad in [
            r#"{"bogus":1}"#,
            r#"{"trainer":{"learning_rate":0.1}}"#,
            r#"{"comm":{"episodez":3}}"#,
            r#"{"generator":{"width":10,"height":10,"n_agents":2,"n_hubs":2,"extra":0}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn semantic_errors_caught_before_work() {
        assert!(RunConfig::from_json(r#"{"trainer":{"gamma":1.5}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"trainer":{"curriculum":[]}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"generator":{"width":10,"height":10,"n_agents":0,"n_hubs":2}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"comm":{"lr":-1}}"#).is_err());
    }
}
