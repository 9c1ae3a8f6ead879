//! Run configuration files (JSON, or TOML by `.toml` extension).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use seval_core::sim::TrainConfig;
use seval_core::synthdata::SynthSpec;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds both the dataset and training.
    pub seed: u64,
    pub data: SynthSpec,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_root: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(text: &str, toml_syntax: bool) -> CliResult<Self> {
        let mut cfg: RunConfig = if toml_syntax { toml::from_str(text)? } else { serde_json::from_str(text)? };
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::bad(format!("{}: {e}", path.display())))?;
        let toml_syntax = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        Self::parse(&text, toml_syntax).map_err(|e| CliError::bad(format!("{}: {e}", path.display())))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.data.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> CliResult<()> {
        self.data.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// First 12 hex digits of the SHA-256 of the seed-free canonical JSON.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.set_seed(0);
        c.output_root = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_dir_name(&self) -> String {
        format!("{}-seed{}", self.config_hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const JSON: &str = r#"{
        "seed": 4,
        "data": {"n_classes": 2, "n1": 10, "m1": 40, "gamma_l": 5, "gamma_u": 5,
                 "generator": {"kind": "two_moons", "noise_sd": 0.1}},
        "train": {"method": {"kind": "seval"}, "total_iters": 100}
    }"#;

    #[test]
    fn seed_propagates_and_hash_ignores_it() {
        let a = RunConfig::parse(JSON, false).unwrap();
        assert_eq!((a.data.seed, a.train.seed), (4, 4));
        let mut b = a.clone();
        b.set_seed(9);
        assert_eq!(a.config_hash(), b.config_hash());
        assert_ne!(a.run_dir_name(), b.run_dir_name());
        let mut c = a.clone();
        c.train.total_iters = 101;
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn toml_matches_json() {
        let toml_text = r#"
seed = 4
[data]
n_classes = 2
n1 = 10
m1 = 40
gamma_l = 5.0
gamma_u = 5.0
[data.generator]
kind = "two_moons"
noise_sd = 0.1
[train]
total_iters = 100
[train.method]
kind = "seval"
"#;
        assert_eq!(RunConfig::parse(toml_text, true).unwrap(), RunConfig::parse(JSON, false).unwrap());
    }

    #[test]
    fn missing_field_is_named() {
        let text = JSON.replace(r#""method": {"kind": "seval"}, "#, "");
        let e = RunConfig::parse(&text, false).unwrap_err().to_string();
        assert!(e.contains("method"), "{e}");
    }
}
