//! The TOML run file. Every field is optional; command-line flags win.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub paths: Paths,
    pub generation: Generation,
    pub cleaning: Cleaning,
    pub eval: Eval,
    pub decode: Decode,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub templates: Option<PathBuf>,
    pub frames: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub review_log: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Generation {
    pub seed: Option<u64>,
    /// Paradigm name → maximum records per frame.
    pub caps: BTreeMap<String, usize>,
    pub paradigms: Option<Vec<String>>,
    pub enricher: Option<String>,
    pub numerals: Option<String>,
    pub multi_turn: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Cleaning {
    pub ratio: Option<f64>,
    pub seed: Option<u64>,
    pub rule_threshold: Option<usize>,
    pub flag_policy: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Eval {
    pub metrics: Option<Vec<String>>,
    pub judge: Option<String>,
    pub max_unmatched: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decode {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub max_len: Option<usize>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let config: Config = toml::from_str(text).map_err(|e| e.to_string())?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), String> {
        if let Some(r) = self.cleaning.ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(format!("cleaning.ratio must lie in (0, 1], got {r}"));
            }
        }
        if let Some(m) = self.eval.max_unmatched {
            if !(0.0..=1.0).contains(&m) {
                return Err(format!("eval.max_unmatched must lie in [0, 1], got {m}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_file_parses() {
        let c = Config::parse(
            r#"
            [paths]
            corpus = "out/corpus.jsonl"
            [generation]
            seed = 7
            caps = { single_phrase = 3, grounding_qa = 1 }
            enricher = "stub"
            [cleaning]
            ratio = 0.2
            rule_threshold = 3
            [eval]
            metrics = ["BLEU-4", "CIDEr"]
            [decode]
            alpha = 0.5
            "#,
        )
        .unwrap();
        assert_eq!(c.generation.seed, Some(7));
        assert_eq!(c.generation.caps["single_phrase"], 3);
        assert_eq!(c.cleaning.rule_threshold, Some(3));
        assert_eq!(c.decode.alpha, Some(0.5));
        assert_eq!(c.paths.corpus.unwrap(), PathBuf::from("out/corpus.jsonl"));
    }

    #[test]
    fn shipped_example_parses() {
        let c = Config::parse(include_str!("../../../surgkit.example.toml")).unwrap();
        assert_eq!(c.cleaning.ratio, Some(0.2));
        assert_eq!(c.decode.sigma, Some(0.3));
    }

    #[test]
    fn rejects_bad_ratio_and_unknown_keys() {
        assert!(Config::parse("[cleaning]\nratio = 0.0").is_err());
        assert!(Config::parse("[cleaning]\nratio = 1.5").is_err());
        assert!(Config::parse("[generation]\nsed = 1").is_err());
        assert!(Config::parse("").is_ok());
    }
}
