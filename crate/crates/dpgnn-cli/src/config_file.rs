//! `key = value` training configuration files.
//!
//! Parsing starts from [`TrainConfig::default`] and overrides the listed
//! keys, so partial configs are valid. Serialization writes every key in a
//! fixed order with full-precision floats; `parse(serialize(c)) == c` for
//! any valid config.

use std::fs;
use std::path::Path;

use dpgnn_core::model::{AggregatorKind, PerceptionMode};
use dpgnn_core::train::TrainConfig;

use crate::error::ConfigError;

/// Serializes a config in canonical key order.
pub fn serialize_config(config: &TrainConfig) -> String {
    format!(
        "top_k = {}\n\
         hops_topo = {}\n\
         hops_feat = {}\n\
         ensemble_size = {}\n\
         temperature = {}\n\
         lambda = {}\n\
         dropout = {}\n\
         hidden_dim = {}\n\
         learning_rate = {}\n\
         weight_decay = {}\n\
         patience = {}\n\
         max_epochs = {}\n\
         seed = {}\n\
         aggregator = {}\n\
         mode = {}\n",
        config.top_k,
        config.hops_topo,
        config.hops_feat,
        config.ensemble_size,
        config.temperature,
        config.lambda,
        config.dropout,
        config.hidden_dim,
        config.learning_rate,
        config.weight_decay,
        config.patience,
        config.max_epochs,
        config.seed,
        config.aggregator.as_str(),
        config.mode.as_str(),
    )
}

/// Parses a config from text; `#` starts a comment, blank lines are
/// skipped, and every key may appear at most once.
pub fn parse_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let mut config = TrainConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::BadValue {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_owned(),
            });
        }
        seen.push(key.to_owned());

        let bad = |message: String| ConfigError::BadValue { line, message };
        macro_rules! parse_into {
            ($field:expr, $ty:ty) => {
                $field = value
                    .parse::<$ty>()
                    .map_err(|_| bad(format!("bad value `{value}` for `{key}`")))?
            };
        }
        match key {
            "top_k" => parse_into!(config.top_k, usize),
            "hops_topo" => parse_into!(config.hops_topo, usize),
            "hops_feat" => parse_into!(config.hops_feat, usize),
            "ensemble_size" => parse_into!(config.ensemble_size, usize),
            "temperature" => parse_into!(config.temperature, f64),
            "lambda" => parse_into!(config.lambda, f64),
            "dropout" => parse_into!(config.dropout, f64),
            "hidden_dim" => parse_into!(config.hidden_dim, usize),
            "learning_rate" => parse_into!(config.learning_rate, f64),
            "weight_decay" => parse_into!(config.weight_decay, f64),
            "patience" => parse_into!(config.patience, usize),
            "max_epochs" => parse_into!(config.max_epochs, usize),
            "seed" => parse_into!(config.seed, u64),
            "aggregator" => {
                config.aggregator = value
                    .parse::<AggregatorKind>()
                    .map_err(|e| bad(e.to_string()))?
            }
            "mode" => {
                config.mode = value
                    .parse::<PerceptionMode>()
                    .map_err(|e| bad(e.to_string()))?
            }
            other => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: other.to_owned(),
                })
            }
        }
    }
    config.validate().map_err(ConfigError::Invalid)?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}
