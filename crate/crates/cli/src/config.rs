//! Flat `key = value` run configuration.
//!
//! Every field of the model and training configs is addressable by its bare
//! name. Files are read first, then `--set key=value` pairs and dedicated
//! flags override them.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hytransformer::evaluation::TiePolicy;
use hytransformer::model::ModelConfig;
use hytransformer::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub tie_policy: TiePolicy,
    /// Derive `max_len` from the longest statement in the dataset.
    pub auto_len: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            tie_policy: TiePolicy::default(),
            auto_len: true,
        }
    }
}

fn section<T: Serialize>(v: &T) -> Map<String, Value> {
    match serde_json::to_value(v).expect("configs serialize") {
        Value::Object(m) => m,
        _ => unreachable!("configs are structs"),
    }
}

fn parse_like(old: &Value, key: &str, text: &str) -> Result<Value> {
    let text = text.trim();
    let bad = || anyhow!("config key '{key}': cannot parse '{text}'");
    Ok(match old {
        Value::Bool(_) => Value::Bool(match text {
            "true" | "on" | "yes" | "1" => true,
            "false" | "off" | "no" | "0" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() || n.is_i64() => {
            Value::from(text.parse::<u64>().map_err(|_| bad())?)
        }
        Value::Number(_) => {
            let x: f64 = text.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(x)
                .map(Value::Number)
                .ok_or_else(bad)?
        }
        // Only optional integers (`max_steps`) are null by default.
        Value::Null => match text {
            "none" | "" => Value::Null,
            _ => Value::from(text.parse::<u64>().map_err(|_| bad())?),
        },
        Value::String(_) => Value::String(text.to_owned()),
        _ => return Err(bad()),
    })
}

impl RunConfig {
    pub fn keys() -> Vec<String> {
        let c = RunConfig::default();
        let mut keys: Vec<String> = section(&c.model).keys().cloned().collect();
        keys.extend(section(&c.train).keys().cloned());
        keys.push("tie_policy".into());
        keys
    }

    /// Sets one key. `max_len = auto` derives the length from the data.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if key == "tie_policy" {
            self.tie_policy = value
                .trim()
                .parse()
                .map_err(|e| anyhow!("config key 'tie_policy': {e}"))?;
            return Ok(());
        }
        if key == "max_len" {
            if value.trim() == "auto" {
                self.auto_len = true;
                return Ok(());
            }
            self.auto_len = false;
        }
        let mut model = section(&self.model);
        let mut train = section(&self.train);
        let target = if model.contains_key(key) {
            &mut model
        } else if train.contains_key(key) {
            &mut train
        } else {
            bail!(
                "unknown config key '{key}' (known keys: {})",
                RunConfig::keys().join(", ")
            );
        };
        let parsed = parse_like(&target[key], key, value)?;
        target.insert(key.to_owned(), parsed);
        self.model = serde_json::from_value(Value::Object(model))
            .with_context(|| format!("config key '{key}'"))?;
        self.train = serde_json::from_value(Value::Object(train))
            .with_context(|| format!("config key '{key}'"))?;
        Ok(())
    }

    /// Applies `key=value`.
    pub fn apply_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| anyhow!("'{pair}' is not of the form key=value"))?;
        self.apply(k, v)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.apply_pair(line)
                .with_context(|| format!("{origin}:{}", i + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// The effective configuration in the same format the loader reads.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::from("# model\n");
        for (k, v) in section(&self.model) {
            if k == "max_len" && self.auto_len {
                let _ = writeln!(out, "{k} = auto");
            } else {
                let _ = writeln!(out, "{k} = {}", render(&v));
            }
        }
        out.push_str("\n# training\n");
        for (k, v) in section(&self.train) {
            let _ = writeln!(out, "{k} = {}", render(&v));
        }
        let _ = write!(out, "\n# evaluation\ntie_policy = {}\n", self.tie_policy);
        out
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_through_text() {
        let mut c = RunConfig::default();
        c.apply("lr", "0.003").unwrap();
        c.apply("use_entity_ln", "false").unwrap();
        c.apply("max_steps", "40").unwrap();
        c.apply("max_len", "9").unwrap();
        c.apply("tie_policy", "pessimistic").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&c.to_kv_text(), "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.train.lr, 0.003);
        assert!(!back.auto_len);
    }

    #[test]
    fn defaults_survive_roundtrip() {
        let c = RunConfig::default();
        let mut back = RunConfig::default();
        back.apply("lr", "5").unwrap();
        back.apply_text(&c.to_kv_text(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = RunConfig::default();
        assert!(c.apply("learning_rate", "1").is_err());
        assert!(c.apply("epochs", "many").is_err());
        assert!(c.apply("use_positions", "maybe").is_err());
        assert!(c.apply_pair("lr").is_err());
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn comments_and_blank_lines() {
        let mut c = RunConfig::default();
        c.apply_text("# header\n\nepochs = 3  # short\n", "mem")
            .unwrap();
        assert_eq!(c.train.epochs, 3);
    }

    #[test]
    fn keys_are_unique() {
        let mut keys = RunConfig::keys();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
    }
}
