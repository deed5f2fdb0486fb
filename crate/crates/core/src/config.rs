//! Engine configuration: a flat TOML file whose keys match the field names,
//! layered as flags > environment > file > defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consolidate::ConsolidationConfig;
use crate::graph::GraphSettings;
use crate::ingest::SegmentPolicy;
use crate::provider::{ProviderConfig, ProviderKind};
use crate::query::{AnchorConfig, RetrievalConfig, TraversalPolicy, WeightTable};

pub const ENV_PREFIX: &str = "STRATA_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("config file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("override {0:?} is not of the form key=value")]
    BadOverride(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    pub store_path: String,
    pub dimension: usize,
    pub clamp_out_of_order: bool,
    pub segment_policy: SegmentPolicy,
    // consolidation
    pub theta_sim: f64,
    pub delta_causal: f64,
    pub hops: usize,
    pub semantic_top_m: usize,
    pub neighborhood_cap: usize,
    pub history_cap: usize,
    // anchors
    pub rrf_k: f64,
    pub vector_top_k: usize,
    pub keyword_top_k: usize,
    pub anchor_top_k: usize,
    pub vector_weight: f64,
    pub keyword_weight: f64,
    pub time_weight: f64,
    // traversal
    pub lambda1: f64,
    pub lambda2: f64,
    pub gamma: f64,
    pub beam_width: usize,
    pub max_depth: usize,
    pub budget: usize,
    pub drop_threshold: f64,
    pub weights: WeightTable,
    pub token_budget: usize,
    pub loop_write_back: bool,
    /// Rule table for mock providers; the bundled table when empty.
    pub mock_rules: String,
    pub extractor: ProviderConfig,
    pub reasoner: ProviderConfig,
    pub answerer: ProviderConfig,
    pub judge: ProviderConfig,
    pub embedder: ProviderConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let c = ConsolidationConfig::default();
        let a = AnchorConfig::default();
        let p = TraversalPolicy::default();
        let mock = ProviderConfig { kind: ProviderKind::Mock, ..ProviderConfig::default() };
        EngineConfig {
            store_path: "strata-store".into(),
            dimension: 384,
            clamp_out_of_order: false,
            segment_policy: SegmentPolicy::PerTurn,
            theta_sim: c.theta_sim,
            delta_causal: c.delta_causal,
            hops: c.hops,
            semantic_top_m: c.semantic_top_m,
            neighborhood_cap: c.neighborhood_cap,
            history_cap: c.history_cap,
            rrf_k: a.rrf_k,
            vector_top_k: a.vector_top_k,
            keyword_top_k: a.keyword_top_k,
            anchor_top_k: a.anchor_top_k,
            vector_weight: a.vector_weight,
            keyword_weight: a.keyword_weight,
            time_weight: a.time_weight,
            lambda1: p.lambda1,
            lambda2: p.lambda2,
            gamma: p.gamma,
            beam_width: p.beam_width,
            max_depth: p.max_depth,
            budget: p.budget,
            drop_threshold: p.drop_threshold,
            weights: p.weights,
            token_budget: 4000,
            loop_write_back: false,
            mock_rules: String::new(),
            extractor: mock.clone(),
            reasoner: mock.clone(),
            answerer: mock.clone(),
            judge: mock.clone(),
            embedder: mock,
        }
    }
}

impl EngineConfig {
    pub fn graph_settings(&self) -> GraphSettings {
        GraphSettings { dimension: self.dimension, theta_sim: self.theta_sim, clamp_out_of_order: self.clamp_out_of_order }
    }

    pub fn consolidation(&self) -> ConsolidationConfig {
        ConsolidationConfig {
            theta_sim: self.theta_sim,
            delta_causal: self.delta_causal,
            hops: self.hops,
            semantic_top_m: self.semantic_top_m,
            neighborhood_cap: self.neighborhood_cap,
            history_cap: self.history_cap,
        }
    }

    pub fn anchors(&self) -> AnchorConfig {
        AnchorConfig {
            rrf_k: self.rrf_k,
            vector_top_k: self.vector_top_k,
            keyword_top_k: self.keyword_top_k,
            anchor_top_k: self.anchor_top_k,
            vector_weight: self.vector_weight,
            keyword_weight: self.keyword_weight,
            time_weight: self.time_weight,
        }
    }

    pub fn policy(&self) -> TraversalPolicy {
        TraversalPolicy {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            gamma: self.gamma,
            beam_width: self.beam_width,
            max_depth: self.max_depth,
            budget: self.budget,
            drop_threshold: self.drop_threshold,
            weights: self.weights,
            excluded: Vec::new(),
        }
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig { anchors: self.anchors(), policy: self.policy(), token_budget: self.token_budget }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.dimension == 0 {
            return invalid("dimension must be at least 1".into());
        }
        if self.token_budget == 0 {
            return invalid("token_budget must be at least 1".into());
        }
        self.consolidation().validate().map_err(ConfigError::Invalid)?;
        self.anchors().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.policy().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for (role, p) in self.providers() {
            if p.kind == ProviderKind::Http && p.endpoint.trim().is_empty() {
                return invalid(format!("{role}: http provider needs an endpoint"));
            }
            if !(0.0..=2.0).contains(&p.temperature) {
                return invalid(format!("{role}: temperature must lie in [0, 2]"));
            }
            if p.max_in_flight == 0 {
                return invalid(format!("{role}: max_in_flight must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn providers(&self) -> [(&'static str, &ProviderConfig); 5] {
        [
            ("extractor", &self.extractor),
            ("reasoner", &self.reasoner),
            ("answerer", &self.answerer),
            ("judge", &self.judge),
            ("embedder", &self.embedder),
        ]
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }
}

/// Builds the effective config. `file` is read when given, `env` supplies
/// `(name, value)` pairs (only `STRATA_*` names are consulted) and
/// `overrides` are `key=value` strings with dotted keys for nested tables.
pub fn load_layered(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[String],
) -> Result<EngineConfig, ConfigError> {
    let mut merged = toml::Value::try_from(EngineConfig::default()).expect("defaults serialize");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| ConfigError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        merge(&mut merged, toml::Value::Table(table), "")?;
    }
    let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    env.sort();
    for (name, value) in env {
        let key = name[ENV_PREFIX.len()..].to_lowercase().replace("__", ".");
        // Variables outside the config namespace (like the API key) are ignored.
        if lookup(&merged, &key).is_some() {
            set(&mut merged, &key, &value)?;
        }
    }
    for o in overrides {
        let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
        set(&mut merged, key.trim(), value.trim())?;
    }
    let config: EngineConfig =
        merged.try_into().map_err(|e: toml::de::Error| ConfigError::Invalid(e.to_string().trim().to_string()))?;
    config.validate()?;
    Ok(config)
}

fn merge(base: &mut toml::Value, layer: toml::Value, prefix: &str) -> Result<(), ConfigError> {
    match (base, layer) {
        (toml::Value::Table(b), toml::Value::Table(l)) => {
            for (k, v) in l {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get_mut(&k) {
                    Some(existing) => merge(existing, v, &path)?,
                    None => return Err(ConfigError::UnknownKey(path)),
                }
            }
            Ok(())
        }
        (b, l) => {
            *b = l;
            Ok(())
        }
    }
}

fn lookup<'a>(root: &'a toml::Value, key: &str) -> Option<&'a toml::Value> {
    key.split('.').try_fold(root, |v, part| v.get(part))
}

/// Parses `raw` as a TOML value, falling back to a plain string, and stores
/// it at dotted `key`. The slot must already exist.
fn set(root: &mut toml::Value, key: &str, raw: &str) -> Result<(), ConfigError> {
    let mut slot = root;
    for part in key.split('.') {
        slot = slot.get_mut(part).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
    }
    let parsed = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    *slot = match (&*slot, parsed) {
        (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
        (toml::Value::String(_), v) if !v.is_str() => toml::Value::String(raw.to_string()),
        (_, v) => v,
    };
    Ok(())
}
