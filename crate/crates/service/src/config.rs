//! TOML configuration for the service and persona files for the simulator.

use std::path::{Path, PathBuf};

use kinlink_core::assets::{AssetSources, Assets};
use kinlink_core::config::EngineConfig;
use kinlink_core::domain::{Condition, PairId, PairLink, UserProfile};
use kinlink_core::sim::Persona;
use kinlink_core::time::ClockMinutes;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: not found", path.display())]
    NotFound { path: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {reason}", path.display())]
    Schema { path: PathBuf, reason: String },
}

impl ConfigError {
    fn schema(path: &Path, reason: impl ToString) -> Self {
        ConfigError::Schema { path: path.to_path_buf(), reason: reason.to_string() }
    }
}

/// Top-level service configuration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub gateway: GatewayConfig,
    #[serde(default)]
    pub assets: AssetPaths,
    pub generator: Option<RemoteConfig>,
    #[serde(default, rename = "pair")]
    pub pairs: Vec<PairConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: String,
    /// Environment variable holding the shared secret.
    pub secret_env: String,
    pub log_path: PathBuf,
    /// Delivery attempts per outbound message.
    pub delivery_attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub backoff_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            secret_env: "KINLINK_SECRET".into(),
            log_path: "kinlink.log".into(),
            delivery_attempts: 3,
            backoff_ms: 200,
        }
    }
}

/// Optional replacements for the bundled assets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssetPaths {
    pub templates: Option<PathBuf>,
    pub replies: Option<PathBuf>,
    pub food: Option<PathBuf>,
    pub place: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Environment variable holding the bearer key, if any.
    pub key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub id: String,
    /// Defaults to `engine.condition`.
    pub condition: Option<Condition>,
    pub elder: UserConfig,
    pub younger: UserConfig,
}

/// A user as written in the config file, with `HH:MM` clock times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserConfig {
    pub id: String,
    pub name: String,
    #[serde(default = "default_zone")]
    pub timezone: String,
    pub wake: String,
    pub bed: String,
    /// Weekend times default to the weekday ones.
    pub wake_weekend: Option<String>,
    pub bed_weekend: Option<String>,
}

fn default_zone() -> String {
    "Asia/Tokyo".into()
}

impl UserConfig {
    pub fn profile(&self) -> Result<UserProfile, String> {
        let clock = |s: &str| s.parse::<ClockMinutes>().map_err(|e| format!("user {}: {e}", self.id));
        let wake = clock(&self.wake)?;
        let bed = clock(&self.bed)?;
        let profile = UserProfile {
            user_id: self.id.as_str().into(),
            display_name: self.name.clone(),
            registered_wake_weekday: wake,
            registered_wake_weekend: self.wake_weekend.as_deref().map(clock).transpose()?.unwrap_or(wake),
            registered_bed_weekday: bed,
            registered_bed_weekend: self.bed_weekend.as_deref().map(clock).transpose()?.unwrap_or(bed),
            timezone: self.timezone.clone(),
        };
        profile.validated().map_err(|e| format!("user {}: {e}", self.id))
    }
}

impl PairConfig {
    pub fn link(&self, default: Condition) -> Result<PairLink, kinlink_core::domain::DomainError> {
        PairLink::new(
            PairId::from(self.id.as_str()),
            self.elder.id.as_str().into(),
            self.younger.id.as_str().into(),
            self.condition.unwrap_or(default),
        )
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| match source.kind() {
        std::io::ErrorKind::NotFound => ConfigError::NotFound { path: path.to_path_buf() },
        _ => ConfigError::Io { path: path.to_path_buf(), source },
    })
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&read(path)?, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text).map_err(|e| ConfigError::schema(path, e.message()))?;
        cfg.engine.validate().map_err(|e| ConfigError::schema(path, e))?;
        if cfg.gateway.delivery_attempts == 0 {
            return Err(ConfigError::schema(path, "gateway.delivery_attempts must be at least 1"));
        }
        for pair in &cfg.pairs {
            pair.link(cfg.engine.condition).map_err(|e| ConfigError::schema(path, e))?;
            for p in [&pair.elder, &pair.younger] {
                p.profile().map_err(|e| ConfigError::schema(path, e))?;
            }
        }
        Ok(cfg)
    }

    /// Loads the configured asset files, falling back to the bundled ones.
    pub fn assets(&self) -> Result<Assets, ConfigError> {
        let a = &self.assets;
        let texts: Vec<Option<(PathBuf, String)>> = [&a.templates, &a.replies, &a.food, &a.place, &a.lexicon]
            .into_iter()
            .map(|p| p.as_ref().map(|p| read(p).map(|t| (p.clone(), t))).transpose())
            .collect::<Result<_, _>>()?;
        let text = |i: usize| texts[i].as_ref().map(|(_, t)| t.as_str());
        Assets::load(AssetSources { templates: text(0), replies: text(1), food: text(2), place: text(3), lexicon: text(4) })
            .map_err(|e| {
                let path = texts.iter().flatten().next().map(|(p, _)| p.clone()).unwrap_or_default();
                ConfigError::Schema { path, reason: e.to_string() }
            })
    }
}

/// Reads a persona TOML file; unspecified fields take the given preset's values.
pub fn load_persona(path: &Path, preset: Persona) -> Result<Persona, ConfigError> {
    let text = read(path)?;
    let mut merged = toml::Value::try_from(&preset).map_err(|e| ConfigError::schema(path, e))?;
    let overrides: toml::Value = toml::from_str(&text).map_err(|e| ConfigError::schema(path, e.message()))?;
    if let (Some(base), toml::Value::Table(over)) = (merged.as_table_mut(), overrides) {
        base.extend(over);
    }
    let persona: Persona = merged.try_into().map_err(|e: toml::de::Error| ConfigError::schema(path, e.message()))?;
    persona.validate().map_err(|e| ConfigError::schema(path, e))?;
    Ok(persona)
}
