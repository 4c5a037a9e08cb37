//! Session configuration file.
//!
//! ```json
//! {
//!   "tempo_bpm": 126, "beats_per_measure": 4, "pulses_per_beat": 4,
//!   "sample_rate_hz": 44100, "lifetime_measures": 48, "fade_measures": 2,
//!   "collage_fade_measures": 1, "seed": 1, "realtime": true, "speed": 1.0,
//!   "port": 8080, "log_path": "session.log.jsonl", "library_path": null
//! }
//! ```
//!
//! Every key is optional. `INTERLOCK_PORT` and `INTERLOCK_REALTIME`
//! override the file.

use std::path::{Path, PathBuf};

use interlock_core::loopgen::DEFAULT_SEED;
use interlock_core::music::{MusicError, Tempo, TimebaseConfig};
use interlock_core::scheduler::{
    SchedulerConfig, DEFAULT_BED_FADE_MEASURES, DEFAULT_COLLAGE_FADE_MEASURES, DEFAULT_LIFETIME_MEASURES,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PORT: &str = "INTERLOCK_PORT";
pub const ENV_REALTIME: &str = "INTERLOCK_REALTIME";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Timebase(#[from] MusicError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub tempo_bpm: Tempo,
    pub beats_per_measure: u32,
    pub pulses_per_beat: u32,
    pub sample_rate_hz: u32,
    pub lifetime_measures: u32,
    /// Bed fade length.
    pub fade_measures: u32,
    pub collage_fade_measures: u32,
    pub seed: u64,
    /// Clock follows wall time; otherwise it moves only on `POST /advance`.
    pub realtime: bool,
    /// Wall-clock acceleration in realtime mode.
    pub speed: f64,
    pub port: u16,
    pub log_path: Option<PathBuf>,
    /// Load this library instead of generating one from `seed`.
    pub library_path: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let tb = TimebaseConfig::default();
        Self {
            tempo_bpm: tb.tempo_bpm(),
            beats_per_measure: tb.beats_per_measure(),
            pulses_per_beat: tb.pulses_per_beat(),
            sample_rate_hz: tb.sample_rate_hz(),
            lifetime_measures: DEFAULT_LIFETIME_MEASURES,
            fade_measures: DEFAULT_BED_FADE_MEASURES,
            collage_fade_measures: DEFAULT_COLLAGE_FADE_MEASURES,
            seed: DEFAULT_SEED,
            realtime: true,
            speed: 1.0,
            port: 8080,
            log_path: None,
            library_path: None,
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl SessionConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SessionConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Applies overrides from `(name, value)` pairs, normally `std::env::vars()`.
    pub fn with_env<I, K, V>(mut self, vars: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let v = v.as_ref();
            match k.as_ref() {
                ENV_PORT => {
                    self.port = v
                        .trim()
                        .parse()
                        .map_err(|_| ConfigError::Invalid(format!("{ENV_PORT}={v} is not a port")))?;
                }
                ENV_REALTIME => {
                    self.realtime = parse_bool(v)
                        .ok_or_else(|| ConfigError::Invalid(format!("{ENV_REALTIME}={v} is not a boolean")))?;
                }
                _ => {}
            }
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scheduler_config()?;
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(ConfigError::Invalid(format!("speed {} must be positive", self.speed)));
        }
        Ok(())
    }

    pub fn timebase(&self) -> Result<TimebaseConfig, MusicError> {
        TimebaseConfig::new(
            self.tempo_bpm,
            self.beats_per_measure,
            self.pulses_per_beat,
            self.sample_rate_hz,
        )
    }

    pub fn scheduler_config(&self) -> Result<SchedulerConfig, ConfigError> {
        let cfg = SchedulerConfig {
            timebase: self.timebase()?,
            lifetime_measures: self.lifetime_measures,
            bed_fade_measures: self.fade_measures,
            collage_fade_measures: self.collage_fade_measures,
        };
        if cfg.lifetime_measures == 0 || cfg.bed_fade_measures == 0 || cfg.collage_fade_measures == 0 {
            return Err(ConfigError::Invalid(
                "lifetime and fade lengths must be at least one measure".into(),
            ));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_default() {
        assert_eq!(SessionConfig::from_json("{}").unwrap(), SessionConfig::default());
    }

    #[test]
    fn round_trips() {
        let cfg = SessionConfig {
            tempo_bpm: "252/2".parse().unwrap(),
            realtime: false,
            log_path: Some("x.jsonl".into()),
            ..SessionConfig::default()
        };
        let back = SessionConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.timebase().unwrap().samples_per_measure(), 84_000);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            SessionConfig::from_json(r#"{"tempo_bpm": 127}"#),
            Err(ConfigError::Timebase(MusicError::NonIntegerGrid { .. }))
        ));
        assert!(SessionConfig::from_json(r#"{"tempo_bpm": 60}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"lifetime_measures": 0}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"speed": 0}"#).is_err());
        assert!(SessionConfig::from_json(r#"{"colour": "red"}"#).is_err());
    }

    #[test]
    fn env_overrides() {
        let cfg = SessionConfig::default()
            .with_env([(ENV_PORT, "9123"), (ENV_REALTIME, "false"), ("PATH", "/bin")])
            .unwrap();
        assert_eq!(cfg.port, 9123);
        assert!(!cfg.realtime);
        assert!(SessionConfig::default().with_env([(ENV_PORT, "http")]).is_err());
        assert!(SessionConfig::default().with_env([(ENV_REALTIME, "maybe")]).is_err());
    }
}
