//! Flat `key = value` configuration shared by every subcommand.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::archive::MediaSpec;
use crate::beamio::{
    ObservationParams, DEFAULT_F_HIGHEST_MHZ, DESK_SAMPLES, SURVEY_CHANNELS, SURVEY_CHANNEL_BW_MHZ,
    SURVEY_T_SAMP_MS,
};
use crate::dedisp::{DEFAULT_DM_MAX, DEFAULT_DM_MIN, DEFAULT_TRIALS};
use crate::periodsearch::{DEFAULT_MAX_CANDIDATES, DEFAULT_SNR_THRESHOLD};

pub const SHARED_ENV: &str = "BEAMFORGE_SHARED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("ConfigError: {path}:{line}: {msg}")]
    Syntax { path: String, line: usize, msg: String },
    #[error("ConfigError: unknown key `{key}` at {path}:{line}")]
    UnknownKey { path: String, line: usize, key: String },
    #[error("ConfigError: {0}")]
    Invalid(String),
    #[error("IoError: {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalConfig {
    pub shared_dir: Option<PathBuf>,
    pub scratch_dir: Option<PathBuf>,
    pub n_channels: u32,
    pub channel_bw_mhz: f64,
    pub f_highest_mhz: f64,
    pub t_samp_ms: f64,
    pub n_samples: u64,
    pub dm_trials: usize,
    pub dm_min: f64,
    pub dm_max: f64,
    pub chan_factor: usize,
    pub time_factor: usize,
    pub snr_threshold: f64,
    pub max_candidates: usize,
    pub dvd: MediaSpec,
    pub tape: MediaSpec,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        GlobalConfig {
            shared_dir: None,
            scratch_dir: None,
            n_channels: SURVEY_CHANNELS,
            channel_bw_mhz: SURVEY_CHANNEL_BW_MHZ,
            f_highest_mhz: DEFAULT_F_HIGHEST_MHZ,
            t_samp_ms: SURVEY_T_SAMP_MS,
            n_samples: DESK_SAMPLES,
            dm_trials: DEFAULT_TRIALS,
            dm_min: DEFAULT_DM_MIN,
            dm_max: DEFAULT_DM_MAX,
            chan_factor: 4,
            time_factor: 16,
            snr_threshold: DEFAULT_SNR_THRESHOLD,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            dvd: MediaSpec::dvd_2003(),
            tape: MediaSpec::dlt4_2003(),
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse()
        .map_err(|_| format!("`{key}` expects a number, got `{v}`"))
}

impl GlobalConfig {
    pub const KEYS: &'static [&'static str] = &[
        "shared_dir",
        "scratch_dir",
        "n_channels",
        "channel_bw_mhz",
        "f_highest_mhz",
        "t_samp_ms",
        "n_samples",
        "dm_trials",
        "dm_min",
        "dm_max",
        "chan_factor",
        "time_factor",
        "snr_threshold",
        "max_candidates",
        "dvd.capacity_gb",
        "dvd.unit_cost",
        "dvd.writer_cost",
        "dvd.other_costs",
        "tape.capacity_gb",
        "tape.unit_cost",
        "tape.writer_cost",
        "tape.other_costs",
    ];

    /// Ok(false) for an unknown key.
    fn set(&mut self, key: &str, v: &str) -> Result<bool, String> {
        let media = |m: &mut MediaSpec, field: &str| -> Result<(), String> {
            let x: f64 = num(key, v)?;
            match field {
                "capacity_gb" => m.capacity_gb = x,
                "unit_cost" => m.unit_cost = x,
                "writer_cost" => m.writer_cost = x,
                _ => m.other_costs = x,
            }
            Ok(())
        };
        match key {
            "shared_dir" => self.shared_dir = Some(PathBuf::from(v)),
            "scratch_dir" => self.scratch_dir = Some(PathBuf::from(v)),
            "n_channels" => self.n_channels = num(key, v)?,
            "channel_bw_mhz" => self.channel_bw_mhz = num(key, v)?,
            "f_highest_mhz" => self.f_highest_mhz = num(key, v)?,
            "t_samp_ms" => self.t_samp_ms = num(key, v)?,
            "n_samples" => self.n_samples = num(key, v)?,
            "dm_trials" => self.dm_trials = num(key, v)?,
            "dm_min" => self.dm_min = num(key, v)?,
            "dm_max" => self.dm_max = num(key, v)?,
            "chan_factor" => self.chan_factor = num(key, v)?,
            "time_factor" => self.time_factor = num(key, v)?,
            "snr_threshold" => self.snr_threshold = num(key, v)?,
            "max_candidates" => self.max_candidates = num(key, v)?,
            k => match k.split_once('.') {
                Some(("dvd", f)) if Self::KEYS.contains(&k) => media(&mut self.dvd, f)?,
                Some(("tape", f)) if Self::KEYS.contains(&k) => media(&mut self.tape, f)?,
                _ => return Ok(false),
            },
        }
        Ok(true)
    }

    /// Parse config text. `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut cfg = GlobalConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let syntax = |msg: String| ConfigError::Syntax {
                path: origin.to_string(),
                line: i + 1,
                msg,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected `key = value`".into()))?;
            let (k, v) = (k.trim(), v.trim());
            if v.is_empty() {
                return Err(syntax(format!("`{k}` has no value")));
            }
            if !cfg.set(k, v).map_err(syntax)? {
                return Err(ConfigError::UnknownKey {
                    path: origin.to_string(),
                    line: i + 1,
                    key: k.to_string(),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if let Err(e) = self.observation(self.n_samples) {
            return invalid(e.to_string());
        }
        if self.dm_trials == 0 || !(self.dm_max >= self.dm_min && self.dm_min >= 0.0) {
            return invalid("DM grid needs dm_trials > 0 and 0 <= dm_min <= dm_max".into());
        }
        if self.chan_factor == 0 || self.time_factor == 0 {
            return invalid("aggregation factors must be positive".into());
        }
        if !(self.snr_threshold > 0.0) || self.max_candidates == 0 {
            return invalid("snr_threshold and max_candidates must be positive".into());
        }
        for m in [&self.dvd, &self.tape] {
            if let Err(e) = m.validate() {
                return invalid(e.to_string());
            }
        }
        for p in [&self.shared_dir, &self.scratch_dir].into_iter().flatten() {
            if !creatable(p) {
                return invalid(format!("{} neither exists nor can be created", p.display()));
            }
        }
        Ok(())
    }

    pub fn observation(&self, n_samples: u64) -> crate::beamio::Result<ObservationParams> {
        ObservationParams::new(
            self.n_channels,
            self.channel_bw_mhz,
            self.f_highest_mhz,
            self.t_samp_ms,
            n_samples,
            1,
        )
    }

    /// Flag, then config file, then `BEAMFORGE_SHARED`.
    pub fn resolve_shared(&self, flag: Option<&Path>) -> Result<PathBuf, ConfigError> {
        if let Some(p) = flag {
            return Ok(p.to_path_buf());
        }
        if let Some(p) = &self.shared_dir {
            return Ok(p.clone());
        }
        match env::var_os(SHARED_ENV) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => Err(ConfigError::Invalid(format!(
                "no shared directory: pass --shared, set shared_dir in the config or {SHARED_ENV}"
            ))),
        }
    }
}

/// A path exists as a directory, or its nearest existing ancestor is one.
fn creatable(p: &Path) -> bool {
    let mut cur = Some(p);
    while let Some(c) = cur {
        if c.exists() {
            return c.is_dir();
        }
        cur = c.parent().filter(|q| !q.as_os_str().is_empty());
    }
    // Relative path with no existing component: created under the cwd.
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown_keys() {
        let c = GlobalConfig::parse(
            "# survey box\nshared_dir = /tmp\n dm_trials=10 # short\n dvd.unit_cost = 2.5\n",
            "t",
        )
        .unwrap();
        assert_eq!(c.shared_dir.as_deref(), Some(Path::new("/tmp")));
        assert_eq!(c.dm_trials, 10);
        assert_eq!(c.dvd.unit_cost, 2.5);
        assert_eq!(c.tape, MediaSpec::dlt4_2003());
        assert!(matches!(
            GlobalConfig::parse("dm_trails = 3", "t"),
            Err(ConfigError::UnknownKey { line: 1, .. })
        ));
        assert!(matches!(GlobalConfig::parse("dvd.colour = 3", "t"), Err(ConfigError::UnknownKey { .. })));
        assert!(GlobalConfig::parse("dm_trials = many", "t").is_err());
        assert!(GlobalConfig::parse("dm_trials", "t").is_err());
        assert!(GlobalConfig::parse("dvd.capacity_gb = 0", "t").is_err());
        assert!(GlobalConfig::parse("shared_dir = /etc/passwd/x", "t").is_err());
        assert_eq!(GlobalConfig::parse("", "t").unwrap(), GlobalConfig::default());
    }

    #[test]
    fn shared_dir_precedence() {
        let mut c = GlobalConfig::default();
        c.shared_dir = Some("/from/config".into());
        assert_eq!(c.resolve_shared(Some(Path::new("/flag"))).unwrap(), PathBuf::from("/flag"));
        assert_eq!(c.resolve_shared(None).unwrap(), PathBuf::from("/from/config"));
    }
}
