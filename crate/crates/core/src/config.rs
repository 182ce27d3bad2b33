//! Flat `key = value` settings shared by the command-line tools.

use std::path::PathBuf;

use crate::bussim::{AttackerProfile, NetworkConfig, DEFAULT_NOISE_SIGMA, FINGERPRINT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::features::ChannelMode;
use crate::localizer::{DEFAULT_COPIES, DEFAULT_MAX_ROLL};
use crate::orchestrator::DEFAULT_TP;

/// Environment variable that replaces the seed read from a config file.
pub const SEED_ENV: &str = "CANLOC_SEED";

pub const KEYS: [&str; 12] = [
    "network",
    "frames",
    "seed",
    "sample_rate",
    "channel",
    "attacker",
    "active",
    "k",
    "r",
    "tp",
    "noise",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub network: NetworkConfig,
    pub frames: usize,
    pub seed: u64,
    pub sample_rate: f64,
    /// Overrides the per-task default channel when set.
    pub channel: Option<ChannelMode>,
    pub attacker: AttackerProfile,
    pub active: bool,
    pub k: usize,
    pub r: usize,
    pub tp: f64,
    pub noise: f64,
    pub out: Option<PathBuf>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            network: NetworkConfig::CLEAN,
            frames: 1000,
            seed: 0,
            sample_rate: FINGERPRINT_SAMPLE_RATE,
            channel: None,
            attacker: AttackerProfile::A1,
            active: false,
            k: DEFAULT_COPIES,
            r: DEFAULT_MAX_ROLL,
            tp: DEFAULT_TP,
            noise: DEFAULT_NOISE_SIGMA,
            out: None,
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value `{value}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "network" => self.network = value.parse()?,
            "frames" => self.frames = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "sample_rate" => {
                let v: f64 = num(key, value)?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(bad(key, value));
                }
                self.sample_rate = v;
            }
            "channel" => self.channel = Some(value.parse()?),
            "attacker" => self.attacker = value.parse()?,
            "active" => self.active = num(key, value)?,
            "k" => {
                self.k = num(key, value)?;
                if self.k == 0 {
                    return Err(bad(key, value));
                }
            }
            "r" => self.r = num(key, value)?,
            "tp" => {
                let v: f64 = num(key, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad(key, value));
                }
                self.tp = v;
            }
            "noise" => {
                let v: f64 = num(key, value)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(bad(key, value));
                }
                self.noise = v;
            }
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// File values first, then `env_seed`, then command-line overrides.
    pub fn resolve(file: Option<&str>, env_seed: Option<&str>, overrides: &[(&str, String)]) -> Result<Self> {
        let mut s = Self::default();
        if let Some(text) = file {
            for (key, value) in parse(text)? {
                s.set(&key, &value)?;
            }
        }
        if let Some(seed) = env_seed {
            s.set("seed", seed.trim())?;
        }
        for (key, value) in overrides {
            s.set(key, value)?;
        }
        Ok(s)
    }
}

/// `key = value` pairs in file order. Blank lines and `#` comments are
/// skipped; repeated keys are an error.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.contains(&key) {
            return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1)));
        }
        if out.iter().any(|(k, _)| k == key) {
            return Err(Error::Config(format!("line {}: `{key}` given twice", n + 1)));
        }
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let text = "# campaign\nnetwork = Nw4\n\n frames=250  # short\nseed = 7\nattacker = A2\nchannel = CAN_L\n";
        let s = Settings::resolve(Some(text), None, &[]).unwrap();
        assert_eq!(s.network, NetworkConfig::new(4).unwrap());
        assert_eq!(s.frames, 250);
        assert_eq!(s.seed, 7);
        assert_eq!(s.attacker, AttackerProfile::A2);
        assert_eq!(s.channel, Some(ChannelMode::CanL));
    }

    #[test]
    fn precedence_is_file_env_flag() {
        let s = Settings::resolve(Some("seed = 1"), Some("2"), &[]).unwrap();
        assert_eq!(s.seed, 2);
        let s = Settings::resolve(Some("seed = 1"), Some("2"), &[("seed", "3".into())]).unwrap();
        assert_eq!(s.seed, 3);
        assert!(Settings::resolve(None, Some("x"), &[]).is_err());
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        assert!(parse("colour = red").is_err());
        assert!(parse("seed = 1\nseed = 2").is_err());
        assert!(parse("seed 1").is_err());
        assert!(Settings::resolve(Some("network = Nw9"), None, &[]).is_err());
        assert!(Settings::resolve(Some("tp = -1"), None, &[]).is_err());
        assert!(Settings::resolve(Some("k = 0"), None, &[]).is_err());
    }
}
