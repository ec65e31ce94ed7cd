//! Plain-text `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated. Every key not listed in the file keeps its default;
//! unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::Tap;
use crate::error::{Error, Result};
use crate::synth_data::GeneratorConfig;
use crate::trainer::{Pairing, TrainConfig};

/// Ordered `key → (line number, raw value)` entries of a config text.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (usize, String)>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(Error::Config(format!("line {}: key `{key}` given twice", i + 1)));
        }
    }
    Ok(out)
}

fn scalar<T: FromStr>(key: &str, line: usize, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse()
        .map_err(|e| Error::Config(format!("line {line}: key `{key}`: cannot parse `{raw}`: {e}")))
}

fn list<T: FromStr>(key: &str, line: usize, raw: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',').map(|s| scalar(key, line, s.trim())).collect()
}

fn flag(key: &str, line: usize, raw: &str) -> Result<bool> {
    match raw {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: key `{key}`: expected a boolean, got `{raw}`"))),
    }
}

impl FromStr for Pairing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tempo" => Ok(Pairing::Tempo),
            "instance" => Ok(Pairing::Instance),
            _ => Err(Error::Config(format!("unknown pairing `{s}` (expected tempo or instance)"))),
        }
    }
}

/// Training config from file text, defaults filled in and constraints checked.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    let pairs = parse_pairs(text)?;
    for (key, (line, raw)) in &pairs {
        let (k, l, r) = (key.as_str(), *line, raw.as_str());
        match k {
            "lr0" => c.lr0 = scalar(k, l, r)?,
            "batch_size" => c.batch_size = scalar(k, l, r)?,
            "sgd_momentum" => c.sgd_momentum = scalar(k, l, r)?,
            "weight_decay" => c.weight_decay = scalar(k, l, r)?,
            "epochs" => c.epochs = scalar(k, l, r)?,
            "temperature" => c.temperature = scalar(k, l, r)?,
            "alpha" => c.alpha = scalar(k, l, r)?,
            "tau" => c.tau = scalar(k, l, r)?,
            "taps" => c.taps = list::<Tap>(k, l, r)?,
            "level_weights" => c.level_weights = list(k, l, r)?,
            "bank_momentum" => c.bank_momentum = scalar(k, l, r)?,
            "embed_dim" => c.embed_dim = scalar(k, l, r)?,
            "negatives" => c.negatives = scalar(k, l, r)?,
            "stage_channels" => c.stage_channels = list(k, l, r)?,
            "fast_width" => c.fast_width = scalar(k, l, r)?,
            "temporal_kernel" => {
                c.temporal_kernel = r.split(',').map(|s| flag(k, l, s.trim())).collect::<Result<_>>()?
            }
            "pairing" => c.pairing = scalar(k, l, r)?,
            "seed" => c.seed = scalar(k, l, r)?,
            _ => return Err(Error::Config(format!("line {l}: unknown key `{k}`"))),
        }
    }
    c.validate().map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{m} ({})", blame(&m, &pairs))),
        other => other,
    })?;
    Ok(c)
}

fn blame(message: &str, pairs: &BTreeMap<String, (usize, String)>) -> String {
    let named: Vec<&str> = pairs
        .keys()
        .map(|k| k.as_str())
        .filter(|k| message.contains(k))
        .collect();
    if named.is_empty() {
        "check the config values".to_string()
    } else {
        format!("offending key: {}", named.join(", "))
    }
}

pub fn parse_generator_config(text: &str) -> Result<GeneratorConfig> {
    let mut g = GeneratorConfig::default();
    for (key, (line, raw)) in parse_pairs(text)? {
        let (k, l, r) = (key.as_str(), line, raw.as_str());
        match k {
            "height" => g.height = scalar(k, l, r)?,
            "width" => g.width = scalar(k, l, r)?,
            "channels" => g.channels = scalar(k, l, r)?,
            "frames" => g.frames = scalar(k, l, r)?,
            "noise_sigma" => g.noise_sigma = scalar(k, l, r)?,
            "background_level" => g.background_level = scalar(k, l, r)?,
            "radius_min" => g.radius_min = scalar(k, l, r)?,
            "radius_max" => g.radius_max = scalar(k, l, r)?,
            "speeds" => {
                let v: Vec<f64> = list(k, l, r)?;
                g.speeds = v
                    .try_into()
                    .map_err(|_| Error::Config(format!("line {l}: key `speeds` needs exactly 3 values")))?;
            }
            "palette_size" => g.palette_size = scalar(k, l, r)?,
            _ => return Err(Error::Config(format!("line {l}: unknown key `{k}`"))),
        }
    }
    g.validate()?;
    Ok(g)
}

pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    parse_train_config(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn read_generator_config(path: &Path) -> Result<GeneratorConfig> {
    parse_generator_config(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// The config as a file `parse_train_config` reads back to the same value.
pub fn render_train_config(c: &TrainConfig) -> String {
    let join = |v: Vec<String>| v.join(",");
    let mut s = String::new();
    let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
    put("lr0", c.lr0.to_string());
    put("batch_size", c.batch_size.to_string());
    put("sgd_momentum", c.sgd_momentum.to_string());
    put("weight_decay", c.weight_decay.to_string());
    put("epochs", c.epochs.to_string());
    put("temperature", c.temperature.to_string());
    put("alpha", c.alpha.to_string());
    put("tau", c.tau.to_string());
    put("taps", join(c.taps.iter().map(|t| t.to_string()).collect()));
    put("level_weights", join(c.level_weights.iter().map(|w| w.to_string()).collect()));
    put("bank_momentum", c.bank_momentum.to_string());
    put("embed_dim", c.embed_dim.to_string());
    put("negatives", c.negatives.to_string());
    put("stage_channels", join(c.stage_channels.iter().map(|w| w.to_string()).collect()));
    put("fast_width", c.fast_width.to_string());
    put(
        "temporal_kernel",
        join(c.temporal_kernel.iter().map(|&b| u8::from(b).to_string()).collect()),
    );
    put(
        "pairing",
        match c.pairing {
            Pairing::Tempo => "tempo".into(),
            Pairing::Instance => "instance".into(),
        },
    );
    put("seed", c.seed.to_string());
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_train_config("").unwrap(), TrainConfig::default());
        assert_eq!(parse_train_config("# nothing\n\n").unwrap(), TrainConfig::default());
        assert_eq!(parse_generator_config("").unwrap(), GeneratorConfig::default());
    }

    #[test]
    fn values_are_read() {
        let c = parse_train_config("temperature = 0.07\nalpha=4\ntaps = res4, res5\ntemporal_kernel=1,0,1,1\n").unwrap();
        assert_eq!(c.temperature, 0.07);
        assert_eq!(c.alpha, 4);
        assert_eq!(c.taps, vec![Tap::Res4, Tap::Res5]);
        assert_eq!(c.temporal_kernel, vec![true, false, true, true]);
    }

    #[test]
    fn tempo_constraint_names_the_key() {
        let err = parse_train_config("alpha=3\ntau=8\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("alpha"), "{msg}");
    }

    #[test]
    fn unknown_and_malformed_keys() {
        let err = parse_train_config("alhpa=2\n").unwrap_err().to_string();
        assert!(err.contains("unknown key `alhpa`"), "{err}");
        let err = parse_train_config("batch_size=many\n").unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
        assert!(parse_train_config("alpha\n").is_err());
        assert!(parse_train_config("alpha=2\nalpha=2\n").is_err());
        assert!(parse_generator_config("speeds=1,2\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let c = TrainConfig {
            level_weights: vec![0.5, 1.0, 2.0],
            temporal_kernel: vec![false, true, true, true],
            pairing: Pairing::Tempo,
            seed: 11,
            ..TrainConfig::default()
        };
        assert_eq!(parse_train_config(&render_train_config(&c)).unwrap(), c);
    }
}
