//! Flat `key = value` parameter files.
//!
//! ```text
//! # two-type model
//! d = 2
//! theta = 1.0
//! P = 0.9, 0.1, 0.2, 0.8
//! gamma = 0, 0
//! ```
//!
//! Keys are `d`, `theta`, `P` (row-major, comma separated) and `gamma`.
//! Lines starting with `#` and blank lines are ignored.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::output::fmt_f64;
use crate::params::{ModelParams, RawParams, ValidationReport};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("missing key {0:?}")]
    MissingKey(&'static str),
    #[error("key {key:?}: cannot parse {value:?} as a number")]
    BadNumber { key: String, value: String },
    #[error(transparent)]
    Invalid(#[from] ValidationReport),
}

const KEYS: [&str; 4] = ["d", "theta", "P", "gamma"];

pub fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| ConfigError::BadNumber { key: key.into(), value: s.into() })
        })
        .collect()
}

pub fn parse_raw(text: &str) -> Result<RawParams, ConfigError> {
    let mut entries = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line, text: raw.into() })?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey { line, key: key.into() });
        }
        if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(ConfigError::DuplicateKey { line, key: key.into() });
        }
    }
    let get = |key: &'static str| entries.get(key).ok_or(ConfigError::MissingKey(key));
    let d_text = get("d")?;
    let d = d_text
        .parse::<usize>()
        .map_err(|_| ConfigError::BadNumber { key: "d".into(), value: d_text.clone() })?;
    let theta_text = get("theta")?;
    let theta = theta_text
        .parse::<f64>()
        .map_err(|_| ConfigError::BadNumber { key: "theta".into(), value: theta_text.clone() })?;
    let p = parse_list("P", get("P")?)?;
    let gamma = parse_list("gamma", get("gamma")?)?;
    Ok(RawParams { d, theta, p, gamma })
}

pub fn parse_params(text: &str) -> Result<ModelParams, ConfigError> {
    Ok(ModelParams::validate(parse_raw(text)?)?)
}

pub fn to_config_text(params: &ModelParams) -> String {
    let join = |v: &[f64]| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(", ");
    format!(
        "d = {}\ntheta = {}\nP = {}\ngamma = {}\n",
        params.dim(),
        fmt_f64(params.theta()),
        join(params.mutation_matrix()),
        join(params.gamma())
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "# two types\nd = 2\ntheta = 1.0\nP = 0.9, 0.1, 0.2, 0.8\n\ngamma = 0, -0.5\n";

    #[test]
    fn parses_sample_config() {
        let m = parse_params(SAMPLE).unwrap();
        assert_eq!(m.dim(), 2);
        assert_eq!(m.p(1, 0), 0.2);
        assert_eq!(m.gamma(), &[0.0, -0.5]);
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = parse_params(SAMPLE).unwrap();
        let again = parse_params(&to_config_text(&m)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn reports_problems() {
        assert!(matches!(parse_raw("d 2"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_raw("q = 1"), Err(ConfigError::UnknownKey { .. })));
        assert!(matches!(parse_raw("d = 2\nd = 3"), Err(ConfigError::DuplicateKey { line: 2, .. })));
        assert!(matches!(parse_raw("d = 2"), Err(ConfigError::MissingKey("theta"))));
        assert!(matches!(
            parse_raw("d = 2\ntheta = x\nP = 1\ngamma = 0"),
            Err(ConfigError::BadNumber { .. })
        ));
        let reducible = "d = 2\ntheta = 1\nP = 1, 0, 0, 1\ngamma = 0, 0";
        assert!(matches!(parse_params(reducible), Err(ConfigError::Invalid(_))));
    }
}
