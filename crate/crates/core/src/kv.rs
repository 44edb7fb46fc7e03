//! Line-oriented `key = value` text, shared by the scene, degradation and
//! run configuration files.

use crate::error::{Error, Result};

/// Parses `key = value` lines. Blank lines, `#`/`;` comments and `[section]`
/// headers are skipped; keys are lower-cased with `-` folded to `_`.
pub(crate) fn parse_pairs(text: &str, what: &'static str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') || line.starts_with('[') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::format(what, format!("line {}: expected key = value", n + 1)));
        };
        let key = k.trim().to_ascii_lowercase().replace('-', "_");
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_num<T: std::str::FromStr>(key: &str, v: &str, what: &'static str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::format(what, format!("bad value for {key}: {v:?}")))
}

pub(crate) fn parse_list(key: &str, v: &str, what: &'static str) -> Result<Vec<f64>> {
    v.split(',').map(|p| parse_num(key, p.trim(), what)).collect()
}
