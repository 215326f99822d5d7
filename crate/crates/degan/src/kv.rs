//! `key = value` text records.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{format_error, Result};

pub fn render(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

pub fn parse(path: &Path, text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format_error(path, format!("line {}: expected 'key = value'", i + 1)));
        };
        if out.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(format_error(path, format!("line {}: duplicate key '{}'", i + 1, k.trim())));
        }
    }
    Ok(out)
}

pub fn get<'a>(path: &Path, map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key).map(String::as_str).ok_or_else(|| format_error(path, format!("missing key '{key}'")))
}

pub fn get_parsed<T: std::str::FromStr>(path: &Path, map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = get(path, map, key)?;
    v.parse().map_err(|_| format_error(path, format!("invalid value '{v}' for '{key}'")))
}
