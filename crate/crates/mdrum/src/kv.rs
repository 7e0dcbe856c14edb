//! Flat `key=value` text used for configs, manifests and sidecars.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{AppError, AppResult};

/// Parse `key=value` lines; `#` starts a comment line. Later keys win.
pub fn parse(text: &str) -> AppResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| AppError::Usage(format!("line {}: expected key=value", n + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(AppError::Usage(format!("line {}: empty key", n + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn parse_pair(s: &str) -> AppResult<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| AppError::Usage(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

pub fn parse_value<T: FromStr>(key: &str, v: &str) -> AppResult<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| AppError::Usage(format!("{key}: cannot parse `{v}`: {e}")))
}

pub fn render<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    let mut out = String::new();
    for (k, v) in pairs {
        out.push_str(k.as_ref());
        out.push('=');
        out.push_str(v.as_ref());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_trims() {
        let m = parse("# c\n a = 1 \n\nb=x=y\n").unwrap();
        assert_eq!(m["a"], "1");
        assert_eq!(m["b"], "x=y");
        assert!(parse("novalue").is_err());
    }

    #[test]
    fn render_then_parse() {
        let text = render(&[("seed", "3"), ("lr", "0.001")]);
        assert_eq!(text, "seed=3\nlr=0.001\n");
        assert_eq!(parse(&text).unwrap().len(), 2);
    }
}
