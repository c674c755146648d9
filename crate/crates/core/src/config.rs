//! `key=value` configuration files for post-processing and gating.

use crate::error::{Error, Result};
use crate::gating::GatingConfig;
use crate::post::PostConfig;

/// Non-empty, non-comment lines split at the first `=`, with line numbers.
pub fn kv_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected key=value, got `{line}`") })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn value<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse { line, msg: format!("bad value `{v}` for `{key}`") })
}

fn unknown(line: usize, key: &str) -> Error {
    Error::Parse { line, msg: format!("unknown key `{key}`") }
}

impl PostConfig {
    /// Keys: `th_qt`, `th_mtt` (`inf` allowed), `max_tree_depth`,
    /// `max_splits` (`none` for no cap), `node_budget`.
    pub fn apply_config(mut self, text: &str) -> Result<Self> {
        for (line, k, v) in kv_pairs(text)? {
            match k.as_str() {
                "th_qt" => self.th_qt = if v == "inf" { usize::MAX } else { value(line, &k, &v)? },
                "th_mtt" => self.th_mtt = value(line, &k, &v)?,
                "max_tree_depth" => self.max_tree_depth = value(line, &k, &v)?,
                "max_splits" => self.max_splits = if v == "none" { None } else { Some(value(line, &k, &v)?) },
                "node_budget" => self.node_budget = value(line, &k, &v)?,
                _ => return Err(unknown(line, &k)),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

impl GatingConfig {
    /// Keys: `level`, `th1`, `th2`, `d_max`.
    pub fn apply_config(mut self, text: &str) -> Result<Self> {
        for (line, k, v) in kv_pairs(text)? {
            match k.as_str() {
                "level" => self.level = value(line, &k, &v)?,
                "th1" => self.th1 = value(line, &k, &v)?,
                "th2" => self.th2 = value(line, &k, &v)?,
                "d_max" => self.d_max = value(line, &k, &v)?,
                _ => return Err(unknown(line, &k)),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn post_keys() {
        let c = PostConfig::default().apply_config("th_qt=3\n# c\nth_mtt = inf\nmax_splits=none\n").unwrap();
        assert_eq!(c.th_qt, 3);
        assert!(c.th_mtt.is_infinite());
        assert!(matches!(PostConfig::default().apply_config("\nfoo=1"), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn gating_keys() {
        let c = GatingConfig::default().apply_config("level=1\nth1=0\nth2=1").unwrap();
        assert_eq!((c.level, c.th1, c.th2), (1, 0.0, 1.0));
        assert!(GatingConfig::default().apply_config("th1=0.95").is_err());
    }
}
