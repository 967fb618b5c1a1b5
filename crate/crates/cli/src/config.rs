//! Plain-text configuration files: `key = value` lines under `[section]`
//! headers, merged with command-line overrides. Every run writes the fully
//! resolved settings next to its outputs.

use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Default)]
pub struct RunConfig {
    /// Values from the config file, keyed as "section.key".
    file: BTreeMap<String, String>,
    /// Every setting a command actually used, with its effective value.
    resolved: std::cell::RefCell<BTreeMap<String, String>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, String> {
        let mut file = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
            let mut section = String::new();
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                    continue;
                }
                if line.starts_with('[') && line.ends_with(']') {
                    section = line[1..line.len() - 1].trim().to_string();
                    continue;
                }
                let Some((key, value)) = line.split_once('=') else {
                    return Err(format!(
                        "{}:{}: expected `key = value`, got `{raw}`",
                        path.display(),
                        lineno + 1
                    ));
                };
                let full = if section.is_empty() {
                    key.trim().to_string()
                } else {
                    format!("{section}.{}", key.trim())
                };
                file.insert(full, value.trim().to_string());
            }
        }
        Ok(RunConfig {
            file,
            resolved: Default::default(),
        })
    }

    /// Resolve a setting: CLI override wins, then the config file, then the
    /// default. Records the effective value for provenance.
    pub fn resolve<T: std::fmt::Display + Clone + std::str::FromStr>(
        &self,
        key: &str,
        cli: Option<T>,
        default: T,
    ) -> Result<T, String> {
        let value = if let Some(v) = cli {
            v
        } else if let Some(raw) = self.file.get(key) {
            raw.parse::<T>()
                .map_err(|_| format!("config key {key}: cannot parse `{raw}`"))?
        } else {
            default
        };
        self.record(key, &value);
        Ok(value)
    }

    pub fn record<T: std::fmt::Display>(&self, key: &str, value: &T) {
        self.resolved
            .borrow_mut()
            .insert(key.to_string(), value.to_string());
    }

    /// The provenance document: one `key = value` line per resolved setting,
    /// sorted by key.
    pub fn provenance(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.resolved.borrow().iter() {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    pub fn write_provenance(&self, out_dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("resolved_config.txt"), self.provenance())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_overrides() {
        let dir = std::env::temp_dir().join("nlsq_cli_config_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.txt");
        std::fs::write(&path, "# comment\n[train]\nouter_steps = 123\n[eval]\nn_test= 7\n").unwrap();
        let config = RunConfig::load(Some(&path)).unwrap();
        assert_eq!(
            config.resolve::<usize>("train.outer_steps", None, 5).unwrap(),
            123
        );
        assert_eq!(config.resolve::<usize>("eval.n_test", Some(9), 5).unwrap(), 9);
        assert_eq!(config.resolve::<usize>("eval.missing", None, 5).unwrap(), 5);
        let prov = config.provenance();
        assert!(prov.contains("train.outer_steps = 123"));
        assert!(prov.contains("eval.n_test = 9"));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn rejects_malformed_lines() {
        let dir = std::env::temp_dir().join("nlsq_cli_config_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.txt");
        std::fs::write(&path, "[x]\nnot a pair\n").unwrap();
        assert!(RunConfig::load(Some(&path)).is_err());
        std::fs::remove_file(&path).ok();
    }
}
