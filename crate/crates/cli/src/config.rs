//! Experiment manifests in TOML: top-level keys are global flags, and keys in
//! `[grid]`, `[current]`, `[weights]`, `[task]` become long flags of the
//! subcommand named by `[task] kind`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

pub const SECTIONS: [&str; 4] = ["grid", "current", "weights", "task"];

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub section: Option<String>,
    pub key: String,
    pub value: String,
}

#[derive(Clone, Debug, Default)]
pub struct Config {
    pub entries: Vec<Entry>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line at or after `from` that assigns `key`.
fn find_key(text: &str, from: usize, key: &str) -> usize {
    text.lines()
        .enumerate()
        .skip(from.saturating_sub(1))
        .find(|(_, l)| l.trim_start().strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')))
        .map(|(i, _)| i + 1)
        .unwrap_or(0)
}

fn scalar(v: &toml::Value) -> Option<String> {
    match v {
        toml::Value::String(s) => Some(s.clone()),
        toml::Value::Integer(i) => Some(i.to_string()),
        toml::Value::Float(f) => Some(format!("{f:?}")),
        toml::Value::Boolean(b) => Some(b.to_string()),
        toml::Value::Array(a) => a.iter().map(scalar).collect::<Option<Vec<_>>>().map(|v| v.join(",")),
        _ => None,
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| line_of(text, s.start)).unwrap_or(0);
            anyhow!("line {line}: {}", e.message())
        })?;
        let mut entries = vec![];
        for (k, v) in &table {
            if let toml::Value::Table(sub) = v {
                let head = text.lines().position(|l| l.trim() == format!("[{k}]")).map(|i| i + 1).unwrap_or(0);
                if !SECTIONS.contains(&k.as_str()) {
                    bail!("line {head}: unknown section [{k}], expected one of {}", SECTIONS.join(", "));
                }
                for (sk, sv) in sub {
                    let line = find_key(text, head, sk);
                    let value = scalar(sv).ok_or_else(|| anyhow!("line {line}: `{sk}` must be a scalar or a flat array"))?;
                    entries.push(Entry { line, section: Some(k.clone()), key: sk.clone(), value });
                }
            } else {
                let line = find_key(text, 1, k);
                let value = scalar(v).ok_or_else(|| anyhow!("line {line}: `{k}` must be a scalar"))?;
                entries.push(Entry { line, section: None, key: k.clone(), value });
            }
        }
        entries.sort_by_key(|e| e.line);
        for (i, e) in entries.iter().enumerate() {
            if let Some(prev) = entries[..i].iter().find(|p| p.key == e.key) {
                bail!("line {}: `{}` already set on line {}", e.line, e.key, prev.line);
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Flag list for the subcommand; `kind` and global keys are left out.
    pub fn task_args(&self) -> Vec<String> {
        let mut out = vec![];
        for e in self.entries.iter().filter(|e| e.section.is_some() && e.key != "kind") {
            out.push(format!("--{}", e.key.replace('_', "-")));
            out.push(e.value.clone());
        }
        out
    }

    /// Global flags from top-level keys.
    pub fn global_args(&self) -> Vec<String> {
        let mut out = vec![];
        for e in self.entries.iter().filter(|e| e.section.is_none()) {
            out.push(format!("--{}", e.key.replace('_', "-")));
            out.push(e.value.clone());
        }
        out
    }

    /// Line of the entry a clap message complains about, if any.
    pub fn blame(&self, msg: &str) -> Option<usize> {
        let names_flag = |flag: &str| {
            msg.match_indices(flag).any(|(i, _)| !msg[i + flag.len()..].starts_with(|c: char| c.is_alphanumeric() || c == '-' || c == '_'))
        };
        self.entries.iter().find(|e| names_flag(&format!("--{}", e.key.replace('_', "-")))).map(|e| e.line)
    }

    /// `*_file` values resolve against `base`; each must exist.
    pub fn resolve_files(&mut self, base: &Path) -> Result<()> {
        for e in &mut self.entries {
            if e.key == "file" || e.key.ends_with("_file") {
                let p = base.join(&e.value);
                if !p.exists() {
                    bail!("line {}: file {} not found", e.line, p.display());
                }
                e.value = p.to_string_lossy().into_owned();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_globals() {
        let c = Config::parse("seed = 3\n# note\n[grid]\nnodes = 33\nhalf_width = 1.0\n[task]\nkind = \"lelong\"\nradii = [0.5, 0.25]\n").unwrap();
        assert_eq!(c.get("nodes").unwrap().line, 4);
        assert_eq!(c.task_args(), vec!["--nodes", "33", "--half-width", "1.0", "--radii", "0.5,0.25"]);
        assert_eq!(c.global_args(), vec!["--seed", "3"]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Config::parse("[grid]\nnodes 33\n").unwrap_err().to_string();
        assert!(e.starts_with("line 2:"), "{e}");
        let e = Config::parse("[grid]\nn = 3\n[bogus]\nx = 1\n").unwrap_err().to_string();
        assert!(e.starts_with("line 3:"), "{e}");
        let e = Config::parse("[grid]\nn = 3\n[task]\nn = 4\n").unwrap_err().to_string();
        assert!(e.starts_with("line 4:"), "{e}");
    }
}
