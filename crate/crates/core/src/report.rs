//! Report bundles: plot-ready CSV, JSON summaries and a text digest, written
//! byte-for-byte reproducibly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::Result;

/// One acceptance criterion outcome.
#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub tol: f64,
    #[serde(skip)]
    pub detail: serde_json::Value,
}

impl Criterion {
    pub fn line(&self) -> String {
        format!("[{}] {:>2} {:<28} value={:.6e} tol={:.3e}", if self.pass { "PASS" } else { "FAIL" }, self.id, self.name, self.value, self.tol)
    }
}

/// `{"criteria":[{"id","name","pass","value","tol"}]}`
pub fn criteria_json(cs: &[Criterion]) -> String {
    let v = serde_json::json!({ "criteria": cs });
    serde_json::to_string_pretty(&v).expect("serializable") + "\n"
}

/// Named files collected in memory and written in name order.
#[derive(Clone, Debug, Default)]
pub struct Bundle {
    files: BTreeMap<String, String>,
    digest: Vec<String>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, body: impl Into<String>) {
        self.files.insert(name.into(), body.into());
    }

    pub fn add_json(&mut self, name: impl Into<String>, v: &impl Serialize) {
        let body = serde_json::to_string_pretty(v).expect("serializable") + "\n";
        self.add(name, body);
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.digest.push(line.into());
    }

    pub fn digest(&self) -> String {
        let mut s = String::from("# shl report\n");
        for l in &self.digest {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    pub fn files(&self) -> impl Iterator<Item = (&String, &String)> {
        self.files.iter()
    }

    /// Writes every file plus `digest.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            std::fs::write(dir.join(name), body)?;
        }
        std::fs::write(dir.join("digest.txt"), self.digest())?;
        Ok(())
    }
}

/// Acceptance results as a bundle: `criteria.json`, `details.json`, digest.
pub fn acceptance_bundle(cs: &[Criterion]) -> Bundle {
    let mut b = Bundle::new();
    b.add("criteria.json", criteria_json(cs));
    let details: BTreeMap<String, &serde_json::Value> = cs.iter().map(|c| (format!("{:02}", c.id), &c.detail)).collect();
    b.add_json("details.json", &details);
    for c in cs {
        b.note(c.line());
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_digest_has_header() {
        assert_eq!(Bundle::new().digest(), "# shl report\n");
    }

    #[test]
    fn criteria_schema() {
        let c = Criterion { id: 3, name: "x".into(), pass: true, value: 1e-9, tol: 1e-8, detail: serde_json::Value::Null };
        let v: serde_json::Value = serde_json::from_str(&criteria_json(&[c])).unwrap();
        let row = &v["criteria"][0];
        assert_eq!(row["id"], 3);
        assert_eq!(row["pass"], true);
        assert_eq!(row["tol"], 1e-8);
    }

    #[test]
    fn bundle_writes_sorted_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = Bundle::new();
        b.add("b.csv", "r,mass,nu\n");
        b.add("a.json", "{}\n");
        b.write(dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("b.csv")).unwrap(), "r,mass,nu\n");
        assert!(dir.path().join("digest.txt").exists());
    }
}
