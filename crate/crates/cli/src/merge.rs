//! Merging JSON reports into a pass/fail matrix keyed by (suite, algebra, seed, entry).

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub suite: String,
    pub algebra: String,
    pub seed: Option<u64>,
    pub name: String,
    pub pass: bool,
    pub residual: Option<f64>,
    pub scale: Option<f64>,
    pub tolerance: Option<f64>,
}

impl Row {
    fn key(&self) -> (String, String, Option<u64>, String) {
        (self.suite.clone(), self.algebra.clone(), self.seed, self.name.clone())
    }
}

#[derive(Debug, Default)]
pub struct Matrix {
    pub rows: Vec<Row>,
    pub warnings: Vec<String>,
}

fn malformed(path: &Path, what: &str) -> CliError {
    CliError::Config(format!("{}: {what}", path.display()))
}

/// Rows of one report file.
pub fn parse_report(path: &Path, text: &str) -> Result<Vec<Row>, CliError> {
    let v: Value = serde_json::from_str(text).map_err(|e| malformed(path, &e.to_string()))?;
    let suite = v["suite"].as_str().ok_or_else(|| malformed(path, "missing `suite`"))?;
    let algebra = v["algebra"].as_str().unwrap_or_default();
    let seed = v["seed"].as_u64();
    let entries = v["entries"].as_array().ok_or_else(|| malformed(path, "missing `entries` array"))?;
    entries
        .iter()
        .map(|e| {
            let name = e["name"].as_str().ok_or_else(|| malformed(path, "entry without `name`"))?;
            let pass = e["pass"].as_bool().ok_or_else(|| malformed(path, "entry without `pass`"))?;
            let entry_alg = e["algebra"].as_str().filter(|s| !s.is_empty());
            Ok(Row {
                suite: suite.to_string(),
                algebra: entry_alg.unwrap_or(algebra).to_string(),
                seed: e["seed"].as_u64().or(seed),
                name: name.to_string(),
                pass,
                residual: e["residual"].as_f64(),
                scale: e["scale"].as_f64(),
                tolerance: e["tolerance"].as_f64(),
            })
        })
        .collect()
}

/// Later files win on duplicate keys; each replacement leaves a warning.
pub fn merge(paths: &[impl AsRef<Path>]) -> Result<Matrix, CliError> {
    let mut m = Matrix::default();
    let mut index: HashMap<(String, String, Option<u64>, String), usize> = HashMap::new();
    for p in paths {
        let p = p.as_ref();
        let text = std::fs::read_to_string(p).map_err(|e| malformed(p, &e.to_string()))?;
        for row in parse_report(p, &text)? {
            let key = row.key();
            match index.get(&key) {
                Some(&i) => {
                    if m.rows[i] != row {
                        m.warnings.push(format!(
                            "warning: duplicate key ({}, {}, {}, {}) in {}; keeping the later value",
                            key.0,
                            key.1,
                            key.2.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                            key.3,
                            p.display()
                        ));
                    }
                    m.rows[i] = row;
                }
                None => {
                    index.insert(key, m.rows.len());
                    m.rows.push(row);
                }
            }
        }
    }
    Ok(m)
}

impl Matrix {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn write_csv(&self, w: impl std::io::Write) -> Result<(), CliError> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        if self.rows.is_empty() {
            out.write_record(["suite", "algebra", "seed", "name", "pass", "residual", "scale", "tolerance"])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s += &format!(
                "{} {:<18} {:<10} {:>6} {} residual {}\n",
                if r.pass { "PASS" } else { "FAIL" },
                r.suite,
                r.algebra,
                r.seed.map(|x| x.to_string()).unwrap_or_else(|| "-".into()),
                r.name,
                r.residual.map(|x| format!("{x:.3e}")).unwrap_or_else(|| "-".into()),
            );
        }
        let fails = self.rows.iter().filter(|r| !r.pass).count();
        s += &format!("{} rows, {fails} failing\n", self.rows.len());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(suite: &str, seed: u64, entries: &[(&str, bool, f64)]) -> String {
        let es: Vec<Value> = entries
            .iter()
            .map(|(n, p, r)| serde_json::json!({"name": n, "pass": p, "residual": r, "scale": 1.0, "tolerance": 1e-10, "algebra": "su2", "seed": seed}))
            .collect();
        serde_json::json!({"suite": suite, "algebra": "su2", "seed": seed, "entries": es}).to_string()
    }

    #[test]
    fn rows_add_and_duplicates_last_win() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        std::fs::write(&a, report("s", 1, &[("x", true, 0.0), ("y", true, 0.0)])).unwrap();
        std::fs::write(&b, report("s", 2, &[("x", false, 1.0)])).unwrap();
        let m = merge(&[&a, &b]).unwrap();
        assert_eq!(m.rows.len(), 3);
        assert!(m.warnings.is_empty() && !m.all_pass());
        std::fs::write(&b, report("s", 1, &[("x", false, 1.0)])).unwrap();
        let m = merge(&[&a, &b]).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.warnings.len(), 1);
        assert!(!m.rows[0].pass);
    }

    #[test]
    fn empty_and_malformed() {
        let none: [&Path; 0] = [];
        let m = merge(&none).unwrap();
        assert!(m.rows.is_empty() && m.all_pass());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, r#"{"entries": []}"#).unwrap();
        assert!(matches!(merge(&[&p]), Err(CliError::Config(_))));
        std::fs::write(&p, "not json").unwrap();
        assert!(matches!(merge(&[&p]), Err(CliError::Config(_))));
    }

    #[test]
    fn csv_header_and_rows() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.json");
        std::fs::write(&a, report("s", 1, &[("x, quoted", true, 0.5)])).unwrap();
        let mut buf = Vec::new();
        merge(&[&a]).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "suite,algebra,seed,name,pass,residual,scale,tolerance");
        assert!(lines.next().unwrap().contains("\"x, quoted\""));
    }
}
