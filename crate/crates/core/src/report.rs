//! JSON-lines report records and baseline files.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::certify::Certificate;
use crate::error::{LabError, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const BASELINE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRecord {
    pub schema_version: u32,
    pub action: String,
    pub name: String,
    /// Distinguishes records of one run (contrast, β, ...).
    pub label: String,
    pub inputs_hash: String,
    pub grid_hash: String,
    pub problem_hash: Option<String>,
    pub pass: bool,
    pub payload: Value,
    /// Omitted in reproducible mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    pub artifacts: Vec<String>,
}

impl ReportRecord {
    pub fn key(&self) -> String {
        format!("{}#{}", self.inputs_hash, self.label)
    }

    /// Checks that the payload has the shape its action implies.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != REPORT_SCHEMA_VERSION {
            return Err(LabError::Schema(format!("report schema version {}", self.schema_version)));
        }
        if !self.payload.is_object() {
            return Err(LabError::Schema(format!("{}: payload must be an object", self.action)));
        }
        let needs_certificate = self.action.starts_with("certify.") && self.action != "certify.trend"
            || self.action == "widder.roundtrip";
        if needs_certificate {
            let cert = self
                .payload
                .get("certificate")
                .ok_or_else(|| LabError::Schema(format!("{}: payload lacks a certificate", self.action)))?;
            serde_json::from_value::<Certificate>(cert.clone())
                .map_err(|e| LabError::Schema(format!("{}: malformed certificate: {e}", self.action)))?;
        }
        let known = ["solve", "validate_structure", "kernel", "ck_check", "gaussian_fit", "green"];
        if !(known.contains(&self.action.as_str()) || self.action.starts_with("certify.") || self.action.starts_with("widder.")) {
            return Err(LabError::Schema(format!("unknown action tag {}", self.action)));
        }
        Ok(())
    }
}

pub fn append_records(path: &Path, records: &[ReportRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    for r in records {
        writeln!(file, "{}", serde_json::to_string(r)?)?;
    }
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ReportRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReportRecord =
            serde_json::from_str(line).map_err(|e| LabError::Schema(format!("{} line {}: {e}", path.display(), i + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Every finite numeric leaf of the payload, keyed by its dotted path.
/// Numeric arrays longer than 16 entries are skipped.
pub fn numeric_constants(payload: &Value) -> BTreeMap<String, f64> {
    fn walk(v: &Value, path: &str, out: &mut BTreeMap<String, f64>) {
        match v {
            Value::Number(n) => {
                if let Some(x) = n.as_f64() {
                    if x.is_finite() {
                        out.insert(path.to_string(), x);
                    }
                }
            }
            Value::Object(map) => {
                for (k, child) in map {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    walk(child, &p, out);
                }
            }
            Value::Array(items) if items.len() <= 16 => {
                for (i, child) in items.iter().enumerate() {
                    walk(child, &format!("{path}[{i}]"), out);
                }
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    walk(payload, "", &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub action: String,
    pub pass: bool,
    pub constants: BTreeMap<String, f64>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineFile {
    pub schema_version: u32,
    pub entries: BTreeMap<String, BaselineEntry>,
}

impl BaselineFile {
    pub fn empty() -> Self {
        Self {
            schema_version: BASELINE_SCHEMA_VERSION,
            entries: BTreeMap::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b: Self = serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| LabError::Schema(format!("{}: {e}", path.display())))?;
        if b.schema_version != BASELINE_SCHEMA_VERSION {
            return Err(LabError::Schema(format!("baseline schema version {}", b.schema_version)));
        }
        Ok(b)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn record(&mut self, records: &[ReportRecord], tolerance: f64) {
        for r in records {
            self.entries.insert(
                r.key(),
                BaselineEntry {
                    action: r.action.clone(),
                    pass: r.pass,
                    constants: numeric_constants(&r.payload),
                    tolerance,
                },
            );
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantDiff {
    pub name: String,
    pub baseline: f64,
    pub current: Option<f64>,
    pub relative: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub key: String,
    pub pass: bool,
    pub diffs: Vec<ConstantDiff>,
}

pub fn compare_baseline(records: &[ReportRecord], baseline: &BaselineFile) -> Result<Vec<BaselineComparison>> {
    let mut out = Vec::new();
    for r in records {
        let key = r.key();
        let entry = baseline.entries.get(&key).ok_or_else(|| {
            LabError::Baseline(format!(
                "no baseline for {key} ({}); record one with `parlab baseline record --report <report.jsonl> --baseline <file>`",
                r.action
            ))
        })?;
        let current = numeric_constants(&r.payload);
        let mut diffs = Vec::new();
        let mut pass = entry.pass == r.pass;
        for (name, &base) in &entry.constants {
            let cur = current.get(name).copied();
            let (relative, ok) = match cur {
                Some(c) => {
                    let d = (c - base).abs();
                    let scale = c.abs().max(base.abs());
                    let rel = if scale > 0.0 { d / scale } else { 0.0 };
                    (rel, d <= entry.tolerance * scale + 1e-300)
                }
                None => (f64::INFINITY, false),
            };
            pass &= ok;
            diffs.push(ConstantDiff {
                name: name.clone(),
                baseline: base,
                current: cur,
                relative: if relative.is_finite() { relative } else { f64::MAX },
                ok,
            });
        }
        out.push(BaselineComparison { key, pass, diffs });
    }
    Ok(out)
}
