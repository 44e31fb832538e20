//! Flat `key = value` files with `[section]` headers.
//!
//! ```text
//! # both arms unless [meter1] / [meter2] say otherwise
//! [meter]
//! type = gaussian
//! sigma = 2.5
//!
//! [b]
//! v = 0.9
//!
//! [run]
//! shots = 1000000
//! seed = 7
//! ```

use std::collections::HashSet;
use std::path::Path;

use blgi_core::measurement::{AncillaMeterSpec, GaussianMeterSpec, MeterSpec, ProjectiveMeterSpec};
use blgi_core::protocol::{Angles, ExperimentConfig, DEFAULT_SEED, DEFAULT_SHOTS};

use crate::error::{CliError, CliResult};

pub const SEED_ENV: &str = "BLGI_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
    /// 1-based column where the value starts.
    pub column: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

/// Parsed file plus its name for error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub origin: String,
    pub sections: Vec<Section>,
}

impl Document {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let err = |line: usize, column: usize, message: String| CliError::Parse {
            origin: origin.to_string(),
            line,
            column,
            message,
        };
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = match raw.find(['#', ';']) {
                Some(p) => &raw[..p],
                None => raw,
            };
            let indent = content.len() - content.trim_start().len();
            let trimmed = content.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(err(
                        line,
                        indent + trimmed.len() + 1,
                        "expected ']' to close the section header".into(),
                    ));
                };
                let name = name.trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(err(line, indent + 2, format!("invalid section name '{name}'")));
                }
                sections.push(Section { name: name.to_string(), line, entries: Vec::new() });
                continue;
            }
            let Some(eq) = content.find('=') else {
                return Err(err(line, indent + 1, "expected 'key = value'".into()));
            };
            let key = content[..eq].trim();
            if key.is_empty() {
                return Err(err(line, indent + 1, "missing key before '='".into()));
            }
            let after = &content[eq + 1..];
            let value = after.trim();
            if value.is_empty() {
                return Err(err(line, eq + 2, format!("missing value for '{key}'")));
            }
            let column = eq + 2 + (after.len() - after.trim_start().len());
            let Some(section) = sections.last_mut() else {
                return Err(err(line, indent + 1, "entry appears before any [section] header".into()));
            };
            if let Some(prev) = section.entries.iter().find(|e| e.key == key) {
                return Err(err(line, indent + 1, format!("duplicate key '{key}' (first set on line {})", prev.line)));
            }
            section.entries.push(Entry { key: key.to_string(), value: value.to_string(), line, column });
        }
        Ok(Document { origin: origin.to_string(), sections })
    }

    pub fn error_at(&self, entry: &Entry, message: impl Into<String>) -> CliError {
        CliError::Parse { origin: self.origin.clone(), line: entry.line, column: entry.column, message: message.into() }
    }

    pub fn parse_f64(&self, entry: &Entry) -> CliResult<f64> {
        let x: f64 = entry
            .value
            .parse()
            .map_err(|_| self.error_at(entry, format!("'{}' expects a number, got '{}'", entry.key, entry.value)))?;
        if !x.is_finite() {
            return Err(self.error_at(entry, format!("'{}' must be finite", entry.key)));
        }
        Ok(x)
    }

    pub fn parse_u64(&self, entry: &Entry) -> CliResult<u64> {
        entry.value.parse().map_err(|_| {
            self.error_at(entry, format!("'{}' expects a non-negative integer, got '{}'", entry.key, entry.value))
        })
    }

    pub fn parse_list(&self, entry: &Entry) -> CliResult<Vec<f64>> {
        entry
            .value
            .split(',')
            .map(|item| {
                let item = item.trim();
                item.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    self.error_at(entry, format!("'{}' expects a list of numbers, got '{item}'", entry.key))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeterKind {
    Gaussian,
    Ancilla,
}

impl std::str::FromStr for MeterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gaussian" => Ok(MeterKind::Gaussian),
            "ancilla" => Ok(MeterKind::Ancilla),
            other => Err(format!("unknown meter type '{other}' (expected gaussian or ancilla)")),
        }
    }
}

/// Partially specified weak meter; unset fields take defaults at resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeterDraft {
    pub kind: Option<MeterKind>,
    pub sigma: Option<f64>,
    pub eta: Option<f64>,
    pub v_total: Option<f64>,
    pub u: Option<f64>,
}

impl MeterDraft {
    /// Fields set in `other` win.
    pub fn overlay(&mut self, other: &MeterDraft) {
        let current = self.kind.unwrap_or(MeterKind::Gaussian);
        if other.kind.is_some_and(|k| k != current) {
            // switching type drops parameters of the old one
            *self = MeterDraft::default();
        }
        self.kind = other.kind.or(self.kind);
        self.sigma = other.sigma.or(self.sigma);
        self.eta = other.eta.or(self.eta);
        self.v_total = other.v_total.or(self.v_total);
        self.u = other.u.or(self.u);
    }

    fn resolve(&self, name: &str) -> CliResult<MeterSpec> {
        let kind = self.kind.unwrap_or(MeterKind::Gaussian);
        let misplaced =
            |field: &str, kind: &str| CliError::Usage(format!("{name}: '{field}' does not apply to a {kind} meter"));
        match kind {
            MeterKind::Gaussian => {
                if self.v_total.is_some() {
                    return Err(misplaced("v_total", "gaussian"));
                }
                if self.u.is_some() {
                    return Err(misplaced("u", "gaussian"));
                }
                Ok(MeterSpec::Gaussian(GaussianMeterSpec {
                    sigma: self.sigma.unwrap_or(1.0),
                    eta: self.eta.unwrap_or(1.0),
                }))
            }
            MeterKind::Ancilla => {
                if self.sigma.is_some() {
                    return Err(misplaced("sigma", "ancilla"));
                }
                if self.eta.is_some() {
                    return Err(misplaced("eta", "ancilla"));
                }
                Ok(MeterSpec::Ancilla(AncillaMeterSpec {
                    v_total: self.v_total.unwrap_or(1.0),
                    u: self.u.unwrap_or(1.0),
                }))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AngleDraft {
    pub a1: Option<f64>,
    pub a2: Option<f64>,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
}

/// Experiment settings gathered from a file and from flags.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExperimentDraft {
    pub meters: [MeterDraft; 2],
    pub v: Option<f64>,
    pub angles: AngleDraft,
    pub shots: Option<u64>,
    pub seed: Option<u64>,
}

impl ExperimentDraft {
    pub fn from_document(doc: &Document) -> CliResult<Self> {
        let mut draft = ExperimentDraft::default();
        let mut both = MeterDraft::default();
        let mut per_arm = [MeterDraft::default(); 2];
        let mut seen = HashSet::new();
        for section in &doc.sections {
            if !seen.insert(section.name.as_str()) {
                return Err(CliError::Parse {
                    origin: doc.origin.clone(),
                    line: section.line,
                    column: 1,
                    message: format!("section [{}] appears twice", section.name),
                });
            }
            let target = match section.name.as_str() {
                "meter" => Some(&mut both),
                "meter1" => Some(&mut per_arm[0]),
                "meter2" => Some(&mut per_arm[1]),
                _ => None,
            };
            if let Some(meter) = target {
                for e in &section.entries {
                    match e.key.as_str() {
                        "type" => meter.kind = Some(e.value.parse().map_err(|m: String| doc.error_at(e, m))?),
                        "sigma" => meter.sigma = Some(doc.parse_f64(e)?),
                        "eta" => meter.eta = Some(doc.parse_f64(e)?),
                        "v_total" => meter.v_total = Some(doc.parse_f64(e)?),
                        "u" => meter.u = Some(doc.parse_f64(e)?),
                        _ => return Err(unknown_key(doc, e, &section.name)),
                    }
                }
                continue;
            }
            if !matches!(section.name.as_str(), "b" | "angles" | "run") {
                return Err(CliError::Parse {
                    origin: doc.origin.clone(),
                    line: section.line,
                    column: 2,
                    message: format!(
                        "unknown section [{}] (expected meter, meter1, meter2, b, angles or run)",
                        section.name
                    ),
                });
            }
            for e in &section.entries {
                match (section.name.as_str(), e.key.as_str()) {
                    ("b", "v") => draft.v = Some(doc.parse_f64(e)?),
                    ("angles", "a1") => draft.angles.a1 = Some(doc.parse_f64(e)?),
                    ("angles", "a2") => draft.angles.a2 = Some(doc.parse_f64(e)?),
                    ("angles", "b1") => draft.angles.b1 = Some(doc.parse_f64(e)?),
                    ("angles", "b2") => draft.angles.b2 = Some(doc.parse_f64(e)?),
                    ("run", "shots") => draft.shots = Some(doc.parse_u64(e)?),
                    ("run", "seed") => draft.seed = Some(doc.parse_u64(e)?),
                    _ => return Err(unknown_key(doc, e, &section.name)),
                }
            }
        }
        for (k, arm) in per_arm.iter().enumerate() {
            draft.meters[k] = both;
            draft.meters[k].overlay(arm);
        }
        Ok(draft)
    }

    /// Fields set in `other` win.
    pub fn overlay(&mut self, other: &ExperimentDraft) {
        for k in 0..2 {
            self.meters[k].overlay(&other.meters[k]);
        }
        self.v = other.v.or(self.v);
        self.angles.a1 = other.angles.a1.or(self.angles.a1);
        self.angles.a2 = other.angles.a2.or(self.angles.a2);
        self.angles.b1 = other.angles.b1.or(self.angles.b1);
        self.angles.b2 = other.angles.b2.or(self.angles.b2);
        self.shots = other.shots.or(self.shots);
        self.seed = other.seed.or(self.seed);
    }

    /// Fills defaults and validates; `seed` is the already resolved seed.
    pub fn resolve(&self, seed: u64) -> CliResult<ExperimentConfig> {
        let d = Angles::CHSH;
        let config = ExperimentConfig {
            meter1: self.meters[0].resolve("meter1")?,
            meter2: self.meters[1].resolve("meter2")?,
            readout: ProjectiveMeterSpec { v: self.v.unwrap_or(1.0) },
            angles: Angles {
                a1: self.angles.a1.unwrap_or(d.a1),
                a2: self.angles.a2.unwrap_or(d.a2),
                b1: self.angles.b1.unwrap_or(d.b1),
                b2: self.angles.b2.unwrap_or(d.b2),
            },
            shots: self.shots.unwrap_or(DEFAULT_SHOTS),
            seed,
        };
        config.validate()?;
        Ok(config)
    }
}

fn unknown_key(doc: &Document, e: &Entry, section: &str) -> CliError {
    CliError::Parse {
        origin: doc.origin.clone(),
        line: e.line,
        column: 1,
        message: format!("unknown key '{}' in [{section}]", e.key),
    }
}

/// Seed precedence: flag, then the environment variable, then the file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(raw) = env {
        return raw
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned 64-bit integer, got '{raw}'")));
    }
    Ok(file.unwrap_or(DEFAULT_SEED))
}
