//! Hidden-variable strategies in the same `key = value` format, one
//! `[strategy]` section each.
//!
//! ```text
//! [strategy]
//! prep_dist = 0.25, 0.75
//! a1 = 1, -0.5
//! a2 = 0.2, 0.9
//! b1 = -1, 0.4
//! b2 = 0.6, -0.3
//! noise = gaussian        # exact | gaussian | two_point, both arms
//! sigma = 2
//! noise2 = two_point      # per-arm override
//! magnitude2 = 3
//! invasiveness = 0.3, -0.1
//! bias1 = 0, 0.2          # miscalibrated detector a1 at the second state
//! ```

use std::path::Path;

use blgi_core::lhv::{LhvStrategy, NoiseModel};

use crate::config::{Document, Entry};
use crate::error::{CliError, CliResult};

#[derive(Default)]
struct NoiseDraft<'a> {
    kind: Option<&'a Entry>,
    sigma: Option<f64>,
    magnitude: Option<f64>,
}

impl NoiseDraft<'_> {
    fn resolve(&self, doc: &Document, fallback: &NoiseDraft, section_line: usize, arm: usize) -> CliResult<NoiseModel> {
        let kind = self.kind.or(fallback.kind);
        let sigma = self.sigma.or(fallback.sigma);
        let magnitude = self.magnitude.or(fallback.magnitude);
        let Some(entry) = kind else {
            return Ok(NoiseModel::Exact);
        };
        match entry.value.as_str() {
            "exact" => Ok(NoiseModel::Exact),
            "gaussian" => Ok(NoiseModel::Gaussian {
                sigma: sigma.ok_or_else(|| missing(doc, section_line, &format!("sigma (or sigma{arm})")))?,
            }),
            "two_point" => Ok(NoiseModel::TwoPoint {
                magnitude: magnitude
                    .ok_or_else(|| missing(doc, section_line, &format!("magnitude (or magnitude{arm})")))?,
            }),
            other => {
                Err(doc
                    .error_at(entry, format!("unknown noise model '{other}' (expected exact, gaussian or two_point)")))
            }
        }
    }
}

fn missing(doc: &Document, line: usize, key: &str) -> CliError {
    CliError::Parse { origin: doc.origin.clone(), line, column: 1, message: format!("strategy is missing '{key}'") }
}

pub fn read_strategies(path: &Path) -> CliResult<Vec<LhvStrategy>> {
    parse_strategies(&Document::read(path)?)
}

/// Every `[strategy]` section, checked for structure. Calibration is left to
/// the caller so that miscalibrated detectors can still be reported.
pub fn parse_strategies(doc: &Document) -> CliResult<Vec<LhvStrategy>> {
    let mut out = Vec::new();
    for section in &doc.sections {
        if section.name != "strategy" {
            return Err(CliError::Parse {
                origin: doc.origin.clone(),
                line: section.line,
                column: 2,
                message: format!("unknown section [{}] (expected [strategy])", section.name),
            });
        }
        let mut lists: [Option<Vec<f64>>; 5] = Default::default();
        let mut bias: [Vec<f64>; 2] = Default::default();
        let mut invasiveness = [0.0; 2];
        let mut noise: [NoiseDraft; 3] = Default::default();
        for e in &section.entries {
            let key = e.key.as_str();
            match key {
                "prep_dist" | "a1" | "a2" | "b1" | "b2" => {
                    let k = ["prep_dist", "a1", "a2", "b1", "b2"].iter().position(|n| *n == key).unwrap_or(0);
                    lists[k] = Some(doc.parse_list(e)?);
                }
                "bias1" => bias[0] = doc.parse_list(e)?,
                "bias2" => bias[1] = doc.parse_list(e)?,
                "invasiveness" => {
                    let v = doc.parse_list(e)?;
                    invasiveness = match v.as_slice() {
                        [g] => [*g, *g],
                        [g1, g2] => [*g1, *g2],
                        _ => return Err(doc.error_at(e, "invasiveness takes one or two gains")),
                    };
                }
                _ => {
                    let (base, slot) = match key.strip_suffix('1') {
                        Some(b) => (b, 1),
                        None => match key.strip_suffix('2') {
                            Some(b) => (b, 2),
                            None => (key, 0),
                        },
                    };
                    let draft = &mut noise[slot];
                    match base {
                        "noise" => draft.kind = Some(e),
                        "sigma" => draft.sigma = Some(doc.parse_f64(e)?),
                        "magnitude" => draft.magnitude = Some(doc.parse_f64(e)?),
                        _ => return Err(doc.error_at(e, format!("unknown key '{key}' in [strategy]"))),
                    }
                }
            }
        }
        let [prep_dist, a1, a2, b1, b2] = lists;
        let need = |v: Option<Vec<f64>>, key: &str| v.ok_or_else(|| missing(doc, section.line, key));
        let [both, arm1, arm2] = &noise;
        let strategy = LhvStrategy {
            prep_dist: need(prep_dist, "prep_dist")?,
            a1: need(a1, "a1")?,
            a2: need(a2, "a2")?,
            b1: need(b1, "b1")?,
            b2: need(b2, "b2")?,
            noise: [arm1.resolve(doc, both, section.line, 1)?, arm2.resolve(doc, both, section.line, 2)?],
            invasiveness,
            bias,
        };
        strategy.validate_structure().map_err(|e| {
            CliError::Usage(format!(
                "{}: strategy starting on line {}: {}",
                doc.origin,
                section.line,
                CliError::from(e)
            ))
        })?;
        out.push(strategy);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{}: no [strategy] sections found", doc.origin)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<Vec<LhvStrategy>> {
        parse_strategies(&Document::parse(text, "s.ini")?)
    }

    const BASE: &str =
        "[strategy]\nprep_dist = 0.25, 0.75\na1 = 1, -0.5\na2 = 0.2, 0.9\nb1 = -1, 0.4\nb2 = 0.6, -0.3\n";

    #[test]
    fn noise_keys_resolve_per_arm() {
        let text = format!("{BASE}noise = gaussian\nsigma = 2\nnoise2 = two_point\nmagnitude2 = 3\ninvasiveness = 0.3, -0.1\nbias1 = 0, 0.2\n");
        let s = &parse(&text).unwrap()[0];
        assert_eq!(s.noise, [NoiseModel::Gaussian { sigma: 2.0 }, NoiseModel::TwoPoint { magnitude: 3.0 }]);
        assert_eq!(s.invasiveness, [0.3, -0.1]);
        assert_eq!(s.bias[0], vec![0.0, 0.2]);
        assert!(s.bias[1].is_empty());
        assert!(s.validate().is_err());
        assert!(s.validate_structure().is_ok());
    }

    #[test]
    fn several_strategies() {
        let text = format!("{BASE}\n{BASE}noise = exact\n");
        let v = parse(&text).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].noise, [NoiseModel::Exact; 2]);
    }

    #[test]
    fn invariant_violations_name_the_invariant() {
        let text = BASE.replace("0.25, 0.75", "0.25, 0.65");
        let msg = parse(&text).unwrap_err().to_string();
        assert!(msg.contains("prep_dist sums to"), "{msg}");
        let text = BASE.replace("a2 = 0.2, 0.9", "a2 = 0.2, 1.9");
        assert!(parse(&text).unwrap_err().to_string().contains("a2[1]"));
    }

    #[test]
    fn structural_errors() {
        assert!(parse("").is_err());
        let msg = parse(&BASE.replace("b2 = 0.6, -0.3\n", "")).unwrap_err().to_string();
        assert!(msg.contains("missing 'b2'"), "{msg}");
        let msg = parse(&format!("{BASE}noise = gaussian\n")).unwrap_err().to_string();
        assert!(msg.contains("sigma"), "{msg}");
        let msg = parse(&format!("{BASE}noise = cauchy\n")).unwrap_err().to_string();
        assert!(msg.contains("s.ini:7:9"), "{msg}");
        assert!(parse(&format!("{BASE}colour = 1\n")).is_err());
        assert!(parse("[strat]\n").is_err());
    }
}
