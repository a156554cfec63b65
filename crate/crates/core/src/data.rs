//! Multi-system observation sets and their CSV form.
//!
//! CSV layout: header `system_id,k,t,<features...>[,c_star]`, one row per
//! sample, floats written with 17 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::diffnet::format_f64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("dataset has no systems")]
    Empty,
    #[error("system {system}: {msg}")]
    System { system: usize, msg: String },
    #[error("csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("feature columns {found:?} do not match expected {expected:?}")]
    Schema { expected: Vec<String>, found: Vec<String> },
}

/// One observed system: sample times, observation vectors and optional
/// ground-truth control objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSeries {
    pub id: usize,
    pub times: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub c_star: Option<Vec<f64>>,
}

impl SystemSeries {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObservationSet {
    pub feature_names: Vec<String>,
    pub systems: Vec<SystemSeries>,
    /// Generator id, parameters and flags, in manifest order.
    pub metadata: BTreeMap<String, String>,
}

impl ObservationSet {
    pub fn obs_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn has_ground_truth(&self) -> bool {
        !self.systems.is_empty() && self.systems.iter().all(|s| s.c_star.is_some())
    }

    pub fn total_samples(&self) -> usize {
        self.systems.iter().map(|s| s.len()).sum()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.systems.is_empty() {
            return Err(DataError::Empty);
        }
        let m = self.obs_dim();
        for s in &self.systems {
            let err = |msg: String| DataError::System { system: s.id, msg };
            if s.times.len() != s.obs.len() {
                return Err(err("times and observations differ in length".into()));
            }
            if s.times.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(err("sample times must be strictly increasing".into()));
            }
            if let Some(bad) = s.obs.iter().position(|z| z.len() != m) {
                return Err(err(format!("sample {bad} has {} components, expected {m}", s.obs[bad].len())));
            }
            if let Some(c) = &s.c_star {
                if c.len() != s.obs.len() {
                    return Err(err("c_star length differs from observations".into()));
                }
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let with_truth = self.has_ground_truth();
        let mut out = String::from("system_id,k,t");
        for f in &self.feature_names {
            out.push(',');
            out.push_str(f);
        }
        if with_truth {
            out.push_str(",c_star");
        }
        out.push('\n');
        for s in &self.systems {
            for (k, (t, z)) in s.times.iter().zip(&s.obs).enumerate() {
                let _ = write!(out, "{},{},{}", s.id, k, format_f64(*t));
                for v in z {
                    out.push(',');
                    out.push_str(&format_f64(*v));
                }
                if with_truth {
                    let c = s.c_star.as_ref().expect("checked")[k];
                    out.push(',');
                    out.push_str(&format_f64(c));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, DataError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(DataError::Empty)?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        for (i, name) in ["system_id", "k", "t"].iter().enumerate() {
            if cols.get(i) != Some(name) {
                return Err(DataError::MissingColumn((*name).to_string()));
            }
        }
        let with_truth = cols.last() == Some(&"c_star");
        let feat_end = if with_truth { cols.len() - 1 } else { cols.len() };
        let feature_names: Vec<String> = cols[3..feat_end].iter().map(|s| s.to_string()).collect();
        if feature_names.is_empty() {
            return Err(DataError::MissingColumn("<feature>".into()));
        }
        let mut systems: Vec<SystemSeries> = Vec::new();
        for (ln, line) in lines {
            let line_no = ln + 1;
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(DataError::Csv {
                    line: line_no,
                    msg: format!("expected {} fields, found {}", cols.len(), fields.len()),
                });
            }
            let num = |i: usize| -> Result<f64, DataError> {
                fields[i].parse::<f64>().map_err(|_| DataError::Csv {
                    line: line_no,
                    msg: format!("column `{}`: cannot parse `{}`", cols[i], fields[i]),
                })
            };
            let id: usize = fields[0].parse().map_err(|_| DataError::Csv {
                line: line_no,
                msg: format!("column `system_id`: cannot parse `{}`", fields[0]),
            })?;
            if systems.last().map(|s| s.id) != Some(id) {
                if systems.iter().any(|s| s.id == id) {
                    return Err(DataError::Csv {
                        line: line_no,
                        msg: format!("rows of system {id} are not contiguous"),
                    });
                }
                systems.push(SystemSeries {
                    id,
                    times: Vec::new(),
                    obs: Vec::new(),
                    c_star: with_truth.then(Vec::new),
                });
            }
            let sys = systems.last_mut().expect("pushed above");
            sys.times.push(num(2)?);
            sys.obs.push((3..feat_end).map(num).collect::<Result<_, _>>()?);
            if let Some(c) = sys.c_star.as_mut() {
                c.push(num(feat_end)?);
            }
        }
        let set = ObservationSet {
            feature_names,
            systems,
            metadata: BTreeMap::new(),
        };
        set.validate()?;
        Ok(set)
    }

    /// Sidecar manifest: one `key=value` per line.
    pub fn manifest(&self) -> String {
        self.metadata.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn require_features(&self, expected: &[String]) -> Result<(), DataError> {
        if self.feature_names != expected {
            return Err(DataError::Schema {
                expected: expected.to_vec(),
                found: self.feature_names.clone(),
            });
        }
        Ok(())
    }
}
