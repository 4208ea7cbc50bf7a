use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use corefbridge::metrics::{Scores, PRF};
use corefbridge::training::{Arm, EpochRecord};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub max_rel_error: f64,
    pub coordinate: Option<String>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm: Option<Arm>,
    pub per_dataset: BTreeMap<String, Scores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average: Option<Scores>,
    pub history: Option<Vec<EpochRecord>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradcheck: Option<GradCheckSummary>,
    pub wall_time_ms: u64,
}

impl RunReport {
    pub fn new(command: &str, config_digest: String, seed: u64) -> Self {
        Self {
            format_version: REPORT_FORMAT_VERSION,
            command: command.to_string(),
            config_digest,
            seed,
            arm: None,
            per_dataset: BTreeMap::new(),
            average: None,
            history: None,
            gradcheck: None,
            wall_time_ms: 0,
        }
    }
}

/// Unweighted mean over datasets, field by field. `ap` only when every
/// dataset has one.
pub fn average_scores<'a>(sets: impl IntoIterator<Item = &'a Scores>) -> Option<Scores> {
    let sets: Vec<&Scores> = sets.into_iter().collect();
    if sets.is_empty() {
        return None;
    }
    let n = sets.len() as f64;
    let mean = |f: &dyn Fn(&Scores) -> f64| sets.iter().map(|s| f(s)).sum::<f64>() / n;
    let prf = |g: &dyn Fn(&Scores) -> PRF| PRF {
        precision: mean(&|s| g(s).precision),
        recall: mean(&|s| g(s).recall),
        f1: mean(&|s| g(s).f1),
    };
    let ap = sets
        .iter()
        .map(|s| s.ap)
        .collect::<Option<Vec<f64>>>()
        .map(|v| v.iter().sum::<f64>() / n);
    Some(Scores {
        muc: prf(&|s| s.muc),
        b3: prf(&|s| s.b3),
        ceaf_e: prf(&|s| s.ceaf_e),
        conll_f1: mean(&|s| s.conll_f1),
        ap,
    })
}

/// One arm of an ablation grid; `conll_f1` follows `AblationReport::columns`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub arm: Arm,
    pub label: String,
    pub conll_f1: Vec<f64>,
    pub error: Option<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub config_digest: String,
    pub seed: u64,
    /// Dataset names, then `average`.
    pub columns: Vec<String>,
    pub rows: Vec<GridRow>,
    pub reports: Vec<RunReport>,
    pub wall_time_ms: u64,
}

impl AblationReport {
    pub fn row(&self, arm: Arm) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    /// CoNLL F1 in percent, one line per arm.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let width = self
            .columns
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max(7);
        let _ = write!(out, "{:<12}", "arm");
        for c in &self.columns {
            let _ = write!(out, " {c:>width$}");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<12}", r.label);
            match &r.error {
                Some(e) => {
                    let _ = write!(out, " failed: {e}");
                }
                None => {
                    for v in &r.conll_f1 {
                        let _ = write!(out, " {:>width$.2}", v * 100.0);
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Compact form printed when no report path is given.
pub fn to_json_line<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_f1(f: f64) -> Scores {
        let p = PRF::new(f, f);
        Scores {
            muc: p,
            b3: p,
            ceaf_e: p,
            conll_f1: f,
            ap: None,
        }
    }

    #[test]
    fn average_of_two_sets() {
        let avg = average_scores([&with_f1(0.6), &with_f1(0.8)]).unwrap();
        assert!((avg.conll_f1 - 0.7).abs() < 1e-15);
        assert!((avg.muc.f1 - 0.7).abs() < 1e-15);
        assert_eq!(avg.ap, None);
    }

    #[test]
    fn report_round_trips() {
        let mut r = RunReport::new("train", "ab".into(), 3);
        r.per_dataset.insert("dev".into(), with_f1(0.5));
        let back: RunReport = serde_json::from_str(&to_json_line(&r)).unwrap();
        assert_eq!(back, r);
    }
}
