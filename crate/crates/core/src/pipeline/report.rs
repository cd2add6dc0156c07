use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Labels, PipelineError, RepairKind, RunManifest};
use crate::validation::VerdictKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub samples: usize,
    pub vulnerable: usize,
    pub resolved: usize,
    pub false_flagged: usize,
    pub false_flagged_not_exploited: usize,
    pub false_flagged_not_repaired: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub counts: ReportCounts,
    pub resolved_vulnerabilities: Option<f64>,
    pub false_positives_eliminated: Option<f64>,
    pub unnecessary_repairs_avoided: Option<f64>,
    pub total_pipeline_failure: Option<f64>,
    pub definitions: Vec<String>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

const DEFINITIONS: &[&str] = &[
    "resolved vulnerabilities = vulnerable samples that were confirmed exploited and repaired / vulnerable samples",
    "false positives eliminated = safe samples flagged by detection whose verdict is not Exploited / safe samples flagged by detection",
    "unnecessary repairs avoided = safe flagged samples that never entered repair / safe samples flagged by detection",
    "total pipeline failure = samples ending in an error, a non-convergent repair, or a wrong terminal state / all samples; \
     a wrong terminal state is a safe sample that entered repair or a vulnerable sample that did not",
];

pub fn report_metrics(manifest: &RunManifest, labels: &Labels) -> Result<Report, PipelineError> {
    let missing: Vec<String> = manifest
        .records
        .iter()
        .filter(|r| !labels.contains_key(&r.sample_id))
        .map(|r| r.sample_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingLabels(missing));
    }
    let mut c = ReportCounts {
        samples: manifest.records.len(),
        ..Default::default()
    };
    for r in &manifest.records {
        let vulnerable = labels[&r.sample_id] == 1;
        let exploited = r.verdict == Some(VerdictKind::Exploited);
        let repaired = r.repair_kind.is_some();
        if vulnerable {
            c.vulnerable += 1;
            c.resolved += (exploited && r.repair_kind == Some(RepairKind::Success)) as usize;
        } else if r.flag == Some(1) {
            c.false_flagged += 1;
            c.false_flagged_not_exploited += !exploited as usize;
            c.false_flagged_not_repaired += !repaired as usize;
        }
        let wrong_terminal = vulnerable != repaired;
        let failed =
            r.error.is_some() || r.repair_kind == Some(RepairKind::NonConvergent) || wrong_terminal;
        c.failures += failed as usize;
    }
    Ok(Report {
        run_id: manifest.run_id.clone(),
        counts: c,
        resolved_vulnerabilities: ratio(c.resolved, c.vulnerable),
        false_positives_eliminated: ratio(c.false_flagged_not_exploited, c.false_flagged),
        unnecessary_repairs_avoided: ratio(c.false_flagged_not_repaired, c.false_flagged),
        total_pipeline_failure: ratio(c.failures, c.samples),
        definitions: DEFINITIONS.iter().map(|d| d.to_string()).collect(),
    })
}

fn show(v: Option<f64>) -> String {
    v.map(|x| format!("{:.2}%", x * 100.0))
        .unwrap_or_else(|| "NA".into())
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(f, "run {} ({} samples)", self.run_id, c.samples)?;
        writeln!(
            f,
            "resolved vulnerabilities      {:>8}  ({}/{})",
            show(self.resolved_vulnerabilities),
            c.resolved,
            c.vulnerable
        )?;
        writeln!(
            f,
            "false positives eliminated    {:>8}  ({}/{})",
            show(self.false_positives_eliminated),
            c.false_flagged_not_exploited,
            c.false_flagged
        )?;
        writeln!(
            f,
            "unnecessary repairs avoided   {:>8}  ({}/{})",
            show(self.unnecessary_repairs_avoided),
            c.false_flagged_not_repaired,
            c.false_flagged
        )?;
        writeln!(
            f,
            "total pipeline failure        {:>8}  ({}/{})",
            show(self.total_pipeline_failure),
            c.failures,
            c.samples
        )?;
        writeln!(f)?;
        for d in &self.definitions {
            writeln!(f, "  {d}")?;
        }
        Ok(())
    }
}
