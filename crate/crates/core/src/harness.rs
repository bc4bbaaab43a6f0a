//! Running registry problems and collecting machine-readable results.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::KktResiduals;
use crate::audit::{audit_run, estimate_constants, AuditReport, BoundInputs};
use crate::error::Result;
use crate::outer::{solve, SolveReport, SolveStatus, SolverOptions};
use crate::problem::EvalCounters;
use crate::registry::RegistryEntry;

/// Version of the JSON report layout.
pub const SCHEMA_VERSION: u32 = 1;

pub const SOLVER_ID: &str = "auglag";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub solver: SolverOptions,
    pub audit: bool,
    /// Sample count for the constant estimates.
    pub audit_samples: usize,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            audit: false,
            audit_samples: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub problem: String,
    pub solver: String,
    pub status: SolveStatus,
    pub objective: f64,
    pub residuals: KktResiduals,
    /// Wall-clock seconds of the solve (single-threaded per problem).
    pub cpu_time: f64,
    pub outer_iterations: u64,
    pub counters: EvalCounters,
}

/// Everything written for one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDocument {
    pub schema: u32,
    pub problem: String,
    pub options: RunOptions,
    pub record: RunRecord,
    pub report: SolveReport,
    pub audit: Option<AuditReport>,
}

impl RunDocument {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

pub fn run_problem(entry: &RegistryEntry, opts: &RunOptions) -> Result<RunDocument> {
    let spec = entry.spec();
    let start = Instant::now();
    let report = solve(&spec, &entry.x0, &opts.solver)?;
    let cpu_time = start.elapsed().as_secs_f64();
    let audit = if opts.audit && spec.has_finite_box() {
        let pc = estimate_constants(
            &spec,
            &report.scaling,
            &(&opts.solver).into(),
            report.rho1,
            opts.audit_samples,
            opts.seed,
        )?;
        let bi = BoundInputs::for_run(&report, &opts.solver)?;
        Some(audit_run(&spec, &report, &pc, &bi)?)
    } else {
        None
    };
    Ok(RunDocument {
        schema: SCHEMA_VERSION,
        problem: entry.name.clone(),
        options: opts.clone(),
        record: RunRecord {
            problem: entry.name.clone(),
            solver: SOLVER_ID.to_string(),
            status: report.status,
            objective: report.objective,
            residuals: report.residuals,
            cpu_time,
            outer_iterations: report.outer_iterations,
            counters: report.counters,
        },
        report,
        audit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub schema: u32,
    pub records: Vec<RunRecord>,
    /// Problems whose solve returned an error instead of a report.
    pub errors: Vec<(String, String)>,
    pub status_counts: BTreeMap<String, usize>,
    pub audit_failures: usize,
}

/// Solves every entry (in parallel) and aggregates in registry order.
pub fn run_suite(entries: &[RegistryEntry], opts: &RunOptions) -> SuiteResult {
    let runs: Vec<_> = entries.par_iter().map(|e| (e.name.clone(), run_problem(e, opts))).collect();
    let mut out = SuiteResult {
        schema: SCHEMA_VERSION,
        records: Vec::new(),
        errors: Vec::new(),
        status_counts: BTreeMap::new(),
        audit_failures: 0,
    };
    for (name, run) in runs {
        match run {
            Ok(doc) => {
                let key = serde_json::to_value(doc.record.status)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default();
                *out.status_counts.entry(key).or_default() += 1;
                out.audit_failures += doc.audit.as_ref().map_or(0, |a| a.failures());
                out.records.push(doc.record);
            }
            Err(e) => out.errors.push((name, e.to_string())),
        }
    }
    out
}

/// Fixed-width text table of a suite run.
pub fn format_table(records: &[RunRecord]) -> String {
    let mut s = format!(
        "{:<20} {:<22} {:>14} {:>10} {:>10} {:>10} {:>6} {:>9}\n",
        "problem", "status", "objective", "feas", "opt", "compl", "outer", "time[s]"
    );
    for r in records {
        let status = serde_json::to_value(r.status).map(|v| v.as_str().unwrap_or("").to_string()).unwrap_or_default();
        s.push_str(&format!(
            "{:<20} {:<22} {:>14.6e} {:>10.2e} {:>10.2e} {:>10.2e} {:>6} {:>9.4}\n",
            r.problem,
            status,
            r.objective,
            r.residuals.feasibility,
            r.residuals.optimality,
            r.residuals.complementarity,
            r.outer_iterations,
            r.cpu_time
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{find, registry};

    #[test]
    fn p1_document_round_trips() {
        let entry = find("P1", 0).unwrap();
        let doc = run_problem(&entry, &RunOptions { audit: true, ..RunOptions::default() }).unwrap();
        assert_eq!(doc.record.status, SolveStatus::KktSuccess);
        assert!((doc.record.objective + 2.0).abs() <= 1e-6);
        assert!(doc.audit.is_some());
        let back = RunDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn empty_suite() {
        let s = run_suite(&[], &RunOptions::default());
        assert!(s.records.is_empty() && s.errors.is_empty());
    }

    #[test]
    fn suite_keeps_registry_order() {
        let reg: Vec<_> = registry(0).into_iter().take(3).collect();
        let s = run_suite(&reg, &RunOptions::default());
        let names: Vec<_> = s.records.iter().map(|r| r.problem.as_str()).collect();
        assert_eq!(names, ["P1", "P2", "P3"]);
        assert_eq!(s.status_counts.values().sum::<usize>(), 3);
        assert!(format_table(&s.records).lines().count() == 4);
    }
}
