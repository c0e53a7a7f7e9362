//! Results of a run: a long-format table of estimates, pass/fail checks and
//! optional per-replica records, written as CSV plus a JSON summary.

use crate::config::ExperimentConfig;
use anyhow::{Context, Result};
use exitmeasure::stats::EstimatorResult;
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Column names of the results CSV.
pub const COLUMNS: [&str; 8] = ["check", "label", "estimate", "se", "reference", "reference_se", "stat", "pass"];

/// One line of the results table. `stat` is a z-score, a ratio or a
/// relative error, depending on the check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub check: String,
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub reference: f64,
    pub reference_se: f64,
    pub stat: f64,
    /// `None` for rows that are reported but not gated.
    pub pass: Option<bool>,
}

impl Row {
    pub fn info(check: &str, label: impl Into<String>, estimate: f64, se: f64) -> Self {
        Row {
            check: check.into(),
            label: label.into(),
            estimate,
            se,
            reference: f64::NAN,
            reference_se: f64::NAN,
            stat: f64::NAN,
            pass: None,
        }
    }

    /// `|z| < tol` against a reference with its own standard error.
    pub fn z(check: &str, label: impl Into<String>, est: &EstimatorResult, reference: &EstimatorResult, tol: f64) -> Self {
        let z = est.z_against(reference);
        let z = if z.is_nan() && est.value == reference.value { 0.0 } else { z };
        Row {
            check: check.into(),
            label: label.into(),
            estimate: est.value,
            se: est.se,
            reference: reference.value,
            reference_se: reference.se,
            stat: z,
            pass: Some(z.abs() < tol),
        }
    }

    /// `|z| < tol` against an exact reference.
    pub fn z_exact(check: &str, label: impl Into<String>, est: &EstimatorResult, reference: f64, tol: f64) -> Self {
        let r = EstimatorResult::new(reference, 0.0, 0, est.kind);
        Row::z(check, label, est, &r, tol)
    }

    /// `|est/reference - 1| < tol`.
    pub fn relative(check: &str, label: impl Into<String>, est: &EstimatorResult, reference: f64, tol: f64) -> Self {
        let rel = est.value / reference - 1.0;
        Row {
            check: check.into(),
            label: label.into(),
            estimate: est.value,
            se: est.se,
            reference,
            reference_se: 0.0,
            stat: rel,
            pass: Some(rel.abs() < tol),
        }
    }

    /// An exact yes/no check.
    pub fn flag(check: &str, label: impl Into<String>, pass: bool) -> Self {
        Row {
            check: check.into(),
            label: label.into(),
            estimate: f64::from(u8::from(pass)),
            se: 0.0,
            reference: 1.0,
            reference_se: 0.0,
            stat: f64::NAN,
            pass: Some(pass),
        }
    }

    pub fn with_stat(mut self, stat: f64) -> Self {
        self.stat = stat;
        self
    }

    pub fn with_reference(mut self, reference: f64, reference_se: f64) -> Self {
        self.reference = reference;
        self.reference_se = reference_se;
        self
    }

    pub fn gated(mut self, pass: bool) -> Self {
        self.pass = Some(pass);
        self
    }
}

/// Outcome of one acceptance criterion, aggregated over its rows.
#[derive(Clone, Debug, Serialize)]
pub struct Gate {
    pub name: String,
    pub pass: bool,
    pub rows: usize,
    pub failed: Vec<String>,
}

/// A free-form table of per-replica records.
#[derive(Clone, Debug, Default, Serialize)]
pub struct Records {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    /// Criterion names, each owning the rows whose `check` starts with the name.
    pub criteria: Vec<String>,
    #[serde(skip)]
    pub replicas: Option<Records>,
    pub notes: Vec<String>,
}

/// Shortest round-trip decimal; deterministic across runs.
pub fn num(x: f64) -> String {
    format!("{x}")
}

impl Report {
    pub fn new(experiment: &str, config: &ExperimentConfig) -> Self {
        Report {
            experiment: experiment.into(),
            config: config.clone(),
            rows: Vec::new(),
            criteria: Vec::new(),
            replicas: None,
            notes: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    pub fn gates(&self) -> Vec<Gate> {
        self.criteria
            .iter()
            .map(|c| {
                let rows: Vec<&Row> =
                    self.rows.iter().filter(|r| r.check.starts_with(c.as_str()) && r.pass.is_some()).collect();
                let failed: Vec<String> =
                    rows.iter().filter(|r| r.pass == Some(false)).map(|r| format!("{} {}", r.check, r.label)).collect();
                Gate { name: c.clone(), pass: !rows.is_empty() && failed.is_empty(), rows: rows.len(), failed }
            })
            .collect()
    }

    /// Every gated row passed.
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false)) && self.gates().iter().all(|g| g.pass)
    }

    pub fn csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS)?;
        for r in &self.rows {
            let pass = match r.pass {
                Some(true) => "true",
                Some(false) => "false",
                None => "",
            };
            w.write_record([
                r.check.clone(),
                r.label.clone(),
                num(r.estimate),
                num(r.se),
                num(r.reference),
                num(r.reference_se),
                num(r.stat),
                pass.to_string(),
            ])?;
        }
        Ok(w.into_inner()?)
    }

    pub fn replicas_csv_bytes(&self) -> Result<Option<Vec<u8>>> {
        let Some(rec) = &self.replicas else { return Ok(None) };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&rec.header)?;
        for r in &rec.rows {
            w.write_record(r)?;
        }
        Ok(Some(w.into_inner()?))
    }

    pub fn summary_json(&self, elapsed_s: Option<f64>) -> Result<String> {
        let value = serde_json::json!({
            "experiment": self.experiment,
            "passed": self.passed(),
            "gates": self.gates(),
            "results": self.rows,
            "notes": self.notes,
            "config": self.config,
            "elapsed_seconds": elapsed_s,
        });
        Ok(serde_json::to_string_pretty(&value)?)
    }

    /// Writes `<name>.csv`, `<name>.json`, `<name>.config.json` and, when
    /// present, `<name>_replicas.csv` under `dir`.
    pub fn write(&self, dir: &Path, elapsed_s: Option<f64>) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut out = Vec::new();
        let mut put = |name: String, bytes: &[u8]| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
            out.push(p);
            Ok(())
        };
        put(format!("{}.csv", self.experiment), &self.csv_bytes()?)?;
        if let Some(b) = self.replicas_csv_bytes()? {
            put(format!("{}_replicas.csv", self.experiment), &b)?;
        }
        put(format!("{}.json", self.experiment), self.summary_json(elapsed_s)?.as_bytes())?;
        put(format!("{}.config.json", self.experiment), serde_json::to_string_pretty(&self.config)?.as_bytes())?;
        Ok(out)
    }
}
