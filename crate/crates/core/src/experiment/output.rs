use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::config::ExperimentConfig;
use crate::dynamics::TrajectoryRecord;
use crate::error::Result;
use crate::stats::EnsembleStats;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const GIT_HASH: &str = match option_env!("CGL_ERGO_GIT_HASH") {
    Some(h) => h,
    None => "unknown",
};

/// One row of a report: identifying keys, numeric values with optional
/// confidence half-widths, and boolean flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub keys: BTreeMap<String, Value>,
    pub values: BTreeMap<String, f64>,
    pub ci: BTreeMap<String, f64>,
    pub flags: BTreeMap<String, bool>,
}

impl ReportRow {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            keys: BTreeMap::new(),
            values: BTreeMap::new(),
            ci: BTreeMap::new(),
            flags: BTreeMap::new(),
        }
    }

    pub fn key(mut self, k: &str, v: impl Into<Value>) -> Self {
        self.keys.insert(k.into(), v.into());
        self
    }

    pub fn value(mut self, k: &str, v: f64) -> Self {
        self.values.insert(k.into(), v);
        self
    }

    /// Value with its 95% half-width.
    pub fn stat(mut self, k: &str, s: &EnsembleStats) -> Self {
        self.values.insert(k.into(), s.mean);
        self.ci.insert(k.into(), s.ci95_halfwidth);
        self
    }

    pub fn with_ci(mut self, k: &str, v: f64, half: f64) -> Self {
        self.values.insert(k.into(), v);
        self.ci.insert(k.into(), half);
        self
    }

    pub fn flag(mut self, k: &str, v: bool) -> Self {
        self.flags.insert(k.into(), v);
        self
    }

    pub fn get(&self, k: &str) -> Option<f64> {
        self.values.get(k).copied()
    }

    pub fn get_flag(&self, k: &str) -> Option<bool> {
        self.flags.get(k).copied()
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record<'a> {
    Meta {
        version: &'a str,
        git_hash: &'a str,
        config: &'a ExperimentConfig,
    },
    Series {
        trajectory: usize,
        t: f64,
        l2: f64,
        h1: f64,
        sup: f64,
        l4: f64,
        sup_integral: f64,
        h1_integral: f64,
    },
    Report(&'a ReportRow),
}

/// Serialized NDJSON stream plus the report rows for the CSV summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    ndjson: Vec<u8>,
    rows: Vec<ReportRow>,
}

impl Output {
    /// Starts the stream with the meta record.
    pub fn new(config: &ExperimentConfig) -> Self {
        let mut out = Self {
            ndjson: Vec::new(),
            rows: Vec::new(),
        };
        out.push(&Record::Meta {
            version: VERSION,
            git_hash: GIT_HASH,
            config,
        });
        out
    }

    fn push(&mut self, rec: &Record) {
        serde_json::to_writer(&mut self.ndjson, rec).expect("records serialize");
        self.ndjson.push(b'\n');
    }

    pub fn series(&mut self, trajectory: usize, rec: &TrajectoryRecord) {
        for k in 0..rec.len() {
            self.push(&Record::Series {
                trajectory,
                t: rec.times[k],
                l2: rec.l2[k],
                h1: rec.h1[k],
                sup: rec.sup[k],
                l4: rec.l4[k],
                sup_integral: rec.sup_integral[k],
                h1_integral: rec.h1_integral[k],
            });
        }
    }

    pub fn report(&mut self, row: ReportRow) {
        self.push(&Record::Report(&row));
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[ReportRow] {
        &self.rows
    }

    pub fn ndjson(&self) -> &[u8] {
        &self.ndjson
    }

    /// Long-format summary: one line per value or flag of every report row.
    pub fn csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["report", "keys", "quantity", "value", "ci95"])?;
        for row in &self.rows {
            let keys = row
                .keys
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";");
            for (q, v) in &row.values {
                let ci = row.ci.get(q).map(|c| c.to_string()).unwrap_or_default();
                w.write_record([row.name.as_str(), &keys, q, &v.to_string(), &ci])?;
            }
            for (q, v) in &row.flags {
                w.write_record([row.name.as_str(), &keys, q, &v.to_string(), ""])?;
            }
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    /// Writes `<dir>/<stem>.ndjson` and `<dir>/<stem>.csv`.
    pub fn write_to(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir)?;
        let nd = dir.join(format!("{stem}.ndjson"));
        let cs = dir.join(format!("{stem}.csv"));
        std::fs::write(&nd, &self.ndjson)?;
        std::fs::write(&cs, self.csv()?)?;
        Ok((nd, cs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_first_and_typed() {
        let cfg = ExperimentConfig::default();
        let mut out = Output::new(&cfg);
        out.report(
            ReportRow::new("demo")
                .key("level", 2.0)
                .value("x", 1.5)
                .with_ci("y", 2.0, 0.1)
                .flag("ok", true),
        );
        let text = String::from_utf8(out.ndjson().to_vec()).unwrap();
        let lines: Vec<Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines[0]["type"], "meta");
        assert_eq!(lines[0]["config"]["modes"], 32);
        assert_eq!(lines[1]["type"], "report");
        assert_eq!(lines[1]["values"]["x"], 1.5);
        let csv = String::from_utf8(out.csv().unwrap()).unwrap();
        assert!(csv.starts_with("report,keys,quantity,value,ci95\n"));
        assert!(csv.contains("demo,level=2.0,y,2,0.1"));
        assert!(csv.contains("demo,level=2.0,ok,true,"));
    }
}
