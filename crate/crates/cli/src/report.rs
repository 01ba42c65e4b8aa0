//! Report rows and their CSV / JSON encodings. Floats carry six
//! significant digits in both formats.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use ridematch_core::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReportRow {
    pub approach: String,
    pub load: f64,
    pub rides: usize,
    pub status: String,
    pub total_utility_s: Option<f64>,
    pub utility_fraction_of_optimal: Option<f64>,
    /// Proposal stage only.
    pub search_ms: Option<f64>,
    pub network_build_ms: Option<f64>,
    pub matching_ms: Option<f64>,
    pub routing_calls: Option<u64>,
    pub routing_batches: Option<u64>,
    pub batch_latency_ms: Option<u64>,
    pub evaluated_pairs: Option<usize>,
    pub network_edges: Option<usize>,
    pub matched_pairs: Option<usize>,
    pub candidates_mean: Option<f64>,
    pub candidates_max: Option<usize>,
    pub degenerate_rides: Option<usize>,
}

pub const COLUMNS: [&str; 18] = [
    "approach",
    "load",
    "rides",
    "status",
    "total_utility_s",
    "utility_fraction_of_optimal",
    "search_ms",
    "network_build_ms",
    "matching_ms",
    "routing_calls",
    "routing_batches",
    "batch_latency_ms",
    "evaluated_pairs",
    "network_edges",
    "matched_pairs",
    "candidates_mean",
    "candidates_max",
    "degenerate_rides",
];

impl ReportRow {
    pub fn new(approach: &str, load: f64, rides: usize) -> Self {
        ReportRow {
            approach: approach.to_string(),
            load,
            rides,
            status: "ok".to_string(),
            ..Default::default()
        }
    }

    fn cells(&self) -> Vec<String> {
        fn f(x: Option<f64>) -> String {
            x.map(format_sig6).unwrap_or_default()
        }
        fn i<T: ToString>(x: Option<T>) -> String {
            x.map(|v| v.to_string()).unwrap_or_default()
        }
        vec![
            self.approach.clone(),
            format_sig6(self.load),
            self.rides.to_string(),
            self.status.clone(),
            f(self.total_utility_s),
            f(self.utility_fraction_of_optimal),
            f(self.search_ms),
            f(self.network_build_ms),
            f(self.matching_ms),
            i(self.routing_calls),
            i(self.routing_batches),
            i(self.batch_latency_ms),
            i(self.evaluated_pairs),
            i(self.network_edges),
            i(self.matched_pairs),
            f(self.candidates_mean),
            i(self.candidates_max),
            i(self.degenerate_rides),
        ]
    }

    fn rounded(&self) -> ReportRow {
        let r = |x: Option<f64>| x.map(round_sig6);
        ReportRow {
            load: round_sig6(self.load),
            total_utility_s: r(self.total_utility_s),
            utility_fraction_of_optimal: r(self.utility_fraction_of_optimal),
            search_ms: r(self.search_ms),
            network_build_ms: r(self.network_build_ms),
            matching_ms: r(self.matching_ms),
            candidates_mean: r(self.candidates_mean),
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::invalid(format!("unknown report format {other:?}"))),
        }
    }
}

impl ReportFormat {
    /// `.json` files get JSON, everything else CSV.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => ReportFormat::Json,
            _ => ReportFormat::Csv,
        }
    }
}

impl ExperimentReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(COLUMNS)?;
        for row in &self.rows {
            w.write_record(row.cells())?;
        }
        String::from_utf8(w.into_inner().map_err(|e| Error::Format(e.to_string()))?)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let rounded = ExperimentReport {
            rows: self.rows.iter().map(ReportRow::rounded).collect(),
        };
        let mut s = serde_json::to_string_pretty(&rounded)?;
        s.push('\n');
        Ok(s)
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }

    pub fn emit(&self, format: ReportFormat, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.render(format)?.as_bytes())?;
        Ok(())
    }
}

/// Six significant digits, trailing zeros dropped; exponent form outside
/// `[1e-4, 1e6)`.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let fixed = format!("{x:.decimals$}");
    if fixed.contains('.') {
        fixed
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        fixed
    }
}

pub fn round_sig6(x: f64) -> f64 {
    format_sig6(x).parse().unwrap_or(x)
}
