//! Experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ridematch_core::hashing::derive_seed;
use ridematch_core::lsh::{
    LshConfig, DEFAULT_CP_DIM, DEFAULT_HASH_BITS, DEFAULT_PROBES, DEFAULT_TABLES,
};
use ridematch_core::network::DEFAULT_OPTIMAL_CAP;
use ridematch_core::represent::{DEFAULT_APPENDED_TERMS, DEFAULT_HASHED_DIM, DEFAULT_NORM_BOUND};
use ridematch_core::trips::{BBox, CommuteMode, SynthSpec, DEFAULT_UTC_OFFSET_S, MORNING_WINDOW};
use ridematch_core::utility::DEFAULT_MAX_DELAY_S;
use ridematch_core::{BaselineConfig, GridSpec, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approach {
    Lsh,
    Closeby,
    Haversine,
    ClosebyHaversine,
    Optimal,
}

impl Approach {
    pub const ALL: [Approach; 5] = [
        Approach::Lsh,
        Approach::Closeby,
        Approach::Haversine,
        Approach::ClosebyHaversine,
        Approach::Optimal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Lsh => "lsh",
            Approach::Closeby => "closeby",
            Approach::Haversine => "haversine",
            Approach::ClosebyHaversine => "closeby_haversine",
            Approach::Optimal => "optimal",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthScenario {
    pub mode: CommuteMode,
    pub n: usize,
    pub hotspot_count: usize,
    pub spread_m: f64,
    pub core_spread_m: f64,
    /// Request window in Unix seconds; defaults to the mode's rush hour.
    pub window: Option<(f64, f64)>,
    /// Defaults to a seed derived from the experiment seed.
    pub seed: Option<u64>,
    pub alternates: usize,
}

impl Default for SynthScenario {
    fn default() -> Self {
        let d = SynthSpec::default();
        SynthScenario {
            mode: d.mode,
            n: d.n,
            hotspot_count: d.hotspot_count,
            spread_m: d.spread_m,
            core_spread_m: d.core_spread_m,
            window: None,
            seed: None,
            alternates: d.alternates,
        }
    }
}

impl SynthScenario {
    pub fn spec(&self, master_seed: u64) -> SynthSpec {
        SynthSpec {
            mode: self.mode,
            n: self.n,
            hotspot_count: self.hotspot_count,
            spread_m: self.spread_m,
            core_spread_m: self.core_spread_m,
            window: self.window.unwrap_or(self.mode.window()),
            seed: self
                .seed
                .unwrap_or_else(|| derive_seed(master_seed, "synth")),
            alternates: self.alternates,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvScenario {
    /// Relative paths resolve against the config file's directory.
    pub path: PathBuf,
    /// `minlat,minlon,maxlat,maxlon`; defaults to the road network's extent.
    #[serde(default)]
    pub bbox: Option<String>,
    #[serde(default = "default_csv_window")]
    pub window: (f64, f64),
    #[serde(default = "default_utc_offset")]
    pub utc_offset_s: i64,
    #[serde(default = "default_alternates")]
    pub alternates: usize,
}

fn default_csv_window() -> (f64, f64) {
    MORNING_WINDOW
}

fn default_utc_offset() -> i64 {
    DEFAULT_UTC_OFFSET_S
}

fn default_alternates() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scenario {
    Synth(SynthScenario),
    Csv(CsvScenario),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkSource {
    Grid(GridSpec),
    Json { path: PathBuf },
}

impl Default for NetworkSource {
    fn default() -> Self {
        NetworkSource::Grid(GridSpec::default())
    }
}

/// The `lsh` section. Unset `seed` and `k` fall back to the experiment's.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LshSection {
    pub tables: usize,
    pub hash_bits: usize,
    pub probes: usize,
    pub dim: usize,
    pub m: usize,
    #[serde(rename = "U")]
    pub norm_bound: f64,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub cp_dim: usize,
    pub centering: bool,
}

impl Default for LshSection {
    fn default() -> Self {
        LshSection {
            tables: DEFAULT_TABLES,
            hash_bits: DEFAULT_HASH_BITS,
            probes: DEFAULT_PROBES,
            dim: DEFAULT_HASHED_DIM,
            m: DEFAULT_APPENDED_TERMS,
            norm_bound: DEFAULT_NORM_BOUND,
            seed: None,
            k: None,
            cp_dim: DEFAULT_CP_DIM,
            centering: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchingMode {
    #[default]
    Exact,
    /// Heaviest edge first; for timing runs on pools above the exact cap.
    Greedy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub network: NetworkSource,
    pub loads: Vec<f64>,
    pub approaches: Vec<Approach>,
    pub k: usize,
    /// Maximum pickup delay, seconds.
    pub delta_t: f64,
    pub space_precision: usize,
    /// Time bucket length, seconds.
    pub time_interval: f64,
    pub lsh: LshSection,
    pub baseline: BaselineConfig,
    pub optimal_cap: usize,
    pub matching: MatchingMode,
    pub seed: u64,
    /// When false, timing columns are left empty so that repeated runs
    /// produce identical reports.
    pub record_timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Synth(SynthScenario::default()),
            network: NetworkSource::default(),
            loads: vec![1.0],
            approaches: Approach::ALL.to_vec(),
            k: 10,
            delta_t: DEFAULT_MAX_DELAY_S,
            space_precision: 7,
            time_interval: 2.0 * DEFAULT_MAX_DELAY_S,
            lsh: LshSection::default(),
            baseline: BaselineConfig::default(),
            optimal_cap: DEFAULT_OPTIMAL_CAP,
            matching: MatchingMode::Exact,
            seed: 1,
            record_timings: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Reads a config and resolves relative scenario and network paths
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Scenario::Csv(c) = &mut cfg.scenario {
            if c.path.is_relative() {
                c.path = base.join(&c.path);
            }
        }
        if let NetworkSource::Json { path } = &mut cfg.network {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
        Ok(cfg)
    }

    pub fn lsh_config(&self) -> LshConfig {
        LshConfig {
            tables: self.lsh.tables,
            hash_bits: self.lsh.hash_bits,
            probes: self.lsh.probes,
            dim: self.lsh.dim,
            m: self.lsh.m,
            norm_bound: self.lsh.norm_bound,
            seed: self
                .lsh
                .seed
                .unwrap_or_else(|| derive_seed(self.seed, "lsh")),
            k: self.lsh.k.unwrap_or(self.k),
            cp_dim: self.lsh.cp_dim,
            space_precision: self.space_precision,
            time_interval_s: self.time_interval,
            centering: self.lsh.centering,
        }
    }

    pub fn bbox(&self) -> Result<Option<BBox>> {
        match &self.scenario {
            Scenario::Csv(CsvScenario { bbox: Some(b), .. }) => Ok(Some(b.parse()?)),
            _ => Ok(None),
        }
    }

    /// Every problem with the config, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.loads.is_empty() {
            errs.push("loads must not be empty".to_string());
        }
        for &l in &self.loads {
            if !(l > 0.0 && l <= 1.0) {
                errs.push(format!("load {l} must lie in (0, 1]"));
            }
        }
        if self.approaches.is_empty() {
            errs.push("approaches must not be empty".to_string());
        }
        if self.k == 0 {
            errs.push("k must be >= 1".to_string());
        }
        if !(self.delta_t > 0.0) {
            errs.push(format!("delta_t must be positive, got {}", self.delta_t));
        }
        // lsh.k inherits k when unset; report that problem once
        let inherited_k = self.lsh.k.is_none();
        errs.extend(
            self.lsh_config()
                .validate()
                .into_iter()
                .filter(|e| !(inherited_k && e.starts_with("lsh.k "))),
        );
        errs.extend(self.baseline.validate(self.k));
        match &self.scenario {
            Scenario::Synth(s) => {
                if s.n == 0 {
                    errs.push("scenario.n must be >= 1".to_string());
                }
                if s.hotspot_count == 0 {
                    errs.push("scenario.hotspot_count must be >= 1".to_string());
                }
                if let Some((a, b)) = s.window {
                    if !(b > a) {
                        errs.push(format!("scenario.window [{a}, {b}] is empty"));
                    }
                }
            }
            Scenario::Csv(c) => {
                if let Err(e) = self.bbox() {
                    errs.push(e.to_string());
                }
                if !(c.window.1 > c.window.0) {
                    errs.push(format!(
                        "scenario.window [{}, {}] is empty",
                        c.window.0, c.window.1
                    ));
                }
            }
        }
        if let NetworkSource::Grid(g) = &self.network {
            if g.rows < 2 || g.cols < 2 {
                errs.push(format!(
                    "network grid must be at least 2x2, got {}x{}",
                    g.rows, g.cols
                ));
            }
            if !(g.spacing_m > 0.0) {
                errs.push("network spacing_m must be positive".to_string());
            }
        }
        errs
    }

    pub fn validated(self) -> std::result::Result<Self, Vec<String>> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(errs)
        }
    }
}
