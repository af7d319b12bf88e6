//! Benchmark suites: every method on the same seeded scenarios, aggregated
//! into one metrics row per method, with a provenance record.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::flow::FlowModel;
use crate::metrics::{aggregate, compute_metrics, EpisodeMetrics, MetricsRow, CSV_HEADER};
use crate::planner::{PlannerConfig, PlannerMode};
use crate::rng::{mix, PRNG_ID};
use crate::sim::{generate_scenarios, run_episode, GeneratorConfig, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scenarios: usize,
    pub master_seed: u64,
    pub methods: Vec<PlannerMode>,
    pub generator: GeneratorConfig,
    pub sim: SimConfig,
    /// Shared planner settings; `mode` is replaced per method and `seed`
    /// is mixed with the scenario index.
    pub planner: PlannerConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            scenarios: 50,
            master_seed: 0,
            methods: PlannerMode::ALL.to_vec(),
            generator: GeneratorConfig::default(),
            sim: SimConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub prng: String,
    pub config_sha256: String,
    pub checkpoint_sha256: Option<String>,
    pub master_seed: u64,
    pub timing_recorded: bool,
}

impl Provenance {
    pub fn new(config: &impl Serialize, model: Option<&FlowModel<f32>>, master_seed: u64, timing: bool) -> Self {
        Self {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            prng: PRNG_ID.to_string(),
            config_sha256: sha256_hex(&serde_json::to_vec(config).expect("config serializes")),
            checkpoint_sha256: model.map(|m| sha256_hex(&m.to_container().to_bytes().expect("in-memory write"))),
            master_seed,
            timing_recorded: timing,
        }
    }

    /// `# key=value` lines for the head of text outputs.
    pub fn comment_lines(&self) -> String {
        format!(
            "# crate_version={}\n# prng={}\n# config_sha256={}\n# checkpoint_sha256={}\n# master_seed={}\n# timing_recorded={}\n",
            self.crate_version,
            self.prng,
            self.config_sha256,
            self.checkpoint_sha256.as_deref().unwrap_or("none"),
            self.master_seed,
            self.timing_recorded
        )
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub method: PlannerMode,
    pub scenario_seed: u64,
    pub metrics: EpisodeMetrics,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub provenance: Provenance,
    pub rows: Vec<MetricsRow>,
    pub episodes: Vec<EpisodeResult>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = self.provenance.comment_lines();
        s.push_str(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_line());
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn row(&self, method: PlannerMode) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method.name())
    }
}

/// Runs every `(method, scenario)` episode, in parallel across episodes.
/// With `log_dir`, each episode log is written as
/// `<method>_<scenario index>.jsonl`.
pub fn run_bench(cfg: &BenchConfig, model: Option<&FlowModel<f32>>, log_dir: Option<&Path>) -> Result<BenchReport> {
    let scenarios = generate_scenarios(cfg.scenarios, &cfg.generator, cfg.master_seed)?;
    if let Some(d) = log_dir {
        fs::create_dir_all(d)?;
    }
    let jobs: Vec<(PlannerMode, usize)> = cfg
        .methods
        .iter()
        .flat_map(|m| (0..scenarios.len()).map(move |i| (*m, i)))
        .collect();
    let episodes = jobs
        .par_iter()
        .map(|&(mode, i)| {
            let planner = PlannerConfig {
                mode,
                seed: mix(cfg.planner.seed, i as u64),
                ..cfg.planner.clone()
            };
            let m = if mode.needs_model() { model } else { None };
            let log = run_episode(&scenarios[i], &planner, m, &cfg.sim)?;
            if let Some(d) = log_dir {
                let f = fs::File::create(d.join(format!("{}_{i:04}.jsonl", mode.name())))?;
                log.write_jsonl(BufWriter::new(f))?;
            }
            Ok(EpisodeResult {
                method: mode,
                scenario_seed: scenarios[i].seed,
                metrics: compute_metrics(&log)?,
                failure: log.summary.failure,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = cfg
        .methods
        .iter()
        .map(|m| {
            let eps: Vec<EpisodeMetrics> = episodes.iter().filter(|e| e.method == *m).map(|e| e.metrics).collect();
            aggregate(m.name(), &eps)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        provenance: Provenance::new(cfg, model, cfg.master_seed, cfg.planner.record_timing),
        rows,
        episodes,
    })
}
