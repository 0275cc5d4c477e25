//! Experiment files and seeded SNR sweeps.
//!
//! An experiment file is TOML with three tables:
//!
//! ```toml
//! name = "three-cells"
//!
//! [scenario]
//! g = 3
//! k = 2
//! nt = 5
//! nr = 2
//! d_max = 1
//!
//! [topology]
//! kind = "fully_connected"   # or "symmetric", "geometric"
//!
//! [sweep]
//! schemes = ["proposed", "bl1", "bl2", "bl4", "bl5"]
//! snr_db = [0.0, 20.0, 40.0, 60.0]
//! seed_count = 50
//! ```

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evaluation::{self, Scheme, SchemeOutcome};
use crate::network::{self, ChannelSet, ConnectivitySpec, NetworkConfig, Topology};
use crate::transceiver::IterationOptions;

/// Default number of Monte Carlo seeds when neither `seeds` nor `seed_count`
/// is given.
pub const DEFAULT_SEED_COUNT: u64 = 50;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile {
    #[serde(default = "default_name")]
    name: String,
    scenario: ScenarioTable,
    #[serde(default)]
    topology: TopologyTable,
    sweep: Option<SweepTable>,
}

fn default_name() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioTable {
    g: usize,
    k: usize,
    nt: usize,
    nr: usize,
    d_max: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyTable {
    #[serde(default)]
    kind: TopologyKind,
    j: Option<usize>,
    r1: Option<usize>,
    r2: Option<usize>,
    basis_seed: Option<u64>,
    link_range_km: Option<f64>,
    scatter_km: Option<f64>,
    area_km: Option<f64>,
    /// Base drop seed; each run adds its own seed.
    drop_seed: Option<u64>,
    path_loss_exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum TopologyKind {
    #[default]
    FullyConnected,
    Symmetric,
    Geometric,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepTable {
    schemes: Vec<String>,
    snr_db: Vec<f64>,
    seeds: Option<Vec<u64>>,
    seed_count: Option<u64>,
    max_iters: Option<usize>,
    eps_conv: Option<f64>,
    output: Option<String>,
}

/// Side length of the drop area when a geometric scenario leaves it out.
pub const DEFAULT_AREA_KM: f64 = 30.0;

/// A parsed, validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub name: String,
    pub scenario: NetworkConfig,
    pub schemes: Vec<Scheme>,
    pub snr_grid_db: Vec<f64>,
    pub seeds: Vec<u64>,
    pub iteration: IterationOptions,
    pub output_path: Option<String>,
}

impl ExperimentSpec {
    pub fn new(name: &str, scenario: NetworkConfig, schemes: Vec<Scheme>, snr_grid_db: Vec<f64>, seeds: Vec<u64>) -> Self {
        ExperimentSpec {
            name: name.into(),
            scenario,
            schemes,
            snr_grid_db,
            seeds,
            iteration: IterationOptions::default(),
            output_path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        if self.schemes.is_empty() {
            return Err(Error::InvalidConfig("scheme list is empty".into()));
        }
        if self.snr_grid_db.is_empty() {
            return Err(Error::InvalidConfig("SNR grid is empty".into()));
        }
        if self.snr_grid_db.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("SNR grid has a non-finite entry".into()));
        }
        if self.snr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig("SNR grid must be strictly increasing".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        if self.iteration.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        Ok(())
    }

    /// Connectivity of one run. Geometric drops move with the run seed.
    pub fn connectivity(&self, seed: u64) -> Result<ConnectivitySpec> {
        let mut cfg = self.scenario.clone();
        if let Topology::Geometric { seed: base, .. } = &mut cfg.topology {
            *base = base.wrapping_add(seed);
        }
        network::build_connectivity(&cfg)
    }
}

/// Parse the scenario and topology tables of an experiment file; any sweep
/// table is checked for syntax but otherwise ignored.
pub fn parse_scenario(src: &str) -> Result<(String, NetworkConfig)> {
    let file: ExperimentFile = toml::from_str(src).map_err(|e| Error::from_toml(src, e))?;
    let cfg = scenario_of(&file)?;
    cfg.validate()?;
    Ok((file.name, cfg))
}

fn scenario_of(file: &ExperimentFile) -> Result<NetworkConfig> {
    let s = &file.scenario;
    let t = &file.topology;
    let need = |v: Option<usize>, key: &str| {
        v.ok_or_else(|| Error::InvalidConfig(format!("topology needs `{key}`")))
    };
    let needf = |v: Option<f64>, key: &str| {
        v.ok_or_else(|| Error::InvalidConfig(format!("topology needs `{key}`")))
    };
    let topology = match t.kind {
        TopologyKind::FullyConnected => Topology::FullyConnected,
        TopologyKind::Symmetric => Topology::Symmetric {
            j: need(t.j, "j")?,
            r1: need(t.r1, "r1")?,
            r2: need(t.r2, "r2")?,
            basis_seed: t.basis_seed,
        },
        TopologyKind::Geometric => Topology::Geometric {
            link_range_km: needf(t.link_range_km, "link_range_km")?,
            scatter_km: needf(t.scatter_km, "scatter_km")?,
            area_km: t.area_km.unwrap_or(DEFAULT_AREA_KM),
            seed: t.drop_seed.unwrap_or(0),
            path_loss_exponent: t.path_loss_exponent,
        },
    };
    Ok(NetworkConfig::uniform(s.g, s.k, s.nt, s.nr, s.d_max, topology))
}

pub fn parse_experiment(src: &str) -> Result<ExperimentSpec> {
    let file: ExperimentFile = toml::from_str(src).map_err(|e| Error::from_toml(src, e))?;
    let scenario = scenario_of(&file)?;
    let sweep = file
        .sweep
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("experiment needs a [sweep] table".into()))?;
    let schemes = sweep
        .schemes
        .iter()
        .map(|x| Scheme::parse(x).ok_or_else(|| Error::InvalidConfig(format!("unknown scheme `{x}`"))))
        .collect::<Result<Vec<_>>>()?;
    let seeds = match (&sweep.seeds, sweep.seed_count) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidConfig("give either `seeds` or `seed_count`, not both".into()));
        }
        (Some(list), None) => list.clone(),
        (None, Some(n)) => (0..n).collect(),
        (None, None) => (0..DEFAULT_SEED_COUNT).collect(),
    };
    let mut iteration = IterationOptions::default();
    if let Some(m) = sweep.max_iters {
        iteration.max_iters = m;
    }
    if let Some(e) = sweep.eps_conv {
        iteration.eps_conv = e;
    }
    let spec = ExperimentSpec {
        name: file.name,
        scenario,
        schemes,
        snr_grid_db: sweep.snr_db.clone(),
        seeds,
        iteration,
        output_path: sweep.output.clone(),
    };
    spec.validate()?;
    Ok(spec)
}

/// One (scheme, seed, SNR) measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub seed: u64,
    pub snr_db: f64,
    pub sum_rate: f64,
    pub streams: usize,
    pub residual_leakage: f64,
    pub zf_failed: bool,
}

/// Mean over seeds at one (scheme, SNR) point.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanRow {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub mean_rate: f64,
    pub mean_streams: f64,
    /// Slope of the mean rate from the previous grid point.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub name: String,
    pub snr_grid_db: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub means: Vec<MeanRow>,
    /// Seeds whose zero-forcing step was rank-deficient, per scheme.
    pub zf_failures: BTreeMap<Scheme, usize>,
}

impl SweepResult {
    pub fn mean(&self, scheme: Scheme, snr_db: f64) -> Option<&MeanRow> {
        self.means.iter().find(|m| m.scheme == scheme && m.snr_db == snr_db)
    }

    /// Slope of the seed-averaged rate between two grid points.
    pub fn mean_slope(&self, scheme: Scheme, snr1_db: f64, snr2_db: f64) -> Option<f64> {
        let a = self.mean(scheme, snr1_db)?;
        let b = self.mean(scheme, snr2_db)?;
        Some(evaluation::slope_between(a.snr_db, a.mean_rate, b.snr_db, b.mean_rate))
    }
}

/// Build one scheme on one seed.
pub fn run_scheme(spec: &ExperimentSpec, scheme: Scheme, seed: u64) -> Result<(ChannelSet, SchemeOutcome)> {
    let conn = spec.connectivity(seed)?;
    let ch = network::sample_channels(&conn, seed);
    let opts = IterationOptions { seed, ..spec.iteration };
    let outcome = match scheme {
        Scheme::Proposed => {
            let stage = evaluation::proposed_assignment(&spec.scenario, &conn)?;
            evaluation::run_proposed(&ch, &stage, &opts)?
        }
        Scheme::Bl1 => {
            let d = evaluation::bl1_assignment(&spec.scenario, &conn)?;
            evaluation::run_bl1(&ch, &d, &opts)?
        }
        Scheme::Bl2 => evaluation::run_bl2(&ch, &evaluation::capped_request(&spec.scenario, &conn), &opts),
        Scheme::Bl4 => evaluation::run_bl4(&ch, &evaluation::capped_request(&spec.scenario, &conn)),
        Scheme::Bl5 => evaluation::run_bl5(&ch, &evaluation::capped_request(&spec.scenario, &conn), seed),
    };
    Ok((ch, outcome))
}

/// Run every (scheme, seed) task on `workers` threads (all cores when
/// `None`). The output depends only on the spec, never on scheduling.
pub fn run_sweep(spec: &ExperimentSpec, workers: Option<usize>) -> Result<SweepResult> {
    spec.validate()?;
    let tasks: Vec<(Scheme, u64)> = spec
        .schemes
        .iter()
        .flat_map(|&s| spec.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let work = || {
        tasks
            .par_iter()
            .map(|&(scheme, seed)| -> Result<Vec<SweepRow>> {
                let (ch, out) = run_scheme(spec, scheme, seed)?;
                Ok(spec
                    .snr_grid_db
                    .iter()
                    .map(|&snr| {
                        let s = out.throughput(&ch, snr);
                        SweepRow {
                            scheme,
                            seed,
                            snr_db: snr,
                            sum_rate: s.sum_rate_bits,
                            streams: out.streams(),
                            residual_leakage: s.residual_leakage,
                            zf_failed: out.zf_failed,
                        }
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(work)?.into_iter().flatten().collect();

    let mut means = Vec::new();
    let mut zf_failures = BTreeMap::new();
    for &scheme in &spec.schemes {
        let mine: Vec<&SweepRow> = rows.iter().filter(|r| r.scheme == scheme).collect();
        let failed = mine.iter().filter(|r| r.zf_failed && r.snr_db == spec.snr_grid_db[0]).count();
        zf_failures.insert(scheme, failed);
        let mut prev: Option<(f64, f64)> = None;
        for &snr in &spec.snr_grid_db {
            let at: Vec<&&SweepRow> = mine.iter().filter(|r| r.snr_db == snr).collect();
            let n = at.len() as f64;
            let mean_rate = at.iter().map(|r| r.sum_rate).sum::<f64>() / n;
            let mean_streams = at.iter().map(|r| r.streams as f64).sum::<f64>() / n;
            let slope = prev.map(|(s0, r0)| evaluation::slope_between(s0, r0, snr, mean_rate));
            means.push(MeanRow {
                scheme,
                snr_db: snr,
                mean_rate,
                mean_streams,
                slope,
            });
            prev = Some((snr, mean_rate));
        }
    }
    Ok(SweepResult {
        name: spec.name.clone(),
        snr_grid_db: spec.snr_grid_db.clone(),
        rows,
        means,
        zf_failures,
    })
}

/// CSV header shared by per-seed and mean rows.
pub const CSV_HEADER: &str = "scenario_id,scheme,seed,snr_db,sum_rate,streams,slope,residual_leakage,zf_failed";

/// Per-seed rows first, in (scheme, seed, SNR) order, then one `mean` row per
/// (scheme, SNR) whose `slope` is measured from the previous grid point.
pub fn write_csv<W: Write>(result: &SweepResult, mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut prev: Option<&SweepRow> = None;
    for r in &result.rows {
        let slope = match prev {
            Some(p) if p.scheme == r.scheme && p.seed == r.seed => {
                format!("{:.6}", evaluation::slope_between(p.snr_db, p.sum_rate, r.snr_db, r.sum_rate))
            }
            _ => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{:.9},{},{},{:.6e},{}",
            result.name,
            r.scheme.name(),
            r.seed,
            r.snr_db,
            r.sum_rate,
            r.streams,
            slope,
            r.residual_leakage,
            r.zf_failed as u8
        )?;
        prev = Some(r);
    }
    for m in &result.means {
        let slope = m.slope.map(|s| format!("{s:.6}")).unwrap_or_default();
        writeln!(
            out,
            "{},{},mean,{},{:.9},{:.3},{},,",
            result.name,
            m.scheme.name(),
            m.snr_db,
            m.mean_rate,
            m.mean_streams,
            slope
        )?;
    }
    Ok(())
}
