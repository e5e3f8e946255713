//! Monte Carlo driver: end-to-end trials, SNR sweeps over scenarios, and
//! CSV output.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{generate_scenario, ChannelSet};
use crate::clustering::{group_users, select_cluster_heads, ClusteringError, GroupingPlan};
use crate::config::{Architecture, MultipleAccess, SystemConfig};
use crate::link::{LinkModel, PowerSolution, TrialMetrics};
use crate::optimizer::{compute_rate_floor, joint_optimize_link, IterationRecord, OptimizeError};
use crate::precoding::{
    analog_precoder, digital_zf, equivalent_channels, fully_digital, sic_order, strongest_per_beam,
    HybridPrecoder, PrecodingError,
};

/// Channel draws tried per trial before it is reported as degenerate.
pub const MAX_ATTEMPTS: usize = 3;

const ABSENT: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Scenario {
    pub architecture: Architecture,
    pub access: MultipleAccess,
}

impl Scenario {
    pub fn new(architecture: Architecture, access: MultipleAccess) -> Self {
        Scenario {
            architecture,
            access,
        }
    }

    /// `full-noma`, `sub-oma`, ...; fully digital has one user per beam so
    /// the access scheme is irrelevant and omitted.
    pub fn label(&self) -> String {
        match self.architecture {
            Architecture::FullyDigital => "digital".to_string(),
            arch => format!("{}-{}", arch.label(), self.access.label()),
        }
    }

    pub fn apply(&self, cfg: &SystemConfig) -> SystemConfig {
        SystemConfig {
            architecture: self.architecture,
            multiple_access: self.access,
            ..cfg.clone()
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// SplitMix64 finalizer; decorrelates nearby integers.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Channel seed of a trial. Depends on the trial index only, so every
/// scenario and SNR point sees the same channels for a given trial.
pub fn derive_seed(base_seed: u64, trial: usize) -> u64 {
    mix(base_seed ^ mix(trial as u64))
}

/// Seed for the `attempt`-th redraw of a degenerate trial (attempt 0 is
/// the original seed).
pub fn fallback_seed(seed: u64, attempt: usize) -> u64 {
    if attempt == 0 {
        seed
    } else {
        mix(seed.wrapping_add(attempt as u64).rotate_left(17))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Precoding(#[from] PrecodingError),
}

/// Precoder and SIC-ordered grouping for the configured architecture.
pub fn build_precoder(cfg: &SystemConfig, channels: &ChannelSet) -> Result<(HybridPrecoder, GroupingPlan), PipelineError> {
    if cfg.architecture == Architecture::FullyDigital {
        return Ok(fully_digital(channels)?);
    }
    let sel = select_cluster_heads(&channels.channels, cfg.n_beams, cfg.chs_threshold_init)?;
    let heads: Vec<_> = sel.heads.iter().map(|&k| channels.channels[k].clone()).collect();
    let analog = analog_precoder(&heads, cfg)?;
    let equiv = equivalent_channels(channels, &analog);
    let plan = group_users(&equiv, &sel.heads, sel.final_threshold);
    let strongest: Vec<_> = strongest_per_beam(&plan, &equiv)
        .into_iter()
        .map(|k| equiv[k].clone())
        .collect();
    let digital = digital_zf(&strongest, &analog)?;
    let plan = sic_order(&plan, &equiv, &digital);
    Ok((
        HybridPrecoder {
            analog,
            digital,
            equiv_channels: equiv,
            architecture: cfg.architecture,
        },
        plan,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TrialStatus {
    Feasible,
    Infeasible,
    NumericalFailure,
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub status: TrialStatus,
    /// Seed of the channel draw actually used.
    pub seed: u64,
    pub attempts: usize,
    pub channel_hash: u64,
    pub rate_floor: Vec<f64>,
    pub metrics: TrialMetrics,
    pub solution: Option<PowerSolution>,
    pub records: Vec<IterationRecord>,
    pub plan: Option<GroupingPlan>,
}

impl TrialOutcome {
    pub fn feasible(&self) -> bool {
        self.status == TrialStatus::Feasible
    }
}

/// One trial end to end. Degenerate channel draws are replaced by
/// fallback seeds, up to [`MAX_ATTEMPTS`] draws in total.
pub fn run_trial(cfg: &SystemConfig, seed: u64) -> TrialOutcome {
    let k = cfg.n_users;
    let mut last_seed = seed;
    for attempt in 0..MAX_ATTEMPTS {
        let s = fallback_seed(seed, attempt);
        last_seed = s;
        let channels = generate_scenario(s, cfg);
        let built = build_precoder(cfg, &channels).and_then(|(pre, plan)| {
            let floor = compute_rate_floor(cfg, &channels)?;
            Ok((pre, plan, floor))
        });
        let (pre, plan, floor) = match built {
            Ok(v) => v,
            Err(e) => {
                log::info!("seed {s}: degenerate channel draw ({e}); resampling");
                continue;
            }
        };
        let link = LinkModel::new(&pre, &plan, cfg);
        let base = TrialOutcome {
            status: TrialStatus::Feasible,
            seed: s,
            attempts: attempt + 1,
            channel_hash: channels.fingerprint(),
            rate_floor: floor.clone(),
            metrics: TrialMetrics::infeasible(k),
            solution: None,
            records: Vec::new(),
            plan: Some(plan),
        };
        return match joint_optimize_link(&link, cfg, &floor) {
            Ok(out) => TrialOutcome {
                metrics: out.metrics,
                solution: Some(out.solution),
                records: out.records,
                ..base
            },
            Err(e) => {
                log::debug!("seed {s}: {e}");
                TrialOutcome {
                    status: match e {
                        OptimizeError::Infeasible { .. } => TrialStatus::Infeasible,
                        OptimizeError::NumericalFailure { .. } => TrialStatus::NumericalFailure,
                    },
                    ..base
                }
            }
        };
    }
    log::warn!("seed {seed}: no usable channel draw in {MAX_ATTEMPTS} attempts");
    TrialOutcome {
        status: TrialStatus::Degenerate,
        seed: last_seed,
        attempts: MAX_ATTEMPTS,
        channel_hash: 0,
        rate_floor: Vec::new(),
        metrics: TrialMetrics::infeasible(k),
        solution: None,
        records: Vec::new(),
        plan: None,
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub snr_points_db: Vec<f64>,
    pub n_trials: usize,
    pub base_seed: u64,
    pub scenarios: Vec<Scenario>,
    pub config: SystemConfig,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SweepError {
    #[error("need at least one trial")]
    NoTrials,
    #[error("need at least one SNR point")]
    NoSnr,
    #[error("need at least one scenario")]
    NoScenarios,
    #[error("SNR points must be finite")]
    BadSnr,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.n_trials == 0 {
            return Err(SweepError::NoTrials);
        }
        if self.snr_points_db.is_empty() {
            return Err(SweepError::NoSnr);
        }
        if self.scenarios.is_empty() {
            return Err(SweepError::NoScenarios);
        }
        if self.snr_points_db.iter().any(|s| !s.is_finite()) {
            return Err(SweepError::BadSnr);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub scenario: String,
    pub snr_db: f64,
    pub trial: usize,
    pub seed: u64,
    pub sum_rate: f64,
    pub energy_efficiency: f64,
    pub feasible: bool,
    pub degenerate: bool,
    pub channel_hash: u64,
    /// True sum rate after each optimizer pass (empty unless feasible).
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub scenario: String,
    pub snr_db: f64,
    /// Means over feasible trials; `None` when there are none.
    pub mean_sum_rate: Option<f64>,
    pub mean_ee: Option<f64>,
    pub n_feasible: usize,
    pub n_infeasible: usize,
    pub n_degenerate: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<TrialRow>,
    pub aggregates: Vec<Aggregate>,
}

impl SweepResult {
    pub fn n_feasible(&self) -> usize {
        self.rows.iter().filter(|r| r.feasible).count()
    }

    /// Rows of one cell, in trial order.
    pub fn cell<'a>(&'a self, scenario: &'a str, snr_db: f64) -> impl Iterator<Item = &'a TrialRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.scenario == scenario && r.snr_db == snr_db)
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Groups rows by (scenario, snr) in first-appearance order.
pub fn aggregate(rows: &[TrialRow]) -> Vec<Aggregate> {
    let mut keys: Vec<(String, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(s, x)| *s == r.scenario && *x == r.snr_db) {
            keys.push((r.scenario.clone(), r.snr_db));
        }
    }
    keys.into_iter()
        .map(|(scenario, snr_db)| {
            let cell: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.scenario == scenario && r.snr_db == snr_db)
                .collect();
            let ok: Vec<&&TrialRow> = cell.iter().filter(|r| r.feasible).collect();
            let n_degenerate = cell.iter().filter(|r| r.degenerate).count();
            Aggregate {
                mean_sum_rate: mean(&ok.iter().map(|r| r.sum_rate).collect::<Vec<_>>()),
                mean_ee: mean(&ok.iter().map(|r| r.energy_efficiency).collect::<Vec<_>>()),
                n_feasible: ok.len(),
                n_infeasible: cell.len() - ok.len() - n_degenerate,
                n_degenerate,
                scenario,
                snr_db,
            }
        })
        .collect()
}

/// Runs every (scenario, snr, trial) cell on the rayon pool. Output order
/// is scenario-major, then SNR, then trial, regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, SweepError> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for scenario in &spec.scenarios {
        for &snr in &spec.snr_points_db {
            for trial in 0..spec.n_trials {
                jobs.push((*scenario, snr, trial));
            }
        }
    }
    let rows: Vec<TrialRow> = jobs
        .par_iter()
        .map(|&(scenario, snr_db, trial)| {
            let cfg = scenario.apply(&spec.config).with_snr_db(snr_db);
            let out = run_trial(&cfg, derive_seed(spec.base_seed, trial));
            TrialRow {
                scenario: scenario.label(),
                snr_db,
                trial,
                seed: out.seed,
                sum_rate: out.metrics.sum_rate,
                energy_efficiency: out.metrics.energy_efficiency,
                feasible: out.feasible(),
                degenerate: out.status == TrialStatus::Degenerate,
                channel_hash: out.channel_hash,
                trace: out.solution.map(|s| s.objective_trace).unwrap_or_default(),
            }
        })
        .collect();
    let aggregates = aggregate(&rows);
    Ok(SweepResult { rows, aggregates })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| ABSENT.to_string(), |x| x.to_string())
}

pub const ROWS_HEADER: [&str; 8] = [
    "scenario",
    "snr_db",
    "trial",
    "seed",
    "sum_rate_bpshz",
    "ee_bpshz_per_w",
    "feasible",
    "degenerate",
];
pub const AGGREGATES_HEADER: [&str; 7] = [
    "scenario",
    "snr_db",
    "mean_sum_rate",
    "mean_ee",
    "n_feasible",
    "n_infeasible",
    "n_degenerate",
];
pub const TRACE_HEADER: [&str; 5] = ["scenario", "snr_db", "trial", "iteration", "sum_rate"];

pub fn write_rows<W: Write>(rows: &[TrialRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROWS_HEADER)?;
    for r in rows {
        let metric = |x: f64| opt(r.feasible.then_some(x));
        w.write_record(&[
            r.scenario.clone(),
            r.snr_db.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            metric(r.sum_rate),
            metric(r.energy_efficiency),
            r.feasible.to_string(),
            r.degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregates<W: Write>(aggs: &[Aggregate], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATES_HEADER)?;
    for a in aggs {
        w.write_record(&[
            a.scenario.clone(),
            a.snr_db.to_string(),
            opt(a.mean_sum_rate),
            opt(a.mean_ee),
            a.n_feasible.to_string(),
            a.n_infeasible.to_string(),
            a.n_degenerate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_traces<W: Write>(rows: &[TrialRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in rows {
        for (i, v) in r.trace.iter().enumerate() {
            w.write_record(&[
                r.scenario.clone(),
                r.snr_db.to_string(),
                r.trial.to_string(),
                (i + 1).to_string(),
                v.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `rows.csv`, `aggregates.csv` and, if asked, `trace.csv` into `dir`.
pub fn emit_results(result: &SweepResult, dir: &Path, with_trace: bool) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let open = |name: &str| {
        let path = dir.join(name);
        File::create(&path).with_context(|| format!("creating {}", path.display()))
    };
    write_rows(&result.rows, open("rows.csv")?).context("writing rows.csv")?;
    write_aggregates(&result.aggregates, open("aggregates.csv")?).context("writing aggregates.csv")?;
    if with_trace {
        write_traces(&result.rows, open("trace.csv")?).context("writing trace.csv")?;
    }
    Ok(())
}

fn parse_opt(field: &str) -> anyhow::Result<Option<f64>> {
    if field == ABSENT {
        Ok(None)
    } else {
        Ok(Some(field.parse()?))
    }
}

/// Parses a rows CSV back; channel hashes and traces are not stored there.
pub fn read_rows<R: Read>(input: R) -> anyhow::Result<Vec<TrialRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header == ROWS_HEADER, "unexpected rows header {header:?}");
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let feasible: bool = rec[6].parse()?;
            Ok(TrialRow {
                scenario: rec[0].to_string(),
                snr_db: rec[1].parse()?,
                trial: rec[2].parse()?,
                seed: rec[3].parse()?,
                sum_rate: parse_opt(&rec[4])?.unwrap_or(0.0),
                energy_efficiency: parse_opt(&rec[5])?.unwrap_or(0.0),
                feasible,
                degenerate: rec[7].parse()?,
                channel_hash: 0,
                trace: Vec::new(),
            })
        })
        .collect()
}

pub fn read_aggregates<R: Read>(input: R) -> anyhow::Result<Vec<Aggregate>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    anyhow::ensure!(header == AGGREGATES_HEADER, "unexpected aggregates header {header:?}");
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            Ok(Aggregate {
                scenario: rec[0].to_string(),
                snr_db: rec[1].parse()?,
                mean_sum_rate: parse_opt(&rec[2])?,
                mean_ee: parse_opt(&rec[3])?,
                n_feasible: rec[4].parse()?,
                n_infeasible: rec[5].parse()?,
                n_degenerate: rec[6].parse()?,
            })
        })
        .collect()
}
