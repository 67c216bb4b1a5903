//! Experiment orchestration: config parsing, seeded end-to-end runs,
//! parameter sweeps, and CSV emission.
//!
//! A run builds one topology, one overlay and one workload from
//! hierarchically derived sub-seeds, then executes every requested
//! balancing mode against its own copy of that shared starting state, so
//! mode comparisons (and the Benefit metric) are apples to apples.
//! Identical config and seed produce byte-identical output files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::loadbalance::{
    nlis_member_bound, run_balancing_round, BalanceMode, LBParams, RoundReport,
};
use crate::metrics::{
    benefit, load_transfer_cost, pearson_correlation, transferred_load_cdf, utilization_scatter,
    write_cdf_csv, write_nodes_csv, write_summary_csv, write_transfers_csv,
};
use crate::overlay::{FillMode, InDegreeStats, Overlay, TransferRecord};
use crate::topology::{
    embed_coordinates, generate_transit_stub, DistanceOracle, OracleMode, TopologyConfig,
};
use crate::workload::{assign_loads, CapacityProfile, LoadModel};
use crate::derive_seed;

// Sub-seed streams carved out of the master seed. Sweeps and mode
// comparisons stay paired because each subsystem draws from its own
// stream regardless of what the others consumed.
const STREAM_TOPOLOGY: u64 = 1;
const STREAM_ATTACH: u64 = 2;
const STREAM_CAPACITY: u64 = 3;
const STREAM_OVERLAY: u64 = 4;
const STREAM_LOAD: u64 = 5;
const STREAM_FILL: u64 = 6;
const STREAM_EMBED: u64 = 7;

fn default_node_count() -> usize {
    4096
}

fn default_rounds() -> usize {
    10
}

fn default_seed() -> u64 {
    1
}

fn default_dims() -> usize {
    2
}

fn default_modes() -> Vec<BalanceMode> {
    vec![BalanceMode::TopologyAware, BalanceMode::TopologyUnaware]
}

fn default_oracle() -> OracleMode {
    OracleMode::Exact
}

fn default_embedding_dims() -> usize {
    5
}

fn default_embedding_iterations() -> usize {
    100
}

fn default_mu_factor() -> f64 {
    0.6
}

fn default_sigma_factor() -> f64 {
    0.125
}

fn default_ttl() -> u32 {
    2
}

fn default_desired_val() -> f64 {
    400.0
}

fn default_qlb() -> f64 {
    130.0
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_retry_budget() -> usize {
    3
}

fn default_output_dir() -> String {
    "out".into()
}

/// Full description of one experiment. Every field has a default
/// reproducing the reference setup, so an empty config file is valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Overlay (physical) node count.
    pub node_count: usize,
    /// Virtual servers per node; defaults to ceil(log2(node_count)).
    pub num_vs: Option<usize>,
    /// Search-space dimensionality.
    pub dims: usize,
    /// Balancing rounds per mode.
    pub rounds: usize,
    pub seed: u64,
    /// Modes executed against the shared starting state.
    pub modes: Vec<BalanceMode>,
    pub oracle: OracleMode,
    pub embedding_dims: usize,
    pub embedding_iterations: usize,
    pub topology: TopologyConfig,
    pub capacity_profile: CapacityProfile,
    /// Mean total load, absolute. When unset, load_mu_factor applies.
    pub load_mu: Option<f64>,
    /// Stddev of total load, absolute. When unset, load_sigma_factor applies.
    pub load_sigma: Option<f64>,
    /// Mean total load as a fraction of total capacity.
    pub load_mu_factor: f64,
    /// Stddev as a fraction of mu, shrunk by sqrt(total VS count) so the
    /// per-VS truncation rate stays well under 1%.
    pub load_sigma_factor: f64,
    pub ttl: u32,
    pub desired_val: f64,
    pub qlb: f64,
    pub epsilon: f64,
    /// Max transfers a node may originate per round; defaults to num_vs.
    pub max_transfers_per_round: Option<usize>,
    pub retry_budget: usize,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            node_count: default_node_count(),
            num_vs: None,
            dims: default_dims(),
            rounds: default_rounds(),
            seed: default_seed(),
            modes: default_modes(),
            oracle: default_oracle(),
            embedding_dims: default_embedding_dims(),
            embedding_iterations: default_embedding_iterations(),
            topology: TopologyConfig::default(),
            capacity_profile: CapacityProfile::default(),
            load_mu: None,
            load_sigma: None,
            load_mu_factor: default_mu_factor(),
            load_sigma_factor: default_sigma_factor(),
            ttl: default_ttl(),
            desired_val: default_desired_val(),
            qlb: default_qlb(),
            epsilon: default_epsilon(),
            max_transfers_per_round: None,
            retry_budget: default_retry_budget(),
            output_dir: default_output_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::ConfigParse {
            path: "<inline>".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = fs::read_to_string(path).map_err(|source| SimError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| SimError::ConfigParse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Virtual servers per node, defaulted to ceil(log2(node_count)).
    pub fn effective_num_vs(&self) -> usize {
        self.num_vs
            .unwrap_or_else(|| ((self.node_count as f64).log2().ceil() as usize).max(1))
    }

    pub fn lb_params(&self) -> LBParams {
        let num_vs = self.effective_num_vs();
        LBParams {
            ttl: self.ttl,
            desired_val: self.desired_val,
            qlb: self.qlb,
            epsilon: self.epsilon,
            num_vs,
            max_transfers_per_round: self.max_transfers_per_round.unwrap_or(num_vs),
            retry_budget: self.retry_budget,
            ..LBParams::defaults(num_vs)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.node_count < 2 {
            return Err(SimError::Config(format!(
                "node_count must be at least 2, got {}",
                self.node_count
            )));
        }
        if self.rounds < 1 {
            return Err(SimError::Config("rounds must be at least 1".into()));
        }
        if self.dims < 1 {
            return Err(SimError::Config("dims must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(SimError::Config("modes must not be empty".into()));
        }
        if !(self.load_mu_factor > 0.0) {
            return Err(SimError::Config(format!(
                "load_mu_factor must be > 0, got {}",
                self.load_mu_factor
            )));
        }
        if !(self.load_sigma_factor >= 0.0) {
            return Err(SimError::Config(format!(
                "load_sigma_factor must be >= 0, got {}",
                self.load_sigma_factor
            )));
        }
        self.topology.validate()?;
        self.capacity_profile.validate()?;
        self.lb_params().validate()?;
        Ok(())
    }
}

/// Results of one mode within an experiment.
#[derive(Debug, Clone)]
pub struct ModeOutcome {
    pub mode: BalanceMode,
    pub reports: Vec<RoundReport>,
    pub transfers: Vec<TransferRecord>,
    pub ltc: f64,
    /// Relative LTC saving versus the unaware baseline, when both ran.
    pub benefit: Option<f64>,
    pub max_util_before: f64,
    pub max_util_after: f64,
    pub corr_before: f64,
    pub corr_after: f64,
    pub heavy_after: usize,
    pub in_degree: InDegreeStats,
    pub max_nlis_size: usize,
}

/// Results of one full experiment across all its modes.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub modes: Vec<ModeOutcome>,
    /// Fraction of load draws clamped at zero.
    pub truncation_rate: f64,
    /// Worst-case NLIS size for the configured fan-out cap and TTL.
    pub nlis_bound: usize,
}

impl ExperimentOutcome {
    pub fn mode(&self, mode: BalanceMode) -> Option<&ModeOutcome> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

fn ensure_dir(path: &Path, overwrite: bool) -> Result<(), SimError> {
    if path.exists() && !overwrite {
        return Err(SimError::OutputExists(path.display().to_string()));
    }
    fs::create_dir_all(path).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_rounds_csv(path: &Path, reports: &[RoundReport]) -> Result<(), SimError> {
    let mut out = String::from(
        "round,transfers,heavy_before,heavy_after,max_util_before,max_util_after,rejected_synchs,max_nlis,gate_violations\n",
    );
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            r.transfers.len(),
            r.heavy_before,
            r.heavy_after,
            r.max_util_before,
            r.max_util_after,
            r.rejected_synchs,
            r.max_nlis_size,
            r.gate_violations
        )
        .expect("string write");
    }
    fs::write(path, out).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Shared starting state every mode runs against.
struct BaseState {
    overlay: Overlay,
    oracle: DistanceOracle,
    loads_before: Vec<f64>,
    truncation_rate: f64,
}

fn build_base_state(config: &ExperimentConfig) -> Result<BaseState, SimError> {
    let seed = config.seed;
    let mut topo = generate_transit_stub(&config.topology, derive_seed(seed, STREAM_TOPOLOGY))?;
    topo.attach_hosts(config.node_count, derive_seed(seed, STREAM_ATTACH));

    let capacities = config
        .capacity_profile
        .sample_many(config.node_count, derive_seed(seed, STREAM_CAPACITY));

    let num_vs = config.effective_num_vs();
    let mut overlay = Overlay::new(config.dims);
    let overlay_seed = derive_seed(seed, STREAM_OVERLAY);
    for (node, &capacity) in capacities.iter().enumerate() {
        overlay.join_node(capacity, num_vs, derive_seed(overlay_seed, node as u64))?;
    }

    let model = match (config.load_mu, config.load_sigma) {
        (Some(mu), Some(sigma)) => LoadModel::new(mu, sigma)?,
        (mu_abs, sigma_abs) => {
            let total_capacity: f64 = capacities.iter().sum();
            let scaled = LoadModel::scaled(
                total_capacity,
                overlay.live_vs_count(),
                config.load_mu_factor,
                config.load_sigma_factor,
            )?;
            LoadModel::new(
                mu_abs.unwrap_or(scaled.mu),
                sigma_abs.unwrap_or(scaled.sigma),
            )?
        }
    };
    let stats = assign_loads(&mut overlay, &model, derive_seed(seed, STREAM_LOAD))?;

    let attachments = topo.host_attachments.clone();
    let oracle = match config.oracle {
        OracleMode::Exact => DistanceOracle::exact(topo, attachments),
        OracleMode::Coordinates => {
            let coords = embed_coordinates(
                &topo,
                config.embedding_dims,
                config.embedding_iterations,
                derive_seed(seed, STREAM_EMBED),
            )?;
            DistanceOracle::new(OracleMode::Coordinates, topo, attachments, coords)
        }
    };

    let loads_before = (0..overlay.nodes.len())
        .map(|n| overlay.node_load(n))
        .collect();
    Ok(BaseState {
        overlay,
        oracle,
        loads_before,
        truncation_rate: stats.truncation_rate(),
    })
}

fn run_mode(
    config: &ExperimentConfig,
    base: &BaseState,
    mode: BalanceMode,
) -> Result<(ModeOutcome, Overlay), SimError> {
    let mut overlay = base.overlay.clone();
    let fill_mode = match mode {
        BalanceMode::TopologyUnaware => FillMode::TopologyUnaware,
        // The directory baseline ignores tables for its transfers, so the
        // standard proximity-filled tables are used for its metrics.
        BalanceMode::TopologyAware | BalanceMode::Directory => FillMode::TopologyAware,
    };
    overlay.fill_all_routing_tables(
        fill_mode,
        &base.oracle,
        derive_seed(config.seed, STREAM_FILL),
    )?;

    let params = config.lb_params();
    let scatter_before = utilization_scatter(&overlay);
    let mut reports = Vec::with_capacity(config.rounds);
    let mut transfers = Vec::new();
    for round in 0..config.rounds {
        let report = run_balancing_round(&mut overlay, &params, &base.oracle, mode, round)?;
        transfers.extend(report.transfers.iter().cloned());
        reports.push(report);
    }
    let scatter_after = utilization_scatter(&overlay);

    let outcome = ModeOutcome {
        mode,
        ltc: load_transfer_cost(&transfers),
        benefit: None,
        max_util_before: scatter_before.max_utilization,
        max_util_after: scatter_after.max_utilization,
        corr_before: pearson_correlation(&scatter_before.points),
        corr_after: pearson_correlation(&scatter_after.points),
        heavy_after: reports.last().map(|r| r.heavy_after).unwrap_or(0),
        in_degree: overlay.in_degree_histogram(),
        max_nlis_size: reports.iter().map(|r| r.max_nlis_size).max().unwrap_or(0),
        transfers,
        reports,
    };
    Ok((outcome, overlay))
}

/// Run every configured mode against one shared topology + workload and
/// write the per-mode CSVs under `out_dir/<mode>/`. Refuses to touch an
/// existing directory unless `overwrite` is set.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
    overwrite: bool,
) -> Result<ExperimentOutcome, SimError> {
    config.validate()?;
    ensure_dir(out_dir, overwrite)?;

    // Snapshot the fully resolved config so the output directory is
    // self-describing and the run can be repeated verbatim.
    let snapshot = toml::to_string_pretty(config)
        .map_err(|e| SimError::Config(format!("serializing config snapshot: {e}")))?;
    let snapshot_path = out_dir.join("config.toml");
    fs::write(&snapshot_path, snapshot).map_err(|source| SimError::Io {
        path: snapshot_path.display().to_string(),
        source,
    })?;

    let base = build_base_state(config)?;
    let mut outcomes = Vec::new();
    let mut overlays = Vec::new();
    for &mode in &config.modes {
        let (outcome, overlay) = run_mode(config, &base, mode)?;
        outcomes.push(outcome);
        overlays.push(overlay);
    }

    // Benefit pairs each mode's LTC against the unaware baseline.
    let unaware_ltc = outcomes
        .iter()
        .find(|o| o.mode == BalanceMode::TopologyUnaware)
        .map(|o| o.ltc);
    for outcome in &mut outcomes {
        if outcome.mode == BalanceMode::TopologyUnaware {
            continue;
        }
        if let Some(baseline) = unaware_ltc {
            if baseline > 0.0 {
                outcome.benefit = Some(benefit(outcome.ltc, baseline)?);
            }
        }
    }

    for (outcome, overlay) in outcomes.iter().zip(&overlays) {
        let mode_dir = out_dir.join(outcome.mode.label());
        fs::create_dir_all(&mode_dir).map_err(|source| SimError::Io {
            path: mode_dir.display().to_string(),
            source,
        })?;
        write_transfers_csv(&mode_dir.join("transfers.csv"), &outcome.transfers)?;
        write_nodes_csv(
            &mode_dir.join("nodes.csv"),
            overlay,
            &base.loads_before,
            &outcome.in_degree,
        )?;
        let cdf = if outcome.transfers.is_empty() {
            Vec::new()
        } else {
            transferred_load_cdf(&outcome.transfers)?
        };
        write_cdf_csv(&mode_dir.join("cdf.csv"), &cdf)?;
        write_summary_csv(
            &mode_dir.join("summary.csv"),
            outcome.ltc,
            outcome.benefit,
            outcome.max_util_after,
            config.rounds,
        )?;
        write_rounds_csv(&mode_dir.join("rounds.csv"), &outcome.reports)?;
    }

    let params = config.lb_params();
    Ok(ExperimentOutcome {
        config: config.clone(),
        out_dir: out_dir.to_path_buf(),
        modes: outcomes,
        truncation_rate: base.truncation_rate,
        nlis_bound: nlis_member_bound(params.num_vs, params.ttl),
    })
}

/// Parameters `sweep` can vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Ttl,
    DesiredVal,
    Qlb,
    NumVs,
}

impl SweepParam {
    pub fn parse(name: &str) -> Result<Self, SimError> {
        match name {
            "ttl" => Ok(SweepParam::Ttl),
            "desired_val" => Ok(SweepParam::DesiredVal),
            "qlb" => Ok(SweepParam::Qlb),
            "num_vs" => Ok(SweepParam::NumVs),
            other => Err(SimError::Config(format!(
                "unknown sweep parameter {other:?}; expected ttl, desired_val, qlb or num_vs"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Ttl => "ttl",
            SweepParam::DesiredVal => "desired_val",
            SweepParam::Qlb => "qlb",
            SweepParam::NumVs => "num_vs",
        }
    }

    fn apply(&self, config: &mut ExperimentConfig, value: f64) -> Result<(), SimError> {
        let as_count = |value: f64, what: &str| -> Result<usize, SimError> {
            if value < 1.0 || value.fract() != 0.0 {
                return Err(SimError::Config(format!(
                    "{what} must be a positive integer, got {value}"
                )));
            }
            Ok(value as usize)
        };
        match self {
            SweepParam::Ttl => config.ttl = as_count(value, "ttl")? as u32,
            SweepParam::DesiredVal => config.desired_val = value,
            SweepParam::Qlb => config.qlb = value,
            SweepParam::NumVs => config.num_vs = Some(as_count(value, "num_vs")?),
        }
        Ok(())
    }
}

/// One experiment per value of the swept parameter, everything else
/// (seed included) held fixed. Emits each run under
/// `out_dir/<param>-<value>/` plus a merged `sweep.csv`.
pub fn sweep(
    config: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: &Path,
    overwrite: bool,
) -> Result<Vec<ExperimentOutcome>, SimError> {
    if values.is_empty() {
        return Err(SimError::Config("sweep needs at least one value".into()));
    }
    ensure_dir(out_dir, overwrite)?;

    let mut outcomes = Vec::with_capacity(values.len());
    let mut merged = String::from("param,value,mode,ltc,max_util,heavy_after,transfers\n");
    for &value in values {
        let mut point = config.clone();
        param.apply(&mut point, value)?;
        let run_dir = out_dir.join(format!("{}-{}", param.name(), value));
        let outcome = run_experiment(&point, &run_dir, overwrite)?;
        for mode in &outcome.modes {
            writeln!(
                merged,
                "{},{},{},{},{},{},{}",
                param.name(),
                value,
                mode.mode.label(),
                mode.ltc,
                mode.max_util_after,
                mode.heavy_after,
                mode.transfers.len()
            )
            .expect("string write");
        }
        outcomes.push(outcome);
    }
    let path = out_dir.join("sweep.csv");
    fs::write(&path, merged).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(outcomes)
}
