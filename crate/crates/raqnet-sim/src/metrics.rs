//! Run metrics and CSV emission.
//!
//! Everything here is post-processing over transfer logs and overlay
//! snapshots: load transfer cost, the benefit of topology awareness,
//! the load-weighted distance CDF, utilization scatter data, and the
//! in-degree distribution. CSV files are written with fixed column
//! orders so downstream tooling can rely on them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::SimError;
use crate::overlay::{InDegreeStats, Overlay, TransferRecord};

/// Sum of load x distance over all transfers.
pub fn load_transfer_cost(transfers: &[TransferRecord]) -> f64 {
    transfers.iter().map(|t| t.load * t.distance).sum()
}

/// Relative saving of the topology-aware run against the unaware one:
/// (ltc_without - ltc_topology) / ltc_without.
pub fn benefit(ltc_topology: f64, ltc_without: f64) -> Result<f64, SimError> {
    if ltc_without == 0.0 {
        return Err(SimError::Config(
            "benefit undefined: the baseline run transferred nothing".into(),
        ));
    }
    Ok((ltc_without - ltc_topology) / ltc_without)
}

/// Load-weighted cumulative distribution of transfer distance: at each
/// distinct distance, the fraction of all transferred load that moved at
/// most that far. Monotone and ending at 1.
pub fn transferred_load_cdf(transfers: &[TransferRecord]) -> Result<Vec<(f64, f64)>, SimError> {
    if transfers.is_empty() {
        return Err(SimError::Config("no transfers to build a CDF from".into()));
    }
    let total: f64 = transfers.iter().map(|t| t.load).sum();
    if total <= 0.0 {
        return Err(SimError::Config("transferred load sums to zero".into()));
    }
    let mut sorted: Vec<(f64, f64)> = transfers.iter().map(|t| (t.distance, t.load)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf: Vec<(f64, f64)> = Vec::new();
    let mut cumulative = 0.0;
    for (distance, load) in sorted {
        cumulative += load;
        match cdf.last_mut() {
            Some(last) if last.0 == distance => last.1 = cumulative / total,
            _ => cdf.push((distance, cumulative / total)),
        }
    }
    Ok(cdf)
}

/// Smallest distance by which at least half of the transferred load has
/// moved, read straight off the CDF.
pub fn median_transfer_distance(transfers: &[TransferRecord]) -> Result<f64, SimError> {
    let cdf = transferred_load_cdf(transfers)?;
    Ok(cdf
        .iter()
        .find(|&&(_, frac)| frac >= 0.5)
        .map(|&(d, _)| d)
        .unwrap_or_else(|| cdf.last().expect("non-empty").0))
}

/// Per-node (capacity, load) points plus the summary statistics read off
/// the utilization scatter.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilizationScatter {
    pub points: Vec<(f64, f64)>,
    pub max_utilization: f64,
    pub p99_utilization: f64,
}

pub fn utilization_scatter(overlay: &Overlay) -> UtilizationScatter {
    let points: Vec<(f64, f64)> = overlay
        .nodes
        .iter()
        .map(|n| (n.capacity, overlay.node_load(n.id)))
        .collect();
    let mut utils: Vec<f64> = points.iter().map(|&(c, l)| l / c).collect();
    utils.sort_by(f64::total_cmp);
    let max_utilization = *utils.last().unwrap_or(&0.0);
    let p99_utilization = if utils.is_empty() {
        0.0
    } else {
        // Nearest-rank 99th percentile.
        let rank = ((0.99 * utils.len() as f64).ceil() as usize).clamp(1, utils.len());
        utils[rank - 1]
    };
    UtilizationScatter {
        points,
        max_utilization,
        p99_utilization,
    }
}

/// Pearson correlation between the two coordinates of the points.
/// Degenerate (zero-variance) inputs yield 0.
pub fn pearson_correlation(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    if points.len() < 2 {
        return 0.0;
    }
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for &(x, y) in points {
        cov += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x).powi(2);
        var_y += (y - mean_y).powi(2);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return 0.0;
    }
    cov / (var_x * var_y).sqrt()
}

fn write_text(path: &Path, text: &str) -> Result<(), SimError> {
    fs::write(path, text).map_err(|source| SimError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// `transfers.csv`: round, src, dst, load, distance.
pub fn write_transfers_csv(path: &Path, transfers: &[TransferRecord]) -> Result<(), SimError> {
    let mut out = String::from("round,src,dst,load,distance\n");
    for t in transfers {
        writeln!(out, "{},{},{},{},{}", t.round, t.source, t.destination, t.load, t.distance)
            .expect("string write");
    }
    write_text(path, &out)
}

/// `nodes.csv`: node, capacity, load_before, load_after, in_degree.
pub fn write_nodes_csv(
    path: &Path,
    overlay: &Overlay,
    load_before: &[f64],
    in_degree: &InDegreeStats,
) -> Result<(), SimError> {
    let mut out = String::from("node,capacity,load_before,load_after,in_degree\n");
    for node in &overlay.nodes {
        writeln!(
            out,
            "{},{},{},{},{}",
            node.id,
            node.capacity,
            load_before[node.id],
            overlay.node_load(node.id),
            in_degree.per_node[node.id]
        )
        .expect("string write");
    }
    write_text(path, &out)
}

/// `cdf.csv`: latency, cum_fraction.
pub fn write_cdf_csv(path: &Path, cdf: &[(f64, f64)]) -> Result<(), SimError> {
    let mut out = String::from("latency,cum_fraction\n");
    for &(latency, fraction) in cdf {
        writeln!(out, "{latency},{fraction}").expect("string write");
    }
    write_text(path, &out)
}

/// `summary.csv`: ltc, benefit, max_util, rounds. Benefit is blank when
/// no paired baseline exists.
pub fn write_summary_csv(
    path: &Path,
    ltc: f64,
    benefit: Option<f64>,
    max_util: f64,
    rounds: usize,
) -> Result<(), SimError> {
    let benefit = benefit.map(|b| b.to_string()).unwrap_or_default();
    let out = format!("ltc,benefit,max_util,rounds\n{ltc},{benefit},{max_util},{rounds}\n");
    write_text(path, &out)
}
