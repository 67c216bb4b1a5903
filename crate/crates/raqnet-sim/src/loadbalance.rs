//! Distributed load balancing over the overlay.
//!
//! Each round every node gathers a neighborhood load snapshot by
//! restricted flooding (`probe_load`), categorizes itself against the
//! neighborhood utilization, and heavy nodes hand virtual servers to
//! nearby light nodes. Receiver-side synch gates arbitrate conflicting
//! transfers so no receiver is pushed past its own target load.
//!
//! Two baselines are included: a topology-unaware variant (distance
//! filters disabled, so selection is purely utilization-driven) and a
//! centralized directory that greedily moves the heaviest virtual server
//! to the least-utilized feasible node while ignoring distance.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::overlay::{NodeId, Overlay, TransferRecord, VsId};
use crate::topology::Distances;

/// Knobs of the balancing protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct LBParams {
    /// Probe hop budget.
    pub ttl: u32,
    /// Max network distance (latency units) a probe or transfer may span.
    pub desired_val: f64,
    /// Distance-difference threshold under which candidate receivers are
    /// compared by utilization instead of proximity.
    pub qlb: f64,
    /// Slack on the target load, as a fraction of capacity.
    pub epsilon: f64,
    /// Nominal virtual servers per node; doubles as the probe fan-out cap.
    pub num_vs: usize,
    /// Max successful transfers a node may originate per round.
    pub max_transfers_per_round: usize,
    /// Max candidate receivers tried per virtual server after rejections.
    pub retry_budget: usize,
    /// Whether the origin's own fan-out is capped at `num_vs`.
    pub cap_first_hop: bool,
    /// How a node orders its probe targets before applying the cap.
    pub probe_order: ProbeOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOrder {
    /// Closest to the probing origin first (ties by node id).
    NearestFirst,
    /// Plain ascending node id, for distance-blind operation.
    AscendingId,
}

/// Which balancing algorithm a run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BalanceMode {
    #[serde(rename = "aware")]
    TopologyAware,
    #[serde(rename = "unaware")]
    TopologyUnaware,
    #[serde(rename = "directory")]
    Directory,
}

impl BalanceMode {
    pub fn label(&self) -> &'static str {
        match self {
            BalanceMode::TopologyAware => "aware",
            BalanceMode::TopologyUnaware => "unaware",
            BalanceMode::Directory => "directory",
        }
    }
}

impl LBParams {
    /// Defaults for a deployment with `num_vs` virtual servers per node.
    pub fn defaults(num_vs: usize) -> Self {
        LBParams {
            ttl: 2,
            desired_val: 400.0,
            qlb: 130.0,
            epsilon: 0.05,
            num_vs,
            max_transfers_per_round: num_vs,
            retry_budget: 3,
            cap_first_hop: true,
            probe_order: ProbeOrder::NearestFirst,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.ttl < 1 {
            return Err(SimError::Config("ttl must be at least 1".into()));
        }
        if !(self.desired_val > 0.0) {
            return Err(SimError::Config(format!(
                "desired_val must be > 0, got {}",
                self.desired_val
            )));
        }
        if !(self.qlb >= 0.0) {
            return Err(SimError::Config(format!("qlb must be >= 0, got {}", self.qlb)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(SimError::Config(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.num_vs == 0 {
            return Err(SimError::Config("num_vs must be at least 1".into()));
        }
        if self.max_transfers_per_round == 0 {
            return Err(SimError::Config(
                "max_transfers_per_round must be at least 1".into(),
            ));
        }
        if self.retry_budget == 0 {
            return Err(SimError::Config("retry_budget must be at least 1".into()));
        }
        Ok(())
    }

    /// Parameters actually in force for a mode. The unaware baseline lifts
    /// both distance thresholds, uncaps the origin's first hop, and orders
    /// targets by id so no distance information leaks in.
    pub fn for_mode(&self, mode: BalanceMode) -> LBParams {
        let mut p = self.clone();
        if mode == BalanceMode::TopologyUnaware {
            p.desired_val = f64::INFINITY;
            p.qlb = f64::INFINITY;
            p.cap_first_hop = false;
            p.probe_order = ProbeOrder::AscendingId;
        }
        p
    }
}

/// One reply gathered by a probe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadInfoEntry {
    pub node: NodeId,
    pub load: f64,
    pub capacity: f64,
    pub distance_to_origin: f64,
}

/// Neighborhood load information set: the deduplicated replies one node
/// collected, sorted by node id. Never contains the origin itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Nlis {
    pub origin: NodeId,
    pub entries: Vec<LoadInfoEntry>,
}

impl Nlis {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Worst-case NLIS size when every hop fans out to `num_vs` fresh nodes:
/// the geometric series sum num_vs + num_vs^2 + ... + num_vs^ttl.
pub fn nlis_member_bound(num_vs: usize, ttl: u32) -> usize {
    if num_vs <= 1 {
        return ttl as usize;
    }
    num_vs * (num_vs.pow(ttl) - 1) / (num_vs - 1)
}

/// Targets `sender` forwards a probe to: the distinct host nodes behind
/// all of its routing-table entries, minus itself and the origin, minus
/// anything at or beyond `desired_val` from the origin. Ordered per the
/// probe discipline and capped at `num_vs` unless `uncapped`.
fn probe_targets(
    overlay: &Overlay,
    sender: NodeId,
    origin: NodeId,
    params: &LBParams,
    uncapped: bool,
    oracle: &dyn Distances,
    cache: &mut HashMap<NodeId, f64>,
) -> Vec<(NodeId, f64)> {
    let mut hosts: BTreeSet<NodeId> = BTreeSet::new();
    for &vs in &overlay.nodes[sender].virtual_servers {
        for entry in overlay.virtual_servers[vs].routing_table.entries() {
            let target = &overlay.virtual_servers[entry.target];
            if target.alive && target.host != sender && target.host != origin {
                hosts.insert(target.host);
            }
        }
    }
    let mut list: Vec<(NodeId, f64)> = hosts
        .into_iter()
        .map(|h| {
            let d = *cache
                .entry(h)
                .or_insert_with(|| oracle.distance(origin, h));
            (h, d)
        })
        .filter(|&(_, d)| d < params.desired_val)
        .collect();
    if params.probe_order == ProbeOrder::NearestFirst {
        list.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    }
    if !uncapped {
        list.truncate(params.num_vs);
    }
    list
}

/// Restricted flooding from `origin`: every reached node replies once with
/// its load, capacity and distance, then forwards while TTL remains.
/// Forwarding never exceeds `num_vs` distinct targets per node (except an
/// uncapped first hop when configured), and every recipient must sit
/// strictly closer to the origin than `desired_val`.
pub fn probe_load(
    overlay: &Overlay,
    origin: NodeId,
    params: &LBParams,
    oracle: &dyn Distances,
) -> Nlis {
    let mut cache: HashMap<NodeId, f64> = HashMap::new();
    let mut received: BTreeMap<NodeId, LoadInfoEntry> = BTreeMap::new();
    let mut frontier: Vec<NodeId> = vec![origin];
    for hop in 0..params.ttl {
        let uncapped = hop == 0 && !params.cap_first_hop;
        let mut fresh: BTreeSet<NodeId> = BTreeSet::new();
        for &sender in &frontier {
            for (target, d) in
                probe_targets(overlay, sender, origin, params, uncapped, oracle, &mut cache)
            {
                if received.contains_key(&target) {
                    continue;
                }
                received.insert(
                    target,
                    LoadInfoEntry {
                        node: target,
                        load: overlay.node_load(target),
                        capacity: overlay.nodes[target].capacity,
                        distance_to_origin: d,
                    },
                );
                fresh.insert(target);
            }
        }
        if fresh.is_empty() {
            break;
        }
        frontier = fresh.into_iter().collect();
    }
    Nlis {
        origin,
        entries: received.into_values().collect(),
    }
}

/// Aggregate utilization across the neighborhood, origin included:
/// (origin load + neighbor loads) / (origin capacity + neighbor capacities).
pub fn neighborhood_utilization(origin_load: f64, origin_capacity: f64, nlis: &Nlis) -> f64 {
    let load: f64 = origin_load + nlis.entries.iter().map(|e| e.load).sum::<f64>();
    let capacity: f64 = origin_capacity + nlis.entries.iter().map(|e| e.capacity).sum::<f64>();
    load / capacity
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeCategory {
    Heavy,
    Light,
}

/// Heavy iff load strictly exceeds the target (neighutil + epsilon) * capacity.
pub fn categorize(load: f64, capacity: f64, neighutil: f64, epsilon: f64) -> NodeCategory {
    if load > (neighutil + epsilon) * capacity {
        NodeCategory::Heavy
    } else {
        NodeCategory::Light
    }
}

/// Pick which virtual server a heavy node should shed so its load drops
/// to `target_load`: the lightest single VS that suffices, or the
/// heaviest when none does (later rounds finish the job). `skip` holds
/// servers that already failed placement this round; None means every
/// remaining server has been tried.
pub fn choose_candidate_vs(
    overlay: &Overlay,
    node: NodeId,
    target_load: f64,
    skip: &BTreeSet<VsId>,
) -> Result<Option<VsId>, SimError> {
    let hosted = &overlay.nodes[node].virtual_servers;
    if hosted.is_empty() {
        return Err(SimError::Config(format!(
            "node {node} hosts no virtual servers to shed"
        )));
    }
    let excess = overlay.node_load(node) - target_load;
    let mut lightest_sufficient: Option<(f64, VsId)> = None;
    let mut heaviest: Option<(f64, VsId)> = None;
    for &vs in hosted {
        if skip.contains(&vs) {
            continue;
        }
        let load = overlay.virtual_servers[vs].load;
        if load >= excess && lightest_sufficient.map_or(true, |(best, _)| load < best) {
            lightest_sufficient = Some((load, vs));
        }
        if heaviest.map_or(true, |(best, _)| load > best) {
            heaviest = Some((load, vs));
        }
    }
    Ok(lightest_sufficient.or(heaviest).map(|(_, vs)| vs))
}

/// Scan the NLIS for a receiver for a VS of the given load. An entry is
/// feasible when its probed load plus the VS still sits under
/// neighutil * capacity. Feasible entries are compared pairwise in id
/// order: within `qlb` distance of the incumbent the lower-utilization
/// node wins, beyond it the closer one does; ties keep the incumbent.
pub fn find_light_node(
    nlis: &Nlis,
    vs_load: f64,
    neighutil: f64,
    qlb: f64,
    exclude: &BTreeSet<NodeId>,
) -> Option<NodeId> {
    let mut best: Option<(NodeId, f64, f64)> = None;
    for e in &nlis.entries {
        if exclude.contains(&e.node) {
            continue;
        }
        if !(e.load + vs_load < neighutil * e.capacity) {
            continue;
        }
        let util = e.load / e.capacity;
        match best {
            None => best = Some((e.node, e.distance_to_origin, util)),
            Some((_, best_dist, best_util)) => {
                let wins = if (e.distance_to_origin - best_dist).abs() <= qlb {
                    util < best_util
                } else {
                    e.distance_to_origin < best_dist
                };
                if wins {
                    best = Some((e.node, e.distance_to_origin, util));
                }
            }
        }
    }
    best.map(|(node, _, _)| node)
}

/// Receiver-side transfer arbitration for one round.
#[derive(Debug)]
pub struct SynchState {
    /// Per-node load at round start, as the probes reported it.
    snapshot: Vec<f64>,
    /// Per-node own target load, frozen at round start.
    target: Vec<f64>,
    /// Whether the node has already fielded a synch this round.
    synched: Vec<bool>,
    pub rejected: usize,
    pub gate_violations: usize,
}

impl SynchState {
    pub fn new(snapshot: Vec<f64>, target: Vec<f64>) -> Self {
        let n = snapshot.len();
        SynchState {
            snapshot,
            target,
            synched: vec![false; n],
            rejected: 0,
            gate_violations: 0,
        }
    }

    /// Whether `receiver` acknowledges a synch for an incoming VS of
    /// `vs_load`. The first synch of the round additionally requires the
    /// receiver's load to be unchanged since it was probed; every synch
    /// requires the post-transfer load to stay under the receiver's own
    /// frozen target, so a transfer can never make the receiver heavy.
    fn acknowledges(&mut self, receiver: NodeId, vs_load: f64, current_load: f64) -> bool {
        let first = !self.synched[receiver];
        self.synched[receiver] = true;
        if first && current_load != self.snapshot[receiver] {
            return false;
        }
        current_load + vs_load < self.target[receiver]
    }
}

/// Synch/ack handshake followed by the transfer itself. Returns the
/// record on ack, `None` on rejection.
pub fn synchronize_and_transfer(
    overlay: &mut Overlay,
    state: &mut SynchState,
    heavy: NodeId,
    light: NodeId,
    vs: VsId,
    oracle: &dyn Distances,
    round: usize,
) -> Result<Option<TransferRecord>, SimError> {
    let vs_load = overlay.vs(vs)?.load;
    let receiver_load = overlay.node_load(light);
    if !state.acknowledges(light, vs_load, receiver_load) {
        state.rejected += 1;
        return Ok(None);
    }
    let record = overlay.transfer_virtual_server(vs, heavy, light, oracle, round)?;
    if !(overlay.node_load(light) < state.target[light]) {
        state.gate_violations += 1;
    }
    Ok(Some(record))
}

/// What one balancing round did.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub round: usize,
    pub transfers: Vec<TransferRecord>,
    pub heavy_before: usize,
    pub heavy_after: usize,
    pub max_util_before: f64,
    pub max_util_after: f64,
    pub rejected_synchs: usize,
    pub max_nlis_size: usize,
    /// Accepted transfers that left the receiver at or above its own
    /// frozen target. The synch gate keeps this at zero; it is counted
    /// rather than assumed so runs audit themselves.
    pub gate_violations: usize,
}

fn max_utilization(overlay: &Overlay) -> f64 {
    (0..overlay.nodes.len())
        .map(|n| overlay.node_utilization(n))
        .fold(0.0, f64::max)
}

/// One synchronized round: every node probes from the round-start
/// snapshot and freezes its target, then heavy nodes shed virtual servers
/// in ascending id order, the synch gate arbitrating each hand-off.
pub fn run_balancing_round(
    overlay: &mut Overlay,
    base: &LBParams,
    oracle: &dyn Distances,
    mode: BalanceMode,
    round: usize,
) -> Result<RoundReport, SimError> {
    base.validate()?;
    if mode == BalanceMode::Directory {
        return run_directory_round(overlay, base, oracle, round);
    }
    let params = base.for_mode(mode);
    let node_count = overlay.nodes.len();

    // Phase 1: all probes complete against the same pre-round loads.
    let snapshot: Vec<f64> = (0..node_count).map(|n| overlay.node_load(n)).collect();
    let mut nlises = Vec::with_capacity(node_count);
    let mut neighutil = Vec::with_capacity(node_count);
    let mut max_nlis_size = 0;
    for n in 0..node_count {
        let nlis = probe_load(overlay, n, &params, oracle);
        max_nlis_size = max_nlis_size.max(nlis.len());
        neighutil.push(neighborhood_utilization(
            snapshot[n],
            overlay.nodes[n].capacity,
            &nlis,
        ));
        nlises.push(nlis);
    }

    // Phase 2: categorization against targets frozen for the round.
    let target: Vec<f64> = (0..node_count)
        .map(|n| (neighutil[n] + params.epsilon) * overlay.nodes[n].capacity)
        .collect();
    let heavy: Vec<NodeId> = (0..node_count)
        .filter(|&n| {
            categorize(snapshot[n], overlay.nodes[n].capacity, neighutil[n], params.epsilon)
                == NodeCategory::Heavy
        })
        .collect();
    let heavy_before = heavy.len();
    let max_util_before = max_utilization(overlay);

    // Phase 3: reassignment, ascending node id, gate arbitrating.
    let mut state = SynchState::new(snapshot, target.clone());
    let mut transfers = Vec::new();
    for &node in &heavy {
        let mut successes = 0;
        // Servers that failed their receiver budget sit the round out;
        // the node moves on to its next candidate rather than stalling.
        let mut failed: BTreeSet<VsId> = BTreeSet::new();
        while successes < params.max_transfers_per_round
            && overlay.node_load(node) > target[node]
            && overlay.nodes[node].virtual_servers.len() > 1
        {
            let Some(vs) = choose_candidate_vs(overlay, node, target[node], &failed)? else {
                break;
            };
            let vs_load = overlay.virtual_servers[vs].load;
            let mut exclude: BTreeSet<NodeId> = BTreeSet::new();
            let mut placed = false;
            for _ in 0..params.retry_budget {
                let Some(receiver) =
                    find_light_node(&nlises[node], vs_load, neighutil[node], params.qlb, &exclude)
                else {
                    break;
                };
                if let Some(record) = synchronize_and_transfer(
                    overlay, &mut state, node, receiver, vs, oracle, round,
                )? {
                    transfers.push(record);
                    successes += 1;
                    placed = true;
                    break;
                }
                exclude.insert(receiver);
            }
            if !placed {
                failed.insert(vs);
            }
        }
    }

    let heavy_after = (0..node_count)
        .filter(|&n| overlay.node_load(n) > target[n])
        .count();
    Ok(RoundReport {
        round,
        transfers,
        heavy_before,
        heavy_after,
        max_util_before,
        max_util_after: max_utilization(overlay),
        rejected_synchs: state.rejected,
        max_nlis_size,
        gate_violations: state.gate_violations,
    })
}

/// Centralized baseline: a directory with a global view repeatedly moves
/// the heaviest virtual server still hosted by an over-target node to the
/// least-utilized node that can take it, ignoring distance entirely.
pub fn run_directory_round(
    overlay: &mut Overlay,
    params: &LBParams,
    oracle: &dyn Distances,
    round: usize,
) -> Result<RoundReport, SimError> {
    params.validate()?;
    let node_count = overlay.nodes.len();
    let total_load: f64 = (0..node_count).map(|n| overlay.node_load(n)).sum();
    let total_capacity: f64 = overlay.nodes.iter().map(|n| n.capacity).sum();
    let global_util = total_load / total_capacity;
    let target: Vec<f64> = (0..node_count)
        .map(|n| (global_util + params.epsilon) * overlay.nodes[n].capacity)
        .collect();

    let heavy_before = (0..node_count)
        .filter(|&n| overlay.node_load(n) > target[n])
        .count();
    let max_util_before = max_utilization(overlay);

    let mut moved = vec![0usize; node_count];
    let mut transfers = Vec::new();
    let mut gate_violations = 0;
    loop {
        // All shed candidates from still-heavy sources, heaviest first.
        let mut candidates: Vec<(f64, NodeId, VsId)> = (0..node_count)
            .filter(|&n| {
                overlay.node_load(n) > target[n]
                    && moved[n] < params.max_transfers_per_round
                    && overlay.nodes[n].virtual_servers.len() > 1
            })
            .flat_map(|n| {
                overlay.nodes[n]
                    .virtual_servers
                    .iter()
                    .map(move |&vs| (n, vs))
            })
            .map(|(n, vs)| (overlay.virtual_servers[vs].load, n, vs))
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut any = false;
        for (vs_load, source, vs) in candidates {
            let receiver = (0..node_count)
                .filter(|&r| r != source && overlay.node_load(r) + vs_load < target[r])
                .min_by(|&a, &b| {
                    overlay
                        .node_utilization(a)
                        .total_cmp(&overlay.node_utilization(b))
                        .then(a.cmp(&b))
                });
            if let Some(receiver) = receiver {
                let record =
                    overlay.transfer_virtual_server(vs, source, receiver, oracle, round)?;
                if !(overlay.node_load(receiver) < target[receiver]) {
                    gate_violations += 1;
                }
                transfers.push(record);
                moved[source] += 1;
                any = true;
                break;
            }
        }
        if !any {
            break;
        }
    }

    let heavy_after = (0..node_count)
        .filter(|&n| overlay.node_load(n) > target[n])
        .count();
    Ok(RoundReport {
        round,
        transfers,
        heavy_before,
        heavy_after,
        max_util_before,
        max_util_after: max_utilization(overlay),
        rejected_synchs: 0,
        max_nlis_size: 0,
        gate_violations,
    })
}
