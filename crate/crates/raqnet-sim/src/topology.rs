//! Transit-stub underlay network: generation, true shortest-path
//! latencies, and a spring-relaxation coordinate embedding that stands in
//! for a live network-coordinate service.
//!
//! The underlay has three edge tiers with disjoint latency scales
//! (intra-stub < stub-transit < transit-transit). Overlay hosts attach to
//! stub nodes only; transit nodes model routers.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub type UnderlayId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Transit,
    Stub,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeTier {
    IntraStub,
    StubTransit,
    TransitTransit,
}

#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub a: UnderlayId,
    pub b: UnderlayId,
    pub latency: f64,
    pub tier: EdgeTier,
}

/// Latency range (inclusive lower, exclusive upper) for one edge tier,
/// in abstract latency units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LatencyRange(pub f64, pub f64);

impl LatencyRange {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        rng.gen_range(self.0..self.1)
    }
}

/// Generation parameters for the transit-stub underlay.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub transit_domains: usize,
    pub transit_nodes_per_domain: usize,
    pub stub_domains_per_transit_node: usize,
    pub mean_stub_nodes: usize,
    /// Reject configurations whose expected node count exceeds this.
    pub max_nodes: usize,
    pub intra_stub_latency: LatencyRange,
    pub stub_transit_latency: LatencyRange,
    pub transit_transit_latency: LatencyRange,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        // ts4k-small scale: 4 transit domains x 4 transit nodes, 5 stub
        // domains per transit node, 55 stub nodes per domain on average.
        TopologyConfig {
            transit_domains: 4,
            transit_nodes_per_domain: 4,
            stub_domains_per_transit_node: 5,
            mean_stub_nodes: 55,
            max_nodes: 100_000,
            intra_stub_latency: LatencyRange(1.0, 10.0),
            stub_transit_latency: LatencyRange(10.0, 40.0),
            transit_transit_latency: LatencyRange(40.0, 120.0),
        }
    }
}

impl TopologyConfig {
    pub fn expected_nodes(&self) -> usize {
        let transit = self.transit_domains * self.transit_nodes_per_domain;
        transit + transit * self.stub_domains_per_transit_node * self.mean_stub_nodes
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("transit_domains", self.transit_domains),
            ("transit_nodes_per_domain", self.transit_nodes_per_domain),
            (
                "stub_domains_per_transit_node",
                self.stub_domains_per_transit_node,
            ),
            ("mean_stub_nodes", self.mean_stub_nodes),
        ] {
            if v < 1 {
                return Err(SimError::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, r) in [
            ("intra_stub_latency", self.intra_stub_latency),
            ("stub_transit_latency", self.stub_transit_latency),
            ("transit_transit_latency", self.transit_transit_latency),
        ] {
            if !(r.0 > 0.0 && r.1 > r.0) {
                return Err(SimError::Config(format!(
                    "{name} must be a positive range (lo, hi) with lo < hi"
                )));
            }
        }
        if self.expected_nodes() > self.max_nodes {
            return Err(SimError::TopologyTooLarge {
                expected: self.expected_nodes(),
                cap: self.max_nodes,
            });
        }
        Ok(())
    }
}

/// Generated transit-stub underlay. Immutable after generation.
#[derive(Debug, Clone)]
pub struct TransitStubTopology {
    pub config: TopologyConfig,
    pub node_kinds: Vec<NodeKind>,
    pub edges: Vec<Edge>,
    /// Ids of all stub nodes, in id order; overlay hosts attach here.
    pub stub_nodes: Vec<UnderlayId>,
    /// Attachment point per overlay node, filled by `attach_hosts`.
    pub host_attachments: Vec<UnderlayId>,
    adjacency: Vec<Vec<(UnderlayId, f64)>>,
}

pub fn generate_transit_stub(
    config: &TopologyConfig,
    seed: u64,
) -> Result<TransitStubTopology, SimError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let t = config.transit_domains;
    let k = config.transit_nodes_per_domain;
    let mut node_kinds = vec![NodeKind::Transit; t * k];
    let mut edges: Vec<Edge> = Vec::new();
    let transit_id = |dom: usize, idx: usize| (dom * k + idx) as UnderlayId;

    let push_edge = |edges: &mut Vec<Edge>, a: UnderlayId, b: UnderlayId, tier: EdgeTier, rng: &mut ChaCha8Rng| {
        let range = match tier {
            EdgeTier::IntraStub => config.intra_stub_latency,
            EdgeTier::StubTransit => config.stub_transit_latency,
            EdgeTier::TransitTransit => config.transit_transit_latency,
        };
        edges.push(Edge {
            a,
            b,
            latency: range.sample(rng),
            tier,
        });
    };

    // Transit nodes inside one domain form a complete graph: backbone
    // routers in a domain are densely meshed.
    for dom in 0..t {
        for i in 0..k {
            for j in (i + 1)..k {
                push_edge(
                    &mut edges,
                    transit_id(dom, i),
                    transit_id(dom, j),
                    EdgeTier::TransitTransit,
                    &mut rng,
                );
            }
        }
    }

    // Domains form a ring plus a few random chords.
    if t >= 2 {
        let connect_domains = |edges: &mut Vec<Edge>, d1: usize, d2: usize, rng: &mut ChaCha8Rng| {
            let a = transit_id(d1, rng.gen_range(0..k));
            let b = transit_id(d2, rng.gen_range(0..k));
            push_edge(edges, a, b, EdgeTier::TransitTransit, rng);
        };
        for dom in 0..t {
            let next = (dom + 1) % t;
            if dom < next || t > 2 {
                connect_domains(&mut edges, dom, next, &mut rng);
            }
        }
        if t >= 4 {
            for _ in 0..t / 2 {
                let d1 = rng.gen_range(0..t);
                let d2 = rng.gen_range(0..t);
                if d1 != d2 {
                    connect_domains(&mut edges, d1, d2, &mut rng);
                }
            }
        }
    }

    // Stub domains: a random recursive tree plus a few chords, joined to
    // their transit node through one gateway.
    let mut stub_nodes = Vec::new();
    let mean = config.mean_stub_nodes;
    let lo = mean.div_ceil(2);
    let hi = mean + mean / 2;
    for dom in 0..t {
        for ti in 0..k {
            for _ in 0..config.stub_domains_per_transit_node {
                let size = if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..=hi)
                };
                let base = node_kinds.len() as UnderlayId;
                for local in 0..size {
                    let id = base + local as UnderlayId;
                    node_kinds.push(NodeKind::Stub);
                    stub_nodes.push(id);
                    if local > 0 {
                        let parent = base + rng.gen_range(0..local) as UnderlayId;
                        push_edge(&mut edges, id, parent, EdgeTier::IntraStub, &mut rng);
                    }
                }
                for _ in 0..size / 4 {
                    let a = base + rng.gen_range(0..size) as UnderlayId;
                    let b = base + rng.gen_range(0..size) as UnderlayId;
                    if a != b {
                        push_edge(&mut edges, a, b, EdgeTier::IntraStub, &mut rng);
                    }
                }
                let gateway = base + rng.gen_range(0..size) as UnderlayId;
                push_edge(
                    &mut edges,
                    gateway,
                    transit_id(dom, ti),
                    EdgeTier::StubTransit,
                    &mut rng,
                );
            }
        }
    }

    let n = node_kinds.len();
    let mut adjacency = vec![Vec::new(); n];
    for e in &edges {
        adjacency[e.a as usize].push((e.b, e.latency));
        adjacency[e.b as usize].push((e.a, e.latency));
    }

    let topo = TransitStubTopology {
        config: config.clone(),
        node_kinds,
        edges,
        stub_nodes,
        host_attachments: Vec::new(),
        adjacency,
    };
    debug_assert!(topo.is_connected());
    Ok(topo)
}

impl TransitStubTopology {
    pub fn node_count(&self) -> usize {
        self.node_kinds.len()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.node_count();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0u32];
        seen[0] = true;
        let mut visited = 1;
        while let Some(u) = stack.pop() {
            for &(v, _) in &self.adjacency[u as usize] {
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    visited += 1;
                    stack.push(v);
                }
            }
        }
        visited == n
    }

    /// Attach `count` overlay hosts to uniformly random stub nodes and
    /// record the attachment map.
    pub fn attach_hosts(&mut self, count: usize, seed: u64) -> &[UnderlayId] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.host_attachments = (0..count)
            .map(|_| self.stub_nodes[rng.gen_range(0..self.stub_nodes.len())])
            .collect();
        &self.host_attachments
    }

    /// Single-source shortest-path latencies (Dijkstra).
    pub fn shortest_paths_from(&self, src: UnderlayId) -> Vec<f64> {
        let n = self.node_count();
        let mut dist = vec![f64::INFINITY; n];
        let mut heap: BinaryHeap<Reverse<(OrdF64, UnderlayId)>> = BinaryHeap::new();
        dist[src as usize] = 0.0;
        heap.push(Reverse((OrdF64(0.0), src)));
        while let Some(Reverse((OrdF64(d), u))) = heap.pop() {
            if d > dist[u as usize] {
                continue;
            }
            for &(v, w) in &self.adjacency[u as usize] {
                let nd = d + w;
                if nd < dist[v as usize] {
                    dist[v as usize] = nd;
                    heap.push(Reverse((OrdF64(nd), v)));
                }
            }
        }
        dist
    }

    pub fn shortest_path_latency(&self, a: UnderlayId, b: UnderlayId) -> Result<f64, SimError> {
        let n = self.node_count() as u32;
        if a >= n || b >= n {
            return Err(SimError::UnknownNode(a.max(b) as usize));
        }
        if a == b {
            return Ok(0.0);
        }
        Ok(self.shortest_paths_from(a)[b as usize])
    }

    /// Line-oriented edge list, one `src dst latency` per line.
    pub fn to_edge_text(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            writeln!(out, "{} {} {}", e.a, e.b, e.latency).unwrap();
        }
        out
    }

    pub fn mean_tier_latency(&self, tier: EdgeTier) -> f64 {
        let (sum, count) = self
            .edges
            .iter()
            .filter(|e| e.tier == tier)
            .fold((0.0, 0usize), |(s, c), e| (s + e.latency, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }
}

/// Total order wrapper so f64 distances can live in a heap.
#[derive(PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// A node's network coordinate in the embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCoordinate {
    pub components: Vec<f64>,
}

impl NetworkCoordinate {
    pub fn dims(&self) -> usize {
        self.components.len()
    }
}

/// Euclidean distance between two coordinates.
pub fn estimate_distance(a: &NetworkCoordinate, b: &NetworkCoordinate) -> Result<f64, SimError> {
    if a.dims() != b.dims() {
        return Err(SimError::DimensionMismatch {
            left: a.dims(),
            right: b.dims(),
        });
    }
    Ok(a.components
        .iter()
        .zip(&b.components)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Embed every underlay node into `dims`-dimensional Euclidean space by
/// iterative spring relaxation against sampled reference nodes, so that
/// coordinate distance approximates shortest-path latency.
pub fn embed_coordinates(
    topo: &TransitStubTopology,
    dims: usize,
    iterations: usize,
    seed: u64,
) -> Result<Vec<NetworkCoordinate>, SimError> {
    if dims < 2 {
        return Err(SimError::Config("embedding dims must be >= 2".into()));
    }
    if iterations < 1 {
        return Err(SimError::Config("embedding iterations must be >= 1".into()));
    }
    let n = topo.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dims).map(|_| rng.gen_range(0.0..100.0)).collect())
        .collect();

    let sources_per_round = 8.min(n);
    for it in 0..iterations {
        // Step size decays but keeps a floor so late corrections persist.
        let step = (0.25 * 0.95_f64.powi(it as i32)).max(0.05);
        for _ in 0..sources_per_round {
            let src = rng.gen_range(0..n);
            let true_dist = topo.shortest_paths_from(src as UnderlayId);
            let origin = coords[src].clone();
            for v in 0..n {
                if v == src {
                    continue;
                }
                let mut delta: Vec<f64> =
                    coords[v].iter().zip(&origin).map(|(a, b)| a - b).collect();
                let est: f64 = delta.iter().map(|x| x * x).sum::<f64>().sqrt();
                if est < 1e-9 {
                    // Coincident points: push apart in a random direction.
                    for d in delta.iter_mut() {
                        *d = rng.gen_range(-1.0..1.0);
                    }
                    let norm: f64 = delta.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                    for d in delta.iter_mut() {
                        *d /= norm;
                    }
                } else {
                    for d in delta.iter_mut() {
                        *d /= est;
                    }
                }
                let correction = step * (true_dist[v] - est);
                for (c, d) in coords[v].iter_mut().zip(&delta) {
                    *c += correction * d;
                }
            }
        }
    }

    Ok(coords
        .into_iter()
        .map(|components| NetworkCoordinate { components })
        .collect())
}

/// Median of `|estimated - true| / true` over all distinct node pairs.
/// Intended for small topologies (it computes all-pairs truth).
pub fn embedding_median_relative_error(
    topo: &TransitStubTopology,
    coords: &[NetworkCoordinate],
) -> f64 {
    let n = topo.node_count();
    let mut errors = Vec::new();
    for a in 0..n {
        let dist = topo.shortest_paths_from(a as UnderlayId);
        for b in (a + 1)..n {
            let truth = dist[b];
            if truth <= 0.0 {
                continue;
            }
            let est = estimate_distance(&coords[a], &coords[b]).unwrap();
            errors.push((est - truth).abs() / truth);
        }
    }
    errors.sort_by(|x, y| x.total_cmp(y));
    if errors.is_empty() {
        0.0
    } else {
        errors[errors.len() / 2]
    }
}

/// Network distance between two overlay hosts, addressed by host index.
/// The simulator's one distance interface; the concrete [`DistanceOracle`]
/// implements it, and tests substitute fixed matrices.
pub trait Distances {
    fn distance(&self, a: usize, b: usize) -> f64;
}

/// How the oracle answers distance queries between overlay hosts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMode {
    /// True shortest-path latency between attachment points.
    Exact,
    /// Euclidean distance between embedded coordinates.
    Coordinates,
}

/// Answers "network distance between overlay hosts a and b" either from
/// true shortest paths (cached per source) or from embedded coordinates.
pub struct DistanceOracle {
    mode: OracleMode,
    topo: TransitStubTopology,
    attachments: Vec<UnderlayId>,
    coords: Vec<NetworkCoordinate>,
    cache: RefCell<HashMap<UnderlayId, Vec<f64>>>,
}

impl DistanceOracle {
    pub fn new(
        mode: OracleMode,
        topo: TransitStubTopology,
        attachments: Vec<UnderlayId>,
        coords: Vec<NetworkCoordinate>,
    ) -> Self {
        DistanceOracle {
            mode,
            topo,
            attachments,
            coords,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// Exact shortest-path oracle; no coordinates needed.
    pub fn exact(topo: TransitStubTopology, attachments: Vec<UnderlayId>) -> Self {
        DistanceOracle::new(OracleMode::Exact, topo, attachments, Vec::new())
    }

    pub fn mode(&self) -> OracleMode {
        self.mode
    }

    pub fn host_count(&self) -> usize {
        self.attachments.len()
    }

    pub fn attachment(&self, host: usize) -> UnderlayId {
        self.attachments[host]
    }

    pub fn coordinate(&self, host: usize) -> &NetworkCoordinate {
        &self.coords[self.attachments[host] as usize]
    }

    /// Distance between two overlay hosts, by host index.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return 0.0;
        }
        let (ua, ub) = (self.attachments[a], self.attachments[b]);
        match self.mode {
            OracleMode::Exact => {
                if ua == ub {
                    return 0.0;
                }
                let mut cache = self.cache.borrow_mut();
                let dist = cache
                    .entry(ua)
                    .or_insert_with(|| self.topo.shortest_paths_from(ua));
                dist[ub as usize]
            }
            OracleMode::Coordinates => estimate_distance(
                &self.coords[ua as usize],
                &self.coords[ub as usize],
            )
            .expect("uniform embedding dims"),
        }
    }
}

impl Distances for DistanceOracle {
    fn distance(&self, a: usize, b: usize) -> f64 {
        DistanceOracle::distance(self, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(t: usize, k: usize, s: usize, mean: usize) -> TopologyConfig {
        TopologyConfig {
            transit_domains: t,
            transit_nodes_per_domain: k,
            stub_domains_per_transit_node: s,
            mean_stub_nodes: mean,
            ..TopologyConfig::default()
        }
    }

    /// Brute-force all-pairs shortest paths, used as the oracle for the
    /// Dijkstra implementation.
    fn floyd_warshall(topo: &TransitStubTopology) -> Vec<Vec<f64>> {
        let n = topo.node_count();
        let mut d = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for e in &topo.edges {
            let (a, b) = (e.a as usize, e.b as usize);
            if e.latency < d[a][b] {
                d[a][b] = e.latency;
                d[b][a] = e.latency;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = d[i][k] + d[k][j];
                    if via < d[i][j] {
                        d[i][j] = via;
                    }
                }
            }
        }
        d
    }

    #[test]
    fn minimal_config_is_two_connected_nodes() {
        let topo = generate_transit_stub(&small_config(1, 1, 1, 1), 7).unwrap();
        assert_eq!(topo.node_count(), 2);
        assert!(topo.is_connected());
        assert_eq!(topo.edges.len(), 1);
        assert_eq!(topo.edges[0].tier, EdgeTier::StubTransit);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_config(2, 2, 2, 8);
        let a = generate_transit_stub(&cfg, 99).unwrap();
        let b = generate_transit_stub(&cfg, 99).unwrap();
        assert_eq!(a.to_edge_text(), b.to_edge_text());
        let c = generate_transit_stub(&cfg, 100).unwrap();
        assert_ne!(a.to_edge_text(), c.to_edge_text());
    }

    #[test]
    fn ts4k_scale_node_count() {
        let topo = generate_transit_stub(&TopologyConfig::default(), 1).unwrap();
        // 16 transit nodes plus 80 stub domains averaging 55 nodes.
        let n = topo.node_count();
        assert!((3600..=5300).contains(&n), "unexpected node count {n}");
        assert!(topo.is_connected());
    }

    #[test]
    fn latency_tiers_are_ordered() {
        for seed in 0..5 {
            let topo = generate_transit_stub(&small_config(3, 3, 2, 10), seed).unwrap();
            let intra = topo.mean_tier_latency(EdgeTier::IntraStub);
            let st = topo.mean_tier_latency(EdgeTier::StubTransit);
            let tt = topo.mean_tier_latency(EdgeTier::TransitTransit);
            assert!(intra < st && st < tt, "tiers {intra} {st} {tt}");
            assert!(topo.edges.iter().all(|e| e.latency > 0.0));
        }
    }

    #[test]
    fn rejects_configs_over_node_cap() {
        let mut cfg = small_config(10, 10, 10, 1000);
        cfg.max_nodes = 50_000;
        let err = generate_transit_stub(&cfg, 1).unwrap_err();
        assert!(matches!(err, SimError::TopologyTooLarge { .. }));
    }

    #[test]
    fn shortest_path_identity_and_unknown_node() {
        let topo = generate_transit_stub(&small_config(1, 2, 1, 3), 3).unwrap();
        assert_eq!(topo.shortest_path_latency(0, 0).unwrap(), 0.0);
        assert!(topo.shortest_path_latency(0, 10_000).is_err());
    }

    #[test]
    fn shortest_path_on_forced_path_graph() {
        // Hand-built a--b--c path with latencies 3 and 4.
        let topo = TransitStubTopology {
            config: TopologyConfig::default(),
            node_kinds: vec![NodeKind::Stub; 3],
            edges: vec![
                Edge { a: 0, b: 1, latency: 3.0, tier: EdgeTier::IntraStub },
                Edge { a: 1, b: 2, latency: 4.0, tier: EdgeTier::IntraStub },
            ],
            stub_nodes: vec![0, 1, 2],
            host_attachments: Vec::new(),
            adjacency: vec![
                vec![(1, 3.0)],
                vec![(0, 3.0), (2, 4.0)],
                vec![(1, 4.0)],
            ],
        };
        assert_eq!(topo.shortest_path_latency(0, 2).unwrap(), 7.0);
        assert_eq!(topo.shortest_path_latency(2, 0).unwrap(), 7.0);
    }

    #[test]
    fn dijkstra_matches_floyd_warshall_oracle() {
        let topo = generate_transit_stub(&small_config(2, 2, 2, 5), 11).unwrap();
        assert!(topo.node_count() >= 40 && topo.node_count() <= 70);
        let oracle = floyd_warshall(&topo);
        for a in 0..topo.node_count() {
            let d = topo.shortest_paths_from(a as UnderlayId);
            for b in 0..topo.node_count() {
                assert!(
                    (d[b] - oracle[a][b]).abs() < 1e-9,
                    "mismatch {a}->{b}: {} vs {}",
                    d[b],
                    oracle[a][b]
                );
            }
        }
    }

    #[test]
    fn shortest_paths_metric_properties() {
        let topo = generate_transit_stub(&small_config(2, 2, 1, 4), 21).unwrap();
        let n = topo.node_count();
        let all: Vec<Vec<f64>> = (0..n)
            .map(|a| topo.shortest_paths_from(a as UnderlayId))
            .collect();
        for a in 0..n {
            assert_eq!(all[a][a], 0.0);
            for b in 0..n {
                assert!((all[a][b] - all[b][a]).abs() < 1e-9);
                for c in 0..n {
                    assert!(all[a][c] <= all[a][b] + all[b][c] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn two_node_embedding_is_near_exact() {
        let topo = generate_transit_stub(&small_config(1, 1, 1, 1), 5).unwrap();
        let coords = embed_coordinates(&topo, 2, 100, 17).unwrap();
        let truth = topo.shortest_path_latency(0, 1).unwrap();
        let est = estimate_distance(&coords[0], &coords[1]).unwrap();
        assert!((est - truth).abs() / truth < 0.01, "est {est} truth {truth}");
    }

    #[test]
    fn embedding_distances_symmetric_nonnegative() {
        let topo = generate_transit_stub(&small_config(2, 2, 1, 4), 13).unwrap();
        let coords = embed_coordinates(&topo, 3, 30, 19).unwrap();
        for a in 0..topo.node_count() {
            for b in 0..topo.node_count() {
                let ab = estimate_distance(&coords[a], &coords[b]).unwrap();
                let ba = estimate_distance(&coords[b], &coords[a]).unwrap();
                assert!(ab >= 0.0);
                assert_eq!(ab, ba);
            }
        }
        assert_eq!(estimate_distance(&coords[0], &coords[0]).unwrap(), 0.0);
    }

    #[test]
    fn hundred_node_embedding_error_bound() {
        // ~100 nodes: 2 transit domains x 2 transit nodes, 2 stubs each,
        // 12 stub nodes per domain on average.
        let topo = generate_transit_stub(&small_config(2, 2, 2, 12), 23).unwrap();
        let coords = embed_coordinates(&topo, 5, 100, 29).unwrap();
        let median = embedding_median_relative_error(&topo, &coords);
        assert!(median <= 0.25, "median relative error {median}");
    }

    #[test]
    fn estimate_distance_examples() {
        let c3 = NetworkCoordinate { components: vec![3.0] };
        let c7 = NetworkCoordinate { components: vec![7.0] };
        assert_eq!(estimate_distance(&c3, &c7).unwrap(), 4.0);
        assert_eq!(estimate_distance(&c3, &c3).unwrap(), 0.0);
        let c2d = NetworkCoordinate { components: vec![0.0, 0.0] };
        assert!(estimate_distance(&c3, &c2d).is_err());
    }

    #[test]
    fn embedding_is_deterministic_per_seed() {
        let topo = generate_transit_stub(&small_config(1, 2, 1, 4), 31).unwrap();
        let a = embed_coordinates(&topo, 3, 20, 7).unwrap();
        let b = embed_coordinates(&topo, 3, 20, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_exact_mode_matches_shortest_paths() {
        let mut topo = generate_transit_stub(&small_config(2, 2, 1, 5), 37).unwrap();
        topo.attach_hosts(6, 41);
        let coords = embed_coordinates(&topo, 2, 10, 43).unwrap();
        let attachments = topo.host_attachments.clone();
        let oracle = DistanceOracle::new(OracleMode::Exact, topo.clone(), attachments, coords);
        for a in 0..6 {
            assert_eq!(oracle.distance(a, a), 0.0);
            for b in 0..6 {
                let truth = topo
                    .shortest_path_latency(oracle.attachment(a), oracle.attachment(b))
                    .unwrap();
                assert!((oracle.distance(a, b) - truth).abs() < 1e-9);
                assert!((oracle.distance(a, b) - oracle.distance(b, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coordinate_mode_tracks_exact_within_observed_bound() {
        let mut topo = generate_transit_stub(&small_config(2, 2, 2, 8), 47).unwrap();
        topo.attach_hosts(12, 53);
        let coords = embed_coordinates(&topo, 5, 100, 59).unwrap();
        let median = embedding_median_relative_error(&topo, &coords);
        let attachments = topo.host_attachments.clone();
        let exact = DistanceOracle::new(
            OracleMode::Exact,
            topo.clone(),
            attachments.clone(),
            coords.clone(),
        );
        let approx = DistanceOracle::new(OracleMode::Coordinates, topo, attachments, coords);
        let mut errors: Vec<f64> = Vec::new();
        for a in 0..12 {
            for b in (a + 1)..12 {
                let t = exact.distance(a, b);
                if t > 0.0 {
                    errors.push((approx.distance(a, b) - t).abs() / t);
                }
            }
        }
        errors.sort_by(|x, y| x.total_cmp(y));
        let sample_median = errors[errors.len() / 2];
        // Sampled pairs should not be wildly worse than the full-graph
        // median error.
        assert!(
            sample_median <= (3.0 * median).max(0.3),
            "sample {sample_median} vs graph {median}"
        );
    }
}
