//! The overlay proper: a partition tree over the search space, virtual
//! servers owning its leaves, per-VS routing tables built by the
//! prefix/opposite-side connection rule, and the operations that mutate
//! them (joins, departures, transfers, in-degree repair).
//!
//! Physical nodes host sets of virtual servers; load lives on virtual
//! servers and moves between nodes by reassigning a VS's host.

pub mod space;

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;
use crate::topology::Distances;
use space::{AaBox, Hyperplane, PeLabel, PlaneEquation, Point, Side};

pub type VsId = usize;
pub type NodeId = usize;
type TreeIdx = usize;

#[derive(Debug, Clone)]
enum TreeKind {
    Internal {
        plane: Hyperplane,
        minus: TreeIdx,
        plus: TreeIdx,
    },
    Leaf {
        owner: VsId,
    },
}

#[derive(Debug, Clone)]
struct TreeEntry {
    parent: Option<TreeIdx>,
    region: AaBox,
    kind: TreeKind,
}

/// Binary partition tree. Arena-allocated; merged-away entries are simply
/// never referenced again (bounded by the number of operations, which is
/// fine at simulation scale).
#[derive(Debug, Clone)]
struct PartitionTree {
    entries: Vec<TreeEntry>,
    root: TreeIdx,
}

impl PartitionTree {
    fn new(region: AaBox, owner: VsId) -> Self {
        PartitionTree {
            entries: vec![TreeEntry {
                parent: None,
                region,
                kind: TreeKind::Leaf { owner },
            }],
            root: 0,
        }
    }

    fn region(&self, idx: TreeIdx) -> &AaBox {
        &self.entries[idx].region
    }

    fn is_leaf(&self, idx: TreeIdx) -> bool {
        matches!(self.entries[idx].kind, TreeKind::Leaf { .. })
    }

    fn leaf_owner(&self, idx: TreeIdx) -> VsId {
        match self.entries[idx].kind {
            TreeKind::Leaf { owner } => owner,
            TreeKind::Internal { .. } => unreachable!("leaf_owner on internal node"),
        }
    }

    fn set_leaf_owner(&mut self, idx: TreeIdx, owner: VsId) {
        match &mut self.entries[idx].kind {
            TreeKind::Leaf { owner: o } => *o = owner,
            TreeKind::Internal { .. } => unreachable!("set_leaf_owner on internal node"),
        }
    }

    fn sibling(&self, idx: TreeIdx) -> Option<TreeIdx> {
        let parent = self.entries[idx].parent?;
        match self.entries[parent].kind {
            TreeKind::Internal { minus, plus, .. } => {
                Some(if minus == idx { plus } else { minus })
            }
            TreeKind::Leaf { .. } => unreachable!("parent is a leaf"),
        }
    }

    /// Walk from the root following the point; the containing leaf.
    fn locate(&self, point: &[f64]) -> TreeIdx {
        let mut idx = self.root;
        loop {
            match &self.entries[idx].kind {
                TreeKind::Leaf { .. } => return idx,
                TreeKind::Internal { plane, minus, plus } => {
                    idx = if point[plane.dim] >= plane.value {
                        *plus
                    } else {
                        *minus
                    };
                }
            }
        }
    }

    /// Labels on the path root -> `idx`; for a leaf this is its PE.
    fn path_labels(&self, mut idx: TreeIdx) -> Vec<PeLabel> {
        let mut labels = Vec::new();
        while let Some(p) = self.entries[idx].parent {
            if let TreeKind::Internal { plane, plus, .. } = &self.entries[p].kind {
                let side = if *plus == idx { Side::Plus } else { Side::Minus };
                labels.push(PeLabel {
                    plane: *plane,
                    side,
                });
            }
            idx = p;
        }
        labels.reverse();
        labels
    }

    fn leaves_under(&self, idx: TreeIdx) -> Vec<TreeIdx> {
        let mut out = Vec::new();
        let mut stack = vec![idx];
        while let Some(i) = stack.pop() {
            match self.entries[i].kind {
                TreeKind::Leaf { .. } => out.push(i),
                TreeKind::Internal { minus, plus, .. } => {
                    stack.push(minus);
                    stack.push(plus);
                }
            }
        }
        out
    }

    fn leaves(&self) -> Vec<TreeIdx> {
        self.leaves_under(self.root)
    }

    /// Split a leaf in two; returns (minus child, plus child).
    fn split_leaf(
        &mut self,
        idx: TreeIdx,
        plane: Hyperplane,
        minus_owner: VsId,
        plus_owner: VsId,
    ) -> (TreeIdx, TreeIdx) {
        debug_assert!(self.is_leaf(idx));
        let (minus_box, plus_box) = self.entries[idx].region.split(plane);
        let minus = self.entries.len();
        self.entries.push(TreeEntry {
            parent: Some(idx),
            region: minus_box,
            kind: TreeKind::Leaf { owner: minus_owner },
        });
        let plus = self.entries.len();
        self.entries.push(TreeEntry {
            parent: Some(idx),
            region: plus_box,
            kind: TreeKind::Leaf { owner: plus_owner },
        });
        self.entries[idx].kind = TreeKind::Internal { plane, minus, plus };
        (minus, plus)
    }

    /// Collapse an internal node whose two children are leaves back into a
    /// single leaf with the given owner. The children become unreachable.
    fn merge_children(&mut self, parent: TreeIdx, owner: VsId) {
        debug_assert!(matches!(
            self.entries[parent].kind,
            TreeKind::Internal { minus, plus, .. }
                if self.is_leaf(minus) && self.is_leaf(plus)
        ));
        self.entries[parent].kind = TreeKind::Leaf { owner };
    }
}

/// One routing-table entry. The target's PE is cached at fill time; the
/// target's host is always read live so transfers are visible immediately.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteEntry {
    pub target: VsId,
    pub target_pe: PlaneEquation,
}

/// Per-VS routing table, one optional entry per PE prefix length
/// (`rows[r-1]` is row `r`).
#[derive(Debug, Clone, Default)]
pub struct RoutingTable {
    rows: Vec<Option<RouteEntry>>,
}

impl RoutingTable {
    pub fn rows(&self) -> &[Option<RouteEntry>] {
        &self.rows
    }

    pub fn entries(&self) -> impl Iterator<Item = &RouteEntry> {
        self.rows.iter().flatten()
    }

    pub fn entry_count(&self) -> usize {
        self.rows.iter().flatten().count()
    }
}

/// How routing-table candidates are picked from each row's candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMode {
    /// Closest candidate by oracle distance, ties to the lowest id.
    TopologyAware,
    /// Uniformly random candidate.
    TopologyUnaware,
}

#[derive(Debug, Clone)]
pub struct VirtualServer {
    pub id: VsId,
    pub host: NodeId,
    pub load: f64,
    pub pe: PlaneEquation,
    pub routing_table: RoutingTable,
    pub alive: bool,
    /// Point this VS joined at; stays inside the primary leaf and anchors
    /// the split rule when that leaf is split again.
    sample_point: Point,
    primary_leaf: TreeIdx,
    /// Extra leaves inherited from departed virtual servers.
    absorbed_leaves: Vec<TreeIdx>,
    /// Incoming routing-table entries, maintained incrementally.
    ref_count: usize,
}

impl VirtualServer {
    pub fn incoming_refs(&self) -> usize {
        self.ref_count
    }
}

#[derive(Debug, Clone)]
pub struct PhysicalNode {
    pub id: NodeId,
    pub capacity: f64,
    /// Hosted VS ids, kept in ascending order.
    pub virtual_servers: Vec<VsId>,
}

/// A completed virtual-server move between physical nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferRecord {
    pub vs: VsId,
    pub load: f64,
    pub source: NodeId,
    pub destination: NodeId,
    pub distance: f64,
    pub round: usize,
}

/// Per-node in-degrees plus their cumulative distribution over nodes.
#[derive(Debug, Clone)]
pub struct InDegreeStats {
    pub per_node: Vec<usize>,
    /// (degree, fraction of nodes with in-degree <= degree), ascending.
    pub cdf: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct Overlay {
    root_box: AaBox,
    tree: Option<PartitionTree>,
    pub virtual_servers: Vec<VirtualServer>,
    pub nodes: Vec<PhysicalNode>,
}

impl Overlay {
    /// Overlay over the unit cube `[0,1)^dims`.
    pub fn new(dims: usize) -> Self {
        Overlay::with_root(AaBox::unit(dims))
    }

    pub fn with_root(root_box: AaBox) -> Self {
        Overlay {
            root_box,
            tree: None,
            virtual_servers: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn dims(&self) -> usize {
        self.root_box.dims()
    }

    pub fn root_region(&self) -> &AaBox {
        &self.root_box
    }

    pub fn live_vs_ids(&self) -> Vec<VsId> {
        self.virtual_servers
            .iter()
            .filter(|v| v.alive)
            .map(|v| v.id)
            .collect()
    }

    pub fn live_vs_count(&self) -> usize {
        self.virtual_servers.iter().filter(|v| v.alive).count()
    }

    pub fn vs(&self, id: VsId) -> Result<&VirtualServer, SimError> {
        self.virtual_servers
            .get(id)
            .filter(|v| v.alive)
            .ok_or(SimError::UnknownVirtualServer(id))
    }

    pub fn node(&self, id: NodeId) -> Result<&PhysicalNode, SimError> {
        self.nodes.get(id).ok_or(SimError::UnknownNode(id))
    }

    pub fn node_load(&self, id: NodeId) -> f64 {
        self.nodes[id]
            .virtual_servers
            .iter()
            .map(|&v| self.virtual_servers[v].load)
            .sum()
    }

    pub fn node_utilization(&self, id: NodeId) -> f64 {
        self.node_load(id) / self.nodes[id].capacity
    }

    pub fn total_load(&self) -> f64 {
        self.virtual_servers
            .iter()
            .filter(|v| v.alive)
            .map(|v| v.load)
            .sum()
    }

    /// Sum of region fractions over live virtual servers; 1 under the
    /// tiling invariant.
    pub fn total_space_fraction(&self) -> f64 {
        self.live_vs_ids()
            .iter()
            .map(|&v| self.region_fraction(v))
            .sum()
    }

    /// Fraction of the search space owned by `vs` (primary plus absorbed
    /// leaves).
    pub fn region_fraction(&self, vs: VsId) -> f64 {
        let v = &self.virtual_servers[vs];
        debug_assert!(v.alive);
        let tree = self.tree.as_ref().expect("live VS implies a tree");
        let total = self.root_box.volume();
        let mut vol = tree.region(v.primary_leaf).volume();
        for &leaf in &v.absorbed_leaves {
            vol += tree.region(leaf).volume();
        }
        vol / total
    }

    fn check_point(&self, point: &[f64]) -> Result<(), SimError> {
        if point.len() != self.dims() {
            return Err(SimError::PointDimensionMismatch {
                want: self.dims(),
                got: point.len(),
            });
        }
        if !self.root_box.contains(point) {
            return Err(SimError::PointOutOfSpace(point.to_vec()));
        }
        Ok(())
    }

    /// The virtual server whose region contains `point` (tree walk).
    pub fn locate_point(&self, point: &[f64]) -> Result<VsId, SimError> {
        self.check_point(point)?;
        let tree = self
            .tree
            .as_ref()
            .ok_or(SimError::UnknownVirtualServer(0))?;
        Ok(tree.leaf_owner(tree.locate(point)))
    }

    /// Add a physical node hosting `num_vs` virtual servers at seeded
    /// random points.
    pub fn join_node(
        &mut self,
        capacity: f64,
        num_vs: usize,
        seed: u64,
    ) -> Result<NodeId, SimError> {
        if num_vs < 1 {
            return Err(SimError::Config("num_vs must be >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Point> = (0..num_vs)
            .map(|_| self.sample_point_in(&self.root_box.clone(), &mut rng))
            .collect();
        self.join_node_with(capacity, &points, &mut rng)
    }

    /// Add a physical node whose virtual servers join at the given points.
    pub fn join_node_at_points(
        &mut self,
        capacity: f64,
        points: &[Point],
    ) -> Result<NodeId, SimError> {
        if points.is_empty() {
            return Err(SimError::Config("num_vs must be >= 1".into()));
        }
        // Only needed if a supplied point collides with an occupant's.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.join_node_with(capacity, points, &mut rng)
    }

    fn join_node_with(
        &mut self,
        capacity: f64,
        points: &[Point],
        rng: &mut ChaCha8Rng,
    ) -> Result<NodeId, SimError> {
        if capacity <= 0.0 {
            return Err(SimError::Config("capacity must be > 0".into()));
        }
        for p in points {
            self.check_point(p)?;
        }
        let node = self.nodes.len();
        self.nodes.push(PhysicalNode {
            id: node,
            capacity,
            virtual_servers: Vec::new(),
        });
        for p in points {
            self.insert_vs(node, p.clone(), rng);
        }
        Ok(node)
    }

    fn sample_point_in(&self, region: &AaBox, rng: &mut ChaCha8Rng) -> Point {
        (0..region.dims())
            .map(|d| rng.gen_range(region.lo[d]..region.hi[d]))
            .collect()
    }

    /// Join one virtual server at `point`: split the containing leaf so
    /// the newcomer and the occupant each keep a nonempty region.
    fn insert_vs(&mut self, host: NodeId, mut point: Point, rng: &mut ChaCha8Rng) -> VsId {
        let id = self.virtual_servers.len();
        let (pe, primary_leaf) = match self.tree.as_mut() {
            None => {
                self.tree = Some(PartitionTree::new(self.root_box.clone(), id));
                (PlaneEquation::root(), 0)
            }
            Some(tree) => {
                let leaf = tree.locate(&point);
                let owner_id = tree.leaf_owner(leaf);
                let leaf_box = tree.region(leaf).clone();
                let owner = &self.virtual_servers[owner_id];
                let splits_primary = owner.primary_leaf == leaf;
                let plane = if splits_primary {
                    // Split between the two sample points, along the
                    // dimension where they differ most.
                    let occupant = owner.sample_point.clone();
                    while point == occupant {
                        point = (0..leaf_box.dims())
                            .map(|d| rng.gen_range(leaf_box.lo[d]..leaf_box.hi[d]))
                            .collect();
                    }
                    let mut dim = 0;
                    for d in 1..point.len() {
                        if (point[d] - occupant[d]).abs() > (point[dim] - occupant[dim]).abs() {
                            dim = d;
                        }
                    }
                    Hyperplane {
                        dim,
                        value: 0.5 * (point[dim] + occupant[dim]),
                    }
                } else {
                    // The leaf was inherited from a departed VS and holds
                    // no sample point: halve it along its widest axis.
                    let dim = leaf_box.widest_dim();
                    Hyperplane {
                        dim,
                        value: 0.5 * (leaf_box.lo[dim] + leaf_box.hi[dim]),
                    }
                };
                let new_side = if point[plane.dim] >= plane.value {
                    Side::Plus
                } else {
                    Side::Minus
                };
                let (minus_owner, plus_owner) = match new_side {
                    Side::Plus => (owner_id, id),
                    Side::Minus => (id, owner_id),
                };
                let mut leaf_labels = tree.path_labels(leaf);
                let (minus, plus) = tree.split_leaf(leaf, plane, minus_owner, plus_owner);
                let (new_leaf, kept_leaf) = match new_side {
                    Side::Plus => (plus, minus),
                    Side::Minus => (minus, plus),
                };
                let owner = &mut self.virtual_servers[owner_id];
                if splits_primary {
                    owner.primary_leaf = kept_leaf;
                    owner.pe.push(PeLabel {
                        plane,
                        side: new_side.opposite(),
                    });
                } else {
                    let slot = owner
                        .absorbed_leaves
                        .iter_mut()
                        .find(|l| **l == leaf)
                        .expect("absorbed leaf tracked by its owner");
                    *slot = kept_leaf;
                }
                leaf_labels.push(PeLabel {
                    plane,
                    side: new_side,
                });
                (PlaneEquation::from_labels(leaf_labels), new_leaf)
            }
        };
        self.virtual_servers.push(VirtualServer {
            id,
            host,
            load: 0.0,
            pe,
            routing_table: RoutingTable::default(),
            alive: true,
            sample_point: point,
            primary_leaf,
            absorbed_leaves: Vec::new(),
            ref_count: 0,
        });
        self.nodes[host].virtual_servers.push(id);
        id
    }
}

/// Region described by a PE, reconstructed by folding its half-spaces
/// over the root box.
fn pe_box(root: &AaBox, pe: &PlaneEquation) -> AaBox {
    let mut b = root.clone();
    for label in pe.labels() {
        let (minus, plus) = b.split(label.plane);
        b = match label.side {
            Side::Minus => minus,
            Side::Plus => plus,
        };
    }
    b
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

impl Overlay {
    /// Whether `vs`'s region (primary or absorbed leaves) contains `point`.
    fn vs_contains(&self, vs: VsId, point: &[f64]) -> bool {
        let v = &self.virtual_servers[vs];
        let tree = self.tree.as_ref().unwrap();
        tree.region(v.primary_leaf).contains(point)
            || v.absorbed_leaves
                .iter()
                .any(|&l| tree.region(l).contains(point))
    }

    /// Candidates for row `row` (1-based) of `vs`'s routing table: live
    /// virtual servers whose PE matches the first `row-1` labels of `vs`
    /// and takes the opposite side at label `row`, excluding anything
    /// hosted on `vs`'s own node. Ascending id order.
    pub fn row_candidates(&self, vs: VsId, row: usize) -> Vec<VsId> {
        let v = &self.virtual_servers[vs];
        let labels = v.pe.labels();
        debug_assert!(row >= 1 && row <= labels.len());
        let tree = self.tree.as_ref().unwrap();

        // Descend along the PE path to depth row-1, then take the branch
        // on the opposite side of label `row`: exactly the subtree whose
        // leaf paths satisfy the connection rule.
        let mut idx = tree.root;
        for label in labels.iter().take(row - 1) {
            idx = match tree.entries[idx].kind {
                TreeKind::Internal { plane, minus, plus } => {
                    debug_assert_eq!(plane, label.plane);
                    match label.side {
                        Side::Minus => minus,
                        Side::Plus => plus,
                    }
                }
                TreeKind::Leaf { .. } => unreachable!("PE deeper than tree path"),
            };
        }
        let sibling_branch = match tree.entries[idx].kind {
            TreeKind::Internal { plane, minus, plus } => {
                debug_assert_eq!(plane, labels[row - 1].plane);
                match labels[row - 1].side {
                    Side::Minus => plus,
                    Side::Plus => minus,
                }
            }
            TreeKind::Leaf { .. } => unreachable!("PE deeper than tree path"),
        };

        let mut out = BTreeSet::new();
        for leaf in tree.leaves_under(sibling_branch) {
            let owner = tree.leaf_owner(leaf);
            if self.satisfies_rule(owner, labels, row) {
                out.insert(owner);
            }
        }
        out.remove(&vs);
        out.into_iter().collect()
    }

    /// The row rule: candidate's plane labels match `labels[..row-1]` and
    /// are opposite at label `row`.
    fn satisfies_rule(&self, candidate: VsId, labels: &[PeLabel], row: usize) -> bool {
        let c = &self.virtual_servers[candidate];
        if !c.alive || c.pe.len() < row {
            return false;
        }
        let cl = c.pe.labels();
        cl[..row - 1] == labels[..row - 1] && cl[row - 1] == labels[row - 1].opposite()
    }

    /// Install `entry` at row `row` of `vs`'s table, keeping incoming
    /// reference counts consistent.
    fn set_row(&mut self, vs: VsId, row: usize, entry: Option<RouteEntry>) {
        let table = &mut self.virtual_servers[vs].routing_table;
        if table.rows.len() < row {
            table.rows.resize_with(row, || None);
        }
        let old_target = table.rows[row - 1].as_ref().map(|e| e.target);
        let new_target = entry.as_ref().map(|e| e.target);
        self.virtual_servers[vs].routing_table.rows[row - 1] = entry;
        if let Some(t) = old_target {
            self.virtual_servers[t].ref_count -= 1;
        }
        if let Some(t) = new_target {
            self.virtual_servers[t].ref_count += 1;
        }
    }

    fn truncate_table(&mut self, vs: VsId, new_len: usize) {
        while self.virtual_servers[vs].routing_table.rows.len() > new_len {
            let row = self.virtual_servers[vs].routing_table.rows.len();
            self.set_row(vs, row, None);
            self.virtual_servers[vs].routing_table.rows.pop();
        }
    }

    fn route_entry_for(&self, target: VsId) -> RouteEntry {
        RouteEntry {
            target,
            target_pe: self.virtual_servers[target].pe.clone(),
        }
    }

    /// Rebuild `vs`'s routing table: one entry per PE prefix length,
    /// drawn from that row's candidate set.
    pub fn fill_routing_table(
        &mut self,
        vs: VsId,
        mode: FillMode,
        oracle: &dyn Distances,
        seed: u64,
    ) -> Result<(), SimError> {
        self.vs(vs)?;
        let depth = self.virtual_servers[vs].pe.len();
        let host = self.virtual_servers[vs].host;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.truncate_table(vs, depth);
        for row in 1..=depth {
            let candidates = self.row_candidates(vs, row);
            let pick = match mode {
                FillMode::TopologyAware => candidates
                    .iter()
                    .copied()
                    .min_by(|&a, &b| {
                        oracle
                            .distance(host, self.virtual_servers[a].host)
                            .total_cmp(&oracle.distance(host, self.virtual_servers[b].host))
                            .then(a.cmp(&b))
                    }),
                FillMode::TopologyUnaware => {
                    if candidates.is_empty() {
                        None
                    } else {
                        Some(candidates[rng.gen_range(0..candidates.len())])
                    }
                }
            };
            self.set_row(vs, row, pick.map(|t| self.route_entry_for(t)));
        }
        Ok(())
    }

    /// Fill every live VS's table; per-VS seeds derive from `seed` so the
    /// result is independent of iteration order.
    pub fn fill_all_routing_tables(
        &mut self,
        mode: FillMode,
        oracle: &dyn Distances,
        seed: u64,
    ) -> Result<(), SimError> {
        for vs in self.live_vs_ids() {
            self.fill_routing_table(vs, mode, oracle, crate::derive_seed(seed, vs as u64))?;
        }
        Ok(())
    }

    /// Greedy prefix routing from `origin` toward the leaf containing
    /// `target`. Each hop must strictly increase the matched-prefix length
    /// with the target, or tie it while strictly reducing the distance
    /// from the target to the hop's region center; otherwise the query
    /// halts at the current VS as closest.
    pub fn route_query(&self, origin: VsId, target: &[f64]) -> Result<Vec<VsId>, SimError> {
        self.vs(origin)?;
        self.check_point(target)?;
        let mut path = vec![origin];
        // Cached PEs can lag briefly after departures; the visited set
        // keeps any stale entry from inducing a cycle.
        let mut visited: HashSet<VsId> = HashSet::new();
        visited.insert(origin);
        let mut current = origin;
        loop {
            if self.vs_contains(current, target) {
                return Ok(path);
            }
            let cur = &self.virtual_servers[current];
            let cur_match = cur.pe.shared_prefix_with_point(target);
            let cur_center_dist = euclid(target, &pe_box(&self.root_box, &cur.pe).center());
            let mut best: Option<(usize, f64, VsId)> = None;
            for entry in cur.routing_table.entries() {
                if visited.contains(&entry.target) || !self.virtual_servers[entry.target].alive {
                    continue;
                }
                let m = entry.target_pe.shared_prefix_with_point(target);
                let d = euclid(target, &pe_box(&self.root_box, &entry.target_pe).center());
                let progresses = m > cur_match || (m == cur_match && d < cur_center_dist);
                if !progresses {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bm, bd, bt)) => {
                        m > bm || (m == bm && (d < bd || (d == bd && entry.target < bt)))
                    }
                };
                if better {
                    best = Some((m, d, entry.target));
                }
            }
            match best {
                Some((_, _, next)) => {
                    visited.insert(next);
                    path.push(next);
                    current = next;
                }
                None => return Ok(path),
            }
        }
    }

    /// Remove a virtual server. Each of its leaves merges into its tree
    /// sibling when that sibling is a leaf; otherwise the leaf is taken
    /// over by the closest-PE leaf (longest matching path prefix). The
    /// departed load follows the space, split in proportion to leaf
    /// volume. Returns (recipient, load share) pairs.
    pub fn depart_virtual_server(&mut self, vs: VsId) -> Result<Vec<(VsId, f64)>, SimError> {
        self.vs(vs)?;
        if self.live_vs_count() < 2 {
            return Err(SimError::LastVirtualServer(vs));
        }

        let mut resolved: Vec<(VsId, f64)> = Vec::new();
        let mut shortened: Vec<VsId> = Vec::new();
        loop {
            let tree = self.tree.as_ref().unwrap();
            let Some(leaf) = tree
                .leaves()
                .into_iter()
                .find(|&l| tree.leaf_owner(l) == vs)
            else {
                break;
            };
            let volume = tree.region(leaf).volume();
            let sibling = tree
                .sibling(leaf)
                .expect("a departing VS never owns the root while others live");
            if tree.is_leaf(sibling) {
                let sib_owner = tree.leaf_owner(sibling);
                let parent = tree.entries[leaf].parent.unwrap();
                let tree = self.tree.as_mut().unwrap();
                tree.merge_children(parent, sib_owner);
                if sib_owner == vs {
                    // Both halves were ours; keep collapsing.
                    continue;
                }
                let owner = &mut self.virtual_servers[sib_owner];
                if owner.primary_leaf == sibling {
                    owner.primary_leaf = parent;
                    owner.pe.pop();
                    shortened.push(sib_owner);
                } else {
                    let slot = owner
                        .absorbed_leaves
                        .iter_mut()
                        .find(|l| **l == sibling)
                        .expect("absorbed leaf tracked by its owner");
                    *slot = parent;
                }
                resolved.push((sib_owner, volume));
            } else {
                // Sibling subtree: its leaves share our path up to the
                // last label, the longest prefix any other leaf can have.
                let mut pool: Vec<(VsId, TreeIdx)> = tree
                    .leaves_under(sibling)
                    .into_iter()
                    .map(|l| (tree.leaf_owner(l), l))
                    .filter(|&(o, _)| o != vs)
                    .collect();
                if pool.is_empty() {
                    // The whole sibling subtree is ours too; fall back to
                    // the best-matching leaf anywhere else.
                    let own_path = tree.path_labels(leaf);
                    let own_pe = PlaneEquation::from_labels(own_path);
                    pool = tree
                        .leaves()
                        .into_iter()
                        .filter(|&l| tree.leaf_owner(l) != vs)
                        .map(|l| (tree.leaf_owner(l), l))
                        .collect();
                    pool.sort_by_key(|&(o, l)| {
                        let m = PlaneEquation::from_labels(tree.path_labels(l)).match_len(&own_pe);
                        (std::cmp::Reverse(m), o, l)
                    });
                    pool.truncate(1);
                } else {
                    pool.sort();
                    pool.truncate(1);
                }
                let (absorber, _) = pool[0];
                let tree = self.tree.as_mut().unwrap();
                tree.set_leaf_owner(leaf, absorber);
                self.virtual_servers[absorber].absorbed_leaves.push(leaf);
                resolved.push((absorber, volume));
            }
        }

        // Load follows the ceded space, proportionally by volume.
        let departing_load = self.virtual_servers[vs].load;
        let total_volume: f64 = resolved.iter().map(|&(_, v)| v).sum();
        let mut shares = Vec::with_capacity(resolved.len());
        for &(recipient, volume) in &resolved {
            let share = departing_load * (volume / total_volume);
            self.virtual_servers[recipient].load += share;
            shares.push((recipient, share));
        }
        self.virtual_servers[vs].load = 0.0;

        // Retire the VS and its outgoing references.
        self.truncate_table(vs, 0);
        self.virtual_servers[vs].alive = false;
        let host = self.virtual_servers[vs].host;
        self.nodes[host].virtual_servers.retain(|&v| v != vs);

        // Shortened PEs invalidate their own deepest rows.
        for owner in &shortened {
            let new_len = self.virtual_servers[*owner].pe.len();
            self.truncate_table(*owner, new_len);
        }

        self.repair_after_departure(vs, &shortened);
        Ok(shares)
    }

    /// Fix routing entries that pointed at a departed VS, or whose target
    /// PE shrank below the row's requirement; refresh cached PEs of
    /// shortened targets. Repair picks the lowest-id candidate: departure
    /// handling runs without a distance oracle.
    fn repair_after_departure(&mut self, departed: VsId, shortened: &[VsId]) {
        let shortened: HashSet<VsId> = shortened.iter().copied().collect();
        for x in self.live_vs_ids() {
            let rows = self.virtual_servers[x].routing_table.rows.len();
            for row in 1..=rows {
                let Some(entry) = self.virtual_servers[x].routing_table.rows[row - 1].clone()
                else {
                    continue;
                };
                let target_ok = entry.target != departed
                    && self.virtual_servers[entry.target].pe.len() >= row;
                if target_ok {
                    if shortened.contains(&entry.target) {
                        let refreshed = self.route_entry_for(entry.target);
                        self.set_row(x, row, Some(refreshed));
                    }
                    continue;
                }
                let replacement = self.row_candidates(x, row).first().copied();
                self.set_row(x, row, replacement.map(|t| self.route_entry_for(t)));
            }
        }
    }

    /// Move a virtual server between physical nodes. The region and PE
    /// are untouched; only the host changes, so the move is equivalent to
    /// a departure immediately followed by a join into the same region.
    pub fn transfer_virtual_server(
        &mut self,
        vs: VsId,
        from: NodeId,
        to: NodeId,
        oracle: &dyn Distances,
        round: usize,
    ) -> Result<TransferRecord, SimError> {
        self.vs(vs)?;
        self.node(from)?;
        self.node(to)?;
        if from == to {
            return Err(SimError::SelfTransfer(from));
        }
        if self.virtual_servers[vs].host != from {
            return Err(SimError::NotHostedBy { vs, node: from });
        }
        self.nodes[from].virtual_servers.retain(|&v| v != vs);
        let pos = self.nodes[to].virtual_servers.partition_point(|&v| v < vs);
        self.nodes[to].virtual_servers.insert(pos, vs);
        self.virtual_servers[vs].host = to;
        Ok(TransferRecord {
            vs,
            load: self.virtual_servers[vs].load,
            source: from,
            destination: to,
            distance: oracle.distance(from, to),
            round,
        })
    }

    /// Incrementally maintained in-degree of a physical node: incoming
    /// routing references summed over its virtual servers.
    pub fn in_degree(&self, node: NodeId) -> usize {
        self.nodes[node]
            .virtual_servers
            .iter()
            .map(|&v| self.virtual_servers[v].ref_count)
            .sum()
    }

    /// Full recount over every routing table; the audit twin of
    /// [`Overlay::in_degree`].
    pub fn recount_in_degrees(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.nodes.len()];
        for v in self.virtual_servers.iter().filter(|v| v.alive) {
            for entry in v.routing_table.entries() {
                counts[self.virtual_servers[entry.target].host] += 1;
            }
        }
        counts
    }

    pub fn in_degree_histogram(&self) -> InDegreeStats {
        let per_node: Vec<usize> = (0..self.nodes.len()).map(|n| self.in_degree(n)).collect();
        let mut sorted = per_node.clone();
        sorted.sort_unstable();
        let n = sorted.len().max(1) as f64;
        let mut cdf = Vec::new();
        for (i, &deg) in sorted.iter().enumerate() {
            if i + 1 == sorted.len() || sorted[i + 1] != deg {
                cdf.push((deg, (i + 1) as f64 / n));
            }
        }
        InDegreeStats { per_node, cdf }
    }

    /// Reactive in-degree repair: every routing entry referencing one of
    /// `node`'s virtual servers is re-pointed at the nearest alternative
    /// candidate in its row (if any). Returns how many entries moved.
    pub fn handle_heavy_load(
        &mut self,
        node: NodeId,
        oracle: &dyn Distances,
    ) -> Result<usize, SimError> {
        self.node(node)?;
        let marked: HashSet<VsId> = self.nodes[node].virtual_servers.iter().copied().collect();
        let mut replaced = 0;
        for x in self.live_vs_ids() {
            let host = self.virtual_servers[x].host;
            let rows = self.virtual_servers[x].routing_table.rows.len();
            for row in 1..=rows {
                let Some(entry) = &self.virtual_servers[x].routing_table.rows[row - 1] else {
                    continue;
                };
                if !marked.contains(&entry.target) {
                    continue;
                }
                let alternative = self
                    .row_candidates(x, row)
                    .into_iter()
                    .filter(|c| !marked.contains(c))
                    .min_by(|&a, &b| {
                        oracle
                            .distance(host, self.virtual_servers[a].host)
                            .total_cmp(&oracle.distance(host, self.virtual_servers[b].host))
                            .then(a.cmp(&b))
                    });
                if let Some(alt) = alternative {
                    let entry = self.route_entry_for(alt);
                    self.set_row(x, row, Some(entry));
                    replaced += 1;
                }
            }
        }
        Ok(replaced)
    }

    /// Structured text snapshot, one line per live VS:
    /// `id host f load pe` (PE `-` for the root region). Stable across
    /// identical runs; used by golden-file tests.
    pub fn snapshot_text(&self) -> String {
        let mut out = String::new();
        for vs in self.live_vs_ids() {
            let v = &self.virtual_servers[vs];
            let pe = if v.pe.is_empty() {
                "-".to_string()
            } else {
                v.pe.to_string()
            };
            writeln!(
                out,
                "{} {} {} {} {}",
                v.id,
                v.host,
                self.region_fraction(vs),
                v.load,
                pe
            )
            .unwrap();
        }
        out
    }
}
