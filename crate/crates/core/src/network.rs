//! Network topology and the reduction algorithms that collapse a supported
//! network to a single-OD set of non-overlapping parallel routes.
//!
//! Two collapses are applied repeatedly: links in series merge by adding
//! their cost functions (a common flow passes through both), and inner
//! parallel blocks merge into a single link whose travel time equals the
//! total system travel time of the block. The parallel collapse fixes the
//! toll vector: the block's equilibrium split depends on the tolls, so the
//! reduction is re-run per action rather than carrying piece-dependent toll
//! coefficients around. Toll slots that survive to the top level keep unit
//! coefficients; slots absorbed by an inner collapse are baked into the
//! cost curve and their coefficient drops to zero.

use std::collections::VecDeque;
use std::fmt;

use crate::equilibrium::{self, EquilibriumError, TollVector};
use crate::pwl::{PwlError, PwlFunction, Segment};

#[derive(Debug)]
pub enum NetworkError {
    UnknownNode { name: String },
    NodeIndexOutOfRange { index: usize },
    SelfLoop { node: String },
    TollSlotOutOfRange { slot: usize, slots: usize },
    DuplicateTollSlot { slot: usize },
    NotSingleOd { od_pairs: usize },
    NotSeriesParallel { node: String },
    NotAChain { reason: String },
    TollCountMismatch { expected: usize, got: usize },
    InvalidSplit { index: usize, value: f64 },
    MilestoneMismatch { reason: String },
    Parse { line: usize, message: String },
    Pwl(PwlError),
    Equilibrium(EquilibriumError),
}

impl fmt::Display for NetworkError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetworkError::UnknownNode { name } => write!(f, "unknown node '{name}'"),
            NetworkError::NodeIndexOutOfRange { index } => {
                write!(f, "node index {index} out of range")
            }
            NetworkError::SelfLoop { node } => write!(f, "self-loop at node '{node}'"),
            NetworkError::TollSlotOutOfRange { slot, slots } => {
                write!(f, "toll slot {slot} out of range (have {slots})")
            }
            NetworkError::DuplicateTollSlot { slot } => {
                write!(f, "toll slot {slot} assigned to more than one link")
            }
            NetworkError::NotSingleOd { od_pairs } => {
                write!(f, "expected exactly one OD pair, found {od_pairs}")
            }
            NetworkError::NotSeriesParallel { node } => {
                write!(f, "network is not series-parallel: stuck at node '{node}'")
            }
            NetworkError::NotAChain { reason } => {
                write!(f, "not a series-activity-trips chain: {reason}")
            }
            NetworkError::TollCountMismatch { expected, got } => {
                write!(f, "expected {expected} tolls, got {got}")
            }
            NetworkError::InvalidSplit { index, value } => {
                write!(f, "split fraction {index} must lie in [0, 1), got {value}")
            }
            NetworkError::MilestoneMismatch { reason } => {
                write!(f, "milestones do not match the OD pairs: {reason}")
            }
            NetworkError::Parse { line, message } => {
                write!(f, "parse error on line {line}: {message}")
            }
            NetworkError::Pwl(e) => write!(f, "{e}"),
            NetworkError::Equilibrium(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for NetworkError {}

impl From<PwlError> for NetworkError {
    fn from(e: PwlError) -> Self {
        NetworkError::Pwl(e)
    }
}

impl From<EquilibriumError> for NetworkError {
    fn from(e: EquilibriumError) -> Self {
        NetworkError::Equilibrium(e)
    }
}

/// Directed link with a travel-time curve and a slot into the toll vector.
#[derive(Clone, Debug)]
pub struct Link {
    pub tail: usize,
    pub head: usize,
    pub cost: PwlFunction,
    pub toll_slot: usize,
}

#[derive(Clone, Debug)]
pub struct Network {
    node_names: Vec<String>,
    links: Vec<Link>,
    od_pairs: Vec<(usize, usize)>,
}

impl Network {
    /// Structural construction checks only; toll-slot uniqueness and
    /// connectivity are reported by [`validate`], not rejected here.
    pub fn new(
        node_names: Vec<String>,
        links: Vec<Link>,
        od_pairs: Vec<(usize, usize)>,
    ) -> Result<Self, NetworkError> {
        let n = node_names.len();
        for link in &links {
            if link.tail >= n {
                return Err(NetworkError::NodeIndexOutOfRange { index: link.tail });
            }
            if link.head >= n {
                return Err(NetworkError::NodeIndexOutOfRange { index: link.head });
            }
            if link.tail == link.head {
                return Err(NetworkError::SelfLoop {
                    node: node_names[link.tail].clone(),
                });
            }
            if link.toll_slot >= links.len() {
                return Err(NetworkError::TollSlotOutOfRange {
                    slot: link.toll_slot,
                    slots: links.len(),
                });
            }
        }
        for &(o, d) in &od_pairs {
            if o >= n {
                return Err(NetworkError::NodeIndexOutOfRange { index: o });
            }
            if d >= n {
                return Err(NetworkError::NodeIndexOutOfRange { index: d });
            }
        }
        Ok(Self {
            node_names,
            links,
            od_pairs,
        })
    }

    pub fn node_names(&self) -> &[String] {
        &self.node_names
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.node_names.iter().position(|n| n == name)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn od_pairs(&self) -> &[(usize, usize)] {
        &self.od_pairs
    }

    /// Number of toll slots (one per link).
    pub fn toll_slots(&self) -> usize {
        self.links.len()
    }

    fn duplicate_toll_slot(&self) -> Option<usize> {
        let mut seen = vec![false; self.links.len()];
        for link in &self.links {
            if seen[link.toll_slot] {
                return Some(link.toll_slot);
            }
            seen[link.toll_slot] = true;
        }
        None
    }
}

/// Diagnostics reported by [`validate`].
#[derive(Clone, Debug)]
pub struct NetworkDiagnostics {
    /// Per OD pair: destination reachable from origin.
    pub od_connected: Vec<bool>,
    /// First toll slot assigned to more than one link, if any.
    pub duplicate_toll_slot: Option<usize>,
    /// Per OD pair: reducible by series/parallel collapses.
    pub series_parallel: Vec<bool>,
}

impl NetworkDiagnostics {
    pub fn is_valid(&self) -> bool {
        self.duplicate_toll_slot.is_none() && self.od_connected.iter().all(|&c| c)
    }
}

fn reachable_from(links: &[Link], start: usize, n: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        for link in links.iter().filter(|l| l.tail == v) {
            if !seen[link.head] {
                seen[link.head] = true;
                queue.push_back(link.head);
            }
        }
    }
    seen
}

/// Structural series-parallel test on the edge multiset: contracts interior
/// degree-(1,1) nodes and merges parallel edges until nothing changes.
fn sp_reducible(mut edges: Vec<(usize, usize)>, origin: usize, destination: usize) -> bool {
    loop {
        let mut changed = false;
        // parallel merge
        edges.sort_unstable();
        edges.dedup_by(|a, b| {
            if a == b {
                changed = true;
                true
            } else {
                false
            }
        });
        // series contraction
        let nodes: Vec<usize> = {
            let mut v: Vec<usize> = edges.iter().flat_map(|&(t, h)| [t, h]).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        for &v in &nodes {
            if v == origin || v == destination {
                continue;
            }
            let incoming: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].1 == v).collect();
            let outgoing: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].0 == v).collect();
            if incoming.len() == 1 && outgoing.len() == 1 {
                let (t, _) = edges[incoming[0]];
                let (_, h) = edges[outgoing[0]];
                if t == h {
                    return false;
                }
                let (i, j) = (incoming[0].max(outgoing[0]), incoming[0].min(outgoing[0]));
                edges.remove(i);
                edges.remove(j);
                edges.push((t, h));
                changed = true;
                break;
            }
        }
        if !changed {
            break;
        }
    }
    edges == vec![(origin, destination)]
}

/// Connectivity, toll-slot uniqueness, and series-parallel reducibility per
/// OD pair; diagnostics only, nothing is rejected.
pub fn validate(net: &Network) -> NetworkDiagnostics {
    let n = net.node_names.len();
    let od_connected = net
        .od_pairs
        .iter()
        .map(|&(o, d)| reachable_from(&net.links, o, n)[d])
        .collect();
    let series_parallel = net
        .od_pairs
        .iter()
        .map(|&(o, d)| {
            let edges: Vec<(usize, usize)> = net.links.iter().map(|l| (l.tail, l.head)).collect();
            sp_reducible(edges, o, d)
        })
        .collect();
    NetworkDiagnostics {
        od_connected,
        duplicate_toll_slot: net.duplicate_toll_slot(),
        series_parallel,
    }
}

/// One surviving parallel alternative after reduction: a cost curve (with
/// inner-collapse toll contributions absorbed) plus the per-slot linear
/// toll coefficients that still apply on top of it.
#[derive(Clone, Debug)]
pub struct ReducedRoute {
    pub cost: PwlFunction,
    pub toll_coeffs: Vec<f64>,
}

impl ReducedRoute {
    /// Scalar toll this route carries for a concrete slot-level vector.
    pub fn route_toll(&self, tolls: &[f64]) -> f64 {
        self.toll_coeffs
            .iter()
            .zip(tolls)
            .map(|(k, u)| k * u)
            .sum()
    }
}

#[derive(Clone)]
struct REdge {
    tail: usize,
    head: usize,
    cost: PwlFunction,
    coeffs: Vec<f64>,
}

/// Collapses a set of parallel branches into one edge whose travel time is
/// the block's total system travel time at the given tolls.
fn collapse_parallel(
    branches: &[REdge],
    tolls: &[f64],
    slot_count: usize,
) -> Result<(PwlFunction, Vec<f64>), NetworkError> {
    let pwls: Vec<PwlFunction> = branches.iter().map(|b| b.cost.clone()).collect();
    let branch_tolls: Vec<f64> = branches.iter().map(|b| {
        b.coeffs.iter().zip(tolls).map(|(k, u)| k * u).sum()
    }).collect();
    let tstt_pwl = equilibrium::extract_tstt_pwl(&pwls, &TollVector::new(branch_tolls.clone())?)?;
    let segments: Vec<Segment> = tstt_pwl
        .pieces()
        .iter()
        .map(|p| Segment {
            x_start: p.x_start,
            slope: p.demand_coeff,
            intercept: p
                .toll_coeffs
                .iter()
                .zip(&branch_tolls)
                .map(|(k, u)| k * u)
                .sum::<f64>()
                + p.constant,
        })
        .collect();
    Ok((PwlFunction::new(segments)?, vec![0.0; slot_count]))
}

/// Core reduction loop over an edge list. Returns the top-level parallel
/// alternatives between `origin` and `destination`.
fn reduce_edges(
    mut edges: Vec<REdge>,
    origin: usize,
    destination: usize,
    tolls: &[f64],
    slot_count: usize,
    node_names: &[String],
) -> Result<Vec<REdge>, NetworkError> {
    loop {
        let mut changed = false;

        // Parallel pass: collapse inner blocks; the top-level (O, D) group
        // stays split so the route structure survives for the equilibrium.
        let mut pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.tail, e.head)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        for (tail, head) in pairs {
            if (tail, head) == (origin, destination) {
                continue;
            }
            let group: Vec<usize> = (0..edges.len())
                .filter(|&i| edges[i].tail == tail && edges[i].head == head)
                .collect();
            if group.len() >= 2 {
                let branches: Vec<REdge> = group.iter().map(|&i| edges[i].clone()).collect();
                let (cost, coeffs) = collapse_parallel(&branches, tolls, slot_count)?;
                for &i in group.iter().rev() {
                    edges.remove(i);
                }
                edges.push(REdge {
                    tail,
                    head,
                    cost,
                    coeffs,
                });
                changed = true;
            }
        }

        // Series pass: contract interior nodes traversed by exactly one
        // incoming and one outgoing edge.
        let mut nodes: Vec<usize> = edges.iter().flat_map(|e| [e.tail, e.head]).collect();
        nodes.sort_unstable();
        nodes.dedup();
        for v in nodes {
            if v == origin || v == destination {
                continue;
            }
            let incoming: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].head == v).collect();
            let outgoing: Vec<usize> = (0..edges.len()).filter(|&i| edges[i].tail == v).collect();
            if incoming.len() == 1 && outgoing.len() == 1 {
                let first = edges[incoming[0]].clone();
                let second = edges[outgoing[0]].clone();
                if first.tail == second.head {
                    return Err(NetworkError::NotSeriesParallel {
                        node: node_names[v].clone(),
                    });
                }
                let coeffs = first
                    .coeffs
                    .iter()
                    .zip(&second.coeffs)
                    .map(|(a, b)| a + b)
                    .collect();
                let merged = REdge {
                    tail: first.tail,
                    head: second.head,
                    cost: first.cost.add(&second.cost),
                    coeffs,
                };
                let (i, j) = (
                    incoming[0].max(outgoing[0]),
                    incoming[0].min(outgoing[0]),
                );
                edges.remove(i);
                edges.remove(j);
                edges.push(merged);
                changed = true;
                break;
            }
        }

        if !changed {
            break;
        }
    }

    if edges.iter().all(|e| e.tail == origin && e.head == destination) && !edges.is_empty() {
        Ok(edges)
    } else {
        let stuck = edges
            .iter()
            .flat_map(|e| [e.tail, e.head])
            .find(|&v| v != origin && v != destination)
            .unwrap_or(origin);
        Err(NetworkError::NotSeriesParallel {
            node: node_names[stuck].clone(),
        })
    }
}

fn check_tolls(net: &Network, tolls: &[f64]) -> Result<(), NetworkError> {
    if tolls.len() != net.toll_slots() {
        return Err(NetworkError::TollCountMismatch {
            expected: net.toll_slots(),
            got: tolls.len(),
        });
    }
    if let Some(slot) = net.duplicate_toll_slot() {
        return Err(NetworkError::DuplicateTollSlot { slot });
    }
    Ok(())
}

/// Reduces a single-OD series-parallel network at a concrete toll vector.
/// The result is the set of top-level parallel alternatives; feed them to
/// the equilibrium module with the per-route tolls from
/// [`ReducedRoute::route_toll`].
pub fn reduce_series_parallel(
    net: &Network,
    tolls: &[f64],
) -> Result<Vec<ReducedRoute>, NetworkError> {
    if net.od_pairs.len() != 1 {
        return Err(NetworkError::NotSingleOd {
            od_pairs: net.od_pairs.len(),
        });
    }
    check_tolls(net, tolls)?;
    let (origin, destination) = net.od_pairs[0];
    let slot_count = net.toll_slots();
    let edges: Vec<REdge> = net
        .links
        .iter()
        .map(|l| {
            let mut coeffs = vec![0.0; slot_count];
            coeffs[l.toll_slot] = 1.0;
            REdge {
                tail: l.tail,
                head: l.head,
                cost: l.cost.clone(),
                coeffs,
            }
        })
        .collect();
    let top = reduce_edges(edges, origin, destination, tolls, slot_count, &net.node_names)?;
    Ok(top
        .into_iter()
        .map(|e| ReducedRoute {
            cost: e.cost,
            toll_coeffs: e.coeffs,
        })
        .collect())
}

/// Chain of OD pairs sharing one origin, with the fraction of arriving
/// demand that terminates at each intermediate milestone.
#[derive(Clone, Debug)]
pub struct MultiOdSpec {
    /// `milestones[0]` is the origin; every later entry is a destination.
    pub milestones: Vec<usize>,
    /// `splits[i]` is the share exiting at `milestones[i + 1]`; the final
    /// milestone absorbs the rest. Each lies in `[0, 1)`.
    pub splits: Vec<f64>,
}

impl MultiOdSpec {
    pub fn new(milestones: Vec<usize>, splits: Vec<f64>) -> Result<Self, NetworkError> {
        if milestones.len() < 2 {
            return Err(NetworkError::NotAChain {
                reason: "need an origin and at least one destination".into(),
            });
        }
        if splits.len() + 2 != milestones.len() {
            return Err(NetworkError::NotAChain {
                reason: format!(
                    "{} milestones need {} split fractions, got {}",
                    milestones.len(),
                    milestones.len() - 2,
                    splits.len()
                ),
            });
        }
        for (index, &value) in splits.iter().enumerate() {
            if !(value.is_finite() && (0.0..1.0).contains(&value)) {
                return Err(NetworkError::InvalidSplit { index, value });
            }
        }
        Ok(Self { milestones, splits })
    }

    /// Fraction of the total demand flowing through block `i`
    /// (between milestones `i` and `i + 1`).
    pub fn block_fraction(&self, block: usize) -> f64 {
        self.splits[..block.min(self.splits.len())]
            .iter()
            .fold(1.0, |acc, rho| acc * (1.0 - rho))
    }
}

/// BFS that never expands interior milestone nodes, so each block stays
/// within its chain section.
fn reach_avoiding(
    links: &[Link],
    start: usize,
    n: usize,
    milestones: &[usize],
    forward: bool,
) -> Vec<bool> {
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        if v != start && milestones.contains(&v) {
            continue;
        }
        for link in links {
            let (from, to) = if forward {
                (link.tail, link.head)
            } else {
                (link.head, link.tail)
            };
            if from == v && !seen[to] {
                seen[to] = true;
                queue.push_back(to);
            }
        }
    }
    seen
}

/// Reduces a series-activity-trips network to a single equivalent link whose
/// travel time is piecewise linear in the total demand. Inner blocks are
/// collapsed at the given tolls; block flows are fixed fractions of the total
/// demand, folded in by rescaling each block's curve before the series sum.
/// The composition is exact for every demand, so `demand_cap` (the largest
/// demand the caller intends to query) is only sanity-checked.
pub fn reduce_multi_od(
    net: &Network,
    spec: &MultiOdSpec,
    demand_cap: f64,
    tolls: &[f64],
) -> Result<ReducedRoute, NetworkError> {
    if !(demand_cap.is_finite() && demand_cap >= 0.0) {
        return Err(NetworkError::NotAChain {
            reason: format!("demand cap must be finite and non-negative, got {demand_cap}"),
        });
    }
    check_tolls(net, tolls)?;
    let origin = spec.milestones[0];
    for &m in &spec.milestones {
        if m >= net.node_names.len() {
            return Err(NetworkError::NodeIndexOutOfRange { index: m });
        }
    }
    // Every OD pair of the network must be (origin, milestone_i).
    let expected: Vec<(usize, usize)> = spec.milestones[1..]
        .iter()
        .map(|&d| (origin, d))
        .collect();
    let mut declared = net.od_pairs.clone();
    declared.sort_unstable();
    let mut wanted = expected.clone();
    wanted.sort_unstable();
    if declared != wanted {
        return Err(NetworkError::MilestoneMismatch {
            reason: "network OD pairs must be exactly origin-to-each-milestone".into(),
        });
    }

    let n = net.node_names.len();
    let slot_count = net.toll_slots();
    let mut assigned = vec![false; net.links.len()];
    let mut composite: Option<PwlFunction> = None;
    let mut coeffs = vec![0.0; slot_count];

    for block in 0..spec.milestones.len() - 1 {
        let a = spec.milestones[block];
        let b = spec.milestones[block + 1];
        let fwd = reach_avoiding(&net.links, a, n, &spec.milestones, true);
        let bwd = reach_avoiding(&net.links, b, n, &spec.milestones, false);
        let member: Vec<usize> = (0..net.links.len())
            .filter(|&i| {
                let l = &net.links[i];
                fwd[l.tail] && bwd[l.head]
            })
            .collect();
        if member.is_empty() {
            return Err(NetworkError::NotAChain {
                reason: format!(
                    "no links between '{}' and '{}'",
                    net.node_names[a], net.node_names[b]
                ),
            });
        }
        for &i in &member {
            if assigned[i] {
                return Err(NetworkError::NotAChain {
                    reason: format!("link {i} belongs to more than one chain section"),
                });
            }
            assigned[i] = true;
        }
        let edges: Vec<REdge> = member
            .iter()
            .map(|&i| {
                let l = &net.links[i];
                let mut c = vec![0.0; slot_count];
                c[l.toll_slot] = 1.0;
                REdge {
                    tail: l.tail,
                    head: l.head,
                    cost: l.cost.clone(),
                    coeffs: c,
                }
            })
            .collect();
        let mut top = reduce_edges(edges, a, b, tolls, slot_count, &net.node_names)?;
        let block_edge = if top.len() == 1 {
            top.pop().expect("one edge")
        } else {
            // Parallel at the block level is inner relative to the chain.
            let (cost, c) = collapse_parallel(&top, tolls, slot_count)?;
            REdge {
                tail: a,
                head: b,
                cost,
                coeffs: c,
            }
        };
        let fraction = spec.block_fraction(block);
        let scaled = block_edge.cost.scale_argument(fraction)?;
        composite = Some(match composite {
            None => scaled,
            Some(acc) => acc.add(&scaled),
        });
        for (slot, k) in block_edge.coeffs.iter().enumerate() {
            coeffs[slot] += k;
        }
    }

    if assigned.iter().any(|&a| !a) {
        return Err(NetworkError::NotAChain {
            reason: "some links lie outside every chain section".into(),
        });
    }
    Ok(ReducedRoute {
        cost: composite.expect("at least one block"),
        toll_coeffs: coeffs,
    })
}

/// Total system travel time of a reduced route set at a concrete demand and
/// slot-level toll vector.
pub fn reduced_tstt(
    routes: &[ReducedRoute],
    demand: f64,
    tolls: &[f64],
) -> Result<f64, NetworkError> {
    let pwls: Vec<PwlFunction> = routes.iter().map(|r| r.cost.clone()).collect();
    let route_tolls: Vec<f64> = routes.iter().map(|r| r.route_toll(tolls)).collect();
    Ok(equilibrium::tstt(
        &pwls,
        demand,
        &TollVector::new(route_tolls)?,
    )?)
}

/// Parsed network file: the topology plus an optional chain specification.
#[derive(Clone, Debug)]
pub struct NetworkFile {
    pub network: Network,
    pub multi_od: Option<MultiOdSpec>,
}

/// Parses the structured text format:
///
/// ```text
/// [nodes]
/// A B C D
/// [pwl f1]
/// 0,1.5,0.5
/// [links]
/// A,B,f1,0
/// [od]
/// A,D
/// [splits]
/// 0.5
/// ```
pub fn parse_network(text: &str) -> Result<NetworkFile, NetworkError> {
    enum Section {
        None,
        Nodes,
        Pwl(String),
        Links,
        Od,
        Splits,
    }
    let mut section = Section::None;
    let mut node_names: Vec<String> = Vec::new();
    let mut pwl_defs: Vec<(String, Vec<Segment>)> = Vec::new();
    let mut link_rows: Vec<(usize, String, String, String, usize)> = Vec::new();
    let mut od_rows: Vec<(usize, String, String)> = Vec::new();
    let mut splits: Vec<f64> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let inner = rest.strip_suffix(']').ok_or(NetworkError::Parse {
                line: line_no,
                message: "unterminated section header".into(),
            })?;
            section = match inner.trim() {
                "nodes" => Section::Nodes,
                "links" => Section::Links,
                "od" => Section::Od,
                "splits" => Section::Splits,
                other => {
                    if let Some(name) = other.strip_prefix("pwl") {
                        let name = name.trim();
                        if name.is_empty() {
                            return Err(NetworkError::Parse {
                                line: line_no,
                                message: "pwl section needs a name".into(),
                            });
                        }
                        pwl_defs.push((name.to_string(), Vec::new()));
                        Section::Pwl(name.to_string())
                    } else {
                        return Err(NetworkError::Parse {
                            line: line_no,
                            message: format!("unknown section '{other}'"),
                        });
                    }
                }
            };
            continue;
        }
        match &section {
            Section::None => {
                return Err(NetworkError::Parse {
                    line: line_no,
                    message: "content before any section header".into(),
                })
            }
            Section::Nodes => {
                node_names.extend(line.split_whitespace().map(str::to_string));
            }
            Section::Pwl(name) => {
                let parts: Vec<&str> = line.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(NetworkError::Parse {
                        line: line_no,
                        message: "pwl row needs x_start,slope,intercept".into(),
                    });
                }
                let nums: Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
                let nums = nums.map_err(|e| NetworkError::Parse {
                    line: line_no,
                    message: format!("bad number: {e}"),
                })?;
                let def = pwl_defs
                    .iter_mut()
                    .find(|(n, _)| n == name)
                    .expect("current section exists");
                def.1.push(Segment {
                    x_start: nums[0],
                    slope: nums[1],
                    intercept: nums[2],
                });
            }
            Section::Links => {
                let parts: Vec<&str> = line.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(NetworkError::Parse {
                        line: line_no,
                        message: "link row needs tail,head,pwl-ref,toll_slot".into(),
                    });
                }
                let slot = parts[3].parse::<usize>().map_err(|e| NetworkError::Parse {
                    line: line_no,
                    message: format!("bad toll slot: {e}"),
                })?;
                link_rows.push((
                    line_no,
                    parts[0].to_string(),
                    parts[1].to_string(),
                    parts[2].to_string(),
                    slot,
                ));
            }
            Section::Od => {
                let parts: Vec<&str> = line.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(NetworkError::Parse {
                        line: line_no,
                        message: "od row needs origin,destination".into(),
                    });
                }
                od_rows.push((line_no, parts[0].to_string(), parts[1].to_string()));
            }
            Section::Splits => {
                let value = line.parse::<f64>().map_err(|e| NetworkError::Parse {
                    line: line_no,
                    message: format!("bad split fraction: {e}"),
                })?;
                splits.push(value);
            }
        }
    }

    let find_node = |name: &str, line: usize| -> Result<usize, NetworkError> {
        node_names
            .iter()
            .position(|n| n == name)
            .ok_or(NetworkError::Parse {
                line,
                message: format!("unknown node '{name}'"),
            })
    };
    let mut links = Vec::new();
    for (line, tail, head, pwl_ref, slot) in link_rows {
        let segs = pwl_defs
            .iter()
            .find(|(n, _)| *n == pwl_ref)
            .ok_or(NetworkError::Parse {
                line,
                message: format!("unknown pwl '{pwl_ref}'"),
            })?
            .1
            .clone();
        let cost = PwlFunction::new(segs).map_err(|e| NetworkError::Parse {
            line,
            message: format!("invalid pwl '{pwl_ref}': {e}"),
        })?;
        links.push(Link {
            tail: find_node(&tail, line)?,
            head: find_node(&head, line)?,
            cost,
            toll_slot: slot,
        });
    }
    let mut od_pairs = Vec::new();
    for (line, o, d) in od_rows {
        od_pairs.push((find_node(&o, line)?, find_node(&d, line)?));
    }

    let multi_od = if od_pairs.len() > 1 {
        let origin = od_pairs[0].0;
        let mut milestones = vec![origin];
        milestones.extend(od_pairs.iter().map(|&(_, d)| d));
        Some(MultiOdSpec::new(milestones, splits.clone())?)
    } else {
        None
    };
    let network = Network::new(node_names, links, od_pairs)?;
    Ok(NetworkFile { network, multi_od })
}
