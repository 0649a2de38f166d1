//! Static heterogeneous network: tiered nodes, hybrid classical/quantum
//! links and mobile-origin routes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantum::FidelityDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node{}", self.0)
    }
}

impl fmt::Display for LinkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "link{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    Mobile,
    Edge,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub tier: Tier,
    pub qubit_capacity: u32,
    /// Work units per second.
    pub gate_speed: f64,
    /// Watts while computing.
    pub power_active: f64,
    /// Watts while transmitting.
    pub power_tx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub endpoints: (NodeId, NodeId),
    /// Bits per second.
    pub classical_rate: f64,
    /// Seconds.
    pub prop_latency: f64,
    pub quantum_channels: u32,
    /// Secret-key bits per second contributed by each quantum channel.
    pub key_rate_per_channel: f64,
    /// Entangled pairs generated per second.
    pub epr_rate: f64,
    pub fidelity_dist: FidelityDistribution,
}

impl LinkSpec {
    /// Secret-key rate of the link; linear in the allocated channel count.
    pub fn key_rate(&self) -> f64 {
        f64::from(self.quantum_channels) * self.key_rate_per_channel
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.endpoints.0 == node || self.endpoints.1 == node
    }

    pub fn other_end(&self, node: NodeId) -> Option<NodeId> {
        if self.endpoints.0 == node {
            Some(self.endpoints.1)
        } else if self.endpoints.1 == node {
            Some(self.endpoints.0)
        } else {
            None
        }
    }
}

/// A single broken topology invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    DuplicateNodeId { node: NodeId },
    MissingCloud { found: usize },
    DanglingLinkEndpoint { link: LinkId, node: NodeId },
    SelfLoopLink { link: LinkId },
    InvalidNode { node: NodeId, reason: &'static str },
    InvalidLink { link: LinkId, reason: &'static str },
    MissingRoute { src: NodeId, dst: NodeId },
    UnknownRouteLink { src: NodeId, dst: NodeId, link: LinkId },
    BrokenRoute { src: NodeId, dst: NodeId, position: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNodeId { node } => write!(f, "duplicate node id {node}"),
            Violation::MissingCloud { found } => {
                write!(f, "expected exactly one cloud node, found {found}")
            }
            Violation::DanglingLinkEndpoint { link, node } => {
                write!(f, "{link} references unknown {node}")
            }
            Violation::SelfLoopLink { link } => write!(f, "{link} connects a node to itself"),
            Violation::InvalidNode { node, reason } => write!(f, "{node}: {reason}"),
            Violation::InvalidLink { link, reason } => write!(f, "{link}: {reason}"),
            Violation::MissingRoute { src, dst } => write!(f, "no route {src} -> {dst}"),
            Violation::UnknownRouteLink { src, dst, link } => {
                write!(f, "route {src} -> {dst} uses unknown {link}")
            }
            Violation::BrokenRoute { src, dst, position } => {
                write!(f, "route {src} -> {dst} is discontinuous at hop {position}")
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid topology: {}", join_violations(.0))]
    Violations(Vec<Violation>),
    #[error("no route from {src} to {dst}")]
    NoRoute { src: NodeId, dst: NodeId },
    #[error("invalid topology config: {field} {reason}")]
    InvalidConfig { field: &'static str, reason: &'static str },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl TopologyError {
    pub fn violations(&self) -> &[Violation] {
        match self {
            TopologyError::Violations(v) => v,
            _ => &[],
        }
    }
}

/// Aggregate resources along a route. Rates are bottleneck minima; a
/// self-route reports zero latency and infinite rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathMetrics {
    pub latency: f64,
    pub min_classical_rate: f64,
    pub min_key_rate: f64,
    pub min_epr_rate: f64,
    pub hops: usize,
}

impl PathMetrics {
    pub const LOCAL: PathMetrics = PathMetrics {
        latency: 0.0,
        min_classical_rate: f64::INFINITY,
        min_key_rate: f64::INFINITY,
        min_epr_rate: f64::INFINITY,
        hops: 0,
    };

    pub fn is_local(&self) -> bool {
        self.hops == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    nodes: Vec<NodeSpec>,
    links: Vec<LinkSpec>,
    routes: BTreeMap<(NodeId, NodeId), Vec<LinkId>>,
    index: BTreeMap<NodeId, usize>,
    assigned_edge: BTreeMap<NodeId, NodeId>,
}

impl NetworkTopology {
    /// Assembles and validates a topology from raw parts.
    pub fn new(
        nodes: Vec<NodeSpec>,
        links: Vec<LinkSpec>,
        routes: BTreeMap<(NodeId, NodeId), Vec<LinkId>>,
    ) -> Result<Self, TopologyError> {
        let topology = Self::assemble(nodes, links, routes);
        let violations = topology.validate();
        if violations.is_empty() {
            Ok(topology)
        } else {
            Err(TopologyError::Violations(violations))
        }
    }

    /// Builds without validating; `validate` reports what is wrong.
    pub fn assemble(
        nodes: Vec<NodeSpec>,
        links: Vec<LinkSpec>,
        routes: BTreeMap<(NodeId, NodeId), Vec<LinkId>>,
    ) -> Self {
        let mut index = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            index.entry(node.id).or_insert(i);
        }
        // A mobile node's assigned edge is the first hop of its cloud route.
        let mut assigned_edge = BTreeMap::new();
        let cloud = nodes.iter().find(|n| n.tier == Tier::Cloud).map(|n| n.id);
        for node in nodes.iter().filter(|n| n.tier == Tier::Mobile) {
            let Some(cloud) = cloud else { break };
            if let Some(first) = routes.get(&(node.id, cloud)).and_then(|r| r.first()) {
                if let Some(next) = links.get(first.0).and_then(|l| l.other_end(node.id)) {
                    if index
                        .get(&next)
                        .is_some_and(|&i| nodes[i].tier == Tier::Edge)
                    {
                        assigned_edge.insert(node.id, next);
                    }
                }
            }
        }
        Self { nodes, links, routes, index, assigned_edge }
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn routes(&self) -> &BTreeMap<(NodeId, NodeId), Vec<LinkId>> {
        &self.routes
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn link(&self, id: LinkId) -> Option<&LinkSpec> {
        self.links.get(id.0)
    }

    pub fn route(&self, src: NodeId, dst: NodeId) -> Option<&[LinkId]> {
        self.routes.get(&(src, dst)).map(Vec::as_slice)
    }

    fn tier_ids(&self, tier: Tier) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(move |n| n.tier == tier).map(|n| n.id)
    }

    pub fn mobiles(&self) -> Vec<NodeId> {
        self.tier_ids(Tier::Mobile).collect()
    }

    pub fn edges(&self) -> Vec<NodeId> {
        self.tier_ids(Tier::Edge).collect()
    }

    pub fn cloud(&self) -> Option<NodeId> {
        self.tier_ids(Tier::Cloud).next()
    }

    /// Edge node through which `mobile` reaches the cloud, if any.
    pub fn assigned_edge(&self, mobile: NodeId) -> Option<NodeId> {
        self.assigned_edge.get(&mobile).copied()
    }

    /// Latency is summed over hops; rates are the minimum over hops.
    pub fn path_metrics(&self, src: NodeId, dst: NodeId) -> Result<PathMetrics, TopologyError> {
        if src == dst {
            return Ok(PathMetrics::LOCAL);
        }
        let route = self.route(src, dst).ok_or(TopologyError::NoRoute { src, dst })?;
        if route.is_empty() {
            return Err(TopologyError::NoRoute { src, dst });
        }
        let mut metrics = PathMetrics { hops: route.len(), ..PathMetrics::LOCAL };
        for id in route {
            let link = self.link(*id).ok_or(TopologyError::NoRoute { src, dst })?;
            metrics.latency += link.prop_latency;
            metrics.min_classical_rate = metrics.min_classical_rate.min(link.classical_rate);
            metrics.min_key_rate = metrics.min_key_rate.min(link.key_rate());
            metrics.min_epr_rate = metrics.min_epr_rate.min(link.epr_rate);
        }
        Ok(metrics)
    }

    /// Every broken invariant; empty iff the topology is well formed.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();

        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id) {
                out.push(Violation::DuplicateNodeId { node: node.id });
            }
            if node.qubit_capacity < 1 {
                out.push(Violation::InvalidNode { node: node.id, reason: "qubit_capacity must be >= 1" });
            }
            if !(node.gate_speed > 0.0 && node.gate_speed.is_finite()) {
                out.push(Violation::InvalidNode { node: node.id, reason: "gate_speed must be > 0" });
            }
            if !(node.power_active >= 0.0 && node.power_active.is_finite()) {
                out.push(Violation::InvalidNode { node: node.id, reason: "power_active must be >= 0" });
            }
            if !(node.power_tx >= 0.0 && node.power_tx.is_finite()) {
                out.push(Violation::InvalidNode { node: node.id, reason: "power_tx must be >= 0" });
            }
        }

        let clouds = self.nodes.iter().filter(|n| n.tier == Tier::Cloud).count();
        if clouds != 1 {
            out.push(Violation::MissingCloud { found: clouds });
        }

        for (i, link) in self.links.iter().enumerate() {
            let id = LinkId(i);
            for end in [link.endpoints.0, link.endpoints.1] {
                if !self.index.contains_key(&end) {
                    out.push(Violation::DanglingLinkEndpoint { link: id, node: end });
                }
            }
            if link.endpoints.0 == link.endpoints.1 {
                out.push(Violation::SelfLoopLink { link: id });
            }
            if !(link.classical_rate > 0.0) {
                out.push(Violation::InvalidLink { link: id, reason: "classical_rate must be > 0" });
            }
            if !(link.prop_latency >= 0.0 && link.prop_latency.is_finite()) {
                out.push(Violation::InvalidLink { link: id, reason: "prop_latency must be >= 0" });
            }
            if !(link.key_rate_per_channel >= 0.0 && link.key_rate_per_channel.is_finite()) {
                out.push(Violation::InvalidLink { link: id, reason: "key_rate_per_channel must be >= 0" });
            }
            if !(link.epr_rate >= 0.0 && link.epr_rate.is_finite()) {
                out.push(Violation::InvalidLink { link: id, reason: "epr_rate must be >= 0" });
            }
            if link.fidelity_dist.validate().is_err() {
                out.push(Violation::InvalidLink { link: id, reason: "fidelity distribution out of bounds" });
            }
        }

        for (&(src, dst), route) in &self.routes {
            self.check_route(src, dst, route, &mut out);
        }

        let targets: Vec<NodeId> = self.edges().into_iter().chain(self.cloud()).collect();
        for mobile in self.mobiles() {
            for &dst in &targets {
                if !self.routes.contains_key(&(mobile, dst)) {
                    out.push(Violation::MissingRoute { src: mobile, dst });
                }
            }
        }
        out
    }

    fn check_route(&self, src: NodeId, dst: NodeId, route: &[LinkId], out: &mut Vec<Violation>) {
        if src == dst {
            return;
        }
        if route.is_empty() {
            out.push(Violation::MissingRoute { src, dst });
            return;
        }
        let mut at = src;
        for (position, id) in route.iter().enumerate() {
            let Some(link) = self.link(*id) else {
                out.push(Violation::UnknownRouteLink { src, dst, link: *id });
                return;
            };
            match link.other_end(at) {
                Some(next) => at = next,
                None => {
                    out.push(Violation::BrokenRoute { src, dst, position });
                    return;
                }
            }
        }
        if at != dst {
            out.push(Violation::BrokenRoute { src, dst, position: route.len() });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeParams {
    pub qubit_capacity: u32,
    pub gate_speed: f64,
    pub power_active: f64,
    pub power_tx: f64,
}

impl NodeParams {
    pub fn mobile() -> Self {
        Self { qubit_capacity: 20, gate_speed: 1.0e5, power_active: 5.0, power_tx: 1.0 }
    }

    pub fn edge() -> Self {
        Self { qubit_capacity: 32, gate_speed: 5.0e5, power_active: 10.0, power_tx: 1.0 }
    }

    pub fn cloud() -> Self {
        Self { qubit_capacity: 512, gate_speed: 5.0e6, power_active: 20.0, power_tx: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub classical_rate: f64,
    pub prop_latency: f64,
    pub quantum_channels: u32,
    pub key_rate_per_channel: f64,
    pub epr_rate: f64,
    #[serde(default)]
    pub fidelity: FidelityDistribution,
}

impl LinkParams {
    pub fn mobile_edge() -> Self {
        Self {
            classical_rate: 1.0e8,
            prop_latency: 0.005,
            quantum_channels: 16,
            key_rate_per_channel: 2000.0,
            epr_rate: 100.0,
            fidelity: FidelityDistribution::default(),
        }
    }

    pub fn edge_cloud() -> Self {
        Self {
            classical_rate: 1.0e9,
            prop_latency: 0.020,
            quantum_channels: 16,
            key_rate_per_channel: 2000.0,
            epr_rate: 200.0,
            fidelity: FidelityDistribution::default(),
        }
    }

    fn to_spec(&self, a: NodeId, b: NodeId) -> LinkSpec {
        LinkSpec {
            endpoints: (a, b),
            classical_rate: self.classical_rate,
            prop_latency: self.prop_latency,
            quantum_channels: self.quantum_channels,
            key_rate_per_channel: self.key_rate_per_channel,
            epr_rate: self.epr_rate,
            fidelity_dist: self.fidelity,
        }
    }
}

/// Tier counts plus per-tier node and per-tier-pair link parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub mobile: usize,
    pub edge: usize,
    pub cloud: usize,
    pub mobile_node: NodeParams,
    pub edge_node: NodeParams,
    pub cloud_node: NodeParams,
    pub mobile_edge_link: LinkParams,
    pub edge_cloud_link: LinkParams,
    /// When set, every mobile node also gets a direct link to the cloud.
    pub mobile_cloud_link: Option<LinkParams>,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            mobile: 10,
            edge: 5,
            cloud: 1,
            mobile_node: NodeParams::mobile(),
            edge_node: NodeParams::edge(),
            cloud_node: NodeParams::cloud(),
            mobile_edge_link: LinkParams::mobile_edge(),
            edge_cloud_link: LinkParams::edge_cloud(),
            mobile_cloud_link: None,
        }
    }
}

impl TopologyConfig {
    pub fn with_counts(mobile: usize, edge: usize, cloud: usize) -> Self {
        Self { mobile, edge, cloud, ..Self::default() }
    }
}

/// Instantiates a tiered topology.
///
/// Node ids are dense: mobiles first, then edges, then the cloud. Every
/// mobile node links directly to every edge node; mobile `i` is assigned to
/// edge `i mod edge` and reaches the cloud through it unless a direct
/// mobile-cloud link is configured.
pub fn build_topology(config: &TopologyConfig) -> Result<NetworkTopology, TopologyError> {
    if config.cloud != 1 {
        return Err(TopologyError::Violations(vec![Violation::MissingCloud { found: config.cloud }]));
    }
    if config.mobile == 0 {
        return Err(TopologyError::InvalidConfig { field: "topology.mobile", reason: "must be >= 1" });
    }
    if config.edge == 0 && config.mobile_cloud_link.is_none() {
        return Err(TopologyError::InvalidConfig {
            field: "topology.edge",
            reason: "must be >= 1 unless mobile_cloud_link is configured",
        });
    }

    let node = |id: usize, tier: Tier, p: &NodeParams| NodeSpec {
        id: NodeId(id),
        tier,
        qubit_capacity: p.qubit_capacity,
        gate_speed: p.gate_speed,
        power_active: p.power_active,
        power_tx: p.power_tx,
    };
    let mobiles: Vec<NodeId> = (0..config.mobile).map(NodeId).collect();
    let edges: Vec<NodeId> = (config.mobile..config.mobile + config.edge).map(NodeId).collect();
    let cloud = NodeId(config.mobile + config.edge);

    let mut nodes = Vec::with_capacity(config.mobile + config.edge + 1);
    nodes.extend(mobiles.iter().map(|m| node(m.0, Tier::Mobile, &config.mobile_node)));
    nodes.extend(edges.iter().map(|e| node(e.0, Tier::Edge, &config.edge_node)));
    nodes.push(node(cloud.0, Tier::Cloud, &config.cloud_node));

    let mut links = Vec::new();
    let mut routes = BTreeMap::new();
    let mut mobile_edge = BTreeMap::new();
    for &m in &mobiles {
        routes.insert((m, m), Vec::new());
        for &e in &edges {
            let id = LinkId(links.len());
            links.push(config.mobile_edge_link.to_spec(m, e));
            mobile_edge.insert((m, e), id);
            routes.insert((m, e), vec![id]);
        }
    }
    let mut edge_cloud = BTreeMap::new();
    for &e in &edges {
        let id = LinkId(links.len());
        links.push(config.edge_cloud_link.to_spec(e, cloud));
        edge_cloud.insert(e, id);
    }
    for (i, &m) in mobiles.iter().enumerate() {
        let route = match &config.mobile_cloud_link {
            Some(params) => {
                let id = LinkId(links.len());
                links.push(params.to_spec(m, cloud));
                vec![id]
            }
            None => {
                let e = edges[i % edges.len()];
                vec![mobile_edge[&(m, e)], edge_cloud[&e]]
            }
        };
        routes.insert((m, cloud), route);
    }

    let mut topology = NetworkTopology::new(nodes, links, routes)?;
    if !edges.is_empty() {
        // Round-robin assignment also holds when the cloud is reached directly.
        for (i, &m) in mobiles.iter().enumerate() {
            topology.assigned_edge.insert(m, edges[i % edges.len()]);
        }
    }
    Ok(topology)
}
