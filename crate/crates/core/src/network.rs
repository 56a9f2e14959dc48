//! Network data model: servers, flows, induced graph, classification, the
//! topology generators for the experiment families, and the network file
//! format.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::curves::{RateLatency, TokenBucket};

pub mod format;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("flow {flow}: path references unknown server id {server}")]
    DanglingServer { flow: String, server: u32 },
    #[error("flow {flow}: path repeats server id {server}")]
    RepeatedServer { flow: String, server: u32 },
    #[error("flow {flow}: empty path")]
    EmptyPath { flow: String },
    #[error("duplicate server id {0}")]
    DuplicateServer(u32),
    #[error("duplicate flow name {0}")]
    DuplicateFlow(String),
    #[error("network has no servers")]
    Empty,
    #[error("unknown flow of interest {0}")]
    UnknownFoi(String),
    #[error("network is cyclic; use the cyclic-analysis methods")]
    Cyclic,
    #[error("network is not a tree rooted at a unique sink")]
    NotTree,
}

/// FIFO server: rate-latency service curve plus an optional greedy shaper
/// bounding its aggregate output. No shaper means no shaping constraint
/// anywhere downstream (infinite capacity).
#[derive(Clone, Debug, PartialEq)]
pub struct Server {
    pub id: u32,
    pub service: RateLatency,
    pub shaper: Option<TokenBucket>,
}

impl Server {
    pub fn new(id: u32, service: RateLatency, shaper: Option<TokenBucket>) -> Self {
        if let Some(s) = shaper {
            assert!(
                s.rate >= service.rate,
                "server {id}: shaper rate {} below service rate {}",
                s.rate,
                service.rate
            );
        }
        Server { id, service, shaper }
    }
}

/// Token-bucket flow along an acyclic path of server ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub name: String,
    pub arrival: TokenBucket,
    pub path: Vec<u32>,
    /// Optional shaper applied to this flow at its source (off by default).
    pub source_shaper: Option<TokenBucket>,
}

impl Flow {
    pub fn new(name: impl Into<String>, arrival: TokenBucket, path: Vec<u32>) -> Self {
        Flow { name: name.into(), arrival, path, source_shaper: None }
    }

    pub fn first(&self) -> u32 {
        self.path[0]
    }

    pub fn last(&self) -> u32 {
        *self.path.last().unwrap()
    }

    /// Successor of `j` on this flow's path, if `j` is not the last hop.
    pub fn succ(&self, j: u32) -> Option<u32> {
        let pos = self.path.iter().position(|&s| s == j)?;
        self.path.get(pos + 1).copied()
    }
}

/// A set of flows jointly shaped at their shared first server (used for
/// per-flow source shaping and for split-network re-entry groups).
#[derive(Clone, Debug, PartialEq)]
pub struct EntryGroup {
    pub server: u32,
    pub shaper: TokenBucket,
    /// Flow indices, all starting at `server`.
    pub members: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Tandem,
    Tree,
    FeedForward,
    Cyclic,
}

#[derive(Clone, Debug)]
pub struct Classification {
    pub kind: Kind,
    /// All per-server utilizations ≤ 1 (strict inequality is required for
    /// finite bounds and is reported per server in `tight_servers`).
    pub locally_stable: bool,
    /// Servers with utilization exactly 1 (not provably stable).
    pub tight_servers: Vec<u32>,
    pub utilization: BTreeMap<u32, f64>,
}

/// Validated immutable network with derived adjacency structures.
#[derive(Clone, Debug)]
pub struct Network {
    servers: Vec<Server>,
    flows: Vec<Flow>,
    foi: Option<String>,
    entry_groups: Vec<EntryGroup>,
    // Derived.
    index: BTreeMap<u32, usize>,
    arcs: BTreeSet<(u32, u32)>,
    fl: BTreeMap<u32, Vec<usize>>,
    fl_arc: BTreeMap<(u32, u32), Vec<usize>>,
    pr: BTreeMap<u32, Vec<u32>>,
    topo: Option<Vec<u32>>,
}

impl Network {
    pub fn new(servers: Vec<Server>, flows: Vec<Flow>) -> Result<Self, NetError> {
        Self::with_entry_groups(servers, flows, Vec::new())
    }

    /// Build a network with explicit shaping groups at flow entry points.
    /// Flows carrying a `source_shaper` and not already covered by a group
    /// get a singleton group.
    pub fn with_entry_groups(
        servers: Vec<Server>,
        flows: Vec<Flow>,
        mut entry_groups: Vec<EntryGroup>,
    ) -> Result<Self, NetError> {
        if servers.is_empty() {
            return Err(NetError::Empty);
        }
        let mut index = BTreeMap::new();
        for (k, s) in servers.iter().enumerate() {
            if index.insert(s.id, k).is_some() {
                return Err(NetError::DuplicateServer(s.id));
            }
        }
        let mut names = BTreeSet::new();
        let mut arcs = BTreeSet::new();
        let mut fl: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut fl_arc: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (i, f) in flows.iter().enumerate() {
            if !names.insert(f.name.clone()) {
                return Err(NetError::DuplicateFlow(f.name.clone()));
            }
            if f.path.is_empty() {
                return Err(NetError::EmptyPath { flow: f.name.clone() });
            }
            let mut seen = BTreeSet::new();
            for &j in &f.path {
                if !index.contains_key(&j) {
                    return Err(NetError::DanglingServer { flow: f.name.clone(), server: j });
                }
                if !seen.insert(j) {
                    return Err(NetError::RepeatedServer { flow: f.name.clone(), server: j });
                }
                fl.entry(j).or_default().push(i);
            }
            for w in f.path.windows(2) {
                arcs.insert((w[0], w[1]));
                fl_arc.entry((w[0], w[1])).or_default().push(i);
            }
        }
        let mut pr: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &(h, j) in &arcs {
            pr.entry(j).or_default().push(h);
        }
        let covered: BTreeSet<usize> =
            entry_groups.iter().flat_map(|g| g.members.iter().copied()).collect();
        for (i, f) in flows.iter().enumerate() {
            if let Some(s) = f.source_shaper {
                if !covered.contains(&i) {
                    entry_groups.push(EntryGroup { server: f.first(), shaper: s, members: vec![i] });
                }
            }
        }
        for g in &entry_groups {
            for &i in &g.members {
                assert_eq!(flows[i].first(), g.server, "entry group member must start at the group server");
            }
        }
        let topo = topological_order(&servers, &arcs);
        Ok(Network { servers, flows, foi: None, entry_groups, index, arcs, fl, fl_arc, pr, topo })
    }

    pub fn set_foi(&mut self, name: &str) -> Result<(), NetError> {
        if self.flow_index(name).is_none() {
            return Err(NetError::UnknownFoi(name.to_string()));
        }
        self.foi = Some(name.to_string());
        Ok(())
    }

    pub fn foi(&self) -> Option<&str> {
        self.foi.as_deref()
    }

    pub fn servers(&self) -> &[Server] {
        &self.servers
    }

    pub fn flows(&self) -> &[Flow] {
        &self.flows
    }

    pub fn entry_groups(&self) -> &[EntryGroup] {
        &self.entry_groups
    }

    pub fn server(&self, id: u32) -> &Server {
        &self.servers[self.index[&id]]
    }

    pub fn has_server(&self, id: u32) -> bool {
        self.index.contains_key(&id)
    }

    pub fn flow_index(&self, name: &str) -> Option<usize> {
        self.flows.iter().position(|f| f.name == name)
    }

    pub fn arcs(&self) -> &BTreeSet<(u32, u32)> {
        &self.arcs
    }

    /// Flows crossing server `j`, in flow order.
    pub fn fl(&self, j: u32) -> &[usize] {
        self.fl.get(&j).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Flows traversing arc `(h, j)`, in flow order.
    pub fn fl_arc(&self, h: u32, j: u32) -> &[usize] {
        self.fl_arc.get(&(h, j)).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Predecessor servers of `j` in the induced graph, ascending.
    pub fn pr(&self, j: u32) -> &[u32] {
        self.pr.get(&j).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Topological order of the induced graph, if acyclic.
    pub fn topological_order(&self) -> Option<&[u32]> {
        self.topo.as_deref()
    }

    pub fn is_acyclic(&self) -> bool {
        self.topo.is_some()
    }

    /// Successor of `j` in the induced graph when unique (tree navigation).
    pub fn out_arcs(&self, j: u32) -> impl Iterator<Item = u32> + '_ {
        self.arcs.range((j, 0)..=(j, u32::MAX)).map(|&(_, to)| to)
    }

    pub fn utilization(&self, j: u32) -> f64 {
        let r: f64 = self.fl(j).iter().map(|&i| self.flows[i].arrival.rate).sum();
        r / self.server(j).service.rate
    }

    pub fn classify(&self) -> Classification {
        let mut utilization = BTreeMap::new();
        let mut tight = Vec::new();
        let mut stable = true;
        for s in &self.servers {
            let u = self.utilization(s.id);
            if u > 1.0 {
                stable = false;
            } else if u == 1.0 {
                tight.push(s.id);
            }
            utilization.insert(s.id, u);
        }
        let kind = if !self.is_acyclic() {
            Kind::Cyclic
        } else {
            let out_deg =
                |j: u32| self.arcs.range((j, 0)..=(j, u32::MAX)).count();
            let in_deg = |j: u32| self.pr(j).len();
            let sinks: Vec<u32> =
                self.servers.iter().map(|s| s.id).filter(|&j| out_deg(j) == 0).collect();
            let is_tree = self.servers.iter().all(|s| out_deg(s.id) <= 1) && sinks.len() == 1;
            if is_tree {
                if self.servers.iter().all(|s| in_deg(s.id) <= 1) {
                    Kind::Tandem
                } else {
                    Kind::Tree
                }
            } else {
                Kind::FeedForward
            }
        };
        Classification { kind, locally_stable: stable, tight_servers: tight, utilization }
    }

    /// Unique sink of the induced graph (single server with no outgoing arc),
    /// if there is exactly one.
    pub fn unique_sink(&self) -> Option<u32> {
        let mut sinks = self
            .servers
            .iter()
            .map(|s| s.id)
            .filter(|&j| self.arcs.range((j, 0)..=(j, u32::MAX)).next().is_none());
        match (sinks.next(), sinks.next()) {
            (Some(s), None) => Some(s),
            _ => None,
        }
    }

    /// Sub-network of all predecessors of `root` (inclusive, reverse
    /// reachability over induced arcs). Flow paths are trimmed to their prefix
    /// inside the sub-network; entry groups keep their surviving members.
    pub fn predecessors_subnet(&self, root: u32) -> Network {
        let mut keep = BTreeSet::new();
        let mut queue = VecDeque::from([root]);
        keep.insert(root);
        while let Some(j) = queue.pop_front() {
            for &h in self.pr(j) {
                if keep.insert(h) {
                    queue.push_back(h);
                }
            }
        }
        let servers: Vec<Server> =
            self.servers.iter().filter(|s| keep.contains(&s.id)).cloned().collect();
        let mut flows = Vec::new();
        let mut old_to_new: BTreeMap<usize, usize> = BTreeMap::new();
        for (i, f) in self.flows.iter().enumerate() {
            if !keep.contains(&f.first()) {
                continue;
            }
            let trimmed: Vec<u32> =
                f.path.iter().take_while(|j| keep.contains(j)).copied().collect();
            debug_assert!(!trimmed.is_empty());
            old_to_new.insert(i, flows.len());
            let mut nf = f.clone();
            nf.path = trimmed;
            flows.push(nf);
        }
        let entry_groups = self
            .entry_groups
            .iter()
            .filter(|g| keep.contains(&g.server))
            .map(|g| EntryGroup {
                server: g.server,
                shaper: g.shaper,
                members: g.members.iter().filter_map(|i| old_to_new.get(i).copied()).collect(),
            })
            .filter(|g| !g.members.is_empty())
            .collect();
        let mut net = Network::with_entry_groups(servers, flows, entry_groups)
            .expect("trimmed sub-network must validate");
        if let Some(foi) = &self.foi {
            let _ = net.set_foi(foi);
        }
        net
    }
}

fn topological_order(servers: &[Server], arcs: &BTreeSet<(u32, u32)>) -> Option<Vec<u32>> {
    let mut in_deg: BTreeMap<u32, usize> = servers.iter().map(|s| (s.id, 0)).collect();
    for &(_, j) in arcs {
        *in_deg.get_mut(&j).unwrap() += 1;
    }
    let mut ready: VecDeque<u32> =
        in_deg.iter().filter(|(_, &d)| d == 0).map(|(&j, _)| j).collect();
    let mut order = Vec::with_capacity(servers.len());
    while let Some(j) = ready.pop_front() {
        order.push(j);
        for to in arcs.range((j, 0)..=(j, u32::MAX)).map(|&(_, t)| t) {
            let d = in_deg.get_mut(&to).unwrap();
            *d -= 1;
            if *d == 0 {
                ready.push_back(to);
            }
        }
    }
    if order.len() == servers.len() {
        Some(order)
    } else {
        None
    }
}

/// Deficit-round-robin residual service for one of four classes with quantum
/// `q` bits on a link of rate `r`: β_{R/4, 3Q/R}.
pub fn drr_service_transform(r: f64, q: f64) -> RateLatency {
    assert!(r > 0.0 && q >= 0.0);
    RateLatency { rate: r / 4.0, latency: 3.0 * q / r }
}

/// Shared parameters of the generated topologies.
#[derive(Clone, Copy, Debug)]
pub struct GenParams {
    /// Service rate R in bits/s.
    pub rate: f64,
    /// Service latency T in seconds.
    pub latency: f64,
    /// Per-flow burst b in bits.
    pub burst: f64,
    /// Network load U in (0, 1].
    pub load: f64,
    /// Shaping factor η ≥ 1; every server gets shaper γ_{0, η·R}.
    pub eta: f64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams { rate: 1e7, latency: 0.001, burst: 1000.0, load: 0.5, eta: 1.0 }
    }
}

impl GenParams {
    fn server(&self, id: u32) -> Server {
        self.server_scaled(id, 1.0)
    }

    fn server_scaled(&self, id: u32, rate_factor: f64) -> Server {
        Server::new(
            id,
            RateLatency::new(self.rate * rate_factor, self.latency),
            Some(TokenBucket::new(0.0, self.eta * self.rate * rate_factor)),
        )
    }

    fn check(&self, n: u32) {
        assert!(n >= 1, "need at least one server");
        assert!(self.load > 0.0 && self.load <= 1.0, "load must be in (0, 1]");
        assert!(self.eta >= 1.0, "eta must be >= 1");
    }
}

/// Two-hop interference tandem: flow of interest over ⟨1..n⟩ and one
/// interferer per arc ⟨i, i+1⟩; per-flow rate U·R/3.
pub fn gen_two_hop(n: u32, p: GenParams) -> Network {
    p.check(n);
    let r = p.load * p.rate / 3.0;
    let servers = (1..=n).map(|j| p.server(j)).collect();
    let mut flows =
        vec![Flow::new("foi", TokenBucket::new(p.burst, r), (1..=n).collect::<Vec<_>>())];
    for i in 1..n {
        flows.push(Flow::new(format!("x{i}"), TokenBucket::new(p.burst, r), vec![i, i + 1]));
    }
    let mut net = Network::new(servers, flows).unwrap();
    net.set_foi("foi").unwrap();
    net
}

/// Source-sink tandem: one flow per path starting at server 1 or ending at
/// server n (2n−1 flows); per-flow rate U·R/n; every server crossed by n flows.
pub fn gen_source_sink(n: u32, p: GenParams) -> Network {
    p.check(n);
    let r = p.load * p.rate / n as f64;
    let servers = (1..=n).map(|j| p.server(j)).collect();
    let mut flows =
        vec![Flow::new("foi", TokenBucket::new(p.burst, r), (1..=n).collect::<Vec<_>>())];
    for k in 1..n {
        flows.push(Flow::new(format!("s{k}"), TokenBucket::new(p.burst, r), (1..=k).collect()));
        flows.push(Flow::new(format!("e{k}"), TokenBucket::new(p.burst, r), (k + 1..=n).collect()));
    }
    let mut net = Network::new(servers, flows).unwrap();
    net.set_foi("foi").unwrap();
    net
}

/// Ring of n servers with n flows of length n; flow k starts at server k;
/// per-flow rate U·R/n.
pub fn gen_ring(n: u32, p: GenParams) -> Network {
    p.check(n);
    let r = p.load * p.rate / n as f64;
    let servers = (1..=n).map(|j| p.server(j)).collect();
    let flows = (1..=n)
        .map(|k| {
            let path: Vec<u32> = (0..n).map(|s| (k - 1 + s) % n + 1).collect();
            let name = if k == 1 { "foi".to_string() } else { format!("f{k}") };
            Flow::new(name, TokenBucket::new(p.burst, r), path)
        })
        .collect();
    let mut net = Network::new(servers, flows).unwrap();
    net.set_foi("foi").unwrap();
    net
}

const MESH_ARCS: [(u32, u32); 14] = [
    (0, 2),
    (0, 3),
    (1, 2),
    (1, 3),
    (2, 4),
    (2, 5),
    (3, 4),
    (3, 5),
    (4, 6),
    (4, 7),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 8),
];

/// 9-server mesh (servers 0..8, server 8 at rate 2R) with one flow per path
/// from server 0 or 1 to server 8 (16 flows); per-flow rate U·R/8 so every
/// server is loaded at U. The flow of interest is the path ⟨0,2,4,6,8⟩.
pub fn gen_mesh(p: GenParams) -> Network {
    p.check(9);
    let r = p.load * p.rate / 8.0;
    let servers: Vec<Server> =
        (0..=8).map(|j| if j == 8 { p.server_scaled(8, 2.0) } else { p.server(j) }).collect();
    let mut paths = Vec::new();
    for start in [0u32, 1] {
        let mut stack = vec![vec![start]];
        while let Some(path) = stack.pop() {
            let last = *path.last().unwrap();
            if last == 8 {
                paths.push(path);
                continue;
            }
            // Push in reverse so smaller successors are explored first.
            for &(a, b) in MESH_ARCS.iter().rev() {
                if a == last {
                    let mut next = path.clone();
                    next.push(b);
                    stack.push(next);
                }
            }
        }
    }
    paths.sort();
    let flows = paths
        .into_iter()
        .enumerate()
        .map(|(k, path)| {
            let name = if path == [0, 2, 4, 6, 8] { "foi".to_string() } else { format!("p{k}") };
            Flow::new(name, TokenBucket::new(p.burst, r), path)
        })
        .collect();
    let mut net = Network::new(servers, flows).unwrap();
    net.set_foi("foi").unwrap();
    net
}
