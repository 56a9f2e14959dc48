//! Feed-forward analysis beyond trees: unfold a feed-forward network into an
//! equivalent tree (path duplication), or split it into a spanning in-tree by
//! removing cross arcs and re-injecting the cut flows with computed bursts.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::curves::TokenBucket;
use crate::network::{EntryGroup, Flow, NetError, Network, Server};
use crate::plp::{plp_backlog, plp_delay, PlpError, PlpOptions};

/// Maximum number of path-nodes an unfolded network may have.
pub const UNFOLD_NODE_LIMIT: usize = 10_000;

/// Unfold a feed-forward network with unique sink into a tree: one node per
/// directed path ending at the sink, offering the service and shaper of the
/// path's first server; each flow is copied once per node sharing a prefix
/// with it. Returns the tree and the name of the foi's copy (the one entering
/// at the foi's full path).
pub fn unfold(net: &Network, foi: &str) -> Result<(Network, String), PlpError> {
    let foi_idx =
        net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    if !net.is_acyclic() {
        return Err(NetError::Cyclic.into());
    }
    let sink = net.unique_sink().ok_or(NetError::NotTree)?;

    // Enumerate all directed paths ending at the sink.
    let mut paths: Vec<Vec<u32>> = Vec::new();
    for s in net.servers() {
        let mut stack = vec![vec![s.id]];
        while let Some(path) = stack.pop() {
            let last = *path.last().unwrap();
            if last == sink {
                paths.push(path);
                continue;
            }
            for to in net.out_arcs(last) {
                let mut next = path.clone();
                next.push(to);
                stack.push(next);
            }
            if paths.len() + stack.len() > UNFOLD_NODE_LIMIT {
                return Err(PlpError::UnfoldTooLarge {
                    limit: UNFOLD_NODE_LIMIT,
                    found: paths.len() + stack.len(),
                });
            }
        }
    }
    paths.sort();
    let id_of: BTreeMap<&[u32], u32> =
        paths.iter().enumerate().map(|(k, p)| (p.as_slice(), k as u32)).collect();

    let servers: Vec<Server> = paths
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let head = net.server(p[0]);
            Server::new(k as u32, head.service, head.shaper)
        })
        .collect();

    // One copy of flow i per node sharing a nonempty prefix with its path;
    // the copy follows the suffix chain of that node.
    let mut flows = Vec::new();
    let mut copy_index: BTreeMap<(usize, u32), usize> = BTreeMap::new();
    let mut foi_copy = None;
    for (i, f) in net.flows().iter().enumerate() {
        for p in &paths {
            let k = f.path.iter().zip(p.iter()).take_while(|(a, b)| a == b).count();
            if k == 0 {
                continue;
            }
            let node = id_of[p.as_slice()];
            let copy_path: Vec<u32> = (0..k).map(|d| id_of[&p[d..]]).collect();
            let name = format!("{}@{}", f.name, node);
            if i == foi_idx && p.as_slice() == f.path.as_slice() {
                foi_copy = Some(name.clone());
            }
            let mut copy = Flow::new(name, f.arrival, copy_path);
            copy.source_shaper = f.source_shaper;
            copy_index.insert((i, node), flows.len());
            flows.push(copy);
        }
    }
    let foi_copy = foi_copy.expect("foi path ends at the sink, so it is a node");

    // Entry groups apply per node at which the member copies enter together.
    let mut entry_groups = Vec::new();
    for g in net.entry_groups() {
        for p in &paths {
            if p[0] != g.server {
                continue;
            }
            let node = id_of[p.as_slice()];
            let members: Vec<usize> =
                g.members.iter().filter_map(|&i| copy_index.get(&(i, node)).copied()).collect();
            if !members.is_empty() {
                entry_groups.push(EntryGroup { server: node, shaper: g.shaper, members });
            }
        }
    }

    let mut tree = Network::with_entry_groups(servers, flows, entry_groups)
        .expect("unfolded tree must validate");
    tree.set_foi(&foi_copy)?;
    Ok((tree, foi_copy))
}

/// Worst-case delay via unfolding: trim to the foi's predecessors, unfold
/// (identity on trees), then solve the tree PLP.
pub fn unfold_analyze(net: &Network, foi: &str, opts: &PlpOptions) -> Result<f64, PlpError> {
    let idx = net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    let sub = net.predecessors_subnet(net.flows()[idx].last());
    let (tree, copy) = unfold(&sub, foi)?;
    plp_delay(&tree, &copy, opts)
}

/// Arcs of a breadth-first spanning in-tree toward `root` (search over
/// reversed arcs, neighbors in ascending id order), plus all remaining arcs.
pub fn select_feedback_arcs(
    net: &Network,
    root: u32,
) -> (BTreeSet<(u32, u32)>, Vec<(u32, u32)>) {
    let mut kept = BTreeSet::new();
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(j) = queue.pop_front() {
        for &h in net.pr(j) {
            if seen.insert(h) {
                kept.insert((h, j));
                queue.push_back(h);
            }
        }
    }
    let mut removed: Vec<(u32, u32)> =
        net.arcs().iter().filter(|a| !kept.contains(a)).copied().collect();
    // Process order for burst computation: topological order of the arc tail
    // (guarantees each needed upstream burst is computed first).
    if let Some(topo) = net.topological_order() {
        let pos: BTreeMap<u32, usize> = topo.iter().enumerate().map(|(k, &j)| (j, k)).collect();
        removed.sort_by_key(|&(h, j)| (pos[&h], h, j));
    }
    (kept, removed)
}

/// One piece of an original flow between removed arcs.
#[derive(Clone, Debug)]
pub struct Segment {
    /// Original flow index.
    pub flow: usize,
    /// Piece number along the original path, starting at 0.
    pub part: usize,
    pub name: String,
    /// Removed arc through which this piece enters, `None` for piece 0.
    pub entry_arc: Option<(u32, u32)>,
}

/// Network split along a spanning in-tree: every flow is cut at each removed
/// arc on its path into segments named `{flow}.{k}`. Segments entering
/// through the same removed arc `(j, j')` share an entry group shaped by
/// server `j`'s shaper. Bursts of segments with `part > 0` are placeholders
/// until computed.
#[derive(Clone, Debug)]
pub struct SplitNetwork {
    pub servers: Vec<Server>,
    pub flows: Vec<Flow>,
    pub entry_groups: Vec<EntryGroup>,
    /// Parallel to `flows`.
    pub segments: Vec<Segment>,
    /// Removed arcs, in tail-topological order when the network is acyclic.
    pub removed: Vec<(u32, u32)>,
    pub kept: BTreeSet<(u32, u32)>,
}

impl SplitNetwork {
    /// Build the (acyclic) network over the current segment bursts.
    pub fn network(&self) -> Network {
        Network::with_entry_groups(
            self.servers.clone(),
            self.flows.clone(),
            self.entry_groups.clone(),
        )
        .expect("split network must validate")
    }

    pub fn segment_index(&self, flow: usize, part: usize) -> Option<usize> {
        self.segments.iter().position(|z| z.flow == flow && z.part == part)
    }
}

/// Split `net` along the spanning in-tree toward `root`.
pub fn split(net: &Network, root: u32) -> SplitNetwork {
    let (kept, removed) = select_feedback_arcs(net, root);
    let mut flows = Vec::new();
    let mut segments = Vec::new();
    let mut first_piece: BTreeMap<usize, usize> = BTreeMap::new();
    let mut by_arc: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
    for (i, f) in net.flows().iter().enumerate() {
        let mut pieces: Vec<Vec<u32>> = vec![vec![f.path[0]]];
        let mut entries: Vec<Option<(u32, u32)>> = vec![None];
        for w in f.path.windows(2) {
            if kept.contains(&(w[0], w[1])) {
                pieces.last_mut().unwrap().push(w[1]);
            } else {
                pieces.push(vec![w[1]]);
                entries.push(Some((w[0], w[1])));
            }
        }
        for (k, (path, entry_arc)) in pieces.into_iter().zip(entries).enumerate() {
            let name = format!("{}.{k}", f.name);
            let idx = flows.len();
            if k == 0 {
                first_piece.insert(i, idx);
            }
            if let Some(arc) = entry_arc {
                by_arc.entry(arc).or_default().push(idx);
            }
            let mut flow = Flow::new(&name, TokenBucket::new(f.arrival.burst, f.arrival.rate), path);
            if k == 0 {
                flow.source_shaper = f.source_shaper;
            }
            flows.push(flow);
            segments.push(Segment { flow: i, part: k, name, entry_arc });
        }
    }
    let mut entry_groups: Vec<EntryGroup> = net
        .entry_groups()
        .iter()
        .map(|g| EntryGroup {
            server: g.server,
            shaper: g.shaper,
            members: g.members.iter().map(|i| first_piece[i]).collect(),
        })
        .collect();
    for (&(j, j2), members) in &by_arc {
        if let Some(shaper) = net.server(j).shaper {
            entry_groups.push(EntryGroup { server: j2, shaper, members: members.clone() });
        }
    }
    SplitNetwork {
        servers: net.servers().to_vec(),
        flows,
        entry_groups,
        segments,
        removed,
        kept,
    }
}

/// Worst-case delay of `foi` in an acyclic network via splitting: compute the
/// burst of each re-injected segment as the backlog bound of its predecessor
/// piece (removed arcs in tail-topological order), then sum the delay bounds
/// of the foi's pieces.
pub fn split_analyze(net: &Network, foi: &str, opts: &PlpOptions) -> Result<f64, PlpError> {
    let foi_idx =
        net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    if !net.is_acyclic() {
        return Err(NetError::Cyclic.into());
    }
    let root = net.unique_sink().unwrap_or_else(|| net.flows()[foi_idx].last());
    let mut sn = split(net, root);
    for arc in sn.removed.clone() {
        let entrants: Vec<usize> = sn
            .segments
            .iter()
            .enumerate()
            .filter(|(_, z)| z.entry_arc == Some(arc))
            .map(|(k, _)| k)
            .collect();
        if entrants.is_empty() {
            continue;
        }
        let network = sn.network();
        for z in entrants {
            let prev = sn
                .segment_index(sn.segments[z].flow, sn.segments[z].part - 1)
                .expect("piece k > 0 has a predecessor piece");
            let b = plp_backlog(&network, &sn.segments[prev].name.clone(), opts)?;
            if !b.is_finite() {
                return Ok(f64::INFINITY);
            }
            sn.flows[z].arrival.burst = b;
        }
    }
    let network = sn.network();
    let mut total = 0.0;
    for z in &sn.segments {
        if z.flow == foi_idx {
            total += plp_delay(&network, &z.name, opts)?;
        }
    }
    Ok(total)
}
