//! Polynomial-size linear program for FIFO tree networks over dated
//! cumulative-process samples: delay and backlog objectives, optional
//! output/entry shaping constraints, and TFA++/SFA date-difference cuts.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::analyzers;
use crate::lp::{LinearProgram, Rel, Sense, SolverChoice, Status, VarId};
use crate::network::{NetError, Network};

#[derive(Debug, Error)]
pub enum PlpError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("PLP infeasible: {0} (construction bug)")]
    Infeasible(String),
    #[error("LP solver failed: {0}")]
    SolverFailed(String),
    #[error("unfolding exceeds {limit} nodes ({found} paths); use the split mode")]
    UnfoldTooLarge { limit: usize, found: usize },
}

/// PLP construction and solving options.
#[derive(Clone, Debug)]
pub struct PlpOptions {
    /// Emit aggregate output-shaping (and entry-group) constraints.
    pub shaping: bool,
    /// Emit per-server TFA++ date-difference cuts.
    pub cut_tfa: bool,
    /// Emit per-flow SFA date-difference cuts.
    pub cut_sfa: bool,
    pub solver: SolverChoice,
}

impl Default for PlpOptions {
    fn default() -> Self {
        PlpOptions { shaping: true, cut_tfa: true, cut_sfa: true, solver: SolverChoice::Internal }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlpObjective {
    Delay,
    Backlog,
}

/// Numeric cut values fed into the LP; entries with infinite value are
/// skipped when emitting cut rows.
#[derive(Clone, Debug, Default)]
pub struct CutValues {
    /// Per-server TFA++ delay bounds d_j.
    pub tfa: Option<BTreeMap<u32, f64>>,
    /// Per-flow SFA end-to-end bounds.
    pub sfa: Option<BTreeMap<usize, f64>>,
}

/// Where a flow's burst parameter comes from: a constant, or a shared LP
/// variable (fixed-point formulations over split-flow bursts).
#[derive(Clone, Copy, Debug)]
pub enum BurstSpec {
    Const(f64),
    Var(VarId),
}

/// Allocation of time-variable indices: index 0 is the exit time t_0; each
/// server gets d(j)+1 consecutive indices, assigned depth-first from the sink
/// with children in ascending server-id order.
#[derive(Clone, Debug)]
pub struct TimeIndexPlan {
    /// Inclusive index range [u_min, u_max] per server.
    pub ranges: BTreeMap<u32, (usize, usize)>,
    /// d(sink) = 1, d(j) = d(succ(j)) + 1.
    pub depth: BTreeMap<u32, usize>,
    /// Successor in the tree; `None` for the sink.
    pub tree_succ: BTreeMap<u32, Option<u32>>,
    /// Total number of time indices including t_0.
    pub total_indices: usize,
    pub sink: u32,
}

impl TimeIndexPlan {
    pub fn u_min(&self, j: u32) -> usize {
        self.ranges[&j].0
    }

    pub fn u_max(&self, j: u32) -> usize {
        self.ranges[&j].1
    }
}

/// Station at which a cumulative process is sampled: a server, or the virtual
/// exit after the sink (time index 0 only).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Loc {
    Server(u32),
    Exit,
}

pub fn plan_time_indices(net: &Network) -> Result<TimeIndexPlan, NetError> {
    if !net.is_acyclic() {
        return Err(NetError::Cyclic);
    }
    let mut tree_succ = BTreeMap::new();
    let mut sink = None;
    for s in net.servers() {
        let mut out = net.out_arcs(s.id);
        match (out.next(), out.next()) {
            (None, _) => {
                if sink.replace(s.id).is_some() {
                    return Err(NetError::NotTree);
                }
                tree_succ.insert(s.id, None);
            }
            (Some(h), None) => {
                tree_succ.insert(s.id, Some(h));
            }
            (Some(_), Some(_)) => return Err(NetError::NotTree),
        }
    }
    let sink = sink.ok_or(NetError::NotTree)?;

    let mut depth = BTreeMap::new();
    let mut ranges = BTreeMap::new();
    let mut next = 1usize;
    // Depth-first from the sink; children pushed in descending id so the
    // smallest id is allocated first.
    let mut stack = vec![(sink, 1usize)];
    while let Some((j, d)) = stack.pop() {
        depth.insert(j, d);
        ranges.insert(j, (next, next + d));
        next += d + 1;
        for &h in net.pr(j).iter().rev() {
            stack.push((h, d + 1));
        }
    }
    if ranges.len() != net.servers().len() {
        // Some server has no directed path to the sink.
        return Err(NetError::NotTree);
    }
    Ok(TimeIndexPlan { ranges, depth, tree_succ, total_indices: next, sink })
}

/// Handles into a PLP emitted into a shared [`LinearProgram`].
pub struct PlpHandles {
    pub plan: TimeIndexPlan,
    /// Maximize these terms to obtain the bound (delay in seconds or backlog
    /// in bits).
    pub objective_terms: Vec<(VarId, f64)>,
}

/// Emit the PLP for `net` (a tree whose sink ends the foi's path) into `lp`,
/// prefixing all variable names with `prefix`. Burst parameters come from
/// `bursts` (one per flow). The objective is returned, not set.
pub fn build_plp_into(
    lp: &mut LinearProgram,
    prefix: &str,
    net: &Network,
    foi: usize,
    objective: PlpObjective,
    shaping: bool,
    cuts: &CutValues,
    bursts: &[BurstSpec],
) -> Result<PlpHandles, NetError> {
    let plan = plan_time_indices(net)?;
    let flows = net.flows();
    assert_eq!(bursts.len(), flows.len());
    assert_eq!(
        flows[foi].last(),
        plan.sink,
        "foi must end at the tree sink (trim with predecessors_subnet first)"
    );
    let server_ids: Vec<u32> = net.servers().iter().map(|s| s.id).collect();

    let t: Vec<VarId> =
        (0..plan.total_indices).map(|k| lp.add_var(format!("{prefix}t{k}"), false)).collect();

    // Station of a flow's departure process: the tree successor of its last
    // server (the virtual exit when it ends at the sink).
    let dep_loc = |i: usize| -> Loc {
        let last = flows[i].last();
        match plan.tree_succ[&last] {
            None => Loc::Exit,
            Some(h) => Loc::Server(h),
        }
    };
    // Time indices sampled at a station.
    let loc_indices = |loc: Loc| -> Vec<usize> {
        match loc {
            Loc::Exit => vec![0],
            Loc::Server(j) => (plan.u_min(j)..=plan.u_max(j)).collect(),
        }
    };

    let mut fvar: BTreeMap<(usize, Loc, usize), VarId> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        let mut stations: Vec<Loc> = f.path.iter().map(|&j| Loc::Server(j)).collect();
        stations.push(dep_loc(i));
        for loc in stations {
            let tag = match loc {
                Loc::Server(j) => format!("s{j}"),
                Loc::Exit => "x".to_string(),
            };
            for k in loc_indices(loc) {
                let v = lp.add_var(format!("{prefix}F{i}_{tag}_u{k}"), false);
                fvar.insert((i, loc, k), v);
            }
        }
    }

    // (a) Intra-server time ordering: t_k >= t_{k+1}.
    for &j in &server_ids {
        for k in plan.u_min(j)..plan.u_max(j) {
            lp.add_constraint("time-intra", vec![(t[k], 1.0), (t[k + 1], -1.0)], Rel::Ge, 0.0);
        }
    }
    // (b) Inter-server time ordering: t_{u_min(j)+k} <= t_{u_min(h)+k}.
    for &j in &server_ids {
        let h = match plan.tree_succ[&j] {
            None => Loc::Exit,
            Some(h) => Loc::Server(h),
        };
        let hidx = loc_indices(h);
        for (k, &hi) in hidx.iter().enumerate() {
            lp.add_constraint(
                "time-inter",
                vec![(t[plan.u_min(j) + k], 1.0), (t[hi], -1.0)],
                Rel::Le,
                0.0,
            );
        }
    }
    // (c) FIFO equalities along each arc (j, succ(j)) for every flow at j.
    for &j in &server_ids {
        let h = match plan.tree_succ[&j] {
            None => Loc::Exit,
            Some(h) => Loc::Server(h),
        };
        let hidx = loc_indices(h);
        for &i in net.fl(j) {
            for (k, &hi) in hidx.iter().enumerate() {
                lp.add_constraint(
                    "fifo",
                    vec![
                        (fvar[&(i, Loc::Server(j), plan.u_min(j) + k)], 1.0),
                        (fvar[&(i, h, hi)], -1.0),
                    ],
                    Rel::Eq,
                    0.0,
                );
            }
        }
    }
    // (d) Service: two inequalities per server at the last indices.
    for &j in &server_ids {
        if net.fl(j).is_empty() {
            continue;
        }
        let h = match plan.tree_succ[&j] {
            None => Loc::Exit,
            Some(h) => Loc::Server(h),
        };
        let uh = *loc_indices(h).last().unwrap();
        let uj = plan.u_max(j);
        let service = net.server(j).service;
        let mut base: Vec<(VarId, f64)> = Vec::new();
        for &i in net.fl(j) {
            base.push((fvar[&(i, h, uh)], 1.0));
            base.push((fvar[&(i, Loc::Server(j), uj)], -1.0));
        }
        lp.add_constraint("service", base.clone(), Rel::Ge, 0.0);
        base.push((t[uh], -service.rate));
        base.push((t[uj], service.rate));
        lp.add_constraint("service", base, Rel::Ge, -service.rate * service.latency);
    }
    // (e) Arrival constraints at each flow's first server, all index pairs.
    for (i, f) in flows.iter().enumerate() {
        let j = f.first();
        let r = f.arrival.rate;
        for u in plan.u_min(j)..=plan.u_max(j) {
            for v in u + 1..=plan.u_max(j) {
                let mut terms = vec![
                    (fvar[&(i, Loc::Server(j), u)], 1.0),
                    (fvar[&(i, Loc::Server(j), v)], -1.0),
                    (t[u], -r),
                    (t[v], r),
                ];
                let rhs = match bursts[i] {
                    BurstSpec::Const(b) => b,
                    BurstSpec::Var(x) => {
                        terms.push((x, -1.0));
                        0.0
                    }
                };
                lp.add_constraint("arrival", terms, Rel::Le, rhs);
            }
        }
    }
    // (f) Monotony of arrival processes at first servers.
    for (i, f) in flows.iter().enumerate() {
        let j = f.first();
        for u in plan.u_min(j)..plan.u_max(j) {
            lp.add_constraint(
                "monotony",
                vec![(fvar[&(i, Loc::Server(j), u)], 1.0), (fvar[&(i, Loc::Server(j), u + 1)], -1.0)],
                Rel::Ge,
                0.0,
            );
        }
    }
    // (g) Aggregate output shaping per server, sampled at the successor.
    if shaping {
        for &j in &server_ids {
            let Some(shaper) = net.server(j).shaper else { continue };
            let h = match plan.tree_succ[&j] {
                None => Loc::Exit,
                Some(h) => Loc::Server(h),
            };
            let hidx = loc_indices(h);
            for (a, &u) in hidx.iter().enumerate() {
                for &v in &hidx[a + 1..] {
                    let mut terms = vec![(t[u], -shaper.rate), (t[v], shaper.rate)];
                    for &i in net.fl(j) {
                        terms.push((fvar[&(i, h, u)], 1.0));
                        terms.push((fvar[&(i, h, v)], -1.0));
                    }
                    lp.add_constraint("shaping", terms, Rel::Le, shaper.burst);
                }
            }
        }
        // Entry-group shaping at shared entry points; the foi is exempt from
        // its own entry shaping.
        for g in net.entry_groups() {
            let members: Vec<usize> = g.members.iter().copied().filter(|&i| i != foi).collect();
            if members.is_empty() {
                continue;
            }
            let j = g.server;
            for u in plan.u_min(j)..=plan.u_max(j) {
                for v in u + 1..=plan.u_max(j) {
                    let mut terms = vec![(t[u], -g.shaper.rate), (t[v], g.shaper.rate)];
                    for &i in &members {
                        terms.push((fvar[&(i, Loc::Server(j), u)], 1.0));
                        terms.push((fvar[&(i, Loc::Server(j), v)], -1.0));
                    }
                    lp.add_constraint("entry-shaping", terms, Rel::Le, g.shaper.burst);
                }
            }
        }
    }
    // (h) TFA++ cuts: successor dates lag by at most the server delay bound.
    if let Some(tfa) = &cuts.tfa {
        for &j in &server_ids {
            let Some(&d) = tfa.get(&j) else { continue };
            if !d.is_finite() {
                continue;
            }
            let h = match plan.tree_succ[&j] {
                None => Loc::Exit,
                Some(h) => Loc::Server(h),
            };
            for (k, &hi) in loc_indices(h).iter().enumerate() {
                lp.add_constraint(
                    "cut-tfa",
                    vec![(t[hi], 1.0), (t[plan.u_min(j) + k], -1.0)],
                    Rel::Le,
                    d,
                );
            }
        }
    }
    // SFA cuts: end-to-end date differences per flow.
    if let Some(sfa) = &cuts.sfa {
        for (i, f) in flows.iter().enumerate() {
            let Some(&d) = sfa.get(&i) else { continue };
            if !d.is_finite() {
                continue;
            }
            let j = f.first();
            let h = dep_loc(i);
            for (k, &hi) in loc_indices(h).iter().enumerate() {
                lp.add_constraint(
                    "cut-sfa",
                    vec![(t[hi], 1.0), (t[plan.u_min(j) + k], -1.0)],
                    Rel::Le,
                    d,
                );
            }
        }
    }

    // (i) Objective.
    let objective_terms = match objective {
        PlpObjective::Delay => {
            vec![(t[0], 1.0), (t[plan.u_min(flows[foi].first())], -1.0)]
        }
        PlpObjective::Backlog => {
            assert_eq!(dep_loc(foi), Loc::Exit, "backlog foi must end at the sink");
            let j = flows[foi].first();
            let r = flows[foi].arrival.rate;
            let a = lp.add_var(format!("{prefix}A{foi}"), false);
            for u in plan.u_min(j)..=plan.u_max(j) {
                let mut terms = vec![
                    (a, 1.0),
                    (fvar[&(foi, Loc::Server(j), u)], -1.0),
                    (t[0], -r),
                    (t[u], r),
                ];
                let rhs = match bursts[foi] {
                    BurstSpec::Const(b) => b,
                    BurstSpec::Var(x) => {
                        terms.push((x, -1.0));
                        0.0
                    }
                };
                lp.add_constraint("backlog-arrival", terms, Rel::Le, rhs);
            }
            vec![(a, 1.0), (fvar[&(foi, Loc::Exit, 0)], -1.0)]
        }
    };
    Ok(PlpHandles { plan, objective_terms })
}

/// Cut values for a tree network: TFA++ per-server delays and SFA per-flow
/// delays, as enabled in `opts`.
pub fn compute_cuts(net: &Network, opts: &PlpOptions) -> Result<CutValues, NetError> {
    let tfa = if opts.cut_tfa {
        Some(analyzers::tfa_pp_servers(net)?.delays)
    } else {
        None
    };
    let sfa = if opts.cut_sfa { Some(analyzers::sfa_all(net)?) } else { None };
    Ok(CutValues { tfa, sfa })
}

/// Build the standalone PLP for a tree network (already trimmed so the foi
/// ends at the sink). Cuts are computed on the same network.
pub fn build_plp(
    net: &Network,
    foi: &str,
    objective: PlpObjective,
    opts: &PlpOptions,
) -> Result<LinearProgram, PlpError> {
    let foi = net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    let cuts = compute_cuts(net, opts)?;
    let bursts: Vec<BurstSpec> =
        net.flows().iter().map(|f| BurstSpec::Const(f.arrival.burst)).collect();
    let mut lp = LinearProgram::new();
    let handles =
        build_plp_into(&mut lp, "", net, foi, objective, opts.shaping, &cuts, &bursts)?;
    lp.set_objective(Sense::Max, handles.objective_terms);
    Ok(lp)
}

fn solve_objective(lp: &LinearProgram, solver: &SolverChoice) -> Result<f64, PlpError> {
    let outcome = lp.solve_with(solver);
    match outcome.status {
        Status::Optimal => Ok(outcome.objective),
        Status::Unbounded => Ok(f64::INFINITY),
        Status::Infeasible => Err(PlpError::Infeasible("PLP".into())),
        Status::Failed(msg) => Err(PlpError::SolverFailed(msg)),
    }
}

fn trim_for(net: &Network, foi: &str) -> Result<(Network, String), PlpError> {
    let idx = net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    let last = net.flows()[idx].last();
    let mut sub = net.predecessors_subnet(last);
    sub.set_foi(foi)?;
    Ok((sub, foi.to_string()))
}

/// Worst-case delay of `foi` by the tree PLP. The network is trimmed to the
/// predecessors of the foi's last server; it must be a tree after trimming.
/// Unbounded LP means the network is not provably stable: +∞.
pub fn plp_delay(net: &Network, foi: &str, opts: &PlpOptions) -> Result<f64, PlpError> {
    let (sub, foi) = trim_for(net, foi)?;
    let lp = build_plp(&sub, &foi, PlpObjective::Delay, opts)?;
    solve_objective(&lp, &opts.solver)
}

/// Worst-case backlog of `foi` in bits; same trimming rules as [`plp_delay`].
pub fn plp_backlog(net: &Network, foi: &str, opts: &PlpOptions) -> Result<f64, PlpError> {
    let (sub, foi) = trim_for(net, foi)?;
    let lp = build_plp(&sub, &foi, PlpObjective::Backlog, opts)?;
    solve_objective(&lp, &opts.solver)
}
