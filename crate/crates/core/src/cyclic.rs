//! Analysis of networks with cyclic dependencies: a one-shot LP encoding of
//! the shaped per-server delay fixpoint, and a combined fixed-point LP over
//! split-flow bursts solved jointly with the tree programs of each segment.

use std::collections::BTreeMap;

use crate::feedforward::{split, SplitNetwork};
use crate::lp::{LinearProgram, Rel, Sense, SolverChoice, Status, VarId};
use crate::network::{NetError, Network};
use crate::plp::{
    build_plp_into, BurstSpec, CutValues, PlpError, PlpObjective, PlpOptions,
};

/// Result of the per-server delay fixpoint LP.
#[derive(Clone, Debug)]
pub struct TfaFixpoint {
    pub stable: bool,
    /// Per-server delay bounds; empty when unstable.
    pub delays: BTreeMap<u32, f64>,
}

/// Shaped per-server delay fixpoint as a single LP. Per server: a backlogged
/// period `[0, s_j]` start, a departure date `t_j`, and `d_j = t_j - s_j`;
/// per (flow, server): arrivals within the period bounded by the propagated
/// burst plus the rate, capped per predecessor arc and entry group by the
/// corresponding shaper; FIFO departures meeting the service guarantee.
/// Bursts propagate along paths by `x + r d_j`. Maximizing all `d_j` jointly
/// yields the least fixpoint (the system is monotone); an unbounded LP means
/// the fixpoint diverges (no stability guarantee).
pub fn lp_tfa_fixpoint(net: &Network, solver: &SolverChoice) -> Result<TfaFixpoint, PlpError> {
    let flows = net.flows();
    let mut lp = LinearProgram::new();
    let mut s_var = BTreeMap::new();
    let mut t_var = BTreeMap::new();
    let mut d_var = BTreeMap::new();
    for srv in net.servers() {
        let j = srv.id;
        s_var.insert(j, lp.add_var(format!("s{j}"), false));
        t_var.insert(j, lp.add_var(format!("t{j}"), false));
        d_var.insert(j, lp.add_var(format!("d{j}"), false));
    }
    let mut a_var = BTreeMap::new();
    let mut x_var = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        for &j in &f.path {
            a_var.insert((i, j), lp.add_var(format!("A{i}_{j}"), false));
            x_var.insert((i, j), lp.add_var(format!("x{i}_{j}"), false));
        }
    }
    for srv in net.servers() {
        let j = srv.id;
        lp.add_constraint("period", vec![(s_var[&j], 1.0), (t_var[&j], -1.0)], Rel::Le, 0.0);
        lp.add_constraint(
            "delay",
            vec![(d_var[&j], 1.0), (t_var[&j], -1.0), (s_var[&j], 1.0)],
            Rel::Eq,
            0.0,
        );
        // Service guarantee on the FIFO aggregate over the period.
        let mut terms: Vec<(VarId, f64)> =
            net.fl(j).iter().map(|&i| (a_var[&(i, j)], 1.0)).collect();
        terms.push((t_var[&j], -srv.service.rate));
        lp.add_constraint("service", terms, Rel::Ge, -srv.service.rate * srv.service.latency);
        // Per-flow arrivals within the period.
        for &i in net.fl(j) {
            lp.add_constraint(
                "arrival",
                vec![
                    (a_var[&(i, j)], 1.0),
                    (x_var[&(i, j)], -1.0),
                    (s_var[&j], -flows[i].arrival.rate),
                ],
                Rel::Le,
                0.0,
            );
        }
        // Aggregate shaping per predecessor arc.
        for &h in net.pr(j) {
            let Some(sh) = net.server(h).shaper else { continue };
            let mut terms: Vec<(VarId, f64)> =
                net.fl_arc(h, j).iter().map(|&i| (a_var[&(i, j)], 1.0)).collect();
            terms.push((s_var[&j], -sh.rate));
            lp.add_constraint("shaping", terms, Rel::Le, sh.burst);
        }
    }
    for g in net.entry_groups() {
        let mut terms: Vec<(VarId, f64)> =
            g.members.iter().map(|&i| (a_var[&(i, g.server)], 1.0)).collect();
        terms.push((s_var[&g.server], -g.shaper.rate));
        lp.add_constraint("entry-shaping", terms, Rel::Le, g.shaper.burst);
    }
    // Burst propagation along each flow path.
    for (i, f) in flows.iter().enumerate() {
        lp.add_constraint("burst", vec![(x_var[&(i, f.first())], 1.0)], Rel::Eq, f.arrival.burst);
        for w in f.path.windows(2) {
            lp.add_constraint(
                "burst",
                vec![
                    (x_var[&(i, w[1])], 1.0),
                    (x_var[&(i, w[0])], -1.0),
                    (d_var[&w[0]], -f.arrival.rate),
                ],
                Rel::Eq,
                0.0,
            );
        }
    }
    lp.set_objective(Sense::Max, d_var.values().map(|&v| (v, 1.0)).collect());
    let outcome = lp.solve_with(solver);
    match outcome.status {
        Status::Optimal => {
            let assignment = outcome
                .assignment
                .ok_or_else(|| PlpError::SolverFailed("no assignment returned".into()))?;
            let delays =
                d_var.iter().map(|(&j, &v)| (j, assignment[v.0])).collect();
            Ok(TfaFixpoint { stable: true, delays })
        }
        Status::Unbounded => Ok(TfaFixpoint { stable: false, delays: BTreeMap::new() }),
        Status::Infeasible => Err(PlpError::Infeasible("delay fixpoint LP".into())),
        Status::Failed(msg) => Err(PlpError::SolverFailed(msg)),
    }
}

/// End-to-end delay of `foi` from the fixpoint LP: sum of the per-server
/// bounds along its path, +∞ when the fixpoint diverges.
pub fn lp_tfa_delay(net: &Network, foi: &str, solver: &SolverChoice) -> Result<f64, PlpError> {
    let idx = net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    let fix = lp_tfa_fixpoint(net, solver)?;
    if !fix.stable {
        return Ok(f64::INFINITY);
    }
    Ok(net.flows()[idx].path.iter().map(|j| fix.delays[j]).sum())
}

fn unknown_segments(sn: &SplitNetwork) -> Vec<usize> {
    (0..sn.segments.len()).filter(|&k| sn.segments[k].part > 0).collect()
}

/// Solve one segment's tree PLP with explicitly supplied cut values.
fn solve_segment(
    forest: &Network,
    name: &str,
    objective: PlpObjective,
    shaping: bool,
    cuts: &CutValues,
    solver: &SolverChoice,
) -> Result<f64, PlpError> {
    let idx = forest.flow_index(name).expect("segment exists in forest");
    let sub = forest.predecessors_subnet(forest.flows()[idx].last());
    let foi = sub.flow_index(name).unwrap();
    let bursts: Vec<BurstSpec> =
        sub.flows().iter().map(|f| BurstSpec::Const(f.arrival.burst)).collect();
    let mut lp = LinearProgram::new();
    let handles = build_plp_into(&mut lp, "", &sub, foi, objective, shaping, cuts, &bursts)?;
    lp.set_objective(Sense::Max, handles.objective_terms);
    let outcome = lp.solve_with(solver);
    match outcome.status {
        Status::Optimal => Ok(outcome.objective),
        Status::Unbounded => Ok(f64::INFINITY),
        Status::Infeasible => Err(PlpError::Infeasible(format!("segment {name}"))),
        Status::Failed(msg) => Err(PlpError::SolverFailed(msg)),
    }
}

/// Build the combined fixed-point LP over the unknown segment bursts: one
/// shared variable per re-injected segment, one prefixed copy of the backlog
/// program of its predecessor piece (unknown bursts referenced by the shared
/// variables), a linking row tying each variable to its program's backlog
/// expression, and objective maximizing the sum of the shared variables.
/// Returns the LP and the shared variable of each re-injected segment.
pub fn build_combined_fixpoint_lp(
    sn: &SplitNetwork,
    cuts: &CutValues,
    shaping: bool,
) -> Result<(LinearProgram, BTreeMap<usize, VarId>), PlpError> {
    let forest = sn.network();
    let mut lp = LinearProgram::new();
    let x: BTreeMap<usize, VarId> = unknown_segments(sn)
        .into_iter()
        .map(|k| (k, lp.add_var(format!("x{k}"), false)))
        .collect();
    let seg_by_name: BTreeMap<&str, usize> =
        sn.segments.iter().enumerate().map(|(k, z)| (z.name.as_str(), k)).collect();
    for (&idx, &xv) in &x {
        let z = &sn.segments[idx];
        let prev = sn.segment_index(z.flow, z.part - 1).expect("predecessor piece");
        let prev_name = &sn.segments[prev].name;
        let forest_idx = forest.flow_index(prev_name).unwrap();
        let sub = forest.predecessors_subnet(forest.flows()[forest_idx].last());
        let foi = sub.flow_index(prev_name).unwrap();
        let bursts: Vec<BurstSpec> = sub
            .flows()
            .iter()
            .map(|f| {
                let k = seg_by_name[f.name.as_str()];
                if sn.segments[k].part > 0 {
                    BurstSpec::Var(x[&k])
                } else {
                    BurstSpec::Const(f.arrival.burst)
                }
            })
            .collect();
        let handles =
            build_plp_into(&mut lp, &format!("s{idx}_"), &sub, foi, PlpObjective::Backlog, shaping, cuts, &bursts)?;
        let mut terms = vec![(xv, 1.0)];
        for (v, c) in handles.objective_terms {
            terms.push((v, -c));
        }
        lp.add_constraint("fixpoint-link", terms, Rel::Le, 0.0);
    }
    // Structural invariants: one linking row per shared variable, each
    // referencing exactly its variable plus the two backlog terms.
    let links: Vec<_> =
        lp.constraints().iter().filter(|c| c.origin == "fixpoint-link").collect();
    assert_eq!(links.len(), x.len());
    for c in &links {
        assert_eq!(c.terms.len(), 3);
        assert_eq!(c.terms.iter().filter(|(v, _)| x.values().any(|xv| xv == v)).count(), 1);
    }
    lp.set_objective(Sense::Max, x.values().map(|&v| (v, 1.0)).collect());
    Ok((lp, x))
}

/// TFA++ cut values usable inside the fixed-point programs: the per-server
/// delay fixpoint when it converges, nothing otherwise. Per-flow cuts are not
/// valid here because segment bursts are still unknown.
fn fixpoint_cuts(net: &Network, opts: &PlpOptions) -> Result<CutValues, PlpError> {
    if !opts.cut_tfa {
        return Ok(CutValues::default());
    }
    let fix = lp_tfa_fixpoint(net, &opts.solver)?;
    Ok(CutValues { tfa: fix.stable.then_some(fix.delays), sfa: None })
}

/// Outcome of a burst fixed-point computation over a split network.
#[derive(Clone, Debug)]
pub struct FixpointOutcome {
    pub stable: bool,
    /// Burst of each re-injected segment by name; empty when unstable.
    pub bursts: BTreeMap<String, f64>,
}

/// Solve the combined fixed-point LP and freeze the resulting bursts into the
/// split network. An unbounded LP means no stability guarantee. A bounded
/// optimum is verified by one numeric iteration of the burst map.
pub fn fixpoint_bursts(
    net: &Network,
    foi: &str,
    opts: &PlpOptions,
) -> Result<(SplitNetwork, FixpointOutcome), PlpError> {
    let foi_idx =
        net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    let root = net.unique_sink().unwrap_or_else(|| net.flows()[foi_idx].last());
    let mut sn = split(net, root);
    let unknown = unknown_segments(&sn);
    if unknown.is_empty() {
        return Ok((sn, FixpointOutcome { stable: true, bursts: BTreeMap::new() }));
    }
    let cuts = fixpoint_cuts(net, opts)?;
    let (lp, x) = build_combined_fixpoint_lp(&sn, &cuts, opts.shaping)?;
    let outcome = lp.solve_with(&opts.solver);
    match outcome.status {
        Status::Unbounded => {
            return Ok((sn, FixpointOutcome { stable: false, bursts: BTreeMap::new() }))
        }
        Status::Infeasible => return Err(PlpError::Infeasible("combined fixpoint LP".into())),
        Status::Failed(msg) => return Err(PlpError::SolverFailed(msg)),
        Status::Optimal => {}
    }
    let assignment = outcome
        .assignment
        .ok_or_else(|| PlpError::SolverFailed("no assignment returned".into()))?;
    let mut bursts = BTreeMap::new();
    for (&k, &xv) in &x {
        sn.flows[k].arrival.burst = assignment[xv.0];
        bursts.insert(sn.segments[k].name.clone(), assignment[xv.0]);
    }
    // One verification pass: applying the burst map to the solution must not
    // increase any burst (beyond numerical tolerance).
    let forest = sn.network();
    for &k in &unknown {
        let prev = sn.segment_index(sn.segments[k].flow, sn.segments[k].part - 1).unwrap();
        let b = solve_segment(
            &forest,
            &sn.segments[prev].name,
            PlpObjective::Backlog,
            opts.shaping,
            &cuts,
            &opts.solver,
        )?;
        let x_k = sn.flows[k].arrival.burst;
        if b > x_k + 1e-6 * x_k.abs().max(1.0) {
            return Err(PlpError::SolverFailed(format!(
                "fixpoint verification failed for segment {}: map gives {b}, solution {x_k}",
                sn.segments[k].name
            )));
        }
    }
    Ok((sn, FixpointOutcome { stable: true, bursts }))
}

/// Baseline iterative burst fixed point: start all re-injected bursts at 0
/// and repeatedly apply the backlog map (same cuts as the combined LP) until
/// convergence or divergence past 1e12 bits.
pub fn kleene_iterate(
    net: &Network,
    foi: &str,
    opts: &PlpOptions,
    max_iter: usize,
) -> Result<(SplitNetwork, FixpointOutcome), PlpError> {
    let foi_idx =
        net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    let root = net.unique_sink().unwrap_or_else(|| net.flows()[foi_idx].last());
    let mut sn = split(net, root);
    let unknown = unknown_segments(&sn);
    if unknown.is_empty() {
        return Ok((sn, FixpointOutcome { stable: true, bursts: BTreeMap::new() }));
    }
    let cuts = fixpoint_cuts(net, opts)?;
    for &k in &unknown {
        sn.flows[k].arrival.burst = 0.0;
    }
    for _ in 0..max_iter {
        let forest = sn.network();
        let mut change = 0.0f64;
        let mut next = Vec::with_capacity(unknown.len());
        for &k in &unknown {
            let prev = sn.segment_index(sn.segments[k].flow, sn.segments[k].part - 1).unwrap();
            let b = solve_segment(
                &forest,
                &sn.segments[prev].name,
                PlpObjective::Backlog,
                opts.shaping,
                &cuts,
                &opts.solver,
            )?;
            if !b.is_finite() || b > 1e12 {
                return Ok((sn, FixpointOutcome { stable: false, bursts: BTreeMap::new() }));
            }
            change = change.max((b - sn.flows[k].arrival.burst).abs() / b.abs().max(1.0));
            next.push(b);
        }
        for (&k, &b) in unknown.iter().zip(&next) {
            sn.flows[k].arrival.burst = b;
        }
        if change <= 1e-9 {
            let bursts =
                unknown.iter().map(|&k| (sn.segments[k].name.clone(), sn.flows[k].arrival.burst)).collect();
            return Ok((sn, FixpointOutcome { stable: true, bursts }));
        }
    }
    Ok((sn, FixpointOutcome { stable: false, bursts: BTreeMap::new() }))
}

/// Worst-case delay of `foi` in a cyclic network: freeze the segment bursts
/// via the combined fixed-point LP, then sum the tree-PLP delay bounds of the
/// foi's pieces over the frozen acyclic forest. The pieces are cut with the
/// same per-server delays as the combined LP (the cyclic delay fixpoint);
/// per-flow cuts do not apply to re-injected segments.
pub fn plp_fixpoint_delay(net: &Network, foi: &str, opts: &PlpOptions) -> Result<f64, PlpError> {
    let foi_idx =
        net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))?;
    let (sn, outcome) = fixpoint_bursts(net, foi, opts)?;
    if !outcome.stable {
        return Ok(f64::INFINITY);
    }
    let cuts = fixpoint_cuts(net, opts)?;
    let forest = sn.network();
    let mut total = 0.0;
    for z in &sn.segments {
        if z.flow == foi_idx {
            total += solve_segment(
                &forest,
                &z.name,
                PlpObjective::Delay,
                opts.shaping,
                &cuts,
                &opts.solver,
            )?;
        }
    }
    Ok(total)
}
