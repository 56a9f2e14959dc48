//! Algebraic (non-LP) delay analyzers: TFA, TFA++ (predecessor shaping), SFA
//! (per-flow residual service), and the regulator bound (TFA without burst
//! growth). TFA and TFA++ require feed-forward networks; SFA additionally
//! supports cyclic networks by iterating its burst-propagation equations to a
//! fixed point.

use std::collections::BTreeMap;

use crate::curves::{self, ConcavePl, TokenBucket};
use crate::network::{NetError, Network};

/// Per-server delay bounds and per-(flow, server) propagated bursts.
#[derive(Clone, Debug, Default)]
pub struct PerServerDelays {
    pub delays: BTreeMap<u32, f64>,
    /// Burst of flow index `i` as it arrives at server `j`.
    pub bursts: BTreeMap<(usize, u32), f64>,
}

#[derive(Clone, Debug)]
pub struct AnalyzerOutcome {
    pub delay: f64,
    pub per_server: PerServerDelays,
}

fn foi_index(net: &Network, foi: &str) -> Result<usize, NetError> {
    net.flow_index(foi).ok_or_else(|| NetError::UnknownFoi(foi.to_string()))
}

fn path_sum(per_server: &PerServerDelays, path: &[u32]) -> f64 {
    path.iter().map(|j| per_server.delays[j]).sum()
}

/// Total flow analysis: per server, in topological order,
/// d_j = T_j + (Σ_{i∈fl(j)} b_i^{(j)})/R_j with burst propagation
/// b_i^{(su)} = b_i^{(j)} + r_i·d_j.
pub fn tfa(net: &Network, foi: &str) -> Result<AnalyzerOutcome, NetError> {
    let foi = foi_index(net, foi)?;
    let per_server = tfa_pass(net, false)?;
    Ok(AnalyzerOutcome { delay: path_sum(&per_server, &net.flows()[foi].path), per_server })
}

/// TFA++: as `tfa` but the aggregate arrival at a server is shaped per
/// predecessor arc by that predecessor's shaper (and per entry group by the
/// group shaper), and the per-server delay is the horizontal deviation of the
/// shaped aggregate against the service curve.
pub fn tfa_pp(net: &Network, foi: &str) -> Result<AnalyzerOutcome, NetError> {
    let foi = foi_index(net, foi)?;
    let per_server = tfa_pass(net, true)?;
    Ok(AnalyzerOutcome { delay: path_sum(&per_server, &net.flows()[foi].path), per_server })
}

/// TFA++ per-server delay bounds (foi-independent); used as PLP cut values.
pub fn tfa_pp_servers(net: &Network) -> Result<PerServerDelays, NetError> {
    tfa_pass(net, true)
}

/// Regulator bound: TFA with burst propagation disabled (bursts never grow).
/// Per-server delays do not depend on processing order, so cyclic networks
/// are accepted.
pub fn reg_bound(net: &Network, foi: &str) -> Result<f64, NetError> {
    let foi = foi_index(net, foi)?;
    let mut total = 0.0;
    for &j in &net.flows()[foi].path {
        let s = net.server(j);
        if net.utilization(j) > 1.0 {
            return Ok(f64::INFINITY);
        }
        let b: f64 = net.fl(j).iter().map(|&i| net.flows()[i].arrival.burst).sum();
        total += s.service.latency + b / s.service.rate;
    }
    Ok(total)
}

fn tfa_pass(net: &Network, shaped: bool) -> Result<PerServerDelays, NetError> {
    let order: Vec<u32> =
        net.topological_order().ok_or(NetError::Cyclic)?.to_vec();
    let flows = net.flows();
    let mut out = PerServerDelays::default();
    for (i, f) in flows.iter().enumerate() {
        out.bursts.insert((i, f.first()), f.arrival.burst);
    }
    for &j in &order {
        let server = net.server(j);
        let members = net.fl(j);
        let bursts: Vec<f64> = members.iter().map(|&i| out.bursts[&(i, j)]).collect();
        let d_j = if bursts.iter().any(|b| b.is_infinite()) {
            f64::INFINITY
        } else if shaped {
            let alpha = shaped_aggregate(net, j, &out.bursts);
            curves::h_dev(&alpha, server.service)
        } else {
            let rate: f64 = members.iter().map(|&i| flows[i].arrival.rate).sum();
            if rate > server.service.rate {
                f64::INFINITY
            } else {
                server.service.latency + bursts.iter().sum::<f64>() / server.service.rate
            }
        };
        out.delays.insert(j, d_j);
        for &i in members {
            if let Some(succ) = flows[i].succ(j) {
                let b = out.bursts[&(i, j)] + flows[i].arrival.rate * d_j;
                out.bursts.insert((i, succ), b);
            }
        }
    }
    Ok(out)
}

/// Aggregate arrival curve at server `j`: per predecessor arc, the sum of the
/// arc's flow curves capped by the predecessor's shaper; per entry group, the
/// members' sum capped by the group shaper; plus unshaped fresh arrivals.
fn shaped_aggregate(net: &Network, j: u32, bursts: &BTreeMap<(usize, u32), f64>) -> ConcavePl {
    let flows = net.flows();
    let curve = |i: usize| {
        ConcavePl::from_token_bucket(TokenBucket::new(bursts[&(i, j)], flows[i].arrival.rate))
    };
    let mut parts: Vec<ConcavePl> = Vec::new();
    for &h in net.pr(j) {
        let members = net.fl_arc(h, j);
        if members.is_empty() {
            continue;
        }
        let group: Vec<ConcavePl> = members.iter().map(|&i| curve(i)).collect();
        let mut agg = curves::sum(&group);
        if let Some(shaper) = net.server(h).shaper {
            agg = curves::min_concave(&ConcavePl::from_token_bucket(shaper), &agg);
        }
        parts.push(agg);
    }
    let mut grouped = vec![false; flows.len()];
    for g in net.entry_groups() {
        if g.server != j {
            continue;
        }
        let group: Vec<ConcavePl> = g
            .members
            .iter()
            .map(|&i| {
                grouped[i] = true;
                curve(i)
            })
            .collect();
        parts.push(curves::min_concave(&ConcavePl::from_token_bucket(g.shaper), &curves::sum(&group)));
    }
    for &i in net.fl(j) {
        if flows[i].first() == j && !grouped[i] {
            parts.push(curve(i));
        }
    }
    if parts.is_empty() {
        return ConcavePl::zero();
    }
    curves::sum(&parts)
}

/// SFA end-to-end bound of one flow; see [`sfa_all`].
pub fn sfa(net: &Network, foi: &str) -> Result<f64, NetError> {
    let foi = foi_index(net, foi)?;
    Ok(sfa_all(net)?.remove(&foi).unwrap())
}

/// SFA bounds for every flow: per (flow, server), the residual service is
/// β_{R_j − Σ_{k≠i} r_k, T_j + (Σ_{k≠i} b_k^{(j)})/R_j}; bursts propagate by
/// the residual latency; the end-to-end bound pays the flow's own burst once
/// against the minimum residual rate. On cyclic networks the propagation
/// equations are iterated to their least fixed point; divergence means +∞.
pub fn sfa_all(net: &Network) -> Result<BTreeMap<usize, f64>, NetError> {
    let flows = net.flows();
    let order: Vec<u32> = match net.topological_order() {
        Some(o) => o.to_vec(),
        None => net.servers().iter().map(|s| s.id).collect(),
    };
    let sweeps = if net.is_acyclic() { 1 } else { 200_000 };

    let mut bursts: BTreeMap<(usize, u32), f64> = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        for &j in &f.path {
            bursts.insert((i, j), f.arrival.burst);
        }
    }
    let mut diverged = false;
    for _ in 0..sweeps {
        let mut max_change = 0.0f64;
        for &j in &order {
            let server = net.server(j);
            let members = net.fl(j);
            let total: f64 = members.iter().map(|&i| bursts[&(i, j)]).sum();
            for &i in members {
                let Some(succ) = flows[i].succ(j) else { continue };
                let cross = total - bursts[&(i, j)];
                let theta = server.service.latency + cross / server.service.rate;
                let b = bursts[&(i, j)] + flows[i].arrival.rate * theta;
                let prev = bursts.insert((i, succ), b).unwrap();
                max_change = max_change.max((b - prev).abs() / b.abs().max(1.0));
            }
        }
        if bursts.values().any(|b| *b > 1e15) {
            diverged = true;
            break;
        }
        if max_change <= 1e-13 {
            break;
        }
    }

    let mut out = BTreeMap::new();
    for (i, f) in flows.iter().enumerate() {
        if diverged {
            out.insert(i, f64::INFINITY);
            continue;
        }
        let mut latency = 0.0;
        let mut min_rate = f64::INFINITY;
        for &j in &f.path {
            let server = net.server(j);
            let mut cross_burst = 0.0;
            let mut cross_rate = 0.0;
            for &k in net.fl(j) {
                if k != i {
                    cross_burst += bursts[&(k, j)];
                    cross_rate += flows[k].arrival.rate;
                }
            }
            latency += server.service.latency + cross_burst / server.service.rate;
            min_rate = min_rate.min(server.service.rate - cross_rate);
        }
        let delay = if min_rate < f.arrival.rate.max(f64::MIN_POSITIVE)
            || (min_rate == f.arrival.rate && f.arrival.burst > 0.0)
        {
            f64::INFINITY
        } else {
            latency + f.arrival.burst / min_rate
        };
        out.insert(i, delay);
    }
    Ok(out)
}
