//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use netcalc_core::curves::{RateLatency, TokenBucket};
use netcalc_core::network::{Flow, Network, Server};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Two rate-latency servers 4(t-1)+, server 1 output-shaped at rate 4;
/// flow f0 over both servers, f1 at server 1 only, f2 at server 2 only,
/// all with arrival curve 1 + t.
pub fn toy_tandem() -> Network {
    let beta = RateLatency::new(4.0, 1.0);
    let servers = vec![
        Server::new(1, beta, Some(TokenBucket::new(0.0, 4.0))),
        Server::new(2, beta, None),
    ];
    let tb = TokenBucket::new(1.0, 1.0);
    let flows = vec![
        Flow::new("f0", tb, vec![1, 2]),
        Flow::new("f1", tb, vec![1]),
        Flow::new("f2", tb, vec![2]),
    ];
    let mut net = Network::new(servers, flows).unwrap();
    net.set_foi("f0").unwrap();
    net
}

/// Diamond feed-forward net: server 0 feeds 1 and 2, both feed 3. Flow a
/// over ⟨0,1,3⟩, flow b over ⟨0,2,3⟩, flow c over ⟨3⟩.
pub fn diamond() -> Network {
    let beta = RateLatency::new(10.0, 0.5);
    let servers: Vec<Server> =
        (0..4).map(|j| Server::new(j, beta, Some(TokenBucket::new(0.0, 10.0)))).collect();
    let tb = TokenBucket::new(2.0, 1.0);
    let flows = vec![
        Flow::new("a", tb, vec![0, 1, 3]),
        Flow::new("b", tb, vec![0, 2, 3]),
        Flow::new("c", tb, vec![3]),
    ];
    let mut net = Network::new(servers, flows).unwrap();
    net.set_foi("a").unwrap();
    net
}

/// Random tree network: servers 1..=n with succ(j) drawn among higher ids,
/// sink n; a handful of flows following tree paths. Utilization stays below
/// 0.72 (at most 6 flows of rate 1.2e6 per 1e7 server).
pub fn random_tree(rng: &mut ChaCha8Rng) -> Network {
    let n = rng.gen_range(2..=7u32);
    let mut succ: BTreeMap<u32, u32> = BTreeMap::new();
    for j in 1..n {
        succ.insert(j, rng.gen_range(j + 1..=n));
    }
    let servers: Vec<Server> = (1..=n)
        .map(|j| {
            Server::new(j, RateLatency::new(1e7, 0.001), Some(TokenBucket::new(0.0, 1e7)))
        })
        .collect();
    let mut flows = Vec::new();
    let num_flows = rng.gen_range(2..=6);
    for k in 0..num_flows {
        let start = rng.gen_range(1..=n);
        let mut path = vec![start];
        let hops = rng.gen_range(0..n);
        for _ in 0..hops {
            match succ.get(path.last().unwrap()) {
                Some(&next) => path.push(next),
                None => break,
            }
        }
        let name = if k == 0 { "foi".to_string() } else { format!("f{k}") };
        flows.push(Flow::new(name, TokenBucket::new(rng.gen_range(500.0..2000.0), 1.2e6), path));
    }
    let mut net = Network::new(servers, flows).unwrap();
    net.set_foi("foi").unwrap();
    net
}

pub fn assert_close(actual: f64, expected: f64, rel: f64) {
    assert!(
        (actual - expected).abs() <= rel * expected.abs().max(1e-12),
        "expected {expected}, got {actual} (rel tol {rel})"
    );
}
