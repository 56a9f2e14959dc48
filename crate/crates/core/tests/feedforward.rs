mod common;

use std::collections::BTreeSet;

use common::{assert_close, diamond, toy_tandem};
use netcalc_core::curves::{RateLatency, TokenBucket};
use netcalc_core::feedforward::{
    select_feedback_arcs, split, split_analyze, unfold, unfold_analyze, UNFOLD_NODE_LIMIT,
};
use netcalc_core::network::{gen_mesh, gen_ring, Flow, GenParams, NetError, Network, Server};
use netcalc_core::plp::{plp_delay, PlpError, PlpOptions};

fn opts() -> PlpOptions {
    PlpOptions::default()
}

#[test]
fn unfold_of_a_tree_preserves_the_bound() {
    let net = toy_tandem();
    let (tree, copy) = unfold(&net, "f0").unwrap();
    // One node per path ending at the sink: <1,2> and <2>.
    assert_eq!(tree.servers().len(), 2);
    let direct = plp_delay(&net, "f0", &opts()).unwrap();
    let unfolded = plp_delay(&tree, &copy, &opts()).unwrap();
    assert_close(unfolded, direct, 1e-9);
    assert_close(unfold_analyze(&net, "f0", &opts()).unwrap(), direct, 1e-9);
}

#[test]
fn unfold_diamond_structure() {
    let net = diamond();
    let (tree, copy) = unfold(&net, "a").unwrap();
    // Paths ending at the sink: <0,1,3>, <0,2,3>, <1,3>, <2,3>, <3>.
    assert_eq!(tree.servers().len(), 5);
    assert!(tree.classify().kind != netcalc_core::network::Kind::Cyclic);
    assert!(tree.is_acyclic());
    // Flow a is copied at nodes sharing a prefix with <0,1,3>: the full path
    // node plus nothing else starting at 0... <0,2,3> shares only server 0.
    let copies = tree.flows().iter().filter(|f| f.name.starts_with("a@")).count();
    assert_eq!(copies, 2);
    let d = plp_delay(&tree, &copy, &opts()).unwrap();
    assert!(d.is_finite() && d > 0.0);
}

#[test]
fn mesh_feedback_arc_selection() {
    let net = gen_mesh(GenParams::default());
    let (kept, removed) = select_feedback_arcs(&net, 8);
    let want: BTreeSet<(u32, u32)> =
        [(0, 2), (1, 2), (2, 4), (3, 4), (4, 6), (5, 6), (6, 8), (7, 8)].into_iter().collect();
    assert_eq!(kept, want);
    assert_eq!(removed.len(), 6);
    // Removed arcs come in tail-topological order.
    let topo = net.topological_order().unwrap();
    let pos = |j: u32| topo.iter().position(|&x| x == j).unwrap();
    for w in removed.windows(2) {
        assert!(pos(w[0].0) <= pos(w[1].0));
    }
}

#[test]
fn split_diamond_cuts_the_cross_flow() {
    let net = diamond();
    let sn = split(&net, 3);
    // In-tree toward 3 keeps (0,1), (1,3), (2,3); arc (0,2) is removed, so
    // flow b = <0,2,3> is cut into b.0 = <0> and b.1 = <2,3>.
    assert_eq!(sn.removed, vec![(0, 2)]);
    let names: Vec<&str> = sn.flows.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(names, vec!["a.0", "b.0", "b.1", "c.0"]);
    assert_eq!(sn.flows[1].path, vec![0]);
    assert_eq!(sn.flows[2].path, vec![2, 3]);
    // The re-entry group at server 2 carries server 0's shaper.
    let g = sn.entry_groups.iter().find(|g| g.server == 2).unwrap();
    assert_eq!(g.members, vec![2]);
    assert_eq!(Some(g.shaper), net.server(0).shaper);
    // Pieces concatenate back to the original paths.
    for (i, f) in net.flows().iter().enumerate() {
        let mut joined = Vec::new();
        for z in sn.segments.iter().filter(|z| z.flow == i) {
            joined.extend_from_slice(&sn.flows[sn.segment_index(i, z.part).unwrap()].path);
        }
        assert_eq!(joined, f.path, "flow {}", f.name);
    }
}

#[test]
fn split_and_unfold_agree_on_the_diamond() {
    let net = diamond();
    let via_split = split_analyze(&net, "a", &opts()).unwrap();
    let via_unfold = unfold_analyze(&net, "a", &opts()).unwrap();
    assert!(via_split.is_finite() && via_unfold.is_finite());
    // Splitting pays for the cut; it can only be looser.
    assert!(via_unfold <= via_split * (1.0 + 1e-9));
}

#[test]
fn mesh_delay_bounds() {
    let p = GenParams::default();
    let net = gen_mesh(p);
    assert_close(unfold_analyze(&net, "foi", &opts()).unwrap(), 0.010425, 1e-3);
    assert_close(split_analyze(&net, "foi", &opts()).unwrap(), 0.010721, 0.02);

    let shaped = gen_mesh(GenParams { eta: 5.0, ..p });
    assert_close(unfold_analyze(&shaped, "foi", &opts()).unwrap(), 0.012617, 1e-3);
    assert_close(split_analyze(&shaped, "foi", &opts()).unwrap(), 0.013883, 0.02);
}

#[test]
fn unfold_rejects_cyclic_and_oversized_networks() {
    let ring = gen_ring(4, GenParams::default());
    assert!(matches!(unfold(&ring, "foi"), Err(PlpError::Net(NetError::Cyclic))));
    assert!(matches!(
        split_analyze(&ring, "foi", &opts()),
        Err(PlpError::Net(NetError::Cyclic))
    ));

    // Ladder of diamonds: 2 nodes per layer, all four cross arcs between
    // consecutive layers, one sink. Paths to the sink double per layer, so 15
    // layers exceed the unfolding limit.
    let layers = 15u32;
    let mut servers = Vec::new();
    let mut flows = Vec::new();
    let beta = RateLatency::new(1e9, 1e-4);
    for l in 0..layers {
        servers.push(Server::new(2 * l, beta, None));
        servers.push(Server::new(2 * l + 1, beta, None));
    }
    let sink = 2 * layers;
    servers.push(Server::new(sink, beta, None));
    let tb = TokenBucket::new(100.0, 1e3);
    for l in 0..layers - 1 {
        for a in 0..2u32 {
            for b in 0..2u32 {
                let (from, to) = (2 * l + a, 2 * (l + 1) + b);
                flows.push(Flow::new(format!("x{from}_{to}"), tb, vec![from, to]));
            }
        }
    }
    flows.push(Flow::new("foi", tb, vec![2 * (layers - 1), sink]));
    flows.push(Flow::new("y", tb, vec![2 * (layers - 1) + 1, sink]));
    let net = Network::new(servers, flows).unwrap();
    match unfold(&net, "foi") {
        Err(PlpError::UnfoldTooLarge { limit, found }) => {
            assert_eq!(limit, UNFOLD_NODE_LIMIT);
            assert!(found > limit);
        }
        other => panic!("expected UnfoldTooLarge, got {other:?}"),
    }
}
