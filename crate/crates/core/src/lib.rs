//! Deterministic network calculus for FIFO networks.
//!
//! Computes worst-case delay and backlog bounds for token-bucket flows crossing
//! rate-latency servers, via algebraic analyzers (TFA, TFA++, SFA, regulator
//! bound) and a polynomial-size linear program over dated cumulative processes
//! (PLP) for trees, feed-forward networks (unfolding or flow splitting) and
//! cyclic networks (combined fixed-point LP).

pub mod analyzers;
pub mod curves;
pub mod cyclic;
pub mod feedforward;
pub mod lp;
pub mod network;
pub mod plp;
