//! Fixtures shared by the benchmarks.

use cellalign_core::allocation::{assign_greedy_partial, PartialAssignment};
use cellalign_core::feasibility::{build_instance_full, FeasibilityInstance};
use cellalign_core::network::{build_connectivity, sample_channels, ChannelSet, NetworkConfig, Topology};
use cellalign_core::{allocation, subspace::RANK_TOL, ConnectivitySpec, Subspace};

pub fn three_cell() -> NetworkConfig {
    NetworkConfig::uniform(3, 2, 5, 2, 1, Topology::FullyConnected)
}

pub fn geometric() -> NetworkConfig {
    let topology = Topology::Geometric {
        link_range_km: 15.0,
        scatter_km: 3.0,
        area_km: 30.0,
        seed: 1000,
        path_loss_exponent: None,
    };
    NetworkConfig::uniform(12, 4, 8, 4, 2, topology)
}

pub fn connectivity(cfg: &NetworkConfig) -> ConnectivitySpec {
    build_connectivity(cfg).expect("valid scenario")
}

/// Stage one and one channel draw of a scenario.
pub fn prepared(cfg: &NetworkConfig, seed: u64) -> (ChannelSet, PartialAssignment) {
    let conn = connectivity(cfg);
    let stage = assign_greedy_partial(cfg, &conn).expect("assignment");
    (sample_channels(&conn, seed), stage)
}

/// Two generic subspaces of `C^n` with dimensions `a` and `b`, spanned by
/// rows of sampled channel matrices.
pub fn subspace_pair(n: usize, a: usize, b: usize) -> (Subspace, Subspace) {
    let cfg = NetworkConfig::uniform(2, 1, n, a.max(b), a.max(b), Topology::FullyConnected);
    let ch = sample_channels(&connectivity(&cfg), 7);
    let rows = |g: usize, d: usize| Subspace::span(&ch.h(g, 0, 0).rows(0, d).adjoint(), RANK_TOL);
    (rows(0, a), rows(1, b))
}

/// Fully connected instance with `g` cells of `k` single-stream MSs.
pub fn full_instance(g: usize, k: usize, nt: usize, nr: usize) -> FeasibilityInstance {
    let cfg = NetworkConfig::uniform(g, k, nt, nr, 1, Topology::FullyConnected);
    let d = allocation::StreamAssignment::from_rows(&cfg.d_max);
    build_instance_full(&d, &cfg)
}
