//! Cost model for all-to-all collectives: exact launch/message counts and
//! a max-of-bottlenecks fluid time model.
//!
//! Simulated time of one collective phase is
//!
//!   launch_overhead * launches_per_rank
//!     + max over nodes of max(inter bytes in, out) / effective_inter_bw
//!     + max over ranks of max(intra bytes in, out) / intra_bw
//!
//! where effective_inter_bw = inter_bw / max(1, flows / bisection_capacity)
//! and flows counts distinct ordered node pairs with nonzero bytes. Links
//! are full duplex, so in and out do not sum. Launches are structural: an
//! all-to-all posts one send/recv pair to every group peer whether or not
//! the payload is empty.

use crate::topology::ClusterTopology;

/// Which group family a collective runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectiveKind {
    /// All N ranks in one group (the flat baseline).
    PairwiseGlobal,
    /// m disjoint groups of n ranks sharing a local slot.
    InterNode,
    /// n disjoint groups of the m ranks of one node.
    IntraNode,
}

impl CollectiveKind {
    pub fn group_size(self, topo: &ClusterTopology) -> usize {
        match self {
            CollectiveKind::PairwiseGlobal => topo.world_size(),
            CollectiveKind::InterNode => topo.n,
            CollectiveKind::IntraNode => topo.m,
        }
    }
}

/// Source -> destination payload sizes for one phase, N x N.
#[derive(Debug, Clone, PartialEq)]
pub struct ByteMatrix {
    pub n_ranks: usize,
    data: Vec<u64>,
}

impl ByteMatrix {
    pub fn new(n_ranks: usize) -> Self {
        ByteMatrix { n_ranks, data: vec![0; n_ranks * n_ranks] }
    }

    pub fn get(&self, src: usize, dst: usize) -> u64 {
        self.data[src * self.n_ranks + dst]
    }

    pub fn add(&mut self, src: usize, dst: usize, bytes: u64) {
        self.data[src * self.n_ranks + dst] += bytes;
    }

    pub fn transpose(&self) -> Self {
        let mut t = ByteMatrix::new(self.n_ranks);
        for s in 0..self.n_ranks {
            for d in 0..self.n_ranks {
                t.data[d * self.n_ranks + s] = self.get(s, d);
            }
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.data.iter().sum()
    }
}

/// One collective phase: its group family and payload matrix.
#[derive(Debug, Clone)]
pub struct CollectiveDescriptor {
    pub kind: CollectiveKind,
    /// Stable phase name used in reports ("dispatch", "inter_return", ...).
    pub phase: &'static str,
    pub bytes: ByteMatrix,
}

/// Every posted (source, destination) message of the phase: each rank posts
/// to every other member of its group, empty payloads included. Ordered by
/// source rank, then destination rank.
pub fn message_log(desc: &CollectiveDescriptor, topo: &ClusterTopology) -> Vec<(usize, usize)> {
    let world = topo.world_size();
    let mut log = Vec::new();
    for src in 0..world {
        for dst in 0..world {
            if src == dst {
                continue;
            }
            let same_group = match desc.kind {
                CollectiveKind::PairwiseGlobal => true,
                CollectiveKind::InterNode => topo.local_of(src) == topo.local_of(dst),
                CollectiveKind::IntraNode => topo.node_of(src) == topo.node_of(dst),
            };
            if same_group {
                log.push((src, dst));
            }
        }
    }
    log
}

/// Posted send/recv pairs per rank: group size minus one, exactly.
pub fn count_launches(desc: &CollectiveDescriptor, topo: &ClusterTopology) -> usize {
    desc.kind.group_size(topo) - 1
}

/// Simulated cost of one collective phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseCost {
    pub phase: &'static str,
    pub kind: CollectiveKind,
    pub launches_per_rank: usize,
    pub total_messages: usize,
    pub bytes_inter: u64,
    pub bytes_intra: u64,
    pub time_s: f64,
}

pub fn simulate_all2all(desc: &CollectiveDescriptor, topo: &ClusterTopology) -> PhaseCost {
    let world = topo.world_size();
    let launches = count_launches(desc, topo);

    let mut node_in = vec![0u64; topo.n];
    let mut node_out = vec![0u64; topo.n];
    let mut rank_in = vec![0u64; world];
    let mut rank_out = vec![0u64; world];
    let mut flows = std::collections::BTreeSet::new();
    let (mut bytes_inter, mut bytes_intra) = (0u64, 0u64);

    #[allow(clippy::needless_range_loop)]
    for src in 0..world {
        for dst in 0..world {
            let b = desc.bytes.get(src, dst);
            if b == 0 || src == dst {
                continue;
            }
            let (sn, dn) = (topo.node_of(src), topo.node_of(dst));
            if sn != dn {
                bytes_inter += b;
                node_out[sn] += b;
                node_in[dn] += b;
                flows.insert((sn, dn));
            } else {
                bytes_intra += b;
                rank_out[src] += b;
                rank_in[dst] += b;
            }
        }
    }

    let congestion = (flows.len() as f64 / topo.bisection_capacity).max(1.0);
    let eff_inter_bw = topo.inter_bw / congestion;
    let inter_wire =
        (0..topo.n).map(|k| node_in[k].max(node_out[k]) as f64 / eff_inter_bw).fold(0.0, f64::max);
    let intra_wire =
        (0..world).map(|r| rank_in[r].max(rank_out[r]) as f64 / topo.intra_bw).fold(0.0, f64::max);

    PhaseCost {
        phase: desc.phase,
        kind: desc.kind,
        launches_per_rank: launches,
        total_messages: world * launches,
        bytes_inter,
        bytes_intra,
        time_s: topo.launch_overhead * launches as f64 + inter_wire + intra_wire,
    }
}

/// Cost of one full MoE layer pass.
#[derive(Debug, Clone)]
pub struct CostReport {
    pub phases: Vec<PhaseCost>,
    /// Sum of all collective phase times.
    pub all2all_time: f64,
    /// Sum over inter-node phases only (zero in single-level mode, whose
    /// one group mixes link classes).
    pub inter_time: f64,
    /// Sum over intra-node phases only.
    pub intra_time: f64,
    /// Wall-clock expert time: busiest rank's admitted tokens at the
    /// configured per-rank MAC rate; ranks compute concurrently.
    pub compute_time: f64,
    /// Configured constant for everything outside the MoE layer path.
    pub other_time: f64,
    pub total_time: f64,
    pub all2all_ratio: f64,
    /// Total expert MACs across all ranks.
    pub expert_macs: u64,
    pub routing_macs: u64,
}

/// Prices a dispatch plan's collective schedule plus expert compute.
/// Expert weights are never materialized here; only (d, d_ff) matter.
pub fn simulate_layer(
    topo: &ClusterTopology,
    plan: &crate::dispatch::DispatchPlan,
    d_ff: usize,
    compute_rate: f64,
    other_time: f64,
    routing_macs: u64,
) -> CostReport {
    let phases: Vec<PhaseCost> =
        plan.schedule.iter().map(|desc| simulate_all2all(desc, topo)).collect();
    let all2all_time: f64 = phases.iter().map(|p| p.time_s).sum();
    // `+ 0.0` turns the empty sum's -0.0 into +0.0 for clean display
    let inter_time: f64 = phases
        .iter()
        .filter(|p| p.kind == CollectiveKind::InterNode)
        .map(|p| p.time_s)
        .sum::<f64>()
        + 0.0;
    let intra_time: f64 = phases
        .iter()
        .filter(|p| p.kind == CollectiveKind::IntraNode)
        .map(|p| p.time_s)
        .sum::<f64>()
        + 0.0;

    let macs_per_token = crate::expert::ExpertBank::forward_macs(plan.d, d_ff);
    let busiest = plan.admitted_per_rank.iter().copied().max().unwrap_or(0);
    let compute_time = busiest as f64 * macs_per_token as f64 / compute_rate;
    let admitted: usize = plan.admitted_per_rank.iter().sum();
    let expert_macs = admitted as u64 * macs_per_token;

    let total_time = all2all_time + compute_time + other_time;
    let all2all_ratio = if total_time > 0.0 { all2all_time / total_time } else { 0.0 };
    CostReport {
        phases,
        all2all_time,
        inter_time,
        intra_time,
        compute_time,
        other_time,
        total_time,
        all2all_ratio,
        expert_macs,
        routing_macs,
    }
}
