//! Cluster shape and the two orthogonal process-group partitions.
//!
//! A cluster is n nodes with m GPUs each. Global rank r lives on node
//! floor(r/m) at local slot r mod m. Two group families are derived:
//!
//! - intra groups: the m ranks of one node (fast links, one group per node)
//! - inter groups: the n ranks sharing a local slot (one group per slot)
//!
//! Each rank is in exactly one group of each family, and the two groups
//! intersect only at the rank itself. The inter-node all-to-all therefore
//! decomposes into m disjoint n-way collectives that can run concurrently.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("node and GPU counts must be at least 1 (got n={n}, m={m})")]
    ZeroCount { n: usize, m: usize },
    #[error("bandwidths must be positive (intra_bw={intra_bw}, inter_bw={inter_bw})")]
    NonPositiveBandwidth { intra_bw: f64, inter_bw: f64 },
    #[error("intra-node bandwidth {intra_bw} must be >= inter-node bandwidth {inter_bw}")]
    BandwidthOrder { intra_bw: f64, inter_bw: f64 },
    #[error("launch overhead must be >= 0 (got {0})")]
    NegativeOverhead(f64),
    #[error("bisection capacity must be positive (got {0})")]
    NonPositiveBisection(f64),
}

/// Link-cost parameters of the modeled fabric.
#[derive(Debug, Clone, Copy)]
pub struct LinkParams {
    /// Bytes/second between two GPUs of the same node.
    pub intra_bw: f64,
    /// Bytes/second through one node's aggregate external link.
    pub inter_bw: f64,
    /// Seconds per posted send/recv pair, independent of payload.
    pub launch_overhead: f64,
    /// Concurrent inter-node flows the fabric sustains at full rate.
    pub bisection_capacity: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            intra_bw: 600e9,
            inter_bw: 50e9,
            launch_overhead: 5e-5,
            bisection_capacity: 8.0,
        }
    }
}

/// Immutable cluster description shared by routing, dispatch, and netsim.
#[derive(Debug, Clone)]
pub struct ClusterTopology {
    /// Node count.
    pub n: usize,
    /// GPUs per node.
    pub m: usize,
    pub intra_bw: f64,
    pub inter_bw: f64,
    pub launch_overhead: f64,
    pub bisection_capacity: f64,
}

impl ClusterTopology {
    pub fn world_size(&self) -> usize {
        self.n * self.m
    }

    pub fn node_of(&self, rank: usize) -> usize {
        rank / self.m
    }

    pub fn local_of(&self, rank: usize) -> usize {
        rank % self.m
    }

    pub fn rank_of(&self, node: usize, local: usize) -> usize {
        node * self.m + local
    }
}

pub fn build_topology(
    n: usize,
    m: usize,
    link: LinkParams,
) -> Result<ClusterTopology, TopologyError> {
    if n == 0 || m == 0 {
        return Err(TopologyError::ZeroCount { n, m });
    }
    if link.intra_bw <= 0.0 || link.inter_bw <= 0.0 {
        return Err(TopologyError::NonPositiveBandwidth {
            intra_bw: link.intra_bw,
            inter_bw: link.inter_bw,
        });
    }
    if link.intra_bw < link.inter_bw {
        return Err(TopologyError::BandwidthOrder {
            intra_bw: link.intra_bw,
            inter_bw: link.inter_bw,
        });
    }
    if link.launch_overhead < 0.0 {
        return Err(TopologyError::NegativeOverhead(link.launch_overhead));
    }
    if link.bisection_capacity <= 0.0 {
        return Err(TopologyError::NonPositiveBisection(link.bisection_capacity));
    }
    Ok(ClusterTopology {
        n,
        m,
        intra_bw: link.intra_bw,
        inter_bw: link.inter_bw,
        launch_overhead: link.launch_overhead,
        bisection_capacity: link.bisection_capacity,
    })
}

/// The two orthogonal rank partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessGroups {
    /// `intra_groups[k]` = the m ranks of node k, ascending.
    pub intra_groups: Vec<Vec<usize>>,
    /// `inter_groups[l]` = the n ranks with local slot l, ascending.
    pub inter_groups: Vec<Vec<usize>>,
}

pub fn build_groups(topo: &ClusterTopology) -> ProcessGroups {
    let (n, m) = (topo.n, topo.m);
    let intra_groups = (0..n).map(|k| (k * m..(k + 1) * m).collect()).collect();
    let inter_groups = (0..m).map(|l| (0..n).map(|k| k * m + l).collect()).collect();
    ProcessGroups { intra_groups, inter_groups }
}
