//! Lowers routing decisions to a capacity-constrained dispatch plan and an
//! ordered collective schedule, then executes the plan token by token.
//!
//! Capacity is enforced at both buffer levels in both modes: first each
//! destination node admits up to ceil((T/n) * cf) tokens, then each rank
//! admits up to ceil((T/N) * cf) of the node-admitted ones. Earlier token
//! index wins. Overflowing tokens are dropped to the residual path: gate 0,
//! destination = source, zero wire bytes, zero output.
//!
//! Schedules: single-level is dispatch + return over one global group; the
//! bi-level schedule is exactly four phases, the dispatch pair
//!
//!   inter: (src node k, slot l) -> (dest node i, slot l)
//!   intra: (i, l) -> (i, dest slot j)
//!
//! and their transposes for the return trip.

use crate::expert::{expert_forward, ExpertBank, ExpertError};
use crate::netsim::{ByteMatrix, CollectiveDescriptor, CollectiveKind};
use crate::router::{RouteProbs, RouterMode, RoutingDecision};
use crate::topology::ClusterTopology;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DispatchError {
    #[error("decision batch and token batch lengths differ ({decisions} vs {tokens})")]
    BatchLengthMismatch { decisions: usize, tokens: usize },
    #[error("mixed routing modes in one batch")]
    MixedModes,
    #[error("destination or source rank out of range for the topology")]
    RankOutOfRange,
    #[error("plan was built for {plan} tokens of width {plan_d}, got {got} of width {got_d}")]
    PlanShapeMismatch { plan: usize, got: usize, plan_d: usize, got_d: usize },
    #[error(transparent)]
    Expert(#[from] ExpertError),
}

/// Tokens beyond capacity are dropped; their residual (the unrouted input)
/// is the caller's concern. The only policy implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverflowPolicy {
    #[default]
    DropWithResidual,
}

#[derive(Debug, Clone, Copy)]
pub struct DispatchConfig {
    pub capacity_factor: f64,
    /// Payload bytes per tensor element on the wire.
    pub bytes_per_element: usize,
    pub policy: OverflowPolicy,
}

impl Default for DispatchConfig {
    fn default() -> Self {
        DispatchConfig {
            capacity_factor: 2.0,
            bytes_per_element: 2,
            policy: OverflowPolicy::DropWithResidual,
        }
    }
}

/// T tokens of width d with their source ranks.
#[derive(Debug, Clone)]
pub struct TokenBatch {
    pub data: Vec<Vec<f64>>,
    pub source_ranks: Vec<usize>,
    pub d: usize,
}

impl TokenBatch {
    /// Values uniform in [-1, 1), sources round-robin across ranks.
    pub fn random(seed: u64, t: usize, d: usize, world_size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..t).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let source_ranks = (0..t).map(|i| i % world_size).collect();
        TokenBatch { data, source_ranks, d }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Per-destination admission budget: ceil((T / destinations) * cf).
pub fn capacity(t: usize, destinations: usize, cf: f64) -> usize {
    if t == 0 {
        return 0;
    }
    ((t as f64 / destinations as f64) * cf).ceil() as usize
}

/// One token's final placement.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAssignment {
    pub source_rank: usize,
    pub dest_node: usize,
    pub dest_local: usize,
    pub gate: f64,
    pub dropped: bool,
}

#[derive(Debug, Clone)]
pub struct DispatchPlan {
    pub mode: RouterMode,
    pub d: usize,
    pub assignments: Vec<TokenAssignment>,
    pub node_capacity: usize,
    pub rank_capacity: usize,
    pub admitted_per_node: Vec<usize>,
    pub admitted_per_rank: Vec<usize>,
    pub dropped: usize,
    pub schedule: Vec<CollectiveDescriptor>,
}

pub fn build_plan(
    decisions: &[RoutingDecision],
    batch: &TokenBatch,
    topo: &ClusterTopology,
    cfg: &DispatchConfig,
) -> Result<DispatchPlan, DispatchError> {
    let t = decisions.len();
    if t != batch.len() {
        return Err(DispatchError::BatchLengthMismatch { decisions: t, tokens: batch.len() });
    }
    let mode = match decisions.first().map(|d| &d.probs) {
        Some(RouteProbs::Single(_)) | None => RouterMode::SingleLevel,
        Some(RouteProbs::Bi { .. }) => RouterMode::BiLevel,
    };
    let world = topo.world_size();
    for (dec, &src) in decisions.iter().zip(&batch.source_ranks) {
        let mixed = matches!(
            (&dec.probs, mode),
            (RouteProbs::Single(_), RouterMode::BiLevel)
                | (RouteProbs::Bi { .. }, RouterMode::SingleLevel)
        );
        if mixed {
            return Err(DispatchError::MixedModes);
        }
        if dec.dest_node >= topo.n || dec.dest_local >= topo.m || src >= world {
            return Err(DispatchError::RankOutOfRange);
        }
    }

    let node_capacity = capacity(t, topo.n, cfg.capacity_factor);
    let rank_capacity = capacity(t, world, cfg.capacity_factor);

    // node-level admission first, then rank-level among the survivors,
    // both in token-index order
    let mut admitted_per_node = vec![0usize; topo.n];
    let mut admitted_per_rank = vec![0usize; world];
    let mut assignments = Vec::with_capacity(t);
    let mut dropped = 0;
    let mut node_admitted = vec![false; t];
    for (idx, dec) in decisions.iter().enumerate() {
        if admitted_per_node[dec.dest_node] < node_capacity {
            admitted_per_node[dec.dest_node] += 1;
            node_admitted[idx] = true;
        }
    }
    for (idx, dec) in decisions.iter().enumerate() {
        let src = batch.source_ranks[idx];
        let dest_rank = topo.rank_of(dec.dest_node, dec.dest_local);
        let admit = node_admitted[idx] && admitted_per_rank[dest_rank] < rank_capacity;
        if admit {
            admitted_per_rank[dest_rank] += 1;
            assignments.push(TokenAssignment {
                source_rank: src,
                dest_node: dec.dest_node,
                dest_local: dec.dest_local,
                gate: dec.gate,
                dropped: false,
            });
        } else {
            if node_admitted[idx] {
                // undo the node-level grant so counts reflect final admission
                admitted_per_node[dec.dest_node] -= 1;
            }
            dropped += 1;
            assignments.push(TokenAssignment {
                source_rank: src,
                dest_node: topo.node_of(src),
                dest_local: topo.local_of(src),
                gate: 0.0,
                dropped: true,
            });
        }
    }

    let token_bytes = (batch.d * cfg.bytes_per_element) as u64;
    let schedule = match mode {
        RouterMode::SingleLevel => {
            let mut dispatch = ByteMatrix::new(world);
            for a in assignments.iter().filter(|a| !a.dropped) {
                let dst = topo.rank_of(a.dest_node, a.dest_local);
                if a.source_rank != dst {
                    dispatch.add(a.source_rank, dst, token_bytes);
                }
            }
            vec![
                CollectiveDescriptor {
                    kind: CollectiveKind::PairwiseGlobal,
                    phase: "dispatch",
                    bytes: dispatch.clone(),
                },
                CollectiveDescriptor {
                    kind: CollectiveKind::PairwiseGlobal,
                    phase: "return",
                    bytes: dispatch.transpose(),
                },
            ]
        }
        RouterMode::BiLevel => {
            let mut inter = ByteMatrix::new(world);
            let mut intra = ByteMatrix::new(world);
            for a in assignments.iter().filter(|a| !a.dropped) {
                let src_local = topo.local_of(a.source_rank);
                let staging = topo.rank_of(a.dest_node, src_local);
                if a.source_rank != staging {
                    inter.add(a.source_rank, staging, token_bytes);
                }
                let dest = topo.rank_of(a.dest_node, a.dest_local);
                if staging != dest {
                    intra.add(staging, dest, token_bytes);
                }
            }
            vec![
                CollectiveDescriptor {
                    kind: CollectiveKind::InterNode,
                    phase: "inter_dispatch",
                    bytes: inter.clone(),
                },
                CollectiveDescriptor {
                    kind: CollectiveKind::IntraNode,
                    phase: "intra_dispatch",
                    bytes: intra.clone(),
                },
                CollectiveDescriptor {
                    kind: CollectiveKind::IntraNode,
                    phase: "intra_return",
                    bytes: intra.transpose(),
                },
                CollectiveDescriptor {
                    kind: CollectiveKind::InterNode,
                    phase: "inter_return",
                    bytes: inter.transpose(),
                },
            ]
        }
    };

    Ok(DispatchPlan {
        mode,
        d: batch.d,
        assignments,
        node_capacity,
        rank_capacity,
        admitted_per_node,
        admitted_per_rank,
        dropped,
        schedule,
    })
}

/// Result of walking a plan: per-token outputs and the expert work done.
#[derive(Debug, Clone)]
pub struct ExecutionOutcome {
    pub outputs: Vec<Vec<f64>>,
    pub expert_macs: u64,
}

/// Walks tokens through the plan's staged hops, evaluates gate * E(x) at
/// the destination rank, and returns outputs in token order. Dropped
/// tokens yield zero vectors. Communication is bookkeeping only, so the
/// result is bit-identical to evaluating each token in place.
pub fn execute_plan(
    plan: &DispatchPlan,
    bank: &ExpertBank,
    batch: &TokenBatch,
) -> Result<ExecutionOutcome, DispatchError> {
    if plan.assignments.len() != batch.len() || plan.d != batch.d {
        return Err(DispatchError::PlanShapeMismatch {
            plan: plan.assignments.len(),
            got: batch.len(),
            plan_d: plan.d,
            got_d: batch.d,
        });
    }
    let topo_m = bank.m;
    let mut location: Vec<usize> = plan.assignments.iter().map(|a| a.source_rank).collect();

    // hop sequence per admitted token, mirroring the collective schedule
    let hops: &[fn(&TokenAssignment, usize, usize) -> usize] = match plan.mode {
        RouterMode::SingleLevel => &[
            |a, _cur, m| a.dest_node * m + a.dest_local, // dispatch
        ],
        RouterMode::BiLevel => &[
            |a, cur, m| a.dest_node * m + cur % m, // inter_dispatch keeps the slot
            |a, _cur, m| a.dest_node * m + a.dest_local, // intra_dispatch
        ],
    };
    for hop in hops {
        for (idx, a) in plan.assignments.iter().enumerate() {
            if !a.dropped {
                location[idx] = hop(a, location[idx], topo_m);
            }
        }
    }

    let mut outputs = vec![vec![0.0; batch.d]; batch.len()];
    let mut admitted = 0u64;
    for (idx, a) in plan.assignments.iter().enumerate() {
        if a.dropped {
            continue;
        }
        debug_assert_eq!(location[idx], a.dest_node * topo_m + a.dest_local);
        let expert = bank.expert(a.dest_node, a.dest_local)?;
        let mut y = expert_forward(expert, &batch.data[idx])?;
        for v in &mut y {
            *v *= a.gate;
        }
        outputs[idx] = y;
        admitted += 1;
    }
    // return hops restore source locations; nothing numeric happens there
    Ok(ExecutionOutcome {
        outputs,
        expert_macs: admitted * ExpertBank::forward_macs(batch.d, bank.d_ff),
    })
}
