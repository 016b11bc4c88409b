//! Named experiment scenarios. Each runner routes a synthetic batch,
//! prices the dispatch plan on the cluster model, and renders CSV with a
//! config hash on every row.

use super::config::ScenarioConfig;
use super::HarnessError;
use crate::balance::{compute_single_stats, compute_stats, single_level_lb_loss};
use crate::dispatch::{build_plan, DispatchConfig, DispatchPlan, TokenBatch};
use crate::netsim::{simulate_layer, CollectiveKind, CostReport};
use crate::router::{
    route_token_with, routing_flops, RouterMode, RouterParams, RoutingDecision, TieBreak,
};

/// Reported samples are sequences of this many tokens.
pub const SAMPLE_SEQ_LEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingKind {
    Weak,
    Strong,
}

impl ScalingKind {
    fn name(self) -> &'static str {
        match self {
            ScalingKind::Weak => "weak",
            ScalingKind::Strong => "strong",
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable sub-seed for one (stream, a, b) cell of a sweep. Stream tags:
/// 1 router weights, 2 token batch.
pub(crate) fn derive_seed(base: u64, stream: u64, a: u64, b: u64) -> u64 {
    mix(base.wrapping_add(mix(stream)).wrapping_add(mix(a ^ 0xA5A5_5A5A)).wrapping_add(mix(b)))
}

pub(crate) fn mode_name(mode: RouterMode) -> &'static str {
    match mode {
        RouterMode::SingleLevel => "single_level",
        RouterMode::BiLevel => "bi_level",
    }
}

/// One routed, planned, and priced layer pass.
pub(crate) struct LayerRun {
    pub decisions: Vec<RoutingDecision>,
    pub batch: TokenBatch,
    pub plan: DispatchPlan,
    pub report: CostReport,
}

pub(crate) fn run_layer(
    cfg: &ScenarioConfig,
    mode: RouterMode,
    n_nodes: usize,
    t_tokens: usize,
) -> Result<LayerRun, HarnessError> {
    let topo = cfg.topology(n_nodes)?;
    let (m, d) = (cfg.gpus_per_node, cfg.hidden_size);
    let params =
        RouterParams::init(mode, derive_seed(cfg.seed, 1, n_nodes as u64, d as u64), n_nodes, m, d);
    // Batch depends on cluster size and token count, never on mode, so
    // both modes see the same data.
    let batch = TokenBatch::random(
        derive_seed(cfg.seed, 2, n_nodes as u64, t_tokens as u64),
        t_tokens,
        d,
        topo.world_size(),
    );
    let mut macs = 0u64;
    let mut decisions = Vec::with_capacity(t_tokens);
    for x in &batch.data {
        decisions.push(route_token_with(&params, x, &mut macs, TieBreak::Lowest)?);
    }
    debug_assert_eq!(macs, routing_flops(mode, n_nodes, m, t_tokens, d, 1));
    let plan = build_plan(
        &decisions,
        &batch,
        &topo,
        &DispatchConfig {
            capacity_factor: cfg.capacity_factor,
            bytes_per_element: cfg.bytes_per_element,
            policy: Default::default(),
        },
    )?;
    let report = simulate_layer(
        &topo,
        &plan,
        cfg.intermediate_size,
        cfg.compute_rate,
        cfg.non_moe_time,
        macs,
    );
    Ok(LayerRun { decisions, batch, plan, report })
}

struct LossColumns {
    inter: f64,
    intra: f64,
    total: f64,
    unscaled: f64,
}

fn loss_columns(
    cfg: &ScenarioConfig,
    mode: RouterMode,
    n_nodes: usize,
    decisions: &[RoutingDecision],
) -> Result<LossColumns, HarnessError> {
    let m = cfg.gpus_per_node;
    match mode {
        RouterMode::SingleLevel => {
            let (f, p) = compute_single_stats(decisions, n_nodes * m, m)?;
            let loss = single_level_lb_loss(&f, &p, cfg.single_level_alpha);
            Ok(LossColumns {
                inter: loss,
                intra: 0.0,
                total: loss,
                unscaled: single_level_lb_loss(&f, &p, 1.0),
            })
        }
        RouterMode::BiLevel => {
            let stats = compute_stats(decisions, n_nodes, m)?;
            let inter = single_level_lb_loss(&stats.f_nodes, &stats.p_nodes, cfg.alpha);
            let intra = single_level_lb_loss(&stats.f_local, &stats.q_local, cfg.beta);
            Ok(LossColumns {
                inter,
                intra,
                total: inter + intra,
                unscaled: single_level_lb_loss(&stats.f_nodes, &stats.p_nodes, 1.0)
                    + single_level_lb_loss(&stats.f_local, &stats.q_local, 1.0),
            })
        }
    }
}

/// Throughput sweep over `node_list`. Weak scaling grows the global batch
/// with the cluster; strong scaling fixes it at the largest cluster's size.
pub fn run_scaling(cfg: &ScenarioConfig, kind: ScalingKind) -> Result<String, HarnessError> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let m = cfg.gpus_per_node;
    let n_max = *cfg.node_list.iter().max().expect("validated non-empty");
    let mut out = String::from(
        "scenario,mode,n_nodes,gpus_per_node,tokens_per_step,step_time_s,tokens_per_s,\
         samples_per_s,all2all_time_s,inter_time_s,intra_time_s,compute_time_s,all2all_ratio,\
         dropped_tokens,routing_macs,expert_macs,inter_lb,intra_lb,lb_total,unscaled_lb,\
         config_hash\n",
    );
    for mode in cfg.mode.modes() {
        for &n in &cfg.node_list {
            let t = match kind {
                ScalingKind::Weak => cfg.micro_batch_size * n * m,
                ScalingKind::Strong => cfg.micro_batch_size * n_max * m,
            };
            let run = run_layer(cfg, mode, n, t)?;
            let loss = loss_columns(cfg, mode, n, &run.decisions)?;
            let step_time = cfg.num_layers as f64 * run.report.total_time;
            let tokens_per_s = t as f64 / step_time;
            let r = &run.report;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                kind.name(),
                mode_name(mode),
                n,
                m,
                t,
                step_time,
                tokens_per_s,
                tokens_per_s / SAMPLE_SEQ_LEN as f64,
                r.all2all_time,
                r.inter_time,
                r.intra_time,
                r.compute_time,
                r.all2all_ratio,
                run.plan.dropped,
                r.routing_macs,
                r.expert_macs,
                loss.inter,
                loss.intra,
                loss.total,
                loss.unscaled,
                hash,
            ));
        }
    }
    Ok(out)
}

/// One row per labeled config: both modes' throughput on that config's
/// cluster and the bi/single ratio.
pub fn run_model_size_sweep(entries: &[(String, ScenarioConfig)]) -> Result<String, HarnessError> {
    let mut out = String::from(
        "label,hidden_size,intermediate_size,num_layers,micro_batch_size,n_nodes,gpus_per_node,\
         tokens_per_step,single_tokens_per_s,bi_tokens_per_s,bi_over_single,config_hash\n",
    );
    for (label, cfg) in entries {
        cfg.validate()?;
        let t = cfg.micro_batch_size * cfg.n_nodes * cfg.gpus_per_node;
        let mut per_mode = [0.0f64; 2];
        for (slot, mode) in [RouterMode::SingleLevel, RouterMode::BiLevel].into_iter().enumerate() {
            let run = run_layer(cfg, mode, cfg.n_nodes, t)?;
            let step_time = cfg.num_layers as f64 * run.report.total_time;
            per_mode[slot] = t as f64 / step_time;
        }
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            label,
            cfg.hidden_size,
            cfg.intermediate_size,
            cfg.num_layers,
            cfg.micro_batch_size,
            cfg.n_nodes,
            cfg.gpus_per_node,
            t,
            per_mode[0],
            per_mode[1],
            per_mode[1] / per_mode[0],
            cfg.config_hash(),
        ));
    }
    Ok(out)
}

fn kind_name(kind: CollectiveKind) -> &'static str {
    match kind {
        CollectiveKind::PairwiseGlobal => "pairwise_global",
        CollectiveKind::InterNode => "inter_node",
        CollectiveKind::IntraNode => "intra_node",
    }
}

/// Single-layer phase table for the configured cluster, one block per
/// mode: every collective phase, then compute/other/total summary rows and
/// the all2all_ratio row.
pub fn run_breakdown(cfg: &ScenarioConfig) -> Result<String, HarnessError> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let t = cfg.micro_batch_size * cfg.n_nodes * cfg.gpus_per_node;
    let mut out = String::from(
        "mode,phase,kind,launches_per_rank,messages,bytes_inter,bytes_intra,time_s,config_hash\n",
    );
    for mode in cfg.mode.modes() {
        let run = run_layer(cfg, mode, cfg.n_nodes, t)?;
        let r = &run.report;
        let name = mode_name(mode);
        for p in &r.phases {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                name,
                p.phase,
                kind_name(p.kind),
                p.launches_per_rank,
                p.total_messages,
                p.bytes_inter,
                p.bytes_intra,
                p.time_s,
                hash,
            ));
        }
        let mut summary = |phase: &str, time: f64| {
            out.push_str(&format!("{name},{phase},summary,0,0,0,0,{time},{hash}\n"));
        };
        summary("all2all_total", r.all2all_time);
        summary("inter_total", r.inter_time);
        summary("intra_total", r.intra_time);
        summary("compute", r.compute_time);
        summary("other", r.other_time);
        summary("total", r.total_time);
        summary("all2all_ratio", r.all2all_ratio);
    }
    Ok(out)
}

fn chunk_bounds(t: usize, c: usize) -> Vec<(usize, usize)> {
    let base = t / c;
    let extra = t % c;
    let mut bounds = Vec::with_capacity(c);
    let mut start = 0;
    for i in 0..c {
        let len = base + usize::from(i < extra);
        bounds.push((start, start + len));
        start += len;
    }
    bounds
}

/// Chunked-execution model: chunk i+1's collectives overlap chunk i's
/// expert compute, so each steady-state stage costs max(comm, compute).
/// Reports total layer time and the exact All2All operation count per
/// chunk count.
pub fn run_pipeline(cfg: &ScenarioConfig) -> Result<String, HarnessError> {
    cfg.validate()?;
    let hash = cfg.config_hash();
    let t = cfg.micro_batch_size * cfg.n_nodes * cfg.gpus_per_node;
    if let Some(&c) = cfg.chunk_list.iter().find(|&&c| c > t) {
        return Err(HarnessError::Scenario(format!("chunk count {c} exceeds token count {t}")));
    }
    let topo = cfg.topology(cfg.n_nodes)?;
    let dcfg = DispatchConfig {
        capacity_factor: cfg.capacity_factor,
        bytes_per_element: cfg.bytes_per_element,
        policy: Default::default(),
    };
    let mut out = String::from("mode,chunks,all2all_ops,time_s,config_hash\n");
    for mode in cfg.mode.modes() {
        // Route once per mode; chunking repartitions the same decisions.
        let full = run_layer(cfg, mode, cfg.n_nodes, t)?;
        for &c in &cfg.chunk_list {
            let mut ops = 0usize;
            let mut comm = Vec::with_capacity(c);
            let mut compute = Vec::with_capacity(c);
            for (lo, hi) in chunk_bounds(t, c) {
                let piece = TokenBatch {
                    data: full.batch.data[lo..hi].to_vec(),
                    source_ranks: full.batch.source_ranks[lo..hi].to_vec(),
                    d: full.batch.d,
                };
                let plan = build_plan(&full.decisions[lo..hi], &piece, &topo, &dcfg)?;
                ops += plan.schedule.len();
                let report =
                    simulate_layer(&topo, &plan, cfg.intermediate_size, cfg.compute_rate, 0.0, 0);
                comm.push(report.all2all_time);
                compute.push(report.compute_time);
            }
            let mut total = comm[0];
            for i in 1..c {
                total += comm[i].max(compute[i - 1]);
            }
            total += compute[c - 1];
            total += cfg.non_moe_time;
            out.push_str(&format!("{},{},{},{},{}\n", mode_name(mode), c, ops, total, hash,));
        }
    }
    Ok(out)
}
