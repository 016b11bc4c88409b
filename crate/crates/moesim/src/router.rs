//! Routing probabilities, destination selection, and exact MAC counters.
//!
//! Two routing schemes share one decision type:
//!
//! - single-level: one softmax over all N = n*m experts, top-k combine
//! - bi-level: softmax over n nodes picks the node, an independent softmax
//!   over m local slots picks the GPU within it, gate = p_node * q_local
//!
//! Logit computation is instrumented: every matvec adds rows*cols
//! multiply-accumulates to a caller-supplied counter, so complexity claims
//! are checked against actual work, not formulas alone.

use crate::mat::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RouterError {
    #[error("router must have at least one output row")]
    EmptyRouter,
    #[error("non-finite logit at row {0}")]
    NonFiniteLogit(usize),
    #[error("top-k count {k} out of range for {n} experts")]
    KOutOfRange { k: usize, n: usize },
    #[error("expected {expected} expert outputs, got {got}")]
    OutputCountMismatch { expected: usize, got: usize },
    #[error("operation requires {0} routing mode")]
    WrongMode(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouterMode {
    SingleLevel,
    BiLevel,
}

/// Argmax tie handling. `Highest` exists only as a fault-injection target
/// for the verification suite; all production paths use `Lowest`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    Lowest,
    Highest,
}

/// Router weights, identical on every simulated rank.
#[derive(Debug, Clone)]
pub struct RouterParams {
    pub mode: RouterMode,
    /// Single-level router, N x d.
    pub w_r: Option<Mat>,
    /// Bi-level inter-node router, n x d.
    pub w_p: Option<Mat>,
    /// Bi-level intra-node router, m x d, shared by all nodes.
    pub w_q: Option<Mat>,
    pub n: usize,
    pub m: usize,
    pub d: usize,
}

impl RouterParams {
    pub fn single_level(w_r: Mat, n: usize, m: usize) -> Self {
        assert_eq!(w_r.rows, n * m, "single-level router needs one row per expert");
        let d = w_r.cols;
        RouterParams {
            mode: RouterMode::SingleLevel,
            w_r: Some(w_r),
            w_p: None,
            w_q: None,
            n,
            m,
            d,
        }
    }

    pub fn bi_level(w_p: Mat, w_q: Mat) -> Self {
        assert_eq!(w_p.cols, w_q.cols, "router hidden sizes must agree");
        let (n, m, d) = (w_p.rows, w_q.rows, w_p.cols);
        RouterParams {
            mode: RouterMode::BiLevel,
            w_r: None,
            w_p: Some(w_p),
            w_q: Some(w_q),
            n,
            m,
            d,
        }
    }

    /// Seeded init, entries uniform in [-1/sqrt(d), 1/sqrt(d)).
    pub fn init(mode: RouterMode, seed: u64, n: usize, m: usize, d: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        match mode {
            RouterMode::SingleLevel => {
                let w_r = Mat::uniform(&mut rng, n * m, d, -bound, bound);
                RouterParams::single_level(w_r, n, m)
            }
            RouterMode::BiLevel => {
                let w_p = Mat::uniform(&mut rng, n, d, -bound, bound);
                let w_q = Mat::uniform(&mut rng, m, d, -bound, bound);
                RouterParams::bi_level(w_p, w_q)
            }
        }
    }

    /// Exact trainable-scalar count: N*d single-level, (n+m)*d bi-level.
    pub fn param_count(&self) -> usize {
        match self.mode {
            RouterMode::SingleLevel => self.n * self.m * self.d,
            RouterMode::BiLevel => (self.n + self.m) * self.d,
        }
    }
}

/// One token's routing outcome in either mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub dest_node: usize,
    pub dest_local: usize,
    /// Probability mass applied to the expert output: p_e for single-level,
    /// p_node * q_local for bi-level. Always in [0, 1].
    pub gate: f64,
    pub probs: RouteProbs,
}

/// The probability vectors behind a decision.
#[derive(Debug, Clone, PartialEq)]
pub enum RouteProbs {
    /// N expert probabilities.
    Single(Vec<f64>),
    /// n node probabilities and m local-slot probabilities.
    Bi { node: Vec<f64>, local: Vec<f64> },
}

/// Softmax of W*x with max subtraction. Adds rows*cols MACs to `macs`.
pub fn compute_probabilities(w: &Mat, x: &[f64], macs: &mut u64) -> Result<Vec<f64>, RouterError> {
    if w.rows == 0 {
        return Err(RouterError::EmptyRouter);
    }
    let logits = w.matvec(x, macs);
    if let Some(bad) = logits.iter().position(|v| !v.is_finite()) {
        return Err(RouterError::NonFiniteLogit(bad));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / sum).collect())
}

/// Index of the largest probability; ties resolved per `tie`.
pub fn argmax(probs: &[f64], tie: TieBreak) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        let better = match tie {
            TieBreak::Lowest => p > probs[best],
            TieBreak::Highest => p >= probs[best],
        };
        if better {
            best = i;
        }
    }
    best
}

/// y = sum over the k highest-probability experts of p_e * output_e.
/// Ties broken toward lower indices.
pub fn top_k_combine(
    probs: &[f64],
    k: usize,
    expert_outputs: &[Vec<f64>],
) -> Result<Vec<f64>, RouterError> {
    let n = probs.len();
    if k == 0 || k > n {
        return Err(RouterError::KOutOfRange { k, n });
    }
    if expert_outputs.len() != n {
        return Err(RouterError::OutputCountMismatch { expected: n, got: expert_outputs.len() });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap().then(a.cmp(&b)));
    let d = expert_outputs[0].len();
    let mut y = vec![0.0; d];
    for &e in order.iter().take(k) {
        for (yi, vi) in y.iter_mut().zip(&expert_outputs[e]) {
            *yi += probs[e] * vi;
        }
    }
    Ok(y)
}

/// Single-level top-1 decision; expert e maps to node e/m, slot e%m.
pub fn single_level_route(
    params: &RouterParams,
    x: &[f64],
    macs: &mut u64,
) -> Result<RoutingDecision, RouterError> {
    single_level_route_with(params, x, macs, TieBreak::Lowest)
}

pub fn single_level_route_with(
    params: &RouterParams,
    x: &[f64],
    macs: &mut u64,
    tie: TieBreak,
) -> Result<RoutingDecision, RouterError> {
    let w_r = params.w_r.as_ref().ok_or(RouterError::WrongMode("single-level"))?;
    let probs = compute_probabilities(w_r, x, macs)?;
    let e = argmax(&probs, tie);
    Ok(RoutingDecision {
        dest_node: e / params.m,
        dest_local: e % params.m,
        gate: probs[e],
        probs: RouteProbs::Single(probs),
    })
}

/// Bi-level top-1 decision: argmax over nodes, then argmax over local slots.
pub fn bi_level_route(
    w_p: &Mat,
    w_q: &Mat,
    x: &[f64],
    macs: &mut u64,
) -> Result<RoutingDecision, RouterError> {
    bi_level_route_with(w_p, w_q, x, macs, TieBreak::Lowest)
}

pub fn bi_level_route_with(
    w_p: &Mat,
    w_q: &Mat,
    x: &[f64],
    macs: &mut u64,
    tie: TieBreak,
) -> Result<RoutingDecision, RouterError> {
    let node_probs = compute_probabilities(w_p, x, macs)?;
    let local_probs = compute_probabilities(w_q, x, macs)?;
    let i = argmax(&node_probs, tie);
    let j = argmax(&local_probs, tie);
    Ok(RoutingDecision {
        dest_node: i,
        dest_local: j,
        gate: node_probs[i] * local_probs[j],
        probs: RouteProbs::Bi { node: node_probs, local: local_probs },
    })
}

/// Mode-dispatching convenience used by the harness.
pub fn route_token_with(
    params: &RouterParams,
    x: &[f64],
    macs: &mut u64,
    tie: TieBreak,
) -> Result<RoutingDecision, RouterError> {
    match params.mode {
        RouterMode::SingleLevel => single_level_route_with(params, x, macs, tie),
        RouterMode::BiLevel => bi_level_route_with(
            params.w_p.as_ref().ok_or(RouterError::WrongMode("bi-level"))?,
            params.w_q.as_ref().ok_or(RouterError::WrongMode("bi-level"))?,
            x,
            macs,
            tie,
        ),
    }
}

/// Closed-form logit MAC count for routing T tokens: n*m*T*d single-level,
/// (n+m)*T*d bi-level. Argmax/top-k selection contributes no MACs; k only
/// bounds-checks.
pub fn routing_flops(mode: RouterMode, n: usize, m: usize, t: usize, d: usize, k: usize) -> u64 {
    debug_assert!(k >= 1 && k <= n * m);
    let per_token = match mode {
        RouterMode::SingleLevel => n * m * d,
        RouterMode::BiLevel => (n + m) * d,
    };
    per_token as u64 * t as u64
}
