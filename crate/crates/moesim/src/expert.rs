//! The expert payload: a two-layer feed-forward network with erf GELU.
//!
//! One expert per (node, local slot) pair, parameters independent across
//! experts, initialization seeded so banks are bit-reproducible.

use crate::mat::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExpertError {
    #[error("input length {got} does not match hidden size {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("expert index (node {node}, local {local}) out of range")]
    IndexOutOfRange { node: usize, local: usize },
}

/// Exact GELU: x/2 * (1 + erf(x / sqrt(2))). No tanh approximation, so the
/// value is reproducible to machine precision across implementations.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// One feed-forward expert: y = W2 * GELU(W1*x + b1) + b2.
#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    /// d_ff x d.
    pub w1: Mat,
    pub b1: Vec<f64>,
    /// d x d_ff.
    pub w2: Mat,
    pub b2: Vec<f64>,
}

/// All n*m experts, indexed by node-major (i, j) -> i*m + j.
#[derive(Debug, Clone)]
pub struct ExpertBank {
    pub experts: Vec<Expert>,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub d_ff: usize,
}

impl ExpertBank {
    pub fn expert(&self, node: usize, local: usize) -> Result<&Expert, ExpertError> {
        if node >= self.n || local >= self.m {
            return Err(ExpertError::IndexOutOfRange { node, local });
        }
        Ok(&self.experts[node * self.m + local])
    }

    /// MACs of one expert forward pass; bias adds excluded.
    pub fn forward_macs(d: usize, d_ff: usize) -> u64 {
        2 * d as u64 * d_ff as u64
    }
}

pub fn expert_forward(expert: &Expert, x: &[f64]) -> Result<Vec<f64>, ExpertError> {
    if x.len() != expert.w1.cols {
        return Err(ExpertError::ShapeMismatch { expected: expert.w1.cols, got: x.len() });
    }
    let mut macs = 0;
    let mut h = expert.w1.matvec(x, &mut macs);
    for (hi, bi) in h.iter_mut().zip(&expert.b1) {
        *hi = gelu(*hi + bi);
    }
    let mut y = expert.w2.matvec(&h, &mut macs);
    for (yi, bi) in y.iter_mut().zip(&expert.b2) {
        *yi += bi;
    }
    Ok(y)
}

/// Weights uniform in [-1/sqrt(d), 1/sqrt(d)) for W1 and
/// [-1/sqrt(d_ff), 1/sqrt(d_ff)) for W2, biases zero, experts drawn
/// sequentially in (node, local) order from one seeded stream.
pub fn init_bank(seed: u64, n: usize, m: usize, d: usize, d_ff: usize) -> ExpertBank {
    assert!(n >= 1 && m >= 1 && d >= 1 && d_ff >= 1, "positive dims required");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound1 = 1.0 / (d as f64).sqrt();
    let bound2 = 1.0 / (d_ff as f64).sqrt();
    let experts = (0..n * m)
        .map(|_| Expert {
            w1: Mat::uniform(&mut rng, d_ff, d, -bound1, bound1),
            b1: vec![0.0; d_ff],
            w2: Mat::uniform(&mut rng, d, d_ff, -bound2, bound2),
            b2: vec![0.0; d],
        })
        .collect();
    ExpertBank { experts, n, m, d, d_ff }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_zero_output() {
        let e = Expert {
            w1: Mat::zeros(4, 3),
            b1: vec![0.0; 4],
            w2: Mat::zeros(3, 4),
            b2: vec![0.0; 3],
        };
        assert_eq!(expert_forward(&e, &[1.0, -2.0, 3.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn zero_input_passes_through_b2() {
        // GELU(0) = 0, so with b1 = 0 the first layer contributes nothing
        let mut e = init_bank(3, 1, 1, 3, 5).experts.remove(0);
        e.b2 = vec![0.25, -0.5, 1.0];
        assert_eq!(expert_forward(&e, &[0.0, 0.0, 0.0]).unwrap(), e.b2);
    }

    #[test]
    fn hand_evaluated_two_by_two() {
        let e = Expert {
            w1: Mat::from_rows(&[&[1.0, 0.0], &[0.5, -0.5]]),
            b1: vec![0.1, 0.2],
            w2: Mat::from_rows(&[&[2.0, 1.0], &[0.0, 3.0]]),
            b2: vec![0.05, -0.05],
        };
        let x = [0.7, -0.3];
        // scalar-by-scalar evaluation with independent gelu arithmetic
        let h1 = 1.0 * x[0] + 0.0 * x[1] + 0.1;
        let h2 = 0.5 * x[0] - 0.5 * x[1] + 0.2;
        let g = |v: f64| 0.5 * v * (1.0 + libm::erf(v / 2.0_f64.sqrt()));
        let want = [2.0 * g(h1) + 1.0 * g(h2) + 0.05, 3.0 * g(h2) - 0.05];
        let got = expert_forward(&e, &x).unwrap();
        for (a, b) in got.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        // large positive is near identity, large negative near zero
        assert!((gelu(10.0) - 10.0).abs() < 1e-12);
        assert!(gelu(-10.0).abs() < 1e-12);
        // symmetry: gelu(x) - gelu(-x) = x
        for x in [0.3, 1.7, 2.9] {
            assert!((gelu(x) - gelu(-x) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn bank_is_seed_deterministic() {
        let a = init_bank(9, 2, 3, 4, 6);
        let b = init_bank(9, 2, 3, 4, 6);
        assert_eq!(a.experts, b.experts);
        let c = init_bank(10, 2, 3, 4, 6);
        assert_ne!(a.experts[0], c.experts[0]);
    }

    #[test]
    fn experts_are_pairwise_distinct() {
        let bank = init_bank(0, 2, 4, 4, 8);
        for i in 0..bank.experts.len() {
            for j in i + 1..bank.experts.len() {
                assert_ne!(bank.experts[i], bank.experts[j], "experts {i} and {j} collide");
            }
        }
    }

    #[test]
    fn init_bounds_hold() {
        let bank = init_bank(0, 1, 2, 4, 8);
        let b1 = 1.0 / 4.0_f64.sqrt();
        let b2 = 1.0 / 8.0_f64.sqrt();
        for e in &bank.experts {
            assert!(e.w1.iter().all(|v| (-b1..b1).contains(&v)));
            assert!(e.w2.iter().all(|v| (-b2..b2).contains(&v)));
            assert!(e.b1.iter().all(|&v| v == 0.0));
            assert!(e.b2.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn indexing_is_node_major() {
        let bank = init_bank(1, 3, 2, 2, 2);
        assert_eq!(bank.expert(2, 1).unwrap(), &bank.experts[5]);
        assert_eq!(
            bank.expert(3, 0).unwrap_err(),
            ExpertError::IndexOutOfRange { node: 3, local: 0 }
        );
    }

    #[test]
    fn forward_mac_count() {
        assert_eq!(ExpertBank::forward_macs(768, 3072), 2 * 768 * 3072);
    }
}
