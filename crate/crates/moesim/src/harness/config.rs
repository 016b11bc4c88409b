//! Flat key=value scenario configuration with CLI overrides and a stable
//! content hash carried into every CSV row.

use crate::router::RouterMode;
use crate::topology::{build_topology, ClusterTopology, LinkParams, TopologyError};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {0} is not `key = value`")]
    Malformed(usize),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for key `{key}`")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

/// Which routing scheme(s) a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSelection {
    SingleLevel,
    BiLevel,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<RouterMode> {
        match self {
            ModeSelection::SingleLevel => vec![RouterMode::SingleLevel],
            ModeSelection::BiLevel => vec![RouterMode::BiLevel],
            ModeSelection::Both => vec![RouterMode::SingleLevel, RouterMode::BiLevel],
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            ModeSelection::SingleLevel => "single_level",
            ModeSelection::BiLevel => "bi_level",
            ModeSelection::Both => "both",
        }
    }
}

/// All scenario knobs. Defaults are the shipped calibration point.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mode: ModeSelection,
    pub n_nodes: usize,
    pub gpus_per_node: usize,
    pub intra_bw: f64,
    pub inter_bw: f64,
    pub launch_overhead: f64,
    pub bisection_capacity: f64,
    /// Tokens per GPU per step; tokens per step = this times world size.
    pub micro_batch_size: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub num_layers: usize,
    pub capacity_factor: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Coefficient for the flat baseline's balancing loss column.
    pub single_level_alpha: f64,
    pub seed: u64,
    /// Per-rank expert throughput, MACs/second.
    pub compute_rate: f64,
    pub bytes_per_element: usize,
    /// Per-layer time outside the MoE path (attention, norms, ...).
    pub non_moe_time: f64,
    pub node_list: Vec<usize>,
    pub chunk_list: Vec<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: ModeSelection::Both,
            n_nodes: 16,
            gpus_per_node: 8,
            intra_bw: 600e9,
            inter_bw: 50e9,
            launch_overhead: 5e-5,
            bisection_capacity: 8.0,
            micro_batch_size: 32,
            hidden_size: 768,
            intermediate_size: 3072,
            num_layers: 12,
            capacity_factor: 2.0,
            alpha: 0.005,
            beta: 0.005,
            single_level_alpha: 0.01,
            seed: 42,
            compute_rate: 5e12,
            bytes_per_element: 2,
            non_moe_time: 1e-5,
            node_list: vec![1, 2, 4, 8, 16],
            chunk_list: vec![1, 2, 4, 8, 16, 32],
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>, ConfigError> {
    value.split(',').map(|part| parse_num(key, part.trim())).collect()
}

impl ScenarioConfig {
    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ScenarioConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Malformed(lineno + 1))?;
            cfg.apply(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Sets one key, the same path used by `--set key=value` overrides.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "mode" => {
                self.mode = match value {
                    "single_level" => ModeSelection::SingleLevel,
                    "bi_level" => ModeSelection::BiLevel,
                    "both" => ModeSelection::Both,
                    _ => {
                        return Err(ConfigError::BadValue { key: key.into(), value: value.into() })
                    }
                }
            }
            "n_nodes" => self.n_nodes = parse_num(key, value)?,
            "gpus_per_node" => self.gpus_per_node = parse_num(key, value)?,
            "intra_bw" => self.intra_bw = parse_num(key, value)?,
            "inter_bw" => self.inter_bw = parse_num(key, value)?,
            "launch_overhead" => self.launch_overhead = parse_num(key, value)?,
            "bisection_capacity" => self.bisection_capacity = parse_num(key, value)?,
            "micro_batch_size" => self.micro_batch_size = parse_num(key, value)?,
            "hidden_size" => self.hidden_size = parse_num(key, value)?,
            "intermediate_size" => self.intermediate_size = parse_num(key, value)?,
            "num_layers" => self.num_layers = parse_num(key, value)?,
            "capacity_factor" => self.capacity_factor = parse_num(key, value)?,
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "single_level_alpha" => self.single_level_alpha = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "compute_rate" => self.compute_rate = parse_num(key, value)?,
            "bytes_per_element" => self.bytes_per_element = parse_num(key, value)?,
            "non_moe_time" => self.non_moe_time = parse_num(key, value)?,
            "node_list" => self.node_list = parse_list(key, value)?,
            "chunk_list" => self.chunk_list = parse_list(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.topology(self.n_nodes)?;
        let positives = [
            ("micro_batch_size", self.micro_batch_size),
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("num_layers", self.num_layers),
            ("bytes_per_element", self.bytes_per_element),
        ];
        for (name, v) in positives {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if self.capacity_factor <= 0.0 {
            return Err(ConfigError::Invalid("capacity_factor must be positive".into()));
        }
        if self.compute_rate <= 0.0 {
            return Err(ConfigError::Invalid("compute_rate must be positive".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.single_level_alpha < 0.0 {
            return Err(ConfigError::Invalid("loss coefficients must be >= 0".into()));
        }
        if self.non_moe_time < 0.0 {
            return Err(ConfigError::Invalid("non_moe_time must be >= 0".into()));
        }
        if self.node_list.is_empty() || self.node_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid(
                "node_list must be non-empty and strictly ascending".into(),
            ));
        }
        if self.node_list.contains(&0) {
            return Err(ConfigError::Invalid("node_list entries must be >= 1".into()));
        }
        if self.chunk_list.is_empty() || self.chunk_list.contains(&0) {
            return Err(ConfigError::Invalid("chunk_list entries must be >= 1".into()));
        }
        Ok(())
    }

    /// Cluster with this config's link parameters and the given node count.
    pub fn topology(&self, n_nodes: usize) -> Result<ClusterTopology, TopologyError> {
        build_topology(
            n_nodes,
            self.gpus_per_node,
            LinkParams {
                intra_bw: self.intra_bw,
                inter_bw: self.inter_bw,
                launch_overhead: self.launch_overhead,
                bisection_capacity: self.bisection_capacity,
            },
        )
    }

    /// Sorted `key=value` lines; the hashed provenance form.
    pub fn canonical(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut pairs = vec![
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("bisection_capacity", self.bisection_capacity.to_string()),
            ("bytes_per_element", self.bytes_per_element.to_string()),
            ("capacity_factor", self.capacity_factor.to_string()),
            ("chunk_list", list(&self.chunk_list)),
            ("compute_rate", self.compute_rate.to_string()),
            ("gpus_per_node", self.gpus_per_node.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("inter_bw", self.inter_bw.to_string()),
            ("intermediate_size", self.intermediate_size.to_string()),
            ("intra_bw", self.intra_bw.to_string()),
            ("launch_overhead", self.launch_overhead.to_string()),
            ("micro_batch_size", self.micro_batch_size.to_string()),
            ("mode", self.mode.as_str().to_string()),
            ("n_nodes", self.n_nodes.to_string()),
            ("node_list", list(&self.node_list)),
            ("non_moe_time", self.non_moe_time.to_string()),
            ("num_layers", self.num_layers.to_string()),
            ("seed", self.seed.to_string()),
            ("single_level_alpha", self.single_level_alpha.to_string()),
        ];
        pairs.sort_by_key(|(k, _)| *k);
        pairs.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex chars of sha256 over the canonical form.
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
