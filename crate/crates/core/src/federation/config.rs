use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CommAccounting;
use crate::preconditioners::{OptimizerHyper, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Local SGD with parameter averaging.
    FedAvg,
    /// Local preconditioned steps, parameter averaging only.
    FedSoa,
    /// FedSOA plus state alignment and global-direction correction.
    FedPac,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::FedAvg => "fedavg",
            Engine::FedSoa => "fedsoa",
            Engine::FedPac => "fedpac",
        }
    }

    pub fn is_second_order(self) -> bool {
        self != Engine::FedAvg
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fedavg" => Ok(Engine::FedAvg),
            "fedsoa" => Ok(Engine::FedSoa),
            "fedpac" => Ok(Engine::FedPac),
            other => Err(Error::InvalidArgument(format!("unknown engine {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `η_r = η_l · ½(1 + cos(π r / R))`.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    pub n_clients: usize,
    /// Clients sampled per round (`S`).
    pub participation: usize,
    /// Local steps per round (`K`).
    pub local_steps: usize,
    pub rounds: usize,
    pub local_lr: f64,
    /// `γ` on the averaged delta; `1` is plain averaging.
    pub server_lr: f64,
    /// `β`: weight of the global direction in a corrected local step.
    pub beta_mix: f64,
    pub align_states: bool,
    pub correct_updates: bool,
    /// Rank fraction for low-rank state upload.
    pub compress: Option<f64>,
    /// Decoupled weight decay `λ`.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// Keep each client's state across rounds instead of resetting it
    /// (unaligned second-order engines only).
    pub persist_local_state: bool,
    /// Wall time is reported as 0 unless set, so output bytes depend only on
    /// the seed.
    pub record_wall_time: bool,
    pub comm_accounting: CommAccounting,
    /// Every client uses the same per-round random stream.
    pub shared_client_streams: bool,
    pub checkpoint_dir: Option<String>,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            n_clients: 10,
            participation: 5,
            local_steps: 20,
            rounds: 50,
            local_lr: 0.05,
            server_lr: 1.0,
            beta_mix: 0.5,
            align_states: true,
            correct_updates: true,
            compress: None,
            weight_decay: 0.01,
            batch_size: 32,
            seed: 0,
            lr_schedule: LrSchedule::Constant,
            persist_local_state: false,
            record_wall_time: false,
            comm_accounting: CommAccounting::Exact,
            shared_client_streams: false,
            checkpoint_dir: None,
        }
    }
}

impl RoundConfig {
    /// Learning rate used during round `round`.
    pub fn lr_at(&self, round: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.local_lr,
            LrSchedule::Cosine => {
                let t = round as f64 / self.rounds.max(1) as f64;
                self.local_lr * 0.5 * (1.0 + (PI * t).cos())
            }
        }
    }

    /// Every violated constraint, as `field: problem` strings.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: &str| out.push(format!("{field}: {msg}"));
        if self.n_clients == 0 {
            bad("n_clients", "must be >= 1");
        }
        if self.participation == 0 || self.participation > self.n_clients {
            bad("participation", "must satisfy 1 <= S <= N");
        }
        if self.local_steps == 0 {
            bad("local_steps", "must be >= 1");
        }
        if self.rounds == 0 {
            bad("rounds", "must be >= 1");
        }
        if !(self.local_lr > 0.0 && self.local_lr.is_finite()) {
            bad("local_lr", "must be positive");
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            bad("server_lr", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.beta_mix) {
            bad("beta_mix", "out of [0,1]");
        }
        if let Some(f) = self.compress {
            if !(f > 0.0 && f <= 1.0) {
                bad("compress", "rank fraction out of (0,1]");
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bad("weight_decay", "must be >= 0");
        }
        if self.batch_size == 0 {
            bad("batch_size", "must be >= 1");
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(d.join("; ")))
        }
    }
}

/// Engine plus local optimizer. `variant` and `hyper` are ignored by FedAvg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Algorithm {
    pub engine: Engine,
    pub variant: Variant,
    pub hyper: OptimizerHyper,
}

impl Algorithm {
    pub fn new(engine: Engine, variant: Variant) -> Self {
        Self {
            engine,
            variant,
            hyper: variant.default_hyper(),
        }
    }

    pub fn label(&self) -> String {
        match self.engine {
            Engine::FedAvg => "fedavg".into(),
            e => format!("{e}_{}", self.variant),
        }
    }

    /// `cfg` with the engine's fixed choices applied: only FedPAC honours
    /// `align_states` and `correct_updates`, and aligned clients never
    /// persist a private state.
    pub fn effective_config(&self, cfg: &RoundConfig) -> RoundConfig {
        let mut c = cfg.clone();
        if self.engine != Engine::FedPac {
            c.align_states = false;
            c.correct_updates = false;
        }
        if c.align_states || self.engine == Engine::FedAvg {
            c.persist_local_state = false;
        }
        c
    }
}
