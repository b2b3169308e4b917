//! Round engine for FedAvg, FedSOA and FedPAC.
//!
//! One round: sample `S` of `N` clients, run `K` local steps on each
//! (in parallel), then aggregate on the server:
//!
//! ```text
//! x^{r+1}   = x^r + γ · mean_i Δx_i
//! g_G^{r+1} = −mean_i Δx_i / (K η_l)
//! Θ^{r+1}   = state_average(Θ_i^{r,K})          (alignment only)
//! ```
//!
//! A local step with correction is `x ← x − η_l[(1−β) P_Θ(g) + β g_G^r]`.
//! Every client draws from a stream derived from `(seed, round, client)`,
//! so serial and parallel execution give bit-identical results.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

pub use config::{Algorithm, Engine, LrSchedule, RoundConfig};

use crate::datagen::FederatedTask;
use crate::error::{shape_err, Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::metrics::{comm_cost, drift_report, CommAccounting, RoundReport};
use crate::models::{evaluate, hvp, loss_grad};
use crate::params::ModelParams;
use crate::preconditioners::{
    compress_state, decompress_state, state_average, write_params, write_state, CompressedState,
    PreconditionerState,
};

/// Loss above which a run is declared diverged.
pub const DIVERGENCE_LOSS: f64 = 1e6;

const STREAM_INIT: u64 = 1;
const STREAM_SAMPLE: u64 = 2;
const STREAM_CLIENT: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    pub x: ModelParams,
    pub theta_global: Option<PreconditionerState>,
    pub g_g: ModelParams,
    pub round: usize,
}

impl ServerState {
    /// Round-0 server: `g_G = 0`.
    pub fn new(x: ModelParams, theta_global: Option<PreconditionerState>) -> Self {
        let g_g = ModelParams::zeros_like(&x.shapes());
        Self {
            x,
            theta_global,
            g_g,
            round: 0,
        }
    }
}

/// A state as uploaded to the server.
#[derive(Clone, Debug, PartialEq)]
pub enum UploadedState {
    Dense(PreconditionerState),
    Compressed(CompressedState),
}

impl UploadedState {
    pub fn to_dense(&self) -> Result<PreconditionerState> {
        match self {
            UploadedState::Dense(s) => Ok(s.clone()),
            UploadedState::Compressed(c) => decompress_state(c),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub delta_x: ModelParams,
    /// Transmitted state (aligned runs only).
    pub theta_final: Option<UploadedState>,
    /// End-of-round local state, kept for drift measurement and persistence;
    /// not transmitted unless `theta_final` is set.
    pub local_state: Option<PreconditionerState>,
    pub upload_bytes: u64,
}

/// `S` distinct client ids drawn uniformly from `0..N`, sorted.
pub fn sample_clients(n: usize, s: usize, round: usize, rng: &Rng) -> Result<Vec<usize>> {
    if s == 0 || s > n {
        return Err(Error::InvalidArgument(format!("participation {s} outside 1..={n}")));
    }
    let mut ids: Vec<usize> = (0..n).collect();
    if s < n {
        let mut r = rng.derive(&[STREAM_SAMPLE, round as u64]);
        // Partial Fisher–Yates: the first s slots are a uniform sample.
        for i in 0..s {
            let j = i + r.below(n - i);
            ids.swap(i, j);
        }
        ids.truncate(s);
    }
    ids.sort_unstable();
    Ok(ids)
}

fn diverged(round: usize, client: usize, step: usize) -> Error {
    Error::Divergence {
        round,
        client: Some(client),
        step: Some(step),
    }
}

/// `K` local steps from `x_init`. With `theta_init = None` the client runs
/// plain SGD (FedAvg); otherwise it folds each gradient into the state and
/// steps along the preconditioned direction, mixed with `g_G` when
/// `cfg.correct_updates` is set and `β > 0`.
#[allow(clippy::too_many_arguments)]
pub fn client_round(
    task: &FederatedTask,
    client: usize,
    round: usize,
    x_init: &ModelParams,
    theta_init: Option<PreconditionerState>,
    g_g: &ModelParams,
    cfg: &RoundConfig,
    rng: &mut Rng,
) -> Result<ClientUpdate> {
    let shard = task
        .client_shards
        .get(client)
        .ok_or_else(|| Error::InvalidArgument(format!("no client {client}")))?;
    let shapes = task.model.shapes();
    x_init.check_shapes(&shapes)?;
    g_g.check_shapes(&shapes)?;
    let lr = cfg.lr_at(round);
    let beta = cfg.beta_mix;
    let mix = cfg.correct_updates && beta > 0.0;
    let mut x = x_init.clone();
    let mut state = theta_init;
    for step in 0..cfg.local_steps {
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.below(shard.len())).collect();
        let batch = shard.select(&idx);
        let report = loss_grad(&task.model, &x, &batch)?;
        if !report.loss.is_finite() || report.loss > DIVERGENCE_LOSS {
            return Err(diverged(round, client, step));
        }
        let grads = report.grads.layers;
        let dir = match state.take() {
            None => grads,
            Some(st) => {
                let hvp_fn = |v: &[Matrix]| -> Result<Vec<Matrix>> {
                    hvp(&task.model, &x, &batch, &ModelParams::new(v.to_vec())).map(|p| p.layers)
                };
                let st = st.update_state(&grads, Some(&hvp_fn), rng)?;
                let d = st.apply_precond(&grads)?;
                state = Some(st);
                d
            }
        };
        let dir = ModelParams::new(dir);
        let step_dir = if mix {
            let mut d = dir.scale(1.0 - beta);
            d.axpy(beta, g_g);
            d
        } else {
            dir
        };
        if cfg.weight_decay > 0.0 {
            x = x.scale(1.0 - lr * cfg.weight_decay);
        }
        x.axpy(-lr, &step_dir);
        if !x.is_finite() {
            return Err(diverged(round, client, step));
        }
    }
    let delta_x = x.sub(x_init);
    let mut upload_bytes = 8 * x.num_params() as u64;
    let theta_final = match (&state, cfg.align_states) {
        (Some(st), true) => Some(match cfg.compress {
            Some(frac) => {
                let (c, bytes) = compress_state(st, frac)?;
                upload_bytes += bytes as u64;
                UploadedState::Compressed(c)
            }
            None => {
                upload_bytes += 8 * st.num_floats() as u64;
                UploadedState::Dense(st.clone())
            }
        }),
        _ => None,
    };
    Ok(ClientUpdate {
        client,
        delta_x,
        theta_final,
        local_state: state,
        upload_bytes,
    })
}

/// Server step: averaged delta scaled by `γ`, new global direction and,
/// when states were uploaded, the aligned state.
pub fn server_aggregate(updates: &[ClientUpdate], server: &ServerState, cfg: &RoundConfig) -> Result<ServerState> {
    if updates.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    let shapes = server.x.shapes();
    for u in updates {
        if u.delta_x.shapes() != shapes {
            return Err(shape_err(format!("{shapes:?}"), format!("{:?}", u.delta_x.shapes())));
        }
    }
    let deltas: Vec<&ModelParams> = updates.iter().map(|u| &u.delta_x).collect();
    let mean_dx = ModelParams::mean(&deltas);
    let mut x = server.x.clone();
    x.axpy(cfg.server_lr, &mean_dx);
    let lr = cfg.lr_at(server.round);
    let g_g = mean_dx.scale(-1.0 / (cfg.local_steps as f64 * lr));
    let uploaded: Vec<PreconditionerState> = updates
        .iter()
        .filter_map(|u| u.theta_final.as_ref().map(UploadedState::to_dense))
        .collect::<Result<_>>()?;
    let theta_global = if uploaded.is_empty() {
        server.theta_global.clone()
    } else {
        Some(state_average(&uploaded)?)
    };
    Ok(ServerState {
        x,
        theta_global,
        g_g,
        round: server.round + 1,
    })
}

/// Mean over clients of the full-shard loss and gradient, i.e. `F` and `∇F`.
pub fn global_loss_grad(task: &FederatedTask, x: &ModelParams) -> Result<(f64, ModelParams)> {
    let reports = task
        .client_shards
        .iter()
        .map(|s| loss_grad(&task.model, x, s))
        .collect::<Result<Vec<_>>>()?;
    let n = reports.len() as f64;
    let loss = reports.iter().map(|r| r.loss).sum::<f64>() / n;
    let grads: Vec<&ModelParams> = reports.iter().map(|r| &r.grads).collect();
    Ok((loss, ModelParams::mean(&grads)))
}

/// Random stream of client `client` in round `round` (0-based). With
/// `shared_client_streams` every client of a round gets the same stream.
pub fn client_rng(cfg: &RoundConfig, round: usize, client: usize) -> Rng {
    let root = Rng::new(cfg.seed);
    if cfg.shared_client_streams {
        root.derive(&[STREAM_CLIENT, round as u64])
    } else {
        root.derive(&[STREAM_CLIENT, round as u64, client as u64])
    }
}

/// Initial parameters for a run.
pub fn initial_params(task: &FederatedTask, seed: u64) -> ModelParams {
    task.model.init_params(&mut Rng::new(seed).derive(&[STREAM_INIT]))
}

/// Runs `cfg.rounds` rounds and returns one report per round.
pub fn run_federated(task: &FederatedTask, cfg: &RoundConfig, algo: &Algorithm) -> Result<Vec<RoundReport>> {
    let cfg = algo.effective_config(cfg);
    cfg.check()?;
    if cfg.n_clients != task.n_clients() {
        return Err(Error::InvalidArgument(format!(
            "config has {} clients, task has {}",
            cfg.n_clients,
            task.n_clients()
        )));
    }
    algo.hyper.validate()?;
    let shapes = task.model.shapes();
    let root = Rng::new(cfg.seed);
    let second_order = algo.engine.is_second_order();
    let zero_state = || PreconditionerState::zeros(algo.variant, &shapes, algo.hyper);
    let mut server = ServerState::new(
        initial_params(task, cfg.seed),
        (second_order && cfg.align_states).then(zero_state),
    );
    let mut persisted: Vec<Option<PreconditionerState>> = vec![None; cfg.n_clients];
    let (table_up, table_down) = comm_cost(algo.engine, algo.variant, &cfg, &shapes, CommAccounting::Table6);
    let (_, exact_down) = comm_cost(algo.engine, algo.variant, &cfg, &shapes, CommAccounting::Exact);
    let mut reports = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let started = Instant::now();
        let clients = sample_clients(cfg.n_clients, cfg.participation, round, &root)?;
        let theta_for = |c: usize| -> Option<PreconditionerState> {
            if !second_order {
                None
            } else if cfg.align_states {
                server.theta_global.clone()
            } else if cfg.persist_local_state {
                Some(persisted[c].clone().unwrap_or_else(zero_state))
            } else {
                Some(zero_state())
            }
        };
        let run_one = |&c: &usize| {
            let mut rng = client_rng(&cfg, round, c);
            client_round(task, c, round, &server.x, theta_for(c), &server.g_g, &cfg, &mut rng)
        };
        let updates: Vec<ClientUpdate> = clients.par_iter().map(run_one).collect::<Result<_>>()?;
        server = server_aggregate(&updates, &server, &cfg)?;
        if cfg.persist_local_state {
            for u in &updates {
                persisted[u.client] = u.local_state.clone();
            }
        }
        let (train_loss, grad) = global_loss_grad(task, &server.x)?;
        if !train_loss.is_finite() || train_loss > DIVERGENCE_LOSS || !server.x.is_finite() {
            return Err(Error::Divergence {
                round,
                client: None,
                step: None,
            });
        }
        let (test_loss, test_acc) = evaluate(&task.model, &server.x, &task.test_set)?;
        let (drift_frobenius, drift_spectral_per_layer) = if second_order {
            let states: Vec<PreconditionerState> = updates.iter().filter_map(|u| u.local_state.clone()).collect();
            let d = drift_report(&states)?;
            (Some(d.frobenius), Some(d.spectral_per_layer))
        } else {
            (None, None)
        };
        let s = updates.len() as u64;
        let (upload_bytes, download_bytes) = match cfg.comm_accounting {
            CommAccounting::Table6 => (s * table_up, s * table_down),
            CommAccounting::Exact => (updates.iter().map(|u| u.upload_bytes).sum(), s * exact_down),
        };
        if let Some(dir) = &cfg.checkpoint_dir {
            write_checkpoint(Path::new(dir), &server)?;
        }
        reports.push(RoundReport {
            round: round + 1,
            train_loss,
            test_loss,
            test_acc,
            grad_norm: grad.norm(),
            drift_frobenius,
            drift_spectral_per_layer,
            upload_bytes,
            download_bytes,
            wall_seconds: if cfg.record_wall_time {
                started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    Ok(reports)
}

/// Writes `round_NNNN.params` and, when present, `round_NNNN.state`.
pub fn write_checkpoint(dir: &Path, server: &ServerState) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("round_{:04}", server.round);
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.params")))?);
    write_params(&mut w, &server.x)?;
    w.flush()?;
    if let Some(theta) = &server.theta_global {
        let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.state")))?);
        write_state(&mut w, theta)?;
        w.flush()?;
    }
    Ok(())
}
