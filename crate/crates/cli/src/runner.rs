use std::io::Write;
use std::path::{Path, PathBuf};

use fedpac_core::federation::{run_federated, Algorithm, Engine, RoundConfig};
use fedpac_core::metrics::{emit_reports, Summary};
use fedpac_core::preconditioners::Variant;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ExperimentConfig, Suite};

/// One row of a suite: an algorithm plus the round-config tweaks it needs.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub label: String,
    pub algorithm: Algorithm,
    pub round: RoundConfig,
}

/// Rows of the configured suite, in output order.
pub fn expand(cfg: &ExperimentConfig) -> Vec<Cell> {
    let optimizers = cfg.optimizer.to_vec();
    let algo = |engine: Engine, v: Variant| Algorithm {
        engine,
        variant: v,
        hyper: cfg.hyper.apply(v),
    };
    let mut cells = Vec::new();
    match cfg.suite {
        Suite::Single => {
            for engine in cfg.engine.to_vec() {
                if engine == Engine::FedAvg {
                    if !cells.iter().any(|c: &Cell| c.algorithm.engine == Engine::FedAvg) {
                        cells.push(Cell {
                            label: "fedavg".into(),
                            algorithm: algo(engine, optimizers[0]),
                            round: cfg.round.clone(),
                        });
                    }
                    continue;
                }
                for &v in &optimizers {
                    let a = algo(engine, v);
                    cells.push(Cell {
                        label: a.label(),
                        algorithm: a,
                        round: cfg.round.clone(),
                    });
                }
            }
        }
        Suite::BetaSweep => {
            for &v in &optimizers {
                for beta in cfg.beta_grid() {
                    cells.push(Cell {
                        label: format!("fedpac_{v}_beta{beta:.2}"),
                        algorithm: algo(Engine::FedPac, v),
                        round: RoundConfig {
                            beta_mix: beta,
                            align_states: true,
                            correct_updates: true,
                            ..cfg.round.clone()
                        },
                    });
                }
            }
        }
        Suite::Ablation => {
            for &v in &optimizers {
                let rows = [
                    ("baseline", Engine::FedSoa, false, false),
                    ("align_only", Engine::FedPac, true, false),
                    ("correct_only", Engine::FedPac, false, true),
                    ("full", Engine::FedPac, true, true),
                ];
                for (name, engine, align, correct) in rows {
                    cells.push(Cell {
                        label: format!("{v}_{name}"),
                        algorithm: algo(engine, v),
                        round: RoundConfig {
                            align_states: align,
                            correct_updates: correct,
                            ..cfg.round.clone()
                        },
                    });
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub cell: usize,
    pub seed: u64,
    pub csv: PathBuf,
    pub result: Result<Summary, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat(values: &[f64]) -> Option<Stat> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Stat { mean, std })
}

/// Mean ± sample std over seeds for one suite row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowSummary {
    pub label: String,
    pub engine: String,
    pub optimizer: String,
    pub beta_mix: f64,
    pub align_states: bool,
    pub correct_updates: bool,
    pub runs_completed: usize,
    pub runs_failed: usize,
    pub failures: Vec<String>,
    pub final_acc: Option<Stat>,
    pub final_train_loss: Option<Stat>,
    pub final_test_loss: Option<Stat>,
    pub mean_drift: Option<Stat>,
    pub upload_bytes: Option<Stat>,
    pub download_bytes: Option<Stat>,
}

fn summarize_row(cell: &Cell, outcomes: &[&RunOutcome]) -> RowSummary {
    let ok: Vec<&Summary> = outcomes.iter().filter_map(|o| o.result.as_ref().ok()).collect();
    let failures: Vec<String> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().err().map(|e| format!("seed {}: {e}", o.seed)))
        .collect();
    let col = |f: &dyn Fn(&Summary) -> Option<f64>| -> Option<Stat> {
        stat(&ok.iter().filter_map(|s| f(s)).collect::<Vec<_>>())
    };
    let effective = cell.algorithm.effective_config(&cell.round);
    RowSummary {
        label: cell.label.clone(),
        engine: cell.algorithm.engine.to_string(),
        optimizer: cell.algorithm.variant.to_string(),
        beta_mix: effective.beta_mix,
        align_states: effective.align_states,
        correct_updates: effective.correct_updates,
        runs_completed: ok.len(),
        runs_failed: failures.len(),
        failures,
        final_acc: col(&|s| Some(s.final_acc)),
        final_train_loss: col(&|s| Some(s.final_train_loss)),
        final_test_loss: col(&|s| Some(s.final_test_loss)),
        mean_drift: col(&|s| s.mean_drift),
        upload_bytes: col(&|s| Some(s.total_upload_bytes as f64)),
        download_bytes: col(&|s| Some(s.total_download_bytes as f64)),
    }
}

/// Runs every (row × seed) cell, writing `<label>_seed<seed>.csv` (+ summary
/// JSON) per run and `summary.csv` / `summary.json` across seeds.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::io::Result<(Vec<RowSummary>, Vec<RunOutcome>)> {
    let out = Path::new(&cfg.out);
    std::fs::create_dir_all(out)?;
    let cells = expand(cfg);
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let outcomes: Vec<RunOutcome> = jobs
        .par_iter()
        .map(|&(ci, seed)| {
            let cell = &cells[ci];
            let csv = out.join(format!("{}_seed{seed}.csv", cell.label));
            let round = RoundConfig {
                seed,
                ..cell.round.clone()
            };
            let result = cfg
                .task
                .build(round.n_clients, seed)
                .and_then(|task| run_federated(&task, &round, &cell.algorithm))
                .and_then(|reports| emit_reports(&reports, &csv))
                .map_err(|e| e.to_string());
            RunOutcome {
                cell: ci,
                seed,
                csv,
                result,
            }
        })
        .collect();
    let rows: Vec<RowSummary> = cells
        .iter()
        .enumerate()
        .map(|(ci, cell)| {
            let mine: Vec<&RunOutcome> = outcomes.iter().filter(|o| o.cell == ci).collect();
            summarize_row(cell, &mine)
        })
        .collect();
    write_summary(out, &rows)?;
    Ok((rows, outcomes))
}

fn fmt_stat(s: &Option<Stat>) -> (String, String) {
    match s {
        Some(s) => (s.mean.to_string(), s.std.to_string()),
        None => (String::new(), String::new()),
    }
}

fn write_summary(out: &Path, rows: &[RowSummary]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("summary.csv"))?);
    writeln!(
        f,
        "label,engine,optimizer,beta_mix,align_states,correct_updates,runs_completed,runs_failed,\
         final_acc_mean,final_acc_std,final_train_loss_mean,final_train_loss_std,\
         mean_drift_mean,mean_drift_std,upload_bytes_mean,download_bytes_mean"
    )?;
    for r in rows {
        let (acc_m, acc_s) = fmt_stat(&r.final_acc);
        let (loss_m, loss_s) = fmt_stat(&r.final_train_loss);
        let (drift_m, drift_s) = fmt_stat(&r.mean_drift);
        let (up, _) = fmt_stat(&r.upload_bytes);
        let (down, _) = fmt_stat(&r.download_bytes);
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{acc_m},{acc_s},{loss_m},{loss_s},{drift_m},{drift_s},{up},{down}",
            r.label, r.engine, r.optimizer, r.beta_mix, r.align_states, r.correct_updates, r.runs_completed, r.runs_failed
        )?;
    }
    f.flush()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(out.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut f, rows).map_err(std::io::Error::other)?;
    f.write_all(b"\n")?;
    f.flush()
}
