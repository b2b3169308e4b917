//! Preconditioner drift, communication accounting and report output.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{Engine, RoundConfig};
use crate::preconditioners::{
    compressed_floats, entrywise_mean, state_distance, DistanceMode, OptimizerHyper,
    PreconditionerState, Variant,
};

/// Column order of the per-round CSV.
pub const CSV_HEADER: [&str; 10] = [
    "round",
    "train_loss",
    "test_loss",
    "test_acc",
    "grad_norm",
    "drift_frob",
    "drift_spec_max",
    "upload_bytes",
    "download_bytes",
    "wall_seconds",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based index of the completed round.
    pub round: usize,
    /// `F(x^{r+1})`, the mean of client full-shard losses.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// `‖∇F(x^{r+1})‖`.
    pub grad_norm: f64,
    pub drift_frobenius: Option<f64>,
    pub drift_spectral_per_layer: Option<Vec<f64>>,
    /// Totals over the round's participating clients.
    pub upload_bytes: u64,
    pub download_bytes: u64,
    pub wall_seconds: f64,
}

impl RoundReport {
    pub fn drift_spectral_max(&self) -> Option<f64> {
        self.drift_spectral_per_layer
            .as_ref()
            .map(|v| v.iter().copied().fold(0.0, f64::max))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftReport {
    pub frobenius: f64,
    pub spectral_per_layer: Vec<f64>,
}

/// Drift of client states around their entrywise mean `Θ̄`:
/// `mean_i ‖Θ_i − Θ̄‖²_F` over every stored tensor, and per layer the mean
/// spectral norm of the curvature-statistic deviation.
pub fn drift_report(states: &[PreconditionerState]) -> Result<DriftReport> {
    let mean = entrywise_mean(states)?;
    let n = states.len() as f64;
    let mut frobenius = 0.0;
    let mut spectral: Vec<f64> = Vec::new();
    for s in states {
        frobenius += state_distance(s, &mean, DistanceMode::Frobenius)?
            .frobenius()
            .expect("frobenius mode");
        let layer = state_distance(s, &mean, DistanceMode::SpectralLayerwise)?;
        let layer = layer.spectral().expect("spectral mode");
        if spectral.is_empty() {
            spectral = vec![0.0; layer.len()];
        }
        for (acc, v) in spectral.iter_mut().zip(layer) {
            *acc += v;
        }
    }
    Ok(DriftReport {
        frobenius: frobenius / n,
        spectral_per_layer: spectral.into_iter().map(|v| v / n).collect(),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommAccounting {
    /// Each aggregated state family counts as one `|x|`.
    Table6,
    /// Actual float counts of everything transmitted.
    #[default]
    Exact,
}

/// State families counted by the table convention: Sophia's curvature,
/// Muon's momentum, SOAP's two Kronecker factor families.
pub fn state_families(variant: Variant) -> u64 {
    match variant {
        Variant::Sophia | Variant::Muon => 1,
        Variant::Soap => 2,
    }
}

/// Per participating client per round: `(upload, download)` bytes.
///
/// Every client uploads `Δx` and downloads `x`. Aligned FedPAC also uploads
/// its state (possibly compressed) and downloads `Θ`; corrected FedPAC with
/// `β > 0` downloads `g_G`.
pub fn comm_cost(
    engine: Engine,
    variant: Variant,
    cfg: &RoundConfig,
    shapes: &[(usize, usize)],
    accounting: CommAccounting,
) -> (u64, u64) {
    let x_floats: usize = shapes.iter().map(|&(r, c)| r * c).sum();
    let x = 8 * x_floats as u64;
    let pac = engine == Engine::FedPac;
    let align = pac && cfg.align_states;
    let correct = pac && cfg.correct_updates && cfg.beta_mix > 0.0;
    let (state_up, state_down) = match accounting {
        CommAccounting::Table6 => {
            let dense = state_families(variant) * x;
            let up = match cfg.compress {
                Some(frac) => (dense as f64 * frac).round() as u64,
                None => dense,
            };
            (up, dense)
        }
        CommAccounting::Exact => {
            let st = PreconditionerState::zeros(variant, shapes, OptimizerHyper::default());
            let dense = 8 * st.num_floats() as u64;
            let up = match cfg.compress {
                Some(frac) => {
                    let tshapes: Vec<_> = st.tensors().iter().map(|t| t.shape()).collect();
                    8 * compressed_floats(&tshapes, frac) as u64
                }
                None => dense,
            };
            (up, dense)
        }
    };
    let upload = x + if align { state_up } else { 0 };
    let download = x + if align { state_down } else { 0 } + if correct { x } else { 0 };
    (upload, download)
}

/// First round whose train loss is at or below `target`.
pub fn rounds_to_target(reports: &[RoundReport], target: f64) -> Option<usize> {
    reports.iter().find(|r| r.train_loss <= target).map(|r| r.round)
}

/// Mean of `drift_frobenius` over reports with `round` in `first..=last`.
pub fn mean_drift(reports: &[RoundReport], first: usize, last: usize) -> Option<f64> {
    let v: Vec<f64> = reports
        .iter()
        .filter(|r| (first..=last).contains(&r.round))
        .filter_map(|r| r.drift_frobenius)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: usize,
    pub final_acc: f64,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_grad_norm: f64,
    pub mean_drift: Option<f64>,
    pub total_upload_bytes: u64,
    pub total_download_bytes: u64,
}

pub fn summarize(reports: &[RoundReport]) -> Result<Summary> {
    let last = reports.last().ok_or(Error::Empty("reports"))?;
    Ok(Summary {
        rounds: reports.len(),
        final_acc: last.test_acc,
        final_train_loss: last.train_loss,
        final_test_loss: last.test_loss,
        final_grad_norm: last.grad_norm,
        mean_drift: mean_drift(reports, 1, usize::MAX),
        total_upload_bytes: reports.iter().map(|r| r.upload_bytes).sum(),
        total_download_bytes: reports.iter().map(|r| r.download_bytes).sum(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-round CSV in [`CSV_HEADER`] order. Missing drift values are empty.
pub fn write_reports_csv<W: Write>(w: W, reports: &[RoundReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in reports {
        out.write_record([
            r.round.to_string(),
            r.train_loss.to_string(),
            r.test_loss.to_string(),
            r.test_acc.to_string(),
            r.grad_norm.to_string(),
            opt(r.drift_frobenius),
            opt(r.drift_spectral_max()),
            r.upload_bytes.to_string(),
            r.download_bytes.to_string(),
            r.wall_seconds.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Path of the summary written next to a report CSV.
pub fn summary_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("summary.json")
}

/// Writes the CSV to `path` and the summary JSON to [`summary_path`].
pub fn emit_reports(reports: &[RoundReport], path: &Path) -> Result<Summary> {
    let summary = summarize(reports)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_reports_csv(&mut f, reports)?;
    f.flush()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(summary_path(path))?);
    serde_json::to_writer_pretty(&mut f, &summary)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(summary)
}
