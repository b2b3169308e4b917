//! Synthetic datasets and client partitioning.

use std::io::{Read, Write};

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Rng};
use crate::models::{Batch, ModelSpec};

/// How training samples are spread over clients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heterogeneity {
    /// Uniform random split.
    Iid,
    /// Per-class Dirichlet(α) proportions over clients.
    Dirichlet(f64),
}

/// Dataset shards per client plus a held-out test set.
#[derive(Clone, Debug)]
pub struct FederatedTask {
    pub model: ModelSpec,
    pub client_shards: Vec<Batch>,
    pub test_set: Batch,
    pub heterogeneity: Heterogeneity,
}

impl FederatedTask {
    pub fn n_clients(&self) -> usize {
        self.client_shards.len()
    }

    /// Union of all shards, in client order.
    pub fn train_set(&self) -> Batch {
        let parts: Vec<&Batch> = self.client_shards.iter().collect();
        Batch::concat(&parts).expect("shards share a feature width")
    }
}

/// Gaussian class clusters with unit noise. When `n_features ≥ n_classes`
/// the class means sit on scaled coordinate axes so that every pair of means
/// is exactly `separation` apart; otherwise they are random directions of
/// norm `separation/√2`. Labels cycle through the classes before shuffling,
/// so class counts differ by at most one.
pub fn gen_classification(
    n_classes: usize,
    n_features: usize,
    n_train: usize,
    n_test: usize,
    separation: f64,
    rng: &mut Rng,
) -> Result<(Batch, Batch)> {
    if n_classes == 0 || n_features == 0 || n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("dataset counts must be >= 1".into()));
    }
    if !(separation > 0.0) {
        return Err(Error::InvalidArgument("separation must be positive".into()));
    }
    let radius = separation / std::f64::consts::SQRT_2;
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            if n_features >= n_classes {
                let mut v = vec![0.0; n_features];
                v[c] = radius;
                v
            } else {
                let v: Vec<f64> = (0..n_features).map(|_| rng.normal()).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.into_iter().map(|x| x * radius / n).collect()
            }
        })
        .collect();
    let sample = |count: usize, rng: &mut Rng| -> Result<Batch> {
        let mut labels: Vec<usize> = (0..count).map(|j| j % n_classes).collect();
        rng.shuffle(&mut labels);
        let features = Matrix::from_fn(count, n_features, |i, j| means[labels[i]][j] + rng.normal());
        Batch::new(features, labels)
    };
    let train = sample(n_train, rng)?;
    let test = sample(n_test, rng)?;
    Ok((train, test))
}

/// Quadratic task: one `rows×cols` parameter tensor, per-entry curvature
/// spread log-uniformly over `[1, condition]`, and sample centers drawn around
/// one of `n_clusters` cluster means (`N(0, cluster_spread²)` per entry) with
/// per-sample noise `N(0, noise²)`. Labels record the cluster, so Dirichlet
/// partitioning gives clients different optima.
#[allow(clippy::too_many_arguments)]
pub fn gen_quadratic(
    rows: usize,
    cols: usize,
    n_clusters: usize,
    n_train: usize,
    n_test: usize,
    condition: f64,
    cluster_spread: f64,
    noise: f64,
    rng: &mut Rng,
) -> Result<(ModelSpec, Batch, Batch)> {
    if rows == 0 || cols == 0 || n_clusters == 0 || n_train == 0 || n_test == 0 {
        return Err(Error::InvalidArgument("quadratic sizes must be >= 1".into()));
    }
    if !(condition >= 1.0) {
        return Err(Error::InvalidArgument("condition must be >= 1".into()));
    }
    let log_cond = condition.ln();
    let curvature = Matrix::from_fn(rows, cols, |_, _| (rng.uniform() * log_cond).exp());
    let dim = rows * cols;
    let means: Vec<Vec<f64>> = (0..n_clusters)
        .map(|_| (0..dim).map(|_| cluster_spread * rng.normal()).collect())
        .collect();
    let sample = |count: usize, rng: &mut Rng| -> Result<Batch> {
        let mut labels: Vec<usize> = (0..count).map(|j| j % n_clusters).collect();
        rng.shuffle(&mut labels);
        let features = Matrix::from_fn(count, dim, |i, e| means[labels[i]][e] + noise * rng.normal());
        Batch::new(features, labels)
    };
    let train = sample(n_train, rng)?;
    let test = sample(n_test, rng)?;
    Ok((ModelSpec::Quadratic { curvature }, train, test))
}

/// Sample-index shards for `n_clients` clients.
///
/// For each class, client proportions `p ~ Dir(α·1_N)` are drawn and the
/// class's shuffled samples are cut at `⌊cumsum(p)·n_c⌋`. Clients left empty
/// receive one sample taken from the currently largest shard. Shards are
/// disjoint, exhaustive and sorted.
pub fn dirichlet_partition_indices(
    labels: &[usize],
    n_clients: usize,
    heterogeneity: Heterogeneity,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("n_clients must be >= 1".into()));
    }
    if labels.len() < n_clients {
        return Err(Error::InvalidArgument(format!(
            "{} samples cannot cover {n_clients} clients",
            labels.len()
        )));
    }
    let mut shards: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
    match heterogeneity {
        Heterogeneity::Iid => {
            let mut idx: Vec<usize> = (0..labels.len()).collect();
            rng.shuffle(&mut idx);
            for (k, i) in idx.into_iter().enumerate() {
                shards[k % n_clients].push(i);
            }
        }
        Heterogeneity::Dirichlet(alpha) => {
            if !(alpha > 0.0) || !alpha.is_finite() {
                return Err(Error::InvalidArgument(format!("alpha {alpha} must be positive and finite")));
            }
            let gamma = Gamma::new(alpha, 1.0)
                .map_err(|e| Error::InvalidArgument(format!("alpha {alpha}: {e}")))?;
            let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
            for class in 0..n_classes {
                let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
                if idx.is_empty() {
                    continue;
                }
                rng.shuffle(&mut idx);
                let mut p: Vec<f64> = (0..n_clients).map(|_| gamma.sample(rng)).collect();
                let total: f64 = p.iter().sum();
                if total > 0.0 && total.is_finite() {
                    p.iter_mut().for_each(|x| *x /= total);
                } else {
                    // Every gamma draw underflowed: all mass on one client.
                    let k = rng.below(n_clients);
                    p = (0..n_clients).map(|i| if i == k { 1.0 } else { 0.0 }).collect();
                }
                let n_c = idx.len();
                let mut start = 0;
                let mut cum = 0.0;
                for (k, pk) in p.iter().enumerate() {
                    cum += pk;
                    let end = if k + 1 == n_clients {
                        n_c
                    } else {
                        ((cum * n_c as f64).floor() as usize).clamp(start, n_c)
                    };
                    shards[k].extend_from_slice(&idx[start..end]);
                    start = end;
                }
            }
        }
    }
    while let Some(empty) = shards.iter().position(Vec::is_empty) {
        let largest = (0..n_clients)
            .max_by(|&a, &b| shards[a].len().cmp(&shards[b].len()).then(b.cmp(&a)))
            .expect("n_clients >= 1");
        let moved = shards[largest].pop().expect("largest shard is nonempty");
        shards[empty].push(moved);
    }
    for s in shards.iter_mut() {
        s.sort_unstable();
    }
    Ok(shards)
}

/// Client batches for [`dirichlet_partition_indices`].
pub fn dirichlet_partition(
    train: &Batch,
    n_clients: usize,
    heterogeneity: Heterogeneity,
    rng: &mut Rng,
) -> Result<Vec<Batch>> {
    let shards = dirichlet_partition_indices(&train.labels, n_clients, heterogeneity, rng)?;
    Ok(shards.iter().map(|idx| train.select(idx)).collect())
}

/// Mean Shannon entropy (nats) of the per-client label distributions.
pub fn mean_label_entropy(shards: &[Batch], n_classes: usize) -> f64 {
    let total: f64 = shards
        .iter()
        .map(|s| {
            let mut counts = vec![0usize; n_classes];
            for &l in &s.labels {
                counts[l] += 1;
            }
            let n = s.len() as f64;
            counts
                .iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n;
                    -p * p.ln()
                })
                .sum::<f64>()
        })
        .sum();
    total / shards.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Quadratic,
    Logistic,
    Mlp,
}

/// Everything needed to regenerate a [`FederatedTask`] from a seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSpec {
    pub model: ModelKind,
    pub n_classes: usize,
    pub n_features: usize,
    pub hidden: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub separation: f64,
    /// Quadratic parameter shape.
    pub quad_rows: usize,
    pub quad_cols: usize,
    pub quad_condition: f64,
    pub quad_cluster_spread: f64,
    pub quad_noise: f64,
    /// Dirichlet concentration; `None` means an IID split.
    pub alpha: Option<f64>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            model: ModelKind::Logistic,
            n_classes: 10,
            n_features: 20,
            hidden: 16,
            n_train: 2000,
            n_test: 500,
            separation: 3.0,
            quad_rows: 8,
            quad_cols: 4,
            quad_condition: 10.0,
            quad_cluster_spread: 1.0,
            quad_noise: 0.1,
            alpha: None,
        }
    }
}

impl TaskSpec {
    pub fn heterogeneity(&self) -> Heterogeneity {
        match self.alpha {
            None => Heterogeneity::Iid,
            Some(a) => Heterogeneity::Dirichlet(a),
        }
    }

    /// Generates data and partitions it over `n_clients` clients. Data and
    /// partition draw from separate streams derived from `seed`.
    pub fn build(&self, n_clients: usize, seed: u64) -> Result<FederatedTask> {
        let root = Rng::new(seed);
        let mut data_rng = root.derive(&[0xDA7A]);
        let mut split_rng = root.derive(&[0x5117]);
        let (model, train, test) = match self.model {
            ModelKind::Quadratic => gen_quadratic(
                self.quad_rows,
                self.quad_cols,
                self.n_classes,
                self.n_train,
                self.n_test,
                self.quad_condition,
                self.quad_cluster_spread,
                self.quad_noise,
                &mut data_rng,
            )?,
            ModelKind::Logistic | ModelKind::Mlp => {
                let (train, test) = gen_classification(
                    self.n_classes,
                    self.n_features,
                    self.n_train,
                    self.n_test,
                    self.separation,
                    &mut data_rng,
                )?;
                let model = if self.model == ModelKind::Logistic {
                    ModelSpec::Logistic {
                        n_features: self.n_features,
                        n_classes: self.n_classes,
                    }
                } else {
                    ModelSpec::Mlp {
                        n_features: self.n_features,
                        hidden: self.hidden,
                        n_classes: self.n_classes,
                    }
                };
                (model, train, test)
            }
        };
        let heterogeneity = self.heterogeneity();
        let client_shards = dirichlet_partition(&train, n_clients, heterogeneity, &mut split_rng)?;
        Ok(FederatedTask {
            model,
            client_shards,
            test_set: test,
            heterogeneity,
        })
    }
}

/// Writes `batch` as CSV: columns `f0..f{d-1},label`.
pub fn write_csv<W: Write>(w: W, batch: &Batch) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let d = batch.features.cols();
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    out.write_record(&header)?;
    for i in 0..batch.len() {
        let mut rec: Vec<String> = batch.features.row(i).iter().map(|x| x.to_string()).collect();
        rec.push(batch.labels[i].to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads the format produced by [`write_csv`].
pub fn read_csv<R: Read>(r: R) -> Result<Batch> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let width = headers.len();
    if width < 2 || headers.get(width - 1) != Some("label") {
        return Err(Error::Format("last CSV column must be `label`".into()));
    }
    let d = width - 1;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse_err = |what: &str| Error::Format(format!("record {}: bad {what}", line + 1));
        for j in 0..d {
            data.push(rec[j].trim().parse::<f64>().map_err(|_| parse_err("feature"))?);
        }
        labels.push(rec[d].trim().parse::<usize>().map_err(|_| parse_err("label"))?);
    }
    Batch::new(Matrix::new(labels.len(), d, data)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_sample_per_class() {
        let mut rng = Rng::new(3);
        let (train, _) = gen_classification(4, 6, 4, 4, 2.0, &mut rng).unwrap();
        let mut l = train.labels.clone();
        l.sort();
        assert_eq!(l, vec![0, 1, 2, 3]);
    }

    #[test]
    fn labels_are_balanced() {
        let mut rng = Rng::new(5);
        let (train, _) = gen_classification(3, 4, 101, 10, 2.0, &mut rng).unwrap();
        let counts: Vec<usize> = (0..3).map(|c| train.labels.iter().filter(|&&l| l == c).count()).collect();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = gen_classification(3, 5, 50, 10, 2.0, &mut Rng::new(9)).unwrap();
        let b = gen_classification(3, 5, 50, 10, 2.0, &mut Rng::new(9)).unwrap();
        assert_eq!(a, b);
        let spec = TaskSpec::default();
        let t1 = spec.build(5, 1).unwrap();
        let t2 = spec.build(5, 1).unwrap();
        assert_eq!(t1.client_shards, t2.client_shards);
    }

    #[test]
    fn single_client_gets_everything() {
        let mut rng = Rng::new(1);
        let (train, _) = gen_classification(3, 3, 30, 3, 2.0, &mut rng).unwrap();
        let shards = dirichlet_partition_indices(&train.labels, 1, Heterogeneity::Dirichlet(0.1), &mut rng).unwrap();
        assert_eq!(shards, vec![(0..30).collect::<Vec<_>>()]);
    }

    #[test]
    fn too_few_samples_is_error() {
        let mut rng = Rng::new(1);
        assert!(dirichlet_partition_indices(&[0, 1], 3, Heterogeneity::Iid, &mut rng).is_err());
        assert!(dirichlet_partition_indices(&[0, 1], 1, Heterogeneity::Dirichlet(0.0), &mut rng).is_err());
    }

    #[test]
    fn tiny_alpha_leaves_no_client_empty() {
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
            let shards = dirichlet_partition_indices(&labels, 10, Heterogeneity::Dirichlet(0.01), &mut rng).unwrap();
            assert!(shards.iter().all(|s| !s.is_empty()));
            let mut all: Vec<usize> = shards.concat();
            all.sort();
            assert_eq!(all, (0..40).collect::<Vec<_>>());
        }
    }

    #[test]
    fn csv_roundtrip() {
        let mut rng = Rng::new(2);
        let (train, _) = gen_classification(2, 3, 7, 2, 1.0, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &train).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("f0,f1,f2,label\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), train);
    }
}
