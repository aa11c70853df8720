//! Embedding diagnostics: positivity curves, alignment, uniformity,
//! utilization and Recall@K.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::loss::{LossPlugin, PluginKind};
use crate::mixup::{f_lambda, MixupType};
use crate::model::Model;
use crate::numerics::{dot, sq_dist};

/// Temperature of the Gaussian kernel in [`uniformity`].
pub const UNIFORMITY_T: f64 = 2.0;

/// Mean squared distance over all same-class pairs. Singleton classes contribute nothing.
pub fn alignment(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    crate::numerics::check_dims(embeddings.len(), labels.len())?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            if labels[i] == labels[j] {
                total += sq_dist(&embeddings[i], &embeddings[j]);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::invalid(
            "alignment needs a class with at least two examples",
        ));
    }
    Ok(total / pairs as f64)
}

/// `log mean exp(−t‖u − v‖²)` over all unordered pairs.
pub fn uniformity(embeddings: &[Vec<f64>], t: f64) -> Result<f64> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::invalid("uniformity needs at least two embeddings"));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += (-t * sq_dist(&embeddings[i], &embeddings[j])).exp();
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((total / pairs).ln())
}

/// Mean over queries of the squared distance to the nearest reference entry.
pub fn utilization(queries: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if queries.is_empty() || reference.is_empty() {
        return Err(Error::invalid(
            "utilization needs queries and reference entries",
        ));
    }
    let total: f64 = queries
        .iter()
        .map(|q| {
            reference
                .iter()
                .map(|x| sq_dist(q, x))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / queries.len() as f64)
}

/// For each query, the neighbor rank (0-based, self excluded) of its first
/// same-class neighbor under descending similarity with ties by index.
fn first_hit_ranks(embeddings: &[Vec<f64>], labels: &[usize]) -> Vec<Option<usize>> {
    let n = embeddings.len();
    (0..n)
        .map(|q| {
            let sims: Vec<f64> = embeddings.iter().map(|e| dot(&embeddings[q], e)).collect();
            let mut order: Vec<usize> = (0..n).filter(|&j| j != q).collect();
            order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
            order.iter().position(|&j| labels[j] == labels[q])
        })
        .collect()
}

/// Recall@K for each requested `K` over cosine similarity of unit embeddings.
pub fn recall_at_k(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    ks: &[usize],
) -> Result<BTreeMap<usize, f64>> {
    crate::numerics::check_dims(embeddings.len(), labels.len())?;
    let n = embeddings.len();
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= n) {
        return Err(Error::invalid(format!("K = {k} needs 1 <= K < {n}")));
    }
    let ranks = first_hit_ranks(embeddings, labels);
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count();
            (k, hits as f64 / n as f64)
        })
        .collect())
}

/// Test-split diagnostics of one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub alignment: f64,
    pub uniformity: f64,
    pub utilization: f64,
    pub recall: BTreeMap<usize, f64>,
}

impl MetricsReport {
    pub fn recall(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }
}

/// Alignment, uniformity and Recall@K on the test split; utilization of test
/// queries against clean train embeddings plus `mixed_entries`.
pub fn evaluate(
    model: &Model,
    dataset: &Dataset,
    mixed_entries: &[Vec<f64>],
    ks: &[usize],
) -> Result<MetricsReport> {
    let test = dataset.split_indices(Split::Test);
    let train = dataset.split_indices(Split::Train);
    let embed = |idx: &[usize]| -> Result<Vec<Vec<f64>>> {
        idx.iter()
            .map(|&i| model.embed(&dataset.examples()[i].features))
            .collect()
    };
    let queries = embed(&test)?;
    let mut reference = embed(&train)?;
    reference.extend(mixed_entries.iter().cloned());
    let labels = dataset.labels(&test);
    Ok(MetricsReport {
        alignment: alignment(&queries, &labels)?,
        uniformity: uniformity(&queries, UNIFORMITY_T)?,
        utilization: utilization(&queries, &reference)?,
        recall: recall_at_k(&queries, &labels, ks)?,
    })
}

/// Similarity threshold below which a mixed embedding with label `λ` is
/// positive for the multi-similarity loss: `ln(λ/(1−λ))/(β+γ) + m`.
/// `λ = 0` and `λ = 1` give `−∞` and `+∞`.
pub fn ms_positivity_threshold(lambda: f64, beta: f64, gamma: f64, margin: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    if !(beta + gamma > 0.0) {
        return Err(Error::invalid("beta + gamma must be positive"));
    }
    Ok(if lambda == 0.0 {
        f64::NEG_INFINITY
    } else if lambda == 1.0 {
        f64::INFINITY
    } else {
        (lambda / (1.0 - lambda)).ln() / (beta + gamma) + margin
    })
}

/// `start, start + step, …` up to `end` inclusive, rounded to 12 decimals.
pub fn lambda_grid(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || start > end {
        return Err(Error::invalid(format!(
            "grid {start}:{end} must lie in [0, 1] in ascending order"
        )));
    }
    if !(step > 0.0) {
        return Err(Error::invalid("grid step must be positive"));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=count)
        .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
        .collect())
}

/// Train-split (anchor, positive, negative) dataset indices.
fn sample_triples(dataset: &Dataset, n: usize, seed: u64) -> Result<Vec<(usize, usize, usize)>> {
    let train = dataset.split_indices(Split::Train);
    let labels = dataset.labels(&train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let a = rng.random_range(0..train.len());
        let same: Vec<usize> = (0..train.len())
            .filter(|&j| j != a && labels[j] == labels[a])
            .collect();
        let other: Vec<usize> = (0..train.len())
            .filter(|&j| labels[j] != labels[a])
            .collect();
        if same.is_empty() || other.is_empty() {
            return Err(Error::Infeasible(
                "train split needs two classes of two examples".into(),
            ));
        }
        let p = same[rng.random_range(0..same.len())];
        let q = other[rng.random_range(0..other.len())];
        out.push((train[a], train[p], train[q]));
    }
    Ok(out)
}

/// Similarities `s(a, v)` between anchors and positive-negative mixtures at `λ`.
fn mixed_similarities(
    model: &Model,
    dataset: &Dataset,
    triples: &[(usize, usize, usize)],
    lambda: f64,
    kind: MixupType,
) -> Result<Vec<f64>> {
    let x = |i: usize| dataset.examples()[i].features.as_slice();
    triples
        .iter()
        .map(|&(a, p, q)| {
            let anchor = model.embed(x(a))?;
            let v = f_lambda(&model.encoder, x(p), x(q), lambda, kind)?;
            Ok(dot(&anchor, &v))
        })
        .collect()
}

/// Settings shared by both positivity curves.
#[derive(Debug, Clone, PartialEq)]
pub struct PositivityConfig {
    pub grid: Vec<f64>,
    pub samples: usize,
    pub mixup_type: MixupType,
    pub seed: u64,
}

impl PositivityConfig {
    fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("positivity needs at least one sample"));
        }
        if self.grid.is_empty() || self.grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::invalid(
                "lambda grid must be non-empty and inside [0, 1]",
            ));
        }
        if self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lambda grid must be strictly ascending"));
        }
        Ok(())
    }
}

/// Fraction of instances whose mixed-loss derivative `∂ℓ̃/∂s` is `≤ 0`, per grid point.
/// Each instance is an anchor with a single positive-negative mixture labeled `λ`;
/// the same instances are reused across the grid.
pub fn positivity_empirical(
    model: &Model,
    dataset: &Dataset,
    plugin: &LossPlugin,
    cfg: &PositivityConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let triples = sample_triples(dataset, cfg.samples, cfg.seed)?;
    cfg.grid
        .iter()
        .map(|&lambda| {
            let sims = mixed_similarities(model, dataset, &triples, lambda, cfg.mixup_type)?;
            let mut positive = 0usize;
            for s in sims {
                let (_, grad) = plugin.labeled_loss_grad(&[s], &[lambda])?;
                if grad[0] <= 0.0 {
                    positive += 1;
                }
            }
            Ok(positive as f64 / cfg.samples as f64)
        })
        .collect()
}

/// Empirical CDF of `s(a, v)` evaluated at the closed-form threshold, per grid point.
/// Draws its instances from a stream independent of [`positivity_empirical`].
pub fn positivity_theoretical(
    model: &Model,
    dataset: &Dataset,
    plugin: &LossPlugin,
    cfg: &PositivityConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if plugin.kind != PluginKind::Ms {
        return Err(Error::invalid(format!(
            "the closed-form positivity threshold exists for `ms`, not `{}`",
            plugin.kind
        )));
    }
    let h = plugin.hyper;
    let triples = sample_triples(dataset, cfg.samples, cfg.seed ^ 0x5eed_cdf0_0000_0001)?;
    cfg.grid
        .iter()
        .map(|&lambda| {
            let threshold = ms_positivity_threshold(lambda, h.beta, h.gamma, h.margin)?;
            let sims = mixed_similarities(model, dataset, &triples, lambda, cfg.mixup_type)?;
            Ok(empirical_cdf(&sims, threshold))
        })
        .collect()
}

/// Fraction of `values` at or below `x`.
pub fn empirical_cdf(values: &[f64], x: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v <= x).count() as f64 / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositivityCurve {
    pub lambdas: Vec<f64>,
    pub empirical: Vec<f64>,
    pub theoretical: Vec<f64>,
    pub samples: usize,
}

pub fn positivity_curve(
    model: &Model,
    dataset: &Dataset,
    plugin: &LossPlugin,
    cfg: &PositivityConfig,
) -> Result<PositivityCurve> {
    Ok(PositivityCurve {
        lambdas: cfg.grid.clone(),
        empirical: positivity_empirical(model, dataset, plugin, cfg)?,
        theoretical: positivity_theoretical(model, dataset, plugin, cfg)?,
        samples: cfg.samples,
    })
}
