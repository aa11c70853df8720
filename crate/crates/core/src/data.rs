//! Synthetic labeled datasets with disjoint train/test classes, and batch samplers.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Vec64;

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec64,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Labeled examples whose classes are partitioned into train and test sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    class_count: usize,
    examples: Vec<Example>,
    train_classes: Vec<usize>,
    test_classes: Vec<usize>,
}

/// Parameters of the Gaussian-blob generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianSpec {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self {
            classes: 32,
            per_class: 20,
            dim: 8,
            center_scale: 1.0,
            sigma: 0.35,
            seed: 42,
        }
    }
}

impl Dataset {
    /// Builds a dataset and checks every structural invariant.
    pub fn new(
        input_dim: usize,
        class_count: usize,
        examples: Vec<Example>,
        train_classes: Vec<usize>,
    ) -> Result<Self> {
        if input_dim == 0 || class_count == 0 {
            return Err(Error::invalid("dimension and class count must be positive"));
        }
        let mut counts = vec![0usize; class_count];
        for ex in &examples {
            if ex.features.dim() != input_dim {
                return Err(Error::DimMismatch {
                    expected: input_dim,
                    got: ex.features.dim(),
                });
            }
            if ex.class_id >= class_count {
                return Err(Error::invalid(format!(
                    "class id {} out of range for {} classes",
                    ex.class_id, class_count
                )));
            }
            counts[ex.class_id] += 1;
        }
        if let Some(c) = counts.iter().position(|&n| n < 2) {
            return Err(Error::invalid(format!(
                "class {c} has fewer than 2 examples"
            )));
        }
        let train: BTreeSet<usize> = train_classes.iter().copied().collect();
        if train.len() != train_classes.len() {
            return Err(Error::invalid("duplicate train class id"));
        }
        if let Some(&c) = train.iter().find(|&&c| c >= class_count) {
            return Err(Error::invalid(format!("train class {c} out of range")));
        }
        let test_classes: Vec<usize> = (0..class_count).filter(|c| !train.contains(c)).collect();
        if train.is_empty() || test_classes.is_empty() {
            return Err(Error::invalid(
                "train and test class sets must both be non-empty",
            ));
        }
        Ok(Self {
            input_dim,
            class_count,
            examples,
            train_classes: train.into_iter().collect(),
            test_classes,
        })
    }

    /// Class `c` gets `per_class` points around a center drawn uniformly from
    /// `[-center_scale, center_scale]^dim`. Even class ids train, odd ids test.
    pub fn generate_gaussian(spec: &GaussianSpec) -> Result<Self> {
        if spec.classes < 2 || !spec.classes.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "class count must be even and at least 2, got {}",
                spec.classes
            )));
        }
        if spec.per_class < 2 {
            return Err(Error::invalid("need at least 2 examples per class"));
        }
        if spec.dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        if !(spec.sigma > 0.0) || !spec.sigma.is_finite() {
            return Err(Error::invalid("noise sigma must be positive"));
        }
        if !(spec.center_scale >= 0.0) || !spec.center_scale.is_finite() {
            return Err(Error::invalid("center scale must be non-negative"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let centers: Vec<Vec<f64>> = (0..spec.classes)
            .map(|_| {
                (0..spec.dim)
                    .map(|_| rng.random_range(-1.0..=1.0) * spec.center_scale)
                    .collect()
            })
            .collect();
        let mut examples = Vec::with_capacity(spec.classes * spec.per_class);
        for (class_id, center) in centers.iter().enumerate() {
            for _ in 0..spec.per_class {
                let features = center
                    .iter()
                    .map(|&mu| {
                        let z: f64 = rng.sample(StandardNormal);
                        mu + spec.sigma * z
                    })
                    .collect();
                examples.push(Example {
                    features: Vec64::new(features)?,
                    class_id,
                });
            }
        }
        let train = (0..spec.classes).step_by(2).collect();
        Self::new(spec.dim, spec.classes, examples, train)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn train_classes(&self) -> &[usize] {
        &self.train_classes
    }

    pub fn test_classes(&self) -> &[usize] {
        &self.test_classes
    }

    pub fn is_train_class(&self, class_id: usize) -> bool {
        self.train_classes.binary_search(&class_id).is_ok()
    }

    /// Indices of the examples belonging to `split`, in dataset order.
    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        let want_train = split == Split::Train;
        self.examples
            .iter()
            .enumerate()
            .filter(|(_, ex)| self.is_train_class(ex.class_id) == want_train)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.examples[i].class_id).collect()
    }

    /// Writes `class_id v1 ... vdim`, one example per line.
    pub fn write_examples<W: Write>(&self, mut out: W) -> Result<()> {
        for ex in &self.examples {
            write!(out, "{}", ex.class_id)?;
            for v in ex.features.iter() {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Writes the train class ids, one per line.
    pub fn write_split<W: Write>(&self, mut out: W) -> Result<()> {
        for c in &self.train_classes {
            writeln!(out, "{c}")?;
        }
        Ok(())
    }

    /// Reads the two files written by [`Dataset::write_examples`] and
    /// [`Dataset::write_split`]. The dimension is taken from the first example
    /// and the class count from the largest class id.
    pub fn read<R: BufRead, S: BufRead>(examples: R, split: S) -> Result<Self> {
        let mut parsed = Vec::new();
        let mut input_dim = None;
        for (n, line) in examples.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(first) = fields.next() else {
                continue;
            };
            let class_id = parse_field(first, n)?;
            let values = fields
                .map(|f| parse_field::<f64>(f, n))
                .collect::<Result<Vec<_>>>()?;
            let dim = *input_dim.get_or_insert(values.len());
            if values.len() != dim {
                return Err(Error::parse(
                    n + 1,
                    format!("expected {dim} values, got {}", values.len()),
                ));
            }
            let features = Vec64::new(values).map_err(|e| Error::parse(n + 1, e.to_string()))?;
            parsed.push(Example { features, class_id });
        }
        let input_dim = input_dim.ok_or_else(|| Error::parse(1, "no examples"))?;
        let class_count = parsed.iter().map(|e| e.class_id + 1).max().unwrap_or(0);
        let mut train = Vec::new();
        for (n, line) in split.lines().enumerate() {
            let line = line?;
            for field in line.split_whitespace() {
                train.push(parse_field(field, n)?);
            }
        }
        Self::new(input_dim, class_count, parsed, train)
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::parse(line + 1, format!("cannot parse `{field}`")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    Random,
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub mode: SamplingMode,
    pub batch_size: usize,
    pub classes_per_batch: usize,
    pub samples_per_class: usize,
    /// Not part of configuration files; the trainer derives it from its own seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::Balanced,
            batch_size: 40,
            classes_per_batch: 8,
            samples_per_class: 5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if self.mode == SamplingMode::Balanced
            && self.classes_per_batch * self.samples_per_class != self.batch_size
        {
            return Err(Error::invalid(format!(
                "balanced sampling needs classes_per_batch * samples_per_class == batch_size ({} * {} != {})",
                self.classes_per_batch, self.samples_per_class, self.batch_size
            )));
        }
        Ok(())
    }
}

/// Position within a training run; batches are a pure function of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochState {
    pub epoch: usize,
    pub step: usize,
}

/// Draws a batch of train-split dataset indices.
pub fn sample_batch(
    dataset: &Dataset,
    config: &SamplerConfig,
    state: EpochState,
) -> Result<Vec<usize>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(((state.epoch as u64) << 32) | state.step as u64);
    let train = dataset.split_indices(Split::Train);
    match config.mode {
        SamplingMode::Random => {
            if config.batch_size > train.len() {
                return Err(Error::Infeasible(format!(
                    "batch size {} exceeds train split size {}",
                    config.batch_size,
                    train.len()
                )));
            }
            Ok(sample(&mut rng, train.len(), config.batch_size)
                .into_iter()
                .map(|i| train[i])
                .collect())
        }
        SamplingMode::Balanced => {
            let eligible: Vec<Vec<usize>> = dataset
                .train_classes()
                .iter()
                .map(|&c| {
                    train
                        .iter()
                        .copied()
                        .filter(|&i| dataset.examples()[i].class_id == c)
                        .collect::<Vec<_>>()
                })
                .filter(|members| members.len() >= config.samples_per_class)
                .collect();
            if config.classes_per_batch > eligible.len() {
                return Err(Error::Infeasible(format!(
                    "{} classes per batch requested but only {} train classes have {} examples",
                    config.classes_per_batch,
                    eligible.len(),
                    config.samples_per_class
                )));
            }
            let mut batch = Vec::with_capacity(config.batch_size);
            for ci in sample(&mut rng, eligible.len(), config.classes_per_batch) {
                let members = &eligible[ci];
                for j in sample(&mut rng, members.len(), config.samples_per_class) {
                    batch.push(members[j]);
                }
            }
            Ok(batch)
        }
    }
}

/// Batch positions of the positives and negatives of the anchor at `anchor`.
pub fn positives_negatives(anchor: usize, labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let class = labels[anchor];
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (i, &c) in labels.iter().enumerate() {
        if i == anchor {
            continue;
        }
        if c == class {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    (pos, neg)
}
