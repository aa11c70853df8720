//! Mixing pairs, interpolation factors and mixed embeddings with interpolated labels.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Encoder;
use crate::numerics::{check_dims, Vec64};

/// `λ·x + (1 − λ)·x2`.
pub fn mix(x: &[f64], x2: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_dims(x.len(), x2.len())?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "mixing factor {lambda} outside [0, 1]"
        )));
    }
    Ok(mix_unchecked(x, x2, lambda))
}

pub(crate) fn mix_unchecked(x: &[f64], x2: &[f64], lambda: f64) -> Vec<f64> {
    x.iter()
        .zip(x2)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect()
}

pub fn mix_vec(x: &Vec64, x2: &Vec64, lambda: f64) -> Result<Vec64> {
    Vec64::new(mix(x, x2, lambda)?)
}

/// Symmetric `Beta(α, α)` draws as `g₁ / (g₁ + g₂)` with `gᵢ ~ Gamma(α, 1)`.
#[derive(Debug, Clone)]
pub struct BetaSampler {
    alpha: f64,
    gamma: Gamma<f64>,
    rng: ChaCha8Rng,
}

impl BetaSampler {
    pub fn new(alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self {
            alpha,
            gamma,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// A draw strictly inside `(0, 1)` from the sampler's own stream.
    pub fn sample(&mut self) -> f64 {
        let gamma = self.gamma;
        draw_beta(&gamma, &mut self.rng)
    }

    /// A draw from an external stream; the internal stream is untouched.
    pub fn sample_with(&self, rng: &mut impl Rng) -> f64 {
        draw_beta(&self.gamma, rng)
    }
}

fn draw_beta(gamma: &Gamma<f64>, rng: &mut impl Rng) -> f64 {
    loop {
        let g1 = gamma.sample(rng);
        let g2 = gamma.sample(rng);
        let lambda = g1 / (g1 + g2);
        if lambda > 0.0 && lambda < 1.0 {
            return lambda;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PairKind {
    PosNeg,
    AncNeg,
    PosPos,
    NegNeg,
}

impl PairKind {
    pub fn name(self) -> &'static str {
        match self {
            PairKind::PosNeg => "pn",
            PairKind::AncNeg => "an",
            PairKind::PosPos => "pp",
            PairKind::NegNeg => "nn",
        }
    }
}

impl FromStr for PairKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pn" => Ok(PairKind::PosNeg),
            "an" => Ok(PairKind::AncNeg),
            "pp" => Ok(PairKind::PosPos),
            "nn" => Ok(PairKind::NegNeg),
            other => Err(Error::invalid(format!(
                "unknown pair kind `{other}`; valid kinds are: pp, pn, an, nn"
            ))),
        }
    }
}

impl TryFrom<String> for PairKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PairKind> for String {
    fn from(k: PairKind) -> String {
        k.name().into()
    }
}

/// Enabled pair kinds; one is drawn uniformly per training step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MixPairPolicy {
    kinds: Vec<PairKind>,
}

impl MixPairPolicy {
    pub fn new(mut kinds: Vec<PairKind>) -> Result<Self> {
        kinds.sort_unstable();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(Error::invalid("at least one pair kind must be enabled"));
        }
        Ok(Self { kinds })
    }

    pub fn kinds(&self) -> &[PairKind] {
        &self.kinds
    }

    pub fn draw(&self, rng: &mut impl Rng) -> PairKind {
        self.kinds[rng.random_range(0..self.kinds.len())]
    }

    /// Keeps `drawn` when feasible, otherwise redraws uniformly among the
    /// feasible enabled kinds. `None` when no enabled kind is feasible.
    pub fn resolve(
        &self,
        drawn: PairKind,
        sets: &AnchorSets,
        rng: &mut impl Rng,
    ) -> Option<PairKind> {
        if sets.feasible(drawn) {
            return Some(drawn);
        }
        let feasible: Vec<PairKind> = self
            .kinds
            .iter()
            .copied()
            .filter(|&k| sets.feasible(k))
            .collect();
        if feasible.is_empty() {
            None
        } else {
            Some(feasible[rng.random_range(0..feasible.len())])
        }
    }
}

impl FromStr for MixPairPolicy {
    type Err = Error;

    /// Accepts `pn,an` or `pn+an`.
    fn from_str(s: &str) -> Result<Self> {
        let kinds = s
            .split([',', '+'])
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(kinds)
    }
}

impl TryFrom<String> for MixPairPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MixPairPolicy> for String {
    fn from(p: MixPairPolicy) -> String {
        p.to_string()
    }
}

impl fmt::Display for MixPairPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        f.write_str(&names.join("+"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MixupType {
    Input,
    Feature,
    Embedding,
}

impl MixupType {
    pub fn name(self) -> &'static str {
        match self {
            MixupType::Input => "input",
            MixupType::Feature => "feature",
            MixupType::Embedding => "embed",
        }
    }
}

impl FromStr for MixupType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "input" => Ok(MixupType::Input),
            "feature" => Ok(MixupType::Feature),
            "embed" | "embedding" => Ok(MixupType::Embedding),
            other => Err(Error::invalid(format!(
                "unknown mixup type `{other}`; valid types are: input, feature, embed"
            ))),
        }
    }
}

impl TryFrom<String> for MixupType {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MixupType> for String {
    fn from(t: MixupType) -> String {
        t.name().into()
    }
}

/// Non-empty set of mixup types; one is drawn uniformly per training step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MixupTypes(Vec<MixupType>);

impl MixupTypes {
    pub fn new(mut types: Vec<MixupType>) -> Result<Self> {
        types.sort_unstable();
        types.dedup();
        if types.is_empty() {
            return Err(Error::invalid("at least one mixup type is required"));
        }
        Ok(Self(types))
    }

    pub fn single(t: MixupType) -> Self {
        Self(vec![t])
    }

    pub fn types(&self) -> &[MixupType] {
        &self.0
    }

    pub fn draw(&self, rng: &mut impl Rng) -> MixupType {
        if self.0.len() == 1 {
            return self.0[0];
        }
        self.0[rng.random_range(0..self.0.len())]
    }
}

impl FromStr for MixupTypes {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let types = s
            .split([',', '+'])
            .filter(|t| !t.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Self::new(types)
    }
}

impl TryFrom<String> for MixupTypes {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<MixupTypes> for String {
    fn from(t: MixupTypes) -> String {
        t.to_string()
    }
}

impl fmt::Display for MixupTypes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|k| k.name()).collect();
        f.write_str(&names.join("+"))
    }
}

/// The `k` negatives most similar to the anchor, most similar first.
/// `anchor_sims` is indexed by batch position; ties go to the lower position.
pub fn hard_negatives(anchor_sims: &[f64], negatives: &[usize], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if negatives.is_empty() {
        return Err(Error::Infeasible("anchor has no negatives".into()));
    }
    let mut ranked = negatives.to_vec();
    ranked.sort_by(|&a, &b| anchor_sims[b].total_cmp(&anchor_sims[a]).then(a.cmp(&b)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Batch positions relevant to one anchor. `anchor` is `None` for proxy anchors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorSets {
    pub anchor: Option<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl AnchorSets {
    pub fn feasible(&self, kind: PairKind) -> bool {
        match kind {
            PairKind::PosNeg => !self.positives.is_empty() && !self.negatives.is_empty(),
            PairKind::AncNeg => self.anchor.is_some() && !self.negatives.is_empty(),
            PairKind::PosPos => self.positives.len() >= 2,
            PairKind::NegNeg => self.negatives.len() >= 2,
        }
    }
}

/// Two batch positions to mix and their two-class labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixPair {
    pub first: usize,
    pub second: usize,
    pub first_label: f64,
    pub second_label: f64,
}

impl MixPair {
    pub fn label(&self, lambda: f64) -> f64 {
        lambda * self.first_label + (1.0 - lambda) * self.second_label
    }
}

/// How many negatives enter the pairs for each mixup type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardNegativeLimits {
    pub input: usize,
    /// `None` mixes all negatives.
    pub manifold: Option<usize>,
}

impl Default for HardNegativeLimits {
    fn default() -> Self {
        Self {
            input: 3,
            manifold: None,
        }
    }
}

/// Builds `M(a)` for one pair kind. Infeasible kinds yield an empty set.
pub fn select_pairs(
    sets: &AnchorSets,
    kind: PairKind,
    mixup_type: MixupType,
    limits: HardNegativeLimits,
    anchor_sims: &[f64],
) -> Result<Vec<MixPair>> {
    if !sets.feasible(kind) {
        return Ok(Vec::new());
    }
    let k = match mixup_type {
        MixupType::Input => Some(limits.input),
        _ => limits.manifold,
    };
    let negatives = match k {
        Some(k) => hard_negatives(anchor_sims, &sets.negatives, k)?,
        None => sets.negatives.clone(),
    };
    let pair = |first, second, first_label, second_label| MixPair {
        first,
        second,
        first_label,
        second_label,
    };
    let pairs = match kind {
        PairKind::PosNeg => sets
            .positives
            .iter()
            .flat_map(|&p| negatives.iter().map(move |&n| pair(p, n, 1.0, 0.0)))
            .collect(),
        PairKind::AncNeg => {
            let a = sets.anchor.expect("feasibility checked");
            negatives.iter().map(|&n| pair(a, n, 1.0, 0.0)).collect()
        }
        PairKind::PosPos => unordered(&sets.positives)
            .map(|(i, j)| pair(i, j, 1.0, 1.0))
            .collect(),
        PairKind::NegNeg => unordered(&negatives)
            .map(|(i, j)| pair(i, j, 0.0, 0.0))
            .collect(),
    };
    Ok(pairs)
}

fn unordered(items: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    items
        .iter()
        .enumerate()
        .flat_map(move |(i, &a)| items[i + 1..].iter().map(move |&b| (a, b)))
}

/// `f_λ(x, x2)`: mixes inputs, layer-`m` features or embeddings and returns a `d`-vector.
/// Input and feature mixup are normalized by the head; embedding mixup is not renormalized.
pub fn f_lambda(
    encoder: &Encoder,
    x: &[f64],
    x2: &[f64],
    lambda: f64,
    kind: MixupType,
) -> Result<Vec<f64>> {
    match kind {
        MixupType::Input => encoder.embed(&mix(x, x2, lambda)?),
        MixupType::Feature => {
            let h = encoder.features(x)?;
            let h2 = encoder.features(x2)?;
            encoder.embed_features(&mix(&h, &h2, lambda)?)
        }
        MixupType::Embedding => mix(&encoder.embed(x)?, &encoder.embed(x2)?, lambda),
    }
}

/// A mixed embedding with its interpolated label.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedExample {
    pub v: Vec64,
    pub y: f64,
    pub lambda: f64,
    /// Batch positions of the two endpoints.
    pub source: (usize, usize),
}

/// `V(a)`: one fresh `λ` per pair.
pub fn build_mixed_set(
    encoder: &Encoder,
    inputs: &[&[f64]],
    pairs: &[MixPair],
    kind: MixupType,
    sampler: &mut BetaSampler,
) -> Result<Vec<MixedExample>> {
    pairs
        .iter()
        .map(|p| {
            let lambda = sampler.sample();
            let v = f_lambda(encoder, inputs[p.first], inputs[p.second], lambda, kind)?;
            Ok(MixedExample {
                v: Vec64::new(v)?,
                y: p.label(lambda),
                lambda,
                source: (p.first, p.second),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Layer, Model, ModelConfig};
    use crate::numerics::norm;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn mix_examples() {
        let x = [1.0, 0.0];
        let y = [0.0, 1.0];
        assert_eq!(mix(&x, &y, 1.0).unwrap(), x);
        assert_eq!(mix(&x, &y, 0.0).unwrap(), y);
        let m = mix(&x, &y, 0.3).unwrap();
        assert!((m[0] - 0.3).abs() < 1e-15 && (m[1] - 0.7).abs() < 1e-15);
        assert!(matches!(
            mix(&x, &[1.0], 0.5),
            Err(Error::DimMismatch { .. })
        ));
        assert!(mix(&x, &y, 1.5).is_err());
    }

    #[test]
    fn beta_uniform_when_alpha_is_one() {
        let mut s = BetaSampler::new(1.0, 11).unwrap();
        let mut draws: Vec<f64> = (0..100_000).map(|_| s.sample()).collect();
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                ((i as f64 + 1.0) / n - x)
                    .abs()
                    .max((x - i as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "KS statistic {ks}");
    }

    #[test]
    fn beta_two_moments() {
        let mut s = BetaSampler::new(2.0, 12).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| s.sample()).collect();
        assert!(draws.iter().all(|&x| x > 0.0 && x < 1.0));
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        // αβ / ((α+β)²(α+β+1)) with α = β = 2
        let oracle = (2.0 * 2.0) / ((4.0f64).powi(2) * 5.0);
        assert!((oracle - 0.05f64).abs() < 1e-15);
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert!((var - oracle).abs() < 0.005, "variance {var}");
    }

    #[test]
    fn beta_is_deterministic_and_validates() {
        let mut a = BetaSampler::new(2.0, 5).unwrap();
        let mut b = BetaSampler::new(2.0, 5).unwrap();
        for _ in 0..100 {
            assert_eq!(a.sample().to_bits(), b.sample().to_bits());
        }
        assert!(BetaSampler::new(0.0, 0).is_err());
        assert!(BetaSampler::new(f64::NAN, 0).is_err());
    }

    #[test]
    fn policy_parsing_and_draws() {
        let p: MixPairPolicy = "pn,an".parse().unwrap();
        assert_eq!(p.kinds(), &[PairKind::PosNeg, PairKind::AncNeg]);
        assert_eq!(p, "an+pn".parse().unwrap());
        assert_eq!(p.to_string(), "pn+an");
        assert!("".parse::<MixPairPolicy>().is_err());
        assert!("pn,xx".parse::<MixPairPolicy>().is_err());

        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let d1: Vec<_> = (0..50).map(|_| p.draw(&mut r1)).collect();
        let d2: Vec<_> = (0..50).map(|_| p.draw(&mut r2)).collect();
        assert_eq!(d1, d2);
        assert!(d1.contains(&PairKind::PosNeg) && d1.contains(&PairKind::AncNeg));

        let t: MixupTypes = "input,feature,embed".parse().unwrap();
        assert_eq!(t.types().len(), 3);
        assert!("conv".parse::<MixupTypes>().is_err());
    }

    #[test]
    fn infeasible_kind_is_redrawn() {
        let p: MixPairPolicy = "pn,an".parse().unwrap();
        let no_pos = AnchorSets {
            anchor: Some(0),
            positives: vec![],
            negatives: vec![1, 2],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            p.resolve(PairKind::PosNeg, &no_pos, &mut rng),
            Some(PairKind::AncNeg)
        );
        let proxy_no_pos = AnchorSets {
            anchor: None,
            positives: vec![],
            negatives: vec![1, 2],
        };
        assert_eq!(p.resolve(PairKind::PosNeg, &proxy_no_pos, &mut rng), None);
    }

    #[test]
    fn hard_negative_selection() {
        let sims = [1.0, 0.2, 0.9, 0.5, 0.9, -0.3];
        let negs = [1, 2, 3, 4, 5];
        assert_eq!(hard_negatives(&sims, &negs, 3).unwrap(), vec![2, 4, 3]);
        assert_eq!(
            hard_negatives(&sims, &negs, 10).unwrap(),
            vec![2, 4, 3, 1, 5]
        );
        assert!(hard_negatives(&sims, &[], 3).is_err());
        assert!(hard_negatives(&sims, &negs, 0).is_err());
    }

    fn sets_4_15() -> AnchorSets {
        AnchorSets {
            anchor: Some(0),
            positives: (1..5).collect(),
            negatives: (5..20).collect(),
        }
    }

    #[test]
    fn pair_set_sizes() {
        let sims: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let lim = HardNegativeLimits::default();
        let s = sets_4_15();
        let pn = select_pairs(&s, PairKind::PosNeg, MixupType::Feature, lim, &sims).unwrap();
        assert_eq!(pn.len(), 60);
        let an = select_pairs(&s, PairKind::AncNeg, MixupType::Input, lim, &sims).unwrap();
        assert_eq!(an.len(), 3);
        assert!(an.iter().all(|p| p.first == 0));
        let pp = select_pairs(&s, PairKind::PosPos, MixupType::Embedding, lim, &sims).unwrap();
        assert_eq!(pp.len(), 6);
        assert!(pp.iter().all(|p| p.label(0.37) == 1.0));
        let nn = select_pairs(&s, PairKind::NegNeg, MixupType::Input, lim, &sims).unwrap();
        assert_eq!(nn.len(), 3);
        assert!(nn.iter().all(|p| p.label(0.81) == 0.0));
        let limited = HardNegativeLimits {
            input: 3,
            manifold: Some(5),
        };
        let pn = select_pairs(&s, PairKind::PosNeg, MixupType::Embedding, limited, &sims).unwrap();
        assert_eq!(pn.len(), 20);
    }

    fn model() -> Model {
        Model::init(
            4,
            &ModelConfig {
                hidden: vec![6],
                embed_dim: 3,
                split: 1,
            },
            None,
            3,
        )
        .unwrap()
    }

    #[test]
    fn f_lambda_at_one_is_clean_embedding() {
        let m = model();
        let x = [0.3, -0.2, 1.1, 0.5];
        let y = [-1.0, 0.4, 0.0, 0.9];
        let clean = m.embed(&x).unwrap();
        for t in [MixupType::Input, MixupType::Feature, MixupType::Embedding] {
            assert_eq!(
                f_lambda(&m.encoder, &x, &y, 1.0, t).unwrap(),
                clean,
                "{t:?}"
            );
        }
    }

    #[test]
    fn input_and_feature_mixup_differ_under_tanh() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut max_diff: f64 = 0.0;
        for _ in 0..20 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = f_lambda(&m.encoder, &x, &y, 0.5, MixupType::Input).unwrap();
            let b = f_lambda(&m.encoder, &x, &y, 0.5, MixupType::Feature).unwrap();
            max_diff = a
                .iter()
                .zip(&b)
                .map(|(p, q)| (p - q).abs())
                .fold(max_diff, f64::max);
        }
        assert!(max_diff > 0.0);
    }

    #[test]
    fn linear_head_makes_feature_and_embedding_mixup_agree() {
        // With a linear unnormalized head, f_m(mix(h, h')) = mix(f_m(h), f_m(h')).
        let l1 = Layer::new(
            2,
            3,
            vec![0.5, -0.1, 0.2, 0.7, -0.4, 0.3],
            vec![0.1, 0.0, -0.2],
        )
        .unwrap();
        let w2 = [0.3, -0.6, 0.9, 0.2, 0.4, -0.5];
        let enc = Encoder::new(
            vec![l1, Layer::new(3, 2, w2.to_vec(), vec![0.0; 2]).unwrap()],
            1,
        )
        .unwrap();
        let head = |h: &[f64]| -> Vec<f64> {
            w2.chunks(3)
                .map(|row| row.iter().zip(h).map(|(a, b)| a * b).sum())
                .collect()
        };
        let (x, y, lam) = ([0.4, -1.2], [1.5, 0.3], 0.35);
        let (hx, hy) = (enc.features(&x).unwrap(), enc.features(&y).unwrap());
        let feature = head(&mix(&hx, &hy, lam).unwrap());
        let embedding = mix(&head(&hx), &head(&hy), lam).unwrap();
        for (a, b) in feature.iter().zip(&embedding) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_set_labels() {
        let m = model();
        let inputs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.3 - 0.4; 4]).collect();
        let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
        let pairs = [
            MixPair {
                first: 0,
                second: 1,
                first_label: 1.0,
                second_label: 0.0,
            },
            MixPair {
                first: 1,
                second: 2,
                first_label: 0.0,
                second_label: 0.0,
            },
            MixPair {
                first: 2,
                second: 3,
                first_label: 1.0,
                second_label: 1.0,
            },
        ];
        let mut sampler = BetaSampler::new(2.0, 1).unwrap();
        let set = build_mixed_set(
            &m.encoder,
            &refs,
            &pairs,
            MixupType::Embedding,
            &mut sampler,
        )
        .unwrap();
        assert_eq!(set[0].y, set[0].lambda);
        assert_eq!(set[1].y, 0.0);
        assert_eq!(set[2].y, 1.0);
        assert_ne!(set[0].lambda, set[1].lambda);
        for e in &set {
            assert!(norm(&e.v) <= 1.0 + 1e-12);
            assert_eq!(e.v.dim(), 3);
        }
    }

    proptest! {
        #[test]
        fn labels_stay_in_unit_interval(lambda in 0.0f64..=1.0, y1 in prop::bool::ANY, y2 in prop::bool::ANY) {
            let p = MixPair { first: 0, second: 1, first_label: y1 as u8 as f64, second_label: y2 as u8 as f64 };
            let y = p.label(lambda);
            prop_assert!((0.0..=1.0).contains(&y));
            let pn = MixPair { first: 0, second: 1, first_label: 1.0, second_label: 0.0 };
            prop_assert_eq!(pn.label(lambda), lambda);
        }

        #[test]
        fn hard_negatives_agree_with_full_sort(
            sims in prop::collection::vec(-1.0f64..1.0, 2..30),
            k in 1usize..10,
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let negs: Vec<usize> = (0..sims.len()).filter(|_| rng.random_bool(0.6)).collect();
            prop_assume!(!negs.is_empty());
            let picked = hard_negatives(&sims, &negs, k).unwrap();
            let mut full: Vec<(f64, usize)> = negs.iter().map(|&i| (sims[i], i)).collect();
            full.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = full.iter().take(k).map(|x| x.1).collect();
            prop_assert_eq!(picked, expect);
        }

        #[test]
        fn embedding_mix_of_unit_vectors_stays_in_ball(
            a in prop::collection::vec(-1.0f64..1.0, 4),
            b in prop::collection::vec(-1.0f64..1.0, 4),
            lambda in 0.0f64..=1.0,
        ) {
            let a = Vec64::new(a).unwrap();
            let b = Vec64::new(b).unwrap();
            prop_assume!(a.norm() > 1e-6 && b.norm() > 1e-6);
            let v = mix_vec(&a.normalized().unwrap(), &b.normalized().unwrap(), lambda).unwrap();
            prop_assert!(v.norm() <= 1.0 + 1e-12);
        }
    }
}
