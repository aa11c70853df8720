//! Toy encoder `f = f_m ∘ g_m` with an ℓ2-normalized head, plus an optional proxy bank.
//!
//! Every layer except the last is followed by `tanh`. `g_m` runs layers
//! `0..m`, `f_m` runs layers `m..L` and normalizes. Gradients are computed by
//! explicit backpropagation over a recorded [`RangeTrace`].

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{check_dims, dot, norm};

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        check_dims(inputs * outputs, weights.len())?;
        check_dims(outputs, bias.len())?;
        if let Some(&bad) = weights.iter().chain(&bias).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(bad));
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            bias,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| b + dot(row, x))
            .collect()
    }
}

/// Architecture of the default encoder family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    pub split: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            embed_dim: 16,
            split: 1,
        }
    }
}

/// Encoder weights with a designated split layer `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    layers: Vec<Layer>,
    split: usize,
}

/// Per-layer inputs and outputs recorded by a forward pass over a layer range.
#[derive(Debug, Clone)]
pub struct RangeTrace {
    from: usize,
    inputs: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

impl RangeTrace {
    pub fn output(&self) -> &[f64] {
        self.outputs
            .last()
            .map(Vec::as_slice)
            .unwrap_or(&self.inputs[0])
    }
}

/// Forward record of `f_m` including the normalization.
#[derive(Debug, Clone)]
pub struct EmbedTrace {
    range: RangeTrace,
    norm: f64,
    embedding: Vec<f64>,
}

impl EmbedTrace {
    pub fn embedding(&self) -> &[f64] {
        &self.embedding
    }
}

impl Encoder {
    pub fn new(layers: Vec<Layer>, split: usize) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::invalid("encoder needs at least two layers"));
        }
        if split == 0 || split >= layers.len() {
            return Err(Error::invalid(format!(
                "split index {split} must lie in 1..{}",
                layers.len()
            )));
        }
        for pair in layers.windows(2) {
            check_dims(pair[0].outputs, pair[1].inputs)?;
        }
        if layers.last().map(Layer::outputs).unwrap_or(0) < 2 {
            return Err(Error::invalid("embedding dimension must be at least 2"));
        }
        Ok(Self { layers, split })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init(input_dim: usize, config: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend(&config.hidden);
        dims.push(config.embed_dim);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                Layer::new(fan_in, fan_out, weights, vec![0.0; fan_out])
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, config.split)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.split].inputs
    }

    pub fn embed_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    fn activated(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len()
    }

    /// Runs layers `from..to`, recording what backpropagation needs.
    pub fn forward_range(&self, from: usize, to: usize, input: &[f64]) -> Result<RangeTrace> {
        check_dims(self.layers[from].inputs, input.len())?;
        let mut inputs = Vec::with_capacity(to - from);
        let mut outputs = Vec::with_capacity(to - from);
        let mut current = input.to_vec();
        for l in from..to {
            let mut out = self.layers[l].affine(&current);
            if self.activated(l) {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(current);
            current = out.clone();
            outputs.push(out);
        }
        Ok(RangeTrace {
            from,
            inputs,
            outputs,
        })
    }

    /// Backpropagates `d_output` through a recorded range, accumulating
    /// parameter gradients, and returns the gradient at the range input.
    pub fn backward_range(
        &self,
        trace: &RangeTrace,
        d_output: &[f64],
        grads: &mut EncoderGrads,
    ) -> Vec<f64> {
        let mut delta = d_output.to_vec();
        for (k, (input, output)) in trace.inputs.iter().zip(&trace.outputs).enumerate().rev() {
            let l = trace.from + k;
            let layer = &self.layers[l];
            if self.activated(l) {
                for (d, y) in delta.iter_mut().zip(output) {
                    *d *= 1.0 - y * y;
                }
            }
            let (gw, gb) = &mut grads.layers[l];
            let mut d_in = vec![0.0; layer.inputs];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    grow[i] += d * input[i];
                    d_in[i] += d * row[i];
                }
            }
            delta = d_in;
        }
        delta
    }

    /// `g_m`: input to the layer-`m` feature.
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_range(0, self.split, x)?.output().to_vec())
    }

    /// `f_m` with its forward record.
    pub fn embed_features_traced(&self, feature: &[f64]) -> Result<EmbedTrace> {
        let range = self.forward_range(self.split, self.layers.len(), feature)?;
        normalize_trace(range)
    }

    /// Full encoder `f` with its forward record, starting from the input.
    pub fn embed_traced(&self, x: &[f64]) -> Result<EmbedTrace> {
        let range = self.forward_range(0, self.layers.len(), x)?;
        normalize_trace(range)
    }

    /// `f_m`: layer-`m` feature to unit-norm embedding.
    pub fn embed_features(&self, feature: &[f64]) -> Result<Vec<f64>> {
        Ok(self.embed_features_traced(feature)?.embedding)
    }

    /// `f = f_m ∘ g_m`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.embed_features(&self.features(x)?)
    }

    /// Backpropagates through normalization and the traced layers.
    pub fn backward_embed(
        &self,
        trace: &EmbedTrace,
        d_embedding: &[f64],
        grads: &mut EncoderGrads,
    ) -> Vec<f64> {
        let e = &trace.embedding;
        let proj = dot(e, d_embedding);
        let d_pre: Vec<f64> = d_embedding
            .iter()
            .zip(e)
            .map(|(d, v)| (d - v * proj) / trace.norm)
            .collect();
        self.backward_range(&trace.range, &d_pre, grads)
    }

    pub fn zero_grads(&self) -> EncoderGrads {
        EncoderGrads {
            layers: self
                .layers
                .iter()
                .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
                .collect(),
        }
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }
}

fn normalize_trace(range: RangeTrace) -> Result<EmbedTrace> {
    let z = range.output();
    let n = norm(z);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm);
    }
    let embedding = z.iter().map(|v| v / n).collect();
    Ok(EmbedTrace {
        range,
        norm: n,
        embedding,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    /// `(d weights, d bias)` per layer.
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

/// One learnable vector per train class.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBank {
    classes: Vec<usize>,
    proxies: Vec<Vec<f64>>,
}

impl ProxyBank {
    /// Proxies drawn uniformly on the unit sphere.
    pub fn init(classes: &[usize], dim: usize, rng: &mut impl Rng) -> Self {
        let proxies = classes
            .iter()
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let n = norm(&v);
                if n > 1e-12 {
                    break v.into_iter().map(|x| x / n).collect();
                }
            })
            .collect();
        Self {
            classes: classes.to_vec(),
            proxies,
        }
    }

    pub fn from_parts(classes: Vec<usize>, proxies: Vec<Vec<f64>>) -> Result<Self> {
        check_dims(classes.len(), proxies.len())?;
        let dim = proxies.first().map(Vec::len).unwrap_or(0);
        for p in &proxies {
            check_dims(dim, p.len())?;
            if let Some(&bad) = p.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite(bad));
            }
        }
        Ok(Self { classes, proxies })
    }

    pub fn len(&self) -> usize {
        self.proxies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxies.is_empty()
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn raw(&self, slot: usize) -> &[f64] {
        &self.proxies[slot]
    }

    pub fn slot_of(&self, class_id: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class_id)
    }

    /// Unit-norm proxy and the pre-normalization length.
    pub fn normalized(&self, slot: usize) -> Result<(Vec<f64>, f64)> {
        let p = &self.proxies[slot];
        let n = norm(p);
        if n == 0.0 {
            return Err(Error::ZeroNorm);
        }
        Ok((p.iter().map(|v| v / n).collect(), n))
    }

    pub fn renormalize(&mut self) -> Result<()> {
        for p in &mut self.proxies {
            let n = norm(p);
            if n == 0.0 {
                return Err(Error::ZeroNorm);
            }
            p.iter_mut().for_each(|v| *v /= n);
        }
        Ok(())
    }

    pub(crate) fn proxies_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.proxies
    }
}

/// Gradient of a proxy given the gradient of its normalized form.
pub fn backward_normalize(unit: &[f64], length: f64, d_unit: &[f64]) -> Vec<f64> {
    let proj = dot(unit, d_unit);
    d_unit
        .iter()
        .zip(unit)
        .map(|(d, u)| (d - u * proj) / length)
        .collect()
}

/// Encoder plus optional proxies: every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: Encoder,
    pub proxies: Option<ProxyBank>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub encoder: EncoderGrads,
    pub proxies: Option<Vec<Vec<f64>>>,
}

impl ModelGrads {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.encoder.layers {
            out.extend(w);
            out.extend(b);
        }
        for p in self.proxies.iter().flatten() {
            out.extend(p);
        }
        out
    }

    pub fn scale(&mut self, c: f64) {
        for (w, b) in &mut self.encoder.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v *= c);
        }
        for p in self.proxies.iter_mut().flatten() {
            p.iter_mut().for_each(|v| *v *= c);
        }
    }
}

/// An input, an embedding, or a proxy: the extended domain of the similarity.
#[derive(Debug, Clone, Copy)]
pub enum EmbeddingOrInput<'a> {
    Input(&'a [f64]),
    Embedding(&'a [f64]),
    /// Proxy of the given class id.
    Proxy(usize),
}

impl Model {
    pub fn init(
        input_dim: usize,
        config: &ModelConfig,
        proxy_classes: Option<&[usize]>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::init(input_dim, config, &mut rng)?;
        let proxies = proxy_classes.map(|c| ProxyBank::init(c, config.embed_dim, &mut rng));
        Ok(Self { encoder, proxies })
    }

    pub fn zero_grads(&self) -> ModelGrads {
        ModelGrads {
            encoder: self.encoder.zero_grads(),
            proxies: self
                .proxies
                .as_ref()
                .map(|b| vec![vec![0.0; self.encoder.embed_dim()]; b.len()]),
        }
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.embed(x)
    }

    pub fn embed_all<'a>(&self, xs: impl IntoIterator<Item = &'a [f64]>) -> Result<Vec<Vec<f64>>> {
        xs.into_iter().map(|x| self.embed(x)).collect()
    }

    fn resolve(&self, p: EmbeddingOrInput<'_>) -> Result<Vec<f64>> {
        let d = self.encoder.embed_dim();
        match p {
            EmbeddingOrInput::Input(x) => self.embed(x),
            EmbeddingOrInput::Embedding(v) => {
                check_dims(d, v.len())?;
                Ok(v.to_vec())
            }
            EmbeddingOrInput::Proxy(class) => {
                let bank = self
                    .proxies
                    .as_ref()
                    .ok_or_else(|| Error::invalid("model has no proxy bank"))?;
                let slot = bank
                    .slot_of(class)
                    .ok_or_else(|| Error::invalid(format!("no proxy for class {class}")))?;
                Ok(bank.normalized(slot)?.0)
            }
        }
    }

    /// Inner product after mapping each side into the embedding space.
    pub fn similarity(&self, a: EmbeddingOrInput<'_>, b: EmbeddingOrInput<'_>) -> Result<f64> {
        let (u, v) = (self.resolve(a)?, self.resolve(b)?);
        Ok(dot(&u, &v))
    }

    /// Parameters in a fixed order: per layer weights then bias, then proxies.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in self.encoder.layers() {
            out.extend(&l.weights);
            out.extend(&l.bias);
        }
        if let Some(bank) = &self.proxies {
            for p in &bank.proxies {
                out.extend(p);
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dims(self.to_flat().len(), flat.len())?;
        let mut it = flat.iter().copied();
        for l in self.encoder.layers_mut() {
            l.weights.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        if let Some(bank) = &mut self.proxies {
            for p in bank.proxies_mut() {
                p.iter_mut().for_each(|v| *v = it.next().unwrap());
            }
        }
        Ok(())
    }

    /// Text checkpoint: `dims`, `split`, `proxies` header lines, then one `w`
    /// line per weight row and one `b` line per layer, then one `p` line per proxy.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let layers = self.encoder.layers();
        write!(out, "dims {}", layers[0].inputs)?;
        for l in layers {
            write!(out, " {}", l.outputs)?;
        }
        writeln!(out)?;
        writeln!(out, "split {}", self.encoder.split())?;
        writeln!(
            out,
            "proxies {}",
            self.proxies.as_ref().map_or(0, ProxyBank::len)
        )?;
        for l in layers {
            for row in l.weights.chunks_exact(l.inputs) {
                write_floats(&mut out, "w", row)?;
            }
            write_floats(&mut out, "b", &l.bias)?;
        }
        if let Some(bank) = &self.proxies {
            for (c, p) in bank.classes.iter().zip(&bank.proxies) {
                write_floats(&mut out, &format!("p {c}"), p)?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let mut it = lines
            .iter()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| (n + 1, l.split_whitespace().collect::<Vec<_>>()));
        let mut expect = |tag: &str| -> Result<(usize, Vec<&str>)> {
            let (n, fields) = it
                .next()
                .ok_or_else(|| Error::parse(lines.len(), format!("missing `{tag}` line")))?;
            if fields.first() != Some(&tag) {
                return Err(Error::parse(n, format!("expected `{tag}`")));
            }
            Ok((n, fields[1..].to_vec()))
        };
        let (n, dims) = expect("dims")?;
        let dims = parse_all::<usize>(&dims, n)?;
        let (n, split) = expect("split")?;
        let split = parse_one::<usize>(&split, n)?;
        let (n, proxy_count) = expect("proxies")?;
        let proxy_count = parse_one::<usize>(&proxy_count, n)?;
        if dims.len() < 3 {
            return Err(Error::parse(1, "need at least two layers"));
        }
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut weights = Vec::with_capacity(fan_in * fan_out);
            for _ in 0..fan_out {
                let (n, row) = expect("w")?;
                let row = parse_all::<f64>(&row, n)?;
                if row.len() != fan_in {
                    return Err(Error::parse(n, format!("expected {fan_in} weights")));
                }
                weights.extend(row);
            }
            let (n, bias) = expect("b")?;
            let bias = parse_all::<f64>(&bias, n)?;
            layers.push(
                Layer::new(fan_in, fan_out, weights, bias)
                    .map_err(|e| Error::parse(n, e.to_string()))?,
            );
        }
        let encoder = Encoder::new(layers, split)?;
        let proxies = if proxy_count > 0 {
            let mut classes = Vec::new();
            let mut vecs = Vec::new();
            for _ in 0..proxy_count {
                let (n, fields) = expect("p")?;
                let (class, values) = fields
                    .split_first()
                    .ok_or_else(|| Error::parse(n, "missing proxy class"))?;
                classes.push(parse_one::<usize>(&[class], n)?);
                let v = parse_all::<f64>(values, n)?;
                check_dims(encoder.embed_dim(), v.len())?;
                vecs.push(v);
            }
            Some(ProxyBank::from_parts(classes, vecs)?)
        } else {
            None
        };
        Ok(Self { encoder, proxies })
    }
}

fn write_floats<W: Write>(out: &mut W, tag: &str, values: &[f64]) -> Result<()> {
    write!(out, "{tag}")?;
    for v in values {
        write!(out, " {v}")?;
    }
    writeln!(out)?;
    Ok(())
}

fn parse_all<T: std::str::FromStr>(fields: &[&str], line: usize) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| {
            f.parse()
                .map_err(|_| Error::parse(line, format!("cannot parse `{f}`")))
        })
        .collect()
}

fn parse_one<T: std::str::FromStr>(fields: &[&str], line: usize) -> Result<T> {
    match fields {
        [f] => f
            .parse()
            .map_err(|_| Error::parse(line, format!("cannot parse `{f}`"))),
        _ => Err(Error::parse(line, "expected a single value")),
    }
}
