//! Forward pass: embed, add positions, stack residual wave blocks, pool,
//! classify.

use super::config::ModelConfig;
use super::params::{BoundParams, LayerVars, LinearVars, ModelParams};
use super::positional::positional_encoding;
use crate::error::{Error, Result};
use crate::math::{rng, Graph, Tensor, Var};
use crate::wave::{diff, CombineMode};

const DROPOUT_STREAM: u64 = 0xD0;

/// Padded token ids for `batch` sequences of `len` positions each.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub ids: Vec<u32>,
    /// `true` marks a real token.
    pub mask: Vec<bool>,
    pub labels: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl SequenceBatch {
    /// Pads `(ids, label)` pairs to the longest sequence with id 0.
    pub fn from_sequences<'a, I>(seqs: I) -> Self
    where
        I: IntoIterator<Item = (&'a [u32], usize)>,
    {
        let seqs: Vec<_> = seqs.into_iter().collect();
        let len = seqs.iter().map(|(ids, _)| ids.len()).max().unwrap_or(1).max(1);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        let mut labels = Vec::with_capacity(seqs.len());
        for (s, label) in &seqs {
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat(0).take(len - s.len()));
            mask.extend(std::iter::repeat(true).take(s.len()));
            mask.extend(std::iter::repeat(false).take(len - s.len()));
            labels.push(*label);
        }
        Self {
            ids,
            mask,
            labels,
            batch: seqs.len(),
            len,
        }
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.mask
            .chunks(self.len)
            .map(|row| row.iter().filter(|&&m| m).count())
            .collect()
    }

    pub fn mask_weights(&self) -> Vec<f64> {
        self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
    }

    /// Checks ids, labels, lengths and that every row has a real token.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if self.ids.len() != self.batch * self.len
            || self.mask.len() != self.ids.len()
            || self.labels.len() != self.batch
        {
            return Err(Error::InvalidArgument(format!(
                "inconsistent batch: {} ids, {} mask entries, {} labels for {} x {}",
                self.ids.len(),
                self.mask.len(),
                self.labels.len(),
                self.batch,
                self.len
            )));
        }
        if self.len > config.max_len {
            return Err(Error::InvalidArgument(format!(
                "sequence length {} exceeds max_len {}",
                self.len, config.max_len
            )));
        }
        if let Some(i) = self.ids.iter().position(|&id| id as usize >= config.vocab_size) {
            return Err(Error::InvalidArgument(format!(
                "token id {} at batch row {}, position {} is outside vocab of {}",
                self.ids[i],
                i / self.len,
                i % self.len,
                config.vocab_size
            )));
        }
        if let Some(row) = self.labels.iter().position(|&l| l >= config.n_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {} at batch row {row} out of range for {} classes",
                self.labels[row], config.n_classes
            )));
        }
        if let Some(row) = self.mask.chunks(self.len).position(|r| !r.iter().any(|&m| m)) {
            return Err(Error::InvalidArgument(format!(
                "batch row {row} has no real tokens"
            )));
        }
        Ok(())
    }
}

/// Whether dropout is active, and which random stream it draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardCtx {
    pub training: bool,
    pub seed: u64,
    pub step: u64,
}

impl ForwardCtx {
    pub fn inference() -> Self {
        Self {
            training: false,
            seed: 0,
            step: 0,
        }
    }

    pub fn training(seed: u64, step: u64) -> Self {
        Self {
            training: true,
            seed,
            step,
        }
    }

    fn dropout(
        &self,
        g: &mut Graph,
        x: Var,
        p: f64,
        layer: usize,
        site: u64,
    ) -> Result<Var> {
        if !self.training || p == 0.0 {
            return Ok(x);
        }
        let mut stream = rng::stream(self.seed, &[DROPOUT_STREAM, layer as u64, self.step, site]);
        g.dropout(x, p, &mut stream, true)
    }
}

/// `x · W + b` over the last axis of `x`.
pub fn linear(g: &mut Graph, x: Var, lin: LinearVars) -> Result<Var> {
    g.affine(x, lin.weight, lin.bias)
}

/// Token embeddings plus positional encoding, `[b, n, d]`.
pub fn embed(g: &mut Graph, p: &BoundParams, batch: &SequenceBatch, config: &ModelConfig) -> Result<Var> {
    let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
    let rows = g.gather_rows(p.embedding, &ids)?;
    let x = g.reshape(rows, &[batch.batch, batch.len, config.d])?;
    let pe = positional_encoding(batch.len, config.d)?;
    let pe = g.leaf(pe);
    g.add(x, pe)
}

/// The wave sublayer: two linear variants of `x`, each turned into a
/// complex representation over its own global semantics, combined, then
/// mapped back to `d` real features from `[re | im]`.
pub fn wave_overlay(
    g: &mut Graph,
    x: Var,
    mask: &[f64],
    layer: &LayerVars,
    mode: CombineMode,
) -> Result<Var> {
    let a = linear(g, x, layer.proj_a)?;
    let b = linear(g, x, layer.proj_b)?;
    let za = diff::to_complex(g, a, mask)?;
    let zb = diff::to_complex(g, b, mask)?;
    let c = diff::combine(g, mode, za, zb)?;
    let both = g.concat_last(c.re, c.im)?;
    linear(g, both, layer.g_proj)
}

/// One pre-norm residual block over `[b, n, d]`:
///
/// ```text
/// W' = W + D(g(f(norm1(W))))
/// W'' = W' + D(ffn(norm2(W')))
/// ```
#[allow(clippy::too_many_arguments)]
pub fn block_forward(
    g: &mut Graph,
    w: Var,
    mask: &[f64],
    layer: &LayerVars,
    layer_index: usize,
    config: &ModelConfig,
    ctx: &ForwardCtx,
) -> Result<Var> {
    let n1 = g.layer_norm(w, layer.norm1.gain, layer.norm1.bias)?;
    let wave = wave_overlay(g, n1, mask, layer, config.combine_mode)?;
    let wave = ctx.dropout(g, wave, config.dropout_p, layer_index, 0)?;
    let mid = g.add(w, wave)?;

    let n2 = g.layer_norm(mid, layer.norm2.gain, layer.norm2.bias)?;
    let h = linear(g, n2, layer.ffn_in)?;
    let h = g.relu(h);
    let f = linear(g, h, layer.ffn_out)?;
    let f = ctx.dropout(g, f, config.dropout_p, layer_index, 1)?;
    g.add(mid, f)
}

/// A full block applied to one `[n, d]` sequence.
#[allow(clippy::too_many_arguments)]
pub fn wave_layer_forward(
    g: &mut Graph,
    x: Var,
    mask: &[bool],
    layer: &LayerVars,
    layer_index: usize,
    config: &ModelConfig,
    ctx: &ForwardCtx,
) -> Result<Var> {
    let dims = g.value(x).dims().to_vec();
    if dims.len() != 2 || dims[0] != mask.len() {
        return Err(Error::shape("wave_layer_forward", &dims, &[mask.len()]));
    }
    let weights: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let x3 = g.reshape(x, &[1, dims[0], dims[1]])?;
    let y = block_forward(g, x3, &weights, layer, layer_index, config, ctx)?;
    g.reshape(y, &dims)
}

/// Mean over real tokens, then the classifier: `[b, n, d] -> [b, C]`.
pub fn classify(g: &mut Graph, w: Var, mask: &[f64], classifier: LinearVars) -> Result<Var> {
    let pooled = g.masked_mean(w, mask, 1)?;
    linear(g, pooled, classifier)
}

/// Logits `[b, C]` and mean cross-entropy for a validated batch.
pub fn forward(
    g: &mut Graph,
    p: &BoundParams,
    batch: &SequenceBatch,
    config: &ModelConfig,
    ctx: &ForwardCtx,
) -> Result<(Var, Var)> {
    batch.validate(config)?;
    let mask = batch.mask_weights();
    let mut w = embed(g, p, batch, config)?;
    for (i, layer) in p.layers.iter().enumerate() {
        w = block_forward(g, w, &mask, layer, i, config, ctx)?;
    }
    let logits = classify(g, w, &mask, p.classifier)?;
    let loss = g.softmax_cross_entropy(logits, &batch.labels)?;
    Ok((logits, loss))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub loss: f64,
}

impl ForwardOutput {
    /// Arg-max class per row (first index on ties).
    pub fn predictions(&self) -> Vec<usize> {
        let c = self.logits.dims()[1];
        self.logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect()
    }
}

/// Forward pass without gradient bookkeeping.
pub fn model_forward(
    batch: &SequenceBatch,
    params: &ModelParams,
    config: &ModelConfig,
    ctx: &ForwardCtx,
) -> Result<ForwardOutput> {
    let mut g = Graph::inference();
    let p = params.bind(&mut g);
    let (logits, loss) = forward(&mut g, &p, batch, config, ctx)?;
    Ok(ForwardOutput {
        logits: g.value(logits).clone(),
        loss: g.value(loss).item(),
    })
}

/// Forward and backward; gradients come back in canonical parameter order.
pub fn loss_and_gradients(
    batch: &SequenceBatch,
    params: &ModelParams,
    config: &ModelConfig,
    ctx: &ForwardCtx,
) -> Result<(ForwardOutput, Vec<Tensor>)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let (logits, loss) = forward(&mut g, &p, batch, config, ctx)?;
    let grads = g.backward(loss)?;
    let tensors = params.tensors();
    let out = p
        .all
        .iter()
        .zip(tensors)
        .map(|(&v, t)| grads.get_or_zeros(v, t))
        .collect();
    Ok((
        ForwardOutput {
            logits: g.value(logits).clone(),
            loss: g.value(loss).item(),
        },
        out,
    ))
}
