use crate::corpus::BOS_ID;
use crate::numerics::{Graph, ParamId, ParamStore, Real, SeededRng, Tensor, Var, LAYER_NORM_EPS};

use super::{ModelConfig, TransformerError};

/// Whether dropout is active, and the stream that drives it.
pub enum Mode<'r> {
    Inference,
    Train(&'r mut SeededRng),
}

impl Mode<'_> {
    fn dropout<T: Real>(&mut self, g: &mut Graph<T>, x: Var, rate: f64) -> Result<Var, TransformerError> {
        match self {
            Mode::Inference => Ok(x),
            Mode::Train(rng) => Ok(g.dropout(x, rate, true, rng)?),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttnIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Debug, Clone)]
struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    self_attn: AttnIds,
    norm1: NormIds,
    ffn: FfnIds,
    norm2: NormIds,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: AttnIds,
    norm1: NormIds,
    cross_attn: AttnIds,
    norm2: NormIds,
    ffn: FfnIds,
    norm3: NormIds,
}

#[derive(Debug, Clone)]
pub(crate) struct EmbedIds {
    pub(crate) table: ParamId,
    pub(crate) proj: Option<ParamId>,
}

/// Cross-attention weights for one decoding step, taken from the last decoder layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    /// `[heads][source positions]`
    pub heads: Vec<Vec<f64>>,
    /// Head average over source positions.
    pub mean: Vec<f64>,
}

impl AttentionTrace {
    fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; n];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        let h = rows.len().max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= h);
        AttentionTrace { heads: rows, mean }
    }
}

/// Encoder-decoder Transformer with post-norm sublayers.
#[derive(Debug, Clone)]
pub struct TransformerModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    pub(crate) src_embed: EmbedIds,
    pub(crate) tgt_embed: EmbedIds,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    generator: Option<ParamId>,
}

fn xavier<T: Real>(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::from_f64_lossy(rng.uniform(-limit, limit))).collect();
    Tensor::new(&[rows, cols], data).expect("sized")
}

pub(crate) fn embedding_init<T: Real>(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor<T> {
    let std = (cols as f64).powf(-0.5);
    let data = (0..rows * cols).map(|_| T::from_f64_lossy(rng.normal(0.0, std))).collect();
    Tensor::new(&[rows, cols], data).expect("sized")
}

pub(crate) fn projection_init<T: Real>(rows: usize, cols: usize, rng: &mut SeededRng) -> Tensor<T> {
    xavier(rows, cols, rng)
}

struct Builder<'a, T> {
    params: &'a mut ParamStore<T>,
    rng: &'a mut SeededRng,
    d: usize,
}

impl<T: Real> Builder<'_, T> {
    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let t = xavier(rows, cols, self.rng);
        self.params.add(name, t)
    }

    fn zeros(&mut self, name: String, n: usize) -> ParamId {
        self.params.add(name, Tensor::zeros(&[n]))
    }

    fn attn(&mut self, prefix: &str) -> AttnIds {
        let d = self.d;
        AttnIds {
            wq: self.matrix(format!("{prefix}.wq"), d, d),
            bq: self.zeros(format!("{prefix}.bq"), d),
            wk: self.matrix(format!("{prefix}.wk"), d, d),
            bk: self.zeros(format!("{prefix}.bk"), d),
            wv: self.matrix(format!("{prefix}.wv"), d, d),
            bv: self.zeros(format!("{prefix}.bv"), d),
            wo: self.matrix(format!("{prefix}.wo"), d, d),
            bo: self.zeros(format!("{prefix}.bo"), d),
        }
    }

    fn norm(&mut self, prefix: &str) -> NormIds {
        NormIds {
            gain: self.params.add(format!("{prefix}.gain"), Tensor::filled(&[self.d], T::one())),
            bias: self.zeros(format!("{prefix}.bias"), self.d),
        }
    }

    fn ffn(&mut self, prefix: &str, hidden: usize) -> FfnIds {
        let d = self.d;
        FfnIds {
            w1: self.matrix(format!("{prefix}.w1"), d, hidden),
            b1: self.zeros(format!("{prefix}.b1"), hidden),
            w2: self.matrix(format!("{prefix}.w2"), hidden, d),
            b2: self.zeros(format!("{prefix}.b2"), d),
        }
    }

    fn embed(&mut self, prefix: &str, vocab: usize, width: Option<usize>) -> EmbedIds {
        let w = width.unwrap_or(self.d);
        let table = embedding_init(vocab, w, self.rng);
        let table = self.params.add(format!("{prefix}.embed"), table);
        let proj = width.map(|w| {
            let p = projection_init(w, self.d, self.rng);
            self.params.add(format!("{prefix}.embed_proj"), p)
        });
        EmbedIds { table, proj }
    }
}

/// Sinusoidal position table `[length, d_model]`.
pub fn positional_encoding<T: Real>(length: usize, d_model: usize, max_positions: usize) -> Result<Tensor<T>, TransformerError> {
    if length > max_positions {
        return Err(TransformerError::Contract(format!(
            "sequence length {length} exceeds max_positions {max_positions}"
        )));
    }
    let mut data = Vec::with_capacity(length * d_model);
    for pos in 0..length {
        for col in 0..d_model {
            let pair = (col / 2 * 2) as f64;
            let angle = pos as f64 / 10000f64.powf(pair / d_model as f64);
            data.push(T::from_f64_lossy(if col % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    Ok(Tensor::new(&[length, d_model], data)?)
}

/// Blocks attention to later positions: entry `(i, j)` is blocked when `j > i`.
pub fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|k| k % len > k / len).collect()
}

impl<T: Real> TransformerModel<T> {
    pub fn new(config: ModelConfig, rng: &mut SeededRng) -> Result<Self, TransformerError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder {
            params: &mut params,
            rng,
            d: config.d_model,
        };
        let src_embed = b.embed("encoder", config.src_vocab_size, config.src_embed_dim);
        let tgt_embed = b.embed("decoder", config.tgt_vocab_size, config.tgt_embed_dim);
        let encoder = (0..config.num_layers)
            .map(|i| {
                let p = format!("encoder.layer{i}");
                EncoderLayer {
                    self_attn: b.attn(&format!("{p}.self_attn")),
                    norm1: b.norm(&format!("{p}.norm1")),
                    ffn: b.ffn(&format!("{p}.ffn"), config.ffn_dim),
                    norm2: b.norm(&format!("{p}.norm2")),
                }
            })
            .collect();
        let decoder = (0..config.num_layers)
            .map(|i| {
                let p = format!("decoder.layer{i}");
                DecoderLayer {
                    self_attn: b.attn(&format!("{p}.self_attn")),
                    norm1: b.norm(&format!("{p}.norm1")),
                    cross_attn: b.attn(&format!("{p}.cross_attn")),
                    norm2: b.norm(&format!("{p}.norm2")),
                    ffn: b.ffn(&format!("{p}.ffn"), config.ffn_dim),
                    norm3: b.norm(&format!("{p}.norm3")),
                }
            })
            .collect();
        let generator = if config.tie_decoder_embeddings {
            None
        } else {
            Some(b.matrix("generator.weight".into(), config.d_model, config.tgt_vocab_size))
        };
        Ok(TransformerModel {
            config,
            params,
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            generator,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub(crate) fn config_mut(&mut self) -> &mut ModelConfig {
        &mut self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    pub fn source_embedding(&self) -> ParamId {
        self.src_embed.table
    }

    pub fn target_embedding(&self) -> ParamId {
        self.tgt_embed.table
    }

    /// Parameter feeding the output layer. With tied embeddings this is the
    /// target embedding table itself.
    pub fn output_projection(&self) -> ParamId {
        self.generator.unwrap_or(self.tgt_embed.table)
    }

    pub(crate) fn set_embed_proj(&mut self, side_is_source: bool, proj: Option<ParamId>) {
        if side_is_source {
            self.src_embed.proj = proj;
        } else {
            self.tgt_embed.proj = proj;
        }
    }

    /// Same architecture, different element type.
    pub fn cast<U: Real>(&self) -> TransformerModel<U> {
        TransformerModel {
            config: self.config.clone(),
            params: self.params.cast(),
            src_embed: self.src_embed.clone(),
            tgt_embed: self.tgt_embed.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            generator: self.generator,
        }
    }

    /// Embedding lookup (optionally projected), √d_model scaling, positions, dropout.
    pub(crate) fn embed<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        ids: &EmbedIds,
        tokens: &[usize],
        positions: bool,
        mode: &mut Mode,
    ) -> Result<Var, TransformerError> {
        let d = self.config.d_model;
        let table = g.param(ids.table);
        let mut x = g.gather(table, tokens)?;
        if let Some(p) = ids.proj {
            let pv = g.param(p);
            x = g.matmul(x, pv)?;
        }
        if self.config.scale_embeddings {
            x = g.scale(x, T::from_f64_lossy((d as f64).sqrt()))?;
        }
        if positions {
            let pe = positional_encoding(tokens.len(), d, self.config.max_positions)?;
            let pe = g.constant(pe);
            x = g.add(x, pe)?;
        }
        mode.dropout(g, x, self.config.dropout)
    }

    /// Scaled dot-product attention over `num_heads` column blocks. Returns the
    /// projected output and the per-head weight matrices `[T_q, T_k]`.
    pub(crate) fn attention<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        p: &AttnIds,
        query: Var,
        memory: Var,
        blocked: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>), TransformerError> {
        let heads = self.config.num_heads;
        let dk = self.config.head_dim();
        let lin = |g: &mut Graph<'p, T>, x: Var, w: ParamId, b: ParamId| -> Result<Var, TransformerError> {
            let wv = g.param(w);
            let bv = g.param(b);
            let y = g.matmul(x, wv)?;
            Ok(g.add_row(y, bv)?)
        };
        let q = lin(g, query, p.wq, p.bq)?;
        let k = lin(g, memory, p.wk, p.bk)?;
        let v = lin(g, memory, p.wv, p.bv)?;
        let scale = T::from_f64_lossy(1.0 / (dk as f64).sqrt());
        let mut contexts = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dk, dk)?;
            let kh = g.slice_cols(k, h * dk, dk)?;
            let vh = g.slice_cols(v, h * dk, dk)?;
            let scores = g.matmul_bt(qh, kh)?;
            let scores = g.scale(scores, scale)?;
            let w = g.softmax(scores, blocked)?;
            contexts.push(g.matmul(w, vh)?);
            weights.push(w);
        }
        let ctx = if heads == 1 { contexts[0] } else { g.concat_cols(&contexts)? };
        Ok((lin(g, ctx, p.wo, p.bo)?, weights))
    }

    fn sublayer_out<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        residual: Var,
        out: Var,
        norm: &NormIds,
        mode: &mut Mode,
    ) -> Result<Var, TransformerError> {
        let out = mode.dropout(g, out, self.config.dropout)?;
        let sum = g.add(residual, out)?;
        let gain = g.param(norm.gain);
        let bias = g.param(norm.bias);
        Ok(g.layer_norm(sum, gain, bias, T::from_f64_lossy(LAYER_NORM_EPS))?)
    }

    fn feed_forward<'p>(&'p self, g: &mut Graph<'p, T>, p: &FfnIds, x: Var, mode: &mut Mode) -> Result<Var, TransformerError> {
        let w1 = g.param(p.w1);
        let b1 = g.param(p.b1);
        let h = g.matmul(x, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h)?;
        let h = mode.dropout(g, h, self.config.dropout)?;
        let w2 = g.param(p.w2);
        let b2 = g.param(p.b2);
        let y = g.matmul(h, w2)?;
        Ok(g.add_row(y, b2)?)
    }

    pub(crate) fn encode_graph<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        source: &[usize],
        positions: bool,
        mode: &mut Mode,
    ) -> Result<Var, TransformerError> {
        if source.is_empty() {
            return Err(TransformerError::Contract("empty source sentence".into()));
        }
        self.check_ids(source, self.config.src_vocab_size)?;
        let mut x = self.embed(g, &self.src_embed, source, positions, mode)?;
        for layer in &self.encoder {
            let (a, _) = self.attention(g, &layer.self_attn, x, x, None)?;
            x = self.sublayer_out(g, x, a, &layer.norm1, mode)?;
            let f = self.feed_forward(g, &layer.ffn, x, mode)?;
            x = self.sublayer_out(g, x, f, &layer.norm2, mode)?;
        }
        Ok(x)
    }

    /// Teacher-forced decoder pass. Returns logits `[T, V_tgt]` and the
    /// last layer's cross-attention weights per head.
    pub(crate) fn decode_graph<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        memory: Var,
        prefix: &[usize],
        mode: &mut Mode,
    ) -> Result<(Var, Vec<Var>), TransformerError> {
        if prefix.is_empty() {
            return Err(TransformerError::Contract("empty target prefix".into()));
        }
        self.check_ids(prefix, self.config.tgt_vocab_size)?;
        let mask = causal_mask(prefix.len());
        let mut x = self.embed(g, &self.tgt_embed, prefix, true, mode)?;
        let mut cross = Vec::new();
        for layer in &self.decoder {
            let (a, _) = self.attention(g, &layer.self_attn, x, x, Some(&mask))?;
            x = self.sublayer_out(g, x, a, &layer.norm1, mode)?;
            let (c, w) = self.attention(g, &layer.cross_attn, x, memory, None)?;
            cross = w;
            x = self.sublayer_out(g, x, c, &layer.norm2, mode)?;
            let f = self.feed_forward(g, &layer.ffn, x, mode)?;
            x = self.sublayer_out(g, x, f, &layer.norm3, mode)?;
        }
        let logits = match self.generator {
            Some(w) => {
                let wv = g.param(w);
                g.matmul(x, wv)?
            }
            None => {
                let mut h = x;
                if let Some(p) = self.tgt_embed.proj {
                    let pv = g.param(p);
                    h = g.matmul_bt(h, pv)?;
                }
                let table = g.param(self.tgt_embed.table);
                g.matmul_bt(h, table)?
            }
        };
        Ok((logits, cross))
    }

    fn check_ids(&self, ids: &[usize], bound: usize) -> Result<(), TransformerError> {
        match ids.iter().find(|&&i| i >= bound) {
            Some(&i) => Err(TransformerError::Numerics(
                crate::numerics::NumericsError::IndexOutOfRange { index: i, bound },
            )),
            None => Ok(()),
        }
    }

    /// Encoder output `[T_src, d_model]` at inference.
    pub fn encode_source(&self, source: &[usize]) -> Result<Tensor<T>, TransformerError> {
        let mut g = Graph::with_params(&self.params);
        let out = self.encode_graph(&mut g, source, true, &mut Mode::Inference)?;
        Ok(g.value(out).clone())
    }

    #[doc(hidden)]
    pub fn encode_source_without_positions(&self, source: &[usize]) -> Result<Tensor<T>, TransformerError> {
        let mut g = Graph::with_params(&self.params);
        let out = self.encode_graph(&mut g, source, false, &mut Mode::Inference)?;
        Ok(g.value(out).clone())
    }

    /// Next-token logits after `prefix` (which must start with `<s>`) plus the
    /// cross-attention of the final position.
    pub fn decode_step(&self, memory: &Tensor<T>, prefix: &[usize]) -> Result<(Vec<T>, AttentionTrace), TransformerError> {
        if prefix.first() != Some(&BOS_ID) {
            return Err(TransformerError::Contract("prefix must begin with <s>".into()));
        }
        let mut g = Graph::with_params(&self.params);
        let mem = g.constant(memory.clone());
        let (logits, cross) = self.decode_graph(&mut g, mem, prefix, &mut Mode::Inference)?;
        let last = prefix.len() - 1;
        let row = g.value(logits).row(last).to_vec();
        let heads = cross
            .iter()
            .map(|&w| g.value(w).row(last).iter().map(|v| v.to_f64_lossy()).collect())
            .collect();
        Ok((row, AttentionTrace::from_rows(heads)))
    }

    /// Logits for every prefix position at once, `[prefix.len(), V_tgt]`.
    pub fn decode_all(&self, memory: &Tensor<T>, prefix: &[usize]) -> Result<Tensor<T>, TransformerError> {
        let mut g = Graph::with_params(&self.params);
        let mem = g.constant(memory.clone());
        let (logits, _) = self.decode_graph(&mut g, mem, prefix, &mut Mode::Inference)?;
        Ok(g.value(logits).clone())
    }

    /// Builds the teacher-forced logits for one pair on an existing graph.
    pub fn forward_pair<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        source: &[usize],
        target_in: &[usize],
        mode: &mut Mode,
    ) -> Result<Var, TransformerError> {
        let memory = self.encode_graph(g, source, true, mode)?;
        Ok(self.decode_graph(g, memory, target_in, mode)?.0)
    }

    /// Standalone multi-head attention using this model's first encoder layer weights.
    #[doc(hidden)]
    pub fn probe_attention(
        &self,
        query: &Tensor<T>,
        memory: &Tensor<T>,
        blocked: Option<&[bool]>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>), TransformerError> {
        let mut g = Graph::with_params(&self.params);
        let q = g.constant(query.clone());
        let m = g.constant(memory.clone());
        let (out, ws) = self.attention(&mut g, &self.encoder[0].self_attn, q, m, blocked)?;
        Ok((g.value(out).clone(), ws.iter().map(|&w| g.value(w).clone()).collect()))
    }

    /// Value and output projection of the first encoder self-attention, `x·Wv+bv` then `·Wo+bo`.
    #[doc(hidden)]
    pub fn probe_value_path(&self, x: &Tensor<T>) -> Result<Tensor<T>, TransformerError> {
        let p = &self.encoder[0].self_attn;
        let mut g = Graph::with_params(&self.params);
        let xv = g.constant(x.clone());
        let wv = g.param(p.wv);
        let bv = g.param(p.bv);
        let v = g.matmul(xv, wv)?;
        let v = g.add_row(v, bv)?;
        let wo = g.param(p.wo);
        let bo = g.param(p.bo);
        let o = g.matmul(v, wo)?;
        let o = g.add_row(o, bo)?;
        Ok(g.value(o).clone())
    }
}
