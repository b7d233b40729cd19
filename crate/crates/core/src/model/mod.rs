//! Sensor encoder, text encoder and multimodal decoder.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Mask, ParamId, Parameters, Tape, Tensor, Var};
use crate::data::{SensorDay, MINUTES_PER_DAY, N_CHANNELS};
use crate::objectives::{LossConfig, LossParts};
use crate::rng::{hash_str, rng_for};
use crate::text::{DecoderPair, TokenId, END, PAD, START};
use crate::{Error, Result};

mod checkpoint;
mod config;

pub use checkpoint::{decode_checkpoint, decode_raw, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use config::ModelConfig;

pub const INIT_STD: f64 = 0.02;

/// Parameter-name prefixes of the decoder and of the two projection heads.
pub const DECODER_PREFIX: &str = "decoder.";
pub const PROJECTION_NAMES: [&str; 4] = ["sensor.proj.w", "sensor.proj.b", "text.proj.w", "text.proj.b"];

pub fn is_decoder_param(name: &str) -> bool {
    name.starts_with(DECODER_PREFIX)
}

pub fn is_projection_param(name: &str) -> bool {
    PROJECTION_NAMES.contains(&name)
}

/// Splits a normalized day into `(26 / p_f) * (1440 / p_t)` flattened patches.
///
/// Patches are ordered row-major over (feature block, time block); each patch
/// vector is row-major over (feature, minute) within the block.
pub fn patchify(day: &SensorDay, cfg: &ModelConfig) -> Result<Tensor> {
    let (pf, pt) = (cfg.patch_f, cfg.patch_t);
    if pf == 0 || pt == 0 || N_CHANNELS % pf != 0 || MINUTES_PER_DAY % pt != 0 {
        return Err(Error::config(format!("patch ({pf}, {pt}) does not tile the day")));
    }
    let time_blocks = MINUTES_PER_DAY / pt;
    let mut out = Array2::zeros((cfg.n_tokens(), pf * pt));
    let values = day.values();
    for fb in 0..N_CHANNELS / pf {
        for tb in 0..time_blocks {
            let mut row = out.row_mut(fb * time_blocks + tb);
            for df in 0..pf {
                let src = (fb * pf + df) * MINUTES_PER_DAY + tb * pt;
                for dt in 0..pt {
                    row[df * pt + dt] = f64::from(values[src + dt]);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

/// Creates parameters on first build, or looks them up in a loaded store.
enum Builder<'a> {
    Create { params: Parameters, rng: ChaCha8Rng },
    Resolve { params: &'a Parameters, seen: usize },
}

impl Builder<'_> {
    fn tensor(&mut self, name: &str, rows: usize, cols: usize, init: Init) -> Result<ParamId> {
        match self {
            Builder::Create { params, rng } => {
                let normal = Normal::new(0.0, INIT_STD).expect("valid std");
                let value = Array2::from_shape_fn((rows, cols), |_| match init {
                    Init::Zeros => 0.0,
                    Init::Ones => 1.0,
                    Init::Normal => loop {
                        let x: f64 = normal.sample(rng);
                        if x.abs() <= 2.0 * INIT_STD {
                            // parameters live on the f32 grid so checkpoints are exact
                            break f64::from(x as f32);
                        }
                    },
                });
                params.insert(name, value)
            }
            Builder::Resolve { params, seen } => {
                let id = params.id(name).ok_or_else(|| Error::format(format!("checkpoint lacks tensor {name}")))?;
                let dim = params.get(id).dim();
                if dim != (rows, cols) {
                    return Err(Error::Shape(format!("tensor {name} is {dim:?}, config implies ({rows}, {cols})")));
                }
                *seen += 1;
                Ok(id)
            }
        }
    }

    fn norm(&mut self, name: &str, h: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.tensor(&format!("{name}.g"), 1, h, Init::Ones)?,
            bias: self.tensor(&format!("{name}.b"), 1, h, Init::Zeros)?,
        })
    }

    fn dense(&mut self, name: &str, i: usize, o: usize) -> Result<Dense> {
        Ok(Dense {
            w: self.tensor(&format!("{name}.w"), i, o, Init::Normal)?,
            b: self.tensor(&format!("{name}.b"), 1, o, Init::Zeros)?,
        })
    }

    fn attention(&mut self, name: &str, h: usize) -> Result<Attention> {
        Ok(Attention {
            q: self.dense(&format!("{name}.q"), h, h)?,
            k: self.tensor(&format!("{name}.k.w"), h, h, Init::Normal)?,
            v: self.dense(&format!("{name}.v"), h, h)?,
            o: self.dense(&format!("{name}.o"), h, h)?,
        })
    }

    fn mlp(&mut self, name: &str, h: usize, m: usize) -> Result<Mlp> {
        Ok(Mlp { up: self.dense(&format!("{name}.up"), h, m)?, down: self.dense(&format!("{name}.down"), m, h)? })
    }

    fn enc_block(&mut self, name: &str, c: &ModelConfig) -> Result<EncBlock> {
        let h = c.hidden_dim;
        Ok(EncBlock {
            ln1: self.norm(&format!("{name}.ln1"), h)?,
            attn: self.attention(&format!("{name}.attn"), h)?,
            ln2: self.norm(&format!("{name}.ln2"), h)?,
            mlp: self.mlp(&format!("{name}.mlp"), h, c.mlp_dim)?,
        })
    }

    fn dec_block(&mut self, name: &str, c: &ModelConfig) -> Result<DecBlock> {
        let h = c.hidden_dim;
        Ok(DecBlock {
            ln1: self.norm(&format!("{name}.ln1"), h)?,
            self_attn: self.attention(&format!("{name}.self"), h)?,
            ln2: self.norm(&format!("{name}.ln2"), h)?,
            cross: self.attention(&format!("{name}.cross"), h)?,
            ln3: self.norm(&format!("{name}.ln3"), h)?,
            mlp: self.mlp(&format!("{name}.mlp"), h, c.mlp_dim)?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Attention {
    q: Dense,
    /// Key projection without bias: a key bias shifts every score of a
    /// query equally, so softmax cancels it and its gradient is zero.
    k: ParamId,
    v: Dense,
    o: Dense,
}

#[derive(Debug, Clone, Copy)]
struct Mlp {
    up: Dense,
    down: Dense,
}

#[derive(Debug, Clone)]
struct EncBlock {
    ln1: Norm,
    attn: Attention,
    ln2: Norm,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
struct DecBlock {
    ln1: Norm,
    self_attn: Attention,
    ln2: Norm,
    cross: Attention,
    ln3: Norm,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
struct Layout {
    patch: Dense,
    sensor_pos: ParamId,
    sensor_blocks: Vec<EncBlock>,
    sensor_ln: Norm,
    sensor_proj: Dense,
    text_tok: ParamId,
    text_pos: ParamId,
    text_blocks: Vec<EncBlock>,
    text_ln: Norm,
    text_proj: Dense,
    dec_tok: ParamId,
    dec_pos: ParamId,
    dec_blocks: Vec<DecBlock>,
    dec_ln: Norm,
    dec_out: Dense,
}

impl Layout {
    fn build(b: &mut Builder<'_>, c: &ModelConfig) -> Result<Self> {
        let (h, v, l) = (c.hidden_dim, c.vocab_size, c.max_text_len);
        Ok(Layout {
            patch: b.dense("sensor.patch", c.patch_dim(), h)?,
            sensor_pos: b.tensor("sensor.pos", c.n_tokens(), h, Init::Normal)?,
            sensor_blocks: (0..c.enc_layers).map(|i| b.enc_block(&format!("sensor.block{i}"), c)).collect::<Result<_>>()?,
            sensor_ln: b.norm("sensor.ln_f", h)?,
            sensor_proj: b.dense("sensor.proj", h, c.embed_dim)?,
            text_tok: b.tensor("text.tok", v, h, Init::Normal)?,
            text_pos: b.tensor("text.pos", l, h, Init::Normal)?,
            text_blocks: (0..c.enc_layers).map(|i| b.enc_block(&format!("text.block{i}"), c)).collect::<Result<_>>()?,
            text_ln: b.norm("text.ln_f", h)?,
            text_proj: b.dense("text.proj", h, c.embed_dim)?,
            dec_tok: b.tensor("decoder.tok", v, h, Init::Normal)?,
            dec_pos: b.tensor("decoder.pos", l, h, Init::Normal)?,
            dec_blocks: (0..c.dec_layers).map(|i| b.dec_block(&format!("decoder.block{i}"), c)).collect::<Result<_>>()?,
            dec_ln: b.norm("decoder.ln_f", h)?,
            dec_out: b.dense("decoder.out", h, v)?,
        })
    }
}

/// Dropout source for a training forward pass; `None` means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

/// One training example in model-ready form.
#[derive(Debug, Clone)]
pub struct Sample {
    /// Output of [`patchify`].
    pub patches: Tensor,
    /// Text-encoder input, `[START, .., END]`.
    pub text: Vec<TokenId>,
    /// Teacher-forcing pair for the decoder.
    pub caption: DecoderPair,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
    layout: Layout,
}

fn ln(t: &mut Tape<'_>, n: Norm, x: Var) -> Result<Var> {
    let (g, b) = (t.param(n.gain), t.param(n.bias));
    t.layer_norm(x, g, b)
}

fn dense(t: &mut Tape<'_>, d: Dense, x: Var) -> Result<Var> {
    let (w, b) = (t.param(d.w), t.param(d.b));
    t.linear(x, w, b)
}

fn attend(t: &mut Tape<'_>, a: &Attention, xq: Var, xkv: Var, heads: usize, mask: Mask) -> Result<Var> {
    let q = dense(t, a.q, xq)?;
    let wk = t.param(a.k);
    let k = t.matmul(xkv, wk)?;
    let v = dense(t, a.v, xkv)?;
    let o = t.attention(q, k, v, heads, mask)?;
    dense(t, a.o, o)
}

fn mlp(t: &mut Tape<'_>, m: &Mlp, x: Var) -> Result<Var> {
    let u = dense(t, m.up, x)?;
    let u = t.gelu(u);
    dense(t, m.down, u)
}

fn drop(t: &mut Tape<'_>, x: Var, p: f32, rng: &mut DropoutRng<'_>) -> Var {
    match rng {
        Some(r) => t.dropout(x, f64::from(p), &mut **r),
        None => x,
    }
}

fn residual(t: &mut Tape<'_>, x: Var, y: Var, p: f32, rng: &mut DropoutRng<'_>) -> Result<Var> {
    let y = drop(t, y, p, rng);
    t.add(x, y)
}

impl Model {
    /// Fresh parameters from a truncated normal (std 0.02), layer-norm gains 1, biases 0.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::Create { params: Parameters::new(), rng: rng_for(seed, &[hash_str("init")]) };
        let layout = Layout::build(&mut b, &config)?;
        let Builder::Create { params, .. } = b else { unreachable!() };
        Ok(Self { config, params, layout })
    }

    /// Binds loaded parameters, rejecting missing, extra or misshapen tensors.
    pub fn from_parts(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let mut b = Builder::Resolve { params: &params, seen: 0 };
        let layout = Layout::build(&mut b, &config)?;
        let Builder::Resolve { seen, .. } = b else { unreachable!() };
        if seen != params.len() {
            return Err(Error::format(format!("checkpoint holds {} tensors, config implies {seen}", params.len())));
        }
        if !params.all_finite() {
            return Err(Error::Numerical("checkpoint contains non-finite values".into()));
        }
        Ok(Self { config, params, layout })
    }

    fn encoder_stack(
        &self,
        t: &mut Tape<'_>,
        mut x: Var,
        blocks: &[EncBlock],
        rng: &mut DropoutRng<'_>,
    ) -> Result<Var> {
        let p = self.config.dropout;
        for b in blocks {
            let h = ln(t, b.ln1, x)?;
            let a = attend(t, &b.attn, h, h, self.config.heads, Mask::None)?;
            x = residual(t, x, a, p, rng)?;
            let h = ln(t, b.ln2, x)?;
            let m = mlp(t, &b.mlp, h)?;
            x = residual(t, x, m, p, rng)?;
        }
        Ok(x)
    }

    /// Sensor encoder output tokens after the final layer norm.
    pub fn sensor_tokens(&self, t: &mut Tape<'_>, patches: &Tensor, mut rng: DropoutRng<'_>) -> Result<Var> {
        let c = &self.config;
        if patches.dim() != (c.n_tokens(), c.patch_dim()) {
            return Err(Error::Shape(format!(
                "patches {:?}, expected ({}, {})",
                patches.dim(),
                c.n_tokens(),
                c.patch_dim()
            )));
        }
        let x = t.input(patches.clone());
        let x = dense(t, self.layout.patch, x)?;
        let pos = t.param(self.layout.sensor_pos);
        let x = t.add(x, pos)?;
        let x = drop(t, x, c.dropout, &mut rng);
        let x = self.encoder_stack(t, x, &self.layout.sensor_blocks, &mut rng)?;
        ln(t, self.layout.sensor_ln, x)
    }

    /// Unit sensor embedding `normalize(proj(mean(tokens)))`.
    pub fn sensor_embedding(&self, t: &mut Tape<'_>, tokens: Var) -> Result<Var> {
        let pooled = t.mean_rows(tokens)?;
        let z = dense(t, self.layout.sensor_proj, pooled)?;
        t.normalize_rows(z).map_err(|e| self.fault(e))
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.len() > self.config.max_text_len {
            return Err(Error::invalid(format!(
                "text of {} tokens exceeds max_text_len {}",
                ids.len(),
                self.config.max_text_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.config.vocab_size) {
            return Err(Error::invalid(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        Ok(())
    }

    /// Unit text embedding pooled over the non-PAD positions of `ids`.
    ///
    /// PAD positions are dropped before attention, which is the same as
    /// masking them as keys and excluding them from the pool.
    pub fn text_embedding(&self, t: &mut Tape<'_>, ids: &[TokenId], mut rng: DropoutRng<'_>) -> Result<Var> {
        self.check_ids(ids)?;
        let (tokens, positions): (Vec<usize>, Vec<usize>) =
            ids.iter().enumerate().filter(|(_, &id)| id != PAD).map(|(p, &id)| (id as usize, p)).unzip();
        if tokens.is_empty() {
            return Err(Error::invalid("text encoder input has no non-PAD token"));
        }
        let table = t.param(self.layout.text_tok);
        let x = t.gather(table, &tokens)?;
        let pos_table = t.param(self.layout.text_pos);
        let pos = t.gather(pos_table, &positions)?;
        let x = t.add(x, pos)?;
        let x = drop(t, x, self.config.dropout, &mut rng);
        let x = self.encoder_stack(t, x, &self.layout.text_blocks, &mut rng)?;
        let x = ln(t, self.layout.text_ln, x)?;
        let pooled = t.mean_rows(x)?;
        let z = dense(t, self.layout.text_proj, pooled)?;
        t.normalize_rows(z).map_err(|e| self.fault(e))
    }

    /// Next-token logits `[prefix.len() x vocab]` given the sensor tokens.
    pub fn decoder_logits(
        &self,
        t: &mut Tape<'_>,
        sensor_tokens: Var,
        prefix: &[TokenId],
        mut rng: DropoutRng<'_>,
    ) -> Result<Var> {
        self.check_ids(prefix)?;
        if prefix.first() != Some(&START) {
            return Err(Error::invalid("decoder prefix must start with START"));
        }
        let ids: Vec<usize> = prefix.iter().map(|&i| i as usize).collect();
        let positions: Vec<usize> = (0..ids.len()).collect();
        let p = self.config.dropout;
        let heads = self.config.heads;
        let table = t.param(self.layout.dec_tok);
        let x = t.gather(table, &ids)?;
        let pos_table = t.param(self.layout.dec_pos);
        let pos = t.gather(pos_table, &positions)?;
        let mut x = t.add(x, pos)?;
        x = drop(t, x, p, &mut rng);
        for b in &self.layout.dec_blocks {
            let h = ln(t, b.ln1, x)?;
            let a = attend(t, &b.self_attn, h, h, heads, Mask::Causal)?;
            x = residual(t, x, a, p, &mut rng)?;
            let h = ln(t, b.ln2, x)?;
            let a = attend(t, &b.cross, h, sensor_tokens, heads, Mask::None)?;
            x = residual(t, x, a, p, &mut rng)?;
            let h = ln(t, b.ln3, x)?;
            let m = mlp(t, &b.mlp, h)?;
            x = residual(t, x, m, p, &mut rng)?;
        }
        let x = ln(t, self.layout.dec_ln, x)?;
        dense(t, self.layout.dec_out, x)
    }

    fn fault(&self, e: Error) -> Error {
        match e {
            Error::Numerical(msg) => {
                let norms: Vec<String> = self
                    .params
                    .norms()
                    .into_iter()
                    .filter(|(_, n)| !n.is_finite() || *n > 1e3)
                    .map(|(name, n)| format!("{name}={n:.3e}"))
                    .collect();
                let detail = if norms.is_empty() { "all parameter norms moderate".to_string() } else { norms.join(", ") };
                Error::Numerical(format!("{msg} ({detail})"))
            }
            other => other,
        }
    }

    /// Sensor tokens and unit embedding of a normalized day, without gradients.
    pub fn encode_sensor(&self, day: &SensorDay) -> Result<(Tensor, Array1<f64>)> {
        let patches = patchify(day, &self.config)?;
        let mut t = Tape::new(&self.params);
        let tokens = self.sensor_tokens(&mut t, &patches, None)?;
        let s = self.sensor_embedding(&mut t, tokens)?;
        Ok((t.value(tokens).clone(), t.value(s).row(0).to_owned()))
    }

    /// Unit text embedding of framed ids, without gradients.
    pub fn encode_text(&self, ids: &[TokenId]) -> Result<Array1<f64>> {
        let mut t = Tape::new(&self.params);
        let v = self.text_embedding(&mut t, ids, None)?;
        Ok(t.value(v).row(0).to_owned())
    }

    /// Decoder logits for a prefix given detached sensor tokens.
    pub fn decode(&self, sensor_tokens: &Tensor, prefix: &[TokenId]) -> Result<Tensor> {
        let mut t = Tape::new(&self.params);
        let s = t.input(sensor_tokens.clone());
        let l = self.decoder_logits(&mut t, s, prefix, None)?;
        Ok(t.value(l).clone())
    }

    /// Greedy decoding from START; `max_len` counts the START token.
    ///
    /// Returns the generated ids without START and END. Ties in the argmax
    /// go to the lowest id.
    pub fn generate(&self, day: &SensorDay, max_len: usize) -> Result<Vec<TokenId>> {
        let (tokens, _) = self.encode_sensor(day)?;
        let limit = max_len.min(self.config.max_text_len);
        let mut seq = vec![START];
        while seq.len() < limit {
            let logits = self.decode(&tokens, &seq)?;
            let last = logits.row(logits.nrows() - 1);
            let mut best = 0;
            for (i, &x) in last.iter().enumerate() {
                if x > last[best] {
                    best = i;
                }
            }
            if !last[best].is_finite() {
                return Err(self.fault(Error::Numerical("non-finite decoder logits".into())));
            }
            let id = best as TokenId;
            if id == END {
                break;
            }
            seq.push(id);
        }
        seq.remove(0);
        Ok(seq)
    }

    /// Builds the combined training loss of `samples` on `t`.
    ///
    /// The captioning term averages over every non-PAD target position of
    /// the batch. Disabled terms are not evaluated at all.
    pub fn batch_loss(
        &self,
        t: &mut Tape<'_>,
        samples: &[Sample],
        cfg: &LossConfig,
        rng: DropoutRng<'_>,
    ) -> Result<(Var, LossParts)> {
        let (terms, mut parts) = self.batch_loss_terms(t, samples, cfg, rng)?;
        let mut total = terms[0];
        for &x in &terms[1..] {
            total = t.add(total, x)?;
        }
        parts.total = t.scalar(total);
        if !parts.total.is_finite() {
            return Err(self.fault(Error::Numerical(format!("non-finite loss {}", parts.total))));
        }
        Ok((total, parts))
    }

    /// The enabled loss terms, already weighted, before summation.
    /// `parts.total` is left at zero.
    pub fn batch_loss_terms(
        &self,
        t: &mut Tape<'_>,
        samples: &[Sample],
        cfg: &LossConfig,
        mut rng: DropoutRng<'_>,
    ) -> Result<(Vec<Var>, LossParts)> {
        cfg.validate()?;
        if samples.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut s_rows = Vec::new();
        let mut v_rows = Vec::new();
        let mut cap_sums = Vec::new();
        let mut cap_count = 0;
        for sample in samples {
            let tokens = self.sensor_tokens(t, &sample.patches, rng.as_deref_mut())?;
            if cfg.uses_contrastive() {
                s_rows.push(self.sensor_embedding(t, tokens)?);
                v_rows.push(self.text_embedding(t, &sample.text, rng.as_deref_mut())?);
            }
            if cfg.uses_captioning() {
                let logits = self.decoder_logits(t, tokens, &sample.caption.input, rng.as_deref_mut())?;
                let (sum, count) = t.token_xent_sum(logits, &sample.caption.target)?;
                cap_sums.push(sum);
                cap_count += count;
            }
        }
        let mut parts = LossParts::default();
        let mut terms = Vec::new();
        if cfg.uses_contrastive() {
            let s = t.stack_rows(&s_rows)?;
            let v = t.stack_rows(&v_rows)?;
            let con = t.contrastive(s, v, cfg)?;
            parts.contrastive = t.scalar(con);
            terms.push(t.scale(con, cfg.lambda_con));
        }
        if cfg.uses_captioning() {
            if cap_count == 0 {
                return Err(Error::invalid("batch has no caption target tokens"));
            }
            let mut sum = cap_sums[0];
            for &c in &cap_sums[1..] {
                sum = t.add(sum, c)?;
            }
            let cap = t.scale(sum, 1.0 / cap_count as f64);
            parts.captioning = t.scalar(cap);
            terms.push(t.scale(cap, cfg.lambda_cap));
        }
        Ok((terms, parts))
    }
}
