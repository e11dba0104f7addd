//! Token encoder, duration predictor and length regulator.

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::rotate_pairs;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: usize,
    pub d: usize,
    pub heads: usize,
    pub vocab: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            layers: 8,
            d: 64,
            heads: 4,
            vocab: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.vocab == 0 || self.heads == 0 {
            return Err(Error::InvalidArgument("encoder counts must be at least 1".into()));
        }
        if self.d % self.heads != 0 || (self.d / self.heads) % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "encoder d={} must split into {} heads of even width",
                self.d, self.heads
            )));
        }
        Ok(())
    }
}

/// Rotary position embedding of one vector: pair `(x[2i], x[2i+1])` is rotated
/// by `pos · 10000^(-2i/d)`.
pub fn rope_rotate<T: Scalar>(x: &[T], pos: f64) -> Result<Vec<T>> {
    if x.len() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "rotary embedding needs an even width, got {}",
            x.len()
        )));
    }
    let mut v = x.to_vec();
    rotate_pairs(&mut v, pos, T::one());
    Ok(v)
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w_ff1: ParamId,
    b_ff1: ParamId,
    w_ff2: ParamId,
    b_ff2: ParamId,
}

/// Pre-norm transformer encoder with rotary self-attention.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub cfg: EncoderConfig,
    embed: ParamId,
    layers: Vec<EncoderLayer>,
    ln_g: ParamId,
    ln_b: ParamId,
}

fn affine_ln<T: Scalar>(g: &mut Graph<T>, p: &Bound, x: Var, gain: ParamId, bias: ParamId) -> Var {
    let n = g.layer_norm(x);
    let n = g.mul_row(n, p.var(gain));
    g.add_row(n, p.var(bias))
}

impl TextEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, cfg: EncoderConfig) -> Self {
        let d = cfg.d;
        let ones = |_: &mut Init| Tensor::<T>::full(&[d], T::one());
        let embed = store.add(format!("{prefix}.embed"), init.normal(&[cfg.vocab, d], 1.0));
        let layers = (0..cfg.layers)
            .map(|l| {
                let pre = format!("{prefix}.layer{l}");
                EncoderLayer {
                    ln1_g: store.add(format!("{pre}.ln1_g"), ones(init)),
                    ln1_b: store.add(format!("{pre}.ln1_b"), init.zeros(&[d])),
                    w_qkv: store.add(format!("{pre}.w_qkv"), init.xavier(&[d, 3 * d], d, d)),
                    b_qkv: store.add(format!("{pre}.b_qkv"), init.zeros(&[3 * d])),
                    w_o: store.add(format!("{pre}.w_o"), init.xavier(&[d, d], d, d)),
                    b_o: store.add(format!("{pre}.b_o"), init.zeros(&[d])),
                    ln2_g: store.add(format!("{pre}.ln2_g"), ones(init)),
                    ln2_b: store.add(format!("{pre}.ln2_b"), init.zeros(&[d])),
                    w_ff1: store.add(format!("{pre}.w_ff1"), init.xavier(&[d, 4 * d], d, 4 * d)),
                    b_ff1: store.add(format!("{pre}.b_ff1"), init.zeros(&[4 * d])),
                    w_ff2: store.add(format!("{pre}.w_ff2"), init.xavier(&[4 * d, d], 4 * d, d)),
                    b_ff2: store.add(format!("{pre}.b_ff2"), init.zeros(&[d])),
                }
            })
            .collect();
        Self {
            cfg,
            embed,
            layers,
            ln_g: store.add(format!("{prefix}.ln_g"), ones(init)),
            ln_b: store.add(format!("{prefix}.ln_b"), init.zeros(&[d])),
        }
    }

    /// Parameters whose zeroing silences every residual branch.
    pub fn output_projections(&self) -> Vec<ParamId> {
        self.layers
            .iter()
            .flat_map(|l| [l.w_o, l.b_o, l.w_ff2, l.b_ff2])
            .collect()
    }

    pub fn embedding(&self) -> ParamId {
        self.embed
    }

    pub fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token sequence".into()));
        }
        match tokens.iter().find(|&&t| t >= self.cfg.vocab) {
            Some(&token) => Err(Error::OutOfVocab {
                token,
                vocab: self.cfg.vocab,
            }),
            None => Ok(()),
        }
    }

    /// Tokens to `[len, d]` features.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, tokens: &[usize]) -> Result<Var> {
        self.check_tokens(tokens)?;
        let d = self.cfg.d;
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let mut x = g.gather_rows(p.var(self.embed), tokens.to_vec());
        for l in &self.layers {
            let h = affine_ln(g, p, x, l.ln1_g, l.ln1_b);
            let qkv = g.linear(h, p.var(l.w_qkv), p.var(l.b_qkv));
            let q = g.slice_cols(qkv, 0, d);
            let k = g.slice_cols(qkv, d, d);
            let v = g.slice_cols(qkv, 2 * d, d);
            let q = g.rope(q, self.cfg.heads, positions.clone());
            let k = g.rope(k, self.cfg.heads, positions.clone());
            let a = g.attention(q, k, v, self.cfg.heads, None);
            let a = g.linear(a, p.var(l.w_o), p.var(l.b_o));
            x = g.add(x, a);
            let h = affine_ln(g, p, x, l.ln2_g, l.ln2_b);
            let f = g.linear(h, p.var(l.w_ff1), p.var(l.b_ff1));
            let f = g.gelu(f);
            let f = g.linear(f, p.var(l.w_ff2), p.var(l.b_ff2));
            x = g.add(x, f);
        }
        Ok(affine_ln(g, p, x, self.ln_g, self.ln_b))
    }

    /// Scaled attention logits `q_i·k_j / sqrt(dh)` of head 0 in the first
    /// layer, for inspecting positional behaviour.
    pub fn first_layer_logits<T: Scalar>(&self, store: &ParamStore<T>, tokens: &[usize]) -> Result<Vec<Vec<T>>> {
        self.check_tokens(tokens)?;
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let d = self.cfg.d;
        let dh = d / self.cfg.heads;
        let l = &self.layers[0];
        let x = g.gather_rows(p.var(self.embed), tokens.to_vec());
        let h = affine_ln(&mut g, &p, x, l.ln1_g, l.ln1_b);
        let qkv = g.linear(h, p.var(l.w_qkv), p.var(l.b_qkv));
        let q = g.slice_cols(qkv, 0, d);
        let k = g.slice_cols(qkv, d, d);
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let q = g.rope(q, self.cfg.heads, positions.clone());
        let k = g.rope(k, self.cfg.heads, positions);
        let (qv, kv) = (g.value(q), g.value(k));
        let scale = T::one() / T::of_usize(dh).sqrt();
        Ok((0..tokens.len())
            .map(|i| {
                (0..tokens.len())
                    .map(|j| {
                        (0..dh).fold(T::zero(), |s, c| s + qv.data()[i * d + c] * kv.data()[j * d + c]) * scale
                    })
                    .collect()
            })
            .collect())
    }
}

/// Two kernel-3 convolutions with SiLU and layer norm, then a scalar
/// log-duration per token.
#[derive(Debug, Clone)]
pub struct DurationPredictor {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    w_out: ParamId,
    b_out: ParamId,
}

/// Upper bound on a predicted token duration, in frames.
pub const MAX_PREDICTED_DURATION: usize = 32;

impl DurationPredictor {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, d: usize, hidden: usize) -> Self {
        Self {
            w1: store.add(format!("{prefix}.w1"), init.xavier(&[3, d, hidden], 3 * d, hidden)),
            b1: store.add(format!("{prefix}.b1"), init.zeros(&[hidden])),
            w2: store.add(format!("{prefix}.w2"), init.xavier(&[3, hidden, hidden], 3 * hidden, hidden)),
            b2: store.add(format!("{prefix}.b2"), init.zeros(&[hidden])),
            w_out: store.add(format!("{prefix}.w_out"), init.xavier(&[hidden, 1], hidden, 1)),
            b_out: store.add(format!("{prefix}.b_out"), init.zeros(&[1])),
        }
    }

    /// `[len, d] -> [len, 1]` log-durations. The caller decides whether the
    /// input is detached from the encoder.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, features: Var) -> Var {
        let h = g.conv1d(features, p.var(self.w1), p.var(self.b1));
        let h = g.silu(h);
        let h = g.layer_norm(h);
        let h = g.conv1d(h, p.var(self.w2), p.var(self.b2));
        let h = g.silu(h);
        let h = g.layer_norm(h);
        g.linear(h, p.var(self.w_out), p.var(self.b_out))
    }

    /// Log-domain MSE against integer durations.
    pub fn loss<T: Scalar>(g: &mut Graph<T>, log_pred: Var, durations: &[usize]) -> Var {
        let target = Tensor::from_fn(&[durations.len(), 1], |i| T::lit((durations[i] as f64).ln()));
        let target = g.constant(target);
        g.mse(log_pred, target)
    }
}

/// `round(exp(log_d))`, at least 1 and at most [`MAX_PREDICTED_DURATION`].
pub fn durations_from_log<T: Scalar>(log_d: &[T]) -> Vec<usize> {
    log_d
        .iter()
        .map(|&v| {
            let d = v.to_f64().unwrap_or(0.0).exp().round();
            if d.is_finite() {
                (d as usize).clamp(1, MAX_PREDICTED_DURATION)
            } else {
                1
            }
        })
        .collect()
}

/// Row index of every output frame: token `i` repeated `durations[i]` times.
pub fn expansion_index(len: usize, durations: &[usize]) -> Result<Vec<usize>> {
    if durations.len() != len {
        return Err(Error::Shape(format!(
            "{len} token rows but {} durations",
            durations.len()
        )));
    }
    if let Some(i) = durations.iter().position(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!("zero duration for token {i}")));
    }
    Ok(durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat(i).take(d))
        .collect())
}

/// Expands token rows to frame rows.
pub fn length_regulate<T: Scalar>(features: &Tensor<T>, durations: &[usize]) -> Result<Tensor<T>> {
    let (len, d) = (features.rows(), features.cols());
    let idx = expansion_index(len, durations)?;
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in &idx {
        out.extend_from_slice(&features.data()[i * d..(i + 1) * d]);
    }
    Tensor::new(vec![idx.len(), d], out)
}
