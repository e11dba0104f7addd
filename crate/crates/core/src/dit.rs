//! Diffusion decoder: down conv → patchify → `k` global blocks → `N − k`
//! directional blocks → unpatchify → up conv.
//!
//! Every block is conditioned on the diffusion step through adaLN-Zero
//! modulation (shift, scale and gate per sub-layer, projected from the step
//! embedding). Positional terms are added to the sub-layer inputs, never to
//! the residual stream, so a block with zero gates is exactly the identity.
//!
//! A directional block runs three gated sub-layers:
//! 1. style cross-attention: patches (plus time positions) query the style
//!    tokens, so every patch of a time column sees the same positional term;
//! 2. directional attention over each patch's neighbour candidates (plus time
//!    and frequency positions);
//! 3. a GELU feed-forward of width `4d`.

use std::sync::Arc;

use crate::directional::{literal_listing_offsets, CandidateIndex, ClampPolicy, NeighborOffset, NeighborSet};
use crate::error::{check_finite, Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::patch_grid::{position_table, sinusoid, DownConv, PatchConfig, PatchEmbed, PositionalConfig, UpConv};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderConfig {
    /// Total blocks `N`.
    pub blocks: usize,
    /// Leading global blocks `k`.
    pub global_blocks: usize,
    pub d: usize,
    pub heads_global: usize,
    pub heads_directional: usize,
    pub patch_size: usize,
    pub bins: usize,
    /// Width of the frame-level text conditioning.
    pub cond_dim: usize,
    pub neighbor_set: NeighborSet,
    /// Use the verbatim four-candidate gather of the published listing
    /// instead of `neighbor_set`.
    pub literal_listing: bool,
    pub clamp: ClampPolicy,
    pub pos: PositionalConfig,
    /// Style temporal modelling (cross-attention step). When off, the mean
    /// style token is folded into the step conditioning instead.
    pub stm: bool,
    /// Restrict time column `j` to a growing prefix of the style tokens.
    pub causal_style: bool,
    /// Replace directional attention by full attention over all patches.
    pub dense_control: bool,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            global_blocks: 2,
            d: 64,
            heads_global: 4,
            heads_directional: 1,
            patch_size: 7,
            bins: crate::spectro_io::DEFAULT_BINS,
            cond_dim: 64,
            neighbor_set: NeighborSet::directional(),
            literal_listing: false,
            clamp: ClampPolicy::Clamp,
            pos: PositionalConfig::default(),
            stm: true,
            causal_style: false,
            dense_control: false,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.global_blocks > self.blocks {
            return bad(format!("k={} exceeds N={}", self.global_blocks, self.blocks));
        }
        if self.d == 0 || self.patch_size == 0 || self.bins == 0 || self.cond_dim == 0 {
            return bad("decoder sizes must be at least 1".into());
        }
        if self.heads_global == 0 || self.d % self.heads_global != 0 {
            return bad(format!("d={} not divisible by heads_global={}", self.d, self.heads_global));
        }
        if self.heads_directional == 0 || self.d % self.heads_directional != 0 {
            return bad(format!(
                "d={} not divisible by heads_directional={}",
                self.d, self.heads_directional
            ));
        }
        Ok(())
    }

    pub fn patch(&self) -> PatchConfig {
        PatchConfig {
            patch_size: self.patch_size,
            embed_dim: self.d,
        }
    }

    /// Candidate list used by the directional blocks.
    pub fn candidates(&self) -> Vec<NeighborOffset> {
        if self.literal_listing {
            literal_listing_offsets()
        } else {
            self.neighbor_set.offsets().to_vec()
        }
    }

    /// True when no block can move information from later to earlier time
    /// columns.
    pub fn is_time_causal(&self) -> bool {
        self.global_blocks == 0 && !self.dense_control && self.candidates().iter().all(|o| o.dtime() <= 0)
    }
}

/// `S × d` speaker style tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleSequence<T> {
    pub tokens: Tensor<T>,
}

impl<T: Scalar> StyleSequence<T> {
    pub fn new(tokens: Tensor<T>) -> Result<Self> {
        if tokens.shape().len() != 2 || tokens.rows() == 0 {
            return Err(Error::Shape(format!(
                "style must be [S >= 1, d], got {:?}",
                tokens.shape()
            )));
        }
        check_finite(tokens.data())?;
        Ok(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sinusoidal step encoding followed by `Linear → SiLU → Linear`.
#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    d: usize,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl TimestepEmbedder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, d: usize) -> Self {
        Self {
            d,
            w1: store.add(format!("{prefix}.w1"), init.xavier(&[d, d], d, d)),
            b1: store.add(format!("{prefix}.b1"), init.zeros(&[d])),
            w2: store.add(format!("{prefix}.w2"), init.xavier(&[d, d], d, d)),
            b2: store.add(format!("{prefix}.b2"), init.zeros(&[d])),
        }
    }

    /// `[1, d]` embedding of step `t`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, t: usize) -> Var {
        let s = g.constant(Tensor::new(vec![1, self.d], sinusoid(t, self.d)).expect("embedding shape"));
        let h = g.linear(s, p.var(self.w1), p.var(self.b1));
        let h = g.silu(h);
        g.linear(h, p.var(self.w2), p.var(self.b2))
    }
}

/// Per-sub-layer `(shift, scale, gate)` rows projected from the conditioning.
#[derive(Debug, Clone)]
struct Modulation {
    w: ParamId,
    b: ParamId,
    sublayers: usize,
}

#[derive(Debug, Clone, Copy)]
struct AdaLn {
    shift: Var,
    scale: Var,
    gate: Var,
}

impl Modulation {
    fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, d: usize, sublayers: usize) -> Self {
        Self {
            w: store.add(format!("{prefix}.mod_w"), init.modulation(&[d, 3 * sublayers * d], d)),
            b: store.add(format!("{prefix}.mod_b"), init.zeros(&[3 * sublayers * d])),
            sublayers,
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, cond: Var, d: usize) -> Vec<AdaLn> {
        let m = g.linear(cond, p.var(self.w), p.var(self.b));
        (0..self.sublayers)
            .map(|s| AdaLn {
                shift: g.slice_cols(m, 3 * s * d, d),
                scale: g.slice_cols(m, (3 * s + 1) * d, d),
                gate: g.slice_cols(m, (3 * s + 2) * d, d),
            })
            .collect()
    }
}

impl AdaLn {
    /// `LN(x) · (1 + scale) + shift`
    fn modulate<T: Scalar>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let n = g.layer_norm(x);
        let s = g.add_scalar(self.scale, T::one());
        let n = g.mul_row(n, s);
        g.add_row(n, self.shift)
    }

    /// `x + gate · branch`
    fn residual<T: Scalar>(&self, g: &mut Graph<T>, x: Var, branch: Var) -> Var {
        let b = g.mul_row(branch, self.gate);
        g.add(x, b)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl FeedForward {
    fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, d: usize) -> Self {
        Self {
            w1: store.add(format!("{prefix}.ff_w1"), init.xavier(&[d, 4 * d], d, 4 * d)),
            b1: store.add(format!("{prefix}.ff_b1"), init.zeros(&[4 * d])),
            w2: store.add(format!("{prefix}.ff_w2"), init.xavier(&[4 * d, d], 4 * d, d)),
            b2: store.add(format!("{prefix}.ff_b2"), init.zeros(&[d])),
        }
    }

    fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = g.linear(x, p.var(self.w1), p.var(self.b1));
        let h = g.gelu(h);
        g.linear(h, p.var(self.w2), p.var(self.b2))
    }
}

#[derive(Debug, Clone)]
struct SelfAttention {
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
}

impl SelfAttention {
    fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, d: usize) -> Self {
        Self {
            w_qkv: store.add(format!("{prefix}.w_qkv"), init.xavier(&[d, 3 * d], d, d)),
            b_qkv: store.add(format!("{prefix}.b_qkv"), init.zeros(&[3 * d])),
            w_o: store.add(format!("{prefix}.w_o"), init.xavier(&[d, d], d, d)),
            b_o: store.add(format!("{prefix}.b_o"), init.zeros(&[d])),
        }
    }

    fn qkv<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, h: Var, d: usize) -> (Var, Var, Var) {
        let qkv = g.linear(h, p.var(self.w_qkv), p.var(self.b_qkv));
        (g.slice_cols(qkv, 0, d), g.slice_cols(qkv, d, d), g.slice_cols(qkv, 2 * d, d))
    }

    fn out<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, a: Var) -> Var {
        g.linear(a, p.var(self.w_o), p.var(self.b_o))
    }
}

/// Full self-attention DiT block over all patches.
#[derive(Debug, Clone)]
pub struct GlobalBlock {
    modulation: Modulation,
    attn: SelfAttention,
    ff: FeedForward,
    d: usize,
    heads: usize,
}

impl GlobalBlock {
    fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, d: usize, heads: usize) -> Self {
        Self {
            modulation: Modulation::new(store, init, prefix, d, 2),
            attn: SelfAttention::new(store, init, prefix, d),
            ff: FeedForward::new(store, init, prefix, d),
            d,
            heads,
        }
    }

    /// `x: [n, d]`, `cond: [1, d]` (already SiLU-activated), `pos: [n, d]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var, cond: Var, pos: Option<Var>) -> Var {
        let m = self.modulation.forward(g, p, cond, self.d);
        let mut h = m[0].modulate(g, x);
        if let Some(pos) = pos {
            h = g.add(h, pos);
        }
        let (q, k, v) = self.attn.qkv(g, p, h, self.d);
        let a = g.attention(q, k, v, self.heads, None);
        let a = self.attn.out(g, p, a);
        let x = m[0].residual(g, x, a);
        let h = m[1].modulate(g, x);
        let f = self.ff.forward(g, p, h);
        m[1].residual(g, x, f)
    }
}

#[derive(Debug, Clone)]
struct CrossAttention {
    w_q: ParamId,
    b_q: ParamId,
    w_kv: ParamId,
    b_kv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
}

/// Style cross-attention, directional attention and feed-forward.
#[derive(Debug, Clone)]
pub struct DirectionalBlock {
    modulation: Modulation,
    cross: Option<CrossAttention>,
    attn: SelfAttention,
    ff: FeedForward,
    d: usize,
    heads_cross: usize,
    heads: usize,
}

/// Inputs shared by every directional block of one forward pass.
pub struct DirectionalContext {
    pub index: Arc<CandidateIndex>,
    pub time_pos: Option<Var>,
    pub time_freq_pos: Option<Var>,
    pub style_limit: Option<Vec<usize>>,
    pub dense: bool,
}

impl DirectionalBlock {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        prefix: &str,
        cfg: &DecoderConfig,
    ) -> Self {
        let d = cfg.d;
        let cross = cfg.stm.then(|| CrossAttention {
            w_q: store.add(format!("{prefix}.x_wq"), init.xavier(&[d, d], d, d)),
            b_q: store.add(format!("{prefix}.x_bq"), init.zeros(&[d])),
            w_kv: store.add(format!("{prefix}.x_wkv"), init.xavier(&[d, 2 * d], d, d)),
            b_kv: store.add(format!("{prefix}.x_bkv"), init.zeros(&[2 * d])),
            w_o: store.add(format!("{prefix}.x_wo"), init.xavier(&[d, d], d, d)),
            b_o: store.add(format!("{prefix}.x_bo"), init.zeros(&[d])),
        });
        let sublayers = if cfg.stm { 3 } else { 2 };
        Self {
            modulation: Modulation::new(store, init, prefix, d, sublayers),
            cross,
            attn: SelfAttention::new(store, init, prefix, d),
            ff: FeedForward::new(store, init, prefix, d),
            d,
            heads_cross: cfg.heads_global,
            heads: cfg.heads_directional,
        }
    }

    /// Attention of patch queries over style keys/values, before the output
    /// projection. `h: [n, d]` already carries its positional term.
    pub fn style_attention<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        h: Var,
        style: Var,
        limit: Option<&[usize]>,
    ) -> Option<Var> {
        let c = self.cross.as_ref()?;
        let q = g.linear(h, p.var(c.w_q), p.var(c.b_q));
        let kv = g.linear(style, p.var(c.w_kv), p.var(c.b_kv));
        let k = g.slice_cols(kv, 0, self.d);
        let v = g.slice_cols(kv, self.d, self.d);
        Some(g.attention(q, k, v, self.heads_cross, limit))
    }

    /// Value projection of the style tokens, `[S, d]`.
    pub fn style_values<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, style: Var) -> Option<Var> {
        let c = self.cross.as_ref()?;
        let kv = g.linear(style, p.var(c.w_kv), p.var(c.b_kv));
        Some(g.slice_cols(kv, self.d, self.d))
    }

    /// Step 1 alone: `x + gate · CrossAttn(LN(x)·(1+scale)+shift + tp, style)`.
    /// Returns `x` unchanged when style temporal modelling is off.
    pub fn style_step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        cond: Var,
        style: Var,
        ctx: &DirectionalContext,
    ) -> Var {
        let m = self.modulation.forward(g, p, cond, self.d);
        self.style_sublayer(g, p, x, &m, style, ctx)
    }

    fn style_sublayer<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        m: &[AdaLn],
        style: Var,
        ctx: &DirectionalContext,
    ) -> Var {
        let Some(c) = &self.cross else { return x };
        let mut h = m[0].modulate(g, x);
        if let Some(tp) = ctx.time_pos {
            h = g.add(h, tp);
        }
        let a = self
            .style_attention(g, p, h, style, ctx.style_limit.as_deref())
            .expect("cross attention present");
        let a = g.linear(a, p.var(c.w_o), p.var(c.b_o));
        m[0].residual(g, x, a)
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        x: Var,
        cond: Var,
        style: Var,
        ctx: &DirectionalContext,
    ) -> Var {
        let m = self.modulation.forward(g, p, cond, self.d);
        let x = self.style_sublayer(g, p, x, &m, style, ctx);
        let (m_attn, m_ff) = if self.cross.is_some() { (m[1], m[2]) } else { (m[0], m[1]) };

        let mut h = m_attn.modulate(g, x);
        if let Some(pos) = ctx.time_freq_pos {
            h = g.add(h, pos);
        }
        let (q, k, v) = self.attn.qkv(g, p, h, self.d);
        let a = if ctx.dense {
            g.attention(q, k, v, self.heads, None)
        } else {
            g.local_attention(q, k, v, self.heads, ctx.index.clone())
        };
        let a = self.attn.out(g, p, a);
        let x = m_attn.residual(g, x, a);

        let h = m_ff.modulate(g, x);
        let f = self.ff.forward(g, p, h);
        m_ff.residual(g, x, f)
    }
}

#[derive(Debug, Clone)]
pub enum Block {
    Global(GlobalBlock),
    Directional(DirectionalBlock),
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cfg: DecoderConfig,
    cond_w: ParamId,
    cond_b: ParamId,
    pub down: DownConv,
    pub embed: PatchEmbed,
    pub up: UpConv,
    pub temb: TimestepEmbedder,
    style_w: Option<ParamId>,
    pub blocks: Vec<Block>,
}

/// Style token rows a time column may read under causal style attention:
/// a prefix growing with the column index.
pub fn style_prefix(j: usize, w: usize, s: usize) -> usize {
    ((j + 1) * s).div_ceil(w).clamp(1, s)
}

impl Decoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let pc = cfg.patch();
        let channels = pc.channels();
        let d = cfg.d;
        let cond_w = store.add(
            format!("{prefix}.cond_w"),
            init.xavier(&[cfg.cond_dim, cfg.bins], cfg.cond_dim, cfg.bins),
        );
        let cond_b = store.add(format!("{prefix}.cond_b"), init.zeros(&[cfg.bins]));
        let down = DownConv::new(store, init, &format!("{prefix}.down"), channels);
        let embed = PatchEmbed::new(store, init, &format!("{prefix}.patch"), pc, channels);
        let up = UpConv::new(store, init, &format!("{prefix}.up"), channels);
        let temb = TimestepEmbedder::new(store, init, &format!("{prefix}.temb"), d);
        let style_w = (!cfg.stm).then(|| store.add(format!("{prefix}.style_w"), init.xavier(&[d, d], d, d)));
        let blocks = (0..cfg.blocks)
            .map(|b| {
                let pre = format!("{prefix}.block{b}");
                if b < cfg.global_blocks {
                    Block::Global(GlobalBlock::new(store, init, &pre, d, cfg.heads_global))
                } else {
                    Block::Directional(DirectionalBlock::new(store, init, &pre, &cfg))
                }
            })
            .collect();
        Ok(Self {
            cfg,
            cond_w,
            cond_b,
            down,
            embed,
            up,
            temb,
            style_w,
            blocks,
        })
    }

    /// Modulation projections of every block (the adaLN-Zero gates live here).
    pub fn modulation_params(&self) -> Vec<ParamId> {
        self.blocks
            .iter()
            .flat_map(|b| {
                let m = match b {
                    Block::Global(g) => &g.modulation,
                    Block::Directional(d) => &d.modulation,
                };
                [m.w, m.b]
            })
            .collect()
    }

    fn check_inputs<T: Scalar>(&self, g: &Graph<T>, noisy: Var, cond: Var, style: Var) -> Result<(usize, usize)> {
        let [bins, frames] = *g.shape(noisy) else {
            return Err(Error::Shape(format!("noisy mel must be [bins, frames], got {:?}", g.shape(noisy))));
        };
        if bins != self.cfg.bins {
            return Err(Error::Shape(format!("decoder expects {} bins, got {bins}", self.cfg.bins)));
        }
        let cs = g.shape(cond);
        if cs.len() != 2 || cs[0] != frames || cs[1] != self.cfg.cond_dim {
            return Err(Error::Shape(format!(
                "conditioning must be [{frames}, {}] to match the noisy frames, got {cs:?}",
                self.cfg.cond_dim
            )));
        }
        let ss = g.shape(style);
        if ss.len() != 2 || ss[0] == 0 || ss[1] != self.cfg.d {
            return Err(Error::Shape(format!("style must be [S, {}], got {ss:?}", self.cfg.d)));
        }
        Ok((bins, frames))
    }

    /// Adds projected conditioning and patchifies: returns `[h·w, d]`.
    fn encode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, noisy: Var, cond: Var, bins: usize, frames: usize) -> Var {
        let c = g.linear(cond, p.var(self.cond_w), p.var(self.cond_b));
        let c = g.transpose(c);
        let x = g.add(noisy, c);
        let x = g.reshape(x, &[1, bins, frames]);
        let f = self.down.forward(g, p, x);
        self.embed.patchify(g, p, f)
    }

    fn decode<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, grid: Var, bins: usize, frames: usize) -> Var {
        let f = self.embed.unpatchify(g, p, grid, bins, frames);
        self.up.forward(g, p, f)
    }

    /// The decoder with every block removed.
    pub fn conv_patch_path<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, noisy: Var, cond: Var) -> Result<Var> {
        let [bins, frames] = *g.shape(noisy) else {
            return Err(Error::Shape("noisy mel must be [bins, frames]".into()));
        };
        let grid = self.encode(g, p, noisy, cond, bins, frames);
        Ok(self.decode(g, p, grid, bins, frames))
    }

    /// Builds the shared per-pass inputs for an `h × w` grid.
    pub fn context<T: Scalar>(&self, g: &mut Graph<T>, h: usize, w: usize, style_len: usize) -> DirectionalContext {
        let d = self.cfg.d;
        let pos = self.cfg.pos;
        let time_pos = pos
            .use_time_pos
            .then(|| g.constant(position_table(h, w, d, true, false)));
        let time_freq_pos = (pos.use_time_pos || pos.use_freq_pos)
            .then(|| g.constant(position_table(h, w, d, pos.use_time_pos, pos.use_freq_pos)));
        let style_limit = self
            .cfg
            .causal_style
            .then(|| (0..h * w).map(|n| style_prefix(n % w, w, style_len)).collect());
        DirectionalContext {
            index: Arc::new(CandidateIndex::build(h, w, &self.cfg.candidates(), self.cfg.clamp)),
            time_pos,
            time_freq_pos,
            style_limit,
            dense: self.cfg.dense_control,
        }
    }

    /// SiLU-activated block conditioning `[1, d]` for step `t`.
    pub fn conditioning<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, t: usize, style: Var) -> Var {
        let mut c = self.temb.forward(g, p, t);
        if let Some(w) = self.style_w {
            let s = g.shape(style)[0];
            let mean = g.constant(Tensor::full(&[1, s], T::one() / T::of_usize(s)));
            let pooled = g.matmul(mean, style);
            let proj = g.matmul(pooled, p.var(w));
            c = g.add(c, proj);
        }
        g.silu(c)
    }

    /// Predicted noise `[bins, frames]` for `noisy: [bins, frames]`,
    /// `cond: [frames, cond_dim]` and `style: [S, d]` at step `t`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        noisy: Var,
        cond: Var,
        t: usize,
        style: Var,
    ) -> Result<Var> {
        let (bins, frames) = self.check_inputs(g, noisy, cond, style)?;
        let (h, w) = self.cfg.patch().grid_dims(bins, frames);
        let mut x = self.encode(g, p, noisy, cond, bins, frames);
        let c = self.conditioning(g, p, t, style);
        let ctx = self.context(g, h, w, g.shape(style)[0]);
        for block in &self.blocks {
            x = match block {
                Block::Global(b) => b.forward(g, p, x, c, ctx.time_freq_pos),
                Block::Directional(b) => b.forward(g, p, x, c, style, &ctx),
            };
        }
        Ok(self.decode(g, p, x, bins, frames))
    }
}
