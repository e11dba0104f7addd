//! Mel feature maps to patch grids and back.
//!
//! A `[channels, bins, frames]` feature map is zero padded at the
//! high-frequency and late-time edges to multiples of the patch size, cut into
//! `p × p` blocks and projected to `d` features. Grid row `i` covers bins
//! `i·p .. (i+1)·p` (row 0 lowest), column `j` covers frames `j·p .. (j+1)·p`.
//!
//! The convolutions on either side of the grid are 3×3 kernels whose
//! later-frame column is masked, so a frame never reads from the future.

use crate::error::{check_finite, Error, Result};
use crate::graph::{Graph, Var};
use crate::kernels::PatchGeom;
use crate::params::{Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::spectro_io::MelSpectrogram;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 7,
            embed_dim: 64,
        }
    }
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "patch_size and embed_dim must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Conv channels on either side of the grid, `d / 4` (at least 1).
    pub fn channels(&self) -> usize {
        (self.embed_dim / 4).max(1)
    }

    pub fn grid_dims(&self, bins: usize, frames: usize) -> (usize, usize) {
        (bins.div_ceil(self.patch_size), frames.div_ceil(self.patch_size))
    }
}

/// Batched patch embeddings, `values: [b, h, w, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid<T> {
    pub b: usize,
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub values: Tensor<T>,
}

impl<T: Scalar> PatchGrid<T> {
    pub fn new(values: Tensor<T>) -> Result<Self> {
        let [b, h, w, d] = *values.shape() else {
            return Err(Error::Shape(format!(
                "patch grid must be [b, h, w, d], got {:?}",
                values.shape()
            )));
        };
        check_finite(values.data())?;
        Ok(Self { b, h, w, d, values })
    }

    /// Grid of a single utterance from `[h·w, d]` rows.
    pub fn from_rows(h: usize, w: usize, rows: Tensor<T>) -> Result<Self> {
        let d = rows.cols();
        Self::new(rows.reshape(&[1, h, w, d])?)
    }

    pub fn at(&self, b: usize, i: usize, j: usize) -> &[T] {
        let at = ((b * self.h + i) * self.w + j) * self.d;
        &self.values.data()[at..at + self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionalConfig {
    pub use_time_pos: bool,
    pub use_freq_pos: bool,
}

impl Default for PositionalConfig {
    fn default() -> Self {
        Self {
            use_time_pos: true,
            use_freq_pos: true,
        }
    }
}

/// Sinusoidal encoding of `index` over `d` dims:
/// `[sin(i·ω_0), cos(i·ω_0), sin(i·ω_1), ...]`, `ω_k = 10000^(-2k/d)`.
pub fn sinusoid<T: Scalar>(index: usize, d: usize) -> Vec<T> {
    (0..d)
        .map(|c| {
            let k = (c / 2) as f64;
            let angle = index as f64 * 10000f64.powf(-2.0 * k / d as f64);
            T::lit(if c % 2 == 0 { angle.sin() } else { angle.cos() })
        })
        .collect()
}

/// `[h·w, d]` positional term: `tp(j)` and/or `fp(i)` at row `i·w + j`.
pub fn position_table<T: Scalar>(h: usize, w: usize, d: usize, time: bool, freq: bool) -> Tensor<T> {
    let mut out = Tensor::zeros(&[h * w, d]);
    let tp: Vec<Vec<T>> = (0..w).map(|j| sinusoid(j, d)).collect();
    let fp: Vec<Vec<T>> = (0..h).map(|i| sinusoid(i, d)).collect();
    for i in 0..h {
        for j in 0..w {
            let row = &mut out.data_mut()[(i * w + j) * d..(i * w + j + 1) * d];
            if time {
                row.iter_mut().zip(&tp[j]).for_each(|(r, &v)| *r += v);
            }
            if freq {
                row.iter_mut().zip(&fp[i]).for_each(|(r, &v)| *r += v);
            }
        }
    }
    out
}

/// Adds time and/or frequency positions to every grid of the batch.
pub fn add_positions<T: Scalar>(grid: &PatchGrid<T>, pcfg: PositionalConfig) -> PatchGrid<T> {
    if !pcfg.use_time_pos && !pcfg.use_freq_pos {
        return grid.clone();
    }
    let table = position_table::<T>(grid.h, grid.w, grid.d, pcfg.use_time_pos, pcfg.use_freq_pos);
    let mut out = grid.clone();
    for chunk in out.values.data_mut().chunks_exact_mut(table.numel()) {
        chunk.iter_mut().zip(table.data()).for_each(|(o, &p)| *o += p);
    }
    out
}

/// Two stacked masked 3×3 convolutions, `1 → c → c`, SiLU between.
#[derive(Debug, Clone)]
pub struct DownConv {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub channels: usize,
}

impl DownConv {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, channels: usize) -> Self {
        let fan1 = 6;
        let fan2 = 6 * channels;
        Self {
            w1: store.add(format!("{prefix}.w1"), init.normal(&[channels, 1, 3, 2], (1.0 / fan1 as f64).sqrt())),
            b1: store.add(format!("{prefix}.b1"), init.zeros(&[channels])),
            w2: store.add(
                format!("{prefix}.w2"),
                init.normal(&[channels, channels, 3, 2], (1.0 / fan2 as f64).sqrt()),
            ),
            b2: store.add(format!("{prefix}.b2"), init.zeros(&[channels])),
            channels,
        }
    }

    /// `x: [1, bins, frames] -> [c, bins, frames]`
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let h = g.conv2d(x, p.var(self.w1), p.var(self.b1));
        let h = g.silu(h);
        g.conv2d(h, p.var(self.w2), p.var(self.b2))
    }
}

/// Stand-alone evaluation of a [`DownConv`] on a mel.
pub fn down_features<T: Scalar>(
    conv: &DownConv,
    store: &ParamStore<T>,
    mel: &MelSpectrogram,
) -> Tensor<T> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let x = Tensor::new(
        vec![1, mel.bins(), mel.frames()],
        mel.values().iter().map(|&v| T::lit(v as f64)).collect(),
    )
    .expect("mel shape");
    let x = g.constant(x);
    let y = conv.forward(&mut g, &p, x);
    g.value(y).clone()
}

/// Linear patch projections in both directions.
#[derive(Debug, Clone)]
pub struct PatchEmbed {
    pub cfg: PatchConfig,
    pub channels: usize,
    pub w_in: ParamId,
    pub b_in: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

impl PatchEmbed {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        init: &mut Init,
        prefix: &str,
        cfg: PatchConfig,
        channels: usize,
    ) -> Self {
        let k = channels * cfg.patch_size * cfg.patch_size;
        let d = cfg.embed_dim;
        Self {
            cfg,
            channels,
            w_in: store.add(format!("{prefix}.w_in"), init.xavier(&[k, d], k, d)),
            b_in: store.add(format!("{prefix}.b_in"), init.zeros(&[d])),
            w_out: store.add(format!("{prefix}.w_out"), init.xavier(&[d, k], d, k)),
            b_out: store.add(format!("{prefix}.b_out"), init.zeros(&[k])),
        }
    }

    pub fn geom(&self, bins: usize, frames: usize) -> PatchGeom {
        PatchGeom {
            channels: self.channels,
            bins,
            frames,
            patch: self.cfg.patch_size,
        }
    }

    /// `[c, bins, frames] -> [h·w, d]`
    pub fn patchify<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, features: Var) -> Var {
        let u = g.unfold(features, self.cfg.patch_size);
        g.linear(u, p.var(self.w_in), p.var(self.b_in))
    }

    /// `[h·w, d] -> [c, bins, frames]`, padding cropped.
    pub fn unpatchify<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, grid: Var, bins: usize, frames: usize) -> Var {
        let geom = self.geom(bins, frames);
        assert_eq!(
            g.shape(grid)[0],
            geom.h() * geom.w(),
            "grid rows do not match {bins}×{frames} with patch {}",
            geom.patch
        );
        let y = g.linear(grid, p.var(self.w_out), p.var(self.b_out));
        g.fold(y, geom)
    }
}

/// Masked 3×3 convolution `c → 1` restoring the mel shape.
#[derive(Debug, Clone)]
pub struct UpConv {
    pub w: ParamId,
    pub b: ParamId,
}

impl UpConv {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, channels: usize) -> Self {
        Self {
            w: store.add(
                format!("{prefix}.w"),
                init.normal(&[1, channels, 3, 2], (1.0 / (6 * channels) as f64).sqrt()),
            ),
            b: store.add(format!("{prefix}.b"), init.zeros(&[1])),
        }
    }

    /// `[c, bins, frames] -> [bins, frames]`
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Var {
        let y = g.conv2d(x, p.var(self.w), p.var(self.b));
        let s = g.shape(y).to_vec();
        g.reshape(y, &[s[1], s[2]])
    }
}
