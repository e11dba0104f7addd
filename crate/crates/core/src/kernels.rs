//! Raw forward/backward kernels over flat row-major buffers.

use crate::scalar::Scalar;
use crate::tensor::{axpy, dot, gemm_nn, gemm_nt, gemm_tn};

/// Multi-head softmax attention, `q: [n, d]`, `k, v: [s, d]`.
///
/// `key_limit[r]`, when given, restricts query row `r` to the first
/// `key_limit[r]` keys. Returns the output and per-head probabilities
/// `[heads, n, s]`.
pub fn attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    n: usize,
    s: usize,
    d: usize,
    heads: usize,
    key_limit: Option<&[usize]>,
) -> (Vec<T>, Vec<T>) {
    assert!(heads >= 1 && d % heads == 0, "d must divide into heads");
    let dh = d / heads;
    let scale = T::one() / T::of_usize(dh).sqrt();
    let mut out = vec![T::zero(); n * d];
    let mut probs = vec![T::zero(); heads * n * s];
    let mut qh = vec![T::zero(); n * dh];
    let mut kh = vec![T::zero(); s * dh];
    let mut vh = vec![T::zero(); s * dh];
    let mut oh = vec![T::zero(); n * dh];
    for h in 0..heads {
        split_head(q, &mut qh, d, dh, h);
        split_head(k, &mut kh, d, dh, h);
        split_head(v, &mut vh, d, dh, h);
        let p = &mut probs[h * n * s..(h + 1) * n * s];
        gemm_nt(&qh, &kh, p, n, dh, s);
        for r in 0..n {
            let lim = key_limit.map_or(s, |l| l[r].clamp(1, s));
            softmax_row(&mut p[r * s..(r + 1) * s], lim, scale);
        }
        oh.iter_mut().for_each(|x| *x = T::zero());
        gemm_nn(p, &vh, &mut oh, n, s, dh);
        merge_head(&oh, &mut out, d, dh, h);
    }
    (out, probs)
}

/// Gradients of [`attention_forward`] for `q`, `k`, `v`.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    n: usize,
    s: usize,
    d: usize,
    heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let dh = d / heads;
    let scale = T::one() / T::of_usize(dh).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); s * d];
    let mut dv = vec![T::zero(); s * d];
    let mut qh = vec![T::zero(); n * dh];
    let mut kh = vec![T::zero(); s * dh];
    let mut vh = vec![T::zero(); s * dh];
    let mut goh = vec![T::zero(); n * dh];
    let mut dp = vec![T::zero(); n * s];
    let mut buf_n = vec![T::zero(); n * dh];
    let mut buf_s = vec![T::zero(); s * dh];
    for h in 0..heads {
        split_head(q, &mut qh, d, dh, h);
        split_head(k, &mut kh, d, dh, h);
        split_head(v, &mut vh, d, dh, h);
        split_head(dout, &mut goh, d, dh, h);
        let p = &probs[h * n * s..(h + 1) * n * s];

        buf_s.iter_mut().for_each(|x| *x = T::zero());
        gemm_tn(p, &goh, &mut buf_s, s, n, dh);
        merge_head(&buf_s, &mut dv, d, dh, h);

        dp.iter_mut().for_each(|x| *x = T::zero());
        gemm_nt(&goh, &vh, &mut dp, n, dh, s);
        for r in 0..n {
            let pr = &p[r * s..(r + 1) * s];
            let row = &mut dp[r * s..(r + 1) * s];
            let inner = dot(pr, row);
            for (g, &pv) in row.iter_mut().zip(pr) {
                *g = pv * (*g - inner) * scale;
            }
        }
        buf_n.iter_mut().for_each(|x| *x = T::zero());
        gemm_nn(&dp, &kh, &mut buf_n, n, s, dh);
        merge_head(&buf_n, &mut dq, d, dh, h);

        buf_s.iter_mut().for_each(|x| *x = T::zero());
        gemm_tn(&dp, &qh, &mut buf_s, s, n, dh);
        merge_head(&buf_s, &mut dk, d, dh, h);
    }
    (dq, dk, dv)
}

fn split_head<T: Scalar>(src: &[T], dst: &mut [T], d: usize, dh: usize, h: usize) {
    for (r, chunk) in dst.chunks_exact_mut(dh).enumerate() {
        chunk.copy_from_slice(&src[r * d + h * dh..r * d + (h + 1) * dh]);
    }
}

fn merge_head<T: Scalar>(src: &[T], dst: &mut [T], d: usize, dh: usize, h: usize) {
    for (r, chunk) in src.chunks_exact(dh).enumerate() {
        dst[r * d + h * dh..r * d + (h + 1) * dh].copy_from_slice(chunk);
    }
}

/// In-place scaled softmax over the first `lim` entries; the rest become 0.
fn softmax_row<T: Scalar>(row: &mut [T], lim: usize, scale: T) {
    let mut max = T::neg_infinity();
    for x in &mut row[..lim] {
        *x *= scale;
        max = max.max(*x);
    }
    let mut sum = T::zero();
    for x in &mut row[..lim] {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in &mut row[..lim] {
        *x /= sum;
    }
    for x in &mut row[lim..] {
        *x = T::zero();
    }
}

/// Geometry of the 3×3 convolution whose future-time column is masked out:
/// taps at frequency offsets {-1, 0, +1} and time offsets {-1, 0}. Weights are
/// stored `[cout, cin, 3, 2]`, time tap 0 being `t - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub cout: usize,
    pub bins: usize,
    pub frames: usize,
}

impl ConvGeom {
    pub const FREQ_TAPS: usize = 3;
    pub const TIME_TAPS: usize = 2;

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * Self::FREQ_TAPS * Self::TIME_TAPS
    }

    fn taps(&self) -> impl Iterator<Item = (usize, i64, i64)> {
        (0..Self::FREQ_TAPS).flat_map(|kf| {
            (0..Self::TIME_TAPS).map(move |kt| {
                (
                    kf * Self::TIME_TAPS + kt,
                    kf as i64 - 1,
                    kt as i64 - (Self::TIME_TAPS as i64 - 1),
                )
            })
        })
    }

    /// Valid output ranges `(f0..f1, t0..t1)` for a tap with offsets `(df, dt)`.
    fn span(&self, df: i64, dt: i64) -> (usize, usize, usize, usize) {
        let (bins, frames) = (self.bins as i64, self.frames as i64);
        let f0 = (-df).max(0);
        let f1 = (bins - df).min(bins);
        let t0 = (-dt).max(0);
        let t1 = (frames - dt).min(frames);
        (f0 as usize, f1.max(f0) as usize, t0 as usize, t1.max(t0) as usize)
    }
}

pub fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], g: ConvGeom) -> Vec<T> {
    let plane = g.bins * g.frames;
    assert_eq!(x.len(), g.cin * plane, "conv input shape");
    assert_eq!(w.len(), g.weight_len(), "conv weight shape");
    assert_eq!(b.len(), g.cout, "conv bias shape");
    let ntap = ConvGeom::FREQ_TAPS * ConvGeom::TIME_TAPS;
    let mut out = vec![T::zero(); g.cout * plane];
    for co in 0..g.cout {
        let oplane = &mut out[co * plane..(co + 1) * plane];
        oplane.iter_mut().for_each(|o| *o = b[co]);
        for ci in 0..g.cin {
            let xplane = &x[ci * plane..(ci + 1) * plane];
            for (tap, df, dt) in g.taps() {
                let wv = w[(co * g.cin + ci) * ntap + tap];
                if wv == T::zero() {
                    continue;
                }
                let (f0, f1, t0, t1) = g.span(df, dt);
                for f in f0..f1 {
                    let src_f = (f as i64 + df) as usize;
                    let src_t0 = (t0 as i64 + dt) as usize;
                    let len = t1 - t0;
                    axpy(
                        wv,
                        &xplane[src_f * g.frames + src_t0..src_f * g.frames + src_t0 + len],
                        &mut oplane[f * g.frames + t0..f * g.frames + t1],
                    );
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dout: &[T],
    g: ConvGeom,
    need_dx: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = g.bins * g.frames;
    let ntap = ConvGeom::FREQ_TAPS * ConvGeom::TIME_TAPS;
    let mut dx = if need_dx {
        vec![T::zero(); g.cin * plane]
    } else {
        Vec::new()
    };
    let mut dw = vec![T::zero(); g.weight_len()];
    let mut db = vec![T::zero(); g.cout];
    for co in 0..g.cout {
        let gplane = &dout[co * plane..(co + 1) * plane];
        db[co] = gplane.iter().fold(T::zero(), |s, &v| s + v);
        for ci in 0..g.cin {
            let xplane = &x[ci * plane..(ci + 1) * plane];
            for (tap, df, dt) in g.taps() {
                let widx = (co * g.cin + ci) * ntap + tap;
                let (f0, f1, t0, t1) = g.span(df, dt);
                let len = t1 - t0;
                let mut acc = T::zero();
                for f in f0..f1 {
                    let src = ((f as i64 + df) as usize) * g.frames + (t0 as i64 + dt) as usize;
                    let gs = &gplane[f * g.frames + t0..f * g.frames + t1];
                    acc += dot(gs, &xplane[src..src + len]);
                    if need_dx {
                        let wv = w[widx];
                        let dplane = &mut dx[ci * plane..(ci + 1) * plane];
                        axpy(wv, gs, &mut dplane[src..src + len]);
                    }
                }
                dw[widx] += acc;
            }
        }
    }
    (dx, dw, db)
}

/// Kernel-3 convolution along rows of `x: [len, cin]` with zero padding on
/// both ends; `w: [3, cin, cout]`, tap 0 reads row `t - 1`.
pub fn conv1d_forward<T: Scalar>(x: &[T], w: &[T], b: &[T], len: usize, cin: usize, cout: usize) -> Vec<T> {
    let mut out = vec![T::zero(); len * cout];
    for r in 0..len {
        out[r * cout..(r + 1) * cout].copy_from_slice(b);
    }
    for tap in 0..3usize {
        let wk = &w[tap * cin * cout..(tap + 1) * cin * cout];
        // output rows r with source row r + tap - 1 in range
        let (r0, r1) = match tap {
            0 => (1, len),
            1 => (0, len),
            _ => (0, len.saturating_sub(1)),
        };
        if r0 >= r1 {
            continue;
        }
        let s0 = r0 + tap - 1;
        gemm_nn(
            &x[s0 * cin..(s0 + r1 - r0) * cin],
            wk,
            &mut out[r0 * cout..r1 * cout],
            r1 - r0,
            cin,
            cout,
        );
    }
    out
}

pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dout: &[T],
    len: usize,
    cin: usize,
    cout: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); len * cin];
    let mut dw = vec![T::zero(); 3 * cin * cout];
    let mut db = vec![T::zero(); cout];
    for r in 0..len {
        for c in 0..cout {
            db[c] += dout[r * cout + c];
        }
    }
    for tap in 0..3usize {
        let (r0, r1) = match tap {
            0 => (1, len),
            1 => (0, len),
            _ => (0, len.saturating_sub(1)),
        };
        if r0 >= r1 {
            continue;
        }
        let s0 = r0 + tap - 1;
        let rows = r1 - r0;
        let wk = &w[tap * cin * cout..(tap + 1) * cin * cout];
        gemm_nt(
            &dout[r0 * cout..r1 * cout],
            wk,
            &mut dx[s0 * cin..(s0 + rows) * cin],
            rows,
            cout,
            cin,
        );
        gemm_tn(
            &x[s0 * cin..(s0 + rows) * cin],
            &dout[r0 * cout..r1 * cout],
            &mut dw[tap * cin * cout..(tap + 1) * cin * cout],
            cin,
            rows,
            cout,
        );
    }
    (dx, dw, db)
}

/// Layout of a feature map `[channels, bins, frames]` cut into `p × p` patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeom {
    pub channels: usize,
    pub bins: usize,
    pub frames: usize,
    pub patch: usize,
}

impl PatchGeom {
    /// Patch rows along frequency.
    pub fn h(&self) -> usize {
        self.bins.div_ceil(self.patch)
    }

    /// Patch columns along time.
    pub fn w(&self) -> usize {
        self.frames.div_ceil(self.patch)
    }

    /// Length of one flattened patch, `channels · p · p`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }
}

/// `[c, bins, frames] -> [h·w, c·p·p]`, zero padding the high-frequency and
/// late-time edges. Patch vectors are ordered `(channel, row, column)`.
pub fn unfold_patches<T: Scalar>(x: &[T], g: PatchGeom) -> Vec<T> {
    let (h, w, p, k) = (g.h(), g.w(), g.patch, g.patch_len());
    assert_eq!(x.len(), g.channels * g.bins * g.frames, "unfold input shape");
    let mut out = vec![T::zero(); h * w * k];
    for i in 0..h {
        for j in 0..w {
            let dst = &mut out[(i * w + j) * k..(i * w + j + 1) * k];
            for c in 0..g.channels {
                for pf in 0..p {
                    let f = i * p + pf;
                    if f >= g.bins {
                        break;
                    }
                    let t0 = j * p;
                    let len = p.min(g.frames - t0);
                    let src = (c * g.bins + f) * g.frames + t0;
                    let at = c * p * p + pf * p;
                    dst[at..at + len].copy_from_slice(&x[src..src + len]);
                }
            }
        }
    }
    out
}

/// Adjoint of [`unfold_patches`]: scatters patch vectors back and crops the
/// padding.
pub fn fold_patches<T: Scalar>(patches: &[T], g: PatchGeom) -> Vec<T> {
    let (h, w, p, k) = (g.h(), g.w(), g.patch, g.patch_len());
    assert_eq!(patches.len(), h * w * k, "fold input shape");
    let mut out = vec![T::zero(); g.channels * g.bins * g.frames];
    for i in 0..h {
        for j in 0..w {
            let src = &patches[(i * w + j) * k..(i * w + j + 1) * k];
            for c in 0..g.channels {
                for pf in 0..p {
                    let f = i * p + pf;
                    if f >= g.bins {
                        break;
                    }
                    let t0 = j * p;
                    let len = p.min(g.frames - t0);
                    let dst = (c * g.bins + f) * g.frames + t0;
                    let at = c * p * p + pf * p;
                    out[dst..dst + len].copy_from_slice(&src[at..at + len]);
                }
            }
        }
    }
    out
}

/// Rotates consecutive pairs of each head slice of every row:
/// `(x[2i], x[2i+1])` by `sign · pos · 10000^(-2i/dh)`.
pub fn rope_apply<T: Scalar>(x: &[T], d: usize, heads: usize, positions: &[usize], sign: T) -> Vec<T> {
    let dh = d / heads;
    assert!(dh % 2 == 0, "rotary dimension must be even");
    let mut out = x.to_vec();
    for (r, &pos) in positions.iter().enumerate() {
        for h in 0..heads {
            let base = r * d + h * dh;
            rotate_pairs(&mut out[base..base + dh], pos as f64, sign);
        }
    }
    out
}

/// Rotary position rotation of one vector.
pub fn rotate_pairs<T: Scalar>(v: &mut [T], pos: f64, sign: T) {
    let dh = v.len();
    for i in 0..dh / 2 {
        let theta = T::lit(10000f64.powf(-2.0 * i as f64 / dh as f64));
        let angle = sign * T::lit(pos) * theta;
        let (s, c) = angle.sin_cos();
        let (a, b) = (v[2 * i], v[2 * i + 1]);
        v[2 * i] = a * c - b * s;
        v[2 * i + 1] = a * s + b * c;
    }
}
