//! Directional patch interaction.
//!
//! Every patch of an `h × w` grid (rows = frequency, row 0 lowest; columns =
//! time) attends to a small fixed set of relative neighbours instead of the
//! whole grid. The default set is the patch itself, the previous frame, the
//! lower-frequency patch and the previous-frame lower-frequency patch, so
//! information only flows from past to future and from low to high
//! frequencies.
//!
//! Out-of-range neighbours are clamped onto the grid edge, duplicating an
//! in-range patch. A duplicated candidate keeps its own softmax mass, so a
//! boundary patch whose `P` neighbour clamps onto itself weighs its own key
//! twice.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{check_finite, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{axpy, dot, Tensor};

/// A relative `(dfreq, dtime)` offset with its ablation-table name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NeighborOffset {
    SelfPatch,
    /// previous frame
    P,
    /// next frame
    N,
    /// lower frequency
    L,
    /// higher frequency
    H,
    PL,
    PH,
    NL,
    NH,
}

impl NeighborOffset {
    pub const ALL: [NeighborOffset; 9] = [
        Self::SelfPatch,
        Self::P,
        Self::N,
        Self::L,
        Self::H,
        Self::PL,
        Self::PH,
        Self::NL,
        Self::NH,
    ];

    pub fn dfreq(self) -> i32 {
        match self {
            Self::SelfPatch | Self::P | Self::N => 0,
            Self::L | Self::PL | Self::NL => -1,
            Self::H | Self::PH | Self::NH => 1,
        }
    }

    pub fn dtime(self) -> i32 {
        match self {
            Self::SelfPatch | Self::L | Self::H => 0,
            Self::P | Self::PL | Self::PH => -1,
            Self::N | Self::NL | Self::NH => 1,
        }
    }

    pub fn delta(self) -> (i32, i32) {
        (self.dfreq(), self.dtime())
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SelfPatch => "self",
            Self::P => "p",
            Self::N => "n",
            Self::L => "l",
            Self::H => "h",
            Self::PL => "pl",
            Self::PH => "ph",
            Self::NL => "nl",
            Self::NH => "nh",
        }
    }

    pub fn from_delta(dfreq: i32, dtime: i32) -> Option<Self> {
        Self::ALL.into_iter().find(|o| o.delta() == (dfreq, dtime))
    }
}

impl FromStr for NeighborOffset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or(Error::UnknownNeighbor(s))
    }
}

/// Ordered, duplicate-free set of offsets that always contains the patch itself.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NeighborSet {
    offsets: Vec<NeighborOffset>,
}

impl NeighborSet {
    /// Builds a set from arbitrary offsets; `SelfPatch` is added and the order
    /// normalised.
    pub fn new(offsets: impl IntoIterator<Item = NeighborOffset>) -> Self {
        let mut set: BTreeSet<NeighborOffset> = offsets.into_iter().collect();
        set.insert(NeighborOffset::SelfPatch);
        Self {
            offsets: set.into_iter().collect(),
        }
    }

    /// `{self, p, l, pl}`
    pub fn directional() -> Self {
        use NeighborOffset::*;
        Self::new([P, L, PL])
    }

    pub fn self_only() -> Self {
        Self::new([])
    }

    /// The eight neighbour sets of the ablation sweep, labelled as in the
    /// configuration syntax. The last entry is the default.
    pub fn ablation_sets() -> Vec<NeighborSet> {
        ["ph,p,h", "p,pl", "ph,p", "h,nh,n", "l,nl,n", "n,nl", "n,nh", "p,l,pl"]
            .iter()
            .map(|s| s.parse().expect("static set labels parse"))
            .collect()
    }

    pub fn offsets(&self) -> &[NeighborOffset] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// True if any offset looks at a later frame.
    pub fn has_future(&self) -> bool {
        self.offsets.iter().any(|o| o.dtime() > 0)
    }
}

impl Default for NeighborSet {
    fn default() -> Self {
        Self::directional()
    }
}

impl FromStr for NeighborSet {
    type Err = Error;

    /// Comma separated names, `self` implicit: `"p,l,pl"`.
    fn from_str(s: &str) -> Result<Self> {
        let offsets = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(offsets))
    }
}

impl fmt::Display for NeighborSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self
            .offsets
            .iter()
            .filter(|o| **o != NeighborOffset::SelfPatch)
            .map(|o| o.name())
            .collect();
        if names.is_empty() {
            f.write_str("self")
        } else {
            f.write_str(&names.join(","))
        }
    }
}

/// Candidate list reproducing the gather of the published listing verbatim:
/// the patch, its previous frame, the previous frame one row up, and the patch
/// again. Under the row-0-lowest orientation "one row up" is `PH`.
pub fn literal_listing_offsets() -> Vec<NeighborOffset> {
    use NeighborOffset::*;
    vec![SelfPatch, P, PH, SelfPatch]
}

/// How neighbours that fall off the grid are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClampPolicy {
    /// Replicate the nearest edge patch.
    #[default]
    Clamp,
    /// Drop the candidate from the softmax.
    MaskOut,
}

impl ClampPolicy {
    pub fn name(self) -> &'static str {
        match self {
            ClampPolicy::Clamp => "clamp",
            ClampPolicy::MaskOut => "mask",
        }
    }
}

impl FromStr for ClampPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clamp" => Ok(ClampPolicy::Clamp),
            "mask" => Ok(ClampPolicy::MaskOut),
            other => Err(Error::Parse(format!("unknown clamp policy {other:?}"))),
        }
    }
}

/// Flat `[n, m]` table of candidate patch indices, `n = h * w` in row-major
/// `(freq, time)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateIndex {
    pub h: usize,
    pub w: usize,
    pub m: usize,
    idx: Vec<u32>,
}

impl CandidateIndex {
    pub const MASKED: u32 = u32::MAX;

    pub fn build(h: usize, w: usize, offsets: &[NeighborOffset], clamp: ClampPolicy) -> Self {
        assert!(h >= 1 && w >= 1, "grid must be non-empty");
        assert!(!offsets.is_empty(), "candidate list must be non-empty");
        let m = offsets.len();
        let mut idx = Vec::with_capacity(h * w * m);
        for i in 0..h as i64 {
            for j in 0..w as i64 {
                for o in offsets {
                    let (fi, tj) = (i + o.dfreq() as i64, j + o.dtime() as i64);
                    let inside = (0..h as i64).contains(&fi) && (0..w as i64).contains(&tj);
                    let id = match (inside, clamp) {
                        (false, ClampPolicy::MaskOut) => Self::MASKED,
                        _ => {
                            let fi = fi.clamp(0, h as i64 - 1);
                            let tj = tj.clamp(0, w as i64 - 1);
                            (fi * w as i64 + tj) as u32
                        }
                    };
                    idx.push(id);
                }
            }
        }
        Self { h, w, m, idx }
    }

    pub fn n(&self) -> usize {
        self.h * self.w
    }

    /// Candidates of patch `p`; masked entries are [`Self::MASKED`].
    pub fn of(&self, p: usize) -> &[u32] {
        &self.idx[p * self.m..(p + 1) * self.m]
    }
}

fn check_grid<T: Scalar>(x: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [b, h, w, d] if h >= 1 && w >= 1 && d >= 1 => Ok((b, h, w, d)),
        _ => Err(Error::Shape(format!(
            "{what}: expected non-empty [b, h, w, d], got {:?}",
            x.shape()
        ))),
    }
}

/// Gathers each patch's candidates: `[b, h, w, d] -> [b, h, w, m, d]`.
///
/// Masked candidates (only with [`ClampPolicy::MaskOut`]) are zero rows.
pub fn gather_neighbors<T: Scalar>(
    x: &Tensor<T>,
    offsets: &[NeighborOffset],
    clamp: ClampPolicy,
) -> Result<Tensor<T>> {
    let (b, h, w, d) = check_grid(x, "gather_neighbors")?;
    if offsets.is_empty() {
        return Err(Error::InvalidArgument("empty neighbor set".into()));
    }
    let index = CandidateIndex::build(h, w, offsets, clamp);
    let m = index.m;
    let n = h * w;
    let mut out = vec![T::zero(); b * n * m * d];
    for bi in 0..b {
        let src = &x.data()[bi * n * d..(bi + 1) * n * d];
        for p in 0..n {
            for (c, &id) in index.of(p).iter().enumerate() {
                if id == CandidateIndex::MASKED {
                    continue;
                }
                let id = id as usize;
                let dst = ((bi * n + p) * m + c) * d;
                out[dst..dst + d].copy_from_slice(&src[id * d..(id + 1) * d]);
            }
        }
    }
    Tensor::new(vec![b, h, w, m, d], out)
}

/// Forward pass of single-query attention over gathered candidates for one
/// grid. `q`, `k`, `v` are `[n, d]`; returns the output and the softmax
/// weights `[n, heads, m]` (zero for masked candidates).
pub fn local_attention_forward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    d: usize,
    heads: usize,
    index: &CandidateIndex,
) -> (Vec<T>, Vec<T>) {
    let n = index.n();
    let m = index.m;
    assert_eq!(q.len(), n * d, "local attention query shape");
    assert_eq!(k.len(), n * d, "local attention key shape");
    assert_eq!(v.len(), n * d, "local attention value shape");
    assert!(heads >= 1 && d % heads == 0, "d must divide into heads");
    let dh = d / heads;
    let scale = T::one() / T::of_usize(dh).sqrt();
    let mut out = vec![T::zero(); n * d];
    let mut probs = vec![T::zero(); n * heads * m];
    let mut scores = vec![T::zero(); m];
    for p in 0..n {
        let cands = index.of(p);
        for hd in 0..heads {
            let off = hd * dh;
            let qrow = &q[p * d + off..p * d + off + dh];
            let mut max = T::neg_infinity();
            for (c, &id) in cands.iter().enumerate() {
                if id == CandidateIndex::MASKED {
                    continue;
                }
                let id = id as usize;
                let s = dot(qrow, &k[id * d + off..id * d + off + dh]) * scale;
                scores[c] = s;
                max = max.max(s);
            }
            let pr = &mut probs[(p * heads + hd) * m..(p * heads + hd + 1) * m];
            let mut sum = T::zero();
            for (c, &id) in cands.iter().enumerate() {
                if id != CandidateIndex::MASKED {
                    let e = (scores[c] - max).exp();
                    pr[c] = e;
                    sum += e;
                }
            }
            let orow = &mut out[p * d + off..p * d + off + dh];
            for (c, &id) in cands.iter().enumerate() {
                if id == CandidateIndex::MASKED {
                    continue;
                }
                pr[c] /= sum;
                let id = id as usize;
                axpy(pr[c], &v[id * d + off..id * d + off + dh], orow);
            }
        }
    }
    (out, probs)
}

/// Gradients of [`local_attention_forward`] with respect to `q`, `k`, `v`.
#[allow(clippy::too_many_arguments)]
pub fn local_attention_backward<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    d: usize,
    heads: usize,
    index: &CandidateIndex,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = index.n();
    let m = index.m;
    let dh = d / heads;
    let scale = T::one() / T::of_usize(dh).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); m];
    for p in 0..n {
        let cands = index.of(p);
        for hd in 0..heads {
            let off = hd * dh;
            let pr = &probs[(p * heads + hd) * m..(p * heads + hd + 1) * m];
            let go = &dout[p * d + off..p * d + off + dh];
            let mut inner = T::zero();
            for (c, &id) in cands.iter().enumerate() {
                if id == CandidateIndex::MASKED {
                    continue;
                }
                let id = id as usize;
                dp[c] = dot(go, &v[id * d + off..id * d + off + dh]);
                inner += dp[c] * pr[c];
                axpy(pr[c], go, &mut dv[id * d + off..id * d + off + dh]);
            }
            for (c, &id) in cands.iter().enumerate() {
                if id == CandidateIndex::MASKED {
                    continue;
                }
                let id = id as usize;
                let ds = pr[c] * (dp[c] - inner) * scale;
                axpy(
                    ds,
                    &k[id * d + off..id * d + off + dh],
                    &mut dq[p * d + off..p * d + off + dh],
                );
                axpy(
                    ds,
                    &q[p * d + off..p * d + off + dh],
                    &mut dk[id * d + off..id * d + off + dh],
                );
            }
        }
    }
    (dq, dk, dv)
}

fn check_qkv<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(usize, usize, usize, usize)> {
    let dims = check_grid(q, "query")?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(Error::Shape(format!(
            "q/k/v shapes differ: {:?} {:?} {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    check_finite(q.data())?;
    check_finite(k.data())?;
    check_finite(v.data())?;
    Ok(dims)
}

/// Single-head directional attention over `[b, h, w, d]` grids.
pub fn directional_attention<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    offsets: &[NeighborOffset],
    clamp: ClampPolicy,
) -> Result<Tensor<T>> {
    let (b, h, w, d) = check_qkv(q, k, v)?;
    if offsets.is_empty() {
        return Err(Error::InvalidArgument("empty neighbor set".into()));
    }
    let index = CandidateIndex::build(h, w, offsets, clamp);
    let stride = h * w * d;
    let mut out = Vec::with_capacity(b * stride);
    for bi in 0..b {
        let r = bi * stride..(bi + 1) * stride;
        let (o, _) = local_attention_forward(
            &q.data()[r.clone()],
            &k.data()[r.clone()],
            &v.data()[r],
            d,
            1,
            &index,
        );
        out.extend(o);
    }
    Tensor::new(vec![b, h, w, d], out)
}

/// Reference implementation: full `hw × hw` attention where each key carries
/// a multiplicity equal to the number of times the candidate list reaches it
/// (zero outside the neighbourhood). Clamping is recomputed here rather than
/// shared with [`CandidateIndex`].
pub fn dense_masked_oracle<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    offsets: &[NeighborOffset],
    clamp: ClampPolicy,
) -> Result<Tensor<T>> {
    let (b, h, w, d) = check_qkv(q, k, v)?;
    let n = h * w;
    let mut mult = vec![0u32; n * n];
    for i in 0..h {
        for j in 0..w {
            for o in offsets {
                let fi = i as i64 + o.dfreq() as i64;
                let tj = j as i64 + o.dtime() as i64;
                let off_grid = fi < 0 || tj < 0 || fi >= h as i64 || tj >= w as i64;
                if off_grid && clamp == ClampPolicy::MaskOut {
                    continue;
                }
                let fi = fi.max(0).min(h as i64 - 1) as usize;
                let tj = tj.max(0).min(w as i64 - 1) as usize;
                mult[(i * w + j) * n + fi * w + tj] += 1;
            }
        }
    }
    let scale = T::one() / T::of_usize(d).sqrt();
    let mut out = vec![T::zero(); b * n * d];
    for bi in 0..b {
        let base = bi * n * d;
        let row = |t: &Tensor<T>, r: usize| -> Vec<T> {
            t.data()[base + r * d..base + (r + 1) * d].to_vec()
        };
        for qi in 0..n {
            let qv = row(q, qi);
            let logits: Vec<Option<T>> = (0..n)
                .map(|kj| {
                    (mult[qi * n + kj] > 0).then(|| {
                        qv.iter()
                            .zip(row(k, kj))
                            .fold(T::zero(), |s, (&a, b)| s + a * b)
                            * scale
                    })
                })
                .collect();
            let max = logits
                .iter()
                .flatten()
                .fold(T::neg_infinity(), |m, &s| m.max(s));
            let weights: Vec<T> = logits
                .iter()
                .enumerate()
                .map(|(kj, s)| match s {
                    Some(s) => T::of_usize(mult[qi * n + kj] as usize) * (*s - max).exp(),
                    None => T::zero(),
                })
                .collect();
            let total = weights.iter().fold(T::zero(), |s, &x| s + x);
            for (kj, &wt) in weights.iter().enumerate() {
                if wt == T::zero() {
                    continue;
                }
                let vv = row(v, kj);
                for c in 0..d {
                    out[base + qi * d + c] += wt / total * vv[c];
                }
            }
        }
    }
    Tensor::new(vec![b, h, w, d], out)
}

/// Relative positions reachable through `depth` stacked applications,
/// ignoring grid boundaries (the `depth`-fold Minkowski sum of the offsets).
pub fn receptive_field(offsets: &[NeighborOffset], depth: usize) -> BTreeSet<(i32, i32)> {
    assert!(depth >= 1, "depth must be at least 1");
    let base: BTreeSet<(i32, i32)> = offsets.iter().map(|o| o.delta()).collect();
    let mut field = base.clone();
    for _ in 1..depth {
        field = field
            .iter()
            .flat_map(|&(f, t)| base.iter().map(move |&(df, dt)| (f + df, t + dt)))
            .collect();
    }
    field
}

/// Grid cells that can influence output cell `(i, j)` after `depth` stacked
/// applications on an `h × w` grid, following clamping aliases.
pub fn clamped_dependency(
    offsets: &[NeighborOffset],
    depth: usize,
    h: usize,
    w: usize,
    i: usize,
    j: usize,
    clamp: ClampPolicy,
) -> BTreeSet<(usize, usize)> {
    let mut reach = BTreeSet::from([(i, j)]);
    for _ in 0..depth {
        let mut next = BTreeSet::new();
        for &(fi, tj) in &reach {
            for o in offsets {
                let f = fi as i64 + o.dfreq() as i64;
                let t = tj as i64 + o.dtime() as i64;
                let inside = f >= 0 && t >= 0 && f < h as i64 && t < w as i64;
                if !inside && clamp == ClampPolicy::MaskOut {
                    continue;
                }
                next.insert((
                    f.clamp(0, h as i64 - 1) as usize,
                    t.clamp(0, w as i64 - 1) as usize,
                ));
            }
        }
        reach = next;
    }
    reach
}

/// Closed-form multiply-add count of one directional attention forward and
/// backward pass: `12 · n · m · d`.
pub fn directional_flops(n: usize, m: usize, d: usize) -> u64 {
    12 * (n * m * d) as u64
}

/// Closed-form count for full attention over `n` patches: `12 · n² · d`.
pub fn dense_flops(n: usize, d: usize) -> u64 {
    12 * (n as u64) * (n as u64) * d as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid2x2() -> Tensor<f32> {
        // rows are frequency (row 0 lowest), columns time; scalar features a..d
        Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f32> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn names_round_trip_through_deltas() {
        for o in NeighborOffset::ALL {
            assert_eq!(NeighborOffset::from_delta(o.dfreq(), o.dtime()), Some(o));
            assert_eq!(o.name().parse::<NeighborOffset>().unwrap(), o);
        }
        assert_eq!(NeighborOffset::PH.delta(), (1, -1));
        assert_eq!(NeighborOffset::NL.delta(), (-1, 1));
    }

    #[test]
    fn set_parsing_is_canonical() {
        let s: NeighborSet = "pl, l ,p".parse().unwrap();
        assert_eq!(s, NeighborSet::directional());
        assert_eq!(s.to_string(), "p,l,pl");
        assert_eq!(s.offsets()[0], NeighborOffset::SelfPatch);
        assert!("p,q".parse::<NeighborSet>().is_err());
        assert_eq!("".parse::<NeighborSet>().unwrap(), NeighborSet::self_only());
        assert!(!NeighborSet::directional().has_future());
        assert!("n,nh".parse::<NeighborSet>().unwrap().has_future());
    }

    #[test]
    fn gather_interior_corner() {
        let g = gather_neighbors(&grid2x2(), NeighborSet::directional().offsets(), ClampPolicy::Clamp)
            .unwrap();
        assert_eq!(g.shape(), &[1, 2, 2, 4, 1]);
        // position (1,1): self d, p c, l b, pl a
        assert_eq!(&g.data()[12..16], &[4.0, 3.0, 2.0, 1.0]);
        // position (0,0): every offset clamps onto a
        assert_eq!(&g.data()[0..4], &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn gather_self_only_is_identity() {
        let x = grid2x2();
        let g = gather_neighbors(&x, NeighborSet::self_only().offsets(), ClampPolicy::Clamp).unwrap();
        assert_eq!(g.data(), x.data());
        assert_eq!(g.shape(), &[1, 2, 2, 1, 1]);
    }

    #[test]
    fn literal_listing_matches_concat_construction() {
        // Rebuild the padded tensor of the listing and slice it directly.
        let (h, w) = (3usize, 4usize);
        let x: Vec<f32> = (0..h * w).map(|v| v as f32).collect();
        // cat_x[r][c] = x[min(r, h-1)][max(c-1, 0)], shape (h+1, w+1)
        let cat = |r: usize, c: usize| x[r.min(h - 1) * w + c.saturating_sub(1)];
        let t = Tensor::new(vec![1, h, w, 1], x.clone()).unwrap();
        let g = gather_neighbors(&t, &literal_listing_offsets(), ClampPolicy::Clamp).unwrap();
        for i in 0..h {
            for j in 0..w {
                let want = [x[i * w + j], cat(i, j), cat(i + 1, j), cat(i, j + 1)];
                let at = (i * w + j) * 4;
                assert_eq!(&g.data()[at..at + 4], &want, "({i},{j})");
            }
        }
    }

    #[test]
    fn uniform_keys_give_mean_of_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = random(&[1, 3, 3, 4], &mut rng);
        let k = Tensor::full(&[1, 3, 3, 4], 0.3f32);
        let v = random(&[1, 3, 3, 4], &mut rng);
        let set = NeighborSet::directional();
        let out = directional_attention(&q, &k, &v, set.offsets(), ClampPolicy::Clamp).unwrap();
        let g = gather_neighbors(&v, set.offsets(), ClampPolicy::Clamp).unwrap();
        for p in 0..9 {
            for c in 0..4 {
                let mean: f32 = (0..4).map(|m| g.data()[(p * 4 + m) * 4 + c]).sum::<f32>() / 4.0;
                assert!((out.data()[p * 4 + c] - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn singleton_set_returns_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random(&[2, 3, 2, 4], &mut rng);
        let k = random(&[2, 3, 2, 4], &mut rng);
        let v = random(&[2, 3, 2, 4], &mut rng);
        let out = directional_attention(&q, &k, &v, NeighborSet::self_only().offsets(), ClampPolicy::Clamp)
            .unwrap();
        assert_eq!(out, v);
        let oracle =
            dense_masked_oracle(&q, &k, &v, NeighborSet::self_only().offsets(), ClampPolicy::Clamp).unwrap();
        assert!(oracle.max_abs_diff(&v) < 1e-6);
    }

    #[test]
    fn oracle_matches_kernel_on_random_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for clamp in [ClampPolicy::Clamp, ClampPolicy::MaskOut] {
            let q = random(&[1, 3, 3, 4], &mut rng);
            let k = random(&[1, 3, 3, 4], &mut rng);
            let v = random(&[1, 3, 3, 4], &mut rng);
            let set = NeighborSet::directional();
            let a = directional_attention(&q, &k, &v, set.offsets(), clamp).unwrap();
            let b = dense_masked_oracle(&q, &k, &v, set.offsets(), clamp).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-5);
        }
    }

    #[test]
    fn clamped_duplicates_carry_extra_mass() {
        // With {self, p, l}, cell (0,1) reaches itself twice (l clamps onto
        // self) and (0,0) once; masking keeps a single copy of each.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let q = random(&[1, 2, 3, 4], &mut rng);
        let k = random(&[1, 2, 3, 4], &mut rng);
        let v = random(&[1, 2, 3, 4], &mut rng);
        let set: NeighborSet = "p,l".parse().unwrap();
        let dup = dense_masked_oracle(&q, &k, &v, set.offsets(), ClampPolicy::Clamp).unwrap();
        let dedup = dense_masked_oracle(&q, &k, &v, set.offsets(), ClampPolicy::MaskOut).unwrap();
        let p = 1;
        let diff: f32 = (0..4)
            .map(|c| (dup.data()[p * 4 + c] - dedup.data()[p * 4 + c]).abs())
            .sum();
        assert!(diff > 1e-4, "duplicate mass should change the output");
        // interior-most cell (1,1): no clamping, identical
        let p = 4;
        for c in 0..4 {
            assert!((dup.data()[p * 4 + c] - dedup.data()[p * 4 + c]).abs() < 1e-6);
        }
    }

    #[test]
    fn receptive_field_enumeration() {
        let set = NeighborSet::directional();
        let one = receptive_field(set.offsets(), 1);
        assert_eq!(one, BTreeSet::from([(0, 0), (0, -1), (-1, 0), (-1, -1)]));
        let two = receptive_field(set.offsets(), 2);
        let want: BTreeSet<_> = (-2..=0).flat_map(|f| (-2..=0).map(move |t| (f, t))).collect();
        assert_eq!(two, want);
        assert_eq!(
            receptive_field(NeighborSet::self_only().offsets(), 5),
            BTreeSet::from([(0, 0)])
        );
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, d, heads) = (6usize, 4usize, 2usize);
        let index = CandidateIndex::build(2, 3, NeighborSet::directional().offsets(), ClampPolicy::Clamp);
        let gen = |rng: &mut ChaCha8Rng| (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (q, k, v, r) = (gen(&mut rng), gen(&mut rng), gen(&mut rng), gen(&mut rng));
        let loss = |q: &[f64], k: &[f64], v: &[f64]| {
            let (o, _) = local_attention_forward(q, k, v, d, heads, &index);
            o.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, probs) = local_attention_forward(&q, &k, &v, d, heads, &index);
        let (dq, dk, dv) = local_attention_backward(&q, &k, &v, &probs, &r, d, heads, &index);
        let eps = 1e-6;
        for (which, grad) in [(0, &dq), (1, &dk), (2, &dv)] {
            for i in 0..n * d {
                let mut args = [q.clone(), k.clone(), v.clone()];
                args[which][i] += eps;
                let up = loss(&args[0], &args[1], &args[2]);
                args[which][i] -= 2.0 * eps;
                let down = loss(&args[0], &args[1], &args[2]);
                let fd = (up - down) / (2.0 * eps);
                assert!((fd - grad[i]).abs() < 1e-7, "arg {which} idx {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let mut q = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        q.data_mut()[3] = f32::NAN;
        let k = Tensor::zeros(&[1, 2, 2, 2]);
        let err = directional_attention(&q, &k, &k, NeighborSet::directional().offsets(), ClampPolicy::Clamp);
        assert!(matches!(err, Err(Error::NonFinite { index: 3, .. })));
    }
}
