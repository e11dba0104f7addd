//! Mel spectrogram data model, the `DPIT` tensor file format and the
//! synthetic training corpus.
//!
//! Tensor file layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes   "DPIT"
//! version u32       1
//! ndim    u32
//! dims    ndim × u64
//! payload product(dims) × f32, row-major
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_finite, Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DPIT";
pub const VERSION: u32 = 1;
pub const DEFAULT_BINS: usize = 80;
pub const INDEX_FILE: &str = "index.tsv";

/// Log-mel energies, `bins × frames`, row 0 the lowest frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub id: String,
    bins: usize,
    frames: usize,
    values: Vec<f32>,
}

impl MelSpectrogram {
    pub fn new(id: impl Into<String>, bins: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if bins == 0 || frames == 0 {
            return Err(Error::InvalidArgument(format!(
                "mel must be non-empty, got {bins}×{frames}"
            )));
        }
        if values.len() != bins * frames {
            return Err(Error::Shape(format!(
                "mel {bins}×{frames} needs {} values, got {}",
                bins * frames,
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self {
            id: id.into(),
            bins,
            frames,
            values,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn at(&self, bin: usize, frame: usize) -> f32 {
        self.values[bin * self.frames + frame]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(vec![self.bins, self.frames], self.values.clone()).expect("mel shape")
    }

    pub fn from_tensor(id: impl Into<String>, t: &Tensor<f32>) -> Result<Self> {
        match *t.shape() {
            [bins, frames] => Self::new(id, bins, frames, t.data().to_vec()),
            _ => Err(Error::Shape(format!("mel tensor must be 2-D, got {:?}", t.shape()))),
        }
    }
}

/// Serialises a tensor into the `DPIT` byte layout.
pub fn encode_tensor(dims: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let numel: usize = dims.iter().product();
    if numel != data.len() {
        return Err(Error::Shape(format!(
            "dims {dims:?} hold {numel} values, got {}",
            data.len()
        )));
    }
    check_finite(data)?;
    let mut out = Vec::with_capacity(12 + 8 * dims.len() + 4 * data.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses the `DPIT` byte layout.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>)> {
    let truncated = |expected: usize| Error::Truncated {
        expected: expected as u64,
        found: bytes.len() as u64,
    };
    if bytes.len() < 4 {
        return Err(truncated(12));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    if bytes.len() < 12 {
        return Err(truncated(12));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let ndim = u32_at(8) as usize;
    let header = 12 + 8 * ndim;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let at = 12 + 8 * i;
            u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes")) as usize
        })
        .collect();
    let numel = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Parse(format!("dims {dims:?} overflow")))?;
    let total = header + 4 * numel;
    if bytes.len() < total {
        return Err(truncated(total));
    }
    if bytes.len() > total {
        return Err(Error::TrailingBytes {
            expected: total as u64,
            found: bytes.len() as u64,
        });
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((dims, data))
}

pub fn save_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let bytes = encode_tensor(dims, data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Token sequence, per-token durations and the matching mel.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUtterance {
    pub tokens: Vec<usize>,
    pub durations: Vec<usize>,
    pub mel: MelSpectrogram,
    pub style_id: usize,
}

impl SyntheticUtterance {
    pub fn id(&self) -> &str {
        &self.mel.id
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.len() != self.durations.len() {
            return Err(Error::Shape(format!(
                "{}: {} tokens but {} durations",
                self.id(),
                self.tokens.len(),
                self.durations.len()
            )));
        }
        if self.durations.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("{}: zero duration", self.id())));
        }
        let total: usize = self.durations.iter().sum();
        if total != self.mel.frames() {
            return Err(Error::Shape(format!(
                "{}: durations sum to {total}, mel has {} frames",
                self.id(),
                self.mel.frames()
            )));
        }
        Ok(())
    }
}

/// Parameters of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusParams {
    pub seed: u64,
    pub n_utts: usize,
    pub vocab: usize,
    pub bins: usize,
    pub max_tokens: usize,
    pub speakers: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            seed: 7,
            n_utts: 200,
            vocab: 32,
            bins: DEFAULT_BINS,
            max_tokens: 12,
            speakers: 4,
        }
    }
}

pub const MIN_DURATION: usize = 1;
pub const MAX_DURATION: usize = 5;
const NOISE_STD: f64 = 0.05;

/// Fundamental position (in bins) of a token for a speaker. Speakers scale
/// every fundamental by a distinct factor.
fn fundamental(token: usize, speaker: usize, bins: usize) -> f64 {
    let lo = 2.0 + 0.02 * bins as f64;
    let span = 0.2 * bins as f64;
    let base = lo + span * (((token * 7) % 16) as f64 / 15.0);
    base * (1.0 + 0.12 * speaker as f64)
}

/// Deterministic harmonic-stack corpus. Each token renders a stack of
/// Gaussian ridges at multiples of a token-specific fundamental, with a
/// token-specific spectral tilt and a short onset ramp, plus seeded noise.
pub fn generate_corpus(params: &CorpusParams) -> Result<Vec<SyntheticUtterance>> {
    let CorpusParams {
        seed,
        n_utts,
        vocab,
        bins,
        max_tokens,
        speakers,
    } = *params;
    for (name, v) in [
        ("n_utts", n_utts),
        ("vocab", vocab),
        ("bins", bins),
        ("max_tokens", max_tokens),
        ("speakers", speakers),
    ] {
        if v == 0 {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut corpus = Vec::with_capacity(n_utts);
    for u in 0..n_utts {
        let len = rng.gen_range(1..=max_tokens);
        let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
        let durations: Vec<usize> = (0..len)
            .map(|_| rng.gen_range(MIN_DURATION..=MAX_DURATION))
            .collect();
        let style_id = rng.gen_range(0..speakers);
        let frames: usize = durations.iter().sum();
        let mut values = vec![0f32; bins * frames];
        let mut t0 = 0;
        for (&tok, &dur) in tokens.iter().zip(&durations) {
            let f0 = fundamental(tok, style_id, bins);
            let tilt = 0.5 + 0.45 * ((tok * 5 % 9) as f64 / 8.0);
            let width = 1.2;
            for t in t0..t0 + dur {
                let onset = if t == t0 { 0.6 } else { 1.0 };
                for f in 0..bins {
                    let mut e = 0.0;
                    let mut h = 1.0;
                    while h * f0 < bins as f64 + 3.0 * width {
                        let z = (f as f64 - h * f0) / width;
                        e += tilt.powf(h - 1.0) * (-0.5 * z * z).exp();
                        h += 1.0;
                    }
                    let noise: f64 = rng.sample(StandardNormal);
                    let v = -0.6 + 1.4 * onset * e + NOISE_STD * noise;
                    values[f * frames + t] = v as f32;
                }
            }
            t0 += dur;
        }
        let mel = MelSpectrogram::new(format!("utt{u:05}"), bins, frames, values)?;
        corpus.push(SyntheticUtterance {
            tokens,
            durations,
            mel,
            style_id,
        });
    }
    Ok(corpus)
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn split_counts(field: &str, what: &str, line: usize) -> Result<Vec<usize>> {
    field
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Parse(format!("index line {line}: bad {what} entry {s:?}")))
        })
        .collect()
}

/// Writes `<id>.dpit` per utterance plus the tab-separated index.
pub fn write_corpus(dir: &Path, corpus: &[SyntheticUtterance]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    for utt in corpus {
        let t = utt.mel.to_tensor();
        save_tensor(&mel_path(dir, utt.id()), t.shape(), t.data())?;
        writeln!(
            index,
            "{}\t{}\t{}\t{}",
            utt.id(),
            utt.style_id,
            join(&utt.tokens),
            join(&utt.durations)
        )
        .expect("string write");
    }
    let path = dir.join(INDEX_FILE);
    fs::write(&path, index).map_err(|e| Error::io(&path, e))
}

pub fn mel_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.dpit"))
}

/// One index row: `(id, style_id, tokens, durations)`.
pub type IndexEntry = (String, usize, Vec<usize>, Vec<usize>);

pub fn read_index(dir: &Path) -> Result<Vec<IndexEntry>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split('\t').collect();
            let [id, style, tokens, durations] = fields[..] else {
                return Err(Error::Parse(format!(
                    "index line {}: expected 4 tab-separated fields",
                    i + 1
                )));
            };
            let style = style
                .parse()
                .map_err(|_| Error::Parse(format!("index line {}: bad style id", i + 1)))?;
            Ok((
                id.to_string(),
                style,
                split_counts(tokens, "token", i + 1)?,
                split_counts(durations, "duration", i + 1)?,
            ))
        })
        .collect()
}

pub fn read_corpus(dir: &Path) -> Result<Vec<SyntheticUtterance>> {
    read_index(dir)?
        .into_iter()
        .map(|(id, style_id, tokens, durations)| {
            let (dims, data) = load_tensor(&mel_path(dir, &id))?;
            let [bins, frames] = dims[..] else {
                return Err(Error::Shape(format!("{id}: mel must be 2-D, got {dims:?}")));
            };
            let utt = SyntheticUtterance {
                tokens,
                durations,
                mel: MelSpectrogram::new(id, bins, frames, data)?,
                style_id,
            };
            utt.validate()?;
            Ok(utt)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use proptest::collection;

    #[test]
    fn identity_layout() {
        let bytes = encode_tensor(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(&bytes[..4], b"DPIT");
        assert_eq!(bytes.len(), 4 + 4 + 4 + 2 * 8 + 16);
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(&bytes[28..32], &1.0f32.to_le_bytes());
        let (dims, data) = decode_tensor(&bytes).unwrap();
        assert_eq!(dims, vec![2, 2]);
        assert_eq!(data, vec![1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_tensor_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.dpit");
        save_tensor(&p, &[0], &[]).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), (vec![0], vec![]));
    }

    #[test]
    fn decode_errors_are_distinct() {
        let good = encode_tensor(&[2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_tensor(&bad), Err(Error::BadMagic { found }) if &found == b"XXXX"));

        let short = &good[..good.len() - 4];
        assert!(matches!(
            decode_tensor(short),
            Err(Error::Truncated { expected: 44, found: 40 })
        ));

        let mut ver = good.clone();
        ver[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_tensor(&ver), Err(Error::VersionMismatch { found: 7, .. })));

        let mut long = good;
        long.push(0);
        assert!(matches!(decode_tensor(&long), Err(Error::TrailingBytes { .. })));
    }

    #[test]
    fn non_finite_rejected_with_index() {
        let err = encode_tensor(&[3], &[0.0, f32::INFINITY, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn large_round_trip_is_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..80 * 140).map(|_| rng.sample(StandardNormal)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dpit");
        save_tensor(&p, &[80, 140], &data).unwrap();
        let (dims, back) = load_tensor(&p).unwrap();
        assert_eq!(dims, vec![80, 140]);
        assert!(data.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        let again = encode_tensor(&dims, &back).unwrap();
        assert_eq!(again, fs::read(&p).unwrap());
    }

    fn small_params(seed: u64) -> CorpusParams {
        CorpusParams {
            seed,
            n_utts: 3,
            vocab: 10,
            bins: 20,
            max_tokens: 6,
            speakers: 2,
        }
    }

    #[test]
    fn corpus_is_deterministic_and_seed_sensitive() {
        let a = generate_corpus(&small_params(7)).unwrap();
        let b = generate_corpus(&small_params(7)).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&small_params(8)).unwrap();
        assert_ne!(a, c);
        for utt in &a {
            utt.validate().unwrap();
            assert!(utt.durations.iter().all(|d| (1..=5).contains(d)));
            assert!(utt.mel.values().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn corpus_rejects_zero_counts() {
        let mut p = small_params(1);
        p.vocab = 0;
        assert!(generate_corpus(&p).is_err());
    }

    #[test]
    fn tokens_are_recoverable_from_mel() {
        // Frames of the same token and speaker correlate far better with each
        // other than with a different token's frames.
        let corpus = generate_corpus(&CorpusParams {
            n_utts: 40,
            ..small_params(3)
        })
        .unwrap();
        let mut frames: Vec<(usize, usize, Vec<f32>)> = Vec::new();
        for utt in &corpus {
            let mut t = 0;
            for (&tok, &d) in utt.tokens.iter().zip(&utt.durations) {
                let f = t + d - 1;
                let col = (0..utt.mel.bins()).map(|b| utt.mel.at(b, f)).collect();
                frames.push((tok, utt.style_id, col));
                t += d;
            }
        }
        let dist = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f32>();
        let mut hits = 0;
        let mut total = 0;
        for (i, (tok, spk, col)) in frames.iter().enumerate() {
            let nearest = frames
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .min_by(|a, b| dist(col, &a.1 .2).total_cmp(&dist(col, &b.1 .2)))
                .unwrap();
            let same_sound = fundamental(*tok, *spk, 20) == fundamental(nearest.1 .0, nearest.1 .1, 20);
            hits += same_sound as usize;
            total += 1;
        }
        assert!(hits as f64 / total as f64 > 0.9, "{hits}/{total}");
    }

    #[test]
    fn corpus_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate_corpus(&small_params(5)).unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        assert_eq!(read_corpus(dir.path()).unwrap(), corpus);
        let line = fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        let first = line.lines().next().unwrap();
        assert_eq!(first.split('\t').count(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn save_load_identity(dims in collection::vec(0usize..6, 0..4), seed in proptest::num::u64::ANY) {
            let n: usize = dims.iter().product();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
            let bytes = encode_tensor(&dims, &data).unwrap();
            let (d2, back) = decode_tensor(&bytes).unwrap();
            prop_assert_eq!(d2, dims);
            prop_assert!(data.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
