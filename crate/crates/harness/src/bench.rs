//! Attention kernel scaling and full training-step timing.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use anyhow::{bail, Result};
use dpi_core::directional::{
    dense_flops, directional_flops, local_attention_backward, local_attention_forward, CandidateIndex, ClampPolicy,
    NeighborOffset,
};
use dpi_core::kernels::{attention_backward, attention_forward};
use dpi_core::model::{ModelConfig, Trainer};
use dpi_core::params::AdamConfig;
use dpi_core::spectro_io::{MelSpectrogram, SyntheticUtterance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Shortest measured interval trusted as a single timing.
pub const MIN_TIMED: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Directional,
    Dense,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Directional => "directional",
            Mode::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub h: usize,
    pub w: usize,
    pub mode: Mode,
    /// Median seconds per forward + backward.
    pub seconds: f64,
    pub flops: u64,
    /// Kernel invocations per timed sample (above 1 when the timer needed a
    /// longer run).
    pub inner: usize,
}

pub fn parse_grids(spec: &str) -> Result<Vec<(usize, usize)>> {
    spec.split(',')
        .map(|g| {
            let (h, w) = g
                .trim()
                .split_once('x')
                .ok_or_else(|| anyhow::anyhow!("grid `{g}` must look like HxW"))?;
            let (h, w): (usize, usize) = (h.parse()?, w.parse()?);
            if h == 0 || w == 0 {
                bail!("grid `{g}` must be at least 1x1");
            }
            Ok((h, w))
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median seconds per call of `f`, doubling the inner loop until a sample
/// spans at least [`MIN_TIMED`].
pub fn time_median(repeats: usize, mut f: impl FnMut()) -> (f64, usize) {
    f();
    let mut inner = 1usize;
    loop {
        let start = Instant::now();
        for _ in 0..inner {
            f();
        }
        if start.elapsed() >= MIN_TIMED || inner >= 1 << 20 {
            break;
        }
        inner *= 2;
    }
    let samples = (0..repeats.max(1))
        .map(|_| {
            let start = Instant::now();
            for _ in 0..inner {
                f();
            }
            start.elapsed().as_secs_f64() / inner as f64
        })
        .collect();
    (median(samples), inner)
}

/// Times one attention forward + backward over an `h × w` patch grid.
pub fn bench_kernel(h: usize, w: usize, d: usize, mode: Mode, offsets: &[NeighborOffset], repeats: usize, seed: u64) -> BenchRecord {
    let n = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut r = || -> Vec<f32> { (0..n * d).map(|_| rng.sample(StandardNormal)).collect() };
    let (q, k, v, dout) = (r(), r(), r(), r());
    let (seconds, inner) = match mode {
        Mode::Directional => {
            let index = CandidateIndex::build(h, w, offsets, ClampPolicy::Clamp);
            time_median(repeats, || {
                let (out, probs) = local_attention_forward(&q, &k, &v, d, 1, &index);
                let grads = local_attention_backward(&q, &k, &v, &probs, &dout, d, 1, &index);
                black_box((out, grads));
            })
        }
        Mode::Dense => time_median(repeats, || {
            let (out, probs) = attention_forward(&q, &k, &v, n, n, d, 1, None);
            let grads = attention_backward(&q, &k, &v, &probs, &dout, n, n, d, 1);
            black_box((out, grads));
        }),
    };
    let flops = match mode {
        Mode::Directional => directional_flops(n, offsets.len(), d),
        Mode::Dense => dense_flops(n, d),
    };
    BenchRecord {
        h,
        w,
        mode,
        seconds,
        flops,
        inner,
    }
}

/// Least-squares slope of `ln seconds` against `ln (h·w)`.
pub fn loglog_slope(records: &[&BenchRecord]) -> f64 {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (((r.h * r.w) as f64).ln(), r.seconds.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

pub struct KernelBench {
    pub records: Vec<BenchRecord>,
    pub slope_directional: f64,
    pub slope_dense: f64,
}

pub fn run_kernel_bench(grids: &[(usize, usize)], d: usize, offsets: &[NeighborOffset], repeats: usize, seed: u64) -> KernelBench {
    let mut records = Vec::new();
    for &(h, w) in grids {
        for mode in [Mode::Directional, Mode::Dense] {
            records.push(bench_kernel(h, w, d, mode, offsets, repeats, seed));
        }
    }
    let slope = |m: Mode| {
        let rs: Vec<&BenchRecord> = records.iter().filter(|r| r.mode == m).collect();
        if rs.len() < 2 {
            f64::NAN
        } else {
            loglog_slope(&rs)
        }
    };
    KernelBench {
        slope_directional: slope(Mode::Directional),
        slope_dense: slope(Mode::Dense),
        records,
    }
}

impl KernelBench {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,w,hw,mode,seconds,flops,inner_loops\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{:.9},{},{}", r.h, r.w, r.h * r.w, r.mode.name(), r.seconds, r.flops, r.inner);
        }
        let _ = writeln!(s, "# slope directional = {:.4}", self.slope_directional);
        let _ = writeln!(s, "# slope dense = {:.4}", self.slope_dense);
        s
    }
}

/// One utterance whose mel spans exactly an `h × w` patch grid.
pub fn grid_utterance(cfg: &ModelConfig, w: usize, seed: u64) -> Result<SyntheticUtterance> {
    let frames = w * cfg.decoder.patch_size;
    let bins = cfg.decoder.bins;
    let dur = 4;
    let mut durations = vec![dur; frames / dur];
    if frames % dur != 0 {
        durations.push(frames % dur);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens: Vec<usize> = durations.iter().map(|_| rng.gen_range(0..cfg.encoder.vocab)).collect();
    let values: Vec<f32> = (0..bins * frames).map(|_| rng.sample(StandardNormal)).collect();
    let mel = MelSpectrogram::new("bench", bins, frames, values)?;
    Ok(SyntheticUtterance {
        tokens,
        durations,
        mel,
        style_id: 0,
    })
}

/// Median seconds of one complete training step (batch 1) on a `w`-column
/// utterance, for the given model configuration.
pub fn bench_train_step(cfg: &ModelConfig, w: usize, repeats: usize, seed: u64) -> Result<f64> {
    let corpus = vec![grid_utterance(cfg, w, seed)?];
    let mut trainer = Trainer::new(cfg.clone(), AdamConfig::default(), 1, seed)?;
    let mut step = 0;
    let mut failure = None;
    let (secs, _) = time_median(repeats, || {
        step += 1;
        if let Err(e) = trainer.step(&corpus, step) {
            failure.get_or_insert(e);
        }
    });
    if let Some(e) = failure {
        return Err(e.into());
    }
    Ok(secs)
}

/// `(directional, dense-control)` training-step seconds at `w` columns.
pub fn step_comparison(cfg: &ModelConfig, w: usize, repeats: usize, seed: u64) -> Result<(f64, f64)> {
    let directional = bench_train_step(cfg, w, repeats, seed)?;
    let mut dense = cfg.clone();
    dense.decoder.dense_control = true;
    let dense = bench_train_step(&dense, w, repeats, seed)?;
    Ok((directional, dense))
}
