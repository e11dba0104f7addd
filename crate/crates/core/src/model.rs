//! Complete acoustic model: text encoder, duration predictor, style source
//! and diffusion decoder, plus a seeded training step and synthesis.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{gaussian, make_schedule, sample, training_loss, NoiseSchedule};
use crate::dit::{Decoder, DecoderConfig};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{Adam, AdamConfig, Bound, Init, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::spectro_io::SyntheticUtterance;
use crate::tensor::Tensor;
use crate::text::{durations_from_log, expansion_index, DurationPredictor, EncoderConfig, TextEncoder};

/// Where the style tokens come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StyleSource {
    /// Learned `S` tokens per speaker.
    #[default]
    Table,
    /// Pooled and projected reference mel.
    Reference,
}

impl StyleSource {
    pub fn name(self) -> &'static str {
        match self {
            StyleSource::Table => "table",
            StyleSource::Reference => "reference",
        }
    }
}

impl fmt::Display for StyleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StyleSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "table" => Ok(StyleSource::Table),
            "reference" => Ok(StyleSource::Reference),
            other => Err(Error::Parse(format!("unknown style source `{other}` (table|reference)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub style_source: StyleSource,
    pub style_tokens: usize,
    pub speakers: usize,
    pub dp_hidden: usize,
    pub diffusion_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
            style_source: StyleSource::Table,
            style_tokens: 4,
            speakers: 4,
            dp_hidden: 64,
            diffusion_steps: crate::diffusion::DEFAULT_STEPS,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        if self.decoder.cond_dim != self.encoder.d {
            return Err(Error::InvalidArgument(format!(
                "decoder cond_dim {} must equal encoder width {}",
                self.decoder.cond_dim, self.encoder.d
            )));
        }
        if self.style_tokens == 0 || self.speakers == 0 || self.dp_hidden == 0 || self.diffusion_steps == 0 {
            return Err(Error::InvalidArgument(
                "style_tokens, speakers, dp_hidden and diffusion_steps must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Splits a reference mel into `S` time segments, averages each and projects
/// the `bins`-wide means to `d`.
#[derive(Debug, Clone)]
pub struct ReferenceStyleEncoder {
    w: ParamId,
    b: ParamId,
    tokens: usize,
}

impl ReferenceStyleEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, prefix: &str, bins: usize, d: usize, tokens: usize) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), init.xavier(&[bins, d], bins, d)),
            b: store.add(format!("{prefix}.b"), init.zeros(&[d])),
            tokens,
        }
    }

    /// `mel: [bins, frames]` → `[S, d]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, mel: Var) -> Var {
        let frames = g.shape(mel)[1];
        let s = self.tokens;
        let mut pool = Tensor::zeros(&[s, frames]);
        for k in 0..s {
            let lo = k * frames / s;
            let hi = ((k + 1) * frames / s).max(lo + 1).min(frames);
            let lo = lo.min(hi - 1);
            let inv = T::one() / T::of_usize(hi - lo);
            for f in lo..hi {
                pool.data_mut()[k * frames + f] = inv;
            }
        }
        let pool = g.constant(pool);
        let mt = g.transpose(mel);
        let pooled = g.matmul(pool, mt);
        g.linear(pooled, p.var(self.w), p.var(self.b))
    }
}

#[derive(Debug, Clone)]
pub struct TtsModel {
    pub cfg: ModelConfig,
    pub encoder: TextEncoder,
    pub duration: DurationPredictor,
    pub style_table: Option<ParamId>,
    pub reference: Option<ReferenceStyleEncoder>,
    pub decoder: Decoder,
    pub schedule: NoiseSchedule,
}

/// Losses of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean ε-MSE over the batch.
    pub diffusion: f64,
    /// Mean log-duration MSE over the batch.
    pub duration: f64,
    pub grad_norm: f64,
}

/// One training example with its explicit diffusion draw.
#[derive(Debug, Clone)]
pub struct Draw<T> {
    pub utt: usize,
    pub t: usize,
    pub eps: Tensor<T>,
}

impl TtsModel {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.decoder.d;
        let encoder = TextEncoder::new(store, init, "enc", cfg.encoder.clone());
        let duration = DurationPredictor::new(store, init, "dp", cfg.encoder.d, cfg.dp_hidden);
        let (style_table, reference) = match cfg.style_source {
            StyleSource::Table => (
                Some(store.add("style.table", init.normal(&[cfg.speakers * cfg.style_tokens, d], 1.0))),
                None,
            ),
            StyleSource::Reference => (
                None,
                Some(ReferenceStyleEncoder::new(store, init, "style.ref", cfg.decoder.bins, d, cfg.style_tokens)),
            ),
        };
        let decoder = Decoder::new(store, init, "dec", cfg.decoder.clone())?;
        let schedule = make_schedule(cfg.diffusion_steps)?;
        Ok(Self {
            cfg,
            encoder,
            duration,
            style_table,
            reference,
            decoder,
            schedule,
        })
    }

    /// Style tokens `[S, d]` for a speaker, or from a reference mel.
    pub fn style<T: Scalar>(&self, g: &mut Graph<T>, p: &Bound, speaker: usize, reference: Option<&Tensor<T>>) -> Result<Var> {
        if let Some(table) = self.style_table {
            if speaker >= self.cfg.speakers {
                return Err(Error::InvalidArgument(format!(
                    "speaker {speaker} outside 0..{}",
                    self.cfg.speakers
                )));
            }
            let s = self.cfg.style_tokens;
            return Ok(g.gather_rows(p.var(table), (speaker * s..(speaker + 1) * s).collect()));
        }
        let enc = self.reference.as_ref().expect("reference encoder present");
        let mel = reference.ok_or_else(|| Error::InvalidArgument("reference style needs a reference mel".into()))?;
        let mel = g.constant(mel.clone());
        Ok(enc.forward(g, p, mel))
    }

    /// Adds one utterance's losses to the graph: `(ε-MSE, duration MSE)`.
    pub fn utterance_loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        utt: &SyntheticUtterance,
        x0: &Tensor<T>,
        t: usize,
        eps: &Tensor<T>,
    ) -> Result<(Var, Var)> {
        let tokens = &utt.tokens;
        let enc = self.encoder.forward(g, p, tokens)?;
        let dp_in = g.detach(enc);
        let log_d = self.duration.forward(g, p, dp_in);
        let dur_loss = DurationPredictor::loss(g, log_d, &utt.durations);
        let h_mel = g.gather_rows(enc, expansion_index(tokens.len(), &utt.durations)?);
        let style = self.style(g, p, utt.style_id, Some(x0))?;
        let diff = training_loss(g, x0, t, eps, &self.schedule, |g, noisy, t| {
            self.decoder.forward(g, p, noisy, h_mel, t, style)
        })?;
        Ok((diff, dur_loss))
    }

    /// Draws a batch: utterance indices, steps and noise, in that order per example.
    pub fn draw_batch<T: Scalar>(&self, corpus: &[SyntheticUtterance], batch: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Draw<T>>> {
        if corpus.is_empty() {
            return Err(Error::InvalidArgument("empty corpus".into()));
        }
        let ids: Vec<usize> = (0..corpus.len()).collect();
        (0..batch)
            .map(|_| {
                let utt = *ids.choose(rng).expect("non-empty");
                let t = rng.gen_range(1..=self.schedule.steps());
                let mel = &corpus[utt].mel;
                let eps = gaussian(&[mel.bins(), mel.frames()], rng);
                Ok(Draw { utt, t, eps })
            })
            .collect()
    }

    /// Builds the batch-mean loss graph. Returns `(total, ε-MSE sum, duration sum)`.
    pub fn batch_loss<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Bound,
        corpus: &[SyntheticUtterance],
        draws: &[Draw<T>],
    ) -> Result<(Var, f64, f64)> {
        let mut total: Option<Var> = None;
        let (mut diff_sum, mut dur_sum) = (0.0, 0.0);
        for d in draws {
            let utt = &corpus[d.utt];
            let x0 = utt.mel.to_tensor().cast::<T>();
            let (diff, dur) = self.utterance_loss(g, p, utt, &x0, d.t, &d.eps)?;
            diff_sum += g.scalar_value(diff).to_f64().unwrap_or(f64::NAN);
            dur_sum += g.scalar_value(dur).to_f64().unwrap_or(f64::NAN);
            let both = g.add(diff, dur);
            total = Some(match total {
                Some(acc) => g.add(acc, both),
                None => both,
            });
        }
        let total = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let mean = g.scale(total, T::one() / T::of_usize(draws.len()));
        Ok((mean, diff_sum, dur_sum))
    }

    /// Samples `[bins, Σ durations]` for a token sequence. Durations come from
    /// the predictor unless given.
    pub fn synthesize(
        &self,
        store: &ParamStore<f32>,
        tokens: &[usize],
        speaker: usize,
        reference: Option<&Tensor<f32>>,
        durations: Option<&[usize]>,
        seed: u64,
    ) -> Result<Tensor<f32>> {
        let mut g = Graph::new();
        let p = store.bind(&mut g);
        let enc = self.encoder.forward(&mut g, &p, tokens)?;
        let durations = match durations {
            Some(d) => d.to_vec(),
            None => {
                let log_d = self.duration.forward(&mut g, &p, enc);
                durations_from_log(g.value(log_d).data())
            }
        };
        let h_mel = g.value(enc).clone();
        let idx = expansion_index(tokens.len(), &durations)?;
        let h_mel = crate::text::length_regulate(&h_mel, &durations)?;
        debug_assert_eq!(h_mel.rows(), idx.len());
        let style = self.style(&mut g, &p, speaker, reference)?;
        let style = g.value(style).clone();
        let shape = [self.cfg.decoder.bins, idx.len()];
        sample(&shape, &self.schedule, seed, |x, t| {
            let mut g = Graph::new();
            let p = store.bind(&mut g);
            let (xv, cv, sv) = (g.constant(x.clone()), g.constant(h_mel.clone()), g.constant(style.clone()));
            let out = self.decoder.forward(&mut g, &p, xv, cv, t, sv)?;
            Ok(g.value(out).clone())
        })
    }
}

/// Parameters, model and optimizer state for single-threaded training.
pub struct Trainer {
    pub model: TtsModel,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub rng: ChaCha8Rng,
    pub batch_size: usize,
}

impl Trainer {
    pub fn new(cfg: ModelConfig, adam: AdamConfig, batch_size: usize, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        let mut store = ParamStore::new();
        let model = TtsModel::new(&mut store, &mut Init::new(seed), cfg)?;
        let adam = Adam::new(adam, &store);
        Ok(Self {
            model,
            store,
            adam,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a),
            batch_size,
        })
    }

    /// One optimizer step. `step` is only used for error reporting.
    pub fn step(&mut self, corpus: &[SyntheticUtterance], step: usize) -> Result<StepStats> {
        let draws = self.model.draw_batch::<f32>(corpus, self.batch_size, &mut self.rng)?;
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let (loss, diff, dur) = self.model.batch_loss(&mut g, &p, corpus, &draws)?;
        let b = self.batch_size as f64;
        let stats = StepStats {
            diffusion: diff / b,
            duration: dur / b,
            grad_norm: 0.0,
        };
        let total = f64::from(g.scalar_value(loss));
        if !total.is_finite() {
            return Err(Error::NonFinite { index: step, value: total });
        }
        let grads = g.backward(loss);
        let grad_norm = self.adam.step(&mut self.store, &p, &grads);
        Ok(StepStats { grad_norm, ..stats })
    }
}
