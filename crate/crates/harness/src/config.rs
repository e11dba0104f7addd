//! Flat `key = value` run configuration. `#` starts a comment, unknown keys
//! are errors, missing keys keep their defaults.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dpi_core::directional::{ClampPolicy, NeighborSet};
use dpi_core::dit::DecoderConfig;
use dpi_core::model::{ModelConfig, StyleSource};
use dpi_core::params::AdamConfig;
use dpi_core::patch_grid::PositionalConfig;
use dpi_core::spectro_io::CorpusParams;
use dpi_core::text::EncoderConfig;

/// How `check` treats a neighbour set that reads future frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CausalityMode {
    /// Leakage is a failure.
    #[default]
    Strict,
    /// Leakage is reported as an expected violation.
    ExpectedAnticausal,
}

impl CausalityMode {
    pub fn name(self) -> &'static str {
        match self {
            CausalityMode::Strict => "strict",
            CausalityMode::ExpectedAnticausal => "expected-anticausal",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(CausalityMode::Strict),
            "expected-anticausal" => Ok(CausalityMode::ExpectedAnticausal),
            _ => bail!("expected strict or expected-anticausal"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub batch_size: usize,
    pub patch_size: usize,
    pub blocks: usize,
    pub global_blocks: usize,
    pub d_model: usize,
    pub heads_global: usize,
    pub heads_directional: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub diffusion_steps: usize,
    pub neighbor_set: NeighborSet,
    pub literal_listing: bool,
    pub clamp: ClampPolicy,
    pub time_pos: bool,
    pub freq_pos: bool,
    pub stm: bool,
    pub causal_style: bool,
    pub style_source: StyleSource,
    pub style_tokens: usize,
    pub dense_control: bool,
    pub seed: u64,
    pub steps: usize,
    pub lr: f64,
    /// Gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    pub corpus_seed: u64,
    pub corpus_utts: usize,
    pub corpus_vocab: usize,
    pub corpus_bins: usize,
    pub corpus_max_tokens: usize,
    pub corpus_speakers: usize,
    /// Read the corpus from here; generate it when empty.
    pub corpus_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub causality_mode: CausalityMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusParams::default();
        Self {
            batch_size: 32,
            patch_size: 7,
            blocks: 4,
            global_blocks: 2,
            d_model: 64,
            heads_global: 4,
            heads_directional: 1,
            encoder_layers: 8,
            encoder_heads: 4,
            diffusion_steps: 50,
            neighbor_set: NeighborSet::directional(),
            literal_listing: false,
            clamp: ClampPolicy::Clamp,
            time_pos: true,
            freq_pos: true,
            stm: true,
            causal_style: false,
            style_source: StyleSource::Table,
            style_tokens: 4,
            dense_control: false,
            seed: 0,
            steps: 2000,
            lr: 1e-4,
            grad_clip: 1.0,
            corpus_seed: corpus.seed,
            corpus_utts: corpus.n_utts,
            corpus_vocab: corpus.vocab,
            corpus_bins: corpus.bins,
            corpus_max_tokens: corpus.max_tokens,
            corpus_speakers: corpus.speakers,
            corpus_dir: None,
            out_dir: PathBuf::from("runs/default"),
            causality_mode: CausalityMode::Strict,
        }
    }
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => bail!("expected true or false"),
    }
}

fn parse_num<N: std::str::FromStr>(v: &str) -> Result<N>
where
    N::Err: std::fmt::Display,
{
    v.parse::<N>().map_err(|e| anyhow!("{e}"))
}

impl RunConfig {
    pub const KEYS: [&'static str; 33] = [
        "batch_size",
        "patch_size",
        "blocks",
        "global_blocks",
        "d_model",
        "heads_global",
        "heads_directional",
        "encoder_layers",
        "encoder_heads",
        "diffusion_steps",
        "neighbor_set",
        "literal_listing",
        "clamp",
        "time_pos",
        "freq_pos",
        "stm",
        "causal_style",
        "style_source",
        "style_tokens",
        "dense_control",
        "seed",
        "steps",
        "lr",
        "grad_clip",
        "corpus_seed",
        "corpus_utts",
        "corpus_vocab",
        "corpus_bins",
        "corpus_max_tokens",
        "corpus_speakers",
        "corpus_dir",
        "out_dir",
        "causality_mode",
    ];

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let r: Result<()> = (|| {
            match key {
                "batch_size" => self.batch_size = parse_num(v)?,
                "patch_size" => self.patch_size = parse_num(v)?,
                "blocks" => self.blocks = parse_num(v)?,
                "global_blocks" => self.global_blocks = parse_num(v)?,
                "d_model" => self.d_model = parse_num(v)?,
                "heads_global" => self.heads_global = parse_num(v)?,
                "heads_directional" => self.heads_directional = parse_num(v)?,
                "encoder_layers" => self.encoder_layers = parse_num(v)?,
                "encoder_heads" => self.encoder_heads = parse_num(v)?,
                "diffusion_steps" => self.diffusion_steps = parse_num(v)?,
                "neighbor_set" => self.neighbor_set = v.parse()?,
                "literal_listing" => self.literal_listing = parse_bool(v)?,
                "clamp" => self.clamp = v.parse()?,
                "time_pos" => self.time_pos = parse_bool(v)?,
                "freq_pos" => self.freq_pos = parse_bool(v)?,
                "stm" => self.stm = parse_bool(v)?,
                "causal_style" => self.causal_style = parse_bool(v)?,
                "style_source" => self.style_source = v.parse()?,
                "style_tokens" => self.style_tokens = parse_num(v)?,
                "dense_control" => self.dense_control = parse_bool(v)?,
                "seed" => self.seed = parse_num(v)?,
                "steps" => self.steps = parse_num(v)?,
                "lr" => self.lr = parse_num(v)?,
                "grad_clip" => self.grad_clip = parse_num(v)?,
                "corpus_seed" => self.corpus_seed = parse_num(v)?,
                "corpus_utts" => self.corpus_utts = parse_num(v)?,
                "corpus_vocab" => self.corpus_vocab = parse_num(v)?,
                "corpus_bins" => self.corpus_bins = parse_num(v)?,
                "corpus_max_tokens" => self.corpus_max_tokens = parse_num(v)?,
                "corpus_speakers" => self.corpus_speakers = parse_num(v)?,
                "corpus_dir" => self.corpus_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
                "out_dir" => self.out_dir = PathBuf::from(v),
                "causality_mode" => self.causality_mode = CausalityMode::parse(v)?,
                _ => bail!("unknown key"),
            }
            Ok(())
        })();
        r.with_context(|| format!("config field `{key}` = `{v}`"))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let path = |p: &Path| p.display().to_string();
        Some(match key {
            "batch_size" => self.batch_size.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "blocks" => self.blocks.to_string(),
            "global_blocks" => self.global_blocks.to_string(),
            "d_model" => self.d_model.to_string(),
            "heads_global" => self.heads_global.to_string(),
            "heads_directional" => self.heads_directional.to_string(),
            "encoder_layers" => self.encoder_layers.to_string(),
            "encoder_heads" => self.encoder_heads.to_string(),
            "diffusion_steps" => self.diffusion_steps.to_string(),
            "neighbor_set" => self.neighbor_set.to_string(),
            "literal_listing" => self.literal_listing.to_string(),
            "clamp" => self.clamp.name().to_string(),
            "time_pos" => self.time_pos.to_string(),
            "freq_pos" => self.freq_pos.to_string(),
            "stm" => self.stm.to_string(),
            "causal_style" => self.causal_style.to_string(),
            "style_source" => self.style_source.to_string(),
            "style_tokens" => self.style_tokens.to_string(),
            "dense_control" => self.dense_control.to_string(),
            "seed" => self.seed.to_string(),
            "steps" => self.steps.to_string(),
            "lr" => self.lr.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "corpus_seed" => self.corpus_seed.to_string(),
            "corpus_utts" => self.corpus_utts.to_string(),
            "corpus_vocab" => self.corpus_vocab.to_string(),
            "corpus_bins" => self.corpus_bins.to_string(),
            "corpus_max_tokens" => self.corpus_max_tokens.to_string(),
            "corpus_speakers" => self.corpus_speakers.to_string(),
            "corpus_dir" => self.corpus_dir.as_deref().map(path).unwrap_or_default(),
            "out_dir" => path(&self.out_dir),
            "causality_mode" => self.causality_mode.name().to_string(),
            _ => return None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected `key = value`", n + 1))?;
            cfg.set(k.trim(), v).with_context(|| format!("line {}", n + 1))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Canonical text form: every key, in `KEYS` order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("patch_size", self.patch_size),
            ("blocks", self.blocks),
            ("d_model", self.d_model),
            ("heads_global", self.heads_global),
            ("heads_directional", self.heads_directional),
            ("encoder_layers", self.encoder_layers),
            ("encoder_heads", self.encoder_heads),
            ("diffusion_steps", self.diffusion_steps),
            ("style_tokens", self.style_tokens),
            ("steps", self.steps),
            ("corpus_utts", self.corpus_utts),
            ("corpus_vocab", self.corpus_vocab),
            ("corpus_bins", self.corpus_bins),
            ("corpus_max_tokens", self.corpus_max_tokens),
            ("corpus_speakers", self.corpus_speakers),
        ];
        for (k, v) in counts {
            if v == 0 {
                bail!("config field `{k}` must be at least 1");
            }
        }
        if self.global_blocks > self.blocks {
            bail!("config field `global_blocks` ({}) exceeds `blocks` ({})", self.global_blocks, self.blocks);
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            bail!("config field `lr` must be positive");
        }
        if !(self.grad_clip.is_finite() && self.grad_clip >= 0.0) {
            bail!("config field `grad_clip` must be non-negative");
        }
        self.model().validate().context("model configuration")?;
        Ok(())
    }

    pub fn corpus_params(&self) -> CorpusParams {
        CorpusParams {
            seed: self.corpus_seed,
            n_utts: self.corpus_utts,
            vocab: self.corpus_vocab,
            bins: self.corpus_bins,
            max_tokens: self.corpus_max_tokens,
            speakers: self.corpus_speakers,
        }
    }

    pub fn model(&self) -> ModelConfig {
        let d = self.d_model;
        ModelConfig {
            encoder: EncoderConfig {
                layers: self.encoder_layers,
                d,
                heads: self.encoder_heads,
                vocab: self.corpus_vocab,
            },
            decoder: DecoderConfig {
                blocks: self.blocks,
                global_blocks: self.global_blocks,
                d,
                heads_global: self.heads_global,
                heads_directional: self.heads_directional,
                patch_size: self.patch_size,
                bins: self.corpus_bins,
                cond_dim: d,
                neighbor_set: self.neighbor_set.clone(),
                literal_listing: self.literal_listing,
                clamp: self.clamp,
                pos: PositionalConfig {
                    use_time_pos: self.time_pos,
                    use_freq_pos: self.freq_pos,
                },
                stm: self.stm,
                causal_style: self.causal_style,
                dense_control: self.dense_control,
            },
            style_source: self.style_source,
            style_tokens: self.style_tokens,
            speakers: self.corpus_speakers,
            dp_hidden: d,
            diffusion_steps: self.diffusion_steps,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
            ..AdamConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn edited_round_trips() {
        let mut c = RunConfig::default();
        c.neighbor_set = "n,nh".parse().unwrap();
        c.lr = 3.3e-4;
        c.stm = false;
        c.corpus_dir = Some("data/c".into());
        c.clamp = ClampPolicy::MaskOut;
        c.causality_mode = CausalityMode::ExpectedAnticausal;
        c.style_source = StyleSource::Reference;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_defaults() {
        let c = RunConfig::parse("# tiny\nsteps = 5 # short\n\nneighbor_set = self\n").unwrap();
        assert_eq!(c.steps, 5);
        assert_eq!(c.neighbor_set, NeighborSet::self_only());
        assert_eq!(c.batch_size, 32);
    }

    #[test]
    fn errors_name_the_field() {
        let e = format!("{:#}", RunConfig::parse("stepz = 3").unwrap_err());
        assert!(e.contains("stepz"), "{e}");
        let e = format!("{:#}", RunConfig::parse("batch_size = 0").unwrap_err());
        assert!(e.contains("batch_size"), "{e}");
        let e = format!("{:#}", RunConfig::parse("stm = yes").unwrap_err());
        assert!(e.contains("stm"), "{e}");
        let e = format!("{:#}", RunConfig::parse("global_blocks = 9").unwrap_err());
        assert!(e.contains("global_blocks"), "{e}");
    }

    #[test]
    fn keys_are_complete() {
        let c = RunConfig::default();
        for k in RunConfig::KEYS {
            assert!(c.get(k).is_some(), "{k}");
        }
    }
}
