use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use dpi_core::model::Trainer;
use dpi_core::spectro_io::{generate_corpus, read_corpus, SyntheticUtterance};

use crate::config::RunConfig;

pub const LOSS_CSV: &str = "loss.csv";
pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const CHECKPOINT_DIR: &str = "checkpoint";

/// Corpus named by the config: read from `corpus_dir` or generated.
pub fn load_corpus(cfg: &RunConfig) -> Result<Vec<SyntheticUtterance>> {
    let corpus = match &cfg.corpus_dir {
        Some(dir) => read_corpus(dir).with_context(|| format!("reading corpus {}", dir.display()))?,
        None => generate_corpus(&cfg.corpus_params())?,
    };
    for u in &corpus {
        if u.mel.bins() != cfg.corpus_bins {
            bail!("utterance {} has {} bins, config says {}", u.id(), u.mel.bins(), cfg.corpus_bins);
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub wallclock_s: f64,
    pub out_dir: PathBuf,
}

impl TrainReport {
    /// Mean of the last `n` losses (all of them when fewer).
    pub fn tail_mean(&self, n: usize) -> f64 {
        let k = n.min(self.losses.len()).max(1);
        self.losses[self.losses.len() - k..].iter().sum::<f64>() / k as f64
    }

    pub fn head_mean(&self, n: usize) -> f64 {
        let k = n.min(self.losses.len()).max(1);
        self.losses[..k].iter().sum::<f64>() / k as f64
    }
}

/// Runs the training loop, writing the loss CSV, checkpoint and resolved
/// config into `out_dir`.
pub fn run_train(cfg: &RunConfig, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut resolved = cfg.clone();
    resolved.out_dir = out_dir.to_path_buf();
    fs::write(out_dir.join(CONFIG_SNAPSHOT), resolved.to_text())?;

    let corpus = load_corpus(cfg)?;
    let mut trainer = Trainer::new(cfg.model(), cfg.adam(), cfg.batch_size, cfg.seed)?;
    let start = Instant::now();
    let mut csv = String::from("step,loss,wallclock_s\n");
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let stats = trainer
            .step(&corpus, step)
            .with_context(|| format!("training step {step}"))?;
        if !stats.diffusion.is_finite() {
            bail!("non-finite loss at step {step}");
        }
        losses.push(stats.diffusion);
        let _ = writeln!(csv, "{step},{},{:.6}", stats.diffusion, start.elapsed().as_secs_f64());
    }
    let wallclock_s = start.elapsed().as_secs_f64();
    fs::write(out_dir.join(LOSS_CSV), csv)?;
    trainer.store.save_dir(&out_dir.join(CHECKPOINT_DIR))?;
    Ok(TrainReport {
        losses,
        wallclock_s,
        out_dir: out_dir.to_path_buf(),
    })
}

/// `(step, loss)` columns of a loss CSV, as text, for reproducibility checks.
pub fn loss_columns(csv: &str) -> Vec<(String, String)> {
    csv.lines()
        .skip(1)
        .filter_map(|l| {
            let mut it = l.split(',');
            Some((it.next()?.to_string(), it.next()?.to_string()))
        })
        .collect()
}
