use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dpi_harness::bench::{parse_grids, run_kernel_bench, step_comparison};
use dpi_harness::check::{format_report, run_check};
use dpi_harness::config::RunConfig;
use dpi_harness::{ablate, sample, train};

#[derive(Parser)]
#[command(name = "dpi", about = "Directional patch-interaction diffusion decoder toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on the configured corpus.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `out_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthesize one corpus utterance from a checkpoint.
    Sample {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        utt: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time directional against dense attention.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "8x8,16x16,32x32,64x64")]
        grids: String,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Time columns of the full training-step comparison; 0 skips it.
        #[arg(long, default_value_t = 40)]
        step_columns: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and check every neighbour-set and switch variant.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the verification suites.
    Check {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: &Option<PathBuf>) -> Result<RunConfig> {
    match config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Train { config, seed, out } => {
            let mut cfg = load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let out = out.unwrap_or_else(|| cfg.out_dir.clone());
            let r = train::run_train(&cfg, &out)?;
            println!(
                "trained {} steps in {:.1}s; first-100 mean {:.4}, last-100 mean {:.4}; artifacts in {}",
                r.losses.len(),
                r.wallclock_s,
                r.head_mean(100),
                r.tail_mean(100),
                out.display()
            );
            Ok(true)
        }
        Cmd::Sample { config, checkpoint, utt, seed, out } => {
            let cfg = load(&config)?;
            let mel = sample::run_sample(&cfg, &checkpoint, &utt, seed, &out)?;
            println!("wrote {:?} mel to {}", mel.shape(), out.display());
            Ok(true)
        }
        Cmd::Bench { config, grids, repeats, step_columns, out } => {
            let cfg = load(&config)?;
            let grids = parse_grids(&grids)?;
            let model = cfg.model();
            let kb = run_kernel_bench(&grids, cfg.d_model, &model.decoder.candidates(), repeats, cfg.seed);
            let mut csv = kb.to_csv();
            if step_columns > 0 {
                let (h, _) = model.decoder.patch().grid_dims(model.decoder.bins, step_columns * cfg.patch_size);
                let (dir, dense) = step_comparison(&model, step_columns, repeats.min(3), cfg.seed)?;
                csv.push_str(&format!(
                    "# train step {h}x{step_columns}: directional = {dir:.6} s, dense control = {dense:.6} s, ratio = {:.4}\n",
                    dir / dense
                ));
            }
            match out {
                Some(p) => std::fs::write(&p, &csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            Ok(true)
        }
        Cmd::Ablate { config, out } => {
            let cfg = load(&config)?;
            let out = out.unwrap_or_else(|| cfg.out_dir.join("ablation"));
            let rows = ablate::run_ablate(&cfg, &out)?;
            print!("{}", ablate::to_csv(&rows));
            let ok = rows.iter().all(|r| r.status == "ok");
            if !ok {
                eprintln!("some ablation runs failed; see {}", out.join(ablate::ABLATION_CSV).display());
            }
            Ok(ok)
        }
        Cmd::Check { config, out } => {
            let cfg = load(&config)?;
            let results = run_check(&cfg);
            let report = format_report(&results);
            print!("{report}");
            if let Some(p) = out {
                std::fs::write(&p, &report).with_context(|| format!("writing {}", p.display()))?;
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.property.as_str()).collect();
            if !failed.is_empty() {
                eprintln!("failed properties: {}", failed.join(", "));
            }
            Ok(failed.is_empty())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
