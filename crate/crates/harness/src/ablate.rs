//! Neighbour-set and switch ablation sweep.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use dpi_core::directional::NeighborSet;

use crate::check::{future_independence, run_check, Status};
use crate::config::{CausalityMode, RunConfig};
use crate::train::run_train;

pub const ABLATION_CSV: &str = "ablation.csv";

/// A named variant of the base configuration.
#[derive(Debug, Clone)]
pub struct Variant {
    pub name: String,
    pub cfg: RunConfig,
}

/// Baseline, the eight neighbour sets, then the four switch settings.
pub fn variants(base: &RunConfig) -> Vec<Variant> {
    let mut out = vec![Variant {
        name: "baseline".into(),
        cfg: base.clone(),
    }];
    for set in NeighborSet::ablation_sets() {
        let mut cfg = base.clone();
        cfg.neighbor_set = set.clone();
        cfg.literal_listing = false;
        out.push(Variant {
            name: format!("set:{set}"),
            cfg,
        });
    }
    let switches: [(&str, fn(&mut RunConfig)); 4] = [
        ("w/o stm", |c| c.stm = false),
        ("w/o tp", |c| c.time_pos = false),
        ("w/o fp", |c| c.freq_pos = false),
        ("w/o tp&fp", |c| {
            c.time_pos = false;
            c.freq_pos = false;
        }),
    ];
    for (name, apply) in switches {
        let mut cfg = base.clone();
        apply(&mut cfg);
        out.push(Variant { name: name.into(), cfg });
    }
    for v in &mut out {
        v.cfg.causality_mode = CausalityMode::ExpectedAnticausal;
    }
    out
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub name: String,
    pub cfg: RunConfig,
    /// `ok`, or the error that ended the sub-run.
    pub status: String,
    pub final_loss: f64,
    pub wallclock_s: f64,
    pub causality: &'static str,
    pub checks_passed: bool,
}

fn dir_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

fn run_variant(v: &Variant, out_dir: &Path) -> AblationRow {
    let start = Instant::now();
    let mut row = AblationRow {
        name: v.name.clone(),
        cfg: v.cfg.clone(),
        status: "ok".into(),
        final_loss: f64::NAN,
        wallclock_s: 0.0,
        causality: "unknown",
        checks_passed: false,
    };
    match run_train(&v.cfg, &out_dir.join(dir_name(&v.name))) {
        Ok(report) => row.final_loss = report.tail_mean(100),
        Err(e) => row.status = format!("train error: {e:#}"),
    }
    let (_, leaked) = future_independence(&v.cfg.model().decoder, CausalityMode::ExpectedAnticausal, 4, v.cfg.seed);
    row.causality = if leaked { "anticausal" } else { "causal" };
    row.checks_passed = run_check(&v.cfg).iter().all(|r| r.status != Status::Fail);
    if !row.checks_passed && row.status == "ok" {
        row.status = "check failed".into();
    }
    row.wallclock_s = start.elapsed().as_secs_f64();
    row
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("name,neighbor_set,time_pos,freq_pos,stm,status,final_loss,wallclock_s,causality\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.3},{}",
            r.name,
            format!("\"{}\"", r.cfg.neighbor_set),
            r.cfg.time_pos,
            r.cfg.freq_pos,
            r.cfg.stm,
            format!("\"{}\"", r.status.replace('"', "'")),
            r.final_loss,
            r.wallclock_s,
            r.causality
        );
    }
    s
}

/// Runs every variant, writes `ablation.csv` into `out_dir` and returns the
/// rows. Crashed sub-runs are recorded and the sweep continues.
pub fn run_ablate(base: &RunConfig, out_dir: &Path) -> Result<Vec<AblationRow>> {
    base.validate()?;
    fs::create_dir_all(out_dir)?;
    let rows: Vec<AblationRow> = variants(base).iter().map(|v| run_variant(v, out_dir)).collect();
    fs::write(out_dir.join(ABLATION_CSV), to_csv(&rows))?;
    Ok(rows)
}
