//! Exit criteria, run sequentially in one test so timings are not disturbed
//! by other tests. Prints one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use dpi_core::directional::{NeighborOffset, NeighborSet};
use dpi_core::dit::DecoderConfig;
use dpi_harness::ablate::run_ablate;
use dpi_harness::bench::{run_kernel_bench, step_comparison};
use dpi_harness::check::{
    adaln_identity, config_roundtrip, future_independence, gradient_check, gradient_config, oracle_equivalence,
    receptive_field_suite, schedule_suite, style_suite, tensor_roundtrip, SuiteResult,
};
use dpi_harness::config::{CausalityMode, RunConfig};
use dpi_harness::train::{loss_columns, run_train};

struct Verdict {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, limit_s: u64, detail: &mut String) -> bool {
    let ok = elapsed <= Duration::from_secs(limit_s);
    detail.push_str(&format!("; runtime {:.1}s (limit {limit_s}s)", elapsed.as_secs_f64()));
    ok
}

fn summarize(results: &[SuiteResult]) -> (bool, String) {
    let pass = results.iter().all(|r| r.status == dpi_harness::check::Status::Pass);
    let detail = results
        .iter()
        .map(|r| format!("{} worst {:.3e} over {} [{}]", r.property, r.worst_error, r.cases, r.status.name()))
        .collect::<Vec<_>>()
        .join("; ");
    (pass, detail)
}

const TINY_ABLATION: &str = "\
batch_size = 2
blocks = 2
global_blocks = 1
d_model = 8
heads_global = 2
encoder_layers = 1
encoder_heads = 2
diffusion_steps = 4
style_tokens = 2
steps = 3
corpus_utts = 6
corpus_vocab = 8
corpus_bins = 14
corpus_max_tokens = 4
corpus_speakers = 2
";

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut sets: Vec<Vec<NeighborOffset>> = NeighborSet::ablation_sets().iter().map(|s| s.offsets().to_vec()).collect();
    sets.push(NeighborSet::directional().offsets().to_vec());
    let r = oracle_equivalence(&sets, 100, Default::default(), 1);
    let mut detail = format!("{} cases, worst abs error {:.3e} (tolerance 1e-5)", r.cases, r.worst_error);
    let timely = within(start.elapsed(), 60, &mut detail);
    Verdict {
        id: 1,
        name: "oracle equivalence",
        pass: r.cases == 900 && r.worst_error <= 1e-5 && timely,
        detail,
    }
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let base = DecoderConfig::default();
    let (causal, leaked) = future_independence(&base, CausalityMode::Strict, 5, 2);
    let rf = receptive_field_suite(NeighborSet::directional().offsets(), Default::default(), 6, &[1, 2, 3], 2);
    let mut misdetected = Vec::new();
    for set in NeighborSet::ablation_sets() {
        let cfg = DecoderConfig {
            neighbor_set: set.clone(),
            ..base.clone()
        };
        let (_, leaks) = future_independence(&cfg, CausalityMode::ExpectedAnticausal, 4, 3);
        if leaks != set.has_future() {
            misdetected.push(set.to_string());
        }
    }
    let mut detail = format!(
        "default set leaked frames {}, receptive-field mismatches {} over {} cells, misdetected sets {:?}",
        causal.worst_error, rf.worst_error, rf.cases, misdetected
    );
    let timely = within(start.elapsed(), 120, &mut detail);
    Verdict {
        id: 2,
        name: "directed causality",
        pass: !leaked && rf.worst_error == 0.0 && misdetected.is_empty() && timely,
        detail,
    }
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let r = gradient_check(&gradient_config(), 21, 5, 256, 3);
    let mut detail = format!("{} parameters, worst relative error {:.3e} (tolerance 1e-3)", r.cases, r.worst_error);
    let timely = within(start.elapsed(), 300, &mut detail);
    Verdict {
        id: 3,
        name: "gradient check",
        pass: r.cases >= 200 && r.worst_error <= 1e-3 && timely,
        detail,
    }
}

fn criterion_4() -> Verdict {
    let r = adaln_identity(&DecoderConfig::default(), 20, 4);
    Verdict {
        id: 4,
        name: "adaLN-Zero identity",
        pass: r.cases == 20 && r.status == dpi_harness::check::Status::Pass,
        detail: format!("{}, max abs diff {:.3e}", r.detail, r.worst_error),
    }
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let cfg = RunConfig::default();
    let offsets = NeighborSet::directional().offsets().to_vec();
    let kb = run_kernel_bench(&[(8, 8), (16, 16), (32, 32), (64, 64)], 64, &offsets, 5, 5);
    let model = cfg.model();
    let step = step_comparison(&model, 40, 5, 5);
    let (ratio, step_detail) = match step {
        Ok((dir, dense)) => (dir / dense, format!("step 12x40 directional {dir:.4}s dense {dense:.4}s")),
        Err(e) => (f64::INFINITY, format!("step benchmark failed: {e:#}")),
    };
    let mut detail = format!(
        "slope directional {:.3} (<= 1.35), dense {:.3} (>= 1.6); {step_detail}, ratio {ratio:.3} (<= 0.75)",
        kb.slope_directional, kb.slope_dense
    );
    let timely = within(start.elapsed(), 600, &mut detail);
    Verdict {
        id: 5,
        name: "complexity scaling",
        pass: kb.slope_directional <= 1.35 && kb.slope_dense >= 1.6 && ratio <= 0.75 && timely,
        detail,
    }
}

fn criterion_6() -> Verdict {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.batch_size = 8;
    cfg.steps = 2000;
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["first", "second"].iter().map(|n| run_train(&cfg, &dir.path().join(n))).collect();
    let (pass, mut detail) = match (&runs[0], &runs[1]) {
        (Ok(a), Ok(_)) => {
            let read = |n: &str| std::fs::read_to_string(dir.path().join(n).join("loss.csv")).unwrap_or_default();
            let (ca, cb) = (loss_columns(&read("first")), loss_columns(&read("second")));
            let identical = ca.len() == 2000 && ca == cb;
            let (head, tail) = (a.head_mean(100), a.tail_mean(100));
            (
                tail <= 0.5 * head && identical,
                format!(
                    "first-100 mean {head:.4}, last-100 mean {tail:.4}, ratio {:.3} (<= 0.5); loss columns identical across runs: {identical}",
                    tail / head
                ),
            )
        }
        (a, b) => (false, format!("training failed: {:?} {:?}", a.as_ref().err(), b.as_ref().err())),
    };
    let timely = within(start.elapsed(), 1200, &mut detail);
    Verdict {
        id: 6,
        name: "desk-scale learning",
        pass: pass && timely,
        detail,
    }
}

fn ablation_rows() -> Result<Vec<dpi_harness::ablate::AblationRow>, String> {
    let base = RunConfig::parse(TINY_ABLATION).map_err(|e| format!("{e:#}"))?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_ablate(&base, dir.path()).map_err(|e| format!("{e:#}"))
}

fn criterion_7(rows: &Result<Vec<dpi_harness::ablate::AblationRow>, String>) -> Verdict {
    let style = style_suite(&DecoderConfig::default(), 7);
    let wanted = ["style_identical_column_increment", "style_duplicate_invariance", "style_single_token_value"];
    let picked: Vec<SuiteResult> = style.into_iter().filter(|r| wanted.contains(&r.property.as_str())).collect();
    let (style_ok, mut detail) = summarize(&picked);
    let stm_ok = match rows {
        Ok(rows) => {
            let off: Vec<_> = rows.iter().filter(|r| !r.cfg.stm).collect();
            let ok = off.len() == 1 && off[0].name == "w/o stm" && off[0].status == "ok";
            detail.push_str(&format!("; w/o stm row recorded: {ok}"));
            ok
        }
        Err(e) => {
            detail.push_str(&format!("; ablation failed: {e}"));
            false
        }
    };
    Verdict {
        id: 7,
        name: "style properties",
        pass: picked.len() == 3 && style_ok && stm_ok,
        detail,
    }
}

fn criterion_8() -> Verdict {
    let (pass, detail) = summarize(&schedule_suite(50, 8));
    Verdict {
        id: 8,
        name: "schedule and sampler",
        pass,
        detail,
    }
}

fn criterion_9(rows: &Result<Vec<dpi_harness::ablate::AblationRow>, String>) -> Verdict {
    let mut edited = RunConfig::default();
    edited.neighbor_set = "ph,p,h".parse().unwrap();
    edited.lr = 2.5e-4;
    edited.time_pos = false;
    edited.corpus_dir = Some("corpus".into());
    let results = vec![
        tensor_roundtrip(&RunConfig::default(), 100, 9),
        config_roundtrip(&RunConfig::default()),
        config_roundtrip(&edited),
    ];
    let (ok, mut detail) = summarize(&results);
    let n = rows.as_ref().map(|r| r.len()).unwrap_or(0);
    detail.push_str(&format!("; ablation rows {n} (expected 13)"));
    Verdict {
        id: 9,
        name: "formats",
        pass: ok && results[0].cases == 100 && n == 13,
        detail,
    }
}

#[test]
fn acceptance_criteria() {
    let rows = ablation_rows();
    let verdicts = vec![
        criterion_1(),
        criterion_2(),
        criterion_3(),
        criterion_4(),
        criterion_5(),
        criterion_6(),
        criterion_7(&rows),
        criterion_8(),
        criterion_9(&rows),
    ];
    for v in &verdicts {
        println!(
            "criterion {} {:<22} {}  {}",
            v.id,
            v.name,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let failed: Vec<usize> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
