use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use dpi_core::spectro_io::{generate_corpus, load_tensor, mel_path, write_corpus};
use dpi_harness::config::RunConfig;

const TINY: &str = "\
# tiny model for fast end-to-end runs
batch_size = 2
blocks = 2
global_blocks = 1
d_model = 8
heads_global = 2
encoder_layers = 1
encoder_heads = 2
diffusion_steps = 4
style_tokens = 2
steps = 6
corpus_utts = 6
corpus_vocab = 8
corpus_bins = 14
corpus_max_tokens = 4
corpus_speakers = 2
";

fn dpi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpi")).args(args).output().expect("spawn dpi")
}

fn write_cfg(dir: &Path, name: &str, extra: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p.display().to_string()
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = dpi(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let csv_a = fs::read_to_string(a.join("loss.csv")).unwrap();
    let csv_b = fs::read_to_string(b.join("loss.csv")).unwrap();
    assert_eq!(csv_a.lines().next(), Some("step,loss,wallclock_s"));
    assert_eq!(csv_a.lines().count(), 7);
    assert_eq!(dpi_harness::train::loss_columns(&csv_a), dpi_harness::train::loss_columns(&csv_b));

    let snap = RunConfig::load(&a.join("config.txt")).unwrap();
    let mut expected = RunConfig::load(Path::new(&cfg)).unwrap();
    expected.out_dir = a.clone();
    assert_eq!(snap, expected);
    assert!(a.join("checkpoint").is_dir());
}

#[test]
fn invalid_config_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "bad.cfg", "stepz = 4\n");
    let o = dpi(&["train", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepz"));
}

#[test]
fn sample_is_deterministic_and_shaped() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "steps = 2\n");
    let run = dir.path().join("run");
    assert!(dpi(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]).status.success());
    let ck = run.join("checkpoint");
    let outs: Vec<_> = ["x.dpit", "y.dpit"].iter().map(|n| dir.path().join(n)).collect();
    for out in &outs {
        let o = dpi(&["sample", "--config", &cfg, "--checkpoint", ck.to_str().unwrap(), "--utt", "utt00001", "--seed", "3", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&outs[0]).unwrap(), fs::read(&outs[1]).unwrap());
    let (dims, data) = load_tensor(&outs[0]).unwrap();
    assert_eq!(dims[0], 14);
    assert!(dims[1] >= 1 && data.iter().all(|v| v.is_finite()));

    let o = dpi(&["sample", "--config", &cfg, "--checkpoint", ck.to_str().unwrap(), "--utt", "nope", "--out", outs[0].to_str().unwrap()]);
    assert!(!o.status.success());
    let o = dpi(&["sample", "--config", &cfg, "--checkpoint", "/nonexistent/ck", "--utt", "utt00001", "--out", outs[0].to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn zero_checkpoint_still_samples_finite_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "steps = 1\n");
    let run = dir.path().join("run");
    assert!(dpi(&["train", "--config", &cfg, "--out", run.to_str().unwrap()]).status.success());
    let ck = run.join("checkpoint");
    for entry in fs::read_dir(&ck).unwrap() {
        let p = entry.unwrap().path();
        let (dims, data) = load_tensor(&p).unwrap();
        dpi_core::spectro_io::save_tensor(&p, &dims, &vec![0.0; data.len()]).unwrap();
    }
    let out = dir.path().join("z.dpit");
    let o = dpi(&["sample", "--config", &cfg, "--checkpoint", ck.to_str().unwrap(), "--utt", "utt00000", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, data) = load_tensor(&out).unwrap();
    assert!(data.iter().all(|v| v.is_finite()));
}

#[test]
fn check_default_passes_and_labels_anticausal() {
    let o = dpi(&["check"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "a.cfg", "neighbor_set = n,nh\ncausality_mode = expected-anticausal\n");
    let o = dpi(&["check", "--config", &cfg]);
    let report = String::from_utf8_lossy(&o.stdout);
    assert!(o.status.success(), "{report}");
    assert!(report.lines().any(|l| l.starts_with("future_independence") && l.contains("expected-violation")));

    let cfg = write_cfg(dir.path(), "s.cfg", "neighbor_set = n,nh\n");
    let o = dpi(&["check", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("future_independence"));
}

#[test]
fn corrupted_corpus_file_fails_check() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(TINY).unwrap();
    let corpus_dir = dir.path().join("corpus");
    write_corpus(&corpus_dir, &generate_corpus(&cfg.corpus_params()).unwrap()).unwrap();
    let path = write_cfg(dir.path(), "c.cfg", &format!("corpus_dir = {}\n", corpus_dir.display()));
    assert!(dpi(&["check", "--config", &path]).status.success());

    let victim = mel_path(&corpus_dir, "utt00002");
    let mut bytes = fs::read(&victim).unwrap();
    bytes[0] = b'X';
    fs::write(&victim, bytes).unwrap();
    let o = dpi(&["check", "--config", &path]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("tensorfile_roundtrip"));
}

#[test]
fn bench_writes_records_and_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let o = dpi(&["bench", "--grids", "4x4,8x8", "--repeats", "1", "--step-columns", "0", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "h,w,hw,mode,seconds,flops,inner_loops");
    assert_eq!(rows.len(), 5);
    let flops = |mode: &str| {
        rows.iter()
            .find(|r| r.starts_with(&format!("8,8,64,{mode},")))
            .and_then(|r| r.split(',').nth(5))
            .map(str::to_string)
    };
    assert_eq!(flops("dense").as_deref(), Some("3145728"));
    assert_eq!(flops("directional").as_deref(), Some("196608"));
    assert!(csv.contains("# slope directional") && csv.contains("# slope dense"));
    assert!(!dpi(&["bench", "--grids", "8by8"]).status.success());
}

#[test]
fn ablate_emits_thirteen_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "c.cfg", "steps = 2\n");
    let out = dir.path().join("abl");
    let o = dpi(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 13);
    assert!(rows.iter().any(|r| r.starts_with("set:p,l,pl,") && r.ends_with(",causal")));
    for anti in ["h,nh,n", "l,nl,n", "n,nl", "n,nh"] {
        let set: dpi_core::directional::NeighborSet = anti.parse().unwrap();
        let row = rows.iter().find(|r| r.starts_with(&format!("set:{set},"))).unwrap();
        assert!(row.ends_with(",anticausal"), "{row}");
    }
    assert!(rows.iter().any(|r| r.starts_with("w/o stm,") && r.contains(",false,\"ok\"")));
}

#[test]
fn ablate_records_crashing_runs() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("missing");
    let cfg = write_cfg(dir.path(), "c.cfg", &format!("steps = 1\ncorpus_dir = {}\n", corpus_dir.display()));
    let out = dir.path().join("abl");
    let o = dpi(&["ablate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 14);
    assert!(csv.contains("train error"));
}
