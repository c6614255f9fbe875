use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use motiontok_cli::config::DataSource;
use motiontok_cli::RunConfig;

const TINY: &str = r#"
seed = 3

[data]
count = 6
clip_frames = 16
eval_fraction = 0.34

[data.synth]
frames = 32

[tokenizer]
codes = 16
d_half = 4
heads = 2
points = 2
grid = 8
feature_channels = 4

[tokenizer_train]
steps = 4
batch = 2
log_every = 2

[lm]
layers = 1
heads = 2
model_dim = 8
ffn_dim = 16
context_length = 1024
visual_channels = 4
pool_grid = 2
fusion_heads = 2
fusion_ffn_dim = 12
pose_heads = 2
pose_points = 2

[lm_train]
steps = 3
batch = 2
log_every = 1

[eval]
max_examples = 2
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_motiontok"));
    c.env_remove(motiontok_cli::THREADS_ENV);
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

/// A directory holding `tiny.toml`, generated data and a trained tokenizer.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();
    ok(d, &["gen-data", "--config", "tiny.toml", "--out", "data"]);
    ok(d, &["train-tokenizer", "--config", "tiny.toml", "--data", "data", "--out", "tok.mtck", "--log", "tok.jsonl"]);
    dir
}

#[test]
fn tiny_config_is_valid_and_round_trips() {
    let cfg = RunConfig::from_toml(TINY).unwrap();
    let again = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(again, cfg);
}

#[test]
fn show_config_prints_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = ok(dir.path(), &["show-config", "--config", "tiny.toml"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = RunConfig::from_toml(&text).unwrap();
    assert_eq!(cfg, RunConfig::from_toml(TINY).unwrap());
    assert!(text.contains(&cfg.hash().unwrap()));
}

#[test]
fn full_pipeline() {
    let dir = workspace();
    let d = dir.path();
    let log = fs::read_to_string(d.join("tok.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    ok(d, &["train-lm", "--config", "tiny.toml", "--data", "data", "--tokenizer", "tok.mtck", "--out", "lm.mtck", "--log", "lm.jsonl"]);
    assert_eq!(fs::read_to_string(d.join("lm.jsonl")).unwrap().lines().count(), 3);

    ok(d, &["tokenize", "--ckpt", "tok.mtck", "--in", "data/seq_00000.mskl", "--out", "tokens.json"]);
    let tokens: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tokens.json")).unwrap()).unwrap();
    assert_eq!(tokens["K"], 16);
    assert_eq!(tokens["windows"], 16);
    assert!(tokens["provenance"].as_str().unwrap().starts_with("tokenizer "));
    ok(d, &["detokenize", "--ckpt", "tok.mtck", "--in", "tokens.json", "--out", "recon.mskl"]);
    let recon = fs::read(d.join("recon.mskl")).unwrap();
    let f = motiontok::skeleton::read_mskl(&mut recon.as_slice()).unwrap();
    assert_eq!(f.sequence.frames(), 32);
    assert_eq!(f.sequence.space().as_str(), "pixel_rootrel");

    let out = ok(
        d,
        &[
            "eval", "--task", "pe", "--ckpts", "tok.mtck,lm.mtck", "--config", "tiny.toml", "--data", "data",
            "--report", "pe.json", "--transcripts", "pe.jsonl", "--codebook-report", "cb",
        ],
    );
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("pe.json")).unwrap()).unwrap();
    assert!(report["metrics"]["mpjpe"].as_f64().unwrap().is_finite());
    assert_eq!(report["samples"], 2);
    assert_eq!(report["config_hash"].as_str().unwrap(), tiny_with_data(d).hash().unwrap());
    assert!(String::from_utf8(out.stdout).unwrap().contains("mpjpe"));
    assert!(d.join("pe.txt").exists());
    let transcripts = motiontok::motion_lm::read_jsonl(&fs::read_to_string(d.join("pe.jsonl")).unwrap()).unwrap();
    assert_eq!(transcripts.len(), 2);
    assert!(transcripts.iter().all(|t| t.malformed_count == 0));
    for f in ["usage.csv", "cosine.csv", "spheres.csv"] {
        assert!(fs::read_to_string(d.join("cb").join(f)).unwrap().lines().count() > 1, "{f}");
    }
    let usage = fs::read_to_string(d.join("cb/usage.csv")).unwrap();
    assert_eq!(usage.lines().count(), 17);

    ok(d, &["eval", "--task", "mp", "--ckpts", "tok.mtck", "--config", "tiny.toml", "--predictor", "frozen", "--report", "mp.json"]);
    let mp: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("mp.json")).unwrap()).unwrap();
    assert!(mp["metrics"]["ms80"].as_f64().is_some());
    ok(d, &["eval", "--task", "mib", "--ckpts", "tok.mtck", "--config", "tiny.toml", "--predictor", "linear", "--report", "mib.json"]);
    ok(d, &["eval", "--task", "mib", "--ckpts", "tok.mtck,lm.mtck", "--config", "tiny.toml", "--report", "mib_lm.json"]);
}

#[test]
fn oracle_eval_matches_tokenize_error() {
    let dir = workspace();
    let d = dir.path();
    let single = d.join("one");
    fs::create_dir(&single).unwrap();
    // First clip-length crop of the first sequence, as the eval command sees it.
    let seq = motiontok_cli::data::read_sequence(&d.join("data/seq_00000.mskl")).unwrap();
    let crop = seq.slice_frames(0, 16).unwrap();
    let mut f = fs::File::create(single.join("a.mskl")).unwrap();
    motiontok::skeleton::write_mskl(&mut f, &crop, None).unwrap();
    drop(f);
    ok(d, &["eval", "--task", "pe", "--ckpts", "tok.mtck", "--config", "tiny.toml", "--data", "one", "--report", "o.json"]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("o.json")).unwrap()).unwrap();
    let (_, err) = motiontok_cli::commands::tokenize(&d.join("tok.mtck"), &single.join("a.mskl"), &d.join("t.json")).unwrap();
    assert!((report["metrics"]["mpjpe"].as_f64().unwrap() - err).abs() < 1e-9);
}

#[test]
fn seeded_commands_are_bit_reproducible() {
    let a = workspace();
    let b = workspace();
    for dir in [a.path(), b.path()] {
        ok(dir, &["train-lm", "--config", "tiny.toml", "--data", "data", "--tokenizer", "tok.mtck", "--out", "lm.mtck", "--tasks", "pe,mib"]);
    }
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    for f in ["data/seq_00000.mskl", "data/seq_00005.mskl", "tok.mtck", "tok.jsonl", "lm.mtck"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f} differs");
    }
    // A different seed changes the data.
    ok(a.path(), &["gen-data", "--config", "tiny.toml", "--out", "other", "--seed", "4"]);
    assert_ne!(read(a.path(), "other/seq_00000.mskl"), read(a.path(), "data/seq_00000.mskl"));
}

#[test]
fn gen_data_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen-data", "--out", "x", "--count", "2", "--frames", "4"]);
    let before = fs::read(d.join("x/seq_00001.mskl")).unwrap();
    let out = run(d, &["gen-data", "--out", "x", "--count", "2", "--frames", "4", "--seed", "9"]);
    assert_eq!(code(&out), 1);
    assert_eq!(fs::read(d.join("x/seq_00001.mskl")).unwrap(), before);
    ok(d, &["gen-data", "--out", "x", "--count", "2", "--frames", "4", "--seed", "9", "--force"]);
    assert_ne!(fs::read(d.join("x/seq_00001.mskl")).unwrap(), before);
}

#[test]
fn mismatched_codebook_size_is_refused() {
    let dir = workspace();
    let d = dir.path();
    fs::write(d.join("k8.toml"), TINY.replace("codes = 16", "codes = 8")).unwrap();
    let out = run(d, &["train-lm", "--config", "k8.toml", "--data", "data", "--tokenizer", "tok.mtck", "--out", "lm.mtck"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("K = 16"));
    assert!(!d.join("lm.mtck").exists());

    // A language model built for another K cannot be resumed or evaluated.
    ok(d, &["train-tokenizer", "--config", "k8.toml", "--data", "data", "--out", "tok8.mtck"]);
    ok(d, &["train-lm", "--config", "k8.toml", "--data", "data", "--tokenizer", "tok8.mtck", "--out", "lm8.mtck", "--tasks", "pe"]);
    let out = run(d, &["train-lm", "--config", "tiny.toml", "--data", "data", "--tokenizer", "tok.mtck", "--out", "x.mtck", "--resume", "lm8.mtck"]);
    assert_eq!(code(&out), 2);
    let out = run(d, &["eval", "--task", "pe", "--ckpts", "tok.mtck,lm8.mtck", "--config", "tiny.toml", "--report", "r.json"]);
    assert_eq!(code(&out), 2);
    // Token files from the other tokenizer are rejected as data errors.
    ok(d, &["tokenize", "--ckpt", "tok8.mtck", "--in", "data/seq_00000.mskl", "--out", "t8.json"]);
    let out = run(d, &["detokenize", "--ckpt", "tok.mtck", "--in", "t8.json", "--out", "r.mskl"]);
    assert_eq!(code(&out), 3);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY).unwrap();

    fs::write(d.join("unknown.toml"), format!("{TINY}\nlearning_rate = 1\n")).unwrap();
    assert_eq!(code(&run(d, &["show-config", "--config", "unknown.toml"])), 2);
    fs::write(d.join("files.toml"), "[data]\nsource = \"files\"\npaths = [\"nowhere\"]\n").unwrap();
    assert_eq!(code(&run(d, &["show-config", "--config", "files.toml"])), 2);
    assert_eq!(code(&run(d, &["gen-data"])), 2);
    assert_eq!(code(&run(d, &["eval", "--task", "xyz", "--ckpts", "a", "--report", "r"])), 2);
    let out = bin().current_dir(d).env(motiontok_cli::THREADS_ENV, "0").args(["show-config"]).output().unwrap();
    assert_eq!(code(&out), 2);
    let out = bin().current_dir(d).env(motiontok_cli::THREADS_ENV, "2").args(["show-config"]).output().unwrap();
    assert_eq!(code(&out), 0);

    fs::create_dir(d.join("bad")).unwrap();
    fs::write(d.join("bad/a.mskl"), b"MSKL garbage").unwrap();
    let out = run(d, &["train-tokenizer", "--config", "tiny.toml", "--data", "bad", "--out", "t.mtck"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(code(&run(d, &["train-tokenizer", "--config", "tiny.toml", "--data", "empty", "--out", "t.mtck"])), 3);
    assert_eq!(code(&run(d, &["tokenize", "--ckpt", "missing.mtck", "--in", "x", "--out", "y"])), 3);

    fs::write(d.join("nan.toml"), TINY.replace("steps = 4\n", "steps = 4\nlr = 1e300\nclip_norm = 1e300\n")).unwrap();
    ok(d, &["gen-data", "--config", "nan.toml", "--out", "data"]);
    let out = run(d, &["train-tokenizer", "--config", "nan.toml", "--data", "data", "--out", "t.mtck"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

/// The config `--config tiny.toml --data data` resolves to.
fn tiny_with_data(d: &Path) -> RunConfig {
    let mut c = RunConfig::load(&d.join("tiny.toml")).unwrap();
    c.data.source = DataSource::Files;
    c.data.paths = vec![PathBuf::from("data")];
    c
}

#[test]
fn provenance_is_recorded() {
    let dir = workspace();
    let d = dir.path();
    let mskl = fs::read(d.join("data/seq_00000.mskl")).unwrap();
    let f = motiontok::skeleton::read_mskl(&mut mskl.as_slice()).unwrap();
    assert!(f.provenance.unwrap().contains(" config "));
    let ckpt = fs::File::open(d.join("tok.mtck")).unwrap();
    let (_, prov) = motiontok::vgmt::Vgmt::load(&mut std::io::BufReader::new(ckpt)).unwrap();
    assert_eq!(prov.unwrap(), tiny_with_data(d).provenance().unwrap());
}
