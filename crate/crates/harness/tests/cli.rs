use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[world]
height = 8
width = 8
families = 2
variants = 3
clip_frames = 24
window = 2
partitions = 2

[schedule]
ddim_steps = 4

[search]
beam = 2
candidates = 3
steps = 4

[run]
name = tiny
seeds = 0..2
";

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisescale")).args(args).current_dir(dir).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

#[test]
fn search_is_repeatable_byte_for_byte() {
    let dir = setup();
    for out in ["a", "b"] {
        ok(&cli(&["search", "--config", "tiny.cfg", "--out", out], dir.path()));
    }
    for file in ["results.csv", "cell-000/seed-1.nbt", "cell-000/seed-1.trace.jsonl", "cell-000/config.txt"] {
        let a = std::fs::read(dir.path().join("a").join(file)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn flags_override_the_file() {
    let dir = setup();
    ok(&cli(
        &["search", "--config", "tiny.cfg", "--beam-k", "1", "--cands-n", "2", "--reward", "local", "--mix", "1,1,0,0", "--seed", "5", "--out", "o"],
        dir.path(),
    ));
    let cfg = std::fs::read_to_string(dir.path().join("o/cell-000/config.txt")).unwrap();
    assert!(cfg.contains("beam = 1\n"));
    assert!(cfg.contains("candidates = 2\n"));
    assert!(cfg.contains("reward = local\n"));
    assert!(cfg.contains("mix = 0.5,0.5,0,0\n"));
    assert!(cfg.contains("seeds = 5\n"));
    assert!(dir.path().join("o/cell-000/seed-5.nbt").exists());
}

#[test]
fn generate_writes_greedy_rows() {
    let dir = setup();
    ok(&cli(&["generate", "--config", "tiny.cfg", "--out", "g"], dir.path()));
    let csv = std::fs::read_to_string(dir.path().join("g/results.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("kind,config,fingerprint,seed,mode,metric_set"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("run,") && l.contains(",greedy,analog,")).count(), 2);
    assert!(!dir.path().join("g/cell-000/seed-0.trace.jsonl").exists());
}

#[test]
fn benchmark_expands_the_sweep_and_inspect_reads_everything() {
    let dir = setup();
    let cfg = format!("{TINY}\n[sweep]\nsearch.beam = 1 ; 2\n");
    std::fs::write(dir.path().join("sweep.cfg"), cfg).unwrap();
    ok(&cli(&["benchmark", "--config", "sweep.cfg", "--out", "b"], dir.path()));
    let summary = ok(&cli(&["inspect", "b"], dir.path()));
    assert!(summary.contains("tiny[search.beam=1]"));
    assert!(summary.contains("tiny[search.beam=2]"));
    let tensor = ok(&cli(&["inspect", "b/cell-001/seed-0.nbt"], dir.path()));
    assert!(tensor.contains("frames 4 height 8 width 8"));
    let trace = ok(&cli(&["inspect", "b/cell-001/seed-0.trace.jsonl"], dir.path()));
    assert!(trace.contains("24 records over 4 steps"));
}

#[test]
fn corpus_subcommand_writes_every_clip() {
    let dir = setup();
    ok(&cli(&["corpus", "--config", "tiny.cfg", "--out", "c", "--frames"], dir.path()));
    let nbt = std::fs::read_dir(dir.path().join("c")).unwrap().filter(|e| {
        e.as_ref().unwrap().path().extension().is_some_and(|x| x == "nbt")
    });
    assert_eq!(nbt.count(), 6);
    assert!(dir.path().join("c/family-01-variant-02/frame-0023.pgm").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.cfg"), "[search]\nbeams = 2\n").unwrap();
    let out = cli(&["search", "--config", "bad.cfg"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    let out = cli(&["search", "--mix", "1,2"], dir.path());
    assert!(!out.status.success());
    std::fs::write(dir.path().join("junk.nbt"), b"JUNKJUNK").unwrap();
    let out = cli(&["inspect", "junk.nbt"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not an NBT1 tensor"));
}

#[test]
fn failed_runs_are_reported_not_fatal_to_the_rest() {
    let dir = setup();
    // A four-frame queue cannot fit a two-step schedule; the fifo cell fails, the chunk cell runs.
    let cfg = TINY.replace("ddim_steps = 4", "ddim_steps = 2") + "\n[sweep]\nsearch.paradigm = fifo ; chunk\n";
    std::fs::write(dir.path().join("mixed.cfg"), cfg).unwrap();
    let out = cli(&["benchmark", "--config", "mixed.cfg", "--out", "m"], dir.path());
    assert!(!out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("m/results.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| l.contains("error: ")).count(), 2);
    assert!(dir.path().join("m/cell-001/seed-1.nbt").exists());
}
