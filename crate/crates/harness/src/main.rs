use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use noisescale_core::metrics::{subject_consistency, temporal_flicker};
use noisescale_core::noisepool::{PoolMix, Strategy};
use noisescale_core::paradigms::Paradigm;
use noisescale_core::reward::RewardVariant;
use noisescale_harness::config::Overrides;
use noisescale_harness::pgm::export_frames;
use noisescale_harness::report::{read_results_csv, read_trace_jsonl, MetricsReport};
use noisescale_harness::tensor::{load_tensor, save_tensor};
use noisescale_harness::{run_benchmark, Mode, RunConfig, World};

#[derive(Parser)]
#[command(name = "noisescale", version, about = "Beam search over initial noises on a toy video world")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// One greedy video per seed.
    Generate(RunArgs),
    /// Beam search, one video and trace per seed.
    Search(RunArgs),
    /// Every cell of the config's sweep over every seed.
    Benchmark(RunArgs),
    /// Summarize a tensor, trace, results CSV or output directory.
    Inspect { path: PathBuf },
    /// Write the reference corpus as tensors.
    Corpus {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export PGM frames.
        #[arg(long)]
        frames: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    paradigm: Option<Paradigm>,
    #[arg(long = "beam-k")]
    beam_k: Option<usize>,
    #[arg(long = "cands-n")]
    cands_n: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    reward: Option<RewardVariant>,
    /// Strategy weights a1,a2,a3,a4.
    #[arg(long)]
    mix: Option<PoolMix>,
    #[arg(long = "fft-r")]
    fft_r: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "anchor-lag")]
    anchor_lag: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            paradigm: self.paradigm,
            beam: self.beam_k,
            candidates: self.cands_n,
            steps: self.steps,
            reward: self.reward,
            mix: self.mix,
            fft_r: self.fft_r,
            delta: self.delta,
            anchor_lag: self.anchor_lag,
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(RunConfig::default()),
    }
}

fn run(args: &RunArgs, mode: Option<Mode>) -> anyhow::Result<()> {
    let base = load_config(args.config.as_deref())?;
    let mut cells = if mode.is_some() {
        let mut single = base.clone();
        single.sweep.clear();
        vec![single]
    } else {
        base.expand()?
    };
    let over = args.overrides();
    for cell in &mut cells {
        over.apply(cell);
        if let Some(m) = mode {
            cell.mode = m;
        }
    }
    let out = cells[0].out.clone();
    let reports = run_benchmark(&cells, &out)?;
    print_reports(&reports);
    println!("wrote {}", out.join("results.csv").display());
    let failed = reports.iter().filter(|r| !r.is_ok()).count();
    if failed > 0 {
        bail!("{failed} of {} runs failed", reports.len());
    }
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

fn print_reports(reports: &[MetricsReport]) {
    println!("{:<40} {:>6} {:>10} {:>10} {:>8}  status", "config", "seed", "subj(an.)", "flick(an.)", "calls");
    for r in reports {
        println!(
            "{:<40} {:>6} {:>10} {:>10} {:>8}  {}",
            r.config,
            r.seed,
            fmt_opt(r.subject_consistency),
            fmt_opt(r.temporal_flicker),
            r.calls,
            r.error.as_deref().unwrap_or("ok")
        );
    }
}

fn inspect(path: &Path) -> anyhow::Result<()> {
    if path.is_dir() {
        return inspect(&path.join("results.csv"));
    }
    let name = path.to_string_lossy();
    if name.ends_with(".nbt") {
        let clip = load_tensor(path)?;
        let (lo, hi) = clip.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
        println!("frames {} height {} width {}", clip.frames(), clip.height(), clip.width());
        println!("range [{lo}, {hi}]");
        if clip.frames() >= 2 {
            println!("subject_consistency (analog) {:.6}", subject_consistency(&clip)?);
            println!("temporal_flicker (analog) {:.6}", temporal_flicker(&clip)?);
        }
    } else if name.ends_with(".jsonl") {
        let trace = read_trace_jsonl(path)?;
        let steps = trace.records.iter().map(|r| r.step + 1).max().unwrap_or(0);
        println!("{} records over {steps} steps", trace.records.len());
        let mut wins = [0usize; 4];
        let mut seen = [0usize; 4];
        for r in &trace.records {
            seen[r.strategy.index()] += 1;
            wins[r.strategy.index()] += r.selected as usize;
        }
        for s in Strategy::ALL {
            println!("{s}: {} candidates, {} selected", seen[s.index()], wins[s.index()]);
        }
        for step in 0..steps {
            let best = trace.step(step).filter(|r| r.selected).map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
            println!("step {step:>3} best score {best:.6}");
        }
    } else if name.ends_with(".csv") {
        let rows = read_results_csv(path)?;
        println!("{:<40} {:>5} {:>6} {:>18} {:>18}", "config", "runs", "failed", "subj(an.) mean±sd", "flick(an.) mean±sd");
        for r in rows.iter().filter(|r| r.kind == "summary") {
            let pair = |m: Option<f64>, s: Option<f64>| match (m, s) {
                (Some(m), Some(s)) => format!("{m:.4}±{s:.4}"),
                _ => "-".into(),
            };
            println!(
                "{:<40} {:>5} {:>6} {:>18} {:>18}",
                r.config,
                r.runs.unwrap_or(0),
                r.failed.unwrap_or(0),
                pair(r.subject_consistency, r.subject_consistency_std),
                pair(r.temporal_flicker, r.temporal_flicker_std)
            );
        }
    } else {
        bail!("don't know how to inspect {}", path.display());
    }
    Ok(())
}

fn corpus(config: Option<&Path>, out: Option<PathBuf>, frames: bool) -> anyhow::Result<()> {
    let cfg = load_config(config)?;
    let out = out.unwrap_or_else(|| cfg.out.join("corpus"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let world = World::build(&cfg)?;
    for f in 0..world.corpus.families() {
        for (v, clip) in world.corpus.family(f).iter().enumerate() {
            let stem = format!("family-{f:02}-variant-{v:02}");
            save_tensor(out.join(format!("{stem}.nbt")), clip)?;
            if frames {
                export_frames(clip, out.join(&stem))?;
            }
        }
    }
    println!("wrote {} clips to {}", world.corpus.clips.len(), out.display());
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Generate(a) => run(&a, Some(Mode::Greedy)),
        Cmd::Search(a) => run(&a, Some(Mode::Search)),
        Cmd::Benchmark(a) => run(&a, None),
        Cmd::Inspect { path } => inspect(&path),
        Cmd::Corpus { config, out, frames } => corpus(config.as_deref(), out, frames),
    }
}
