//! Running configs: one seed at a time, or a whole matrix with its CSV artifacts.

use std::path::Path;
use std::time::Instant;

use noisescale_core::metrics::{subject_consistency, temporal_flicker};
use noisescale_core::sampler::DenoiserFn;
use noisescale_core::search::{
    beam_search_generate, best_of_n, greedy_generate, predicted_calls, predicted_greedy_calls, TraceLog,
};
use noisescale_core::toyworld::{build_corpus, build_family, Corpus, MixtureDenoiser};
use noisescale_core::{Clip, NoiseSchedule, Video};
use rayon::prelude::*;

use crate::config::{Metric, Mode, RunConfig};
use crate::error::{HarnessError, Result};
use crate::pgm::export_frames;
use crate::report::{write_results_csv, write_timing_csv, write_trace_jsonl, MetricsReport, METRIC_SET};
use crate::tensor::save_tensor;

/// Reference corpus, schedule and one mixture denoiser per family.
pub struct World {
    pub corpus: Corpus<f64>,
    pub schedule: NoiseSchedule<f64>,
    models: Vec<MixtureDenoiser<f64>>,
    family: Option<usize>,
}

impl World {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        let schedule = cfg.schedule.build::<f64>()?;
        let (corpus, family) = match &cfg.subject {
            Some(subject) => {
                let clips = build_family(subject, &cfg.corpus, 0)?;
                (Corpus { clips, subjects: vec![*subject], variants: cfg.corpus.variants }, Some(0))
            }
            None => (build_corpus(&cfg.corpus)?, cfg.family),
        };
        let models = (0..corpus.families())
            .map(|f| MixtureDenoiser::new(corpus.family(f).to_vec()))
            .collect::<noisescale_core::Result<Vec<_>>>()?;
        Ok(Self { corpus, schedule, models, family })
    }

    /// The denoiser a run with `seed` is conditioned on.
    pub fn family_for(&self, seed: u64) -> usize {
        self.family.unwrap_or((seed % self.models.len() as u64) as usize)
    }

    pub fn model_for(&self, seed: u64) -> &MixtureDenoiser<f64> {
        &self.models[self.family_for(seed)]
    }
}

/// Key shared by configs that can reuse one [`World`].
fn world_key(cfg: &RunConfig) -> String {
    cfg.to_text()
        .split("\n\n")
        .filter(|block| ["[world]", "[schedule]", "[subject]"].iter().any(|h| block.trim_start().starts_with(h)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub struct RunOutput {
    pub video: Option<Video<f64>>,
    pub report: MetricsReport,
}

fn expected_calls(cfg: &RunConfig, schedule: &NoiseSchedule<f64>) -> u64 {
    let search = cfg.search_for(0);
    match cfg.mode {
        Mode::Search => predicted_calls(&search, schedule),
        Mode::Greedy => predicted_greedy_calls(&search, schedule),
        Mode::Bon => cfg.bon_n as u64 * predicted_greedy_calls(&search, schedule),
    }
}

fn generate(cfg: &RunConfig, world: &World, seed: u64, den: &DenoiserFn<'_, f64>, trace: &mut TraceLog) -> Result<Video<f64>> {
    cfg.validate()?;
    let search = cfg.search_for(seed);
    let video = match cfg.mode {
        Mode::Search => beam_search_generate(&search, den, &world.schedule, trace)?,
        Mode::Greedy => greedy_generate(&search, den, &world.schedule)?,
        Mode::Bon => best_of_n(&search, cfg.bon_n, den, &world.schedule)?.video,
    };
    Ok(video)
}

/// Runs `cfg` for one seed. Failures end up in the report, never as a panic or an `Err`.
pub fn run_one(cfg: &RunConfig, world: &World, seed: u64) -> RunOutput {
    let start = Instant::now();
    let den = DenoiserFn::new(world.model_for(seed));
    let mut trace = TraceLog::default();
    let result = generate(cfg, world, seed, &den, &mut trace).and_then(|video| {
        let mut values = [None, None];
        for &m in &cfg.metrics {
            let v = match m {
                Metric::SubjectConsistency => subject_consistency(&video)?,
                Metric::TemporalFlicker => temporal_flicker(&video)?,
            };
            if !v.is_finite() {
                return Err(HarnessError::Invalid(format!("{} is not finite", m.name())));
            }
            values[m as usize] = Some(v);
        }
        Ok((video, values))
    });
    let (video, values, error) = match result {
        Ok((video, values)) => (Some(video), values, None),
        Err(e) => (None, [None, None], Some(e.to_string())),
    };
    let report = MetricsReport {
        config: cfg.name.clone(),
        fingerprint: cfg.fingerprint(),
        seed,
        mode: cfg.mode,
        metric_set: METRIC_SET.into(),
        subject_consistency: values[0],
        temporal_flicker: values[1],
        calls: den.calls(),
        predicted_calls: expected_calls(cfg, &world.schedule),
        frames: video.as_ref().map_or(0, Clip::frames),
        wall_seconds: start.elapsed().as_secs_f64(),
        trace,
        error,
    };
    RunOutput { video, report }
}

fn write_artifacts(cfg: &RunConfig, dir: &Path, out: &RunOutput) -> Result<()> {
    let seed = out.report.seed;
    if cfg.export.trace && cfg.mode == Mode::Search {
        write_trace_jsonl(dir.join(format!("seed-{seed}.trace.jsonl")), &out.report.trace)?;
    }
    if let Some(video) = &out.video {
        if cfg.export.tensors {
            save_tensor(dir.join(format!("seed-{seed}.nbt")), video)?;
        }
        if cfg.export.frames {
            export_frames(video, dir.join(format!("seed-{seed}-frames")))?;
        }
    }
    Ok(())
}

/// Runs every `(cell, seed)` pair concurrently, then writes `results.csv` and `timing.csv`
/// under `out`. Cell `i` owns `out/cell-{i:03}/`. Reports come back in matrix-then-seed order.
pub fn run_benchmark(matrix: &[RunConfig], out: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    let out = out.as_ref();
    if matrix.is_empty() {
        return Err(HarnessError::Invalid("empty benchmark matrix".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;

    let mut worlds: Vec<(String, std::result::Result<World, String>)> = Vec::new();
    let mut cell_world = Vec::with_capacity(matrix.len());
    for cfg in matrix {
        let key = world_key(cfg);
        let idx = match worlds.iter().position(|(k, _)| *k == key) {
            Some(i) => i,
            None => {
                worlds.push((key, World::build(cfg).map_err(|e| e.to_string())));
                worlds.len() - 1
            }
        };
        cell_world.push(idx);
    }

    let mut jobs = Vec::new();
    for (i, cfg) in matrix.iter().enumerate() {
        let dir = out.join(format!("cell-{i:03}"));
        std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
        let cfg_path = dir.join("config.txt");
        std::fs::write(&cfg_path, cfg.to_text_without_out()).map_err(|e| HarnessError::io(&cfg_path, e))?;
        jobs.extend(cfg.seeds.iter().map(|&seed| (i, seed)));
    }

    let reports: Vec<MetricsReport> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let cfg = &matrix[i];
            match &worlds[cell_world[i]].1 {
                Ok(world) => {
                    let mut run = run_one(cfg, world, seed);
                    if let Err(e) = write_artifacts(cfg, &out.join(format!("cell-{i:03}")), &run) {
                        run.report.error.get_or_insert(e.to_string());
                    }
                    run.report
                }
                Err(e) => MetricsReport {
                    config: cfg.name.clone(),
                    fingerprint: cfg.fingerprint(),
                    seed,
                    mode: cfg.mode,
                    metric_set: METRIC_SET.into(),
                    subject_consistency: None,
                    temporal_flicker: None,
                    calls: 0,
                    predicted_calls: 0,
                    frames: 0,
                    wall_seconds: 0.0,
                    trace: TraceLog::default(),
                    error: Some(e.clone()),
                },
            }
        })
        .collect();

    write_results_csv(out.join("results.csv"), &reports)?;
    write_timing_csv(out.join("timing.csv"), &reports)?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::read_results_csv;

    fn tiny() -> RunConfig {
        RunConfig::parse(
            "[world]\nheight = 8\nwidth = 8\nfamilies = 2\nvariants = 3\nclip_frames = 16\nwindow = 2\npartitions = 2\n\
             [schedule]\nddim_steps = 4\n[search]\nbeam = 2\ncandidates = 3\nsteps = 3\n[run]\nname = tiny\nseeds = 0..2\n",
        )
        .unwrap()
    }

    #[test]
    fn calls_match_the_budget_law() {
        let cfg = tiny();
        let world = World::build(&cfg).unwrap();
        for mode in [Mode::Search, Mode::Greedy, Mode::Bon] {
            let run = run_one(&RunConfig { mode, ..cfg.clone() }, &world, 1);
            assert!(run.report.is_ok(), "{:?}", run.report.error);
            assert_eq!(run.report.calls, run.report.predicted_calls, "{mode:?}");
            assert_eq!(run.report.frames, 3);
        }
    }

    #[test]
    fn families_follow_the_seed() {
        let cfg = tiny();
        let world = World::build(&cfg).unwrap();
        assert_eq!(world.family_for(0), 0);
        assert_eq!(world.family_for(3), 1);
        let fixed = World::build(&RunConfig { family: Some(1), ..cfg.clone() }).unwrap();
        assert_eq!(fixed.family_for(0), 1);
    }

    #[test]
    fn failed_runs_do_not_stop_the_matrix() {
        let good = tiny();
        let mut bad = tiny();
        bad.name = "bad".into();
        bad.search.beam = 0;
        let dir = tempfile::tempdir().unwrap();
        let reports = run_benchmark(&[bad, good], dir.path()).unwrap();
        assert_eq!(reports.len(), 4);
        assert!(reports[..2].iter().all(|r| !r.is_ok()));
        assert!(reports[2..].iter().all(|r| r.is_ok()));
        let rows = read_results_csv(dir.path().join("results.csv")).unwrap();
        assert_eq!(rows.len(), 6);
        assert!(dir.path().join("cell-001/seed-1.nbt").exists());
        assert!(dir.path().join("cell-001/seed-1.trace.jsonl").exists());
    }

    #[test]
    fn empty_matrix_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(run_benchmark(&[], dir.path()).is_err());
    }
}
