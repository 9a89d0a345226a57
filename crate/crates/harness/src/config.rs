//! Run configuration: flat `key = value` text with `[section]` headers.
//!
//! ```text
//! [search]
//! beam = 3
//! mix = 0.25,0.25,0.25,0.25
//!
//! [run]
//! seeds = 0..20
//!
//! [sweep]
//! search.beam = 1 ; 2 ; 3
//! ```
//!
//! Every key has a default. Unknown sections and keys are errors. A `[sweep]` entry lists
//! `;`-separated values for a qualified key; [`RunConfig::expand`] takes the cartesian product.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use noisescale_core::noisepool::{FftMode, PoolMix};
use noisescale_core::paradigms::Paradigm;
use noisescale_core::reward::RewardVariant;
use noisescale_core::search::SearchConfig;
use noisescale_core::toyworld::{CorpusSpec, ShapeKind, SubjectSpec};
use noisescale_core::ScheduleParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Search,
    Greedy,
    Bon,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "search" => Ok(Self::Search),
            "greedy" => Ok(Self::Greedy),
            "bon" => Ok(Self::Bon),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Search => "search",
            Self::Greedy => "greedy",
            Self::Bon => "bon",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SubjectConsistency,
    TemporalFlicker,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Self::SubjectConsistency, Self::TemporalFlicker];

    pub fn name(&self) -> &'static str {
        match self {
            Self::SubjectConsistency => "subject_consistency",
            Self::TemporalFlicker => "temporal_flicker",
        }
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExportFlags {
    pub tensors: bool,
    pub frames: bool,
    pub trace: bool,
}

impl Default for ExportFlags {
    fn default() -> Self {
        Self { tensors: true, frames: false, trace: true }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub name: String,
    pub mode: Mode,
    /// `seed`, `height` and `width` are taken from `seeds` and `corpus` at run time.
    pub search: SearchConfig,
    pub bon_n: usize,
    pub corpus: CorpusSpec,
    /// Family whose clips train the denoiser; `None` picks `seed % families`.
    pub family: Option<usize>,
    /// Replaces the corpus with one family built around this subject.
    pub subject: Option<SubjectSpec>,
    pub schedule: ScheduleParams,
    pub seeds: Vec<u64>,
    pub metrics: Vec<Metric>,
    pub out: PathBuf,
    pub export: ExportFlags,
    pub sweep: Vec<(String, Vec<String>)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let corpus = CorpusSpec::default();
        Self {
            name: "run".into(),
            mode: Mode::Search,
            search: SearchConfig {
                steps: 24,
                window: 4,
                partitions: 2,
                height: corpus.height,
                width: corpus.width,
                ..SearchConfig::default()
            },
            bon_n: 4,
            corpus,
            family: None,
            subject: None,
            schedule: ScheduleParams { total_steps: 1000, ddim_steps: 8, beta_min: 1e-4, beta_max: 0.01 },
            seeds: vec![0],
            metrics: Metric::ALL.to_vec(),
            out: PathBuf::from("out"),
            export: ExportFlags::default(),
            sweep: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("bad value {v:?}: {e}"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("bad boolean {other:?}")),
    }
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|p| parse(p.trim())).collect()
}

/// `a..b` (half-open) or a comma list.
pub fn parse_seeds(v: &str) -> std::result::Result<Vec<u64>, String> {
    let seeds = match v.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (parse(a.trim())?, parse(b.trim())?);
            (a..b).collect()
        }
        None => parse_list(v)?,
    };
    if seeds.is_empty() {
        return Err(format!("empty seed list {v:?}"));
    }
    Ok(seeds)
}

fn format_seeds(seeds: &[u64]) -> String {
    let contiguous = seeds.len() > 1 && seeds.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous {
        format!("{}..{}", seeds[0], seeds[seeds.len() - 1] + 1)
    } else {
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    }
}

fn shape_name(s: ShapeKind) -> &'static str {
    match s {
        ShapeKind::Square => "square",
        ShapeKind::Disc => "disc",
    }
}

impl RunConfig {
    /// Sets one qualified key such as `search.beam`.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let v = value.trim();
        let (section, name) = key.split_once('.').ok_or_else(|| format!("key {key:?} has no section"))?;
        if section == "subject" {
            let s = self.subject.get_or_insert_with(SubjectSpec::default);
            match name {
                "shape" => s.shape = parse(v)?,
                "size" => s.size = parse(v)?,
                "intensity" => s.intensity = parse(v)?,
                "row" => s.position.0 = parse(v)?,
                "col" => s.position.1 = parse(v)?,
                "vrow" => s.velocity.0 = parse(v)?,
                "vcol" => s.velocity.1 = parse(v)?,
                "background" => s.background = parse(v)?,
                _ => return Err(format!("unknown key {key:?}")),
            }
            return Ok(());
        }
        let s = &mut self.search;
        match (section, name) {
            ("run", "name") => self.name = v.to_string(),
            ("run", "mode") => self.mode = parse(v)?,
            ("run", "seeds") => self.seeds = parse_seeds(v)?,
            ("run", "metrics") => self.metrics = parse_list(v)?,
            ("run", "out") => self.out = PathBuf::from(v),
            ("run", "export_tensors") => self.export.tensors = parse_bool(v)?,
            ("run", "export_frames") => self.export.frames = parse_bool(v)?,
            ("run", "export_trace") => self.export.trace = parse_bool(v)?,
            ("run", "bon_n") => self.bon_n = parse(v)?,
            ("search", "paradigm") => s.paradigm = parse(v)?,
            ("search", "beam") => s.beam = parse(v)?,
            ("search", "candidates") => s.candidates = parse(v)?,
            ("search", "steps") => s.steps = parse(v)?,
            ("search", "reward") => s.reward = parse(v)?,
            ("search", "mix") => s.pool.mix = parse(v)?,
            ("search", "fft_r") => s.pool.fft_cutoff = parse(v)?,
            ("search", "fft_mode") => s.pool.fft_mode = parse(v)?,
            ("search", "delta") => s.pool.delta = parse(v)?,
            ("search", "anchor_lag") => s.anchor_lag = parse(v)?,
            ("search", "overlap") => s.overlap = parse(v)?,
            ("world", "height") => self.corpus.height = parse(v)?,
            ("world", "width") => self.corpus.width = parse(v)?,
            ("world", "window") => s.window = parse(v)?,
            ("world", "partitions") => s.partitions = parse(v)?,
            ("world", "families") => self.corpus.families = parse(v)?,
            ("world", "variants") => self.corpus.variants = parse(v)?,
            ("world", "clip_frames") => self.corpus.clip_frames = parse(v)?,
            ("world", "corpus_seed") => self.corpus.seed = parse(v)?,
            ("world", "family") => self.family = if v == "auto" { None } else { Some(parse(v)?) },
            ("schedule", "total_steps") => self.schedule.total_steps = parse(v)?,
            ("schedule", "ddim_steps") => self.schedule.ddim_steps = parse(v)?,
            ("schedule", "beta_min") => self.schedule.beta_min = parse(v)?,
            ("schedule", "beta_max") => self.schedule.beta_max = parse(v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        self.search.height = self.corpus.height;
        self.search.width = self.corpus.width;
        Ok(())
    }

    /// Every key except the sweep, in canonical order and formatting.
    fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let s = &self.search;
        let w = s.pool.mix.0;
        let mut e = vec![
            ("run", "name", self.name.clone()),
            ("run", "mode", self.mode.name().to_string()),
            ("run", "seeds", format_seeds(&self.seeds)),
            ("run", "metrics", self.metrics.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")),
            ("run", "out", self.out.display().to_string()),
            ("run", "export_tensors", self.export.tensors.to_string()),
            ("run", "export_frames", self.export.frames.to_string()),
            ("run", "export_trace", self.export.trace.to_string()),
            ("run", "bon_n", self.bon_n.to_string()),
            ("search", "paradigm", s.paradigm.name().to_string()),
            ("search", "beam", s.beam.to_string()),
            ("search", "candidates", s.candidates.to_string()),
            ("search", "steps", s.steps.to_string()),
            ("search", "reward", s.reward.name().to_string()),
            ("search", "mix", format!("{},{},{},{}", w[0], w[1], w[2], w[3])),
            ("search", "fft_r", s.pool.fft_cutoff.to_string()),
            (
                "search",
                "fft_mode",
                match s.pool.fft_mode {
                    FftMode::Spatial => "2d",
                    FftMode::Spatiotemporal => "3d",
                }
                .to_string(),
            ),
            ("search", "delta", s.pool.delta.to_string()),
            ("search", "anchor_lag", s.anchor_lag.to_string()),
            ("search", "overlap", s.overlap.to_string()),
            ("world", "height", self.corpus.height.to_string()),
            ("world", "width", self.corpus.width.to_string()),
            ("world", "window", s.window.to_string()),
            ("world", "partitions", s.partitions.to_string()),
            ("world", "families", self.corpus.families.to_string()),
            ("world", "variants", self.corpus.variants.to_string()),
            ("world", "clip_frames", self.corpus.clip_frames.to_string()),
            ("world", "corpus_seed", self.corpus.seed.to_string()),
            ("world", "family", self.family.map_or("auto".to_string(), |f| f.to_string())),
            ("schedule", "total_steps", self.schedule.total_steps.to_string()),
            ("schedule", "ddim_steps", self.schedule.ddim_steps.to_string()),
            ("schedule", "beta_min", self.schedule.beta_min.to_string()),
            ("schedule", "beta_max", self.schedule.beta_max.to_string()),
        ];
        if let Some(sub) = &self.subject {
            e.extend([
                ("subject", "shape", shape_name(sub.shape).to_string()),
                ("subject", "size", sub.size.to_string()),
                ("subject", "intensity", sub.intensity.to_string()),
                ("subject", "row", sub.position.0.to_string()),
                ("subject", "col", sub.position.1.to_string()),
                ("subject", "vrow", sub.velocity.0.to_string()),
                ("subject", "vcol", sub.velocity.1.to_string()),
                ("subject", "background", sub.background.to_string()),
            ]);
        }
        e
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !["run", "search", "world", "schedule", "subject", "sweep"].contains(&name) {
                    return Err(HarnessError::config(line_no, format!("unknown section [{name}]")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| HarnessError::config(line_no, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            let section = section.as_deref().ok_or_else(|| HarnessError::config(line_no, "key outside a section"))?;
            if section == "sweep" {
                let values: Vec<String> = value.split(';').map(|v| v.trim().to_string()).collect();
                for v in &values {
                    cfg.clone().set(key, v).map_err(|e| HarnessError::config(line_no, e))?;
                }
                if cfg.sweep.iter().any(|(k, _)| k == key) {
                    return Err(HarnessError::config(line_no, format!("{key} swept twice")));
                }
                cfg.sweep.push((key.to_string(), values));
            } else {
                cfg.set(&format!("{section}.{key}"), value).map_err(|e| HarnessError::config(line_no, e))?;
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text; `parse(to_text())` reproduces the config.
    pub fn to_text(&self) -> String {
        self.render(true)
    }

    /// Canonical text without `run.out`, for copies stored inside the output directory.
    pub fn to_text_without_out(&self) -> String {
        self.render(false)
    }

    fn render(&self, with_out: bool) -> String {
        let mut out = String::new();
        let mut current = "";
        for (section, key, value) in self.entries() {
            if !with_out && section == "run" && key == "out" {
                continue;
            }
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "[{section}]");
                current = section;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        if !self.sweep.is_empty() {
            out.push_str("\n[sweep]\n");
            for (key, values) in &self.sweep {
                let _ = writeln!(out, "{key} = {}", values.join(" ; "));
            }
        }
        out
    }

    /// SHA-256 over the canonical text of everything that affects results. Output location and
    /// export flags are left out.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (section, key, value) in self.entries() {
            if section == "run" && (key == "out" || key.starts_with("export_")) {
                continue;
            }
            h.update(format!("{section}.{key}={value}\n").as_bytes());
        }
        for (key, values) in &self.sweep {
            h.update(format!("sweep.{key}={}\n", values.join(";")).as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Cartesian product of the sweep, first key slowest. Cells are named `name[k=v,...]`.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        let mut base = self.clone();
        base.sweep.clear();
        let mut cells = vec![(base, Vec::<String>::new())];
        for (key, values) in &self.sweep {
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for (cell, tags) in &cells {
                for v in values {
                    let mut c = cell.clone();
                    c.set(key, v).map_err(|e| HarnessError::config(0, e))?;
                    let mut t = tags.clone();
                    t.push(format!("{key}={v}"));
                    next.push((c, t));
                }
            }
            cells = next;
        }
        Ok(cells
            .into_iter()
            .map(|(mut c, tags)| {
                if !tags.is_empty() {
                    c.name = format!("{}[{}]", c.name, tags.join(","));
                }
                c
            })
            .collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Invalid(m));
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if self.metrics.is_empty() {
            return bad("no metrics".into());
        }
        if self.mode == Mode::Bon && self.bon_n == 0 {
            return bad("bon_n must be at least 1".into());
        }
        if let Some(f) = self.family.filter(|&f| f >= self.corpus.families) {
            return bad(format!("family {f} outside a corpus of {} families", self.corpus.families));
        }
        if self.name.is_empty() || self.name.contains('\n') {
            return bad("run name must be a non-empty single line".into());
        }
        let schedule = self.schedule.build::<f64>()?;
        self.search.validate(&schedule)?;
        Ok(())
    }

    /// Search settings for one seed.
    pub fn search_for(&self, seed: u64) -> SearchConfig {
        SearchConfig { seed, height: self.corpus.height, width: self.corpus.width, ..self.search }
    }
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub paradigm: Option<Paradigm>,
    pub beam: Option<usize>,
    pub candidates: Option<usize>,
    pub steps: Option<usize>,
    pub reward: Option<RewardVariant>,
    pub mix: Option<PoolMix>,
    pub fft_r: Option<f64>,
    pub delta: Option<f64>,
    pub anchor_lag: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        let s = &mut cfg.search;
        if let Some(v) = self.paradigm {
            s.paradigm = v;
        }
        if let Some(v) = self.beam {
            s.beam = v;
        }
        if let Some(v) = self.candidates {
            s.candidates = v;
        }
        if let Some(v) = self.steps {
            s.steps = v;
        }
        if let Some(v) = self.reward {
            s.reward = v;
        }
        if let Some(v) = self.mix {
            s.pool.mix = v;
        }
        if let Some(v) = self.fft_r {
            s.pool.fft_cutoff = v;
        }
        if let Some(v) = self.delta {
            s.pool.delta = v;
        }
        if let Some(v) = self.anchor_lag {
            s.anchor_lag = v;
        }
        if let Some(v) = self.seed {
            cfg.seeds = vec![v];
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_text_roundtrips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn sections_keys_and_comments() {
        let cfg = RunConfig::parse(
            "# header\n[search]\nbeam = 3  # inline\nmix = 1,0,0,1\n\n[run]\nseeds = 4..7\n[subject]\nsize = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.search.beam, 3);
        assert_eq!(cfg.search.pool.mix.0, [0.5, 0.0, 0.0, 0.5]);
        assert_eq!(cfg.seeds, vec![4, 5, 6]);
        assert_eq!(cfg.subject.unwrap().size, 2);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        for text in ["[search]\nbeem = 2\n", "[nope]\n", "beam = 2\n", "[search]\nbeam 2\n", "[search]\nbeam = two\n"] {
            assert!(matches!(RunConfig::parse(text), Err(HarnessError::Config { .. })), "{text:?}");
        }
        match RunConfig::parse("[run]\nname = a\n\n[world]\nheigth = 3\n") {
            Err(HarnessError::Config { line, .. }) => assert_eq!(line, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_expands_in_order() {
        let cfg = RunConfig::parse("[run]\nname = s\n[sweep]\nsearch.beam = 1;2;3\nsearch.reward = full ; local\n").unwrap();
        let cells = cfg.expand().unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].search.beam, 1);
        assert_eq!(cells[1].search.reward, RewardVariant::Local);
        assert_eq!(cells[5].search.beam, 3);
        assert_eq!(cells[3].name, "s[search.beam=2,search.reward=local]");
        assert!(cells.iter().all(|c| c.sweep.is_empty()));
        assert!(RunConfig::parse("[sweep]\nsearch.beam = 1;x\n").is_err());
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn fingerprint_tracks_results_not_paths() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        b.export.frames = true;
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.search.beam = 3;
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
        let stored = RunConfig::parse(&b.to_text_without_out()).unwrap();
        assert_eq!(stored.fingerprint(), b.fingerprint());
        assert!(!b.to_text_without_out().contains("elsewhere"));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::parse("[search]\nbeam = 3\n[run]\nseeds = 0..5\n").unwrap();
        Overrides { beam: Some(1), seed: Some(9), ..Default::default() }.apply(&mut cfg);
        assert_eq!(cfg.search.beam, 1);
        assert_eq!(cfg.seeds, vec![9]);
    }

    #[test]
    fn validation_catches_bad_worlds() {
        let mut cfg = RunConfig::default();
        cfg.schedule.ddim_steps = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.family = Some(99);
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #[test]
        fn canonical_text_roundtrips(
            beam in 1usize..6,
            n in 1usize..9,
            w in proptest::array::uniform4(0.0f64..4.0),
            delta in 0.0f64..0.99,
            seeds in proptest::collection::vec(0u64..1000, 1..6),
            bmax in 0.001f64..0.05,
        ) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let mut cfg = RunConfig::default();
            cfg.search.beam = beam;
            cfg.search.candidates = n;
            cfg.search.pool.mix = PoolMix::new(w).unwrap();
            cfg.search.pool.delta = delta;
            cfg.seeds = seeds;
            cfg.schedule.beta_max = bmax;
            let back = RunConfig::parse(&cfg.to_text()).unwrap();
            prop_assert_eq!(back.fingerprint(), cfg.fingerprint());
            prop_assert_eq!(back, cfg);
        }
    }
}
