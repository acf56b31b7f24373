//! Command-line pipeline: `gen`, `curate`, `pretext`, `eval`, `stats`.
//!
//! Each stage reads record files from its `--input` directories and writes
//! record files plus a `<stage>.manifest.json` into `--output`:
//!
//! | stage   | writes                                                   |
//! |---------|----------------------------------------------------------|
//! | gen     | `scenes.jsonl`, `oracle.jsonl`                           |
//! | curate  | `curated.jsonl`, `labels.jsonl`, `rejects.jsonl`         |
//! | pretext | `pretext.jsonl`                                          |
//! | eval    | `report.jsonl`, `report.txt`, optionally `losses.jsonl`  |
//! | stats   | `stats.txt`, `stats.json`, optionally `render/*.svg`     |

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::io::manifest::{CorpusManifest, FileEntry};
use crate::io::records::{read_records, write_records, Record, RejectRecord, ScenePredictions};
use crate::io::tracks::parse_trajectory_csv;
use crate::labeler::{label_scene, LabelConfig, PairReason, SceneLabels};
use crate::loss::{scene_losses, LossWeights, PairPretextPrediction, PretextHeads, PretextTask, SceneLossReport};
use crate::metrics::{evaluate, CamMode, EvalScene, MetricsConfig, PredictionSet, DEFAULT_MODES};
use crate::pretext::{
    closest_distance_bin, label_scene_pretext, PretextConfig, ScenePretext, CLOSEST_CLASSES,
    DIRECTION_CLASSES, ITYPE_CLASSES,
};
use crate::scenario::{generate_suite, SuiteConfig};
use crate::trajectory::{normalize_scene, Scene};

pub const SCENES_FILE: &str = "scenes.jsonl";
pub const ORACLE_FILE: &str = "oracle.jsonl";
pub const CURATED_FILE: &str = "curated.jsonl";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const REJECTS_FILE: &str = "rejects.jsonl";
pub const PRETEXT_FILE: &str = "pretext.jsonl";
pub const REPORT_FILE: &str = "report.jsonl";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const LOSSES_FILE: &str = "losses.jsonl";
pub const BASELINE_FILE: &str = "baseline.predictions.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub n: usize,
    pub noise_sigma: f64,
    pub n_bystanders: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { n: 600, noise_sigma: 0.05, n_bystanders: 2 }
    }
}

/// Every knob of a run. Loaded from an optional TOML file, then overridden
/// by flags. The thread count never affects outputs and is left out of
/// manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub gen: GenConfig,
    pub label: LabelConfig,
    pub pretext: PretextConfig,
    pub metrics: MetricsConfig,
    pub loss: LossWeights,
    pub tasks: Vec<PretextTask>,
    /// Modes of the built-in constant-velocity baseline.
    pub baseline_modes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            threads: None,
            gen: GenConfig::default(),
            label: LabelConfig::default(),
            pretext: PretextConfig::default(),
            metrics: MetricsConfig::default(),
            loss: LossWeights::default(),
            tasks: PretextTask::ALL.to_vec(),
            baseline_modes: DEFAULT_MODES,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.label.validate()?;
        self.pretext.validate()?;
        self.metrics.validate()?;
        self.loss.validate()?;
        if !(self.gen.noise_sigma.is_finite() && self.gen.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be finite and >= 0".into()));
        }
        if self.gen.n == 0 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        if self.baseline_modes == 0 {
            return Err(Error::InvalidConfig("baseline_modes must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        Ok(())
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or_default()
    }
}

#[derive(Debug, Parser)]
#[command(name = "trajint", version, about = "Interaction curation, pretext labels and interaction-aware metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic oracle-annotated corpus.
    Gen(GenArgs),
    /// Normalize scenes and label interacting pairs.
    Curate(CurateArgs),
    /// Derive pretext labels for retained pairs.
    Pretext(PretextArgs),
    /// Compute metrics (and optionally losses) for predictions.
    Eval(EvalArgs),
    /// Corpus statistics.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Input directory or file; may be repeated.
    #[arg(long, short)]
    pub input: Vec<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, short)]
    pub output: PathBuf,
    /// TOML file with defaults; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Generator seed, echoed into every manifest.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Do not echo reports to stdout.
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of scenes.
    #[arg(long)]
    pub n: Option<usize>,
    /// Gaussian position noise in meters.
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Non-interacting agents per scene.
    #[arg(long)]
    pub bystanders: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Interaction distance threshold in meters.
    #[arg(long)]
    pub d_th: Option<f64>,
    /// Minimum samples for a candidate future.
    #[arg(long)]
    pub min_traj_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PretextArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Closest-approach distance above which a pair is weak.
    #[arg(long)]
    pub eps_d: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Prediction records; without it a constant-velocity baseline is scored.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// argmax-confidence or best-of-k.
    #[arg(long, value_parser = parse_cam_mode)]
    pub cam_mode: Option<CamMode>,
    /// Headline i-min-FDE over strongly interacting agents only.
    #[arg(long)]
    pub strong_only: bool,
    /// Also score the loss kernels and write losses.jsonl.
    #[arg(long)]
    pub with_losses: bool,
    /// Pretext loss weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// CAM collision distance in meters.
    #[arg(long)]
    pub d_cam: Option<f64>,
    /// Miss threshold in meters.
    #[arg(long)]
    pub miss_threshold: Option<f64>,
    /// Comma-separated subset of rg,cd,dm,ti.
    #[arg(long, value_delimiter = ',', value_parser = parse_task)]
    pub pretext_tasks: Option<Vec<PretextTask>>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Also write one SVG per scene into `render/`.
    #[arg(long)]
    pub render: bool,
    #[arg(long, default_value_t = 20)]
    pub render_limit: usize,
}

fn parse_cam_mode(s: &str) -> std::result::Result<CamMode, String> {
    match s {
        "argmax-confidence" => Ok(CamMode::ArgmaxConfidence),
        "best-of-k" => Ok(CamMode::BestOfK),
        _ => Err("expected argmax-confidence or best-of-k".into()),
    }
}

fn parse_task(s: &str) -> std::result::Result<PretextTask, String> {
    PretextTask::parse(s).ok_or_else(|| "expected one of rg, cd, dm, ti".into())
}

fn base_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    Ok(cfg)
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(pool.install(f))
}

fn prepare_output(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// First existing `name` among the input paths: a directory containing it,
/// or the file itself.
fn find_input(inputs: &[PathBuf], names: &[&str]) -> Option<PathBuf> {
    for name in names {
        for p in inputs {
            if p.is_dir() {
                let c = p.join(name);
                if c.is_file() {
                    return Some(c);
                }
            } else if p.file_name().and_then(|n| n.to_str()) == Some(name) {
                return Some(p.clone());
            }
        }
    }
    None
}

fn require_inputs(common: &CommonArgs) -> Result<()> {
    if common.input.is_empty() {
        return Err(Error::InvalidConfig("--input is required".into()));
    }
    for p in &common.input {
        if !p.exists() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} does not exist", p.display()),
            )));
        }
    }
    Ok(())
}

fn finish<'a>(
    stage: &str,
    cfg: &RunConfig,
    dir: &Path,
    inputs: impl IntoIterator<Item = &'a Path>,
    outputs: &[&str],
) -> Result<()> {
    let inputs = inputs.into_iter().map(FileEntry::of).collect::<Result<Vec<_>>>()?;
    let files = outputs.iter().map(|n| FileEntry::of(&dir.join(n))).collect::<Result<Vec<_>>>()?;
    let path = CorpusManifest::new(stage, cfg.echo(), inputs, files).write(dir)?;
    info!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(n) = args.n {
        cfg.gen.n = n;
    }
    if let Some(s) = args.noise_sigma {
        cfg.gen.noise_sigma = s;
    }
    if let Some(b) = args.bystanders {
        cfg.gen.n_bystanders = b;
    }
    cfg.validate()?;
    let out = &args.common.output;
    prepare_output(out)?;
    let suite_cfg = SuiteConfig {
        n: cfg.gen.n,
        master_seed: cfg.seed,
        noise_sigma: cfg.gen.noise_sigma,
        n_bystanders: cfg.gen.n_bystanders,
    };
    let suite = with_pool(cfg.threads, || generate_suite(&suite_cfg))??;
    let (scenes, oracles): (Vec<_>, Vec<_>) = suite.into_iter().unzip();
    write_records(&out.join(SCENES_FILE), &scenes)?;
    write_records(&out.join(ORACLE_FILE), &oracles)?;
    info!("generated {} scenes", scenes.len());
    finish("gen", &cfg, out, [], &[SCENES_FILE, ORACLE_FILE])
}

enum Source {
    Records(PathBuf),
    Csv(PathBuf),
}

fn collect_sources(inputs: &[PathBuf]) -> Result<Vec<Source>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_file() {
            if p.extension().is_some_and(|e| e == "csv") {
                out.push(Source::Csv(p.clone()));
            } else {
                out.push(Source::Records(p.clone()));
            }
            continue;
        }
        let scenes = p.join(SCENES_FILE);
        if scenes.is_file() {
            out.push(Source::Records(scenes));
        }
        let mut csvs: Vec<PathBuf> = std::fs::read_dir(p)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| f.is_file() && f.extension().is_some_and(|e| e == "csv"))
            .collect();
        csvs.sort();
        out.extend(csvs.into_iter().map(Source::Csv));
    }
    Ok(out)
}

fn reject(source: &Path, line: Option<u64>, e: &Error) -> RejectRecord {
    RejectRecord {
        source: source.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        line,
        kind: e.kind().to_string(),
        reason: e.to_string(),
    }
}

pub fn cmd_curate(args: &CurateArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(d) = args.d_th {
        cfg.label.d_th = d;
    }
    if let Some(m) = args.min_traj_len {
        cfg.label.min_traj_len = m;
    }
    cfg.validate()?;
    require_inputs(&args.common)?;
    let out = &args.common.output;
    let sources = collect_sources(&args.common.input)?;
    let input_desc = args.common.input.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ");

    let (scenes, rejects) = with_pool(cfg.threads, || -> Result<(Vec<Scene>, Vec<RejectRecord>)> {
        let mut scenes = Vec::new();
        let mut rejects = Vec::new();
        let csvs: Vec<&PathBuf> = sources
            .iter()
            .filter_map(|s| match s {
                Source::Csv(p) => Some(p),
                Source::Records(_) => None,
            })
            .collect();
        let parsed: Vec<_> = csvs.par_iter().map(|p| parse_trajectory_csv(p)).collect();
        for s in &sources {
            if let Source::Records(p) = s {
                scenes.extend(read_records::<Scene>(p)?);
            }
        }
        for (path, res) in csvs.iter().zip(parsed) {
            match res {
                Ok(c) => {
                    rejects.extend(c.rejects.iter().map(|r| RejectRecord {
                        source: reject(path, None, &Error::EmptyCorpus).source,
                        line: Some(r.line),
                        kind: "MalformedRow".into(),
                        reason: r.reason.clone(),
                    }));
                    scenes.push(c.scene);
                }
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    rejects.push(reject(path, None, &e));
                }
            }
        }
        Ok((scenes, rejects))
    })??;

    let mut seen = BTreeSet::new();
    let mut unique = Vec::with_capacity(scenes.len());
    let mut rejects = rejects;
    for s in scenes {
        if seen.insert(s.scene_id.clone()) {
            unique.push(s);
        } else {
            rejects.push(RejectRecord {
                source: s.scene_id.clone(),
                line: None,
                kind: "DuplicateScene".into(),
                reason: format!("scene id {} appears more than once", s.scene_id),
            });
        }
    }
    unique.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));

    let label_cfg = cfg.label.clone();
    let results: Vec<std::result::Result<(Scene, SceneLabels), RejectRecord>> = with_pool(cfg.threads, || {
        unique
            .par_iter()
            .map(|s| match normalize_scene(s) {
                Ok(n) => {
                    let labels = label_scene(&n, &label_cfg);
                    Ok((n, labels))
                }
                Err(e) => Err(RejectRecord {
                    source: s.scene_id.clone(),
                    line: None,
                    kind: e.kind().into(),
                    reason: e.to_string(),
                }),
            })
            .collect()
    })?;
    let mut curated = Vec::new();
    let mut labels = Vec::new();
    for r in results {
        match r {
            Ok((s, l)) => {
                curated.push(s);
                labels.push(l);
            }
            Err(rj) => rejects.push(rj),
        }
    }

    prepare_output(out)?;
    write_records(&out.join(REJECTS_FILE), &rejects)?;
    if curated.is_empty() {
        return Err(Error::NoScenes(input_desc));
    }
    write_records(&out.join(CURATED_FILE), &curated)?;
    write_records(&out.join(LABELS_FILE), &labels)?;
    info!("curated {} scenes, {} rejects", curated.len(), rejects.len());
    let inputs: Vec<PathBuf> = sources
        .iter()
        .map(|s| match s {
            Source::Records(p) | Source::Csv(p) => p.clone(),
        })
        .collect();
    finish("curate", &cfg, out, inputs.iter().map(PathBuf::as_path), &[CURATED_FILE, LABELS_FILE, REJECTS_FILE])
}

fn load_scenes(inputs: &[PathBuf]) -> Result<(PathBuf, Vec<Scene>)> {
    let path = find_input(inputs, &[CURATED_FILE, SCENES_FILE]).ok_or_else(|| {
        Error::NoScenes(inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))
    })?;
    let scenes = read_records::<Scene>(&path)?;
    if scenes.is_empty() {
        return Err(Error::NoScenes(path.display().to_string()));
    }
    Ok((path, scenes))
}

fn load_labels(inputs: &[PathBuf], scenes: &[Scene], label_cfg: &LabelConfig) -> Result<(Option<PathBuf>, Vec<SceneLabels>)> {
    match find_input(inputs, &[LABELS_FILE]) {
        Some(p) => {
            let labels = read_records::<SceneLabels>(&p)?;
            Ok((Some(p), labels))
        }
        None => {
            warn!("no {LABELS_FILE} in inputs; labeling scenes on the fly");
            Ok((None, scenes.iter().map(|s| label_scene(s, label_cfg)).collect()))
        }
    }
}

fn index_by_scene<T: Record>(items: Vec<T>) -> BTreeMap<String, T> {
    items.into_iter().map(|t| (t.sort_key(), t)).collect()
}

pub fn cmd_pretext(args: &PretextArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(e) = args.eps_d {
        cfg.pretext.eps_d = e;
    }
    cfg.validate()?;
    require_inputs(&args.common)?;
    let out = &args.common.output;
    let (scene_path, scenes) = load_scenes(&args.common.input)?;
    let (label_path, labels) = load_labels(&args.common.input, &scenes, &cfg.label)?;
    let labels = index_by_scene(labels);
    let pcfg = cfg.pretext.clone();
    let lcfg = cfg.label.clone();
    let pretext: Vec<ScenePretext> = with_pool(cfg.threads, || {
        scenes
            .par_iter()
            .map(|s| match labels.get(&s.scene_id) {
                Some(l) => label_scene_pretext(s, l, &pcfg),
                None => label_scene_pretext(s, &label_scene(s, &lcfg), &pcfg),
            })
            .collect()
    })?;
    prepare_output(out)?;
    write_records(&out.join(PRETEXT_FILE), &pretext)?;
    let skipped: usize = pretext.iter().map(|p| p.skipped.len()).sum();
    info!("labeled {} scenes, {} pairs skipped", pretext.len(), skipped);
    let mut inputs = vec![scene_path];
    inputs.extend(label_path);
    finish("pretext", &cfg, out, inputs.iter().map(PathBuf::as_path), &[PRETEXT_FILE])
}

/// K-mode constant-velocity fan for every agent with at least two past
/// samples and a non-empty future. Mode 0 keeps the heading; the others
/// alternate ±0.08 rad steps. Confidences decay as `1 / (k + 1)`.
pub fn baseline_predictions(scene: &Scene, k_modes: usize) -> ScenePredictions {
    let mut agents = Vec::new();
    for (id, tracks) in &scene.agents {
        let pts = tracks.past.points();
        if pts.len() < 2 || tracks.future.is_empty() {
            continue;
        }
        let last = pts[pts.len() - 1].pos();
        let v = last - pts[pts.len() - 2].pos();
        let modes: Vec<Vec<Vec2>> = (0..k_modes)
            .map(|k| {
                let step = k.div_ceil(2) as f64 * 0.08;
                let angle = if k % 2 == 1 { -step } else { step };
                let vk = v.rotate(angle);
                tracks
                    .future
                    .points()
                    .iter()
                    .map(|p| last + vk * f64::from(p.t_index - pts[pts.len() - 1].t_index))
                    .collect()
            })
            .collect();
        let conf = (0..k_modes).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        agents.push(PredictionSet { agent_id: id.clone(), modes, confidences: conf });
    }
    ScenePredictions { scene_id: scene.scene_id.clone(), agents, pretext: Vec::new() }
}

/// Pretext head outputs that only look at the present: range gap equal to
/// the current distance and a one-hot closest-distance guess.
pub fn baseline_pretext(scene: &Scene, pretext: &ScenePretext, k_modes: usize) -> Vec<PairPretextPrediction> {
    let target = scene.target().present_position();
    pretext
        .labels
        .iter()
        .map(|l| {
            let other = scene.agents.get(&l.pair.other_id).and_then(|a| a.present_position());
            let d = match (target, other) {
                (Some(a), Some(b)) => a.dist(b),
                _ => 0.0,
            };
            let mut closest = vec![0.0; CLOSEST_CLASSES];
            closest[closest_distance_bin(d) as usize] = 1.0;
            let heads = PretextHeads {
                range_gap: d,
                closest_logits: closest,
                direction_logits: vec![0.0; DIRECTION_CLASSES],
                itype_logits: vec![0.0; ITYPE_CLASSES],
            };
            PairPretextPrediction { other_id: l.pair.other_id.clone(), modes: vec![heads; k_modes] }
        })
        .collect()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    if let Some(m) = args.cam_mode {
        cfg.metrics.cam_mode = m;
    }
    if args.strong_only {
        cfg.metrics.strong_only = true;
    }
    if let Some(l) = args.lambda {
        cfg.loss.lambda = l;
    }
    if let Some(d) = args.d_cam {
        cfg.metrics.d_cam = d;
    }
    if let Some(m) = args.miss_threshold {
        cfg.metrics.miss_threshold = m;
    }
    if let Some(t) = &args.pretext_tasks {
        cfg.tasks = t.clone();
    }
    cfg.validate()?;
    require_inputs(&args.common)?;
    let out = &args.common.output;
    let inputs = &args.common.input;
    let (scene_path, scenes) = load_scenes(inputs)?;
    let (label_path, labels) = load_labels(inputs, &scenes, &cfg.label)?;
    let labels = index_by_scene(labels);
    let pretext_path = find_input(inputs, &[PRETEXT_FILE]);
    let pretext = match &pretext_path {
        Some(p) => index_by_scene(read_records::<ScenePretext>(p)?),
        None => BTreeMap::new(),
    };
    let k = cfg.baseline_modes;
    let predictions: BTreeMap<String, ScenePredictions> = match &args.predictions {
        Some(p) => {
            let preds = read_records::<ScenePredictions>(p)?;
            for sp in &preds {
                for a in &sp.agents {
                    a.validate()?;
                }
            }
            index_by_scene(preds)
        }
        None => with_pool(cfg.threads, || {
            scenes
                .par_iter()
                .map(|s| {
                    let mut p = baseline_predictions(s, k);
                    if let Some(pt) = pretext.get(&s.scene_id) {
                        p.pretext = baseline_pretext(s, pt, k);
                    }
                    (s.scene_id.clone(), p)
                })
                .collect()
        })?,
    };
    let known: BTreeSet<&String> = scenes.iter().map(|s| &s.scene_id).collect();
    for id in predictions.keys().filter(|id| !known.contains(id)) {
        warn!("predictions for unknown scene {id} ignored");
    }

    let empty_labels = |s: &Scene| SceneLabels {
        scene_id: s.scene_id.clone(),
        target_id: s.target_id.clone(),
        intent: None,
        pairs: Vec::new(),
    };
    let eval_scenes: Vec<EvalScene> = scenes
        .iter()
        .map(|s| {
            let l = labels.get(&s.scene_id).cloned().unwrap_or_else(|| empty_labels(s));
            let preds = predictions.get(&s.scene_id).map(|p| p.agents.clone()).unwrap_or_default();
            EvalScene::from_parts(s, &l, pretext.get(&s.scene_id), preds)
        })
        .collect();
    let report = evaluate(&eval_scenes, &cfg.metrics)?;
    let mut text = report.to_key_value();

    prepare_output(out)?;
    let mut outputs = vec![REPORT_FILE, REPORT_TEXT_FILE];
    if args.predictions.is_none() {
        let preds: Vec<ScenePredictions> = predictions.values().cloned().collect();
        write_records(&out.join(BASELINE_FILE), &preds)?;
        outputs.push(BASELINE_FILE);
    }
    if args.with_losses {
        let mut losses = Vec::new();
        for s in &scenes {
            let Some(p) = predictions.get(&s.scene_id) else { continue };
            let Some(target_preds) = p.agents.iter().find(|a| a.agent_id == s.target_id) else { continue };
            let labels = pretext.get(&s.scene_id).map(|p| p.labels.as_slice()).unwrap_or(&[]);
            let r = scene_losses(&s.scene_id, target_preds, &s.target().future, labels, &p.pretext, &cfg.tasks, &cfg.loss)?;
            losses.push(r);
        }
        write_records(&out.join(LOSSES_FILE), &losses)?;
        outputs.push(LOSSES_FILE);
        text.push_str(&loss_summary(&losses, &cfg.tasks, &cfg.loss));
    }
    write_records(&out.join(REPORT_FILE), std::slice::from_ref(&report))?;
    std::fs::write(out.join(REPORT_TEXT_FILE), &text)?;
    if !args.common.quiet {
        print!("{text}");
    }

    let mut in_files = vec![scene_path];
    in_files.extend(label_path);
    in_files.extend(pretext_path);
    in_files.extend(args.predictions.clone());
    finish("eval", &cfg, out, in_files.iter().map(PathBuf::as_path), &outputs)
}

fn loss_summary(losses: &[SceneLossReport], tasks: &[PretextTask], w: &LossWeights) -> String {
    let n = losses.len().max(1) as f64;
    let mean = |f: &dyn Fn(&SceneLossReport) -> f64| losses.iter().map(f).sum::<f64>() / n;
    let mut s = String::new();
    let _ = writeln!(s, "loss_scenes={}", losses.len());
    let _ = writeln!(s, "loss_lambda={}", w.lambda);
    let _ = writeln!(
        s,
        "loss_tasks={}",
        tasks.iter().map(|t| t.short_name()).collect::<Vec<_>>().join(",")
    );
    let _ = writeln!(s, "loss_main={}", mean(&|r| r.main));
    for t in PretextTask::ALL {
        let _ = writeln!(s, "loss_pretext_{}={}", t.short_name(), mean(&|r| r.pretext.get(t)));
    }
    let _ = writeln!(s, "loss_pretext={}", mean(&|r| r.pretext_combined));
    let _ = writeln!(s, "loss_total={}", mean(&|r| r.total));
    s
}

#[derive(Debug, Default, Serialize)]
struct Stats {
    scenes: usize,
    agents: usize,
    interactive_scenes: usize,
    intents: BTreeMap<String, usize>,
    pairs_candidate: usize,
    pairs_retained: usize,
    pair_reasons: BTreeMap<String, usize>,
    pretext_pairs: usize,
    pretext_skipped: usize,
    itype: BTreeMap<String, usize>,
    closest_bins: BTreeMap<String, usize>,
    direction_bins: BTreeMap<String, usize>,
    lane_fallback: usize,
    truncated_pairs: usize,
}

impl Stats {
    fn to_key_value(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenes={}", self.scenes);
        let _ = writeln!(s, "agents={}", self.agents);
        let _ = writeln!(s, "interactive_scenes={}", self.interactive_scenes);
        for (k, v) in &self.intents {
            let _ = writeln!(s, "intent.{k}={v}");
        }
        let _ = writeln!(s, "pairs_candidate={}", self.pairs_candidate);
        let _ = writeln!(s, "pairs_retained={}", self.pairs_retained);
        for (k, v) in &self.pair_reasons {
            let _ = writeln!(s, "pair_reason.{k}={v}");
        }
        let _ = writeln!(s, "pretext_pairs={}", self.pretext_pairs);
        let _ = writeln!(s, "pretext_skipped={}", self.pretext_skipped);
        for (k, v) in &self.itype {
            let _ = writeln!(s, "itype.{k}={v}");
        }
        for (k, v) in &self.closest_bins {
            let _ = writeln!(s, "closest_bin.{k}={v}");
        }
        for (k, v) in &self.direction_bins {
            let _ = writeln!(s, "direction_bin.{k}={v}");
        }
        let _ = writeln!(s, "lane_fallback={}", self.lane_fallback);
        let _ = writeln!(s, "truncated_pairs={}", self.truncated_pairs);
        s
    }
}

fn debug_name(v: &impl std::fmt::Debug) -> String {
    format!("{v:?}")
}

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let cfg = base_config(&args.common)?;
    cfg.validate()?;
    require_inputs(&args.common)?;
    let out = &args.common.output;
    let inputs = &args.common.input;
    let (scene_path, scenes) = load_scenes(inputs)?;
    let (label_path, labels) = load_labels(inputs, &scenes, &cfg.label)?;
    let pretext_path = find_input(inputs, &[PRETEXT_FILE]);
    let pretext = match &pretext_path {
        Some(p) => read_records::<ScenePretext>(p)?,
        None => Vec::new(),
    };

    let mut st = Stats { scenes: scenes.len(), ..Stats::default() };
    st.agents = scenes.iter().map(|s| s.agents.len()).sum();
    for k in 0..CLOSEST_CLASSES {
        st.closest_bins.insert(k.to_string(), 0);
    }
    for k in 0..DIRECTION_CLASSES {
        st.direction_bins.insert(k.to_string(), 0);
    }
    for l in &labels {
        let intent = l.intent.map_or_else(|| "none".to_string(), |i| debug_name(&i));
        *st.intents.entry(intent).or_default() += 1;
        st.pairs_candidate += l.pairs.len();
        st.pairs_retained += l.retained().count();
        st.interactive_scenes += usize::from(l.is_interactive());
        for p in &l.pairs {
            let reason: PairReason = p.reason;
            *st.pair_reasons.entry(debug_name(&reason)).or_default() += 1;
        }
    }
    for p in &pretext {
        st.pretext_pairs += p.labels.len();
        st.pretext_skipped += p.skipped.len();
        for l in &p.labels {
            *st.itype.entry(debug_name(&l.itype.class_id)).or_default() += 1;
            *st.closest_bins.entry(l.closest.class_id.to_string()).or_default() += 1;
            *st.direction_bins.entry(l.direction.class_id.to_string()).or_default() += 1;
            st.lane_fallback += usize::from(l.itype.lane_fallback);
            st.truncated_pairs += usize::from(l.truncated > 0);
        }
    }

    prepare_output(out)?;
    let text = st.to_key_value();
    std::fs::write(out.join("stats.txt"), &text)?;
    let json = serde_json::to_string_pretty(&st).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    std::fs::write(out.join("stats.json"), json + "\n")?;
    if !args.common.quiet {
        print!("{text}");
    }
    if args.render {
        let dir = out.join("render");
        std::fs::create_dir_all(&dir)?;
        for s in scenes.iter().take(args.render_limit) {
            std::fs::write(dir.join(format!("{}.svg", file_safe(&s.scene_id))), render_svg(s))?;
        }
    }
    let mut in_files = vec![scene_path];
    in_files.extend(label_path);
    in_files.extend(pretext_path);
    finish("stats", &cfg, out, in_files.iter().map(PathBuf::as_path), &["stats.txt", "stats.json"])
}

fn file_safe(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

/// Static top-down view: lanes in grey, pasts dashed, futures solid, the
/// target in red. The view is fitted to the agents.
pub fn render_svg(scene: &Scene) -> String {
    let pts: Vec<Vec2> = scene
        .agents
        .values()
        .flat_map(|a| a.past.positions().chain(a.future.positions()))
        .collect();
    let (mut lo, mut hi) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in &pts {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    if pts.is_empty() {
        lo = Vec2::ZERO;
        hi = Vec2::new(1.0, 1.0);
    }
    let pad = 5.0;
    let (w, h) = (hi.x - lo.x + 2.0 * pad, hi.y - lo.y + 2.0 * pad);
    // SVG y grows downwards.
    let map = |p: Vec2| (p.x - lo.x + pad, hi.y - p.y + pad);
    let poly = |it: &mut dyn Iterator<Item = Vec2>| {
        it.map(|p| {
            let (x, y) = map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect::<Vec<_>>()
        .join(" ")
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w:.2} {h:.2}" width="{:.0}" height="{:.0}">"#,
        w * 8.0,
        h * 8.0
    );
    let _ = writeln!(s, "<title>{}</title>", xml_escape(&scene.scene_id));
    for lane in scene.lanes.lanes() {
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#bbb" stroke-width="0.3"/>"##,
            poly(&mut lane.centerline.iter().copied())
        );
    }
    for (id, a) in &scene.agents {
        let color = if *id == scene.target_id { "#d22" } else { "#246" };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="0.3" stroke-dasharray="0.8,0.5"/>"#,
            poly(&mut a.past.positions())
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="0.4"/>"#,
            poly(&mut a.future.positions())
        );
        if let Some(p) = a.present_position() {
            let (x, y) = map(p);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="0.7" fill="{color}"><title>{}</title></circle>"#, xml_escape(&id.0));
        }
    }
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Curate(a) => cmd_curate(a),
        Command::Pretext(a) => cmd_pretext(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Stats(a) => cmd_stats(a),
    }
}

/// Usage problems exit 2, data problems exit 1.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_) => 2,
        _ => 1,
    }
}

/// One line, `key=value` separated by spaces.
pub fn error_line(e: &Error) -> String {
    format!("error: kind={} msg={}", e.kind(), e.to_string().replace('\n', " "))
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}
