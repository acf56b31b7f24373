//! Forecast metrics: min-FDE, miss rate, interactive / non-interactive
//! min-FDE and the collision awareness metric (CAM).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::labeler::SceneLabels;
use crate::pretext::{InteractionType, ScenePretext};
use crate::trajectory::{AgentId, Scene, Trajectory};

pub const DEFAULT_MODES: usize = 6;

/// K candidate futures for one agent. `modes[k][s]` predicts the agent's
/// `s`-th ground-truth future sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub agent_id: AgentId,
    pub modes: Vec<Vec<Vec2>>,
    pub confidences: Vec<f64>,
}

impl PredictionSet {
    pub fn new(agent_id: AgentId, modes: Vec<Vec<Vec2>>, confidences: Vec<f64>) -> Result<Self> {
        let set = Self { agent_id, modes, confidences };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::LengthMismatch { expected: 1, got: 0 });
        }
        if self.confidences.len() != self.modes.len() {
            return Err(Error::LengthMismatch { expected: self.modes.len(), got: self.confidences.len() });
        }
        if self.confidences.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidSpec(format!(
                "confidences of {} must be finite and non-negative",
                self.agent_id
            )));
        }
        for mode in &self.modes {
            if let Some(k) = mode.iter().position(|p| !p.is_finite()) {
                return Err(Error::NonFinite { index: k });
            }
        }
        Ok(())
    }

    /// Mode with the highest confidence; ties resolve to the lowest index.
    pub fn argmax_confidence(&self) -> usize {
        let mut best = 0;
        for (k, &c) in self.confidences.iter().enumerate() {
            if c > self.confidences[best] {
                best = k;
            }
        }
        best
    }

    fn endpoint_errors<'a>(&'a self, gt: &'a Trajectory) -> Result<impl Iterator<Item = f64> + 'a> {
        let end = gt.points().last().ok_or(Error::EmptyTrajectory)?.pos();
        for mode in &self.modes {
            if mode.len() != gt.len() {
                return Err(Error::LengthMismatch { expected: gt.len(), got: mode.len() });
            }
        }
        Ok(self.modes.iter().map(move |m| m[m.len() - 1].dist(end)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CamMode {
    /// One trajectory per agent: its highest-confidence mode.
    #[default]
    ArgmaxConfidence,
    /// A pair is counted only if every combination of the two agents' modes
    /// predicts the near-collision.
    BestOfK,
}

impl CamMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CamMode::ArgmaxConfidence => "argmax-confidence",
            CamMode::BestOfK => "best-of-k",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub miss_threshold: f64,
    pub d_cam: f64,
    pub cam_mode: CamMode,
    /// Report the strong-only interactive min-FDE as the headline `i_min_fde`.
    pub strong_only: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { miss_threshold: 2.0, d_cam: 2.0, cam_mode: CamMode::ArgmaxConfidence, strong_only: false }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("miss_threshold", self.miss_threshold), ("d_cam", self.d_cam)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Minimum endpoint error over the modes.
pub fn min_fde(preds: &PredictionSet, gt: &Trajectory) -> Result<f64> {
    Ok(preds.endpoint_errors(gt)?.fold(f64::INFINITY, f64::min))
}

/// Fraction of entries strictly above `miss_threshold`.
pub fn miss_rate(min_fdes: &[f64], miss_threshold: f64) -> Result<f64> {
    if min_fdes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let misses = min_fdes.iter().filter(|&&d| d > miss_threshold).count();
    Ok(misses as f64 / min_fdes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractingAgent {
    pub agent_id: AgentId,
    /// `None` when no interaction-type label is available.
    pub itype: Option<InteractionType>,
}

/// Everything the metrics need for one scene, in a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalScene {
    pub scene_id: String,
    pub target_id: AgentId,
    pub gt: BTreeMap<AgentId, Trajectory>,
    pub preds: BTreeMap<AgentId, PredictionSet>,
    /// Retained interacting agents of the target.
    pub interacting: Vec<InteractingAgent>,
}

impl EvalScene {
    pub fn from_parts(
        scene: &Scene,
        labels: &SceneLabels,
        pretext: Option<&ScenePretext>,
        preds: impl IntoIterator<Item = PredictionSet>,
    ) -> Self {
        let itypes: BTreeMap<&AgentId, InteractionType> = pretext
            .map(|p| p.labels.iter().map(|l| (&l.pair.other_id, l.itype.class_id)).collect())
            .unwrap_or_default();
        EvalScene {
            scene_id: scene.scene_id.clone(),
            target_id: scene.target_id.clone(),
            gt: scene.agents.iter().map(|(id, t)| (id.clone(), t.future.clone())).collect(),
            preds: preds.into_iter().map(|p| (p.agent_id.clone(), p)).collect(),
            interacting: labels
                .retained()
                .map(|p| InteractingAgent {
                    agent_id: p.other_id.clone(),
                    itype: itypes.get(&p.other_id).copied(),
                })
                .collect(),
        }
    }

    pub fn is_interactive(&self) -> bool {
        !self.interacting.is_empty()
    }

    fn agent_min_fde(&self, id: &AgentId) -> Result<f64> {
        let preds = self.preds.get(id).ok_or_else(|| Error::MissingPrediction(id.0.clone()))?;
        let gt = self.gt.get(id).ok_or_else(|| Error::UnknownAgent(id.0.clone()))?;
        min_fde(preds, gt)
    }
}

/// Mean with the number of contributing and skipped agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdeSummary {
    pub mean: f64,
    pub count: usize,
    pub missing: usize,
}

fn mean_over<'a>(
    scenes: &'a [EvalScene],
    agents: impl Fn(&'a EvalScene) -> Vec<&'a AgentId>,
) -> Result<FdeSummary> {
    let (mut sum, mut count, mut missing) = (0.0, 0usize, 0usize);
    for s in scenes {
        for id in agents(s) {
            match s.agent_min_fde(id) {
                Ok(d) => {
                    sum += d;
                    count += 1;
                }
                Err(Error::MissingPrediction(_)) => missing += 1,
                Err(e) => return Err(e),
            }
        }
    }
    if missing > 0 {
        log::warn!("{missing} agents skipped for missing predictions");
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(FdeSummary { mean: sum / count as f64, count, missing })
}

/// Target-agent min-FDE over every scene.
pub fn target_min_fde(scenes: &[EvalScene]) -> Result<FdeSummary> {
    mean_over(scenes, |s| vec![&s.target_id])
}

/// Mean min-FDE over the retained interacting agents of every scene;
/// `strong_only` drops agents whose interaction type is weak or unknown.
pub fn i_min_fde(scenes: &[EvalScene], strong_only: bool) -> Result<FdeSummary> {
    mean_over(scenes, |s| {
        s.interacting
            .iter()
            .filter(|a| !strong_only || a.itype.is_some_and(InteractionType::is_strong))
            .map(|a| &a.agent_id)
            .collect()
    })
}

/// Target min-FDE over scenes without retained interacting agents.
pub fn ni_min_fde(scenes: &[EvalScene]) -> Result<FdeSummary> {
    mean_over(scenes, |s| if s.is_interactive() { vec![] } else { vec![&s.target_id] })
}

fn mode_at(mode: &[Vec2], gt: &Trajectory, t: i32) -> Option<Vec2> {
    let k = t.checked_sub(gt.first_index()?)?;
    mode.get(usize::try_from(k).ok()?).copied()
}

/// Number of (timestep, unordered agent pair) events where the prediction
/// puts the pair closer than `d_cam` while the ground truth does not.
pub fn cam_count(scene: &EvalScene, cfg: &MetricsConfig) -> Result<u64> {
    let agents: Vec<(&PredictionSet, &Trajectory)> = scene
        .preds
        .iter()
        .filter_map(|(id, p)| Some((p, scene.gt.get(id)?)))
        .collect();
    for (p, gt) in &agents {
        for mode in &p.modes {
            if mode.len() != gt.len() {
                return Err(Error::LengthMismatch { expected: gt.len(), got: mode.len() });
            }
        }
    }
    let mut count = 0u64;
    for i in 0..agents.len() {
        for j in i + 1..agents.len() {
            let (pi, gi) = agents[i];
            let (pj, gj) = agents[j];
            let (Some(lo), Some(hi)) = (
                gi.first_index().zip(gj.first_index()).map(|(a, b)| a.max(b)),
                gi.last_index().zip(gj.last_index()).map(|(a, b)| a.min(b)),
            ) else {
                continue;
            };
            for t in lo..=hi {
                let (Some(a), Some(b)) = (gi.at(t), gj.at(t)) else { continue };
                if a.dist(b) < cfg.d_cam {
                    continue;
                }
                let predicted = match cfg.cam_mode {
                    CamMode::ArgmaxConfidence => {
                        let ma = &pi.modes[pi.argmax_confidence()];
                        let mb = &pj.modes[pj.argmax_confidence()];
                        match (mode_at(ma, gi, t), mode_at(mb, gj, t)) {
                            (Some(x), Some(y)) => x.dist(y) < cfg.d_cam,
                            _ => false,
                        }
                    }
                    CamMode::BestOfK => pi.modes.iter().all(|ma| {
                        pj.modes.iter().all(|mb| match (mode_at(ma, gi, t), mode_at(mb, gj, t)) {
                            (Some(x), Some(y)) => x.dist(y) < cfg.d_cam,
                            _ => false,
                        })
                    }),
                };
                if predicted {
                    count += 1;
                }
            }
        }
    }
    Ok(count)
}

/// Total false near-collision count divided by the number of scenes.
pub fn cam(scenes: &[EvalScene], cfg: &MetricsConfig) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut total = 0u64;
    for s in scenes {
        total += cam_count(s, cfg)?;
    }
    Ok(total as f64 / scenes.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_scenes: usize,
    pub n_targets: usize,
    pub min_fde: f64,
    pub mr: f64,
    pub i_min_fde: Option<f64>,
    pub i_min_fde_agents: usize,
    pub i_min_fde_strong: Option<f64>,
    pub i_min_fde_strong_agents: usize,
    pub ni_min_fde: Option<f64>,
    pub ni_scenes: usize,
    pub cam: f64,
    pub cam_mode: CamMode,
    pub strong_only: bool,
    pub missing_predictions: usize,
}

fn optional(r: Result<FdeSummary>) -> Result<Option<FdeSummary>> {
    match r {
        Ok(s) => Ok(Some(s)),
        Err(Error::EmptyCorpus) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn evaluate(scenes: &[EvalScene], cfg: &MetricsConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let mut target_fdes = Vec::with_capacity(scenes.len());
    let mut missing = 0;
    for s in scenes {
        match s.agent_min_fde(&s.target_id) {
            Ok(d) => target_fdes.push(d),
            Err(Error::MissingPrediction(_)) => missing += 1,
            Err(e) => return Err(e),
        }
    }
    if target_fdes.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let all = optional(i_min_fde(scenes, false))?;
    let strong = optional(i_min_fde(scenes, true))?;
    let ni = optional(ni_min_fde(scenes))?;
    let headline = if cfg.strong_only { strong } else { all };
    Ok(MetricsReport {
        n_scenes: scenes.len(),
        n_targets: target_fdes.len(),
        min_fde: target_fdes.iter().sum::<f64>() / target_fdes.len() as f64,
        mr: miss_rate(&target_fdes, cfg.miss_threshold)?,
        i_min_fde: headline.map(|s| s.mean),
        i_min_fde_agents: headline.map_or(0, |s| s.count),
        i_min_fde_strong: strong.map(|s| s.mean),
        i_min_fde_strong_agents: strong.map_or(0, |s| s.count),
        ni_min_fde: ni.map(|s| s.mean),
        ni_scenes: ni.map_or(0, |s| s.count),
        cam: cam(scenes, cfg)?,
        cam_mode: cfg.cam_mode,
        strong_only: cfg.strong_only,
        missing_predictions: missing + all.map_or(0, |s| s.missing),
    })
}

impl MetricsReport {
    /// One `key=value` line per field; undefined means print as `nan`.
    pub fn to_key_value(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_owned(), |x| format!("{x}"));
        let mut s = String::new();
        let _ = writeln!(s, "n_scenes={}", self.n_scenes);
        let _ = writeln!(s, "n_targets={}", self.n_targets);
        let _ = writeln!(s, "min_fde={}", self.min_fde);
        let _ = writeln!(s, "mr={}", self.mr);
        let _ = writeln!(s, "i_min_fde={}", opt(self.i_min_fde));
        let _ = writeln!(s, "i_min_fde_agents={}", self.i_min_fde_agents);
        let _ = writeln!(s, "i_min_fde_strong={}", opt(self.i_min_fde_strong));
        let _ = writeln!(s, "i_min_fde_strong_agents={}", self.i_min_fde_strong_agents);
        let _ = writeln!(s, "ni_min_fde={}", opt(self.ni_min_fde));
        let _ = writeln!(s, "ni_scenes={}", self.ni_scenes);
        let _ = writeln!(s, "cam={}", self.cam);
        let _ = writeln!(s, "cam_mode={}", self.cam_mode.as_str());
        let _ = writeln!(s, "strong_only={}", self.strong_only);
        let _ = writeln!(s, "missing_predictions={}", self.missing_predictions);
        s
    }
}
