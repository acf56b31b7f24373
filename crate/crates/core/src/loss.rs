//! Loss kernels with analytic gradients: smooth-L1, softmax cross-entropy,
//! per-scene averaging, the weighted total and min-over-modes selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::PredictionSet;
use crate::pretext::{PretextLabelSet, CLOSEST_CLASSES, DIRECTION_CLASSES, ITYPE_CLASSES};
use crate::trajectory::{AgentId, Trajectory};

/// Transition point between the quadratic and linear branches of smooth-L1.
pub const SMOOTH_L1_BETA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    /// Gradient of `value` with respect to each input entry.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredVector {
    pub values: Vec<f64>,
    pub k_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidConfig("lambda must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// `0.5 x²` for `|x| < 1`, `|x| - 0.5` otherwise, with `x = pred - target`.
/// The gradient is with respect to `pred`.
pub fn smooth_l1(pred: f64, target: f64) -> LossResult {
    let x = pred - target;
    let (value, grad) = if x.abs() < SMOOTH_L1_BETA {
        (0.5 * x * x / SMOOTH_L1_BETA, x / SMOOTH_L1_BETA)
    } else {
        (x.abs() - 0.5 * SMOOTH_L1_BETA, x.signum())
    };
    LossResult { value, grad: vec![grad] }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// `-log softmax(logits)[label]`; gradient `softmax(logits) - onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<LossResult> {
    if logits.len() < 2 {
        return Err(Error::TooFewClasses { needed: 2, got: logits.len() });
    }
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&l| (l - m).exp()).sum();
    // (m - l) >= 0 and ln z >= 0, so the value never goes negative.
    let value = (m - logits[label]) + z.ln();
    let mut grad: Vec<f64> = logits.iter().map(|&l| (l - m).exp() / z).collect();
    grad[label] -= 1.0;
    Ok(LossResult { value, grad })
}

pub fn cross_entropy_pred(logits: &PredVector, label: usize) -> Result<LossResult> {
    cross_entropy(&logits.values, label)
}

/// Mean of the per-pair losses of one scene.
pub fn pretext_loss(per_pair_losses: &[f64], k_target: usize) -> Result<f64> {
    if k_target == 0 || per_pair_losses.is_empty() {
        return Err(Error::EmptyPairSet);
    }
    if per_pair_losses.len() != k_target {
        return Err(Error::LengthMismatch { expected: k_target, got: per_pair_losses.len() });
    }
    Ok(per_pair_losses.iter().sum::<f64>() / k_target as f64)
}

/// `main + lambda * pretext`. With `lambda == 0` the result is `main` exactly.
pub fn total_loss(main: f64, pretext: f64, w: &LossWeights) -> f64 {
    if w.lambda == 0.0 {
        main
    } else {
        main + w.lambda * pretext
    }
}

/// Index of the smallest per-mode loss; ties resolve to the lowest index.
pub fn select_mode(main_losses_per_mode: &[f64]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (k, &v) in main_losses_per_mode.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((k, v));
        }
    }
    best.map(|(k, _)| k).ok_or(Error::LengthMismatch { expected: 1, got: 0 })
}

/// Surrogate main loss: per mode, the mean over timesteps of
/// `smooth_l1(dx) + smooth_l1(dy)`.
pub fn main_trajectory_loss(preds: &PredictionSet, gt: &Trajectory) -> Result<Vec<f64>> {
    if gt.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    preds
        .modes
        .iter()
        .map(|mode| {
            if mode.len() != gt.len() {
                return Err(Error::LengthMismatch { expected: gt.len(), got: mode.len() });
            }
            let sum: f64 = mode
                .iter()
                .zip(gt.positions())
                .map(|(p, g)| smooth_l1(p.x, g.x).value + smooth_l1(p.y, g.y).value)
                .sum();
            Ok(sum / gt.len() as f64)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextTask {
    #[serde(alias = "rg")]
    RangeGap,
    #[serde(alias = "cd")]
    ClosestDistance,
    #[serde(alias = "dm")]
    Direction,
    #[serde(alias = "ti")]
    InteractionType,
}

impl PretextTask {
    pub const ALL: [PretextTask; 4] = [
        PretextTask::RangeGap,
        PretextTask::ClosestDistance,
        PretextTask::Direction,
        PretextTask::InteractionType,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            PretextTask::RangeGap => "rg",
            PretextTask::ClosestDistance => "cd",
            PretextTask::Direction => "dm",
            PretextTask::InteractionType => "ti",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.short_name() == s)
    }
}

/// Outputs of the four pretext heads for one pair and one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextHeads {
    pub range_gap: f64,
    pub closest_logits: Vec<f64>,
    pub direction_logits: Vec<f64>,
    pub itype_logits: Vec<f64>,
}

impl PretextHeads {
    pub fn validate(&self) -> Result<()> {
        let check = |v: &[f64], n: usize| {
            if v.len() != n {
                Err(Error::LengthMismatch { expected: n, got: v.len() })
            } else {
                Ok(())
            }
        };
        check(&self.closest_logits, CLOSEST_CLASSES)?;
        check(&self.direction_logits, DIRECTION_CLASSES)?;
        check(&self.itype_logits, ITYPE_CLASSES)
    }
}

/// K-mode pretext head outputs for one (target, other) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPretextPrediction {
    pub other_id: AgentId,
    pub modes: Vec<PretextHeads>,
}

/// Per-task pretext losses of one scene, each averaged over its pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PretextLosses {
    pub range_gap: f64,
    pub closest: f64,
    pub direction: f64,
    pub itype: f64,
}

impl PretextLosses {
    pub fn get(&self, task: PretextTask) -> f64 {
        match task {
            PretextTask::RangeGap => self.range_gap,
            PretextTask::ClosestDistance => self.closest,
            PretextTask::Direction => self.direction,
            PretextTask::InteractionType => self.itype,
        }
    }

    /// Sum over the enabled tasks.
    pub fn combined(&self, tasks: &[PretextTask]) -> f64 {
        tasks.iter().map(|&t| self.get(t)).sum()
    }
}

/// Evaluates the four kernels on mode `mode` of every labeled pair and
/// averages per task. A scene with no labeled pairs contributes zero.
pub fn scene_pretext_losses(
    labels: &[PretextLabelSet],
    preds: &[PairPretextPrediction],
    mode: usize,
) -> Result<PretextLosses> {
    if labels.is_empty() {
        return Ok(PretextLosses::default());
    }
    let k = labels.len();
    let (mut rg, mut cd, mut dm, mut ti) =
        (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
    for set in labels {
        let pred = preds
            .iter()
            .find(|p| p.other_id == set.pair.other_id)
            .ok_or_else(|| Error::MissingPrediction(set.pair.other_id.0.clone()))?;
        let heads = pred
            .modes
            .get(mode)
            .ok_or(Error::LengthMismatch { expected: mode + 1, got: pred.modes.len() })?;
        heads.validate()?;
        rg.push(smooth_l1(heads.range_gap, set.range_gap.gap).value);
        cd.push(cross_entropy(&heads.closest_logits, set.closest.class_id as usize)?.value);
        dm.push(cross_entropy(&heads.direction_logits, set.direction.class_id as usize)?.value);
        ti.push(cross_entropy(&heads.itype_logits, set.itype.class_id.class_index())?.value);
    }
    Ok(PretextLosses {
        range_gap: pretext_loss(&rg, k)?,
        closest: pretext_loss(&cd, k)?,
        direction: pretext_loss(&dm, k)?,
        itype: pretext_loss(&ti, k)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLossReport {
    pub scene_id: String,
    pub selected_mode: usize,
    pub main: f64,
    pub pretext: PretextLosses,
    pub pretext_combined: f64,
    pub total: f64,
}

/// Main loss per mode, winning mode, pretext losses at that mode and the
/// weighted total for one scene.
pub fn scene_losses(
    scene_id: &str,
    target_preds: &PredictionSet,
    target_gt: &Trajectory,
    labels: &[PretextLabelSet],
    pair_preds: &[PairPretextPrediction],
    tasks: &[PretextTask],
    w: &LossWeights,
) -> Result<SceneLossReport> {
    let per_mode = main_trajectory_loss(target_preds, target_gt)?;
    let mode = select_mode(&per_mode)?;
    let pretext = scene_pretext_losses(labels, pair_preds, mode)?;
    let combined = pretext.combined(tasks);
    Ok(SceneLossReport {
        scene_id: scene_id.to_owned(),
        selected_mode: mode,
        main: per_mode[mode],
        pretext,
        pretext_combined: combined,
        total: total_loss(per_mode[mode], combined, w),
    })
}
