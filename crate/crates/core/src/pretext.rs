//! Ground-truth pseudo-labels for the four interaction pretext tasks:
//! range gap, closest-distance bin, direction of movement and type of
//! interaction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::{closest_approach, IntentClass, InteractionPair, SceneLabels};
use crate::lanes::LANE_MEMBERSHIP_RADIUS;
use crate::trajectory::{AgentId, Scene, Trajectory};

/// Future sample index of the range-gap label (2 s at 10 Hz).
pub const RANGE_GAP_INDEX: i32 = 20;
pub const CLOSEST_CLASSES: usize = 4;
pub const DIRECTION_CLASSES: usize = 3;
pub const ITYPE_CLASSES: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretextConfig {
    /// Cross-time distance above which a pair is labeled weak.
    pub eps_d: f64,
    /// Lateral distance to a centerline within which an agent is in that lane.
    pub lane_radius: f64,
}

impl Default for PretextConfig {
    fn default() -> Self {
        Self { eps_d: 5.0, lane_radius: LANE_MEMBERSHIP_RADIUS }
    }
}

impl PretextConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_d.is_finite() && self.eps_d > 0.0) {
            return Err(Error::InvalidConfig("eps_d must be > 0".into()));
        }
        if !(self.lane_radius.is_finite() && self.lane_radius > 0.0) {
            return Err(Error::InvalidConfig("lane_radius must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeGapLabel {
    pub gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosestDistClass {
    pub class_id: u8,
    /// Minimum distance over time-aligned samples.
    pub d_gt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirMoveClass {
    pub class_id: u8,
    /// Final minus initial inter-agent distance.
    pub dir_gt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InteractionType {
    CloseLead,
    CloseFollow,
    LeftTurnLead,
    LeftTurnFollow,
    Weak,
}

impl InteractionType {
    pub const ALL: [InteractionType; 5] = [
        InteractionType::CloseLead,
        InteractionType::CloseFollow,
        InteractionType::LeftTurnLead,
        InteractionType::LeftTurnFollow,
        InteractionType::Weak,
    ];

    /// Class index used by the cross-entropy head.
    pub fn class_index(self) -> usize {
        self as usize
    }

    pub fn is_strong(self) -> bool {
        self != InteractionType::Weak
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionTypeClass {
    pub class_id: InteractionType,
    /// Target sample index at the closest approach.
    pub t1: i32,
    /// Other agent's sample index at the closest approach.
    pub t2: i32,
    /// Cross-time closest distance.
    pub d_i: f64,
    /// Set when the lane-based weak rules could not be evaluated.
    #[serde(default)]
    pub lane_fallback: bool,
}

/// Upper-inclusive bins `(0,5]`, `(5,10]`, `(10,15]`, `(15,∞)`. A distance
/// of exactly zero falls in the first bin.
pub fn closest_distance_bin(d: f64) -> u8 {
    if d <= 5.0 {
        0
    } else if d <= 10.0 {
        1
    } else if d <= 15.0 {
        2
    } else {
        3
    }
}

/// 0 receding (`>= 2`), 1 closing (`<= -2`), 2 otherwise.
pub fn direction_bin(dir: f64) -> u8 {
    if dir >= 2.0 {
        0
    } else if dir <= -2.0 {
        1
    } else {
        2
    }
}

pub fn range_gap_gt(target_future: &Trajectory, other_future: &Trajectory) -> Result<RangeGapLabel> {
    match (target_future.at(RANGE_GAP_INDEX), other_future.at(RANGE_GAP_INDEX)) {
        (Some(a), Some(b)) => Ok(RangeGapLabel { gap: a.dist(b) }),
        _ => Err(Error::HorizonTooShort { needed: RANGE_GAP_INDEX }),
    }
}

fn common_range(a: &Trajectory, b: &Trajectory) -> Option<(i32, i32)> {
    let lo = a.first_index()?.max(b.first_index()?);
    let hi = a.last_index()?.min(b.last_index()?);
    (lo <= hi).then_some((lo, hi))
}

/// Samples of either trajectory outside the shared index range.
pub fn truncated_samples(a: &Trajectory, b: &Trajectory) -> usize {
    match common_range(a, b) {
        Some((lo, hi)) => {
            let common = (hi - lo + 1) as usize;
            a.len() + b.len() - 2 * common
        }
        None => a.len() + b.len(),
    }
}

pub fn closest_distance_class(
    target_future: &Trajectory,
    other_future: &Trajectory,
) -> Result<ClosestDistClass> {
    let (lo, hi) = common_range(target_future, other_future).ok_or(Error::EmptyOverlap)?;
    let d_gt = (lo..=hi)
        .filter_map(|t| Some(target_future.at(t)?.dist(other_future.at(t)?)))
        .fold(f64::INFINITY, f64::min);
    Ok(ClosestDistClass { class_id: closest_distance_bin(d_gt), d_gt })
}

/// Distance change between the first future sample and the last shared one.
pub fn direction_class(target_future: &Trajectory, other_future: &Trajectory) -> Result<DirMoveClass> {
    let first = 1;
    let (Some(a0), Some(b0)) = (target_future.at(first), other_future.at(first)) else {
        return Err(Error::HorizonTooShort { needed: first });
    };
    let last = match common_range(target_future, other_future) {
        Some((_, hi)) if hi > first => hi,
        _ => return Err(Error::HorizonTooShort { needed: first + 1 }),
    };
    let (a1, b1) = (
        target_future.at(last).ok_or(Error::HorizonTooShort { needed: last })?,
        other_future.at(last).ok_or(Error::HorizonTooShort { needed: last })?,
    );
    let dir_gt = a1.dist(b1) - a0.dist(b0);
    Ok(DirMoveClass { class_id: direction_bin(dir_gt), dir_gt })
}

/// Weak/lead/follow relation from lane membership and arrival order at the
/// cross-time closest approach. `t1 > t2` means the other agent reaches the
/// interaction point first and leads; equal times count as lead.
pub fn interaction_type_label(
    pair: &InteractionPair,
    scene: &Scene,
    intent: IntentClass,
    cfg: &PretextConfig,
) -> Result<InteractionTypeClass> {
    if !pair.retained {
        return Err(Error::PairNotRetained { other: pair.other_id.0.clone() });
    }
    let target = scene.agent(&pair.target_id)?;
    let other = scene.agent(&pair.other_id)?;

    let target_lane = target
        .present_position()
        .and_then(|p| scene.lanes.nearest_lane(p, cfg.lane_radius));
    let other_pos = other.present_position();
    let (lane_weak, lane_fallback) = match (target_lane, other_pos) {
        (Some(lane), Some(p)) => {
            let in_lane = |id: &Option<crate::lanes::LaneId>| {
                id.as_ref().is_some_and(|id| scene.lanes.contains(id, p, cfg.lane_radius))
            };
            let weak = match intent {
                IntentClass::Straight => !scene.lanes.contains(&lane.lane_id, p, cfg.lane_radius),
                i if i.is_left() => in_lane(&lane.right_neighbor),
                i if i.is_right() => in_lane(&lane.left_neighbor),
                _ => false,
            };
            (weak, false)
        }
        _ => (false, true),
    };

    let ca = closest_approach(&target.future, &other.future)?;
    let (t1, t2, d_i) = (ca.t_a, ca.t_b, ca.distance);
    let class_id = if lane_weak || d_i > cfg.eps_d {
        InteractionType::Weak
    } else if t1 >= t2 {
        if intent.is_left() {
            InteractionType::LeftTurnLead
        } else {
            InteractionType::CloseLead
        }
    } else if intent.is_left() {
        InteractionType::LeftTurnFollow
    } else {
        InteractionType::CloseFollow
    };
    Ok(InteractionTypeClass { class_id, t1, t2, d_i, lane_fallback })
}

/// The four pseudo-labels for one retained pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretextLabelSet {
    pub pair: InteractionPair,
    pub range_gap: RangeGapLabel,
    pub closest: ClosestDistClass,
    pub direction: DirMoveClass,
    pub itype: InteractionTypeClass,
    /// Samples dropped to align the two futures for time-aligned quantities.
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedPair {
    pub other_id: AgentId,
    pub reason: String,
}

/// Pretext labels for one scene. Retained pairs whose labels cannot all be
/// computed are listed in `skipped`; no partial label set is ever emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePretext {
    pub scene_id: String,
    pub target_id: AgentId,
    pub intent: Option<IntentClass>,
    pub labels: Vec<PretextLabelSet>,
    #[serde(default)]
    pub skipped: Vec<SkippedPair>,
}

pub fn label_pair(
    pair: &InteractionPair,
    scene: &Scene,
    intent: IntentClass,
    cfg: &PretextConfig,
) -> Result<PretextLabelSet> {
    let tf = &scene.agent(&pair.target_id)?.future;
    let of = &scene.agent(&pair.other_id)?.future;
    Ok(PretextLabelSet {
        pair: pair.clone(),
        range_gap: range_gap_gt(tf, of)?,
        closest: closest_distance_class(tf, of)?,
        direction: direction_class(tf, of)?,
        itype: interaction_type_label(pair, scene, intent, cfg)?,
        truncated: truncated_samples(tf, of),
    })
}

pub fn label_scene_pretext(scene: &Scene, labels: &SceneLabels, cfg: &PretextConfig) -> ScenePretext {
    let intent = labels.intent.unwrap_or(IntentClass::Other);
    let mut out = ScenePretext {
        scene_id: labels.scene_id.clone(),
        target_id: labels.target_id.clone(),
        intent: labels.intent,
        labels: Vec::new(),
        skipped: Vec::new(),
    };
    for pair in labels.retained() {
        match label_pair(pair, scene, intent, cfg) {
            Ok(set) => out.labels.push(set),
            Err(e) => out.skipped.push(SkippedPair { other_id: pair.other_id.clone(), reason: e.kind().into() }),
        }
    }
    out
}
