//! Interacting-pair labeling: cross-time distance screening, target intent
//! classification and the intent-conditioned oncoming filter.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};
use crate::lanes::{LaneGraph, LANE_MEMBERSHIP_RADIUS};
use crate::trajectory::{AgentId, AgentTracks, Scene, Trajectory, MIN_STEP, SAMPLE_DT};

/// Samples spanned by the chord used to estimate start and end headings.
const HEADING_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum IntentClass {
    Straight,
    LaneChange,
    RightTurn,
    LeftTurn,
    RightTurnWaiting,
    LeftTurnWaiting,
    Other,
}

impl IntentClass {
    pub const ALL: [IntentClass; 7] = [
        IntentClass::Straight,
        IntentClass::LaneChange,
        IntentClass::RightTurn,
        IntentClass::LeftTurn,
        IntentClass::RightTurnWaiting,
        IntentClass::LeftTurnWaiting,
        IntentClass::Other,
    ];

    pub fn is_left(self) -> bool {
        matches!(self, IntentClass::LeftTurn | IntentClass::LeftTurnWaiting)
    }

    pub fn is_right(self) -> bool {
        matches!(self, IntentClass::RightTurn | IntentClass::RightTurnWaiting)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairReason {
    DistancePass,
    FilteredOncoming,
    RetainedOncomingLeftTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionPair {
    pub target_id: AgentId,
    pub other_id: AgentId,
    /// Minimum cross-time distance between the two ground-truth futures.
    pub d_min: f64,
    pub oncoming: bool,
    pub retained: bool,
    pub reason: PairReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    pub d_th: f64,
    pub min_traj_len: usize,
    pub oncoming_angle: f64,
    pub turn_heading_delta: f64,
    pub waiting_speed: f64,
    pub lane_change_lateral: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            d_th: 5.0,
            min_traj_len: 10,
            oncoming_angle: 2.0 * PI / 3.0,
            turn_heading_delta: PI / 6.0,
            waiting_speed: 0.5,
            lane_change_lateral: 1.5,
        }
    }
}

impl LabelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_th", self.d_th),
            ("turn_heading_delta", self.turn_heading_delta),
            ("waiting_speed", self.waiting_speed),
            ("lane_change_lateral", self.lane_change_lateral),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.min_traj_len == 0 {
            return Err(Error::InvalidConfig("min_traj_len must be > 0".into()));
        }
        if !(self.oncoming_angle > PI / 2.0 && self.oncoming_angle <= PI) {
            return Err(Error::InvalidConfig("oncoming_angle must lie in (π/2, π]".into()));
        }
        Ok(())
    }
}

/// Result of the cross-time closest-approach search between two tracks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestApproach {
    pub distance: f64,
    /// Sample index on the first track attaining the minimum (lowest on ties).
    pub t_a: i32,
    /// Sample index on the second track attaining the minimum (lowest on ties).
    pub t_b: i32,
}

/// `min ||a[t1] - b[t2]||` over every pair of sample indices.
pub fn min_pairwise_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    closest_approach(a, b).map(|c| c.distance)
}

/// Cross-time minimum plus the per-track argmin indices: `t_a` minimizes the
/// row minima and `t_b` the column minima of the distance grid.
pub fn closest_approach(a: &Trajectory, b: &Trajectory) -> Result<ClosestApproach> {
    let (pa, pb) = (a.points(), b.points());
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let mut col_min = vec![f64::INFINITY; pb.len()];
    let (mut best_row, mut row_arg) = (f64::INFINITY, 0usize);
    for (i, p) in pa.iter().enumerate() {
        let p = p.pos();
        let mut row = f64::INFINITY;
        for (j, q) in pb.iter().enumerate() {
            let d2 = (p - q.pos()).norm_sq();
            if d2 < row {
                row = d2;
            }
            if d2 < col_min[j] {
                col_min[j] = d2;
            }
        }
        if row < best_row {
            best_row = row;
            row_arg = i;
        }
    }
    let (mut best_col, mut col_arg) = (f64::INFINITY, 0usize);
    for (j, &c) in col_min.iter().enumerate() {
        if c < best_col {
            best_col = c;
            col_arg = j;
        }
    }
    Ok(ClosestApproach {
        distance: best_row.sqrt(),
        t_a: pa[row_arg].t_index,
        t_b: pb[col_arg].t_index,
    })
}

fn chord_heading(pts: &[Vec2], forward: bool) -> Option<Vec2> {
    let n = pts.len();
    let w = HEADING_WINDOW.min(n - 1);
    let chord = |k: usize| {
        if forward {
            pts[(k + w).min(n - 1)] - pts[k.min(n - 1)]
        } else {
            pts[(n - 1).saturating_sub(k)] - pts[(n - 1).saturating_sub(k + w)]
        }
    };
    (0..n).map(chord).find(|d| d.norm() >= MIN_STEP)
}

/// Threshold classifier over the combined past+future track.
///
/// The total heading change is measured between chords spanning
/// [`HEADING_WINDOW`] samples at each end of the track, the speed from a path
/// subsampled at the same stride, and the lateral offset of the final
/// position from the lane the track starts in (or from the initial heading
/// line when no lane is within reach).
pub fn classify_intent(
    target_past: &Trajectory,
    target_future: &Trajectory,
    lanes: &LaneGraph,
    cfg: &LabelConfig,
) -> Result<IntentClass> {
    let pts: Vec<Vec2> =
        target_past.positions().chain(target_future.positions()).collect();
    let n = pts.len();
    if n < cfg.min_traj_len.max(2) {
        return Err(Error::TrajectoryTooShort { needed: cfg.min_traj_len.max(2), got: n });
    }
    let (Some(start_dir), Some(end_dir)) = (chord_heading(&pts, true), chord_heading(&pts, false))
    else {
        return Ok(IntentClass::Other);
    };
    let dtheta = wrap_angle(end_dir.angle() - start_dir.angle());

    let stride = HEADING_WINDOW;
    let mut path = 0.0;
    let mut k = 0;
    while k + stride < n {
        path += pts[k + stride].dist(pts[k]);
        k += stride;
    }
    path += pts[n - 1].dist(pts[k]);
    let mean_speed = path / ((n - 1) as f64 * SAMPLE_DT);

    if dtheta >= cfg.turn_heading_delta {
        return Ok(if mean_speed < cfg.waiting_speed {
            IntentClass::LeftTurnWaiting
        } else {
            IntentClass::LeftTurn
        });
    }
    if dtheta <= -cfg.turn_heading_delta {
        return Ok(if mean_speed < cfg.waiting_speed {
            IntentClass::RightTurnWaiting
        } else {
            IntentClass::RightTurn
        });
    }

    let (start, end) = (pts[0], pts[n - 1]);
    let start_unit = start_dir * (1.0 / start_dir.norm());
    if start_unit.dot(end - start) <= 0.0 {
        // Reversing or going nowhere.
        return Ok(IntentClass::Other);
    }
    let lateral = match lanes.nearest_lane(start, LANE_MEMBERSHIP_RADIUS) {
        Some(lane) => (lane.lateral_offset(end) - lane.lateral_offset(start)).abs(),
        None => start_unit.cross(end - start).abs(),
    };
    Ok(if lateral > cfg.lane_change_lateral {
        IntentClass::LaneChange
    } else {
        IntentClass::Straight
    })
}

/// Whether the headings of the two agents at the present differ by more than
/// `cfg.oncoming_angle`.
pub fn is_oncoming(target: &AgentTracks, other: &AgentTracks, cfg: &LabelConfig) -> Result<bool> {
    let a = target.present_heading()?;
    let b = other.present_heading()?;
    Ok(wrap_angle(a - b).abs() > cfg.oncoming_angle)
}

/// Labeling output for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneLabels {
    pub scene_id: String,
    pub target_id: AgentId,
    /// `None` when the target track is too short to classify.
    pub intent: Option<IntentClass>,
    /// One entry per candidate within `d_th`, sorted by `other_id`.
    pub pairs: Vec<InteractionPair>,
}

impl SceneLabels {
    pub fn retained(&self) -> impl Iterator<Item = &InteractionPair> {
        self.pairs.iter().filter(|p| p.retained)
    }

    pub fn is_interactive(&self) -> bool {
        self.pairs.iter().any(|p| p.retained)
    }
}

pub fn label_scene(scene: &Scene, cfg: &LabelConfig) -> SceneLabels {
    let target = scene.target();
    let intent = classify_intent(&target.past, &target.future, &scene.lanes, cfg).ok();
    let mut pairs = Vec::new();
    if target.future.len() >= cfg.min_traj_len {
        for (id, other) in &scene.agents {
            if *id == scene.target_id || other.future.len() < cfg.min_traj_len {
                continue;
            }
            let Ok(d_min) = min_pairwise_distance(&target.future, &other.future) else {
                continue;
            };
            if d_min.is_nan() || d_min >= cfg.d_th {
                continue;
            }
            let oncoming = is_oncoming(target, other, cfg).unwrap_or(false);
            let (retained, reason) = match (oncoming, intent.is_some_and(IntentClass::is_left)) {
                (false, _) => (true, PairReason::DistancePass),
                (true, true) => (true, PairReason::RetainedOncomingLeftTurn),
                (true, false) => (false, PairReason::FilteredOncoming),
            };
            pairs.push(InteractionPair {
                target_id: scene.target_id.clone(),
                other_id: id.clone(),
                d_min,
                oncoming,
                retained,
                reason,
            });
        }
    }
    SceneLabels { scene_id: scene.scene_id.clone(), target_id: scene.target_id.clone(), intent, pairs }
}

/// All candidate pairs of the scene (retained and filtered), sorted by other id.
pub fn label_interactions(scene: &Scene, cfg: &LabelConfig) -> Vec<InteractionPair> {
    label_scene(scene, cfg).pairs
}
